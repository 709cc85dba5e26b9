#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "leaklab/extractor.hpp"
#include "leaklab/harness.hpp"

namespace leaklab::report {

// Published correlation numbers carried verbatim for annotation. Display
// only: no computed value may depend on them.
struct ReferenceRow {
  int row = 0;  // position in the published summary table
  std::string algorithm;
  std::string source;  // "reported" (original publication) or "reimplementation"
  std::optional<double> plcc, plcc_std;
  std::optional<double> srocc, srocc_std;
  std::string pooling;                   // empty when not applicable
  std::optional<bool> ft_correct;        // nullopt renders as a dash
  std::optional<bool> test_independent;  // nullopt renders as a dash
};

const std::vector<ReferenceRow>& reference_table();

struct ProtocolReference {
  std::optional<ReferenceRow> reimplementation;  // the matching "ours" row
  std::optional<ReferenceRow> reported;          // the original claim, if published
};

ProtocolReference reference_for(harness::ProtocolId id);

// Text constants from the study, for report footnotes.
struct StudyConstants {
  double dominant_class_share_pct = 41.08;
  double peak_test_accuracy_pct = 46.52;
  double accuracy_uplift_points = 5.44;
  double claimed_validation_accuracy_pct = 95.0;
  long reimplementation_validation_interval_frames = 1600;
  long original_validation_interval_frames_low = 32000;
  long original_validation_interval_frames_high = 33000;
};

const StudyConstants& study_constants();

// Aligned-text protocol matrix, rows in the published bottom-block order,
// reference values in an annotation column. With annotate=false the computed
// columns are identical, just without the annotation column.
std::string render_table(const std::vector<harness::ProtocolReport>& reports,
                         bool annotate = true);

void write_table_csv(std::ostream& out, const std::vector<harness::ProtocolReport>& reports);

struct FigureData {
  std::optional<extractor::TrainTrace> clean_trace;
  std::optional<extractor::TrainTrace> leaky_trace;
  std::vector<extractor::ClassDistribution> distributions;  // one per split
  std::vector<harness::RunResult> results;
};

// Writes fig3_training_curves.csv, fig4_class_histogram.csv and
// fig5_kernel_bars.csv into out_dir. Missing inputs produce explicit NA gap
// markers, never zeros.
void emit_figure_data(const FigureData& data, const std::filesystem::path& out_dir);

// Readers for the harness output artifacts (used by the report CLI).
extractor::TrainTrace read_trace_csv(const std::filesystem::path& path);
std::vector<extractor::ClassDistribution> read_class_distributions(
    const std::filesystem::path& path);

}  // namespace leaklab::report

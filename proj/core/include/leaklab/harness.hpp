#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "leaklab/dataset.hpp"
#include "leaklab/endtoend.hpp"
#include "leaklab/extractor.hpp"
#include "leaklab/metrics.hpp"
#include "leaklab/pooling.hpp"
#include "leaklab/splitter.hpp"
#include "leaklab/svr.hpp"

namespace leaklab::harness {

enum class ProtocolId {
  NoFinetune,
  Clean,
  LeakyFt_CleanTest,
  CleanFt_TaintedTest,
  LeakyFt_TaintedTest,
  EndToEnd,
};

const char* to_string(ProtocolId id);
ProtocolId protocol_from_string(const std::string& name);
std::vector<ProtocolId> all_protocols();

struct Protocol {
  ProtocolId id = ProtocolId::Clean;
  pooling::PoolingMethod pooling = pooling::PoolingMethod::Mean;
  svr::KernelSpec kernel = svr::GaussianKernel{1.0 / 64.0};

  bool ft_leaky() const {
    return id == ProtocolId::LeakyFt_CleanTest || id == ProtocolId::LeakyFt_TaintedTest;
  }
  bool test_tainted() const {
    return id == ProtocolId::CleanFt_TaintedTest || id == ProtocolId::LeakyFt_TaintedTest;
  }
  bool uses_fine_tuning() const {
    return id != ProtocolId::NoFinetune && id != ProtocolId::EndToEnd;
  }
};

struct RunConfig {
  std::optional<dataset::GeneratorConfig> generator = dataset::GeneratorConfig{};
  std::optional<std::filesystem::path> manifest;

  double frame_fraction = 0.2;
  splitter::Ratio train_val_ratio{3, 1};
  bool strided_frames = false;
  int folds = 5;
  int replicates = 5;

  int extractor_hidden_dim = 128;
  int extractor_feature_dim = 64;
  extractor::TrainConfig train;

  svr::SvrConfig svr_config;
  std::string kernel_kind = "gaussian";
  double gamma = 0.0;  // 0 means 1/feature_dim
  int poly_degree = 3;
  double poly_coef = 1.0;
  pooling::PoolingMethod pooling = pooling::PoolingMethod::Mean;

  endtoend::RegressionHeadConfig head;

  std::vector<ProtocolId> protocols = all_protocols();
  bool kernel_grid = false;  // 4 pooling x 3 kernels over the SVR protocols
  std::uint64_t master_seed = 1;

  svr::KernelSpec make_kernel() const;
  svr::KernelSpec make_kernel(const std::string& kind) const;
  void validate() const;

  static RunConfig from_json_string(const std::string& text);
  static RunConfig from_json_file(const std::filesystem::path& path);
  std::string to_json_string() const;
};

struct AuditSummary {
  int videos_in_train_and_val = 0;
  int test_videos_in_train_or_val = 0;
  bool ft_leaky = false;
  bool test_tainted = false;
};

struct RunResult {
  ProtocolId protocol = ProtocolId::Clean;
  int replicate = 0;
  int fold = 0;
  std::uint64_t seed = 0;
  std::string pooling_label;
  std::string kernel_label;
  metrics::CorrelationResult correlation;
  AuditSummary audit;
  std::string failure;  // nonempty when the fold aborted
  double wall_ms = 0.0;  // sidecar only, never in the canonical results

  bool ok() const { return failure.empty() && correlation.defined(); }
};

// Canonical JSON line: deterministic for a fixed master seed and config
// (timing excluded).
std::string result_to_json_line(const RunResult& result);
void write_results_jsonl(const std::filesystem::path& path, std::span<const RunResult> results);
std::vector<RunResult> read_results_jsonl(const std::filesystem::path& path);

struct ProtocolReport {
  ProtocolId protocol = ProtocolId::Clean;
  std::string pooling_label;
  std::string kernel_label;
  metrics::MeanStd plcc;
  metrics::MeanStd srocc;
  int n_results = 0;
  int n_failures = 0;  // aborted folds plus undefined correlations
  bool ft_leaky = false;
  bool test_tainted = false;
  int replicates = 0;
  int folds_per_replicate = 0;
};

// Aggregates the results of one protocol (single pooling/kernel cell).
// Undefined correlations count as failures rather than zeros.
ProtocolReport summarize(const Protocol& protocol, std::span<const RunResult> results);

// SVR training videos for a protocol: the fine-tuning pool under clean test
// scoping, everything outside the test fold under tainted scoping.
std::vector<std::string> svr_train_scope(const Protocol& protocol,
                                         const splitter::SplitPlan& plan,
                                         const std::vector<dataset::VideoRecord>& videos);

// Orchestrates the protocol matrix over a fixed dataset. Fine-tuning happens
// once per (replicate, ft-protocol) and is shared by both test scopings, so
// scoping variants differ only in the SVR stage.
class Session {
 public:
  Session(std::vector<dataset::VideoRecord> videos, RunConfig config,
          std::string dataset_ref = {});

  const std::vector<dataset::VideoRecord>& videos() const { return videos_; }
  const RunConfig& config() const { return config_; }

  std::vector<RunResult> run_protocol(const Protocol& protocol);
  std::vector<RunResult> run_all(int parallel = 1);

  struct ReplicateArtifacts {
    splitter::SplitPlan clean_plan;
    splitter::SplitPlan leaky_plan;
    std::optional<extractor::TrainTrace> clean_trace;
    std::optional<extractor::TrainTrace> leaky_trace;
    std::optional<extractor::ClassDistribution> clean_distribution;
    std::vector<splitter::SplitPlan> tainted_clean_folds;
    std::vector<splitter::SplitPlan> tainted_leaky_folds;
  };

  // Artifacts for replicates touched so far (traces, plans, distributions).
  std::map<int, ReplicateArtifacts> artifacts() const;

  // Persists results.jsonl, timings.csv, config echo, plans, traces, and the
  // class-distribution artifact under out_dir.
  void write_outputs(const std::filesystem::path& out_dir,
                     std::span<const RunResult> results) const;

 private:
  struct ReplicateState;

  std::shared_ptr<ReplicateState> replicate_state(int r);
  std::vector<RunResult> run_protocol_on(ReplicateState& state, const Protocol& protocol);
  std::vector<Protocol> resolved_protocols() const;

  std::vector<dataset::VideoRecord> videos_;
  RunConfig config_;
  std::string dataset_ref_;
  std::map<std::string, std::size_t> video_index_;
  std::vector<double> mos_;  // by video index

  mutable std::mutex states_mutex_;
  std::map<int, std::shared_ptr<ReplicateState>> states_;
};

}  // namespace leaklab::harness

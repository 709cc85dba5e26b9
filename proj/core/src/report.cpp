#include "leaklab/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "leaklab/errors.hpp"
#include "leaklab/metrics.hpp"

namespace leaklab::report {

using harness::ProtocolId;
using harness::ProtocolReport;
using harness::RunResult;
using json = nlohmann::ordered_json;

const std::vector<ReferenceRow>& reference_table() {
  static const std::vector<ReferenceRow> rows = {
      {1, "CORNIA", "reported", 0.51, 0.02, 0.51, 0.04, "", std::nullopt, std::nullopt},
      {2, "V-BLIINDS", "reported", 0.58, 0.05, 0.61, 0.04, "", std::nullopt, std::nullopt},
      {3, "STFC", "reported", 0.64, std::nullopt, 0.61, std::nullopt, "", std::nullopt, std::nullopt},
      {4, "TLVQM", "reported", 0.77, 0.02, 0.78, 0.02, "", std::nullopt, std::nullopt},
      {5, "MLSP-VQA-FF", "reported", 0.83, 0.02, 0.82, 0.02, "", std::nullopt, std::nullopt},
      {6, "Inception-V3", "reported", 0.72, std::nullopt, 0.68, std::nullopt, "max", std::nullopt, std::nullopt},
      {7, "Inception-V3", "reimplementation", 0.73, 0.02, 0.70, 0.03, "max", std::nullopt, std::nullopt},
      {8, "Inception-V3", "reported", 0.85, std::nullopt, 0.85, std::nullopt, "avg", false, false},
      {9, "Inception-V3", "reimplementation", 0.83, 0.02, 0.84, 0.03, "avg", false, false},
      {10, "Inception-V3", "reimplementation", 0.76, 0.03, 0.74, 0.04, "avg", true, false},
      {11, "Inception-V3", "reimplementation", 0.72, 0.03, 0.69, 0.04, "avg", false, true},
      {12, "Inception-V3", "reimplementation", 0.71, 0.03, 0.69, 0.04, "avg", true, true},
      {13, "end-to-end regression head", "reimplementation", 0.66, 0.02, 0.65, 0.03, "", true, true},
  };
  return rows;
}

namespace {

const ReferenceRow& row(int n) { return reference_table().at(static_cast<std::size_t>(n - 1)); }

}  // namespace

ProtocolReference reference_for(ProtocolId id) {
  switch (id) {
    case ProtocolId::NoFinetune: return {row(7), row(6)};
    case ProtocolId::Clean: return {row(12), std::nullopt};
    case ProtocolId::LeakyFt_CleanTest: return {row(11), std::nullopt};
    case ProtocolId::CleanFt_TaintedTest: return {row(10), std::nullopt};
    case ProtocolId::LeakyFt_TaintedTest: return {row(9), row(8)};
    case ProtocolId::EndToEnd: return {row(13), std::nullopt};
  }
  return {};
}

const StudyConstants& study_constants() {
  static const StudyConstants c;
  return c;
}

namespace {

// Published bottom-block order, end-to-end variant last.
const std::vector<ProtocolId>& table_order() {
  static const std::vector<ProtocolId> order = {
      ProtocolId::NoFinetune,          ProtocolId::LeakyFt_TaintedTest,
      ProtocolId::CleanFt_TaintedTest, ProtocolId::LeakyFt_CleanTest,
      ProtocolId::Clean,               ProtocolId::EndToEnd,
  };
  return order;
}

std::string fmt_meanstd(const metrics::MeanStd& m, int n_ok) {
  if (n_ok == 0) return "--";
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.3f (±%.3f)", m.mean, m.std);
  return buf;
}

std::string fmt_ref_value(const std::optional<double>& v, const std::optional<double>& s) {
  if (!v) return "--";
  char buf[40];
  if (s)
    std::snprintf(buf, sizeof(buf), "%.2f (±%.2f)", *v, *s);
  else
    std::snprintf(buf, sizeof(buf), "%.2f (±-.--)", *v);
  return buf;
}

std::string flag_text(ProtocolId id, bool is_ft) {
  if (id == ProtocolId::NoFinetune) return "-";
  if (id == ProtocolId::EndToEnd) return is_ft ? "-" : "ok";
  return "";
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

std::vector<const ProtocolReport*> ordered_reports(
    const std::vector<ProtocolReport>& reports) {
  std::vector<const ProtocolReport*> out;
  for (ProtocolId id : table_order())
    for (const auto& r : reports)
      if (r.protocol == id) out.push_back(&r);
  // anything exotic (grid cells) afterwards, in input order
  for (const auto& r : reports)
    if (std::find(out.begin(), out.end(), &r) == out.end()) out.push_back(&r);
  return out;
}

}  // namespace

std::string render_table(const std::vector<ProtocolReport>& reports, bool annotate) {
  std::ostringstream out;
  out << "protocol matrix";
  if (!reports.empty()) {
    out << " (" << reports.front().replicates << " replicate(s)";
    int folds = 0;
    for (const auto& r : reports)
      if (r.test_tainted) folds = std::max(folds, r.folds_per_replicate);
    if (folds > 1) out << " x " << folds << " folds where folds apply";
    out << ")";
  }
  out << "\n\n";
  out << pad("protocol", 22) << pad("pool", 8) << pad("kernel", 12) << pad("n", 5)
      << pad("fail", 6) << pad("PLCC", 17) << pad("SROCC", 17) << pad("ft", 6)
      << pad("test", 7);
  if (annotate) out << "reference PLCC / SROCC";
  out << '\n';
  out << std::string(annotate ? 132 : 100, '-') << '\n';

  for (const auto* r : ordered_reports(reports)) {
    const int n_ok = r->n_results - r->n_failures;
    std::string ft = flag_text(r->protocol, true);
    if (ft.empty()) ft = r->ft_leaky ? "leak" : "ok";
    std::string test = flag_text(r->protocol, false);
    if (test.empty()) test = r->test_tainted ? "taint" : "ok";
    out << pad(harness::to_string(r->protocol), 22) << pad(r->pooling_label, 8)
        << pad(r->kernel_label, 12) << pad(std::to_string(r->n_results), 5)
        << pad(std::to_string(r->n_failures), 6) << pad(fmt_meanstd(r->plcc, n_ok), 17)
        << pad(fmt_meanstd(r->srocc, n_ok), 17) << pad(ft, 6) << pad(test, 7);
    if (annotate) {
      const auto ref = reference_for(r->protocol);
      if (ref.reimplementation) {
        out << fmt_ref_value(ref.reimplementation->plcc, ref.reimplementation->plcc_std) << " / "
            << fmt_ref_value(ref.reimplementation->srocc, ref.reimplementation->srocc_std)
            << "  [row " << ref.reimplementation->row << "]";
        if (ref.reported)
          out << "  claimed " << fmt_ref_value(ref.reported->plcc, ref.reported->plcc_std)
              << " / " << fmt_ref_value(ref.reported->srocc, ref.reported->srocc_std)
              << " [row " << ref.reported->row << "]";
      }
    }
    out << '\n';
  }

  if (annotate) {
    const auto& c = study_constants();
    out << "\npublished context rows:\n";
    for (int i = 1; i <= 5; ++i) {
      const auto& rr = row(i);
      out << "  " << pad(rr.algorithm, 14) << fmt_ref_value(rr.plcc, rr.plcc_std) << " / "
          << fmt_ref_value(rr.srocc, rr.srocc_std) << '\n';
    }
    out << "study constants: dominant-class baseline " << c.dominant_class_share_pct
        << "%, peak classification accuracy " << c.peak_test_accuracy_pct << "% (+"
        << c.accuracy_uplift_points << " points); leaky validation accuracy claim > "
        << c.claimed_validation_accuracy_pct << "%\n";
  }
  return out.str();
}

void write_table_csv(std::ostream& out, const std::vector<ProtocolReport>& reports) {
  out << "protocol,pooling,kernel,n_results,n_failures,plcc_mean,plcc_std,srocc_mean,"
         "srocc_std,ft,test,ref_plcc,ref_plcc_std,ref_srocc,ref_srocc_std,ref_row\n";
  out.precision(10);
  for (const auto* r : ordered_reports(reports)) {
    const int n_ok = r->n_results - r->n_failures;
    out << harness::to_string(r->protocol) << ',' << r->pooling_label << ',' << r->kernel_label
        << ',' << r->n_results << ',' << r->n_failures << ',';
    if (n_ok > 0)
      out << r->plcc.mean << ',' << r->plcc.std << ',' << r->srocc.mean << ',' << r->srocc.std;
    else
      out << "NA,NA,NA,NA";
    out << ',' << (r->ft_leaky ? "leak" : "ok") << ',' << (r->test_tainted ? "taint" : "ok");
    const auto ref = reference_for(r->protocol);
    if (ref.reimplementation) {
      const auto& rr = *ref.reimplementation;
      out << ',' << (rr.plcc ? std::to_string(*rr.plcc) : "NA") << ','
          << (rr.plcc_std ? std::to_string(*rr.plcc_std) : "NA") << ','
          << (rr.srocc ? std::to_string(*rr.srocc) : "NA") << ','
          << (rr.srocc_std ? std::to_string(*rr.srocc_std) : "NA") << ',' << rr.row;
    } else {
      out << ",NA,NA,NA,NA,NA";
    }
    out << '\n';
  }
}

namespace {

void emit_training_curves(const FigureData& data, std::ostream& out) {
  out << "iteration,clean_train_loss,clean_train_acc,clean_val_loss,clean_val_acc,"
         "leaky_train_loss,leaky_train_acc,leaky_val_loss,leaky_val_acc\n";
  out.precision(10);
  const auto* ct = data.clean_trace ? &*data.clean_trace : nullptr;
  const auto* lt = data.leaky_trace ? &*data.leaky_trace : nullptr;
  std::size_t n = 0;
  if (ct) n = std::max(n, ct->train_loss.size());
  if (lt) n = std::max(n, lt->train_loss.size());
  std::size_t cv = 0, lv = 0;
  for (std::size_t it = 1; it <= n; ++it) {
    out << it;
    auto emit_side = [&](const extractor::TrainTrace* t, std::size_t& vi) {
      if (!t) {
        out << ",NA,NA,NA,NA";
        return;
      }
      if (it <= t->train_loss.size())
        out << ',' << t->train_loss[it - 1] << ',' << t->train_accuracy[it - 1];
      else
        out << ",NA,NA";
      if (vi < t->validation.size() &&
          t->validation[vi].iteration == static_cast<long>(it)) {
        out << ',' << t->validation[vi].loss << ',' << t->validation[vi].accuracy;
        ++vi;
      } else {
        out << ",,";
      }
    };
    emit_side(ct, cv);
    emit_side(lt, lv);
    out << '\n';
  }
}

void emit_class_histogram(const FigureData& data, std::ostream& out) {
  out << "split,VeryGood,Good,Mediocre,Poor,VeryPoor,accuracy\n";
  out.precision(10);
  if (data.distributions.empty()) {
    out << "NA,NA,NA,NA,NA,NA,NA\n";
    return;
  }
  const std::size_t k = dataset::kNumClasses;
  std::vector<std::vector<double>> per_class(k);
  std::vector<double> accs;
  for (std::size_t s = 0; s < data.distributions.size(); ++s) {
    const auto& d = data.distributions[s];
    out << s;
    for (std::size_t c = 0; c < k; ++c) {
      out << ',' << d.percent[c];
      per_class[c].push_back(d.percent[c]);
    }
    out << ',' << d.accuracy << '\n';
    accs.push_back(d.accuracy);
  }
  out << "mean";
  for (std::size_t c = 0; c < k; ++c) out << ',' << metrics::aggregate(per_class[c]).mean;
  out << ',' << metrics::aggregate(accs).mean << '\n';
  out << "std";
  for (std::size_t c = 0; c < k; ++c) out << ',' << metrics::aggregate(per_class[c]).std;
  out << ',' << metrics::aggregate(accs).std << '\n';
}

void emit_kernel_bars(const FigureData& data, std::ostream& out) {
  out << "record,chart,pooling,kernel,metric,value,std,source\n";
  out.precision(10);
  const std::vector<ProtocolId> charts = {
      ProtocolId::NoFinetune, ProtocolId::Clean, ProtocolId::LeakyFt_CleanTest,
      ProtocolId::LeakyFt_TaintedTest};

  // computed bars grouped by (protocol, pooling, kernel)
  std::map<std::tuple<int, std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>>
      cells;
  for (const auto& r : data.results) {
    if (!r.ok()) continue;
    if (std::find(charts.begin(), charts.end(), r.protocol) == charts.end()) continue;
    auto& cell = cells[{static_cast<int>(r.protocol), r.pooling_label, r.kernel_label}];
    cell.first.push_back(*r.correlation.plcc);
    cell.second.push_back(*r.correlation.srocc);
  }

  for (ProtocolId chart : charts) {
    bool any = false;
    for (const auto& [key, cell] : cells) {
      if (std::get<0>(key) != static_cast<int>(chart)) continue;
      any = true;
      const auto plcc = metrics::aggregate(cell.first);
      const auto srocc = metrics::aggregate(cell.second);
      out << "bar," << harness::to_string(chart) << ',' << std::get<1>(key) << ','
          << std::get<2>(key) << ",plcc," << plcc.mean << ',' << plcc.std << ",computed\n";
      out << "bar," << harness::to_string(chart) << ',' << std::get<1>(key) << ','
          << std::get<2>(key) << ",srocc," << srocc.mean << ',' << srocc.std << ",computed\n";
    }
    if (!any)
      out << "gap," << harness::to_string(chart) << ",NA,NA,NA,NA,NA,missing_run\n";

    // Four reference markers per chart: the protocol's published analog row
    // plus the original claim (the analog itself when the claim row exists).
    const auto ref = reference_for(chart);
    const ReferenceRow* analog = ref.reimplementation ? &*ref.reimplementation : nullptr;
    const ReferenceRow* claim =
        ref.reported ? &*ref.reported : &row(8);  // headline claim as context
    for (const auto* rr : {analog, claim}) {
      if (!rr) continue;
      const std::string src = "table_row_" + std::to_string(rr->row);
      auto emit_marker = [&](const char* metric, const std::optional<double>& v,
                             const std::optional<double>& s) {
        out << "reference," << harness::to_string(chart) << ','
            << (rr->pooling.empty() ? "avg" : rr->pooling) << ",gaussian," << metric << ',';
        if (v)
          out << *v;
        else
          out << "NA";
        out << ',';
        if (s)
          out << *s;
        else
          out << "NA";
        out << ',' << src << '\n';
      };
      emit_marker("plcc", rr->plcc, rr->plcc_std);
      emit_marker("srocc", rr->srocc, rr->srocc_std);
    }
  }
}

}  // namespace

void emit_figure_data(const FigureData& data, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream f(out_dir / "fig3_training_curves.csv");
    if (!f) throw ParseError("cannot write figure data in " + out_dir.string());
    emit_training_curves(data, f);
  }
  {
    std::ofstream f(out_dir / "fig4_class_histogram.csv");
    emit_class_histogram(data, f);
  }
  {
    std::ofstream f(out_dir / "fig5_kernel_bars.csv");
    emit_kernel_bars(data, f);
  }
}

extractor::TrainTrace read_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open trace: " + path.string());
  extractor::TrainTrace trace;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty trace: " + path.string());
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    cells.resize(5);
    auto num = [&](const std::string& s) {
      double v = 0.0;
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc())
        throw ParseError(path.string() + ": bad number at line " + std::to_string(lineno));
      return v;
    };
    trace.train_loss.push_back(num(cells[1]));
    trace.train_accuracy.push_back(num(cells[2]));
    if (!cells[3].empty())
      trace.validation.push_back({static_cast<long>(num(cells[0])), num(cells[3]), num(cells[4])});
  }
  if (!trace.validation.empty()) {
    auto best = trace.validation.front();
    for (const auto& v : trace.validation)
      if (v.loss < best.loss) best = v;
    trace.selected_iteration = best.iteration;
    trace.selected_val_loss = best.loss;
    trace.selected_val_accuracy = best.accuracy;
  }
  return trace;
}

std::vector<extractor::ClassDistribution> read_class_distributions(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open class distributions: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  std::vector<extractor::ClassDistribution> out;
  for (const auto& d : j) {
    extractor::ClassDistribution dist;
    for (std::size_t c = 0; c < dataset::kNumClasses; ++c)
      dist.percent[c] = d.at("percent").at(c).get<double>();
    dist.accuracy = d.at("accuracy").get<double>();
    dist.dominant_share = d.at("dominant_share").get<double>();
    dist.n_videos = d.at("n_videos").get<int>();
    out.push_back(dist);
  }
  return out;
}

}  // namespace leaklab::report

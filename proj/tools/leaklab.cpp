#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "leaklab/dataset.hpp"
#include "leaklab/errors.hpp"
#include "leaklab/harness.hpp"
#include "leaklab/report.hpp"
#include "leaklab/splitter.hpp"

namespace fs = std::filesystem;
using namespace leaklab;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw leaklab::ParseError("cannot open: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

dataset::GeneratorConfig generator_from_config_file(const fs::path& path) {
  const auto config = harness::RunConfig::from_json_string(slurp(path));
  if (!config.generator)
    throw leaklab::DomainError("config has no generator section: " + path.string());
  return *config.generator;
}

std::vector<dataset::VideoRecord> load_dataset(const harness::RunConfig& config,
                                               std::string* ref_out) {
  if (config.manifest) {
    if (ref_out) *ref_out = "manifest:" + config.manifest->string();
    return dataset::ingest_manifest(*config.manifest);
  }
  return dataset::generate(*config.generator);
}

int cmd_gen_data(const fs::path& out_dir, std::uint64_t seed, const fs::path& config_path,
                 bool csv_frames) {
  dataset::GeneratorConfig config;
  if (!config_path.empty()) config = generator_from_config_file(config_path);
  if (seed != 0) config.seed = seed;
  const auto videos = dataset::generate(config);
  dataset::write_manifest(videos, out_dir, csv_frames);
  std::cout << "wrote " << videos.size() << " videos to " << (out_dir / "manifest.csv").string()
            << "\n";
  const auto histogram = dataset::class_histogram(videos);
  std::cout << "class histogram:";
  for (int c = 0; c < dataset::kNumClasses; ++c)
    std::cout << ' ' << dataset::to_string(static_cast<dataset::ClassLabel>(c)) << '='
              << histogram[static_cast<std::size_t>(c)];
  std::cout << "\ndominant class share: " << dataset::dominant_class_share(videos) << "\n";
  return 0;
}

int cmd_audit(const fs::path& plan_path, const fs::path& data_path) {
  const auto plan = splitter::read_plan(plan_path);
  std::vector<dataset::VideoRecord> videos;
  if (!data_path.empty()) {
    const auto manifest = fs::is_directory(data_path) ? data_path / "manifest.csv" : data_path;
    videos = dataset::ingest_manifest(manifest);
  } else if (plan.dataset_ref.rfind("manifest:", 0) == 0) {
    videos = dataset::ingest_manifest(plan.dataset_ref.substr(9));
  } else if (plan.dataset_ref.rfind("generator:", 0) == 0) {
    const auto config = harness::RunConfig::from_json_string(plan.dataset_ref.substr(10));
    videos = dataset::generate(*config.generator);
  } else {
    std::cerr << "plan carries no dataset reference; pass --data\n";
    return 2;
  }
  const auto report = splitter::audit(plan, videos);
  std::cout << splitter::format_audit(report);
  return report.consistent ? 0 : 1;
}

int cmd_run(const fs::path& config_path, const fs::path& out_dir, const std::string& protocol,
            int seeds, int parallel, std::uint64_t master_seed) {
  auto config = harness::RunConfig::from_json_file(config_path);
  if (seeds > 0) config.replicates = seeds;
  if (master_seed != 0) config.master_seed = master_seed;
  if (!protocol.empty()) config.protocols = {harness::protocol_from_string(protocol)};

  std::string dataset_ref;
  auto videos = load_dataset(config, &dataset_ref);
  if (config.generator)
    dataset_ref = "generator:" + config.to_json_string();

  harness::Session session(std::move(videos), config, dataset_ref);
  const auto results = session.run_all(parallel);
  session.write_outputs(out_dir, results);

  std::vector<harness::ProtocolReport> reports;
  for (auto id : config.protocols)
    reports.push_back(harness::summarize({id, config.pooling, config.make_kernel()}, results));
  std::cout << report::render_table(reports);
  std::cout << "\nresults written to " << (out_dir / "results.jsonl").string() << "\n";
  return 0;
}

int cmd_report(const fs::path& in_dir, const fs::path& out_dir, const std::string& format) {
  const auto results = harness::read_results_jsonl(in_dir / "results.jsonl");

  // one report per (protocol, pooling, kernel) cell present in the results
  std::vector<harness::ProtocolReport> reports;
  std::vector<std::tuple<harness::ProtocolId, std::string, std::string>> seen;
  for (const auto& r : results) {
    const auto key = std::make_tuple(r.protocol, r.pooling_label, r.kernel_label);
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
    seen.push_back(key);
    harness::Protocol proto;
    proto.id = r.protocol;
    if (r.pooling_label != "-") proto.pooling = pooling::pooling_from_string(r.pooling_label);
    if (r.kernel_label != "-") proto.kernel = svr::kernel_from_label(r.kernel_label, 1.0 / 64);
    std::vector<harness::RunResult> cell;
    for (const auto& rr : results)
      if (std::make_tuple(rr.protocol, rr.pooling_label, rr.kernel_label) == key)
        cell.push_back(rr);
    reports.push_back(harness::summarize(proto, cell));
  }

  fs::create_directories(out_dir);
  if (format == "text" || format == "both") {
    const auto text = report::render_table(reports);
    std::ofstream f(out_dir / "table.txt");
    f << text;
    std::cout << text;
  }
  if (format == "csv" || format == "both") {
    std::ofstream f(out_dir / "table.csv");
    report::write_table_csv(f, reports);
  }

  report::FigureData figures;
  figures.results = results;
  if (fs::exists(in_dir / "traces" / "r0_clean.csv"))
    figures.clean_trace = report::read_trace_csv(in_dir / "traces" / "r0_clean.csv");
  if (fs::exists(in_dir / "traces" / "r0_leaky.csv"))
    figures.leaky_trace = report::read_trace_csv(in_dir / "traces" / "r0_leaky.csv");
  if (fs::exists(in_dir / "class_distribution.json"))
    figures.distributions = report::read_class_distributions(in_dir / "class_distribution.json");
  report::emit_figure_data(figures, out_dir);
  std::cout << "figure data written to " << out_dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"leaklab: two-stage video-quality pipeline under clean and leaky split protocols"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset in manifest layout");
  fs::path gen_out, gen_config;
  std::uint64_t gen_seed = 0;
  bool gen_csv = false;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "generator seed (overrides config)");
  gen->add_option("--config", gen_config, "config JSON with a generator section");
  gen->add_flag("--csv", gen_csv, "write frame matrices as CSV instead of binary");

  auto* audit = app.add_subcommand("audit", "audit a split plan for leakage");
  fs::path audit_plan, audit_data;
  audit->add_option("--plan", audit_plan, "split plan JSON")->required();
  audit->add_option("--data", audit_data, "manifest.csv or gen-data directory");

  auto* run = app.add_subcommand("run", "run the protocol matrix");
  fs::path run_config, run_out;
  std::string run_protocol;
  int run_seeds = 0, run_parallel = 1;
  std::uint64_t run_master = 0;
  run->add_option("--config", run_config, "config JSON")->required();
  run->add_option("--out", run_out, "output directory")->required();
  run->add_option("--protocol", run_protocol, "run a single protocol");
  run->add_option("--seeds", run_seeds, "number of replicates (overrides config)");
  run->add_option("--parallel", run_parallel, "worker threads over replicates");
  run->add_option("--master-seed", run_master, "master seed (overrides config)");

  auto* rep = app.add_subcommand("report", "render tables and figure data from a run directory");
  fs::path rep_in, rep_out;
  std::string rep_format = "text";
  rep->add_option("--in", rep_in, "run output directory")->required();
  rep->add_option("--out", rep_out, "report output directory")->required();
  rep->add_option("--format", rep_format, "text|csv|both")
      ->check(CLI::IsMember({"text", "csv", "both"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen_data(gen_out, gen_seed, gen_config, gen_csv);
    if (*audit) return cmd_audit(audit_plan, audit_data);
    if (*run) return cmd_run(run_config, run_out, run_protocol, run_seeds, run_parallel, run_master);
    if (*rep) return cmd_report(rep_in, rep_out, rep_format);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#include "leaklab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <sstream>
#include <thread>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "leaklab/errors.hpp"
#include "leaklab/rng.hpp"

namespace leaklab::harness {

using dataset::VideoRecord;
using json = nlohmann::ordered_json;

namespace {

// Child-seed streams hanging off each replicate seed. Never reused across
// roles, so a protocol's randomness is independent of which other protocols
// run (replicate independence).
enum SeedStream : std::uint64_t {
  kStreamSplit = 1,
  kStreamInit = 2,
  kStreamFineTune = 3,
  kStreamFolds = 4,
  kStreamEndToEnd = 5,
};

}  // namespace

const char* to_string(ProtocolId id) {
  switch (id) {
    case ProtocolId::NoFinetune: return "NoFinetune";
    case ProtocolId::Clean: return "Clean";
    case ProtocolId::LeakyFt_CleanTest: return "LeakyFt_CleanTest";
    case ProtocolId::CleanFt_TaintedTest: return "CleanFt_TaintedTest";
    case ProtocolId::LeakyFt_TaintedTest: return "LeakyFt_TaintedTest";
    case ProtocolId::EndToEnd: return "EndToEnd";
  }
  return "?";
}

ProtocolId protocol_from_string(const std::string& name) {
  for (ProtocolId id : all_protocols())
    if (name == to_string(id)) return id;
  throw DomainError("unknown protocol: " + name);
}

std::vector<ProtocolId> all_protocols() {
  return {ProtocolId::NoFinetune,          ProtocolId::Clean,
          ProtocolId::LeakyFt_CleanTest,   ProtocolId::CleanFt_TaintedTest,
          ProtocolId::LeakyFt_TaintedTest, ProtocolId::EndToEnd};
}

svr::KernelSpec RunConfig::make_kernel() const { return make_kernel(kernel_kind); }

svr::KernelSpec RunConfig::make_kernel(const std::string& kind) const {
  const double g = gamma > 0.0 ? gamma : 1.0 / extractor_feature_dim;
  if (kind == "linear") return svr::LinearKernel{};
  if (kind == "polynomial" || kind == "poly") return svr::PolynomialKernel{poly_degree, poly_coef};
  if (kind == "gaussian" || kind == "rbf") return svr::GaussianKernel{g};
  throw DomainError("unknown kernel: " + kind);
}

void RunConfig::validate() const {
  if (!generator.has_value() && !manifest.has_value())
    throw DomainError("config: needs a generator or a dataset manifest");
  if (generator) generator->validate();
  if (!(frame_fraction > 0.0 && frame_fraction <= 1.0))
    throw DomainError("config: frame_fraction must be in (0, 1]");
  if (folds < 2) throw DomainError("config: folds must be >= 2");
  if (replicates < 1) throw DomainError("config: replicates must be >= 1");
  if (extractor_hidden_dim <= 0 || extractor_feature_dim <= 0)
    throw DomainError("config: extractor dimensions must be positive");
  train.validate();
  svr_config.validate();
  head.validate();
  make_kernel();
  if (protocols.empty()) throw DomainError("config: no protocols selected");
}

namespace {

json config_to_json(const RunConfig& c) {
  json j;
  j["master_seed"] = c.master_seed;
  if (c.generator) {
    json g;
    g["n_videos"] = c.generator->n_videos;
    g["frames_per_video"] = c.generator->frames_per_video;
    g["feature_dim"] = c.generator->feature_dim;
    g["quality_signal_strength"] = c.generator->quality_signal_strength;
    g["video_nuisance_strength"] = c.generator->video_nuisance_strength;
    g["frame_noise_strength"] = c.generator->frame_noise_strength;
    g["seed"] = c.generator->seed;
    j["generator"] = std::move(g);
  }
  if (c.manifest) j["dataset"] = {{"manifest", c.manifest->string()}};
  j["splits"] = {{"frame_fraction", c.frame_fraction},
                 {"train_val_ratio", {c.train_val_ratio.train, c.train_val_ratio.val}},
                 {"strided_frames", c.strided_frames},
                 {"folds", c.folds},
                 {"replicates", c.replicates}};
  j["extractor"] = {{"hidden_dim", c.extractor_hidden_dim},
                    {"feature_dim", c.extractor_feature_dim},
                    {"momentum", c.train.momentum},
                    {"learning_rate", c.train.learning_rate},
                    {"minibatch_size", c.train.minibatch_size},
                    {"max_iterations", c.train.max_iterations},
                    {"validation_every", c.train.validation_every},
                    {"patience", c.train.patience},
                    {"lr_drop_factor", c.train.lr_drop_factor}};
  j["svr"] = {{"C", c.svr_config.C},
              {"epsilon", c.svr_config.epsilon},
              {"tolerance", c.svr_config.tolerance},
              {"max_passes", c.svr_config.max_passes},
              {"kernel", c.kernel_kind},
              {"gamma", c.gamma},
              {"degree", c.poly_degree},
              {"coef", c.poly_coef}};
  j["pooling"] = pooling::to_string(c.pooling);
  j["endtoend"] = {{"layer_scale", c.head.layer_scale},
                   {"min_layer_width", c.head.min_layer_width},
                   {"dropout_rate", c.head.dropout_rate},
                   {"head_lr_multiplier", c.head.head_lr_multiplier},
                   {"lr_decay_per_epoch", c.head.lr_decay_per_epoch},
                   {"epochs", c.head.epochs}};
  json protos = json::array();
  for (ProtocolId id : c.protocols) protos.push_back(to_string(id));
  j["protocols"] = std::move(protos);
  j["kernel_grid"] = c.kernel_grid;
  return j;
}

}  // namespace

std::string RunConfig::to_json_string() const { return config_to_json(*this).dump(2); }

RunConfig RunConfig::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("config JSON: ") + e.what());
  }
  RunConfig c;
  try {
    if (j.contains("master_seed")) c.master_seed = j["master_seed"].get<std::uint64_t>();
    if (j.contains("dataset")) {
      c.generator.reset();
      c.manifest = std::filesystem::path(j["dataset"].at("manifest").get<std::string>());
    }
    if (j.contains("generator")) {
      dataset::GeneratorConfig g;
      const auto& gj = j["generator"];
      if (gj.contains("n_videos")) g.n_videos = gj["n_videos"].get<int>();
      if (gj.contains("frames_per_video")) g.frames_per_video = gj["frames_per_video"].get<int>();
      if (gj.contains("feature_dim")) g.feature_dim = gj["feature_dim"].get<int>();
      if (gj.contains("quality_signal_strength"))
        g.quality_signal_strength = gj["quality_signal_strength"].get<double>();
      if (gj.contains("video_nuisance_strength"))
        g.video_nuisance_strength = gj["video_nuisance_strength"].get<double>();
      if (gj.contains("frame_noise_strength"))
        g.frame_noise_strength = gj["frame_noise_strength"].get<double>();
      if (gj.contains("seed")) g.seed = gj["seed"].get<std::uint64_t>();
      c.generator = g;
      c.manifest.reset();
    }
    if (j.contains("splits")) {
      const auto& s = j["splits"];
      if (s.contains("frame_fraction")) c.frame_fraction = s["frame_fraction"].get<double>();
      if (s.contains("train_val_ratio")) {
        c.train_val_ratio.train = s["train_val_ratio"].at(0).get<int>();
        c.train_val_ratio.val = s["train_val_ratio"].at(1).get<int>();
      }
      if (s.contains("strided_frames")) c.strided_frames = s["strided_frames"].get<bool>();
      if (s.contains("folds")) c.folds = s["folds"].get<int>();
      if (s.contains("replicates")) c.replicates = s["replicates"].get<int>();
    }
    if (j.contains("extractor")) {
      const auto& e = j["extractor"];
      if (e.contains("hidden_dim")) c.extractor_hidden_dim = e["hidden_dim"].get<int>();
      if (e.contains("feature_dim")) c.extractor_feature_dim = e["feature_dim"].get<int>();
      if (e.contains("momentum")) c.train.momentum = e["momentum"].get<double>();
      if (e.contains("learning_rate")) c.train.learning_rate = e["learning_rate"].get<double>();
      if (e.contains("minibatch_size")) c.train.minibatch_size = e["minibatch_size"].get<int>();
      if (e.contains("max_iterations")) c.train.max_iterations = e["max_iterations"].get<long>();
      if (e.contains("validation_every")) c.train.validation_every = e["validation_every"].get<long>();
      if (e.contains("patience")) c.train.patience = e["patience"].get<int>();
      if (e.contains("lr_drop_factor")) c.train.lr_drop_factor = e["lr_drop_factor"].get<double>();
    }
    if (j.contains("svr")) {
      const auto& s = j["svr"];
      if (s.contains("C")) c.svr_config.C = s["C"].get<double>();
      if (s.contains("epsilon")) c.svr_config.epsilon = s["epsilon"].get<double>();
      if (s.contains("tolerance")) c.svr_config.tolerance = s["tolerance"].get<double>();
      if (s.contains("max_passes")) c.svr_config.max_passes = s["max_passes"].get<long>();
      if (s.contains("kernel")) c.kernel_kind = s["kernel"].get<std::string>();
      if (s.contains("gamma")) c.gamma = s["gamma"].get<double>();
      if (s.contains("degree")) c.poly_degree = s["degree"].get<int>();
      if (s.contains("coef")) c.poly_coef = s["coef"].get<double>();
    }
    if (j.contains("pooling")) c.pooling = pooling::pooling_from_string(j["pooling"].get<std::string>());
    if (j.contains("endtoend")) {
      const auto& e = j["endtoend"];
      if (e.contains("layer_scale")) c.head.layer_scale = e["layer_scale"].get<double>();
      if (e.contains("min_layer_width")) c.head.min_layer_width = e["min_layer_width"].get<int>();
      if (e.contains("dropout_rate")) c.head.dropout_rate = e["dropout_rate"].get<double>();
      if (e.contains("head_lr_multiplier"))
        c.head.head_lr_multiplier = e["head_lr_multiplier"].get<double>();
      if (e.contains("lr_decay_per_epoch"))
        c.head.lr_decay_per_epoch = e["lr_decay_per_epoch"].get<double>();
      if (e.contains("epochs")) c.head.epochs = e["epochs"].get<int>();
    }
    if (j.contains("protocols")) {
      if (j["protocols"].is_string() && j["protocols"].get<std::string>() == "all") {
        c.protocols = all_protocols();
      } else {
        c.protocols.clear();
        for (const auto& p : j["protocols"]) c.protocols.push_back(protocol_from_string(p.get<std::string>()));
      }
    }
    if (j.contains("kernel_grid")) c.kernel_grid = j["kernel_grid"].get<bool>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("config JSON: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json_string(ss.str());
}

std::string result_to_json_line(const RunResult& r) {
  json j;
  j["protocol"] = to_string(r.protocol);
  j["replicate"] = r.replicate;
  j["fold"] = r.fold;
  j["seed"] = r.seed;
  j["pooling"] = r.pooling_label;
  j["kernel"] = r.kernel_label;
  j["n"] = r.correlation.n;
  if (r.correlation.plcc)
    j["plcc"] = *r.correlation.plcc;
  else
    j["plcc"] = nullptr;
  if (r.correlation.srocc)
    j["srocc"] = *r.correlation.srocc;
  else
    j["srocc"] = nullptr;
  j["audit"] = {{"ft_leak_videos", r.audit.videos_in_train_and_val},
                {"tainted_test_videos", r.audit.test_videos_in_train_or_val},
                {"ft_leaky", r.audit.ft_leaky},
                {"test_tainted", r.audit.test_tainted}};
  j["failure"] = r.failure;
  return j.dump();
}

void write_results_jsonl(const std::filesystem::path& path, std::span<const RunResult> results) {
  std::ofstream out(path, std::ios::binary);  // binary: stable newlines
  if (!out) throw ParseError("cannot write results: " + path.string());
  for (const auto& r : results) out << result_to_json_line(r) << '\n';
}

std::vector<RunResult> read_results_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open results: " + path.string());
  std::vector<RunResult> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      RunResult r;
      r.protocol = protocol_from_string(j.at("protocol").get<std::string>());
      r.replicate = j.at("replicate").get<int>();
      r.fold = j.at("fold").get<int>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.pooling_label = j.at("pooling").get<std::string>();
      r.kernel_label = j.at("kernel").get<std::string>();
      r.correlation.n = j.at("n").get<int>();
      if (!j.at("plcc").is_null()) r.correlation.plcc = j["plcc"].get<double>();
      if (!j.at("srocc").is_null()) r.correlation.srocc = j["srocc"].get<double>();
      const auto& a = j.at("audit");
      r.audit.videos_in_train_and_val = a.at("ft_leak_videos").get<int>();
      r.audit.test_videos_in_train_or_val = a.at("tainted_test_videos").get<int>();
      r.audit.ft_leaky = a.at("ft_leaky").get<bool>();
      r.audit.test_tainted = a.at("test_tainted").get<bool>();
      r.failure = j.at("failure").get<std::string>();
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

ProtocolReport summarize(const Protocol& protocol, std::span<const RunResult> results) {
  ProtocolReport report;
  report.protocol = protocol.id;
  report.pooling_label = pooling::to_string(protocol.pooling);
  report.kernel_label = svr::kernel_label(protocol.kernel);
  report.ft_leaky = protocol.ft_leaky();
  report.test_tainted = protocol.test_tainted();

  std::vector<double> plccs, sroccs;
  std::unordered_set<int> reps;
  int max_fold = 0;
  for (const auto& r : results) {
    if (r.protocol != protocol.id) continue;
    report.n_results++;
    reps.insert(r.replicate);
    max_fold = std::max(max_fold, r.fold);
    if (!r.ok()) {
      report.n_failures++;
      continue;
    }
    plccs.push_back(*r.correlation.plcc);
    sroccs.push_back(*r.correlation.srocc);
  }
  report.replicates = static_cast<int>(reps.size());
  report.folds_per_replicate = report.n_results > 0 ? max_fold + 1 : 0;
  if (!plccs.empty()) {
    report.plcc = metrics::aggregate(plccs);
    report.srocc = metrics::aggregate(sroccs);
  }
  return report;
}

std::vector<std::string> svr_train_scope(const Protocol& protocol,
                                         const splitter::SplitPlan& plan,
                                         const std::vector<VideoRecord>& videos) {
  std::vector<std::string> out;
  if (protocol.test_tainted()) {
    std::unordered_set<std::string> test(plan.test_videos.begin(), plan.test_videos.end());
    for (const auto& v : videos)
      if (!test.count(v.video_id)) out.push_back(v.video_id);
    std::sort(out.begin(), out.end());
  } else {
    std::unordered_set<std::string> pool(plan.train_videos.begin(), plan.train_videos.end());
    pool.insert(plan.val_videos.begin(), plan.val_videos.end());
    out.assign(pool.begin(), pool.end());
    std::sort(out.begin(), out.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Session
// ---------------------------------------------------------------------------

struct Session::ReplicateState {
  int index = 0;
  std::uint64_t seed = 0;
  splitter::SplitPlan clean_plan;
  splitter::SplitPlan leaky_plan;
  extractor::Extractor init_extractor;
  std::optional<extractor::Extractor> clean_ft;
  std::optional<extractor::Extractor> leaky_ft;
  std::optional<extractor::TrainTrace> clean_trace;
  std::optional<extractor::TrainTrace> leaky_trace;
  std::optional<extractor::ClassDistribution> clean_dist;
  std::optional<endtoend::RegressionHead> e2e_model;
  std::optional<endtoend::TrainSummary> e2e_summary;
  std::vector<splitter::SplitPlan> folds_clean;
  std::vector<splitter::SplitPlan> folds_leaky;
  // pooled features per (extractor role, pooling method); role 0 = init,
  // 1 = clean ft, 2 = leaky ft
  std::map<std::pair<int, int>, Matrix> pooled;

  const extractor::Extractor& ensure_ft(bool leaky, const std::vector<VideoRecord>& videos,
                                        const RunConfig& config) {
    auto& slot = leaky ? leaky_ft : clean_ft;
    if (!slot) {
      extractor::TrainConfig tc = config.train;
      tc.seed = derive_seed(seed, kStreamFineTune);
      const auto& plan = leaky ? leaky_plan : clean_plan;
      auto [model, trace] = extractor::fine_tune(init_extractor, plan, videos, tc);
      slot = std::move(model);
      if (leaky)
        leaky_trace = std::move(trace);
      else
        clean_trace = std::move(trace);
      if (!leaky)
        clean_dist = extractor::class_distribution(*slot, videos, clean_plan.test_videos);
    }
    return *slot;
  }
};

Session::Session(std::vector<VideoRecord> videos, RunConfig config, std::string dataset_ref)
    : videos_(std::move(videos)), config_(std::move(config)), dataset_ref_(std::move(dataset_ref)) {
  config_.validate();
  dataset::validate_dataset(videos_);
  if (videos_.size() < 10)
    throw DomainError("session: need at least 10 videos for split-bearing use");
  for (std::size_t i = 0; i < videos_.size(); ++i) {
    video_index_[videos_[i].video_id] = i;
    mos_.push_back(videos_[i].mos);
  }
}

std::shared_ptr<Session::ReplicateState> Session::replicate_state(int r) {
  {
    std::lock_guard lock(states_mutex_);
    auto it = states_.find(r);
    if (it != states_.end()) return it->second;
  }
  auto state = std::make_shared<ReplicateState>();
  state->index = r;
  state->seed = derive_seed(config_.master_seed, static_cast<std::uint64_t>(r));
  const auto split_seed = derive_seed(state->seed, kStreamSplit);
  splitter::SplitOptions opts{config_.strided_frames};
  state->clean_plan = splitter::split_clean(videos_, config_.frame_fraction,
                                            config_.train_val_ratio, split_seed, opts);
  state->leaky_plan = splitter::split_ft_leaky(videos_, config_.frame_fraction,
                                               config_.train_val_ratio, split_seed, opts);
  state->clean_plan.dataset_ref = dataset_ref_;
  state->leaky_plan.dataset_ref = dataset_ref_;
  state->init_extractor = extractor::Extractor::initialize(
      static_cast<int>(videos_.front().frames.front().raw_features.size()),
      config_.extractor_hidden_dim, config_.extractor_feature_dim,
      derive_seed(state->seed, kStreamInit));

  std::lock_guard lock(states_mutex_);
  auto [it, inserted] = states_.emplace(r, std::move(state));
  return it->second;
}

std::vector<RunResult> Session::run_protocol_on(ReplicateState& state, const Protocol& protocol) {
  using clock = std::chrono::steady_clock;
  std::vector<RunResult> out;

  auto base_result = [&](const splitter::SplitPlan& plan, int fold) {
    RunResult r;
    r.protocol = protocol.id;
    r.replicate = state.index;
    r.fold = fold;
    r.seed = plan.seed;
    r.pooling_label = protocol.id == ProtocolId::EndToEnd ? "-" : pooling::to_string(protocol.pooling);
    r.kernel_label = protocol.id == ProtocolId::EndToEnd ? "-" : svr::kernel_label(protocol.kernel);
    return r;
  };

  auto record_audit = [&](RunResult& r, const splitter::SplitPlan& plan) {
    const auto a = splitter::audit(plan, videos_);
    r.audit = {a.videos_in_train_and_val, a.test_videos_in_train_or_val, a.ft_leaky,
               a.test_tainted};
    if (!a.consistent && r.failure.empty())
      r.failure = "audit flags disagree with the plan declaration";
  };

  auto pooled_features = [&](int role) -> const Matrix& {
    const auto key = std::make_pair(role, static_cast<int>(protocol.pooling));
    auto it = state.pooled.find(key);
    if (it != state.pooled.end()) return it->second;
    const extractor::Extractor* model = &state.init_extractor;
    if (role == 1) model = &state.ensure_ft(false, videos_, config_);
    if (role == 2) model = &state.ensure_ft(true, videos_, config_);
    Matrix pooled(videos_.size(), static_cast<std::size_t>(config_.extractor_feature_dim));
    for (std::size_t i = 0; i < videos_.size(); ++i) {
      const Matrix feats = extractor::extract_features(*model, dataset::frame_matrix(videos_[i]));
      const auto p = pooling::pool(feats, protocol.pooling);
      std::copy(p.begin(), p.end(), pooled.row(i).begin());
    }
    return state.pooled.emplace(key, std::move(pooled)).first->second;
  };

  auto svr_result = [&](const splitter::SplitPlan& plan, int fold, int role) {
    RunResult r = base_result(plan, fold);
    const auto t0 = clock::now();
    try {
      record_audit(r, plan);
      const Matrix& pooled = pooled_features(role);
      const auto scope = svr_train_scope(protocol, plan, videos_);
      Matrix train(scope.size(), pooled.cols());
      std::vector<double> targets;
      targets.reserve(scope.size());
      for (std::size_t i = 0; i < scope.size(); ++i) {
        const std::size_t vi = video_index_.at(scope[i]);
        std::copy(pooled.row(vi).begin(), pooled.row(vi).end(), train.row(i).begin());
        targets.push_back(mos_[vi]);
      }
      const auto model = svr::fit(train, targets, protocol.kernel, config_.svr_config);
      std::vector<double> preds, truth;
      preds.reserve(plan.test_videos.size());
      for (const auto& id : plan.test_videos) {
        const std::size_t vi = video_index_.at(id);
        preds.push_back(svr::predict_one(model, pooled.row(vi)));
        truth.push_back(mos_[vi]);
      }
      r.correlation = metrics::correlate(preds, truth);
    } catch (const std::exception& e) {
      r.failure = e.what();
    }
    r.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    return r;
  };

  switch (protocol.id) {
    case ProtocolId::NoFinetune:
      out.push_back(svr_result(state.clean_plan, 0, 0));
      break;
    case ProtocolId::Clean:
      out.push_back(svr_result(state.clean_plan, 0, 1));
      break;
    case ProtocolId::LeakyFt_CleanTest:
      out.push_back(svr_result(state.leaky_plan, 0, 2));
      break;
    case ProtocolId::CleanFt_TaintedTest:
    case ProtocolId::LeakyFt_TaintedTest: {
      const bool leaky = protocol.id == ProtocolId::LeakyFt_TaintedTest;
      state.ensure_ft(leaky, videos_, config_);
      auto& folds = leaky ? state.folds_leaky : state.folds_clean;
      if (folds.empty()) {
        const auto& ft_plan = leaky ? state.leaky_plan : state.clean_plan;
        auto sets = splitter::make_tainted_folds(videos_, config_.folds, 1, ft_plan,
                                                 derive_seed(state.seed, kStreamFolds));
        folds = std::move(sets.front().folds);
      }
      for (std::size_t k = 0; k < folds.size(); ++k)
        out.push_back(svr_result(folds[k], static_cast<int>(k), leaky ? 2 : 1));
      break;
    }
    case ProtocolId::EndToEnd: {
      RunResult r = base_result(state.clean_plan, 0);
      const auto t0 = clock::now();
      try {
        record_audit(r, state.clean_plan);
        if (!state.e2e_model) {
          endtoend::RegressionHeadConfig hc = config_.head;
          hc.seed = derive_seed(state.seed, kStreamEndToEnd);
          auto [model, summary] = endtoend::train_regression(
              state.init_extractor.embed_weights, state.clean_plan, videos_, hc);
          state.e2e_model = std::move(model);
          state.e2e_summary = std::move(summary);
        }
        std::vector<double> preds, truth;
        for (const auto& id : state.clean_plan.test_videos) {
          const std::size_t vi = video_index_.at(id);
          preds.push_back(endtoend::predict_video(*state.e2e_model, videos_[vi]));
          truth.push_back(mos_[vi]);
        }
        r.correlation = metrics::correlate(preds, truth);
      } catch (const std::exception& e) {
        r.failure = e.what();
      }
      r.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
      out.push_back(std::move(r));
      break;
    }
  }
  return out;
}

std::vector<Protocol> Session::resolved_protocols() const {
  std::vector<Protocol> out;
  for (ProtocolId id : config_.protocols) {
    if (config_.kernel_grid && id != ProtocolId::EndToEnd) {
      for (auto method : {pooling::PoolingMethod::Mean, pooling::PoolingMethod::Median,
                          pooling::PoolingMethod::Min, pooling::PoolingMethod::Max})
        for (const auto* kind : {"linear", "polynomial", "gaussian"})
          out.push_back({id, method, config_.make_kernel(kind)});
    } else {
      out.push_back({id, config_.pooling, config_.make_kernel()});
    }
  }
  return out;
}

std::vector<RunResult> Session::run_protocol(const Protocol& protocol) {
  std::vector<RunResult> out;
  for (int r = 0; r < config_.replicates; ++r) {
    auto state = replicate_state(r);
    auto results = run_protocol_on(*state, protocol);
    out.insert(out.end(), results.begin(), results.end());
  }
  return out;
}

std::vector<RunResult> Session::run_all(int parallel) {
  const auto protos = resolved_protocols();
  const int reps = config_.replicates;
  // per-replicate, protocol-major result blocks
  std::vector<std::vector<std::vector<RunResult>>> blocks(
      static_cast<std::size_t>(reps));

  auto work = [&](int r) {
    auto state = replicate_state(r);
    auto& mine = blocks[static_cast<std::size_t>(r)];
    mine.resize(protos.size());
    for (std::size_t p = 0; p < protos.size(); ++p)
      mine[p] = run_protocol_on(*state, protos[p]);
  };

  if (parallel <= 1) {
    for (int r = 0; r < reps; ++r) work(r);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> threads;
    const int n_threads = std::min(parallel, reps);
    threads.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t)
      threads.emplace_back([&] {
        for (int r = next.fetch_add(1); r < reps; r = next.fetch_add(1)) work(r);
      });
    for (auto& t : threads) t.join();
  }

  std::vector<RunResult> out;
  for (std::size_t p = 0; p < protos.size(); ++p)
    for (int r = 0; r < reps; ++r)
      for (auto& res : blocks[static_cast<std::size_t>(r)][p]) out.push_back(std::move(res));
  return out;
}

std::map<int, Session::ReplicateArtifacts> Session::artifacts() const {
  std::lock_guard lock(states_mutex_);
  std::map<int, ReplicateArtifacts> out;
  for (const auto& [r, state] : states_) {
    ReplicateArtifacts a;
    a.clean_plan = state->clean_plan;
    a.leaky_plan = state->leaky_plan;
    a.clean_trace = state->clean_trace;
    a.leaky_trace = state->leaky_trace;
    a.clean_distribution = state->clean_dist;
    a.tainted_clean_folds = state->folds_clean;
    a.tainted_leaky_folds = state->folds_leaky;
    out.emplace(r, std::move(a));
  }
  return out;
}

void Session::write_outputs(const std::filesystem::path& out_dir,
                            std::span<const RunResult> results) const {
  std::filesystem::create_directories(out_dir);
  write_results_jsonl(out_dir / "results.jsonl", results);

  {
    std::ofstream timing(out_dir / "timings.csv");
    timing << "protocol,pooling,kernel,replicate,fold,wall_ms\n";
    for (const auto& r : results)
      timing << to_string(r.protocol) << ',' << r.pooling_label << ',' << r.kernel_label << ','
             << r.replicate << ',' << r.fold << ',' << r.wall_ms << '\n';
  }
  {
    std::ofstream cfg(out_dir / "config.json");
    cfg << config_.to_json_string() << '\n';
  }

  const auto arts = artifacts();
  if (!arts.empty()) {
    std::filesystem::create_directories(out_dir / "plans");
    std::filesystem::create_directories(out_dir / "traces");
    json dists = json::array();
    for (const auto& [r, a] : arts) {
      const std::string tag = "r" + std::to_string(r);
      splitter::write_plan(a.clean_plan, out_dir / "plans" / (tag + "_clean_ft.json"));
      splitter::write_plan(a.leaky_plan, out_dir / "plans" / (tag + "_leaky_ft.json"));
      for (std::size_t k = 0; k < a.tainted_clean_folds.size(); ++k)
        splitter::write_plan(a.tainted_clean_folds[k],
                             out_dir / "plans" / (tag + "_tainted_clean_fold" + std::to_string(k) + ".json"));
      for (std::size_t k = 0; k < a.tainted_leaky_folds.size(); ++k)
        splitter::write_plan(a.tainted_leaky_folds[k],
                             out_dir / "plans" / (tag + "_tainted_leaky_fold" + std::to_string(k) + ".json"));
      if (a.clean_trace) {
        std::ofstream f(out_dir / "traces" / (tag + "_clean.csv"));
        a.clean_trace->write_csv(f);
      }
      if (a.leaky_trace) {
        std::ofstream f(out_dir / "traces" / (tag + "_leaky.csv"));
        a.leaky_trace->write_csv(f);
      }
      if (a.clean_distribution) {
        json d;
        d["replicate"] = r;
        d["percent"] = a.clean_distribution->percent;
        d["accuracy"] = a.clean_distribution->accuracy;
        d["dominant_share"] = a.clean_distribution->dominant_share;
        d["n_videos"] = a.clean_distribution->n_videos;
        dists.push_back(std::move(d));
      }
    }
    std::ofstream dfile(out_dir / "class_distribution.json");
    dfile << dists.dump(2) << '\n';
  }
}

}  // namespace leaklab::harness

#include <doctest.h>

#include <fstream>
#include <sstream>

#include "leaklab/report.hpp"
#include "support/test_util.hpp"

using namespace leaklab;
using harness::ProtocolId;
namespace tu = leaklab::testing;

TEST_SUITE_BEGIN("report");

namespace {

harness::ProtocolReport fake_report(ProtocolId id, double plcc, double srocc) {
  harness::ProtocolReport r;
  r.protocol = id;
  r.pooling_label = "mean";
  r.kernel_label = "gaussian";
  r.plcc = {plcc, 0.05, 5};
  r.srocc = {srocc, 0.04, 5};
  r.n_results = 5;
  r.replicates = 5;
  r.folds_per_replicate = 1;
  harness::Protocol proto{id};
  r.ft_leaky = proto.ft_leaky();
  r.test_tainted = proto.test_tainted();
  return r;
}

std::vector<harness::ProtocolReport> sample_reports() {
  return {
      fake_report(ProtocolId::Clean, 0.58, 0.57),
      fake_report(ProtocolId::LeakyFt_TaintedTest, 0.81, 0.80),
      fake_report(ProtocolId::CleanFt_TaintedTest, 0.67, 0.66),
      fake_report(ProtocolId::NoFinetune, 0.53, 0.52),
  };
}

harness::RunResult fake_result(ProtocolId id, int rep, double plcc, double srocc,
                               const std::string& pool = "mean",
                               const std::string& kernel = "gaussian") {
  harness::RunResult r;
  r.protocol = id;
  r.replicate = rep;
  r.pooling_label = pool;
  r.kernel_label = kernel;
  r.correlation.plcc = plcc;
  r.correlation.srocc = srocc;
  r.correlation.n = 60;
  return r;
}

}  // namespace

TEST_CASE("reference constants carry the published values") {
  const auto& rows = report::reference_table();
  REQUIRE(rows.size() == 13);
  CHECK(rows[11].plcc == doctest::Approx(0.71));
  CHECK(rows[11].srocc == doctest::Approx(0.69));
  CHECK(rows[8].plcc == doctest::Approx(0.83));
  CHECK(rows[8].srocc == doctest::Approx(0.84));
  CHECK(rows[7].plcc == doctest::Approx(0.85));
  CHECK(rows[3].algorithm == "TLVQM");
  CHECK(rows[12].plcc == doctest::Approx(0.66));

  const auto clean_ref = report::reference_for(ProtocolId::Clean);
  REQUIRE(clean_ref.reimplementation.has_value());
  CHECK(clean_ref.reimplementation->row == 12);
  const auto leaky_ref = report::reference_for(ProtocolId::LeakyFt_TaintedTest);
  REQUIRE(leaky_ref.reported.has_value());
  CHECK(leaky_ref.reported->row == 8);
}

TEST_CASE("rendered table annotates rows with the published analogs") {
  const auto text = report::render_table(sample_reports());
  CHECK(text.find("Clean") != std::string::npos);
  CHECK(text.find("0.71") != std::string::npos);        // row 12 annotation
  CHECK(text.find("0.83") != std::string::npos);        // row 9 annotation
  CHECK(text.find("claimed 0.85") != std::string::npos);  // row 8 claim
  CHECK(text.find("leak") != std::string::npos);
  CHECK(text.find("taint") != std::string::npos);
}

TEST_CASE("annotations never change the computed columns") {
  const auto with = report::render_table(sample_reports(), true);
  const auto without = report::render_table(sample_reports(), false);
  std::istringstream a(with), b(without);
  std::string la, lb;
  // skip headers, then every data row of the plain table must prefix the
  // annotated one
  std::getline(a, la);
  std::getline(b, lb);
  while (std::getline(b, lb)) {
    if (lb.find_first_not_of('-') == std::string::npos) continue;
    if (lb.empty()) break;  // trailing annotation-only sections differ
    do {
      if (!std::getline(a, la)) FAIL("annotated table ran out of lines");
    } while (la.find_first_not_of('-') == std::string::npos);
    CHECK(la.substr(0, lb.size()) == lb);
  }
}

TEST_CASE("figure data bundle") {
  tu::TempDir dir("figs");
  report::FigureData data;

  extractor::TrainTrace clean, leaky;
  for (int i = 0; i < 20; ++i) {
    clean.train_loss.push_back(1.0 / (i + 1));
    clean.train_accuracy.push_back(0.5);
    leaky.train_loss.push_back(0.9 / (i + 1));
    leaky.train_accuracy.push_back(0.6);
  }
  clean.validation.push_back({10, 0.4, 0.6});
  leaky.validation.push_back({10, 0.3, 0.8});
  data.clean_trace = clean;
  data.leaky_trace = leaky;

  extractor::ClassDistribution d1;
  d1.percent = {10.0, 20.0, 30.0, 25.0, 15.0};
  d1.accuracy = 0.4;
  d1.n_videos = 20;
  extractor::ClassDistribution d2 = d1;
  d2.percent = {20.0, 20.0, 20.0, 20.0, 20.0};
  data.distributions = {d1, d2};

  for (int rep = 0; rep < 3; ++rep) {
    data.results.push_back(fake_result(ProtocolId::Clean, rep, 0.6 + 0.01 * rep, 0.58));
    data.results.push_back(fake_result(ProtocolId::NoFinetune, rep, 0.5, 0.49));
    data.results.push_back(
        fake_result(ProtocolId::LeakyFt_TaintedTest, rep, 0.8, 0.79, "mean", "linear"));
  }

  report::emit_figure_data(data, dir.path());

  SUBCASE("training curves share one iteration axis") {
    std::ifstream f(dir.path() / "fig3_training_curves.csv");
    std::string header, line;
    std::getline(f, header);
    CHECK(header ==
          "iteration,clean_train_loss,clean_train_acc,clean_val_loss,clean_val_acc,leaky_"
          "train_loss,leaky_train_acc,leaky_val_loss,leaky_val_acc");
    int rows = 0;
    while (std::getline(f, line))
      if (!line.empty()) ++rows;
    CHECK(rows == 20);
  }

  SUBCASE("class histogram rows close to one hundred percent") {
    std::ifstream f(dir.path() / "fig4_class_histogram.csv");
    std::string line;
    std::getline(f, line);  // header
    int split_rows = 0;
    while (std::getline(f, line)) {
      if (line.rfind("mean", 0) == 0 || line.rfind("std", 0) == 0 || line.empty()) continue;
      std::stringstream ss(line);
      std::string cell;
      std::getline(ss, cell, ',');
      double sum = 0.0;
      for (int c = 0; c < 5; ++c) {
        std::getline(ss, cell, ',');
        sum += std::stod(cell);
      }
      CHECK(std::abs(sum - 100.0) <= 0.1);
      ++split_rows;
    }
    CHECK(split_rows == 2);
  }

  SUBCASE("kernel bars carry four reference markers per chart") {
    std::ifstream f(dir.path() / "fig5_kernel_bars.csv");
    std::string line;
    std::getline(f, line);
    std::map<std::string, int> markers, gaps;
    while (std::getline(f, line)) {
      if (line.rfind("reference,", 0) == 0) {
        const auto rest = line.substr(10);
        markers[rest.substr(0, rest.find(','))]++;
      }
      if (line.rfind("gap,", 0) == 0) {
        const auto rest = line.substr(4);
        gaps[rest.substr(0, rest.find(','))]++;
      }
    }
    for (const auto chart : {"NoFinetune", "Clean", "LeakyFt_CleanTest", "LeakyFt_TaintedTest"})
      CHECK(markers[chart] == 4);
    // LeakyFt_CleanTest had no results: explicit gap marker, no fabricated bars
    CHECK(gaps["LeakyFt_CleanTest"] == 1);
    CHECK(gaps["Clean"] == 0);
  }
}

TEST_CASE("class distribution artifact reader") {
  tu::TempDir dir("dists");
  std::ofstream(dir.path() / "class_distribution.json")
      << R"([{"replicate":0,"percent":[10,20,30,25,15],"accuracy":0.4,)"
      << R"("dominant_share":0.3,"n_videos":20}])";
  const auto dists = report::read_class_distributions(dir.path() / "class_distribution.json");
  REQUIRE(dists.size() == 1);
  CHECK(dists[0].percent[2] == doctest::Approx(30.0));
  CHECK(dists[0].n_videos == 20);
}

TEST_SUITE_END();

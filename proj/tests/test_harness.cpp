#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "teach/harness.hpp"

using namespace teach;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig c = reversing_experiment_defaults();
  c.seeds = {3};
  c.demo_count = 40;
  c.pool_size = 10;
  c.eval_sets = 5;
  c.eval_count = 2;
  c.pretrain.epochs = 4;
  c.finetune.epochs = 2;
  c.practice_pairs = 64;
  c.gain_checkpoints = 2;
  return c;
}

const ExperimentReport& tiny_report() {
  static const ExperimentReport r = run_synthetic_experiment(tiny_config());
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t occurrences(const std::string& text, const std::string& what) {
  std::size_t n = 0;
  for (auto pos = text.find(what); pos != std::string::npos; pos = text.find(what, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("reward improvement") {
  const std::vector<double> pre{-10, -8};
  const std::vector<double> ev{-5, -5, -5, -5, -5};
  CHECK(reward_improvement(pre, ev) == doctest::Approx(4.0));
  const std::vector<double> same{-9, -9, -9};
  CHECK(reward_improvement(pre, same) == doctest::Approx(0.0));
  std::vector<double> pre2 = pre, ev2 = ev;
  for (auto& v : pre2) v += 17.5;
  for (auto& v : ev2) v += 17.5;
  CHECK(reward_improvement(pre2, ev2) == doctest::Approx(4.0));
  CHECK_THROWS_AS(reward_improvement({}, ev), Error);
  CHECK_THROWS_AS(reward_improvement(pre, {}), Error);
}

TEST_CASE("wilcoxon examples") {
  const std::vector<double> a{1, 2, 3, 4, 5, 6}, z(6, 0.0);
  const auto r = wilcoxon_signed_rank(a, z);
  CHECK(r.w_plus == 21);
  CHECK(r.exact);
  CHECK(r.p_two_sided == doctest::Approx(2.0 / 64));
  CHECK(r.p_greater == doctest::Approx(1.0 / 64));
  const auto s = wilcoxon_signed_rank(z, a);
  CHECK(s.statistic == -r.statistic);
  CHECK(s.p_two_sided == r.p_two_sided);
  CHECK_THROWS_AS(wilcoxon_signed_rank(a, a), Error);
  CHECK_THROWS_AS(wilcoxon_signed_rank(std::vector<double>{1, 2}, std::vector<double>{0, 0}), Error);
}

TEST_CASE("wilcoxon exact p matches sign enumeration") {
  Rng rng(606);
  for (int n = 1; n <= 10; ++n) {
    for (int k = 0; k < 40; ++k) {
      const std::size_t len = std::max(5, n);
      std::vector<double> a(len, 0.0), b(len, 0.0);
      for (int i = 0; i < n; ++i) {
        // Coarse values produce ties in |d|.
        double d = std::round(rng.uniform(-4, 4) * 2) / 2;
        if (d == 0) d = 0.5;
        a[i] = d;
      }
      const auto r = wilcoxon_signed_rank(a, b);
      CHECK(r.n == n);
      CHECK(r.p_two_sided == doctest::Approx(oracle::wilcoxon_enumerated_p(a, b)).epsilon(1e-12));
    }
  }
}

TEST_CASE("wilcoxon normal approximation for large n") {
  // Reference values from an independent implementation (tie-corrected, no continuity correction).
  std::vector<double> a, b(30, 0.0);
  for (int i = 1; i <= 30; ++i) a.push_back(((i * 7) % 19 - 6) * 0.25);
  const auto r = wilcoxon_signed_rank(a, b);
  CHECK_FALSE(r.exact);
  CHECK(r.n == 28);
  CHECK(r.w_plus == 317.5);
  CHECK(r.p_greater == doctest::Approx(0.004527753943133168).epsilon(1e-10));
  CHECK(r.p_two_sided == doctest::Approx(0.009055507886266335).epsilon(1e-10));
  CHECK(r.p_greater + r.p_less == doctest::Approx(1.0));
}

TEST_CASE("setting and student names") {
  for (Setting s : {Setting::full_trajectory, Setting::skills, Setting::time_heuristic, Setting::drills,
                    Setting::ind_drills}) {
    CHECK(setting_from_string(to_string(s)) == s);
  }
  CHECK(student_kind_from_string("half_trained") == StudentKind::half_trained);
  CHECK_THROWS_AS(setting_from_string("nap"), Error);
}

TEST_CASE("config json round trip and hash") {
  ExperimentConfig c = tiny_config();
  const auto back = ExperimentConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.hash() == c.hash());
  c.practice_pairs += 1;
  CHECK(c.hash() != back.hash());
  Json bad = c.to_json();
  bad["eval_sets"] = 0;
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad).check(), Error);
  Json unknown = c.to_json();
  unknown["colour"] = 1;
  CHECK_THROWS_AS(ExperimentConfig::from_json(unknown), ParseError);
}

TEST_CASE("synthetic experiment structure") {
  const auto& rep = tiny_report();
  REQUIRE(rep.runs.size() == 1);
  const SeedRun& run = rep.runs[0];
  CHECK(run.settings.size() == 3);
  for (const auto& s : run.settings) {
    CHECK(s.set_means.size() == 5);
    CHECK(s.practice_pairs == 64);
    for (double v : s.set_means) CHECK(v <= 0.0);
  }
  CHECK(run.identified_skills.size() == 3);
  CHECK(run.result(Setting::ind_drills).target_skills == run.identified_skills);
  CHECK(run.gain_curve.size() == 3);
  CHECK(run.comparison(Setting::ind_drills, Setting::full_trajectory) != nullptr);
  CHECK(rep.config_hash == rep.config.hash());
}

TEST_CASE("synthetic experiment is reproducible") {
  const auto again = run_synthetic_experiment(tiny_config());
  CHECK(again.to_json() == tiny_report().to_json());
}

TEST_CASE("report files") {
  const auto& rep = tiny_report();
  const auto base = std::filesystem::temp_directory_path() / "teach_test_report";
  std::filesystem::remove_all(base);
  emit_report(rep, base / "a");
  emit_report(rep, base / "b");
  for (const char* f : {"report.json", "report.csv", "charts/eval_reward.svg", "charts/reward_improvement.svg"}) {
    CHECK(slurp(base / "a" / f) == slurp(base / "b" / f));
  }
  CHECK(occurrences(slurp(base / "a" / "charts/eval_reward.svg"), "<rect") == 3);
  CHECK(ExperimentReport::from_json(read_json_file(base / "a" / "report.json")).to_json() == rep.to_json());

  std::ifstream csv(base / "a" / "report.csv");
  std::string line;
  std::getline(csv, line);
  std::map<std::string, std::vector<double>> means;
  while (std::getline(csv, line)) {
    std::stringstream ss(line);
    std::string seed, setting, k, mean;
    std::getline(ss, seed, ',');
    std::getline(ss, setting, ',');
    std::getline(ss, k, ',');
    std::getline(ss, mean, ',');
    means[setting].push_back(std::stod(mean));
  }
  for (const auto& s : rep.runs[0].settings) CHECK(means.at(std::string(to_string(s.setting))) == s.set_means);
  CHECK(means.at("baseline") == rep.runs[0].baseline_set_means);
  std::filesystem::remove_all(base);
}

TEST_CASE("bar chart") {
  const auto svg = bar_chart_svg("t<1>", {"a", "b", "c"}, {-0.2, -0.1, 0.3}, {0.05, 0.0, 0.1});
  CHECK(occurrences(svg, "<rect") == 3);
  CHECK(svg.find("t&lt;1&gt;") != std::string::npos);
  CHECK_THROWS_AS(bar_chart_svg("x", {"a"}, {1, 2}, {0, 0}), Error);
}

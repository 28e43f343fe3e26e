// One PASS/FAIL line per acceptance criterion. Exit status is nonzero if any fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "teach/harness.hpp"

using namespace teach;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += !ok;
}

std::string num(double v, const char* spec = "%.4f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void reversing_criteria() {
  const ExperimentConfig cfg = reversing_experiment_defaults();
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentReport rep = run_synthetic_experiment(cfg);
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;

  const double ind = rep.run_mean(Setting::ind_drills);
  const double full = rep.run_mean(Setting::full_trajectory);
  const double drills = rep.run_mean(Setting::drills);
  report(ind > full && ind > drills, "reversing student: ind_drills run mean above full_trajectory and drills",
         "ind " + num(ind) + ", full " + num(full) + ", drills " + num(drills) + " over " +
             std::to_string(rep.runs.size()) + " seeds x " + std::to_string(cfg.eval_sets) + " eval sets");

  int significant = 0;
  std::string ps;
  for (const auto& run : rep.runs) {
    const Comparison* c = run.comparison(Setting::ind_drills, Setting::full_trajectory);
    const double p = c && c->defined ? c->test.p_greater : 1.0;
    significant += p < 0.05;
    ps += (ps.empty() ? "" : " ") + num(p, "%.3g");
  }
  report(significant >= 7, "reversing student: one-sided Wilcoxon ind_drills > full_trajectory, p < 0.05 on >= 7/10 seeds",
         std::to_string(significant) + "/" + std::to_string(rep.runs.size()) + " seeds (p: " + ps + ")");
  report(minutes < 15.0, "reversing student: 10-seed run under 15 minutes", num(minutes, "%.2f") + " min");

  std::vector<double> mse;
  for (const auto& run : rep.runs) mse.push_back(run.eval_mse);
  const double m = mean(mse);
  report(m >= 0.01 && m <= 0.035, "reverse-filtered 400-epoch student: eval MSE in [0.01, 0.035]",
         "mean " + num(m) + " over seeds, range [" + num(*std::min_element(mse.begin(), mse.end())) + ", " +
             num(*std::max_element(mse.begin(), mse.end())) + "]");

  std::vector<double> curve;
  for (const auto& run : rep.runs) {
    if (curve.empty()) curve.assign(run.gain_curve.size(), 0.0);
    for (std::size_t i = 0; i < curve.size() && i < run.gain_curve.size(); ++i) {
      curve[i] += run.gain_curve[i] / static_cast<double>(rep.runs.size());
    }
  }
  const std::size_t mid = curve.size() / 2;
  const double first = curve.empty() ? 0.0 : curve[mid] - curve.front();
  const double second = curve.empty() ? 0.0 : curve.back() - curve[mid];
  std::string pts;
  for (double v : curve) pts += (pts.empty() ? "" : " ") + num(v);
  report(curve.size() >= 3 && first >= second, "fine-tuning gain curve is concave (first-half gain >= second-half gain)",
         "first " + num(first) + ", second " + num(second) + " (mean reward at checkpoints: " + pts + ")");
}

void half_trained_criteria() {
  const ExperimentConfig cfg = half_trained_experiment_defaults();
  const ExperimentReport rep = run_synthetic_experiment(cfg);
  int ok = 0;
  std::vector<double> mse;
  for (const auto& run : rep.runs) {
    const double full = run.result(Setting::full_trajectory).mean();
    ok += run.result(Setting::drills).mean() >= full && run.result(Setting::ind_drills).mean() >= full;
    mse.push_back(run.eval_mse);
  }
  report(ok >= 8, "half-trained student: drills >= full_trajectory and ind_drills >= full_trajectory on >= 8/10 seeds",
         std::to_string(ok) + "/" + std::to_string(rep.runs.size()) + " seeds; run means ind " +
             num(rep.run_mean(Setting::ind_drills)) + ", drills " + num(rep.run_mean(Setting::drills)) + ", full " +
             num(rep.run_mean(Setting::full_trajectory)));
  const double m = mean(mse);
  report(m >= 0.03 && m <= 0.07, "half-trained student: eval MSE in [0.03, 0.07]",
         "mean " + num(m) + " over seeds, range [" + num(*std::min_element(mse.begin(), mse.end())) + ", " +
             num(*std::max_element(mse.begin(), mse.end())) + "]");
}

void algorithm_oracles() {
  Rng rng(20240);
  int ok = 0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = 1 + rng.index(12);
    const LabelMap l = oracle::random_labels(rng, n, 1 + static_cast<int>(rng.index(8)), 6);
    ok += oracle::greedy_steps_optimal(l, select_diverse_scenarios(l, 1 + rng.index(n)));
  }
  report(ok == 200, "diverse selection: every greedy step attains the exhaustive maximum marginal gain",
         std::to_string(ok) + "/200 instances");

  ok = 0;
  for (int i = 0; i < 100; ++i) ok += oracle::plant_and_recover(rng, 8, 1 + static_cast<int>(rng.index(4)));
  report(ok == 100, "expertise identification: planted missing skills are exactly the lowest-expertise skills",
         std::to_string(ok) + "/100 constructions");

  ok = 0;
  for (int i = 0; i < 100; ++i) {
    const int skills = 1 + static_cast<int>(rng.index(5));
    const LabelMap l = oracle::random_labels(rng, 1 + rng.index(8), skills, 9);
    ok += oracle::ngram_counts_match(l, 1 + static_cast<int>(rng.index(3)), skills);
  }
  report(ok == 100, "n-gram counts equal exhaustive window enumeration", std::to_string(ok) + "/100 label sets");

  const ParkingEnv env;
  const auto demos = generate_parking_demos(env.params(), {}, 80, 5);
  const auto ex = fit_builtin(demos, parking_extractor_defaults(), 5);
  const auto labels = label_demonstrations(demos, ex);
  int drills = 0;
  ok = 0;
  for (int i = 0; i < 20; ++i) {
    DrillConfig cfg{1 + static_cast<int>(rng.index(3)), 1 + static_cast<int>(rng.index(3)),
                    1 + static_cast<int>(rng.index(7)), 1 + static_cast<int>(rng.index(2))};
    ExpertiseVector e;
    for (const auto& [m, segs] : ex.library().segments) e.scores[m] = -rng.uniform(0, 1);
    const auto set = create_drills(e, cfg, labels, demos, ex.library(), env, rng.next());
    for (const Drill* d : set.all()) {
      ++drills;
      ok += d->repetitions == cfg.n_rep && oracle::drill_well_formed(*d, labels, env, demos);
    }
  }
  report(drills > 0 && ok == drills, "drills: length = N_rep * sum of segment lengths and contain the target skill",
         std::to_string(ok) + "/" + std::to_string(drills) + " drills");
}

void numeric_checks() {
  const double err = oracle::gradient_check(50, 4242);
  report(err < 1e-4, "policy net gradient matches central differences (relative error < 1e-4, 50 probes)",
         "max relative error " + num(err, "%.3g"));

  Rng rng(99);
  const ParkingEnv penv;
  const WritingEnv wenv(default_writing_params());
  bool nonpos = true;
  for (const auto& sc : penv.sample_scenarios(200, 7)) {
    const auto& g = sc.parking_goal().pose;
    const StateVector s = parking_pose(rng.uniform(-30, 30), rng.uniform(-30, 30), rng.uniform(-3, 3), rng.uniform(-5, 5));
    nonpos = nonpos && parking_reward(s, g, penv.params()) <= 0.0;
  }
  std::vector<double> wr;
  for (const auto& sc : wenv.sample_scenarios(50, 7)) {
    std::vector<StateVector> pts;
    for (int i = 0; i < 60; ++i) pts.push_back({rng.uniform(0, 104), rng.uniform(0, 104)});
    const double r = wenv.display_reward(sc, pts);
    nonpos = nonpos && r <= 0.0;
  }
  Scenario park = penv.sample_scenarios(1, 8)[0];
  const double park_opt = parking_reward(park.parking_goal().pose, park.parking_goal().pose, penv.params());
  const Scenario wsc = wenv.sample_scenarios(1, 8)[0];
  const double write_opt = wenv.expert_demo(wsc).reward;
  report(nonpos && park_opt == 0.0 && write_opt == 0.0, "both environment rewards are <= 0 and exactly 0 at the optimum",
         "parking at goal " + num(park_opt, "%g") + ", writing gold trace " + num(write_opt, "%g"));

  int checked = 0, ok = 0;
  for (int n = 1; n <= 10; ++n) {
    for (int k = 0; k < 50; ++k) {
      const std::size_t len = std::max(5, n);
      std::vector<double> a(len, 0.0), b(len, 0.0);
      for (int i = 0; i < n; ++i) {
        double d = std::round(rng.uniform(-4, 4) * 2) / 2;
        a[static_cast<std::size_t>(i)] = d == 0 ? 0.5 : d;
      }
      const auto w = wilcoxon_signed_rank(a, b);
      ++checked;
      ok += w.exact && std::abs(w.p_two_sided - oracle::wilcoxon_enumerated_p(a, b)) <= 1e-12;
    }
  }
  report(ok == checked, "Wilcoxon exact p matches full sign enumeration for n <= 10",
         std::to_string(ok) + "/" + std::to_string(checked) + " samples");
}

// Runs the offline CLI pipeline into `home` and returns false on any failed command.
bool cli_pipeline(const fs::path& home) {
  fs::remove_all(home);
  fs::create_directories(home);
  const std::string bin = TEACH_CLI_PATH;
  const std::string env = "TEACH_HOME='" + home.string() + "' ";
  const std::string quiet = " > '" + (home / "cli.log").string() + "' 2>&1";
  const std::vector<std::string> cmds = {
      "gen-demos --env parking --count 60",
      "fit-extractor --env parking",
      "extract --env parking",
      "select-scenarios --env parking",
      "train-student --student reversing --epochs 20 --pool '" + (home / "pool" / "parking.json").string() + "'",
      "assess --env parking --students '" + (home / "students" / "reversing" / "trajectories.json").string() + "'",
      "make-drills --env parking --expertise '" + (home / "expertise" / "parking.json").string() + "'",
      "run-experiment --student reversing --demo-count 40 --eval-sets 5 --finetune-epochs 5 --out '" +
          (home / "experiment").string() + "'",
  };
  for (const auto& c : cmds) {
    if (std::system((env + bin + " --seed 7 " + c + quiet).c_str()) != 0) return false;
  }
  return true;
}

void determinism() {
  const fs::path base = fs::temp_directory_path() / "teach_acceptance_cli";
  const bool ran = cli_pipeline(base / "a") && cli_pipeline(base / "b");
  bool same = ran;
  int files = 0;
  if (ran) {
    same = slurp(base / "a" / "experiment" / "report.json") == slurp(base / "b" / "experiment" / "report.json");
    ++files;
    for (const auto& e : fs::directory_iterator(base / "a" / "drills" / "parking")) {
      const fs::path other = base / "b" / "drills" / "parking" / e.path().filename();
      same = same && fs::exists(other) && slurp(e.path()) == slurp(other);
      ++files;
    }
    std::size_t count_b = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(base / "b" / "drills" / "parking")) ++count_b;
    same = same && count_b + 1 == static_cast<std::size_t>(files);
  }
  report(ran && same && files > 1, "CLI reruns give byte-identical report.json and drill files",
         ran ? std::to_string(files) + " files compared" : "a CLI command failed");
  if (ran && same) fs::remove_all(base);
}

}  // namespace

int main() {
  algorithm_oracles();
  numeric_checks();
  determinism();
  reversing_criteria();
  half_trained_criteria();
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}

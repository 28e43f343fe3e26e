#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "teach/curriculum.hpp"
#include "teach/envs.hpp"
#include "teach/extract.hpp"
#include "teach/json_io.hpp"
#include "teach/student.hpp"

namespace teach {

// mean(eval) - mean(pretest).
double reward_improvement(std::span<const double> pretest, std::span<const double> eval);

struct WilcoxonResult {
  int n = 0;             // nonzero differences
  double w_plus = 0.0;   // rank sum of positive differences a - b
  double w_minus = 0.0;
  double statistic = 0.0;  // w_plus - w_minus
  double p_two_sided = 1.0;
  double p_greater = 1.0;  // alternative: a tends to exceed b
  double p_less = 1.0;
  bool exact = false;
};

// Paired signed-rank test with average ranks for ties. Exact null distribution
// for n <= 12, otherwise a normal approximation with tie-corrected variance.
// Throws Error when the samples differ in length, have fewer than 5 pairs, or
// every difference is zero.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

enum class Setting { full_trajectory, skills, time_heuristic, drills, ind_drills };
std::string_view to_string(Setting s);
Setting setting_from_string(std::string_view name);

enum class StudentKind { reversing, half_trained };
std::string_view to_string(StudentKind k);
StudentKind student_kind_from_string(std::string_view name);

struct ExperimentConfig {
  StudentKind student = StudentKind::reversing;
  std::vector<std::uint64_t> seeds{1};
  std::vector<Setting> settings{Setting::full_trajectory, Setting::drills, Setting::ind_drills};

  ParkingParams parking;
  ExpertParams expert;
  ExtractorConfig extractor = parking_extractor_defaults();

  int demo_count = 200;
  double heldout_fraction = 0.2;
  int pool_size = 25;
  int pretest_count = 2;
  int eval_count = 5;
  int eval_sets = 15;
  int target_skills = 3;
  DrillConfig drills{3, 1, 3, 2};
  // Seeded re-draws of each drill's representative segments pooled into its practice data.
  int drill_projections = 1;
  int time_heuristic_k = 4;
  int common_skills = 3;

  double keep_fraction = 0.2;
  TrainConfig pretrain{400, 5e-4, 256, 0};
  int half_trained_epochs = 50;
  TrainConfig finetune{100, 5e-4, 256, 0};
  std::size_t practice_pairs = 256;
  // Fine-tuning epochs at which the ind_drills reward is sampled for the gain curve.
  int gain_checkpoints = 4;
  double display_offset = 0.0;

  void check() const;
  Json to_json() const;
  static ExperimentConfig from_json(const Json& j);
  // FNV-1a of the canonical JSON form.
  std::string hash() const;
};

ExperimentConfig reversing_experiment_defaults();
ExperimentConfig half_trained_experiment_defaults();

struct SettingResult {
  Setting setting = Setting::full_trajectory;
  std::vector<double> set_means;      // mean eval reward per eval set
  std::vector<double> improvements;   // per eval set, relative to the untuned student
  std::vector<int> target_skills;
  std::size_t practice_pairs = 0;
  double mean() const;
  double stddev() const;
  double mean_improvement() const;
};

struct Comparison {
  Setting a = Setting::ind_drills;
  Setting b = Setting::full_trajectory;
  WilcoxonResult test;
  bool defined = true;
};

struct SeedRun {
  std::uint64_t seed = 0;
  std::size_t demos = 0;
  double pretrain_final_loss = 0.0;
  double eval_mse = 0.0;
  std::vector<double> baseline_set_means;  // untuned student per eval set
  std::vector<double> pretest_rewards;
  std::vector<int> identified_skills;
  std::vector<double> identified_skill_accel;
  std::vector<SettingResult> settings;
  std::vector<Comparison> comparisons;
  // ind_drills mean eval reward after 0, E/k, 2E/k, ..., E fine-tuning epochs.
  std::vector<double> gain_curve;
  std::vector<std::string> warnings;

  const SettingResult& result(Setting s) const;
  const Comparison* comparison(Setting a, Setting b) const;
};

struct ExperimentReport {
  ExperimentConfig config;
  std::string config_hash;
  std::vector<SeedRun> runs;

  double run_mean(Setting s) const;
  Json to_json() const;
  static ExperimentReport from_json(const Json& j);
};

using ProgressFn = std::function<void(const std::string&)>;

struct TrainedStudent {
  PolicyNet net;
  LossCurve curve;
  double eval_mse = 0.0;  // on the held-out tail of `demos`
};

// The configured student kind, trained on all but the held-out tail of `demos`.
TrainedStudent train_synthetic_student(const ExperimentConfig& cfg, std::span<const Trajectory> demos,
                                       std::uint64_t seed);

SeedRun run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const ProgressFn& progress = {});
ExperimentReport run_synthetic_experiment(const ExperimentConfig& cfg, const ProgressFn& progress = {});

// report.json, report.csv and charts/*.svg; bytes depend only on the report.
void emit_report(const ExperimentReport& report, const std::filesystem::path& dir);

// Bar chart of per-setting means with +-1 standard deviation whiskers.
std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<double>& means, const std::vector<double>& errors);

// Expert demonstrations for `count` sampled scenarios; unsuccessful ones are dropped.
std::vector<Trajectory> generate_parking_demos(const ParkingParams& params, const ExpertParams& expert,
                                               std::size_t count, std::uint64_t seed,
                                               const std::string& prefix = "park");

// Training pairs of a drill: its source segments, repeated.
BCDataset drill_pairs(const Drill& drill, std::span<const Trajectory> demos);

}  // namespace teach

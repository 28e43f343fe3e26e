#include "teach/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "teach/random.hpp"

namespace teach {

namespace {

double mean_of(std::span<const double> v) {
  if (v.empty()) throw Error("mean of an empty sample");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sd_of(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string fmt(double v, const char* spec = "%.10g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

double reward_improvement(std::span<const double> pretest, std::span<const double> eval) {
  if (pretest.empty() || eval.empty()) throw Error("reward improvement needs pretest and evaluation rewards");
  return mean_of(eval) - mean_of(pretest);
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("paired samples differ in length");
  if (a.size() < 5) throw Error("signed-rank test needs at least 5 pairs");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i] - b[i];
    if (!std::isfinite(x)) throw Error("non-finite sample in signed-rank test");
    if (x != 0.0) d.push_back(x);
  }
  if (d.empty()) throw Error("signed-rank test undefined: every paired difference is zero");

  const std::size_t n = d.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return std::abs(d[i]) < std::abs(d[j]); });
  // Doubled ranks stay integral under averaging.
  std::vector<long> rank2(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const long avg2 = static_cast<long>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = avg2;
    i = j + 1;
  }

  WilcoxonResult r;
  r.n = static_cast<int>(n);
  long wp2 = 0;
  long total2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total2 += rank2[i];
    if (d[i] > 0) wp2 += rank2[i];
  }
  r.w_plus = wp2 / 2.0;
  r.w_minus = (total2 - wp2) / 2.0;
  r.statistic = r.w_plus - r.w_minus;

  if (n <= 12) {
    r.exact = true;
    std::vector<double> count(static_cast<std::size_t>(total2) + 1, 0.0);
    count[0] = 1.0;
    for (long rk : rank2) {
      for (long s = total2; s >= rk; --s) count[s] += count[s - rk];
    }
    const double all = std::ldexp(1.0, static_cast<int>(n));
    double ge = 0.0;
    double le = 0.0;
    for (long s = 0; s <= total2; ++s) {
      if (s >= wp2) ge += count[s];
      if (s <= wp2) le += count[s];
    }
    r.p_greater = ge / all;
    r.p_less = le / all;
  } else {
    double var = 0.0;
    for (long rk : rank2) var += (rk / 2.0) * (rk / 2.0);
    var /= 4.0;
    const double z = (r.w_plus - total2 / 4.0) / std::sqrt(var);
    r.p_greater = 0.5 * std::erfc(z / std::sqrt(2.0));
    r.p_less = 0.5 * std::erfc(-z / std::sqrt(2.0));
  }
  r.p_two_sided = std::min(1.0, 2.0 * std::min(r.p_greater, r.p_less));
  return r;
}

namespace {

constexpr std::array<std::pair<Setting, std::string_view>, 5> kSettingNames{{
    {Setting::full_trajectory, "full_trajectory"},
    {Setting::skills, "skills"},
    {Setting::time_heuristic, "time_heuristic"},
    {Setting::drills, "drills"},
    {Setting::ind_drills, "ind_drills"},
}};

}  // namespace

std::string_view to_string(Setting s) {
  for (const auto& [k, name] : kSettingNames) {
    if (k == s) return name;
  }
  return "unknown";
}

Setting setting_from_string(std::string_view name) {
  for (const auto& [k, n] : kSettingNames) {
    if (n == name) return k;
  }
  throw Error("unknown practice setting '" + std::string(name) + "'");
}

std::string_view to_string(StudentKind k) { return k == StudentKind::reversing ? "reversing" : "half_trained"; }

StudentKind student_kind_from_string(std::string_view name) {
  if (name == "reversing") return StudentKind::reversing;
  if (name == "half_trained") return StudentKind::half_trained;
  throw Error("unknown student kind '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

void ExperimentConfig::check() const {
  parking.check();
  extractor.check(parking.horizon);
  drills.check();
  if (seeds.empty()) throw Error("experiment needs at least one seed");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) throw Error("duplicate seeds");
  if (settings.empty()) throw Error("experiment needs at least one setting");
  if (demo_count < 2) throw Error("demo_count must be at least 2");
  if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0)) throw Error("heldout_fraction must lie in (0, 1)");
  if (pool_size < 1 || pretest_count < 1 || eval_count < 1) throw Error("scenario counts must be positive");
  if (pretest_count > pool_size) throw Error("pretest_count exceeds pool_size");
  if (eval_sets < 5) throw Error("eval_sets must be at least 5 for the signed-rank test");
  if (target_skills < 1 || target_skills > extractor.latent_dim) throw Error("target_skills out of range");
  if (common_skills < 1 || time_heuristic_k < 1) throw Error("skill counts must be positive");
  if (!(keep_fraction >= 0.0 && keep_fraction <= 1.0)) throw Error("keep_fraction must lie in [0, 1]");
  if (pretrain.epochs < 0 || half_trained_epochs < 0 || finetune.epochs < 0) throw Error("epochs must be nonnegative");
  if (practice_pairs < 1) throw Error("practice_pairs must be positive");
  if (gain_checkpoints < 1) throw Error("gain_checkpoints must be positive");
  if (drill_projections < 1) throw Error("drill_projections must be positive");
}

namespace {

Json train_to_json(const TrainConfig& t) {
  return Json{{"epochs", t.epochs}, {"lr", t.lr}, {"batch", t.batch}, {"beta1", t.beta1}, {"beta2", t.beta2},
              {"epsilon", t.epsilon}};
}

void train_from_json(const Json& j, TrainConfig& t) {
  for (const auto& [k, v] : j.items()) {
    if (k == "epochs") t.epochs = v.get<int>();
    else if (k == "lr") t.lr = v.get<double>();
    else if (k == "batch") t.batch = v.get<int>();
    else if (k == "beta1") t.beta1 = v.get<double>();
    else if (k == "beta2") t.beta2 = v.get<double>();
    else if (k == "epsilon") t.epsilon = v.get<double>();
    else throw ParseError("unknown training field '" + k + "'");
  }
}

Json parking_to_json(const ParkingParams& p) {
  return Json{{"dt", p.dt},
              {"wheelbase", p.wheelbase},
              {"max_accel", p.max_accel},
              {"max_steer", p.max_steer},
              {"max_speed", p.max_speed},
              {"weights", p.weights},
              {"scales", p.scales},
              {"power", p.power},
              {"success_threshold", p.success_threshold},
              {"aisle_y", p.aisle_y},
              {"spot_y", p.spot_y},
              {"spot_x", p.spot_x},
              {"lot_extent", p.lot_extent},
              {"start_x", {p.start_x_min, p.start_x_max}},
              {"start_y", {p.start_y_min, p.start_y_max}},
              {"horizon", p.horizon}};
}

void parking_from_json(const Json& j, ParkingParams& p) {
  for (const auto& [k, v] : j.items()) {
    if (k == "dt") p.dt = v.get<double>();
    else if (k == "wheelbase") p.wheelbase = v.get<double>();
    else if (k == "max_accel") p.max_accel = v.get<double>();
    else if (k == "max_steer") p.max_steer = v.get<double>();
    else if (k == "max_speed") p.max_speed = v.get<double>();
    else if (k == "weights") p.weights = v.get<std::array<double, 6>>();
    else if (k == "scales") p.scales = v.get<std::array<double, 6>>();
    else if (k == "power") p.power = v.get<double>();
    else if (k == "success_threshold") p.success_threshold = v.get<double>();
    else if (k == "aisle_y") p.aisle_y = v.get<double>();
    else if (k == "spot_y") p.spot_y = v.get<double>();
    else if (k == "spot_x") p.spot_x = v.get<std::vector<double>>();
    else if (k == "lot_extent") p.lot_extent = v.get<double>();
    else if (k == "start_x") std::tie(p.start_x_min, p.start_x_max) = v.get<std::pair<double, double>>();
    else if (k == "start_y") std::tie(p.start_y_min, p.start_y_max) = v.get<std::pair<double, double>>();
    else if (k == "horizon") p.horizon = v.get<int>();
    else throw ParseError("unknown parking field '" + k + "'");
  }
}

Json expert_to_json(const ExpertParams& e) {
  return Json{{"turn_radius", e.turn_radius},
              {"lookahead", e.lookahead},
              {"cruise_speed", e.cruise_speed},
              {"reverse_speed", e.reverse_speed},
              {"distance_gain", e.distance_gain},
              {"speed_gain", e.speed_gain},
              {"path_extension", e.path_extension},
              {"reverse_capture_distance", e.reverse_capture_distance},
              {"reverse_capture_heading", e.reverse_capture_heading},
              {"reverse_accel_limit", e.reverse_accel_limit},
              {"steer_noise", e.steer_noise},
              {"accel_noise", e.accel_noise}};
}

void expert_from_json(const Json& j, ExpertParams& e) {
  const std::map<std::string, double*> fields{{"turn_radius", &e.turn_radius},
                                              {"lookahead", &e.lookahead},
                                              {"cruise_speed", &e.cruise_speed},
                                              {"reverse_speed", &e.reverse_speed},
                                              {"distance_gain", &e.distance_gain},
                                              {"speed_gain", &e.speed_gain},
                                              {"path_extension", &e.path_extension},
                                              {"reverse_capture_distance", &e.reverse_capture_distance},
                                              {"reverse_capture_heading", &e.reverse_capture_heading},
                                              {"reverse_accel_limit", &e.reverse_accel_limit},
                                              {"steer_noise", &e.steer_noise},
                                              {"accel_noise", &e.accel_noise}};
  for (const auto& [k, v] : j.items()) {
    auto it = fields.find(k);
    if (it == fields.end()) throw ParseError("unknown expert field '" + k + "'");
    *it->second = v.get<double>();
  }
}

}  // namespace

Json ExperimentConfig::to_json() const {
  Json settings_json = Json::array();
  for (Setting s : settings) settings_json.push_back(std::string(to_string(s)));
  return Json{{"student", std::string(to_string(student))},
              {"seeds", seeds},
              {"settings", settings_json},
              {"parking", parking_to_json(parking)},
              {"expert", expert_to_json(expert)},
              {"extractor",
               {{"latent_dim", extractor.latent_dim},
                {"segments_per_demo", extractor.segments_per_demo},
                {"segment_length", extractor.segment_length},
                {"h_min", extractor.h_min},
                {"h_max", extractor.h_max}}},
              {"demo_count", demo_count},
              {"heldout_fraction", heldout_fraction},
              {"pool_size", pool_size},
              {"pretest_count", pretest_count},
              {"eval_count", eval_count},
              {"eval_sets", eval_sets},
              {"target_skills", target_skills},
              {"drills", {{"n", drills.n}, {"n_rep", drills.n_rep}, {"n_drills", drills.n_drills}}},
              {"time_heuristic_k", time_heuristic_k},
              {"common_skills", common_skills},
              {"keep_fraction", keep_fraction},
              {"pretrain", train_to_json(pretrain)},
              {"half_trained_epochs", half_trained_epochs},
              {"finetune", train_to_json(finetune)},
              {"practice_pairs", practice_pairs},
              {"drill_projections", drill_projections},
              {"gain_checkpoints", gain_checkpoints},
              {"display_offset", display_offset}};
}

ExperimentConfig ExperimentConfig::from_json(const Json& j) {
  if (!j.is_object()) throw ParseError("experiment config must be an object");
  ExperimentConfig c;
  if (j.contains("student")) {
    c = student_kind_from_string(j["student"].get<std::string>()) == StudentKind::half_trained
            ? half_trained_experiment_defaults()
            : reversing_experiment_defaults();
  }
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "student") continue;
      if (k == "seeds") c.seeds = v.get<std::vector<std::uint64_t>>();
      else if (k == "settings") {
        c.settings.clear();
        for (const auto& s : v) c.settings.push_back(setting_from_string(s.get<std::string>()));
      } else if (k == "parking") parking_from_json(v, c.parking);
      else if (k == "expert") expert_from_json(v, c.expert);
      else if (k == "extractor") {
        for (const auto& [ek, ev] : v.items()) {
          if (ek == "latent_dim") c.extractor.latent_dim = ev.get<int>();
          else if (ek == "segments_per_demo") c.extractor.segments_per_demo = ev.get<int>();
          else if (ek == "segment_length") c.extractor.segment_length = ev.get<int>();
          else if (ek == "h_min") c.extractor.h_min = ev.get<int>();
          else if (ek == "h_max") c.extractor.h_max = ev.get<int>();
          else throw ParseError("unknown extractor field '" + ek + "'");
        }
      } else if (k == "demo_count") c.demo_count = v.get<int>();
      else if (k == "heldout_fraction") c.heldout_fraction = v.get<double>();
      else if (k == "pool_size") c.pool_size = v.get<int>();
      else if (k == "pretest_count") c.pretest_count = v.get<int>();
      else if (k == "eval_count") c.eval_count = v.get<int>();
      else if (k == "eval_sets") c.eval_sets = v.get<int>();
      else if (k == "target_skills") c.target_skills = v.get<int>();
      else if (k == "drills") {
        for (const auto& [dk, dv] : v.items()) {
          if (dk == "n") c.drills.n = dv.get<int>();
          else if (dk == "n_rep") c.drills.n_rep = dv.get<int>();
          else if (dk == "n_drills") c.drills.n_drills = dv.get<int>();
          else throw ParseError("unknown drills field '" + dk + "'");
        }
      } else if (k == "time_heuristic_k") c.time_heuristic_k = v.get<int>();
      else if (k == "common_skills") c.common_skills = v.get<int>();
      else if (k == "keep_fraction") c.keep_fraction = v.get<double>();
      else if (k == "pretrain") train_from_json(v, c.pretrain);
      else if (k == "half_trained_epochs") c.half_trained_epochs = v.get<int>();
      else if (k == "finetune") train_from_json(v, c.finetune);
      else if (k == "practice_pairs") c.practice_pairs = v.get<std::size_t>();
      else if (k == "gain_checkpoints") c.gain_checkpoints = v.get<int>();
      else if (k == "drill_projections") c.drill_projections = v.get<int>();
      else if (k == "display_offset") c.display_offset = v.get<double>();
      else throw ParseError("unknown experiment field '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad experiment config: ") + e.what());
  }
  c.drills.n_target = c.target_skills;
  c.check();
  return c;
}

std::string ExperimentConfig::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : to_json().dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ExperimentConfig reversing_experiment_defaults() {
  ExperimentConfig c;
  c.student = StudentKind::reversing;
  c.seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  return c;
}

ExperimentConfig half_trained_experiment_defaults() {
  ExperimentConfig c = reversing_experiment_defaults();
  c.student = StudentKind::half_trained;
  return c;
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

double SettingResult::mean() const { return mean_of(set_means); }
double SettingResult::stddev() const { return sd_of(set_means); }
double SettingResult::mean_improvement() const { return mean_of(improvements); }

const SettingResult& SeedRun::result(Setting s) const {
  for (const auto& r : settings) {
    if (r.setting == s) return r;
  }
  throw Error("setting '" + std::string(to_string(s)) + "' was not run");
}

const Comparison* SeedRun::comparison(Setting a, Setting b) const {
  for (const auto& c : comparisons) {
    if (c.a == a && c.b == b) return &c;
  }
  return nullptr;
}

double ExperimentReport::run_mean(Setting s) const {
  std::vector<double> m;
  for (const auto& r : runs) m.push_back(r.result(s).mean());
  return mean_of(m);
}

// ---------------------------------------------------------------------------
// Experiment
// ---------------------------------------------------------------------------

std::vector<Trajectory> generate_parking_demos(const ParkingParams& params, const ExpertParams& expert,
                                               std::size_t count, std::uint64_t seed, const std::string& prefix) {
  const ParkingEnv env(params);
  std::vector<Trajectory> out;
  for (const auto& sc : env.sample_scenarios(count, seed, prefix)) {
    auto r = scripted_parking_expert(sc, params, expert, seed);
    if (r.success) out.push_back(std::move(r.trajectory));
  }
  return out;
}

BCDataset drill_pairs(const Drill& drill, std::span<const Trajectory> demos) {
  BCDataset one;
  for (const auto& p : drill.pieces) {
    one.append(bc_dataset(find_trajectory(demos, p.segment.trajectory_id), p.segment.begin, p.segment.end));
  }
  BCDataset out;
  for (int r = 0; r < drill.repetitions; ++r) out.append(one);
  return out;
}

namespace {

struct EvalSets {
  std::vector<Scenario> scenarios;
  int sets = 0;
  int per_set = 0;
};

std::vector<double> evaluate(const PolicyNet& net, const EvalSets& ev, const ParkingEnv& env, double offset) {
  std::vector<double> means;
  for (int k = 0; k < ev.sets; ++k) {
    double sum = 0.0;
    for (int i = 0; i < ev.per_set; ++i) {
      const Scenario& sc = ev.scenarios[static_cast<std::size_t>(k * ev.per_set + i)];
      sum += rollout(net, sc, env, sc.horizon, sc.id).reward + offset;
    }
    means.push_back(sum / ev.per_set);
  }
  return means;
}

BCDataset segments_pairs(std::span<const Trajectory> demos, const std::vector<SegmentRef>& refs) {
  BCDataset out;
  for (const auto& r : refs) out.append(bc_dataset(find_trajectory(demos, r.trajectory_id), r.begin, r.end));
  return out;
}

}  // namespace

TrainedStudent train_synthetic_student(const ExperimentConfig& cfg, std::span<const Trajectory> demos,
                                       std::uint64_t seed) {
  if (demos.size() < 2) throw Error("training a student needs at least two demonstrations");
  const std::size_t heldout = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(
                                                           cfg.heldout_fraction * static_cast<double>(demos.size()))));
  const auto train_demos = demos.first(demos.size() - heldout);
  const auto test_demos = demos.last(heldout);

  TrainedStudent out;
  out.net = PolicyNet::parking_default(derive_seed(seed, "student-init"));
  TrainConfig pre = cfg.pretrain;
  pre.seed = derive_seed(seed, "pretrain");
  BCDataset pre_data = bc_dataset(train_demos);
  if (cfg.student == StudentKind::reversing) {
    pre_data = filter_reverse(pre_data, cfg.keep_fraction, derive_seed(seed, "filter"));
  } else {
    pre.epochs = cfg.half_trained_epochs;
  }
  out.curve = bc_train(out.net, pre_data, pre);
  // Held-out pairs follow the student's own training distribution.
  BCDataset test_data = bc_dataset(test_demos);
  if (cfg.student == StudentKind::reversing) {
    test_data = filter_reverse(test_data, cfg.keep_fraction, derive_seed(seed, "filter-heldout"));
  }
  out.eval_mse = eval_mse(out.net, test_data);
  return out;
}

SeedRun run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const ProgressFn& progress) {
  cfg.check();
  auto note = [&](const std::string& msg) {
    if (progress) progress("seed " + std::to_string(seed) + ": " + msg);
  };
  const ParkingEnv env(cfg.parking);
  SeedRun run;
  run.seed = seed;

  const auto demos = generate_parking_demos(cfg.parking, cfg.expert, static_cast<std::size_t>(cfg.demo_count),
                                            derive_seed(seed, "demos"), "demo");
  run.demos = demos.size();
  if (demos.size() < 2) throw Error("expert solved fewer than two demonstration scenarios");
  if (demos.size() < static_cast<std::size_t>(cfg.demo_count)) {
    run.warnings.push_back(std::to_string(cfg.demo_count - static_cast<int>(demos.size())) +
                           " expert demonstrations failed and were dropped");
  }
  note(std::to_string(demos.size()) + " demonstrations");

  const auto extractor = fit_builtin(demos, cfg.extractor, derive_seed(seed, "extractor"));
  for (const auto& w : extractor.warnings()) run.warnings.push_back(w);
  const LabelMap labels = label_demonstrations(demos, extractor);

  const TrainedStudent trained = train_synthetic_student(cfg, demos, seed);
  const PolicyNet& student = trained.net;
  run.pretrain_final_loss = trained.curve.epoch_loss.empty() ? 0.0 : trained.curve.epoch_loss.back();
  run.eval_mse = trained.eval_mse;
  note("student trained, held-out MSE " + fmt(run.eval_mse, "%.4f"));

  // Pool and individual assessment.
  const auto pool = select_diverse_scenarios(labels, static_cast<std::size_t>(cfg.pool_size));
  std::map<std::string, Trajectory> student_trajs;
  std::vector<Trajectory> pool_demos;
  for (const auto& id : pool) {
    const Trajectory& demo = find_trajectory(demos, id);
    pool_demos.push_back(demo);
    student_trajs[id] = rollout(student, demo.scenario, env, demo.scenario.horizon, id);
  }
  for (int i = 0; i < cfg.pretest_count; ++i) run.pretest_rewards.push_back(student_trajs.at(pool[i]).reward);
  const ExpertiseVector expertise = assess_expertise(pool, labels, student_trajs, extractor);
  run.identified_skills = lowest_expertise_skills(expertise, cfg.target_skills);
  for (int m : run.identified_skills) run.identified_skill_accel.push_back(extractor.library().mean_second_action(m));

  EvalSets ev;
  ev.sets = cfg.eval_sets;
  ev.per_set = cfg.eval_count;
  ev.scenarios = env.sample_scenarios(static_cast<std::size_t>(cfg.eval_sets * cfg.eval_count),
                                      derive_seed(seed, "eval"), "eval");
  run.baseline_set_means = evaluate(student, ev, env, cfg.display_offset);

  DrillConfig dcfg = cfg.drills;
  dcfg.n_target = cfg.target_skills;

  // Skills populated in the library are the candidates for random drills.
  std::vector<int> populated;
  for (const auto& [m, segs] : extractor.library().segments) {
    if (!segs.empty()) populated.push_back(m);
  }

  for (Setting setting : cfg.settings) {
    const std::string name(to_string(setting));
    SettingResult res;
    res.setting = setting;
    BCDataset practice;
    switch (setting) {
      case Setting::full_trajectory:
        practice = bc_dataset(pool_demos);
        break;
      case Setting::skills:
      case Setting::time_heuristic: {
        std::map<int, std::vector<SegmentRef>> by_skill;
        for (const auto& d : pool_demos) {
          const auto seg = setting == Setting::skills ? extractor.extract(d)
                                                      : time_heuristic_extract(d, cfg.time_heuristic_k);
          for (std::size_t j = 0; j < seg.num_segments(); ++j) {
            by_skill[seg.skills[j]].push_back({d.id, seg.boundaries[j], seg.boundaries[j + 1]});
          }
        }
        std::vector<std::pair<long, int>> freq;
        for (const auto& [m, refs] : by_skill) freq.emplace_back(-static_cast<long>(refs.size()), m);
        std::sort(freq.begin(), freq.end());
        for (int i = 0; i < cfg.common_skills && i < static_cast<int>(freq.size()); ++i) {
          res.target_skills.push_back(freq[i].second);
          practice.append(segments_pairs(pool_demos, by_skill[freq[i].second]));
        }
        break;
      }
      case Setting::drills:
      case Setting::ind_drills: {
        std::vector<int> targets;
        if (setting == Setting::ind_drills) {
          targets = run.identified_skills;
        } else {
          std::vector<int> cand = populated;
          Rng rng(derive_seed(seed, "random-targets"));
          rng.shuffle(cand);
          cand.resize(std::min<std::size_t>(cand.size(), static_cast<std::size_t>(cfg.target_skills)));
          targets = cand;
        }
        res.target_skills = targets;
        // Independent projections of the same drills form the offline drill dataset.
        for (int r = 0; r < cfg.drill_projections; ++r) {
          const DrillSet set = create_drills_for_targets(targets, dcfg, labels, demos, extractor.library(), env,
                                                         derive_seed(seed, "drills-" + name + "-" + std::to_string(r)));
          if (r == 0) {
            for (const auto& w : set.warnings) run.warnings.push_back(name + ": " + w);
          }
          for (const Drill* d : set.all()) practice.append(drill_pairs(*d, demos));
        }
        break;
      }
    }
    if (practice.empty()) {
      run.warnings.push_back(name + ": no practice material; the student is left unchanged");
      practice = bc_dataset(pool_demos);
    }
    practice = sample_with_replacement(practice, cfg.practice_pairs, derive_seed(seed, "practice-" + name));
    res.practice_pairs = practice.size();

    PolicyNet tuned = student;
    TrainConfig ft = cfg.finetune;
    ft.seed = derive_seed(seed, "finetune-" + name);
    EpochHook hook;
    if (setting == Setting::ind_drills) {
      run.gain_curve.push_back(mean_of(run.baseline_set_means));
      hook = [&](int epoch, const PolicyNet& net) {
        if (epoch % std::max(1, ft.epochs / cfg.gain_checkpoints) == 0 || epoch == ft.epochs) {
          if (run.gain_curve.size() <= static_cast<std::size_t>(cfg.gain_checkpoints)) {
            run.gain_curve.push_back(mean_of(evaluate(net, ev, env, cfg.display_offset)));
          }
        }
      };
    }
    if (ft.epochs > 0) fine_tune(tuned, practice, ft, hook);
    res.set_means = evaluate(tuned, ev, env, cfg.display_offset);
    for (std::size_t k = 0; k < res.set_means.size(); ++k) {
      res.improvements.push_back(res.set_means[k] - run.baseline_set_means[k]);
    }
    note(name + " mean eval reward " + fmt(res.mean(), "%.4f"));
    run.settings.push_back(std::move(res));
  }

  std::set<std::size_t> sizes;
  for (const auto& r : run.settings) sizes.insert(r.practice_pairs);
  if (sizes.size() != 1) throw Error("practice sets differ in size across settings");

  for (std::size_t i = run.settings.size(); i-- > 0;) {
    for (std::size_t j = 0; j < i; ++j) {
      Comparison c;
      c.a = run.settings[i].setting;
      c.b = run.settings[j].setting;
      try {
        c.test = wilcoxon_signed_rank(run.settings[i].set_means, run.settings[j].set_means);
      } catch (const Error&) {
        c.defined = false;
      }
      run.comparisons.push_back(c);
    }
  }
  return run;
}

ExperimentReport run_synthetic_experiment(const ExperimentConfig& cfg, const ProgressFn& progress) {
  cfg.check();
  ExperimentReport report;
  report.config = cfg;
  report.config_hash = cfg.hash();
  for (std::uint64_t seed : cfg.seeds) report.runs.push_back(run_seed(cfg, seed, progress));
  return report;
}

// ---------------------------------------------------------------------------
// Report output
// ---------------------------------------------------------------------------

namespace {

Json wilcoxon_to_json(const WilcoxonResult& w) {
  return Json{{"n", w.n},
              {"w_plus", w.w_plus},
              {"w_minus", w.w_minus},
              {"statistic", w.statistic},
              {"p_two_sided", w.p_two_sided},
              {"p_greater", w.p_greater},
              {"p_less", w.p_less},
              {"exact", w.exact}};
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

Json ExperimentReport::to_json() const {
  Json runs_json = Json::array();
  for (const auto& r : runs) {
    Json settings_json = Json::array();
    for (const auto& s : r.settings) {
      settings_json.push_back(Json{{"setting", std::string(to_string(s.setting))},
                                   {"set_means", s.set_means},
                                   {"improvements", s.improvements},
                                   {"mean", s.mean()},
                                   {"stddev", s.stddev()},
                                   {"mean_improvement", s.mean_improvement()},
                                   {"target_skills", s.target_skills},
                                   {"practice_pairs", s.practice_pairs}});
    }
    Json comps = Json::array();
    for (const auto& c : r.comparisons) {
      Json cj{{"a", std::string(to_string(c.a))}, {"b", std::string(to_string(c.b))}, {"defined", c.defined}};
      if (c.defined) cj["test"] = wilcoxon_to_json(c.test);
      comps.push_back(cj);
    }
    runs_json.push_back(Json{{"seed", r.seed},
                             {"demos", r.demos},
                             {"pretrain_final_loss", r.pretrain_final_loss},
                             {"eval_mse", r.eval_mse},
                             {"baseline_set_means", r.baseline_set_means},
                             {"pretest_rewards", r.pretest_rewards},
                             {"identified_skills", r.identified_skills},
                             {"identified_skill_accel", r.identified_skill_accel},
                             {"settings", settings_json},
                             {"comparisons", comps},
                             {"gain_curve", r.gain_curve},
                             {"warnings", r.warnings}});
  }
  Json summary = Json::object();
  for (Setting s : config.settings) {
    std::vector<double> means;
    std::vector<double> imps;
    for (const auto& r : runs) {
      means.push_back(r.result(s).mean());
      imps.push_back(r.result(s).mean_improvement());
    }
    summary[std::string(to_string(s))] = Json{{"mean_reward", mean_of(means)},
                                              {"reward_sd", sd_of(means)},
                                              {"mean_improvement", mean_of(imps)},
                                              {"improvement_sd", sd_of(imps)}};
  }
  return Json{{"config", config.to_json()}, {"config_hash", config_hash}, {"summary", summary}, {"runs", runs_json}};
}

ExperimentReport ExperimentReport::from_json(const Json& j) {
  ExperimentReport rep;
  try {
    rep.config = ExperimentConfig::from_json(require_field(j, "config"));
    rep.config_hash = require_field(j, "config_hash").get<std::string>();
    for (const auto& rj : require_field(j, "runs")) {
      SeedRun r;
      r.seed = rj.at("seed").get<std::uint64_t>();
      r.demos = rj.at("demos").get<std::size_t>();
      r.pretrain_final_loss = rj.at("pretrain_final_loss").get<double>();
      r.eval_mse = rj.at("eval_mse").get<double>();
      r.baseline_set_means = rj.at("baseline_set_means").get<std::vector<double>>();
      r.pretest_rewards = rj.at("pretest_rewards").get<std::vector<double>>();
      r.identified_skills = rj.at("identified_skills").get<std::vector<int>>();
      r.identified_skill_accel = rj.at("identified_skill_accel").get<std::vector<double>>();
      for (const auto& sj : rj.at("settings")) {
        SettingResult s;
        s.setting = setting_from_string(sj.at("setting").get<std::string>());
        s.set_means = sj.at("set_means").get<std::vector<double>>();
        s.improvements = sj.at("improvements").get<std::vector<double>>();
        s.target_skills = sj.at("target_skills").get<std::vector<int>>();
        s.practice_pairs = sj.at("practice_pairs").get<std::size_t>();
        r.settings.push_back(std::move(s));
      }
      for (const auto& cj : rj.at("comparisons")) {
        Comparison c;
        c.a = setting_from_string(cj.at("a").get<std::string>());
        c.b = setting_from_string(cj.at("b").get<std::string>());
        c.defined = cj.at("defined").get<bool>();
        if (c.defined) {
          const Json& t = cj.at("test");
          c.test.n = t.at("n").get<int>();
          c.test.w_plus = t.at("w_plus").get<double>();
          c.test.w_minus = t.at("w_minus").get<double>();
          c.test.statistic = t.at("statistic").get<double>();
          c.test.p_two_sided = t.at("p_two_sided").get<double>();
          c.test.p_greater = t.at("p_greater").get<double>();
          c.test.p_less = t.at("p_less").get<double>();
          c.test.exact = t.at("exact").get<bool>();
        }
        r.comparisons.push_back(c);
      }
      r.gain_curve = rj.at("gain_curve").get<std::vector<double>>();
      r.warnings = rj.at("warnings").get<std::vector<std::string>>();
      rep.runs.push_back(std::move(r));
    }
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed report: ") + e.what());
  }
  return rep;
}

std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<double>& means, const std::vector<double>& errors) {
  if (labels.size() != means.size() || means.size() != errors.size()) throw Error("chart series differ in length");
  const double width = 120.0 * static_cast<double>(std::max<std::size_t>(labels.size(), 1)) + 80.0;
  const double height = 320.0;
  const double top = 40.0;
  const double bottom = 260.0;
  double lo = 0.0;
  double hi = 0.0;
  for (std::size_t i = 0; i < means.size(); ++i) {
    lo = std::min(lo, means[i] - errors[i]);
    hi = std::max(hi, means[i] + errors[i]);
  }
  if (hi - lo <= 0.0) hi = lo + 1.0;
  auto ypos = [&](double v) { return bottom - (v - lo) / (hi - lo) * (bottom - top); };
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width, "%.0f") << "\" height=\""
      << fmt(height, "%.0f") << "\">\n";
  svg << "<text x=\"10\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\">" << xml_escape(title) << "</text>\n";
  svg << "<line x1=\"50\" x2=\"" << fmt(width - 10, "%.0f") << "\" y1=\"" << fmt(ypos(0.0), "%.2f") << "\" y2=\""
      << fmt(ypos(0.0), "%.2f") << "\" stroke=\"#444\"/>\n";
  for (std::size_t i = 0; i < means.size(); ++i) {
    const double x = 60.0 + 120.0 * static_cast<double>(i);
    const double y0 = ypos(0.0);
    const double y1 = ypos(means[i]);
    svg << "<rect x=\"" << fmt(x, "%.2f") << "\" y=\"" << fmt(std::min(y0, y1), "%.2f")
        << "\" width=\"80\" height=\"" << fmt(std::abs(y1 - y0), "%.2f") << "\" fill=\"#4a7ab5\"/>\n";
    const double cx = x + 40.0;
    svg << "<line x1=\"" << fmt(cx, "%.2f") << "\" x2=\"" << fmt(cx, "%.2f") << "\" y1=\""
        << fmt(ypos(means[i] - errors[i]), "%.2f") << "\" y2=\"" << fmt(ypos(means[i] + errors[i]), "%.2f")
        << "\" stroke=\"#000\"/>\n";
    svg << "<text x=\"" << fmt(cx, "%.2f") << "\" y=\"" << fmt(bottom + 20.0, "%.2f")
        << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" << xml_escape(labels[i])
        << "</text>\n";
    svg << "<text x=\"" << fmt(cx, "%.2f") << "\" y=\"" << fmt(bottom + 36.0, "%.2f")
        << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">" << fmt(means[i], "%.4f")
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void emit_report(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "charts");
  write_json_file(dir / "report.json", report.to_json(), 2);

  std::ofstream csv(dir / "report.csv", std::ios::binary | std::ios::trunc);
  if (!csv) throw Error("cannot write " + (dir / "report.csv").string());
  csv << "seed,setting,eval_set,mean_reward,improvement\n";
  for (const auto& r : report.runs) {
    for (std::size_t k = 0; k < r.baseline_set_means.size(); ++k) {
      csv << r.seed << ",baseline," << k << ',' << fmt(r.baseline_set_means[k], "%.17g") << ",0\n";
    }
    for (const auto& s : r.settings) {
      for (std::size_t k = 0; k < s.set_means.size(); ++k) {
        csv << r.seed << ',' << to_string(s.setting) << ',' << k << ',' << fmt(s.set_means[k], "%.17g") << ','
            << fmt(s.improvements[k], "%.17g") << '\n';
      }
    }
  }
  if (!csv) throw Error("write failed for report.csv");

  std::vector<std::string> labels;
  std::vector<double> reward_mean, reward_sd, imp_mean, imp_sd;
  for (Setting s : report.config.settings) {
    labels.emplace_back(to_string(s));
    std::vector<double> m;
    std::vector<double> im;
    for (const auto& r : report.runs) {
      m.push_back(r.result(s).mean());
      im.push_back(r.result(s).mean_improvement());
    }
    reward_mean.push_back(mean_of(m));
    reward_sd.push_back(sd_of(m));
    imp_mean.push_back(mean_of(im));
    imp_sd.push_back(sd_of(im));
  }
  const std::string student(to_string(report.config.student));
  auto write_text = [&](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + p.string());
    out << text;
  };
  write_text(dir / "charts" / "eval_reward.svg",
             bar_chart_svg("Mean evaluation reward (" + student + " student)", labels, reward_mean, reward_sd));
  write_text(dir / "charts" / "reward_improvement.svg",
             bar_chart_svg("Reward improvement over the untuned student (" + student + ")", labels, imp_mean, imp_sd));
}

}  // namespace teach

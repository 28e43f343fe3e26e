#include "teach/serve.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "teach/random.hpp"

namespace teach {

namespace {

constexpr std::array<std::pair<Phase, std::string_view>, 6> kPhaseNames{{
    {Phase::pretest, "pretest"},
    {Phase::demo, "demo"},
    {Phase::practice, "practice"},
    {Phase::evaluation, "evaluation"},
    {Phase::survey, "survey"},
    {Phase::done, "done"},
}};

bool interactive(Phase p) { return p == Phase::pretest || p == Phase::practice || p == Phase::evaluation; }

// Splits `total` into `parts` near-equal shares, remainder to the earliest.
std::vector<int> split_budget(int total, int parts) {
  std::vector<int> out(static_cast<std::size_t>(parts), total / parts);
  for (int i = 0; i < total % parts; ++i) ++out[static_cast<std::size_t>(i)];
  return out;
}

Trajectory round_trajectory(const Round& r, const std::vector<StateVector>& states,
                            const std::vector<ActionVector>& actions, AgentTag agent, const std::string& id) {
  Trajectory t;
  t.id = id;
  t.scenario = r.scenario;
  t.agent = agent;
  for (std::size_t i = 0; i < actions.size(); ++i) t.steps.push_back({states[i], actions[i]});
  t.final_state = states.back();
  return t;
}

// Terminal reward of a round. Writing traces are infilled before scoring; a
// round with no input scores the untouched initial state (writing: empty trace).
double round_reward(const Environment& env, const Trajectory& t, double infill_threshold) {
  if (t.empty()) {
    if (env.schema() == Schema::writing2) return -1.0;
    const StateVector s0 = t.final_state;
    return env.display_reward(t.scenario, std::span<const StateVector>(&s0, 1));
  }
  if (env.schema() == Schema::writing2) return env.scenario_reward(infill(t, infill_threshold));
  return env.scenario_reward(t);
}

double infill_threshold_of(const Environment& env) {
  if (const auto* w = dynamic_cast<const WritingEnv*>(&env)) return w->params().infill_threshold;
  return 1.0;
}

// Running IoU against the gold trace as pen samples arrive; agrees exactly
// with writing_reward on the infilled trace.
class WritingScorer {
 public:
  WritingScorer(const WritingParams& p, std::span<const StateVector> gold)
      : params_(p), gold_(rasterize(gold, p.width, p.height, p.brush_radius)),
        ink_(static_cast<std::size_t>(p.width) * p.height, 0), gold_count_(gold_.count()) {}

  void add(const StateVector& point) {
    if (!last_) {
      ink(point);
    } else {
      const StateVector pair[2] = {*last_, point};
      const auto pts = infill_points(pair, params_.infill_threshold);
      for (std::size_t i = 1; i < pts.size(); ++i) ink(pts[i]);
    }
    last_ = point;
  }

  double reward() const {
    if (!last_) return -1.0;
    const std::size_t uni = gold_count_ + ink_count_ - inter_;
    const double iou = uni == 0 ? 1.0 : static_cast<double>(inter_) / static_cast<double>(uni);
    return iou == 1.0 ? 0.0 : -(1.0 - iou);
  }

 private:
  void ink(const StateVector& p) {
    const double r = params_.brush_radius;
    const double r2 = r * r;
    const int x0 = std::max(0, static_cast<int>(std::ceil(p[0] - r)));
    const int x1 = std::min(params_.width - 1, static_cast<int>(std::floor(p[0] + r)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(p[1] - r)));
    const int y1 = std::min(params_.height - 1, static_cast<int>(std::floor(p[1] + r)));
    for (int y = y0; y <= y1; ++y) {
      const double dy = y - p[1];
      for (int x = x0; x <= x1; ++x) {
        const double dx = x - p[0];
        if (dx * dx + dy * dy > r2) continue;
        const std::size_t k = static_cast<std::size_t>(y) * params_.width + x;
        if (ink_[k]) continue;
        ink_[k] = 1;
        ++ink_count_;
        if (gold_.bits[k]) ++inter_;
      }
    }
  }

  WritingParams params_;
  Mask gold_;
  std::vector<std::uint8_t> ink_;
  std::size_t gold_count_ = 0;
  std::size_t ink_count_ = 0;
  std::size_t inter_ = 0;
  std::optional<StateVector> last_;
};

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::string_view to_string(Phase p) {
  for (const auto& [k, name] : kPhaseNames) {
    if (k == p) return name;
  }
  return "unknown";
}

Phase phase_from_string(std::string_view name) {
  for (const auto& [k, n] : kPhaseNames) {
    if (n == name) return k;
  }
  throw ParseError("unknown phase '" + std::string(name) + "'");
}

std::string session_id_for(const std::string& username, std::uint64_t seed) {
  return hex16(derive_seed(seed, "session:" + username)).substr(0, 12);
}

// ---------------------------------------------------------------------------
// Assets
// ---------------------------------------------------------------------------

const Trajectory& EnvAssets::demo_for(const std::string& scenario_id) const {
  for (const auto& d : demos) {
    if (d.scenario.id == scenario_id) return d;
  }
  throw Error("no demonstration for scenario '" + scenario_id + "'");
}

EnvAssets load_assets(const std::shared_ptr<const Environment>& env, std::vector<Trajectory> demos,
                      std::shared_ptr<const SkillExtractor> extractor) {
  if (!env || !extractor) throw Error("assets need an environment and an extractor");
  if (demos.empty()) throw Error("assets need at least one demonstration");
  EnvAssets a;
  a.schema = env->schema();
  a.env = env;
  for (const auto& d : demos) {
    if (d.scenario.schema != a.schema) throw UnsupportedSchema("demonstration '" + d.id + "' has the wrong schema");
  }
  a.demos = std::move(demos);
  a.extractor = std::move(extractor);
  const SkillLibrary* lib = skill_library_of(*a.extractor);
  if (!lib) throw Error("serving needs an extractor with a skill library (builtin or imported)");
  a.library = *lib;
  a.labels = label_demonstrations(a.demos, *a.extractor);
  a.pool = select_diverse_scenarios(a.labels, std::min<std::size_t>(25, a.labels.size()));
  if (a.schema == Schema::writing2) {
    a.drills = DrillConfig{2, 3, 3, 2};
    a.practice_budget = 9000;
  } else {
    a.practice_budget = 720;
  }
  return a;
}

EnvAssets build_parking_assets(const ParkingParams& params, const ExpertParams& expert, std::size_t demo_count,
                               std::uint64_t seed) {
  auto env = std::make_shared<const ParkingEnv>(params);
  auto demos = generate_parking_demos(params, expert, demo_count, derive_seed(seed, "serve-demos"), "demo");
  auto ex = std::make_shared<const BuiltinExtractor>(
      fit_builtin(demos, parking_extractor_defaults(), derive_seed(seed, "serve-extractor")));
  return load_assets(env, std::move(demos), ex);
}

EnvAssets build_writing_assets(const WritingParams& params, std::size_t demo_count, std::uint64_t seed) {
  auto env = std::make_shared<const WritingEnv>(params);
  std::vector<Trajectory> demos;
  for (const auto& sc : env->sample_scenarios(demo_count, derive_seed(seed, "serve-demos"), "demo")) {
    demos.push_back(env->expert_demo(sc));
  }
  auto ex = std::make_shared<const BuiltinExtractor>(
      fit_builtin(demos, writing_extractor_defaults(), derive_seed(seed, "serve-extractor")));
  return load_assets(env, std::move(demos), ex);
}

// ---------------------------------------------------------------------------
// Round plans
// ---------------------------------------------------------------------------

Json round_to_json(const Round& r) {
  Json overlay = Json::array();
  for (const auto& s : r.overlay) overlay.push_back(s);
  Json j{{"index", r.index},
         {"phase", std::string(to_string(r.phase))},
         {"label", r.label},
         {"overlay", overlay},
         {"time_limit", r.time_limit},
         {"placeholder", r.placeholder},
         {"target_skill", r.target_skill}};
  j["scenario"] = r.placeholder ? Json(nullptr) : scenario_to_json(r.scenario);
  return j;
}

namespace {

Round round_from_json(const Json& j) {
  Round r;
  r.index = require_field(j, "index").get<int>();
  r.phase = phase_from_string(require_field(j, "phase").get<std::string>());
  r.label = require_field(j, "label").get<std::string>();
  for (const auto& s : require_field(j, "overlay")) r.overlay.push_back(s.get<StateVector>());
  r.time_limit = require_field(j, "time_limit").get<int>();
  r.placeholder = require_field(j, "placeholder").get<bool>();
  r.target_skill = require_field(j, "target_skill").get<int>();
  if (!r.placeholder) r.scenario = scenario_from_json(require_field(j, "scenario"));
  return r;
}

std::vector<StateVector> segment_states(const Trajectory& t, int begin, int end) {
  std::vector<StateVector> out;
  for (int i = begin; i <= end; ++i) out.push_back(t.state_at(static_cast<std::size_t>(i)));
  return out;
}

// Practice round tracing `overlay` from its first state. Parking keeps the
// source goal; writing scores against the overlay itself.
Round overlay_round(Phase phase, std::string label, const Scenario& source, std::string id,
                    std::vector<StateVector> overlay, int limit) {
  Round r;
  r.phase = phase;
  r.label = std::move(label);
  r.scenario = source;
  r.scenario.id = std::move(id);
  r.scenario.initial_state = overlay.front();
  r.scenario.horizon = limit;
  if (source.schema == Schema::writing2) {
    r.scenario.reward_spec = WritingTarget{source.writing_target().glyphs, overlay};
  }
  r.overlay = std::move(overlay);
  r.time_limit = limit;
  return r;
}

Round segment_round(const EnvAssets& a, const SegmentRef& ref, int skill, std::string label, int limit) {
  const Trajectory& src = find_trajectory(a.demos, ref.trajectory_id);
  Round r = overlay_round(Phase::practice, std::move(label), src.scenario,
                          src.scenario.id + ":" + std::to_string(ref.begin) + "-" + std::to_string(ref.end),
                          segment_states(src, ref.begin, ref.end), limit);
  r.target_skill = skill;
  return r;
}

Round drill_round(const Drill& d, int limit) {
  Round r = overlay_round(Phase::practice, "drill " + d.id, d.rendered.scenario, d.id, d.rendered.states(), limit);
  r.target_skill = d.target_skill;
  return r;
}

std::vector<Scenario> eval_scenarios(const EnvAssets& a, std::size_t count, std::uint64_t seed) {
  if (const auto* p = dynamic_cast<const ParkingEnv*>(a.env.get())) return p->sample_scenarios(count, seed, "eval");
  if (const auto* w = dynamic_cast<const WritingEnv*>(a.env.get())) return w->sample_scenarios(count, seed, "eval");
  throw UnsupportedSchema("no scenario sampler for this environment");
}

std::vector<Round> drill_rounds(const DrillSet& set, const std::vector<int>& limits) {
  const auto all = set.all();
  std::vector<Round> out;
  if (all.empty()) return out;
  // Too few drills for the planned rounds: cycle through them.
  for (std::size_t i = 0; i < limits.size(); ++i) out.push_back(drill_round(*all[i % all.size()], limits[i]));
  return out;
}

std::vector<Round> make_plan(const EnvAssets& a, Setting setting, const std::string& username, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "plan:" + username));
  std::vector<std::string> pool = a.pool;
  rng.shuffle(pool);
  const std::size_t needed = static_cast<std::size_t>(a.pretest_rounds + a.demo_rounds);
  if (pool.size() < needed) throw Error("scenario pool is too small for the pretest and demo rounds");

  std::vector<Round> plan;
  std::size_t next = 0;
  for (int i = 0; i < a.pretest_rounds; ++i, ++next) {
    Round r;
    r.phase = Phase::pretest;
    r.label = "pretest " + std::to_string(i + 1);
    r.scenario = a.demo_for(pool[next]).scenario;
    r.time_limit = r.scenario.horizon;
    plan.push_back(std::move(r));
  }
  for (int i = 0; i < a.demo_rounds; ++i, ++next) {
    const Trajectory& d = a.demo_for(pool[next]);
    Round r;
    r.phase = Phase::demo;
    r.label = "expert demo " + std::to_string(i + 1);
    r.scenario = d.scenario;
    r.overlay = d.states();
    r.playback = d.actions();
    r.time_limit = static_cast<int>(d.size());
    plan.push_back(std::move(r));
  }

  const int skill_rounds = a.skill_count * a.skill_sessions;
  const int drill_count = a.drills.n_target * a.drills.n_drills;
  switch (setting) {
    case Setting::skills: {
      std::map<int, long> freq;
      for (const auto& [id, seq] : a.labels) {
        for (int m : seq) ++freq[m];
      }
      std::vector<std::pair<long, int>> order;
      for (const auto& [m, f] : freq) {
        if (a.library.segments.contains(m) && !a.library.segments.at(m).empty()) order.emplace_back(-f, m);
      }
      std::sort(order.begin(), order.end());
      if (order.size() < static_cast<std::size_t>(a.skill_count)) throw Error("too few populated skills");
      const auto limits = split_budget(a.practice_budget, skill_rounds);
      int k = 0;
      for (int i = 0; i < a.skill_count; ++i) {
        const int m = order[static_cast<std::size_t>(i)].second;
        const auto& segs = a.library.segments.at(m);
        for (int j = 0; j < a.skill_sessions; ++j, ++k) {
          plan.push_back(segment_round(a, segs[rng.index(segs.size())], m,
                                       "skill " + std::to_string(m) + " session " + std::to_string(j + 1),
                                       limits[static_cast<std::size_t>(k)]));
        }
      }
      break;
    }
    case Setting::time_heuristic: {
      const auto limits = split_budget(a.practice_budget, skill_rounds);
      int k = 0;
      for (int i = 0; i < a.skill_count; ++i) {
        for (int j = 0; j < a.skill_sessions; ++j, ++k) {
          const Trajectory& d = a.demo_for(pool[rng.index(pool.size())]);
          const auto seg = time_heuristic_extract(d, a.time_heuristic_k);
          const auto part = static_cast<std::size_t>(i % a.time_heuristic_k);
          plan.push_back(segment_round(a, {d.id, seg.boundaries[part], seg.boundaries[part + 1]}, i,
                                       "interval " + std::to_string(i + 1) + " session " + std::to_string(j + 1),
                                       limits[static_cast<std::size_t>(k)]));
        }
      }
      break;
    }
    case Setting::full_trajectory: {
      const auto limits = split_budget(a.practice_budget, a.full_rounds);
      for (int i = 0; i < a.full_rounds; ++i) {
        const Trajectory& d = a.demo_for(pool[rng.index(pool.size())]);
        Round r = overlay_round(Phase::practice, "full trajectory " + std::to_string(i + 1), d.scenario,
                                d.scenario.id, d.states(), limits[static_cast<std::size_t>(i)]);
        r.scenario.reward_spec = d.scenario.reward_spec;
        plan.push_back(std::move(r));
      }
      break;
    }
    case Setting::drills: {
      std::vector<int> populated;
      for (const auto& [m, segs] : a.library.segments) {
        if (!segs.empty()) populated.push_back(m);
      }
      rng.shuffle(populated);
      populated.resize(std::min<std::size_t>(populated.size(), static_cast<std::size_t>(a.drills.n_target)));
      const DrillSet set = create_drills_for_targets(populated, a.drills, a.labels, a.demos, a.library, *a.env,
                                                     derive_seed(seed, "drills:" + username));
      auto rounds = drill_rounds(set, split_budget(a.practice_budget, drill_count));
      if (rounds.empty()) throw Error("no drills could be built for the sampled skills");
      for (auto& r : rounds) plan.push_back(std::move(r));
      break;
    }
    case Setting::ind_drills: {
      const auto limits = split_budget(a.practice_budget, drill_count);
      for (int i = 0; i < drill_count; ++i) {
        Round r;
        r.phase = Phase::practice;
        r.label = "individualized drill (pending pretest)";
        r.placeholder = true;
        r.time_limit = limits[static_cast<std::size_t>(i)];
        plan.push_back(std::move(r));
      }
      break;
    }
  }

  const auto evals = eval_scenarios(a, static_cast<std::size_t>(a.eval_rounds), derive_seed(seed, "eval:" + username));
  for (int i = 0; i < a.eval_rounds; ++i) {
    Round r;
    r.phase = Phase::evaluation;
    r.label = "evaluation " + std::to_string(i + 1);
    r.scenario = evals[static_cast<std::size_t>(i)];
    r.scenario.id = "eval-" + username + "-" + std::to_string(i + 1);
    r.time_limit = r.scenario.horizon;
    plan.push_back(std::move(r));
  }
  for (std::size_t i = 0; i < plan.size(); ++i) plan[i].index = static_cast<int>(i);
  return plan;
}

}  // namespace

// ---------------------------------------------------------------------------
// Sessions
// ---------------------------------------------------------------------------

struct SessionManager::Session {
  std::mutex mutex;
  SessionInfo info;
  std::shared_ptr<const EnvAssets> assets;
  std::vector<Round> plan;
  std::size_t current = 0;
  std::vector<StateVector> states;
  std::vector<ActionVector> actions;
  int steps_left = 0;
  std::size_t playback_pos = 0;
  std::optional<WritingScorer> scorer;
  std::map<std::string, Trajectory> pretest;
  std::vector<int> ratings;
  bool survey_done = false;
  long seq = 0;
  long tick = 0;
  bool replaying = false;
  std::filesystem::path path;
  std::ofstream log;

  const Environment& env() const { return *assets->env; }
  Round& round() { return plan[current]; }

  void write(Json rec) {
    rec["protocol"] = kProtocolVersion;
    rec["seq"] = seq++;
    rec["tick"] = tick;
    rec["session"] = info.id;
    if (replaying) return;
    log << rec.dump() << '\n';
    log.flush();
    if (!log) throw Error("failed to append to " + path.string());
  }

  double display(const StateVector& s) {
    const Round& r = round();
    if (scorer) return scorer->reward() + assets->display_offset;
    return env().display_reward(r.scenario, std::span<const StateVector>(&s, 1)) + assets->display_offset;
  }

  void begin_round() {
    Round& r = round();
    info.phase = r.phase;
    info.round = static_cast<int>(current);
    states.assign(1, r.scenario.initial_state);
    actions.clear();
    steps_left = r.time_limit;
    playback_pos = 0;
    scorer.reset();
    if (info.schema == Schema::writing2) {
      const auto* w = dynamic_cast<const WritingEnv*>(assets->env.get());
      scorer.emplace(w->params(), r.scenario.writing_target().gold);
    }
    write(Json{{"type", "round_start"}, {"round", r.index}, {"spec", round_to_json(r)}});
  }

  void resolve_ind_drills() {
    const EnvAssets& a = *assets;
    std::vector<std::string> ids;
    std::map<std::string, Trajectory> trajs;
    for (const auto& [id, t] : pretest) {
      ids.push_back(id);
      trajs[id] = t;
    }
    const ExpertiseVector e = assess_expertise(ids, a.labels, trajs, *a.extractor);
    const auto targets = lowest_expertise_skills(e, a.drills.n_target);
    const DrillSet set = create_drills_for_targets(targets, a.drills, a.labels, a.demos, a.library, *a.env,
                                                   derive_seed(info.seed, "ind-drills:" + info.username));
    std::vector<std::size_t> slots;
    std::vector<int> limits;
    for (std::size_t i = 0; i < plan.size(); ++i) {
      if (plan[i].placeholder) {
        slots.push_back(i);
        limits.push_back(plan[i].time_limit);
      }
    }
    auto rounds = drill_rounds(set, limits);
    if (rounds.empty()) {
      // No drill could be built: fall back to the same budget on pool trajectories.
      for (std::size_t k = 0; k < limits.size(); ++k) {
        const Trajectory& d = a.demo_for(a.pool[k % a.pool.size()]);
        rounds.push_back(overlay_round(Phase::practice, "full trajectory (no drill available)", d.scenario,
                                       d.scenario.id, d.states(), limits[k]));
        rounds.back().scenario.reward_spec = d.scenario.reward_spec;
      }
    }
    Json specs = Json::array();
    for (std::size_t k = 0; k < slots.size(); ++k) {
      rounds[k].index = static_cast<int>(slots[k]);
      plan[slots[k]] = rounds[k];
      specs.push_back(round_to_json(plan[slots[k]]));
    }
    write(Json{{"type", "plan_resolved"}, {"targets", targets}, {"expertise", expertise_to_json(e)},
               {"warnings", set.warnings}, {"rounds", specs}});
  }

  RoundEnd end_round(const std::string& reason) {
    Round& r = round();
    const AgentTag agent = r.phase == Phase::demo ? AgentTag::expert : AgentTag::student;
    const Trajectory t = round_trajectory(r, states, actions, agent, info.id + "-round" + std::to_string(r.index));
    RoundEnd end;
    end.round = r.index;
    end.reward = round_reward(env(), t, infill_threshold_of(env()));
    end.score = end.reward + assets->display_offset;
    end.reason = reason;
    if (r.phase == Phase::pretest) pretest[r.scenario.id] = t;
    write(Json{{"type", "round_end"}, {"round", r.index}, {"reward", end.reward}, {"score", end.score},
               {"reason", reason}, {"steps", actions.size()}});
    const bool leaving_pretest =
        r.phase == Phase::pretest && (current + 1 >= plan.size() || plan[current + 1].phase != Phase::pretest);
    ++current;
    if (leaving_pretest && info.setting == Setting::ind_drills) resolve_ind_drills();
    if (current >= plan.size()) {
      info.phase = Phase::survey;
      info.round = static_cast<int>(plan.size());
      write(Json{{"type", "phase"}, {"phase", "survey"}});
    } else {
      begin_round();
    }
    return end;
  }

  StepResult advance(const ActionVector& a, bool from_demo) {
    ++tick;
    const StateVector next = env().step(states.back(), a);
    states.push_back(next);
    actions.push_back(a);
    --steps_left;
    if (scorer) scorer->add(next);
    StepResult res;
    res.state = next;
    res.reward_display = display(next);
    res.steps_left = steps_left;
    write(Json{{"type", "step"}, {"round", round().index}, {"action", a}, {"state", next},
               {"reward_display", res.reward_display}, {"steps_left", steps_left}});
    std::string reason;
    if (from_demo && playback_pos >= round().playback.size()) reason = "demo_end";
    else if (info.schema == Schema::parking6 && env().solved(round().scenario, next)) reason = "solved";
    else if (steps_left <= 0) reason = "timer";
    if (!reason.empty()) {
      res.ended = end_round(reason);
      if (current < plan.size()) res.next = round();
    }
    res.phase = info.phase;
    return res;
  }
};

SessionManager::SessionManager(std::filesystem::path root, std::map<Schema, std::shared_ptr<const EnvAssets>> assets)
    : root_(std::move(root)), assets_(std::move(assets)) {
  std::filesystem::create_directories(root_ / "sessions");
}

SessionManager::~SessionManager() = default;

std::filesystem::path SessionManager::log_path(const std::string& id) const {
  return root_ / "sessions" / (id + ".jsonl");
}

SessionManager::Session& SessionManager::get(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw SessionError("unknown session '" + id + "'");
  return *it->second;
}

bool SessionManager::has_session(const std::string& id) const {
  std::lock_guard lock(mutex_);
  return sessions_.contains(id);
}

std::shared_ptr<SessionManager::Session> SessionManager::make_session(const std::string& username, Schema env,
                                                                      Setting setting, std::uint64_t seed) {
  if (username.empty()) throw SessionError("username must not be empty");
  auto it = assets_.find(env);
  if (it == assets_.end()) throw SessionError("environment '" + std::string(to_string(env)) + "' is not served");
  auto s = std::make_shared<Session>();
  s->assets = it->second;
  s->info.id = session_id_for(username, seed);
  s->info.username = username;
  s->info.schema = env;
  s->info.setting = setting;
  s->info.seed = seed;
  s->plan = make_plan(*s->assets, setting, username, seed);
  s->info.rounds = static_cast<int>(s->plan.size());
  s->path = log_path(s->info.id);
  return s;
}

SessionManager::Created SessionManager::create_session(const std::string& username, Schema env, Setting setting,
                                                       std::uint64_t seed) {
  {
    std::lock_guard lock(mutex_);
    for (const auto& [id, s] : sessions_) {
      if (s->info.username == username && !s->info.finalized) {
        throw SessionError("user '" + username + "' already has an active session");
      }
    }
  }
  auto s = make_session(username, env, setting, seed);
  if (std::filesystem::exists(s->path)) throw SessionError("a log for session '" + s->info.id + "' already exists");
  s->log.open(s->path, std::ios::binary | std::ios::app);
  if (!s->log) throw Error("cannot open " + s->path.string());
  s->write(Json{{"type", "create"},
                {"username", username},
                {"env", std::string(to_string(env))},
                {"setting", std::string(to_string(setting))},
                {"seed", seed},
                {"rounds", s->plan.size()}});
  s->begin_round();
  Created out{s->info.id, s->round()};
  std::lock_guard lock(mutex_);
  sessions_[s->info.id] = s;
  return out;
}

StepResult SessionManager::step(const std::string& id, const std::vector<double>& values) {
  Session& s = get(id);
  std::lock_guard lock(s.mutex);
  if (s.info.finalized || s.info.phase == Phase::done) throw SessionError("session is finished");
  if (!interactive(s.info.phase)) {
    throw SessionError("no interactive round during the " + std::string(to_string(s.info.phase)) + " phase");
  }
  std::string problem;
  if (values.size() != 2) problem = "action needs exactly 2 values";
  else if (!std::isfinite(values[0]) || !std::isfinite(values[1])) problem = "action values must be finite";
  else if (s.info.schema == Schema::parking6 && (std::abs(values[0]) > 1.0 || std::abs(values[1]) > 1.0)) {
    problem = "parking action values must lie in [-1, 1]";
  }
  if (!problem.empty()) {
    Json raw = Json::array();
    for (double v : values) raw.push_back(std::isfinite(v) ? Json(v) : Json(nullptr));
    s.write(Json{{"type", "reject"}, {"round", s.round().index}, {"values", raw}, {"reason", problem}});
    throw SessionError(problem);
  }
  return s.advance({values[0], values[1]}, false);
}

StepResult SessionManager::pen_up(const std::string& id) {
  Session& s = get(id);
  std::lock_guard lock(s.mutex);
  if (s.info.schema != Schema::writing2) throw SessionError("pen_up applies to writing sessions only");
  if (!interactive(s.info.phase)) {
    throw SessionError("no interactive round during the " + std::string(to_string(s.info.phase)) + " phase");
  }
  s.write(Json{{"type", "pen_up"}, {"round", s.round().index}});
  StepResult res;
  res.state = s.states.back();
  res.reward_display = s.display(s.states.back());
  res.steps_left = s.steps_left;
  res.ended = s.end_round("pen_up");
  if (s.current < s.plan.size()) res.next = s.round();
  res.phase = s.info.phase;
  return res;
}

StepResult SessionManager::advance_demo(const std::string& id) {
  Session& s = get(id);
  std::lock_guard lock(s.mutex);
  if (s.info.phase != Phase::demo) throw SessionError("not in a demo round");
  const ActionVector a = s.round().playback[s.playback_pos++];
  return s.advance(a, true);
}

void SessionManager::submit_survey(const std::string& id, const std::vector<int>& ratings, const std::string& text) {
  Session& s = get(id);
  std::lock_guard lock(s.mutex);
  if (s.info.phase != Phase::survey) throw SessionError("survey is only accepted after all rounds");
  if (s.survey_done) throw SessionError("survey already submitted");
  if (ratings.empty()) throw SessionError("survey needs at least one rating");
  for (int r : ratings) {
    if (r < 1 || r > 7) throw SessionError("rating " + std::to_string(r) + " is outside 1-7");
  }
  s.ratings = ratings;
  s.survey_done = true;
  s.write(Json{{"type", "survey"}, {"ratings", ratings}, {"text", text}});
}

std::filesystem::path SessionManager::finalize_session(const std::string& id) {
  Session& s = get(id);
  std::lock_guard lock(s.mutex);
  if (s.info.finalized) throw SessionError("session already finalized");
  if (s.info.phase != Phase::survey) throw SessionError("rounds are not complete");
  if (!s.survey_done) throw SessionError("survey not submitted");
  s.info.phase = Phase::done;
  s.write(Json{{"type", "finalize"}});
  s.info.finalized = true;
  s.log.close();
  return s.path;
}

SessionInfo SessionManager::info(const std::string& id) const {
  Session& s = get(id);
  std::lock_guard lock(s.mutex);
  return s.info;
}

Round SessionManager::current_round(const std::string& id) const {
  Session& s = get(id);
  std::lock_guard lock(s.mutex);
  if (s.current >= s.plan.size()) throw SessionError("all rounds are complete");
  return s.plan[s.current];
}

std::vector<Round> SessionManager::plan(const std::string& id) const {
  Session& s = get(id);
  std::lock_guard lock(s.mutex);
  return s.plan;
}

namespace {

std::vector<Json> read_records(const std::filesystem::path& path, std::uintmax_t* valid_bytes = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<Json> out;
  std::string line;
  std::uintmax_t good = 0;
  while (std::getline(in, line)) {
    const bool complete = !in.eof();
    if (!complete) break;  // a final line without newline was cut off mid-write
    try {
      out.push_back(Json::parse(line));
    } catch (const Json::parse_error&) {
      break;
    }
    good += line.size() + 1;
  }
  if (valid_bytes) *valid_bytes = good;
  return out;
}

}  // namespace

std::vector<std::string> SessionManager::recover() {
  std::vector<std::string> recovered;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(root_ / "sessions")) {
    if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    std::uintmax_t good = 0;
    const auto recs = read_records(path, &good);
    if (recs.empty() || recs.front().value("type", "") != "create") continue;
    if (recs.back().value("type", "") == "finalize") continue;
    const Json& c = recs.front();
    auto s = make_session(c.at("username").get<std::string>(), schema_from_string(c.at("env").get<std::string>()),
                          setting_from_string(c.at("setting").get<std::string>()), c.at("seed").get<std::uint64_t>());
    if (has_session(s->info.id)) continue;
    s->replaying = true;
    s->write(c);
    s->begin_round();
    try {
      for (std::size_t i = 1; i < recs.size(); ++i) {
        const Json& r = recs[i];
        const std::string type = r.at("type").get<std::string>();
        const long seq = r.at("seq").get<long>();
        const bool derived = type != "step" && type != "reject" && type != "pen_up" && type != "survey";
        // Records the replay re-derives were already written when their cause was replayed.
        if (derived ? seq >= s->seq : seq != s->seq) {
          throw Error("log diverges from replay at record " + std::to_string(i));
        }
        if (type == "step") {
          const auto a = r.at("action").get<ActionVector>();
          if (s->info.phase == Phase::demo) {
            s->playback_pos++;
            s->advance(a, true);
          } else {
            s->advance(a, false);
          }
        } else if (type == "reject") {
          s->write(r);
        } else if (type == "pen_up") {
          s->write(r);
          s->end_round("pen_up");
        } else if (type == "survey") {
          s->ratings = r.at("ratings").get<std::vector<int>>();
          s->survey_done = true;
          s->write(r);
        }
      }
      if (s->seq != recs.back().at("seq").get<long>() + 1) throw Error("log ends before its replay does");
    } catch (const std::exception& e) {
      throw Error("cannot recover session from " + path.string() + ": " + e.what());
    }
    s->replaying = false;
    std::filesystem::resize_file(path, good);
    s->log.open(path, std::ios::binary | std::ios::app);
    if (!s->log) throw Error("cannot reopen " + path.string());
    recovered.push_back(s->info.id);
    std::lock_guard lock(mutex_);
    sessions_[s->info.id] = s;
  }
  return recovered;
}

// ---------------------------------------------------------------------------
// Log replay and ingestion
// ---------------------------------------------------------------------------

Schema session_log_schema(const std::filesystem::path& path) {
  const auto recs = read_records(path);
  if (recs.empty() || recs.front().value("type", "") != "create") throw ParseError(path.string() + ": not a session log");
  return schema_from_string(recs.front().at("env").get<std::string>());
}

SessionRecord replay_session_log(const std::filesystem::path& path, const Environment& env) {
  const auto recs = read_records(path);
  if (recs.empty() || recs.front().value("type", "") != "create") throw ParseError(path.string() + ": not a session log");
  SessionRecord out;
  try {
    const Json& c = recs.front();
    out.session_id = c.at("session").get<std::string>();
    out.username = c.at("username").get<std::string>();
    out.schema = schema_from_string(c.at("env").get<std::string>());
    out.setting = setting_from_string(c.at("setting").get<std::string>());
    out.seed = c.at("seed").get<std::uint64_t>();
    if (out.schema != env.schema()) throw UnsupportedSchema(path.string() + ": log is for another environment");

    struct Open {
      Round round;
      std::vector<ActionVector> actions;
      std::vector<StateVector> logged;
    };
    std::optional<Open> open;
    long last_seq = -1;
    long last_tick = 0;
    for (const auto& r : recs) {
      if (r.at("protocol").get<int>() != kProtocolVersion) throw ParseError("unsupported protocol version");
      const long seq = r.at("seq").get<long>();
      const long tick = r.at("tick").get<long>();
      if (seq != last_seq + 1 || tick < last_tick) throw ParseError("records out of order at seq " + std::to_string(seq));
      last_seq = seq;
      last_tick = tick;
      const std::string type = r.at("type").get<std::string>();
      if (type == "round_start") {
        open = Open{round_from_json(r.at("spec")), {}, {}};
      } else if (type == "step") {
        if (!open) throw ParseError("step outside a round");
        open->actions.push_back(r.at("action").get<ActionVector>());
        open->logged.push_back(r.at("state").get<StateVector>());
      } else if (type == "round_end") {
        if (!open) throw ParseError("round end outside a round");
        LoggedRound lr;
        lr.round = open->round;
        lr.logged_reward = r.at("reward").get<double>();
        const AgentTag agent = lr.round.phase == Phase::demo ? AgentTag::expert : AgentTag::student;
        const std::string tid = out.session_id + "-round" + std::to_string(lr.round.index);
        if (open->actions.empty()) {
          lr.trajectory.id = tid;
          lr.trajectory.scenario = lr.round.scenario;
          lr.trajectory.agent = agent;
          lr.trajectory.final_state = lr.round.scenario.initial_state;
        } else {
          lr.trajectory = replay(env, lr.round.scenario, lr.round.scenario.initial_state, open->actions, agent, tid);
          for (std::size_t i = 0; i < open->logged.size(); ++i) {
            if (lr.trajectory.state_at(i + 1) != open->logged[i]) lr.states_match = false;
          }
        }
        lr.trajectory.reward = round_reward(env, lr.trajectory, infill_threshold_of(env));
        out.rounds.push_back(std::move(lr));
        open.reset();
      } else if (type == "plan_resolved") {
        out.targets = r.at("targets").get<std::vector<int>>();
      } else if (type == "survey") {
        out.ratings = r.at("ratings").get<std::vector<int>>();
        out.survey_text = r.at("text").get<std::string>();
      } else if (type == "finalize") {
        out.finalized = true;
      }
    }
  } catch (const Json::exception& e) {
    throw ParseError(path.string() + ": malformed record: " + e.what());
  }
  return out;
}

HumanResult ingest_session(const SessionRecord& record, const Environment& env) {
  HumanResult h;
  h.username = record.username;
  h.setting = record.setting;
  h.schema = record.schema;
  h.ratings = record.ratings;
  for (const auto& r : record.rounds) {
    const ValidationReport v = r.trajectory.empty() ? ValidationReport{} : validate_trajectory(r.trajectory, env);
    if (!v.ok()) throw Error("round " + std::to_string(r.round.index) + " of " + record.session_id + " fails validation");
    if (r.round.phase == Phase::pretest) h.pretest.push_back(r.trajectory.reward);
    if (r.round.phase == Phase::evaluation) h.evaluation.push_back(r.trajectory.reward);
  }
  h.improvement = reward_improvement(h.pretest, h.evaluation);
  return h;
}

Json human_report_json(const std::vector<HumanResult>& results) {
  Json users = Json::array();
  std::map<std::pair<std::string, std::string>, std::vector<const HumanResult*>> groups;
  for (const auto& h : results) {
    users.push_back(Json{{"username", h.username},
                         {"env", std::string(to_string(h.schema))},
                         {"setting", std::string(to_string(h.setting))},
                         {"pretest", h.pretest},
                         {"evaluation", h.evaluation},
                         {"improvement", h.improvement},
                         {"ratings", h.ratings}});
    groups[{std::string(to_string(h.schema)), std::string(to_string(h.setting))}].push_back(&h);
  }
  Json summary = Json::array();
  for (const auto& [key, members] : groups) {
    double imp = 0.0;
    double rating = 0.0;
    std::size_t rated = 0;
    for (const auto* h : members) {
      imp += h->improvement;
      for (int r : h->ratings) {
        rating += r;
        ++rated;
      }
    }
    summary.push_back(Json{{"env", key.first},
                           {"setting", key.second},
                           {"users", members.size()},
                           {"mean_improvement", imp / static_cast<double>(members.size())},
                           {"mean_rating", rated ? Json(rating / static_cast<double>(rated)) : Json(nullptr)}});
  }
  return Json{{"users", users}, {"summary", summary}};
}

}  // namespace teach

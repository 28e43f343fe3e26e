#include "teach/curriculum.hpp"

#include <algorithm>
#include <set>

#include "teach/random.hpp"

namespace teach {

LabelMap label_demonstrations(std::span<const Trajectory> demos, const SkillExtractor& extractor) {
  LabelMap out;
  for (const auto& d : demos) {
    if (out.contains(d.scenario.id)) throw Error("two demonstrations for scenario '" + d.scenario.id + "'");
    out[d.scenario.id] = extractor.extract(d).skills;
  }
  return out;
}

std::vector<std::string> select_diverse_scenarios(const LabelMap& labels, std::size_t count) {
  if (labels.empty()) throw Error("scenario selection needs at least one labeled scenario");
  if (count > labels.size()) {
    throw Error("cannot select " + std::to_string(count) + " scenarios from " + std::to_string(labels.size()));
  }
  std::set<int> covered;
  std::set<std::string> chosen;
  std::vector<std::string> order;
  while (order.size() < count) {
    const std::string* best = nullptr;
    std::size_t best_cover = 0;
    // LabelMap iterates in id order, so the first maximum is the lowest id.
    for (const auto& [id, skills] : labels) {
      if (chosen.contains(id)) continue;
      std::set<int> u = covered;
      u.insert(skills.begin(), skills.end());
      if (best == nullptr || u.size() > best_cover) {
        best = &id;
        best_cover = u.size();
      }
    }
    const auto& skills = labels.at(*best);
    covered.insert(skills.begin(), skills.end());
    chosen.insert(*best);
    order.push_back(*best);
  }
  return order;
}

double ExpertiseVector::at(int skill) const {
  auto it = scores.find(skill);
  return it == scores.end() ? 0.0 : it->second;
}

ExpertiseVector assess_expertise(std::span<const std::string> scenarios, const LabelMap& expert_labels,
                                 const LabelMap& student_labels, const std::map<std::string, double>& rewards,
                                 int latent_dim) {
  ExpertiseVector e;
  for (int m = 0; m < latent_dim; ++m) e.scores[m] = 0.0;
  for (const auto& id : scenarios) {
    auto ex = expert_labels.find(id);
    if (ex == expert_labels.end()) throw Error("no expert labels for scenario '" + id + "'");
    auto st = student_labels.find(id);
    if (st == student_labels.end()) throw Error("missing student trajectory for scenario '" + id + "'");
    auto rw = rewards.find(id);
    if (rw == rewards.end()) throw Error("missing student reward for scenario '" + id + "'");
    if (rw->second > 0.0) throw Error("reward for scenario '" + id + "' is positive");
    const std::set<int> student(st->second.begin(), st->second.end());
    for (std::size_t j = 0; j < ex->second.size(); ++j) {
      const int m = ex->second[j];
      if (student.contains(m)) continue;
      e.scores[m] += rw->second / static_cast<double>(j + 1);
    }
    e.scenarios.push_back(id);
  }
  return e;
}

ExpertiseVector assess_expertise(std::span<const std::string> scenarios, const LabelMap& expert_labels,
                                 const std::map<std::string, Trajectory>& student_trajs,
                                 const SkillExtractor& extractor) {
  LabelMap student_labels;
  std::map<std::string, double> rewards;
  for (const auto& id : scenarios) {
    auto it = student_trajs.find(id);
    if (it == student_trajs.end()) throw Error("missing student trajectory for scenario '" + id + "'");
    student_labels[id] = extractor.extract(it->second).skills;
    rewards[id] = it->second.reward;
  }
  return assess_expertise(scenarios, expert_labels, student_labels, rewards, extractor.latent_dim());
}

Json expertise_to_json(const ExpertiseVector& e) {
  Json out = Json::array();
  for (const auto& [m, v] : e.scores) out.push_back(Json{{"skill_id", m}, {"E", v}});
  return out;
}

ExpertiseVector expertise_from_json(const Json& j) {
  if (!j.is_array()) throw ParseError("expertise must be a list of {skill_id, E} records");
  ExpertiseVector e;
  for (const auto& r : j) {
    const double v = require_field(r, "E").get<double>();
    if (v > 0.0) throw ParseError("expertise values must be nonpositive");
    e.scores[require_field(r, "skill_id").get<int>()] = v;
  }
  return e;
}

long NGramTable::total() const {
  long t = 0;
  for (const auto& [k, c] : counts) t += c;
  return t;
}

NGramTable ngram_frequencies(const LabelMap& labels, int n) {
  if (n < 1) throw Error("n-gram size must be positive");
  NGramTable table;
  table.n = n;
  for (const auto& [id, seq] : labels) {
    for (std::size_t i = 0; i + n <= seq.size(); ++i) {
      ++table.counts[std::vector<int>(seq.begin() + i, seq.begin() + i + n)];
    }
  }
  return table;
}

void DrillConfig::check() const {
  if (n < 1 || n_rep < 1 || n_target < 1 || n_drills < 1) throw Error("drill parameters must be positive");
}

DrillConfig parking_drill_defaults() { return DrillConfig{3, 1, 7, 1}; }
DrillConfig writing_drill_defaults() { return DrillConfig{2, 3, 8, 1}; }

std::size_t Drill::segment_length_sum() const {
  std::size_t s = 0;
  for (const auto& p : pieces) s += static_cast<std::size_t>(p.segment.length());
  return s;
}

std::vector<const Drill*> DrillSet::all() const {
  std::vector<const Drill*> out;
  for (int m : targets) {
    auto it = drills.find(m);
    if (it == drills.end()) continue;
    for (const auto& d : it->second) out.push_back(&d);
  }
  return out;
}

std::vector<int> lowest_expertise_skills(const ExpertiseVector& e, int count) {
  std::vector<std::pair<double, int>> order;
  for (const auto& [m, v] : e.scores) order.emplace_back(v, m);
  std::sort(order.begin(), order.end());
  std::vector<int> out;
  for (int i = 0; i < count && i < static_cast<int>(order.size()); ++i) out.push_back(order[i].second);
  return out;
}

std::vector<std::vector<int>> top_ngrams_containing(const NGramTable& table, int target, int count) {
  std::vector<std::pair<long, const std::vector<int>*>> cands;
  for (const auto& [gram, f] : table.counts) {
    if (std::find(gram.begin(), gram.end(), target) != gram.end()) cands.emplace_back(f, &gram);
  }
  std::stable_sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::vector<int>> out;
  for (int i = 0; i < count && i < static_cast<int>(cands.size()); ++i) out.push_back(*cands[i].second);
  return out;
}

namespace {

Drill build_drill(std::string id, int target, const std::vector<int>& gram, int reps, std::span<const Trajectory> demos,
                  const SkillLibrary& library, const Environment& env, Rng& rng) {
  Drill d;
  d.id = std::move(id);
  d.target_skill = target;
  d.ngram = gram;
  d.repetitions = reps;
  std::map<int, SegmentRef> chosen;
  for (int m : gram) {
    if (chosen.contains(m)) continue;
    auto it = library.segments.find(m);
    if (it == library.segments.end() || it->second.empty()) {
      throw Error("skill " + std::to_string(m) + " has no library segment");
    }
    chosen[m] = it->second[rng.index(it->second.size())];
  }
  for (int m : gram) d.pieces.push_back({m, chosen.at(m)});
  std::vector<ActionVector> one;
  for (const auto& p : d.pieces) {
    const Trajectory& src = find_trajectory(demos, p.segment.trajectory_id);
    for (int t = p.segment.begin; t < p.segment.end; ++t) one.push_back(src.steps[t].action);
  }
  for (int r = 0; r < reps; ++r) d.actions.insert(d.actions.end(), one.begin(), one.end());
  const Trajectory& first = find_trajectory(demos, d.pieces.front().segment.trajectory_id);
  d.initial_state = first.state_at(static_cast<std::size_t>(d.pieces.front().segment.begin));
  Scenario sc = first.scenario;
  sc.horizon = std::max(sc.horizon, static_cast<int>(d.actions.size()));
  d.rendered = replay(env, sc, d.initial_state, d.actions, AgentTag::synthetic, d.id);
  return d;
}

}  // namespace

DrillSet create_drills_for_targets(std::span<const int> targets, const DrillConfig& cfg,
                                   const LabelMap& expert_labels, std::span<const Trajectory> demos,
                                   const SkillLibrary& library, const Environment& env, std::uint64_t seed) {
  cfg.check();
  const NGramTable table = ngram_frequencies(expert_labels, cfg.n);
  DrillSet set;
  set.targets.assign(targets.begin(), targets.end());
  for (std::size_t ti = 0; ti < targets.size(); ++ti) {
    const int m = targets[ti];
    const auto grams = top_ngrams_containing(table, m, cfg.n_drills);
    if (grams.empty()) {
      set.warnings.push_back("no " + std::to_string(cfg.n) + "-gram contains skill " + std::to_string(m) +
                             "; skipping it");
      continue;
    }
    for (std::size_t k = 0; k < grams.size(); ++k) {
      const std::string id = "drill-" + std::to_string(ti) + "-skill" + std::to_string(m) + "-" + std::to_string(k);
      Rng rng(derive_seed(seed, id));
      try {
        set.drills[m].push_back(build_drill(id, m, grams[k], cfg.n_rep, demos, library, env, rng));
      } catch (const Error& e) {
        set.warnings.push_back(id + ": " + e.what() + "; skipping it");
      }
    }
  }
  return set;
}

DrillSet create_drills(const ExpertiseVector& expertise, const DrillConfig& cfg, const LabelMap& expert_labels,
                       std::span<const Trajectory> demos, const SkillLibrary& library, const Environment& env,
                       std::uint64_t seed) {
  cfg.check();
  if (cfg.n_target > static_cast<int>(expertise.scores.size())) {
    throw Error("N_target exceeds the number of skills");
  }
  const auto targets = lowest_expertise_skills(expertise, cfg.n_target);
  return create_drills_for_targets(targets, cfg, expert_labels, demos, library, env, seed);
}

Json drill_to_json(const Drill& d) {
  Json actions = Json::array();
  for (const auto& a : d.actions) actions.push_back(a);
  Json segments = Json::array();
  for (const auto& p : d.pieces) {
    segments.push_back(Json{{"skill", p.skill}, {"trajectory_id", p.segment.trajectory_id},
                            {"begin", p.segment.begin}, {"end", p.segment.end}});
  }
  return Json{{"id", d.id},
              {"target_skill", d.target_skill},
              {"ngram", d.ngram},
              {"repetitions", d.repetitions},
              {"segments", segments},
              {"actions", actions},
              {"initial_state", d.initial_state},
              {"states", d.rendered.states()},
              {"scenario_id", d.rendered.scenario.id}};
}

std::vector<std::filesystem::path> write_drills(const DrillSet& set, const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  for (const Drill* d : set.all()) {
    out.push_back(dir / (d->id + ".json"));
    write_json_file(out.back(), drill_to_json(*d));
  }
  return out;
}

}  // namespace teach

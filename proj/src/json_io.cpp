#include "teach/json_io.hpp"

#include <fstream>
#include <sstream>

namespace teach {

const Json& require_field(const Json& j, const char* name) {
  if (!j.is_object()) throw ParseError("expected an object holding field '" + std::string(name) + "'");
  auto it = j.find(name);
  if (it == j.end()) throw ParseError("missing field '" + std::string(name) + "'");
  return *it;
}

namespace {

StateVector state_from_json(const Json& j, std::size_t dim, const char* what) {
  if (!j.is_array() || j.size() != dim) {
    throw ParseError(std::string(what) + " must be an array of " + std::to_string(dim) + " numbers");
  }
  StateVector s;
  s.reserve(dim);
  for (const auto& v : j) {
    if (!v.is_number()) throw ParseError(std::string(what) + " holds a non-number");
    s.push_back(v.get<double>());
  }
  return s;
}

}  // namespace

Json scenario_to_json(const Scenario& scenario) {
  Json spec;
  if (const auto* g = std::get_if<ParkingGoal>(&scenario.reward_spec)) {
    spec["goal"] = g->pose;
  } else {
    const auto& w = std::get<WritingTarget>(scenario.reward_spec);
    spec["glyphs"] = w.glyphs;
    spec["gold"] = w.gold;
  }
  return Json{{"id", scenario.id},
              {"schema", std::string(to_string(scenario.schema))},
              {"initial_state", scenario.initial_state},
              {"reward_spec", spec},
              {"horizon", scenario.horizon}};
}

Scenario scenario_from_json(const Json& j) {
  Scenario s;
  s.id = require_field(j, "id").get<std::string>();
  s.schema = schema_from_string(require_field(j, "schema").get<std::string>());
  const std::size_t dim = state_dim(s.schema);
  s.initial_state = state_from_json(require_field(j, "initial_state"), dim, "initial_state");
  s.horizon = require_field(j, "horizon").get<int>();
  if (s.horizon <= 0) throw ParseError("horizon must be positive");
  const Json& spec = require_field(j, "reward_spec");
  if (s.schema == Schema::parking6) {
    s.reward_spec = ParkingGoal{state_from_json(require_field(spec, "goal"), dim, "goal")};
  } else {
    WritingTarget w;
    w.glyphs = require_field(spec, "glyphs").get<std::vector<std::string>>();
    for (const auto& p : require_field(spec, "gold")) w.gold.push_back(state_from_json(p, dim, "gold point"));
    if (w.gold.empty()) throw ParseError("gold trace must be nonempty");
    s.reward_spec = std::move(w);
  }
  return s;
}

Json trajectory_to_json(const Trajectory& traj) {
  Json steps = Json::array();
  for (const auto& st : traj.steps) steps.push_back(Json::array({st.state, st.action}));
  return Json{{"id", traj.id},
              {"scenario", scenario_to_json(traj.scenario)},
              {"agent_tag", std::string(to_string(traj.agent))},
              {"steps", std::move(steps)},
              {"final_state", traj.final_state},
              {"reward", traj.reward}};
}

Trajectory trajectory_from_json(const Json& j) {
  Trajectory t;
  t.scenario = scenario_from_json(require_field(j, "scenario"));
  t.id = j.contains("id") ? j.at("id").get<std::string>() : t.scenario.id;
  t.agent = agent_tag_from_string(require_field(j, "agent_tag").get<std::string>());
  const std::size_t dim = state_dim(t.scenario.schema);
  const Json& steps = require_field(j, "steps");
  if (!steps.is_array() || steps.empty()) throw ParseError("steps must be a nonempty array");
  for (const auto& st : steps) {
    if (!st.is_array() || st.size() != 2) throw ParseError("each step must be a [state, action] pair");
    Step step{state_from_json(st[0], dim, "step state"), {}};
    const StateVector a = state_from_json(st[1], 2, "step action");
    step.action = {a[0], a[1]};
    t.steps.push_back(std::move(step));
  }
  t.final_state = state_from_json(require_field(j, "final_state"), dim, "final_state");
  t.reward = require_field(j, "reward").get<double>();
  return t;
}

Json segmentation_to_json(const std::string& trajectory_id, const SkillSegmentation& seg) {
  return Json{{"trajectory_id", trajectory_id}, {"skills", seg.skills}, {"boundaries", seg.boundaries}};
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j, int indent) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(indent) << '\n';
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace teach

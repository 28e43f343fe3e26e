#include "teach/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace teach {

std::string_view to_string(Schema schema) {
  switch (schema) {
    case Schema::parking6:
      return "parking6";
    case Schema::writing2:
      return "writing2";
  }
  return "unknown";
}

Schema schema_from_string(std::string_view name) {
  if (name == "parking6") return Schema::parking6;
  if (name == "writing2") return Schema::writing2;
  throw UnsupportedSchema("unknown schema '" + std::string(name) + "'");
}

std::size_t state_dim(Schema schema) { return schema == Schema::parking6 ? 6 : 2; }

const ParkingGoal& Scenario::parking_goal() const {
  if (const auto* g = std::get_if<ParkingGoal>(&reward_spec)) return *g;
  throw UnsupportedSchema("scenario " + id + " has no parking goal");
}

const WritingTarget& Scenario::writing_target() const {
  if (const auto* g = std::get_if<WritingTarget>(&reward_spec)) return *g;
  throw UnsupportedSchema("scenario " + id + " has no writing target");
}

std::string_view to_string(AgentTag tag) {
  switch (tag) {
    case AgentTag::expert:
      return "expert";
    case AgentTag::student:
      return "student";
    case AgentTag::synthetic:
      return "synthetic";
  }
  return "unknown";
}

AgentTag agent_tag_from_string(std::string_view name) {
  if (name == "expert") return AgentTag::expert;
  if (name == "student") return AgentTag::student;
  if (name == "synthetic") return AgentTag::synthetic;
  throw ParseError("unknown agent_tag '" + std::string(name) + "'");
}

std::vector<StateVector> Trajectory::states() const {
  std::vector<StateVector> out;
  out.reserve(steps.size() + 1);
  for (const auto& s : steps) out.push_back(s.state);
  out.push_back(final_state);
  return out;
}

std::vector<ActionVector> Trajectory::actions() const {
  std::vector<ActionVector> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.action);
  return out;
}

const StateVector& Trajectory::state_at(std::size_t t) const {
  return t < steps.size() ? steps[t].state : final_state;
}

void SkillSegmentation::check(std::size_t length, int latent_dim) const {
  if (boundaries.size() < 2 || skills.size() + 1 != boundaries.size()) {
    throw Error("segmentation needs |skills| = |boundaries| - 1 >= 1");
  }
  if (boundaries.front() != 0) throw Error("segmentation boundaries must start at 0");
  if (boundaries.back() != static_cast<int>(length)) {
    throw Error("segmentation boundaries must end at trajectory length " + std::to_string(length));
  }
  for (std::size_t j = 1; j < boundaries.size(); ++j) {
    if (boundaries[j] <= boundaries[j - 1]) throw Error("segmentation boundaries must be strictly increasing");
  }
  for (int m : skills) {
    if (m < 0 || m >= latent_dim) throw Error("skill id " + std::to_string(m) + " outside latent space");
  }
}

void ExtractorConfig::check(int horizon) const {
  if (h_min < 1 || h_min > h_max || h_max >= horizon) {
    throw Error("extractor config needs 1 <= h_min <= h_max < T");
  }
  if (latent_dim < segments_per_demo) throw Error("extractor config needs latent_dim >= segments per demo");
}

std::string_view to_string(Violation::Kind kind) {
  switch (kind) {
    case Violation::Kind::schema_mismatch:
      return "schema mismatch";
    case Violation::Kind::invalid_state:
      return "invalid state";
    case Violation::Kind::invalid_action:
      return "invalid action";
    case Violation::Kind::transition_mismatch:
      return "transition mismatch";
    case Violation::Kind::boundary_escape:
      return "boundary escape";
    case Violation::Kind::horizon_overflow:
      return "horizon overflow";
  }
  return "unknown";
}

const Violation* ValidationReport::first(Violation::Kind kind) const {
  for (const auto& v : violations) {
    if (v.kind == kind) return &v;
  }
  return nullptr;
}

namespace {

double max_abs_diff(const StateVector& a, const StateVector& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

bool finite(const StateVector& s) {
  return std::all_of(s.begin(), s.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace

ValidationReport validate_trajectory(const Trajectory& traj, const Environment& env) {
  if (traj.empty()) throw Error("trajectory " + traj.id + " is empty");
  ValidationReport report;
  auto add = [&](Violation::Kind kind, std::size_t index, std::string msg) {
    report.violations.push_back({kind, index, std::move(msg)});
  };
  const Schema schema = env.schema();
  if (traj.scenario.schema != schema) {
    add(Violation::Kind::schema_mismatch, 0, "trajectory schema differs from environment");
    return report;
  }
  if (traj.scenario.horizon > 0 && traj.size() > static_cast<std::size_t>(traj.scenario.horizon)) {
    add(Violation::Kind::horizon_overflow, traj.size(),
        "horizon overflow: " + std::to_string(traj.size()) + " > " + std::to_string(traj.scenario.horizon));
  }
  const std::size_t dim = state_dim(schema);
  const std::size_t n = traj.size();
  for (std::size_t t = 0; t <= n; ++t) {
    const StateVector& s = traj.state_at(t);
    if (s.size() != dim || !finite(s)) {
      add(Violation::Kind::invalid_state, t, "state has wrong dimension or non-finite value");
      return report;
    }
    if (!env.in_bounds(s)) add(Violation::Kind::boundary_escape, t, "state leaves environment bounds");
  }
  for (std::size_t t = 0; t < n; ++t) {
    const ActionVector& a = traj.steps[t].action;
    if (!env.action_valid(a)) {
      add(Violation::Kind::invalid_action, t, "action outside admissible range");
      continue;
    }
    const StateVector next = env.step(traj.steps[t].state, a);
    const double err = max_abs_diff(next, traj.state_at(t + 1));
    if (!(err <= kTransitionTolerance)) {
      std::ostringstream msg;
      msg << "transition mismatch at step " << t << " (max error " << err << ")";
      add(Violation::Kind::transition_mismatch, t, msg.str());
    }
  }
  return report;
}

Trajectory replay(const Environment& env, const Scenario& scenario, const StateVector& initial,
                  std::span<const ActionVector> actions, AgentTag agent, std::string id) {
  Trajectory traj;
  traj.id = std::move(id);
  traj.scenario = scenario;
  traj.agent = agent;
  traj.steps.reserve(actions.size());
  StateVector s = initial;
  for (const auto& a : actions) {
    StateVector next = env.step(s, a);
    traj.steps.push_back({std::move(s), a});
    s = std::move(next);
  }
  traj.final_state = std::move(s);
  if (!traj.empty()) traj.reward = env.scenario_reward(traj);
  return traj;
}

double chebyshev(const StateVector& a, const StateVector& b) { return max_abs_diff(a, b); }

std::vector<StateVector> infill_points(std::span<const StateVector> points, double threshold_px) {
  if (!(threshold_px > 0.0)) throw Error("infill threshold must be positive");
  // Gaps within one part in 1e9 of the threshold count as satisfied, so that
  // rounding in the interpolation cannot trigger a second pass.
  const double limit = threshold_px * (1.0 + 1e-9);
  std::vector<StateVector> out;
  if (points.empty()) return out;
  out.push_back(points.front());
  for (std::size_t i = 1; i < points.size(); ++i) {
    const StateVector& a = points[i - 1];
    const StateVector& b = points[i];
    const double d = chebyshev(a, b);
    if (d > limit) {
      const auto pieces = static_cast<std::size_t>(std::ceil(d / threshold_px - 1e-9));
      for (std::size_t k = 1; k < pieces; ++k) {
        const double t = static_cast<double>(k) / static_cast<double>(pieces);
        StateVector p(a.size());
        for (std::size_t j = 0; j < a.size(); ++j) p[j] = a[j] + (b[j] - a[j]) * t;
        out.push_back(std::move(p));
      }
    }
    out.push_back(b);
  }
  return out;
}

Trajectory infill(const Trajectory& traj, double threshold_px) {
  if (traj.scenario.schema != Schema::writing2) {
    throw UnsupportedSchema("infill supports writing2 trajectories only, got " +
                            std::string(to_string(traj.scenario.schema)));
  }
  const auto pts = infill_points(traj.states(), threshold_px);
  Trajectory out;
  out.id = traj.id;
  out.scenario = traj.scenario;
  out.agent = traj.agent;
  out.reward = traj.reward;
  out.steps.reserve(pts.size() - 1);
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    out.steps.push_back({pts[i], ActionVector{pts[i + 1][0] - pts[i][0], pts[i + 1][1] - pts[i][1]}});
  }
  out.final_state = pts.back();
  return out;
}

}  // namespace teach

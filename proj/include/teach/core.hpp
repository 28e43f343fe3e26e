#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace teach {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class UnsupportedSchema : public Error {
 public:
  using Error::Error;
};

enum class Schema { parking6, writing2 };

std::string_view to_string(Schema schema);
Schema schema_from_string(std::string_view name);
std::size_t state_dim(Schema schema);

// parking6: (x, y, vx, vy, cos_h, sin_h); writing2: (x, y) in pixels.
using StateVector = std::vector<double>;
// parking: (steering, acceleration) in [-1, 1]; writing: pen displacement (dx, dy).
using ActionVector = std::array<double, 2>;

struct ParkingGoal {
  StateVector pose;
};

struct WritingTarget {
  std::vector<std::string> glyphs;
  std::vector<StateVector> gold;
};

using RewardSpec = std::variant<ParkingGoal, WritingTarget>;

struct Scenario {
  std::string id;
  Schema schema = Schema::parking6;
  StateVector initial_state;
  RewardSpec reward_spec;
  int horizon = 0;

  const ParkingGoal& parking_goal() const;
  const WritingTarget& writing_target() const;
};

enum class AgentTag { expert, student, synthetic };

std::string_view to_string(AgentTag tag);
AgentTag agent_tag_from_string(std::string_view name);

struct Step {
  StateVector state;
  ActionVector action{};
};

// steps[t] holds (s_t, a_t); final_state is s_n = f(s_{n-1}, a_{n-1}).
// reward is the terminal scenario reward, stored before any display offset.
struct Trajectory {
  std::string id;
  Scenario scenario;
  AgentTag agent = AgentTag::expert;
  std::vector<Step> steps;
  StateVector final_state;
  double reward = 0.0;

  std::size_t size() const { return steps.size(); }
  bool empty() const { return steps.empty(); }
  // s_0 ... s_n (size() + 1 entries).
  std::vector<StateVector> states() const;
  std::vector<ActionVector> actions() const;
  // State at index t in [0, size()], with size() mapping to final_state.
  const StateVector& state_at(std::size_t t) const;
};

// Partition of a trajectory into skill-labeled segments [b_{j-1}, b_j).
struct SkillSegmentation {
  std::vector<int> skills;
  std::vector<int> boundaries;

  std::size_t num_segments() const { return skills.size(); }
  int segment_length(std::size_t j) const { return boundaries[j + 1] - boundaries[j]; }
  // Throws Error when |M| != |B|-1, boundaries are not strictly increasing
  // from 0 to length, or a skill id falls outside [0, latent_dim).
  void check(std::size_t length, int latent_dim) const;
  bool operator==(const SkillSegmentation&) const = default;
};

struct ExtractorConfig {
  int latent_dim = 16;
  int segments_per_demo = 4;
  int segment_length = 10;
  int h_min = 4;
  int h_max = 40;

  void check(int horizon) const;
};

// Deterministic transition and reward model shared by validation, rollout and replay.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual Schema schema() const = 0;
  virtual StateVector step(const StateVector& state, const ActionVector& action) const = 0;
  // Terminal reward r_xi(tau) <= 0 of a trajectory for its scenario.
  virtual double scenario_reward(const Trajectory& traj) const = 0;
  // Reward of a partial rollout ending in `state`, for live display.
  virtual double display_reward(const Scenario& scenario, std::span<const StateVector> states) const = 0;
  virtual bool in_bounds(const StateVector& state) const = 0;
  virtual bool action_valid(const ActionVector& action) const = 0;
  virtual ActionVector clamp_action(const ActionVector& action) const { return action; }
  // True when the rollout may stop early (parking success).
  virtual bool solved(const Scenario& scenario, const StateVector& state) const = 0;
};

struct Violation {
  enum class Kind { schema_mismatch, invalid_state, invalid_action, transition_mismatch, boundary_escape, horizon_overflow };
  Kind kind;
  std::size_t index;
  std::string message;
};

std::string_view to_string(Violation::Kind kind);

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  // First violation of the given kind, or nullptr.
  const Violation* first(Violation::Kind kind) const;
};

inline constexpr double kTransitionTolerance = 1e-6;

// Replays every stored transition through `env`. Throws Error on an empty trajectory.
ValidationReport validate_trajectory(const Trajectory& traj, const Environment& env);

// Builds a trajectory by stepping `env` from `initial` through `actions`.
Trajectory replay(const Environment& env, const Scenario& scenario, const StateVector& initial,
                  std::span<const ActionVector> actions, AgentTag agent, std::string id);

// Writing trajectories only. Inserts evenly spaced states between consecutive
// states whose Chebyshev distance exceeds threshold_px; actions become the
// successive displacements. Reward is carried over unchanged.
Trajectory infill(const Trajectory& traj, double threshold_px);

// Same operation on a bare point sequence.
std::vector<StateVector> infill_points(std::span<const StateVector> points, double threshold_px);

double chebyshev(const StateVector& a, const StateVector& b);

}  // namespace teach

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "teach/core.hpp"

namespace teach {

// ---------------------------------------------------------------------------
// Parking
// ---------------------------------------------------------------------------

// Kinematic parking lot. Rewards compare normalized state features
// (position / 100 m, velocity / 5 m/s, heading cos/sin) against the goal pose.
struct ParkingParams {
  double dt = 0.1;
  double wheelbase = 5.0;
  double max_accel = 5.0;
  double max_steer = std::numbers::pi / 4.0;
  double max_speed = 10.0;
  std::array<double, 6> weights{1.0, 0.3, 0.0, 0.0, 0.02, 0.02};
  std::array<double, 6> scales{100.0, 100.0, 5.0, 5.0, 1.0, 1.0};
  double power = 0.5;
  // Success when reward > -success_threshold.
  double success_threshold = 0.12;

  // Lot geometry. Spots open onto the aisle at y = aisle_y and their
  // centers sit at y = spot_y; positive x and y form the bottom-right quadrant.
  double aisle_y = 0.0;
  double spot_y = 10.0;
  std::vector<double> spot_x{4.0, 8.0, 12.0, 16.0, 20.0};
  double lot_extent = 100.0;  // |x|, |y| bound

  // Initial pose distribution (heading uniform over the circle, at rest).
  double start_x_min = -6.0;
  double start_x_max = 0.0;
  double start_y_min = -3.0;
  double start_y_max = 3.0;

  int horizon = 200;

  void check() const;
};

StateVector parking_step(const StateVector& s, const ActionVector& a, const ParkingParams& params);
double parking_weighted_error(const StateVector& s, const StateVector& goal, const ParkingParams& params);
double parking_reward(const StateVector& s, const StateVector& goal, const ParkingParams& params);
// Signed speed along the heading.
double parking_speed(const StateVector& s);
double parking_heading(const StateVector& s);
StateVector parking_pose(double x, double y, double heading, double speed = 0.0);

class ParkingEnv final : public Environment {
 public:
  explicit ParkingEnv(ParkingParams params = {});

  const ParkingParams& params() const { return params_; }
  Schema schema() const override { return Schema::parking6; }
  StateVector step(const StateVector& state, const ActionVector& action) const override;
  double scenario_reward(const Trajectory& traj) const override;
  double display_reward(const Scenario& scenario, std::span<const StateVector> states) const override;
  bool in_bounds(const StateVector& state) const override;
  bool action_valid(const ActionVector& action) const override;
  ActionVector clamp_action(const ActionVector& action) const override;
  bool solved(const Scenario& scenario, const StateVector& state) const override;

  std::vector<Scenario> sample_scenarios(std::size_t count, std::uint64_t seed,
                                         const std::string& prefix = "park") const;

 private:
  ParkingParams params_;
};

// ---------------------------------------------------------------------------
// Writing
// ---------------------------------------------------------------------------

struct Glyph {
  std::string id;
  // Stroke trace inside a 105 x 105 px glyph box.
  std::vector<StateVector> trace;
};

inline constexpr std::array<const char*, 6> kBalineseAlphabet{"na", "ma", "pa", "ba", "wa", "-"};

struct WritingParams {
  int width = 105;
  int height = 105;
  double brush_radius = 2.0;
  double infill_threshold = 1.0;
  // Pen samples per pixel of path when composing gold traces.
  double sample_spacing = 0.25;
  int max_sequence = 8;
  int grid_columns = 4;
  int grid_rows = 2;
  double glyph_scale = 22.0 / 105.0;
  int horizon = 4000;
  std::map<std::string, Glyph> glyphs;

  void check() const;
};

// Loads {glyph_id, trace} fixture files from `dir` (one JSON file per glyph).
std::map<std::string, Glyph> load_glyph_library(const std::filesystem::path& dir);
// Directory holding the shipped fixtures: $TEACH_DATA_DIR/glyphs, else the source tree copy.
std::filesystem::path default_glyph_dir();
WritingParams default_writing_params();

struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  std::size_t count() const;
};

// Pixel (i, j) is inked when it lies within `radius` of a trace point.
Mask rasterize(std::span<const StateVector> points, int width, int height, double radius);
double mask_iou(const Mask& a, const Mask& b);

// -(1 - IoU) between rasterized traces; -1 for an empty student trace.
double writing_reward(std::span<const StateVector> student, std::span<const StateVector> gold,
                      const WritingParams& params);

// Lays out glyphs on the canvas grid, joins consecutive glyphs with straight
// pen moves, and resamples at params.sample_spacing.
std::vector<StateVector> compose_gold_trace(const std::vector<std::string>& glyph_ids, const WritingParams& params);

class WritingEnv final : public Environment {
 public:
  explicit WritingEnv(WritingParams params);

  const WritingParams& params() const { return params_; }
  Schema schema() const override { return Schema::writing2; }
  StateVector step(const StateVector& state, const ActionVector& action) const override;
  double scenario_reward(const Trajectory& traj) const override;
  double display_reward(const Scenario& scenario, std::span<const StateVector> states) const override;
  bool in_bounds(const StateVector& state) const override;
  bool action_valid(const ActionVector& action) const override;
  bool solved(const Scenario&, const StateVector&) const override { return false; }

  Scenario make_scenario(std::string id, const std::vector<std::string>& glyph_ids) const;
  std::vector<Scenario> sample_scenarios(std::size_t count, std::uint64_t seed,
                                         const std::string& prefix = "write") const;
  // The gold trace traced exactly, as an expert demonstration.
  Trajectory expert_demo(const Scenario& scenario) const;
  // Builds a writing trajectory from a raw point sequence and infills it.
  Trajectory trajectory_from_points(const Scenario& scenario, std::span<const StateVector> points,
                                    AgentTag agent, std::string id) const;

 private:
  WritingParams params_;
};

// Omniglot-style stroke data: strokes of [x, y, t] samples, concatenated in
// order, clamped to the canvas and infilled.
Trajectory import_stroke_record(const WritingEnv& env, const Scenario& scenario,
                                const std::vector<std::vector<std::array<double, 3>>>& strokes, std::string id);

// ---------------------------------------------------------------------------
// Policies and experts
// ---------------------------------------------------------------------------

class Policy {
 public:
  virtual ~Policy() = default;
  virtual ActionVector act(const Scenario& scenario, const StateVector& state) const = 0;
};

// Closed-loop rollout for `horizon` steps, stopping early once env.solved().
// Throws Error naming the step when the policy emits a non-finite action.
Trajectory rollout_policy(const Policy& policy, const Scenario& scenario, const Environment& env, int horizon,
                          AgentTag agent, std::string id);

struct ExpertParams {
  double turn_radius = 6.0;
  double lookahead = 4.0;
  double cruise_speed = 9.0;
  double reverse_speed = 3.5;
  double distance_gain = 1.5;  // 1/s, approach speed per meter remaining
  double speed_gain = 4.0;     // 1/s
  double path_extension = 20.0;
  double reverse_capture_distance = 1.5;
  double reverse_capture_heading = 0.5;  // rad
  // Largest acceleration command toward higher speed when backing into a spot.
  double reverse_accel_limit = 0.12;
  // Gaussian noise added to each command before clamping, as a stochastic expert would.
  double steer_noise = 0.05;
  double accel_noise = 0.2;
};

// Path-following parking controller. Nose-in goals: follow the aisle then
// turn into the spot, backing out to retry when the approach ends misaligned.
// Tail-in goals: drive past the spot, stop, and reverse
// along an arc into it. Actions depend only on (state, goal).
class ScriptedParkingExpert final : public Policy {
 public:
  explicit ScriptedParkingExpert(ParkingParams params = {}, ExpertParams expert = {});
  ActionVector act(const Scenario& scenario, const StateVector& state) const override;

 private:
  ParkingParams params_;
  ExpertParams expert_;
};

struct ExpertResult {
  Trajectory trajectory;
  bool success = false;
};

// Rolls out the expert with its command noise seeded by (seed, scenario id).
ExpertResult scripted_parking_expert(const Scenario& scenario, const ParkingParams& params = {},
                                     const ExpertParams& expert = {}, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Demonstration files
// ---------------------------------------------------------------------------

void export_demonstrations(std::span<const Trajectory> demos, const std::filesystem::path& path);
std::vector<Trajectory> load_demonstrations(const std::filesystem::path& path);

}  // namespace teach

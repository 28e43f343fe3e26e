#include "teach/envs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>

#include "teach/json_io.hpp"
#include "teach/random.hpp"

namespace teach {

namespace {

constexpr double kPi = std::numbers::pi;

double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a < 0) a += 2.0 * kPi;
  return a - kPi;
}

std::string padded(const std::string& prefix, std::size_t i) {
  std::string n = std::to_string(i);
  if (n.size() < 4) n.insert(0, 4 - n.size(), '0');
  return prefix + "-" + n;
}

}  // namespace

// ---------------------------------------------------------------------------
// Parking
// ---------------------------------------------------------------------------

void ParkingParams::check() const {
  if (!(dt > 0)) throw Error("parking dt must be positive");
  if (!(power > 0)) throw Error("parking reward exponent must be positive");
  for (double w : weights) {
    if (w < 0) throw Error("parking reward weights must be nonnegative");
  }
  for (double s : scales) {
    if (!(s > 0)) throw Error("parking feature scales must be positive");
  }
  if (spot_x.empty()) throw Error("parking lot needs at least one spot");
  if (horizon < 1) throw Error("parking horizon must be positive");
}

double parking_heading(const StateVector& s) { return std::atan2(s[5], s[4]); }

double parking_speed(const StateVector& s) { return s[2] * s[4] + s[3] * s[5]; }

StateVector parking_pose(double x, double y, double heading, double speed) {
  const double c = std::cos(heading);
  const double sn = std::sin(heading);
  return {x, y, speed * c, speed * sn, c, sn};
}

StateVector parking_step(const StateVector& s, const ActionVector& a, const ParkingParams& p) {
  const double steer = std::clamp(a[0], -1.0, 1.0);
  const double accel = std::clamp(a[1], -1.0, 1.0);
  const double c = s[4];
  const double sn = s[5];
  const double v = parking_speed(s);
  const double x = s[0] + v * c * p.dt;
  const double y = s[1] + v * sn * p.dt;
  const double dh = v / p.wheelbase * std::tan(steer * p.max_steer) * p.dt;
  double c2 = c;
  double s2 = sn;
  if (dh != 0.0) {
    const double cd = std::cos(dh);
    const double sd = std::sin(dh);
    c2 = c * cd - sn * sd;
    s2 = sn * cd + c * sd;
  }
  const double norm = std::hypot(c2, s2);
  c2 /= norm;
  s2 /= norm;
  const double v2 = std::clamp(v + accel * p.max_accel * p.dt, -p.max_speed, p.max_speed);
  return {x, y, v2 * c2, v2 * s2, c2, s2};
}

double parking_weighted_error(const StateVector& s, const StateVector& goal, const ParkingParams& p) {
  double err = 0.0;
  for (std::size_t i = 0; i < 6; ++i) err += p.weights[i] * std::abs(s[i] - goal[i]) / p.scales[i];
  return err;
}

double parking_reward(const StateVector& s, const StateVector& goal, const ParkingParams& p) {
  const double err = parking_weighted_error(s, goal, p);
  return err == 0.0 ? 0.0 : -std::pow(err, p.power);
}

ParkingEnv::ParkingEnv(ParkingParams params) : params_(std::move(params)) { params_.check(); }

StateVector ParkingEnv::step(const StateVector& state, const ActionVector& action) const {
  return parking_step(state, action, params_);
}

double ParkingEnv::scenario_reward(const Trajectory& traj) const {
  return parking_reward(traj.final_state, traj.scenario.parking_goal().pose, params_);
}

double ParkingEnv::display_reward(const Scenario& scenario, std::span<const StateVector> states) const {
  const StateVector& s = states.empty() ? scenario.initial_state : states.back();
  return parking_reward(s, scenario.parking_goal().pose, params_);
}

bool ParkingEnv::in_bounds(const StateVector& s) const {
  if (std::abs(s[0]) > params_.lot_extent || std::abs(s[1]) > params_.lot_extent) return false;
  return std::abs(s[4] * s[4] + s[5] * s[5] - 1.0) <= 1e-6;
}

bool ParkingEnv::action_valid(const ActionVector& a) const {
  return std::isfinite(a[0]) && std::isfinite(a[1]) && std::abs(a[0]) <= 1.0 && std::abs(a[1]) <= 1.0;
}

ActionVector ParkingEnv::clamp_action(const ActionVector& a) const {
  return {std::clamp(a[0], -1.0, 1.0), std::clamp(a[1], -1.0, 1.0)};
}

bool ParkingEnv::solved(const Scenario& scenario, const StateVector& state) const {
  return parking_reward(state, scenario.parking_goal().pose, params_) > -params_.success_threshold;
}

std::vector<Scenario> ParkingEnv::sample_scenarios(std::size_t count, std::uint64_t seed,
                                                   const std::string& prefix) const {
  Rng rng(derive_seed(seed, "parking-scenarios"));
  std::vector<Scenario> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double x0 = rng.uniform(params_.start_x_min, params_.start_x_max);
    const double y0 = rng.uniform(params_.start_y_min, params_.start_y_max);
    const double h0 = rng.uniform(-kPi, kPi);
    const double gx = params_.spot_x[rng.index(params_.spot_x.size())];
    const double gh = rng.index(2) == 0 ? kPi / 2.0 : -kPi / 2.0;
    Scenario s;
    s.id = padded(prefix, i);
    s.schema = Schema::parking6;
    s.initial_state = parking_pose(x0, y0, h0);
    s.reward_spec = ParkingGoal{parking_pose(gx, params_.spot_y, gh)};
    s.horizon = params_.horizon;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Writing
// ---------------------------------------------------------------------------

void WritingParams::check() const {
  if (width < 1 || height < 1) throw Error("writing canvas must be nonempty");
  if (!(brush_radius >= 0)) throw Error("brush radius must be nonnegative");
  if (!(sample_spacing > 0)) throw Error("sample spacing must be positive");
  if (max_sequence < 1 || max_sequence > grid_columns * grid_rows) {
    throw Error("max_sequence must fit the canvas grid");
  }
  for (const char* g : kBalineseAlphabet) {
    if (!glyphs.contains(g)) throw Error(std::string("glyph library lacks '") + g + "'");
  }
}

std::map<std::string, Glyph> load_glyph_library(const std::filesystem::path& dir) {
  std::map<std::string, Glyph> lib;
  if (!std::filesystem::is_directory(dir)) throw Error("glyph directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const Json j = read_json_file(f);
    Glyph g;
    g.id = require_field(j, "glyph_id").get<std::string>();
    for (const auto& p : require_field(j, "trace")) {
      g.trace.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    }
    if (g.trace.empty()) throw ParseError(f.string() + ": empty glyph trace");
    for (const auto& p : g.trace) {
      if (p[0] < 0 || p[0] >= 105 || p[1] < 0 || p[1] >= 105) {
        throw ParseError(f.string() + ": glyph trace leaves the 105 px box");
      }
    }
    lib.emplace(g.id, std::move(g));
  }
  return lib;
}

std::filesystem::path default_glyph_dir() {
  if (const char* env = std::getenv("TEACH_DATA_DIR")) return std::filesystem::path(env) / "glyphs";
  return std::filesystem::path(TEACH_SOURCE_DATA_DIR) / "glyphs";
}

WritingParams default_writing_params() {
  WritingParams p;
  p.glyphs = load_glyph_library(default_glyph_dir());
  p.check();
  return p;
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

Mask rasterize(std::span<const StateVector> points, int width, int height, double radius) {
  Mask m{width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height, 0)};
  const double r2 = radius * radius;
  for (const auto& p : points) {
    const int x0 = std::max(0, static_cast<int>(std::ceil(p[0] - radius)));
    const int x1 = std::min(width - 1, static_cast<int>(std::floor(p[0] + radius)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(p[1] - radius)));
    const int y1 = std::min(height - 1, static_cast<int>(std::floor(p[1] + radius)));
    for (int y = y0; y <= y1; ++y) {
      const double dy = y - p[1];
      for (int x = x0; x <= x1; ++x) {
        const double dx = x - p[0];
        if (dx * dx + dy * dy <= r2) m.bits[static_cast<std::size_t>(y) * width + x] = 1;
      }
    }
  }
  return m;
}

double mask_iou(const Mask& a, const Mask& b) {
  if (a.width != b.width || a.height != b.height) throw Error("mask sizes differ");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    inter += (a.bits[i] & b.bits[i]);
    uni += (a.bits[i] | b.bits[i]);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double writing_reward(std::span<const StateVector> student, std::span<const StateVector> gold,
                      const WritingParams& params) {
  if (student.empty()) return -1.0;
  const Mask s = rasterize(student, params.width, params.height, params.brush_radius);
  const Mask g = rasterize(gold, params.width, params.height, params.brush_radius);
  const double iou = mask_iou(s, g);
  return iou == 1.0 ? 0.0 : -(1.0 - iou);
}

namespace {

double clamp_to_canvas(double v, int extent) { return std::clamp(v, 0.0, std::nextafter(double(extent), 0.0)); }

std::vector<StateVector> resample_polyline(const std::vector<StateVector>& pts, double spacing) {
  std::vector<StateVector> out;
  if (pts.empty()) return out;
  out.push_back(pts.front());
  double carry = 0.0;  // distance travelled since the last emitted sample
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double dx = pts[i][0] - pts[i - 1][0];
    const double dy = pts[i][1] - pts[i - 1][1];
    const double len = std::hypot(dx, dy);
    if (len == 0.0) continue;
    double pos = spacing - carry;
    while (pos <= len) {
      const double t = pos / len;
      out.push_back({pts[i - 1][0] + dx * t, pts[i - 1][1] + dy * t});
      pos += spacing;
    }
    carry = len - (pos - spacing);
  }
  if (chebyshev(out.back(), pts.back()) > 1e-12) out.push_back(pts.back());
  return out;
}

}  // namespace

std::vector<StateVector> compose_gold_trace(const std::vector<std::string>& glyph_ids, const WritingParams& p) {
  if (glyph_ids.empty()) throw Error("writing sequence must hold at least one glyph");
  if (static_cast<int>(glyph_ids.size()) > p.max_sequence) throw Error("writing sequence too long");
  const double cell_w = static_cast<double>(p.width) / p.grid_columns;
  const double cell_h = static_cast<double>(p.height) / p.grid_rows;
  const double box = 105.0 * p.glyph_scale;
  std::vector<StateVector> poly;
  for (std::size_t k = 0; k < glyph_ids.size(); ++k) {
    auto it = p.glyphs.find(glyph_ids[k]);
    if (it == p.glyphs.end()) throw Error("unknown glyph '" + glyph_ids[k] + "'");
    const double ox = (static_cast<double>(k % p.grid_columns) + 0.5) * cell_w - box / 2.0;
    const double oy = (static_cast<double>(k / p.grid_columns) + 0.5) * cell_h - box / 2.0;
    for (const auto& q : it->second.trace) {
      poly.push_back({clamp_to_canvas(ox + q[0] * p.glyph_scale, p.width),
                      clamp_to_canvas(oy + q[1] * p.glyph_scale, p.height)});
    }
  }
  return resample_polyline(poly, p.sample_spacing);
}

WritingEnv::WritingEnv(WritingParams params) : params_(std::move(params)) { params_.check(); }

StateVector WritingEnv::step(const StateVector& s, const ActionVector& a) const {
  return {clamp_to_canvas(s[0] + a[0], params_.width), clamp_to_canvas(s[1] + a[1], params_.height)};
}

double WritingEnv::scenario_reward(const Trajectory& traj) const {
  const auto pts = traj.states();
  return writing_reward(pts, traj.scenario.writing_target().gold, params_);
}

double WritingEnv::display_reward(const Scenario& scenario, std::span<const StateVector> states) const {
  return writing_reward(states, scenario.writing_target().gold, params_);
}

bool WritingEnv::in_bounds(const StateVector& s) const {
  return s[0] >= 0 && s[0] < params_.width && s[1] >= 0 && s[1] < params_.height;
}

bool WritingEnv::action_valid(const ActionVector& a) const { return std::isfinite(a[0]) && std::isfinite(a[1]); }

Scenario WritingEnv::make_scenario(std::string id, const std::vector<std::string>& glyph_ids) const {
  Scenario s;
  s.id = std::move(id);
  s.schema = Schema::writing2;
  WritingTarget target{glyph_ids, compose_gold_trace(glyph_ids, params_)};
  s.initial_state = target.gold.front();
  s.reward_spec = std::move(target);
  s.horizon = params_.horizon;
  return s;
}

std::vector<Scenario> WritingEnv::sample_scenarios(std::size_t count, std::uint64_t seed,
                                                   const std::string& prefix) const {
  Rng rng(derive_seed(seed, "writing-scenarios"));
  std::vector<Scenario> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t len = 1 + rng.index(static_cast<std::size_t>(params_.max_sequence));
    std::vector<std::string> ids;
    for (std::size_t k = 0; k < len; ++k) ids.emplace_back(kBalineseAlphabet[rng.index(kBalineseAlphabet.size())]);
    out.push_back(make_scenario(padded(prefix, i), ids));
  }
  return out;
}

Trajectory WritingEnv::trajectory_from_points(const Scenario& scenario, std::span<const StateVector> points,
                                              AgentTag agent, std::string id) const {
  if (points.size() < 2) throw Error("writing trajectory needs at least two pen samples");
  std::vector<StateVector> pts;
  pts.reserve(points.size());
  for (const auto& p : points) pts.push_back({clamp_to_canvas(p[0], params_.width), clamp_to_canvas(p[1], params_.height)});
  Trajectory t;
  t.id = std::move(id);
  t.scenario = scenario;
  t.agent = agent;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    t.steps.push_back({pts[i], ActionVector{pts[i + 1][0] - pts[i][0], pts[i + 1][1] - pts[i][1]}});
  }
  t.final_state = pts.back();
  t = infill(t, params_.infill_threshold);
  t.reward = scenario_reward(t);
  return t;
}

Trajectory WritingEnv::expert_demo(const Scenario& scenario) const {
  const auto& gold = scenario.writing_target().gold;
  return trajectory_from_points(scenario, gold, AgentTag::expert, scenario.id);
}

Trajectory import_stroke_record(const WritingEnv& env, const Scenario& scenario,
                                const std::vector<std::vector<std::array<double, 3>>>& strokes, std::string id) {
  std::vector<StateVector> pts;
  for (const auto& stroke : strokes) {
    for (const auto& p : stroke) pts.push_back({p[0], p[1]});
  }
  return env.trajectory_from_points(scenario, pts, AgentTag::expert, std::move(id));
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

Trajectory rollout_policy(const Policy& policy, const Scenario& scenario, const Environment& env, int horizon,
                          AgentTag agent, std::string id) {
  if (horizon < 1) throw Error("rollout horizon must be positive");
  Trajectory traj;
  traj.id = std::move(id);
  traj.scenario = scenario;
  traj.agent = agent;
  StateVector s = scenario.initial_state;
  for (int t = 0; t < horizon; ++t) {
    const ActionVector raw = policy.act(scenario, s);
    if (!std::isfinite(raw[0]) || !std::isfinite(raw[1])) {
      throw Error("policy produced a non-finite action at step " + std::to_string(t));
    }
    const ActionVector a = env.clamp_action(raw);
    StateVector next = env.step(s, a);
    traj.steps.push_back({std::move(s), a});
    s = std::move(next);
    if (env.solved(scenario, s)) break;
  }
  traj.final_state = std::move(s);
  traj.reward = env.scenario_reward(traj);
  return traj;
}

namespace {

struct Vec2 {
  double x = 0;
  double y = 0;
};

// Line or circular-arc piece parameterized by arc length.
struct PathPiece {
  bool arc = false;
  Vec2 a, b;            // line endpoints
  Vec2 c;               // arc center
  double r = 0;         // arc radius
  double theta0 = 0;    // arc start angle
  double sweep = 0;     // signed arc sweep, positive counter-clockwise
  double length = 0;

  Vec2 point_at(double s) const {
    if (!arc) {
      const double t = length > 0 ? s / length : 0.0;
      return {a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t};
    }
    const double th = theta0 + (sweep > 0 ? s : -s) / r;
    return {c.x + r * std::cos(th), c.y + r * std::sin(th)};
  }

  // Arc length of the closest point and its distance.
  std::pair<double, double> project(Vec2 p) const {
    if (!arc) {
      const double ux = (b.x - a.x) / length;
      const double uy = (b.y - a.y) / length;
      const double t = std::clamp((p.x - a.x) * ux + (p.y - a.y) * uy, 0.0, length);
      return {t, std::hypot(p.x - (a.x + ux * t), p.y - (a.y + uy * t))};
    }
    const double phi = std::atan2(p.y - c.y, p.x - c.x);
    double rel = (sweep > 0 ? phi - theta0 : theta0 - phi);
    rel = std::fmod(rel, 2.0 * kPi);
    if (rel < 0) rel += 2.0 * kPi;
    if (rel <= std::abs(sweep)) return {r * rel, std::abs(std::hypot(p.x - c.x, p.y - c.y) - r)};
    const Vec2 e0 = point_at(0.0);
    const Vec2 e1 = point_at(length);
    const double d0 = std::hypot(p.x - e0.x, p.y - e0.y);
    const double d1 = std::hypot(p.x - e1.x, p.y - e1.y);
    return d0 <= d1 ? std::pair{0.0, d0} : std::pair{length, d1};
  }

  double heading_at(double s) const {
    if (!arc) return std::atan2(b.y - a.y, b.x - a.x);
    const double th = theta0 + (sweep > 0 ? s : -s) / r;
    return sweep > 0 ? th + kPi / 2.0 : th - kPi / 2.0;
  }
};

PathPiece line(Vec2 a, Vec2 b) {
  PathPiece p;
  p.a = a;
  p.b = b;
  p.length = std::hypot(b.x - a.x, b.y - a.y);
  return p;
}

PathPiece arc(Vec2 c, double r, double theta0, double sweep) {
  PathPiece p;
  p.arc = true;
  p.c = c;
  p.r = r;
  p.theta0 = theta0;
  p.sweep = sweep;
  p.length = r * std::abs(sweep);
  return p;
}

struct Path {
  std::vector<PathPiece> pieces;

  double total() const {
    double t = 0;
    for (const auto& p : pieces) t += p.length;
    return t;
  }

  struct Projection {
    double s = 0;
    double distance = 0;
    double heading = 0;
  };

  Projection project(Vec2 q) const {
    Projection best{0, std::numeric_limits<double>::infinity(), 0};
    double offset = 0;
    for (const auto& p : pieces) {
      const auto [s, d] = p.project(q);
      if (d < best.distance) best = {offset + s, d, p.heading_at(s)};
      offset += p.length;
    }
    return best;
  }

  Vec2 point_at(double s) const {
    for (const auto& p : pieces) {
      if (s <= p.length) return p.point_at(s);
      s -= p.length;
    }
    return pieces.back().point_at(pieces.back().length);
  }
};

struct ParkingPlan {
  Path forward;
  double forward_goal_s = 0;
  bool tail_in = false;
  Path reverse;  // motion-direction path when backing into the spot
  double reverse_goal_s = 0;
  Path retreat;  // nose-in only: the forward path traversed backwards, for retries
};

ParkingPlan plan_for(const StateVector& goal, const ParkingParams& pp, const ExpertParams& ep) {
  const double gx = goal[0];
  const double gy = goal[1];
  const double ya = pp.aisle_y;
  const double r = ep.turn_radius;
  const double run_in = 200.0;
  ParkingPlan plan;
  plan.tail_in = goal[5] < 0.0;
  if (!plan.tail_in) {
    plan.forward.pieces = {line({gx - r - run_in, ya}, {gx - r, ya}), arc({gx - r, ya + r}, r, -kPi / 2.0, kPi / 2.0),
                           line({gx, ya + r}, {gx, gy + ep.path_extension})};
    plan.forward_goal_s = run_in + r * kPi / 2.0 + (gy - ya - r);
    plan.retreat.pieces = {line({gx, gy + ep.path_extension}, {gx, ya + r}), arc({gx - r, ya + r}, r, 0.0, -kPi / 2.0),
                           line({gx - r, ya}, {gx - r - run_in, ya})};
    return plan;
  }
  plan.forward.pieces = {line({gx + r - run_in, ya}, {gx + r, ya})};
  plan.forward_goal_s = run_in;
  plan.reverse.pieces = {line({gx + r + ep.path_extension, ya}, {gx + r, ya}),
                         arc({gx + r, ya + r}, r, -kPi / 2.0, -kPi / 2.0),
                         line({gx, ya + r}, {gx, gy + ep.path_extension})};
  plan.reverse_goal_s = ep.path_extension + r * kPi / 2.0 + (gy - ya - r);
  return plan;
}

// Pure pursuit along `path` in the direction of motion (sign +1 forward, -1 reverse).
// Braking while reversing never exceeds `reverse_floor` in magnitude.
ActionVector pursue(const Path& path, double goal_s, const StateVector& s, double sign, double max_speed,
                    double reverse_floor, const ParkingParams& pp, const ExpertParams& ep) {
  const Vec2 pos{s[0], s[1]};
  const double motion_heading = parking_heading(s) + (sign > 0 ? 0.0 : kPi);
  const auto proj = path.project(pos);
  const Vec2 target = path.point_at(std::min(proj.s + ep.lookahead, path.total()));
  const double alpha = wrap_angle(std::atan2(target.y - pos.y, target.x - pos.x) - motion_heading);
  // Turn at full lock toward targets behind the car instead of letting sin(alpha) vanish.
  const double curvature =
      (std::abs(alpha) > kPi / 2.0 ? (alpha > 0 ? 2.0 : -2.0) : 2.0 * std::sin(alpha)) / ep.lookahead;
  const double delta = sign * std::atan(curvature * pp.wheelbase);
  const double remaining = std::max(0.0, goal_s - proj.s);
  const double v_des = sign * std::min(max_speed, ep.distance_gain * remaining);
  const double accel = ep.speed_gain * (v_des - parking_speed(s)) / pp.max_accel;
  const double floor = sign > 0 ? -1.0 : -reverse_floor;
  return {std::clamp(delta / pp.max_steer, -1.0, 1.0), std::clamp(accel, floor, 1.0)};
}

}  // namespace

ScriptedParkingExpert::ScriptedParkingExpert(ParkingParams params, ExpertParams expert)
    : params_(std::move(params)), expert_(expert) {}

ActionVector ScriptedParkingExpert::act(const Scenario& scenario, const StateVector& s) const {
  const StateVector& goal = scenario.parking_goal().pose;
  const ParkingPlan plan = plan_for(goal, params_, expert_);
  const double v = parking_speed(s);
  if (!plan.tail_in) {
    // Stopped short of the spot with a bad heading: back out along the path and retry.
    const auto fwd = plan.forward.project({s[0], s[1]});
    const double heading_error = std::abs(wrap_angle(parking_heading(s) - fwd.heading));
    const double remaining = plan.forward_goal_s - fwd.s;
    const bool retry = (remaining < 3.0 && heading_error > 0.3 && std::abs(v) < 0.5) ||
                       (v < -0.05 && heading_error > 0.1 && remaining < 10.0);
    if (retry) {
      const auto back = plan.retreat.project({s[0], s[1]});
      return pursue(plan.retreat, back.s + 6.0, s, -1.0, expert_.reverse_speed, 1.0, params_, expert_);
    }
    return pursue(plan.forward, plan.forward_goal_s, s, 1.0, expert_.cruise_speed, 1.0, params_, expert_);
  }
  const auto proj = plan.reverse.project({s[0], s[1]});
  const double body_heading_on_path = proj.heading + kPi;
  const bool captured = proj.distance < expert_.reverse_capture_distance &&
                        std::abs(wrap_angle(parking_heading(s) - body_heading_on_path)) < expert_.reverse_capture_heading;
  const auto fwd = plan.forward.project({s[0], s[1]});
  const bool stalled = plan.forward_goal_s - fwd.s < 1.0 && std::abs(parking_speed(s)) < 0.5;
  if (v < -0.05 || captured || stalled) {
    return pursue(plan.reverse, plan.reverse_goal_s, s, -1.0, expert_.reverse_speed,
                  expert_.reverse_accel_limit, params_, expert_);
  }
  return pursue(plan.forward, plan.forward_goal_s, s, 1.0, expert_.cruise_speed, 1.0, params_, expert_);
}

namespace {

class NoisyPolicy final : public Policy {
 public:
  NoisyPolicy(const Policy& base, double steer_sd, double accel_sd, std::uint64_t seed)
      : base_(base), steer_sd_(steer_sd), accel_sd_(accel_sd), rng_(seed) {}

  ActionVector act(const Scenario& scenario, const StateVector& state) const override {
    ActionVector a = base_.act(scenario, state);
    a[0] += steer_sd_ * rng_.normal();
    a[1] += accel_sd_ * rng_.normal();
    return a;
  }

 private:
  const Policy& base_;
  double steer_sd_;
  double accel_sd_;
  mutable Rng rng_;
};

}  // namespace

ExpertResult scripted_parking_expert(const Scenario& scenario, const ParkingParams& params,
                                     const ExpertParams& expert, std::uint64_t seed) {
  if (scenario.schema != Schema::parking6) throw UnsupportedSchema("scripted expert needs a parking scenario");
  const ParkingEnv env(params);
  const ScriptedParkingExpert policy(params, expert);
  const NoisyPolicy noisy(policy, expert.steer_noise, expert.accel_noise, derive_seed(seed, scenario.id));
  ExpertResult result;
  result.trajectory = rollout_policy(noisy, scenario, env, scenario.horizon, AgentTag::expert, scenario.id);
  result.success = env.solved(scenario, result.trajectory.final_state);
  return result;
}

// ---------------------------------------------------------------------------
// Demonstration files
// ---------------------------------------------------------------------------

void export_demonstrations(std::span<const Trajectory> demos, const std::filesystem::path& path) {
  Json arr = Json::array();
  for (const auto& t : demos) arr.push_back(trajectory_to_json(t));
  write_json_file(path, arr);
}

std::vector<Trajectory> load_demonstrations(const std::filesystem::path& path) {
  const Json j = read_json_file(path);
  if (!j.is_array()) throw ParseError(path.string() + ": demonstration file must hold a list of records");
  std::vector<Trajectory> out;
  out.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    try {
      out.push_back(trajectory_from_json(j[i]));
    } catch (const std::exception& e) {
      throw ParseError(path.string() + ": record " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace teach

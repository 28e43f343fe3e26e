#include <doctest.h>

#include <cmath>

#include "teach/core.hpp"
#include "teach/envs.hpp"
#include "teach/json_io.hpp"
#include "teach/random.hpp"

using namespace teach;

namespace {

Scenario parking_scenario(int horizon = 200) {
  Scenario s;
  s.id = "s";
  s.schema = Schema::parking6;
  s.initial_state = parking_pose(0, 0, 0.3, 2.0);
  s.reward_spec = ParkingGoal{parking_pose(8, 10, M_PI / 2)};
  s.horizon = horizon;
  return s;
}

Trajectory random_parking_traj(const ParkingEnv& env, Rng& rng, int n, int horizon = 200) {
  std::vector<ActionVector> actions;
  for (int i = 0; i < n; ++i) actions.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1)});
  const Scenario sc = parking_scenario(horizon);
  return replay(env, sc, sc.initial_state, actions, AgentTag::student, "t");
}

// Writing-schema trajectory from raw points; actions are the displacements.
Trajectory writing_traj(const std::vector<StateVector>& pts) {
  Trajectory t;
  t.id = "w";
  t.scenario.schema = Schema::writing2;
  t.scenario.initial_state = pts.front();
  t.scenario.reward_spec = WritingTarget{};
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    t.steps.push_back({pts[i], {pts[i + 1][0] - pts[i][0], pts[i + 1][1] - pts[i][1]}});
  }
  t.final_state = pts.back();
  t.reward = -0.25;
  return t;
}

double max_gap(const std::vector<StateVector>& s) {
  double g = 0;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) g = std::max(g, chebyshev(s[i], s[i + 1]));
  return g;
}

}  // namespace

TEST_CASE("one-step trajectory from env output validates") {
  const ParkingEnv env;
  const Scenario sc = parking_scenario();
  Trajectory t;
  t.scenario = sc;
  t.steps.push_back({sc.initial_state, {0.5, 0.5}});
  t.final_state = env.step(sc.initial_state, {0.5, 0.5});
  CHECK(validate_trajectory(t, env).ok());
}

TEST_CASE("perturbed state reports first mismatch") {
  const ParkingEnv env;
  Rng rng(1);
  Trajectory t = random_parking_traj(env, rng, 20);
  REQUIRE(validate_trajectory(t, env).ok());
  t.steps[7].state[0] += 1e-2;
  const auto rep = validate_trajectory(t, env);
  const Violation* v = rep.first(Violation::Kind::transition_mismatch);
  REQUIRE(v != nullptr);
  CHECK(v->index == 6);
}

TEST_CASE("horizon overflow") {
  const ParkingEnv env;
  Rng rng(2);
  const Trajectory t = random_parking_traj(env, rng, 11, 10);
  const auto rep = validate_trajectory(t, env);
  const Violation* v = rep.first(Violation::Kind::horizon_overflow);
  REQUIRE(v != nullptr);
  CHECK(v->message.find("horizon overflow") != std::string::npos);
  CHECK_THROWS_AS(validate_trajectory(Trajectory{}, env), Error);
}

TEST_CASE("invalid action and schema mismatch") {
  const ParkingEnv env;
  Rng rng(3);
  Trajectory t = random_parking_traj(env, rng, 5);
  t.steps[2].action[1] = 1.5;
  CHECK(validate_trajectory(t, env).first(Violation::Kind::invalid_action) != nullptr);
  t.scenario.schema = Schema::writing2;
  CHECK(validate_trajectory(t, env).first(Violation::Kind::schema_mismatch) != nullptr);
}

TEST_CASE("replay reproduces states") {
  const ParkingEnv env;
  Rng rng(4);
  for (int k = 0; k < 20; ++k) {
    const Trajectory t = random_parking_traj(env, rng, 1 + static_cast<int>(rng.index(100)));
    const auto acts = t.actions();
    const Trajectory r = replay(env, t.scenario, t.scenario.initial_state, acts, AgentTag::student, "r");
    const auto a = t.states();
    const auto b = r.states();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(chebyshev(a[i], b[i]) <= 1e-6);
  }
}

TEST_CASE("infill examples") {
  const auto a = infill_points(std::vector<StateVector>{{0, 0}, {3, 0}}, 1.0);
  CHECK(a == std::vector<StateVector>{{0, 0}, {1, 0}, {2, 0}, {3, 0}});
  const auto b = infill_points(std::vector<StateVector>{{0, 0}, {1, 0}}, 1.0);
  CHECK(b == std::vector<StateVector>{{0, 0}, {1, 0}});
  const auto c = infill_points(std::vector<StateVector>{{0, 0}, {2, 2}}, 1.0);
  CHECK(c == std::vector<StateVector>{{0, 0}, {1, 1}, {2, 2}});
  double worst = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t j = i + 1; j == i + 1 && j < c.size(); ++j) {
      worst = std::max({worst, std::abs(c[i][0] - c[j][0]), std::abs(c[i][1] - c[j][1])});
    }
  }
  CHECK(worst <= 1.0);
}

TEST_CASE("infill properties on random traces") {
  Rng rng(5);
  for (int k = 0; k < 100; ++k) {
    std::vector<StateVector> pts;
    const std::size_t n = 2 + rng.index(15);
    for (std::size_t i = 0; i < n; ++i) pts.push_back({rng.uniform(0, 100), rng.uniform(0, 100)});
    const Trajectory t = writing_traj(pts);
    const Trajectory once = infill(t, 1.0);
    const Trajectory twice = infill(once, 1.0);
    const auto s1 = once.states();
    CHECK(s1 == twice.states());
    CHECK(s1.front() == pts.front());
    CHECK(s1.back() == pts.back());
    CHECK(max_gap(s1) <= 1.0 + 1e-12);
    CHECK(once.reward == t.reward);
    // Original points appear in order.
    std::size_t j = 0;
    for (const auto& s : s1) {
      if (j < pts.size() && s == pts[j]) ++j;
    }
    CHECK(j == pts.size());
    for (std::size_t i = 0; i < once.size(); ++i) {
      CHECK(once.steps[i].action[0] == doctest::Approx(s1[i + 1][0] - s1[i][0]));
    }
  }
}

TEST_CASE("segmentation check") {
  SkillSegmentation ok{{0, 1, 2}, {0, 4, 8, 12}};
  CHECK_NOTHROW(ok.check(12, 3));
  CHECK_THROWS_AS(ok.check(13, 3), Error);
  CHECK_THROWS_AS(ok.check(12, 2), Error);
  SkillSegmentation bad{{0, 1}, {0, 4, 4}};
  CHECK_THROWS_AS(bad.check(4, 3), Error);
  SkillSegmentation mism{{0}, {0, 4, 8}};
  CHECK_THROWS_AS(mism.check(8, 3), Error);
}

TEST_CASE("json round trips") {
  const ParkingEnv env;
  Rng rng(6);
  const Trajectory t = random_parking_traj(env, rng, 30);
  const Trajectory back = trajectory_from_json(trajectory_to_json(t));
  CHECK(back.id == t.id);
  CHECK(back.states() == t.states());
  CHECK(back.actions() == t.actions());
  CHECK(back.reward == t.reward);
  CHECK(back.agent == t.agent);
  CHECK(scenario_to_json(scenario_from_json(scenario_to_json(t.scenario))) == scenario_to_json(t.scenario));
  Json j = trajectory_to_json(t);
  j.erase("final_state");
  CHECK_THROWS_WITH_AS(trajectory_from_json(j), doctest::Contains("final_state"), ParseError);
}

TEST_CASE("schema names") {
  CHECK(schema_from_string("parking6") == Schema::parking6);
  CHECK(schema_from_string("writing2") == Schema::writing2);
  CHECK_THROWS_AS(schema_from_string("pong"), UnsupportedSchema);
  CHECK(state_dim(Schema::parking6) == 6);
  CHECK(state_dim(Schema::writing2) == 2);
}

TEST_CASE("rng is reproducible and derive_seed separates labels") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  CHECK(derive_seed(1, "x") != derive_seed(1, "y"));
  CHECK(derive_seed(1, "x") != derive_seed(2, "x"));
  Rng c(7);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 5000; ++i) ++counts[c.index(5)];
  for (int n : counts) CHECK(n > 900);
}

TEST_CASE("infill rejects parking trajectories") {
  const ParkingEnv env;
  Rng rng(8);
  CHECK_THROWS_AS(infill(random_parking_traj(env, rng, 5), 1.0), UnsupportedSchema);
}

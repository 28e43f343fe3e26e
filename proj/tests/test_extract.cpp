#include <doctest.h>

#include <algorithm>

#include "teach/envs.hpp"
#include "teach/extract.hpp"
#include "teach/random.hpp"

using namespace teach;

namespace {

const ActionVector kLevelA{0.0, 0.6};
const ActionVector kLevelB{0.5, -0.4};

struct Fixture {
  std::vector<Trajectory> demos;
  std::vector<std::vector<int>> cuts;  // true boundaries per demo
  std::vector<std::vector<int>> levels;
};

// Piecewise-constant actions alternating between two levels, lengths in [8, 20].
Fixture piecewise_demos(std::size_t count, std::uint64_t seed) {
  const ParkingEnv env;
  Rng rng(seed);
  Fixture f;
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<ActionVector> acts;
    std::vector<int> cuts{0};
    std::vector<int> lv;
    int level = static_cast<int>(rng.index(2));
    for (int s = 0; s < 4; ++s) {
      const int len = 8 + static_cast<int>(rng.index(13));
      for (int t = 0; t < len; ++t) acts.push_back(level == 0 ? kLevelA : kLevelB);
      cuts.push_back(static_cast<int>(acts.size()));
      lv.push_back(level);
      level = 1 - level;
    }
    Scenario sc = env.sample_scenarios(1, seed + i, "pw")[0];
    sc.id = "pw-" + std::to_string(i);
    sc.horizon = 0;
    f.demos.push_back(replay(env, sc, sc.initial_state, acts, AgentTag::expert, sc.id));
    f.cuts.push_back(cuts);
    f.levels.push_back(lv);
  }
  return f;
}

ExtractorConfig two_level_config() {
  ExtractorConfig c;
  c.latent_dim = 2;
  c.segments_per_demo = 4;
  c.segment_length = 14;
  c.h_min = 4;
  c.h_max = 40;
  return c;
}

Trajectory from_actions(const std::vector<ActionVector>& acts, const std::string& id) {
  const ParkingEnv env;
  Scenario sc = env.sample_scenarios(1, 99, "x")[0];
  sc.horizon = 0;
  return replay(env, sc, sc.initial_state, acts, AgentTag::student, id);
}

}  // namespace

TEST_CASE("time heuristic examples") {
  const auto a = time_heuristic_split(12, 3);
  CHECK(a.boundaries == std::vector<int>{0, 4, 8, 12});
  CHECK(a.skills == std::vector<int>{0, 1, 2});
  const auto b = time_heuristic_split(10, 3);
  CHECK(b.boundaries == std::vector<int>{0, 4, 7, 10});
  int sum = 0;
  for (std::size_t j = 0; j < b.num_segments(); ++j) sum += b.segment_length(j);
  CHECK(sum == 10);
  const auto c = time_heuristic_split(17, 1);
  CHECK(c.boundaries == std::vector<int>{0, 17});
  CHECK(c.skills == std::vector<int>{0});
}

TEST_CASE("time heuristic partition property") {
  for (std::size_t n = 1; n < 60; ++n) {
    for (int k = 1; k <= 8; ++k) {
      if (static_cast<std::size_t>(k) > n) continue;
      const auto s = time_heuristic_split(n, k);
      CHECK_NOTHROW(s.check(n, k));
      int lo = 1 << 30, hi = 0;
      for (std::size_t j = 0; j < s.num_segments(); ++j) {
        lo = std::min(lo, s.segment_length(j));
        hi = std::max(hi, s.segment_length(j));
        if (j > 0) CHECK(s.segment_length(j) <= s.segment_length(j - 1));
      }
      CHECK(hi - lo <= 1);
    }
  }
}

TEST_CASE("changepoints find exact level changes") {
  const Fixture f = piecewise_demos(20, 3);
  for (std::size_t i = 0; i < f.demos.size(); ++i) {
    CHECK(changepoints(f.demos[i].actions(), 1.0, 4, 40) == f.cuts[i]);
  }
}

TEST_CASE("builtin extractor on a two-level fixture") {
  const Fixture f = piecewise_demos(30, 4);
  const auto ex = fit_builtin(f.demos, two_level_config(), 7);
  REQUIRE(ex.fitted());
  int used = 0;
  for (const auto& [m, segs] : ex.library().segments) used += !segs.empty();
  CHECK(used == 2);
  for (std::size_t i = 0; i < f.demos.size(); ++i) {
    const auto seg = ex.extract(f.demos[i]);
    CHECK(seg.boundaries == f.cuts[i]);
    CHECK_NOTHROW(seg.check(f.demos[i].size(), 2));
    for (std::size_t j = 1; j < seg.num_segments(); ++j) {
      // Same level -> same skill, different level -> different skill.
      CHECK((seg.skills[j] == seg.skills[0]) == (f.levels[i][j] == f.levels[i][0]));
    }
  }
  for (const auto& [m, segs] : ex.library().segments) {
    for (const auto& r : segs) {
      CHECK(r.length() >= ex.config().h_min);
      CHECK(r.length() <= ex.config().h_max);
    }
  }

  SUBCASE("refit is deterministic") {
    const auto again = fit_builtin(f.demos, two_level_config(), 7);
    CHECK(again.library() == ex.library());
    CHECK(again.to_json() == ex.to_json());
  }
  SUBCASE("stable under demo reordering") {
    auto shuffled = f.demos;
    Rng rng(8);
    rng.shuffle(shuffled);
    const auto other = fit_builtin(shuffled, two_level_config(), 7);
    for (const auto& d : f.demos) CHECK(other.extract(d) == ex.extract(d));
  }
  SUBCASE("planted representative segments are recovered in order") {
    const auto& lib = ex.library();
    const SegmentRef& a = lib.segments.at(0).front();
    const SegmentRef& b = lib.segments.at(1).front();
    std::vector<ActionVector> acts;
    for (const SegmentRef* r : {&b, &a}) {
      const auto src = find_trajectory(f.demos, r->trajectory_id).actions();
      acts.insert(acts.end(), src.begin() + r->begin, src.begin() + r->end);
    }
    const auto seg = ex.extract(from_actions(acts, "planted"));
    CHECK(seg.skills == std::vector<int>{1, 0});
    CHECK(seg.boundaries == std::vector<int>{0, b.length(), b.length() + a.length()});
  }
  SUBCASE("extraction is repeatable and saves losslessly") {
    const auto path = std::filesystem::temp_directory_path() / "teach_test_extractor.json";
    save_extractor(ex, path);
    const auto loaded = load_extractor(path);
    for (const auto& d : f.demos) {
      CHECK(ex.extract(d) == ex.extract(d));
      CHECK(loaded->extract(d) == ex.extract(d));
    }
    std::filesystem::remove(path);
  }
}

TEST_CASE("builtin extractor on expert parking demos") {
  const ParkingEnv env;
  std::vector<Trajectory> demos;
  for (const auto& sc : env.sample_scenarios(40, 5)) {
    auto r = scripted_parking_expert(sc, env.params(), {}, 5);
    if (r.success) demos.push_back(r.trajectory);
  }
  const auto cfg = parking_extractor_defaults();
  const auto ex = fit_builtin(demos, cfg, 1);
  for (const auto& d : demos) {
    const auto seg = ex.extract(d);
    CHECK_NOTHROW(seg.check(d.size(), cfg.latent_dim));
    CHECK(seg.boundaries.front() == 0);
    CHECK(seg.boundaries.back() == static_cast<int>(d.size()));
  }
  for (const auto& [m, segs] : ex.library().segments) {
    for (const auto& r : segs) CHECK(r.length() >= cfg.h_min);
  }
}

TEST_CASE("kmeans relabels by first occurrence") {
  std::vector<Feature> pts{{10, 10}, {0, 0}, {10.1, 10}, {0.1, 0}, {-10, 5}};
  const auto r = kmeans(pts, 3, 1, 50);
  CHECK(r.labels == std::vector<int>{0, 1, 0, 1, 2});
}

TEST_CASE("imported segmentations") {
  const Fixture f = piecewise_demos(6, 9);
  Json records = Json::array();
  for (std::size_t i = 0; i < f.demos.size(); ++i) {
    records.push_back({{"trajectory_id", f.demos[i].id}, {"skills", f.levels[i]}, {"boundaries", f.cuts[i]}});
  }
  const auto ex = import_segmentations(records, f.demos);
  CHECK(ex.latent_dim() == 2);
  for (std::size_t i = 0; i < f.demos.size(); ++i) {
    const auto seg = ex.extract(f.demos[i]);
    CHECK(seg.skills == f.levels[i]);
    CHECK(seg.boundaries == f.cuts[i]);
  }

  SUBCASE("student copy of an expert trajectory gets the same segmentation") {
    for (std::size_t i = 0; i < f.demos.size(); ++i) {
      Trajectory copy = f.demos[i];
      copy.id = "student-" + std::to_string(i);
      copy.agent = AgentTag::student;
      CHECK(ex.extract(copy) == ex.extract(f.demos[i]));
    }
  }
  SUBCASE("export and reload") {
    const auto back = extractor_from_json(ex.to_json());
    for (const auto& d : f.demos) CHECK(back->extract(d) == ex.extract(d));
  }
  SUBCASE("boundaries must end at the trajectory length") {
    Json bad = records;
    bad[2]["boundaries"].back() = f.cuts[2].back() - 1;
    CHECK_THROWS_WITH(import_segmentations(bad, f.demos), doctest::Contains(f.demos[2].id.c_str()));
  }
  SUBCASE("missing field is named") {
    Json bad = records;
    bad[1].erase("boundaries");
    CHECK_THROWS_WITH(import_segmentations(bad, f.demos), doctest::Contains("boundaries"));
  }
}

TEST_CASE("segment features") {
  std::vector<ActionVector> acts{{0, 1}, {0, 1}, {1, 1}};
  const Feature f = segment_feature(acts);
  REQUIRE(f.size() == 2 * kFeaturePoints);
  CHECK(f.front() == 0.0);
  CHECK(f[kFeaturePoints - 1] == 1.0);
  for (int i = kFeaturePoints; i < 2 * kFeaturePoints; ++i) CHECK(f[i] == 1.0);
  CHECK(feature_distance(f, f) == 0.0);
}

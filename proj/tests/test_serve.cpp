#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "teach/serve.hpp"

using namespace teach;

namespace fs = std::filesystem;

namespace {

std::shared_ptr<const EnvAssets> parking_assets() {
  static const auto a = std::make_shared<const EnvAssets>(build_parking_assets({}, {}, 40, 1));
  return a;
}

std::shared_ptr<const EnvAssets> writing_assets() {
  static const auto a = std::make_shared<const EnvAssets>(build_writing_assets(default_writing_params(), 30, 1));
  return a;
}

std::map<Schema, std::shared_ptr<const EnvAssets>> all_assets() {
  return {{Schema::parking6, parking_assets()}, {Schema::writing2, writing_assets()}};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("teach_test_serve_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Plays one step of whatever the current round needs. Parking actions are a
// fixed function of the tick; writing traces the gold polyline coarsely and
// lifts the pen after `pen_after` steps.
StepResult play_one(SessionManager& m, const std::string& id, long& tick, int pen_after = 12) {
  const SessionInfo info = m.info(id);
  if (info.phase == Phase::demo) return m.advance_demo(id);
  ++tick;
  if (info.schema == Schema::parking6) {
    return m.step(id, {0.3 * std::sin(0.1 * tick), 0.5 * std::cos(0.07 * tick)});
  }
  const Round r = m.current_round(id);
  static std::map<std::string, int> progress;
  int& k = progress[id + ":" + std::to_string(r.index)];
  if (k >= pen_after) {
    k = 0;
    return m.pen_up(id);
  }
  const auto& gold = r.scenario.writing_target().gold;
  const std::size_t from = std::min(gold.size() - 1, static_cast<std::size_t>(k) * 4);
  const std::size_t to = std::min(gold.size() - 1, from + 4);
  ++k;
  return m.step(id, {gold[to][0] - gold[from][0], gold[to][1] - gold[from][1]});
}

std::vector<Phase> play_to_survey(SessionManager& m, const std::string& id, long max_steps = 100000) {
  std::vector<Phase> phases{m.info(id).phase};
  long tick = 0;
  for (long i = 0; i < max_steps && m.info(id).phase != Phase::survey; ++i) {
    const StepResult r = play_one(m, id, tick);
    if (r.phase != phases.back()) phases.push_back(r.phase);
  }
  return phases;
}

std::vector<Json> records(const fs::path& p) {
  std::vector<Json> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) out.push_back(Json::parse(line));
  return out;
}

}  // namespace

TEST_CASE("complete sessions for every setting and environment") {
  const fs::path root = fresh_dir("complete");
  SessionManager m(root, all_assets());
  for (Schema env : {Schema::parking6, Schema::writing2}) {
    for (Setting s : {Setting::full_trajectory, Setting::skills, Setting::time_heuristic, Setting::drills,
                      Setting::ind_drills}) {
      CAPTURE(to_string(env));
      CAPTURE(to_string(s));
      const std::string user = std::string("u-") + std::string(to_string(env)) + "-" + std::string(to_string(s));
      const auto created = m.create_session(user, env, s, 5);
      const auto phases = play_to_survey(m, created.session_id);
      CHECK(phases == std::vector<Phase>{Phase::pretest, Phase::demo, Phase::practice, Phase::evaluation, Phase::survey});
      const auto plan = m.plan(created.session_id);
      int pre = 0, ev = 0, practice = 0, budget = 0;
      for (const auto& r : plan) {
        pre += r.phase == Phase::pretest;
        ev += r.phase == Phase::evaluation;
        if (r.phase == Phase::practice) {
          ++practice;
          budget += r.time_limit;
          CHECK_FALSE(r.placeholder);
        }
      }
      CHECK(pre == 2);
      CHECK(ev == 5);
      CHECK(budget == (env == Schema::parking6 ? 720 : 9000));
      if (s == Setting::skills || s == Setting::time_heuristic) CHECK(practice == 9);
      m.submit_survey(created.session_id, {4, 5, 6}, "fine");
      const fs::path log = m.finalize_session(created.session_id);
      CHECK(m.info(created.session_id).phase == Phase::done);

      const Environment& e = *(env == Schema::parking6 ? parking_assets() : writing_assets())->env;
      const SessionRecord rec = replay_session_log(log, e);
      CHECK(rec.finalized);
      CHECK(rec.rounds.size() == plan.size());
      for (const auto& lr : rec.rounds) {
        CHECK(lr.states_match);
        CHECK(lr.trajectory.reward == lr.logged_reward);
      }
      if (s == Setting::ind_drills) CHECK_FALSE(rec.targets.empty());
      const HumanResult h = ingest_session(rec, e);
      std::vector<double> pre_r, ev_r;
      for (const auto& lr : rec.rounds) {
        if (lr.round.phase == Phase::pretest) pre_r.push_back(lr.logged_reward);
        if (lr.round.phase == Phase::evaluation) ev_r.push_back(lr.logged_reward);
      }
      CHECK(h.improvement == reward_improvement(pre_r, ev_r));
      CHECK(h.ratings == std::vector<int>{4, 5, 6});
    }
  }
}

TEST_CASE("malformed actions are rejected, logged and leave the state alone") {
  const fs::path root = fresh_dir("reject");
  SessionManager m(root, all_assets());
  const auto c = m.create_session("r", Schema::parking6, Setting::full_trajectory, 1);
  const auto first = m.step(c.session_id, {0.1, 0.2});
  CHECK_THROWS_AS(m.step(c.session_id, {0.1}), SessionError);
  CHECK_THROWS_AS(m.step(c.session_id, {0.1, std::nan("")}), SessionError);
  CHECK_THROWS_AS(m.step(c.session_id, {1.5, 0.0}), SessionError);
  CHECK_THROWS_AS(m.pen_up(c.session_id), SessionError);
  CHECK_THROWS_AS(m.advance_demo(c.session_id), SessionError);
  const auto second = m.step(c.session_id, {0.1, 0.2});
  const ParkingEnv env;
  CHECK(second.state == env.step(first.state, {0.1, 0.2}));
  CHECK(second.steps_left == first.steps_left - 1);
  int rejects = 0;
  for (const auto& r : records(m.log_path(c.session_id))) rejects += r.at("type") == "reject";
  CHECK(rejects == 3);
  CHECK_THROWS_AS(m.step("nobody", {0, 0}), SessionError);
}

TEST_CASE("survey and finalize rules") {
  const fs::path root = fresh_dir("survey");
  SessionManager m(root, all_assets());
  const auto c = m.create_session("s", Schema::parking6, Setting::drills, 2);
  CHECK_THROWS_AS(m.submit_survey(c.session_id, {4}, ""), SessionError);
  CHECK_THROWS_AS(m.finalize_session(c.session_id), SessionError);
  CHECK_THROWS_AS(m.create_session("s", Schema::writing2, Setting::drills, 3), SessionError);
  play_to_survey(m, c.session_id);
  CHECK_THROWS_AS(m.step(c.session_id, {0, 0}), SessionError);
  CHECK_THROWS_AS(m.finalize_session(c.session_id), SessionError);
  CHECK_THROWS_AS(m.submit_survey(c.session_id, {0, 4}, ""), SessionError);
  CHECK_THROWS_AS(m.submit_survey(c.session_id, {8}, ""), SessionError);
  CHECK_THROWS_AS(m.submit_survey(c.session_id, {}, ""), SessionError);
  m.submit_survey(c.session_id, {1, 7}, "ok");
  CHECK_THROWS_AS(m.submit_survey(c.session_id, {3}, ""), SessionError);
  m.finalize_session(c.session_id);
  CHECK_THROWS_AS(m.finalize_session(c.session_id), SessionError);
  // A finished user may start again under another seed.
  CHECK_NOTHROW(m.create_session("s", Schema::parking6, Setting::drills, 3));
}

TEST_CASE("timers and pen lifts end rounds") {
  const fs::path root = fresh_dir("timer");
  SessionManager m(root, all_assets());
  const auto c = m.create_session("w", Schema::writing2, Setting::full_trajectory, 1);
  m.step(c.session_id, {1, 0});
  const auto r = m.pen_up(c.session_id);
  REQUIRE(r.ended.has_value());
  CHECK(r.ended->reason == "pen_up");
  CHECK(r.ended->reward <= 0.0);
  // Immediate pen lift: empty trace scores -1.
  const auto e = m.pen_up(c.session_id);
  CHECK(e.ended->reward == -1.0);

  const auto p = m.create_session("p", Schema::parking6, Setting::full_trajectory, 1);
  const int limit = p.round.time_limit;
  StepResult last;
  int steps = 0;
  do {
    last = m.step(p.session_id, {0, 0});
    ++steps;
    CHECK(last.steps_left >= 0);
  } while (!last.ended);
  CHECK(steps == limit);
  CHECK(last.ended->reason == "timer");
}

TEST_CASE("identical action streams give identical logs") {
  const fs::path a = fresh_dir("same_a"), b = fresh_dir("same_b");
  std::string ids[2];
  for (int k = 0; k < 2; ++k) {
    SessionManager m(k == 0 ? a : b, all_assets());
    ids[k] = m.create_session("twin", Schema::writing2, Setting::ind_drills, 9).session_id;
    play_to_survey(m, ids[k]);
    m.submit_survey(ids[k], {3}, "");
    m.finalize_session(ids[k]);
  }
  CHECK(ids[0] == ids[1]);
  CHECK(slurp(a / "sessions" / (ids[0] + ".jsonl")) == slurp(b / "sessions" / (ids[1] + ".jsonl")));
}

TEST_CASE("log records are ordered") {
  const fs::path root = fresh_dir("order");
  SessionManager m(root, all_assets());
  const auto c = m.create_session("o", Schema::parking6, Setting::ind_drills, 4);
  play_to_survey(m, c.session_id);
  long seq = -1, tick = 0;
  for (const auto& r : records(m.log_path(c.session_id))) {
    CHECK(r.at("protocol") == kProtocolVersion);
    CHECK(r.at("seq").get<long>() == seq + 1);
    CHECK(r.at("tick").get<long>() >= tick);
    seq = r.at("seq").get<long>();
    tick = r.at("tick").get<long>();
  }
}

TEST_CASE("recovery after a crash resumes the same log") {
  const fs::path ref = fresh_dir("rec_ref"), crash = fresh_dir("rec_crash");
  auto run_steps = [](SessionManager& m, const std::string& id, long from, long to, long& tick) {
    for (long i = from; i < to && m.info(id).phase != Phase::survey; ++i) play_one(m, id, tick);
  };
  std::string id;
  {
    SessionManager m(ref, all_assets());
    id = m.create_session("crash", Schema::parking6, Setting::ind_drills, 6).session_id;
    long tick = 0;
    run_steps(m, id, 0, 1 << 30, tick);
    m.submit_survey(id, {2}, "");
    m.finalize_session(id);
  }
  long tick = 0;
  {
    SessionManager m(crash, all_assets());
    m.create_session("crash", Schema::parking6, Setting::ind_drills, 6);
    run_steps(m, id, 0, 450, tick);
  }
  // A torn final line from the crash.
  {
    std::ofstream out(crash / "sessions" / (id + ".jsonl"), std::ios::app | std::ios::binary);
    out << R"({"type":"step","rou)";
  }
  SessionManager m(crash, all_assets());
  const auto recovered = m.recover();
  REQUIRE(recovered == std::vector<std::string>{id});
  run_steps(m, id, 450, 1 << 30, tick);
  m.submit_survey(id, {2}, "");
  m.finalize_session(id);
  CHECK(slurp(crash / "sessions" / (id + ".jsonl")) == slurp(ref / "sessions" / (id + ".jsonl")));
  // Finalized logs are not recovered again.
  SessionManager again(crash, all_assets());
  CHECK(again.recover().empty());
}

TEST_CASE("replay detects tampered logs") {
  const fs::path root = fresh_dir("tamper");
  SessionManager m(root, all_assets());
  const auto c = m.create_session("t", Schema::parking6, Setting::full_trajectory, 1);
  play_to_survey(m, c.session_id);
  m.submit_survey(c.session_id, {5}, "");
  const fs::path log = m.finalize_session(c.session_id);
  const ParkingEnv env;
  auto recs = records(log);
  for (auto& r : recs) {
    if (r.at("type") == "step") {
      r["state"][0] = r["state"][0].get<double>() + 1e-9;
      break;
    }
  }
  const fs::path bad = root / "bad.jsonl";
  {
    std::ofstream out(bad);
    for (const auto& r : recs) out << r.dump() << '\n';
  }
  const auto rec = replay_session_log(bad, env);
  bool mismatch = false;
  for (const auto& lr : rec.rounds) mismatch = mismatch || !lr.states_match;
  CHECK(mismatch);

  std::swap(recs[3], recs[4]);
  {
    std::ofstream out(bad);
    for (const auto& r : recs) out << r.dump() << '\n';
  }
  CHECK_THROWS_AS(replay_session_log(bad, env), ParseError);
  CHECK_THROWS_AS(replay_session_log(log, *writing_assets()->env), UnsupportedSchema);
}

TEST_CASE("human report") {
  HumanResult a{"a", Setting::drills, Schema::parking6, {-1, -1}, {-0.5}, 0.5, {4, 6}};
  HumanResult b{"b", Setting::drills, Schema::parking6, {-1, -1}, {-0.9}, 0.1, {}};
  const Json j = human_report_json({a, b});
  CHECK(j.at("users").size() == 2);
  REQUIRE(j.at("summary").size() == 1);
  CHECK(j.at("summary")[0].at("mean_improvement").get<double>() == doctest::Approx(0.3));
  CHECK(j.at("summary")[0].at("mean_rating").get<double>() == doctest::Approx(5.0));
}

TEST_CASE("session ids are deterministic") {
  CHECK(session_id_for("x", 1) == session_id_for("x", 1));
  CHECK(session_id_for("x", 1) != session_id_for("x", 2));
  CHECK(session_id_for("x", 1).size() == 12);
}

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "teach/curriculum.hpp"
#include "teach/envs.hpp"
#include "teach/extract.hpp"
#include "teach/harness.hpp"
#include "teach/json_io.hpp"

namespace teach {

inline constexpr int kProtocolVersion = 1;

enum class Phase { pretest, demo, practice, evaluation, survey, done };
std::string_view to_string(Phase p);
Phase phase_from_string(std::string_view name);

// Everything a session needs from the offline pipeline for one environment.
struct EnvAssets {
  Schema schema = Schema::parking6;
  std::shared_ptr<const Environment> env;
  std::vector<Trajectory> demos;
  std::shared_ptr<const SkillExtractor> extractor;
  SkillLibrary library;
  LabelMap labels;
  std::vector<std::string> pool;  // diverse scenario pool (Alg. 1 order)

  int pretest_rounds = 2;
  int demo_rounds = 1;
  int eval_rounds = 5;
  int skill_count = 3;       // skills / time_heuristic: skills practiced
  int skill_sessions = 3;    // sessions per skill
  int full_rounds = 3;       // full_trajectory practice rounds
  int time_heuristic_k = 4;
  DrillConfig drills{3, 1, 3, 2};
  // Practice time steps shared by every setting's practice rounds.
  int practice_budget = 540;
  double display_offset = 0.0;

  const Trajectory& demo_for(const std::string& scenario_id) const;
};

// Expert demos, fitted extractor and pool for the given environment.
EnvAssets build_parking_assets(const ParkingParams& params, const ExpertParams& expert, std::size_t demo_count,
                               std::uint64_t seed);
EnvAssets build_writing_assets(const WritingParams& params, std::size_t demo_count, std::uint64_t seed);
// Assets from files written by the offline pipeline.
EnvAssets load_assets(const std::shared_ptr<const Environment>& env, std::vector<Trajectory> demos,
                      std::shared_ptr<const SkillExtractor> extractor);

struct Round {
  int index = 0;
  Phase phase = Phase::pretest;
  std::string label;
  Scenario scenario;
  std::vector<StateVector> overlay;
  // Demo rounds: the expert actions played back by the server.
  std::vector<ActionVector> playback;
  int time_limit = 0;
  bool placeholder = false;
  int target_skill = -1;
};

Json round_to_json(const Round& r);

struct RoundEnd {
  int round = 0;
  double reward = 0.0;  // internal reward, <= 0
  double score = 0.0;   // reward plus display offset
  std::string reason;
};

struct StepResult {
  StateVector state;
  double reward_display = 0.0;
  int steps_left = 0;
  std::optional<RoundEnd> ended;
  std::optional<Round> next;  // set when a round ended and another begins
  Phase phase = Phase::pretest;
};

struct SessionInfo {
  std::string id;
  std::string username;
  Schema schema = Schema::parking6;
  Setting setting = Setting::full_trajectory;
  std::uint64_t seed = 0;
  Phase phase = Phase::pretest;
  int round = 0;
  int rounds = 0;
  bool finalized = false;
};

class SessionError : public Error {
 public:
  using Error::Error;
};

// Owns live sessions and their append-only JSONL logs under root/sessions.
// Calls are serialized per session; distinct sessions may be driven from
// different threads.
class SessionManager {
 public:
  SessionManager(std::filesystem::path root, std::map<Schema, std::shared_ptr<const EnvAssets>> assets);
  ~SessionManager();
  SessionManager(const SessionManager&) = delete;
  SessionManager& operator=(const SessionManager&) = delete;

  struct Created {
    std::string session_id;
    Round round;
  };
  Created create_session(const std::string& username, Schema env, Setting setting, std::uint64_t seed);

  // One interactive time step. Malformed actions are logged and rejected with
  // SessionError, leaving the state unchanged.
  StepResult step(const std::string& id, const std::vector<double>& values);
  // Writing: ends the current round.
  StepResult pen_up(const std::string& id);
  // Demo rounds: advances playback by one frame.
  StepResult advance_demo(const std::string& id);

  void submit_survey(const std::string& id, const std::vector<int>& ratings, const std::string& text);
  std::filesystem::path finalize_session(const std::string& id);

  SessionInfo info(const std::string& id) const;
  Round current_round(const std::string& id) const;
  std::vector<Round> plan(const std::string& id) const;
  bool has_session(const std::string& id) const;

  // Rebuilds every unfinalized session from its log; returns their ids.
  std::vector<std::string> recover();

  std::filesystem::path log_path(const std::string& id) const;
  const std::filesystem::path& root() const { return root_; }

 private:
  struct Session;
  Session& get(const std::string& id) const;
  std::shared_ptr<Session> make_session(const std::string& username, Schema env, Setting setting, std::uint64_t seed);

  std::filesystem::path root_;
  std::map<Schema, std::shared_ptr<const EnvAssets>> assets_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
};

// Deterministic id for (username, seed).
std::string session_id_for(const std::string& username, std::uint64_t seed);

struct LoggedRound {
  Round round;
  Trajectory trajectory;  // replayed from the logged actions
  double logged_reward = 0.0;
  bool states_match = true;  // every replayed state equals the logged one bit for bit
};

struct SessionRecord {
  std::string session_id;
  std::string username;
  Schema schema = Schema::parking6;
  Setting setting = Setting::full_trajectory;
  std::uint64_t seed = 0;
  std::vector<LoggedRound> rounds;
  std::vector<int> ratings;
  std::string survey_text;
  bool finalized = false;
  std::vector<int> targets;  // ind_drills: skills resolved after the pretest
};

// Reads a session log and replays every round through `env`.
SessionRecord replay_session_log(const std::filesystem::path& path, const Environment& env);
// Reads only the header to find the environment schema.
Schema session_log_schema(const std::filesystem::path& path);

struct HumanResult {
  std::string username;
  Setting setting = Setting::full_trajectory;
  Schema schema = Schema::parking6;
  std::vector<double> pretest;
  std::vector<double> evaluation;
  double improvement = 0.0;
  std::vector<int> ratings;
};

// Rewards recomputed from replayed trajectories, not the logged values.
HumanResult ingest_session(const SessionRecord& record, const Environment& env);
Json human_report_json(const std::vector<HumanResult>& results);

}  // namespace teach

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "teach/core.hpp"
#include "teach/extract.hpp"
#include "teach/json_io.hpp"

namespace teach {

// Scenario id -> skill sequence of its expert demonstration.
using LabelMap = std::map<std::string, std::vector<int>>;

// Labels every demonstration with `extractor`, keyed by scenario id.
LabelMap label_demonstrations(std::span<const Trajectory> demos, const SkillExtractor& extractor);

// Greedy maximum coverage: each pick maximizes the number of distinct skills
// covered so far, ties going to the lowest scenario id.
std::vector<std::string> select_diverse_scenarios(const LabelMap& labels, std::size_t count);

struct ExpertiseVector {
  std::map<int, double> scores;  // skill id -> E_m <= 0
  std::vector<std::string> scenarios;

  double at(int skill) const;
};

// E_m = sum over scenarios and expert positions j (1-based) holding m of r / j,
// counted when m is absent from the student's skill set for that scenario.
ExpertiseVector assess_expertise(std::span<const std::string> scenarios, const LabelMap& expert_labels,
                                 const LabelMap& student_labels, const std::map<std::string, double>& rewards,
                                 int latent_dim);

// Same, segmenting student trajectories (keyed by scenario id) with `extractor`
// and reading rewards from the trajectories.
ExpertiseVector assess_expertise(std::span<const std::string> scenarios, const LabelMap& expert_labels,
                                 const std::map<std::string, Trajectory>& student_trajs,
                                 const SkillExtractor& extractor);

Json expertise_to_json(const ExpertiseVector& e);
ExpertiseVector expertise_from_json(const Json& j);

struct NGramTable {
  int n = 0;
  std::map<std::vector<int>, long> counts;

  long total() const;
};

// Sliding windows within each sequence; windows never span two sequences.
NGramTable ngram_frequencies(const LabelMap& labels, int n);

struct DrillConfig {
  int n = 3;
  int n_rep = 1;
  int n_target = 7;
  int n_drills = 1;

  void check() const;
};

DrillConfig parking_drill_defaults();
DrillConfig writing_drill_defaults();

struct DrillPiece {
  int skill = 0;
  SegmentRef segment;
};

struct Drill {
  std::string id;
  int target_skill = 0;
  std::vector<int> ngram;
  int repetitions = 1;
  // One piece per n-gram position for a single repetition.
  std::vector<DrillPiece> pieces;
  std::vector<ActionVector> actions;
  StateVector initial_state;
  // Open-loop replay of `actions` from initial_state, in the first segment's scenario.
  Trajectory rendered;

  std::size_t segment_length_sum() const;
};

struct DrillSet {
  std::vector<int> targets;
  std::map<int, std::vector<Drill>> drills;
  std::vector<std::string> warnings;

  std::vector<const Drill*> all() const;
};

// N_target skills with the lowest expertise, ties to the smaller id.
std::vector<int> lowest_expertise_skills(const ExpertiseVector& e, int count);

// The n_drills most frequent n-grams containing `target`, ties to the
// lexicographically smallest n-gram.
std::vector<std::vector<int>> top_ngrams_containing(const NGramTable& table, int target, int count);

DrillSet create_drills(const ExpertiseVector& expertise, const DrillConfig& cfg, const LabelMap& expert_labels,
                       std::span<const Trajectory> demos, const SkillLibrary& library, const Environment& env,
                       std::uint64_t seed);

// Drills for an explicit list of target skills.
DrillSet create_drills_for_targets(std::span<const int> targets, const DrillConfig& cfg,
                                   const LabelMap& expert_labels, std::span<const Trajectory> demos,
                                   const SkillLibrary& library, const Environment& env, std::uint64_t seed);

// {target_skill, ngram, actions, initial_state, states} plus the chosen segments.
Json drill_to_json(const Drill& drill);
// Writes one file per drill, named after the drill id; returns the paths written.
std::vector<std::filesystem::path> write_drills(const DrillSet& set, const std::filesystem::path& dir);

}  // namespace teach

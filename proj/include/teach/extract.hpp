#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "teach/core.hpp"
#include "teach/json_io.hpp"

namespace teach {

// Actions are resampled to this many points per dimension before clustering.
inline constexpr int kFeaturePoints = 16;

using Feature = std::vector<double>;

// Layout: kFeaturePoints samples of action[0] followed by kFeaturePoints of action[1].
Feature segment_feature(std::span<const ActionVector> actions);
double feature_distance(const Feature& a, const Feature& b);

ExtractorConfig parking_extractor_defaults();
ExtractorConfig writing_extractor_defaults();

struct SegmentRef {
  std::string trajectory_id;
  int begin = 0;
  int end = 0;

  int length() const { return end - begin; }
  bool operator==(const SegmentRef&) const = default;
};

struct SkillLibrary {
  int latent_dim = 0;
  std::map<int, std::vector<SegmentRef>> segments;
  // Mean feature of each skill's members; empty for skills without members.
  std::vector<Feature> profiles;

  // Mean acceleration (action[1]) of the profile, 0 for empty skills.
  double mean_second_action(int skill) const;
  bool operator==(const SkillLibrary&) const = default;
};

class SkillExtractor {
 public:
  virtual ~SkillExtractor() = default;
  virtual SkillSegmentation extract(const Trajectory& traj) const = 0;
  virtual int latent_dim() const = 0;
  virtual std::string kind() const = 0;
  virtual Json to_json() const = 0;
};

// K near-equal intervals with the remainder going to the earliest ones; segment i gets skill i.
SkillSegmentation time_heuristic_split(std::size_t length, int k);
SkillSegmentation time_heuristic_extract(const Trajectory& traj, int k);

class TimeHeuristicExtractor final : public SkillExtractor {
 public:
  explicit TimeHeuristicExtractor(int k);
  SkillSegmentation extract(const Trajectory& traj) const override { return time_heuristic_extract(traj, k_); }
  int latent_dim() const override { return k_; }
  std::string kind() const override { return "time_heuristic"; }
  Json to_json() const override;

 private:
  int k_;
};

// Optimal partition of the action stream minimizing sum of per-segment SSE plus
// `penalty` per segment, subject to lengths in [h_min, h_max]. Returns boundaries.
// Sequences shorter than h_min form a single segment; if no partition satisfies
// the bounds the lower bound is relaxed to 1.
std::vector<int> changepoints(std::span<const ActionVector> actions, double penalty, int h_min, int h_max);

struct KMeansResult {
  std::vector<Feature> centroids;
  std::vector<int> labels;
  int iterations = 0;
};

// Seeded k-means++ followed by Lloyd iterations. Labels are renumbered by first
// occurrence; clusters that never occur keep the trailing ids.
KMeansResult kmeans(const std::vector<Feature>& points, int k, std::uint64_t seed, int max_iterations);

double label_entropy(const std::vector<int>& labels);

class BuiltinExtractor final : public SkillExtractor {
 public:
  BuiltinExtractor() = default;

  SkillSegmentation extract(const Trajectory& traj) const override;
  int latent_dim() const override { return config_.latent_dim; }
  std::string kind() const override { return "builtin"; }
  Json to_json() const override;
  static BuiltinExtractor from_json(const Json& j);

  bool fitted() const { return fitted_; }
  const ExtractorConfig& config() const { return config_; }
  const SkillLibrary& library() const { return library_; }
  double penalty() const { return penalty_; }
  const std::vector<Feature>& centroids() const { return centroids_; }
  // Nearest centroid, lowest id on ties.
  int classify(const Feature& f) const;
  // Fit-time diagnostics such as degenerate demonstrations.
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  friend BuiltinExtractor fit_builtin(std::span<const Trajectory> demos, const ExtractorConfig& cfg,
                                      std::uint64_t seed, int max_iterations);
  bool fitted_ = false;
  ExtractorConfig config_;
  double penalty_ = 0.0;
  std::vector<Feature> centroids_;
  SkillLibrary library_;
  std::vector<std::string> warnings_;
};

// Tries penalties base * {1/4, 1/2, 1, 2, 4, 8}, where base is the pooled action
// variance times the expected segment length. Candidates whose mean segment count
// per demo lies within a factor two of cfg.segments_per_demo compete on label
// entropy after dropping segments shorter than h_min.
BuiltinExtractor fit_builtin(std::span<const Trajectory> demos, const ExtractorConfig& cfg, std::uint64_t seed,
                             int max_iterations = 100);

class ImportedExtractor final : public SkillExtractor {
 public:
  SkillSegmentation extract(const Trajectory& traj) const override;
  int latent_dim() const override { return latent_dim_; }
  std::string kind() const override { return "imported"; }
  Json to_json() const override;
  static ImportedExtractor from_json(const Json& j);

  const SkillLibrary& library() const { return library_; }

 private:
  friend ImportedExtractor import_segmentations(const Json& records, std::span<const Trajectory> demos,
                                                int latent_dim);
  struct Member {
    int skill;
    int length;
    Feature feature;
  };
  int latent_dim_ = 0;
  std::map<std::string, std::pair<std::size_t, SkillSegmentation>> labels_;
  std::vector<Member> members_;
  SkillLibrary library_;
};

// Records are {trajectory_id, skills, boundaries}. latent_dim <= 0 infers max id + 1.
ImportedExtractor import_segmentations(const Json& records, std::span<const Trajectory> demos, int latent_dim = 0);
ImportedExtractor import_segmentations(const std::filesystem::path& path, std::span<const Trajectory> demos,
                                       int latent_dim = 0);

void save_extractor(const SkillExtractor& extractor, const std::filesystem::path& path);
std::unique_ptr<SkillExtractor> load_extractor(const std::filesystem::path& path);
std::unique_ptr<SkillExtractor> extractor_from_json(const Json& j);

// {skill_id, representative_trace} per populated skill, for display.
Json library_to_json(const SkillLibrary& library, std::span<const Trajectory> demos);

// Segment library of builtin and imported extractors; null for the time heuristic.
const SkillLibrary* skill_library_of(const SkillExtractor& extractor);

const Trajectory& find_trajectory(std::span<const Trajectory> trajs, const std::string& id);

}  // namespace teach

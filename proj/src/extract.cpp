#include "teach/extract.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "teach/random.hpp"

namespace teach {

Feature segment_feature(std::span<const ActionVector> actions) {
  if (actions.empty()) throw Error("cannot featurize an empty segment");
  Feature f(2 * kFeaturePoints);
  const std::size_t n = actions.size();
  for (int i = 0; i < kFeaturePoints; ++i) {
    const double u = n == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(n - 1) / (kFeaturePoints - 1);
    const std::size_t lo = std::min(static_cast<std::size_t>(u), n - 1);
    const std::size_t hi = std::min(lo + 1, n - 1);
    const double t = u - static_cast<double>(lo);
    for (int d = 0; d < 2; ++d) {
      f[d * kFeaturePoints + i] = actions[lo][d] * (1.0 - t) + actions[hi][d] * t;
    }
  }
  return f;
}

double feature_distance(const Feature& a, const Feature& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

ExtractorConfig parking_extractor_defaults() { return ExtractorConfig{16, 4, 10, 4, 40}; }

ExtractorConfig writing_extractor_defaults() { return ExtractorConfig{24, 8, 250, 60, 1000}; }

double SkillLibrary::mean_second_action(int skill) const {
  if (skill < 0 || static_cast<std::size_t>(skill) >= profiles.size() || profiles[skill].empty()) return 0.0;
  const auto& p = profiles[skill];
  return std::accumulate(p.begin() + kFeaturePoints, p.end(), 0.0) / kFeaturePoints;
}

const Trajectory& find_trajectory(std::span<const Trajectory> trajs, const std::string& id) {
  for (const auto& t : trajs) {
    if (t.id == id) return t;
  }
  throw Error("unknown trajectory '" + id + "'");
}

// ---------------------------------------------------------------------------
// Time heuristic
// ---------------------------------------------------------------------------

SkillSegmentation time_heuristic_split(std::size_t length, int k) {
  if (k < 1) throw Error("time heuristic needs K >= 1");
  if (static_cast<std::size_t>(k) > length) {
    throw Error("time heuristic needs K <= trajectory length (K=" + std::to_string(k) +
                ", length=" + std::to_string(length) + ")");
  }
  const std::size_t base = length / k;
  const std::size_t extra = length % k;
  SkillSegmentation seg;
  seg.boundaries.push_back(0);
  for (int i = 0; i < k; ++i) {
    const std::size_t len = base + (static_cast<std::size_t>(i) < extra ? 1 : 0);
    seg.boundaries.push_back(seg.boundaries.back() + static_cast<int>(len));
    seg.skills.push_back(i);
  }
  return seg;
}

SkillSegmentation time_heuristic_extract(const Trajectory& traj, int k) { return time_heuristic_split(traj.size(), k); }

TimeHeuristicExtractor::TimeHeuristicExtractor(int k) : k_(k) {
  if (k < 1) throw Error("time heuristic needs K >= 1");
}

Json TimeHeuristicExtractor::to_json() const { return Json{{"kind", kind()}, {"k", k_}}; }

// ---------------------------------------------------------------------------
// Changepoints
// ---------------------------------------------------------------------------

namespace {

std::vector<int> optimal_partition(std::span<const ActionVector> actions, double penalty, int h_min, int h_max) {
  const int n = static_cast<int>(actions.size());
  std::vector<double> s1(2 * (n + 1), 0.0);
  std::vector<double> s2(n + 1, 0.0);
  for (int t = 0; t < n; ++t) {
    s1[2 * (t + 1)] = s1[2 * t] + actions[t][0];
    s1[2 * (t + 1) + 1] = s1[2 * t + 1] + actions[t][1];
    s2[t + 1] = s2[t] + actions[t][0] * actions[t][0] + actions[t][1] * actions[t][1];
  }
  auto cost = [&](int a, int b) {
    const double len = b - a;
    const double m0 = s1[2 * b] - s1[2 * a];
    const double m1 = s1[2 * b + 1] - s1[2 * a + 1];
    return std::max(0.0, (s2[b] - s2[a]) - (m0 * m0 + m1 * m1) / len);
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> best(n + 1, inf);
  std::vector<int> prev(n + 1, -1);
  best[0] = 0.0;
  for (int t = 1; t <= n; ++t) {
    const int lo = std::max(0, t - h_max);
    const int hi = t - h_min;
    for (int s = lo; s <= hi; ++s) {
      if (best[s] == inf) continue;
      const double c = best[s] + cost(s, t) + penalty;
      if (c < best[t]) {
        best[t] = c;
        prev[t] = s;
      }
    }
  }
  if (best[n] == inf) return {};
  std::vector<int> b{n};
  while (b.back() != 0) b.push_back(prev[b.back()]);
  std::reverse(b.begin(), b.end());
  return b;
}

}  // namespace

std::vector<int> changepoints(std::span<const ActionVector> actions, double penalty, int h_min, int h_max) {
  const int n = static_cast<int>(actions.size());
  if (n == 0) throw Error("cannot segment an empty trajectory");
  if (h_min < 1 || h_max < h_min) throw Error("segment length bounds need 1 <= h_min <= h_max");
  if (n < h_min) return {0, n};
  auto b = optimal_partition(actions, penalty, h_min, h_max);
  if (b.empty()) b = optimal_partition(actions, penalty, 1, h_max);
  return b;
}

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

namespace {

double sq_distance(const Feature& a, const Feature& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

int nearest(const std::vector<Feature>& centroids, const Feature& f) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = sq_distance(centroids[c], f);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

}  // namespace

KMeansResult kmeans(const std::vector<Feature>& points, int k, std::uint64_t seed, int max_iterations) {
  if (points.empty()) throw Error("k-means needs at least one point");
  if (k < 1) throw Error("k-means needs k >= 1");
  const std::size_t n = points.size();
  Rng rng(seed);

  std::vector<Feature> centroids;
  centroids.push_back(points[rng.index(n)]);
  std::vector<double> d2(n);
  while (static_cast<int>(centroids.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = sq_distance(points[i], centroids[nearest(centroids, points[i])]);
      total += d2[i];
    }
    if (total == 0.0) {
      centroids.push_back(centroids.back());
      continue;
    }
    double u = rng.uniform() * total;
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] == 0.0) continue;
      if (u < d2[i]) {
        pick = i;
        break;
      }
      u -= d2[i];
    }
    centroids.push_back(points[pick]);
  }

  std::vector<int> labels(n, -1);
  int iter = 0;
  for (; iter < max_iterations; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const int c = nearest(centroids, points[i]);
      if (c != labels[i]) {
        labels[i] = c;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;
    std::vector<Feature> sums(k, Feature(points[0].size(), 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[labels[i]];
      for (std::size_t d = 0; d < points[i].size(); ++d) sums[labels[i]][d] += points[i][d];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (auto& v : sums[c]) v /= static_cast<double>(counts[c]);
      centroids[c] = std::move(sums[c]);
    }
    // Re-seed empty clusters at the point worst served by its centroid.
    for (int c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t worst = 0;
      double worst_d = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = sq_distance(points[i], centroids[labels[i]]);
        if (d > worst_d) {
          worst_d = d;
          worst = i;
        }
      }
      if (worst_d > 0.0) {
        centroids[c] = points[worst];
        labels[worst] = c;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) labels[i] = nearest(centroids, points[i]);

  std::vector<int> order;
  std::vector<bool> seen(k, false);
  for (int l : labels) {
    if (!seen[l]) {
      seen[l] = true;
      order.push_back(l);
    }
  }
  for (int c = 0; c < k; ++c) {
    if (!seen[c]) order.push_back(c);
  }
  std::vector<int> rename(k);
  KMeansResult out;
  for (int i = 0; i < k; ++i) {
    rename[order[i]] = i;
    out.centroids.push_back(centroids[order[i]]);
  }
  out.labels.reserve(n);
  for (int l : labels) out.labels.push_back(rename[l]);
  out.iterations = iter;
  return out;
}

double label_entropy(const std::vector<int>& labels) {
  if (labels.empty()) return 0.0;
  std::map<int, std::size_t> counts;
  for (int l : labels) ++counts[l];
  double h = 0.0;
  for (const auto& [l, c] : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(labels.size());
    h -= p * std::log(p);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Built-in extractor
// ---------------------------------------------------------------------------

namespace {

std::vector<Feature> profiles_of(const SkillLibrary& lib, const std::map<int, std::vector<Feature>>& member_features) {
  std::vector<Feature> profiles(lib.latent_dim);
  for (const auto& [skill, feats] : member_features) {
    Feature mean(2 * kFeaturePoints, 0.0);
    for (const auto& f : feats) {
      for (std::size_t d = 0; d < f.size(); ++d) mean[d] += f[d];
    }
    for (auto& v : mean) v /= static_cast<double>(feats.size());
    profiles[skill] = std::move(mean);
  }
  return profiles;
}

Json features_to_json(const std::vector<Feature>& fs) {
  Json arr = Json::array();
  for (const auto& f : fs) arr.push_back(f);
  return arr;
}

Json library_refs_to_json(const SkillLibrary& lib) {
  Json segs = Json::array();
  for (const auto& [skill, refs] : lib.segments) {
    for (const auto& r : refs) segs.push_back(Json{{"skill", skill}, {"trajectory_id", r.trajectory_id}, {"begin", r.begin}, {"end", r.end}});
  }
  return Json{{"latent_dim", lib.latent_dim}, {"segments", segs}, {"profiles", features_to_json(lib.profiles)}};
}

SkillLibrary library_from_json(const Json& j) {
  SkillLibrary lib;
  lib.latent_dim = require_field(j, "latent_dim").get<int>();
  for (const auto& s : require_field(j, "segments")) {
    lib.segments[s.at("skill").get<int>()].push_back(
        {s.at("trajectory_id").get<std::string>(), s.at("begin").get<int>(), s.at("end").get<int>()});
  }
  for (const auto& p : require_field(j, "profiles")) lib.profiles.push_back(p.get<Feature>());
  return lib;
}

Json config_to_json(const ExtractorConfig& c) {
  return Json{{"latent_dim", c.latent_dim}, {"segments_per_demo", c.segments_per_demo},
              {"segment_length", c.segment_length}, {"h_min", c.h_min}, {"h_max", c.h_max}};
}

ExtractorConfig config_from_json(const Json& j) {
  ExtractorConfig c;
  c.latent_dim = require_field(j, "latent_dim").get<int>();
  c.segments_per_demo = require_field(j, "segments_per_demo").get<int>();
  c.segment_length = require_field(j, "segment_length").get<int>();
  c.h_min = require_field(j, "h_min").get<int>();
  c.h_max = require_field(j, "h_max").get<int>();
  return c;
}

struct Candidate {
  double penalty = 0;
  double mean_segments = 0;
  double entropy = -1;
  std::vector<std::vector<int>> boundaries;  // per sorted demo
  KMeansResult clusters;
  std::vector<std::pair<std::size_t, std::size_t>> kept;  // (demo, segment) per clustered point
};

}  // namespace

int BuiltinExtractor::classify(const Feature& f) const {
  if (!fitted_) throw Error("extractor not fitted");
  return nearest(centroids_, f);
}

SkillSegmentation BuiltinExtractor::extract(const Trajectory& traj) const {
  if (!fitted_) throw Error("extractor not fitted");
  const auto actions = traj.actions();
  SkillSegmentation seg;
  seg.boundaries = changepoints(actions, penalty_, config_.h_min, config_.h_max);
  for (std::size_t j = 0; j + 1 < seg.boundaries.size(); ++j) {
    const std::span<const ActionVector> part(actions.data() + seg.boundaries[j],
                                             static_cast<std::size_t>(seg.boundaries[j + 1] - seg.boundaries[j]));
    seg.skills.push_back(classify(segment_feature(part)));
  }
  return seg;
}

Json BuiltinExtractor::to_json() const {
  if (!fitted_) throw Error("extractor not fitted");
  return Json{{"kind", kind()},
              {"config", config_to_json(config_)},
              {"penalty", penalty_},
              {"centroids", features_to_json(centroids_)},
              {"library", library_refs_to_json(library_)},
              {"warnings", warnings_}};
}

BuiltinExtractor BuiltinExtractor::from_json(const Json& j) {
  BuiltinExtractor e;
  e.config_ = config_from_json(require_field(j, "config"));
  e.penalty_ = require_field(j, "penalty").get<double>();
  for (const auto& c : require_field(j, "centroids")) e.centroids_.push_back(c.get<Feature>());
  if (static_cast<int>(e.centroids_.size()) != e.config_.latent_dim) throw ParseError("centroid count != latent_dim");
  e.library_ = library_from_json(require_field(j, "library"));
  if (j.contains("warnings")) e.warnings_ = j.at("warnings").get<std::vector<std::string>>();
  e.fitted_ = true;
  return e;
}

BuiltinExtractor fit_builtin(std::span<const Trajectory> demos, const ExtractorConfig& cfg, std::uint64_t seed,
                             int max_iterations) {
  if (static_cast<int>(demos.size()) < cfg.latent_dim) {
    throw Error("fitting needs at least latent_dim (" + std::to_string(cfg.latent_dim) + ") demonstrations, got " +
                std::to_string(demos.size()));
  }
  if (cfg.h_min < 1 || cfg.h_max < cfg.h_min) throw Error("segment length bounds need 1 <= h_min <= h_max");
  std::vector<const Trajectory*> sorted;
  for (const auto& d : demos) {
    if (d.empty()) throw Error("demonstration '" + d.id + "' is empty");
    sorted.push_back(&d);
  }
  std::sort(sorted.begin(), sorted.end(), [](const Trajectory* a, const Trajectory* b) { return a->id < b->id; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i]->id == sorted[i - 1]->id) throw Error("duplicate demonstration id '" + sorted[i]->id + "'");
  }
  std::vector<std::vector<ActionVector>> actions;
  for (const auto* d : sorted) actions.push_back(d->actions());

  double sum0 = 0, sum1 = 0, sq = 0;
  std::size_t count = 0;
  for (const auto& a : actions) {
    for (const auto& v : a) {
      sum0 += v[0];
      sum1 += v[1];
      sq += v[0] * v[0] + v[1] * v[1];
      ++count;
    }
  }
  const double mean0 = sum0 / count;
  const double mean1 = sum1 / count;
  const double variance = std::max(0.0, sq / count - mean0 * mean0 - mean1 * mean1);

  BuiltinExtractor out;
  out.config_ = cfg;
  const bool degenerate = variance == 0.0;
  if (degenerate) out.warnings_.push_back("all demonstration actions are constant; skills collapse to a single cluster");
  const double base = degenerate ? 1.0 : variance * cfg.segment_length;
  const std::uint64_t kseed = derive_seed(seed, "kmeans");

  std::vector<Candidate> candidates;
  for (double factor : {0.25, 0.5, 1.0, 2.0, 4.0, 8.0}) {
    Candidate c;
    c.penalty = base * factor;
    std::vector<Feature> points;
    std::size_t total_segments = 0;
    for (std::size_t i = 0; i < actions.size(); ++i) {
      c.boundaries.push_back(changepoints(actions[i], c.penalty, cfg.h_min, cfg.h_max));
      const auto& b = c.boundaries.back();
      total_segments += b.size() - 1;
      for (std::size_t j = 0; j + 1 < b.size(); ++j) {
        if (b[j + 1] - b[j] < cfg.h_min) continue;
        points.push_back(segment_feature(std::span<const ActionVector>(actions[i].data() + b[j], b[j + 1] - b[j])));
        c.kept.emplace_back(i, j);
      }
    }
    c.mean_segments = static_cast<double>(total_segments) / static_cast<double>(actions.size());
    if (!points.empty()) {
      c.clusters = kmeans(points, cfg.latent_dim, kseed, max_iterations);
      c.entropy = label_entropy(c.clusters.labels);
    }
    candidates.push_back(std::move(c));
    if (degenerate) break;
  }

  const double expected = cfg.segments_per_demo;
  const Candidate* chosen = nullptr;
  for (const auto& c : candidates) {
    if (c.entropy < 0) continue;
    if (c.mean_segments < expected / 2.0 || c.mean_segments > expected * 2.0) continue;
    if (chosen == nullptr || c.entropy > chosen->entropy) chosen = &c;
  }
  if (chosen == nullptr) {
    double best_gap = std::numeric_limits<double>::infinity();
    for (const auto& c : candidates) {
      if (c.entropy < 0) continue;
      const double gap = std::abs(std::log(c.mean_segments / expected));
      if (gap < best_gap) {
        best_gap = gap;
        chosen = &c;
      }
    }
    if (chosen == nullptr) throw Error("no demonstration segment reaches the minimum length h_min");
    out.warnings_.push_back("no penalty gives the expected segment count; using the closest");
  }

  out.penalty_ = chosen->penalty;
  out.centroids_ = chosen->clusters.centroids;
  out.library_.latent_dim = cfg.latent_dim;
  std::map<int, std::vector<Feature>> member_features;
  for (std::size_t p = 0; p < chosen->kept.size(); ++p) {
    const auto [i, j] = chosen->kept[p];
    const auto& b = chosen->boundaries[i];
    const int skill = chosen->clusters.labels[p];
    out.library_.segments[skill].push_back({sorted[i]->id, b[j], b[j + 1]});
    member_features[skill].push_back(
        segment_feature(std::span<const ActionVector>(actions[i].data() + b[j], b[j + 1] - b[j])));
  }
  out.library_.profiles = profiles_of(out.library_, member_features);
  if (!degenerate && member_features.size() == 1) {
    out.warnings_.push_back("all segments fell into a single cluster");
  }
  out.fitted_ = true;
  return out;
}

// ---------------------------------------------------------------------------
// Imported labels
// ---------------------------------------------------------------------------

ImportedExtractor import_segmentations(const Json& records, std::span<const Trajectory> demos, int latent_dim) {
  if (!records.is_array()) throw ParseError("segmentation file must hold a list of records");
  std::vector<std::pair<std::string, SkillSegmentation>> parsed;
  int max_skill = -1;
  for (std::size_t r = 0; r < records.size(); ++r) {
    const Json& rec = records[r];
    SkillSegmentation seg;
    std::string id;
    try {
      id = require_field(rec, "trajectory_id").get<std::string>();
      seg.skills = require_field(rec, "skills").get<std::vector<int>>();
      seg.boundaries = require_field(rec, "boundaries").get<std::vector<int>>();
    } catch (const Json::exception& e) {
      throw ParseError("segmentation record " + std::to_string(r) + ": " + e.what());
    }
    for (int s : seg.skills) max_skill = std::max(max_skill, s);
    parsed.emplace_back(std::move(id), std::move(seg));
  }
  ImportedExtractor ex;
  ex.latent_dim_ = latent_dim > 0 ? latent_dim : max_skill + 1;
  if (ex.latent_dim_ < 1) throw ParseError("segmentation file holds no skills");
  ex.library_.latent_dim = ex.latent_dim_;
  std::map<int, std::vector<Feature>> member_features;
  for (auto& [id, seg] : parsed) {
    const Trajectory* traj = nullptr;
    for (const auto& d : demos) {
      if (d.id == id) traj = &d;
    }
    if (traj == nullptr) throw ParseError("segmentation references unknown trajectory '" + id + "'");
    try {
      seg.check(traj->size(), ex.latent_dim_);
    } catch (const Error& e) {
      throw ParseError("segmentation for trajectory '" + id + "': " + e.what());
    }
    if (ex.labels_.contains(id)) throw ParseError("duplicate segmentation for trajectory '" + id + "'");
    const auto actions = traj->actions();
    for (std::size_t j = 0; j < seg.num_segments(); ++j) {
      const int b0 = seg.boundaries[j];
      const int b1 = seg.boundaries[j + 1];
      Feature f = segment_feature(std::span<const ActionVector>(actions.data() + b0, b1 - b0));
      ex.members_.push_back({seg.skills[j], b1 - b0, f});
      ex.library_.segments[seg.skills[j]].push_back({id, b0, b1});
      member_features[seg.skills[j]].push_back(std::move(f));
    }
    ex.labels_.emplace(id, std::pair{traj->size(), seg});
  }
  ex.library_.profiles = profiles_of(ex.library_, member_features);
  return ex;
}

ImportedExtractor import_segmentations(const std::filesystem::path& path, std::span<const Trajectory> demos,
                                       int latent_dim) {
  try {
    return import_segmentations(read_json_file(path), demos, latent_dim);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

SkillSegmentation ImportedExtractor::extract(const Trajectory& traj) const {
  if (members_.empty()) throw Error("extractor not fitted");
  if (traj.empty()) throw Error("cannot segment an empty trajectory");
  if (auto it = labels_.find(traj.id); it != labels_.end() && it->second.first == traj.size()) {
    return it->second.second;
  }
  // Partition minimizing (sum of nearest-member distances, segment count) lexicographically.
  const auto actions = traj.actions();
  const int n = static_cast<int>(actions.size());
  int lmin = std::numeric_limits<int>::max();
  int lmax = 0;
  for (const auto& m : members_) {
    lmin = std::min(lmin, m.length);
    lmax = std::max(lmax, m.length);
  }
  if (n < lmin) lmin = 1;
  auto nearest_member = [&](int a, int b) {
    const Feature f = segment_feature(std::span<const ActionVector>(actions.data() + a, b - a));
    double best = std::numeric_limits<double>::infinity();
    int skill = 0;
    for (const auto& m : members_) {
      const double d = feature_distance(f, m.feature);
      if (d < best) {
        best = d;
        skill = m.skill;
      }
    }
    return std::pair{best, skill};
  };
  using Score = std::pair<double, int>;
  const Score unreachable{std::numeric_limits<double>::infinity(), 0};
  for (int attempt = 0; attempt < 2; ++attempt) {
    std::vector<Score> best(n + 1, unreachable);
    std::vector<int> prev(n + 1, -1);
    std::vector<int> label(n + 1, 0);
    best[0] = {0.0, 0};
    for (int t = 1; t <= n; ++t) {
      for (int s = std::max(0, t - lmax); s <= t - lmin; ++s) {
        if (best[s] == unreachable) continue;
        const auto [d, skill] = nearest_member(s, t);
        const Score cand{best[s].first + d, best[s].second + 1};
        if (cand < best[t]) {
          best[t] = cand;
          prev[t] = s;
          label[t] = skill;
        }
      }
    }
    if (best[n] == unreachable) {
      lmin = 1;
      lmax = std::max(lmax, n);
      continue;
    }
    SkillSegmentation seg;
    for (int t = n; t != 0; t = prev[t]) {
      seg.boundaries.push_back(t);
      seg.skills.push_back(label[t]);
    }
    seg.boundaries.push_back(0);
    std::reverse(seg.boundaries.begin(), seg.boundaries.end());
    std::reverse(seg.skills.begin(), seg.skills.end());
    return seg;
  }
  throw Error("no segmentation found for trajectory '" + traj.id + "'");
}

Json ImportedExtractor::to_json() const {
  Json labels = Json::array();
  for (const auto& [id, entry] : labels_) {
    Json rec = segmentation_to_json(id, entry.second);
    rec["length"] = entry.first;
    labels.push_back(std::move(rec));
  }
  Json members = Json::array();
  for (const auto& m : members_) members.push_back(Json{{"skill", m.skill}, {"length", m.length}, {"feature", m.feature}});
  return Json{{"kind", kind()}, {"latent_dim", latent_dim_}, {"labels", labels}, {"members", members},
              {"library", library_refs_to_json(library_)}};
}

ImportedExtractor ImportedExtractor::from_json(const Json& j) {
  ImportedExtractor e;
  e.latent_dim_ = require_field(j, "latent_dim").get<int>();
  for (const auto& rec : require_field(j, "labels")) {
    SkillSegmentation seg{rec.at("skills").get<std::vector<int>>(), rec.at("boundaries").get<std::vector<int>>()};
    e.labels_.emplace(rec.at("trajectory_id").get<std::string>(), std::pair{rec.at("length").get<std::size_t>(), seg});
  }
  for (const auto& m : require_field(j, "members")) {
    e.members_.push_back({m.at("skill").get<int>(), m.at("length").get<int>(), m.at("feature").get<Feature>()});
  }
  e.library_ = library_from_json(require_field(j, "library"));
  return e;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

std::unique_ptr<SkillExtractor> extractor_from_json(const Json& j) {
  const std::string kind = require_field(j, "kind").get<std::string>();
  if (kind == "builtin") return std::make_unique<BuiltinExtractor>(BuiltinExtractor::from_json(j));
  if (kind == "imported") return std::make_unique<ImportedExtractor>(ImportedExtractor::from_json(j));
  if (kind == "time_heuristic") return std::make_unique<TimeHeuristicExtractor>(require_field(j, "k").get<int>());
  throw ParseError("unknown extractor kind '" + kind + "'");
}

void save_extractor(const SkillExtractor& extractor, const std::filesystem::path& path) {
  write_json_file(path, extractor.to_json());
}

std::unique_ptr<SkillExtractor> load_extractor(const std::filesystem::path& path) {
  try {
    return extractor_from_json(read_json_file(path));
  } catch (const Json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

Json library_to_json(const SkillLibrary& library, std::span<const Trajectory> demos) {
  Json out = Json::array();
  for (const auto& [skill, refs] : library.segments) {
    if (refs.empty()) continue;
    const auto& ref = refs.front();
    const Trajectory& t = find_trajectory(demos, ref.trajectory_id);
    Json trace = Json::array();
    for (int i = ref.begin; i <= ref.end; ++i) trace.push_back(t.state_at(static_cast<std::size_t>(i)));
    out.push_back(Json{{"skill_id", skill}, {"representative_trace", trace}});
  }
  return out;
}

const SkillLibrary* skill_library_of(const SkillExtractor& extractor) {
  if (const auto* b = dynamic_cast<const BuiltinExtractor*>(&extractor)) return &b->library();
  if (const auto* im = dynamic_cast<const ImportedExtractor*>(&extractor)) return &im->library();
  return nullptr;
}

}  // namespace teach

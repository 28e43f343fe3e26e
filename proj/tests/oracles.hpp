#pragma once

// Brute-force checks shared by the unit tests and the acceptance run.

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "teach/curriculum.hpp"
#include "teach/envs.hpp"
#include "teach/extract.hpp"
#include "teach/random.hpp"
#include "teach/student.hpp"

namespace oracle {

using teach::LabelMap;
using teach::Rng;

inline LabelMap random_labels(Rng& rng, std::size_t scenarios, int skills, std::size_t max_len) {
  LabelMap labels;
  for (std::size_t i = 0; i < scenarios; ++i) {
    std::vector<int> seq;
    const std::size_t len = rng.index(max_len + 1);
    for (std::size_t t = 0; t < len; ++t) seq.push_back(static_cast<int>(rng.index(static_cast<std::size_t>(skills))));
    char id[16];
    std::snprintf(id, sizeof id, "sc-%02zu", i);
    labels[id] = seq;
  }
  return labels;
}

// Every greedy pick has the largest marginal coverage among the remaining
// scenarios and the lowest id among those that tie.
inline bool greedy_steps_optimal(const LabelMap& labels, const std::vector<std::string>& picks) {
  std::set<int> covered;
  std::set<std::string> used;
  for (const auto& p : picks) {
    if (!labels.contains(p) || used.contains(p)) return false;
    std::size_t best = 0;
    std::string best_id;
    for (const auto& [id, seq] : labels) {
      if (used.contains(id)) continue;
      std::set<int> u = covered;
      u.insert(seq.begin(), seq.end());
      if (best_id.empty() || u.size() > best) {
        best = u.size();
        best_id = id;
      }
    }
    std::set<int> mine = covered;
    mine.insert(labels.at(p).begin(), labels.at(p).end());
    if (mine.size() != best || p != best_id) return false;
    covered = std::move(mine);
    used.insert(p);
  }
  return true;
}

// n-gram counts against a scan over every tuple in skills^n.
inline bool ngram_counts_match(const LabelMap& labels, int n, int skills) {
  const teach::NGramTable table = teach::ngram_frequencies(labels, n);
  long expected_total = 0;
  for (const auto& [id, seq] : labels) expected_total += std::max<long>(static_cast<long>(seq.size()) - n + 1, 0);
  if (table.total() != expected_total) return false;
  std::vector<int> tuple(static_cast<std::size_t>(n), 0);
  long seen = 0;
  while (true) {
    long count = 0;
    for (const auto& [id, seq] : labels) {
      for (std::size_t i = 0; i + n <= seq.size(); ++i) {
        bool eq = true;
        for (int k = 0; k < n; ++k) eq = eq && seq[i + k] == tuple[k];
        count += eq;
      }
    }
    auto it = table.counts.find(tuple);
    const long got = it == table.counts.end() ? 0 : it->second;
    if (got != count) return false;
    seen += count > 0;
    int k = n - 1;
    while (k >= 0 && ++tuple[k] == skills) tuple[k--] = 0;
    if (k < 0) break;
  }
  return seen == static_cast<long>(table.counts.size());
}

// A student that drops exactly the planted skills from every scenario; the
// planted skills must come out as the k lowest-expertise skills.
inline bool plant_and_recover(Rng& rng, int skills, int k) {
  const LabelMap expert = random_labels(rng, 10, skills, 8);
  std::set<int> present;
  for (const auto& [id, seq] : expert) present.insert(seq.begin(), seq.end());
  std::vector<int> cand(present.begin(), present.end());
  if (static_cast<int>(cand.size()) < k) return plant_and_recover(rng, skills, k);
  rng.shuffle(cand);
  const std::set<int> planted(cand.begin(), cand.begin() + k);
  LabelMap student;
  std::map<std::string, double> rewards;
  std::vector<std::string> ids;
  for (const auto& [id, seq] : expert) {
    std::vector<int> s;
    for (int m : seq) {
      if (!planted.contains(m)) s.push_back(m);
    }
    rng.shuffle(s);
    student[id] = s;
    rewards[id] = -rng.uniform(0.01, 1.0);
    ids.push_back(id);
  }
  const auto e = teach::assess_expertise(ids, expert, student, rewards, skills);
  const auto low = teach::lowest_expertise_skills(e, k);
  return std::set<int>(low.begin(), low.end()) == planted;
}

// Structural checks on one drill against its sources.
inline bool drill_well_formed(const teach::Drill& d, const teach::LabelMap& labels, const teach::Environment& env,
                              std::span<const teach::Trajectory> demos) {
  if (std::find(d.ngram.begin(), d.ngram.end(), d.target_skill) == d.ngram.end()) return false;
  std::size_t sum = 0;
  for (const auto& p : d.pieces) sum += static_cast<std::size_t>(p.segment.length());
  if (d.actions.size() != static_cast<std::size_t>(d.repetitions) * sum) return false;
  if (d.pieces.size() != d.ngram.size()) return false;
  for (std::size_t i = 0; i < d.pieces.size(); ++i) {
    if (d.pieces[i].skill != d.ngram[i]) return false;
  }
  bool window = false;
  for (const auto& [id, seq] : labels) {
    window = window || std::search(seq.begin(), seq.end(), d.ngram.begin(), d.ngram.end()) != seq.end();
  }
  if (!window) return false;
  const auto& first = teach::find_trajectory(demos, d.pieces.front().segment.trajectory_id);
  if (d.initial_state != first.state_at(static_cast<std::size_t>(d.pieces.front().segment.begin))) return false;
  if (d.rendered.size() != d.actions.size()) return false;
  return teach::validate_trajectory(d.rendered, env).ok();
}

// Largest relative error between the analytic gradient and central differences
// over `probes` random (parameters, batch) draws, each probe comparing the full
// gradient vector: |g - g_fd| / max(|g|, |g_fd|).
inline double gradient_check(int probes, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int p = 0; p < probes; ++p) {
    teach::PolicyNet net = teach::PolicyNet::parking_default(rng.next());
    auto params = net.parameters();
    for (auto& v : params) v += 0.3 * rng.normal();
    net.set_parameters(params);
    const int batch = 1 + static_cast<int>(rng.index(6));
    Eigen::MatrixXd x(teach::kStudentInputDim, batch), y(2, batch);
    for (int c = 0; c < batch; ++c) {
      for (int r = 0; r < teach::kStudentInputDim; ++r) x(r, c) = rng.uniform(-1.5, 1.5);
      y(0, c) = rng.uniform(-1, 1);
      y(1, c) = rng.uniform(-1, 1);
    }
    std::vector<double> g;
    net.loss_and_gradient(x, y, g);
    const double h = 1e-6;
    double diff2 = 0.0, ga2 = 0.0, gf2 = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto q = params;
      q[i] = params[i] + h;
      net.set_parameters(q);
      const double up = net.loss(x, y);
      q[i] = params[i] - h;
      net.set_parameters(q);
      const double down = net.loss(x, y);
      const double fd = (up - down) / (2 * h);
      diff2 += (g[i] - fd) * (g[i] - fd);
      ga2 += g[i] * g[i];
      gf2 += fd * fd;
    }
    net.set_parameters(params);
    worst = std::max(worst, std::sqrt(diff2) / std::max({std::sqrt(ga2), std::sqrt(gf2), 1e-300}));
  }
  return worst;
}

// Two-sided signed-rank p from all 2^n sign assignments of average ranks.
inline double wilcoxon_enumerated_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  }
  const std::size_t n = d.size();
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0, same = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(d[j]) < std::abs(d[i])) ++less;
      else if (j != i && std::abs(d[j]) == std::abs(d[i])) ++same;
    }
    rank[i] = 1 + less + same / 2;
  }
  double observed = 0;
  for (std::size_t i = 0; i < n; ++i) observed += d[i] > 0 ? rank[i] : 0;
  double ge = 0, le = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    double w = 0;
    for (std::size_t i = 0; i < n; ++i) w += (mask >> i & 1u) ? rank[i] : 0;
    ge += w >= observed - 1e-9;
    le += w <= observed + 1e-9;
  }
  const double all = static_cast<double>(1u << n);
  return std::min(1.0, 2 * std::min(ge / all, le / all));
}

}  // namespace oracle

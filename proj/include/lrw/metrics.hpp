#pragma once

// Test-set evaluation, paired margin comparisons and the easy/random/hard
// ordering check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrw/datagen.hpp"
#include "lrw/hardness.hpp"
#include "lrw/models.hpp"

namespace lrw {

struct Evaluation {
  double accuracy = 0.0;
  std::vector<MarginRecord> margins;
};

// Accuracy is the fraction of strictly positive margins: a tie between the
// true class and another class counts as an error.
inline double accuracy_from_margins(std::span<const MarginRecord> m) {
  if (m.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& r : m) ok += r.margin > 0.0;
  return static_cast<double>(ok) / static_cast<double>(m.size());
}

inline Evaluation evaluate(const Mlp& classifier, const Dataset& test) {
  if (classifier.in_dim() != test.dim())
    throw std::invalid_argument("evaluate: classifier expects " + std::to_string(classifier.in_dim()) +
                                " features, test set has " + std::to_string(test.dim()));
  Evaluation e;
  e.margins = probabilistic_margin(classifier, test);
  e.accuracy = accuracy_from_margins(e.margins);
  return e;
}

inline double mean_margin(std::span<const MarginRecord> m) {
  if (m.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : m) s += r.margin;
  return s / static_cast<double>(m.size());
}

// Fixed-width bins over [lo, hi), lo and hi multiples of width. Bin edges are
// (k0 + i) * width with k0 = lo / width so that values like 0.2 land in
// [0.2, 0.4) rather than drifting across an edge. Values outside the range
// are clamped into the first or last bin so the counts always sum to n.
struct Histogram {
  double lo = -2.0;
  double width = 0.2;
  std::vector<std::size_t> counts;

  Histogram() = default;
  Histogram(double lo_, double hi_, double width_) : lo(lo_), width(width_) {
    if (!(width_ > 0.0) || !(hi_ > lo_)) throw std::invalid_argument("Histogram: need lo < hi and width > 0");
    counts.assign(static_cast<std::size_t>(std::llround((hi_ - lo_) / width_)), 0);
  }

  std::size_t bins() const { return counts.size(); }
  double edge(std::size_t i) const { return (std::round(lo / width) + static_cast<double>(i)) * width; }

  std::size_t bin_of(double v) const {
    const double k0 = std::round(lo / width);
    double f = std::floor(v / width) - k0;
    if (f < 0) return 0;
    auto i = static_cast<std::size_t>(f);
    if (i >= bins()) return bins() - 1;
    if (v < edge(i) && i > 0) --i;
    else if (i + 1 < bins() && v >= edge(i + 1)) ++i;
    return i;
  }

  void add(double v) { ++counts[bin_of(v)]; }

  std::size_t total() const {
    std::size_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Sample standard deviation over sqrt(count); absent below two samples.
inline std::optional<double> standard_error(std::span<const double> v) {
  if (v.size() < 2) return std::nullopt;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
}

struct PairedDelta {
  std::vector<double> deltas;  // a - b per instance
  Histogram histogram{-2.0, 2.0, 0.2};
  double mean = 0.0;
  double median = 0.0;
};

inline PairedDelta paired_margin_delta(std::span<const MarginRecord> a, std::span<const MarginRecord> b) {
  if (a.size() != b.size())
    throw std::invalid_argument("paired_margin_delta: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                                " records");
  PairedDelta p;
  p.deltas.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].instance_index != b[i].instance_index)
      throw std::invalid_argument("paired_margin_delta: instance order differs at position " + std::to_string(i));
    p.deltas[i] = a[i].margin - b[i].margin;
    p.histogram.add(p.deltas[i]);
  }
  p.mean = mean_of(p.deltas);
  p.median = lrw::median(p.deltas);
  return p;
}

struct BucketStat {
  double lo = 0.0, hi = 0.0;
  std::size_t count = 0;
  double mean = 0.0;
  std::optional<double> sem;
};

// Mean (target - erm) margin grouped by the ERM margin, buckets [lo, lo+0.2)
// over [-1, 1].
inline std::vector<BucketStat> margin_gain_by_bucket(std::span<const MarginRecord> target,
                                                     std::span<const MarginRecord> erm) {
  if (target.size() != erm.size()) throw std::invalid_argument("margin_gain_by_bucket: length mismatch");
  Histogram h(-1.0, 1.0, 0.2);
  std::vector<std::vector<double>> gains(h.bins());
  for (std::size_t i = 0; i < erm.size(); ++i) gains[h.bin_of(erm[i].margin)].push_back(target[i].margin - erm[i].margin);
  std::vector<BucketStat> out(h.bins());
  for (std::size_t b = 0; b < h.bins(); ++b) {
    out[b].lo = h.edge(b);
    out[b].hi = h.edge(b + 1);
    out[b].count = gains[b].size();
    out[b].mean = mean_of(gains[b]);
    out[b].sem = standard_error(gains[b]);
  }
  return out;
}

// ---- ordering ------------------------------------------------------------

struct SeedScores {
  std::string role;                  // "easy", "random" or "hard"
  std::map<std::uint64_t, double> by_seed;  // seed -> accuracy
};

struct VariantSummary {
  std::string role;
  double mean = 0.0;
  std::optional<double> sem;
  std::size_t seeds = 0;
};

struct OrderingVerdict {
  std::vector<VariantSummary> summaries;  // easy, random, hard
  bool holds = false;
  bool tie = false;
  std::size_t hard_beats_random = 0;
  std::size_t random_beats_easy = 0;
  std::size_t hard_beats_easy = 0;
  std::size_t seeds = 0;
};

inline OrderingVerdict ordering_check(const std::vector<SeedScores>& results) {
  const std::vector<std::string> roles{"easy", "random", "hard"};
  std::map<std::string, const SeedScores*> by_role;
  for (const auto& r : results) {
    if (std::find(roles.begin(), roles.end(), r.role) == roles.end())
      throw std::invalid_argument("ordering_check: unknown role '" + r.role + "'");
    if (!by_role.emplace(r.role, &r).second) throw std::invalid_argument("ordering_check: duplicate role '" + r.role + "'");
  }
  for (const auto& role : roles)
    if (!by_role.count(role)) throw std::invalid_argument("ordering_check: missing role '" + role + "'");
  const auto& ref = by_role["easy"]->by_seed;
  if (ref.empty()) throw std::invalid_argument("ordering_check: no seeds");
  for (const auto& role : roles) {
    const auto& m = by_role[role]->by_seed;
    bool same = m.size() == ref.size();
    for (auto it = m.begin(), jt = ref.begin(); same && it != m.end(); ++it, ++jt) same = it->first == jt->first;
    if (!same) throw std::invalid_argument("ordering_check: seed sets differ between 'easy' and '" + role + "'");
  }
  OrderingVerdict v;
  v.seeds = ref.size();
  for (const auto& role : roles) {
    std::vector<double> acc;
    for (const auto& [s, a] : by_role[role]->by_seed) acc.push_back(a);
    v.summaries.push_back({role, mean_of(acc), standard_error(acc), acc.size()});
  }
  for (const auto& [seed, easy] : ref) {
    const double rnd = by_role["random"]->by_seed.at(seed), hard = by_role["hard"]->by_seed.at(seed);
    v.hard_beats_random += hard > rnd;
    v.random_beats_easy += rnd > easy;
    v.hard_beats_easy += hard > easy;
  }
  const double e = v.summaries[0].mean, r = v.summaries[1].mean, h = v.summaries[2].mean;
  v.tie = e == r || r == h || e == h;
  v.holds = e < r && r < h;
  return v;
}

// ---- reports -------------------------------------------------------------

struct MetricsReport {
  std::string model_tag;
  double test_accuracy = 0.0;
  double mean_margin = 0.0;
  Histogram paired_margin_deltas{-2.0, 2.0, 0.2};
  double delta_mean = 0.0;
  double delta_median = 0.0;
  std::size_t seeds_aggregated = 1;
};

// Report for one model against a reference (usually ERM) on the same test set.
inline MetricsReport make_report(const std::string& tag, const Evaluation& model, const Evaluation& reference) {
  MetricsReport r;
  r.model_tag = tag;
  r.test_accuracy = model.accuracy;
  r.mean_margin = mean_margin(model.margins);
  const auto p = paired_margin_delta(model.margins, reference.margins);
  r.paired_margin_deltas = p.histogram;
  r.delta_mean = p.mean;
  r.delta_median = p.median;
  return r;
}

inline void write_histogram_csv(std::ostream& os, const Histogram& h) {
  os << "lo,hi,count\n";
  for (std::size_t i = 0; i < h.bins(); ++i)
    os << detail::fmt_double(h.edge(i)) << ',' << detail::fmt_double(h.edge(i + 1)) << ',' << h.counts[i] << '\n';
}

inline void write_buckets_csv(std::ostream& os, const std::vector<BucketStat>& b) {
  os << "lo,hi,count,mean,sem\n";
  for (const auto& s : b)
    os << detail::fmt_double(s.lo) << ',' << detail::fmt_double(s.hi) << ',' << s.count << ','
       << detail::fmt_double(s.mean) << ',' << (s.sem ? detail::fmt_double(*s.sem) : "") << '\n';
}

inline void write_margins_csv(std::ostream& os, std::span<const MarginRecord> m) {
  os << "instance_index,margin\n";
  for (const auto& r : m) os << r.instance_index << ',' << detail::fmt_double(r.margin) << '\n';
}

}  // namespace lrw

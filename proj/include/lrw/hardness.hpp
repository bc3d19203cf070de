#pragma once

// Probabilistic margins and the train-twice validation carving
// (hard / easy / random).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrw/datagen.hpp"
#include "lrw/errors.hpp"
#include "lrw/models.hpp"

namespace lrw {

struct MarginRecord {
  std::size_t instance_index = 0;
  double margin = 0.0;  // p_y - max_{j != y} p_j, in [-1, 1]
  bool operator==(const MarginRecord&) const = default;
};

struct SplitAssignment {
  std::vector<std::size_t> train_indices;  // ascending
  std::vector<std::size_t> val_indices;    // ascending
  double delta_realized = 0.0;

  std::size_t size() const { return train_indices.size() + val_indices.size(); }
  bool operator==(const SplitAssignment&) const = default;

  static SplitAssignment from_val_mask(const std::vector<char>& is_val) {
    SplitAssignment s;
    for (std::size_t i = 0; i < is_val.size(); ++i) (is_val[i] ? s.val_indices : s.train_indices).push_back(i);
    s.delta_realized = is_val.empty() ? 0.0 : static_cast<double>(s.val_indices.size()) / static_cast<double>(is_val.size());
    return s;
  }

  std::vector<char> val_mask() const {
    std::vector<char> m(size(), 0);
    for (auto i : val_indices) m[i] = 1;
    return m;
  }
};

enum class SplitVariant { Hard, Easy, Random };

inline std::string to_string(SplitVariant v) {
  switch (v) {
    case SplitVariant::Hard: return "hard";
    case SplitVariant::Easy: return "easy";
    case SplitVariant::Random: return "random";
  }
  return "?";
}

// Margins from a matrix of class probabilities, one row per instance.
inline std::vector<double> margins_from_probs(const Tensor& probs, std::span<const std::size_t> labels) {
  const std::size_t n = probs.rows(), C = probs.cols();
  if (labels.size() != n) throw std::invalid_argument("margins_from_probs: label count mismatch");
  std::vector<double> m(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= C) throw std::invalid_argument("margins_from_probs: label out of range");
    double best_other = C > 1 ? -1.0 : 0.0;
    for (std::size_t j = 0; j < C; ++j)
      if (j != labels[i]) best_other = std::max(best_other, probs.at(i, j));
    m[i] = probs.at(i, labels[i]) - best_other;
  }
  return m;
}

inline Tensor softmax_probs(const Tensor& logits) {
  ad::Tape tape;
  return ad::softmax_rows(tape.constant(logits)).value();
}

inline std::vector<MarginRecord> probabilistic_margin(const Mlp& classifier, const Dataset& d) {
  if (classifier.out_dim() != d.n_classes)
    throw std::invalid_argument("probabilistic_margin: classifier has " + std::to_string(classifier.out_dim()) +
                                " outputs for " + std::to_string(d.n_classes) + " classes");
  const auto m = margins_from_probs(softmax_probs(classifier.forward(d.features)), d.labels);
  std::vector<MarginRecord> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = {i, m[i]};
  return out;
}

inline std::size_t val_count(std::size_t n, double delta) {
  if (!(delta > 0.0 && delta < 1.0))
    throw std::invalid_argument("carve_split: delta must lie in (0, 1), got " + detail::fmt_double(delta));
  const auto k = static_cast<std::size_t>(std::floor(delta * static_cast<double>(n)));
  if (k < 1) throw std::invalid_argument("carve_split: floor(delta * n) must be at least 1");
  return k;
}

// hard: the floor(delta * n) lowest margins go to validation; easy: the
// highest. Equal margins are ordered by ascending instance index. random:
// uniform without replacement from `seed`.
inline SplitAssignment carve_split(std::span<const MarginRecord> margins, SplitVariant variant, double delta,
                                   std::uint64_t seed) {
  const std::size_t n = margins.size();
  const std::size_t k = val_count(n, delta);
  std::size_t max_index = 0;
  for (const auto& r : margins) max_index = std::max(max_index, r.instance_index);
  if (max_index + 1 != n) throw std::invalid_argument("carve_split: instance indices must cover 0..n-1");
  std::vector<MarginRecord> order(margins.begin(), margins.end());
  switch (variant) {
    case SplitVariant::Hard:
      std::sort(order.begin(), order.end(), [](const MarginRecord& a, const MarginRecord& b) {
        return a.margin != b.margin ? a.margin < b.margin : a.instance_index < b.instance_index;
      });
      break;
    case SplitVariant::Easy:
      std::sort(order.begin(), order.end(), [](const MarginRecord& a, const MarginRecord& b) {
        return a.margin != b.margin ? a.margin > b.margin : a.instance_index < b.instance_index;
      });
      break;
    case SplitVariant::Random: {
      std::sort(order.begin(), order.end(),
                [](const MarginRecord& a, const MarginRecord& b) { return a.instance_index < b.instance_index; });
      std::mt19937_64 rng(seed);
      std::shuffle(order.begin(), order.end(), rng);
      break;
    }
  }
  std::vector<char> is_val(n, 0);
  for (std::size_t t = 0; t < k; ++t) is_val[order[t].instance_index] = 1;
  return SplitAssignment::from_val_mask(is_val);
}

// Keeps every class represented in the training side: for each class missing
// from train, its validation member with the smallest |margin| moves back to
// train and the lowest-margin training instance of a class that stays
// represented takes its place, so the validation size is preserved.
inline SplitAssignment stratified_guard(const SplitAssignment& a, const Dataset& d,
                                        std::span<const MarginRecord> margins) {
  if (a.size() != d.size()) throw std::invalid_argument("stratified_guard: split does not cover the dataset");
  const auto counts = d.class_counts();
  for (std::size_t c = 0; c < d.n_classes; ++c)
    if (counts[c] == 1) throw std::invalid_argument("stratified_guard: class " + std::to_string(c) + " has one instance");
  std::vector<double> margin(d.size(), 0.0);
  for (const auto& r : margins) margin.at(r.instance_index) = r.margin;
  auto is_val = a.val_mask();
  auto train_count = [&](std::size_t c) {
    std::size_t k = 0;
    for (std::size_t i = 0; i < d.size(); ++i) k += (!is_val[i] && d.labels[i] == c);
    return k;
  };
  for (std::size_t c = 0; c < d.n_classes; ++c) {
    if (counts[c] == 0 || train_count(c) > 0) continue;
    std::size_t back = d.size();
    for (std::size_t i = 0; i < d.size(); ++i)
      if (is_val[i] && d.labels[i] == c && (back == d.size() || std::abs(margin[i]) < std::abs(margin[back]))) back = i;
    std::size_t out = d.size();
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (is_val[i] || d.labels[i] == c || train_count(d.labels[i]) < 2) continue;
      if (out == d.size() || margin[i] < margin[out]) out = i;
    }
    if (back == d.size() || out == d.size())
      throw std::invalid_argument("stratified_guard: cannot place class " + std::to_string(c) + " in the training split");
    is_val[back] = 0;
    is_val[out] = 1;
  }
  return SplitAssignment::from_val_mask(is_val);
}

// Split file: instance_index,membership,margin
inline void save_split_csv(const SplitAssignment& s, std::span<const double> margins, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << "instance_index,membership,margin\n";
  const auto is_val = s.val_mask();
  for (std::size_t i = 0; i < is_val.size(); ++i)
    os << i << ',' << (is_val[i] ? "val" : "train") << ',' << (i < margins.size() ? detail::fmt_double(margins[i]) : "")
       << '\n';
  if (!os) throw IoError("write failed for '" + path + "'");
}

}  // namespace lrw

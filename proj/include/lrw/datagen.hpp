#pragma once

// Synthetic datasets, label corruption, class skew and CSV ingestion.
// Every generator is a pure function of its arguments, seed included.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrw/errors.hpp"
#include "lrw/models.hpp"
#include "lrw/tensor.hpp"

namespace lrw {

struct Dataset {
  Tensor features;  // [n x d]
  std::vector<std::size_t> labels;
  std::size_t n_classes = 0;
  std::string provenance;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }

  // Equality ignores provenance.
  bool operator==(const Dataset& o) const {
    return features == o.features && labels == o.labels && n_classes == o.n_classes;
  }

  void validate() const {
    if (labels.empty()) throw std::invalid_argument("Dataset: no instances");
    if (features.rank() != 2 || features.rows() != labels.size())
      throw std::invalid_argument("Dataset: feature rows do not match label count");
    for (auto y : labels)
      if (y >= n_classes) throw std::invalid_argument("Dataset: label " + std::to_string(y) + " >= n_classes");
    for (double v : features.data())
      if (!std::isfinite(v)) throw std::invalid_argument("Dataset: non-finite feature value");
  }

  Tensor rows(std::span<const std::size_t> idx) const {
    const std::size_t d = dim();
    Tensor out({idx.size(), d});
    for (std::size_t i = 0; i < idx.size(); ++i)
      std::copy_n(features.data().begin() + static_cast<std::ptrdiff_t>(idx[i] * d), d,
                  out.data().begin() + static_cast<std::ptrdiff_t>(i * d));
    return out;
  }

  std::vector<std::size_t> labels_at(std::span<const std::size_t> idx) const {
    std::vector<std::size_t> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = labels[idx[i]];
    return out;
  }

  Dataset subset(std::span<const std::size_t> idx, std::string tag = {}) const {
    Dataset d{rows(idx), labels_at(idx), n_classes, tag.empty() ? provenance : std::move(tag)};
    return d;
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> c(n_classes, 0);
    for (auto y : labels) ++c[y];
    return c;
  }
};

inline std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

// Class means sit at pairwise distance `separation`: scaled basis vectors
// when dim >= n_classes, otherwise a regular polygon in the first two axes
// (or a line when dim == 1).
inline std::vector<std::vector<double>> mixture_means(std::size_t n_classes, std::size_t dim, double separation) {
  std::vector<std::vector<double>> means(n_classes, std::vector<double>(dim, 0.0));
  if (n_classes == 1) return means;
  if (n_classes == 2) {
    means[0][0] = -separation / 2;
    means[1][0] = separation / 2;
  } else if (dim >= n_classes) {
    for (std::size_t c = 0; c < n_classes; ++c) means[c][c] = separation / std::numbers::sqrt2;
  } else if (dim >= 2) {
    const double radius = separation / (2.0 * std::sin(std::numbers::pi / static_cast<double>(n_classes)));
    for (std::size_t c = 0; c < n_classes; ++c) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(n_classes);
      means[c][0] = radius * std::cos(a);
      means[c][1] = radius * std::sin(a);
    }
  } else {
    for (std::size_t c = 0; c < n_classes; ++c) means[c][0] = separation * static_cast<double>(c);
  }
  return means;
}

inline Dataset make_gaussian_mixture(std::size_t n_per_class, std::size_t n_classes, std::size_t dim,
                                     double separation, std::uint64_t seed) {
  if (n_per_class == 0 || n_classes == 0 || dim == 0)
    throw std::invalid_argument("make_gaussian_mixture: counts must be positive");
  if (!(separation >= 0.0) || !std::isfinite(separation))
    throw std::invalid_argument("make_gaussian_mixture: separation must be finite and non-negative");
  const auto means = mixture_means(n_classes, dim, separation);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t n = n_per_class * n_classes;
  Dataset d{Tensor({n, dim}), std::vector<std::size_t>(n), n_classes,
            "gaussian_mixture(n_per_class=" + std::to_string(n_per_class) + ",classes=" + std::to_string(n_classes) +
                ",dim=" + std::to_string(dim) + ",separation=" + detail::fmt_double(separation) +
                ",seed=" + std::to_string(seed) + ")"};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % n_classes;
    d.labels[i] = c;
    for (std::size_t j = 0; j < dim; ++j) d.features.at(i, j) = means[c][j] + noise(rng);
  }
  return d;
}

// Interleaved half circles; class 0 is the upper arc.
inline Dataset make_two_moons(std::size_t n, double noise_std, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("make_two_moons: need at least 2 points");
  if (!(noise_std >= 0.0)) throw std::invalid_argument("make_two_moons: noise_std must be non-negative");
  const std::size_t n_outer = (n + 1) / 2, n_inner = n / 2;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset d{Tensor({n, 2}), std::vector<std::size_t>(n), 2,
            "two_moons(n=" + std::to_string(n) + ",noise_std=" + detail::fmt_double(noise_std) +
                ",seed=" + std::to_string(seed) + ")"};
  auto t_at = [](std::size_t i, std::size_t m) {
    return m > 1 ? std::numbers::pi * static_cast<double>(i) / static_cast<double>(m - 1) : 0.0;
  };
  for (std::size_t i = 0; i < n_outer; ++i) {
    const double t = t_at(i, n_outer);
    d.features.at(i, 0) = std::cos(t);
    d.features.at(i, 1) = std::sin(t);
    d.labels[i] = 0;
  }
  for (std::size_t i = 0; i < n_inner; ++i) {
    const double t = t_at(i, n_inner);
    d.features.at(n_outer + i, 0) = 1.0 - std::cos(t);
    d.features.at(n_outer + i, 1) = 0.5 - std::sin(t);
    d.labels[n_outer + i] = 1;
  }
  if (noise_std > 0.0)
    for (double& v : d.features.data()) v += noise_std * noise(rng);
  return d;
}

enum class NoiseKind { UniformFlip, InstanceDependent };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::UniformFlip;
  double rate = 0.0;
  std::uint64_t seed = 0;
};

inline std::string to_string(NoiseKind k) { return k == NoiseKind::UniformFlip ? "uniform_flip" : "instance_dependent"; }

inline NoiseKind noise_kind_from_string(const std::string& s) {
  if (s == "uniform_flip") return NoiseKind::UniformFlip;
  if (s == "instance_dependent") return NoiseKind::InstanceDependent;
  throw std::invalid_argument("unknown noise kind '" + s + "'");
}

// For each instance: index of the closest class mean other than its own
// label, and the distance to it.
inline std::vector<std::pair<std::size_t, double>> nearest_other_mean(const Dataset& d) {
  const std::size_t n = d.size(), dim = d.dim(), C = d.n_classes;
  std::vector<std::vector<double>> mean(C, std::vector<double>(dim, 0.0));
  auto counts = d.class_counts();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j) mean[d.labels[i]][j] += d.features.at(i, j);
  for (std::size_t c = 0; c < C; ++c)
    for (auto& v : mean[c]) v = counts[c] ? v / static_cast<double>(counts[c]) : v;
  std::vector<std::pair<std::size_t, double>> out(n, {0, INFINITY});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < C; ++c) {
      if (c == d.labels[i] || counts[c] == 0) continue;
      double s = 0.0;
      for (std::size_t j = 0; j < dim; ++j) s += (d.features.at(i, j) - mean[c][j]) * (d.features.at(i, j) - mean[c][j]);
      if (s < out[i].second) out[i] = {c, s};
    }
  return out;
}

// uniform_flip: exactly round(rate * n) instances, drawn without replacement,
// move to a uniformly chosen other class.
// instance_dependent: instances are ranked by distance to the nearest other
// class mean; the closest gets the highest flip probability, linearly in rank,
// with mean probability `rate`. A flip moves the label to that nearest class.
inline Dataset inject_noise(const Dataset& d, const NoiseSpec& spec) {
  if (!(spec.rate >= 0.0) || spec.rate > 0.5)
    throw std::invalid_argument("inject_noise: rate must lie in [0, 0.5], got " + detail::fmt_double(spec.rate));
  Dataset out = d;
  out.provenance = d.provenance + "+noise(" + to_string(spec.kind) + "," + detail::fmt_double(spec.rate) + ")";
  if (spec.rate == 0.0) return out;
  if (d.n_classes < 2) throw std::invalid_argument("inject_noise: need at least two classes");
  std::mt19937_64 rng(spec.seed);
  const std::size_t n = d.size();
  if (spec.kind == NoiseKind::UniformFlip) {
    const auto k = static_cast<std::size_t>(std::llround(spec.rate * static_cast<double>(n)));
    auto idx = iota_indices(n);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::uniform_int_distribution<std::size_t> other(0, d.n_classes - 2);
    for (std::size_t t = 0; t < k; ++t) {
      const std::size_t i = idx[t];
      std::size_t c = other(rng);
      if (c >= d.labels[i]) ++c;
      out.labels[i] = c;
    }
    return out;
  }
  const auto near = nearest_other_mean(d);
  auto order = iota_indices(n);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return near[a].second < near[b].second; });
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = order[r];
    const double p = 2.0 * spec.rate * static_cast<double>(n - r) / static_cast<double>(n + 1);
    if (u(rng) < p) out.labels[i] = near[i].first;
  }
  return out;
}

struct SkewSpec {
  double ratio = 1.0;
  std::uint64_t seed = 0;
};

// Class c keeps round(count_c * ratio^(-c / (C - 1))) instances: class 0
// keeps everything, the last class keeps 1/ratio. Kept instances retain
// their original order.
inline Dataset apply_skew(const Dataset& d, const SkewSpec& spec) {
  if (!(spec.ratio >= 1.0) || !std::isfinite(spec.ratio))
    throw std::invalid_argument("apply_skew: ratio must be >= 1");
  if (spec.ratio == 1.0 || d.n_classes < 2) return d;
  const std::size_t C = d.n_classes;
  auto counts = d.class_counts();
  std::vector<std::size_t> keep(C);
  for (std::size_t c = 0; c < C; ++c) {
    const double frac = std::pow(spec.ratio, -static_cast<double>(c) / static_cast<double>(C - 1));
    keep[c] = static_cast<std::size_t>(std::llround(static_cast<double>(counts[c]) * frac));
    if (counts[c] > 0 && keep[c] == 0)
      throw std::invalid_argument("apply_skew: ratio " + detail::fmt_double(spec.ratio) + " would empty class " +
                                  std::to_string(c));
  }
  std::mt19937_64 rng(spec.seed);
  std::vector<char> kept(d.size(), 0);
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d.labels[i] == c) members.push_back(i);
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t t = 0; t < keep[c]; ++t) kept[members[t]] = 1;
  }
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (kept[i]) idx.push_back(i);
  return d.subset(idx, d.provenance + "+skew(" + detail::fmt_double(spec.ratio) + ")");
}

// ---- CSV -----------------------------------------------------------------
// Header `f0,...,f{d-1},label`, one instance per newline-terminated row.

inline void save_csv(const Dataset& d, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  for (std::size_t j = 0; j < d.dim(); ++j) os << 'f' << j << ',';
  os << "label\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = 0; j < d.dim(); ++j) os << detail::fmt_double(d.features.at(i, j)) << ',';
    os << d.labels[i] << '\n';
  }
  if (!os) throw IoError("write failed for '" + path + "'");
}

// n_classes is max(label) + 1 unless a larger value is supplied.
inline Dataset load_csv(const std::string& path, std::size_t min_classes = 0) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(is, line) || line.empty()) throw std::invalid_argument(path + ": no rows");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    for (std::string tok; std::getline(ss, tok, ',');) header.push_back(tok);
  }
  if (header.size() < 2 || header.back() != "label")
    throw std::invalid_argument(path + ":1: header must be f0,...,fk,label");
  for (std::size_t j = 0; j + 1 < header.size(); ++j)
    if (header[j] != "f" + std::to_string(j))
      throw std::invalid_argument(path + ":1: expected column 'f" + std::to_string(j) + "', got '" + header[j] + "'");
  const std::size_t dim = header.size() - 1;
  std::vector<double> feats;
  std::vector<std::size_t> labels;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string tok; std::getline(ss, tok, ',');) cells.push_back(tok);
    const std::string where = path + ":" + std::to_string(lineno);
    if (cells.size() != dim + 1)
      throw std::invalid_argument(where + ": expected " + std::to_string(dim + 1) + " columns, got " +
                                  std::to_string(cells.size()));
    for (std::size_t j = 0; j < dim; ++j) {
      const double v = detail::parse_double(cells[j], where);
      if (!std::isfinite(v)) throw std::invalid_argument(where + ": non-finite feature value");
      feats.push_back(v);
    }
    std::size_t y = 0;
    const auto& lab = cells.back();
    auto r = std::from_chars(lab.data(), lab.data() + lab.size(), y);
    if (r.ec != std::errc() || r.ptr != lab.data() + lab.size())
      throw std::invalid_argument(where + ": label '" + lab + "' is not a non-negative integer");
    labels.push_back(y);
  }
  if (labels.empty()) throw std::invalid_argument(path + ": no rows");
  const std::size_t C = std::max(min_classes, *std::max_element(labels.begin(), labels.end()) + 1);
  Dataset d{Tensor({labels.size(), dim}, std::move(feats)), std::move(labels), C, "csv:" + path};
  d.validate();
  return d;
}

}  // namespace lrw

#pragma once

// Exhaustive evaluation of three finite objectives over 0/1 loss:
//
//   dual DRO   max_{|S|=k} min_h  sum_{i in S} loss(h, i)
//   DRO        min_h  max_{|S|=k} sum_{i in S} loss(h, i)
//   tri-level  max_{|S|=k} min_{w in grid^{S^c}} sum_{i in S} loss(h*(w), i),
//              h*(w) = first listed argmin_h sum_{i notin S} w_i loss(h, i)
//
// with k = floor(delta * n). Points and hypotheses are small enough that
// subsets are bitmasks.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrw/errors.hpp"
#include "lrw/models.hpp"

namespace lrw::oracle {

inline constexpr std::size_t kMaxPoints = 14;

struct FinitePoint {
  std::size_t x = 0;
  std::size_t y = 0;
  bool operator==(const FinitePoint&) const = default;
};

struct FiniteInstance {
  std::vector<FinitePoint> points;
  std::vector<std::vector<std::size_t>> hypotheses;  // hypotheses[h][x] = predicted class
  std::size_t domain = 0;
  std::size_t n_classes = 2;
  double delta = 0.5;

  std::size_t subset_size() const {
    return static_cast<std::size_t>(std::floor(delta * static_cast<double>(points.size())));
  }

  void validate() const {
    if (points.size() > kMaxPoints)
      throw std::invalid_argument("FiniteInstance: " + std::to_string(points.size()) + " points exceed the budget of " +
                                  std::to_string(kMaxPoints));
    if (points.empty()) throw std::invalid_argument("FiniteInstance: no points");
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("FiniteInstance: delta must lie in (0, 1)");
    if (subset_size() < 1) throw std::invalid_argument("FiniteInstance: floor(delta * n) must be at least 1");
    if (hypotheses.empty()) throw std::invalid_argument("FiniteInstance: no hypotheses");
    for (const auto& p : points)
      if (p.x >= domain || p.y >= n_classes) throw std::invalid_argument("FiniteInstance: point out of range");
    for (const auto& h : hypotheses) {
      if (h.size() != domain) throw std::invalid_argument("FiniteInstance: hypothesis table has wrong length");
      for (auto c : h)
        if (c >= n_classes) throw std::invalid_argument("FiniteInstance: hypothesis predicts unknown class");
    }
  }

  // Bit i set when hypothesis h errs on point i.
  std::vector<std::uint32_t> error_masks() const {
    std::vector<std::uint32_t> m(hypotheses.size(), 0);
    for (std::size_t h = 0; h < hypotheses.size(); ++h)
      for (std::size_t i = 0; i < points.size(); ++i)
        if (hypotheses[h][points[i].x] != points[i].y) m[h] |= 1u << i;
    return m;
  }
};

struct SubsetRow {
  std::uint32_t subset = 0;
  std::int64_t min_loss = 0;
  std::size_t argmin_hypothesis = 0;
};

struct OracleResult {
  std::int64_t dual_dro_value = 0;
  std::int64_t trilevel_value = 0;
  std::uint32_t argmax_subset = 0;
  std::vector<SubsetRow> per_subset_min_losses;
};

inline std::vector<std::size_t> subset_indices(std::uint32_t mask) {
  std::vector<std::size_t> v;
  for (std::size_t i = 0; mask; ++i, mask >>= 1)
    if (mask & 1u) v.push_back(i);
  return v;
}

// Calls f(mask) for every k-subset of n bits in increasing numeric order.
template <class F>
void for_each_subset(std::size_t n, std::size_t k, F&& f) {
  if (k == 0 || k > n) return;
  std::uint32_t m = (1u << k) - 1;
  const std::uint32_t limit = 1u << n;
  while (m < limit) {
    f(m);
    const std::uint32_t c = m & (~m + 1);
    const std::uint32_t r = m + c;
    m = (((r ^ m) >> 2) / c) | r;
  }
}

namespace detail {

inline void check_budget(const FiniteInstance& inst) { inst.validate(); }

inline std::int64_t popcount(std::uint32_t v) { return std::popcount(v); }

}  // namespace detail

// Subset enumeration with an explicit size; dual_dro_exhaustive uses floor(delta * n).
inline OracleResult dual_dro_with_size(const FiniteInstance& inst, std::size_t k) {
  detail::check_budget(inst);
  const auto err = inst.error_masks();
  OracleResult r;
  r.dual_dro_value = -1;
  for_each_subset(inst.points.size(), k, [&](std::uint32_t s) {
    SubsetRow row{s, detail::popcount(err[0] & s), 0};
    for (std::size_t h = 1; h < err.size(); ++h) {
      const auto l = detail::popcount(err[h] & s);
      if (l < row.min_loss) row = {s, l, h};
    }
    r.per_subset_min_losses.push_back(row);
    if (row.min_loss > r.dual_dro_value) {
      r.dual_dro_value = row.min_loss;
      r.argmax_subset = s;
    }
  });
  return r;
}

inline OracleResult dual_dro_exhaustive(const FiniteInstance& inst) {
  inst.validate();
  return dual_dro_with_size(inst, inst.subset_size());
}

inline std::int64_t dro_exhaustive(const FiniteInstance& inst) {
  inst.validate();
  const auto err = inst.error_masks();
  std::int64_t best = -1;
  for (std::size_t h = 0; h < err.size(); ++h) {
    std::int64_t worst = 0;
    for_each_subset(inst.points.size(), inst.subset_size(),
                    [&](std::uint32_t s) { worst = std::max(worst, detail::popcount(err[h] & s)); });
    if (best < 0 || worst < best) best = worst;
  }
  return best;
}

namespace detail {

// Training points with identical (x, y) have identical loss rows, so only the
// sum of their weights matters. Each group contributes one of the distinct
// sums reachable with `count` draws from the grid.
struct Group {
  std::uint32_t hyp_errs = 0;  // bit h set when hypothesis h errs on this (x, y)
  std::vector<std::int64_t> sums;
};

inline std::vector<std::int64_t> reachable_sums(const std::vector<std::int64_t>& grid, std::size_t count) {
  std::set<std::int64_t> cur{0};
  for (std::size_t t = 0; t < count; ++t) {
    std::set<std::int64_t> next;
    for (auto s : cur)
      for (auto w : grid) next.insert(s + w);
    cur = std::move(next);
  }
  return {cur.begin(), cur.end()};
}

struct TrilevelSearch {
  const std::vector<Group>* groups;
  const std::vector<std::uint32_t>* err;
  std::uint32_t val_mask;
  std::int64_t floor;  // min_h val loss; nothing can beat it
  std::int64_t best;
  std::vector<std::int64_t> totals;

  void run(std::size_t g) {
    if (best == floor) return;
    if (g == groups->size()) {
      std::size_t arg = 0;
      for (std::size_t h = 1; h < totals.size(); ++h)
        if (totals[h] < totals[arg]) arg = h;
      best = std::min(best, popcount((*err)[arg] & val_mask));
      return;
    }
    const auto& grp = (*groups)[g];
    for (auto w : grp.sums) {
      if (w != 0)
        for (std::size_t h = 0; h < totals.size(); ++h)
          if (grp.hyp_errs >> h & 1u) totals[h] += w;
      run(g + 1);
      if (w != 0)
        for (std::size_t h = 0; h < totals.size(); ++h)
          if (grp.hyp_errs >> h & 1u) totals[h] -= w;
      if (best == floor) return;
    }
  }
};

}  // namespace detail

// Middle and inner levels for one validation subset: the smallest validation
// loss over all grid weightings of the complement.
inline std::int64_t trilevel_for_subset(const FiniteInstance& inst, const std::vector<std::uint32_t>& err,
                                        std::uint32_t val_mask, const std::vector<std::int64_t>& grid) {
  if (inst.hypotheses.size() > 32) throw std::invalid_argument("trilevel: at most 32 hypotheses");
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> counts;
  for (std::size_t i = 0; i < inst.points.size(); ++i)
    if (!(val_mask >> i & 1u)) ++counts[{inst.points[i].x, inst.points[i].y}];
  std::vector<detail::Group> groups;
  for (const auto& [xy, c] : counts) {
    detail::Group g;
    for (std::size_t h = 0; h < inst.hypotheses.size(); ++h)
      if (inst.hypotheses[h][xy.first] != xy.second) g.hyp_errs |= 1u << h;
    g.sums = detail::reachable_sums(grid, c);
    groups.push_back(std::move(g));
  }
  std::int64_t floor = detail::popcount(err[0] & val_mask);
  for (auto e : err) floor = std::min(floor, detail::popcount(e & val_mask));
  detail::TrilevelSearch search{&groups, &err, val_mask, floor, INT64_MAX, std::vector<std::int64_t>(err.size(), 0)};
  search.run(0);
  return search.best;
}

inline std::int64_t trilevel_exhaustive(const FiniteInstance& inst, std::vector<std::int64_t> grid) {
  inst.validate();
  if (grid.empty()) throw std::invalid_argument("trilevel: empty weight grid");
  for (auto w : grid)
    if (w < 0) throw std::invalid_argument("trilevel: weights must be non-negative");
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  const auto err = inst.error_masks();
  std::int64_t value = -1;
  for_each_subset(inst.points.size(), inst.subset_size(),
                  [&](std::uint32_t s) { value = std::max(value, trilevel_for_subset(inst, err, s, grid)); });
  return value;
}

// Both enumerations plus the per-subset table.
inline OracleResult run_oracle(const FiniteInstance& inst, const std::vector<std::int64_t>& grid) {
  auto r = dual_dro_exhaustive(inst);
  r.trilevel_value = trilevel_exhaustive(inst, grid);
  return r;
}

// ---- instance generation -------------------------------------------------

// Every map from a domain of size `domain` to {0..classes-1}, listed in
// lexicographic order of (h(0), h(1), ...).
inline std::vector<std::vector<std::size_t>> all_hypotheses(std::size_t domain, std::size_t classes) {
  std::size_t total = 1;
  for (std::size_t i = 0; i < domain; ++i) total *= classes;
  std::vector<std::vector<std::size_t>> hs(total, std::vector<std::size_t>(domain));
  for (std::size_t h = 0; h < total; ++h) {
    std::size_t v = h;
    for (std::size_t x = domain; x-- > 0;) {
      hs[h][x] = v % classes;
      v /= classes;
    }
  }
  return hs;
}

// Unconstrained random instance: random points, a random non-empty subset of
// the complete binary hypothesis class in random order.
inline FiniteInstance random_instance(std::mt19937_64& rng, double delta, std::size_t max_points = 12) {
  FiniteInstance inst;
  inst.delta = delta;
  inst.n_classes = 2;
  inst.domain = std::uniform_int_distribution<std::size_t>(2, 4)(rng);
  const std::size_t min_n = static_cast<std::size_t>(std::ceil(1.0 / delta));
  const std::size_t n = std::uniform_int_distribution<std::size_t>(std::max<std::size_t>(min_n, 3), max_points)(rng);
  std::uniform_int_distribution<std::size_t> px(0, inst.domain - 1), py(0, 1);
  for (std::size_t i = 0; i < n; ++i) inst.points.push_back({px(rng), py(rng)});
  auto all = all_hypotheses(inst.domain, 2);
  std::shuffle(all.begin(), all.end(), rng);
  const std::size_t h = std::uniform_int_distribution<std::size_t>(1, all.size())(rng);
  inst.hypotheses.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(h));
  return inst;
}

// Instance family where the complement of every admissible validation subset
// can reproduce the validation-optimal hypothesis by reweighting: the
// hypothesis class is complete and lexicographically listed (ties resolve to
// class 0), and every x that carries class-1 points carries more than
// floor(delta * n) of them, so some always remain in training.
inline FiniteInstance covered_instance(std::mt19937_64& rng, double delta, std::size_t max_points = 12) {
  for (;;) {
    FiniteInstance inst;
    inst.delta = delta;
    inst.n_classes = 2;
    inst.domain = std::uniform_int_distribution<std::size_t>(2, 4)(rng);
    const std::size_t min_n = std::max<std::size_t>(4, static_cast<std::size_t>(std::ceil(1.0 / delta)));
    const std::size_t n = std::uniform_int_distribution<std::size_t>(min_n, max_points)(rng);
    const std::size_t k = static_cast<std::size_t>(std::floor(delta * static_cast<double>(n)));
    std::vector<std::size_t> xs(inst.domain);
    for (std::size_t x = 0; x < inst.domain; ++x) xs[x] = x;
    std::shuffle(xs.begin(), xs.end(), rng);
    std::size_t remaining = n;
    const std::size_t max_clusters = std::min(inst.domain, n / (k + 1));
    const std::size_t clusters = std::uniform_int_distribution<std::size_t>(0, max_clusters)(rng);
    for (std::size_t c = 0; c < clusters && remaining >= k + 1; ++c) {
      const std::size_t extra_cap = remaining - (k + 1);
      const std::size_t size = k + 1 + std::uniform_int_distribution<std::size_t>(0, std::min<std::size_t>(extra_cap, 2))(rng);
      for (std::size_t t = 0; t < size; ++t) inst.points.push_back({xs[c], 1});
      remaining -= size;
    }
    std::uniform_int_distribution<std::size_t> px(0, inst.domain - 1);
    for (std::size_t t = 0; t < remaining; ++t) inst.points.push_back({px(rng), 0});
    std::shuffle(inst.points.begin(), inst.points.end(), rng);
    inst.hypotheses = all_hypotheses(inst.domain, 2);
    if (inst.points.size() == n) return inst;
  }
}

// ---- files ---------------------------------------------------------------
//
//   # comment
//   delta 0.5
//   domain 4
//   classes 2
//   point <x> <y>
//   hypothesis <h(0)> <h(1)> ... <h(domain-1)>

inline FiniteInstance parse_instance(std::istream& is, const std::string& name = "instance") {
  FiniteInstance inst;
  bool have_delta = false, have_domain = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto c = line.find('#'); c != std::string::npos) line.erase(c);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    const std::string where = name + ":" + std::to_string(lineno);
    auto need = [&](auto& v) {
      if (!(ls >> v)) throw std::invalid_argument(where + ": malformed '" + key + "' line");
    };
    if (key == "delta") {
      need(inst.delta);
      have_delta = true;
    } else if (key == "domain") {
      need(inst.domain);
      have_domain = true;
    } else if (key == "classes") {
      need(inst.n_classes);
    } else if (key == "point") {
      FinitePoint p;
      need(p.x);
      need(p.y);
      inst.points.push_back(p);
    } else if (key == "hypothesis") {
      std::vector<std::size_t> h;
      for (std::size_t c; ls >> c;) h.push_back(c);
      if (!ls.eof()) throw std::invalid_argument(where + ": malformed hypothesis entry");
      inst.hypotheses.push_back(std::move(h));
    } else {
      throw std::invalid_argument(where + ": unknown key '" + key + "'");
    }
  }
  if (!have_delta || !have_domain) throw std::invalid_argument(name + ": 'delta' and 'domain' are required");
  inst.validate();
  return inst;
}

inline FiniteInstance load_instance(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  return parse_instance(is, path);
}

inline void write_instance(std::ostream& os, const FiniteInstance& inst) {
  os << "delta " << lrw::detail::fmt_double(inst.delta) << "\ndomain " << inst.domain << "\nclasses " << inst.n_classes
     << '\n';
  for (const auto& p : inst.points) os << "point " << p.x << ' ' << p.y << '\n';
  for (const auto& h : inst.hypotheses) {
    os << "hypothesis";
    for (auto c : h) os << ' ' << c;
    os << '\n';
  }
}

inline std::string subset_str(std::uint32_t mask) {
  std::string s;
  for (auto i : subset_indices(mask)) s += (s.empty() ? "" : ";") + std::to_string(i);
  return s;
}

// CSV of per-subset minima: subset,min_loss,argmin_hypothesis
inline void write_subset_table(std::ostream& os, const OracleResult& r) {
  os << "subset,min_loss,argmin_hypothesis\n";
  for (const auto& row : r.per_subset_min_losses)
    os << subset_str(row.subset) << ',' << row.min_loss << ',' << row.argmin_hypothesis << '\n';
}

}  // namespace lrw::oracle

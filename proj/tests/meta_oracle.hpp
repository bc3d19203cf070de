#pragma once

// Independent reference for the meta-gradient: the lookahead validation loss
// as a plain function of the meta-network parameters, built from per-row
// gradients rather than the batched per-example dot products.

#include <algorithm>
#include <random>
#include <vector>

#include "lrw/trainer.hpp"

namespace lrw::testing {

inline Tensor random_batch(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Tensor t({n, d});
  for (auto& v : t.data()) v = nd(rng);
  return t;
}

inline std::vector<std::size_t> random_labels(std::size_t n, std::size_t C, std::mt19937_64& rng) {
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = rng() % C;
  return y;
}

inline std::vector<double> params_of(const Mlp& m) { return {m.params().flat().begin(), m.params().flat().end()}; }

// Lookahead validation loss with the meta-network parameters replaced by `meta_params`.
inline double lookahead_val_loss(const Mlp& clf, MetaNet meta, const std::vector<double>& meta_params, const Tensor& meta_in,
                                 const Tensor& xt, const std::vector<std::size_t>& yt, const Tensor& xv,
                                 const std::vector<std::size_t>& yv, double lr) {
  std::copy(meta_params.begin(), meta_params.end(), meta.net.params().flat().begin());
  const auto w = renormalize(raw_meta_outputs(meta, meta_in));
  // Per-example gradients summed by hand, one tape per row.
  Mlp look = clf;
  std::vector<double> step(clf.params().size(), 0.0);
  for (std::size_t i = 0; i < xt.rows(); ++i) {
    Tensor row({1, xt.cols()});
    for (std::size_t j = 0; j < xt.cols(); ++j) row[j] = xt.at(i, j);
    std::vector<double> g;
    weighted_loss_grad(clf, row, {yt[i]}, {}, g);
    for (std::size_t k = 0; k < g.size(); ++k) step[k] += w[i] * g[k] / static_cast<double>(xt.rows());
  }
  for (std::size_t k = 0; k < step.size(); ++k) look.params().flat()[k] -= lr * step[k];
  ad::Tape t;
  return ad::cross_entropy(t.constant(look.forward(xv)), yv).value().item();
}

}  // namespace lrw::testing

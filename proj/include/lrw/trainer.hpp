#pragma once

// Training loops: ERM, learned reweighting on a fixed split, and the
// one-shot min-max variant that also learns the split.
//
// Randomness is split into independent streams derived from cfg.seed, so
// turning a component off (e.g. the splitter) does not perturb the batches
// the classifier sees. That is what makes the reduction properties in the
// tests hold bit for bit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "lrw/autodiff.hpp"
#include "lrw/datagen.hpp"
#include "lrw/errors.hpp"
#include "lrw/hardness.hpp"
#include "lrw/models.hpp"

namespace lrw {

enum class EarlyStop { Off, Gap };

struct TrainConfig {
  double delta = 0.1;
  std::size_t inner_steps = 5;  // Q
  double lr_splitter = 1e-3;
  double lr_meta = 1e-3;
  double lr_classifier = 0.1;
  double momentum = 0.9;
  double reg_ratio_weight = 1.0;
  double reg_label_weight = 1.0;
  std::size_t batch_train = 64;
  std::size_t batch_val = 64;
  std::size_t max_epochs = 30;  // includes warm start
  std::size_t warm_start_epochs = 5;
  EarlyStop early_stop = EarlyStop::Off;
  std::uint64_t seed = 0;

  std::vector<std::size_t> classifier_hidden{32, 32};
  std::vector<std::size_t> meta_hidden{16, 16};
  std::vector<std::size_t> splitter_hidden{16, 16};
  Activation activation = Activation::Relu;
  double dropout = 0.0;
  std::size_t lr_decay_every = 0;  // epochs; 0 disables step decay
  double lr_decay_factor = 0.1;
  std::size_t margin_epochs = 0;  // ERM budget of the margin pass; 0 means max_epochs
  bool meta_uses_label = false;   // meta-network reads (x, y) instead of x
  bool shared_features = false;   // meta/splitter read the classifier's last hidden layer
  bool uniform_weights = false;   // bypass the meta-network (all weights 1)
  bool class_guard = true;        // stratified_guard after carving

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("TrainConfig: " + m); };
    if (!(delta > 0.0 && delta < 1.0)) fail("delta must lie in (0, 1)");
    if (inner_steps < 1) fail("inner_steps (Q) must be >= 1");
    if (!(lr_splitter >= 0.0) || !(lr_meta >= 0.0) || !(lr_classifier >= 0.0)) fail("learning rates must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
    if (!(reg_ratio_weight >= 0.0) || !(reg_label_weight >= 0.0)) fail("regularizer weights must be >= 0");
    if (batch_train < 1 || batch_val < 1) fail("batch sizes must be >= 1");
    if (max_epochs < 1) fail("max_epochs must be >= 1");
    if (warm_start_epochs > max_epochs) fail("warm_start_epochs must not exceed max_epochs");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
    if (!(lr_decay_factor > 0.0)) fail("lr_decay_factor must be > 0");
    if (shared_features && classifier_hidden.empty()) fail("shared_features needs a hidden classifier layer");
  }

  double classifier_lr_at(std::size_t epoch) const {
    if (lr_decay_every == 0) return lr_classifier;
    return lr_classifier * std::pow(lr_decay_factor, static_cast<double>(epoch / lr_decay_every));
  }

  std::size_t margin_budget() const { return margin_epochs ? margin_epochs : max_epochs; }
};

struct LossBreakdown {
  std::size_t epoch = 0;
  double weighted_train_loss = 0.0;
  double val_loss = 0.0;
  double split_loss = 0.0;
  double omega_ratio = 0.0;
  double omega_label = 0.0;
  double val_fraction = 0.0;
};

// ---- random streams ------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ (stream * 0xD1B54A32D192ED03ull));
}

enum Stream : std::uint64_t {
  kInitClassifier = 1,
  kInitMeta,
  kInitSplitter,
  kTrainBatches,
  kValBatches,
  kLookaheadBatches,
  kSplitterBatches,
  kDropout,
  kWarmSplit,
  kTieBreak,
};

struct Rngs {
  std::mt19937_64 train, val, lookahead, splitter, dropout;
  explicit Rngs(std::uint64_t seed)
      : train(derive_seed(seed, kTrainBatches)),
        val(derive_seed(seed, kValBatches)),
        lookahead(derive_seed(seed, kLookaheadBatches)),
        splitter(derive_seed(seed, kSplitterBatches)),
        dropout(derive_seed(seed, kDropout)) {}
};

// Uniform draw with replacement from an index pool.
inline std::vector<std::size_t> sample_batch(std::span<const std::size_t> pool, std::size_t m, std::mt19937_64& rng) {
  if (pool.empty()) throw std::invalid_argument("sample_batch: empty pool");
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<std::size_t> out(m);
  for (auto& i : out) i = pool[pick(rng)];
  return out;
}

// ---- model construction --------------------------------------------------

inline Mlp make_classifier(const TrainConfig& cfg, std::size_t dim, std::size_t n_classes) {
  std::vector<std::size_t> w{dim};
  w.insert(w.end(), cfg.classifier_hidden.begin(), cfg.classifier_hidden.end());
  w.push_back(n_classes);
  Mlp m(w, cfg.activation);
  init_params(m, derive_seed(cfg.seed, kInitClassifier));
  return m;
}

inline std::size_t side_feature_dim(const TrainConfig& cfg, std::size_t dim) {
  return cfg.shared_features ? cfg.classifier_hidden.back() : dim;
}

inline MetaNet make_meta(const TrainConfig& cfg, std::size_t dim, std::size_t n_classes) {
  const std::size_t in = side_feature_dim(cfg, dim) + (cfg.meta_uses_label ? n_classes : 0);
  MetaNet m(in, cfg.meta_hidden, cfg.activation);
  init_params(m.net, derive_seed(cfg.seed, kInitMeta));
  return m;
}

inline SplitterNet make_splitter(const TrainConfig& cfg, std::size_t dim, std::size_t n_classes) {
  SplitterNet s(side_feature_dim(cfg, dim), n_classes, cfg.splitter_hidden, cfg.activation);
  init_params(s.net, derive_seed(cfg.seed, kInitSplitter));
  return s;
}

inline Tensor side_features(const TrainConfig& cfg, const Mlp& classifier, const Tensor& x) {
  return cfg.shared_features ? classifier.hidden_features(x) : x;
}

inline Tensor meta_input(const TrainConfig& cfg, const Mlp& classifier, const Tensor& x,
                         std::span<const std::size_t> y, std::size_t n_classes) {
  Tensor base = side_features(cfg, classifier, x);
  return cfg.meta_uses_label ? with_onehot(base, y, n_classes) : base;
}

inline Tensor splitter_input(const TrainConfig& cfg, const Mlp& classifier, const Tensor& x,
                             std::span<const std::size_t> y, std::size_t n_classes) {
  return with_onehot(side_features(cfg, classifier, x), y, n_classes);
}

// ---- classifier steps ----------------------------------------------------

// Gradient of (1/m) sum_i w_i * CE_i at the classifier's current parameters;
// unweighted mean CE when `weights` is empty. Returns the loss value.
inline double weighted_loss_grad(const Mlp& clf, const Tensor& x, const std::vector<std::size_t>& y,
                                 std::span<const double> weights, std::vector<double>& grad, Dropout dropout = {}) {
  ad::Tape tape;
  auto tr = clf.trace(tape, x, true, dropout);
  ad::Var ce = ad::cross_entropy_rows(tr.output, y);
  if (!weights.empty()) {
    if (weights.size() != y.size()) throw std::invalid_argument("weighted step: weight count mismatch");
    ce = ad::mul(ce, tape.constant(Tensor::vector({weights.begin(), weights.end()})));
  }
  ad::Var loss = ad::mean(ce);
  tape.backward(loss);
  grad = flat_grad(tape, tr, clf.params());
  return loss.value().item();
}

// One classifier SGD step on a batch. `raw_weights` are renormalised to mean 1
// first; empty means unweighted.
inline double weighted_step(Mlp& clf, const Tensor& x, const std::vector<std::size_t>& y,
                            std::span<const double> raw_weights, double lr, double momentum, Dropout dropout = {}) {
  std::vector<double> w;
  if (!raw_weights.empty()) w = renormalize(raw_weights);
  std::vector<double> g;
  const double loss = weighted_loss_grad(clf, x, y, w, g, dropout);
  if (!std::isfinite(loss)) throw TrainingAborted("non-finite training loss");
  sgd_step(clf.params(), g, lr, momentum);
  return loss;
}

// Weighted inner step: weights come from the meta-network and are treated as
// constants (no gradient reaches the meta-network).
inline double lrw_inner_step(Mlp& clf, const MetaNet& meta, const Tensor& meta_in, const Tensor& x,
                             const std::vector<std::size_t>& y, double lr, double momentum, Dropout dropout = {}) {
  const auto raw = raw_meta_outputs(meta, meta_in);
  return weighted_step(clf, x, y, raw, lr, momentum, dropout);
}

// <direction, d CE_i / d params> for every row i of the batch, exactly. Uses
// the fact that the per-example gradient of a dense layer is the outer
// product of its input row and its pre-activation delta row.
inline std::vector<double> per_example_dots(const Mlp& clf, const Tensor& x, const std::vector<std::size_t>& y,
                                            std::span<const double> direction) {
  const auto& ps = clf.params();
  if (direction.size() != ps.size()) throw std::invalid_argument("per_example_dots: direction size mismatch");
  ad::Tape tape;
  auto tr = clf.trace(tape, x, true);
  tape.backward(ad::sum(ad::cross_entropy_rows(tr.output, y)));
  const std::size_t m = x.rows();
  std::vector<double> dots(m, 0.0);
  for (std::size_t l = 0; l < clf.layers(); ++l) {
    const Tensor& a = tr.inputs[l].value();
    const Tensor& delta = tape.grad(tr.preacts[l]);
    const auto gw = direction.subspan(ps.spec(2 * l).offset, ps.spec(2 * l).size());
    const auto gb = direction.subspan(ps.spec(2 * l + 1).offset, ps.spec(2 * l + 1).size());
    const std::size_t in = a.cols(), out = delta.cols();
    std::vector<double> proj(out);
    for (std::size_t i = 0; i < m; ++i) {
      std::fill(proj.begin(), proj.end(), 0.0);
      for (std::size_t p = 0; p < in; ++p) {
        const double ap = a[i * in + p];
        if (ap == 0.0) continue;
        for (std::size_t j = 0; j < out; ++j) proj[j] += ap * gw[p * out + j];
      }
      double s = 0.0;
      for (std::size_t j = 0; j < out; ++j) s += (proj[j] + gb[j]) * delta[i * out + j];
      dots[i] += s;
    }
  }
  return dots;
}

// d L_val / d w_i for the lookahead params - lr/m * sum_i w_i g_i:
//   -lr/m * <grad L_val at the lookahead, g_i>.
inline std::vector<double> weight_sensitivities(std::span<const double> dots, double lr, std::size_t batch) {
  std::vector<double> c(dots.size());
  const double k = -lr / static_cast<double>(batch);
  for (std::size_t i = 0; i < dots.size(); ++i) c[i] = k * dots[i];
  return c;
}

struct MetaGradient {
  std::vector<double> grad;           // d L_val(lookahead) / d meta params, ParamSet layout
  std::vector<double> sensitivities;  // d L_val / d w_i
  std::vector<double> weights;        // renormalised weights used for the lookahead
  double val_loss = 0.0;              // L_val at the lookahead
};

// One-step lookahead meta-gradient. A copy of the classifier takes a weighted
// SGD step with meta weights; the validation loss of that copy is
// differentiated w.r.t. the meta parameters through the weights.
inline MetaGradient meta_gradient(const Mlp& clf, const MetaNet& meta, const Tensor& meta_in, const Tensor& x_train,
                                  const std::vector<std::size_t>& y_train, const Tensor& x_val,
                                  const std::vector<std::size_t>& y_val, double lr) {
  MetaGradient out;
  ad::Tape mtape;
  MlpTrace mtr;
  ad::Var w = renormalize(sigmoid_head(mtape, meta.net, meta_in, true, &mtr));
  out.weights = w.value().raw();

  std::vector<double> g;
  weighted_loss_grad(clf, x_train, y_train, out.weights, g);
  Mlp look = clf;
  auto lookahead_params = look.params().flat();
  for (std::size_t k = 0; k < lookahead_params.size(); ++k) lookahead_params[k] -= lr * g[k];

  ad::Tape vtape;
  auto vtr = look.trace(vtape, x_val, true);
  ad::Var lval = ad::cross_entropy(vtr.output, y_val);
  vtape.backward(lval);
  out.val_loss = lval.value().item();
  const auto gval = flat_grad(vtape, vtr, look.params());

  out.sensitivities = weight_sensitivities(per_example_dots(clf, x_train, y_train, gval), lr, x_train.rows());
  ad::Var obj = ad::sum(ad::mul(w, mtape.constant(Tensor::vector(out.sensitivities))));
  mtape.backward(obj);
  out.grad = flat_grad(mtape, mtr, meta.net.params());
  return out;
}

// ---- splitter objective --------------------------------------------------

struct SplitterTerms {
  ad::Var split_loss;   // mean BCE(P(z=1), correctness)
  ad::Var val_term;     // mean (1 - P(z=1)) * CE_i
  ad::Var omega_ratio;  // KL(Bern(val fraction) || Bern(delta))
  ad::Var omega_label;  // sum_k KL(P(y | z=k) || P(y))
};

inline std::vector<double> correctness(const Tensor& logits, std::span<const std::size_t> y) {
  std::vector<double> t(y.size());
  const std::size_t C = logits.cols();
  for (std::size_t i = 0; i < y.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < C; ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    t[i] = best == y[i] ? 1.0 : 0.0;
  }
  return t;
}

inline ad::Var kl_bernoulli(ad::Var q, double delta) {
  // q log(q/delta) + (1-q) log((1-q)/(1-delta))
  ad::Var one_minus_q = ad::affine(q, -1.0, 1.0);
  ad::Var a = ad::mul(q, ad::affine(ad::log(q), 1.0, -std::log(delta)));
  ad::Var b = ad::mul(one_minus_q, ad::affine(ad::log(one_minus_q), 1.0, -std::log1p(-delta)));
  return ad::add(a, b);
}

// Regularisers on soft memberships. p_train and p_val are P(z=1) and P(z=0)
// as tape variables of shape [batch].
inline std::pair<ad::Var, ad::Var> regularizer_vars(ad::Tape& tape, ad::Var p_train, ad::Var p_val,
                                                    std::span<const std::size_t> labels, std::size_t n_classes,
                                                    double delta) {
  const std::size_t b = labels.size();
  ad::Var omega_ratio = kl_bernoulli(ad::mean(p_val), delta);

  std::vector<std::size_t> present;
  std::vector<double> prior(n_classes, 0.0);
  for (auto y : labels) prior.at(y) += 1.0;
  for (std::size_t c = 0; c < n_classes; ++c)
    if (prior[c] > 0) present.push_back(c);
  const std::size_t k = present.size();
  Tensor onehot({b, k});
  Tensor log_prior({1, k});
  for (std::size_t j = 0; j < k; ++j) log_prior[j] = std::log(prior[present[j]] / static_cast<double>(b));
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < k; ++j) onehot[i * k + j] = labels[i] == present[j] ? 1.0 : 0.0;
  ad::Var Y = tape.constant(std::move(onehot));
  ad::Var lp = tape.constant(std::move(log_prior));

  auto kl_side = [&](ad::Var w) {
    ad::Var counts = ad::matmul(ad::reshape(w, {1, b}), Y);
    ad::Var cond = ad::div(counts, ad::sum(w));
    return ad::sum(ad::mul(cond, ad::sub(ad::log(cond), lp)));
  };
  ad::Var omega_label = ad::add(kl_side(p_train), kl_side(p_val));
  return {omega_ratio, omega_label};
}

inline SplitterTerms splitter_terms(ad::Tape& tape, const SplitterNet& s, const Tensor& split_in,
                                    std::span<const std::size_t> y, std::span<const double> correct,
                                    std::span<const double> ce, double delta, MlpTrace* trace_out = nullptr) {
  auto tr = s.net.trace(tape, split_in, true);
  const std::size_t b = y.size();
  ad::Var logit = ad::reshape(tr.output, {b});
  ad::Var p_train = open_unit(ad::sigmoid(logit));
  ad::Var p_val = open_unit(ad::sigmoid(ad::affine(logit, -1.0, 0.0)));
  ad::Var t = tape.constant(Tensor::vector({correct.begin(), correct.end()}));
  ad::Var one_minus_t = tape.constant(Tensor::vector([&] {
    std::vector<double> v(correct.begin(), correct.end());
    for (auto& e : v) e = 1.0 - e;
    return v;
  }()));
  // BCE via logits: t * softplus(-s) + (1 - t) * softplus(s)
  ad::Var bce = ad::add(ad::mul(t, ad::softplus(ad::affine(logit, -1.0, 0.0))), ad::mul(one_minus_t, ad::softplus(logit)));
  SplitterTerms terms;
  terms.split_loss = ad::mean(bce);
  terms.val_term = ad::mean(ad::mul(p_val, tape.constant(Tensor::vector({ce.begin(), ce.end()}))));
  std::tie(terms.omega_ratio, terms.omega_label) = regularizer_vars(tape, p_train, p_val, y, s.n_classes, delta);
  if (trace_out) *trace_out = std::move(tr);
  return terms;
}

inline std::vector<double> ce_rows(const Mlp& clf, const Tensor& x, const std::vector<std::size_t>& y) {
  ad::Tape tape;
  return ad::cross_entropy_rows(tape.constant(clf.forward(x)), y).value().raw();
}

// Mean binary cross-entropy between the splitter's P(z=1) and whether the
// classifier's argmax prediction is correct.
inline double splitter_loss(const SplitterNet& s, const Mlp& clf, const Tensor& split_in, const Tensor& x,
                            const std::vector<std::size_t>& y) {
  const auto correct = correctness(clf.forward(x), y);
  const std::vector<double> zeros(y.size(), 0.0);
  ad::Tape tape;
  return splitter_terms(tape, s, split_in, y, correct, zeros, 0.5).split_loss.value().item();
}

// (omega_ratio, omega_label) for given P(z=1) values.
inline std::pair<double, double> splitter_regularizers(std::span<const double> p_train,
                                                       std::span<const std::size_t> labels, std::size_t n_classes,
                                                       double delta) {
  if (p_train.size() != labels.size() || p_train.empty())
    throw std::invalid_argument("splitter_regularizers: size mismatch");
  std::vector<double> pv(p_train.size());
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (!(p_train[i] > 0.0 && p_train[i] < 1.0))
      throw std::invalid_argument("splitter_regularizers: probabilities must lie in (0, 1)");
    pv[i] = 1.0 - p_train[i];
  }
  ad::Tape tape;
  ad::Var pt = tape.constant(Tensor::vector({p_train.begin(), p_train.end()}));
  ad::Var pvv = tape.constant(Tensor::vector(pv));
  auto [r, l] = regularizer_vars(tape, pt, pvv, labels, n_classes, delta);
  return {r.value().item(), l.value().item()};
}

// ---- state and outer step ------------------------------------------------

struct TrainerState {
  Mlp classifier;
  MetaNet meta;
  SplitterNet splitter;
  std::size_t epoch = 0;
  double gap = 0.0;  // most recent (mean val loss - mean train loss)
};

struct OuterBatches {
  std::vector<std::size_t> val;        // from the validation split
  std::vector<std::size_t> lookahead;  // from the training split
  std::vector<std::size_t> pooled;     // from the whole dataset, for the splitter
};

// Splitter then meta-network update. The splitter descends
//   L_split - (val term) + reg_ratio * ratio_kl + reg_label * label_kl
// i.e. it pushes high-loss instances toward validation; the meta-network
// descends the lookahead validation loss. Empty `pooled` skips the splitter;
// a zero learning rate leaves that network and its momentum untouched.
inline LossBreakdown outer_step(TrainerState& s, const TrainConfig& cfg, const Dataset& d, const OuterBatches& b) {
  LossBreakdown lb;
  lb.epoch = s.epoch;
  const std::size_t C = d.n_classes;
  if (!b.pooled.empty()) {
    const Tensor x = d.rows(b.pooled);
    const auto y = d.labels_at(b.pooled);
    const Tensor logits = s.classifier.forward(x);
    const auto correct = correctness(logits, y);
    ad::Tape ptape;
    const auto ce = ad::cross_entropy_rows(ptape.constant(logits), y).value().raw();
    ad::Tape tape;
    MlpTrace tr;
    auto terms = splitter_terms(tape, s.splitter, splitter_input(cfg, s.classifier, x, y, C), y, correct, ce,
                                cfg.delta, &tr);
    ad::Var obj = ad::sub(terms.split_loss, terms.val_term);
    obj = ad::add(obj, ad::affine(terms.omega_ratio, cfg.reg_ratio_weight, 0.0));
    obj = ad::add(obj, ad::affine(terms.omega_label, cfg.reg_label_weight, 0.0));
    if (!std::isfinite(obj.value().item())) throw TrainingAborted("non-finite splitter objective");
    if (cfg.lr_splitter > 0.0) {
      tape.backward(obj);
      sgd_step(s.splitter.net.params(), flat_grad(tape, tr, s.splitter.net.params()), cfg.lr_splitter, cfg.momentum);
    }
    lb.split_loss = terms.split_loss.value().item();
    lb.omega_ratio = terms.omega_ratio.value().item();
    lb.omega_label = terms.omega_label.value().item();
  }
  if (!cfg.uniform_weights) {
    const Tensor xt = d.rows(b.lookahead);
    const auto yt = d.labels_at(b.lookahead);
    const Tensor xv = d.rows(b.val);
    const auto yv = d.labels_at(b.val);
    auto mg = meta_gradient(s.classifier, s.meta, meta_input(cfg, s.classifier, xt, yt, C), xt, yt, xv, yv,
                            cfg.classifier_lr_at(s.epoch));
    if (!std::isfinite(mg.val_loss)) throw TrainingAborted("non-finite validation loss");
    if (cfg.lr_meta > 0.0) sgd_step(s.meta.net.params(), mg.grad, cfg.lr_meta, cfg.momentum);
    lb.val_loss = mg.val_loss;
  } else {
    const Tensor xv = d.rows(b.val);
    ad::Tape tape;
    lb.val_loss = ad::cross_entropy(tape.constant(s.classifier.forward(xv)), d.labels_at(b.val)).value().item();
  }
  return lb;
}

// ---- results -------------------------------------------------------------

struct ErmResult {
  Mlp classifier;
  std::vector<double> step_losses;
};

struct LrwResult {
  Mlp classifier;
  MetaNet meta;
  std::vector<double> step_losses;
  std::vector<LossBreakdown> log;
};

struct LrwOptResult {
  Mlp classifier;
  MetaNet meta;
  SplitterNet splitter;
  SplitAssignment split;
  std::vector<double> step_losses;
  std::vector<LossBreakdown> log;
  std::size_t epochs_run = 0;
  bool early_stopped = false;
};

inline double mean_loss(const Mlp& clf, const Dataset& d, std::span<const std::size_t> idx) {
  if (idx.empty()) return 0.0;
  ad::Tape tape;
  return ad::cross_entropy(tape.constant(clf.forward(d.rows(idx))), d.labels_at(idx)).value().item();
}

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// ---- ERM -----------------------------------------------------------------

// Unweighted minibatch SGD on `pool` (all instances when empty), ceil(N/m)
// steps per epoch with batches drawn with replacement.
inline ErmResult train_erm(const Dataset& d, const TrainConfig& cfg, std::span<const std::size_t> pool = {},
                           std::optional<std::size_t> epochs = std::nullopt) {
  cfg.validate();
  d.validate();
  std::vector<std::size_t> all;
  if (pool.empty()) {
    all = iota_indices(d.size());
    pool = all;
  }
  ErmResult r{make_classifier(cfg, d.dim(), d.n_classes), {}};
  Rngs rng(cfg.seed);
  const std::size_t steps = ceil_div(pool.size(), cfg.batch_train);
  const std::size_t n_epochs = epochs.value_or(cfg.max_epochs);
  for (std::size_t e = 0; e < n_epochs; ++e)
    for (std::size_t s = 0; s < steps; ++s) {
      auto idx = sample_batch(pool, cfg.batch_train, rng.train);
      double loss = 0.0;
      try {
        loss = weighted_step(r.classifier, d.rows(idx), d.labels_at(idx), {}, cfg.classifier_lr_at(e), cfg.momentum,
                             {cfg.dropout, &rng.dropout});
      } catch (const TrainingAborted& ex) {
        throw TrainingAborted(std::string(ex.what()) + " at ERM step " + std::to_string(r.step_losses.size()));
      }
      r.step_losses.push_back(loss);
    }
  return r;
}

// ---- shared LRW loop -----------------------------------------------------

namespace detail {

inline void audit_batch(std::span<const std::size_t> idx, const std::vector<char>& is_val) {
  for (auto i : idx)
    if (is_val[i]) throw std::logic_error("audit: validation instance " + std::to_string(i) + " in a training batch");
}

// One epoch of alternating updates on a fixed split: per outer step one
// outer_step then Q weighted classifier steps.
inline LossBreakdown lrw_epoch(TrainerState& s, const TrainConfig& cfg, const Dataset& d, const SplitAssignment& split,
                               Rngs& rng, bool update_splitter, std::vector<double>& step_losses) {
  if (split.train_indices.empty() || split.val_indices.empty())
    throw std::invalid_argument("LRW: both split sides must be non-empty");
  const auto is_val = split.val_mask();
  const std::size_t outer = std::max<std::size_t>(1, ceil_div(split.train_indices.size(), cfg.inner_steps * cfg.batch_train));
  const auto all = iota_indices(d.size());
  const double lr = cfg.classifier_lr_at(s.epoch);
  LossBreakdown acc;
  acc.epoch = s.epoch;
  std::size_t inner_count = 0;
  for (std::size_t o = 0; o < outer; ++o) {
    OuterBatches b;
    b.val = sample_batch(split.val_indices, cfg.batch_val, rng.val);
    b.lookahead = sample_batch(split.train_indices, cfg.batch_train, rng.lookahead);
    if (update_splitter) b.pooled = sample_batch(all, cfg.batch_val, rng.splitter);
    const auto lb = outer_step(s, cfg, d, b);
    acc.val_loss += lb.val_loss;
    acc.split_loss += lb.split_loss;
    acc.omega_ratio += lb.omega_ratio;
    acc.omega_label += lb.omega_label;
    for (std::size_t q = 0; q < cfg.inner_steps; ++q) {
      auto idx = sample_batch(split.train_indices, cfg.batch_train, rng.train);
      audit_batch(idx, is_val);
      const Tensor x = d.rows(idx);
      const auto y = d.labels_at(idx);
      double loss = 0.0;
      try {
        if (cfg.uniform_weights)
          loss = weighted_step(s.classifier, x, y, {}, lr, cfg.momentum, {cfg.dropout, &rng.dropout});
        else
          loss = lrw_inner_step(s.classifier, s.meta, meta_input(cfg, s.classifier, x, y, d.n_classes), x, y, lr,
                                cfg.momentum, {cfg.dropout, &rng.dropout});
      } catch (const TrainingAborted& ex) {
        throw TrainingAborted(std::string(ex.what()) + " at classifier step " + std::to_string(step_losses.size()));
      }
      step_losses.push_back(loss);
      acc.weighted_train_loss += loss;
      ++inner_count;
    }
  }
  const double k = static_cast<double>(outer);
  acc.val_loss /= k;
  acc.split_loss /= k;
  acc.omega_ratio /= k;
  acc.omega_label /= k;
  acc.weighted_train_loss /= static_cast<double>(inner_count);
  acc.val_fraction = split.delta_realized;
  return acc;
}

}  // namespace detail

inline TrainerState initial_state(const TrainConfig& cfg, const Dataset& d) {
  return TrainerState{make_classifier(cfg, d.dim(), d.n_classes), make_meta(cfg, d.dim(), d.n_classes),
                      make_splitter(cfg, d.dim(), d.n_classes), 0, 0.0};
}

// Learned reweighting on a fixed split.
inline LrwResult train_lrw(const Dataset& d, const SplitAssignment& split, const TrainConfig& cfg) {
  cfg.validate();
  d.validate();
  if (split.size() != d.size()) throw std::invalid_argument("train_lrw: split does not cover the dataset");
  if (split.train_indices.empty() || split.val_indices.empty())
    throw std::invalid_argument("train_lrw: empty split side");
  TrainerState s = initial_state(cfg, d);
  Rngs rng(cfg.seed);
  LrwResult r;
  for (s.epoch = 0; s.epoch < cfg.max_epochs; ++s.epoch)
    r.log.push_back(detail::lrw_epoch(s, cfg, d, split, rng, false, r.step_losses));
  r.classifier = std::move(s.classifier);
  r.meta = std::move(s.meta);
  return r;
}

// Hard-threshold split from splitter probabilities. Instances with
// P(z=1) <= 0.5 are eligible for validation; the floor(delta * n) with the
// lowest probability are taken (ties ordered by `tie_rank`).
inline SplitAssignment generate_split(std::span<const double> p_train, double delta,
                                      std::span<const std::size_t> tie_rank) {
  const std::size_t n = p_train.size();
  const std::size_t cap = val_count(n, delta);
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < n; ++i)
    if (p_train[i] <= 0.5) eligible.push_back(i);
  std::sort(eligible.begin(), eligible.end(), [&](std::size_t a, std::size_t b) {
    return p_train[a] != p_train[b] ? p_train[a] < p_train[b] : tie_rank[a] < tie_rank[b];
  });
  std::vector<char> is_val(n, 0);
  for (std::size_t t = 0; t < std::min(cap, eligible.size()); ++t) is_val[eligible[t]] = 1;
  return SplitAssignment::from_val_mask(is_val);
}

inline std::vector<double> splitter_probs_all(const TrainConfig& cfg, const TrainerState& s, const Dataset& d) {
  ad::Tape tape;
  return sigmoid_head(tape, s.splitter.net, splitter_input(cfg, s.classifier, d.features, d.labels, d.n_classes), false)
      .value()
      .raw();
}

using EpochObserver = std::function<void(const TrainerState&, const SplitAssignment&, const LossBreakdown&)>;

// One-shot min-max training: warm start on a random split, then per epoch
// regenerate the split from the splitter and run alternating updates.
// `prepare` may adjust the freshly initialised state (e.g. freeze the splitter).
inline LrwOptResult train_lrwopt(const Dataset& d, const TrainConfig& cfg, const EpochObserver& observe = {},
                                 const std::function<void(TrainerState&)>& prepare = {}) {
  cfg.validate();
  d.validate();
  const std::size_t n = d.size();
  val_count(n, cfg.delta);
  TrainerState s = initial_state(cfg, d);
  if (prepare) prepare(s);
  Rngs rng(cfg.seed);
  LrwOptResult r;

  std::vector<std::size_t> tie_rank(n);
  {
    auto perm = iota_indices(n);
    std::mt19937_64 tr(derive_seed(cfg.seed, kTieBreak));
    std::shuffle(perm.begin(), perm.end(), tr);
    for (std::size_t k = 0; k < n; ++k) tie_rank[perm[k]] = k;
  }

  if (cfg.warm_start_epochs > 0) {
    std::vector<MarginRecord> dummy(n);
    for (std::size_t i = 0; i < n; ++i) dummy[i] = {i, 0.0};
    const auto warm = carve_split(dummy, SplitVariant::Random, cfg.delta, derive_seed(cfg.seed, kWarmSplit));
    const std::size_t steps = ceil_div(warm.train_indices.size(), cfg.batch_train);
    for (s.epoch = 0; s.epoch < cfg.warm_start_epochs; ++s.epoch)
      for (std::size_t k = 0; k < steps; ++k) {
        auto idx = sample_batch(warm.train_indices, cfg.batch_train, rng.train);
        r.step_losses.push_back(weighted_step(s.classifier, d.rows(idx), d.labels_at(idx), {},
                                              cfg.classifier_lr_at(s.epoch), cfg.momentum, {cfg.dropout, &rng.dropout}));
      }
  }

  auto regenerate = [&] {
    auto split = generate_split(splitter_probs_all(cfg, s, d), cfg.delta, tie_rank);
    if (split.val_indices.empty() || split.train_indices.empty())
      throw TrainingAborted("splitter assigned every instance to one side at epoch " + std::to_string(s.epoch));
    return split;
  };

  r.epochs_run = cfg.warm_start_epochs;
  for (s.epoch = cfg.warm_start_epochs; s.epoch < cfg.max_epochs; ++s.epoch) {
    const auto split = regenerate();
    auto lb = detail::lrw_epoch(s, cfg, d, split, rng, true, r.step_losses);
    r.log.push_back(lb);
    ++r.epochs_run;
    if (observe) observe(s, split, lb);
    if (cfg.early_stop == EarlyStop::Gap) {
      const double gap = mean_loss(s.classifier, d, split.val_indices) - mean_loss(s.classifier, d, split.train_indices);
      if (gap < s.gap) {
        r.early_stopped = true;
        break;
      }
      s.gap = gap;
    }
  }
  r.split = regenerate();
  r.classifier = std::move(s.classifier);
  r.meta = std::move(s.meta);
  r.splitter = std::move(s.splitter);
  return r;
}

}  // namespace lrw

#pragma once

// Parametric networks used by the trainers: the classifier, the instance
// weighting meta-network and the train/validation splitter. All three are
// plain MLPs over a flat ParamSet; the meta-network and splitter end in a
// single sigmoid unit.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include "lrw/autodiff.hpp"
#include "lrw/errors.hpp"
#include "lrw/tensor.hpp"

namespace lrw {

struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
  std::size_t size() const { return shape_numel(shape); }
};

// Every learnable tensor of a network in one contiguous buffer. view(i)
// aliases the flat storage, so updates through either are the same update.
// Momentum velocity shares the layout.
class ParamSet {
 public:
  std::size_t add(std::string name, Shape shape) {
    ParamSpec s{std::move(name), std::move(shape), values_.size()};
    values_.resize(values_.size() + s.size(), 0.0);
    velocity_.resize(values_.size(), 0.0);
    specs_.push_back(std::move(s));
    return specs_.size() - 1;
  }

  std::size_t count() const { return specs_.size(); }
  std::size_t size() const { return values_.size(); }
  const ParamSpec& spec(std::size_t i) const { return specs_[i]; }
  const std::vector<ParamSpec>& specs() const { return specs_; }

  std::span<double> flat() { return values_; }
  std::span<const double> flat() const { return values_; }
  std::span<double> velocity() { return velocity_; }
  std::span<const double> velocity() const { return velocity_; }

  std::span<double> view(std::size_t i) { return flat().subspan(specs_[i].offset, specs_[i].size()); }
  std::span<const double> view(std::size_t i) const { return flat().subspan(specs_[i].offset, specs_[i].size()); }

  Tensor tensor(std::size_t i) const {
    auto v = view(i);
    return Tensor(specs_[i].shape, std::vector<double>(v.begin(), v.end()));
  }

  void reset_velocity() { std::fill(velocity_.begin(), velocity_.end(), 0.0); }

  bool operator==(const ParamSet& o) const {
    if (values_ != o.values_ || velocity_ != o.velocity_ || specs_.size() != o.specs_.size()) return false;
    for (std::size_t i = 0; i < specs_.size(); ++i)
      if (specs_[i].name != o.specs_[i].name || specs_[i].shape != o.specs_[i].shape) return false;
    return true;
  }

 private:
  std::vector<ParamSpec> specs_;
  std::vector<double> values_;
  std::vector<double> velocity_;
};

enum class Activation { Relu, Tanh };

inline std::string to_string(Activation a) { return a == Activation::Relu ? "relu" : "tanh"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

enum class InitScheme { UniformGlorot, Zeros };

// Inverted dropout on hidden activations. rate 0 disables it.
struct Dropout {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;
};

// Recorded forward pass. inputs[l] and preacts[l] are the input and the
// pre-activation of layer l, which is what per-example gradient products need.
struct MlpTrace {
  std::vector<ad::Var> params;
  std::vector<ad::Var> inputs;
  std::vector<ad::Var> preacts;
  ad::Var output;
};

class Mlp {
 public:
  Mlp() = default;

  // widths = {input, hidden..., output}
  Mlp(std::vector<std::size_t> widths, Activation act) : widths_(std::move(widths)), act_(act) {
    if (widths_.size() < 2) throw std::invalid_argument("Mlp: need at least input and output widths");
    for (auto w : widths_)
      if (w == 0) throw std::invalid_argument("Mlp: zero layer width");
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      params_.add("W" + std::to_string(l), {widths_[l], widths_[l + 1]});
      params_.add("b" + std::to_string(l), {1, widths_[l + 1]});
    }
  }

  const std::vector<std::size_t>& widths() const { return widths_; }
  Activation activation() const { return act_; }
  std::size_t layers() const { return widths_.size() - 1; }
  std::size_t in_dim() const { return widths_.front(); }
  std::size_t out_dim() const { return widths_.back(); }

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  MlpTrace trace(ad::Tape& tape, const Tensor& x, bool params_require_grad, Dropout dropout = {}) const {
    return trace(tape, tape.constant(x), params_require_grad, dropout);
  }

  MlpTrace trace(ad::Tape& tape, ad::Var x, bool params_require_grad, Dropout dropout = {}) const {
    const Tensor& xv = x.value();
    if (xv.rank() != 2 || xv.cols() != in_dim())
      throw std::invalid_argument("Mlp: input shape " + shape_str(xv.shape()) + " does not match input width " +
                                  std::to_string(in_dim()));
    MlpTrace tr;
    for (std::size_t i = 0; i < params_.count(); ++i) tr.params.push_back(tape.leaf(params_.tensor(i), params_require_grad));
    ad::Var h = x;
    for (std::size_t l = 0; l < layers(); ++l) {
      tr.inputs.push_back(h);
      ad::Var z = ad::add(ad::matmul(h, tr.params[2 * l]), tr.params[2 * l + 1]);
      tr.preacts.push_back(z);
      if (l + 1 == layers()) {
        h = z;
        break;
      }
      h = act_ == Activation::Relu ? ad::relu(z) : ad::tanh(z);
      if (dropout.rate > 0.0 && dropout.rng) {
        std::bernoulli_distribution keep(1.0 - dropout.rate);
        Tensor mask(h.shape());
        for (std::size_t k = 0; k < mask.numel(); ++k) mask[k] = keep(*dropout.rng) ? 1.0 / (1.0 - dropout.rate) : 0.0;
        h = ad::mul(h, tape.constant(std::move(mask)));
      }
    }
    tr.output = h;
    return tr;
  }

  // Activations of the last hidden layer (the input itself for a 1-layer net).
  Tensor hidden_features(const Tensor& x) const {
    ad::Tape tape;
    auto tr = trace(tape, x, false);
    if (layers() == 1) return x;
    ad::Var z = tr.preacts[layers() - 2];
    return (act_ == Activation::Relu ? ad::relu(z) : ad::tanh(z)).value();
  }

  Tensor forward(const Tensor& x) const {
    ad::Tape tape;
    return trace(tape, x, false).output.value();
  }

 private:
  std::vector<std::size_t> widths_;
  Activation act_ = Activation::Relu;
  ParamSet params_;
};

// Flattened gradient of a traced network, in ParamSet layout.
inline std::vector<double> flat_grad(const ad::Tape& tape, const MlpTrace& tr, const ParamSet& ps) {
  std::vector<double> g(ps.size(), 0.0);
  for (std::size_t i = 0; i < tr.params.size(); ++i) {
    if (!tape.has_grad(tr.params[i])) continue;
    const auto& gi = tape.grad(tr.params[i]);
    std::copy(gi.data().begin(), gi.data().end(), g.begin() + static_cast<std::ptrdiff_t>(ps.spec(i).offset));
  }
  return g;
}

inline void init_params(Mlp& m, std::uint64_t seed, InitScheme scheme = InitScheme::UniformGlorot) {
  auto& ps = m.params();
  std::fill(ps.flat().begin(), ps.flat().end(), 0.0);
  ps.reset_velocity();
  if (scheme == InitScheme::Zeros) return;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < ps.count(); ++i) {
    const auto& s = ps.spec(i);
    if (s.name[0] != 'W') continue;
    const double fan_in = static_cast<double>(s.shape[0]);
    const double fan_out = static_cast<double>(s.shape[1]);
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-a, a);
    for (double& v : ps.view(i)) v = u(rng);
  }
}

// Momentum SGD: v <- momentum * v + g;  p <- p - lr * v.
inline void sgd_step(ParamSet& p, std::span<const double> grads, double lr, double momentum) {
  if (grads.size() != p.size())
    throw std::invalid_argument("sgd_step: " + std::to_string(grads.size()) + " gradients for " +
                                std::to_string(p.size()) + " parameters");
  for (std::size_t i = 0; i < p.count(); ++i) {
    const auto& s = p.spec(i);
    for (std::size_t k = 0; k < s.size(); ++k)
      if (!std::isfinite(grads[s.offset + k]))
        throw TrainingAborted("sgd_step: non-finite gradient in parameter " + s.name);
  }
  auto v = p.velocity();
  auto w = p.flat();
  for (std::size_t k = 0; k < w.size(); ++k) {
    v[k] = momentum * v[k] + grads[k];
    w[k] -= lr * v[k];
  }
}

// Instance weighting network: input -> (0, 1).
struct MetaNet {
  Mlp net;

  MetaNet() = default;
  MetaNet(std::size_t in_dim, const std::vector<std::size_t>& hidden, Activation act)
      : net(widths(in_dim, hidden), act) {}

  static std::vector<std::size_t> widths(std::size_t in, const std::vector<std::size_t>& hidden) {
    std::vector<std::size_t> w{in};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(1);
    return w;
  }
};

// Splitter: (x, one-hot y) -> P(z = 1), z = 1 meaning pseudotrain.
struct SplitterNet {
  Mlp net;
  std::size_t n_classes = 0;

  SplitterNet() = default;
  SplitterNet(std::size_t feature_dim, std::size_t classes, const std::vector<std::size_t>& hidden, Activation act)
      : net(MetaNet::widths(feature_dim + classes, hidden), act), n_classes(classes) {}
};

// Features concatenated with a one-hot label block.
inline Tensor with_onehot(const Tensor& x, std::span<const std::size_t> labels, std::size_t n_classes) {
  if (x.rows() != labels.size()) throw std::invalid_argument("with_onehot: row/label count mismatch");
  const std::size_t n = x.rows(), d = x.cols();
  Tensor out({n, d + n_classes});
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= n_classes) throw std::invalid_argument("with_onehot: label out of range");
    for (std::size_t j = 0; j < d; ++j) out[i * (d + n_classes) + j] = x[i * d + j];
    out[i * (d + n_classes) + d + labels[i]] = 1.0;
  }
  return out;
}

// sigmoid rounds to exactly 0 or 1 beyond |logit| ~ 37; squeezing into
// [kProbFloor, 1 - kProbFloor] keeps head outputs strictly inside (0, 1).
inline constexpr double kProbFloor = 1e-12;

inline ad::Var open_unit(ad::Var p) { return ad::affine(p, 1.0 - 2.0 * kProbFloor, kProbFloor); }

// Sigmoid head over an Mlp that ends in one unit; result shape [batch].
inline ad::Var sigmoid_head(ad::Tape& tape, const Mlp& net, const Tensor& input, bool params_require_grad,
                            MlpTrace* trace_out = nullptr) {
  auto tr = net.trace(tape, input, params_require_grad);
  ad::Var logit = ad::reshape(tr.output, {input.rows()});
  ad::Var p = open_unit(ad::sigmoid(logit));
  if (trace_out) *trace_out = std::move(tr);
  return p;
}

// w / mean(w); the batch mean of the result is 1.
inline ad::Var renormalize(ad::Var raw) { return ad::div(raw, ad::mean(raw)); }

inline std::vector<double> renormalize(std::span<const double> raw) {
  if (raw.empty()) throw std::invalid_argument("renormalize: empty batch");
  double s = 0.0;
  for (double v : raw) s += v;
  const double m = s / static_cast<double>(raw.size());
  if (!(m > 0.0)) throw std::invalid_argument("renormalize: weights must have positive mean");
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] / m;
  return out;
}

inline std::vector<double> raw_meta_outputs(const MetaNet& m, const Tensor& input) {
  if (input.rows() == 0) throw std::invalid_argument("meta_weights: empty batch");
  ad::Tape tape;
  auto p = sigmoid_head(tape, m.net, input, false);
  return p.value().raw();
}

// Per-instance training weights, batch-renormalised to mean 1.
inline std::vector<double> meta_weights(const MetaNet& m, const Tensor& input) {
  return renormalize(raw_meta_outputs(m, input));
}

inline std::vector<double> split_probability(const SplitterNet& s, const Tensor& x, std::span<const std::size_t> y) {
  ad::Tape tape;
  auto p = sigmoid_head(tape, s.net, with_onehot(x, y, s.n_classes), false);
  return p.value().raw();
}

inline Tensor classifier_forward(const Mlp& m, const Tensor& x) { return m.forward(x); }

// ---- checkpoints ---------------------------------------------------------
//
// Text format, exact round trip via shortest-representation doubles:
//   lrw-mlp v1
//   activation <relu|tanh>
//   widths <w0> <w1> ...
//   param <name> <d0> <d1>
//   <values...>
//   ...
//   velocity
//   <values...>

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& tok, const std::string& where) {
  double v = 0.0;
  auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (r.ec != std::errc() || r.ptr != tok.data() + tok.size())
    throw std::invalid_argument(where + ": cannot parse number '" + tok + "'");
  return v;
}

inline void write_values(std::ostream& os, std::span<const double> v) {
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << fmt_double(v[i]);
  os << '\n';
}

inline void read_values(std::istream& is, std::span<double> out, const std::string& what) {
  std::string tok;
  for (auto& v : out) {
    if (!(is >> tok)) throw std::invalid_argument("checkpoint: truncated values for " + what);
    v = parse_double(tok, "checkpoint " + what);
  }
}

}  // namespace detail

inline void write_mlp(std::ostream& os, const Mlp& m) {
  os << "lrw-mlp v1\nactivation " << to_string(m.activation()) << "\nwidths";
  for (auto w : m.widths()) os << ' ' << w;
  os << '\n';
  const auto& ps = m.params();
  for (std::size_t i = 0; i < ps.count(); ++i) {
    os << "param " << ps.spec(i).name;
    for (auto d : ps.spec(i).shape) os << ' ' << d;
    os << '\n';
    detail::write_values(os, ps.view(i));
  }
  os << "velocity\n";
  detail::write_values(os, ps.velocity());
}

inline Mlp read_mlp(std::istream& is) {
  std::string magic, ver, key;
  if (!(is >> magic >> ver) || magic != "lrw-mlp" || ver != "v1")
    throw std::invalid_argument("checkpoint: missing 'lrw-mlp v1' header");
  std::string act;
  if (!(is >> key >> act) || key != "activation") throw std::invalid_argument("checkpoint: missing activation");
  if (!(is >> key) || key != "widths") throw std::invalid_argument("checkpoint: missing widths");
  std::string line;
  std::getline(is, line);
  std::istringstream ws(line);
  std::vector<std::size_t> widths;
  for (std::size_t w; ws >> w;) widths.push_back(w);
  Mlp m(widths, activation_from_string(act));
  auto& ps = m.params();
  for (std::size_t i = 0; i < ps.count(); ++i) {
    std::string name;
    std::size_t r = 0, c = 0;
    if (!(is >> key >> name >> r >> c) || key != "param" || name != ps.spec(i).name || Shape{r, c} != ps.spec(i).shape)
      throw std::invalid_argument("checkpoint: parameter header mismatch at " + ps.spec(i).name);
    detail::read_values(is, ps.view(i), ps.spec(i).name);
  }
  if (!(is >> key) || key != "velocity") throw std::invalid_argument("checkpoint: missing velocity block");
  detail::read_values(is, ps.velocity(), "velocity");
  return m;
}

inline void save_mlp(const Mlp& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_mlp(os, m);
  if (!os) throw IoError("write failed for '" + path + "'");
}

inline Mlp load_mlp(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  return read_mlp(is);
}

}  // namespace lrw

#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every primitive in execution order, so node i's parents
// always have smaller indices. backward() sweeps the record once in reverse.
// Nodes that do not depend on a requires_grad leaf are marked constant and
// never receive gradient storage.

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lrw/tensor.hpp"

namespace lrw::ad {

enum class Op {
  Leaf,
  MatMul,
  Add,
  Sub,
  Mul,
  Div,
  Affine,
  Relu,
  Tanh,
  Sigmoid,
  Softplus,
  Log,
  SoftmaxRows,
  Sum,
  Mean,
  IndexSelect,
  Transpose,
  Reshape,
  CrossEntropyRows,
};

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

namespace detail {

// How the right operand of a binary elementwise op is expanded.
enum class Bcast { Same, Scalar, Row };

struct Node {
  Op op = Op::Leaf;
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool has_grad = false;
  std::size_t a = 0;
  std::size_t b = 0;
  Bcast bcast = Bcast::Same;
  double s0 = 0.0;
  double s1 = 0.0;
  std::vector<std::size_t> index;  // IndexSelect rows, CrossEntropyRows labels
  Tensor cache;                    // softmax probabilities for CrossEntropyRows
};

}  // namespace detail

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor t, bool requires_grad = true) {
    detail::Node n;
    n.value = std::move(t);
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  Var constant(Tensor t) { return leaf(std::move(t), false); }

  std::size_t size() const { return nodes_.size(); }

  const Tensor& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  bool has_grad(Var v) const { return node(v).has_grad; }

  const Tensor& grad(Var v) const {
    const auto& n = node(v);
    if (!n.has_grad) throw std::logic_error("Tape::grad: node holds no gradient");
    return n.grad;
  }

  // Populates gradients of every requires_grad node reachable from root.
  // Previous gradients are discarded first, so repeated calls agree.
  void backward(Var root) {
    if (root.tape() != this) throw std::invalid_argument("backward: root is not on this tape");
    const auto& r = node(root);
    if (r.value.numel() != 1)
      throw std::invalid_argument("backward: root must be scalar, got shape " + shape_str(r.value.shape()));
    for (auto& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor();
    }
    if (!r.requires_grad) return;
    seed(root.id()).grad[0] = 1.0;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      if (!nodes_[i].has_grad) continue;
      propagate(i);
    }
  }

  Var push(detail::Node n) {
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  detail::Node& node(std::size_t i) { return nodes_[i]; }
  const detail::Node& node(Var v) const {
    if (v.tape() != this || v.id() >= nodes_.size()) throw std::invalid_argument("Var does not belong to this tape");
    return nodes_[v.id()];
  }

 private:
  // Zero-initialised gradient slot for node i, created on first touch.
  detail::Node& seed(std::size_t i) {
    auto& n = nodes_[i];
    if (!n.has_grad) {
      n.grad = Tensor(n.value.shape(), 0.0);
      n.has_grad = true;
    }
    return n;
  }

  void propagate(std::size_t i);

  std::vector<detail::Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }
inline bool Var::requires_grad() const { return tape_->requires_grad(*this); }

namespace detail {

inline Tape& same_tape(Var a, Var b, const char* op) {
  if (a.tape() == nullptr || a.tape() != b.tape())
    throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
  return *a.tape();
}

inline Bcast classify(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Bcast::Same;
  if (b.numel() == 1) return Bcast::Scalar;
  if (a.rank() == 2 && b.numel() == a.cols() && (b.rank() == 1 || b.rows() == 1)) return Bcast::Row;
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                              shape_str(b.shape()));
}

inline std::size_t bidx(Bcast m, std::size_t i, std::size_t cols) {
  switch (m) {
    case Bcast::Same: return i;
    case Bcast::Scalar: return 0;
    case Bcast::Row: return i % cols;
  }
  return i;
}

template <class F>
Var unary(Var x, Op op, F f, double s0 = 0.0, double s1 = 0.0) {
  Tape& t = *x.tape();
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = f(xv[i]);
  Node n;
  n.op = op;
  n.value = std::move(out);
  n.a = x.id();
  n.s0 = s0;
  n.s1 = s1;
  n.requires_grad = t.requires_grad(x);
  return t.push(std::move(n));
}

template <class F>
Var binary(Var a, Var b, Op op, const char* name, F f) {
  Tape& t = same_tape(a, b, name);
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  const Bcast m = classify(av, bv, name);
  Tensor out(av.shape());
  const std::size_t c = av.cols();
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = f(av[i], bv[bidx(m, i, c)]);
  Node n;
  n.op = op;
  n.value = std::move(out);
  n.a = a.id();
  n.b = b.id();
  n.bcast = m;
  n.requires_grad = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(n));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw std::invalid_argument(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b, "matmul");
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  detail::require_matrix(av, "matmul");
  detail::require_matrix(bv, "matmul");
  if (av.cols() != bv.rows())
    throw std::invalid_argument("matmul: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += aip * bv[p * m + j];
    }
  detail::Node node;
  node.op = Op::MatMul;
  node.value = std::move(out);
  node.a = a.id();
  node.b = b.id();
  node.requires_grad = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(node));
}

inline Var add(Var a, Var b) { return detail::binary(a, b, Op::Add, "add", [](double x, double y) { return x + y; }); }
inline Var sub(Var a, Var b) { return detail::binary(a, b, Op::Sub, "sub", [](double x, double y) { return x - y; }); }
inline Var mul(Var a, Var b) { return detail::binary(a, b, Op::Mul, "mul", [](double x, double y) { return x * y; }); }
inline Var div(Var a, Var b) { return detail::binary(a, b, Op::Div, "div", [](double x, double y) { return x / y; }); }

// scale * x + shift, elementwise.
inline Var affine(Var x, double scale, double shift) {
  return detail::unary(x, Op::Affine, [=](double v) { return scale * v + shift; }, scale, shift);
}

inline Var relu(Var x) { return detail::unary(x, Op::Relu, [](double v) { return v > 0 ? v : 0.0; }); }
inline Var tanh(Var x) { return detail::unary(x, Op::Tanh, [](double v) { return std::tanh(v); }); }
inline Var sigmoid(Var x) { return detail::unary(x, Op::Sigmoid, detail::sigmoid); }
inline Var softplus(Var x) { return detail::unary(x, Op::Softplus, detail::softplus); }

inline Var log(Var x) {
  for (double v : x.value().data())
    if (!(v > 0.0)) throw std::domain_error("log: non-positive input");
  return detail::unary(x, Op::Log, [](double v) { return std::log(v); });
}

inline Var softmax_rows(Var x) {
  Tape& t = *x.tape();
  const Tensor& xv = t.value(x);
  detail::require_matrix(xv, "softmax_rows");
  const std::size_t n = xv.rows(), c = xv.cols();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, xv[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (out[i * c + j] = std::exp(xv[i * c + j] - mx));
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  detail::Node n_;
  n_.op = Op::SoftmaxRows;
  n_.value = std::move(out);
  n_.a = x.id();
  n_.requires_grad = t.requires_grad(x);
  return t.push(std::move(n_));
}

inline Var sum(Var x) {
  Tape& t = *x.tape();
  double s = 0.0;
  for (double v : t.value(x).data()) s += v;
  detail::Node n;
  n.op = Op::Sum;
  n.value = Tensor::scalar(s);
  n.a = x.id();
  n.requires_grad = t.requires_grad(x);
  return t.push(std::move(n));
}

inline Var mean(Var x) {
  Tape& t = *x.tape();
  double s = 0.0;
  for (double v : t.value(x).data()) s += v;
  detail::Node n;
  n.op = Op::Mean;
  n.value = Tensor::scalar(s / static_cast<double>(t.value(x).numel()));
  n.a = x.id();
  n.requires_grad = t.requires_grad(x);
  return t.push(std::move(n));
}

// Rows of a matrix (or elements of a vector) picked by index, repeats allowed.
inline Var index_select(Var x, std::vector<std::size_t> rows) {
  Tape& t = *x.tape();
  const Tensor& xv = t.value(x);
  if (rows.empty()) throw std::invalid_argument("index_select: empty index list");
  const std::size_t n = xv.rank() == 2 ? xv.rows() : xv.numel();
  const std::size_t c = xv.rank() == 2 ? xv.cols() : 1;
  for (auto r : rows)
    if (r >= n)
      throw std::invalid_argument("index_select: row " + std::to_string(r) + " out of range for " +
                                  shape_str(xv.shape()));
  Shape s = xv.rank() == 2 ? Shape{rows.size(), c} : Shape{rows.size()};
  Tensor out(s);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[rows[i] * c + j];
  detail::Node node;
  node.op = Op::IndexSelect;
  node.value = std::move(out);
  node.a = x.id();
  node.index = std::move(rows);
  node.requires_grad = t.requires_grad(x);
  return t.push(std::move(node));
}

inline Var transpose(Var x) {
  Tape& t = *x.tape();
  const Tensor& xv = t.value(x);
  detail::require_matrix(xv, "transpose");
  const std::size_t r = xv.rows(), c = xv.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  detail::Node n;
  n.op = Op::Transpose;
  n.value = std::move(out);
  n.a = x.id();
  n.requires_grad = t.requires_grad(x);
  return t.push(std::move(n));
}

inline Var reshape(Var x, Shape shape) {
  Tape& t = *x.tape();
  const Tensor& xv = t.value(x);
  if (shape_numel(shape) != xv.numel())
    throw std::invalid_argument("reshape: shape mismatch " + shape_str(xv.shape()) + " vs " + shape_str(shape));
  detail::Node n;
  n.op = Op::Reshape;
  n.value = Tensor(std::move(shape), xv.raw());
  n.a = x.id();
  n.requires_grad = t.requires_grad(x);
  return t.push(std::move(n));
}

// Per-row softmax cross-entropy -log softmax(logits)[label], shape [batch].
inline Var cross_entropy_rows(Var logits, const std::vector<std::size_t>& labels) {
  Tape& t = *logits.tape();
  const Tensor& lv = t.value(logits);
  detail::require_matrix(lv, "cross_entropy");
  const std::size_t n = lv.rows(), c = lv.cols();
  if (labels.size() != n)
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                                shape_str(lv.shape()));
  Tensor probs(lv.shape());
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(labels[i]) + " out of range [0, " +
                                  std::to_string(c) + ")");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, lv[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (probs[i * c + j] = std::exp(lv[i * c + j] - mx));
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    out[i] = std::log(z) + mx - lv[i * c + labels[i]];
  }
  detail::Node node;
  node.op = Op::CrossEntropyRows;
  node.value = std::move(out);
  node.cache = std::move(probs);
  node.index = labels;
  node.a = logits.id();
  node.requires_grad = t.requires_grad(logits);
  return t.push(std::move(node));
}

// Mean softmax cross-entropy over the batch.
inline Var cross_entropy(Var logits, const std::vector<std::size_t>& labels) {
  return mean(cross_entropy_rows(logits, labels));
}

inline void Tape::propagate(std::size_t i) {
  using detail::Bcast;
  // Copy what we need: seed() may not reallocate nodes_, but keep access explicit.
  const detail::Node& n = nodes_[i];
  const Tensor& g = n.grad;
  auto want = [&](std::size_t p) { return nodes_[p].requires_grad; };

  switch (n.op) {
    case Op::Leaf: break;
    case Op::MatMul: {
      const Tensor& av = nodes_[n.a].value;
      const Tensor& bv = nodes_[n.b].value;
      const std::size_t rows = av.rows(), k = av.cols(), m = bv.cols();
      if (want(n.a)) {
        Tensor& ga = seed(n.a).grad;
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < m; ++j) {
            const double gij = g[r * m + j];
            if (gij == 0.0) continue;
            for (std::size_t p = 0; p < k; ++p) ga[r * k + p] += gij * bv[p * m + j];
          }
      }
      if (want(n.b)) {
        Tensor& gb = seed(n.b).grad;
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t p = 0; p < k; ++p) {
            const double arp = av[r * k + p];
            if (arp == 0.0) continue;
            for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += arp * g[r * m + j];
          }
      }
      break;
    }
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div: {
      const Tensor& av = nodes_[n.a].value;
      const Tensor& bv = nodes_[n.b].value;
      const std::size_t c = av.cols();
      const bool wa = want(n.a), wb = want(n.b);
      Tensor* ga = wa ? &seed(n.a).grad : nullptr;
      Tensor* gb = wb ? &seed(n.b).grad : nullptr;
      for (std::size_t k = 0; k < av.numel(); ++k) {
        const std::size_t j = detail::bidx(n.bcast, k, c);
        const double gk = g[k];
        switch (n.op) {
          case Op::Add:
            if (wa) (*ga)[k] += gk;
            if (wb) (*gb)[j] += gk;
            break;
          case Op::Sub:
            if (wa) (*ga)[k] += gk;
            if (wb) (*gb)[j] -= gk;
            break;
          case Op::Mul:
            if (wa) (*ga)[k] += gk * bv[j];
            if (wb) (*gb)[j] += gk * av[k];
            break;
          default:
            if (wa) (*ga)[k] += gk / bv[j];
            if (wb) (*gb)[j] -= gk * av[k] / (bv[j] * bv[j]);
            break;
        }
      }
      break;
    }
    case Op::Affine:
    case Op::Relu:
    case Op::Tanh:
    case Op::Sigmoid:
    case Op::Softplus:
    case Op::Log: {
      if (!want(n.a)) break;
      const Tensor& xv = nodes_[n.a].value;
      Tensor& ga = seed(n.a).grad;
      for (std::size_t k = 0; k < xv.numel(); ++k) {
        double d = 0.0;
        switch (n.op) {
          case Op::Affine: d = n.s0; break;
          case Op::Relu: d = xv[k] > 0 ? 1.0 : 0.0; break;
          case Op::Tanh: d = 1.0 - n.value[k] * n.value[k]; break;
          case Op::Sigmoid: d = n.value[k] * (1.0 - n.value[k]); break;
          case Op::Softplus: d = detail::sigmoid(xv[k]); break;
          default: d = 1.0 / xv[k]; break;
        }
        ga[k] += g[k] * d;
      }
      break;
    }
    case Op::SoftmaxRows: {
      if (!want(n.a)) break;
      Tensor& ga = seed(n.a).grad;
      const std::size_t rows = n.value.rows(), c = n.value.cols();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * n.value[r * c + j];
        for (std::size_t j = 0; j < c; ++j) ga[r * c + j] += n.value[r * c + j] * (g[r * c + j] - dot);
      }
      break;
    }
    case Op::Sum:
    case Op::Mean: {
      if (!want(n.a)) break;
      Tensor& ga = seed(n.a).grad;
      const double d = n.op == Op::Sum ? g[0] : g[0] / static_cast<double>(ga.numel());
      for (std::size_t k = 0; k < ga.numel(); ++k) ga[k] += d;
      break;
    }
    case Op::IndexSelect: {
      if (!want(n.a)) break;
      Tensor& ga = seed(n.a).grad;
      const std::size_t c = n.value.numel() / n.index.size();
      for (std::size_t r = 0; r < n.index.size(); ++r)
        for (std::size_t j = 0; j < c; ++j) ga[n.index[r] * c + j] += g[r * c + j];
      break;
    }
    case Op::Transpose: {
      if (!want(n.a)) break;
      Tensor& ga = seed(n.a).grad;
      const std::size_t r = n.value.rows(), c = n.value.cols();  // output is [c_in x r_in]
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[j * r + i] += g[i * c + j];
      break;
    }
    case Op::Reshape: {
      if (!want(n.a)) break;
      Tensor& ga = seed(n.a).grad;
      for (std::size_t k = 0; k < ga.numel(); ++k) ga[k] += g[k];
      break;
    }
    case Op::CrossEntropyRows: {
      if (!want(n.a)) break;
      Tensor& ga = seed(n.a).grad;
      const std::size_t rows = n.cache.rows(), c = n.cache.cols();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j)
          ga[r * c + j] += g[r] * (n.cache[r * c + j] - (j == n.index[r] ? 1.0 : 0.0));
      break;
    }
  }
}

}  // namespace lrw::ad

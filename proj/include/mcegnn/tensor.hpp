#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mcegnn/rng.hpp"

namespace mcegnn {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) {
    if (e < 0) throw std::invalid_argument("negative extent in shape");
    n *= e;
  }
  return n;
}

inline std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

class Tape;

// Dense row-major float64 array, optionally attached to a tape node so
// reverse-mode adjoints can flow through it. Copies are shallow (buffers are
// shared); deep copies are explicit via clone_constant().
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values) {
    if (numel(shape) != static_cast<std::int64_t>(values.size())) {
      throw std::invalid_argument("tensor values length " +
                                  std::to_string(values.size()) +
                                  " does not match shape " + shape_string(shape));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<double>>(std::move(values));
    return t;
  }

  static Tensor zeros(Shape shape) {
    auto n = numel(shape);
    return constant(std::move(shape), std::vector<double>(n, 0.0));
  }

  static Tensor full(Shape shape, double value) {
    auto n = numel(shape);
    return constant(std::move(shape), std::vector<double>(n, value));
  }

  static Tensor scalar(double value) { return constant({}, {value}); }

  // Trainable leaf: registered on the tape, grad buffer allocated.
  static Tensor leaf(Tape& tape, Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::int64_t size() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }
  bool defined() const { return data_ != nullptr; }

  std::vector<double>& data() { return *data_; }
  const std::vector<double>& data() const { return *data_; }

  bool has_grad() const { return grad_ != nullptr; }
  const std::vector<double>& grad() const {
    if (!grad_) throw std::logic_error("tensor has no grad buffer");
    return *grad_;
  }
  std::vector<double>& grad() {
    if (!grad_) throw std::logic_error("tensor has no grad buffer");
    return *grad_;
  }

  Tape* tape() const { return tape_; }
  int node() const { return node_; }

  double value() const {
    if (size() != 1) throw std::logic_error("value() requires a one-element tensor");
    return (*data_)[0];
  }

  Tensor clone_constant() const { return constant(shape_, *data_); }

  // Shared-buffer accessors used when recording backward closures.
  std::shared_ptr<std::vector<double>> data_ptr() const { return data_; }
  std::shared_ptr<std::vector<double>> grad_ptr() const { return grad_; }

  // Attach this tensor to `tape` as the output of an op. Allocates the grad
  // buffer first so the caller can capture it in the backward closure.
  std::shared_ptr<std::vector<double>> prepare_grad() {
    grad_ = std::make_shared<std::vector<double>>(data_->size(), 0.0);
    return grad_;
  }
  void set_node(Tape* tape, int node) {
    tape_ = tape;
    node_ = node;
  }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  std::shared_ptr<std::vector<double>> grad_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

// Append-only record of operations. Inputs always precede their outputs, so
// running the records in reverse order propagates adjoints with a single
// visit per node.
class Tape {
 public:
  int push(const char* op, std::shared_ptr<std::vector<double>> grad,
           std::function<void()> backward) {
    nodes_.push_back(Node{op, std::move(grad), std::move(backward)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::size_t size() const { return nodes_.size(); }

  // Drop every node at index >= keep. Used to roll the tape back to its
  // leaves between training steps.
  void truncate(std::size_t keep) {
    if (keep > nodes_.size()) throw std::logic_error("tape truncate beyond size");
    nodes_.resize(keep);
    dirty_below_ = std::min(dirty_below_, nodes_.size());
  }

  void run_backward(int out_node) {
    if (out_node < 0 || out_node >= static_cast<int>(nodes_.size())) {
      throw std::logic_error("backward from a node not on this tape");
    }
    // Grad buffers start zeroed at creation; only nodes touched by an earlier
    // sweep need re-zeroing.
    for (std::size_t i = 0; i < dirty_below_; ++i) {
      std::fill(nodes_[i].grad->begin(), nodes_[i].grad->end(), 0.0);
    }
    (*nodes_[static_cast<std::size_t>(out_node)].grad)[0] = 1.0;
    for (int i = out_node; i >= 0; --i) {
      auto& fn = nodes_[static_cast<std::size_t>(i)].backward;
      if (fn) fn();
    }
    dirty_below_ = nodes_.size();
  }

 private:
  struct Node {
    const char* op;
    std::shared_ptr<std::vector<double>> grad;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
  std::size_t dirty_below_ = 0;
};

inline Tensor Tensor::leaf(Tape& tape, Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  auto g = t.prepare_grad();
  t.set_node(&tape, tape.push("leaf", std::move(g), nullptr));
  return t;
}

// Seeds the output's adjoint with 1 and sweeps the tape. Every leaf reachable
// from `out` ends with its partial derivative; unreachable leaves end at zero.
inline void backward(const Tensor& out) {
  if (!out.tape()) throw std::logic_error("backward() on a constant tensor");
  if (out.size() != 1) {
    throw std::invalid_argument("backward() requires a scalar output, got shape " +
                                shape_string(out.shape()));
  }
  out.tape()->run_backward(out.node());
}

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

inline Tape* joint_tape(std::initializer_list<const Tensor*> ts) {
  Tape* tape = nullptr;
  for (const Tensor* t : ts) {
    if (!t->tape()) continue;
    if (tape && tape != t->tape()) {
      throw std::logic_error("operands recorded on different tapes");
    }
    tape = t->tape();
  }
  return tape;
}

inline void record(Tensor& out, Tape* tape, const char* op,
                   std::function<void(const std::vector<double>&)> pull) {
  if (!tape) return;
  auto og = out.prepare_grad();
  out.set_node(tape, tape->push(op, og, [og, pull = std::move(pull)]() { pull(*og); }));
}

// Matrix kernels. Callers always pass three distinct buffers, so the
// pointers are declared restrict to keep the inner loops vectorizable.

// C[r,c] += A[r,k] * B[k,c]
inline void mm_nn(const double* __restrict a, const double* __restrict b,
                  double* __restrict c, std::int64_t r, std::int64_t k, std::int64_t cc) {
  for (std::int64_t i = 0; i < r; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * cc;
    for (std::int64_t l = 0; l < k; ++l) {
      const double av = arow[l];
      const double* brow = b + l * cc;
      for (std::int64_t j = 0; j < cc; ++j) crow[j] += av * brow[j];
    }
  }
}

inline std::vector<double> transposed(const double* a, std::int64_t rows, std::int64_t cols) {
  std::vector<double> t(static_cast<std::size_t>(rows * cols));
  for (std::int64_t i = 0; i < rows; ++i) {
    for (std::int64_t j = 0; j < cols; ++j) t[j * rows + i] = a[i * cols + j];
  }
  return t;
}

// C[k,c] += A[r,k]^T * B[r,c]
inline void mm_tn(const double* __restrict a, const double* __restrict b,
                  double* __restrict c, std::int64_t r, std::int64_t k, std::int64_t cc) {
  for (std::int64_t i = 0; i < r; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * cc;
    for (std::int64_t l = 0; l < k; ++l) {
      const double av = arow[l];
      double* crow = c + l * cc;
      for (std::int64_t j = 0; j < cc; ++j) crow[j] += av * brow[j];
    }
  }
}

// Split a shape around `axis` into (outer, extent, inner) block sizes.
inline void axis_blocks(const Shape& s, std::size_t axis, std::int64_t& outer,
                        std::int64_t& extent, std::int64_t& inner) {
  if (axis >= s.size()) throw std::invalid_argument("axis out of range");
  outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  extent = s[axis];
  inner = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

}  // namespace detail

// ---- construction --------------------------------------------------------

// Deterministic pseudo-normal samples; same (shape, seed) gives identical
// bytes. Draws from the tensor stream of the SplitMix64 generator.
inline Tensor randn(Shape shape, std::uint64_t seed) {
  Rng rng(seed, rng_streams::kTensor);
  auto n = numel(shape);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.normal();
  return Tensor::constant(std::move(shape), std::move(v));
}

// ---- elementwise ----------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<double> out(a.data());
  const auto& bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  Tensor r = Tensor::constant(a.shape(), std::move(out));
  detail::record(r, detail::joint_tape({&a, &b}), "add",
                 [ag = a.grad_ptr(), bg = b.grad_ptr()](const std::vector<double>& g) {
                   if (ag)
                     for (std::size_t i = 0; i < g.size(); ++i) (*ag)[i] += g[i];
                   if (bg)
                     for (std::size_t i = 0; i < g.size(); ++i) (*bg)[i] += g[i];
                 });
  return r;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<double> out(a.data());
  const auto& bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  Tensor r = Tensor::constant(a.shape(), std::move(out));
  detail::record(r, detail::joint_tape({&a, &b}), "sub",
                 [ag = a.grad_ptr(), bg = b.grad_ptr()](const std::vector<double>& g) {
                   if (ag)
                     for (std::size_t i = 0; i < g.size(); ++i) (*ag)[i] += g[i];
                   if (bg)
                     for (std::size_t i = 0; i < g.size(); ++i) (*bg)[i] -= g[i];
                 });
  return r;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<double> out(a.data());
  const auto& bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  Tensor r = Tensor::constant(a.shape(), std::move(out));
  detail::record(r, detail::joint_tape({&a, &b}), "mul",
                 [ag = a.grad_ptr(), bg = b.grad_ptr(), ad = a.data_ptr(),
                  bd = b.data_ptr()](const std::vector<double>& g) {
                   if (ag)
                     for (std::size_t i = 0; i < g.size(); ++i) (*ag)[i] += (*bd)[i] * g[i];
                   if (bg)
                     for (std::size_t i = 0; i < g.size(); ++i) (*bg)[i] += (*ad)[i] * g[i];
                 });
  return r;
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data());
  for (auto& x : out) x *= s;
  Tensor r = Tensor::constant(a.shape(), std::move(out));
  detail::record(r, detail::joint_tape({&a}), "scale",
                 [ag = a.grad_ptr(), s](const std::vector<double>& g) {
                   if (ag)
                     for (std::size_t i = 0; i < g.size(); ++i) (*ag)[i] += s * g[i];
                 });
  return r;
}

// Multiplies each leading-axis row by a fixed (non-differentiable) weight.
inline Tensor row_scale(const Tensor& a, const std::vector<double>& weights) {
  if (a.shape().empty() || a.shape()[0] != static_cast<std::int64_t>(weights.size())) {
    throw std::invalid_argument("row_scale: weights length must match leading extent");
  }
  const std::int64_t rows = a.shape()[0];
  const std::int64_t width = rows ? a.size() / rows : 0;
  std::vector<double> out(a.data());
  for (std::int64_t i = 0; i < rows; ++i) {
    for (std::int64_t j = 0; j < width; ++j) out[i * width + j] *= weights[i];
  }
  Tensor r = Tensor::constant(a.shape(), std::move(out));
  detail::record(r, detail::joint_tape({&a}), "row_scale",
                 [ag = a.grad_ptr(), weights, rows, width](const std::vector<double>& g) {
                   if (!ag) return;
                   for (std::int64_t i = 0; i < rows; ++i) {
                     for (std::int64_t j = 0; j < width; ++j) {
                       (*ag)[i * width + j] += weights[i] * g[i * width + j];
                     }
                   }
                 });
  return r;
}

// y = x * sigmoid(x); backward uses y' = s(x) * (1 + x * (1 - s(x))) with the
// sigmoid values saved from the forward pass.
inline Tensor silu(const Tensor& a) {
  Tape* tape = detail::joint_tape({&a});
  const auto& av = a.data();
  std::vector<double> out(av.size());
  auto sig = std::make_shared<std::vector<double>>();
  if (tape) sig->resize(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-av[i]));
    if (tape) (*sig)[i] = s;
    out[i] = av[i] * s;
  }
  Tensor r = Tensor::constant(a.shape(), std::move(out));
  detail::record(r, tape, "silu",
                 [ag = a.grad_ptr(), ad = a.data_ptr(), sig](const std::vector<double>& g) {
                   if (!ag) return;
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     const double s = (*sig)[i];
                     (*ag)[i] += s * (1.0 + (*ad)[i] * (1.0 - s)) * g[i];
                   }
                 });
  return r;
}

// ---- linear algebra --------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_string(a.shape()) +
                                " x " + shape_string(b.shape()));
  }
  const std::int64_t r = a.shape()[0], k = a.shape()[1], c = b.shape()[1];
  std::vector<double> out(static_cast<std::size_t>(r * c), 0.0);
  detail::mm_nn(a.data().data(), b.data().data(), out.data(), r, k, c);
  Tensor res = Tensor::constant({r, c}, std::move(out));
  detail::record(res, detail::joint_tape({&a, &b}), "matmul",
                 [ag = a.grad_ptr(), bg = b.grad_ptr(), ad = a.data_ptr(), bd = b.data_ptr(),
                  r, k, c](const std::vector<double>& g) {
                   if (ag) {
                     // dA = dC * B^T via a materialized transpose; B is small.
                     const auto bt = detail::transposed(bd->data(), k, c);
                     detail::mm_nn(g.data(), bt.data(), ag->data(), r, c, k);
                   }
                   if (bg) detail::mm_tn(ad->data(), g.data(), bg->data(), r, k, c);
                 });
  return res;
}

// Batched matmul: [e,p,q] x [e,q,s] -> [e,p,s].
inline Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 3 || b.shape().size() != 3 || a.shape()[0] != b.shape()[0] ||
      a.shape()[2] != b.shape()[1]) {
    throw std::invalid_argument("bmm: incompatible shapes " + shape_string(a.shape()) +
                                " x " + shape_string(b.shape()));
  }
  const std::int64_t e = a.shape()[0], p = a.shape()[1], q = a.shape()[2], s = b.shape()[2];
  std::vector<double> out(static_cast<std::size_t>(e * p * s), 0.0);
  for (std::int64_t i = 0; i < e; ++i) {
    detail::mm_nn(a.data().data() + i * p * q, b.data().data() + i * q * s,
                  out.data() + i * p * s, p, q, s);
  }
  Tensor res = Tensor::constant({e, p, s}, std::move(out));
  detail::record(res, detail::joint_tape({&a, &b}), "bmm",
                 [ag = a.grad_ptr(), bg = b.grad_ptr(), ad = a.data_ptr(), bd = b.data_ptr(),
                  e, p, q, s](const std::vector<double>& g) {
                   for (std::int64_t i = 0; i < e; ++i) {
                     const double* gi = g.data() + i * p * s;
                     if (ag) {
                       const auto bt = detail::transposed(bd->data() + i * q * s, q, s);
                       detail::mm_nn(gi, bt.data(), ag->data() + i * p * q, p, s, q);
                     }
                     if (bg) detail::mm_tn(ad->data() + i * p * q, gi, bg->data() + i * q * s, p, q, s);
                   }
                 });
  return res;
}

// Row-wise outer product: [n,p] x [n,q] -> [n,p,q]. This is the one sanctioned
// broadcast-like op; it realizes a column vector times a row of per-channel
// weights.
inline Tensor outer_rows(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[0] != b.shape()[0]) {
    throw std::invalid_argument("outer_rows: incompatible shapes " +
                                shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const std::int64_t n = a.shape()[0], p = a.shape()[1], q = b.shape()[1];
  std::vector<double> out(static_cast<std::size_t>(n * p * q));
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < p; ++j) {
      const double x = av[i * p + j];
      for (std::int64_t l = 0; l < q; ++l) out[(i * p + j) * q + l] = x * bv[i * q + l];
    }
  }
  Tensor res = Tensor::constant({n, p, q}, std::move(out));
  detail::record(res, detail::joint_tape({&a, &b}), "outer_rows",
                 [ag = a.grad_ptr(), bg = b.grad_ptr(), ad = a.data_ptr(), bd = b.data_ptr(),
                  n, p, q](const std::vector<double>& g) {
                   for (std::int64_t i = 0; i < n; ++i) {
                     for (std::int64_t j = 0; j < p; ++j) {
                       const double* gi = g.data() + (i * p + j) * q;
                       if (ag) {
                         double acc = 0.0;
                         for (std::int64_t l = 0; l < q; ++l) acc += gi[l] * (*bd)[i * q + l];
                         (*ag)[i * p + j] += acc;
                       }
                       if (bg) {
                         const double x = (*ad)[i * p + j];
                         for (std::int64_t l = 0; l < q; ++l) (*bg)[i * q + l] += x * gi[l];
                       }
                     }
                   }
                 });
  return res;
}

// Adds a width-c vector to each row of a [r,c] matrix (bias application).
inline Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  if (a.shape().size() != 2 || v.shape().size() != 1 || a.shape()[1] != v.shape()[0]) {
    throw std::invalid_argument("add_rowvec: incompatible shapes " +
                                shape_string(a.shape()) + " + " + shape_string(v.shape()));
  }
  const std::int64_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(a.data());
  const auto& vv = v.data();
  for (std::int64_t i = 0; i < r; ++i) {
    for (std::int64_t j = 0; j < c; ++j) out[i * c + j] += vv[j];
  }
  Tensor res = Tensor::constant(a.shape(), std::move(out));
  detail::record(res, detail::joint_tape({&a, &v}), "add_rowvec",
                 [ag = a.grad_ptr(), vg = v.grad_ptr(), r, c](const std::vector<double>& g) {
                   if (ag)
                     for (std::size_t i = 0; i < g.size(); ++i) (*ag)[i] += g[i];
                   if (vg) {
                     for (std::int64_t i = 0; i < r; ++i) {
                       for (std::int64_t j = 0; j < c; ++j) (*vg)[j] += g[i * c + j];
                     }
                   }
                 });
  return res;
}

// ---- shape ops -------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw std::invalid_argument("reshape: element count mismatch " +
                                shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  Tensor r = Tensor::constant(std::move(shape), a.data());
  detail::record(r, detail::joint_tape({&a}), "reshape",
                 [ag = a.grad_ptr()](const std::vector<double>& g) {
                   if (ag)
                     for (std::size_t i = 0; i < g.size(); ++i) (*ag)[i] += g[i];
                 });
  return r;
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no parts");
  const Shape& first = parts[0].shape();
  Shape out_shape = first;
  for (std::size_t p = 1; p < parts.size(); ++p) {
    const Shape& s = parts[p].shape();
    if (s.size() != first.size()) throw std::invalid_argument("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) {
        throw std::invalid_argument("concat: extent mismatch off the concat axis");
      }
    }
    out_shape[axis] += s[axis];
  }

  std::int64_t outer, extent, inner;
  detail::axis_blocks(out_shape, axis, outer, extent, inner);
  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
  std::vector<std::int64_t> part_extents(parts.size());
  std::int64_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const std::int64_t pe = parts[p].shape()[axis];
    part_extents[p] = pe;
    const auto& pv = parts[p].data();
    for (std::int64_t o = 0; o < outer; ++o) {
      const double* src = pv.data() + o * pe * inner;
      double* dst = out.data() + (o * extent + offset) * inner;
      std::copy(src, src + pe * inner, dst);
    }
    offset += pe;
  }

  Tensor r = Tensor::constant(out_shape, std::move(out));
  std::vector<const Tensor*> ptrs;
  Tape* tape = nullptr;
  for (const auto& p : parts) {
    if (p.tape()) {
      if (tape && tape != p.tape()) throw std::logic_error("operands recorded on different tapes");
      tape = p.tape();
    }
  }
  std::vector<std::shared_ptr<std::vector<double>>> grads;
  grads.reserve(parts.size());
  for (const auto& p : parts) grads.push_back(p.grad_ptr());
  detail::record(r, tape, "concat",
                 [grads, part_extents, outer, extent, inner](const std::vector<double>& g) {
                   std::int64_t off = 0;
                   for (std::size_t p = 0; p < grads.size(); ++p) {
                     const std::int64_t pe = part_extents[p];
                     if (grads[p]) {
                       for (std::int64_t o = 0; o < outer; ++o) {
                         const double* src = g.data() + (o * extent + off) * inner;
                         double* dst = grads[p]->data() + o * pe * inner;
                         for (std::int64_t i = 0; i < pe * inner; ++i) dst[i] += src[i];
                       }
                     }
                     off += pe;
                   }
                 });
  return r;
}

inline Tensor slice(const Tensor& a, std::size_t axis, std::int64_t start, std::int64_t len) {
  std::int64_t outer, extent, inner;
  detail::axis_blocks(a.shape(), axis, outer, extent, inner);
  if (start < 0 || len < 0 || start + len > extent) {
    throw std::invalid_argument("slice: range out of bounds");
  }
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  std::vector<double> out(static_cast<std::size_t>(outer * len * inner));
  const auto& av = a.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    const double* src = av.data() + (o * extent + start) * inner;
    std::copy(src, src + len * inner, out.data() + o * len * inner);
  }
  Tensor r = Tensor::constant(std::move(out_shape), std::move(out));
  detail::record(r, detail::joint_tape({&a}), "slice",
                 [ag = a.grad_ptr(), outer, extent, inner, start, len](const std::vector<double>& g) {
                   if (!ag) return;
                   for (std::int64_t o = 0; o < outer; ++o) {
                     const double* src = g.data() + o * len * inner;
                     double* dst = ag->data() + (o * extent + start) * inner;
                     for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                   }
                 });
  return r;
}

// ---- reductions ------------------------------------------------------------

inline Tensor sum_axis(const Tensor& a, std::size_t axis) {
  std::int64_t outer, extent, inner;
  detail::axis_blocks(a.shape(), axis, outer, extent, inner);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(static_cast<std::size_t>(outer * inner), 0.0);
  const auto& av = a.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t e = 0; e < extent; ++e) {
      const double* src = av.data() + (o * extent + e) * inner;
      double* dst = out.data() + o * inner;
      for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  Tensor r = Tensor::constant(std::move(out_shape), std::move(out));
  detail::record(r, detail::joint_tape({&a}), "sum_axis",
                 [ag = a.grad_ptr(), outer, extent, inner](const std::vector<double>& g) {
                   if (!ag) return;
                   for (std::int64_t o = 0; o < outer; ++o) {
                     const double* src = g.data() + o * inner;
                     for (std::int64_t e = 0; e < extent; ++e) {
                       double* dst = ag->data() + (o * extent + e) * inner;
                       for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
                     }
                   }
                 });
  return r;
}

inline Tensor sum_all(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  Tensor r = Tensor::scalar(acc);
  detail::record(r, detail::joint_tape({&a}), "sum_all",
                 [ag = a.grad_ptr()](const std::vector<double>& g) {
                   if (!ag) return;
                   for (auto& x : *ag) x += g[0];
                 });
  return r;
}

// ---- geometric kernels -----------------------------------------------------

// Channel-wise squared Euclidean norms: [e,3,m] -> [e,m], entry (e,c) is the
// squared length of channel c's difference vector. Exactly invariant under
// orthogonal maps of the spatial axis.
inline Tensor channel_sqnorms(const Tensor& a) {
  if (a.shape().size() != 3 || a.shape()[1] != 3) {
    throw std::invalid_argument("channel_sqnorms expects shape [n,3,m], got " +
                                shape_string(a.shape()));
  }
  const std::int64_t n = a.shape()[0], m = a.shape()[2];
  std::vector<double> out(static_cast<std::size_t>(n * m), 0.0);
  const auto& av = a.data();
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t d = 0; d < 3; ++d) {
      for (std::int64_t c = 0; c < m; ++c) {
        const double x = av[(i * 3 + d) * m + c];
        out[i * m + c] += x * x;
      }
    }
  }
  Tensor r = Tensor::constant({n, m}, std::move(out));
  detail::record(r, detail::joint_tape({&a}), "channel_sqnorms",
                 [ag = a.grad_ptr(), ad = a.data_ptr(), n, m](const std::vector<double>& g) {
                   if (!ag) return;
                   for (std::int64_t i = 0; i < n; ++i) {
                     for (std::int64_t d = 0; d < 3; ++d) {
                       for (std::int64_t c = 0; c < m; ++c) {
                         const std::int64_t idx = (i * 3 + d) * m + c;
                         (*ag)[idx] += 2.0 * (*ad)[idx] * g[i * m + c];
                       }
                     }
                   }
                 });
  return r;
}

// ---- indexed row ops -------------------------------------------------------

// Selects leading-axis rows: out[k] = a[idx[k]]. Backward scatters adjoints
// back to the source rows.
inline Tensor gather_rows(const Tensor& a, const std::vector<std::int64_t>& idx) {
  if (a.shape().empty()) throw std::invalid_argument("gather_rows: rank-0 input");
  const std::int64_t rows = a.shape()[0];
  const std::int64_t width = rows ? a.size() / rows : numel(Shape(a.shape().begin() + 1, a.shape().end()));
  for (auto i : idx) {
    if (i < 0 || i >= rows) throw std::invalid_argument("gather_rows: index out of range");
  }
  Shape out_shape = a.shape();
  out_shape[0] = static_cast<std::int64_t>(idx.size());
  std::vector<double> out(idx.size() * static_cast<std::size_t>(width));
  const auto& av = a.data();
  for (std::size_t k = 0; k < idx.size(); ++k) {
    std::copy(av.data() + idx[k] * width, av.data() + (idx[k] + 1) * width,
              out.data() + static_cast<std::int64_t>(k) * width);
  }
  Tensor r = Tensor::constant(std::move(out_shape), std::move(out));
  detail::record(r, detail::joint_tape({&a}), "gather_rows",
                 [ag = a.grad_ptr(), idx, width](const std::vector<double>& g) {
                   if (!ag) return;
                   for (std::size_t k = 0; k < idx.size(); ++k) {
                     const double* src = g.data() + static_cast<std::int64_t>(k) * width;
                     double* dst = ag->data() + idx[k] * width;
                     for (std::int64_t i = 0; i < width; ++i) dst[i] += src[i];
                   }
                 });
  return r;
}

// Sums leading-axis rows into buckets: out[idx[k]] += a[k]. Rows are visited
// in ascending k, which pins the floating-point summation order.
inline Tensor scatter_sum_rows(const Tensor& a, const std::vector<std::int64_t>& idx,
                               std::int64_t n_out) {
  if (a.shape().empty()) throw std::invalid_argument("scatter_sum_rows: rank-0 input");
  if (a.shape()[0] != static_cast<std::int64_t>(idx.size())) {
    throw std::invalid_argument("scatter_sum_rows: index count must match leading extent");
  }
  for (auto i : idx) {
    if (i < 0 || i >= n_out) throw std::invalid_argument("scatter_sum_rows: index out of range");
  }
  const std::int64_t in_rows = a.shape()[0];
  const std::int64_t width = in_rows ? a.size() / in_rows
                                     : numel(Shape(a.shape().begin() + 1, a.shape().end()));
  Shape out_shape = a.shape();
  out_shape[0] = n_out;
  std::vector<double> out(static_cast<std::size_t>(n_out * width), 0.0);
  const auto& av = a.data();
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const double* src = av.data() + static_cast<std::int64_t>(k) * width;
    double* dst = out.data() + idx[k] * width;
    for (std::int64_t i = 0; i < width; ++i) dst[i] += src[i];
  }
  Tensor r = Tensor::constant(std::move(out_shape), std::move(out));
  detail::record(r, detail::joint_tape({&a}), "scatter_sum_rows",
                 [ag = a.grad_ptr(), idx, width](const std::vector<double>& g) {
                   if (!ag) return;
                   for (std::size_t k = 0; k < idx.size(); ++k) {
                     const double* src = g.data() + idx[k] * width;
                     double* dst = ag->data() + static_cast<std::int64_t>(k) * width;
                     for (std::int64_t i = 0; i < width; ++i) dst[i] += src[i];
                   }
                 });
  return r;
}

}  // namespace mcegnn

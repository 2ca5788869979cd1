#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcegnn/tensor.hpp"

namespace mcegnn {

enum class Activation { kSilu, kIdentity };

// Fused y = act(x W + b) with one tape node. Keeps the pre-activation and
// sigmoid values for the backward pass instead of materializing the
// intermediate tensors; MLP stacks spend most of their time here.
inline Tensor affine_act(const Tensor& x, const Tensor& w, const Tensor& b, Activation act) {
  if (x.shape().size() != 2 || w.shape().size() != 2 || b.shape().size() != 1 ||
      x.shape()[1] != w.shape()[0] || w.shape()[1] != b.shape()[0]) {
    throw std::invalid_argument("affine_act: incompatible shapes");
  }
  const std::int64_t r = x.shape()[0], k = x.shape()[1], c = w.shape()[1];
  Tape* tape = detail::joint_tape({&x, &w, &b});

  std::vector<double> out(static_cast<std::size_t>(r * c), 0.0);
  detail::mm_nn(x.data().data(), w.data().data(), out.data(), r, k, c);
  const auto& bv = b.data();
  for (std::int64_t i = 0; i < r; ++i) {
    for (std::int64_t j = 0; j < c; ++j) out[i * c + j] += bv[j];
  }

  auto pre = std::make_shared<std::vector<double>>();
  auto sig = std::make_shared<std::vector<double>>();
  if (act == Activation::kSilu) {
    if (tape) *pre = out;
    if (tape) sig->resize(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-out[i]));
      if (tape) (*sig)[i] = s;
      out[i] *= s;
    }
  }

  Tensor res = Tensor::constant({r, c}, std::move(out));
  detail::record(res, tape, "affine_act",
                 [xg = x.grad_ptr(), wg = w.grad_ptr(), bg = b.grad_ptr(), xd = x.data_ptr(),
                  wd = w.data_ptr(), pre, sig, act, r, k, c](const std::vector<double>& g) {
                   std::vector<double> dz;
                   const double* dzp = g.data();
                   if (act == Activation::kSilu) {
                     dz.resize(g.size());
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       const double s = (*sig)[i];
                       dz[i] = g[i] * s * (1.0 + (*pre)[i] * (1.0 - s));
                     }
                     dzp = dz.data();
                   }
                   if (xg) {
                     const auto wt = detail::transposed(wd->data(), k, c);
                     detail::mm_nn(dzp, wt.data(), xg->data(), r, c, k);
                   }
                   if (wg) detail::mm_tn(xd->data(), dzp, wg->data(), r, k, c);
                   if (bg) {
                     for (std::int64_t i = 0; i < r; ++i) {
                       for (std::int64_t j = 0; j < c; ++j) (*bg)[j] += dzp[i * c + j];
                     }
                   }
                 });
  return res;
}

// Plain fully connected network: affine layers with silu between hidden
// layers and a configurable final activation. Weights are Glorot-uniform in
// [-sqrt(6/(in+out)), +sqrt(6/(in+out))], biases start at zero. final_gain
// shrinks the last layer's init range; heads that scale geometric updates use
// a small gain so freshly initialized stacks keep unit-scale outputs.
class Mlp {
 public:
  Mlp() = default;

  Mlp(Tape& tape, const std::vector<std::int64_t>& widths, Activation final_activation,
      Rng& rng, double final_gain = 1.0)
      : final_activation_(final_activation) {
    if (widths.size() < 2) throw std::invalid_argument("Mlp needs at least two widths");
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const std::int64_t in = widths[l], out = widths[l + 1];
      if (in < 1 || out < 1) throw std::invalid_argument("Mlp widths must be positive");
      const bool last = (l + 2 == widths.size());
      const double bound =
          (last ? final_gain : 1.0) * std::sqrt(6.0 / static_cast<double>(in + out));
      std::vector<double> w(static_cast<std::size_t>(in * out));
      for (auto& x : w) x = rng.uniform(-bound, bound);
      layers_.push_back(Layer{Tensor::leaf(tape, {in, out}, std::move(w)),
                              Tensor::leaf(tape, {out}, std::vector<double>(out, 0.0))});
    }
  }

  Tensor forward(const Tensor& x) const {
    if (x.shape().size() != 2 || x.shape()[1] != in_width()) {
      throw std::invalid_argument("Mlp::forward: input width " + shape_string(x.shape()) +
                                  " does not match " + std::to_string(in_width()));
    }
    Tensor h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const bool last = (l + 1 == layers_.size());
      const Activation act =
          (!last || final_activation_ == Activation::kSilu) ? Activation::kSilu
                                                            : Activation::kIdentity;
      h = affine_act(h, layers_[l].weight, layers_[l].bias, act);
    }
    return h;
  }

  std::int64_t in_width() const { return layers_.front().weight.shape()[0]; }
  std::int64_t out_width() const { return layers_.back().weight.shape()[1]; }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> ps;
    for (const auto& l : layers_) {
      ps.push_back(l.weight);
      ps.push_back(l.bias);
    }
    return ps;
  }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  // Replaces every parameter with an untracked constant copy; forward passes
  // on the result record nothing.
  void freeze() {
    for (auto& l : layers_) {
      l.weight = l.weight.clone_constant();
      l.bias = l.bias.clone_constant();
    }
  }

 private:
  struct Layer {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]
  };
  std::vector<Layer> layers_;
  Activation final_activation_ = Activation::kIdentity;
};

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Gradients are cleared after each step.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      if (!p.has_grad()) throw std::invalid_argument("Adam: parameter without grad buffer");
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  std::int64_t step_count() const { return t_; }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < params_.size(); ++p) {
      auto& data = params_[p].data();
      auto& grad = params_[p].grad();
      auto& m = m_[p];
      auto& v = v_[p];
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double g = grad[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
      std::fill(grad.begin(), grad.end(), 0.0);
    }
  }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
  AdamConfig cfg_;
};

// Rescales all gradients so their joint L2 norm is at most max_norm.
// Returns the pre-clip norm.
inline double clip_global_norm(const std::vector<Tensor>& params, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_global_norm: max_norm must be > 0");
  double sq = 0.0;
  for (const auto& p : params) {
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (auto p : params) {  // copies share the grad buffer
      for (double& g : p.grad()) g *= f;
    }
  }
  return norm;
}

}  // namespace mcegnn

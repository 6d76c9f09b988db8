// Minimal differentiable-layer kit with hand-written backward passes:
// affine, layer norm, leaky rectifier, softmax, dropout, single-head
// cross-attention, gated fusion, momentum SGD with cosine annealing, and
// label-smoothed cross entropy. Every backward here is checked against
// central finite differences in the test suite.
#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dipv/core.hpp"
#include "dipv/tensor.hpp"

namespace dipv {

// Named parameter tensors, each with a same-shape gradient slot.
// Iteration follows insertion order so seeded initialization and update
// sweeps are reproducible.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor2 value;
    Tensor2 grad;
  };

  Tensor2& add(const std::string& name, Tensor2 init) {
    if (index_.count(name)) throw InvalidInput("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.push_back({name, std::move(init), Tensor2()});
    Entry& e = entries_.back();
    e.grad = Tensor2(e.value.rows(), e.value.cols());
    return e.value;
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Tensor2& value(const std::string& name) { return entries_[at(name)].value; }
  const Tensor2& value(const std::string& name) const { return entries_[at(name)].value; }
  Tensor2& grad(const std::string& name) { return entries_[at(name)].grad; }
  const Tensor2& grad(const std::string& name) const { return entries_[at(name)].grad; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  void zero_grads() {
    for (Entry& e : entries_) e.grad.fill(0.0);
  }

  void accumulate_grads(const ParameterSet& other) {
    if (other.size() != size()) throw InvalidInput("parameter set mismatch");
    for (std::size_t i = 0; i < entries_.size(); ++i)
      accumulate(entries_[i].grad, other.entries_[i].grad);
  }

  void scale_grads(double s) {
    for (Entry& e : entries_)
      for (double& g : e.grad.data()) g *= s;
  }

 private:
  std::size_t at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidInput("unknown parameter: " + name);
    return it->second;
  }

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

inline double kLeakySlopeDefault = 0.01;

// ---------------------------------------------------------------------------
// affine: y = x w + b, bias broadcast over rows

inline Tensor2 affine_forward(const Tensor2& x, const Tensor2& w, const Tensor2& b) {
  if (x.cols() != w.rows()) throw InvalidInput("affine: x.cols != w.rows");
  if (b.rows() != 1 || b.cols() != w.cols()) throw InvalidInput("affine: bias must be 1 x w.cols");
  Tensor2 y = matmul(x, w);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += b(0, j);
  return y;
}

inline void affine_backward(const Tensor2& x, const Tensor2& w, const Tensor2& grad_y,
                            Tensor2* grad_x, Tensor2* grad_w, Tensor2* grad_b) {
  if (grad_x) *grad_x = matmul_nt(grad_y, w);
  if (grad_w) *grad_w = matmul_tn(x, grad_y);
  if (grad_b) {
    *grad_b = Tensor2(1, grad_y.cols());
    for (std::size_t i = 0; i < grad_y.rows(); ++i)
      for (std::size_t j = 0; j < grad_y.cols(); ++j) (*grad_b)(0, j) += grad_y(i, j);
  }
}

// ---------------------------------------------------------------------------
// layer normalization (per row, population variance)

inline Tensor2 layernorm_rows(const Tensor2& x, double epsilon) {
  if (epsilon <= 0.0) throw InvalidInput("layernorm: epsilon must be positive");
  Tensor2 y(x.rows(), x.cols());
  const double d = static_cast<double>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* xr = x.row(i);
    double mean = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) mean += xr[j];
    mean /= d;
    double var = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double c = xr[j] - mean;
      var += c * c;
    }
    var /= d;
    const double inv = 1.0 / std::sqrt(var + epsilon);
    for (std::size_t j = 0; j < x.cols(); ++j) y(i, j) = (xr[j] - mean) * inv;
  }
  return y;
}

// grad of layernorm_rows; statistics are recomputed from x
inline Tensor2 layernorm_rows_backward(const Tensor2& x, double epsilon, const Tensor2& grad_y) {
  Tensor2 gx(x.rows(), x.cols());
  const double d = static_cast<double>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* xr = x.row(i);
    const double* gr = grad_y.row(i);
    double mean = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) mean += xr[j];
    mean /= d;
    double var = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double c = xr[j] - mean;
      var += c * c;
    }
    var /= d;
    const double inv = 1.0 / std::sqrt(var + epsilon);
    double g_mean = 0.0, gx_mean = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      g_mean += gr[j];
      gx_mean += gr[j] * (xr[j] - mean) * inv;
    }
    g_mean /= d;
    gx_mean /= d;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double xhat = (xr[j] - mean) * inv;
      gx(i, j) = inv * (gr[j] - g_mean - xhat * gx_mean);
    }
  }
  return gx;
}

inline Tensor2 layernorm_forward(const Tensor2& x, const Tensor2& gain, const Tensor2& bias,
                                 double epsilon) {
  if (gain.rows() != 1 || gain.cols() != x.cols() || bias.rows() != 1 || bias.cols() != x.cols())
    throw InvalidInput("layernorm: gain/bias must be 1 x cols");
  Tensor2 y = layernorm_rows(x, epsilon);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) = y(i, j) * gain(0, j) + bias(0, j);
  return y;
}

inline void layernorm_backward(const Tensor2& x, const Tensor2& gain, double epsilon,
                               const Tensor2& grad_y, Tensor2* grad_x, Tensor2* grad_gain,
                               Tensor2* grad_bias) {
  Tensor2 xhat = layernorm_rows(x, epsilon);
  if (grad_gain) {
    *grad_gain = Tensor2(1, x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) (*grad_gain)(0, j) += grad_y(i, j) * xhat(i, j);
  }
  if (grad_bias) {
    *grad_bias = Tensor2(1, x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) (*grad_bias)(0, j) += grad_y(i, j);
  }
  if (grad_x) {
    Tensor2 g = grad_y;
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) *= gain(0, j);
    *grad_x = layernorm_rows_backward(x, epsilon, g);
  }
}

// ---------------------------------------------------------------------------
// pointwise nonlinearities

inline Tensor2 leaky_relu_forward(const Tensor2& x, double slope) {
  Tensor2 y = x;
  for (double& v : y.data())
    if (v < 0.0) v *= slope;
  return y;
}

inline Tensor2 leaky_relu_backward(const Tensor2& x, double slope, const Tensor2& grad_y) {
  Tensor2 gx = grad_y;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x.data()[i] < 0.0) gx.data()[i] *= slope;
  return gx;
}

inline Tensor2 relu_forward(const Tensor2& x) { return leaky_relu_forward(x, 0.0); }

inline Tensor2 relu_backward(const Tensor2& x, const Tensor2& grad_y) {
  return leaky_relu_backward(x, 0.0, grad_y);
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// ---------------------------------------------------------------------------
// softmax (per row, max-shifted)

inline Tensor2 softmax_forward(const Tensor2& x) {
  Tensor2 y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* xr = x.row(i);
    double mx = xr[0];
    for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      y(i, j) = std::exp(xr[j] - mx);
      sum += y(i, j);
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < x.cols(); ++j) y(i, j) *= inv;
  }
  return y;
}

// takes the forward output s, not the logits
inline Tensor2 softmax_backward(const Tensor2& s, const Tensor2& grad_y) {
  Tensor2 gx(s.rows(), s.cols());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    double dot_gs = 0.0;
    for (std::size_t j = 0; j < s.cols(); ++j) dot_gs += grad_y(i, j) * s(i, j);
    for (std::size_t j = 0; j < s.cols(); ++j) gx(i, j) = s(i, j) * (grad_y(i, j) - dot_gs);
  }
  return gx;
}

// ---------------------------------------------------------------------------
// dropout (inverted scaling; inference path is the identity map)

inline Tensor2 dropout_forward(const Tensor2& x, bool train_mode, double rate, Rng& rng,
                               Tensor2* mask_out = nullptr) {
  if (rate < 0.0 || rate >= 1.0) throw InvalidInput("dropout: rate must lie in [0, 1)");
  if (!train_mode || rate == 0.0) {
    if (mask_out) *mask_out = Tensor2(x.rows(), x.cols(), 1.0);
    return x;
  }
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor2 mask(x.rows(), x.cols());
  Tensor2 y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double m = (rng.uniform() >= rate) ? keep_scale : 0.0;
    mask.data()[i] = m;
    y.data()[i] = x.data()[i] * m;
  }
  if (mask_out) *mask_out = std::move(mask);
  return y;
}

inline Tensor2 dropout_backward(const Tensor2& mask, const Tensor2& grad_y) {
  Tensor2 gx = grad_y;
  for (std::size_t i = 0; i < gx.size(); ++i) gx.data()[i] *= mask.data()[i];
  return gx;
}

// ---------------------------------------------------------------------------
// single-head scaled dot-product cross-attention with learned projections

struct AttentionCache {
  Tensor2 query, keys, values;  // inputs
  Tensor2 q, k, v;              // projected
  Tensor2 weights;              // softmax rows, N x M
};

inline Tensor2 cross_attention_forward(const Tensor2& query, const Tensor2& keys,
                                       const Tensor2& values, const Tensor2& wq,
                                       const Tensor2& wk, const Tensor2& wv,
                                       AttentionCache* cache = nullptr) {
  if (query.cols() != wq.rows() || keys.cols() != wk.rows() || values.cols() != wv.rows())
    throw InvalidInput("cross_attention: projection shape mismatch");
  if (wq.cols() != wk.cols()) throw InvalidInput("cross_attention: q/k output dims disagree");
  if (keys.rows() != values.rows()) throw InvalidInput("cross_attention: keys/values row mismatch");
  Tensor2 q = matmul(query, wq);
  Tensor2 k = matmul(keys, wk);
  Tensor2 v = matmul(values, wv);
  Tensor2 scores = matmul_nt(q, k);
  const double scale = 1.0 / std::sqrt(static_cast<double>(wq.cols()));
  for (double& s : scores.data()) s *= scale;
  Tensor2 weights = softmax_forward(scores);
  Tensor2 out = matmul(weights, v);
  if (cache) *cache = {query, keys, values, std::move(q), std::move(k), std::move(v),
                       std::move(weights)};
  return out;
}

inline void cross_attention_backward(const AttentionCache& c, const Tensor2& wq, const Tensor2& wk,
                                     const Tensor2& wv, const Tensor2& grad_out, Tensor2* grad_query,
                                     Tensor2* grad_keys, Tensor2* grad_values, Tensor2* grad_wq,
                                     Tensor2* grad_wk, Tensor2* grad_wv) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(wq.cols()));
  Tensor2 grad_weights = matmul_nt(grad_out, c.v);
  Tensor2 grad_v = matmul_tn(c.weights, grad_out);
  Tensor2 grad_scores = softmax_backward(c.weights, grad_weights);
  for (double& s : grad_scores.data()) s *= scale;
  Tensor2 grad_q = matmul(grad_scores, c.k);
  Tensor2 grad_k = matmul_tn(grad_scores, c.q);
  if (grad_wq) *grad_wq = matmul_tn(c.query, grad_q);
  if (grad_wk) *grad_wk = matmul_tn(c.keys, grad_k);
  if (grad_wv) *grad_wv = matmul_tn(c.values, grad_v);
  if (grad_query) *grad_query = matmul_nt(grad_q, wq);
  if (grad_keys) *grad_keys = matmul_nt(grad_k, wk);
  if (grad_values) *grad_values = matmul_nt(grad_v, wv);
}

// ---------------------------------------------------------------------------
// gated fusion: g = sigmoid([local || global] wg + bg),
// out = g .* local + (1-g) .* (global wp + bp)

struct GateCache {
  Tensor2 local, global_vec;
  Tensor2 concat;      // N x 2d
  Tensor2 gate;        // N x d, post-sigmoid
  Tensor2 projected;   // 1 x d
};

inline Tensor2 gate_fusion_forward(const Tensor2& local, const Tensor2& global_vec,
                                   const Tensor2& wg, const Tensor2& bg, const Tensor2& wp,
                                   const Tensor2& bp, GateCache* cache = nullptr) {
  const std::size_t n = local.rows();
  const std::size_t d = local.cols();
  if (global_vec.rows() != 1 || global_vec.cols() != d)
    throw InvalidInput("gate_fusion: global vector must be 1 x d");
  if (wg.rows() != 2 * d || wg.cols() != d || wp.rows() != d || wp.cols() != d)
    throw InvalidInput("gate_fusion: weight shape mismatch");
  Tensor2 concat(n, 2 * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      concat(i, j) = local(i, j);
      concat(i, d + j) = global_vec(0, j);
    }
  }
  Tensor2 gate = affine_forward(concat, wg, bg);
  for (double& v : gate.data()) v = sigmoid(v);
  Tensor2 projected = affine_forward(global_vec, wp, bp);
  Tensor2 out(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out(i, j) = gate(i, j) * local(i, j) + (1.0 - gate(i, j)) * projected(0, j);
  if (cache) *cache = {local, global_vec, std::move(concat), std::move(gate), std::move(projected)};
  return out;
}

inline void gate_fusion_backward(const GateCache& c, const Tensor2& wg, const Tensor2& wp,
                                 const Tensor2& grad_out, Tensor2* grad_local,
                                 Tensor2* grad_global, Tensor2* grad_wg, Tensor2* grad_bg,
                                 Tensor2* grad_wp, Tensor2* grad_bp) {
  const std::size_t n = c.local.rows();
  const std::size_t d = c.local.cols();
  Tensor2 grad_gate_pre(n, d);
  Tensor2 grad_local_acc(n, d);
  Tensor2 grad_projected(1, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double g = c.gate(i, j);
      const double go = grad_out(i, j);
      grad_local_acc(i, j) = go * g;
      grad_projected(0, j) += go * (1.0 - g);
      const double dgate = go * (c.local(i, j) - c.projected(0, j));
      grad_gate_pre(i, j) = dgate * g * (1.0 - g);
    }
  }
  Tensor2 grad_concat;
  affine_backward(c.concat, wg, grad_gate_pre, &grad_concat, grad_wg, grad_bg);
  Tensor2 grad_global_acc(1, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      grad_local_acc(i, j) += grad_concat(i, j);
      grad_global_acc(0, j) += grad_concat(i, d + j);
    }
  Tensor2 grad_global_from_proj;
  affine_backward(c.global_vec, wp, grad_projected, &grad_global_from_proj, grad_wp, grad_bp);
  accumulate(grad_global_acc, grad_global_from_proj);
  if (grad_local) *grad_local = std::move(grad_local_acc);
  if (grad_global) *grad_global = std::move(grad_global_acc);
}

// ---------------------------------------------------------------------------
// loss

struct LossResult {
  double loss = 0.0;
  Tensor2 grad;  // same shape as logits
};

inline LossResult cross_entropy_label_smoothing(const Tensor2& logits,
                                                const std::vector<std::size_t>& labels,
                                                double smoothing) {
  if (smoothing < 0.0 || smoothing >= 1.0)
    throw InvalidInput("label smoothing must lie in [0, 1)");
  if (labels.size() != logits.rows()) throw InvalidInput("label count != logit rows");
  const std::size_t n = logits.rows();
  const std::size_t classes = logits.cols();
  for (std::size_t lab : labels)
    if (lab >= classes) throw InvalidInput("label index out of range");

  Tensor2 probs = softmax_forward(logits);
  LossResult res;
  res.grad = Tensor2(n, classes);
  const double uniform = smoothing / static_cast<double>(classes);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* lr = logits.row(i);
    double mx = lr[0];
    for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, lr[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < classes; ++j) sum += std::exp(lr[j] - mx);
    const double logz = mx + std::log(sum);
    for (std::size_t j = 0; j < classes; ++j) {
      const double q = uniform + (j == labels[i] ? 1.0 - smoothing : 0.0);
      res.loss -= q * (lr[j] - logz) * inv_n;
      res.grad(i, j) = (probs(i, j) - q) * inv_n;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// optimization

struct CosineSchedule {
  double lr_start = 0.1;
  double lr_end = 0.001;
  std::size_t total_steps = 1;

  double lr_at(std::size_t step) const {
    if (total_steps == 0) return lr_end;
    const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + std::cos(kPi * t));
  }
};

struct TrainState {
  ParameterSet params;
  std::vector<Tensor2> momentum;  // parallel to params.entries()
  std::size_t step = 0;
  CosineSchedule schedule;
  double momentum_coeff = 0.9;
  std::vector<double> loss_curve;

  void init_momentum() {
    momentum.clear();
    momentum.reserve(params.size());
    for (const auto& e : params.entries()) momentum.emplace_back(e.value.rows(), e.value.cols());
  }
};

// p <- p - lr * (mu * buf + g); buf <- mu * buf + g
inline void sgd_step(TrainState& state) {
  if (state.momentum.size() != state.params.size()) state.init_momentum();
  const double lr = state.schedule.lr_at(state.step);
  auto& entries = state.params.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor2& buf = state.momentum[i];
    const Tensor2& g = entries[i].grad;
    Tensor2& v = entries[i].value;
    for (std::size_t j = 0; j < v.size(); ++j) {
      buf.data()[j] = state.momentum_coeff * buf.data()[j] + g.data()[j];
      v.data()[j] -= lr * buf.data()[j];
    }
  }
  ++state.step;
}

// Fan-balanced uniform init, biases left at zero.
inline Tensor2 xavier_init(std::size_t rows, std::size_t cols, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor2 t(rows, cols);
  for (double& v : t.data()) v = rng.uniform(-a, a);
  return t;
}

}  // namespace dipv

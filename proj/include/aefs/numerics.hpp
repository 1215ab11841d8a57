#pragma once

// Dense numeric core: affine maps, activations, batch normalization, Adam,
// Xavier initialization and a central-difference gradient checker. All
// arithmetic is double precision.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "aefs/errors.hpp"
#include "aefs/random.hpp"
#include "aefs/tensor.hpp"

namespace aefs {

// ---------------------------------------------------------------------------
// Matrix products

// a (m x k) * b (k x n)
inline Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_string(a) + " * " + shape_string(b));
  }
  Tensor2 out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* bk = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += aik * bk[j];
    }
  }
  return out;
}

// a^T (k x m)^T * b (k x n) -> m x n
inline Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: " + shape_string(a) + "^T * " + shape_string(b));
  }
  Tensor2 out(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double* br = b.row(r).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double ari = a(r, i);
      if (ari == 0.0) continue;
      double* o = out.row(i).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += ari * br[j];
    }
  }
  return out;
}

// a (m x n) * b^T (k x n)^T -> m x k
inline Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: " + shape_string(a) + " * " + shape_string(b) + "^T");
  }
  Tensor2 out(a.rows(), b.rows());
  const std::size_t n = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ai = a.row(i).data();
    for (std::size_t k = 0; k < b.rows(); ++k) {
      const double* bk = b.row(k).data();
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += ai[j] * bk[j];
      out(i, k) = s;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Affine map y = x w + b

inline Tensor2 affine_forward(const Tensor2& x, const Tensor2& w, std::span<const double> b) {
  if (x.cols() != w.rows() || b.size() != w.cols()) {
    throw DimensionError("affine_forward: x " + shape_string(x) + ", w " + shape_string(w) +
                         ", b " + std::to_string(b.size()));
  }
  Tensor2 y = matmul(x, w);
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto row = y.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
  }
  return y;
}

struct AffineGrads {
  Tensor2 dx;
  Tensor2 dw;
  std::vector<double> db;
};

inline AffineGrads affine_backward(const Tensor2& x, const Tensor2& w, const Tensor2& dy) {
  if (x.cols() != w.rows() || dy.rows() != x.rows() || dy.cols() != w.cols()) {
    throw DimensionError("affine_backward: x " + shape_string(x) + ", w " + shape_string(w) +
                         ", dy " + shape_string(dy));
  }
  AffineGrads g{matmul_nt(dy, w), matmul_tn(x, dy), std::vector<double>(w.cols(), 0.0)};
  for (std::size_t i = 0; i < dy.rows(); ++i) {
    const auto row = dy.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) g.db[j] += row[j];
  }
  return g;
}

// ---------------------------------------------------------------------------
// Activations

inline double sigmoid(double v) {
  if (std::isnan(v)) throw NumericError("sigmoid: NaN input");
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

// Max-subtracted softmax.
inline std::vector<double> softmax(std::span<const double> v) {
  std::vector<double> out(v.size());
  if (v.empty()) return out;
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) {
    if (std::isnan(x)) throw NumericError("softmax: NaN input");
    m = std::max(m, x);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

inline Tensor2 softmax_rows(const Tensor2& logits) {
  Tensor2 out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto s = softmax(logits.row(i));
    std::copy(s.begin(), s.end(), out.row(i).begin());
  }
  return out;
}

// ds -> dlogits given the softmax output s.
inline Tensor2 softmax_rows_backward(const Tensor2& s, const Tensor2& ds) {
  if (!s.same_shape(ds)) throw DimensionError("softmax_rows_backward: shape mismatch");
  Tensor2 dz(s.rows(), s.cols());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    const auto si = s.row(i);
    const auto gi = ds.row(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < si.size(); ++j) dot += si[j] * gi[j];
    auto out = dz.row(i);
    for (std::size_t j = 0; j < si.size(); ++j) out[j] = si[j] * (gi[j] - dot);
  }
  return dz;
}

inline Tensor2 relu(const Tensor2& x) {
  Tensor2 y = x;
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

// Uses the forward output: the derivative is 1 where the output is positive.
inline Tensor2 relu_backward(const Tensor2& y, const Tensor2& dy) {
  if (!y.same_shape(dy)) throw DimensionError("relu_backward: shape mismatch");
  Tensor2 dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (y[i] <= 0.0) dx[i] = 0.0;
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Initialization

// Uniform in +-sqrt(6 / (rows + cols)).
inline Tensor2 xavier_init(std::size_t rows, std::size_t cols, Rng& rng) {
  if (rows == 0 || cols == 0) throw DimensionError("xavier_init: empty shape");
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor2 t(rows, cols);
  for (double& v : t.values()) v = uniform(rng, -bound, bound);
  return t;
}

inline Tensor2 xavier_init(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  return xavier_init(rows, cols, rng);
}

// ---------------------------------------------------------------------------
// Fully connected layer with cached input for the backward pass.

class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, const std::string& name)
      : weight(name + ".weight", xavier_init(in, out, rng)),
        bias(name + ".bias", Tensor2(1, out)) {}

  std::size_t in_features() const noexcept { return weight.value.rows(); }
  std::size_t out_features() const noexcept { return weight.value.cols(); }

  Tensor2 forward(const Tensor2& x) {
    input_ = x;
    return affine_forward(x, weight.value, bias.value.values());
  }

  // Accumulates into weight.grad and bias.grad; returns dL/dx.
  Tensor2 backward(const Tensor2& dy) {
    AffineGrads g = affine_backward(input_, weight.value, dy);
    for (std::size_t i = 0; i < g.dw.size(); ++i) weight.grad[i] += g.dw[i];
    for (std::size_t j = 0; j < g.db.size(); ++j) bias.grad[j] += g.db[j];
    return std::move(g.dx);
  }

  Parameter weight;
  Parameter bias;

 private:
  Tensor2 input_;
};

// ---------------------------------------------------------------------------
// Batch normalization

enum class NormMode { training, inference };

struct BatchNormState {
  Parameter gamma;
  Parameter beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
  NormMode mode = NormMode::training;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t features, const std::string& name = "bn")
      : gamma(name + ".gamma", Tensor2(1, features, 1.0)),
        beta(name + ".beta", Tensor2(1, features, 0.0)),
        running_mean(features, 0.0),
        running_var(features, 1.0) {}

  std::size_t features() const noexcept { return running_mean.size(); }
};

struct BatchNormCache {
  Tensor2 x_hat;
  std::vector<double> inv_std;
  NormMode mode = NormMode::training;
};

// Training mode normalizes with the biased batch variance and folds the
// unbiased variance into the running estimate.
inline Tensor2 batch_norm(const Tensor2& x, BatchNormState& state,
                          BatchNormCache* cache = nullptr) {
  const std::size_t n = x.rows();
  const std::size_t f = x.cols();
  if (f != state.features()) {
    throw DimensionError("batch_norm: " + std::to_string(f) + " features, state has " +
                         std::to_string(state.features()));
  }
  std::vector<double> mean(f, 0.0);
  std::vector<double> var(f, 0.0);
  if (state.mode == NormMode::training) {
    if (n < 2) throw DegenerateBatchError("batch_norm: training mode needs a batch of at least 2");
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = x.row(i);
      for (std::size_t j = 0; j < f; ++j) mean[j] += r[j];
    }
    for (double& m : mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = x.row(i);
      for (std::size_t j = 0; j < f; ++j) {
        const double d = r[j] - mean[j];
        var[j] += d * d;
      }
    }
    const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
    for (std::size_t j = 0; j < f; ++j) {
      var[j] /= static_cast<double>(n);
      state.running_mean[j] = (1.0 - state.momentum) * state.running_mean[j] + state.momentum * mean[j];
      state.running_var[j] =
          (1.0 - state.momentum) * state.running_var[j] + state.momentum * var[j] * unbias;
    }
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }

  std::vector<double> inv_std(f);
  for (std::size_t j = 0; j < f; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + state.eps);

  Tensor2 x_hat(n, f);
  Tensor2 y(n, f);
  const auto gamma = state.gamma.value.values();
  const auto beta = state.beta.value.values();
  for (std::size_t i = 0; i < n; ++i) {
    const auto xr = x.row(i);
    auto hr = x_hat.row(i);
    auto yr = y.row(i);
    for (std::size_t j = 0; j < f; ++j) {
      hr[j] = (xr[j] - mean[j]) * inv_std[j];
      yr[j] = gamma[j] * hr[j] + beta[j];
    }
  }
  if (cache != nullptr) {
    cache->x_hat = std::move(x_hat);
    cache->inv_std = std::move(inv_std);
    cache->mode = state.mode;
  }
  return y;
}

// Accumulates into gamma.grad / beta.grad; returns dL/dx.
inline Tensor2 batch_norm_backward(const Tensor2& dy, const BatchNormCache& cache,
                                   BatchNormState& state) {
  const std::size_t n = dy.rows();
  const std::size_t f = dy.cols();
  if (!dy.same_shape(cache.x_hat)) throw DimensionError("batch_norm_backward: shape mismatch");
  const auto gamma = state.gamma.value.values();
  auto dgamma = state.gamma.grad.values();
  auto dbeta = state.beta.grad.values();

  std::vector<double> sum_dxhat(f, 0.0);
  std::vector<double> sum_dxhat_xhat(f, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto d = dy.row(i);
    const auto h = cache.x_hat.row(i);
    for (std::size_t j = 0; j < f; ++j) {
      dgamma[j] += d[j] * h[j];
      dbeta[j] += d[j];
      const double dh = d[j] * gamma[j];
      sum_dxhat[j] += dh;
      sum_dxhat_xhat[j] += dh * h[j];
    }
  }

  Tensor2 dx(n, f);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto d = dy.row(i);
    const auto h = cache.x_hat.row(i);
    auto o = dx.row(i);
    for (std::size_t j = 0; j < f; ++j) {
      const double dh = d[j] * gamma[j];
      if (cache.mode == NormMode::training) {
        o[j] = cache.inv_std[j] * (dh - inv_n * sum_dxhat[j] - h[j] * inv_n * sum_dxhat_xhat[j]);
      } else {
        o[j] = cache.inv_std[j] * dh;
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Tensor2 m;
  Tensor2 v;
  std::int64_t t = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  AdamState(std::size_t rows, std::size_t cols, const AdamOptions& o = {})
      : m(rows, cols), v(rows, cols), lr(o.lr), beta1(o.beta1), beta2(o.beta2), eps(o.eps) {}
};

// Bias-corrected Adam update, in place.
inline void adam_step(Tensor2& param, const Tensor2& grad, AdamState& state) {
  if (!param.same_shape(grad) || !param.same_shape(state.m) || !param.same_shape(state.v)) {
    throw DimensionError("adam_step: param " + shape_string(param) + ", grad " +
                         shape_string(grad) + ", state " + shape_string(state.m));
  }
  state.t += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  const double step = state.lr / c1;
  const double inv_sqrt_c2 = 1.0 / std::sqrt(c2);
  auto p = param.values();
  const auto g = grad.values();
  auto m = state.m.values();
  auto v = state.v.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
    v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
    p[i] -= step * m[i] / (std::sqrt(v[i]) * inv_sqrt_c2 + state.eps);
  }
}

class Adam {
 public:
  Adam(std::vector<Parameter*> params, const AdamOptions& options = {})
      : params_(std::move(params)) {
    states_.reserve(params_.size());
    for (const Parameter* p : params_) {
      states_.emplace_back(p->value.rows(), p->value.cols(), options);
    }
  }

  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      adam_step(params_[i]->value, params_[i]->grad, states_[i]);
    }
  }

  void zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
  }

 private:
  std::vector<Parameter*> params_;
  std::vector<AdamState> states_;
};

// ---------------------------------------------------------------------------
// Gradient checking

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// loss_fn must zero the gradients, run forward and backward, and return the
// loss. The error of one entry is |analytic - numeric| / max(1, |analytic|).
inline GradCheckReport grad_check(const std::function<double()>& loss_fn,
                                  std::span<Parameter* const> params, double eps = 1e-5) {
  loss_fn();
  std::vector<Tensor2> analytic;
  analytic.reserve(params.size());
  for (const Parameter* p : params) analytic.push_back(p->grad);

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + eps;
      const double plus = loss_fn();
      p.value[i] = saved - eps;
      const double minus = loss_fn();
      p.value[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      if (err > report.max_relative_error || report.worst_parameter.empty()) {
        report = {std::max(err, report.max_relative_error), p.name, i, a, numeric};
      }
    }
  }
  // Leave analytic gradients in place for callers that inspect them.
  for (std::size_t pi = 0; pi < params.size(); ++pi) params[pi]->grad = analytic[pi];
  return report;
}

}  // namespace aefs

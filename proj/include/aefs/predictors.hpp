#pragma once

// Prediction layers over concatenated field embeddings (MLP, DeepFM, DCN),
// the batch-norm -> affine -> softmax controller, and binary cross-entropy.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "aefs/errors.hpp"
#include "aefs/numerics.hpp"

namespace aefs {

enum class Backbone { mlp, deepfm, dcn };

inline std::string to_string(Backbone b) {
  switch (b) {
    case Backbone::mlp: return "mlp";
    case Backbone::deepfm: return "deepfm";
    case Backbone::dcn: return "dcn";
  }
  return "?";
}

inline Backbone parse_backbone(std::string_view s) {
  if (s == "mlp") return Backbone::mlp;
  if (s == "deepfm") return Backbone::deepfm;
  if (s == "dcn") return Backbone::dcn;
  throw ConfigError("unknown backbone '" + std::string(s) + "' (expected mlp, deepfm or dcn)");
}

struct PredictorConfig {
  Backbone variant = Backbone::mlp;
  std::size_t input_fields = 0;
  std::size_t emb_dim = 0;
  std::vector<std::size_t> hidden_dims{16, 16};
  std::size_t n_cross_layers = 2;  // DCN only

  std::size_t input_width() const noexcept { return input_fields * emb_dim; }

  void validate() const {
    if (input_fields == 0 || emb_dim == 0) throw ConfigError("predictor: empty input");
    if (hidden_dims.empty()) throw ConfigError("predictor: hidden_dims must be non-empty");
    for (const auto h : hidden_dims) {
      if (h == 0) throw ConfigError("predictor: zero-width hidden layer");
    }
    if (variant == Backbone::dcn && n_cross_layers == 0) throw ConfigError("predictor: DCN needs a cross layer");
  }
};

// Pairwise interaction sum_{i<j} <e_i, e_j> via (square of sum - sum of squares) / 2.
inline double fm_second_order(std::span<const double> e, std::size_t fields, std::size_t dim) {
  double total = 0.0;
  for (std::size_t f = 0; f < dim; ++f) {
    double sum = 0.0;
    double sq = 0.0;
    for (std::size_t j = 0; j < fields; ++j) {
      const double v = e[j * dim + f];
      sum += v;
      sq += v * v;
    }
    total += sum * sum - sq;
  }
  return 0.5 * total;
}

class Predictor {
 public:
  Predictor() = default;
  Predictor(const PredictorConfig& config, Rng& rng, const std::string& name) : config_(config) {
    config_.validate();
    const std::size_t width = config_.input_width();
    std::size_t in = width;
    for (std::size_t i = 0; i < config_.hidden_dims.size(); ++i) {
      hidden_.emplace_back(in, config_.hidden_dims[i], rng, name + ".hidden" + std::to_string(i));
      in = config_.hidden_dims[i];
    }
    if (config_.variant == Backbone::dcn) {
      for (std::size_t l = 0; l < config_.n_cross_layers; ++l) {
        cross_w_.emplace_back(name + ".cross" + std::to_string(l) + ".weight", xavier_init(1, width, rng));
        cross_b_.emplace_back(name + ".cross" + std::to_string(l) + ".bias", Tensor2(1, width));
      }
      out_ = Linear(width + in, 1, rng, name + ".out");
    } else {
      out_ = Linear(in, 1, rng, name + ".out");
    }
    if (config_.variant == Backbone::deepfm) {
      linear_vec_ = Parameter(name + ".fm_linear.weight", xavier_init(1, config_.emb_dim, rng));
      linear_bias_ = Parameter(name + ".fm_linear.bias", Tensor2(1, 1));
    }
  }

  const PredictorConfig& config() const noexcept { return config_; }

  // e: B x (fields * dim) -> B x 1 logits. Caches what backward needs.
  Tensor2 forward_logits(const Tensor2& e) {
    if (e.cols() != config_.input_width()) {
      throw DimensionError("predictor: input width " + std::to_string(e.cols()) + ", configured for " +
                           std::to_string(config_.input_width()));
    }
    input_ = e;
    hidden_out_.clear();
    Tensor2 h = e;
    for (auto& layer : hidden_) {
      h = relu(layer.forward(h));
      hidden_out_.push_back(h);
    }

    Tensor2 logit;
    if (config_.variant == Backbone::dcn) {
      cross_forward(e);
      const Tensor2& xl = cross_x_.back();
      Tensor2 cat(e.rows(), xl.cols() + h.cols());
      for (std::size_t b = 0; b < e.rows(); ++b) {
        auto r = cat.row(b);
        std::copy(xl.row(b).begin(), xl.row(b).end(), r.begin());
        std::copy(h.row(b).begin(), h.row(b).end(), r.begin() + static_cast<std::ptrdiff_t>(xl.cols()));
      }
      logit = out_.forward(cat);
    } else {
      logit = out_.forward(h);
    }

    if (config_.variant == Backbone::deepfm) {
      const std::size_t k = config_.input_fields;
      const std::size_t d = config_.emb_dim;
      const auto v = linear_vec_.value.values();
      for (std::size_t b = 0; b < e.rows(); ++b) {
        const auto r = e.row(b);
        double lin = linear_bias_.value[0];
        for (std::size_t j = 0; j < k; ++j) {
          for (std::size_t f = 0; f < d; ++f) lin += v[f] * r[j * d + f];
        }
        logit(b, 0) += lin + fm_second_order(r, k, d);
      }
    }
    return logit;
  }

  Tensor2 forward(const Tensor2& e) {
    Tensor2 p = forward_logits(e);
    for (double& v : p.values()) v = sigmoid(v);
    return p;
  }

  // dlogit: B x 1. Accumulates parameter gradients; returns dL/de.
  Tensor2 backward(const Tensor2& dlogit) {
    const std::size_t batch = input_.rows();
    const std::size_t width = config_.input_width();
    if (dlogit.rows() != batch || dlogit.cols() != 1) throw DimensionError("predictor backward: bad dlogit shape");

    Tensor2 de(batch, width);
    Tensor2 dh;
    if (config_.variant == Backbone::dcn) {
      const Tensor2 dcat = out_.backward(dlogit);
      const std::size_t hw = hidden_out_.back().cols();
      Tensor2 dxl(batch, width);
      dh = Tensor2(batch, hw);
      for (std::size_t b = 0; b < batch; ++b) {
        const auto r = dcat.row(b);
        std::copy(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(width), dxl.row(b).begin());
        std::copy(r.begin() + static_cast<std::ptrdiff_t>(width), r.end(), dh.row(b).begin());
      }
      cross_backward(dxl, de);
    } else {
      dh = out_.backward(dlogit);
    }

    for (std::size_t i = hidden_.size(); i-- > 0;) {
      dh = hidden_[i].backward(relu_backward(hidden_out_[i], dh));
    }
    for (std::size_t i = 0; i < de.size(); ++i) de[i] += dh[i];

    if (config_.variant == Backbone::deepfm) {
      const std::size_t k = config_.input_fields;
      const std::size_t d = config_.emb_dim;
      const auto v = linear_vec_.value.values();
      auto dv = linear_vec_.grad.values();
      std::vector<double> sums(d);
      for (std::size_t b = 0; b < batch; ++b) {
        const double g = dlogit(b, 0);
        const auto r = input_.row(b);
        auto out = de.row(b);
        linear_bias_.grad[0] += g;
        std::fill(sums.begin(), sums.end(), 0.0);
        for (std::size_t j = 0; j < k; ++j) {
          for (std::size_t f = 0; f < d; ++f) sums[f] += r[j * d + f];
        }
        for (std::size_t j = 0; j < k; ++j) {
          for (std::size_t f = 0; f < d; ++f) {
            const double x = r[j * d + f];
            dv[f] += g * x;
            out[j * d + f] += g * (v[f] + sums[f] - x);
          }
        }
      }
    }
    return de;
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& l : hidden_) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    out.push_back(&out_.weight);
    out.push_back(&out_.bias);
    for (std::size_t l = 0; l < cross_w_.size(); ++l) {
      out.push_back(&cross_w_[l]);
      out.push_back(&cross_b_[l]);
    }
    if (config_.variant == Backbone::deepfm) {
      out.push_back(&linear_vec_);
      out.push_back(&linear_bias_);
    }
    return out;
  }

  // Test access to the DCN cross parameters.
  std::vector<Parameter>& cross_weights() noexcept { return cross_w_; }
  std::vector<Parameter>& cross_biases() noexcept { return cross_b_; }
  const Tensor2& cross_output() const noexcept { return cross_x_.back(); }

 private:
  // x_{l+1} = x_0 * (x_l . w_l) + b_l + x_l
  void cross_forward(const Tensor2& x0) {
    const std::size_t batch = x0.rows();
    const std::size_t width = x0.cols();
    cross_x_.assign(1, x0);
    cross_s_.assign(cross_w_.size(), std::vector<double>(batch));
    for (std::size_t l = 0; l < cross_w_.size(); ++l) {
      const Tensor2& xl = cross_x_.back();
      Tensor2 next(batch, width);
      const auto w = cross_w_[l].value.values();
      const auto bias = cross_b_[l].value.values();
      for (std::size_t b = 0; b < batch; ++b) {
        const auto xr = xl.row(b);
        const auto x0r = x0.row(b);
        double s = 0.0;
        for (std::size_t j = 0; j < width; ++j) s += xr[j] * w[j];
        cross_s_[l][b] = s;
        auto nr = next.row(b);
        for (std::size_t j = 0; j < width; ++j) nr[j] = x0r[j] * s + bias[j] + xr[j];
      }
      cross_x_.push_back(std::move(next));
    }
  }

  // Adds dL/dx_0 into dx0.
  void cross_backward(Tensor2 g, Tensor2& dx0) {
    const std::size_t batch = g.rows();
    const std::size_t width = g.cols();
    const Tensor2& x0 = cross_x_.front();
    for (std::size_t l = cross_w_.size(); l-- > 0;) {
      const Tensor2& xl = cross_x_[l];
      const auto w = cross_w_[l].value.values();
      auto dw = cross_w_[l].grad.values();
      auto db = cross_b_[l].grad.values();
      for (std::size_t b = 0; b < batch; ++b) {
        auto gr = g.row(b);
        const auto x0r = x0.row(b);
        const auto xr = xl.row(b);
        const double s = cross_s_[l][b];
        double ds = 0.0;
        for (std::size_t j = 0; j < width; ++j) ds += gr[j] * x0r[j];
        auto d0 = dx0.row(b);
        for (std::size_t j = 0; j < width; ++j) {
          d0[j] += gr[j] * s;
          db[j] += gr[j];
          dw[j] += ds * xr[j];
          gr[j] += ds * w[j];  // becomes dL/dx_l
        }
      }
    }
    for (std::size_t i = 0; i < dx0.size(); ++i) dx0[i] += g[i];
  }

  PredictorConfig config_;
  std::vector<Linear> hidden_;
  Linear out_;
  std::vector<Parameter> cross_w_;
  std::vector<Parameter> cross_b_;
  Parameter linear_vec_;
  Parameter linear_bias_;

  Tensor2 input_;
  std::vector<Tensor2> hidden_out_;
  std::vector<Tensor2> cross_x_;
  std::vector<std::vector<double>> cross_s_;
};

// ---------------------------------------------------------------------------
// Controller: batch norm over the flattened N*d embedding, affine to N
// logits, softmax.

class Controller {
 public:
  Controller() = default;
  Controller(std::size_t n_fields, std::size_t dim, Rng& rng, const std::string& name)
      : norm_(n_fields * dim, name + ".bn"), fc_(n_fields * dim, n_fields, rng, name + ".fc") {}

  std::size_t n_fields() const noexcept { return fc_.out_features(); }

  Tensor2 forward(const Tensor2& e) {
    scores_ = softmax_rows(fc_.forward(batch_norm(e, norm_, &cache_)));
    return scores_;
  }

  Tensor2 backward(const Tensor2& dscores) {
    return batch_norm_backward(fc_.backward(softmax_rows_backward(scores_, dscores)), cache_, norm_);
  }

  void set_mode(NormMode mode) noexcept { norm_.mode = mode; }
  BatchNormState& norm() noexcept { return norm_; }
  Linear& fc() noexcept { return fc_; }

  std::vector<Parameter*> parameters() { return {&norm_.gamma, &norm_.beta, &fc_.weight, &fc_.bias}; }

 private:
  BatchNormState norm_;
  BatchNormCache cache_;
  Linear fc_;
  Tensor2 scores_;
};

inline Tensor2 controller_scores(const Tensor2& e_batch, Controller& controller) {
  return controller.forward(e_batch);
}

// ---------------------------------------------------------------------------
// Binary cross-entropy on clamped probabilities

inline constexpr double kProbClamp = 1e-7;

inline double clamp_probability(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

inline double bce(double p, int y) {
  const double q = clamp_probability(p);
  return y == 1 ? -std::log(q) : -std::log(1.0 - q);
}

// d bce(sigmoid(z), y) / dz; zero where the clamp is active.
inline double bce_logit_grad(double p, int y) {
  if (p < kProbClamp || p > 1.0 - kProbClamp) return 0.0;
  return p - static_cast<double>(y);
}

inline double bce_mean(std::span<const double> p, std::span<const int> y) {
  if (p.size() != y.size() || p.empty()) throw DimensionError("bce_mean: size mismatch or empty");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += bce(p[i], y[i]);
  return s / static_cast<double>(p.size());
}

}  // namespace aefs

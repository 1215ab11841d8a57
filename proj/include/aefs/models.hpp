#pragma once

// Trainable CTR models sharing one interface:
//   PlainModel  - no selection, or a fixed field subset
//   AdaFsModel  - late selection: embed every field, then score and scale
//   ModelPair   - adaptive early selection: a small auxiliary model scores the
//                 fields and the main model embeds only the top k of them

#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "aefs/data.hpp"
#include "aefs/embedding.hpp"
#include "aefs/errors.hpp"
#include "aefs/numerics.hpp"
#include "aefs/predictors.hpp"
#include "aefs/selection.hpp"

namespace aefs {

enum class Method { none, random, adafs, aefs };
enum class SelectionMode { soft, hard };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::none: return "none";
    case Method::random: return "random";
    case Method::adafs: return "adafs";
    case Method::aefs: return "aefs";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  if (s == "none") return Method::none;
  if (s == "random") return Method::random;
  if (s == "adafs") return Method::adafs;
  if (s == "aefs") return Method::aefs;
  throw ConfigError("unknown method '" + std::string(s) + "' (expected none, random, adafs or aefs)");
}

inline std::string to_string(SelectionMode m) { return m == SelectionMode::soft ? "soft" : "hard"; }

inline SelectionMode parse_selection_mode(std::string_view s) {
  if (s == "soft") return SelectionMode::soft;
  if (s == "hard") return SelectionMode::hard;
  throw ConfigError("unknown mode '" + std::string(s) + "' (expected soft or hard)");
}

struct BatchLosses {
  double bce_aux = 0.0;
  double bce_main = 0.0;
  double eal = 0.0;
  double pal = 0.0;

  double total() const noexcept { return bce_aux + bce_main + eal + pal; }
};

struct BatchOutput {
  std::vector<double> p_main;
  std::vector<double> p_aux;                        // empty without an auxiliary model
  std::vector<std::vector<std::size_t>> embedded;   // main-model fields looked up per instance
  std::vector<SelectionResult> selections;          // empty for non-selecting models
  double eal_sum = 0.0;                             // per-instance alignment error, summed
};

using NamedTensor = std::pair<std::string, Tensor2>;

inline std::vector<int> labels_of(std::span<const Instance> batch) {
  std::vector<int> y;
  y.reserve(batch.size());
  for (const auto& inst : batch) y.push_back(inst.label);
  return y;
}

// Top-k per row of a B x N score matrix. Weights are the L1-normalized kept
// scores, or the raw kept scores when reweighting is off.
inline std::vector<SelectionResult> select_top_k(const Tensor2& scores, std::size_t k, bool reweight) {
  std::vector<SelectionResult> out(scores.rows());
  for (std::size_t b = 0; b < scores.rows(); ++b) {
    const auto s = scores.row(b);
    out[b].indices = k_max_indices(s, k);
    if (reweight) {
      out[b].weights = l1_normalize_selected(s, out[b].indices);
    } else {
      for (const std::size_t i : out[b].indices) out[b].weights.push_back(s[i]);
    }
  }
  return out;
}

// dW (B x k) -> dS (B x N) through select_top_k.
inline Tensor2 selection_backward(const Tensor2& scores, std::span<const SelectionResult> selections,
                                  const Tensor2& dweights, bool reweight) {
  Tensor2 ds(scores.rows(), scores.cols());
  for (std::size_t b = 0; b < scores.rows(); ++b) {
    const auto& sel = selections[b];
    if (reweight) {
      l1_normalize_backward(scores.row(b), sel.indices, sel.weights, dweights.row(b), ds.row(b));
    } else {
      for (std::size_t j = 0; j < sel.indices.size(); ++j) ds(b, sel.indices[j]) += dweights(b, j);
    }
  }
  return ds;
}

class Model {
 public:
  virtual ~Model() = default;

  virtual Method method() const = 0;
  // Forward and backward over one training batch; gradients accumulate.
  virtual BatchLosses train_batch(std::span<const Instance> batch) = 0;
  // Forward only. Callers switch normalization to inference mode first.
  virtual BatchOutput infer(std::span<const Instance> batch) = 0;
  virtual std::vector<Parameter*> parameters() = 0;
  virtual void set_mode(NormMode mode) = 0;
  virtual const EmbeddingSet& main_embeddings() const = 0;
  virtual const EmbeddingSet* aux_embeddings() const { return nullptr; }

  void zero_grad() {
    for (Parameter* p : parameters()) p->zero_grad();
  }

  // Every parameter plus normalization running statistics.
  std::vector<NamedTensor> state() {
    std::vector<NamedTensor> out;
    for (Parameter* p : parameters()) out.emplace_back(p->name, p->value);
    for (BatchNormState* n : norms()) {
      out.emplace_back(n->gamma.name + ".running_mean", Tensor2::row_vector(n->running_mean));
      out.emplace_back(n->gamma.name + ".running_var", Tensor2::row_vector(n->running_var));
    }
    return out;
  }

  void load_state(const std::vector<NamedTensor>& state) {
    auto find = [&](const std::string& name, std::size_t rows, std::size_t cols) -> const Tensor2& {
      for (const auto& [n, t] : state) {
        if (n == name) {
          if (t.rows() != rows || t.cols() != cols) {
            throw DataError("load_state: '" + name + "' has shape " + shape_string(t) + ", expected " +
                            std::to_string(rows) + "x" + std::to_string(cols));
          }
          return t;
        }
      }
      throw DataError("load_state: missing tensor '" + name + "'");
    };
    for (Parameter* p : parameters()) p->value = find(p->name, p->value.rows(), p->value.cols());
    for (BatchNormState* n : norms()) {
      const auto& m = find(n->gamma.name + ".running_mean", 1, n->features());
      const auto& v = find(n->gamma.name + ".running_var", 1, n->features());
      n->running_mean.assign(m.values().begin(), m.values().end());
      n->running_var.assign(v.values().begin(), v.values().end());
    }
  }

 protected:
  virtual std::vector<BatchNormState*> norms() { return {}; }
};

// ---------------------------------------------------------------------------

// No controller. Embeds a fixed list of fields (all of them for Method::none).
class PlainModel final : public Model {
 public:
  PlainModel(std::span<const std::size_t> vocab_sizes, std::size_t dim, std::vector<std::size_t> fields,
             PredictorConfig predictor, std::uint64_t seed, Method method = Method::none)
      : method_(method), fields_(std::move(fields)), emb_([&] {
          Rng rng(derive_seed(seed, 10));
          return EmbeddingSet(vocab_sizes, dim, rng, "main.emb");
        }()) {
    detail::check_selection(fields_, vocab_sizes.size());
    if (fields_.empty()) throw ConfigError("PlainModel: no fields");
    predictor.input_fields = fields_.size();
    predictor.emb_dim = dim;
    Rng rng(derive_seed(seed, 11));
    pred_ = Predictor(predictor, rng, "main.pred");
  }

  Method method() const override { return method_; }
  const std::vector<std::size_t>& fields() const noexcept { return fields_; }

  BatchLosses train_batch(std::span<const Instance> batch) override {
    const std::vector<std::vector<std::size_t>> idx(batch.size(), fields_);
    const Tensor2 e = embed_selected(batch, idx, emb_);
    const Tensor2 logits = pred_.forward_logits(e);
    Tensor2 dlogit(batch.size(), 1);
    BatchLosses losses;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const double p = sigmoid(logits(b, 0));
      losses.bce_main += bce(p, batch[b].label) * inv_b;
      dlogit(b, 0) = bce_logit_grad(p, batch[b].label) * inv_b;
    }
    embed_selected_backward(batch, idx, pred_.backward(dlogit), emb_);
    return losses;
  }

  BatchOutput infer(std::span<const Instance> batch) override {
    BatchOutput out;
    out.embedded.assign(batch.size(), fields_);
    const Tensor2 p = pred_.forward(embed_selected(batch, out.embedded, emb_));
    out.p_main.assign(p.values().begin(), p.values().end());
    return out;
  }

  std::vector<Parameter*> parameters() override {
    auto out = emb_.parameters();
    for (Parameter* p : pred_.parameters()) out.push_back(p);
    return out;
  }

  void set_mode(NormMode) override {}
  const EmbeddingSet& main_embeddings() const override { return emb_; }
  EmbeddingSet& embeddings() noexcept { return emb_; }
  Predictor& predictor() noexcept { return pred_; }

 private:
  Method method_;
  std::vector<std::size_t> fields_;
  EmbeddingSet emb_;
  Predictor pred_;
};

// ---------------------------------------------------------------------------
// Late selection

struct AdaFsTrace {
  Tensor2 embedded;                      // B x (N*d)
  Tensor2 scores;                        // B x N
  std::vector<SelectionResult> selections;  // hard mode only
  Tensor2 weights;                       // B x N; zero for dropped fields
  Tensor2 scaled;                        // B x (N*d)
  Tensor2 logits;                        // B x 1
};

// Embeds all N fields, scores them, then either scales every field by its
// score (soft) or keeps the top k scaled by their selection weights (hard).
inline AdaFsTrace adafs_forward(std::span<const Instance> batch, EmbeddingSet& emb, Controller& controller,
                                Predictor& predictor, SelectionMode mode, std::size_t k, bool reweight = true) {
  AdaFsTrace t;
  const std::size_t n = emb.n_fields();
  t.embedded = embed(batch, emb);
  t.scores = controller.forward(t.embedded);
  if (mode == SelectionMode::soft) {
    t.weights = t.scores;
  } else {
    t.selections = select_top_k(t.scores, k, reweight);
    t.weights = Tensor2(batch.size(), n);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& sel = t.selections[b];
      for (std::size_t j = 0; j < sel.indices.size(); ++j) t.weights(b, sel.indices[j]) = sel.weights[j];
    }
  }
  t.scaled = scale_blocks(t.embedded, t.weights, emb.dim());
  t.logits = predictor.forward_logits(t.scaled);
  return t;
}

// Backward from dL/dlogits through predictor, scaling, selection, controller
// and embedding tables.
inline void adafs_backward(const AdaFsTrace& t, std::span<const Instance> batch, const Tensor2& dlogits,
                           EmbeddingSet& emb, Controller& controller, Predictor& predictor, SelectionMode mode,
                           bool reweight = true) {
  const Tensor2 dscaled = predictor.backward(dlogits);
  Tensor2 de(t.embedded.rows(), t.embedded.cols());
  Tensor2 dweights(t.weights.rows(), t.weights.cols());
  scale_blocks_backward(t.embedded, t.weights, dscaled, emb.dim(), de, dweights);
  Tensor2 dscores;
  if (mode == SelectionMode::soft) {
    dscores = std::move(dweights);
  } else {
    Tensor2 dsel(batch.size(), t.selections.empty() ? 0 : t.selections[0].indices.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& idx = t.selections[b].indices;
      for (std::size_t j = 0; j < idx.size(); ++j) dsel(b, j) = dweights(b, idx[j]);
    }
    dscores = selection_backward(t.scores, t.selections, dsel, reweight);
  }
  const Tensor2 dctrl = controller.backward(dscores);
  for (std::size_t i = 0; i < de.size(); ++i) de[i] += dctrl[i];
  embed_backward(batch, de, emb);
}

class AdaFsModel final : public Model {
 public:
  AdaFsModel(std::span<const std::size_t> vocab_sizes, std::size_t dim, PredictorConfig predictor, SelectionMode mode,
             std::size_t k, std::uint64_t seed, bool reweight = true)
      : mode_(mode), k_(k), reweight_(reweight), emb_([&] {
          Rng rng(derive_seed(seed, 20));
          return EmbeddingSet(vocab_sizes, dim, rng, "main.emb");
        }()) {
    if (mode == SelectionMode::hard && (k < 1 || k > vocab_sizes.size())) {
      throw ConfigError("AdaFsModel: k out of range");
    }
    Rng crng(derive_seed(seed, 21));
    controller_ = Controller(vocab_sizes.size(), dim, crng, "main.ctrl");
    predictor.input_fields = vocab_sizes.size();
    predictor.emb_dim = dim;
    Rng prng(derive_seed(seed, 22));
    pred_ = Predictor(predictor, prng, "main.pred");
  }

  Method method() const override { return Method::adafs; }
  SelectionMode mode() const noexcept { return mode_; }
  void set_selection_mode(SelectionMode mode) noexcept { mode_ = mode; }
  std::size_t k() const noexcept { return k_; }

  BatchLosses train_batch(std::span<const Instance> batch) override {
    const AdaFsTrace t = adafs_forward(batch, emb_, controller_, pred_, mode_, k_, reweight_);
    Tensor2 dlogit(batch.size(), 1);
    BatchLosses losses;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const double p = sigmoid(t.logits(b, 0));
      losses.bce_main += bce(p, batch[b].label) * inv_b;
      dlogit(b, 0) = bce_logit_grad(p, batch[b].label) * inv_b;
    }
    adafs_backward(t, batch, dlogit, emb_, controller_, pred_, mode_, reweight_);
    return losses;
  }

  AdaFsTrace trace(std::span<const Instance> batch) {
    return adafs_forward(batch, emb_, controller_, pred_, mode_, k_, reweight_);
  }

  BatchOutput infer(std::span<const Instance> batch) override {
    AdaFsTrace t = trace(batch);
    BatchOutput out;
    for (const double z : t.logits.values()) out.p_main.push_back(sigmoid(z));
    std::vector<std::size_t> all(emb_.n_fields());
    std::iota(all.begin(), all.end(), std::size_t{0});
    out.embedded.assign(batch.size(), all);
    out.selections = std::move(t.selections);
    return out;
  }

  std::vector<Parameter*> parameters() override {
    auto out = emb_.parameters();
    for (Parameter* p : controller_.parameters()) out.push_back(p);
    for (Parameter* p : pred_.parameters()) out.push_back(p);
    return out;
  }

  void set_mode(NormMode mode) override { controller_.set_mode(mode); }
  const EmbeddingSet& main_embeddings() const override { return emb_; }
  EmbeddingSet& embeddings() noexcept { return emb_; }
  Controller& controller() noexcept { return controller_; }
  Predictor& predictor() noexcept { return pred_; }

 protected:
  std::vector<BatchNormState*> norms() override { return {&controller_.norm()}; }

 private:
  SelectionMode mode_;
  std::size_t k_;
  bool reweight_;
  EmbeddingSet emb_;
  Controller controller_;
  Predictor pred_;
};

// ---------------------------------------------------------------------------
// Adaptive early selection

struct AefsOptions {
  std::size_t k = 1;
  bool enable_eal = true;
  bool enable_pal = true;
  bool enable_topk_reweight = true;
};

// Everything one AEFS forward pass produces, kept for the backward pass.
struct ForwardTrace {
  Tensor2 aux_embedded;                      // B x (N*d2)
  Tensor2 scores;                            // B x N
  std::vector<SelectionResult> selections;   // I and W per instance
  std::vector<std::vector<std::size_t>> indices;
  Tensor2 weights;                           // B x k, the single W shared by both models
  Tensor2 aux_selected;                      // B x (k*d2), unscaled
  Tensor2 aux_scaled;                        // B x (k*d2)
  Tensor2 main_selected;                     // B x (k*d1), unscaled
  Tensor2 main_scaled;                       // B x (k*d1)
  Tensor2 aux_logits;                        // B x 1
  Tensor2 main_logits;                       // B x 1
  std::vector<double> p_aux;
  std::vector<double> p_main;
};

class ModelPair final : public Model {
 public:
  ModelPair(std::span<const std::size_t> vocab_sizes, std::size_t d1, std::size_t d2, PredictorConfig main_predictor,
            PredictorConfig aux_predictor, AefsOptions options, std::uint64_t seed)
      : options(options) {
    const std::size_t n = vocab_sizes.size();
    if (d2 > d1) throw ConfigError("ModelPair: aux embedding size exceeds main embedding size");
    if (options.k < 1 || options.k > n) throw ConfigError("ModelPair: k out of range");
    Rng r_aux_emb(derive_seed(seed, 30));
    aux_embeddings_ = EmbeddingSet(vocab_sizes, d2, r_aux_emb, "aux.emb");
    Rng r_ctrl(derive_seed(seed, 31));
    controller = Controller(n, d2, r_ctrl, "aux.ctrl");
    aux_predictor.input_fields = options.k;
    aux_predictor.emb_dim = d2;
    Rng r_aux_pred(derive_seed(seed, 32));
    aux_pred = Predictor(aux_predictor, r_aux_pred, "aux.pred");
    Rng r_fc(derive_seed(seed, 33));
    align_fc = Linear(d2, d1, r_fc, "aux.align_fc");
    Rng r_main_emb(derive_seed(seed, 34));
    main_embeddings_ = EmbeddingSet(vocab_sizes, d1, r_main_emb, "main.emb");
    main_predictor.input_fields = options.k;
    main_predictor.emb_dim = d1;
    Rng r_main_pred(derive_seed(seed, 35));
    main_pred = Predictor(main_predictor, r_main_pred, "main.pred");
  }

  Method method() const override { return Method::aefs; }
  std::size_t k() const noexcept { return options.k; }
  std::size_t d1() const noexcept { return main_embeddings_.dim(); }
  std::size_t d2() const noexcept { return aux_embeddings_.dim(); }

  ForwardTrace forward(std::span<const Instance> batch) {
    ForwardTrace t;
    const std::size_t k = options.k;
    t.aux_embedded = embed(batch, aux_embeddings_);
    t.scores = controller.forward(t.aux_embedded);
    t.selections = select_top_k(t.scores, k, options.enable_topk_reweight);
    t.weights = Tensor2(batch.size(), k);
    t.indices.reserve(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      t.indices.push_back(t.selections[b].indices);
      std::copy(t.selections[b].weights.begin(), t.selections[b].weights.end(), t.weights.row(b).begin());
    }
    // Selection of the aux embeddings is a gather from the full aux embedding.
    const std::size_t d2 = this->d2();
    t.aux_selected = Tensor2(batch.size(), k * d2);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto src = t.aux_embedded.row(b);
      auto dst = t.aux_selected.row(b);
      for (std::size_t j = 0; j < k; ++j) {
        const auto f = t.indices[b][j];
        std::copy(src.begin() + static_cast<std::ptrdiff_t>(f * d2), src.begin() + static_cast<std::ptrdiff_t>((f + 1) * d2),
                  dst.begin() + static_cast<std::ptrdiff_t>(j * d2));
      }
    }
    t.aux_scaled = scale_blocks(t.aux_selected, t.weights, d2);
    t.aux_logits = aux_pred.forward_logits(t.aux_scaled);

    t.main_selected = embed_selected(batch, t.indices, main_embeddings_);
    t.main_scaled = scale_blocks(t.main_selected, t.weights, d1());
    t.main_logits = main_pred.forward_logits(t.main_scaled);

    for (const double z : t.aux_logits.values()) t.p_aux.push_back(sigmoid(z));
    for (const double z : t.main_logits.values()) t.p_main.push_back(sigmoid(z));
    return t;
  }

  // Joint loss BCE(P_a) + BCE(P_m) + EAL + PAL (alignment terms per the
  // switches) and its full backward pass. No gradient is stopped anywhere.
  BatchLosses backward(const ForwardTrace& t, std::span<const Instance> batch) {
    const std::size_t bsz = batch.size();
    const std::size_t k = options.k;
    const double inv_b = 1.0 / static_cast<double>(bsz);
    BatchLosses losses;
    Tensor2 dz_aux(bsz, 1);
    Tensor2 dz_main(bsz, 1);
    for (std::size_t b = 0; b < bsz; ++b) {
      const int y = batch[b].label;
      losses.bce_aux += bce(t.p_aux[b], y) * inv_b;
      losses.bce_main += bce(t.p_main[b], y) * inv_b;
      dz_aux(b, 0) = bce_logit_grad(t.p_aux[b], y) * inv_b;
      dz_main(b, 0) = bce_logit_grad(t.p_main[b], y) * inv_b;
    }
    if (options.enable_pal) {
      losses.pal = prediction_alignment_loss(t.p_aux, t.p_main);
      for (std::size_t b = 0; b < bsz; ++b) {
        const double g = 2.0 * (t.p_aux[b] - t.p_main[b]) * inv_b;
        dz_aux(b, 0) += g * t.p_aux[b] * (1.0 - t.p_aux[b]);
        dz_main(b, 0) -= g * t.p_main[b] * (1.0 - t.p_main[b]);
      }
    }

    Tensor2 d_aux_scaled = aux_pred.backward(dz_aux);
    Tensor2 d_main_scaled = main_pred.backward(dz_main);
    if (options.enable_eal) {
      AlignmentGrads g;
      losses.eal = embedding_alignment_loss(t.aux_scaled, t.main_scaled, align_fc, k, &g);
      for (std::size_t i = 0; i < d_aux_scaled.size(); ++i) d_aux_scaled[i] += g.d_aux[i];
      for (std::size_t i = 0; i < d_main_scaled.size(); ++i) d_main_scaled[i] += g.d_main[i];
    }

    const std::size_t d2 = this->d2();
    Tensor2 dweights(bsz, k);
    Tensor2 d_main_selected(bsz, k * d1());
    scale_blocks_backward(t.main_selected, t.weights, d_main_scaled, d1(), d_main_selected, dweights);
    embed_selected_backward(batch, t.indices, d_main_selected, main_embeddings_);

    Tensor2 d_aux_selected(bsz, k * d2);
    scale_blocks_backward(t.aux_selected, t.weights, d_aux_scaled, d2, d_aux_selected, dweights);

    const Tensor2 dscores = selection_backward(t.scores, t.selections, dweights, options.enable_topk_reweight);
    Tensor2 d_aux_embedded = controller.backward(dscores);
    for (std::size_t b = 0; b < bsz; ++b) {
      const auto src = d_aux_selected.row(b);
      auto dst = d_aux_embedded.row(b);
      for (std::size_t j = 0; j < k; ++j) {
        const auto f = t.indices[b][j];
        for (std::size_t c = 0; c < d2; ++c) dst[f * d2 + c] += src[j * d2 + c];
      }
    }
    embed_backward(batch, d_aux_embedded, aux_embeddings_);
    return losses;
  }

  BatchLosses train_batch(std::span<const Instance> batch) override { return backward(forward(batch), batch); }

  BatchOutput infer(std::span<const Instance> batch) override {
    ForwardTrace t = forward(batch);
    BatchOutput out;
    out.p_main = std::move(t.p_main);
    out.p_aux = std::move(t.p_aux);
    out.embedded = std::move(t.indices);
    out.selections = std::move(t.selections);
    const std::size_t d1v = d1();
    const Tensor2 mapped =
        align_fc.forward(reshaped(t.aux_scaled, batch.size() * options.k, d2()));
    for (std::size_t b = 0; b < batch.size(); ++b) {
      double s = 0.0;
      for (std::size_t c = 0; c < options.k * d1v; ++c) {
        const double diff = mapped[b * options.k * d1v + c] - t.main_scaled(b, c);
        s += diff * diff;
      }
      out.eal_sum += s / static_cast<double>(options.k * d1v);
    }
    return out;
  }

  std::vector<Parameter*> aux_parameters() {
    auto out = aux_embeddings_.parameters();
    for (Parameter* p : controller.parameters()) out.push_back(p);
    for (Parameter* p : aux_pred.parameters()) out.push_back(p);
    out.push_back(&align_fc.weight);
    out.push_back(&align_fc.bias);
    return out;
  }

  std::vector<Parameter*> parameters() override {
    auto out = aux_parameters();
    for (Parameter* p : main_embeddings_.parameters()) out.push_back(p);
    for (Parameter* p : main_pred.parameters()) out.push_back(p);
    return out;
  }

  void set_mode(NormMode mode) override { controller.set_mode(mode); }
  const EmbeddingSet& main_embeddings() const override { return main_embeddings_; }
  const EmbeddingSet* aux_embeddings() const override { return &aux_embeddings_; }
  EmbeddingSet& main_set() noexcept { return main_embeddings_; }
  EmbeddingSet& aux_set() noexcept { return aux_embeddings_; }

  AefsOptions options;
  Controller controller;
  Predictor aux_pred;
  Linear align_fc;
  Predictor main_pred;

 protected:
  std::vector<BatchNormState*> norms() override { return {&controller.norm()}; }

 private:
  EmbeddingSet aux_embeddings_;
  EmbeddingSet main_embeddings_;
};

inline ForwardTrace aefs_forward(std::span<const Instance> batch, ModelPair& pair) { return pair.forward(batch); }

}  // namespace aefs

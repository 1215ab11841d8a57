#pragma once

// Mini-batch training loop, optional auxiliary pretraining, and evaluation.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "aefs/data.hpp"
#include "aefs/embedding.hpp"
#include "aefs/errors.hpp"
#include "aefs/metrics.hpp"
#include "aefs/models.hpp"
#include "aefs/numerics.hpp"
#include "aefs/random.hpp"
#include "aefs/rational.hpp"

namespace aefs {

namespace detail {
inline void validate_predictor_shape(const PredictorConfig& p) {
  PredictorConfig probe = p;
  probe.input_fields = 1;
  probe.emb_dim = 1;
  probe.validate();
}
}  // namespace detail

struct TrainConfig {
  Method method = Method::aefs;
  SelectionMode mode = SelectionMode::hard;  // AdaFS only
  std::size_t batch_size = 2048;
  Rational r{1, 2};
  std::size_t d1 = 32;
  std::size_t d2 = 4;
  std::size_t max_epochs = 10;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  std::uint64_t split_seed = 42;
  std::size_t pretrain_epochs = 0;
  bool enable_eal = true;
  bool enable_pal = true;
  bool enable_topk_reweight = true;
  Backbone backbone_main = Backbone::mlp;
  Backbone backbone_aux = Backbone::mlp;
  std::vector<std::size_t> hidden_dims{16, 16};
  std::size_t n_cross_layers = 2;
  std::size_t min_freq = 1;

  std::size_t k(std::size_t n_fields) const {
    const auto kept = (r * Rational(static_cast<std::int64_t>(n_fields))).floor();
    return std::max<std::size_t>(1, static_cast<std::size_t>(kept));
  }

  void validate() const {
    if (r <= Rational(0) || r > Rational(1)) throw ConfigError("r must be in (0, 1]");
    if (d1 == 0 || d2 == 0) throw ConfigError("embedding sizes must be positive");
    if (d2 > d1) throw ConfigError("d2 must not exceed d1");
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
    if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
    if (min_freq == 0) throw ConfigError("min_freq must be positive");
    detail::validate_predictor_shape(predictor(backbone_main));
    detail::validate_predictor_shape(predictor(backbone_aux));
  }

  PredictorConfig predictor(Backbone b) const {
    PredictorConfig p;
    p.variant = b;
    p.hidden_dims = hidden_dims;
    p.n_cross_layers = n_cross_layers;
    return p;
  }
};

// Fixed random field subset for Method::random, sorted ascending.
inline std::vector<std::size_t> random_fields(std::size_t n_fields, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> f(n_fields);
  std::iota(f.begin(), f.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 40));
  shuffle(std::span<std::size_t>(f), rng);
  f.resize(k);
  std::sort(f.begin(), f.end());
  return f;
}

inline std::unique_ptr<Model> make_model(const TrainConfig& config, std::span<const std::size_t> vocab_sizes) {
  const std::size_t n = vocab_sizes.size();
  if (n == 0) throw ConfigError("make_model: no fields");
  const std::size_t k = config.k(n);
  switch (config.method) {
    case Method::none: {
      std::vector<std::size_t> all(n);
      std::iota(all.begin(), all.end(), std::size_t{0});
      return std::make_unique<PlainModel>(vocab_sizes, config.d1, std::move(all),
                                          config.predictor(config.backbone_main), config.seed, Method::none);
    }
    case Method::random:
      return std::make_unique<PlainModel>(vocab_sizes, config.d1, random_fields(n, k, config.seed),
                                          config.predictor(config.backbone_main), config.seed, Method::random);
    case Method::adafs:
      return std::make_unique<AdaFsModel>(vocab_sizes, config.d1, config.predictor(config.backbone_main),
                                          config.mode, k, config.seed, config.enable_topk_reweight);
    case Method::aefs: {
      AefsOptions o;
      o.k = k;
      o.enable_eal = config.enable_eal;
      o.enable_pal = config.enable_pal;
      o.enable_topk_reweight = config.enable_topk_reweight;
      return std::make_unique<ModelPair>(vocab_sizes, config.d1, config.d2, config.predictor(config.backbone_main),
                                         config.predictor(config.backbone_aux), o, config.seed);
    }
  }
  throw ConfigError("make_model: unknown method");
}

// Fraction of main-model embedding parameters no longer activated, net of
// any auxiliary tables.
inline Rational method_delta_pae(const TrainConfig& config, std::size_t n_fields) {
  const Rational kept(static_cast<std::int64_t>(config.k(n_fields)), static_cast<std::int64_t>(n_fields));
  switch (config.method) {
    case Method::none:
    case Method::adafs: return Rational(0);
    case Method::random: return Rational(1) - kept;
    case Method::aefs:
      return delta_pae(static_cast<std::int64_t>(config.d1), static_cast<std::int64_t>(config.d2), kept);
  }
  return Rational(0);
}

// Contiguous batches over an index order. A lone trailing instance joins the
// previous batch, since training-mode batch norm needs two rows.
inline std::vector<std::pair<std::size_t, std::size_t>> batch_bounds(std::size_t n, std::size_t batch_size) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t begin = 0; begin < n; begin += batch_size) out.emplace_back(begin, std::min(n, begin + batch_size));
  if (out.size() > 1 && out.back().second - out.back().first == 1) {
    out.pop_back();
    out.back().second = n;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOptions {
  std::size_t batch_size = 8192;
  std::span<const std::size_t> informative;  // planted fields, for selection precision
  std::ostream* selection_dump = nullptr;    // JSONL: instance, indices, weights
};

struct Evaluation {
  Metrics metrics;
  std::vector<double> p_main;
  std::optional<double> pal_mean;  // mean (P_a - P_m)^2
  std::optional<double> eal_mean;  // mean per-instance embedding alignment error
  std::vector<std::uint64_t> selection_counts;  // per field, over the split
  std::optional<double> selection_precision;
  ActivationLedger ledger;
  double main_lookups_per_instance = 0.0;  // from table counters
  double aux_lookups_per_instance = 0.0;
};

inline Evaluation evaluate(Model& model, std::span<const Instance> split, const EvalOptions& options = {}) {
  if (split.empty()) throw DataError("evaluate: empty split");
  model.set_mode(NormMode::inference);
  const std::size_t n_fields = model.main_embeddings().n_fields();
  const std::uint64_t main_before = model.main_embeddings().total_lookups();
  const std::uint64_t aux_before = model.aux_embeddings() ? model.aux_embeddings()->total_lookups() : 0;

  Evaluation ev;
  ev.selection_counts.assign(n_fields, 0);
  std::vector<bool> planted(n_fields, false);
  for (const auto f : options.informative) {
    if (f >= n_fields) throw DimensionError("evaluate: informative field out of range");
    planted[f] = true;
  }
  double pal_sum = 0.0;
  double eal_sum = 0.0;
  double precision_sum = 0.0;
  bool has_aux = false;
  bool has_selection = false;
  const std::size_t step = std::max<std::size_t>(1, options.batch_size);
  for (std::size_t begin = 0; begin < split.size(); begin += step) {
    const auto batch = split.subspan(begin, std::min(step, split.size() - begin));
    BatchOutput out = model.infer(batch);
    for (const double p : out.p_main) {
      if (std::isnan(p)) throw NumericError("evaluate: NaN prediction");
    }
    ev.p_main.insert(ev.p_main.end(), out.p_main.begin(), out.p_main.end());
    record_batch_activation(ev.ledger, out.embedded, model.main_embeddings(), model.aux_embeddings());
    if (!out.p_aux.empty()) {
      has_aux = true;
      for (std::size_t b = 0; b < batch.size(); ++b) pal_sum += (out.p_aux[b] - out.p_main[b]) * (out.p_aux[b] - out.p_main[b]);
      eal_sum += out.eal_sum;
    }
    for (std::size_t b = 0; b < out.selections.size(); ++b) {
      has_selection = true;
      const auto& sel = out.selections[b];
      std::size_t hits = 0;
      for (const auto f : sel.indices) {
        ++ev.selection_counts[f];
        hits += planted[f] ? 1 : 0;
      }
      precision_sum += static_cast<double>(hits) / static_cast<double>(sel.indices.size());
      if (options.selection_dump != nullptr) {
        nlohmann::ordered_json j;
        j["instance"] = begin + b;
        j["indices"] = sel.indices;
        j["weights"] = sel.weights;
        *options.selection_dump << j.dump() << '\n';
      }
    }
  }
  model.set_mode(NormMode::training);

  const auto labels = labels_of(split);
  const double n = static_cast<double>(split.size());
  ev.metrics.n = split.size();
  ev.metrics.auc = auc(ev.p_main, labels);
  ev.metrics.logloss = logloss(ev.p_main, labels);
  ev.metrics.activated_params_avg = ev.ledger.average_activated().to_double();
  ev.metrics.lookups_avg = ev.ledger.lookups_average().to_double();
  if (has_aux) {
    ev.pal_mean = pal_sum / n;
    ev.eal_mean = eal_sum / n;
  }
  if (has_selection && !options.informative.empty()) ev.selection_precision = precision_sum / n;
  ev.main_lookups_per_instance = static_cast<double>(model.main_embeddings().total_lookups() - main_before) / n;
  if (model.aux_embeddings() != nullptr) {
    ev.aux_lookups_per_instance = static_cast<double>(model.aux_embeddings()->total_lookups() - aux_before) / n;
  }
  return ev;
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  BatchLosses train;      // instance-weighted means over the epoch
  double val_auc = 0.0;
  double val_logloss = 0.0;
  double seconds = 0.0;

  // Wall-clock time is excluded.
  bool same_values(const EpochRecord& o) const {
    return epoch == o.epoch && train.bce_aux == o.train.bce_aux && train.bce_main == o.train.bce_main &&
           train.eal == o.train.eal && train.pal == o.train.pal && val_auc == o.val_auc &&
           val_logloss == o.val_logloss;
  }
};

struct TrainReport {
  std::vector<EpochRecord> pretrain;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_auc = 0.0;
  ActivationLedger val_ledger;  // best epoch, validation split

  bool same_values(const TrainReport& o) const {
    auto eq = [](const std::vector<EpochRecord>& a, const std::vector<EpochRecord>& b) {
      return std::equal(a.begin(), a.end(), b.begin(), b.end(),
                        [](const EpochRecord& x, const EpochRecord& y) { return x.same_values(y); });
    };
    return eq(pretrain, o.pretrain) && eq(epochs, o.epochs) && best_epoch == o.best_epoch &&
           best_val_auc == o.best_val_auc;
  }
};

inline nlohmann::ordered_json to_json(const EpochRecord& e) {
  nlohmann::ordered_json j;
  j["epoch"] = e.epoch;
  j["bce_aux"] = e.train.bce_aux;
  j["bce_main"] = e.train.bce_main;
  j["eal"] = e.train.eal;
  j["pal"] = e.train.pal;
  j["val_auc"] = e.val_auc;
  j["val_logloss"] = e.val_logloss;
  j["seconds"] = e.seconds;
  return j;
}

inline nlohmann::ordered_json to_json(const TrainReport& r) {
  nlohmann::ordered_json j;
  j["pretrain"] = nlohmann::ordered_json::array();
  for (const auto& e : r.pretrain) j["pretrain"].push_back(to_json(e));
  j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& e : r.epochs) j["epochs"].push_back(to_json(e));
  j["best_epoch"] = r.best_epoch;
  j["best_val_auc"] = r.best_val_auc;
  if (r.val_ledger.instances > 0) {
    j["val_activated_params_avg"] = r.val_ledger.average_activated().to_string();
    j["val_main_lookups_avg"] = r.val_ledger.main_lookups_average().to_string();
    j["val_aux_lookups_avg"] = r.val_ledger.aux_lookups_average().to_string();
  }
  return j;
}

struct TrainResult {
  std::unique_ptr<Model> model;
  TrainReport report;
};

struct TrainHooks {
  std::ostream* log = nullptr;
};

namespace detail {

inline void check_losses(const BatchLosses& l, std::size_t epoch, std::size_t batch) {
  for (const double v : {l.bce_aux, l.bce_main, l.eal, l.pal}) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
                         " (bce_aux=" + std::to_string(l.bce_aux) + ", bce_main=" + std::to_string(l.bce_main) +
                         ", eal=" + std::to_string(l.eal) + ", pal=" + std::to_string(l.pal) + ")");
    }
  }
}

// One pass over train in a seeded order; step() performs forward, backward
// and returns the batch losses.
template <typename Step>
BatchLosses run_epoch(std::span<const Instance> train, std::size_t batch_size, Rng& order_rng, std::size_t epoch,
                      Step&& step) {
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(std::span<std::size_t>(order), order_rng);
  std::vector<Instance> buffer;
  BatchLosses sum;
  std::size_t batch_no = 0;
  for (const auto& [begin, end] : batch_bounds(train.size(), batch_size)) {
    buffer.clear();
    for (std::size_t i = begin; i < end; ++i) buffer.push_back(train[order[i]]);
    const BatchLosses l = step(std::span<const Instance>(buffer));
    check_losses(l, epoch, batch_no++);
    const double w = static_cast<double>(buffer.size());
    sum.bce_aux += l.bce_aux * w;
    sum.bce_main += l.bce_main * w;
    sum.eal += l.eal * w;
    sum.pal += l.pal * w;
  }
  const double n = static_cast<double>(train.size());
  sum.bce_aux /= n;
  sum.bce_main /= n;
  sum.eal /= n;
  sum.pal /= n;
  return sum;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

// Trains the auxiliary embeddings and controller alone: soft selection over
// all N fields, scored by a throwaway N-field predictor at d2. For AdaFS the
// model itself trains in soft mode. Other methods have nothing to pretrain.
inline std::vector<EpochRecord> pretrain(Model& model, std::span<const Instance> train, std::span<const Instance> val,
                                         const TrainConfig& config, TrainHooks hooks = {}) {
  std::vector<EpochRecord> records;
  if (config.pretrain_epochs == 0) return records;
  Rng order_rng(derive_seed(config.seed, 60));
  AdamOptions opts;
  opts.lr = config.lr;

  if (auto* pair = dynamic_cast<ModelPair*>(&model)) {
    PredictorConfig pc = config.predictor(config.backbone_aux);
    pc.input_fields = pair->aux_set().n_fields();
    pc.emb_dim = pair->d2();
    Rng prng(derive_seed(config.seed, 61));
    Predictor head(pc, prng, "pretrain.pred");
    std::vector<Parameter*> params = pair->aux_set().parameters();
    for (Parameter* p : pair->controller.parameters()) params.push_back(p);
    for (Parameter* p : head.parameters()) params.push_back(p);
    Adam adam(params, opts);
    for (std::size_t e = 1; e <= config.pretrain_epochs; ++e) {
      const auto t0 = std::chrono::steady_clock::now();
      EpochRecord rec;
      rec.epoch = e;
      pair->set_mode(NormMode::training);
      rec.train = detail::run_epoch(train, config.batch_size, order_rng, e, [&](std::span<const Instance> batch) {
        adam.zero_grad();
        const AdaFsTrace t = adafs_forward(batch, pair->aux_set(), pair->controller, head, SelectionMode::soft, 0);
        Tensor2 dz(batch.size(), 1);
        BatchLosses l;
        const double inv_b = 1.0 / static_cast<double>(batch.size());
        for (std::size_t b = 0; b < batch.size(); ++b) {
          const double p = sigmoid(t.logits(b, 0));
          l.bce_aux += bce(p, batch[b].label) * inv_b;
          dz(b, 0) = bce_logit_grad(p, batch[b].label) * inv_b;
        }
        adafs_backward(t, batch, dz, pair->aux_set(), pair->controller, head, SelectionMode::soft);
        adam.step();
        return l;
      });
      // Validation of the throwaway head.
      pair->set_mode(NormMode::inference);
      std::vector<double> p;
      for (std::size_t begin = 0; begin < val.size(); begin += 8192) {
        const auto batch = val.subspan(begin, std::min<std::size_t>(8192, val.size() - begin));
        const AdaFsTrace t = adafs_forward(batch, pair->aux_set(), pair->controller, head, SelectionMode::soft, 0);
        for (const double z : t.logits.values()) p.push_back(sigmoid(z));
      }
      pair->set_mode(NormMode::training);
      const auto y = labels_of(val);
      rec.val_auc = auc(p, y);
      rec.val_logloss = logloss(p, y);
      rec.seconds = detail::seconds_since(t0);
      if (hooks.log) *hooks.log << "pretrain epoch " << e << " bce_aux " << rec.train.bce_aux << " val_auc " << rec.val_auc << '\n';
      records.push_back(rec);
    }
  } else if (auto* ada = dynamic_cast<AdaFsModel*>(&model)) {
    const SelectionMode final_mode = ada->mode();
    ada->set_selection_mode(SelectionMode::soft);
    Adam adam(ada->parameters(), opts);
    for (std::size_t e = 1; e <= config.pretrain_epochs; ++e) {
      const auto t0 = std::chrono::steady_clock::now();
      EpochRecord rec;
      rec.epoch = e;
      rec.train = detail::run_epoch(train, config.batch_size, order_rng, e, [&](std::span<const Instance> batch) {
        adam.zero_grad();
        const BatchLosses l = ada->train_batch(batch);
        adam.step();
        return l;
      });
      const Evaluation ev = evaluate(*ada, val);
      rec.val_auc = ev.metrics.auc;
      rec.val_logloss = ev.metrics.logloss;
      rec.seconds = detail::seconds_since(t0);
      records.push_back(rec);
    }
    ada->set_selection_mode(final_mode);
  }
  return records;
}

// Joint training: one Adam step per batch over every trainable parameter,
// validation after each epoch, and the best-validation-AUC state restored at
// the end.
inline TrainResult train(std::span<const Instance> train_split, std::span<const Instance> val_split,
                         std::span<const std::size_t> vocab_sizes, const TrainConfig& config, TrainHooks hooks = {}) {
  config.validate();
  if (train_split.size() < 2) throw DataError("train: training split needs at least 2 instances");
  if (val_split.empty()) throw DataError("train: empty validation split");

  TrainResult result;
  result.model = make_model(config, vocab_sizes);
  Model& model = *result.model;
  result.report.pretrain = pretrain(model, train_split, val_split, config, hooks);

  AdamOptions opts;
  opts.lr = config.lr;
  Adam adam(model.parameters(), opts);
  Rng order_rng(derive_seed(config.seed, 50));
  std::vector<NamedTensor> best_state;
  double best_auc = -1.0;
  for (std::size_t e = 1; e <= config.max_epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = e;
    model.set_mode(NormMode::training);
    rec.train = detail::run_epoch(train_split, config.batch_size, order_rng, e, [&](std::span<const Instance> batch) {
      adam.zero_grad();
      const BatchLosses l = model.train_batch(batch);
      adam.step();
      return l;
    });
    const Evaluation ev = evaluate(model, val_split);
    rec.val_auc = ev.metrics.auc;
    rec.val_logloss = ev.metrics.logloss;
    rec.seconds = detail::seconds_since(t0);
    if (hooks.log) {
      *hooks.log << "epoch " << e << " loss " << rec.train.total() << " val_auc " << rec.val_auc << " val_logloss "
                 << rec.val_logloss << " (" << fixed(rec.seconds, 1) << "s)\n";
    }
    if (rec.val_auc > best_auc) {
      best_auc = rec.val_auc;
      best_state = model.state();
      result.report.best_epoch = e;
      result.report.best_val_auc = rec.val_auc;
      result.report.val_ledger = ev.ledger;
    }
    result.report.epochs.push_back(rec);
  }
  model.load_state(best_state);
  return result;
}

}  // namespace aefs

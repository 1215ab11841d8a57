#pragma once

// Per-field embedding tables with lookup counters, plus exact accounting of
// activated embedding parameters and lookups.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "aefs/data.hpp"
#include "aefs/errors.hpp"
#include "aefs/numerics.hpp"
#include "aefs/rational.hpp"

namespace aefs {

class EmbeddingTable {
 public:
  EmbeddingTable(std::size_t field_index, std::size_t vocab_size, std::size_t dim, Rng& rng,
                 const std::string& name)
      : weights(name, xavier_init(vocab_size, dim, rng)), field_(field_index) {}

  std::size_t field_index() const noexcept { return field_; }
  std::size_t vocab_size() const noexcept { return weights.value.rows(); }
  std::size_t dim() const noexcept { return weights.value.cols(); }
  std::uint64_t lookup_count() const noexcept { return lookups_; }

  std::span<const double> lookup(std::uint32_t id) {
    check(id);
    ++lookups_;
    return weights.value.row(id);
  }

  void accumulate_grad(std::uint32_t id, std::span<const double> g) {
    check(id);
    auto row = weights.grad.row(id);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += g[j];
  }

  Parameter weights;

 private:
  void check(std::uint32_t id) const {
    if (id >= vocab_size()) {
      throw DimensionError("embedding field " + std::to_string(field_) + ": id " + std::to_string(id) +
                           " outside vocabulary of " + std::to_string(vocab_size()));
    }
  }

  std::size_t field_;
  std::uint64_t lookups_ = 0;
};

// One table per field, all of width dim.
class EmbeddingSet {
 public:
  EmbeddingSet() = default;
  EmbeddingSet(std::span<const std::size_t> vocab_sizes, std::size_t dim, Rng& rng, const std::string& name)
      : dim_(dim) {
    if (dim == 0) throw DimensionError("EmbeddingSet: zero embedding width");
    tables_.reserve(vocab_sizes.size());
    for (std::size_t f = 0; f < vocab_sizes.size(); ++f) {
      tables_.emplace_back(f, vocab_sizes[f], dim, rng, name + ".field" + std::to_string(f));
    }
  }

  std::size_t n_fields() const noexcept { return tables_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  EmbeddingTable& table(std::size_t f) { return tables_.at(f); }
  const EmbeddingTable& table(std::size_t f) const { return tables_.at(f); }

  std::vector<std::size_t> vocab_sizes() const {
    std::vector<std::size_t> out;
    for (const auto& t : tables_) out.push_back(t.vocab_size());
    return out;
  }

  std::uint64_t total_lookups() const noexcept {
    std::uint64_t s = 0;
    for (const auto& t : tables_) s += t.lookup_count();
    return s;
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& t : tables_) out.push_back(&t.weights);
    return out;
  }

 private:
  std::vector<EmbeddingTable> tables_;
  std::size_t dim_ = 0;
};

namespace detail {

inline void check_instance(const Instance& inst, const EmbeddingSet& set) {
  if (inst.x.size() != set.n_fields()) {
    throw DimensionError("embed: instance has " + std::to_string(inst.x.size()) + " fields, set has " +
                         std::to_string(set.n_fields()));
  }
}

inline void check_selection(std::span<const std::size_t> indices, std::size_t n_fields) {
  std::vector<bool> seen(n_fields, false);
  for (const std::size_t i : indices) {
    if (i >= n_fields) throw DimensionError("selection index " + std::to_string(i) + " out of range");
    if (seen[i]) throw DimensionError("selection index " + std::to_string(i) + " repeated");
    seen[i] = true;
  }
}

}  // namespace detail

// Batch of B instances -> B x (N*d), field n occupying columns [n*d, (n+1)*d).
inline Tensor2 embed(std::span<const Instance> batch, EmbeddingSet& set) {
  const std::size_t d = set.dim();
  Tensor2 out(batch.size(), set.n_fields() * d);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    detail::check_instance(batch[b], set);
    auto row = out.row(b);
    for (std::size_t f = 0; f < set.n_fields(); ++f) {
      const auto e = set.table(f).lookup(batch[b].x[f]);
      std::copy(e.begin(), e.end(), row.begin() + static_cast<std::ptrdiff_t>(f * d));
    }
  }
  return out;
}

inline void embed_backward(std::span<const Instance> batch, const Tensor2& grad, EmbeddingSet& set) {
  const std::size_t d = set.dim();
  if (grad.rows() != batch.size() || grad.cols() != set.n_fields() * d) {
    throw DimensionError("embed_backward: gradient shape " + shape_string(grad));
  }
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto row = grad.row(b);
    for (std::size_t f = 0; f < set.n_fields(); ++f) {
      set.table(f).accumulate_grad(batch[b].x[f], row.subspan(f * d, d));
    }
  }
}

// Embeds only the listed fields, in list order: B x (k*d).
inline Tensor2 embed_selected(std::span<const Instance> batch, std::span<const std::vector<std::size_t>> indices,
                              EmbeddingSet& set) {
  if (indices.size() != batch.size()) throw DimensionError("embed_selected: one index list per instance required");
  const std::size_t d = set.dim();
  const std::size_t k = batch.empty() ? 0 : indices[0].size();
  Tensor2 out(batch.size(), k * d);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    detail::check_instance(batch[b], set);
    if (indices[b].size() != k) throw DimensionError("embed_selected: ragged selection sizes");
    detail::check_selection(indices[b], set.n_fields());
    auto row = out.row(b);
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t f = indices[b][j];
      const auto e = set.table(f).lookup(batch[b].x[f]);
      std::copy(e.begin(), e.end(), row.begin() + static_cast<std::ptrdiff_t>(j * d));
    }
  }
  return out;
}

inline void embed_selected_backward(std::span<const Instance> batch,
                                    std::span<const std::vector<std::size_t>> indices, const Tensor2& grad,
                                    EmbeddingSet& set) {
  const std::size_t d = set.dim();
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto row = grad.row(b);
    for (std::size_t j = 0; j < indices[b].size(); ++j) {
      const std::size_t f = indices[b][j];
      set.table(f).accumulate_grad(batch[b].x[f], row.subspan(j * d, d));
    }
  }
}

// Single-instance forms.
inline std::vector<std::vector<double>> embed(const Instance& inst, EmbeddingSet& set) {
  const Tensor2 t = embed(std::span<const Instance>(&inst, 1), set);
  std::vector<std::vector<double>> out;
  for (std::size_t f = 0; f < set.n_fields(); ++f) {
    const auto e = t.row(0).subspan(f * set.dim(), set.dim());
    out.emplace_back(e.begin(), e.end());
  }
  return out;
}

inline std::vector<std::vector<double>> embed_selected(const Instance& inst, std::span<const std::size_t> indices,
                                                       EmbeddingSet& set) {
  detail::check_instance(inst, set);
  detail::check_selection(indices, set.n_fields());
  std::vector<std::vector<double>> out;
  for (const std::size_t f : indices) {
    const auto e = set.table(f).lookup(inst.x[f]);
    out.emplace_back(e.begin(), e.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameter accounting

inline std::uint64_t full_param_count(std::span<const std::size_t> vocab_sizes, std::size_t dim) {
  std::uint64_t s = 0;
  for (const std::size_t v : vocab_sizes) s += static_cast<std::uint64_t>(v) * dim;
  return s;
}

inline std::uint64_t full_param_count(std::uint64_t total_ids, std::size_t dim) { return total_ids * dim; }

inline std::uint64_t table_param_count(const EmbeddingSet& set) {
  return full_param_count(set.vocab_sizes(), set.dim());
}

// Running totals over observed batches. An instance activates every aux
// table in full plus the full main table of each field selected for it.
// Ledgers merge by addition.
struct ActivationLedger {
  std::uint64_t batches_observed = 0;
  std::uint64_t instances = 0;
  std::uint64_t sum_activated_params = 0;
  std::uint64_t sum_main_activated_params = 0;
  std::uint64_t sum_main_lookups = 0;
  std::uint64_t sum_aux_lookups = 0;
  std::uint64_t main_full_params = 0;
  std::uint64_t aux_full_params = 0;

  // Mean activated parameters per instance; equals the mean over batches of
  // batch means when batches have equal size.
  Rational average_activated() const { return ratio(sum_activated_params); }
  Rational main_activated_average() const { return ratio(sum_main_activated_params); }
  Rational main_reduction_average() const { return Rational(static_cast<std::int64_t>(main_full_params)) - main_activated_average(); }
  Rational main_lookups_average() const { return ratio(sum_main_lookups); }
  Rational aux_lookups_average() const { return ratio(sum_aux_lookups); }
  Rational lookups_average() const { return ratio(sum_main_lookups + sum_aux_lookups); }

  void merge(const ActivationLedger& o) {
    if (batches_observed > 0 && o.batches_observed > 0 &&
        (main_full_params != o.main_full_params || aux_full_params != o.aux_full_params)) {
      throw DimensionError("ActivationLedger::merge: ledgers describe different models");
    }
    if (batches_observed == 0) {
      main_full_params = o.main_full_params;
      aux_full_params = o.aux_full_params;
    }
    batches_observed += o.batches_observed;
    instances += o.instances;
    sum_activated_params += o.sum_activated_params;
    sum_main_activated_params += o.sum_main_activated_params;
    sum_main_lookups += o.sum_main_lookups;
    sum_aux_lookups += o.sum_aux_lookups;
  }

 private:
  Rational ratio(std::uint64_t total) const {
    if (instances == 0) throw UndefinedMetricError("ActivationLedger: no instances observed");
    return Rational(static_cast<std::int64_t>(total), static_cast<std::int64_t>(instances));
  }
};

// selected[b] lists the main-model fields embedded for instance b; aux_fields
// is the number of aux lookups per instance (0 without an auxiliary model).
inline void record_batch_activation(ActivationLedger& ledger, std::span<const std::vector<std::size_t>> selected,
                                    std::span<const std::size_t> main_vocab_sizes, std::size_t d1,
                                    std::uint64_t aux_full_params, std::size_t aux_fields) {
  if (selected.empty()) throw DataError("record_batch_activation: empty batch");
  const std::uint64_t main_full = full_param_count(main_vocab_sizes, d1);
  if (ledger.batches_observed > 0 &&
      (ledger.main_full_params != main_full || ledger.aux_full_params != aux_full_params)) {
    throw DimensionError("record_batch_activation: model sizes changed between batches");
  }
  ledger.main_full_params = main_full;
  ledger.aux_full_params = aux_full_params;
  for (const auto& fields : selected) {
    detail::check_selection(fields, main_vocab_sizes.size());
    std::uint64_t main = 0;
    for (const std::size_t f : fields) main += static_cast<std::uint64_t>(main_vocab_sizes[f]) * d1;
    ledger.sum_main_activated_params += main;
    ledger.sum_activated_params += main + aux_full_params;
    ledger.sum_main_lookups += fields.size();
    ledger.sum_aux_lookups += aux_fields;
  }
  ledger.instances += selected.size();
  ledger.batches_observed += 1;
}

inline void record_batch_activation(ActivationLedger& ledger, std::span<const std::vector<std::size_t>> selected,
                                    const EmbeddingSet& main_set, const EmbeddingSet* aux_set) {
  record_batch_activation(ledger, selected, main_set.vocab_sizes(), main_set.dim(),
                          aux_set != nullptr ? table_param_count(*aux_set) : 0,
                          aux_set != nullptr ? aux_set->n_fields() : 0);
}

// Reduction in activated embedding parameters relative to the full main
// model: the dropped-field fraction minus the aux overhead d2/d1.
inline Rational delta_pae(std::int64_t d1, std::int64_t d2, const Rational& r_kept) {
  if (d1 <= 0 || d2 <= 0) throw ConfigError("delta_pae: embedding sizes must be positive");
  if (d2 > d1) throw ConfigError("delta_pae: aux embedding size exceeds main embedding size");
  if (r_kept <= Rational(0) || r_kept > Rational(1)) throw ConfigError("delta_pae: keep fraction must be in (0, 1]");
  return (Rational(1) - r_kept) - Rational(d2, d1);
}

// Reduction in main-model embedding lookups.
inline Rational delta_el(const Rational& r_kept) {
  if (r_kept <= Rational(0) || r_kept > Rational(1)) throw ConfigError("delta_el: keep fraction must be in (0, 1]");
  return Rational(1) - r_kept;
}

// main_full - main_reduction + aux_full.
inline Rational composed_activated(const Rational& main_full, const Rational& main_reduction,
                                   const Rational& aux_full) {
  return main_full - main_reduction + aux_full;
}

}  // namespace aefs

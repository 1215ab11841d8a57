#pragma once

// Per-instance field selection: k-max indices over controller scores, L1
// re-normalization of the kept scores, embedding scaling, and the two
// auxiliary/main alignment losses.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "aefs/errors.hpp"
#include "aefs/numerics.hpp"

namespace aefs {

struct SelectionResult {
  std::vector<std::size_t> indices;  // descending score, lower index first on ties
  std::vector<double> weights;       // one per index
};

inline std::vector<std::size_t> k_max_indices(std::span<const double> scores, std::size_t k) {
  if (k < 1 || k > scores.size()) {
    throw DimensionError("k_max_indices: k=" + std::to_string(k) + " with " + std::to_string(scores.size()) +
                         " scores");
  }
  for (double s : scores) {
    if (std::isnan(s)) throw NumericError("k_max_indices: NaN score");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] != scores[b] ? scores[a] > scores[b] : a < b; });
  order.resize(k);
  return order;
}

inline std::vector<double> l1_normalize_selected(std::span<const double> scores, std::span<const std::size_t> indices) {
  double sum = 0.0;
  for (const std::size_t i : indices) {
    if (i >= scores.size()) throw DimensionError("l1_normalize_selected: index out of range");
    if (scores[i] < 0.0) throw DegenerateSelectionError("l1_normalize_selected: negative score");
    sum += scores[i];
  }
  if (!(sum > 0.0)) throw DegenerateSelectionError("l1_normalize_selected: selected scores sum to zero");
  std::vector<double> w;
  w.reserve(indices.size());
  for (const std::size_t i : indices) w.push_back(scores[i] / sum);
  return w;
}

// dW -> dS for W = S[I] / sum(S[I]). Adds into ds_row.
inline void l1_normalize_backward(std::span<const double> scores, std::span<const std::size_t> indices,
                                  std::span<const double> weights, std::span<const double> dweights,
                                  std::span<double> ds_row) {
  double sum = 0.0;
  for (const std::size_t i : indices) sum += scores[i];
  double dot = 0.0;
  for (std::size_t j = 0; j < indices.size(); ++j) dot += dweights[j] * weights[j];
  for (std::size_t j = 0; j < indices.size(); ++j) ds_row[indices[j]] += (dweights[j] - dot) / sum;
}

inline std::vector<std::vector<double>> scale_embeddings(std::vector<std::vector<double>> selected,
                                                         std::span<const double> weights) {
  if (selected.size() != weights.size()) throw DimensionError("scale_embeddings: length mismatch");
  for (std::size_t j = 0; j < selected.size(); ++j) {
    for (double& v : selected[j]) v *= weights[j];
  }
  return selected;
}

// Batched scaling: e is B x (k*d), weights is B x k.
inline Tensor2 scale_blocks(const Tensor2& e, const Tensor2& weights, std::size_t dim) {
  if (e.rows() != weights.rows() || e.cols() != weights.cols() * dim) {
    throw DimensionError("scale_blocks: embeddings " + shape_string(e) + ", weights " + shape_string(weights));
  }
  Tensor2 out = e;
  for (std::size_t b = 0; b < e.rows(); ++b) {
    auto r = out.row(b);
    for (std::size_t j = 0; j < weights.cols(); ++j) {
      const double w = weights(b, j);
      for (std::size_t f = 0; f < dim; ++f) r[j * dim + f] *= w;
    }
  }
  return out;
}

// For y = scale_blocks(e, w): adds w*dy into de and <dy_j, e_j> into dw.
inline void scale_blocks_backward(const Tensor2& e, const Tensor2& weights, const Tensor2& dy, std::size_t dim,
                                  Tensor2& de, Tensor2& dw) {
  for (std::size_t b = 0; b < e.rows(); ++b) {
    const auto er = e.row(b);
    const auto gr = dy.row(b);
    auto der = de.row(b);
    for (std::size_t j = 0; j < weights.cols(); ++j) {
      const double w = weights(b, j);
      double dot = 0.0;
      for (std::size_t f = 0; f < dim; ++f) {
        dot += gr[j * dim + f] * er[j * dim + f];
        der[j * dim + f] += w * gr[j * dim + f];
      }
      dw(b, j) += dot;
    }
  }
}

// Same memory, different row/column split.
inline Tensor2 reshaped(Tensor2 t, std::size_t rows, std::size_t cols) {
  if (rows * cols != t.size()) throw DimensionError("reshaped: size mismatch");
  std::vector<double> v(t.values().begin(), t.values().end());
  return Tensor2(rows, cols, std::move(v));
}

struct AlignmentGrads {
  Tensor2 d_aux;   // B x (k*d2)
  Tensor2 d_main;  // B x (k*d1)
};

// Mean over the batch and over the k*d1 components of
// (fc(aux_j) - main_j)^2, where fc maps each d2-vector to d1. With grads
// non-null, also backpropagates into fc and returns input gradients.
inline double embedding_alignment_loss(const Tensor2& aux_sel, const Tensor2& main_sel, Linear& fc, std::size_t k,
                                       AlignmentGrads* grads = nullptr) {
  const std::size_t d2 = fc.in_features();
  const std::size_t d1 = fc.out_features();
  const std::size_t batch = aux_sel.rows();
  if (aux_sel.cols() != k * d2 || main_sel.cols() != k * d1 || main_sel.rows() != batch) {
    throw DimensionError("embedding_alignment_loss: aux " + shape_string(aux_sel) + ", main " +
                         shape_string(main_sel) + ", k=" + std::to_string(k));
  }
  if (batch == 0) throw DimensionError("embedding_alignment_loss: empty batch");
  const Tensor2 mapped = fc.forward(reshaped(aux_sel, batch * k, d2));
  const double count = static_cast<double>(batch * k * d1);
  double loss = 0.0;
  Tensor2 dmapped(batch * k, d1);
  for (std::size_t i = 0; i < mapped.size(); ++i) {
    const double diff = mapped[i] - main_sel[i];
    loss += diff * diff;
    dmapped[i] = 2.0 * diff / count;
  }
  if (grads != nullptr) {
    grads->d_main = Tensor2(batch, k * d1);
    for (std::size_t i = 0; i < dmapped.size(); ++i) grads->d_main[i] = -dmapped[i];
    grads->d_aux = reshaped(fc.backward(dmapped), batch, k * d2);
  }
  return loss / count;
}

inline double prediction_alignment_loss(std::span<const double> p_aux, std::span<const double> p_main) {
  if (p_aux.size() != p_main.size()) throw DimensionError("prediction_alignment_loss: length mismatch");
  if (p_aux.empty()) throw DimensionError("prediction_alignment_loss: empty batch");
  double s = 0.0;
  for (std::size_t i = 0; i < p_aux.size(); ++i) {
    const double d = p_aux[i] - p_main[i];
    s += d * d;
  }
  return s / static_cast<double>(p_aux.size());
}

}  // namespace aefs

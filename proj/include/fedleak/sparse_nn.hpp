/*
 * Copyright 2026 The Fedleak Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#ifndef FEDLEAK_SPARSE_NN_HPP
#define FEDLEAK_SPARSE_NN_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <set>
#include <vector>

#include "fedleak/common.hpp"
#include "fedleak/dataset.hpp"

namespace fedleak::nn {

using dataset::Fingerprint;
using dataset::LabeledSample;

enum class Mode { kTrain, kEval };

// Empty batch, or a batch without a single observed label.
class EmptyBatchError : public std::runtime_error {
 public:
  explicit EmptyBatchError(const std::string& what)
      : std::runtime_error(what) {}
};

// Shared trunk: one linear layer n->h with ReLU, plus inverted dropout on the
// sparse input and on the activations (train mode only).
struct TrunkParams {
  Matrix w1;                  // n x h
  std::vector<double> b1;     // h
  double input_dropout = 0.0;
  double hidden_dropout = 0.0;

  std::uint32_t n() const { return static_cast<std::uint32_t>(w1.rows()); }
  std::uint32_t h() const { return static_cast<std::uint32_t>(w1.cols()); }
  std::size_t parameter_count() const { return w1.size() + b1.size(); }
};

// Private per-partner head: one linear layer h -> k_j logits.
struct HeadParams {
  Matrix w2;               // h x k
  std::vector<double> b2;  // k
  // Maps a global task id to a head output column.
  std::vector<std::uint32_t> task_ids;  // sorted

  std::uint32_t k() const { return static_cast<std::uint32_t>(b2.size()); }

  std::uint32_t column_of(std::uint32_t task) const {
    auto it = std::lower_bound(task_ids.begin(), task_ids.end(), task);
    if (it == task_ids.end() || *it != task)
      throw ConfigError("task " + std::to_string(task) +
                        " is not served by this head");
    return static_cast<std::uint32_t>(it - task_ids.begin());
  }
};

// Glorot-style uniform init in +-sqrt(6 / (fan_in + fan_out)); biases zero.
inline TrunkParams init_trunk(std::uint32_t n, std::uint32_t h,
                              double input_dropout, double hidden_dropout,
                              std::uint64_t seed) {
  if (input_dropout < 0.0 || input_dropout >= 1.0 || hidden_dropout < 0.0 ||
      hidden_dropout >= 1.0)
    throw ConfigError("dropout probabilities must lie in [0, 1)");
  TrunkParams t;
  t.w1 = Matrix(n, h);
  t.b1.assign(h, 0.0);
  t.input_dropout = input_dropout;
  t.hidden_dropout = hidden_dropout;
  const double bound = std::sqrt(6.0 / (static_cast<double>(n) + h));
  rng::Rng r(rng::derive_seed({seed, 0x717ull}));
  for (auto& w : t.w1.data()) w = (2.0 * r.uniform() - 1.0) * bound;
  return t;
}

inline HeadParams init_head(std::uint32_t h,
                            const std::vector<std::uint32_t>& task_ids,
                            std::uint64_t seed) {
  HeadParams head;
  const auto k = static_cast<std::uint32_t>(task_ids.size());
  head.w2 = Matrix(h, k);
  head.b2.assign(k, 0.0);
  head.task_ids = task_ids;
  const double bound = std::sqrt(6.0 / (static_cast<double>(h) + k));
  rng::Rng r(rng::derive_seed({seed, 0x4EADull}));
  for (auto& w : head.w2.data()) w = (2.0 * r.uniform() - 1.0) * bound;
  return head;
}

// First-layer gradient as seen by the adversary. Rows outside batch_support
// are exactly zero (structural sparsity); rows inside may still be zero when
// dropout or ReLU gating silences every covering sample.
struct TrunkGradient {
  Matrix dw1;               // n x h
  std::vector<double> db1;  // h
  std::vector<std::uint32_t> batch_support;  // sorted union of active indices

  // Flat layout: dw1 row-major, then db1. Coordinate of (i, j) is i*h + j.
  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(dw1.size() + db1.size());
    out.insert(out.end(), dw1.data().begin(), dw1.data().end());
    out.insert(out.end(), db1.begin(), db1.end());
    return out;
  }
};

struct HeadGradient {
  Matrix dw2;
  std::vector<double> db2;
};

struct Batch {
  std::vector<const LabeledSample*> samples;
  std::uint32_t partner_id = 0;
};

namespace detail {

// Per-sample forward state kept for the backward pass.
struct ForwardScratch {
  std::vector<std::uint32_t> kept_indices;  // active inputs after dropout
  double input_scale = 1.0;
  std::vector<double> pre;         // z, length h
  std::vector<double> act;         // post-ReLU (and hidden dropout), length h
  std::vector<double> hidden_mul;  // per-unit dropout multiplier, length h
};

inline void forward_trunk_impl(const TrunkParams& trunk, const Fingerprint& x,
                               Mode mode, rng::Rng* rng, ForwardScratch& s) {
  const std::uint32_t h = trunk.h();
  if (x.n != trunk.n())
    throw ConfigError("fingerprint dimension " + std::to_string(x.n) +
                      " does not match trunk input " +
                      std::to_string(trunk.n()));
  for (std::uint32_t i : x.indices)
    if (i >= trunk.n()) throw ConfigError("fingerprint index out of range");

  s.kept_indices.clear();
  s.input_scale = 1.0;
  if (mode == Mode::kTrain && trunk.input_dropout > 0.0) {
    for (std::uint32_t i : x.indices)
      if (!rng->bernoulli(trunk.input_dropout)) s.kept_indices.push_back(i);
    s.input_scale = 1.0 / (1.0 - trunk.input_dropout);
  } else {
    s.kept_indices.assign(x.indices.begin(), x.indices.end());
  }

  s.pre.assign(trunk.b1.begin(), trunk.b1.end());
  for (std::uint32_t i : s.kept_indices) {
    const auto row = trunk.w1.row(i);
    for (std::uint32_t j = 0; j < h; ++j) s.pre[j] += s.input_scale * row[j];
  }

  s.hidden_mul.assign(h, 1.0);
  if (mode == Mode::kTrain && trunk.hidden_dropout > 0.0) {
    const double keep_scale = 1.0 / (1.0 - trunk.hidden_dropout);
    for (std::uint32_t j = 0; j < h; ++j)
      s.hidden_mul[j] = rng->bernoulli(trunk.hidden_dropout) ? 0.0 : keep_scale;
  }

  s.act.resize(h);
  for (std::uint32_t j = 0; j < h; ++j)
    s.act[j] = s.pre[j] > 0.0 ? s.pre[j] * s.hidden_mul[j] : 0.0;
}

}  // namespace detail

// Sparse row-sum forward pass. Train mode draws dropout from `rng`; eval mode
// ignores it and is deterministic.
inline std::vector<double> forward_trunk(const TrunkParams& trunk,
                                         const Fingerprint& x, Mode mode,
                                         rng::Rng* rng = nullptr) {
  if (mode == Mode::kTrain &&
      (trunk.input_dropout > 0.0 || trunk.hidden_dropout > 0.0) && !rng)
    throw ConfigError("train-mode forward with dropout requires an rng");
  detail::ForwardScratch s;
  detail::forward_trunk_impl(trunk, x, mode, rng, s);
  return s.act;
}

inline std::vector<double> forward_head(const HeadParams& head,
                                        const std::vector<double>& act) {
  if (act.size() != head.w2.rows())
    throw ConfigError("activation width does not match head input");
  std::vector<double> logits(head.b2.begin(), head.b2.end());
  for (std::size_t j = 0; j < act.size(); ++j) {
    if (act[j] == 0.0) continue;
    const auto row = head.w2.row(j);
    for (std::uint32_t t = 0; t < head.k(); ++t) logits[t] += act[j] * row[t];
  }
  return logits;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Numerically stable BCE-with-logits: max(z,0) - z*y + log(1 + e^-|z|).
inline double bce_with_logits(double logit, double y) {
  return std::max(logit, 0.0) - logit * y + std::log1p(std::exp(-std::abs(logit)));
}

struct LossAndGrads {
  double loss = 0.0;
  TrunkGradient trunk;
  HeadGradient head;
  std::size_t observed_pairs = 0;
};

namespace detail {

// Accumulating core: adds this batch's gradient (already divided by the
// batch's observed-pair count) into dw1/db1/head. Callers zero the outputs.
inline double loss_and_grads_accumulate(
    const TrunkParams& trunk, const HeadParams& head, const Batch& batch,
    Mode mode, rng::Rng* rng, Matrix& dw1, std::vector<double>& db1,
    HeadGradient* head_grad, std::set<std::uint32_t>& support,
    std::size_t& observed_pairs) {
  const std::uint32_t h = trunk.h();
  if (batch.samples.empty()) throw EmptyBatchError("empty batch");

  // The loss is the mean over observed (sample, task) pairs, so the pair
  // count must be known before accumulating gradients.
  std::size_t pairs = 0;
  for (const LabeledSample* s : batch.samples) pairs += s->labels.size();
  if (pairs == 0)
    throw EmptyBatchError("batch carries no observed labels");
  observed_pairs = pairs;
  const double inv_pairs = 1.0 / static_cast<double>(pairs);

  double loss = 0.0;
  ForwardScratch scratch;
  std::vector<double> dlogit(head.k());
  std::vector<double> dpre(h);
  for (const LabeledSample* s : batch.samples) {
    for (std::uint32_t i : s->fingerprint.indices) support.insert(i);
    if (s->labels.empty()) continue;
    forward_trunk_impl(trunk, s->fingerprint, mode, rng, scratch);
    std::vector<double> logits = forward_head(head, scratch.act);

    std::fill(dlogit.begin(), dlogit.end(), 0.0);
    for (const auto& [task, y] : s->labels) {
      const std::uint32_t t = head.column_of(task);
      loss += bce_with_logits(logits[t], y) * inv_pairs;
      dlogit[t] = (sigmoid(logits[t]) - static_cast<double>(y)) * inv_pairs;
    }

    // Head gradient.
    if (head_grad) {
      for (std::uint32_t t = 0; t < head.k(); ++t) {
        if (dlogit[t] == 0.0) continue;
        head_grad->db2[t] += dlogit[t];
        for (std::uint32_t j = 0; j < h; ++j)
          head_grad->dw2(j, t) += scratch.act[j] * dlogit[t];
      }
    }

    // Backprop to the trunk: through the head, hidden dropout and ReLU.
    for (std::uint32_t j = 0; j < h; ++j) {
      double g = 0.0;
      const auto w2row = head.w2.row(j);
      for (std::uint32_t t = 0; t < head.k(); ++t) g += w2row[t] * dlogit[t];
      dpre[j] = scratch.pre[j] > 0.0 ? g * scratch.hidden_mul[j] : 0.0;
      db1[j] += dpre[j];
    }
    for (std::uint32_t i : scratch.kept_indices) {
      auto row = dw1.row(i);
      for (std::uint32_t j = 0; j < h; ++j)
        row[j] += scratch.input_scale * dpre[j];
    }
  }
  return loss;
}

}  // namespace detail

// Masked binary cross-entropy over the batch's observed labels, with exact
// gradients for trunk and head.
inline LossAndGrads loss_and_grads(const TrunkParams& trunk,
                                   const HeadParams& head, const Batch& batch,
                                   Mode mode, rng::Rng* rng = nullptr) {
  LossAndGrads out;
  out.trunk.dw1 = Matrix(trunk.n(), trunk.h());
  out.trunk.db1.assign(trunk.h(), 0.0);
  out.head.dw2 = Matrix(trunk.h(), head.k());
  out.head.db2.assign(head.k(), 0.0);
  std::set<std::uint32_t> support;
  out.loss = detail::loss_and_grads_accumulate(trunk, head, batch, mode, rng,
                                               out.trunk.dw1, out.trunk.db1,
                                               &out.head, support,
                                               out.observed_pairs);
  out.trunk.batch_support.assign(support.begin(), support.end());
  return out;
}

// theta <- theta - lr * g, elementwise.
inline void sgd_step(TrunkParams& trunk, const Matrix& dw1,
                     const std::vector<double>& db1, double lr) {
  if (dw1.rows() != trunk.w1.rows() || dw1.cols() != trunk.w1.cols() ||
      db1.size() != trunk.b1.size())
    throw ConfigError("gradient shape does not match trunk parameters");
  for (std::size_t i = 0; i < trunk.w1.data().size(); ++i)
    trunk.w1.data()[i] -= lr * dw1.data()[i];
  for (std::size_t j = 0; j < trunk.b1.size(); ++j) trunk.b1[j] -= lr * db1[j];
}

// Flat-vector variant matching TrunkGradient::flatten().
inline void sgd_step_flat(TrunkParams& trunk, std::span<const double> grad,
                          double lr) {
  if (grad.size() != trunk.parameter_count())
    throw ConfigError("flat gradient length does not match trunk");
  const std::size_t w = trunk.w1.size();
  for (std::size_t i = 0; i < w; ++i) trunk.w1.data()[i] -= lr * grad[i];
  for (std::size_t j = 0; j < trunk.b1.size(); ++j)
    trunk.b1[j] -= lr * grad[w + j];
}

inline void sgd_step(HeadParams& head, const HeadGradient& g, double lr) {
  for (std::size_t i = 0; i < head.w2.data().size(); ++i)
    head.w2.data()[i] -= lr * g.dw2.data()[i];
  for (std::size_t t = 0; t < head.b2.size(); ++t) head.b2[t] -= lr * g.db2[t];
}

// ROC AUC by rank statistic with tie-averaged ranks. Returns nullopt when a
// single class is present.
inline std::optional<double> auc(
    const std::vector<std::pair<double, std::uint8_t>>& scored) {
  std::size_t pos = 0, neg = 0;
  for (const auto& [score, label] : scored) (label ? pos : neg) += 1;
  if (pos == 0 || neg == 0) return std::nullopt;

  std::vector<std::size_t> order(scored.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scored[a].first < scored[b].first;
  });

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() &&
           scored[order[j]].first == scored[order[i]].first)
      ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
    for (std::size_t k = i; k < j; ++k)
      if (scored[order[k]].second) rank_sum_pos += avg_rank;
    i = j;
  }
  const double u = rank_sum_pos -
                   static_cast<double>(pos) * (static_cast<double>(pos) + 1) / 2.0;
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

}  // namespace fedleak::nn

#endif  // FEDLEAK_SPARSE_NN_HPP

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
#ifndef FEDLEAK_MITIGATIONS_HPP
#define FEDLEAK_MITIGATIONS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "fedleak/common.hpp"

namespace fedleak::mitigations {

// --- gradient sparsification --------------------------------------------------

enum class CompressionKind { kNone, kThreshold, kTopK, kRandomSubset };

struct CompressionPolicy {
  CompressionKind kind = CompressionKind::kNone;
  double tau = 0.0;       // threshold variant
  double fraction = 1.0;  // top-k / random-subset variants
  std::uint64_t shared_seed = 0;  // random-subset variant

  static CompressionPolicy none() { return {}; }
  static CompressionPolicy threshold(double tau) {
    if (!(tau > 0.0)) throw ConfigError("threshold tau must be positive");
    CompressionPolicy p;
    p.kind = CompressionKind::kThreshold;
    p.tau = tau;
    return p;
  }
  static CompressionPolicy top_k(double fraction) {
    if (!(fraction > 0.0) || fraction > 1.0)
      throw ConfigError("top-k fraction must lie in (0, 1]");
    CompressionPolicy p;
    p.kind = CompressionKind::kTopK;
    p.fraction = fraction;
    return p;
  }
  static CompressionPolicy random_subset(double fraction,
                                         std::uint64_t shared_seed) {
    if (!(fraction > 0.0) || fraction > 1.0)
      throw ConfigError("random-subset fraction must lie in (0, 1]");
    CompressionPolicy p;
    p.kind = CompressionKind::kRandomSubset;
    p.fraction = fraction;
    p.shared_seed = shared_seed;
    return p;
  }
};

// Zeroes every coordinate with |g_i| < tau.
inline void apply_threshold(std::vector<double>& g, double tau) {
  for (double& v : g)
    if (std::abs(v) < tau) v = 0.0;
}

// Keeps the ceil(k*d) coordinates of largest magnitude, ties to the lower
// index, and zeroes the rest.
inline void apply_topk(std::vector<double>& g, double k) {
  const std::size_t d = g.size();
  const auto keep = static_cast<std::size_t>(
      std::ceil(k * static_cast<double>(d)));
  if (keep >= d) return;

  // Zero coordinates can fill kept slots without changing the result, so
  // ranking only the non-zeros suffices (and is far cheaper on sparse grads).
  std::vector<std::uint32_t> nz;
  nz.reserve(std::min<std::size_t>(d, 4096));
  for (std::uint32_t i = 0; i < d; ++i)
    if (g[i] != 0.0) nz.push_back(i);
  if (nz.size() <= keep) return;

  auto worse = [&](std::uint32_t a, std::uint32_t b) {
    const double ma = std::abs(g[a]), mb = std::abs(g[b]);
    if (ma != mb) return ma > mb;
    return a < b;  // tie: keep the lower index
  };
  std::nth_element(nz.begin(), nz.begin() + keep, nz.end(), worse);
  for (std::size_t i = keep; i < nz.size(); ++i) g[nz[i]] = 0.0;
}

// Index set of size ceil(fraction*d) determined by (seed, round) alone; all
// partners sharing the seed retain identical coordinates in a round.
inline std::vector<std::uint8_t> random_subset_mask(std::size_t d,
                                                    double fraction,
                                                    std::uint64_t shared_seed,
                                                    std::uint64_t round) {
  const auto keep = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(d)));
  std::vector<std::uint8_t> mask(d, 0);
  if (keep >= d) {
    std::fill(mask.begin(), mask.end(), 1);
    return mask;
  }
  // Partial Fisher-Yates over the coordinate ids.
  std::vector<std::uint32_t> ids(d);
  std::iota(ids.begin(), ids.end(), 0);
  rng::Rng r(rng::derive_seed({shared_seed, 0x5B5E7ull, round}));
  for (std::size_t i = 0; i < keep; ++i) {
    std::size_t j = i + static_cast<std::size_t>(r.below(d - i));
    std::swap(ids[i], ids[j]);
    mask[ids[i]] = 1;
  }
  return mask;
}

inline void apply_random_subset(std::vector<double>& g, double fraction,
                                std::uint64_t shared_seed,
                                std::uint64_t round) {
  const auto mask = random_subset_mask(g.size(), fraction, shared_seed, round);
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!mask[i]) g[i] = 0.0;
}

inline void apply_compression(std::vector<double>& g,
                              const CompressionPolicy& policy,
                              std::uint64_t round) {
  switch (policy.kind) {
    case CompressionKind::kNone:
      return;
    case CompressionKind::kThreshold:
      apply_threshold(g, policy.tau);
      return;
    case CompressionKind::kTopK:
      apply_topk(g, policy.fraction);
      return;
    case CompressionKind::kRandomSubset:
      apply_random_subset(g, policy.fraction, policy.shared_seed, round);
      return;
  }
}

// --- differential privacy ------------------------------------------------------

struct DpPolicy {
  bool enabled = false;
  double clip_norm = 2.5;
  double sigma = 0.0;              // noise multiplier
  double delta = 1.0 / 295750.0;
  double sampling_rate = 1.0;      // q, for the accountant
  std::uint64_t steps = 1;         // T, for the accountant
};

// Clips each per-sample gradient to L2 <= C, averages, and adds Gaussian
// noise with per-coordinate std sigma*C/batch_size.
inline std::vector<double> dp_perturb(
    const std::vector<std::vector<double>>& per_sample_grads,
    const DpPolicy& policy, rng::Rng& rng) {
  if (policy.sigma < 0.0) throw ConfigError("dp sigma must be non-negative");
  if (!(policy.clip_norm > 0.0))
    throw ConfigError("dp clip norm must be positive");
  if (per_sample_grads.empty())
    throw ConfigError("dp_perturb needs at least one per-sample gradient");

  const std::size_t d = per_sample_grads.front().size();
  const auto batch = static_cast<double>(per_sample_grads.size());
  std::vector<double> out(d, 0.0);
  for (const auto& g : per_sample_grads) {
    if (g.size() != d) throw ConfigError("per-sample gradient length mismatch");
    double sq = 0.0;
    for (double v : g) sq += v * v;
    const double norm = std::sqrt(sq);
    const double scale =
        norm > policy.clip_norm ? policy.clip_norm / norm : 1.0;
    for (std::size_t i = 0; i < d; ++i) out[i] += g[i] * scale / batch;
  }
  if (policy.sigma > 0.0) {
    const double std_dev = policy.sigma * policy.clip_norm / batch;
    for (std::size_t i = 0; i < d; ++i) out[i] += std_dev * rng.normal();
  }
  return out;
}

namespace detail {

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

inline double log_comb(std::uint64_t n, std::uint64_t k) {
  return std::lgamma(static_cast<double>(n) + 1.0) -
         std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(n - k) + 1.0);
}

// Renyi divergence of the subsampled Gaussian mechanism at integer order
// alpha (log-space binomial expansion; reduces to alpha/(2 sigma^2) at q=1).
inline double rdp_subsampled_gaussian(double q, double sigma,
                                      std::uint64_t alpha) {
  if (q == 1.0)
    return static_cast<double>(alpha) / (2.0 * sigma * sigma);
  double log_sum = -std::numeric_limits<double>::infinity();
  for (std::uint64_t k = 0; k <= alpha; ++k) {
    const double kk = static_cast<double>(k);
    double term = log_comb(alpha, k) + kk * std::log(q) +
                  (static_cast<double>(alpha) - kk) * std::log1p(-q) +
                  kk * (kk - 1.0) / (2.0 * sigma * sigma);
    log_sum = log_add(log_sum, term);
  }
  return log_sum / (static_cast<double>(alpha) - 1.0);
}

inline const std::vector<std::uint64_t>& rdp_orders() {
  static const std::vector<std::uint64_t> orders = [] {
    std::vector<std::uint64_t> o;
    for (std::uint64_t a = 2; a <= 64; ++a) o.push_back(a);
    for (std::uint64_t a : {80ull, 96ull, 128ull, 192ull, 256ull, 384ull,
                            512ull, 1024ull})
      o.push_back(a);
    return o;
  }();
  return orders;
}

}  // namespace detail

// (epsilon, delta) for T compositions of the subsampled Gaussian mechanism,
// via a Renyi accountant over a grid of integer orders with the improved
// Renyi-to-DP conversion. sigma = 0 is reported as unbounded.
inline double account_epsilon(const DpPolicy& policy) {
  if (!(policy.sampling_rate > 0.0) || policy.sampling_rate > 1.0)
    throw ConfigError("sampling rate q must lie in (0, 1]");
  if (policy.steps < 1) throw ConfigError("step count T must be >= 1");
  if (!(policy.delta > 0.0) || policy.delta >= 1.0)
    throw ConfigError("delta must lie in (0, 1)");
  if (policy.sigma < 0.0) throw ConfigError("sigma must be non-negative");
  if (policy.sigma == 0.0) return std::numeric_limits<double>::infinity();

  double best = std::numeric_limits<double>::infinity();
  for (std::uint64_t alpha : detail::rdp_orders()) {
    const double a = static_cast<double>(alpha);
    const double rdp = detail::rdp_subsampled_gaussian(
                           policy.sampling_rate, policy.sigma, alpha) *
                       static_cast<double>(policy.steps);
    const double eps = rdp + std::log((a - 1.0) / a) -
                       (std::log(policy.delta) + std::log(a)) / (a - 1.0);
    best = std::min(best, eps);
  }
  return std::max(best, 0.0);
}

// Classic closed-form Gaussian-mechanism bound for one release at noise
// multiplier sigma: eps = sqrt(2 ln(1.25/delta)) / sigma (valid as a sanity
// ceiling for large sigma).
inline double gaussian_mechanism_epsilon(double sigma, double delta) {
  return std::sqrt(2.0 * std::log(1.25 / delta)) / sigma;
}

}  // namespace fedleak::mitigations

#endif  // FEDLEAK_MITIGATIONS_HPP

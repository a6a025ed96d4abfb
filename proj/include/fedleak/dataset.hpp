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
#ifndef FEDLEAK_DATASET_HPP
#define FEDLEAK_DATASET_HPP

#include <algorithm>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fedleak/common.hpp"

namespace fedleak::dataset {

// Sparse binary input vector, stored as the sorted set of active positions.
struct Fingerprint {
  std::vector<std::uint32_t> indices;  // strictly increasing, all < n
  std::uint32_t n = 0;                 // input dimension

  bool operator==(const Fingerprint&) const = default;
};

// One compound with its (partially observed) binary task labels.
struct LabeledSample {
  std::uint64_t sample_id = 0;
  Fingerprint fingerprint;
  // (task_id, label) pairs, sorted by task_id; task ids unique per sample.
  std::vector<std::pair<std::uint32_t, std::uint8_t>> labels;

  bool operator==(const LabeledSample&) const = default;
};

// One silo: a partner's samples and the task ids its head predicts.
struct PartnerDataset {
  std::uint32_t partner_id = 0;
  std::vector<std::uint32_t> task_ids;  // sorted, size k_j > 0
  std::vector<LabeledSample> samples;

  bool operator==(const PartnerDataset&) const = default;
};

struct PartnerShape {
  std::uint64_t sample_count = 0;
  std::uint32_t task_count = 0;
};

// Synthetic generation profile. The default mirrors the ten-partner split of
// the reference corpus scaled down by 1/100.
struct DatasetProfile {
  std::uint32_t n = 2048;
  double active_bit_mean = 20.0;  // lambda of the clipped Poisson
  double label_density = 0.3;     // rho: per-(sample,task) observation rate
  std::uint64_t teacher_seed = 7;
  bool disjoint_tasks = true;
  std::vector<PartnerShape> partners;

  std::uint32_t partner_count() const {
    return static_cast<std::uint32_t>(partners.size());
  }
  std::uint32_t total_tasks() const {
    std::uint32_t t = 0;
    for (const auto& p : partners) t += p.task_count;
    return t;
  }
};

// Ten-partner profile proportional to the reference split, scaled by 1/100.
inline DatasetProfile default_profile() {
  static constexpr std::uint64_t kSamples[10] = {256,   432,   4301,  7076,
                                                 5576,  32954, 35692, 45796,
                                                 64903, 68359};
  static constexpr std::uint32_t kTasks[10] = {2,   8,   22,  46,  32,
                                               182, 150, 217, 309, 340};
  DatasetProfile p;
  for (int i = 0; i < 10; ++i) {
    PartnerShape s;
    s.sample_count = std::max<std::uint64_t>(
        1, (kSamples[i] + 50) / 100);  // round(x / 100)
    s.task_count = std::max<std::uint32_t>(1, (kTasks[i] + 50) / 100);
    p.partners.push_back(s);
  }
  return p;
}

inline void validate(const DatasetProfile& profile) {
  if (profile.partner_count() < 2)
    throw ConfigError("dataset profile needs at least 2 partners");
  if (profile.n == 0) throw ConfigError("input dimension n must be positive");
  if (!(profile.active_bit_mean > 0.0) ||
      profile.active_bit_mean >= static_cast<double>(profile.n))
    throw ConfigError("active-bit mean must lie in (0, n)");
  if (!(profile.label_density > 0.0) || profile.label_density > 1.0)
    throw ConfigError("label density must lie in (0, 1]");
  for (const auto& s : profile.partners) {
    if (s.sample_count == 0) throw ConfigError("partner with zero samples");
    if (s.task_count == 0) throw ConfigError("partner with zero tasks");
  }
}

// Hidden linear-logistic teacher. Labels are the sign of a dense random
// linear score over the active bits, so every task carries learnable signal.
class Teacher {
 public:
  Teacher(std::uint32_t n, std::uint32_t task_count, std::uint64_t seed)
      : weights_(task_count, n) {
    rng::Rng r(rng::derive_seed({seed, 0x7EACull}));
    for (auto& w : weights_.data()) w = r.normal();
  }

  std::uint8_t label(const Fingerprint& fp, std::uint32_t task) const {
    double score = 0.0;
    for (std::uint32_t i : fp.indices) score += weights_(task, i);
    return score > 0.0 ? 1 : 0;
  }

 private:
  Matrix weights_;  // task_count x n
};

// Draws one fingerprint: active-bit count from a Poisson clipped into
// [min(5,n), min(64,n)], positions uniform without replacement.
inline Fingerprint draw_fingerprint(std::uint32_t n, double lambda,
                                    rng::Rng& r) {
  const std::uint64_t lo = std::min<std::uint64_t>(5, n);
  const std::uint64_t hi = std::min<std::uint64_t>(64, n);
  std::uint64_t k = r.poisson(lambda);
  k = std::clamp<std::uint64_t>(k, lo, hi);
  Fingerprint fp;
  fp.n = n;
  fp.indices = r.sample_without_replacement(n, k);
  return fp;
}

// Deterministic synthetic generation: same (profile, seed) gives
// byte-identical silos. Task ids are disjoint blocks per partner unless the
// profile asks for a shared task pool.
inline std::vector<PartnerDataset> generate(const DatasetProfile& profile,
                                            std::uint64_t seed) {
  validate(profile);
  const std::uint32_t total_tasks = profile.total_tasks();
  Teacher teacher(profile.n, total_tasks, profile.teacher_seed);

  std::vector<PartnerDataset> out;
  out.reserve(profile.partner_count());
  std::uint32_t next_task = 0;
  std::uint64_t next_sample_id = 0;
  for (std::uint32_t j = 0; j < profile.partner_count(); ++j) {
    const PartnerShape& shape = profile.partners[j];
    PartnerDataset d;
    d.partner_id = j;
    if (profile.disjoint_tasks) {
      for (std::uint32_t t = 0; t < shape.task_count; ++t)
        d.task_ids.push_back(next_task + t);
      next_task += shape.task_count;
    } else {
      for (std::uint32_t t = 0; t < shape.task_count; ++t)
        d.task_ids.push_back(t % total_tasks);
      std::sort(d.task_ids.begin(), d.task_ids.end());
      d.task_ids.erase(std::unique(d.task_ids.begin(), d.task_ids.end()),
                       d.task_ids.end());
    }

    rng::Rng r(rng::derive_seed({seed, 0xDA7Aull, j}));
    d.samples.reserve(shape.sample_count);
    for (std::uint64_t s = 0; s < shape.sample_count; ++s) {
      LabeledSample sample;
      sample.sample_id = next_sample_id++;
      sample.fingerprint = draw_fingerprint(profile.n, profile.active_bit_mean, r);
      for (std::uint32_t task : d.task_ids) {
        if (r.bernoulli(profile.label_density))
          sample.labels.emplace_back(task, teacher.label(sample.fingerprint, task));
      }
      d.samples.push_back(std::move(sample));
    }
    out.push_back(std::move(d));
  }
  return out;
}

// --- .fps text format -------------------------------------------------------
//
//   n=<int> tasks=<int>
//   partner=<id> tasks=<t1,t2,...>
//   <sample_id> TAB <i1,i2,...> TAB <task:label;task:label;...>
//
// The label field may be empty (sample with no observed labels).

inline void save(const std::vector<PartnerDataset>& datasets,
                 std::ostream& os) {
  if (datasets.empty()) throw ConfigError("cannot save an empty dataset list");
  const std::uint32_t n = datasets.front().samples.empty()
                              ? 0
                              : datasets.front().samples.front().fingerprint.n;
  std::uint32_t total_tasks = 0;
  for (const auto& d : datasets)
    total_tasks += static_cast<std::uint32_t>(d.task_ids.size());
  os << "n=" << n << " tasks=" << total_tasks << "\n";
  for (const auto& d : datasets) {
    os << "partner=" << d.partner_id << " tasks=";
    for (std::size_t i = 0; i < d.task_ids.size(); ++i)
      os << (i ? "," : "") << d.task_ids[i];
    os << "\n";
    for (const auto& s : d.samples) {
      os << s.sample_id << '\t';
      for (std::size_t i = 0; i < s.fingerprint.indices.size(); ++i)
        os << (i ? "," : "") << s.fingerprint.indices[i];
      os << '\t';
      for (std::size_t i = 0; i < s.labels.size(); ++i) {
        os << (i ? ";" : "") << s.labels[i].first << ':'
           << static_cast<int>(s.labels[i].second);
      }
      os << "\n";
    }
  }
}

namespace detail {

inline std::uint64_t parse_u64(const std::string& tok, std::size_t line) {
  if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos)
    throw ParseError("expected unsigned integer, got '" + tok + "'", line);
  try {
    return std::stoull(tok);
  } catch (const std::exception&) {
    throw ParseError("integer out of range: '" + tok + "'", line);
  }
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

inline std::vector<PartnerDataset> load(std::istream& is) {
  std::string line;
  std::size_t lineno = 0;

  if (!std::getline(is, line)) throw ParseError("empty file", 1);
  ++lineno;
  std::uint32_t n = 0, declared_tasks = 0;
  {
    std::istringstream hs(line);
    std::string ntok, ttok;
    hs >> ntok >> ttok;
    if (ntok.rfind("n=", 0) != 0 || ttok.rfind("tasks=", 0) != 0)
      throw ParseError("header must be 'n=<int> tasks=<int>'", lineno);
    n = static_cast<std::uint32_t>(detail::parse_u64(ntok.substr(2), lineno));
    declared_tasks =
        static_cast<std::uint32_t>(detail::parse_u64(ttok.substr(6), lineno));
  }

  std::vector<PartnerDataset> out;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.rfind("partner=", 0) == 0) {
      std::istringstream ps(line);
      std::string ptok, ttok;
      ps >> ptok >> ttok;
      if (ttok.rfind("tasks=", 0) != 0)
        throw ParseError("partner line must be 'partner=<id> tasks=<list>'",
                         lineno);
      PartnerDataset d;
      d.partner_id =
          static_cast<std::uint32_t>(detail::parse_u64(ptok.substr(8), lineno));
      for (const std::string& t : detail::split(ttok.substr(6), ',')) {
        auto task = static_cast<std::uint32_t>(detail::parse_u64(t, lineno));
        if (task >= declared_tasks)
          throw ParseError("task id " + t + " exceeds declared task count",
                           lineno);
        d.task_ids.push_back(task);
      }
      std::sort(d.task_ids.begin(), d.task_ids.end());
      if (std::adjacent_find(d.task_ids.begin(), d.task_ids.end()) !=
          d.task_ids.end())
        throw ParseError("duplicate task id in partner task list", lineno);
      out.push_back(std::move(d));
      continue;
    }
    if (out.empty())
      throw ParseError("sample line before any partner line", lineno);

    const std::vector<std::string> fields = detail::split(line, '\t');
    if (fields.size() != 3)
      throw ParseError("expected 3 TAB-separated fields", lineno);
    LabeledSample s;
    s.sample_id = detail::parse_u64(fields[0], lineno);
    s.fingerprint.n = n;
    for (const std::string& tok : detail::split(fields[1], ',')) {
      auto idx = static_cast<std::uint32_t>(detail::parse_u64(tok, lineno));
      if (idx >= n)
        throw ParseError("index " + tok + " out of range for n=" +
                             std::to_string(n),
                         lineno);
      s.fingerprint.indices.push_back(idx);
    }
    std::sort(s.fingerprint.indices.begin(), s.fingerprint.indices.end());
    if (std::adjacent_find(s.fingerprint.indices.begin(),
                           s.fingerprint.indices.end()) !=
        s.fingerprint.indices.end())
      throw ParseError("duplicate fingerprint index", lineno);
    if (s.fingerprint.indices.empty())
      throw ParseError("fingerprint must have at least one index", lineno);
    if (!fields[2].empty()) {
      for (const std::string& tok : detail::split(fields[2], ';')) {
        const std::vector<std::string> kv = detail::split(tok, ':');
        if (kv.size() != 2)
          throw ParseError("label entry must be task:label", lineno);
        auto task = static_cast<std::uint32_t>(detail::parse_u64(kv[0], lineno));
        auto lab = detail::parse_u64(kv[1], lineno);
        if (lab > 1) throw ParseError("label must be 0 or 1", lineno);
        if (!std::binary_search(out.back().task_ids.begin(),
                                out.back().task_ids.end(), task))
          throw ParseError("label references task " + kv[0] +
                               " outside the partner's task set",
                           lineno);
        s.labels.emplace_back(task, static_cast<std::uint8_t>(lab));
      }
      std::sort(s.labels.begin(), s.labels.end());
      for (std::size_t i = 1; i < s.labels.size(); ++i)
        if (s.labels[i].first == s.labels[i - 1].first)
          throw ParseError("duplicate task in label list", lineno);
    }
    out.back().samples.push_back(std::move(s));
  }
  if (out.empty()) throw ParseError("file contains no partner blocks", lineno);
  return out;
}

}  // namespace fedleak::dataset

#endif  // FEDLEAK_DATASET_HPP

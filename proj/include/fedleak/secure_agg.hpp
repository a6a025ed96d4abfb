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
#ifndef FEDLEAK_SECURE_AGG_HPP
#define FEDLEAK_SECURE_AGG_HPP

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "fedleak/common.hpp"

namespace fedleak::secagg {

// Fixed-point ring Z_{2^64} with 16 fractional bits. Encoding clamps to
// +-2^24 so that ten-partner sums keep ample headroom before wrapping.
inline constexpr double kScale = 65536.0;           // 2^16
inline constexpr double kClampAbs = 16777216.0;     // 2^40 / kScale

inline std::uint64_t encode_fixed(double v) {
  const double c = std::clamp(v, -kClampAbs, kClampAbs);
  const long long q = std::llround(c * kScale);
  return static_cast<std::uint64_t>(q);  // two's complement wrap
}

inline double decode_fixed(std::uint64_t v) {
  return static_cast<double>(static_cast<std::int64_t>(v)) / kScale;
}

struct FixedPointVector {
  std::vector<std::uint64_t> values;

  std::size_t size() const { return values.size(); }

  std::vector<double> decode() const {
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i)
      out[i] = decode_fixed(values[i]);
    return out;
  }
};

inline FixedPointVector encode(std::span<const double> v) {
  FixedPointVector fp;
  fp.values.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) fp.values[i] = encode_fixed(v[i]);
  return fp;
}

// Counter-mode PRF stream keyed by (seed, round); both endpoints of a pair
// walk the same sequence, so their masks cancel coordinate for coordinate.
// Primitive: splitmix64 (recorded in run reports for reproducibility).
class PrfStream {
 public:
  PrfStream(std::uint64_t seed, std::uint64_t round)
      : rng_(rng::derive_seed({seed, 0xA5Cull, round})) {}

  std::uint64_t next() { return rng_.next_u64(); }

 private:
  rng::Rng rng_;
};

// Pairwise seeds (symmetric) plus the optional group seed every participant
// shares but the server does not.
struct MaskKeyring {
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint64_t> pairwise;
  std::optional<std::uint64_t> group_seed;

  static std::pair<std::uint32_t, std::uint32_t> key(std::uint32_t a,
                                                     std::uint32_t b) {
    return a < b ? std::make_pair(a, b) : std::make_pair(b, a);
  }

  std::uint64_t pairwise_seed(std::uint32_t a, std::uint32_t b) const {
    auto it = pairwise.find(key(a, b));
    if (it == pairwise.end())
      throw ProtocolError("missing pairwise seed for partners " +
                          std::to_string(a) + "," + std::to_string(b));
    return it->second;
  }
};

// Derives a full keyring for a roster from one master seed. The server's
// copy is the same object without the group seed.
inline MaskKeyring make_keyring(const std::vector<std::uint32_t>& roster,
                                std::uint64_t master_seed, bool with_group) {
  MaskKeyring k;
  for (std::size_t a = 0; a < roster.size(); ++a)
    for (std::size_t b = a + 1; b < roster.size(); ++b) {
      auto key = MaskKeyring::key(roster[a], roster[b]);
      k.pairwise[key] =
          rng::derive_seed({master_seed, 0x9A13ull, key.first, key.second});
    }
  if (with_group)
    k.group_seed = rng::derive_seed({master_seed, 0x93Dull});
  return k;
}

inline std::uint64_t roster_digest(const std::vector<std::uint32_t>& roster) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (std::uint32_t id : roster) {
    unsigned char b[4];
    std::memcpy(b, &id, 4);
    h = fnv1a64(b, 4, h);
  }
  return h;
}

struct MaskedUpdate {
  std::uint32_t partner_id = 0;
  std::uint32_t round = 0;
  std::uint64_t roster_digest = 0;
  FixedPointVector payload;
};

// payload = encode(update) + sum_{v>u} PRF(seed_uv, r) - sum_{v<u} PRF(seed_uv, r)
//           [+ PRF(group_seed, r)], everything mod 2^64.
inline MaskedUpdate mask(std::span<const double> update, std::uint32_t partner,
                         std::uint32_t round, const MaskKeyring& keyring,
                         const std::vector<std::uint32_t>& roster) {
  if (std::find(roster.begin(), roster.end(), partner) == roster.end())
    throw ProtocolError("masking partner " + std::to_string(partner) +
                        " is not in the roster");
  MaskedUpdate msg;
  msg.partner_id = partner;
  msg.round = round;
  msg.roster_digest = roster_digest(roster);
  msg.payload = encode(update);

  for (std::uint32_t other : roster) {
    if (other == partner) continue;
    PrfStream prf(keyring.pairwise_seed(partner, other), round);
    if (other > partner) {
      for (auto& v : msg.payload.values) v += prf.next();
    } else {
      for (auto& v : msg.payload.values) v -= prf.next();
    }
  }
  if (keyring.group_seed) {
    PrfStream prf(*keyring.group_seed, round);
    for (auto& v : msg.payload.values) v += prf.next();
  }
  return msg;
}

// Coordinatewise modular sum. With a group seed in play the result stays
// blinded until unblind() removes roster_size copies of the group stream.
inline FixedPointVector aggregate(const std::vector<MaskedUpdate>& messages) {
  if (messages.empty()) throw ProtocolError("cannot aggregate zero messages");
  const auto& first = messages.front();
  FixedPointVector sum;
  sum.values.assign(first.payload.size(), 0);
  for (const auto& m : messages) {
    if (m.payload.size() != first.payload.size())
      throw ProtocolError("masked payload length mismatch");
    if (m.round != first.round)
      throw ProtocolError("masked updates from different rounds");
    if (m.roster_digest != first.roster_digest)
      throw ProtocolError("roster digest mismatch within a round");
    for (std::size_t i = 0; i < sum.values.size(); ++i)
      sum.values[i] += m.payload.values[i];
  }
  return sum;
}

inline std::vector<double> unblind(const FixedPointVector& agg,
                                   std::optional<std::uint64_t> group_seed,
                                   std::uint32_t round,
                                   std::size_t roster_size) {
  if (!group_seed) return agg.decode();
  FixedPointVector v = agg;
  PrfStream prf(*group_seed, round);
  for (auto& x : v.values)
    x -= static_cast<std::uint64_t>(roster_size) * prf.next();
  return v.decode();
}

// --- simulated wire format ---------------------------------------------------
// header: partner_id u32 LE, round u32 LE, roster digest 8 bytes LE;
// payload: little-endian u64 array. Constant length across partners and
// rounds, so message sizes leak nothing but the trunk parameter count.

inline std::vector<std::uint8_t> serialize(const MaskedUpdate& m) {
  std::vector<std::uint8_t> out(16 + 8 * m.payload.size());
  auto put32 = [&](std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
      out[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
  };
  auto put64 = [&](std::size_t at, std::uint64_t v) {
    for (int i = 0; i < 8; ++i)
      out[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
  };
  put32(0, m.partner_id);
  put32(4, m.round);
  put64(8, m.roster_digest);
  for (std::size_t i = 0; i < m.payload.size(); ++i)
    put64(16 + 8 * i, m.payload.values[i]);
  return out;
}

inline MaskedUpdate deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || (bytes.size() - 16) % 8 != 0)
    throw ProtocolError("malformed masked-update message");
  auto get32 = [&](std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
    return v;
  };
  auto get64 = [&](std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(bytes[at + i]) << (8 * i);
    return v;
  };
  MaskedUpdate m;
  m.partner_id = get32(0);
  m.round = get32(4);
  m.roster_digest = get64(8);
  m.payload.values.resize((bytes.size() - 16) / 8);
  for (std::size_t i = 0; i < m.payload.values.size(); ++i)
    m.payload.values[i] = get64(16 + 8 * i);
  return m;
}

}  // namespace fedleak::secagg

#endif  // FEDLEAK_SECURE_AGG_HPP

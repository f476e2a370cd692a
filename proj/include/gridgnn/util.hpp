/*
 * Copyright 2026 The gridgnn Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gridgnn/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace gridgnn {

inline constexpr const char* kVersion = "0.3.0";

/// SplitMix64 stream. Used everywhere randomness is needed so that outputs
/// are identical across standard-library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  std::size_t index(std::size_t n) {
    if (n == 0) throw ArgumentError("Rng::index: empty range");
    return static_cast<std::size_t>(uniform() * static_cast<double>(n));
  }

  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

/// Derive an independent stream seed from (seed, index).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  Rng r(seed ^ (0x632be59bd9b4e019ULL * (index + 1)));
  r.next();
  return r.next();
}

inline std::uint64_t fnv1a(std::string_view bytes,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write file: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write: " + path);
}

inline std::string file_hash(const std::string& path) { return hex64(fnv1a(read_file(path))); }

// Container layout shared by datasets and checkpoints:
//   8-byte magic | u64 LE header length | JSON header | f64 LE payload
namespace container {

inline std::string pack(std::string_view magic, std::string_view header,
                        std::span<const double> payload) {
  if (magic.size() != 8) throw ArgumentError("container magic must be 8 bytes");
  std::string out;
  out.reserve(16 + header.size() + payload.size() * 8);
  out.append(magic);
  const std::uint64_t n = header.size();
  out.append(reinterpret_cast<const char*>(&n), 8);
  out.append(header);
  out.append(reinterpret_cast<const char*>(payload.data()), payload.size() * 8);
  return out;
}

struct Unpacked {
  std::string header;
  std::vector<double> payload;
};

inline Unpacked unpack(std::string_view bytes, std::string_view magic,
                       const std::string& what) {
  if (bytes.size() < 16 || bytes.substr(0, 8) != magic)
    throw IoError(what + ": bad magic (expected " + std::string(magic) + ")");
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data() + 8, 8);
  if (16 + n > bytes.size()) throw IoError(what + ": truncated header");
  Unpacked u;
  u.header.assign(bytes.substr(16, n));
  const std::size_t rest = bytes.size() - 16 - n;
  if (rest % 8 != 0) throw IoError(what + ": payload not a multiple of 8 bytes");
  u.payload.resize(rest / 8);
  std::memcpy(u.payload.data(), bytes.data() + 16 + n, rest);
  return u;
}

inline std::string peek_magic(const std::string& path) {
  const std::string bytes = read_file(path);
  return bytes.size() >= 8 ? bytes.substr(0, 8) : std::string{};
}

}  // namespace container

/// Shortest round-trip decimal form; CSV outputs use it so that byte-level
/// reproducibility follows from numeric reproducibility.
inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

}  // namespace gridgnn

// Shared plumbing: error types, deterministic RNG, hashing, number formatting.
#pragma once

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dtda {

// Error taxonomy. The CLI maps these onto process exit codes:
// ConfigError -> 2, InputError/FormatError -> 3, DivergenceError -> 4.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed on-disk artifacts (dataset dirs, checkpoints, score files).
class FormatError : public InputError {
 public:
  explicit FormatError(const std::string& msg) : InputError(msg) {}
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& msg, long step)
      : std::runtime_error(msg + " at step " + std::to_string(step)), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

// Stable sub-seed for a named random stream, so that independent components
// (init, shuffling, attack, ...) never share or perturb each other's streams.
inline uint64_t derive_seed(uint64_t seed, std::string_view tag) {
  uint64_t s = seed ^ fnv1a64(tag);
  return splitmix64(s);
}

inline uint64_t derive_seed(uint64_t seed, std::string_view tag, uint64_t index) {
  uint64_t s = seed ^ fnv1a64(tag) ^ (0x9e3779b97f4a7c15ull * (index + 1));
  return splitmix64(s);
}

// xoshiro256** with splitmix64 seeding. Hand-rolled (rather than <random>
// distributions) so the stream is fully defined by this header and the state
// is four words, which makes checkpointing and resuming exact.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) {
    uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  uint64_t next() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // [0, 1)
  double uniform() { return double(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n), n > 0. Multiply-shift; bias is far below anything observable here.
  int uniform_int(int n) {
    return int((unsigned __int128)next() * (unsigned __int128)n >> 64);
  }

  // Box-Muller without a cached spare, so state is exactly the four words.
  double normal() {
    double u1 = double((next() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  using State = std::array<uint64_t, 4>;
  State state() const { return s_; }
  void set_state(const State& s) { s_ = s; }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::array<uint64_t, 4> s_;
};

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    size_t j = size_t(rng.uniform_int(int(i)));
    std::swap(v[i - 1], v[j]);
  }
}

// Shortest round-trip decimal form; used everywhere a float goes into a text
// artifact so byte-identical reruns come for free.
inline std::string format_double(double x) {
  std::array<char, 64> buf;
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  return std::string(buf.data(), res.ptr);
}

inline std::string to_hex(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[size_t(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

inline std::vector<unsigned char> read_binary_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot open file: " + p.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                    std::istreambuf_iterator<char>());
}

inline std::string read_text_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot open file: " + p.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_text_file(const std::filesystem::path& p, std::string_view text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw InputError("cannot write file: " + p.string());
  out.write(text.data(), std::streamsize(text.size()));
}

inline uint64_t file_digest(const std::filesystem::path& p) {
  auto bytes = read_binary_file(p);
  return fnv1a64(bytes.data(), bytes.size());
}

namespace detail {

// Little-endian u32 framing for the binary artifact formats.
static_assert(std::endian::native == std::endian::little,
              "binary artifact formats assume a little-endian host");

inline void put_u32(std::string& out, uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

inline uint32_t get_u32(const unsigned char* p) {
  uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

}  // namespace detail

// Numerically stable softmax over one row of logits.
template <typename T>
inline void softmax_row(std::span<const T> z, std::span<T> out) {
  T m = z[0];
  for (T v : z) m = std::max(m, v);
  T sum = T(0);
  for (size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - m);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
}

template <typename T>
inline std::vector<T> softmax_copy(std::span<const T> z) {
  std::vector<T> out(z.size());
  softmax_row<T>(z, out);
  return out;
}

}  // namespace dtda

#pragma once

// Shared plumbing: error types, portable seeded RNG helpers, hashing,
// numerics and a small parallel_for.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <thread>
#include <vector>

namespace cap {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Missing or malformed columns in an input table.
struct SchemaError : Error {
  using Error::Error;
};

// A specific data row is invalid. Carries the 1-based file line number.
struct RowError : Error {
  RowError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_number(line) {}
  std::size_t line_number;
};

// A precondition of an operation does not hold.
struct ContractError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Random numbers
//
// std::*_distribution output is implementation-defined, so the helpers below
// are built directly on the 64-bit engine to keep seeded output identical
// across standard libraries.
// ---------------------------------------------------------------------------

using Rng = std::mt19937_64;

// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform double in (0, 1).
inline double uniform_open01(Rng& rng) {
  double u;
  do {
    u = uniform01(rng);
  } while (u == 0.0);
  return u;
}

// Unbiased integer in [0, bound) by rejection.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t bound) {
  if (bound == 0) throw ContractError("uniform_index: empty range");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

// Gamma(shape, 1) for integer shape, as a sum of exponentials.
inline double erlang(Rng& rng, int shape) {
  double g = 0.0;
  for (int i = 0; i < shape; ++i) g -= std::log(uniform_open01(rng));
  return g;
}

// Beta(a, b) for integer a, b >= 1.
inline double beta_int(Rng& rng, int a, int b) {
  const double x = erlang(rng, a);
  const double y = erlang(rng, b);
  return x / (x + y);
}

// ---------------------------------------------------------------------------
// Hashing
// ---------------------------------------------------------------------------

// 64-bit FNV-1a. Used for fingerprints of id lists, manifests and models.
class Fnv1a {
 public:
  void update(std::string_view s) {
    for (unsigned char c : s) {
      hash_ ^= c;
      hash_ *= 0x100000001b3ULL;
    }
  }
  // Length-prefixed so ("ab","c") and ("a","bc") differ.
  void update_field(std::string_view s) {
    update(std::to_string(s.size()));
    update(":");
    update(s);
  }
  std::uint64_t value() const { return hash_; }
  std::string hex() const {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    std::uint64_t h = hash_;
    for (int i = 15; i >= 0; --i) {
      out[static_cast<std::size_t>(i)] = digits[h & 0xF];
      h >>= 4;
    }
    return out;
  }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

inline std::string fingerprint(std::string_view text) {
  Fnv1a h;
  h.update(text);
  return h.hex();
}

inline std::string fingerprint_ids(const std::vector<std::string>& ids) {
  Fnv1a h;
  for (const auto& id : ids) h.update_field(id);
  return h.hex();
}

// ---------------------------------------------------------------------------
// Numerics
// ---------------------------------------------------------------------------

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// ceil(x) that ignores floating noise just above an integer, so that
// (1 - 0.2) * 11 style products round the way the arithmetic intends.
inline long long ceil_tolerant(double x, double tol = 1e-9) {
  return static_cast<long long>(std::ceil(x - tol));
}

// Shortest round-trip decimal representation.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, bool& ok) {
  double v = 0.0;
  // from_chars rejects a leading '+', accept it for hand-written files.
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  ok = res.ec == std::errc() && res.ptr == s.data() + s.size() && !s.empty();
  return v;
}

// ---------------------------------------------------------------------------
// Threads
// ---------------------------------------------------------------------------

// Default worker count: CAP_NUM_THREADS if set and positive, else the
// hardware concurrency.
inline unsigned default_thread_count() {
  if (const char* env = std::getenv("CAP_NUM_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

// Calls fn(i) for i in [0, n) over contiguous static chunks. fn must only
// write to slots owned by its own index.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, unsigned threads = default_thread_count()) {
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t lo = t * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

// ---------------------------------------------------------------------------
// Text helpers
// ---------------------------------------------------------------------------

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::string_view strip_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

}  // namespace cap

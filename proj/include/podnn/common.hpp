#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace podnn {

// Failure categories surfaced to callers and mapped to CLI exit codes.
enum class ErrorKind {
  InvalidModel,
  NumericInput,
  Stiffness,
  Shape,
  Domain,
  Usage,
  TrainingDivergence,
  RolloutBlowUp,
  Config,
  Io,
  Provenance,
  MissingInput,
  DivisionGuard,
  EmptyReport,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

const char* error_kind_name(ErrorKind kind);

// SplitMix64: counter-based generator used everywhere a recorded seed must
// reproduce bit-identically (weight init, LHS permutations, batch shuffles).
// Reference: Steele, Lea, Flood, "Fast splittable pseudorandom number
// generators" (the java.util.SplittableRandom finalizer).
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random mantissa bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double next_double(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) {
    // Rejection sampling keeps the draw exactly uniform.
    const std::uint64_t limit = n * (UINT64_MAX / n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

 private:
  std::uint64_t state_;
};

// Derives an independent stream from a base seed and a stream index, so that
// e.g. ensemble member i or LHS dimension d gets its own generator.
inline SplitMix64 seeded_stream(std::uint64_t seed, std::uint64_t stream) {
  SplitMix64 mixer(seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
  return SplitMix64(mixer.next_u64());
}

inline bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  return m.allFinite();
}

// FNV-1a: stable 64-bit hash of a key string, used to derive per-artifact
// seeds that do not depend on loop order.
inline std::uint64_t fnv1a64(const std::string& key) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : key) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline constexpr double kCelsiusToKelvin = 273.15;

}  // namespace podnn

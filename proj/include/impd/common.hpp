#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace impd {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when array/image dimensions do not match a contract.
struct ShapeError : Error {
  using Error::Error;
};

// Thrown when an on-disk file is missing, truncated or inconsistent.
struct FormatError : Error {
  using Error::Error;
};

// Thrown for invalid generation/training configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Thrown when the optimizer encounters non-finite state.
struct OptimizationError : Error {
  using Error::Error;
};

// Thrown when a sampler has nothing to sample from.
struct SamplingError : Error {
  using Error::Error;
};

// Deterministic RNG. Wraps a fixed 64-bit engine and hand-rolled
// distributions so streams are identical across platforms and
// standard-library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

  // xorshift* core
  uint64_t next_u64() {
    uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dULL;
  }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  uint64_t uniform_index(uint64_t n) { return n ? next_u64() % n : 0; }

  // Standard normal via Box-Muller (spare cached).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Derives an independent stream, e.g. per-worker or per-frame.
  Rng fork(uint64_t salt) const {
    uint64_t s = state_ ^ (salt * 0xff51afd7ed558ccdULL + 0x2545f4914f6cdd1dULL);
    return Rng(s ? s : 1);
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Worker count: min(IMPD_THREADS, hardware_concurrency), at least 1.
int worker_count();

// Runs fn(i) for i in [0, n) across workers. Tasks must write to disjoint
// locations; output is then independent of scheduling.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace impd

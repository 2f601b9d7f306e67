#pragma once

// Reproducible random streams and a deterministic parallel replica runner.

#include <algorithm>
#include <cstdint>
#include <exception>
#include <random>
#include <thread>
#include <vector>

namespace loopsoup {

using Rng = std::mt19937_64;

/// Independent stream for (master seed, replica index, purpose tag).
inline Rng make_stream(std::uint64_t seed, std::uint64_t replica,
                       std::uint64_t tag = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(replica),
                    static_cast<std::uint32_t>(replica >> 32),
                    static_cast<std::uint32_t>(tag),
                    static_cast<std::uint32_t>(tag >> 32)};
  return Rng(seq);
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double exponential(Rng& rng, double rate) {
  return std::exponential_distribution<double>(rate)(rng);
}

inline long poisson(Rng& rng, double mean) {
  if (mean <= 0.0) return 0;
  return std::poisson_distribution<long>(mean)(rng);
}

/// Evaluates fn(replica) for replica = 0..count-1 on `workers` threads.
/// Replica r always lands in slot r, so results do not depend on the
/// worker count as long as fn only uses replica-keyed randomness.
template <class T, class Fn>
std::vector<T> run_replicas(std::size_t count, int workers, Fn fn) {
  std::vector<T> out(count);
  workers = std::max(1, workers);
  if (workers == 1 || count < 2) {
    for (std::size_t r = 0; r < count; ++r) out[r] = fn(r);
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t r = w; r < count; r += workers) out[r] = fn(r);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace loopsoup

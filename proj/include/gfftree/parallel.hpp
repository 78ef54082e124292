#pragma once

// Deterministic replicate parallelism: work is cut into fixed-size chunks of
// replicate indices, workers grab chunks from an atomic counter, partial
// results are stored per chunk and reduced in chunk order. Because every
// replicate draws from its own counter-based stream and the reduction order
// is fixed, output is bit-identical for any worker count.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace gfftree {

struct ParallelConfig {
  int workers = 1;
  long long chunk = 4096;  // replicates per chunk; part of the output contract
};

// fn: (replicate_begin, replicate_end) -> Partial
// merge: (Partial& into, Partial&& from)
template <class Partial, class Fn, class Merge>
Partial parallel_reduce(long long n_replicates, const ParallelConfig& cfg, Fn&& fn,
                        Merge&& merge) {
  const long long chunk = cfg.chunk > 0 ? cfg.chunk : 4096;
  const long long n_chunks = n_replicates > 0 ? (n_replicates + chunk - 1) / chunk : 0;
  std::vector<Partial> partials(static_cast<std::size_t>(n_chunks));

  const int workers = std::max(1, cfg.workers);
  if (workers == 1 || n_chunks <= 1) {
    for (long long c = 0; c < n_chunks; ++c) {
      const long long b = c * chunk;
      const long long e = std::min(n_replicates, b + chunk);
      partials[static_cast<std::size_t>(c)] = fn(b, e);
    }
  } else {
    std::atomic<long long> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
      for (;;) {
        const long long c = next.fetch_add(1);
        if (c >= n_chunks) return;
        const long long b = c * chunk;
        const long long e = std::min(n_replicates, b + chunk);
        try {
          partials[static_cast<std::size_t>(c)] = fn(b, e);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          next.store(n_chunks);
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
  }

  Partial out{};
  for (auto& p : partials) merge(out, std::move(p));
  return out;
}

}  // namespace gfftree

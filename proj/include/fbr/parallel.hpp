#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace fbr {

inline unsigned max_workers() {
  static unsigned n = [] {
    if (const char* env = std::getenv("FBR_THREADS")) {
      long v = std::strtol(env, nullptr, 10);
      if (v >= 1) return static_cast<unsigned>(v);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1u;
  }();
  return n;
}

// Splits [0, count) into fixed-size chunks and runs fn(chunk_index, begin,
// end) across workers. Chunk boundaries do not depend on the worker count,
// so per-chunk partial results reduced in chunk index order give the same
// bits on any machine.
inline void run_chunked(
    std::size_t count, std::size_t chunk_size,
    const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
  if (count == 0) return;
  const std::size_t chunks = (count + chunk_size - 1) / chunk_size;
  const std::size_t workers =
      std::min<std::size_t>(max_workers(), chunks);
  if (workers <= 1) {
    for (std::size_t ci = 0; ci < chunks; ++ci)
      fn(ci, ci * chunk_size, std::min(count, (ci + 1) * chunk_size));
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t ci = next.fetch_add(1);
      if (ci >= chunks) return;
      try {
        fn(ci, ci * chunk_size, std::min(count, (ci + 1) * chunk_size));
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace fbr

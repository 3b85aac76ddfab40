#include "impd/common.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>
#include <vector>

namespace impd {

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

int worker_count() {
  static const int count = [] {
    int n = int(std::thread::hardware_concurrency());
    if (n < 1) n = 1;
    if (const char* env = std::getenv("IMPD_THREADS")) {
      const int cap = std::atoi(env);
      if (cap >= 1 && cap < n) n = cap;
    }
    return n;
  }();
  return count;
}

void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
  const int workers = int(std::min<int64_t>(worker_count(), n));
  if (workers <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int64_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const int64_t i = next.fetch_add(1);
        if (i >= n) break;
        fn(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace impd

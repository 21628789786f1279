#include "dtok/parallel.hpp"

#include <omp.h>

#include <cstdlib>
#include <string>

namespace dtok {

void configure_threads_from_env() {
  const char* env = std::getenv("DTOK_THREADS");
  if (env == nullptr) return;
  try {
    const int n = std::stoi(env);
    if (n > 0) set_worker_count(n);
  } catch (const std::exception&) {
    // ignored: malformed value keeps the runtime default
  }
}

void set_worker_count(int n) { omp_set_num_threads(n > 0 ? n : 1); }

int worker_count() { return omp_get_max_threads(); }

}  // namespace dtok

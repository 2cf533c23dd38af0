#pragma once

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mlde {

inline int worker_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

/// n <= 0 selects the runtime default (logical core count).
inline void set_worker_count(int n) {
#ifdef _OPENMP
  omp_set_num_threads(n > 0 ? n : omp_get_num_procs());
#else
  (void)n;
#endif
}

/// Caps the OpenMP team size for the lifetime of the guard; 0 leaves it as is.
class ScopedWorkerLimit {
 public:
  explicit ScopedWorkerLimit(int n) : saved_(worker_count()) {
    if (n > 0) set_worker_count(n);
  }
  ~ScopedWorkerLimit() { set_worker_count(saved_); }
  ScopedWorkerLimit(const ScopedWorkerLimit&) = delete;
  ScopedWorkerLimit& operator=(const ScopedWorkerLimit&) = delete;

 private:
  int saved_;
};

}  // namespace mlde

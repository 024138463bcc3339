#pragma once

#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace pfl {

/// Fixed set of threads executing index-parallel loops. Results must be
/// written to per-index slots; the pool gives no ordering guarantees.
class WorkerPool {
 public:
  /// threads <= 1 runs every loop inline on the caller.
  explicit WorkerPool(std::size_t threads);
  ~WorkerPool();

  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  std::size_t threads() const { return workers_.empty() ? 1 : workers_.size(); }

  /// Calls fn(i) for i in [0, n) and blocks until all calls return. If any
  /// call throws, the exception of the lowest failing index is rethrown.
  void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

 private:
  void worker_loop(std::stop_token stop);

  std::vector<std::jthread> workers_;
  std::mutex mutex_;
  std::condition_variable_any wake_;
  std::condition_variable done_;

  // Current job; guarded by mutex_.
  const std::function<void(std::size_t)>* job_ = nullptr;
  std::size_t job_size_ = 0;
  std::size_t next_index_ = 0;
  std::size_t finished_ = 0;
  std::size_t generation_ = 0;
  std::vector<std::exception_ptr> errors_;
};

}  // namespace pfl

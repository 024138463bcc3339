#include "pfl/worker_pool.hpp"

namespace pfl {

WorkerPool::WorkerPool(std::size_t threads) {
  if (threads <= 1) return;
  workers_.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t)
    workers_.emplace_back([this](std::stop_token stop) { worker_loop(stop); });
}

WorkerPool::~WorkerPool() {
  for (auto& w : workers_) w.request_stop();
  wake_.notify_all();
}

void WorkerPool::parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  if (workers_.empty() || n == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::unique_lock lock(mutex_);
  job_ = &fn;
  job_size_ = n;
  next_index_ = 0;
  finished_ = 0;
  errors_.assign(n, nullptr);
  ++generation_;
  lock.unlock();
  wake_.notify_all();

  lock.lock();
  done_.wait(lock, [&] { return finished_ == job_size_; });
  job_ = nullptr;
  for (auto& e : errors_)
    if (e) std::rethrow_exception(e);
}

void WorkerPool::worker_loop(std::stop_token stop) {
  std::size_t seen_generation = 0;
  std::unique_lock lock(mutex_);
  while (true) {
    wake_.wait(lock, stop, [&] { return job_ != nullptr && generation_ != seen_generation; });
    if (stop.stop_requested()) return;
    seen_generation = generation_;
    while (job_ != nullptr && next_index_ < job_size_) {
      const std::size_t i = next_index_++;
      const auto* fn = job_;
      lock.unlock();
      std::exception_ptr err;
      try {
        (*fn)(i);
      } catch (...) {
        err = std::current_exception();
      }
      lock.lock();
      errors_[i] = err;
      if (++finished_ == job_size_) done_.notify_all();
    }
  }
}

}  // namespace pfl

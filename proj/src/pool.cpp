#include "gwgrid/pool.hpp"

#include <stdexcept>

namespace gwgrid {

WorkerPool::WorkerPool(int workers) {
  if (workers < 1) throw std::invalid_argument("worker count must be >= 1");
  threads_.reserve(static_cast<std::size_t>(workers));
  for (int i = 0; i < workers; ++i) {
    threads_.emplace_back([this, i] { worker_loop(i); });
  }
}

WorkerPool::~WorkerPool() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    stop_ = true;
  }
  start_cv_.notify_all();
  for (auto& t : threads_) t.join();
}

void WorkerPool::run(const std::function<void(int)>& body) {
  std::unique_lock<std::mutex> lock(mu_);
  body_ = &body;
  first_error_ = nullptr;
  remaining_ = size();
  ++generation_;
  start_cv_.notify_all();
  done_cv_.wait(lock, [this] { return remaining_ == 0; });
  body_ = nullptr;
  if (first_error_) std::rethrow_exception(first_error_);
}

void WorkerPool::worker_loop(int index) {
  std::uint64_t seen = 0;
  for (;;) {
    const std::function<void(int)>* body = nullptr;
    {
      std::unique_lock<std::mutex> lock(mu_);
      start_cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
      if (stop_) return;
      seen = generation_;
      body = body_;
    }
    std::exception_ptr err;
    try {
      (*body)(index);
    } catch (...) {
      err = std::current_exception();
    }
    {
      std::lock_guard<std::mutex> lock(mu_);
      if (err && !first_error_) first_error_ = err;
      if (--remaining_ == 0) done_cv_.notify_all();
    }
  }
}

}  // namespace gwgrid

#pragma once

#include <condition_variable>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace gwgrid {

// Persistent pool of compute workers.  run() hands every worker the same
// callable (with its worker index) and blocks until all return; work
// division is the caller's business (shared atomic cursor, static
// ownership, ...).  The first exception thrown by any worker is rethrown to
// the caller after the batch finishes; callers that want early bail-out
// share a cancellation flag inside their callable.
class WorkerPool {
 public:
  explicit WorkerPool(int workers);
  ~WorkerPool();

  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  int size() const { return static_cast<int>(threads_.size()); }

  void run(const std::function<void(int)>& body);

 private:
  void worker_loop(int index);

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable start_cv_;
  std::condition_variable done_cv_;
  const std::function<void(int)>* body_ = nullptr;
  std::uint64_t generation_ = 0;
  int remaining_ = 0;
  bool stop_ = false;
  std::exception_ptr first_error_;
};

}  // namespace gwgrid

#include "gwgrid/pipeline.hpp"

namespace gwgrid {

IoAgent::IoAgent() : thread_([this] { loop(); }) {}

IoAgent::~IoAgent() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    stop_ = true;
    queue_.clear();  // drop not-yet-started jobs
  }
  cv_.notify_all();
  thread_.join();
}

std::future<void> IoAgent::post(std::function<void()> job) {
  std::packaged_task<void()> task(std::move(job));
  std::future<void> f = task.get_future();
  {
    std::lock_guard<std::mutex> lock(mu_);
    queue_.push_back(std::move(task));
  }
  cv_.notify_one();
  return f;
}

void IoAgent::loop() {
  for (;;) {
    std::packaged_task<void()> task;
    {
      std::unique_lock<std::mutex> lock(mu_);
      cv_.wait(lock, [this] { return stop_ || !queue_.empty(); });
      if (queue_.empty()) return;  // stop_ and drained
      task = std::move(queue_.front());
      queue_.pop_front();
    }
    task();  // exceptions land in the future
  }
}

}  // namespace gwgrid

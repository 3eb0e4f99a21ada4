/*
 * Copyright 2026 PulseUQ Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace pulseuq {

/// Persistent worker pool used for batch-level parallelism. Work is always
/// split into a fixed number of contiguous chunks (a pure function of the
/// item count and pool size) and any reduction over chunk results happens in
/// chunk order, so results are bit-identical across runs for a given
/// PULSEUQ_THREADS setting.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  int size() const { return static_cast<int>(workers_.size()) + 1; }

  /// Runs fn(chunk_index) for chunk_index in [0, n_chunks); blocks until all
  /// chunks finish. Chunk 0 runs on the calling thread. Nested calls fall
  /// back to serial execution.
  void run(int n_chunks, const std::function<void(int)>& fn) {
    if (n_chunks <= 0) return;
    thread_local bool inside = false;
    if (inside || workers_.empty() || n_chunks == 1) {
      for (int c = 0; c < n_chunks; ++c) fn(c);
      return;
    }
    inside = true;
    {
      std::unique_lock<std::mutex> lock(mu_);
      task_ = &fn;
      next_chunk_ = 1;  // chunk 0 is ours
      pending_ = n_chunks - 1;
      total_chunks_ = n_chunks;
      ++generation_;
    }
    cv_work_.notify_all();
    fn(0);
    {
      std::unique_lock<std::mutex> lock(mu_);
      cv_done_.wait(lock, [&] { return pending_ == 0; });
      task_ = nullptr;
    }
    inside = false;
  }

  ~ThreadPool() {
    {
      std::unique_lock<std::mutex> lock(mu_);
      stop_ = true;
    }
    cv_work_.notify_all();
    for (auto& t : workers_) t.join();
  }

 private:
  ThreadPool() {
    int n = 0;
    if (const char* env = std::getenv("PULSEUQ_THREADS")) n = std::atoi(env);
    if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
    for (int i = 1; i < n; ++i) {
      workers_.emplace_back([this] { worker_loop(); });
    }
  }

  void worker_loop() {
    std::uint64_t seen_generation = 0;
    for (;;) {
      const std::function<void(int)>* task = nullptr;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_work_.wait(lock, [&] {
          return stop_ || (task_ != nullptr && generation_ != seen_generation);
        });
        if (stop_) return;
        seen_generation = generation_;
        task = task_;
      }
      for (;;) {
        int chunk;
        {
          std::unique_lock<std::mutex> lock(mu_);
          if (task_ != task || next_chunk_ >= total_chunks_) break;
          chunk = next_chunk_++;
        }
        (*task)(chunk);
        {
          std::unique_lock<std::mutex> lock(mu_);
          if (--pending_ == 0) cv_done_.notify_all();
        }
      }
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_work_;
  std::condition_variable cv_done_;
  const std::function<void(int)>* task_ = nullptr;
  int next_chunk_ = 0;
  int total_chunks_ = 0;
  int pending_ = 0;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
};

/// Splits [0, n_items) into at most pool-size contiguous chunks and runs
/// fn(begin, end, chunk_index) on each. Chunk boundaries depend only on
/// n_items and the pool size.
template <typename Fn>
void parallel_chunks(std::int64_t n_items, Fn&& fn) {
  if (n_items <= 0) return;
  ThreadPool& pool = ThreadPool::instance();
  const int n_chunks =
      static_cast<int>(std::min<std::int64_t>(pool.size(), n_items));
  const std::int64_t base = n_items / n_chunks;
  const std::int64_t rem = n_items % n_chunks;
  pool.run(n_chunks, [&](int c) {
    const std::int64_t begin = c * base + std::min<std::int64_t>(c, rem);
    const std::int64_t end = begin + base + (c < rem ? 1 : 0);
    fn(begin, end, c);
  });
}

}  // namespace pulseuq

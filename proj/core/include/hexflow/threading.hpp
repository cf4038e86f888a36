// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <condition_variable>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#if defined(__x86_64__) || defined(__i386__)
#include <xmmintrin.h>
#endif

namespace hexflow {

inline int hardware_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

// Transmittance products underflow once fields converge; denormal traffic
// stalls the pipeline by orders of magnitude. Flushing to zero is
// deterministic and the affected magnitudes (< 1e-38) are far below every
// tolerance in use. Per-thread CPU state: call on each worker.
inline void enable_flush_to_zero() {
#if defined(__x86_64__) || defined(__i386__)
  _mm_setcsr(_mm_getcsr() | 0x8040);  // FTZ | DAZ
#endif
}

// Fixed pool executing indexed chunks. Work is partitioned into a chunk
// count chosen by the caller, independent of the thread count, so that
// per-chunk results can be reduced in chunk order for deterministic sums.
class ThreadPool {
 public:
  explicit ThreadPool(int threads) {
    threads = threads < 1 ? 1 : threads;
    for (int i = 0; i < threads; ++i) {
      workers_.emplace_back([this] {
        enable_flush_to_zero();
        worker_loop();
      });
    }
  }

  ~ThreadPool() {
    {
      std::unique_lock<std::mutex> lock(mutex_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
  }

  int size() const { return static_cast<int>(workers_.size()); }

  // Runs fn(chunk) for chunk in [0, n_chunks); blocks until all complete.
  // The calling thread participates. First exception wins and is rethrown.
  void run_chunks(int n_chunks, const std::function<void(int)>& fn) {
    if (n_chunks <= 0) return;
    {
      std::unique_lock<std::mutex> lock(mutex_);
      fn_ = &fn;
      next_chunk_.store(0, std::memory_order_relaxed);
      total_chunks_ = n_chunks;
      pending_.store(n_chunks, std::memory_order_relaxed);
      error_ = nullptr;
    }
    cv_.notify_all();
    drain();  // caller helps
    std::unique_lock<std::mutex> lock(mutex_);
    done_cv_.wait(lock, [this] { return pending_.load() == 0; });
    fn_ = nullptr;
    if (error_) std::rethrow_exception(error_);
  }

 private:
  void drain() {
    for (;;) {
      const int c = next_chunk_.fetch_add(1, std::memory_order_relaxed);
      if (c >= total_chunks_) return;
      try {
        (*fn_)(c);
      } catch (...) {
        std::unique_lock<std::mutex> lock(mutex_);
        if (!error_) error_ = std::current_exception();
      }
      if (pending_.fetch_sub(1) == 1) {
        std::unique_lock<std::mutex> lock(mutex_);
        done_cv_.notify_all();
      }
    }
  }

  void worker_loop() {
    for (;;) {
      {
        std::unique_lock<std::mutex> lock(mutex_);
        cv_.wait(lock, [this] {
          return stop_ || (fn_ != nullptr &&
                           next_chunk_.load(std::memory_order_relaxed) < total_chunks_);
        });
        if (stop_) return;
        if (fn_ == nullptr) continue;
      }
      drain();
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(int)>* fn_ = nullptr;
  std::atomic<int> next_chunk_{0};
  int total_chunks_ = 0;
  std::atomic<int> pending_{0};
  std::exception_ptr error_;
  bool stop_ = false;
};

}  // namespace hexflow

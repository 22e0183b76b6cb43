#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace femseg {

// Persistent worker pool driving parallel_for. Work is split into one static
// contiguous chunk per participating thread, so every index is executed by
// exactly one thread and element-level results do not depend on the thread
// count.
class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    // Effective thread count (including the calling thread).
    int threads() const { return threads_; }

    // Override the default (hardware concurrency); capped to the pool size
    // chosen at startup.
    void set_threads(int n) {
        threads_ = std::clamp(n, 1, int(workers_.size()) + 1);
    }

    void run(int64_t count, const std::function<void(int64_t, int64_t)>& chunk_fn) {
        if (count <= 0) return;
        int nthreads = std::min<int64_t>(threads_, count);
        if (nthreads <= 1 || workers_.empty()) {
            chunk_fn(0, count);
            return;
        }
        {
            std::unique_lock<std::mutex> lock(mutex_);
            job_fn_ = &chunk_fn;
            job_count_ = count;
            job_threads_ = nthreads;
            pending_ = int(workers_.size()); // every worker acknowledges each generation
            ++generation_;
        }
        cv_start_.notify_all();
        run_chunk(0); // caller takes chunk 0
        std::unique_lock<std::mutex> lock(mutex_);
        cv_done_.wait(lock, [&] { return pending_ == 0; });
        job_fn_ = nullptr;
    }

private:
    ThreadPool() {
        int hw = int(std::thread::hardware_concurrency());
        if (hw < 1) hw = 1;
        threads_ = hw;
        for (int i = 1; i < hw; ++i)
            workers_.emplace_back([this, i] { worker_loop(i); });
    }

    ~ThreadPool() {
        {
            std::unique_lock<std::mutex> lock(mutex_);
            stop_ = true;
            ++generation_;
        }
        cv_start_.notify_all();
        for (auto& w : workers_) w.join();
    }

    void run_chunk(int chunk_index) {
        const int64_t per = (job_count_ + job_threads_ - 1) / job_threads_;
        const int64_t begin = per * chunk_index;
        const int64_t end = std::min<int64_t>(begin + per, job_count_);
        if (begin < end) (*job_fn_)(begin, end);
    }

    void worker_loop(int index) {
        uint64_t seen = 0;
        for (;;) {
            {
                std::unique_lock<std::mutex> lock(mutex_);
                cv_start_.wait(lock, [&] { return generation_ != seen; });
                seen = generation_;
                if (stop_) return;
            }
            if (index < job_threads_) run_chunk(index);
            {
                std::unique_lock<std::mutex> lock(mutex_);
                if (--pending_ == 0) cv_done_.notify_all();
            }
        }
    }

    std::vector<std::thread> workers_;
    std::mutex mutex_;
    std::condition_variable cv_start_;
    std::condition_variable cv_done_;
    const std::function<void(int64_t, int64_t)>* job_fn_ = nullptr;
    int64_t job_count_ = 0;
    int job_threads_ = 1;
    int pending_ = 0;
    uint64_t generation_ = 0;
    bool stop_ = false;
    int threads_ = 1;
};

// Runs fn(i) for i in [0, count). Deterministic as long as the loop body only
// writes state owned by index i.
template <typename Fn>
void parallel_for(int64_t count, Fn&& fn) {
    ThreadPool::instance().run(count, [&](int64_t begin, int64_t end) {
        for (int64_t i = begin; i < end; ++i) fn(i);
    });
}

inline void set_thread_count(int n) { ThreadPool::instance().set_threads(n); }

} // namespace femseg

#pragma once

// Real-time replay benchmark: a producer thread releases scan cycles of a recording
// at the acquisition rate into a bounded queue; the consumer turns them into
// phase-difference frames and runs the regressor on every completed window.

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "oce/config.hpp"
#include "oce/nn/resize.hpp"
#include "oce/nn/train.hpp"
#include "oce/preproc.hpp"

namespace oce {

// Blocking FIFO with a fixed capacity. A full queue makes push wait; every such
// wait is counted, nothing is ever discarded.
template <class T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw DomainError("queue capacity must be >= 1");
  }

  void push(T item) {
    std::unique_lock lock(mutex_);
    if (items_.size() >= capacity_) {
      ++full_events_;
      const auto t0 = std::chrono::steady_clock::now();
      not_full_.wait(lock, [&] { return items_.size() < capacity_; });
      blocked_s_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    items_.push_back(std::move(item));
    ++pushed_;
    max_depth_ = std::max(max_depth_, items_.size());
    not_empty_.notify_one();
  }

  // Empty optional once the queue is closed and drained.
  std::optional<T> pop() {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    ++popped_;
    not_full_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_empty_.notify_all();
  }

  std::size_t pushed() const { std::lock_guard l(mutex_); return pushed_; }
  std::size_t popped() const { std::lock_guard l(mutex_); return popped_; }
  std::size_t full_events() const { std::lock_guard l(mutex_); return full_events_; }
  double blocked_seconds() const { std::lock_guard l(mutex_); return blocked_s_; }
  std::size_t max_depth() const { std::lock_guard l(mutex_); return max_depth_; }

 private:
  mutable std::mutex mutex_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::deque<T> items_;
  std::size_t capacity_;
  bool closed_ = false;
  std::size_t pushed_ = 0;
  std::size_t popped_ = 0;
  std::size_t full_events_ = 0;
  double blocked_s_ = 0.0;
  std::size_t max_depth_ = 0;
};

struct StreamOptions {
  int window = 64;
  int stride = 8;
  int queue_capacity = 64;
  double replay_speed = 1.0;  // 0: as fast as possible
  PreprocOptions preproc;
  NetInputConfig net_input;
};

struct StreamReport {
  std::size_t cycles_replayed = 0;
  std::size_t cycles_processed = 0;
  std::size_t expected_estimates = 0;
  std::vector<double> estimates_kpa;
  std::vector<double> latency_ms;
  double p50_ms = 0.0;
  double p90_ms = 0.0;
  double p99_ms = 0.0;
  double max_ms = 0.0;
  double estimates_per_s = 0.0;
  double wall_s = 0.0;
  std::size_t backpressure_events = 0;
  double backpressure_s = 0.0;
  std::size_t max_queue_depth = 0;
};

// floor((cycles - window) / stride) + 1, or 0 when the recording is shorter than a window.
inline std::size_t expected_window_count(std::size_t cycles, int window, int stride) {
  if (cycles < static_cast<std::size_t>(window)) return 0;
  return (cycles - window) / stride + 1;
}

inline double percentile(std::vector<double> v, double p) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = p / 100.0 * (v.size() - 1);
  const auto i = static_cast<std::size_t>(pos);
  const double f = pos - i;
  return i + 1 < v.size() ? v[i] * (1.0 - f) + v[i + 1] * f : v[i];
}

namespace detail {

inline RawRecording recording_prefix(const RawRecording& rec, std::size_t cycles) {
  RawRecording p;
  p.config = rec.config;
  p.source_xy_mm = rec.source_xy_mm;
  p.probe_center_mm = rec.probe_center_mm;
  p.seed = rec.seed;
  p.n_lines = cycles * static_cast<std::size_t>(rec.config.lines_per_cycle);
  p.samples.assign(rec.samples.begin(), rec.samples.begin() + static_cast<std::ptrdiff_t>(p.n_lines * rec.depth()));
  return p;
}

}  // namespace detail

inline StreamReport stream_bench(const RawRecording& rec, nn::Regressor<float>& model, const StreamOptions& opt) {
  using clock = std::chrono::steady_clock;
  if (rec.n_lines == 0 || rec.samples.empty()) throw DataError("stream-bench: zero-length recording");
  const std::size_t cycles = rec.cycles();
  const int L = rec.config.lines_per_cycle;
  if (opt.window != model.window())
    throw DataError("stream-bench: window " + std::to_string(opt.window) + " differs from the model window " +
                    std::to_string(model.window()));
  if (opt.net_input.depth != model.depth() || opt.net_input.lateral != model.lateral())
    throw DataError("stream-bench: checkpoint expects " + std::to_string(model.depth()) + " x " +
                    std::to_string(model.lateral()) + " inputs, configuration produces " +
                    std::to_string(opt.net_input.depth) + " x " + std::to_string(opt.net_input.lateral));
  if (cycles < static_cast<std::size_t>(opt.window))
    throw DataError("stream-bench: recording has " + std::to_string(cycles) + " cycles, fewer than the " +
                    std::to_string(opt.window) + "-frame window");
  if (cycles < 3) throw DataError("stream-bench: need at least 3 scan cycles");

  // Geometry fixed from a short warm-up prefix, as a live system would.
  const std::size_t warmup = std::min<std::size_t>(cycles, static_cast<std::size_t>(opt.preproc.turning_cycles) + 1);
  const auto prefix = detail::recording_prefix(rec, std::max<std::size_t>(warmup, 3));
  const int offset = rec.config.mode == ScanMode::line2dt ? detect_turning_offset(prefix, opt.preproc.turning_cycles) : 0;
  const int surface = detect_surface(prefix, opt.preproc);
  const int crop = opt.preproc.crop_depth;
  if (surface + crop > rec.config.depth_pixels) throw DataError("stream-bench: depth crop exceeds the A-line");

  struct Arrival {
    std::size_t cycle;
    clock::time_point at;
  };
  BoundedQueue<Arrival> queue(static_cast<std::size_t>(opt.queue_capacity));
  StreamReport report;
  report.expected_estimates = expected_window_count(cycles, opt.window, opt.stride);

  const double cycle_period = 1.0 / rec.config.cycle_freq_hz;
  const auto start = clock::now();
  std::thread producer([&] {
    for (std::size_t c = 0; c < cycles; ++c) {
      if (opt.replay_speed > 0.0)
        std::this_thread::sleep_until(start + std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(
                                                  (c + 1) * cycle_period / opt.replay_speed)));
      queue.push({c, clock::now()});
    }
    queue.close();
  });

  const int D = opt.net_input.depth, NL = opt.net_input.lateral, W = opt.window;
  std::vector<std::vector<float>> frames;  // resized (D x NL) frames
  std::vector<float> previous(static_cast<std::size_t>(L) * crop);
  std::vector<float> diff(static_cast<std::size_t>(crop) * L);
  nn::NetInput window{D, NL, W, std::vector<float>(static_cast<std::size_t>(D) * NL * W)};
  constexpr float kPiF = static_cast<float>(kPi), kTwoPiF = static_cast<float>(kTwoPi);

  try {
    while (auto item = queue.pop()) {
      const std::size_t c = item->cycle;
      for (int b = 0; b < L; ++b) {
        const auto line = rec.line(c * L + b);
        float* prev = &previous[static_cast<std::size_t>(b) * crop];
        const int s = (b - offset + L) % L;
        for (int d = 0; d < crop; ++d) {
          const float phase = std::arg(line[surface + d]);
          float dphi = phase - prev[d];
          if (dphi > kPiF) dphi -= kTwoPiF;
          else if (dphi <= -kPiF) dphi += kTwoPiF;
          diff[static_cast<std::size_t>(d) * L + s] = dphi;
          prev[d] = phase;
        }
      }
      ++report.cycles_processed;
      if (c == 0) continue;
      std::vector<int> dims{crop, L};
      auto a = nn::resize_axis(diff, dims, 0, D);
      auto resized = nn::resize_axis(a, dims, 1, NL);
      if (c == 1) frames.push_back(resized);  // the first frame repeats the second
      frames.push_back(std::move(resized));

      // Frames completed by this cycle may finish a window.
      const std::size_t n = frames.size();
      if (n < static_cast<std::size_t>(W) || (n - W) % opt.stride != 0) continue;
      const std::size_t first = n - W;
      for (int t = 0; t < W; ++t) {
        const auto& f = frames[first + t];
        for (int i = 0; i < D * NL; ++i) window.data[static_cast<std::size_t>(i) * W + t] = f[i];
      }
      const double E = model.predict({&window}, {0})[0];
      report.estimates_kpa.push_back(E);
      report.latency_ms.push_back(std::chrono::duration<double, std::milli>(clock::now() - item->at).count());
    }
  } catch (...) {
    while (queue.pop()) {
    }
    producer.join();
    throw;
  }
  producer.join();
  report.wall_s = std::chrono::duration<double>(clock::now() - start).count();
  report.cycles_replayed = queue.pushed();
  report.backpressure_events = queue.full_events();
  report.backpressure_s = queue.blocked_seconds();
  report.max_queue_depth = queue.max_depth();
  if (report.cycles_processed != report.cycles_replayed || queue.popped() != queue.pushed())
    throw DataError("stream-bench: " + std::to_string(report.cycles_replayed - report.cycles_processed) +
                    " cycles were lost between replay and estimation");
  if (report.estimates_kpa.size() != report.expected_estimates)
    throw DataError("stream-bench: produced " + std::to_string(report.estimates_kpa.size()) + " estimates, expected " +
                    std::to_string(report.expected_estimates));
  report.p50_ms = percentile(report.latency_ms, 50);
  report.p90_ms = percentile(report.latency_ms, 90);
  report.p99_ms = percentile(report.latency_ms, 99);
  report.max_ms = report.latency_ms.empty() ? 0.0 : *std::max_element(report.latency_ms.begin(), report.latency_ms.end());
  report.estimates_per_s = report.wall_s > 0.0 ? report.estimates_kpa.size() / report.wall_s : 0.0;
  return report;
}

}  // namespace oce

#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace psdfp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Multi-indices are packed 4 bits per axis into a uint32.
inline constexpr int kMaxAxes = 8;

/// Axis-aligned box; the last axis is time for space-time domains.
struct Box {
  VectorXd lower;
  VectorXd upper;

  Box() = default;
  Box(VectorXd lo, VectorXd hi) : lower(std::move(lo)), upper(std::move(hi)) {
    if (lower.size() != upper.size())
      throw std::invalid_argument("Box: lower/upper dimension mismatch");
    for (int a = 0; a < lower.size(); ++a)
      if (!(lower[a] < upper[a]))
        throw std::invalid_argument("Box: lower must be below upper on every axis");
  }

  int dim() const { return static_cast<int>(lower.size()); }
  double width(int a) const { return upper[a] - lower[a]; }
  double volume() const {
    double v = 1.0;
    for (int a = 0; a < dim(); ++a) v *= width(a);
    return v;
  }
  bool contains(const VectorXd& z, double slack = 0.0) const {
    if (z.size() != lower.size()) return false;
    for (int a = 0; a < dim(); ++a)
      if (z[a] < lower[a] - slack || z[a] > upper[a] + slack) return false;
    return true;
  }

  /// Keep only the listed axes (in the given order).
  Box restrict_axes(const std::vector<int>& axes) const {
    VectorXd lo(axes.size()), hi(axes.size());
    for (size_t k = 0; k < axes.size(); ++k) {
      lo[k] = lower[axes[k]];
      hi[k] = upper[axes[k]];
    }
    return Box(lo, hi);
  }
};

enum class Domain { kFullSpace, kBox, kTimeBox };
// kTimeBox: space axes unbounded, time axis restricted to its box range. The
// residual norm uses it by default: the density decays in space on its own,
// but every time-Gaussian envelope decays outside the horizon, and penalizing
// d/dt there would punish any model that tracks a non-vanishing density.

// ---------------------------------------------------------------------------
// Logging. Level set once from PSD_FOKKER_LOG (error|warn|info|debug).

enum class LogLevel : int { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

inline LogLevel log_level() {
  static LogLevel level = [] {
    const char* env = std::getenv("PSD_FOKKER_LOG");
    if (!env) return LogLevel::kInfo;
    std::string_view v(env);
    if (v == "error") return LogLevel::kError;
    if (v == "warn") return LogLevel::kWarn;
    if (v == "debug") return LogLevel::kDebug;
    return LogLevel::kInfo;
  }();
  return level;
}

template <typename... Args>
inline void log_line(LogLevel level, const char* fmt, Args... args) {
  if (static_cast<int>(level) > static_cast<int>(log_level())) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::fprintf(stderr, "[psdfp:%s] ", names[static_cast<int>(level)]);
  std::fprintf(stderr, fmt, args...);
  std::fputc('\n', stderr);
}

#define PSDFP_LOG_ERROR(...) ::psdfp::log_line(::psdfp::LogLevel::kError, __VA_ARGS__)
#define PSDFP_LOG_WARN(...) ::psdfp::log_line(::psdfp::LogLevel::kWarn, __VA_ARGS__)
#define PSDFP_LOG_INFO(...) ::psdfp::log_line(::psdfp::LogLevel::kInfo, __VA_ARGS__)
#define PSDFP_LOG_DEBUG(...) ::psdfp::log_line(::psdfp::LogLevel::kDebug, __VA_ARGS__)

// ---------------------------------------------------------------------------

/// Worker count for parallel loops, from PSD_FOKKER_THREADS (default: hardware).
inline int worker_count() {
  static int n = [] {
    if (const char* env = std::getenv("PSD_FOKKER_THREADS")) {
      int v = std::atoi(env);
      if (v >= 1) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
  }();
  return n;
}

/// Run fn(begin, end) over a partition of [0, n). Each chunk owns a disjoint
/// output range, so results are bitwise reproducible for any worker count.
template <typename Fn>
inline void parallel_chunks(std::int64_t n, Fn&& fn) {
  int workers = worker_count();
  if (workers <= 1 || n < 2) {
    fn(std::int64_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  std::int64_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    std::int64_t b = w * chunk, e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------

/// Run fn(i) once for every i in [0, n), distributed dynamically over the
/// worker pool. Each index owns its own output slots, so the result does not
/// depend on the schedule.
template <typename Fn>
inline void parallel_indices(std::int64_t n, Fn&& fn) {
  int workers = worker_count();
  if (workers <= 1 || n < 2) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < std::min<std::int64_t>(workers, n); ++w)
    pool.emplace_back([&] {
      for (std::int64_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------

/// FNV-1a 64-bit, used for config hashes and model fingerprints.
inline std::uint64_t fnv1a64(const void* data, size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

/// Shortest text form that parses back to the identical double (17 significant digits).
inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf);
}

}  // namespace psdfp

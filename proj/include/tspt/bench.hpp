#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "tspt/baselines.hpp"
#include "tspt/search.hpp"
#include "tspt/tsp.hpp"
#include "tspt/util.hpp"

namespace tspt {

struct BenchRow {
  std::string method;
  int n = 0;
  double mean_len = 0;
  std::optional<double> gap_pct;       // only when an exact reference exists
  double total_time_s = 0;
  double per_instance_time_s = 0;
  std::optional<int> beam_width;
};

inline void write_bench_csv(const std::vector<BenchRow>& rows,
                            const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "method,n,mean_len,gap_pct,total_time_s,per_instance_time_s,"
         "beam_width\n";
  char buf[64];
  for (const BenchRow& r : rows) {
    out << r.method << "," << r.n << ",";
    std::snprintf(buf, sizeof buf, "%.9g", r.mean_len);
    out << buf << ",";
    if (r.gap_pct) {
      std::snprintf(buf, sizeof buf, "%.6g", *r.gap_pct);
      out << buf;
    }
    out << ",";
    std::snprintf(buf, sizeof buf, "%.6g", r.total_time_s);
    out << buf << ",";
    std::snprintf(buf, sizeof buf, "%.6g", r.per_instance_time_s);
    out << buf << ",";
    if (r.beam_width) out << *r.beam_width;
    out << "\n";
  }
}

// Exact reference lengths via Held-Karp; empty when n exceeds its guard.
inline std::vector<double> exact_references(
    const std::vector<Instance>& instances, int threads = 1) {
  if (instances.empty() || instances.front().n() > 18) return {};
  std::vector<double> refs(instances.size(), 0.0);
  parallel_chunks(instances.size(), threads,
                  [&](std::size_t lo, std::size_t hi, int) {
                    for (std::size_t i = lo; i < hi; ++i)
                      refs[i] = held_karp(instances[i]).tour.length;
                  });
  return refs;
}

inline BenchRow summarize(const std::string& method,
                          const std::vector<Instance>& instances,
                          const std::vector<double>& lengths,
                          const std::vector<double>& refs, double elapsed_s,
                          std::optional<int> beam_width = std::nullopt) {
  BenchRow row;
  row.method = method;
  row.n = instances.front().n();
  for (double v : lengths) row.mean_len += v;
  row.mean_len /= static_cast<double>(lengths.size());
  if (!refs.empty()) {
    double g = 0;
    for (std::size_t i = 0; i < lengths.size(); ++i)
      g += gap(lengths[i], refs[i]);
    row.gap_pct = g / static_cast<double>(lengths.size());
  }
  row.total_time_s = elapsed_s;
  row.per_instance_time_s = elapsed_s / static_cast<double>(instances.size());
  row.beam_width = beam_width;
  return row;
}

// ---------------------------------------------------------------------------
// Inference-time scaling: median greedy solve time per instance size.
// ---------------------------------------------------------------------------
struct TimingPoint {
  int n = 0;
  double seconds = 0;
};

template <class R>
std::vector<TimingPoint> measure_greedy_scaling(ModelParams<R>& model,
                                                const std::vector<int>& sizes,
                                                int repeats,
                                                std::uint64_t seed) {
  std::vector<TimingPoint> points;
  for (int n : sizes) {
    auto instances = generate(n, repeats, Rng::mix(seed, n));
    std::vector<double> times;
    times.reserve(repeats);
    for (const Instance& inst : instances) {
      Timer timer;
      greedy_decode(inst, model);
      times.push_back(timer.seconds());
    }
    std::nth_element(times.begin(), times.begin() + times.size() / 2,
                     times.end());
    points.push_back({n, times[times.size() / 2]});
  }
  return points;
}

inline void write_timing_csv(const std::vector<TimingPoint>& points,
                             const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "n,seconds_per_instance\n";
  char buf[48];
  for (const TimingPoint& p : points) {
    std::snprintf(buf, sizeof buf, "%d,%.9g\n", p.n, p.seconds);
    out << buf;
  }
}

// Least-squares fit of t = a * n^k on log-log scale.
struct PowerLawFit {
  double coefficient = 0;
  double exponent = 0;
};

inline PowerLawFit fit_power_law(const std::vector<TimingPoint>& points) {
  if (points.size() < 2)
    throw std::invalid_argument("fit_power_law: need at least 2 points");
  double mx = 0, my = 0;
  for (const TimingPoint& p : points) {
    mx += std::log(static_cast<double>(p.n));
    my += std::log(p.seconds);
  }
  mx /= static_cast<double>(points.size());
  my /= static_cast<double>(points.size());
  double sxx = 0, sxy = 0;
  for (const TimingPoint& p : points) {
    const double dx = std::log(static_cast<double>(p.n)) - mx;
    sxy += dx * (std::log(p.seconds) - my);
    sxx += dx * dx;
  }
  PowerLawFit fit;
  fit.exponent = sxy / sxx;
  fit.coefficient = std::exp(my - fit.exponent * mx);
  return fit;
}

}  // namespace tspt

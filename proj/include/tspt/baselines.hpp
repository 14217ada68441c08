#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "tspt/tsp.hpp"
#include "tspt/util.hpp"

namespace tspt {

struct SolveReport {
  Tour tour;
  std::string method;
  double elapsed_s = 0;
  bool optimal = false;
};

namespace detail {

inline std::vector<double> distance_matrix(const Instance& inst) {
  const int n = inst.n();
  std::vector<double> d(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double v = distance(inst.coords[i], inst.coords[j]);
      d[i * n + j] = v;
      d[j * n + i] = v;
    }
  return d;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Exhaustive search. City 0 is fixed and reversed duplicates are skipped,
// leaving (n-1)!/2 directed tours.
// ---------------------------------------------------------------------------
inline SolveReport brute_force(const Instance& inst) {
  const int n = inst.n();
  if (n > 10)
    throw std::invalid_argument(
        "brute_force: n=" + std::to_string(n) +
        " exceeds the n<=10 guard; (n-1)!/2 tours is too costly");
  Timer timer;
  auto d = detail::distance_matrix(inst);
  std::vector<int> perm(n - 1);
  std::iota(perm.begin(), perm.end(), 1);
  std::vector<int> best_perm;
  double best = std::numeric_limits<double>::infinity();
  do {
    if (perm.front() > perm.back()) continue;  // reversal twin
    double len = d[perm.front()] + d[perm.back()];
    for (int t = 0; t + 1 < n - 1; ++t) len += d[perm[t] * n + perm[t + 1]];
    if (len < best) {
      best = len;
      best_perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  std::vector<int> order;
  order.reserve(n);
  order.push_back(0);
  order.insert(order.end(), best_perm.begin(), best_perm.end());
  return {Tour::of(inst, std::move(order)), "brute_force", timer.seconds(),
          true};
}

// ---------------------------------------------------------------------------
// Held-Karp: bitmask DP over subsets of cities 1..n-1 with paths anchored at
// city 0, O(n^2 2^n) time and O(n 2^n) memory.
// ---------------------------------------------------------------------------
inline SolveReport held_karp(const Instance& inst) {
  const int n = inst.n();
  if (n > 18)
    throw std::invalid_argument(
        "held_karp: n=" + std::to_string(n) +
        " exceeds the n<=18 guard; the n*2^n table would not fit");
  Timer timer;
  auto d = detail::distance_matrix(inst);
  const int m = n - 1;  // cities 1..n-1
  const std::size_t full = std::size_t{1} << m;
  const double inf = std::numeric_limits<double>::infinity();
  // cost[S * m + j]: shortest path 0 -> ... -> (j+1) visiting exactly S
  std::vector<double> cost(full * m, inf);
  std::vector<std::int8_t> parent(full * m, -1);
  for (int j = 0; j < m; ++j)
    cost[(std::size_t{1} << j) * m + j] = d[0 * n + (j + 1)];
  for (std::size_t s = 1; s < full; ++s) {
    for (int j = 0; j < m; ++j) {
      if (!(s >> j & 1)) continue;
      const double cj = cost[s * m + j];
      if (cj == inf) continue;
      const std::size_t rest = s;
      for (int k = 0; k < m; ++k) {
        if (rest >> k & 1) continue;
        const std::size_t ns = s | (std::size_t{1} << k);
        const double cand = cj + d[(j + 1) * n + (k + 1)];
        if (cand < cost[ns * m + k]) {
          cost[ns * m + k] = cand;
          parent[ns * m + k] = static_cast<std::int8_t>(j);
        }
      }
    }
  }
  int end = 0;
  double best = inf;
  for (int j = 0; j < m; ++j) {
    const double cand = cost[(full - 1) * m + j] + d[(j + 1) * n + 0];
    if (cand < best) {
      best = cand;
      end = j;
    }
  }
  std::vector<int> order(n);
  std::size_t s = full - 1;
  int j = end;
  for (int t = n - 1; t >= 1; --t) {
    order[t] = j + 1;
    const int pj = parent[s * m + j];
    s ^= std::size_t{1} << j;
    j = pj;
  }
  order[0] = 0;
  return {Tour::of(inst, std::move(order)), "held_karp", timer.seconds(),
          true};
}

// ---------------------------------------------------------------------------
// Insertion heuristics. Both start from an extreme-distance city pair, then
// repeatedly pick the unvisited city nearest to / farthest from the partial
// tour (min distance to any tour city) and splice it where the length
// increase is smallest. Ties resolve to the lowest city index / position.
// ---------------------------------------------------------------------------
namespace detail {

inline SolveReport insertion(const Instance& inst, bool farthest) {
  const int n = inst.n();
  Timer timer;
  auto d = detail::distance_matrix(inst);
  auto dist = [&](int i, int j) { return d[i * n + j]; };

  int a = 0, b = 1;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const bool better =
          farthest ? dist(i, j) > dist(a, b) : dist(i, j) < dist(a, b);
      if (better) {
        a = i;
        b = j;
      }
    }
  std::vector<int> tour{a, b};
  std::vector<std::uint8_t> in_tour(n, 0);
  in_tour[a] = in_tour[b] = 1;
  // distance from each city to the partial tour
  std::vector<double> to_tour(n);
  for (int c = 0; c < n; ++c) to_tour[c] = std::min(dist(c, a), dist(c, b));

  while (static_cast<int>(tour.size()) < n) {
    int pick = -1;
    for (int c = 0; c < n; ++c) {
      if (in_tour[c]) continue;
      if (pick < 0 ||
          (farthest ? to_tour[c] > to_tour[pick] : to_tour[c] < to_tour[pick]))
        pick = c;
    }
    const int m = static_cast<int>(tour.size());
    int best_pos = 0;
    double best_delta = std::numeric_limits<double>::infinity();
    for (int pos = 0; pos < m; ++pos) {
      const int u = tour[pos], v = tour[(pos + 1) % m];
      const double delta = dist(u, pick) + dist(pick, v) - dist(u, v);
      if (delta < best_delta) {
        best_delta = delta;
        best_pos = pos;
      }
    }
    tour.insert(tour.begin() + best_pos + 1, pick);
    in_tour[pick] = 1;
    for (int c = 0; c < n; ++c)
      if (!in_tour[c]) to_tour[c] = std::min(to_tour[c], dist(c, pick));
  }
  return {Tour::of(inst, std::move(tour)),
          farthest ? "farthest_insertion" : "nearest_insertion",
          timer.seconds(), false};
}

}  // namespace detail

inline SolveReport nearest_insertion(const Instance& inst) {
  return detail::insertion(inst, false);
}

inline SolveReport farthest_insertion(const Instance& inst) {
  return detail::insertion(inst, true);
}

// ---------------------------------------------------------------------------
// 2-opt local search from a given start tour. Scans (i, j) pairs in
// lexicographic order, reversing order[i..j]; by default restarts the scan on
// the first improving exchange and stops when a full scan finds none.
// ---------------------------------------------------------------------------
enum class TwoOptPolicy { FirstImprovement, BestImprovement };

inline SolveReport two_opt(const Instance& inst, const Tour& start,
                           TwoOptPolicy policy =
                               TwoOptPolicy::FirstImprovement) {
  const int n = inst.n();
  tour_length(inst, start.order);  // validates the permutation
  Timer timer;
  auto d = detail::distance_matrix(inst);
  auto dist = [&](int i, int j) { return d[i * n + j]; };
  std::vector<int> order = start.order;
  constexpr double kMinGain = 1e-12;

  bool improved = true;
  while (improved) {
    improved = false;
    int best_i = -1, best_j = -1;
    double best_delta = -kMinGain;
    for (int i = 1; i < n - 1 && !improved; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (i == 1 && j == n - 1) continue;  // full reversal, same cycle
        const int before = order[i - 1], from = order[i];
        const int to = order[j], after = order[(j + 1) % n];
        const double delta = dist(before, to) + dist(from, after) -
                             dist(before, from) - dist(to, after);
        if (delta < best_delta) {
          if (policy == TwoOptPolicy::FirstImprovement) {
            std::reverse(order.begin() + i, order.begin() + j + 1);
            improved = true;
            break;
          }
          best_delta = delta;
          best_i = i;
          best_j = j;
        }
      }
    }
    if (policy == TwoOptPolicy::BestImprovement && best_i >= 0) {
      std::reverse(order.begin() + best_i, order.begin() + best_j + 1);
      improved = true;
    }
  }
  return {Tour::of(inst, std::move(order)), "two_opt", timer.seconds(), false};
}

// True if some 2-exchange still shortens the tour; used to verify fixpoints.
inline bool has_improving_two_opt(const Instance& inst,
                                  const std::vector<int>& order,
                                  double min_gain = 1e-12) {
  const int n = inst.n();
  auto d = detail::distance_matrix(inst);
  for (int i = 1; i < n - 1; ++i)
    for (int j = i + 1; j < n; ++j) {
      if (i == 1 && j == n - 1) continue;
      const double delta =
          d[order[i - 1] * n + order[j]] + d[order[i] * n + order[(j + 1) % n]] -
          d[order[i - 1] * n + order[i]] - d[order[j] * n + order[(j + 1) % n]];
      if (delta < -min_gain) return true;
    }
  return false;
}

// Percentage excess over an exact reference length.
inline double gap(double tour_length, double reference) {
  if (!(reference > 0))
    throw std::invalid_argument("gap: reference must be positive, got " +
                                std::to_string(reference));
  return 100.0 * (tour_length - reference) / reference;
}

}  // namespace tspt

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "tspt/encoder.hpp"
#include "tspt/fast_decode.hpp"
#include "tspt/model.hpp"
#include "tspt/rng.hpp"
#include "tspt/tsp.hpp"

namespace tspt {

template <class R>
struct DecodedTour {
  Tour tour;
  double logp = 0;  // sum over steps of log p_t(chosen)
};

namespace detail {

// Lowest index among the maxima.
template <class R>
int argmax_row(const R* probs, std::size_t n) {
  int best = 0;
  for (std::size_t c = 1; c < n; ++c)
    if (probs[c] > probs[best]) best = static_cast<int>(c);
  return best;
}

// Categorical draw over the row; visited cities carry probability 0.
template <class R>
int sample_row(const R* probs, const std::uint8_t* visited, std::size_t n,
               double u) {
  double acc = 0;
  int last_live = -1;
  for (std::size_t c = 0; c < n; ++c) {
    if (visited[c]) continue;
    last_live = static_cast<int>(c);
    acc += static_cast<double>(probs[c]);
    if (u < acc) return last_live;
  }
  return last_live;  // rounding fell off the end
}

template <class R>
DecodedTour<R> rollout(const Instance& inst, const FastContext<R>& ctx,
                       Rng* rng) {
  const std::size_t n = ctx.n;
  FastState<R> st = FastState<R>::init(ctx);
  std::vector<R> probs(n);
  double logp = 0;
  for (std::size_t t = 0; t < n; ++t) {
    fast_step(ctx, st, probs.data());
    const int city = rng ? sample_row(probs.data(), st.visited.data(), n,
                                      rng->uniform())
                         : argmax_row(probs.data(), n);
    logp += std::log(static_cast<double>(probs[city]));
    fast_advance(ctx, st, city);
  }
  return {Tour::of(inst, std::move(st.partial)), logp};
}

}  // namespace detail

// Argmax decoding; ties go to the lowest city index.
template <class R>
DecodedTour<R> greedy_decode(const Instance& inst, ModelParams<R>& model) {
  Tensor<R> enc = encode<R>({inst}, model, Mode::Eval);
  FastContext<R> ctx = make_fast_context(enc, 0, model);
  return detail::rollout<R>(inst, ctx, nullptr);
}

// Categorical decoding, deterministic for a fixed seed.
template <class R>
DecodedTour<R> sample_decode(const Instance& inst, ModelParams<R>& model,
                             std::uint64_t seed) {
  Tensor<R> enc = encode<R>({inst}, model, Mode::Eval);
  FastContext<R> ctx = make_fast_context(enc, 0, model);
  Rng rng(seed);
  return detail::rollout<R>(inst, ctx, &rng);
}

template <class R>
struct BeamResult {
  std::vector<DecodedTour<R>> tours;  // sorted by logp descending
  std::size_t best_by_length = 0;

  const DecodedTour<R>& most_probable() const { return tours.front(); }
  const DecodedTour<R>& shortest() const { return tours[best_by_length]; }
};

// Breadth-first Top-B search on accumulated log-probability with nested
// (slot-stratified) retention: slot b always holds what a width-b search
// would keep, so the beams for smaller widths are a prefix of the beams for
// larger ones. This keeps B=1 identical to greedy_decode and makes the
// shortest-of-beam length non-increasing in B on any fixed instance. When
// nothing is pruned (pool <= B) the kept set is exactly the full expansion,
// so wide-enough beams are exhaustive. Ties break lexicographically on the
// city sequence.
template <class R>
BeamResult<R> beam_search(const Instance& inst, ModelParams<R>& model,
                          int width,
                          std::optional<int> forced_first = std::nullopt) {
  if (width < 1)
    throw std::invalid_argument("beam_search: width must be >= 1, got " +
                                std::to_string(width));
  Tensor<R> enc = encode<R>({inst}, model, Mode::Eval);
  FastContext<R> ctx = make_fast_context(enc, 0, model);
  const std::size_t n = ctx.n;
  if (forced_first && (*forced_first < 0 || *forced_first >= int(n)))
    throw std::invalid_argument("beam_search: forced first city out of range");

  std::vector<FastState<R>> beams;
  beams.push_back(FastState<R>::init(ctx));
  std::vector<double> cums{0.0};

  struct Candidate {
    std::size_t parent;
    int city;
    double score;
  };
  std::vector<R> probs(n);

  for (std::size_t t = 0; t < n; ++t) {
    // children of each parent, best first
    std::vector<std::vector<Candidate>> queues(beams.size());
    for (std::size_t b = 0; b < beams.size(); ++b) {
      fast_step(ctx, beams[b], probs.data());
      auto& q = queues[b];
      q.reserve(n - t);
      for (std::size_t c = 0; c < n; ++c)
        if (!beams[b].visited[c])
          q.push_back({b, static_cast<int>(c),
                       cums[b] + std::log(static_cast<double>(probs[c]))});
      if (t == 0 && forced_first)
        q.erase(std::remove_if(q.begin(), q.end(),
                               [&](const Candidate& cand) {
                                 return cand.city != *forced_first;
                               }),
                q.end());
      std::sort(q.begin(), q.end(), [](const Candidate& a, const Candidate& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.city < b.city;  // same parent, so sequence order = city order
      });
    }
    // (score desc, sequence lex asc) across parents
    auto better = [&](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      const auto& pa = beams[a.parent].partial;
      const auto& pb = beams[b.parent].partial;
      for (std::size_t i = 0; i < pa.size(); ++i)
        if (pa[i] != pb[i]) return pa[i] < pb[i];
      return a.city < b.city;
    };
    // Slot b takes the best remaining candidate whose parent slot is <= b;
    // queue b joins the pool exactly when slot b is being filled.
    std::vector<std::size_t> heads(queues.size(), 0);
    std::vector<Candidate> picked;
    picked.reserve(width);
    for (std::size_t slot = 0;
         slot < static_cast<std::size_t>(width); ++slot) {
      const std::size_t avail = std::min(slot + 1, queues.size());
      int best_q = -1;
      for (std::size_t q = 0; q < avail; ++q) {
        if (heads[q] >= queues[q].size()) continue;
        if (best_q < 0 || better(queues[q][heads[q]], queues[best_q][heads[best_q]]))
          best_q = static_cast<int>(q);
      }
      if (best_q < 0) continue;  // parents <= slot exhausted this round
      picked.push_back(queues[best_q][heads[best_q]]);
      ++heads[best_q];
    }

    std::vector<FastState<R>> next;
    std::vector<double> next_cums;
    next.reserve(picked.size());
    for (const Candidate& cand : picked) {
      FastState<R> st = beams[cand.parent];  // value copy, pending included
      fast_advance(ctx, st, cand.city);
      next.push_back(std::move(st));
      next_cums.push_back(cand.score);
    }
    beams = std::move(next);
    cums = std::move(next_cums);
  }

  BeamResult<R> out;
  out.tours.reserve(beams.size());
  std::vector<std::size_t> order(beams.size());
  for (std::size_t b = 0; b < beams.size(); ++b) order[b] = b;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (cums[a] != cums[b]) return cums[a] > cums[b];
    return beams[a].partial < beams[b].partial;
  });
  for (std::size_t b : order)
    out.tours.push_back({Tour::of(inst, std::move(beams[b].partial)), cums[b]});
  out.best_by_length = 0;
  for (std::size_t b = 1; b < out.tours.size(); ++b)
    if (out.tours[b].tour.length <
        out.tours[out.best_by_length].tour.length)
      out.best_by_length = b;
  return out;
}

}  // namespace tspt

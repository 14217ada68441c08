#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "support/fd_check.hpp"
#include "support/ref_decoder.hpp"
#include "tspt/decoder.hpp"
#include "tspt/encoder.hpp"
#include "tspt/fast_decode.hpp"
#include "tspt/rng.hpp"
#include "tspt/search.hpp"

using tspt::DecodeState;
using tspt::DecoderContext;
using tspt::Instance;
using tspt::ModelParams;
using tspt::Mode;
using tspt::Rng;
using tspt::StepResult;
using tspt::Tensor;

namespace {

ModelParams<double> tiny_model(Rng& rng, int d = 8, int h = 2, int l_enc = 1,
                               int l_dec = 2, int d_ff = 16) {
  return ModelParams<double>::init({d, h, l_enc, l_dec, d_ff, 10.0}, rng);
}

struct Rollout {
  ModelParams<double> model;
  std::vector<Instance> batch;
  Tensor<double> enc;
  DecoderContext<double> ctx;
  DecodeState<double> state;

  Rollout(Rng& rng, int n, int b = 1, int d = 8, int h = 2, int l_dec = 2)
      : model(tiny_model(rng, d, h, 1, l_dec)),
        batch(tspt::generate(n, b, rng.next())) {
    enc = tspt::encode<double>(batch, model, Mode::Eval);
    ctx = tspt::make_decoder_context(enc, model);
    state = tspt::start_state(ctx, model);
  }
};

}  // namespace

TEST(PositionalEncoding, TZeroPattern) {
  auto pe = tspt::positional_encoding(0, 8);
  for (std::size_t i = 0; i < 8; ++i)
    EXPECT_DOUBLE_EQ(pe[i], i % 2 == 0 ? 0.0 : 1.0);
}

TEST(PositionalEncoding, DirectEvaluationD4T1) {
  auto pe = tspt::positional_encoding(1, 4);
  EXPECT_DOUBLE_EQ(pe[0], std::sin(1.0));
  EXPECT_DOUBLE_EQ(pe[1], std::cos(1.0));
  EXPECT_DOUBLE_EQ(pe[2], std::sin(0.01));
  EXPECT_DOUBLE_EQ(pe[3], std::cos(0.01));
}

TEST(PositionalEncoding, InjectiveOverUsedRange) {
  const std::size_t d = 128;
  std::vector<std::vector<double>> codes;
  codes.reserve(1001);
  for (int t = 0; t <= 1000; ++t) codes.push_back(tspt::positional_encoding(t, d));
  std::vector<std::size_t> idx(codes.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return codes[a] < codes[b];
  });
  for (std::size_t i = 0; i + 1 < idx.size(); ++i)
    EXPECT_NE(codes[idx[i]], codes[idx[i + 1]]);
}

TEST(PositionalEncoding, RejectsNegativeT) {
  EXPECT_THROW(tspt::positional_encoding(-1, 8), std::invalid_argument);
}

TEST(StartState, EmptyMaskAndDeterminism) {
  Rng rng(21);
  Rollout r(rng, 5);
  EXPECT_EQ(r.state.t, 0);
  for (auto v : r.state.visited) EXPECT_EQ(v, 0);
  auto again = tspt::start_state(r.ctx, r.model);
  EXPECT_EQ(again.t, r.state.t);
  EXPECT_EQ(again.visited, r.state.visited);
}

TEST(StartState, InputTokenIsStartRowPlusPe) {
  Rng rng(22);
  Rollout r(rng, 5);
  Tensor<double> token = tspt::current_token(r.state, r.ctx);
  auto pe = tspt::positional_encoding(0, 8);
  for (std::size_t j = 0; j < 8; ++j)
    EXPECT_NEAR(token.at(0, 0, j), r.enc.at(0, 0, j) + pe[j], 1e-12);
}

TEST(DecodeStep, DistributionInvariants) {
  Rng rng(23);
  for (int n = 3; n <= 12; ++n) {
    Rollout r(rng, n);
    auto state = r.state;
    for (int t = 0; t < n; ++t) {
      StepResult<double> step = tspt::decode_step(state, r.ctx, r.model);
      double total = 0;
      for (int c = 0; c < n; ++c) {
        const double p = step.probs.at(0, c);
        if (state.is_visited(0, c)) {
          EXPECT_EQ(p, 0.0);
        } else {
          EXPECT_GT(p, 0.0);
        }
        total += p;
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
      // pick the argmax to advance
      int best = 0;
      for (int c = 1; c < n; ++c)
        if (step.probs.at(0, c) > step.probs.at(0, best)) best = c;
      state = tspt::advance(state, step, {best});
    }
    EXPECT_EQ(state.t, n);
  }
}

TEST(DecodeStep, LastUnvisitedCityGetsProbabilityOne) {
  Rng rng(24);
  const int n = 6;
  Rollout r(rng, n);
  auto state = r.state;
  for (int t = 0; t < n - 1; ++t) {
    auto step = tspt::decode_step(state, r.ctx, r.model);
    // visit lowest-index unvisited
    for (int c = 0; c < n; ++c)
      if (!state.is_visited(0, c)) {
        state = tspt::advance(state, step, {c});
        break;
      }
  }
  auto step = tspt::decode_step(state, r.ctx, r.model);
  EXPECT_DOUBLE_EQ(step.probs.at(0, n - 1), 1.0);
}

TEST(DecodeStep, UniformWhenPointerQueryIsZero) {
  Rng rng(25);
  const int n = 7;
  Rollout r(rng, n);
  std::fill(r.model.dec.ptr_wq.values().begin(),
            r.model.dec.ptr_wq.values().end(), 0.0);
  auto state = r.state;
  auto step = tspt::decode_step(state, r.ctx, r.model);
  for (int c = 0; c < n; ++c) EXPECT_NEAR(step.probs.at(0, c), 1.0 / n, 1e-12);
  state = tspt::advance(state, step, {3});
  step = tspt::decode_step(state, r.ctx, r.model);
  for (int c = 0; c < n; ++c) {
    if (c == 3) EXPECT_EQ(step.probs.at(0, c), 0.0);
    else EXPECT_NEAR(step.probs.at(0, c), 1.0 / (n - 1), 1e-12);
  }
}

TEST(DecodeStep, ClippedLogitsBounded) {
  Rng rng(26);
  const int n = 5;
  Rollout r(rng, n);
  // blow up the pointer projections; tanh clipping must keep logits in [-C, C]
  for (double& v : r.model.dec.ptr_wq.values()) v *= 1e4;
  auto step = tspt::decode_step(r.state, r.ctx, r.model);
  for (int c = 0; c < n; ++c) {
    EXPECT_LE(step.clipped.at(0, c), 10.0);
    EXPECT_GE(step.clipped.at(0, c), -10.0);
  }
  double max_abs = 0;
  for (int c = 0; c < n; ++c)
    max_abs = std::max(max_abs, std::abs(step.clipped.at(0, c)));
  EXPECT_GT(max_abs, 9.0);  // saturation actually reached
}

TEST(Advance, FullRolloutVisitsEverything) {
  Rng rng(27);
  const int n = 9;
  Rollout r(rng, n);
  auto state = r.state;
  for (int c = 0; c < n; ++c) {
    auto step = tspt::decode_step(state, r.ctx, r.model);
    state = tspt::advance(state, step, {c});
  }
  EXPECT_EQ(state.t, n);
  for (auto v : state.visited) EXPECT_EQ(v, 1);
  EXPECT_THROW(tspt::decode_step(state, r.ctx, r.model), std::logic_error);
}

TEST(Advance, RejectsRevisit) {
  Rng rng(28);
  Rollout r(rng, 5);
  auto step = tspt::decode_step(r.state, r.ctx, r.model);
  auto state = tspt::advance(r.state, step, {2});
  auto step2 = tspt::decode_step(state, r.ctx, r.model);
  EXPECT_EQ(step2.probs.at(0, 2), 0.0);
  EXPECT_THROW(tspt::advance(state, step2, {2}), std::invalid_argument);
}

TEST(Rollout, RandomParamsAlwaysYieldValidTours) {
  Rng rng(29);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 3 + static_cast<int>(rng.below(10));
    Rollout r(rng, n);
    auto state = r.state;
    for (int t = 0; t < n; ++t) {
      auto step = tspt::decode_step(state, r.ctx, r.model);
      const double u = rng.uniform();
      int pick = tspt::detail::sample_row(step.probs.data(),
                                          state.visited.data(), n, u);
      state = tspt::advance(state, step, {pick});
    }
    EXPECT_NO_THROW(tspt::tour_length(r.batch[0], state.partial[0]));
  }
}

// Incremental K/V caching vs full-prefix recomputation.
TEST(Rollout, CachedMatchesFromScratchReference) {
  Rng rng(30);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 4 + static_cast<int>(rng.below(6));
    Rollout r(rng, n, 1, 8, 2, 2);
    tspt::test::RefDecoder<double> ref(r.enc, r.model);
    auto state = r.state;
    for (int t = 0; t < n; ++t) {
      auto step = tspt::decode_step(state, r.ctx, r.model);
      Tensor<double> ref_probs = ref.step_probs();
      for (int c = 0; c < n; ++c)
        EXPECT_NEAR(step.probs.at(0, c), ref_probs.at(0, c), 1e-5);
      int pick = 0;
      for (int c = 1; c < n; ++c)
        if (step.probs.at(0, c) > step.probs.at(0, pick)) pick = c;
      state = tspt::advance(state, step, {pick});
      ref.commit(pick);
    }
  }
}

// The raw-buffer eval decoder must match the tensor path step by step.
TEST(Rollout, FastPathMatchesTensorPath) {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 3 + static_cast<int>(rng.below(9));
    Rollout r(rng, n, 1, 8, 2, 2);
    tspt::FastContext<double> fctx = tspt::make_fast_context(r.enc, 0, r.model);
    tspt::FastState<double> fst = tspt::FastState<double>::init(fctx);
    std::vector<double> fprobs(n), fclip(n);
    auto state = r.state;
    for (int t = 0; t < n; ++t) {
      auto step = tspt::decode_step(state, r.ctx, r.model);
      tspt::fast_step(fctx, fst, fprobs.data(), fclip.data());
      for (int c = 0; c < n; ++c) {
        EXPECT_NEAR(step.probs.at(0, c), fprobs[c], 1e-5);
        EXPECT_NEAR(step.clipped.at(0, c), fclip[c], 1e-5);
      }
      int pick = static_cast<int>(rng.below(n));
      while (state.is_visited(0, pick)) pick = (pick + 1) % n;
      state = tspt::advance(state, step, {pick});
      tspt::fast_advance(fctx, fst, pick);
    }
  }
}

TEST(Rollout, BatchedLanesMatchSingleLane) {
  Rng rng(32);
  const int n = 6, b = 3;
  Rollout r(rng, n, b);
  // decode all lanes with a fixed per-lane pattern
  std::vector<std::vector<int>> orders(b);
  auto state = r.state;
  for (int t = 0; t < n; ++t) {
    auto step = tspt::decode_step(state, r.ctx, r.model);
    std::vector<int> chosen(b);
    for (int lane = 0; lane < b; ++lane) {
      int pick = (lane + t) % n;
      while (state.is_visited(lane, pick)) pick = (pick + 1) % n;
      chosen[lane] = pick;
      orders[lane].push_back(pick);
    }
    state = tspt::advance(state, step, chosen);
  }
  // replay each lane alone and compare the visit order's probabilities
  for (int lane = 0; lane < b; ++lane) {
    Tensor<double> enc1 =
        tspt::encode<double>({r.batch[lane]}, r.model, Mode::Eval);
    auto ctx1 = tspt::make_decoder_context(enc1, r.model);
    auto st1 = tspt::start_state(ctx1, r.model);
    for (int t = 0; t < n; ++t) {
      auto step = tspt::decode_step(st1, ctx1, r.model);
      st1 = tspt::advance(st1, step, {orders[lane][t]});
    }
    EXPECT_EQ(st1.partial[0], orders[lane]);
  }
}

// Gradients of log p(chosen) w.r.t. every encoder and decoder parameter.
TEST(Decoder, GradientsMatchFiniteDifferences) {
  Rng rng(33);
  auto model = tiny_model(rng, 8, 1, 1, 1, 12);
  auto batch = tspt::generate(5, 1, 17);
  std::vector<Tensor<double>*> leaves;
  model.for_each_param(
      [&](const std::string&, Tensor<double>& t) { leaves.push_back(&t); });
  const std::vector<int> picks{2, 0, 4};
  auto fwd = [&] {
    Tensor<double> enc = tspt::encode<double>(batch, model, Mode::Train);
    auto ctx = tspt::make_decoder_context(enc, model);
    auto state = tspt::start_state(ctx, model);
    Tensor<double> logp = Tensor<double>::zeros({1});
    for (int pick : picks) {
      auto step = tspt::decode_step(state, ctx, model);
      logp = tspt::add(
          logp, tspt::log(tspt::gather_entries(
                    step.probs, {static_cast<std::size_t>(pick)})));
      state = tspt::advance(state, step, {pick});
    }
    return tspt::sum(logp);
  };
  auto report = tspt::test::fd_check(leaves, fwd);
  EXPECT_GT(report.checked, 500u);
  EXPECT_LT(report.max_rel_err, 1e-4);
}

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "support/ref_decoder.hpp"
#include "tspt/encoder.hpp"
#include "tspt/search.hpp"

using tspt::BeamResult;
using tspt::Instance;
using tspt::ModelParams;
using tspt::Mode;
using tspt::Rng;
using tspt::Tensor;

namespace {

ModelParams<double> tiny_model(Rng& rng, int d = 8, int h = 2, int l_enc = 1,
                               int l_dec = 2) {
  return ModelParams<double>::init({d, h, l_enc, l_dec, 16, 10.0}, rng);
}

std::vector<std::vector<int>> all_orders(int n) {
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::vector<std::vector<int>> out;
  do {
    out.push_back(order);
  } while (std::next_permutation(order.begin(), order.end()));
  return out;
}

}  // namespace

TEST(Greedy, TriangleIsAlwaysThePerimeter) {
  Rng rng(1);
  auto inst = tspt::generate(3, 1, 5)[0];
  const double perimeter = tspt::tour_length(inst, {0, 1, 2});
  for (int trial = 0; trial < 5; ++trial) {
    auto model = tiny_model(rng);
    auto res = tspt::greedy_decode(inst, model);
    EXPECT_NEAR(res.tour.length, perimeter, 1e-9);
  }
}

TEST(Greedy, Deterministic) {
  Rng rng(2);
  auto model = tiny_model(rng);
  auto inst = tspt::generate(8, 1, 6)[0];
  auto a = tspt::greedy_decode(inst, model);
  auto b = tspt::greedy_decode(inst, model);
  EXPECT_EQ(a.tour.order, b.tour.order);
  EXPECT_EQ(a.logp, b.logp);
}

TEST(Greedy, LogpMatchesIndependentRecomputation) {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    auto model = tiny_model(rng);
    auto inst = tspt::generate(7, 1, 60 + trial)[0];
    auto res = tspt::greedy_decode(inst, model);
    Tensor<double> enc = tspt::encode<double>({inst}, model, Mode::Eval);
    tspt::test::RefDecoder<double> ref(enc, model);
    EXPECT_NEAR(res.logp, ref.logp_of_sequence(res.tour.order), 1e-5);
  }
}

TEST(Sample, SeedReproducible) {
  Rng rng(4);
  auto model = tiny_model(rng);
  auto inst = tspt::generate(9, 1, 7)[0];
  auto a = tspt::sample_decode(inst, model, 123);
  auto b = tspt::sample_decode(inst, model, 123);
  auto c = tspt::sample_decode(inst, model, 124);
  EXPECT_EQ(a.tour.order, b.tour.order);
  EXPECT_NE(a.tour.order, c.tour.order);  // overwhelmingly likely for n=9
}

TEST(Sample, ValidToursAndLogp) {
  Rng rng(5);
  auto model = tiny_model(rng);
  auto inst = tspt::generate(6, 1, 8)[0];
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto res = tspt::sample_decode(inst, model, seed);
    EXPECT_NO_THROW(tspt::tour_length(inst, res.tour.order));
    EXPECT_LT(res.logp, 1e-12);
    Tensor<double> enc = tspt::encode<double>({inst}, model, Mode::Eval);
    tspt::test::RefDecoder<double> ref(enc, model);
    EXPECT_NEAR(res.logp, ref.logp_of_sequence(res.tour.order), 1e-5);
  }
}

TEST(Sample, FirstCityFrequenciesUniformWithZeroPointer) {
  Rng rng(6);
  auto model = tiny_model(rng, 8, 2, 1, 1);
  std::fill(model.dec.ptr_wq.values().begin(),
            model.dec.ptr_wq.values().end(), 0.0);
  auto inst = tspt::generate(4, 1, 9)[0];
  Tensor<double> enc = tspt::encode<double>({inst}, model, Mode::Eval);
  auto ctx = tspt::make_fast_context(enc, 0, model);
  const int kSamples = 100000;
  std::vector<int> counts(4, 0);
  std::vector<double> probs(4);
  Rng sampler(777);
  for (int s = 0; s < kSamples; ++s) {
    auto st = tspt::FastState<double>::init(ctx);
    tspt::fast_step(ctx, st, probs.data());
    ++counts[tspt::detail::sample_row(probs.data(), st.visited.data(), 4,
                                      sampler.uniform())];
  }
  // 3 sigma for a fair four-sided draw
  const double sigma = std::sqrt(0.25 * 0.75 / kSamples);
  for (int c = 0; c < 4; ++c)
    EXPECT_NEAR(counts[c] / double(kSamples), 0.25, 3 * sigma);
}

TEST(Beam, WidthOneEqualsGreedy) {
  Rng rng(7);
  auto model = tiny_model(rng);
  auto instances = tspt::generate(7, 50, 10);
  for (const auto& inst : instances) {
    auto g = tspt::greedy_decode(inst, model);
    auto b = tspt::beam_search(inst, model, 1);
    ASSERT_EQ(b.tours.size(), 1u);
    EXPECT_EQ(b.tours[0].tour.order, g.tour.order);
    EXPECT_DOUBLE_EQ(b.tours[0].tour.length, g.tour.length);
    EXPECT_DOUBLE_EQ(b.tours[0].logp, g.logp);
  }
}

TEST(Beam, RejectsNonPositiveWidth) {
  Rng rng(8);
  auto model = tiny_model(rng);
  auto inst = tspt::generate(5, 1, 11)[0];
  EXPECT_THROW(tspt::beam_search(inst, model, 0), std::invalid_argument);
}

// With B >= (n-1)! and the first city free, the top beam must equal the
// exhaustive argmax of sequence probability.
TEST(Beam, FullWidthMatchesExhaustiveEnumeration) {
  Rng rng(9);
  const int n = 4;
  auto orders = all_orders(n);
  for (int trial = 0; trial < 25; ++trial) {
    auto model = tiny_model(rng);
    auto inst = tspt::generate(n, 1, 200 + trial)[0];
    Tensor<double> enc = tspt::encode<double>({inst}, model, Mode::Eval);
    std::vector<int> best_order;
    double best_logp = -1e300;
    for (const auto& order : orders) {
      tspt::test::RefDecoder<double> ref(enc, model);
      const double lp = ref.logp_of_sequence(order);
      if (lp > best_logp + 1e-12) {
        best_logp = lp;
        best_order = order;
      } else if (lp > best_logp - 1e-12 && order < best_order) {
        best_order = order;  // tie rule: lexicographically smallest
      }
    }
    auto beam = tspt::beam_search(inst, model, 24);
    EXPECT_EQ(beam.most_probable().tour.order, best_order);
    EXPECT_NEAR(beam.most_probable().logp, best_logp, 1e-6);
  }
}

TEST(Beam, AllEqualProbabilitiesKeepLexicographicallySmallest) {
  Rng rng(10);
  const int n = 4;
  auto model = tiny_model(rng, 8, 2, 1, 1);
  std::fill(model.dec.ptr_wq.values().begin(),
            model.dec.ptr_wq.values().end(), 0.0);
  auto inst = tspt::generate(n, 1, 12)[0];
  auto beam = tspt::beam_search(inst, model, 5);
  const std::vector<std::vector<int>> expect{{0, 1, 2, 3},
                                             {0, 1, 3, 2},
                                             {0, 2, 1, 3},
                                             {0, 2, 3, 1},
                                             {0, 3, 1, 2}};
  ASSERT_EQ(beam.tours.size(), 5u);
  for (std::size_t k = 0; k < 5; ++k)
    EXPECT_EQ(beam.tours[k].tour.order, expect[k]);
}

TEST(Beam, ToursDistinctSortedAndRecomputable) {
  Rng rng(11);
  auto model = tiny_model(rng);
  auto inst = tspt::generate(6, 1, 13)[0];
  auto beam = tspt::beam_search(inst, model, 8);
  ASSERT_EQ(beam.tours.size(), 8u);
  Tensor<double> enc = tspt::encode<double>({inst}, model, Mode::Eval);
  for (std::size_t k = 0; k < beam.tours.size(); ++k) {
    EXPECT_NO_THROW(tspt::tour_length(inst, beam.tours[k].tour.order));
    if (k) EXPECT_GE(beam.tours[k - 1].logp, beam.tours[k].logp);
    for (std::size_t j = 0; j < k; ++j)
      EXPECT_NE(beam.tours[j].tour.order, beam.tours[k].tour.order);
    tspt::test::RefDecoder<double> ref(enc, model);
    EXPECT_NEAR(beam.tours[k].logp,
                ref.logp_of_sequence(beam.tours[k].tour.order), 1e-5);
  }
}

// Nested retention makes the shortest-of-beam monotone per instance.
TEST(Beam, MinLengthMonotoneInWidth) {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    auto model = tiny_model(rng);
    auto inst = tspt::generate(8, 1, 300 + trial)[0];
    double prev = 1e300;
    for (int width : {1, 2, 4, 8}) {
      auto beam = tspt::beam_search(inst, model, width);
      const double best = beam.shortest().tour.length;
      EXPECT_LE(best, prev + 1e-9);
      prev = best;
    }
  }
}

// Smaller beams are literally a prefix of larger ones under nested retention.
TEST(Beam, SmallerWidthsAreSubsetsOfLarger) {
  Rng rng(13);
  auto model = tiny_model(rng);
  for (int trial = 0; trial < 5; ++trial) {
    auto inst = tspt::generate(7, 1, 400 + trial)[0];
    auto narrow = tspt::beam_search(inst, model, 3);
    auto wide = tspt::beam_search(inst, model, 9);
    for (const auto& nt : narrow.tours) {
      bool found = false;
      for (const auto& wt : wide.tours)
        if (wt.tour.order == nt.tour.order) found = true;
      EXPECT_TRUE(found);
    }
  }
}

// With the first city pinned and B >= (n-1)!, nothing is ever pruned, so the
// top beam must be the exhaustive argmax over sequences starting there.
TEST(Beam, ForcedFirstCityFullWidthIsExhaustive) {
  Rng rng(14);
  const int n = 4;
  for (int trial = 0; trial < 25; ++trial) {
    auto model = tiny_model(rng);
    auto inst = tspt::generate(n, 1, 500 + trial)[0];
    Tensor<double> enc = tspt::encode<double>({inst}, model, Mode::Eval);
    std::vector<int> best_order;
    double best_logp = -1e300;
    for (const auto& order : all_orders(n)) {
      if (order[0] != 0) continue;
      tspt::test::RefDecoder<double> ref(enc, model);
      const double lp = ref.logp_of_sequence(order);
      if (lp > best_logp + 1e-12) {
        best_logp = lp;
        best_order = order;
      } else if (lp > best_logp - 1e-12 && order < best_order) {
        best_order = order;
      }
    }
    auto beam = tspt::beam_search(inst, model, 6, 0);
    ASSERT_EQ(beam.tours.size(), 6u);
    EXPECT_EQ(beam.most_probable().tour.order, best_order);
    EXPECT_NEAR(beam.most_probable().logp, best_logp, 1e-6);
  }
}

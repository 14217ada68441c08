#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "tspt/decoder.hpp"
#include "tspt/model.hpp"
#include "tspt/tensor.hpp"

namespace tspt {

// Inference-only decoder over plain buffers. Mirrors decode_step() exactly —
// same kernels, same evaluation order — but with no tape, no allocation per
// step, and value-copyable states cheap enough for beam branching.

template <class R>
struct FastContext {
  std::size_t n = 0, d = 0, layers = 0;
  int heads = 1;
  R clip = 10;
  std::vector<R> start;                      // [d]
  std::vector<R> cities;                     // [n, d]
  std::vector<std::vector<R>> cross_k, cross_v;  // per layer [n, d]
  std::vector<R> ptr_k;                      // [n, d]
  const ModelParams<R>* model = nullptr;
};

// `enc_out` is the encoder output [b, n+1, d]; `lane` picks the instance.
template <class R>
FastContext<R> make_fast_context(const Tensor<R>& enc_out, std::size_t lane,
                                 const ModelParams<R>& model) {
  if (enc_out.rank() != 3 || lane >= enc_out.dim(0))
    throw std::invalid_argument("make_fast_context: bad encoder output/lane");
  FastContext<R> ctx;
  ctx.n = enc_out.dim(1) - 1;
  ctx.d = enc_out.dim(2);
  ctx.layers = model.dec.layers.size();
  ctx.heads = model.dims.h;
  ctx.clip = static_cast<R>(model.dims.clip);
  ctx.model = &model;
  const R* base = enc_out.data() + lane * (ctx.n + 1) * ctx.d;
  ctx.start.assign(base, base + ctx.d);
  ctx.cities.assign(base + ctx.d, base + (ctx.n + 1) * ctx.d);
  ctx.cross_k.resize(ctx.layers);
  ctx.cross_v.resize(ctx.layers);
  for (std::size_t l = 0; l < ctx.layers; ++l) {
    ctx.cross_k[l].assign(ctx.n * ctx.d, R(0));
    ctx.cross_v[l].assign(ctx.n * ctx.d, R(0));
    detail::mm_nn(ctx.cities.data(), model.dec.layers[l].cross_wk.data(),
                  ctx.cross_k[l].data(), ctx.n, ctx.d, ctx.d);
    detail::mm_nn(ctx.cities.data(), model.dec.layers[l].cross_wv.data(),
                  ctx.cross_v[l].data(), ctx.n, ctx.d, ctx.d);
  }
  ctx.ptr_k.assign(ctx.n * ctx.d, R(0));
  detail::mm_nn(ctx.cities.data(), model.dec.ptr_wk.data(), ctx.ptr_k.data(),
                ctx.n, ctx.d, ctx.d);
  return ctx;
}

template <class R>
struct FastState {
  int t = 0;
  std::vector<std::uint8_t> visited;                 // [n]
  std::vector<int> partial;
  std::vector<std::vector<R>> key_cache, val_cache;  // per layer [t, d]
  std::vector<std::vector<R>> pending_k, pending_v;  // per layer [d]
  bool has_pending = false;

  static FastState init(const FastContext<R>& ctx) {
    FastState st;
    st.visited.assign(ctx.n, 0);
    st.key_cache.resize(ctx.layers);
    st.val_cache.resize(ctx.layers);
    st.pending_k.assign(ctx.layers, std::vector<R>(ctx.d, R(0)));
    st.pending_v.assign(ctx.layers, std::vector<R>(ctx.d, R(0)));
    for (auto& c : st.key_cache) c.reserve((ctx.n + 1) * ctx.d);
    for (auto& c : st.val_cache) c.reserve((ctx.n + 1) * ctx.d);
    return st;
  }
};

namespace detail {

template <class R>
void fast_layer_norm(R* x, const R* gain, const R* bias, std::size_t d) {
  constexpr R kEps = R(1e-5);
  R mu = 0;
  for (std::size_t j = 0; j < d; ++j) mu += x[j];
  mu /= static_cast<R>(d);
  R var = 0;
  for (std::size_t j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
  var /= static_cast<R>(d);
  const R inv = R(1) / std::sqrt(var + kEps);
  for (std::size_t j = 0; j < d; ++j)
    x[j] = (x[j] - mu) * inv * gain[j] + bias[j];
}

// Softmax over `live` entries in place; dead entries come out exactly 0.
template <class R>
void fast_softmax_masked(R* x, const std::uint8_t* live, std::size_t n) {
  R mx = -std::numeric_limits<R>::infinity();
  for (std::size_t j = 0; j < n; ++j)
    if ((!live || live[j]) && x[j] > mx) mx = x[j];
  if (mx == -std::numeric_limits<R>::infinity())
    throw NumericError("softmax_masked: no feasible successor");
  R total = 0;
  for (std::size_t j = 0; j < n; ++j) {
    x[j] = (!live || live[j]) ? std::exp(x[j] - mx) : R(0);
    total += x[j];
  }
  const R inv = R(1) / total;
  for (std::size_t j = 0; j < n; ++j) x[j] *= inv;
}

// One attention block for a single query token over `s` cached rows.
// keys/vals are [s, d] with head j occupying columns [j*dh, (j+1)*dh).
template <class R>
void fast_token_attention(const R* q, const R* keys, const R* vals,
                          std::size_t s, std::size_t d, int heads,
                          const std::uint8_t* live, const R* wo, R* out,
                          std::vector<R>& scratch) {
  const std::size_t dh = d / static_cast<std::size_t>(heads);
  const R inv_sqrt = R(1) / static_cast<R>(std::sqrt(static_cast<double>(dh)));
  scratch.assign(s + d, R(0));
  R* scores = scratch.data();
  R* merged = scratch.data() + s;
  for (int j = 0; j < heads; ++j) {
    const std::size_t off = j * dh;
    for (std::size_t r = 0; r < s; ++r) {
      const R* kr = keys + r * d + off;
      const R* qj = q + off;
      R acc = 0;
      for (std::size_t c = 0; c < dh; ++c) acc += qj[c] * kr[c];
      scores[r] = acc * inv_sqrt;
    }
    fast_softmax_masked(scores, live, s);
    R* mj = merged + off;
    for (std::size_t c = 0; c < dh; ++c) mj[c] = R(0);
    for (std::size_t r = 0; r < s; ++r) {
      const R a = scores[r];
      const R* vr = vals + r * d + off;
      for (std::size_t c = 0; c < dh; ++c) mj[c] += a * vr[c];
    }
  }
  for (std::size_t j = 0; j < d; ++j) out[j] = R(0);
  detail::mm_nn(merged, wo, out, 1, d, d);
}

}  // namespace detail

// Computes the step distribution into probs[n] (and optionally the pre-mask
// clipped pointer logits) and leaves the token's per-layer K/V pending on the
// state; commit with fast_advance.
template <class R>
void fast_step(const FastContext<R>& ctx, FastState<R>& st, R* probs,
               R* clipped = nullptr) {
  const std::size_t d = ctx.d, n = ctx.n;
  if (st.t >= static_cast<int>(n))
    throw std::logic_error("fast_step: tour complete (t = n)");
  const ModelParams<R>& m = *ctx.model;

  std::vector<R> x(d), q(d), attn(d);
  std::vector<R> scratch;
  const R* src = st.t == 0 ? ctx.start.data()
                           : ctx.cities.data() + st.partial.back() * d;
  for (std::size_t j = 0; j < d; ++j)
    x[j] = src[j] + static_cast<R>(pe_value(st.t, j, d));

  std::vector<std::uint8_t> live(n);
  for (std::size_t c = 0; c < n; ++c) live[c] = !st.visited[c];

  for (std::size_t l = 0; l < ctx.layers; ++l) {
    const auto& layer = m.dec.layers[l];
    R* kp = st.pending_k[l].data();
    R* vp = st.pending_v[l].data();
    std::fill_n(kp, d, R(0));
    std::fill_n(vp, d, R(0));
    detail::mm_nn(x.data(), layer.self_wk.data(), kp, 1, d, d);
    detail::mm_nn(x.data(), layer.self_wv.data(), vp, 1, d, d);

    std::fill(q.begin(), q.end(), R(0));
    detail::mm_nn(x.data(), layer.self_wq.data(), q.data(), 1, d, d);
    // keys = cache rows ++ pending row, assembled without copying the cache
    const std::size_t s = st.t + 1;
    std::vector<R> keys(s * d), vals(s * d);
    std::copy(st.key_cache[l].begin(), st.key_cache[l].end(), keys.begin());
    std::copy_n(kp, d, keys.begin() + st.t * d);
    std::copy(st.val_cache[l].begin(), st.val_cache[l].end(), vals.begin());
    std::copy_n(vp, d, vals.begin() + st.t * d);
    detail::fast_token_attention(q.data(), keys.data(), vals.data(), s, d,
                                 ctx.heads, nullptr, layer.self_wo.data(),
                                 attn.data(), scratch);
    for (std::size_t j = 0; j < d; ++j) x[j] += attn[j];
    detail::fast_layer_norm(x.data(), layer.ln_self_gain.data(),
                            layer.ln_self_bias.data(), d);

    std::fill(q.begin(), q.end(), R(0));
    detail::mm_nn(x.data(), layer.cross_wq.data(), q.data(), 1, d, d);
    detail::fast_token_attention(q.data(), ctx.cross_k[l].data(),
                                 ctx.cross_v[l].data(), n, d, ctx.heads,
                                 live.data(), layer.cross_wo.data(),
                                 attn.data(), scratch);
    for (std::size_t j = 0; j < d; ++j) x[j] += attn[j];
    detail::fast_layer_norm(x.data(), layer.ln_cross_gain.data(),
                            layer.ln_cross_bias.data(), d);
  }

  std::fill(q.begin(), q.end(), R(0));
  detail::mm_nn(x.data(), m.dec.ptr_wq.data(), q.data(), 1, d, d);
  const R inv_sqrt_d = R(1) / static_cast<R>(std::sqrt(static_cast<double>(d)));
  for (std::size_t c = 0; c < n; ++c) {
    const R* kc = ctx.ptr_k.data() + c * d;
    R acc = 0;
    for (std::size_t j = 0; j < d; ++j) acc += q[j] * kc[j];
    probs[c] = ctx.clip * std::tanh(acc * inv_sqrt_d);
  }
  if (clipped) std::copy_n(probs, n, clipped);
  detail::fast_softmax_masked(probs, live.data(), n);
  st.has_pending = true;
}

template <class R>
void fast_advance(const FastContext<R>& ctx, FastState<R>& st, int city) {
  if (!st.has_pending)
    throw std::logic_error("fast_advance: call fast_step first");
  if (city < 0 || city >= static_cast<int>(ctx.n) || st.visited[city])
    throw std::invalid_argument("fast_advance: infeasible city " +
                                std::to_string(city));
  for (std::size_t l = 0; l < ctx.layers; ++l) {
    st.key_cache[l].insert(st.key_cache[l].end(), st.pending_k[l].begin(),
                           st.pending_k[l].end());
    st.val_cache[l].insert(st.val_cache[l].end(), st.pending_v[l].begin(),
                           st.pending_v[l].end());
  }
  st.visited[city] = 1;
  st.partial.push_back(city);
  ++st.t;
  st.has_pending = false;
}

}  // namespace tspt

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "tspt/model.hpp"
#include "tspt/tensor.hpp"

namespace tspt {

// Sinusoidal position code: even slots sin(t / 10000^(2k/d)), odd slots the
// matching cosine.
inline double pe_value(int t, std::size_t i, std::size_t d) {
  const std::size_t k = i / 2;
  const double angle =
      t / std::pow(10000.0, (2.0 * static_cast<double>(k)) / static_cast<double>(d));
  return (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
}

inline std::vector<double> positional_encoding(int t, std::size_t d) {
  if (t < 0) throw std::invalid_argument("positional_encoding: t must be >= 0");
  std::vector<double> pe(d);
  for (std::size_t i = 0; i < d; ++i) pe[i] = pe_value(t, i, d);
  return pe;
}

template <class R>
Tensor<R> positional_encoding_tensor(int t, std::size_t d) {
  auto pe = positional_encoding(t, d);
  std::vector<R> v(pe.begin(), pe.end());
  return Tensor<R>::of({d}, std::move(v));
}

// Per-instance projections that stay fixed across decode steps: the city rows
// of H_enc, their cross-attention keys/values per layer, and the pointer keys.
template <class R>
struct DecoderContext {
  Tensor<R> start;   // [b, 1, d]
  Tensor<R> cities;  // [b, n, d]
  std::vector<Tensor<R>> cross_k, cross_v;  // per layer, [b, n, d]
  Tensor<R> ptr_k;   // [b, n, d]
  std::size_t lanes = 0, n = 0, d = 0;
};

template <class R>
DecoderContext<R> make_decoder_context(const Tensor<R>& enc_out,
                                       ModelParams<R>& model) {
  if (enc_out.rank() != 3)
    throw std::invalid_argument("decoder context expects [b, n+1, d], got " +
                                shape_str(enc_out.shape()));
  DecoderContext<R> ctx;
  ctx.lanes = enc_out.dim(0);
  ctx.n = enc_out.dim(1) - 1;
  ctx.d = enc_out.dim(2);
  ctx.start = slice(enc_out, 1, 0, 1);
  ctx.cities = slice(enc_out, 1, 1, ctx.n + 1);
  for (auto& layer : model.dec.layers) {
    ctx.cross_k.push_back(matmul(ctx.cities, layer.cross_wk));
    ctx.cross_v.push_back(matmul(ctx.cities, layer.cross_wv));
  }
  ctx.ptr_k = matmul(ctx.cities, model.dec.ptr_wk);
  return ctx;
}

// Decoding state for a batch of lanes advancing in lockstep (training
// sub-batches decode one lane per instance). Value-semantic; copies share
// the immutable cached tensors.
template <class R>
struct DecodeState {
  int t = 0;
  std::size_t lanes = 0, n = 0;
  std::vector<std::uint8_t> visited;        // lanes x n
  std::vector<std::vector<int>> partial;    // per lane
  std::vector<Tensor<R>> key_cache, val_cache;  // per layer, [lanes, t, d]

  bool is_visited(std::size_t lane, int city) const {
    return visited[lane * n + city] != 0;
  }
};

template <class R>
DecodeState<R> start_state(const DecoderContext<R>& ctx,
                           const ModelParams<R>& model) {
  DecodeState<R> st;
  st.lanes = ctx.lanes;
  st.n = ctx.n;
  st.visited.assign(st.lanes * st.n, 0);
  st.partial.resize(st.lanes);
  st.key_cache.resize(model.dims.l_dec);
  st.val_cache.resize(model.dims.l_dec);
  return st;
}

// One decode step: the step distribution plus the per-layer key/value rows of
// the current token, which advance() folds into the caches.
template <class R>
struct StepResult {
  Tensor<R> probs;    // [lanes, n]; visited cities exactly 0
  Tensor<R> clipped;  // [lanes, n]; pre-mask pointer logits in [-C, C]
  std::vector<Tensor<R>> layer_k, layer_v;  // per layer, [lanes, 1, d]
};

namespace detail {

// Attention of a single query token over a fixed key/value sequence.
template <class R>
Tensor<R> token_attention(const Tensor<R>& q, const Tensor<R>& keys,
                          const Tensor<R>& vals, const Tensor<R>& wo,
                          int heads, const Mask* mask) {
  const std::size_t d = q.shape().back();
  const std::size_t dh = d / static_cast<std::size_t>(heads);
  const R inv_sqrt = R(1) / static_cast<R>(std::sqrt(static_cast<double>(dh)));
  Tensor<R> merged;
  for (int j = 0; j < heads; ++j) {
    const std::size_t lo = j * dh, hi = (j + 1) * dh;
    Tensor<R> qj = slice(q, 2, lo, hi);
    Tensor<R> kj = slice(keys, 2, lo, hi);
    Tensor<R> vj = slice(vals, 2, lo, hi);
    Tensor<R> scores = scale(matmul_nt(qj, kj), inv_sqrt);
    Tensor<R> attn = mask ? softmax_masked(scores, *mask) : softmax(scores);
    Tensor<R> oj = matmul(attn, vj);
    merged = j == 0 ? oj : concat(merged, oj, 2);
  }
  return matmul(merged, wo);
}

inline Mask feasible_mask(const std::vector<std::uint8_t>& visited,
                          std::size_t lanes, std::size_t n) {
  Mask m;
  m.shape = {lanes, 1, n};
  m.live.resize(lanes * n);
  for (std::size_t i = 0; i < visited.size(); ++i) m.live[i] = !visited[i];
  return m;
}

}  // namespace detail

// Decoder input for the current step: the previously selected city's encoding
// (the start token's at t = 0) plus the position code.
template <class R>
Tensor<R> current_token(const DecodeState<R>& state,
                        const DecoderContext<R>& ctx) {
  Tensor<R> token;
  if (state.t == 0) {
    token = ctx.start;
  } else {
    std::vector<std::size_t> last(state.lanes);
    for (std::size_t lane = 0; lane < state.lanes; ++lane)
      last[lane] = static_cast<std::size_t>(state.partial[lane].back());
    token = gather_rows_batched(ctx.cities, last);
  }
  return add(token, positional_encoding_tensor<R>(state.t, ctx.d));
}

template <class R>
StepResult<R> decode_step(const DecodeState<R>& state,
                          const DecoderContext<R>& ctx,
                          ModelParams<R>& model) {
  if (state.t >= static_cast<int>(state.n))
    throw std::logic_error("decode_step: tour complete (t = n)");
  const std::size_t b = state.lanes, d = ctx.d;
  Tensor<R> token = current_token(state, ctx);

  Mask mask = detail::feasible_mask(state.visited, b, state.n);
  StepResult<R> out;
  Tensor<R> x = token;
  for (std::size_t l = 0; l < model.dec.layers.size(); ++l) {
    auto& layer = model.dec.layers[l];
    Tensor<R> k_new = matmul(x, layer.self_wk);
    Tensor<R> v_new = matmul(x, layer.self_wv);
    Tensor<R> keys = state.key_cache[l].defined()
                         ? concat(state.key_cache[l], k_new, 1)
                         : k_new;
    Tensor<R> vals = state.val_cache[l].defined()
                         ? concat(state.val_cache[l], v_new, 1)
                         : v_new;
    Tensor<R> q = matmul(x, layer.self_wq);
    Tensor<R> self_out = detail::token_attention(q, keys, vals, layer.self_wo,
                                                 model.dims.h, nullptr);
    x = layer_norm(add(x, self_out), layer.ln_self_gain, layer.ln_self_bias);

    Tensor<R> q2 = matmul(x, layer.cross_wq);
    Tensor<R> cross_out = detail::token_attention(
        q2, ctx.cross_k[l], ctx.cross_v[l], layer.cross_wo, model.dims.h,
        &mask);
    x = layer_norm(add(x, cross_out), layer.ln_cross_gain,
                   layer.ln_cross_bias);
    out.layer_k.push_back(std::move(k_new));
    out.layer_v.push_back(std::move(v_new));
  }

  // single-head pointer: C * tanh(q K^T / sqrt(d)), visited masked after the
  // clip so masked cities are truly excluded
  Tensor<R> q = matmul(x, model.dec.ptr_wq);
  Tensor<R> scores =
      scale(matmul_nt(q, ctx.ptr_k),
            R(1) / static_cast<R>(std::sqrt(static_cast<double>(d))));
  Tensor<R> clipped =
      scale(tspt::tanh(scores), static_cast<R>(model.dims.clip));
  out.clipped = reshape(clipped, {b, state.n});
  Mask flat;
  flat.shape = {b, state.n};
  flat.live = mask.live;
  out.probs = softmax_masked(out.clipped, flat);
  return out;
}

// Commits a step: records the chosen city per lane and extends the caches
// with the step's key/value rows.
template <class R>
DecodeState<R> advance(const DecodeState<R>& state, const StepResult<R>& step,
                       const std::vector<int>& chosen) {
  if (chosen.size() != state.lanes)
    throw std::invalid_argument("advance: need one chosen city per lane");
  DecodeState<R> next = state;
  for (std::size_t lane = 0; lane < state.lanes; ++lane) {
    const int city = chosen[lane];
    if (city < 0 || city >= static_cast<int>(state.n))
      throw std::invalid_argument("advance: city " + std::to_string(city) +
                                  " out of range");
    if (state.is_visited(lane, city))
      throw std::invalid_argument("advance: city " + std::to_string(city) +
                                  " already visited in lane " +
                                  std::to_string(lane));
    next.visited[lane * state.n + city] = 1;
    next.partial[lane].push_back(city);
  }
  for (std::size_t l = 0; l < state.key_cache.size(); ++l) {
    next.key_cache[l] = state.key_cache[l].defined()
                            ? concat(state.key_cache[l], step.layer_k[l], 1)
                            : step.layer_k[l];
    next.val_cache[l] = state.val_cache[l].defined()
                            ? concat(state.val_cache[l], step.layer_v[l], 1)
                            : step.layer_v[l];
  }
  next.t = state.t + 1;
  return next;
}

}  // namespace tspt

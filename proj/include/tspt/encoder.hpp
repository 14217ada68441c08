#pragma once

#include <cmath>
#include <vector>

#include "tspt/model.hpp"
#include "tspt/tensor.hpp"
#include "tspt/tsp.hpp"

namespace tspt {

namespace detail {

// Standard multi-head attention: queries, keys and values all projected from
// the same sequence, head outputs concatenated and projected by wo.
template <class R>
Tensor<R> self_attention(const Tensor<R>& h, const Tensor<R>& wq,
                         const Tensor<R>& wk, const Tensor<R>& wv,
                         const Tensor<R>& wo, int heads) {
  const std::size_t d = h.shape().back();
  const std::size_t dh = d / static_cast<std::size_t>(heads);
  Tensor<R> q = matmul(h, wq), k = matmul(h, wk), v = matmul(h, wv);
  const R inv_sqrt = R(1) / static_cast<R>(std::sqrt(static_cast<double>(dh)));
  Tensor<R> merged;
  for (int j = 0; j < heads; ++j) {
    const std::size_t lo = j * dh, hi = (j + 1) * dh;
    Tensor<R> qj = slice(q, q.rank() - 1, lo, hi);
    Tensor<R> kj = slice(k, k.rank() - 1, lo, hi);
    Tensor<R> vj = slice(v, v.rank() - 1, lo, hi);
    Tensor<R> attn = softmax(scale(matmul_nt(qj, kj), inv_sqrt));
    Tensor<R> oj = matmul(attn, vj);
    merged = j == 0 ? oj : concat(merged, oj, oj.rank() - 1);
  }
  return matmul(merged, wo);
}

}  // namespace detail

// Encodes a batch of same-size instances into H_enc of shape
// [batch, n+1, d]; row 0 is the start token, rows 1..n the cities.
template <class R>
Tensor<R> encode(const std::vector<Instance>& batch, ModelParams<R>& model,
                 Mode mode) {
  if (batch.empty()) throw std::invalid_argument("encode: empty batch");
  const std::size_t b = batch.size();
  const std::size_t n = static_cast<std::size_t>(batch.front().n());
  for (const Instance& inst : batch)
    if (static_cast<std::size_t>(inst.n()) != n)
      throw std::invalid_argument(
          "encode: mixed instance sizes in one batch (" + std::to_string(n) +
          " vs " + std::to_string(inst.n()) + ")");

  // start token tiled over the batch, then the raw city coordinates
  Tensor<R> z_rows = gather_rows(model.enc.start_token,
                                 std::vector<std::size_t>(b, 0));
  z_rows = reshape(z_rows, {b, 1, 2});
  std::vector<R> xy;
  xy.reserve(b * n * 2);
  for (const Instance& inst : batch)
    for (const Vec2& c : inst.coords) {
      xy.push_back(static_cast<R>(c[0]));
      xy.push_back(static_cast<R>(c[1]));
    }
  Tensor<R> cities = Tensor<R>::of({b, n, 2}, std::move(xy));
  Tensor<R> h = matmul(concat(z_rows, cities, 1), model.enc.w_emb);

  for (auto& layer : model.enc.layers) {
    Tensor<R> attn = detail::self_attention(h, layer.wq, layer.wk, layer.wv,
                                            layer.wo, model.dims.h);
    h = batch_norm(add(h, attn), layer.bn_attn.gain, layer.bn_attn.bias,
                   layer.bn_attn.state, mode);
    Tensor<R> ff = matmul(relu(matmul(h, layer.ffn_w1)), layer.ffn_w2);
    h = batch_norm(add(h, ff), layer.bn_ffn.gain, layer.bn_ffn.bias,
                   layer.bn_ffn.state, mode);
  }
  return h;
}

}  // namespace tspt

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tspt/rng.hpp"
#include "tspt/tensor.hpp"

namespace tspt {

struct ModelDims {
  int d = 128;      // model width
  int h = 8;        // attention heads
  int l_enc = 6;    // encoder layers
  int l_dec = 2;    // decoder layers
  int d_ff = 512;   // encoder feed-forward width
  double clip = 10; // pointer logit clipping constant

  void validate() const {
    if (d < 2 || h < 1 || l_enc < 1 || l_dec < 1 || d_ff < 1)
      throw std::invalid_argument("model dims must be positive");
    if (d % h != 0)
      throw std::invalid_argument("model width d=" + std::to_string(d) +
                                  " must be divisible by heads h=" +
                                  std::to_string(h));
    if (!(clip > 0))
      throw std::invalid_argument("clip constant must be positive");
  }
};

template <class R>
struct BatchNorm {
  Tensor<R> gain, bias;
  BatchNormState<R> state;
};

template <class R>
struct EncoderLayerParams {
  Tensor<R> wq, wk, wv, wo;      // d x d
  Tensor<R> ffn_w1, ffn_w2;      // d x d_ff, d_ff x d
  BatchNorm<R> bn_attn, bn_ffn;
};

template <class R>
struct EncoderParams {
  Tensor<R> w_emb;        // 2 x d
  Tensor<R> start_token;  // 1 x 2, the learnable pseudo-city
  std::vector<EncoderLayerParams<R>> layers;
};

template <class R>
struct DecoderLayerParams {
  Tensor<R> self_wq, self_wk, self_wv, self_wo;
  Tensor<R> ln_self_gain, ln_self_bias;
  Tensor<R> cross_wq, cross_wk, cross_wv, cross_wo;
  Tensor<R> ln_cross_gain, ln_cross_bias;
};

template <class R>
struct DecoderParams {
  std::vector<DecoderLayerParams<R>> layers;
  Tensor<R> ptr_wq, ptr_wk;  // single-head pointer
};

template <class R>
struct ModelParams {
  ModelDims dims;
  EncoderParams<R> enc;
  DecoderParams<R> dec;

  static ModelParams init(const ModelDims& dims, Rng& rng) {
    dims.validate();
    ModelParams p;
    p.dims = dims;
    const std::size_t d = static_cast<std::size_t>(dims.d);
    const std::size_t dff = static_cast<std::size_t>(dims.d_ff);
    auto uniform_init = [&rng](Shape shape, std::size_t fan_in) {
      Tensor<R> t = Tensor<R>::zeros(std::move(shape));
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (std::size_t i = 0; i < t.size(); ++i)
        t.data()[i] = static_cast<R>(rng.uniform(-bound, bound));
      return t;
    };
    p.enc.w_emb = uniform_init({2, d}, 2);
    p.enc.start_token = Tensor<R>::zeros({1, 2});
    for (std::size_t i = 0; i < 2; ++i)
      p.enc.start_token.data()[i] = static_cast<R>(rng.normal());
    p.enc.layers.resize(dims.l_enc);
    for (auto& l : p.enc.layers) {
      l.wq = uniform_init({d, d}, d);
      l.wk = uniform_init({d, d}, d);
      l.wv = uniform_init({d, d}, d);
      l.wo = uniform_init({d, d}, d);
      l.ffn_w1 = uniform_init({d, dff}, d);
      l.ffn_w2 = uniform_init({dff, d}, dff);
      for (BatchNorm<R>* bn : {&l.bn_attn, &l.bn_ffn}) {
        bn->gain = Tensor<R>::full({d}, R(1));
        bn->bias = Tensor<R>::zeros({d});
        bn->state.seed_identity(d);
      }
    }
    p.dec.layers.resize(dims.l_dec);
    for (auto& l : p.dec.layers) {
      l.self_wq = uniform_init({d, d}, d);
      l.self_wk = uniform_init({d, d}, d);
      l.self_wv = uniform_init({d, d}, d);
      l.self_wo = uniform_init({d, d}, d);
      l.ln_self_gain = Tensor<R>::full({d}, R(1));
      l.ln_self_bias = Tensor<R>::zeros({d});
      l.cross_wq = uniform_init({d, d}, d);
      l.cross_wk = uniform_init({d, d}, d);
      l.cross_wv = uniform_init({d, d}, d);
      l.cross_wo = uniform_init({d, d}, d);
      l.ln_cross_gain = Tensor<R>::full({d}, R(1));
      l.ln_cross_bias = Tensor<R>::zeros({d});
    }
    p.dec.ptr_wq = uniform_init({d, d}, d);
    p.dec.ptr_wk = uniform_init({d, d}, d);
    return p;
  }

  // Visits every learnable tensor as (name, tensor&), in a fixed order.
  template <class Fn>
  void for_each_param(Fn&& fn) {
    fn("enc.w_emb", enc.w_emb);
    fn("enc.z", enc.start_token);
    for (std::size_t i = 0; i < enc.layers.size(); ++i) {
      auto& l = enc.layers[i];
      const std::string p = "enc.l" + std::to_string(i) + ".";
      fn(p + "wq", l.wq);
      fn(p + "wk", l.wk);
      fn(p + "wv", l.wv);
      fn(p + "wo", l.wo);
      fn(p + "ffn_w1", l.ffn_w1);
      fn(p + "ffn_w2", l.ffn_w2);
      fn(p + "bn_attn.gain", l.bn_attn.gain);
      fn(p + "bn_attn.bias", l.bn_attn.bias);
      fn(p + "bn_ffn.gain", l.bn_ffn.gain);
      fn(p + "bn_ffn.bias", l.bn_ffn.bias);
    }
    for (std::size_t i = 0; i < dec.layers.size(); ++i) {
      auto& l = dec.layers[i];
      const std::string p = "dec.l" + std::to_string(i) + ".";
      fn(p + "self_wq", l.self_wq);
      fn(p + "self_wk", l.self_wk);
      fn(p + "self_wv", l.self_wv);
      fn(p + "self_wo", l.self_wo);
      fn(p + "ln_self.gain", l.ln_self_gain);
      fn(p + "ln_self.bias", l.ln_self_bias);
      fn(p + "cross_wq", l.cross_wq);
      fn(p + "cross_wk", l.cross_wk);
      fn(p + "cross_wv", l.cross_wv);
      fn(p + "cross_wo", l.cross_wo);
      fn(p + "ln_cross.gain", l.ln_cross_gain);
      fn(p + "ln_cross.bias", l.ln_cross_bias);
    }
    fn("dec.ptr_wq", dec.ptr_wq);
    fn("dec.ptr_wk", dec.ptr_wk);
  }

  // Visits batch-norm running state as (name, state&).
  template <class Fn>
  void for_each_bn(Fn&& fn) {
    for (std::size_t i = 0; i < enc.layers.size(); ++i) {
      const std::string p = "enc.l" + std::to_string(i) + ".";
      fn(p + "bn_attn", enc.layers[i].bn_attn.state);
      fn(p + "bn_ffn", enc.layers[i].bn_ffn.state);
    }
  }

  void set_requires_grad(bool on) {
    for_each_param([on](const std::string&, Tensor<R>& t) {
      t.set_requires_grad(on);
    });
  }

  void zero_grad() {
    for_each_param([](const std::string&, Tensor<R>& t) { t.zero_grad(); });
  }

  // Deep copy: values, grads flags, and batch-norm state.
  ModelParams clone() const {
    ModelParams out;
    out.dims = dims;
    out.enc.w_emb = clone_tensor(enc.w_emb);
    out.enc.start_token = clone_tensor(enc.start_token);
    out.enc.layers.resize(enc.layers.size());
    for (std::size_t i = 0; i < enc.layers.size(); ++i) {
      const auto& s = enc.layers[i];
      auto& t = out.enc.layers[i];
      t.wq = clone_tensor(s.wq);
      t.wk = clone_tensor(s.wk);
      t.wv = clone_tensor(s.wv);
      t.wo = clone_tensor(s.wo);
      t.ffn_w1 = clone_tensor(s.ffn_w1);
      t.ffn_w2 = clone_tensor(s.ffn_w2);
      t.bn_attn.gain = clone_tensor(s.bn_attn.gain);
      t.bn_attn.bias = clone_tensor(s.bn_attn.bias);
      t.bn_attn.state = s.bn_attn.state;
      t.bn_ffn.gain = clone_tensor(s.bn_ffn.gain);
      t.bn_ffn.bias = clone_tensor(s.bn_ffn.bias);
      t.bn_ffn.state = s.bn_ffn.state;
    }
    out.dec.layers.resize(dec.layers.size());
    for (std::size_t i = 0; i < dec.layers.size(); ++i) {
      const auto& s = dec.layers[i];
      auto& t = out.dec.layers[i];
      t.self_wq = clone_tensor(s.self_wq);
      t.self_wk = clone_tensor(s.self_wk);
      t.self_wv = clone_tensor(s.self_wv);
      t.self_wo = clone_tensor(s.self_wo);
      t.ln_self_gain = clone_tensor(s.ln_self_gain);
      t.ln_self_bias = clone_tensor(s.ln_self_bias);
      t.cross_wq = clone_tensor(s.cross_wq);
      t.cross_wk = clone_tensor(s.cross_wk);
      t.cross_wv = clone_tensor(s.cross_wv);
      t.cross_wo = clone_tensor(s.cross_wo);
      t.ln_cross_gain = clone_tensor(s.ln_cross_gain);
      t.ln_cross_bias = clone_tensor(s.ln_cross_bias);
    }
    out.dec.ptr_wq = clone_tensor(dec.ptr_wq);
    out.dec.ptr_wk = clone_tensor(dec.ptr_wk);
    return out;
  }

  // Copies parameter values and BN state from `src` (shapes must match).
  void assign_from(const ModelParams& src) {
    auto& self = *this;
    auto& other = const_cast<ModelParams&>(src);
    std::vector<Tensor<R>*> mine, theirs;
    self.for_each_param([&](const std::string&, Tensor<R>& t) {
      mine.push_back(&t);
    });
    other.for_each_param([&](const std::string&, Tensor<R>& t) {
      theirs.push_back(&t);
    });
    for (std::size_t i = 0; i < mine.size(); ++i) {
      if (mine[i]->shape() != theirs[i]->shape())
        throw std::invalid_argument("assign_from: mismatched parameter shapes");
      mine[i]->values() = theirs[i]->values();
    }
    std::vector<BatchNormState<R>*> my_bn;
    self.for_each_bn([&](const std::string&, BatchNormState<R>& s) {
      my_bn.push_back(&s);
    });
    std::size_t k = 0;
    other.for_each_bn([&](const std::string&, BatchNormState<R>& s) {
      *my_bn[k++] = s;
    });
  }

 private:
  static Tensor<R> clone_tensor(const Tensor<R>& t) {
    Tensor<R> out = Tensor<R>::of(t.shape(), t.values());
    if (t.requires_grad()) out.set_requires_grad(true);
    return out;
  }
};

}  // namespace tspt

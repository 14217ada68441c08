#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tspt/util.hpp"

namespace tspt {

using Shape = std::vector<std::size_t>;

enum class Mode { Train, Eval };

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<>());
}

template <class R>
struct TensorNode {
  Shape shape;
  std::vector<R> value;
  std::vector<R> grad;  // allocated iff requires_grad
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), R(0));
  }
};

// Value-semantic handle to a shared node. Copies alias the same storage;
// ops produce fresh nodes.
template <class R>
class Tensor {
 public:
  using Node = TensorNode<R>;

  Tensor() = default;

  static Tensor zeros(Shape shape) {
    return Tensor(std::move(shape), std::vector<R>{}, true);
  }
  static Tensor full(Shape shape, R v) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.node_->value.begin(), t.node_->value.end(), v);
    return t;
  }
  static Tensor of(Shape shape, std::vector<R> data) {
    if (shape_numel(shape) != data.size())
      throw std::invalid_argument("tensor data size " +
                                  std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    return t;
  }
  static Tensor scalar(R v) { return of({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape[i]; }
  std::size_t size() const { return node_->value.size(); }

  R* data() { return node_->value.data(); }
  const R* data() const { return node_->value.data(); }
  std::vector<R>& values() { return node_->value; }
  const std::vector<R>& values() const { return node_->value; }

  R& at(std::size_t i) { return node_->value[i]; }
  R at(std::size_t i) const { return node_->value[i]; }
  R& at(std::size_t i, std::size_t j) {
    return node_->value[i * dim(1) + j];
  }
  R at(std::size_t i, std::size_t j) const {
    return node_->value[i * dim(1) + j];
  }
  R& at(std::size_t i, std::size_t j, std::size_t k) {
    return node_->value[(i * dim(1) + j) * dim(2) + k];
  }
  R at(std::size_t i, std::size_t j, std::size_t k) const {
    return node_->value[(i * dim(1) + j) * dim(2) + k];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (on) node_->ensure_grad();
    return *this;
  }
  std::vector<R>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<R>& grad() const { return node_->grad; }
  void zero_grad() {
    if (node_) std::fill(node_->grad.begin(), node_->grad.end(), R(0));
  }

  const std::shared_ptr<Node>& impl() const { return node_; }

 private:
  Tensor(Shape shape, std::vector<R>, bool) {
    node_ = std::make_shared<Node>();
    node_->value.assign(shape_numel(shape), R(0));
    node_->shape = std::move(shape);
  }
  std::shared_ptr<Node> node_;
};

// Boolean mask aligned with a tensor shape; 1 = live, 0 = excluded.
struct Mask {
  Shape shape;
  std::vector<std::uint8_t> live;

  static Mask all_live(Shape s) {
    Mask m;
    m.live.assign(shape_numel(s), 1);
    m.shape = std::move(s);
    return m;
  }
  std::size_t size() const { return live.size(); }
};

// Ordered record of executed ops; replayed in reverse by backward().
// Execution order is the topological order.
template <class R>
class Tape {
 public:
  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }
  std::size_t size() const { return steps_.size(); }

  void backward(const Tensor<R>& loss) {
    if (!loss.defined() || loss.size() != 1)
      throw std::invalid_argument(
          "backward: loss must be a scalar tensor, got shape " +
          (loss.defined() ? shape_str(loss.shape()) : std::string("<empty>")));
    loss.impl()->ensure_grad();
    loss.impl()->grad[0] = R(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    steps_.clear();
  }

  void clear() { steps_.clear(); }

 private:
  std::vector<std::function<void()>> steps_;
};

template <class R>
inline Tape<R>*& active_tape() {
  thread_local Tape<R>* tape = nullptr;
  return tape;
}

// RAII: makes `tape` the recording target for ops on this thread.
template <class R>
class TapeScope {
 public:
  explicit TapeScope(Tape<R>& tape) : prev_(active_tape<R>()) {
    active_tape<R>() = &tape;
  }
  ~TapeScope() { active_tape<R>() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<R>* prev_;
};

template <class R>
void backward(const Tensor<R>& loss) {
  Tape<R>* tape = active_tape<R>();
  if (!tape) throw std::logic_error("backward: no active tape on this thread");
  tape->backward(loss);
}

namespace detail {

template <class R>
bool grads_wanted(std::initializer_list<const Tensor<R>*> inputs) {
  if (!active_tape<R>()) return false;
  for (const Tensor<R>* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

// Marks `out` differentiable and queues its backward step.
template <class R, class Fn>
void record_op(Tensor<R>& out, Fn&& fn) {
  out.set_requires_grad(true);
  active_tape<R>()->record(std::forward<Fn>(fn));
}

// --- raw kernels; all accumulate into c ---

// c[m x p] += a[m x k] * b[k x p]
template <class R>
void mm_nn(const R* a, const R* b, R* c, std::size_t m, std::size_t k,
           std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const R* ai = a + i * k;
    R* ci = c + i * p;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const R av = ai[kk];
      const R* bk = b + kk * p;
      for (std::size_t j = 0; j < p; ++j) ci[j] += av * bk[j];
    }
  }
}

// c[m x p] += a[m x k] * b[p x k]^T
template <class R>
void mm_nt(const R* a, const R* b, R* c, std::size_t m, std::size_t k,
           std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const R* ai = a + i * k;
    R* ci = c + i * p;
    for (std::size_t j = 0; j < p; ++j) {
      const R* bj = b + j * k;
      R acc = 0;
      for (std::size_t kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
      ci[j] += acc;
    }
  }
}

// c[k x p] += a[m x k]^T * b[m x p]
template <class R>
void mm_tn(const R* a, const R* b, R* c, std::size_t m, std::size_t k,
           std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const R* ai = a + i * k;
    const R* bi = b + i * p;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const R av = ai[kk];
      R* ck = c + kk * p;
      for (std::size_t j = 0; j < p; ++j) ck[j] += av * bi[j];
    }
  }
}

// Interprets a rank-2/3 tensor as (batch, rows, cols).
struct MatView {
  std::size_t batch, rows, cols;
};

inline MatView mat_view(const Shape& s, const char* who) {
  if (s.size() == 2) return {1, s[0], s[1]};
  if (s.size() == 3) return {s[0], s[1], s[2]};
  throw std::invalid_argument(std::string(who) +
                              ": expected rank 2 or 3, got " + shape_str(s));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul: a[m x k] * b[k x p]. Rank-3 operands carry a leading batch axis;
// a rank-2 `b` is shared across the batch.
// ---------------------------------------------------------------------------
template <class R>
Tensor<R> matmul(const Tensor<R>& a, const Tensor<R>& b) {
  auto va = detail::mat_view(a.shape(), "matmul lhs");
  auto vb = detail::mat_view(b.shape(), "matmul rhs");
  const bool shared_b = b.rank() == 2;
  if (va.cols != vb.rows || (!shared_b && va.batch != vb.batch))
    throw std::invalid_argument("matmul: incompatible shapes " +
                                shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  Shape out_shape = a.rank() == 3 ? Shape{va.batch, va.rows, vb.cols}
                                  : Shape{va.rows, vb.cols};
  Tensor<R> out = Tensor<R>::zeros(std::move(out_shape));
  const std::size_t a_sz = va.rows * va.cols, b_sz = vb.rows * vb.cols,
                    o_sz = va.rows * vb.cols;
  for (std::size_t bt = 0; bt < va.batch; ++bt)
    detail::mm_nn(a.data() + bt * a_sz, b.data() + (shared_b ? 0 : bt * b_sz),
                  out.data() + bt * o_sz, va.rows, va.cols, vb.cols);

  if (detail::grads_wanted<R>({&a, &b})) {
    detail::record_op(out, [a, b, out, va, vb, shared_b, a_sz, b_sz, o_sz] {
      const R* g = out.impl()->grad.data();
      for (std::size_t bt = 0; bt < va.batch; ++bt) {
        const R* gb = g + bt * o_sz;
        if (a.requires_grad())
          detail::mm_nt(gb, b.data() + (shared_b ? 0 : bt * b_sz),
                        a.impl()->grad.data() + bt * a_sz, va.rows, vb.cols,
                        va.cols);
        if (b.requires_grad())
          detail::mm_tn(a.data() + bt * a_sz, gb,
                        b.impl()->grad.data() + (shared_b ? 0 : bt * b_sz),
                        va.rows, va.cols, vb.cols);
      }
    });
  }
  return out;
}

// a[m x k] * b[p x k]^T, same batching rules as matmul.
template <class R>
Tensor<R> matmul_nt(const Tensor<R>& a, const Tensor<R>& b) {
  auto va = detail::mat_view(a.shape(), "matmul_nt lhs");
  auto vb = detail::mat_view(b.shape(), "matmul_nt rhs");
  const bool shared_b = b.rank() == 2;
  if (va.cols != vb.cols || (!shared_b && va.batch != vb.batch))
    throw std::invalid_argument("matmul_nt: incompatible shapes " +
                                shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  Shape out_shape = a.rank() == 3 ? Shape{va.batch, va.rows, vb.rows}
                                  : Shape{va.rows, vb.rows};
  Tensor<R> out = Tensor<R>::zeros(std::move(out_shape));
  const std::size_t a_sz = va.rows * va.cols, b_sz = vb.rows * vb.cols,
                    o_sz = va.rows * vb.rows;
  for (std::size_t bt = 0; bt < va.batch; ++bt)
    detail::mm_nt(a.data() + bt * a_sz, b.data() + (shared_b ? 0 : bt * b_sz),
                  out.data() + bt * o_sz, va.rows, va.cols, vb.rows);

  if (detail::grads_wanted<R>({&a, &b})) {
    detail::record_op(out, [a, b, out, va, vb, shared_b, a_sz, b_sz, o_sz] {
      const R* g = out.impl()->grad.data();
      for (std::size_t bt = 0; bt < va.batch; ++bt) {
        const R* gb = g + bt * o_sz;
        // C = A B^T: dA += dC B, dB += dC^T A
        if (a.requires_grad())
          detail::mm_nn(gb, b.data() + (shared_b ? 0 : bt * b_sz),
                        a.impl()->grad.data() + bt * a_sz, va.rows, vb.rows,
                        va.cols);
        if (b.requires_grad())
          detail::mm_tn(gb, a.data() + bt * a_sz,
                        b.impl()->grad.data() + (shared_b ? 0 : bt * b_sz),
                        va.rows, vb.rows, va.cols);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// add: identical shapes, or rank-1 b broadcast over the last axis.
// ---------------------------------------------------------------------------
template <class R>
Tensor<R> add(const Tensor<R>& a, const Tensor<R>& b) {
  const bool broadcast = b.rank() == 1 && a.rank() > 1 &&
                         a.shape().back() == b.dim(0);
  if (!broadcast && a.shape() != b.shape())
    throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  Tensor<R> out = Tensor<R>::zeros(a.shape());
  const std::size_t n = a.size(), d = b.size();
  for (std::size_t i = 0; i < n; ++i)
    out.data()[i] = a.data()[i] + b.data()[broadcast ? i % d : i];

  if (detail::grads_wanted<R>({&a, &b})) {
    detail::record_op(out, [a, b, out, n, d, broadcast] {
      const R* g = out.impl()->grad.data();
      if (a.requires_grad()) {
        R* ga = a.impl()->grad.data();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        R* gb = b.impl()->grad.data();
        for (std::size_t i = 0; i < n; ++i) gb[broadcast ? i % d : i] += g[i];
      }
    });
  }
  return out;
}

// Elementwise product, identical shapes.
template <class R>
Tensor<R> mul(const Tensor<R>& a, const Tensor<R>& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("mul: shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  Tensor<R> out = Tensor<R>::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];

  if (detail::grads_wanted<R>({&a, &b})) {
    detail::record_op(out, [a, b, out, n] {
      const R* g = out.impl()->grad.data();
      if (a.requires_grad()) {
        R* ga = a.impl()->grad.data();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        R* gb = b.impl()->grad.data();
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * a.data()[i];
      }
    });
  }
  return out;
}

template <class R>
Tensor<R> scale(const Tensor<R>& a, R factor) {
  Tensor<R> out = Tensor<R>::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * factor;
  if (detail::grads_wanted<R>({&a})) {
    detail::record_op(out, [a, out, n, factor] {
      const R* g = out.impl()->grad.data();
      R* ga = a.impl()->grad.data();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

template <class R>
Tensor<R> tanh(const Tensor<R>& a) {
  Tensor<R> out = Tensor<R>::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = std::tanh(a.data()[i]);
  if (detail::grads_wanted<R>({&a})) {
    detail::record_op(out, [a, out, n] {
      const R* g = out.impl()->grad.data();
      const R* y = out.data();
      R* ga = a.impl()->grad.data();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * (R(1) - y[i] * y[i]);
    });
  }
  return out;
}

template <class R>
Tensor<R> relu(const Tensor<R>& a) {
  Tensor<R> out = Tensor<R>::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i)
    out.data()[i] = a.data()[i] > R(0) ? a.data()[i] : R(0);
  if (detail::grads_wanted<R>({&a})) {
    detail::record_op(out, [a, out, n] {
      const R* g = out.impl()->grad.data();
      R* ga = a.impl()->grad.data();
      for (std::size_t i = 0; i < n; ++i)
        if (a.data()[i] > R(0)) ga[i] += g[i];
    });
  }
  return out;
}

template <class R>
Tensor<R> log(const Tensor<R>& a) {
  Tensor<R> out = Tensor<R>::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!(a.data()[i] > R(0)))
      throw NumericError("log: non-positive input " +
                         std::to_string(static_cast<double>(a.data()[i])));
    out.data()[i] = std::log(a.data()[i]);
  }
  if (detail::grads_wanted<R>({&a})) {
    detail::record_op(out, [a, out, n] {
      const R* g = out.impl()->grad.data();
      R* ga = a.impl()->grad.data();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / a.data()[i];
    });
  }
  return out;
}

template <class R>
Tensor<R> sum(const Tensor<R>& a) {
  R acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.data()[i];
  Tensor<R> out = Tensor<R>::scalar(acc);
  if (detail::grads_wanted<R>({&a})) {
    const std::size_t n = a.size();
    detail::record_op(out, [a, out, n] {
      const R g = out.impl()->grad[0];
      R* ga = a.impl()->grad.data();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g;
    });
  }
  return out;
}

template <class R>
Tensor<R> mean(const Tensor<R>& a) {
  const std::size_t n = a.size();
  R acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += a.data()[i];
  Tensor<R> out = Tensor<R>::scalar(acc / static_cast<R>(n));
  if (detail::grads_wanted<R>({&a})) {
    detail::record_op(out, [a, out, n] {
      const R g = out.impl()->grad[0] / static_cast<R>(n);
      R* ga = a.impl()->grad.data();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax over the last axis. Masked entries are treated as -inf logits and
// come out exactly 0; rows are shifted by their live maximum for stability.
// ---------------------------------------------------------------------------
template <class R>
Tensor<R> softmax_masked(const Tensor<R>& logits, const Mask& mask) {
  if (logits.shape() != mask.shape)
    throw std::invalid_argument("softmax_masked: mask shape " +
                                shape_str(mask.shape) +
                                " does not match logits " +
                                shape_str(logits.shape()));
  const std::size_t d = logits.shape().back();
  const std::size_t rows = logits.size() / d;
  Tensor<R> out = Tensor<R>::zeros(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const R* x = logits.data() + r * d;
    const std::uint8_t* lv = mask.live.data() + r * d;
    R* p = out.data() + r * d;
    R mx = -std::numeric_limits<R>::infinity();
    for (std::size_t j = 0; j < d; ++j)
      if (lv[j] && x[j] > mx) mx = x[j];
    if (mx == -std::numeric_limits<R>::infinity())
      throw NumericError("softmax_masked: no feasible successor (row " +
                         std::to_string(r) + " fully masked)");
    R total = 0;
    for (std::size_t j = 0; j < d; ++j) {
      p[j] = lv[j] ? std::exp(x[j] - mx) : R(0);
      total += p[j];
    }
    const R inv = R(1) / total;
    for (std::size_t j = 0; j < d; ++j) p[j] *= inv;
  }
  if (detail::grads_wanted<R>({&logits})) {
    detail::record_op(out, [logits, out, rows, d] {
      const R* g = out.impl()->grad.data();
      const R* p = out.data();
      R* gx = logits.impl()->grad.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const R* gr = g + r * d;
        const R* pr = p + r * d;
        R dot = 0;
        for (std::size_t j = 0; j < d; ++j) dot += gr[j] * pr[j];
        R* gxr = gx + r * d;
        for (std::size_t j = 0; j < d; ++j)
          gxr[j] += pr[j] * (gr[j] - dot);
      }
    });
  }
  return out;
}

template <class R>
Tensor<R> softmax(const Tensor<R>& logits) {
  return softmax_masked(logits, Mask::all_live(logits.shape()));
}

// ---------------------------------------------------------------------------
// layer_norm over the last axis, epsilon inside the square root, then affine.
// ---------------------------------------------------------------------------
template <class R>
Tensor<R> layer_norm(const Tensor<R>& x, const Tensor<R>& gain,
                     const Tensor<R>& bias) {
  const std::size_t d = x.shape().back();
  if (d < 2)
    throw std::invalid_argument("layer_norm: last axis must be >= 2, got " +
                                shape_str(x.shape()));
  if (gain.size() != d || bias.size() != d)
    throw std::invalid_argument("layer_norm: affine params must have size " +
                                std::to_string(d));
  constexpr R kEps = R(1e-5);
  const std::size_t rows = x.size() / d;
  Tensor<R> out = Tensor<R>::zeros(x.shape());
  auto xhat = std::make_shared<std::vector<R>>(x.size());
  auto inv_std = std::make_shared<std::vector<R>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const R* xr = x.data() + r * d;
    R mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<R>(d);
    R var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<R>(d);
    const R inv = R(1) / std::sqrt(var + kEps);
    (*inv_std)[r] = inv;
    R* h = xhat->data() + r * d;
    R* o = out.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      h[j] = (xr[j] - mu) * inv;
      o[j] = h[j] * gain.data()[j] + bias.data()[j];
    }
  }
  if (detail::grads_wanted<R>({&x, &gain, &bias})) {
    detail::record_op(out, [x, gain, bias, out, xhat, inv_std, rows, d] {
      const R* g = out.impl()->grad.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const R* gr = g + r * d;
        const R* h = xhat->data() + r * d;
        if (gain.requires_grad()) {
          R* gg = gain.impl()->grad.data();
          for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * h[j];
        }
        if (bias.requires_grad()) {
          R* gb = bias.impl()->grad.data();
          for (std::size_t j = 0; j < d; ++j) gb[j] += gr[j];
        }
        if (x.requires_grad()) {
          R mean_dh = 0, mean_dh_h = 0;
          for (std::size_t j = 0; j < d; ++j) {
            const R dh = gr[j] * gain.data()[j];
            mean_dh += dh;
            mean_dh_h += dh * h[j];
          }
          mean_dh /= static_cast<R>(d);
          mean_dh_h /= static_cast<R>(d);
          R* gx = x.impl()->grad.data() + r * d;
          const R inv = (*inv_std)[r];
          for (std::size_t j = 0; j < d; ++j) {
            const R dh = gr[j] * gain.data()[j];
            gx[j] += inv * (dh - mean_dh - h[j] * mean_dh_h);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// batch_norm: channels on the last axis, statistics pooled over every other
// axis jointly. Train mode uses batch statistics and folds them into the
// running ones (momentum 0.1); eval mode requires initialised running stats.
// ---------------------------------------------------------------------------
template <class R>
struct BatchNormState {
  std::vector<R> running_mean, running_var;
  std::vector<R> last_batch_mean, last_batch_var;  // scratch from last train pass
  bool initialized = false;

  void seed_identity(std::size_t channels) {
    running_mean.assign(channels, R(0));
    running_var.assign(channels, R(1));
    initialized = true;
  }
};

template <class R>
Tensor<R> batch_norm(const Tensor<R>& x, const Tensor<R>& gain,
                     const Tensor<R>& bias, BatchNormState<R>& state,
                     Mode mode, R momentum = R(0.1)) {
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  if (gain.size() != d || bias.size() != d)
    throw std::invalid_argument("batch_norm: affine params must have size " +
                                std::to_string(d));
  constexpr R kEps = R(1e-5);
  std::vector<R> mu(d, R(0)), var(d, R(0));
  if (mode == Mode::Train) {
    if (rows < 2)
      throw std::invalid_argument(
          "batch_norm: train mode needs at least 2 pooled samples");
    for (std::size_t r = 0; r < rows; ++r) {
      const R* xr = x.data() + r * d;
      for (std::size_t j = 0; j < d; ++j) mu[j] += xr[j];
    }
    for (std::size_t j = 0; j < d; ++j) mu[j] /= static_cast<R>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const R* xr = x.data() + r * d;
      for (std::size_t j = 0; j < d; ++j)
        var[j] += (xr[j] - mu[j]) * (xr[j] - mu[j]);
    }
    for (std::size_t j = 0; j < d; ++j) var[j] /= static_cast<R>(rows);
    if (!state.initialized) {
      state.running_mean.assign(d, R(0));
      state.running_var.assign(d, R(1));
      state.initialized = true;
    }
    for (std::size_t j = 0; j < d; ++j) {
      state.running_mean[j] =
          (R(1) - momentum) * state.running_mean[j] + momentum * mu[j];
      state.running_var[j] =
          (R(1) - momentum) * state.running_var[j] + momentum * var[j];
    }
    state.last_batch_mean = mu;
    state.last_batch_var = var;
  } else {
    if (!state.initialized)
      throw std::logic_error(
          "batch_norm: uninitialized running statistics in eval mode");
    mu = state.running_mean;
    var = state.running_var;
  }

  Tensor<R> out = Tensor<R>::zeros(x.shape());
  auto xhat = std::make_shared<std::vector<R>>(x.size());
  auto inv_std = std::make_shared<std::vector<R>>(d);
  for (std::size_t j = 0; j < d; ++j)
    (*inv_std)[j] = R(1) / std::sqrt(var[j] + kEps);
  for (std::size_t r = 0; r < rows; ++r) {
    const R* xr = x.data() + r * d;
    R* h = xhat->data() + r * d;
    R* o = out.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      h[j] = (xr[j] - mu[j]) * (*inv_std)[j];
      o[j] = h[j] * gain.data()[j] + bias.data()[j];
    }
  }

  if (detail::grads_wanted<R>({&x, &gain, &bias})) {
    const bool batch_stats = mode == Mode::Train;
    detail::record_op(out, [x, gain, bias, out, xhat, inv_std, rows, d,
                            batch_stats] {
      const R* g = out.impl()->grad.data();
      if (gain.requires_grad() || bias.requires_grad()) {
        R* gg = gain.requires_grad() ? gain.impl()->grad.data() : nullptr;
        R* gb = bias.requires_grad() ? bias.impl()->grad.data() : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
          const R* gr = g + r * d;
          const R* h = xhat->data() + r * d;
          for (std::size_t j = 0; j < d; ++j) {
            if (gg) gg[j] += gr[j] * h[j];
            if (gb) gb[j] += gr[j];
          }
        }
      }
      if (!x.requires_grad()) return;
      R* gx = x.impl()->grad.data();
      if (!batch_stats) {
        for (std::size_t r = 0; r < rows; ++r) {
          const R* gr = g + r * d;
          R* gxr = gx + r * d;
          for (std::size_t j = 0; j < d; ++j)
            gxr[j] += gr[j] * gain.data()[j] * (*inv_std)[j];
        }
        return;
      }
      std::vector<R> mean_dh(d, R(0)), mean_dh_h(d, R(0));
      for (std::size_t r = 0; r < rows; ++r) {
        const R* gr = g + r * d;
        const R* h = xhat->data() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
          const R dh = gr[j] * gain.data()[j];
          mean_dh[j] += dh;
          mean_dh_h[j] += dh * h[j];
        }
      }
      for (std::size_t j = 0; j < d; ++j) {
        mean_dh[j] /= static_cast<R>(rows);
        mean_dh_h[j] /= static_cast<R>(rows);
      }
      for (std::size_t r = 0; r < rows; ++r) {
        const R* gr = g + r * d;
        const R* h = xhat->data() + r * d;
        R* gxr = gx + r * d;
        for (std::size_t j = 0; j < d; ++j) {
          const R dh = gr[j] * gain.data()[j];
          gxr[j] += (*inv_std)[j] * (dh - mean_dh[j] - h[j] * mean_dh_h[j]);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// concat along `axis`; both operands must agree on every other axis.
// ---------------------------------------------------------------------------
template <class R>
Tensor<R> concat(const Tensor<R>& a, const Tensor<R>& b, std::size_t axis) {
  if (a.rank() != b.rank() || axis >= a.rank())
    throw std::invalid_argument("concat: rank/axis mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  for (std::size_t i = 0; i < a.rank(); ++i)
    if (i != axis && a.dim(i) != b.dim(i))
      throw std::invalid_argument("concat: shape mismatch " +
                                  shape_str(a.shape()) + " vs " +
                                  shape_str(b.shape()));
  Shape out_shape = a.shape();
  out_shape[axis] += b.dim(axis);
  Tensor<R> out = Tensor<R>::zeros(out_shape);

  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const std::size_t a_blk = a.dim(axis) * inner, b_blk = b.dim(axis) * inner;
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a.data() + o * a_blk, a_blk,
                out.data() + o * (a_blk + b_blk));
    std::copy_n(b.data() + o * b_blk, b_blk,
                out.data() + o * (a_blk + b_blk) + a_blk);
  }
  if (detail::grads_wanted<R>({&a, &b})) {
    detail::record_op(out, [a, b, out, outer, a_blk, b_blk] {
      const R* g = out.impl()->grad.data();
      for (std::size_t o = 0; o < outer; ++o) {
        const R* go = g + o * (a_blk + b_blk);
        if (a.requires_grad()) {
          R* ga = a.impl()->grad.data() + o * a_blk;
          for (std::size_t i = 0; i < a_blk; ++i) ga[i] += go[i];
        }
        if (b.requires_grad()) {
          R* gb = b.impl()->grad.data() + o * b_blk;
          for (std::size_t i = 0; i < b_blk; ++i) gb[i] += go[a_blk + i];
        }
      }
    });
  }
  return out;
}

// Contiguous range [from, to) along `axis`.
template <class R>
Tensor<R> slice(const Tensor<R>& x, std::size_t axis, std::size_t from,
                std::size_t to) {
  if (axis >= x.rank() || from >= to || to > x.dim(axis))
    throw std::invalid_argument("slice: bad range [" + std::to_string(from) +
                                "," + std::to_string(to) + ") on axis " +
                                std::to_string(axis) + " of " +
                                shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape[axis] = to - from;
  Tensor<R> out = Tensor<R>::zeros(out_shape);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t x_blk = x.dim(axis) * inner, o_blk = (to - from) * inner;
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.data() + o * x_blk + from * inner, o_blk,
                out.data() + o * o_blk);
  if (detail::grads_wanted<R>({&x})) {
    detail::record_op(out, [x, out, outer, inner, x_blk, o_blk, from] {
      const R* g = out.impl()->grad.data();
      R* gx = x.impl()->grad.data();
      for (std::size_t o = 0; o < outer; ++o) {
        R* dst = gx + o * x_blk + from * inner;
        const R* src = g + o * o_blk;
        for (std::size_t i = 0; i < o_blk; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

// Same data, new shape.
template <class R>
Tensor<R> reshape(const Tensor<R>& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    throw std::invalid_argument("reshape: size mismatch " +
                                shape_str(x.shape()) + " -> " +
                                shape_str(shape));
  Tensor<R> out = Tensor<R>::of(std::move(shape), x.values());
  if (detail::grads_wanted<R>({&x})) {
    const std::size_t n = x.size();
    detail::record_op(out, [x, out, n] {
      const R* g = out.impl()->grad.data();
      R* gx = x.impl()->grad.data();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[i];
    });
  }
  return out;
}

// Row selection from a rank-2 tensor; indices may repeat.
template <class R>
Tensor<R> gather_rows(const Tensor<R>& x, const std::vector<std::size_t>& idx) {
  if (x.rank() != 2)
    throw std::invalid_argument("gather_rows: expected rank 2, got " +
                                shape_str(x.shape()));
  const std::size_t d = x.dim(1);
  for (std::size_t i : idx)
    if (i >= x.dim(0))
      throw std::invalid_argument("gather_rows: index " + std::to_string(i) +
                                  " out of range for " + shape_str(x.shape()));
  Tensor<R> out = Tensor<R>::zeros({idx.size(), d});
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(x.data() + idx[r] * d, d, out.data() + r * d);
  if (detail::grads_wanted<R>({&x})) {
    detail::record_op(out, [x, out, idx, d] {
      const R* g = out.impl()->grad.data();
      R* gx = x.impl()->grad.data();
      for (std::size_t r = 0; r < idx.size(); ++r) {
        R* dst = gx + idx[r] * d;
        const R* src = g + r * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

// Per-batch row selection: x[b, s, d] with one row index per batch element.
template <class R>
Tensor<R> gather_rows_batched(const Tensor<R>& x,
                              const std::vector<std::size_t>& idx) {
  if (x.rank() != 3 || idx.size() != x.dim(0))
    throw std::invalid_argument("gather_rows_batched: need rank-3 input and " +
                                std::to_string(x.rank() == 3 ? x.dim(0) : 0) +
                                " indices, got " + shape_str(x.shape()) +
                                " with " + std::to_string(idx.size()));
  const std::size_t s = x.dim(1), d = x.dim(2);
  Tensor<R> out = Tensor<R>::zeros({idx.size(), 1, d});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    if (idx[b] >= s)
      throw std::invalid_argument("gather_rows_batched: index " +
                                  std::to_string(idx[b]) + " out of range");
    std::copy_n(x.data() + (b * s + idx[b]) * d, d, out.data() + b * d);
  }
  if (detail::grads_wanted<R>({&x})) {
    detail::record_op(out, [x, out, idx, s, d] {
      const R* g = out.impl()->grad.data();
      R* gx = x.impl()->grad.data();
      for (std::size_t b = 0; b < idx.size(); ++b) {
        R* dst = gx + (b * s + idx[b]) * d;
        const R* src = g + b * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

// Per-row element selection: x[b, n] with one column index per row -> [b].
template <class R>
Tensor<R> gather_entries(const Tensor<R>& x,
                         const std::vector<std::size_t>& idx) {
  if (x.rank() != 2 || idx.size() != x.dim(0))
    throw std::invalid_argument("gather_entries: need rank-2 input with one "
                                "index per row, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(1);
  Tensor<R> out = Tensor<R>::zeros({idx.size()});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    if (idx[b] >= n)
      throw std::invalid_argument("gather_entries: index " +
                                  std::to_string(idx[b]) + " out of range");
    out.data()[b] = x.data()[b * n + idx[b]];
  }
  if (detail::grads_wanted<R>({&x})) {
    detail::record_op(out, [x, out, idx, n] {
      const R* g = out.impl()->grad.data();
      R* gx = x.impl()->grad.data();
      for (std::size_t b = 0; b < idx.size(); ++b)
        gx[b * n + idx[b]] += g[b];
    });
  }
  return out;
}

}  // namespace tspt

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "tspt/decoder.hpp"
#include "tspt/encoder.hpp"
#include "tspt/model.hpp"
#include "tspt/search.hpp"
#include "tspt/tsp.hpp"
#include "tspt/util.hpp"

namespace tspt {

struct TrainConfig {
  int n = 10;
  int batch_size = 64;
  int steps_per_epoch = 200;
  int epochs = 20;
  double learning_rate = 1e-4;
  int d = 128;
  int h = 8;
  int l_enc = 6;
  int l_dec = 2;
  int d_ff = 512;
  double clip = 10.0;
  int baseline_eval_size = 1000;
  std::uint64_t seed = 1;
  int precision = 32;  // 32 or 64
  enum class Opt { Adam, Sgd } optimizer = Opt::Adam;

  ModelDims dims() const { return {d, h, l_enc, l_dec, d_ff, clip}; }

  void validate() const {
    if (n < 3) throw std::invalid_argument("config: n must be >= 3");
    if (batch_size < 1 || steps_per_epoch < 0 || epochs < 0)
      throw std::invalid_argument("config: sizes must be positive");
    if (!(learning_rate > 0))
      throw std::invalid_argument("config: learning_rate must be positive");
    if (baseline_eval_size < 1)
      throw std::invalid_argument("config: baseline_eval_size must be >= 1");
    if (precision != 32 && precision != 64)
      throw std::invalid_argument("config: precision must be 32 or 64");
    dims().validate();  // reports d % h != 0 and non-positive dims
  }
};

// ---------------------------------------------------------------------------
// Optimizers. State is kept in parameter-visitation order.
// ---------------------------------------------------------------------------
template <class R>
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(TrainConfig::Opt kind, ModelParams<R>& params) : kind_(kind) {
    params.for_each_param([this](const std::string&, Tensor<R>& t) {
      m_.emplace_back(t.size(), R(0));
      v_.emplace_back(t.size(), R(0));
    });
  }

  void apply(ModelParams<R>& params, double lr) {
    ++step_;
    std::size_t slot = 0;
    if (kind_ == TrainConfig::Opt::Sgd) {
      params.for_each_param([&](const std::string&, Tensor<R>& t) {
        const std::vector<R>& g = t.grad();
        for (std::size_t i = 0; i < t.size(); ++i)
          t.data()[i] -= static_cast<R>(lr) * g[i];
      });
      return;
    }
    const R b1 = R(0.9), b2 = R(0.999), eps = R(1e-8);
    const R corr1 = R(1) - static_cast<R>(std::pow(0.9, double(step_)));
    const R corr2 = R(1) - static_cast<R>(std::pow(0.999, double(step_)));
    params.for_each_param([&](const std::string&, Tensor<R>& t) {
      std::vector<R>& m = m_[slot];
      std::vector<R>& v = v_[slot];
      ++slot;
      const std::vector<R>& g = t.grad();
      for (std::size_t i = 0; i < t.size(); ++i) {
        m[i] = b1 * m[i] + (R(1) - b1) * g[i];
        v[i] = b2 * v[i] + (R(1) - b2) * g[i] * g[i];
        const R mhat = m[i] / corr1;
        const R vhat = v[i] / corr2;
        t.data()[i] -= static_cast<R>(lr) * mhat / (std::sqrt(vhat) + eps);
      }
    });
  }

  TrainConfig::Opt kind() const { return kind_; }
  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }
  std::vector<std::vector<R>>& moment1() { return m_; }
  std::vector<std::vector<R>>& moment2() { return v_; }

 private:
  TrainConfig::Opt kind_ = TrainConfig::Opt::Adam;
  std::vector<std::vector<R>> m_, v_;
  std::uint64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// REINFORCE step pieces.
// ---------------------------------------------------------------------------
struct StepStats {
  double loss = 0;
  double mean_sample_len = 0;
  double mean_baseline_len = 0;
};

namespace detail {

// Greedy tours for a set of instances, batching the encoder in chunks.
template <class R>
std::vector<double> greedy_lengths(const std::vector<Instance>& instances,
                                   ModelParams<R>& model, int threads,
                                   std::size_t chunk = 64) {
  std::vector<double> lengths(instances.size(), 0.0);
  const std::size_t num_chunks = (instances.size() + chunk - 1) / chunk;
  parallel_chunks(num_chunks, threads, [&](std::size_t cb, std::size_t ce,
                                           int) {
    for (std::size_t ck = cb; ck < ce; ++ck) {
      const std::size_t lo = ck * chunk;
      const std::size_t hi = std::min(lo + chunk, instances.size());
      std::vector<Instance> slab(instances.begin() + lo,
                                 instances.begin() + hi);
      Tensor<R> enc = encode<R>(slab, model, Mode::Eval);
      for (std::size_t i = lo; i < hi; ++i) {
        FastContext<R> ctx = make_fast_context(enc, i - lo, model);
        lengths[i] = rollout<R>(instances[i], ctx, nullptr).tour.length;
      }
    }
  });
  return lengths;
}

template <class R>
double mean_greedy_length(const std::vector<Instance>& instances,
                          ModelParams<R>& model, int threads) {
  auto lengths = greedy_lengths(instances, model, threads);
  double total = 0;
  for (double v : lengths) total += v;
  return total / static_cast<double>(lengths.size());
}

}  // namespace detail

// Samples the policy on-tape over a batch, rolls the baseline greedily, and
// accumulates d/dθ of  Σ_i (L_sample_i − L_baseline_i) · log p(tour_i) / denom
// into the policy gradients. Returns the contribution with that denominator.
template <class R>
StepStats reinforce_accumulate(const std::vector<Instance>& batch,
                               ModelParams<R>& policy,
                               ModelParams<R>& baseline,
                               const std::vector<std::uint64_t>& rollout_seeds,
                               std::size_t denom) {
  const std::size_t b = batch.size();
  const std::size_t n = static_cast<std::size_t>(batch.front().n());
  if (rollout_seeds.size() != b)
    throw std::invalid_argument("reinforce: need one rollout seed per instance");

  Tape<R> tape;
  TapeScope<R> scope(tape);

  Tensor<R> enc = encode<R>(batch, policy, Mode::Train);
  DecoderContext<R> ctx = make_decoder_context(enc, policy);
  DecodeState<R> state = start_state(ctx, policy);

  std::vector<Rng> rngs;
  rngs.reserve(b);
  for (std::uint64_t s : rollout_seeds) rngs.emplace_back(s);

  Tensor<R> logp = Tensor<R>::zeros({b});
  for (std::size_t t = 0; t < n; ++t) {
    StepResult<R> step = decode_step(state, ctx, policy);
    std::vector<int> chosen(b);
    std::vector<std::size_t> chosen_sz(b);
    for (std::size_t lane = 0; lane < b; ++lane) {
      const R* row = step.probs.data() + lane * n;
      chosen[lane] = detail::sample_row(row, state.visited.data() + lane * n,
                                        n, rngs[lane].uniform());
      chosen_sz[lane] = static_cast<std::size_t>(chosen[lane]);
    }
    logp = add(logp, log(gather_entries(step.probs, chosen_sz)));
    state = advance(state, step, chosen);
  }

  std::vector<double> sample_len(b);
  for (std::size_t lane = 0; lane < b; ++lane)
    sample_len[lane] = tour_length(batch[lane], state.partial[lane]);

  // greedy baseline rollout, eval mode, no gradients
  Tensor<R> enc_base = encode<R>(batch, baseline, Mode::Eval);
  std::vector<double> base_len(b);
  for (std::size_t lane = 0; lane < b; ++lane) {
    FastContext<R> bctx = make_fast_context(enc_base, lane, baseline);
    base_len[lane] =
        detail::rollout<R>(batch[lane], bctx, nullptr).tour.length;
  }

  std::vector<R> adv(b);
  for (std::size_t lane = 0; lane < b; ++lane)
    adv[lane] = static_cast<R>((sample_len[lane] - base_len[lane]) /
                               static_cast<double>(denom));
  Tensor<R> loss = sum(mul(logp, Tensor<R>::of({b}, std::move(adv))));

  StepStats stats;
  stats.loss = static_cast<double>(loss.at(0));
  for (std::size_t lane = 0; lane < b; ++lane) {
    stats.mean_sample_len += sample_len[lane];
    stats.mean_baseline_len += base_len[lane];
  }
  stats.mean_sample_len /= static_cast<double>(b);
  stats.mean_baseline_len /= static_cast<double>(b);

  if (!std::isfinite(stats.loss)) {
    for (std::size_t lane = 0; lane < b; ++lane)
      if (!std::isfinite(static_cast<double>(logp.at(lane))) ||
          !std::isfinite(sample_len[lane]) || !std::isfinite(base_len[lane]))
        throw NumericError(
            "non-finite loss; offending instance index " +
            std::to_string(lane) + " (logp=" +
            std::to_string(static_cast<double>(logp.at(lane))) +
            ", sample_len=" + std::to_string(sample_len[lane]) +
            ", baseline_len=" + std::to_string(base_len[lane]) + ")");
    throw NumericError("non-finite loss");
  }
  tape.backward(loss);
  return stats;
}

// One optimizer update from one batch: accumulate, apply, zero.
template <class R>
StepStats reinforce_step(const std::vector<Instance>& batch,
                         ModelParams<R>& policy, ModelParams<R>& baseline,
                         Optimizer<R>& opt, double lr,
                         const std::vector<std::uint64_t>& rollout_seeds) {
  StepStats stats =
      reinforce_accumulate(batch, policy, baseline, rollout_seeds,
                           batch.size());
  opt.apply(policy, lr);
  policy.zero_grad();
  return stats;
}

// ---------------------------------------------------------------------------
// Baseline promotion: strict mean improvement on the evaluation set.
// ---------------------------------------------------------------------------
struct BaselineEval {
  double policy_mean = 0;
  double baseline_mean = 0;
  bool promoted = false;
};

template <class R>
BaselineEval maybe_update_baseline(ModelParams<R>& policy,
                                   ModelParams<R>& baseline,
                                   const std::vector<Instance>& eval_set,
                                   int threads = 1) {
  BaselineEval out;
  out.policy_mean = detail::mean_greedy_length(eval_set, policy, threads);
  out.baseline_mean = detail::mean_greedy_length(eval_set, baseline, threads);
  if (out.policy_mean < out.baseline_mean) {
    baseline.assign_from(policy);
    out.promoted = true;
  }
  return out;
}

struct EpochRow {
  int epoch = 0;
  double mean_sample_len = 0;
  double mean_greedy_len = 0;
  double baseline_len = 0;
  bool promoted = false;
};

inline void write_metrics_csv(const std::vector<EpochRow>& rows,
                              const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "epoch,mean_sample_len,mean_greedy_len,baseline_len,promoted\n";
  char buf[160];
  for (const EpochRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%d\n", r.epoch,
                  r.mean_sample_len, r.mean_greedy_len, r.baseline_len,
                  r.promoted ? 1 : 0);
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// Trainer: owns policy, baseline, optimizer, RNG stream and the baseline
// evaluation set. Deterministic for a fixed seed and thread count.
// ---------------------------------------------------------------------------
template <class R>
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, int threads = 1)
      : cfg_(cfg), threads_(threads), rng_(cfg.seed) {
    cfg_.precision = std::is_same_v<R, float> ? 32 : 64;
    cfg_.validate();
    policy_ = ModelParams<R>::init(cfg_.dims(), rng_);
    policy_.set_requires_grad(true);
    baseline_ = policy_.clone();
    baseline_.set_requires_grad(false);
    opt_ = Optimizer<R>(cfg_.optimizer, policy_);
    eval_seed_ = rng_.next();
    eval_set_ = generate(cfg_.n, cfg_.baseline_eval_size, eval_seed_);
  }

  StepStats train_step() {
    const std::uint64_t batch_seed = rng_.next();
    const std::uint64_t rollout_base = rng_.next();
    auto batch = generate(cfg_.n, cfg_.batch_size, batch_seed);

    const int workers =
        std::max(1, std::min<int>(threads_, cfg_.batch_size));
    std::vector<ModelParams<R>> replicas;
    std::vector<StepStats> worker_stats(workers);
    replicas.reserve(workers);
    for (int w = 0; w < workers; ++w) {
      replicas.push_back(policy_.clone());
      replicas.back().zero_grad();
    }
    parallel_chunks(batch.size(), workers, [&](std::size_t lo, std::size_t hi,
                                               int w) {
      std::vector<Instance> sub(batch.begin() + lo, batch.begin() + hi);
      std::vector<std::uint64_t> seeds;
      seeds.reserve(hi - lo);
      for (std::size_t i = lo; i < hi; ++i)
        seeds.push_back(Rng::mix(rollout_base, i));
      worker_stats[w] = reinforce_accumulate(sub, replicas[w], baseline_,
                                             seeds, batch.size());
      const double frac =
          static_cast<double>(hi - lo) / static_cast<double>(batch.size());
      worker_stats[w].mean_sample_len *= frac;
      worker_stats[w].mean_baseline_len *= frac;
    });

    // reduce gradients in worker order, then fold BN batch stats once
    std::vector<Tensor<R>*> targets;
    policy_.for_each_param(
        [&](const std::string&, Tensor<R>& t) { targets.push_back(&t); });
    for (int w = 0; w < workers; ++w) {
      std::size_t slot = 0;
      replicas[w].for_each_param([&](const std::string&, Tensor<R>& t) {
        std::vector<R>& dst = targets[slot++]->grad();
        const std::vector<R>& src = t.grad();
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
      });
    }
    std::vector<BatchNormState<R>*> bn_targets;
    policy_.for_each_bn([&](const std::string&, BatchNormState<R>& s) {
      bn_targets.push_back(&s);
    });
    std::vector<std::vector<BatchNormState<R>*>> bn_sources(workers);
    for (int w = 0; w < workers; ++w)
      replicas[w].for_each_bn([&](const std::string&, BatchNormState<R>& s) {
        bn_sources[w].push_back(&s);
      });
    for (std::size_t k = 0; k < bn_targets.size(); ++k) {
      BatchNormState<R>& dst = *bn_targets[k];
      const std::size_t channels = dst.running_mean.size();
      std::vector<R> mu(channels, R(0)), var(channels, R(0));
      for (int w = 0; w < workers; ++w)
        for (std::size_t c = 0; c < channels; ++c) {
          mu[c] += bn_sources[w][k]->last_batch_mean[c];
          var[c] += bn_sources[w][k]->last_batch_var[c];
        }
      const R inv_w = R(1) / static_cast<R>(workers);
      for (std::size_t c = 0; c < channels; ++c) {
        dst.running_mean[c] =
            R(0.9) * dst.running_mean[c] + R(0.1) * mu[c] * inv_w;
        dst.running_var[c] =
            R(0.9) * dst.running_var[c] + R(0.1) * var[c] * inv_w;
      }
    }

    opt_.apply(policy_, cfg_.learning_rate);
    policy_.zero_grad();

    StepStats total;
    for (const StepStats& s : worker_stats) {
      total.loss += s.loss;
      total.mean_sample_len += s.mean_sample_len;
      total.mean_baseline_len += s.mean_baseline_len;
    }
    return total;
  }

  EpochRow train_epoch() {
    double sample_len_sum = 0;
    for (int s = 0; s < cfg_.steps_per_epoch; ++s)
      sample_len_sum += train_step().mean_sample_len;
    BaselineEval ev =
        maybe_update_baseline(policy_, baseline_, eval_set_, threads_);
    if (ev.promoted) {
      eval_seed_ = rng_.next();
      eval_set_ = generate(cfg_.n, cfg_.baseline_eval_size, eval_seed_);
    }
    EpochRow row;
    row.epoch = epoch_++;
    row.mean_sample_len =
        cfg_.steps_per_epoch > 0 ? sample_len_sum / cfg_.steps_per_epoch : 0;
    row.mean_greedy_len = ev.policy_mean;
    row.baseline_len = ev.baseline_mean;
    row.promoted = ev.promoted;
    return row;
  }

  std::vector<EpochRow> train() {
    std::vector<EpochRow> rows;
    rows.reserve(cfg_.epochs);
    while (epoch_ < cfg_.epochs) rows.push_back(train_epoch());
    return rows;
  }

  const TrainConfig& config() const { return cfg_; }
  ModelParams<R>& policy() { return policy_; }
  ModelParams<R>& baseline() { return baseline_; }
  Optimizer<R>& optimizer() { return opt_; }
  int epoch() const { return epoch_; }
  int threads() const { return threads_; }
  void set_threads(int t) { threads_ = t; }
  Rng& rng() { return rng_; }
  std::uint64_t eval_seed() const { return eval_seed_; }
  const std::vector<Instance>& eval_set() const { return eval_set_; }

  void save_checkpoint(const std::string& path);
  static Trainer load_checkpoint(const std::string& path, int threads = 1);

 private:
  Trainer() = default;  // for load_checkpoint
  TrainConfig cfg_;
  int threads_ = 1;
  Rng rng_{0};
  ModelParams<R> policy_, baseline_;
  Optimizer<R> opt_;
  std::vector<Instance> eval_set_;
  std::uint64_t eval_seed_ = 0;
  int epoch_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoint container: magic "TSPTCKPT", u32 version, then a count-prefixed
// table of named tensors (u32 name length + bytes, u8 dtype, u8 rank,
// u64 dims, little-endian payload). dtype codes: 1 = f32, 2 = f64, 3 = u64.
// ---------------------------------------------------------------------------
namespace ckpt {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

constexpr char kMagic[8] = {'T', 'S', 'P', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

struct Entry {
  std::uint8_t dtype = 0;
  std::vector<std::uint64_t> dims;
  std::vector<std::uint8_t> payload;

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

template <class T>
constexpr std::uint8_t dtype_code() {
  if constexpr (std::is_same_v<T, float>) return 1;
  if constexpr (std::is_same_v<T, double>) return 2;
  return 3;  // u64
}

inline std::size_t dtype_size(std::uint8_t code) {
  return code == 1 ? 4 : 8;
}

template <class T>
Entry make_entry(const std::vector<std::uint64_t>& dims, const T* data,
                 std::size_t count) {
  Entry e;
  e.dtype = dtype_code<T>();
  e.dims = dims;
  e.payload.resize(count * sizeof(T));
  std::memcpy(e.payload.data(), data, e.payload.size());
  return e;
}

template <class T>
Entry scalar_entry(T v) {
  return make_entry<T>({}, &v, 1);
}

using Table = std::vector<std::pair<std::string, Entry>>;

inline void write_table(const Table& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(kMagic, 8);
  auto put_u32 = [&](std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
  };
  put_u32(kVersion);
  put_u32(static_cast<std::uint32_t>(table.size()));
  for (const auto& [name, e] : table) {
    put_u32(static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    out.put(static_cast<char>(e.dtype));
    out.put(static_cast<char>(e.dims.size()));
    out.write(reinterpret_cast<const char*>(e.dims.data()),
              static_cast<std::streamsize>(e.dims.size() * 8));
    out.write(reinterpret_cast<const char*>(e.payload.data()),
              static_cast<std::streamsize>(e.payload.size()));
  }
  if (!out) throw IoError("write failed: " + path);
}

inline Table read_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  char magic[8];
  if (!in.read(magic, 8))
    throw IoError("checkpoint truncated: missing magic in " + path);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("checkpoint magic mismatch: expected \"TSPTCKPT\", found \"" +
                  std::string(magic, magic + 8) + "\"");
  auto get_u32 = [&]() {
    std::uint32_t v;
    if (!in.read(reinterpret_cast<char*>(&v), 4))
      throw IoError("checkpoint truncated: " + path);
    return v;
  };
  const std::uint32_t version = get_u32();
  if (version != kVersion)
    throw IoError("checkpoint version mismatch: expected " +
                  std::to_string(kVersion) + ", found " +
                  std::to_string(version));
  const std::uint32_t count = get_u32();
  Table table;
  table.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t name_len = get_u32();
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len))
      throw IoError("checkpoint truncated: " + path);
    Entry e;
    int dtype = in.get(), rank = in.get();
    if (dtype == EOF || rank == EOF)
      throw IoError("checkpoint truncated: " + path);
    e.dtype = static_cast<std::uint8_t>(dtype);
    e.dims.resize(rank);
    if (rank &&
        !in.read(reinterpret_cast<char*>(e.dims.data()), rank * 8))
      throw IoError("checkpoint truncated: " + path);
    e.payload.resize(e.numel() * dtype_size(e.dtype));
    if (!in.read(reinterpret_cast<char*>(e.payload.data()),
                 static_cast<std::streamsize>(e.payload.size())))
      throw IoError("checkpoint truncated: " + path);
    table.emplace_back(std::move(name), std::move(e));
  }
  return table;
}

// Peeks the stored precision (32/64) without loading the model.
inline int stored_precision(const std::string& path) {
  for (const auto& [name, e] : read_table(path))
    if (name == "config.precision") {
      std::uint64_t v;
      std::memcpy(&v, e.payload.data(), 8);
      return static_cast<int>(v);
    }
  throw IoError("checkpoint has no config.precision entry: " + path);
}

}  // namespace ckpt

template <class R>
void Trainer<R>::save_checkpoint(const std::string& path) {
  ckpt::Table table;
  auto put_u64 = [&](const std::string& name, std::uint64_t v) {
    table.emplace_back(name, ckpt::scalar_entry<std::uint64_t>(v));
  };
  auto put_f64 = [&](const std::string& name, double v) {
    table.emplace_back(name, ckpt::scalar_entry<double>(v));
  };
  put_u64("config.n", cfg_.n);
  put_u64("config.batch_size", cfg_.batch_size);
  put_u64("config.steps_per_epoch", cfg_.steps_per_epoch);
  put_u64("config.epochs", cfg_.epochs);
  put_f64("config.learning_rate", cfg_.learning_rate);
  put_u64("config.d", cfg_.d);
  put_u64("config.h", cfg_.h);
  put_u64("config.l_enc", cfg_.l_enc);
  put_u64("config.l_dec", cfg_.l_dec);
  put_u64("config.d_ff", cfg_.d_ff);
  put_f64("config.clip", cfg_.clip);
  put_u64("config.baseline_eval_size", cfg_.baseline_eval_size);
  put_u64("config.seed", cfg_.seed);
  put_u64("config.precision", cfg_.precision);
  put_u64("config.optimizer",
          cfg_.optimizer == TrainConfig::Opt::Adam ? 0 : 1);
  put_u64("state.epoch", epoch_);
  put_u64("state.eval_seed", eval_seed_);
  auto rng_state = rng_.state();
  table.emplace_back("state.rng", ckpt::make_entry<std::uint64_t>(
                                      {4}, rng_state.data(), 4));

  auto put_model = [&](const std::string& prefix, ModelParams<R>& m) {
    m.for_each_param([&](const std::string& name, Tensor<R>& t) {
      std::vector<std::uint64_t> dims(t.shape().begin(), t.shape().end());
      table.emplace_back(prefix + name,
                         ckpt::make_entry<R>(dims, t.data(), t.size()));
    });
    m.for_each_bn([&](const std::string& name, BatchNormState<R>& s) {
      table.emplace_back(
          prefix + name + ".running_mean",
          ckpt::make_entry<R>({s.running_mean.size()}, s.running_mean.data(),
                              s.running_mean.size()));
      table.emplace_back(
          prefix + name + ".running_var",
          ckpt::make_entry<R>({s.running_var.size()}, s.running_var.data(),
                              s.running_var.size()));
      table.emplace_back(prefix + name + ".initialized",
                         ckpt::scalar_entry<std::uint64_t>(s.initialized));
    });
  };
  put_model("policy.", policy_);
  put_model("baseline.", baseline_);

  put_u64("opt.step", opt_.step());
  if (cfg_.optimizer == TrainConfig::Opt::Adam) {
    std::size_t slot = 0;
    policy_.for_each_param([&](const std::string& name, Tensor<R>&) {
      const auto& m = opt_.moment1()[slot];
      const auto& v = opt_.moment2()[slot];
      ++slot;
      table.emplace_back("opt.m." + name,
                         ckpt::make_entry<R>({m.size()}, m.data(), m.size()));
      table.emplace_back("opt.v." + name,
                         ckpt::make_entry<R>({v.size()}, v.data(), v.size()));
    });
  }
  ckpt::write_table(table, path);
}

template <class R>
Trainer<R> Trainer<R>::load_checkpoint(const std::string& path, int threads) {
  ckpt::Table table = ckpt::read_table(path);
  std::map<std::string, const ckpt::Entry*> index;
  for (const auto& [name, e] : table) index[name] = &e;

  auto need = [&](const std::string& name) -> const ckpt::Entry& {
    auto it = index.find(name);
    if (it == index.end())
      throw IoError("checkpoint missing entry: " + name);
    return *it->second;
  };
  auto get_u64 = [&](const std::string& name) {
    std::uint64_t v;
    std::memcpy(&v, need(name).payload.data(), 8);
    return v;
  };
  auto get_f64 = [&](const std::string& name) {
    double v;
    std::memcpy(&v, need(name).payload.data(), 8);
    return v;
  };

  TrainConfig cfg;
  cfg.n = static_cast<int>(get_u64("config.n"));
  cfg.batch_size = static_cast<int>(get_u64("config.batch_size"));
  cfg.steps_per_epoch = static_cast<int>(get_u64("config.steps_per_epoch"));
  cfg.epochs = static_cast<int>(get_u64("config.epochs"));
  cfg.learning_rate = get_f64("config.learning_rate");
  cfg.d = static_cast<int>(get_u64("config.d"));
  cfg.h = static_cast<int>(get_u64("config.h"));
  cfg.l_enc = static_cast<int>(get_u64("config.l_enc"));
  cfg.l_dec = static_cast<int>(get_u64("config.l_dec"));
  cfg.d_ff = static_cast<int>(get_u64("config.d_ff"));
  cfg.clip = get_f64("config.clip");
  cfg.baseline_eval_size =
      static_cast<int>(get_u64("config.baseline_eval_size"));
  cfg.seed = get_u64("config.seed");
  cfg.precision = static_cast<int>(get_u64("config.precision"));
  cfg.optimizer = get_u64("config.optimizer") == 0 ? TrainConfig::Opt::Adam
                                                   : TrainConfig::Opt::Sgd;
  if (cfg.precision != (std::is_same_v<R, float> ? 32 : 64))
    throw IoError("checkpoint precision " + std::to_string(cfg.precision) +
                  " does not match this trainer instantiation");

  Trainer tr;
  tr.cfg_ = cfg;
  tr.threads_ = threads;
  tr.epoch_ = static_cast<int>(get_u64("state.epoch"));
  tr.eval_seed_ = get_u64("state.eval_seed");
  const ckpt::Entry& rng_e = need("state.rng");
  std::array<std::uint64_t, 4> rng_state;
  std::memcpy(rng_state.data(), rng_e.payload.data(), 32);
  tr.rng_.set_state(rng_state);

  Rng scratch(0);
  tr.policy_ = ModelParams<R>::init(cfg.dims(), scratch);
  tr.baseline_ = ModelParams<R>::init(cfg.dims(), scratch);
  auto load_model = [&](const std::string& prefix, ModelParams<R>& m) {
    m.for_each_param([&](const std::string& name, Tensor<R>& t) {
      const ckpt::Entry& e = need(prefix + name);
      if (e.numel() != t.size() || e.dtype != ckpt::dtype_code<R>())
        throw IoError("checkpoint entry " + prefix + name +
                      " has wrong shape or dtype");
      std::memcpy(t.data(), e.payload.data(), e.payload.size());
    });
    m.for_each_bn([&](const std::string& name, BatchNormState<R>& s) {
      const ckpt::Entry& em = need(prefix + name + ".running_mean");
      const ckpt::Entry& ev = need(prefix + name + ".running_var");
      s.running_mean.resize(em.numel());
      s.running_var.resize(ev.numel());
      std::memcpy(s.running_mean.data(), em.payload.data(),
                  em.payload.size());
      std::memcpy(s.running_var.data(), ev.payload.data(), ev.payload.size());
      s.initialized = get_u64(prefix + name + ".initialized") != 0;
    });
  };
  load_model("policy.", tr.policy_);
  load_model("baseline.", tr.baseline_);
  tr.policy_.set_requires_grad(true);
  tr.baseline_.set_requires_grad(false);

  tr.opt_ = Optimizer<R>(cfg.optimizer, tr.policy_);
  tr.opt_.set_step(get_u64("opt.step"));
  if (cfg.optimizer == TrainConfig::Opt::Adam) {
    std::size_t slot = 0;
    tr.policy_.for_each_param([&](const std::string& name, Tensor<R>&) {
      const ckpt::Entry& em = need("opt.m." + name);
      const ckpt::Entry& ev = need("opt.v." + name);
      std::memcpy(tr.opt_.moment1()[slot].data(), em.payload.data(),
                  em.payload.size());
      std::memcpy(tr.opt_.moment2()[slot].data(), ev.payload.data(),
                  ev.payload.size());
      ++slot;
    });
  }
  tr.eval_set_ = generate(cfg.n, cfg.baseline_eval_size, tr.eval_seed_);
  return tr;
}

}  // namespace tspt

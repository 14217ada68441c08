// Command-line driver: dataset generation, training, solving, benchmarking.
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tspt/baselines.hpp"
#include "tspt/bench.hpp"
#include "tspt/search.hpp"
#include "tspt/training.hpp"
#include "tspt/tsp.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

int effective_threads(int flag_value) {
  if (const char* env = std::getenv("TSPT_THREADS")) {
    try {
      return std::max(1, std::stoi(env));
    } catch (...) {
      throw std::invalid_argument("TSPT_THREADS is not an integer: " +
                                  std::string(env));
    }
  }
  return std::max(1, flag_value);
}

// Flat key=value config, '#' comments, unknown keys rejected.
tspt::TrainConfig parse_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw tspt::IoError("cannot open config: " + path);
  tspt::TrainConfig cfg;
  std::map<std::string, bool> seen;
  const std::vector<std::string> known{
      "n", "batch_size", "steps_per_epoch", "epochs", "learning_rate",
      "d", "h", "l_enc", "l_dec", "d_ff", "clip", "baseline_eval_size",
      "seed", "precision", "optimizer"};
  for (const auto& k : known) seen[k] = false;

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected key=value, got '" + line + "'");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.count(key))
      throw std::invalid_argument("config: unknown key '" + key + "' (line " +
                                  std::to_string(line_no) + ")");
    if (seen[key])
      throw std::invalid_argument("config: duplicate key '" + key + "'");
    seen[key] = true;
    try {
      if (key == "n") cfg.n = std::stoi(value);
      else if (key == "batch_size") cfg.batch_size = std::stoi(value);
      else if (key == "steps_per_epoch") cfg.steps_per_epoch = std::stoi(value);
      else if (key == "epochs") cfg.epochs = std::stoi(value);
      else if (key == "learning_rate") cfg.learning_rate = std::stod(value);
      else if (key == "d") cfg.d = std::stoi(value);
      else if (key == "h") cfg.h = std::stoi(value);
      else if (key == "l_enc") cfg.l_enc = std::stoi(value);
      else if (key == "l_dec") cfg.l_dec = std::stoi(value);
      else if (key == "d_ff") cfg.d_ff = std::stoi(value);
      else if (key == "clip") cfg.clip = std::stod(value);
      else if (key == "baseline_eval_size")
        cfg.baseline_eval_size = std::stoi(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "precision") cfg.precision = std::stoi(value);
      else if (key == "optimizer") {
        if (value == "adam") cfg.optimizer = tspt::TrainConfig::Opt::Adam;
        else if (value == "sgd") cfg.optimizer = tspt::TrainConfig::Opt::Sgd;
        else
          throw std::invalid_argument("optimizer must be adam or sgd, got '" +
                                      value + "'");
      }
    } catch (const std::invalid_argument&) {
      throw;
    } catch (...) {
      throw std::invalid_argument("config: cannot parse value for '" + key +
                                  "': '" + value + "'");
    }
  }
  std::string missing;
  for (const auto& [key, was_set] : seen)
    if (!was_set) missing += missing.empty() ? key : ", " + key;
  if (!missing.empty())
    std::cerr << "warning: config missing keys, using defaults for: "
              << missing << "\n";
  cfg.validate();
  return cfg;
}

template <class R>
int run_train(const tspt::TrainConfig& cfg, const std::string& resume,
              const std::string& out_path, const std::string& metrics_path,
              int threads) {
  std::optional<tspt::Trainer<R>> trainer;
  if (!resume.empty()) {
    trainer.emplace(tspt::Trainer<R>::load_checkpoint(resume, threads));
    std::cerr << "resumed from " << resume << " at epoch "
              << trainer->epoch() << "\n";
  } else {
    trainer.emplace(cfg, threads);
  }
  tspt::Timer timer;
  auto rows = trainer->train();
  std::printf("trained %zu epoch(s) in %.1f s\n", rows.size(),
              timer.seconds());
  for (const auto& r : rows)
    std::printf(
        "epoch %d: sample_len=%.4f greedy_len=%.4f baseline_len=%.4f%s\n",
        r.epoch, r.mean_sample_len, r.mean_greedy_len, r.baseline_len,
        r.promoted ? " [baseline promoted]" : "");
  trainer->save_checkpoint(out_path);
  tspt::write_metrics_csv(rows, metrics_path);
  std::printf("checkpoint: %s\nmetrics: %s\n", out_path.c_str(),
              metrics_path.c_str());
  return kExitOk;
}

template <class R>
int run_solve(const std::string& ckpt, const std::string& instances_path,
              const std::string& strategy, int beam_width, std::uint64_t seed,
              const std::string& out_path, int threads) {
  auto trainer = tspt::Trainer<R>::load_checkpoint(ckpt, threads);
  auto& model = trainer.policy();
  auto instances = tspt::read_instances(instances_path);
  std::vector<tspt::Tour> tours(instances.size());
  std::vector<double> logps(instances.size(), 0.0);

  tspt::Timer timer;
  tspt::parallel_chunks(
      instances.size(), threads, [&](std::size_t lo, std::size_t hi, int) {
        for (std::size_t i = lo; i < hi; ++i) {
          if (strategy == "greedy") {
            auto res = tspt::greedy_decode(instances[i], model);
            tours[i] = std::move(res.tour);
            logps[i] = res.logp;
          } else if (strategy == "sample") {
            auto res = tspt::sample_decode(instances[i], model,
                                           tspt::Rng::mix(seed, i));
            tours[i] = std::move(res.tour);
            logps[i] = res.logp;
          } else {
            auto res = tspt::beam_search(instances[i], model, beam_width);
            tours[i] = res.shortest().tour;
            logps[i] = res.shortest().logp;
          }
        }
      });
  const double elapsed = timer.seconds();

  tspt::write_tours(tours, out_path);
  double mean_len = 0;
  for (const auto& t : tours) mean_len += t.length;
  mean_len /= static_cast<double>(tours.size());
  std::printf(
      "solved %zu instance(s) with %s%s: mean_len=%.6f total_time=%.3f s "
      "per_instance=%.6f s\n",
      tours.size(), strategy.c_str(),
      strategy == "beam" ? (" (B=" + std::to_string(beam_width) + ")").c_str()
                         : "",
      mean_len, elapsed, elapsed / static_cast<double>(tours.size()));
  std::printf("tours: %s\n", out_path.c_str());
  return kExitOk;
}

template <class R>
std::vector<tspt::BenchRow> run_bench_methods(
    const std::vector<std::string>& methods,
    const std::vector<tspt::Instance>& instances,
    tspt::Trainer<R>* trainer, int beam_width, std::uint64_t seed,
    int threads) {
  using tspt::BenchRow;
  const auto refs = tspt::exact_references(instances, threads);
  std::vector<BenchRow> rows;

  for (const std::string& method : methods) {
    std::vector<double> lengths(instances.size(), 0.0);
    std::optional<int> width;
    tspt::Timer timer;
    if (method == "greedy" || method == "sample" || method == "beam") {
      if (!trainer)
        throw std::invalid_argument("method '" + method +
                                    "' needs --ckpt");
      auto& model = trainer->policy();
      if (method == "beam") width = beam_width;
      tspt::parallel_chunks(
          instances.size(), threads,
          [&](std::size_t lo, std::size_t hi, int) {
            for (std::size_t i = lo; i < hi; ++i) {
              if (method == "greedy")
                lengths[i] =
                    tspt::greedy_decode(instances[i], model).tour.length;
              else if (method == "sample")
                lengths[i] = tspt::sample_decode(instances[i], model,
                                                 tspt::Rng::mix(seed, i))
                                 .tour.length;
              else
                lengths[i] = tspt::beam_search(instances[i], model,
                                               beam_width)
                                 .shortest()
                                 .tour.length;
            }
          });
    } else if (method == "held_karp" || method == "brute_force" ||
               method == "nearest_insertion" ||
               method == "farthest_insertion" || method == "two_opt") {
      tspt::parallel_chunks(
          instances.size(), threads,
          [&](std::size_t lo, std::size_t hi, int) {
            for (std::size_t i = lo; i < hi; ++i) {
              const auto& inst = instances[i];
              if (method == "held_karp")
                lengths[i] = tspt::held_karp(inst).tour.length;
              else if (method == "brute_force")
                lengths[i] = tspt::brute_force(inst).tour.length;
              else if (method == "nearest_insertion")
                lengths[i] = tspt::nearest_insertion(inst).tour.length;
              else if (method == "farthest_insertion")
                lengths[i] = tspt::farthest_insertion(inst).tour.length;
              else {
                // 2-opt from a seeded random start tour
                std::vector<int> order(inst.n());
                for (int k = 0; k < inst.n(); ++k) order[k] = k;
                tspt::Rng rng(tspt::Rng::mix(seed, i));
                for (int k = inst.n() - 1; k > 0; --k)
                  std::swap(order[k], order[rng.below(k + 1)]);
                lengths[i] =
                    tspt::two_opt(inst, tspt::Tour::of(inst, order))
                        .tour.length;
              }
            }
          });
    } else {
      throw std::invalid_argument("unknown bench method '" + method + "'");
    }
    rows.push_back(tspt::summarize(method, instances, lengths, refs,
                                   timer.seconds(), width));
  }
  return rows;
}

std::vector<std::string> split_csv_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TSP transformer toolkit: generate | train | solve | bench"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "write a TSPSET instance file");
  int gen_n = 10, gen_count = 1000;
  std::uint64_t gen_seed = 1;
  std::string gen_out = "instances.txt";
  gen->add_option("--n", gen_n, "cities per instance");
  gen->add_option("--count", gen_count, "number of instances");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output path")->required();

  // train
  auto* train = app.add_subcommand("train", "train a model from a config");
  std::string train_config, train_resume, train_out = "checkpoint.tspt",
                             train_metrics = "metrics.csv";
  int train_threads = 1;
  train->add_option("--config", train_config, "key=value config file");
  train->add_option("--resume", train_resume, "checkpoint to resume from");
  train->add_option("--out", train_out, "checkpoint output path");
  train->add_option("--metrics", train_metrics, "metrics CSV output path");
  train->add_option("--threads", train_threads, "worker threads (default 1)");

  // solve
  auto* solve = app.add_subcommand("solve", "decode tours for an instance file");
  std::string solve_ckpt, solve_instances, solve_strategy = "greedy",
                          solve_out = "tours.txt";
  int solve_beam = 0, solve_threads = 1;
  std::uint64_t solve_seed = 1;
  solve->add_option("--ckpt", solve_ckpt, "checkpoint path")->required();
  solve->add_option("--instances", solve_instances, "TSPSET file")->required();
  solve->add_option("--strategy", solve_strategy, "greedy | sample | beam");
  solve->add_option("--beam-width", solve_beam, "beam width for --strategy beam");
  solve->add_option("--seed", solve_seed, "sampling seed");
  solve->add_option("--out", solve_out, "TOURS output path");
  solve->add_option("--threads", solve_threads, "worker threads (default 1)");

  // bench
  auto* bench = app.add_subcommand("bench", "benchmark methods on instances");
  std::string bench_ckpt, bench_instances, bench_methods = "greedy",
                          bench_out = "bench.csv", bench_timing_out,
                          bench_sizes = "10,20,40,80";
  int bench_beam = 100, bench_threads = 1, bench_repeats = 25;
  std::uint64_t bench_seed = 1;
  bench->add_option("--ckpt", bench_ckpt, "checkpoint (for neural methods)");
  bench->add_option("--instances", bench_instances, "TSPSET file");
  bench->add_option("--methods", bench_methods,
                    "comma list: greedy,sample,beam,nearest_insertion,"
                    "farthest_insertion,two_opt,held_karp,brute_force");
  bench->add_option("--beam-width", bench_beam, "beam width for beam rows");
  bench->add_option("--seed", bench_seed, "seed for sampling/2-opt starts");
  bench->add_option("--out", bench_out, "bench CSV output path");
  bench->add_option("--complexity-out", bench_timing_out,
                    "also time greedy decode across sizes into this CSV");
  bench->add_option("--complexity-ns", bench_sizes,
                    "comma list of sizes for --complexity-out");
  bench->add_option("--complexity-repeats", bench_repeats,
                    "instances timed per size");
  bench->add_option("--threads", bench_threads, "worker threads (default 1)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) {
      auto instances = tspt::generate(gen_n, gen_count, gen_seed);
      tspt::write_instances(instances, gen_out);
      std::printf("wrote %d instance(s) of n=%d to %s\n", gen_count, gen_n,
                  gen_out.c_str());
      return kExitOk;
    }
    if (*train) {
      const int threads = effective_threads(train_threads);
      if (train_config.empty() && train_resume.empty())
        throw std::invalid_argument("train: need --config or --resume");
      if (!train_resume.empty()) {
        const int prec = tspt::ckpt::stored_precision(train_resume);
        return prec == 32
                   ? run_train<float>({}, train_resume, train_out,
                                      train_metrics, threads)
                   : run_train<double>({}, train_resume, train_out,
                                       train_metrics, threads);
      }
      tspt::TrainConfig cfg = parse_train_config(train_config);
      return cfg.precision == 32
                 ? run_train<float>(cfg, "", train_out, train_metrics, threads)
                 : run_train<double>(cfg, "", train_out, train_metrics,
                                     threads);
    }
    if (*solve) {
      const int threads = effective_threads(solve_threads);
      if (solve_strategy != "greedy" && solve_strategy != "sample" &&
          solve_strategy != "beam")
        throw std::invalid_argument("solve: unknown strategy '" +
                                    solve_strategy + "'");
      if (solve_strategy == "beam" && solve_beam < 1)
        throw std::invalid_argument(
            "solve: --strategy beam requires --beam-width >= 1");
      const int prec = tspt::ckpt::stored_precision(solve_ckpt);
      return prec == 32
                 ? run_solve<float>(solve_ckpt, solve_instances,
                                    solve_strategy, solve_beam, solve_seed,
                                    solve_out, threads)
                 : run_solve<double>(solve_ckpt, solve_instances,
                                     solve_strategy, solve_beam, solve_seed,
                                     solve_out, threads);
    }
    if (*bench) {
      const int threads = effective_threads(bench_threads);
      auto methods = split_csv_list(bench_methods);
      const bool needs_model =
          std::any_of(methods.begin(), methods.end(), [](const auto& m) {
            return m == "greedy" || m == "sample" || m == "beam";
          });
      if ((needs_model || !bench_timing_out.empty()) && bench_ckpt.empty())
        throw std::invalid_argument("bench: these methods need --ckpt");

      std::optional<int> prec;
      if (!bench_ckpt.empty())
        prec = tspt::ckpt::stored_precision(bench_ckpt);

      std::vector<tspt::BenchRow> rows;
      auto run_all = [&](auto* trainer_ptr) {
        if (!bench_instances.empty()) {
          auto instances = tspt::read_instances(bench_instances);
          rows = run_bench_methods(methods, instances, trainer_ptr,
                                   bench_beam, bench_seed, threads);
          tspt::write_bench_csv(rows, bench_out);
          std::printf("bench rows: %zu -> %s\n", rows.size(),
                      bench_out.c_str());
          for (const auto& r : rows)
            std::printf("  %-20s mean_len=%.4f gap=%s total=%.3fs\n",
                        r.method.c_str(), r.mean_len,
                        r.gap_pct ? (std::to_string(*r.gap_pct) + "%").c_str()
                                  : "-",
                        r.total_time_s);
        }
        if (!bench_timing_out.empty()) {
          std::vector<int> sizes;
          for (const auto& s : split_csv_list(bench_sizes))
            sizes.push_back(std::stoi(s));
          auto points = measure_greedy_scaling(trainer_ptr->policy(), sizes,
                                               bench_repeats, bench_seed);
          tspt::write_timing_csv(points, bench_timing_out);
          auto fit = tspt::fit_power_law(points);
          std::printf("timing series -> %s (fit: t = %.3g * n^%.2f)\n",
                      bench_timing_out.c_str(), fit.coefficient,
                      fit.exponent);
        }
      };
      if (prec && *prec == 64) {
        auto trainer =
            tspt::Trainer<double>::load_checkpoint(bench_ckpt, threads);
        run_all(&trainer);
      } else if (prec) {
        auto trainer =
            tspt::Trainer<float>::load_checkpoint(bench_ckpt, threads);
        run_all(&trainer);
      } else {
        if (bench_instances.empty())
          throw std::invalid_argument("bench: need --instances");
        auto instances = tspt::read_instances(bench_instances);
        rows = run_bench_methods<float>(methods, instances, nullptr,
                                        bench_beam, bench_seed, threads);
        tspt::write_bench_csv(rows, bench_out);
        std::printf("bench rows: %zu -> %s\n", rows.size(), bench_out.c_str());
      }
      return kExitOk;
    }
  } catch (const tspt::NumericError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const tspt::ParseError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const tspt::IoError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

#pragma once

#include <chrono>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace tspt {

// Malformed text input; line is 1-based.
struct ParseError : std::runtime_error {
  int line;
  ParseError(const std::string& msg, int line_no)
      : std::runtime_error(msg + " (line " + std::to_string(line_no) + ")"),
        line(line_no) {}
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required (e.g. NaN loss).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Timer {
 public:
  Timer() : start_(clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(clock::now() - start_).count();
  }
  void reset() { start_ = clock::now(); }

 private:
  using clock = std::chrono::steady_clock;
  clock::time_point start_;
};

// Runs fn(begin, end, worker_index) over contiguous chunks of [0, total).
// threads <= 1 runs inline. Chunk boundaries depend only on (total, threads),
// so results are reproducible for a fixed thread count.
template <class Fn>
void parallel_chunks(std::size_t total, int threads, Fn&& fn) {
  if (total == 0) return;
  std::size_t workers =
      threads <= 1 ? 1 : std::min<std::size_t>(threads, total);
  if (workers == 1) {
    fn(std::size_t{0}, total, 0);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::size_t base = total / workers, rem = total % workers, begin = 0;
  for (std::size_t w = 0; w < workers; ++w) {
    std::size_t len = base + (w < rem ? 1 : 0);
    std::size_t end = begin + len;
    pool.emplace_back([&fn, begin, end, w] { fn(begin, end, static_cast<int>(w)); });
    begin = end;
  }
  for (auto& t : pool) t.join();
}

}  // namespace tspt

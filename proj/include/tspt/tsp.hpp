#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tspt/rng.hpp"
#include "tspt/util.hpp"

namespace tspt {

using Vec2 = std::array<double, 2>;

// A TSP instance: n cities in the unit square. Immutable once built.
struct Instance {
  std::vector<Vec2> coords;
  std::optional<std::uint64_t> seed;

  int n() const { return static_cast<int>(coords.size()); }

  static Instance of(std::vector<Vec2> coords,
                     std::optional<std::uint64_t> seed = std::nullopt) {
    if (coords.size() < 3)
      throw std::invalid_argument("instance needs at least 3 cities, got " +
                                  std::to_string(coords.size()));
    for (const auto& c : coords)
      if (!std::isfinite(c[0]) || !std::isfinite(c[1]))
        throw std::invalid_argument("instance has non-finite coordinates");
    return Instance{std::move(coords), seed};
  }
};

inline double distance(const Vec2& a, const Vec2& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1];
  return std::sqrt(dx * dx + dy * dy);
}

// Closed-tour Euclidean length; validates that `order` is a permutation.
inline double tour_length(const Instance& inst, const std::vector<int>& order) {
  const int n = inst.n();
  if (static_cast<int>(order.size()) != n)
    throw std::invalid_argument("tour has " + std::to_string(order.size()) +
                                " cities, instance has " + std::to_string(n));
  std::vector<std::uint8_t> seen(n, 0);
  for (int idx : order) {
    if (idx < 0 || idx >= n)
      throw std::invalid_argument("tour index " + std::to_string(idx) +
                                  " out of range [0," + std::to_string(n) +
                                  ")");
    if (seen[idx])
      throw std::invalid_argument("tour visits city " + std::to_string(idx) +
                                  " more than once");
    seen[idx] = 1;
  }
  double len = 0;
  for (int t = 0; t < n; ++t)
    len += distance(inst.coords[order[t]], inst.coords[order[(t + 1) % n]]);
  return len;
}

struct Tour {
  std::vector<int> order;
  double length = 0;

  static Tour of(const Instance& inst, std::vector<int> order) {
    double len = tour_length(inst, order);
    return Tour{std::move(order), len};
  }
};

// count instances of n cities each, i.i.d. uniform on [0,1)^2.
inline std::vector<Instance> generate(int n, int count, std::uint64_t seed) {
  if (n < 3)
    throw std::invalid_argument("generate: n must be >= 3, got " +
                                std::to_string(n));
  if (count < 1)
    throw std::invalid_argument("generate: count must be >= 1, got " +
                                std::to_string(count));
  Rng rng(seed);
  std::vector<Instance> out;
  out.reserve(count);
  for (int k = 0; k < count; ++k) {
    std::vector<Vec2> coords(n);
    for (auto& c : coords) {
      c[0] = rng.uniform();
      c[1] = rng.uniform();
    }
    out.push_back(Instance::of(std::move(coords), seed));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Instance file: "TSPSET v1 <count> <n>", then per instance n lines "x y",
// instances separated by a blank line. Coordinates survive a round trip at
// 17 significant digits.
// ---------------------------------------------------------------------------
inline void write_instances(const std::vector<Instance>& instances,
                            const std::string& path) {
  if (instances.empty())
    throw std::invalid_argument("write_instances: no instances");
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  const int n = instances.front().n();
  out << "TSPSET v1 " << instances.size() << " " << n << "\n";
  char buf[64];
  for (std::size_t k = 0; k < instances.size(); ++k) {
    if (instances[k].n() != n)
      throw std::invalid_argument("write_instances: mixed city counts");
    if (k) out << "\n";
    for (const auto& c : instances[k].coords) {
      std::snprintf(buf, sizeof buf, "%.17g %.17g", c[0], c[1]);
      out << buf << "\n";
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

inline std::vector<Instance> read_instances(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  if (lines.empty() ||
      (lines.size() == 1 && lines[0].find_first_not_of(" \t") ==
                                std::string::npos))
    throw ParseError("no instances in file", 1);

  std::istringstream header(lines[0]);
  std::string magic, version;
  long count = 0, n = 0;
  if (!(header >> magic >> version >> count >> n) || magic != "TSPSET" ||
      version != "v1")
    throw ParseError("expected header 'TSPSET v1 <count> <n>', got '" +
                     lines[0] + "'", 1);
  if (count < 1) throw ParseError("no instances declared", 1);
  if (n < 3) throw ParseError("city count must be >= 3", 1);

  std::vector<Instance> out;
  out.reserve(count);
  std::size_t pos = 1;  // index into lines; 1-based line number is pos + 1
  for (long k = 0; k < count; ++k) {
    if (k) {
      if (pos >= lines.size() || !lines[pos].empty())
        throw ParseError("expected blank separator before instance " +
                         std::to_string(k + 1), static_cast<int>(pos + 1));
      ++pos;
    }
    std::vector<Vec2> coords;
    coords.reserve(n);
    for (long r = 0; r < n; ++r, ++pos) {
      if (pos >= lines.size() || lines[pos].empty())
        throw ParseError("expected coordinate line " + std::to_string(r + 1) +
                         " of " + std::to_string(n) + " for instance " +
                         std::to_string(k + 1), static_cast<int>(pos + 1));
      std::istringstream ls(lines[pos]);
      double x, y;
      std::string extra;
      if (!(ls >> x >> y) || (ls >> extra))
        throw ParseError("malformed coordinate line '" + lines[pos] + "'",
                         static_cast<int>(pos + 1));
      coords.push_back({x, y});
    }
    out.push_back(Instance::of(std::move(coords)));
  }
  for (; pos < lines.size(); ++pos)
    if (!lines[pos].empty())
      throw ParseError("unexpected trailing content '" + lines[pos] + "'",
                       static_cast<int>(pos + 1));
  return out;
}

// ---------------------------------------------------------------------------
// Tours file: "TOURS v1", then one line per tour with n indices and the
// length as the final field.
// ---------------------------------------------------------------------------
inline void write_tours(const std::vector<Tour>& tours,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "TOURS v1\n";
  char buf[64];
  for (const Tour& t : tours) {
    for (int idx : t.order) out << idx << " ";
    std::snprintf(buf, sizeof buf, "%.17g", t.length);
    out << buf << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

inline std::vector<Tour> read_tours(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::string line;
  int line_no = 1;
  if (!std::getline(in, line) || line != "TOURS v1")
    throw ParseError("expected header 'TOURS v1'", 1);
  std::vector<Tour> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<double> fields;
    double v;
    while (ls >> v) fields.push_back(v);
    if (fields.size() < 4)
      throw ParseError("tour line needs at least 3 indices and a length",
                       line_no);
    Tour t;
    t.length = fields.back();
    t.order.reserve(fields.size() - 1);
    for (std::size_t i = 0; i + 1 < fields.size(); ++i)
      t.order.push_back(static_cast<int>(fields[i]));
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace tspt

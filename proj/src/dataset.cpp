#include "rec/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace rec {

namespace {

long long pair_key(int u, int i) {
  return (static_cast<long long>(u) << 32) | static_cast<unsigned>(i);
}

struct LineParser {
  std::unordered_map<long, int> user_map, item_map;
  std::unordered_set<long long> seen;
  Dataset ds;

  void add(long user, long item, double rating, long ts, std::size_t line_no,
           const std::string& path) {
    auto [uit, unew] = user_map.try_emplace(user, ds.num_users);
    if (unew) {
      ds.num_users++;
      ds.user_orig_ids.push_back(user);
    }
    auto [iit, inew] = item_map.try_emplace(item, ds.num_items);
    if (inew) {
      ds.num_items++;
      ds.item_orig_ids.push_back(item);
    }
    int u = uit->second, i = iit->second;
    if (!seen.insert(pair_key(u, i)).second) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": duplicate (user,item) pair");
    }
    if (!std::isfinite(rating) || rating < ds.scale_min ||
        rating > ds.scale_max) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": rating out of scale bounds");
    }
    ds.records.push_back({u, i, rating, ts});
  }
};

std::vector<std::string> split_fields(const std::string& line,
                                      const std::string& sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    std::size_t next = line.find(sep, pos);
    if (next == std::string::npos) {
      out.push_back(line.substr(pos));
      break;
    }
    out.push_back(line.substr(pos, next - pos));
    pos = next + sep.size();
  }
  return out;
}

Dataset parse_delimited(const std::string& path, const std::string& sep,
                        double scale_min, double scale_max) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open ratings file: " + path);
  LineParser p;
  p.ds.scale_min = scale_min;
  p.ds.scale_max = scale_max;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    line_no++;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_fields(line, sep);
    if (fields.size() != 4) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected 4 fields, got " +
                               std::to_string(fields.size()));
    }
    try {
      std::size_t used;
      long user = std::stol(fields[0], &used);
      if (used != fields[0].size()) throw std::invalid_argument("user");
      long item = std::stol(fields[1], &used);
      if (used != fields[1].size()) throw std::invalid_argument("item");
      double rating = std::stod(fields[2], &used);
      if (used != fields[2].size()) throw std::invalid_argument("rating");
      long ts = std::stol(fields[3], &used);
      if (used != fields[3].size()) throw std::invalid_argument("timestamp");
      p.add(user, item, rating, ts, line_no, path);
    } catch (const std::invalid_argument&) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": malformed field");
    }
  }
  if (p.ds.records.empty()) {
    throw std::runtime_error(path + ": no rating records");
  }
  p.ds.recompute_mean();
  return p.ds;
}

std::string format_rating(double r) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", r);
  return buf;
}

void write_delimited(const Dataset& ds, const std::string& path,
                     const std::string& sep) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& r : ds.records) {
    out << ds.user_orig_ids[r.user_id] << sep << ds.item_orig_ids[r.item_id]
        << sep << format_rating(r.rating) << sep << r.timestamp << "\n";
  }
}

}  // namespace

void Dataset::recompute_mean() {
  double sum = 0.0;
  for (const auto& r : records) sum += r.rating;
  mean_rating = records.empty() ? 0.0 : sum / records.size();
}

Dataset parse_tab_format(const std::string& path) {
  return parse_delimited(path, "\t", 1.0, 5.0);
}

Dataset parse_double_colon_format(const std::string& path) {
  return parse_delimited(path, "::", 0.5, 5.0);
}

void write_tab_format(const Dataset& ds, const std::string& path) {
  write_delimited(ds, path, "\t");
}

void write_double_colon_format(const Dataset& ds, const std::string& path) {
  write_delimited(ds, path, "::");
}

Dataset generate_synthetic(int m, int n, int true_rank, double density,
                           double noise_sd, std::uint64_t seed) {
  if (true_rank > std::min(m, n)) {
    throw std::invalid_argument("true_rank exceeds min(m, n)");
  }
  if (density <= 0.0 || density > 1.0) {
    throw std::invalid_argument("density must be in (0, 1]");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<double> a(static_cast<std::size_t>(m) * true_rank);
  std::vector<double> b(static_cast<std::size_t>(n) * true_rank);
  for (auto& x : a) x = unit(rng);
  for (auto& x : b) x = unit(rng);

  // Wide enough that clipping almost never binds, so the low-rank structure
  // survives for the rank-recovery oracles.
  double bound = 10.0 * std::sqrt(static_cast<double>(std::max(true_rank, 1)));

  std::bernoulli_distribution observe(density);
  constexpr int kMaxAttempts = 100;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Dataset ds;
    ds.num_users = m;
    ds.num_items = n;
    ds.scale_min = -bound;
    ds.scale_max = bound;
    std::vector<int> user_deg(m, 0), item_deg(n, 0);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        if (!observe(rng)) continue;
        double v = 0.0;
        for (int t = 0; t < true_rank; ++t) {
          v += a[static_cast<std::size_t>(i) * true_rank + t] *
               b[static_cast<std::size_t>(j) * true_rank + t];
        }
        if (noise_sd > 0.0) v += noise_sd * unit(rng);
        v = std::clamp(v, -bound, bound);
        ds.records.push_back({i, j, v, 0});
        user_deg[i]++;
        item_deg[j]++;
      }
    }
    bool connected =
        std::all_of(user_deg.begin(), user_deg.end(),
                    [](int d) { return d > 0; }) &&
        std::all_of(item_deg.begin(), item_deg.end(),
                    [](int d) { return d > 0; });
    if (!connected) continue;
    // Report the observed range as the scale; the clip bound above is only a
    // numerical guard and would otherwise dwarf the data spread.
    double lo = ds.records.front().rating, hi = lo;
    for (const auto& r : ds.records) {
      lo = std::min(lo, r.rating);
      hi = std::max(hi, r.rating);
    }
    ds.scale_min = lo;
    ds.scale_max = hi;
    ds.user_orig_ids.resize(m);
    ds.item_orig_ids.resize(n);
    for (int i = 0; i < m; ++i) ds.user_orig_ids[i] = i + 1;
    for (int j = 0; j < n; ++j) ds.item_orig_ids[j] = j + 1;
    ds.recompute_mean();
    return ds;
  }
  throw std::runtime_error(
      "generate_synthetic: could not draw a mask with every user and item "
      "rated; density too low");
}

Split split(const Dataset& ds, const SplitSpec& spec) {
  if (spec.train_fraction <= 0.0 || spec.train_fraction >= 1.0) {
    throw std::invalid_argument("train_fraction must be in (0, 1)");
  }
  std::size_t n = ds.records.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(spec.seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  auto train_count = static_cast<std::size_t>(
      std::floor(spec.train_fraction * static_cast<double>(n) + 0.5));
  std::vector<std::size_t> valid_indices(idx.begin() + train_count, idx.end());
  std::sort(valid_indices.begin(), valid_indices.end());
  return split_from_indices(ds, valid_indices);
}

Split split_from_indices(const Dataset& ds,
                         const std::vector<std::size_t>& valid_indices) {
  std::vector<char> is_valid(ds.records.size(), 0);
  for (auto i : valid_indices) {
    if (i >= ds.records.size()) {
      throw std::runtime_error("split index out of range");
    }
    is_valid[i] = 1;
  }
  Split out;
  out.valid_indices = valid_indices;
  for (Dataset* part : {&out.train, &out.valid}) {
    part->num_users = ds.num_users;
    part->num_items = ds.num_items;
    part->scale_min = ds.scale_min;
    part->scale_max = ds.scale_max;
    part->user_orig_ids = ds.user_orig_ids;
    part->item_orig_ids = ds.item_orig_ids;
  }
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    (is_valid[i] ? out.valid : out.train).records.push_back(ds.records[i]);
  }
  out.train.recompute_mean();
  out.valid.recompute_mean();
  return out;
}

void write_split_indices(const std::vector<std::size_t>& valid_indices,
                         const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (auto i : valid_indices) out << i << "\n";
}

std::vector<std::size_t> read_split_indices(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open split file: " + path);
  std::vector<std::size_t> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(std::stoull(line));
  }
  return out;
}

}  // namespace rec

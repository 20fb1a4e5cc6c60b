#pragma once

// Measurement toolkit for traces and streams: positive-proportion
// distributions, box statistics, empirical 1-D Wasserstein distances,
// rank correlation and CSV import/export.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pyrofocus/simulator.hpp"

namespace pyrofocus {

/// Per-level series of positive proportions, one entry per iteration.
/// Iterations with no samples are recorded as 0 and flagged.
struct LevelDistribution {
  int level = 0;
  std::vector<double> proportions;
  std::vector<std::uint8_t> empty_iter;

  bool any_empty() const {
    return std::any_of(empty_iter.begin(), empty_iter.end(),
                       [](std::uint8_t e) { return e != 0; });
  }
  /// True when the level never received a sample.
  bool degenerate() const {
    return !empty_iter.empty() &&
           std::all_of(empty_iter.begin(), empty_iter.end(),
                       [](std::uint8_t e) { return e != 0; });
  }
};

struct BoxStats {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  double mean = 0.0;
};

/// Quartiles by linear interpolation between closest ranks (type-7).
inline BoxStats box_stats(std::span<const double> series) {
  if (series.empty()) throw std::invalid_argument("box_stats of empty series");
  std::vector<double> s(series.begin(), series.end());
  std::sort(s.begin(), s.end());
  const auto quantile = [&s](double p) {
    const double h = p * static_cast<double>(s.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(h);
    if (lo + 1 >= s.size()) return s.back();
    return s[lo] + (h - static_cast<double>(lo)) * (s[lo + 1] - s[lo]);
  };
  BoxStats b;
  b.min = s.front();
  b.q1 = quantile(0.25);
  b.median = quantile(0.5);
  b.q3 = quantile(0.75);
  b.max = s.back();
  double sum = 0.0;
  for (double v : s) sum += v;
  b.mean = sum / static_cast<double>(s.size());
  return b;
}

/// 1-Wasserstein distance between empirical distributions: the integral of
/// |F_a - F_b| over the merged sorted breakpoints. Symmetric; zero iff the
/// multisets are equal. For equal-size inputs it coincides with the mean
/// absolute difference of sorted pairs.
inline double wasserstein_1d(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) {
    throw std::invalid_argument("wasserstein_1d requires nonempty inputs");
  }
  std::vector<double> sa(a.begin(), a.end());
  std::vector<double> sb(b.begin(), b.end());
  for (double v : sa) {
    if (!std::isfinite(v)) throw std::domain_error("wasserstein_1d: non-finite value");
  }
  for (double v : sb) {
    if (!std::isfinite(v)) throw std::domain_error("wasserstein_1d: non-finite value");
  }
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  std::vector<double> all;
  all.reserve(sa.size() + sb.size());
  std::merge(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(all));

  const double na = static_cast<double>(sa.size());
  const double nb = static_cast<double>(sb.size());
  double dist = 0.0;
  std::size_t ia = 0, ib = 0;
  for (std::size_t k = 0; k + 1 < all.size(); ++k) {
    while (ia < sa.size() && sa[ia] <= all[k]) ++ia;
    while (ib < sb.size() && sb[ib] <= all[k]) ++ib;
    const double fa = static_cast<double>(ia) / na;
    const double fb = static_cast<double>(ib) / nb;
    dist += std::fabs(fa - fb) * (all[k + 1] - all[k]);
  }
  return dist;
}

/// Spearman rank correlation with tie-averaged ranks. NaN when either series
/// is constant.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("spearman requires two equal-length series, n >= 2");
  }
  const auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    std::size_t i = 0;
    while (i < idx.size()) {
      std::size_t j = i;
      while (j < idx.size() && v[idx[j]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + 1 + j);
      for (std::size_t k = i; k < j; ++k) r[idx[k]] = avg;
      i = j;
    }
    return r;
  };
  const std::vector<double> rx = ranks(x);
  const std::vector<double> ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mx;
    const double dy = ry[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

/// Positive-proportion series per level, from a training trace.
inline std::vector<LevelDistribution> positive_proportions(const TrainingTrace& trace) {
  if (trace.iterations.empty()) {
    throw std::invalid_argument("positive_proportions of an empty trace");
  }
  const std::size_t L = trace.iterations.front().levels.size();
  std::vector<LevelDistribution> dists(L);
  for (std::size_t l = 0; l < L; ++l) dists[l].level = static_cast<int>(l);
  for (const IterationRecord& rec : trace.iterations) {
    for (std::size_t l = 0; l < L; ++l) {
      const LevelLossReport& rep = rec.levels[l];
      const bool empty = rep.n == 0;
      dists[l].proportions.push_back(
          empty ? 0.0
                : static_cast<double>(rep.n_pos) / static_cast<double>(rep.n));
      dists[l].empty_iter.push_back(empty ? 1 : 0);
    }
  }
  return dists;
}

struct BestLevelDistances {
  int best_level = 0;
  std::vector<double> distance;  // per level; 0 at the best level
};

/// Picks argmax(perf) as the reference level (ties to the lowest index) and
/// reports the Wasserstein distance from it to every level.
inline BestLevelDistances best_level_distances(
    std::span<const LevelDistribution> dists, std::span<const double> perf) {
  if (dists.empty() || perf.size() != dists.size()) {
    throw std::invalid_argument("best_level_distances: perf must score every level");
  }
  const std::size_t best = static_cast<std::size_t>(
      std::max_element(perf.begin(), perf.end()) - perf.begin());
  BestLevelDistances out;
  out.best_level = dists[best].level;
  out.distance.reserve(dists.size());
  for (const LevelDistribution& d : dists) {
    out.distance.push_back(
        wasserstein_1d(dists[best].proportions, d.proportions));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trace table and CSV schema
// ---------------------------------------------------------------------------

struct TraceRow {
  int iter = 0;
  int level = 0;
  std::size_t n = 0;
  std::size_t n_pos = 0;
  double pos_prop = 0.0;
  double gamma_raw = 0.0;
  double gamma_ad = 0.0;
  double alpha_ad = 0.0;
  double loss_sum = 0.0;
  double loss_mean = 0.0;
  double hard_share = 0.0;

  bool operator==(const TraceRow&) const = default;
};

struct TraceTable {
  std::vector<TraceRow> rows;

  int num_levels() const {
    int L = 0;
    for (const TraceRow& r : rows) L = std::max(L, r.level + 1);
    return L;
  }

  bool operator==(const TraceTable&) const = default;
};

inline constexpr const char* kTraceHeader =
    "iter,level,n,n_pos,pos_prop,gamma_raw,gamma_ad,alpha_ad,loss_sum,loss_mean,hard_share";
inline constexpr const char* kSummaryHeader =
    "level,min,q1,median,q3,max,mean,d_was_to_best";

inline TraceTable to_table(const TrainingTrace& trace) {
  TraceTable table;
  for (const IterationRecord& rec : trace.iterations) {
    for (std::size_t l = 0; l < rec.levels.size(); ++l) {
      const LevelLossReport& rep = rec.levels[l];
      TraceRow row;
      row.iter = rec.iter;
      row.level = rep.level;
      row.n = rep.n;
      row.n_pos = rep.n_pos;
      row.pos_prop = rep.n == 0 ? 0.0
                                : static_cast<double>(rep.n_pos) /
                                      static_cast<double>(rep.n);
      row.gamma_raw = rep.snapshot.gamma_raw;
      row.gamma_ad = rep.snapshot.gamma_clamped;
      row.alpha_ad = rep.snapshot.alpha;
      row.loss_sum = rep.loss_sum;
      row.loss_mean = rep.loss_mean;
      row.hard_share =
          rep.loss_sum > 0.0 ? rec.level_hard_mass[l] / rep.loss_sum : 0.0;
      table.rows.push_back(row);
    }
  }
  return table;
}

/// Positive-proportion series per level, from a stored table.
inline std::vector<LevelDistribution> positive_proportions(const TraceTable& table) {
  if (table.rows.empty()) {
    throw std::invalid_argument("positive_proportions of an empty table");
  }
  const int L = table.num_levels();
  std::vector<LevelDistribution> dists(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) dists[static_cast<std::size_t>(l)].level = l;
  for (const TraceRow& row : table.rows) {
    auto& d = dists[static_cast<std::size_t>(row.level)];
    d.proportions.push_back(row.pos_prop);
    d.empty_iter.push_back(row.n == 0 ? 1 : 0);
  }
  return dists;
}

/// Global hard-share series reconstructed from per-level rows
/// (sum of hard masses over sum of loss masses, per iteration).
inline std::vector<double> drift_curve(const TraceTable& table) {
  std::vector<double> hard, total;
  for (const TraceRow& row : table.rows) {
    const std::size_t i = static_cast<std::size_t>(row.iter);
    if (i >= hard.size()) {
      hard.resize(i + 1, 0.0);
      total.resize(i + 1, 0.0);
    }
    hard[i] += row.hard_share * row.loss_sum;
    total[i] += row.loss_sum;
  }
  std::vector<double> out(hard.size(), 0.0);
  for (std::size_t i = 0; i < hard.size(); ++i) {
    if (total[i] > 0.0) out[i] = hard[i] / total[i];
  }
  return out;
}

/// Global gamma_raw series: -log of the n_pos-weighted mean positive
/// probability per iteration. Iterations without positives are skipped.
inline std::vector<std::pair<int, double>> global_gamma_raw_series(
    const TraceTable& table) {
  std::vector<double> wsum, npos;
  int max_iter = -1;
  for (const TraceRow& row : table.rows) {
    const std::size_t i = static_cast<std::size_t>(row.iter);
    if (i >= wsum.size()) {
      wsum.resize(i + 1, 0.0);
      npos.resize(i + 1, 0.0);
    }
    if (row.n_pos > 0) {
      wsum[i] += static_cast<double>(row.n_pos) * std::exp(-row.gamma_raw);
      npos[i] += static_cast<double>(row.n_pos);
    }
    max_iter = std::max(max_iter, row.iter);
  }
  std::vector<std::pair<int, double>> out;
  for (int i = 0; i <= max_iter; ++i) {
    const std::size_t u = static_cast<std::size_t>(i);
    if (npos[u] > 0.0) out.emplace_back(i, -std::log(wsum[u] / npos[u]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV io
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

inline void check_header(const std::string& got, const char* expected,
                         const std::string& path) {
  if (got == expected) return;
  const auto want = split_csv_line(expected);
  const auto have = split_csv_line(got);
  for (const std::string& col : want) {
    if (std::find(have.begin(), have.end(), col) == have.end()) {
      throw std::runtime_error(path + ": missing column '" + col + "'");
    }
  }
  throw std::runtime_error(path + ": unexpected column order or extra columns");
}

inline double parse_double(const std::string& s, const std::string& path,
                           std::size_t lineno) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') {
    throw std::runtime_error(path + ":" + std::to_string(lineno) +
                             ": not a number: '" + s + "'");
  }
  return v;
}

}  // namespace detail

inline void write_trace_csv(const TraceTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << kTraceHeader << '\n';
  for (const TraceRow& r : table.rows) {
    out << r.iter << ',' << r.level << ',' << r.n << ',' << r.n_pos << ','
        << detail::format_double(r.pos_prop) << ','
        << detail::format_double(r.gamma_raw) << ','
        << detail::format_double(r.gamma_ad) << ','
        << detail::format_double(r.alpha_ad) << ','
        << detail::format_double(r.loss_sum) << ','
        << detail::format_double(r.loss_mean) << ','
        << detail::format_double(r.hard_share) << '\n';
  }
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

inline void write_trace_csv(const TrainingTrace& trace, const std::string& path) {
  write_trace_csv(to_table(trace), path);
}

inline TraceTable read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error(path + ": empty file, expected header");
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  detail::check_header(line, kTraceHeader, path);

  TraceTable table;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 11) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected 11 fields, got " +
                               std::to_string(f.size()));
    }
    TraceRow r;
    r.iter = static_cast<int>(detail::parse_double(f[0], path, lineno));
    r.level = static_cast<int>(detail::parse_double(f[1], path, lineno));
    r.n = static_cast<std::size_t>(detail::parse_double(f[2], path, lineno));
    r.n_pos = static_cast<std::size_t>(detail::parse_double(f[3], path, lineno));
    r.pos_prop = detail::parse_double(f[4], path, lineno);
    r.gamma_raw = detail::parse_double(f[5], path, lineno);
    r.gamma_ad = detail::parse_double(f[6], path, lineno);
    r.alpha_ad = detail::parse_double(f[7], path, lineno);
    r.loss_sum = detail::parse_double(f[8], path, lineno);
    r.loss_mean = detail::parse_double(f[9], path, lineno);
    r.hard_share = detail::parse_double(f[10], path, lineno);
    table.rows.push_back(r);
  }
  return table;
}

struct SummaryRow {
  int level = 0;
  BoxStats stats;
  double d_was_to_best = 0.0;
};

inline void write_summary_csv(std::span<const SummaryRow> rows,
                              const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << kSummaryHeader << '\n';
  for (const SummaryRow& r : rows) {
    out << r.level << ',' << detail::format_double(r.stats.min) << ','
        << detail::format_double(r.stats.q1) << ','
        << detail::format_double(r.stats.median) << ','
        << detail::format_double(r.stats.q3) << ','
        << detail::format_double(r.stats.max) << ','
        << detail::format_double(r.stats.mean) << ','
        << detail::format_double(r.d_was_to_best) << '\n';
  }
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

inline void write_drift_csv(std::span<const double> curve, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "iter,hard_share\n";
  for (std::size_t i = 0; i < curve.size(); ++i) {
    out << i << ',' << detail::format_double(curve[i]) << '\n';
  }
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace pyrofocus

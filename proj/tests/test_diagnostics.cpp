#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "pyrofocus/diagnostics.hpp"

using namespace pyrofocus;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::mt19937_64 g_rng(31);

std::vector<double> random_series(std::size_t n, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> out(n);
  for (double& v : out) v = d(g_rng);
  return out;
}

// Brute-force type-7 quantile: sort, then index arithmetic. Written
// independently of box_stats.
double quantile_oracle(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  return v[lo] + (pos - std::floor(pos)) * (v[hi] - v[lo]);
}

// Equal-size Wasserstein oracle: mean absolute difference of sorted pairs.
double sorted_pairing_oracle(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::fabs(a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

TrainingTrace tiny_trace() {
  StreamConfig stream;
  stream.num_levels = 2;
  stream.positive_rate = {0.05, 0.35};
  stream.hard_fraction = {0.2, 0.2};
  stream.samples_per_iter = 120;
  stream.seed = 9;
  FocusConfig focus;
  focus.num_levels = 2;
  TrainOptions opt;
  opt.iters = 25;
  opt.eval_samples_per_level = 200;
  return train(stream, focus, opt);
}

}  // namespace

TEST_CASE("box_stats") {
  SECTION("constant series") {
    const std::vector<double> c(7, 0.42);
    const BoxStats b = box_stats(c);
    REQUIRE(b.min == 0.42);
    REQUIRE(b.q1 == 0.42);
    REQUIRE(b.median == 0.42);
    REQUIRE(b.q3 == 0.42);
    REQUIRE(b.max == 0.42);
    REQUIRE_THAT(b.mean, WithinAbs(0.42, 1e-15));
  }

  SECTION("textbook case {1..5}") {
    const std::vector<double> v{5.0, 3.0, 1.0, 2.0, 4.0};
    const BoxStats b = box_stats(v);
    REQUIRE(b.min == 1.0);
    REQUIRE(b.q1 == 2.0);
    REQUIRE(b.median == 3.0);
    REQUIRE(b.q3 == 4.0);
    REQUIRE(b.max == 5.0);
    REQUIRE(b.mean == 3.0);
  }

  SECTION("random series against the sort-and-index oracle") {
    for (int n : {1, 2, 3, 10, 101}) {
      const auto v = random_series(static_cast<std::size_t>(n), -3.0, 7.0);
      const BoxStats b = box_stats(v);
      REQUIRE(b.q1 == quantile_oracle(v, 0.25));
      REQUIRE(b.median == quantile_oracle(v, 0.5));
      REQUIRE(b.q3 == quantile_oracle(v, 0.75));
      REQUIRE(b.min <= b.q1);
      REQUIRE(b.q1 <= b.median);
      REQUIRE(b.median <= b.q3);
      REQUIRE(b.q3 <= b.max);
    }
  }

  SECTION("empty series") {
    REQUIRE_THROWS_AS(box_stats(std::vector<double>{}), std::invalid_argument);
  }
}

TEST_CASE("wasserstein_1d") {
  SECTION("identity") {
    const auto a = random_series(17);
    REQUIRE(wasserstein_1d(a, a) == 0.0);
    auto shuffled = a;
    std::shuffle(shuffled.begin(), shuffled.end(), g_rng);
    REQUIRE(wasserstein_1d(a, shuffled) == 0.0);
  }

  SECTION("point-mass translation") {
    const std::vector<double> a{0.0};
    const std::vector<double> b{1.0};
    REQUIRE(wasserstein_1d(a, b) == 1.0);
  }

  SECTION("hand case") {
    const std::vector<double> a{0.1, 0.3};
    const std::vector<double> b{0.2, 0.4};
    REQUIRE_THAT(wasserstein_1d(a, b), WithinAbs(0.1, 1e-15));
  }

  SECTION("equal sizes match the sorted-pairing oracle") {
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 1 + static_cast<std::size_t>(trial % 64);
      const auto a = random_series(n, -5.0, 5.0);
      const auto b = random_series(n, -2.0, 9.0);
      const double w = wasserstein_1d(a, b);
      REQUIRE_THAT(w, WithinAbs(sorted_pairing_oracle(a, b),
                                1e-12 * std::max(1.0, w)));
    }
  }

  SECTION("symmetry and triangle inequality") {
    for (int trial = 0; trial < 100; ++trial) {
      const auto a = random_series(1 + static_cast<std::size_t>(trial % 13));
      const auto b = random_series(1 + static_cast<std::size_t>((trial * 7) % 17));
      const auto c = random_series(1 + static_cast<std::size_t>((trial * 3) % 11));
      REQUIRE_THAT(wasserstein_1d(a, b), WithinAbs(wasserstein_1d(b, a), 1e-12));
      REQUIRE(wasserstein_1d(a, c) <=
              wasserstein_1d(a, b) + wasserstein_1d(b, c) + 1e-9);
    }
  }

  SECTION("scale equivariance") {
    const auto a = random_series(23);
    const auto b = random_series(31);
    const double w = wasserstein_1d(a, b);
    for (double k : {2.0, -3.0, 0.25}) {
      auto ka = a;
      auto kb = b;
      for (double& v : ka) v *= k;
      for (double& v : kb) v *= k;
      REQUIRE_THAT(wasserstein_1d(ka, kb), WithinRel(std::fabs(k) * w, 1e-9));
    }
  }

  SECTION("errors") {
    const std::vector<double> empty;
    const std::vector<double> one{1.0};
    REQUIRE_THROWS_AS(wasserstein_1d(empty, one), std::invalid_argument);
    REQUIRE_THROWS_AS(wasserstein_1d(one, empty), std::invalid_argument);
    const std::vector<double> bad{std::numeric_limits<double>::infinity()};
    REQUIRE_THROWS_AS(wasserstein_1d(bad, one), std::domain_error);
  }
}

TEST_CASE("spearman") {
  const std::vector<double> x{1, 2, 3, 4, 5};
  const std::vector<double> up{2, 4, 9, 11, 30};
  const std::vector<double> dn{5, 3, 2, 1, 0};
  REQUIRE_THAT(spearman(x, up), WithinAbs(1.0, 1e-12));
  REQUIRE_THAT(spearman(x, dn), WithinAbs(-1.0, 1e-12));
  const std::vector<double> flat{1, 1, 1, 1, 1};
  REQUIRE(std::isnan(spearman(x, flat)));
  // ties are rank-averaged
  const std::vector<double> tied{1, 2, 2, 3, 4};
  REQUIRE(spearman(x, tied) > 0.9);
  REQUIRE_THROWS_AS(spearman(x, std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("positive_proportions") {
  const TrainingTrace trace = tiny_trace();
  const auto dists = positive_proportions(trace);
  REQUIRE(dists.size() == 2);
  for (const auto& d : dists) {
    REQUIRE(d.proportions.size() == trace.iterations.size());
    REQUIRE_FALSE(d.degenerate());
  }
  // the richer level has the larger mean proportion
  const auto mean = [](const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc / static_cast<double>(v.size());
  };
  REQUIRE(mean(dists[1].proportions) > mean(dists[0].proportions));
  // rate 0.35 with n=120: mean proportion lands within 3 sigma
  REQUIRE_THAT(mean(dists[1].proportions), WithinAbs(0.35, 3.0 * 0.0436));

  // hand-built record with an empty level gets flagged
  TrainingTrace empty_level;
  IterationRecord rec;
  rec.levels.resize(2);
  rec.levels[0].level = 0;
  rec.levels[1].level = 1;
  rec.levels[1].n = 4;
  rec.levels[1].n_pos = 1;
  rec.level_hard_mass = {0.0, 0.0};
  empty_level.iterations.push_back(rec);
  const auto flagged = positive_proportions(empty_level);
  REQUIRE(flagged[0].degenerate());
  REQUIRE(flagged[0].proportions[0] == 0.0);
  REQUIRE_FALSE(flagged[1].any_empty());
}

TEST_CASE("best_level_distances") {
  LevelDistribution d0{0, {0.1, 0.1, 0.1}, {0, 0, 0}};
  LevelDistribution d1{1, {0.1, 0.1, 0.1}, {0, 0, 0}};

  SECTION("identical distributions: all distances zero") {
    const std::vector<LevelDistribution> dists{d0, d1};
    const std::vector<double> perf{0.3, 0.5};
    const auto out = best_level_distances(dists, perf);
    REQUIRE(out.best_level == 1);
    REQUIRE(out.distance[0] == 0.0);
    REQUIRE(out.distance[1] == 0.0);
  }

  SECTION("ties break to the lowest level index") {
    const std::vector<LevelDistribution> dists{d0, d1};
    const std::vector<double> perf{0.4, 0.4};
    REQUIRE(best_level_distances(dists, perf).best_level == 0);
  }

  SECTION("divergent rates yield positive distances") {
    LevelDistribution lo{0, {0.02, 0.03, 0.05}, {0, 0, 0}};
    LevelDistribution hi{1, {0.30, 0.40, 0.35}, {0, 0, 0}};
    const std::vector<LevelDistribution> dists{lo, hi};
    const std::vector<double> perf{0.2, 0.6};
    const auto out = best_level_distances(dists, perf);
    REQUIRE(out.distance[0] > 0.0);
  }

  SECTION("perf length must match") {
    const std::vector<LevelDistribution> dists{d0, d1};
    const std::vector<double> perf{0.4};
    REQUIRE_THROWS_AS(best_level_distances(dists, perf), std::invalid_argument);
  }
}

TEST_CASE("trace CSV round trip") {
  const TrainingTrace trace = tiny_trace();
  const TraceTable table = to_table(trace);
  const std::string path = temp_path("pyrofocus_trace_roundtrip.csv");
  write_trace_csv(table, path);
  const TraceTable back = read_trace_csv(path);
  REQUIRE(back == table);  // %.17g round-trips doubles exactly
  std::remove(path.c_str());
}

TEST_CASE("empty table writes a header-only file") {
  const std::string path = temp_path("pyrofocus_trace_empty.csv");
  write_trace_csv(TraceTable{}, path);
  std::ifstream in(path);
  std::string line;
  REQUIRE(std::getline(in, line));
  REQUIRE(line == kTraceHeader);
  REQUIRE_FALSE(std::getline(in, line));
  REQUIRE(read_trace_csv(path).rows.empty());
  std::remove(path.c_str());
}

TEST_CASE("trace CSV schema errors") {
  const std::string path = temp_path("pyrofocus_trace_bad.csv");
  {
    std::ofstream out(path);
    out << "iter,level,n,n_pos,pos_prop,gamma_raw,gamma_ad,alpha_ad,loss_sum,loss_mean\n";
  }
  try {
    read_trace_csv(path);
    FAIL("expected schema error");
  } catch (const std::runtime_error& e) {
    REQUIRE(std::string(e.what()).find("hard_share") != std::string::npos);
  }
  {
    std::ofstream out(path);
    out << kTraceHeader << "\n0,0,1,1,x,0,0,0,0,0,0\n";
  }
  REQUIRE_THROWS_AS(read_trace_csv(path), std::runtime_error);
  REQUIRE_THROWS_AS(read_trace_csv(temp_path("does_not_exist.csv")),
                    std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("drift and gamma series reconstruction from the table") {
  const TrainingTrace trace = tiny_trace();
  const TraceTable table = to_table(trace);

  const auto rebuilt = drift_curve(table);
  const auto recorded = drift_curve(trace);
  REQUIRE(rebuilt.size() == recorded.size());
  for (std::size_t i = 0; i < rebuilt.size(); ++i) {
    REQUIRE_THAT(rebuilt[i], WithinAbs(recorded[i], 1e-12));
  }

  const auto series = global_gamma_raw_series(table);
  REQUIRE_FALSE(series.empty());
  for (const auto& [iter, g] : series) {
    REQUIRE(std::isfinite(g));
    REQUIRE(g >= 0.0);
  }
}

TEST_CASE("summary CSV") {
  const std::vector<SummaryRow> rows{
      {0, BoxStats{0.0, 0.1, 0.2, 0.3, 0.4, 0.2}, 0.0},
      {1, BoxStats{0.1, 0.2, 0.3, 0.4, 0.5, 0.3}, 0.07},
  };
  const std::string path = temp_path("pyrofocus_summary.csv");
  write_summary_csv(rows, path);
  std::ifstream in(path);
  std::string line;
  REQUIRE(std::getline(in, line));
  REQUIRE(line == kSummaryHeader);
  int data_rows = 0;
  while (std::getline(in, line)) ++data_rows;
  REQUIRE(data_rows == 2);
  std::remove(path.c_str());
}

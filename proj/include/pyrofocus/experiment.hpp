#pragma once

// Experiment specs and runners behind the CLI. Specs are versioned JSON
// documents; unknown or ill-typed fields are rejected with the offending
// field named. Precedence: command-line overrides beat spec-file values beat
// defaults.

#include <filesystem>
#include <fstream>
#include <future>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pyrofocus/diagnostics.hpp"
#include "pyrofocus/simulator.hpp"

namespace pyrofocus {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "fl") return LossKind::FL;
  if (s == "hpf") return LossKind::HPF;
  if (s == "pfqfl") return LossKind::PF_QFL;
  if (s == "pfvfl") return LossKind::PF_VFL;
  throw ConfigError("unknown loss '" + s + "' (expected fl|hpf|pfqfl|pfvfl)");
}

inline SamplingMode parse_sampling_mode(const std::string& s) {
  if (s == "all-level") return SamplingMode::AllLevel;
  if (s == "level-wise") return SamplingMode::LevelWise;
  if (s == "per-sample") return SamplingMode::PerSample;
  throw ConfigError("unknown mode '" + s +
                    "' (expected all-level|level-wise|per-sample)");
}

struct ArmSpec {
  std::string name;
  FocusConfig focus;
};

struct ExperimentSpec {
  std::string name = "experiment";
  StreamConfig stream;
  FocusConfig focus;
  TrainOptions opt;
  std::string out_dir = "out";
  std::vector<ArmSpec> arms;  // empty: single-arm experiment using `focus`

  void validate() const {
    if (name.empty()) throw ConfigError("experiment name must be nonempty");
    stream.validate();
    focus.validate();
    opt.validate();
    for (const ArmSpec& a : arms) {
      if (a.name.empty()) throw ConfigError("arm name must be nonempty");
      a.focus.validate();
    }
  }

  std::vector<ArmSpec> effective_arms() const {
    if (!arms.empty()) return arms;
    return {ArmSpec{std::string(to_string(focus.loss_kind)) + "-" +
                        to_string(focus.sampling_mode),
                    focus}};
  }
};

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& j, std::initializer_list<const char*> allowed,
                           const std::string& ctx) {
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) {
      if (key == a) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError("unknown field '" + ctx + key + "'");
  }
}

template <typename T>
inline T get_as(const json& j, const char* key, const std::string& ctx) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("field '" + ctx + key + "' has the wrong type");
  }
}

template <typename T>
inline void read_opt(const json& j, const char* key, T& out, const std::string& ctx) {
  if (j.contains(key)) out = get_as<T>(j, key, ctx);
}

inline std::vector<double> read_per_level(const json& j, const char* key,
                                          int num_levels,
                                          const std::vector<double>& fallback,
                                          const std::string& ctx) {
  if (!j.contains(key)) {
    return fallback;
  }
  const json& v = j.at(key);
  std::vector<double> out;
  if (v.is_number()) {
    out.assign(static_cast<std::size_t>(num_levels), v.get<double>());
  } else if (v.is_array()) {
    for (const json& e : v) {
      if (!e.is_number()) {
        throw ConfigError("field '" + ctx + key + "' must contain numbers");
      }
      out.push_back(e.get<double>());
    }
  } else {
    throw ConfigError("field '" + ctx + key + "' must be a number or an array");
  }
  return out;
}

inline void parse_focus_fields(const json& j, FocusConfig& f, const std::string& ctx) {
  read_opt(j, "alpha", f.alpha_base, ctx);
  read_opt(j, "gamma", f.gamma_base, ctx);
  read_opt(j, "w", f.w, ctx);
  read_opt(j, "delta", f.delta, ctx);
  if (j.contains("mode")) {
    f.sampling_mode = parse_sampling_mode(get_as<std::string>(j, "mode", ctx));
  }
  if (j.contains("loss")) {
    f.loss_kind = parse_loss_kind(get_as<std::string>(j, "loss", ctx));
  }
}

}  // namespace detail

/// Parses a versioned JSON experiment spec (see README for the schema).
inline ExperimentSpec parse_spec(const std::string& text,
                                 const std::string& origin = "spec") {
  using detail::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(origin + ": spec must be a JSON object");
  detail::reject_unknown(j,
                         {"schema_version", "name", "seed", "out_dir", "t",
                          "stream", "focus", "optimizer", "arms"},
                         "");
  if (!j.contains("schema_version")) {
    throw ConfigError(origin + ": missing field 'schema_version'");
  }
  if (detail::get_as<int>(j, "schema_version", "") != 1) {
    throw ConfigError(origin + ": unsupported schema_version (expected 1)");
  }

  ExperimentSpec spec;
  detail::read_opt(j, "name", spec.name, "");
  detail::read_opt(j, "out_dir", spec.out_dir, "");
  if (j.contains("seed")) {
    spec.stream.seed = detail::get_as<std::uint64_t>(j, "seed", "");
  }
  if (j.contains("t")) {
    const json& t = j.at("t");
    if (t.is_string() && t.get<std::string>() == "auto") {
      spec.opt.drift_threshold = std::numeric_limits<double>::quiet_NaN();
    } else if (t.is_number()) {
      spec.opt.drift_threshold = t.get<double>();
    } else {
      throw ConfigError("field 't' must be a number or \"auto\"");
    }
  }

  if (j.contains("stream")) {
    const json& s = j.at("stream");
    if (!s.is_object()) throw ConfigError("field 'stream' must be an object");
    detail::reject_unknown(s,
                           {"levels", "positive_rate", "hard_fraction",
                            "samples_per_iter", "feature_dim", "noise_scale",
                            "easy_margin", "hard_margin", "init_scale", "bias_init"},
                           "stream.");
    detail::read_opt(s, "levels", spec.stream.num_levels, "stream.");
    spec.stream.positive_rate =
        detail::read_per_level(s, "positive_rate", spec.stream.num_levels,
                               spec.stream.positive_rate, "stream.");
    spec.stream.hard_fraction =
        detail::read_per_level(s, "hard_fraction", spec.stream.num_levels,
                               spec.stream.hard_fraction, "stream.");
    detail::read_opt(s, "samples_per_iter", spec.stream.samples_per_iter, "stream.");
    detail::read_opt(s, "feature_dim", spec.stream.feature_dim, "stream.");
    detail::read_opt(s, "noise_scale", spec.stream.noise_scale, "stream.");
    detail::read_opt(s, "easy_margin", spec.stream.easy_margin, "stream.");
    detail::read_opt(s, "hard_margin", spec.stream.hard_margin, "stream.");
    detail::read_opt(s, "init_scale", spec.stream.init_scale, "stream.");
    detail::read_opt(s, "bias_init", spec.stream.bias_init, "stream.");
    // Broadcast defaults if 'levels' changed but the lists were not given.
    if (spec.stream.positive_rate.size() !=
            static_cast<std::size_t>(spec.stream.num_levels) &&
        !s.contains("positive_rate")) {
      throw ConfigError("field 'stream.positive_rate' must list one rate per level");
    }
    if (spec.stream.hard_fraction.size() !=
            static_cast<std::size_t>(spec.stream.num_levels) &&
        !s.contains("hard_fraction")) {
      spec.stream.hard_fraction.assign(
          static_cast<std::size_t>(spec.stream.num_levels),
          spec.stream.hard_fraction.front());
    }
  }
  spec.focus.num_levels = spec.stream.num_levels;

  if (j.contains("focus")) {
    const json& f = j.at("focus");
    if (!f.is_object()) throw ConfigError("field 'focus' must be an object");
    detail::reject_unknown(f, {"alpha", "gamma", "w", "delta", "mode", "loss"},
                           "focus.");
    detail::parse_focus_fields(f, spec.focus, "focus.");
  }

  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    if (!o.is_object()) throw ConfigError("field 'optimizer' must be an object");
    detail::reject_unknown(o,
                           {"lr", "iters", "decay_factor", "decay_at",
                            "eval_samples_per_level"},
                           "optimizer.");
    detail::read_opt(o, "lr", spec.opt.lr, "optimizer.");
    detail::read_opt(o, "iters", spec.opt.iters, "optimizer.");
    detail::read_opt(o, "decay_factor", spec.opt.decay_factor, "optimizer.");
    detail::read_opt(o, "decay_at", spec.opt.decay_at, "optimizer.");
    detail::read_opt(o, "eval_samples_per_level", spec.opt.eval_samples_per_level,
                     "optimizer.");
  }

  if (j.contains("arms")) {
    const json& arms = j.at("arms");
    if (!arms.is_array()) throw ConfigError("field 'arms' must be an array");
    for (const json& a : arms) {
      if (!a.is_object()) throw ConfigError("arm entries must be objects");
      detail::reject_unknown(a, {"name", "alpha", "gamma", "w", "delta", "mode", "loss"},
                             "arms[].");
      ArmSpec arm;
      arm.focus = spec.focus;
      if (!a.contains("name")) throw ConfigError("missing field 'arms[].name'");
      arm.name = detail::get_as<std::string>(a, "name", "arms[].");
      detail::parse_focus_fields(a, arm.focus, "arms[].");
      spec.arms.push_back(std::move(arm));
    }
  }
  return spec;
}

inline ExperimentSpec load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open spec file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_spec(buf.str(), path);
}

/// Command-line values; set fields win over spec-file values.
struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> iters;
  std::optional<double> lr, w, delta, gamma, alpha, t;
  std::optional<std::string> mode, loss, out;
};

inline void apply_overrides(ExperimentSpec& spec, const CliOverrides& o) {
  if (o.seed) spec.stream.seed = *o.seed;
  if (o.iters) spec.opt.iters = *o.iters;
  if (o.lr) spec.opt.lr = *o.lr;
  if (o.t) spec.opt.drift_threshold = *o.t;
  if (o.out) spec.out_dir = *o.out;
  const auto patch_focus = [&o](FocusConfig& f) {
    if (o.w) f.w = *o.w;
    if (o.delta) f.delta = *o.delta;
    if (o.gamma) f.gamma_base = *o.gamma;
    if (o.alpha) f.alpha_base = *o.alpha;
    if (o.mode) f.sampling_mode = parse_sampling_mode(*o.mode);
    if (o.loss) f.loss_kind = parse_loss_kind(*o.loss);
  };
  patch_focus(spec.focus);
  for (ArmSpec& a : spec.arms) {
    if (o.w) a.focus.w = *o.w;
    if (o.delta) a.focus.delta = *o.delta;
    if (o.gamma) a.focus.gamma_base = *o.gamma;
    if (o.alpha) a.focus.alpha_base = *o.alpha;
    if (o.mode) a.focus.sampling_mode = parse_sampling_mode(*o.mode);
  }
}

// ---------------------------------------------------------------------------
// Runners
// ---------------------------------------------------------------------------

namespace detail {

/// Per-level performance proxy for best-level selection: tail-window mean
/// positive probability, recovered from gamma_raw. Works identically on live
/// traces and re-imported CSVs, which keeps diagnose idempotent.
inline std::vector<double> level_perf_proxy(const TraceTable& table) {
  int max_iter = 0;
  for (const TraceRow& r : table.rows) max_iter = std::max(max_iter, r.iter);
  const int cutoff = max_iter - std::max(0, (max_iter + 1) / 10 - 1);
  const int L = table.num_levels();
  std::vector<double> sum(static_cast<std::size_t>(L), 0.0);
  std::vector<double> cnt(static_cast<std::size_t>(L), 0.0);
  for (const TraceRow& r : table.rows) {
    if (r.iter < cutoff || r.n_pos == 0) continue;
    sum[static_cast<std::size_t>(r.level)] += std::exp(-r.gamma_raw);
    cnt[static_cast<std::size_t>(r.level)] += 1.0;
  }
  std::vector<double> perf(static_cast<std::size_t>(L), 0.0);
  for (int l = 0; l < L; ++l) {
    const std::size_t u = static_cast<std::size_t>(l);
    if (cnt[u] > 0.0) perf[u] = sum[u] / cnt[u];
  }
  return perf;
}

inline std::size_t tail_window(std::size_t n) { return std::max<std::size_t>(1, n / 10); }

}  // namespace detail

/// Box statistics of the per-level positive proportions plus the Wasserstein
/// distance from the best level (by the tail positive-probability proxy).
inline std::vector<SummaryRow> summarize_table(const TraceTable& table) {
  const auto dists = positive_proportions(table);
  const auto perf = detail::level_perf_proxy(table);
  const auto best = best_level_distances(dists, perf);
  std::vector<SummaryRow> rows;
  rows.reserve(dists.size());
  for (std::size_t l = 0; l < dists.size(); ++l) {
    SummaryRow row;
    row.level = dists[l].level;
    row.stats = box_stats(dists[l].proportions);
    row.d_was_to_best = best.distance[l];
    rows.push_back(row);
  }
  return rows;
}

struct ComparisonRow {
  std::string arm;
  LossKind loss = LossKind::FL;
  SamplingMode mode = SamplingMode::LevelWise;
  double final_loss = 0.0;
  double final_accuracy = 0.0;
  double tail_hard_share = 0.0;
  double mean_gamma_ad = 0.0;
};

inline ComparisonRow comparison_row(const std::string& arm, const FocusConfig& focus,
                                    const TrainingTrace& trace) {
  ComparisonRow row;
  row.arm = arm;
  row.loss = focus.loss_kind;
  row.mode = focus.sampling_mode;
  row.final_loss = trace.final_loss;
  row.final_accuracy = trace.final_accuracy;
  const std::size_t window = detail::tail_window(trace.iterations.size());
  double share = 0.0;
  for (std::size_t i = trace.iterations.size() - window; i < trace.iterations.size();
       ++i) {
    share += trace.iterations[i].hard_share;
  }
  row.tail_hard_share = share / static_cast<double>(window);
  double gsum = 0.0;
  std::size_t gcnt = 0;
  for (const IterationRecord& rec : trace.iterations) {
    for (const LevelLossReport& rep : rec.levels) {
      gsum += rep.snapshot.gamma_clamped;
      ++gcnt;
    }
  }
  row.mean_gamma_ad = gcnt > 0 ? gsum / static_cast<double>(gcnt) : 0.0;
  return row;
}

inline void write_comparison_csv(std::span<const ComparisonRow> rows,
                                 const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "arm,loss,mode,final_loss,final_accuracy,tail_hard_share,mean_gamma_ad\n";
  for (const ComparisonRow& r : rows) {
    out << r.arm << ',' << to_string(r.loss) << ',' << to_string(r.mode) << ','
        << detail::format_double(r.final_loss) << ','
        << detail::format_double(r.final_accuracy) << ','
        << detail::format_double(r.tail_hard_share) << ','
        << detail::format_double(r.mean_gamma_ad) << '\n';
  }
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

namespace detail {

inline std::string out_path(const ExperimentSpec& spec, const std::string& stem) {
  return (std::filesystem::path(spec.out_dir) / (spec.name + "_" + stem)).string();
}

inline void print_summary_line(std::ostream& os, const std::string& name,
                               const TrainingTrace& trace) {
  os << name << ": final_loss=" << trace.final_loss
     << " final_accuracy=" << trace.final_accuracy << " level_accuracy=[";
  for (std::size_t l = 0; l < trace.final_eval.size(); ++l) {
    os << (l ? " " : "") << trace.final_eval[l].accuracy;
  }
  os << "] mean_gamma_ad=[";
  std::vector<double> gsum(trace.final_eval.size(), 0.0);
  for (const IterationRecord& rec : trace.iterations) {
    for (std::size_t l = 0; l < rec.levels.size(); ++l) {
      gsum[l] += rec.levels[l].snapshot.gamma_clamped;
    }
  }
  for (std::size_t l = 0; l < gsum.size(); ++l) {
    os << (l ? " " : "") << gsum[l] / static_cast<double>(trace.iterations.size());
  }
  os << "]\n";
}

}  // namespace detail

/// Trains one arm and writes <name>_trace.csv, <name>_summary.csv and
/// <name>_drift.csv under spec.out_dir.
inline TrainingTrace run_train(const ExperimentSpec& spec, std::ostream& log) {
  spec.validate();
  std::filesystem::create_directories(spec.out_dir);
  const TrainingTrace trace = train(spec.stream, spec.focus, spec.opt);
  const TraceTable table = to_table(trace);
  write_trace_csv(table, detail::out_path(spec, "trace.csv"));
  write_summary_csv(summarize_table(table), detail::out_path(spec, "summary.csv"));
  write_drift_csv(drift_curve(table), detail::out_path(spec, "drift.csv"));
  detail::print_summary_line(log, spec.name, trace);
  return trace;
}

/// Runs every arm on the identical seeded stream (in parallel), sharing the
/// hard-case threshold resolved from the first arm when t is auto. Writes
/// per-arm trace CSVs plus <name>_comparison.csv.
inline std::vector<ComparisonRow> run_compare(const ExperimentSpec& spec,
                                              std::ostream& log) {
  spec.validate();
  std::filesystem::create_directories(spec.out_dir);
  const std::vector<ArmSpec> arms = spec.effective_arms();

  TrainOptions opt = spec.opt;
  if (std::isnan(opt.drift_threshold)) {
    opt.drift_threshold = resolve_drift_threshold(spec.stream, arms.front().focus);
  }

  std::vector<std::future<TrainingTrace>> futures;
  futures.reserve(arms.size());
  for (const ArmSpec& arm : arms) {
    futures.push_back(std::async(std::launch::async, [&spec, &opt, arm] {
      return train(spec.stream, arm.focus, opt);
    }));
  }

  std::vector<ComparisonRow> rows;
  for (std::size_t i = 0; i < arms.size(); ++i) {
    const TrainingTrace trace = futures[i].get();
    write_trace_csv(trace, detail::out_path(spec, arms[i].name + "_trace.csv"));
    rows.push_back(comparison_row(arms[i].name, arms[i].focus, trace));
    detail::print_summary_line(log, spec.name + "/" + arms[i].name, trace);
  }
  write_comparison_csv(rows, detail::out_path(spec, "comparison.csv"));
  return rows;
}

/// Recomputes summary and drift outputs from a stored trace CSV.
inline std::vector<SummaryRow> run_diagnose(const std::string& trace_path,
                                            const std::string& out_dir,
                                            const std::string& name,
                                            std::ostream& log) {
  const TraceTable table = read_trace_csv(trace_path);
  if (table.rows.empty()) {
    throw ConfigError(trace_path + ": trace holds no rows");
  }
  std::filesystem::create_directories(out_dir);
  const auto rows = summarize_table(table);
  const auto base = std::filesystem::path(out_dir) / name;
  write_summary_csv(rows, base.string() + "_summary.csv");
  write_drift_csv(drift_curve(table), base.string() + "_drift.csv");
  log << name << ": " << table.rows.size() << " rows, " << rows.size()
      << " levels summarized\n";
  return rows;
}

}  // namespace pyrofocus

#pragma once

// Desk-scale training simulator. Generates synthetic multi-level sample
// streams with configurable level discrepancy (divergent positive rates) and
// intrinsic hardness (class-overlap mixtures), trains per-level logistic
// models with SGD under any configured loss, and records traces that expose
// hard-case/easy-case loss dynamics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pyrofocus/pipeline.hpp"

namespace pyrofocus {

class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream));
}

}  // namespace detail

/// mt19937_64 engine with hand-rolled uniform/normal transforms so streams
/// are bit-reproducible across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  /// Uniform in [0,1).
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (spare value cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0,1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

struct StreamConfig {
  int num_levels = 5;
  std::vector<double> positive_rate = {0.02, 0.05, 0.10, 0.20, 0.35};
  std::vector<double> hard_fraction = {0.3, 0.3, 0.3, 0.3, 0.3};
  int samples_per_iter = 200;  // per level
  int feature_dim = 2;
  double noise_scale = 1.0;
  double easy_margin = 3.5;  // class-mean offset for easy samples, in noise units
  double hard_margin = 0.25; // overlap-mixture offset for hard samples
  double init_scale = 0.01;  // stddev of the random model init
  double bias_init = -1.5;   // detector-style negative prior on the initial bias
  std::uint64_t seed = 1;

  void validate() const {
    if (num_levels < 1) throw std::invalid_argument("stream.num_levels must be >= 1");
    if (positive_rate.size() != static_cast<std::size_t>(num_levels)) {
      throw std::invalid_argument("stream.positive_rate must list one rate per level");
    }
    for (double r : positive_rate) {
      if (!(r > 0.0 && r < 1.0)) {
        throw std::invalid_argument("stream.positive_rate entries must lie in (0,1)");
      }
    }
    if (hard_fraction.size() != static_cast<std::size_t>(num_levels)) {
      throw std::invalid_argument("stream.hard_fraction must list one fraction per level");
    }
    for (double h : hard_fraction) {
      if (!(h >= 0.0 && h <= 1.0)) {
        throw std::invalid_argument("stream.hard_fraction entries must lie in [0,1]");
      }
    }
    if (samples_per_iter < 1) {
      throw std::invalid_argument("stream.samples_per_iter must be >= 1");
    }
    if (feature_dim < 1) throw std::invalid_argument("stream.feature_dim must be >= 1");
    if (!(noise_scale > 0.0)) throw std::invalid_argument("stream.noise_scale must be > 0");
    if (!(easy_margin > 0.0) || !(hard_margin >= 0.0)) {
      throw std::invalid_argument("stream margins must be positive");
    }
    if (!(init_scale >= 0.0)) throw std::invalid_argument("stream.init_scale must be >= 0");
    if (!std::isfinite(bias_init)) {
      throw std::invalid_argument("stream.bias_init must be finite");
    }
  }
};

/// Independent linear head per pyramid level.
struct ToyModel {
  std::vector<std::vector<double>> weight;  // [level][feature]
  std::vector<double> bias;                 // [level]

  static ToyModel init(const StreamConfig& cfg) {
    Rng rng(detail::mix_seed(cfg.seed, 0x6d6f64656cull));  // "model" stream
    ToyModel m;
    m.weight.resize(static_cast<std::size_t>(cfg.num_levels));
    m.bias.assign(static_cast<std::size_t>(cfg.num_levels), cfg.bias_init);
    for (auto& w : m.weight) {
      w.resize(static_cast<std::size_t>(cfg.feature_dim));
      for (double& wi : w) wi = cfg.init_scale * rng.normal();
    }
    return m;
  }

  double logit(int level, std::span<const double> x) const {
    const auto& w = weight[static_cast<std::size_t>(level)];
    double acc = bias[static_cast<std::size_t>(level)];
    for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * x[i];
    return acc;
  }

  bool finite() const {
    for (const auto& w : weight) {
      for (double wi : w) {
        if (!std::isfinite(wi)) return false;
      }
    }
    return std::all_of(bias.begin(), bias.end(),
                       [](double b) { return std::isfinite(b); });
  }

  bool operator==(const ToyModel&) const = default;
};

enum class TargetKind { Hard, Quality };

inline TargetKind target_kind_for(LossKind kind) {
  return (kind == LossKind::PF_QFL || kind == LossKind::PF_VFL) ? TargetKind::Quality
                                                                : TargetKind::Hard;
}

/// One generated iteration: samples in level-contiguous order plus their
/// feature vectors, flattened row-major.
struct IterationData {
  std::vector<Sample> samples;
  std::vector<double> features;  // samples.size() * feature_dim
  int feature_dim = 0;

  std::span<const double> features_of(std::size_t i) const {
    return {features.data() + i * static_cast<std::size_t>(feature_dim),
            static_cast<std::size_t>(feature_dim)};
  }
};

namespace detail {

// Class-conditional density of the first feature coordinate, up to the
// normal normalization constant shared by both classes.
inline double class_density(double x0, int y, double hard_frac,
                            const StreamConfig& cfg) {
  const double sgn = y == 1 ? 1.0 : -1.0;
  const double s = cfg.noise_scale;
  const double de = (x0 - sgn * cfg.easy_margin * s) / s;
  const double dh = (x0 - sgn * cfg.hard_margin * s) / s;
  return (1.0 - hard_frac) * std::exp(-0.5 * de * de) +
         hard_frac * std::exp(-0.5 * dh * dh);
}

// True posterior P(y=1 | x, level) of the generating mixture; used as the
// quality target for positives (the stand-in for an IoU-style score).
inline double true_posterior(double x0, int level, const StreamConfig& cfg) {
  const double r = cfg.positive_rate[static_cast<std::size_t>(level)];
  const double h = cfg.hard_fraction[static_cast<std::size_t>(level)];
  const double f1 = class_density(x0, 1, h, cfg);
  const double f0 = class_density(x0, 0, h, cfg);
  const double num = r * f1;
  const double den = num + (1.0 - r) * f0;
  if (den <= 0.0) return 0.5;
  return num / den;
}

}  // namespace detail

/// Draws one iteration's samples. Deterministic function of (cfg.seed, iter):
/// features and targets do not depend on the model; only the cached logits do.
///
/// Per level, a label is drawn from positive_rate, then the feature vector
/// from a class-conditional Gaussian whose first coordinate is offset by the
/// easy margin or, with probability hard_fraction, by the overlapping hard
/// margin. Hard samples therefore stay hard under a correct model.
inline IterationData generate_iteration(const StreamConfig& cfg, const ToyModel& model,
                                        int iter,
                                        TargetKind kind = TargetKind::Hard) {
  cfg.validate();
  Rng rng(detail::mix_seed(cfg.seed, static_cast<std::uint64_t>(iter)));
  const std::size_t per_level = static_cast<std::size_t>(cfg.samples_per_iter);
  const std::size_t dim = static_cast<std::size_t>(cfg.feature_dim);

  IterationData out;
  out.feature_dim = cfg.feature_dim;
  out.samples.reserve(per_level * static_cast<std::size_t>(cfg.num_levels));
  out.features.reserve(out.samples.capacity() * dim);

  std::vector<double> x(dim);
  for (int level = 0; level < cfg.num_levels; ++level) {
    const double rate = cfg.positive_rate[static_cast<std::size_t>(level)];
    const double hard_frac = cfg.hard_fraction[static_cast<std::size_t>(level)];
    for (std::size_t j = 0; j < per_level; ++j) {
      const int y = rng.bernoulli(rate) ? 1 : 0;
      const bool hard = rng.bernoulli(hard_frac);
      const double margin = hard ? cfg.hard_margin : cfg.easy_margin;
      const double sgn = y == 1 ? 1.0 : -1.0;
      for (std::size_t d = 0; d < dim; ++d) {
        x[d] = cfg.noise_scale * rng.normal();
      }
      x[0] += sgn * margin * cfg.noise_scale;

      Target target = Target::hard(y);
      if (kind == TargetKind::Quality) {
        target = y == 1 ? Target::quality(std::min(
                              1.0, std::max(detail::true_posterior(x[0], level, cfg),
                                            std::numeric_limits<double>::min())))
                        : Target::quality(0.0);
      }
      out.samples.push_back(Sample::from_logit(model.logit(level, x), target, level));
      out.features.insert(out.features.end(), x.begin(), x.end());
    }
  }
  return out;
}

/// Threshold split of per-sample losses: hard samples are those with
/// loss strictly greater than t.
struct HardEasySplit {
  double hard_mass = 0.0;
  double easy_mass = 0.0;
  std::size_t hard_count = 0;
};

inline HardEasySplit hard_easy_split(std::span<const double> losses, double t) {
  if (!(t >= 0.0)) throw std::invalid_argument("threshold t must be >= 0");
  HardEasySplit s;
  for (double v : losses) {
    if (v > t) {
      s.hard_mass += v;
      ++s.hard_count;
    } else {
      s.easy_mass += v;
    }
  }
  return s;
}

struct TrainOptions {
  double lr = 1.0;
  int iters = 1000;
  double decay_factor = 0.1;
  std::vector<double> decay_at = {2.0 / 3.0, 8.0 / 9.0};  // fractions of iters
  double drift_threshold = std::numeric_limits<double>::quiet_NaN();  // NaN = auto
  int eval_samples_per_level = 2000;

  void validate() const {
    if (!(lr >= 0.0)) throw std::invalid_argument("opt.lr must be >= 0");
    if (iters < 1) throw std::invalid_argument("opt.iters must be >= 1");
    if (!(decay_factor > 0.0)) throw std::invalid_argument("opt.decay_factor must be > 0");
    for (double f : decay_at) {
      if (!(f > 0.0 && f <= 1.0)) {
        throw std::invalid_argument("opt.decay_at fractions must lie in (0,1]");
      }
    }
    if (eval_samples_per_level < 1) {
      throw std::invalid_argument("opt.eval_samples_per_level must be >= 1");
    }
    if (!std::isnan(drift_threshold) && !(drift_threshold >= 0.0)) {
      throw std::invalid_argument("opt.t must be >= 0");
    }
  }
};

struct IterationRecord {
  int iter = 0;
  std::vector<LevelLossReport> levels;
  std::vector<double> level_hard_mass;  // loss mass above t, per level
  double total_loss = 0.0;
  double hard_share = 0.0;       // global hard loss mass / total loss mass
  double hard_grad_share = 0.0;  // global hard |grad| mass / total |grad| mass
  std::size_t hard_count = 0;

  bool operator==(const IterationRecord&) const = default;
};

struct LevelEvalStats {
  int level = 0;
  std::size_t n = 0;
  std::size_t n_pos = 0;
  double accuracy = 0.0;
  double auc = std::numeric_limits<double>::quiet_NaN();  // NaN if single-class

  bool operator==(const LevelEvalStats&) const = default;
};

struct TrainingTrace {
  StreamConfig stream;
  FocusConfig focus;
  TrainOptions opt;
  double t = 0.0;  // resolved hard-case threshold
  std::vector<IterationRecord> iterations;
  std::vector<LevelEvalStats> final_eval;
  double final_accuracy = 0.0;
  double final_loss = 0.0;
  ToyModel final_model;
};

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty series");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/// The auto threshold: median per-sample loss of iteration 0 under the given
/// configuration and the freshly initialized model.
inline double resolve_drift_threshold(const StreamConfig& stream,
                                      const FocusConfig& focus) {
  const ToyModel model = ToyModel::init(stream);
  const IterationData data =
      generate_iteration(stream, model, 0, target_kind_for(focus.loss_kind));
  const auto batches = split_by_level(data.samples, stream.num_levels);
  const PipelineEval ev = evaluate_levels(batches, focus, /*want_grads=*/false);
  std::vector<double> losses;
  for (const LevelEval& le : ev.levels) {
    losses.insert(losses.end(), le.losses.begin(), le.losses.end());
  }
  return detail::median(std::move(losses));
}

/// Per-level accuracy and AUC of a model on a fresh evaluation batch.
inline std::vector<LevelEvalStats> evaluate_model(const StreamConfig& stream,
                                                  const ToyModel& model,
                                                  TargetKind kind, int iter_id,
                                                  int samples_per_level) {
  StreamConfig eval_cfg = stream;
  eval_cfg.samples_per_iter = samples_per_level;
  const IterationData data = generate_iteration(eval_cfg, model, iter_id, kind);
  std::vector<LevelEvalStats> stats(static_cast<std::size_t>(stream.num_levels));

  for (int level = 0; level < stream.num_levels; ++level) {
    auto& st = stats[static_cast<std::size_t>(level)];
    st.level = level;
    std::vector<std::pair<double, int>> scored;  // (prob, is_positive)
    for (const Sample& s : data.samples) {
      if (s.level != level) continue;
      const bool pos = s.target.positive();
      ++st.n;
      st.n_pos += pos ? 1 : 0;
      if ((s.prob > 0.5) == pos) st.accuracy += 1.0;
      scored.emplace_back(s.prob, pos ? 1 : 0);
    }
    if (st.n > 0) st.accuracy /= static_cast<double>(st.n);

    const std::size_t n_pos = st.n_pos;
    const std::size_t n_neg = st.n - st.n_pos;
    if (n_pos == 0 || n_neg == 0) continue;  // AUC stays NaN
    std::sort(scored.begin(), scored.end());
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < scored.size()) {
      std::size_t j = i;
      while (j < scored.size() && scored[j].first == scored[i].first) ++j;
      const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
      for (std::size_t k = i; k < j; ++k) {
        if (scored[k].second == 1) rank_sum_pos += avg_rank;
      }
      i = j;
    }
    st.auc = (rank_sum_pos - 0.5 * static_cast<double>(n_pos) *
                                 static_cast<double>(n_pos + 1)) /
             (static_cast<double>(n_pos) * static_cast<double>(n_neg));
  }
  return stats;
}

/// Runs `opt.iters` SGD steps of generate -> split_by_level -> total gradient
/// -> parameter update, recording the trace each iteration. Deterministic per
/// stream seed. Throws DivergenceError if any parameter becomes non-finite.
inline TrainingTrace train(const StreamConfig& stream, const FocusConfig& focus,
                           const TrainOptions& opt) {
  stream.validate();
  focus.validate();
  opt.validate();
  if (focus.num_levels != stream.num_levels) {
    throw std::invalid_argument("focus.num_levels must match stream.num_levels");
  }

  TrainingTrace trace;
  trace.stream = stream;
  trace.focus = focus;
  trace.opt = opt;
  trace.t = std::isnan(opt.drift_threshold)
                ? resolve_drift_threshold(stream, focus)
                : opt.drift_threshold;
  trace.iterations.reserve(static_cast<std::size_t>(opt.iters));

  const TargetKind kind = target_kind_for(focus.loss_kind);
  ToyModel model = ToyModel::init(stream);
  const double inv_levels = 1.0 / static_cast<double>(stream.num_levels);

  std::vector<std::size_t> decay_iters;
  for (double f : opt.decay_at) {
    decay_iters.push_back(static_cast<std::size_t>(
        f * static_cast<double>(opt.iters)));
  }
  std::sort(decay_iters.begin(), decay_iters.end());

  for (int it = 0; it < opt.iters; ++it) {
    double lr = opt.lr;
    for (std::size_t d : decay_iters) {
      if (static_cast<std::size_t>(it) >= d) lr *= opt.decay_factor;
    }

    const IterationData data = generate_iteration(stream, model, it, kind);
    for (const Sample& s : data.samples) {
      if (!std::isfinite(s.logit)) {
        throw DivergenceError("model produced a non-finite logit at iteration " +
                              std::to_string(it));
      }
    }
    const auto batches = split_by_level(data.samples, stream.num_levels);
    const PipelineEval ev = evaluate_levels(batches, focus, /*want_grads=*/true);

    IterationRecord rec;
    rec.iter = it;
    rec.total_loss = ev.total;
    double hard_mass = 0.0, total_mass = 0.0;
    double hard_grad = 0.0, total_grad = 0.0;
    std::size_t base = 0;
    for (const LevelEval& le : ev.levels) {
      rec.levels.push_back(le.report);
      const HardEasySplit hs = hard_easy_split(le.losses, trace.t);
      rec.level_hard_mass.push_back(hs.hard_mass);
      rec.hard_count += hs.hard_count;
      hard_mass += hs.hard_mass;
      total_mass += hs.hard_mass + hs.easy_mass;

      const double scale =
          le.grads.empty() ? 0.0
                           : inv_levels / static_cast<double>(le.grads.size());
      auto& w = model.weight[static_cast<std::size_t>(le.report.level)];
      double& b = model.bias[static_cast<std::size_t>(le.report.level)];
      for (std::size_t j = 0; j < le.grads.size(); ++j) {
        const double g = le.grads[j] * scale;
        const double ag = std::fabs(g);
        total_grad += ag;
        if (le.losses[j] > trace.t) hard_grad += ag;
        const auto x = data.features_of(base + j);
        for (std::size_t d2 = 0; d2 < x.size(); ++d2) {
          w[d2] -= lr * g * x[d2];
        }
        b -= lr * g;
      }
      base += le.grads.size();
    }
    rec.hard_share = total_mass > 0.0 ? hard_mass / total_mass : 0.0;
    rec.hard_grad_share = total_grad > 0.0 ? hard_grad / total_grad : 0.0;
    trace.iterations.push_back(std::move(rec));

    if (!model.finite()) {
      throw DivergenceError("model parameters became non-finite at iteration " +
                            std::to_string(it));
    }
  }

  trace.final_model = model;
  trace.final_loss = trace.iterations.back().total_loss;
  trace.final_eval =
      evaluate_model(stream, model, kind, opt.iters, opt.eval_samples_per_level);
  std::size_t total_n = 0;
  double correct = 0.0;
  for (const LevelEvalStats& st : trace.final_eval) {
    correct += st.accuracy * static_cast<double>(st.n);
    total_n += st.n;
  }
  trace.final_accuracy = total_n > 0 ? correct / static_cast<double>(total_n) : 0.0;
  return trace;
}

/// Hard-share time series at the threshold the trace was recorded with.
/// `t` must match trace.t; the trace does not retain per-sample losses.
inline std::vector<double> drift_curve(const TrainingTrace& trace, double t) {
  if (trace.iterations.empty()) {
    throw std::invalid_argument("drift_curve of an empty trace");
  }
  if (std::fabs(t - trace.t) > 1e-12 * std::max(1.0, std::fabs(trace.t))) {
    throw std::invalid_argument(
        "trace was recorded at t=" + std::to_string(trace.t) +
        "; rerun training to evaluate a different threshold");
  }
  std::vector<double> out;
  out.reserve(trace.iterations.size());
  for (const IterationRecord& rec : trace.iterations) out.push_back(rec.hard_share);
  return out;
}

inline std::vector<double> drift_curve(const TrainingTrace& trace) {
  return drift_curve(trace, trace.t);
}

}  // namespace pyrofocus

#pragma once

// Adaptive focus scheduling: gamma_ad = -log(mean positive probability),
// clamped to [gamma-delta, gamma+delta], and the negatively coupled
// alpha_ad = w / gamma_ad.

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>

#include "pyrofocus/loss.hpp"

namespace pyrofocus {

enum class SamplingMode { AllLevel, LevelWise, PerSample };

inline const char* to_string(SamplingMode m) {
  switch (m) {
    case SamplingMode::AllLevel: return "all-level";
    case SamplingMode::LevelWise: return "level-wise";
    case SamplingMode::PerSample: return "per-sample";
  }
  return "?";
}

/// Scope marker for schedules resolved over all levels at once.
inline constexpr int kGlobalScope = -1;

struct FocusConfig {
  double alpha_base = 0.25;
  double gamma_base = 2.0;
  double w = 0.5;
  double delta = 0.5;
  SamplingMode sampling_mode = SamplingMode::LevelWise;
  LossKind loss_kind = LossKind::HPF;
  int num_levels = 5;

  FocusParams base_params() const { return {alpha_base, gamma_base}; }

  /// Static kinds keep (alpha_base, gamma_base); scheduled kinds take the
  /// per-scope snapshot parameters.
  bool scheduled() const { return loss_kind != LossKind::FL; }

  void validate() const {
    if (!(alpha_base > 0.0 && alpha_base < 1.0)) {
      throw std::invalid_argument("focus.alpha must lie in (0,1)");
    }
    if (!(gamma_base > 0.0)) {
      throw std::invalid_argument("focus.gamma must be > 0");
    }
    if (!(w > 0.0)) {
      throw std::invalid_argument("focus.w must be > 0");
    }
    if (!(delta >= 0.0)) {
      throw std::invalid_argument("focus.delta must be >= 0");
    }
    if (!(gamma_base - delta > 0.0)) {
      throw std::invalid_argument(
          "focus.gamma - focus.delta must be > 0 so alpha = w/gamma stays defined");
    }
    if (!(w < gamma_base - delta)) {
      throw std::invalid_argument(
          "focus.w must be < focus.gamma - focus.delta, otherwise alpha_ad = "
          "w/gamma_ad can leave (0,1)");
    }
    if (num_levels < 1) {
      throw std::invalid_argument("focus.num_levels must be >= 1");
    }
  }
};

/// One resolved schedule, with the intermediate quantities kept for traces.
/// Snapshots are detached constants: no gradient flows through them.
struct ScheduleSnapshot {
  int level = kGlobalScope;
  double gamma_raw = 0.0;
  double gamma_clamped = 0.0;
  double alpha = 0.0;
  std::size_t n_pos = 0;
  double mean_pos_prob = 0.0;

  FocusParams params() const { return {alpha, gamma_clamped}; }

  bool operator==(const ScheduleSnapshot&) const = default;
};

/// gamma_raw = -log(mean of positive probabilities), natural log.
inline double gamma_raw(std::span<const double> positive_probs) {
  if (positive_probs.empty()) {
    throw std::invalid_argument("gamma_raw requires at least one positive probability");
  }
  double sum = 0.0;
  for (double p : positive_probs) {
    if (!(p > 0.0 && p <= 1.0)) {
      throw std::domain_error("positive probability outside (0,1]: " + std::to_string(p));
    }
    sum += p;
  }
  return -std::log(sum / static_cast<double>(positive_probs.size()));
}

inline double clamp_gamma(double raw, const FocusConfig& cfg) {
  const double lo = cfg.gamma_base - cfg.delta;
  const double hi = cfg.gamma_base + cfg.delta;
  return std::min(std::max(raw, lo), hi);
}

inline double alpha_from_gamma(double gamma_ad, const FocusConfig& cfg) {
  if (!(gamma_ad > 0.0)) {
    throw std::domain_error("gamma_ad must be > 0: " + std::to_string(gamma_ad));
  }
  return cfg.w / gamma_ad;
}

/// Schedule for a scope containing no positives: the static baseline.
inline ScheduleSnapshot fallback_snapshot(const FocusConfig& cfg, int scope) {
  ScheduleSnapshot snap;
  snap.level = scope;
  snap.gamma_raw = cfg.gamma_base;
  snap.gamma_clamped = cfg.gamma_base;
  snap.alpha = cfg.w / cfg.gamma_base;
  snap.n_pos = 0;
  snap.mean_pos_prob = 0.0;
  return snap;
}

/// Composes gamma_raw -> clamp -> alpha over the positives found in `scope`
/// (a level index, or kGlobalScope for all samples). Quality targets count as
/// positive when q>0 and contribute their probability to the mean.
inline ScheduleSnapshot resolve_focus(std::span<const Sample> samples,
                                      const FocusConfig& cfg, int scope) {
  double sum = 0.0;
  std::size_t n_pos = 0;
  for (const Sample& s : samples) {
    if (scope != kGlobalScope && s.level != scope) continue;
    if (!s.target.positive()) continue;
    sum += clamp_prob(s.prob);
    ++n_pos;
  }
  if (n_pos == 0) {
    return fallback_snapshot(cfg, scope);
  }
  ScheduleSnapshot snap;
  snap.level = scope;
  snap.n_pos = n_pos;
  snap.mean_pos_prob = sum / static_cast<double>(n_pos);
  snap.gamma_raw = -std::log(snap.mean_pos_prob);
  snap.gamma_clamped = clamp_gamma(snap.gamma_raw, cfg);
  snap.alpha = alpha_from_gamma(snap.gamma_clamped, cfg);
  return snap;
}

/// Per-sample schedule for one positive (the per-sample sampling mode).
inline FocusParams per_sample_params(double prob, const FocusConfig& cfg) {
  const double g = clamp_gamma(-std::log(clamp_prob(prob)), cfg);
  return {alpha_from_gamma(g, cfg), g};
}

}  // namespace pyrofocus

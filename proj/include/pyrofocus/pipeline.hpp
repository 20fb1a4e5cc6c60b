#pragma once

// Level-wise training pipeline: split samples by pyramid level, resolve the
// focus schedule per sampling mode, evaluate the configured loss and reduce
// with the level mean  Loss_cls = (1/L) sum_l mean(loss over level l).
//
// Per-level normalization keeps level contributions comparable when level
// sizes differ by orders of magnitude; empty levels still count in the 1/L
// mean, contributing zero.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "pyrofocus/loss.hpp"
#include "pyrofocus/schedule.hpp"

namespace pyrofocus {

struct LevelBatch {
  int level = 0;
  std::vector<Sample> samples;
};

struct LevelLossReport {
  int level = 0;
  ScheduleSnapshot snapshot;
  double loss_sum = 0.0;
  double loss_mean = 0.0;
  double pos_loss_mass = 0.0;
  double neg_loss_mass = 0.0;
  std::size_t n = 0;
  std::size_t n_pos = 0;

  bool operator==(const LevelLossReport&) const = default;
};

/// Partitions samples into L batches, preserving within-level order. Empty
/// levels yield empty batches rather than being omitted.
inline std::vector<LevelBatch> split_by_level(std::span<const Sample> samples,
                                              int num_levels) {
  if (num_levels < 1) throw std::invalid_argument("num_levels must be >= 1");
  std::vector<LevelBatch> batches(static_cast<std::size_t>(num_levels));
  for (int l = 0; l < num_levels; ++l) batches[static_cast<std::size_t>(l)].level = l;
  for (const Sample& s : samples) {
    if (s.level < 0 || s.level >= num_levels) {
      throw std::out_of_range("sample level " + std::to_string(s.level) +
                              " outside [0," + std::to_string(num_levels - 1) + "]");
    }
    batches[static_cast<std::size_t>(s.level)].samples.push_back(s);
  }
  return batches;
}

namespace detail {

inline FocusParams params_for(const Sample& s, const FocusConfig& cfg,
                              const ScheduleSnapshot& snap) {
  if (!cfg.scheduled()) return cfg.base_params();
  if (cfg.sampling_mode == SamplingMode::PerSample && s.target.positive()) {
    return per_sample_params(s.prob, cfg);
  }
  return snap.params();
}

inline ScheduleSnapshot snapshot_for(const LevelBatch& batch, const FocusConfig& cfg,
                                     const ScheduleSnapshot* global) {
  ScheduleSnapshot snap;
  if (cfg.sampling_mode == SamplingMode::AllLevel) {
    // Standalone all-level call: the batch is the whole population.
    snap = global ? *global : resolve_focus(batch.samples, cfg, kGlobalScope);
  } else {
    snap = resolve_focus(batch.samples, cfg, batch.level);
  }
  if (!cfg.scheduled()) {
    // Static kinds keep gamma_raw as a convergence diagnostic, but the
    // recorded parameters are the ones actually applied.
    snap.gamma_clamped = cfg.gamma_base;
    snap.alpha = cfg.alpha_base;
  }
  return snap;
}

}  // namespace detail

/// Per-level evaluation with per-sample detail kept for the trainer and the
/// drift diagnostics. `grads` holds raw d(loss_i)/d(logit_i); the 1/(L*n)
/// aggregation factors are applied by total_cls_grad.
struct LevelEval {
  LevelLossReport report;
  std::vector<double> losses;
  std::vector<double> grads;
};

inline LevelEval evaluate_level(const LevelBatch& batch, const FocusConfig& cfg,
                                const ScheduleSnapshot* global = nullptr,
                                bool want_grads = true) {
  LevelEval ev;
  ev.report.level = batch.level;
  ev.report.n = batch.samples.size();
  ev.report.snapshot = detail::snapshot_for(batch, cfg, global);
  ev.losses.reserve(batch.samples.size());
  if (want_grads) ev.grads.reserve(batch.samples.size());

  double pos_mass = 0.0;
  double neg_mass = 0.0;
  std::size_t n_pos = 0;
  for (const Sample& s : batch.samples) {
    const FocusParams fp = detail::params_for(s, cfg, ev.report.snapshot);
    const double loss = loss_value(s, fp, cfg.loss_kind);
    ev.losses.push_back(loss);
    if (want_grads) ev.grads.push_back(loss_grad_logit(s, fp, cfg.loss_kind));
    if (s.target.positive()) {
      pos_mass += loss;
      ++n_pos;
    } else {
      neg_mass += loss;
    }
  }
  ev.report.pos_loss_mass = pos_mass;
  ev.report.neg_loss_mass = neg_mass;
  ev.report.loss_sum = pos_mass + neg_mass;
  ev.report.n_pos = n_pos;
  ev.report.loss_mean =
      batch.samples.empty() ? 0.0
                            : ev.report.loss_sum / static_cast<double>(ev.report.n);
  return ev;
}

/// Resolves one schedule over the union of all batches (all-level mode).
inline ScheduleSnapshot resolve_focus_global(std::span<const LevelBatch> batches,
                                             const FocusConfig& cfg) {
  double sum = 0.0;
  std::size_t n_pos = 0;
  for (const LevelBatch& b : batches) {
    for (const Sample& s : b.samples) {
      if (!s.target.positive()) continue;
      sum += clamp_prob(s.prob);
      ++n_pos;
    }
  }
  if (n_pos == 0) return fallback_snapshot(cfg, kGlobalScope);
  ScheduleSnapshot snap;
  snap.level = kGlobalScope;
  snap.n_pos = n_pos;
  snap.mean_pos_prob = sum / static_cast<double>(n_pos);
  snap.gamma_raw = -std::log(snap.mean_pos_prob);
  snap.gamma_clamped = clamp_gamma(snap.gamma_raw, cfg);
  snap.alpha = alpha_from_gamma(snap.gamma_clamped, cfg);
  return snap;
}

/// Loss and schedule for one level. In all-level mode the caller supplies the
/// global snapshot (total_cls_loss does); absent one, the batch itself is
/// treated as the whole population.
inline LevelLossReport level_loss(const LevelBatch& batch, const FocusConfig& cfg,
                                  const ScheduleSnapshot* global = nullptr) {
  return evaluate_level(batch, cfg, global, /*want_grads=*/false).report;
}

/// Full evaluation of one iteration's batches.
struct PipelineEval {
  double total = 0.0;
  std::vector<LevelEval> levels;
};

inline PipelineEval evaluate_levels(std::span<const LevelBatch> batches,
                                    const FocusConfig& cfg, bool want_grads = true) {
  PipelineEval out;
  if (batches.empty()) return out;
  ScheduleSnapshot global;
  const ScheduleSnapshot* globalp = nullptr;
  if (cfg.sampling_mode == SamplingMode::AllLevel) {
    global = resolve_focus_global(batches, cfg);
    globalp = &global;
  }
  out.levels.reserve(batches.size());
  double acc = 0.0;
  for (const LevelBatch& b : batches) {
    out.levels.push_back(evaluate_level(b, cfg, globalp, want_grads));
    acc += out.levels.back().report.loss_mean;
  }
  out.total = acc / static_cast<double>(batches.size());
  return out;
}

/// Loss_cls = (1/L) sum of per-level means, plus the per-level reports.
inline std::pair<double, std::vector<LevelLossReport>> total_cls_loss(
    std::span<const LevelBatch> batches, const FocusConfig& cfg) {
  PipelineEval ev = evaluate_levels(batches, cfg, /*want_grads=*/false);
  std::vector<LevelLossReport> reports;
  reports.reserve(ev.levels.size());
  for (LevelEval& le : ev.levels) reports.push_back(le.report);
  return {ev.total, std::move(reports)};
}

/// d(total_cls_loss)/d(logit_i), one entry per sample in batch order. The
/// schedule snapshots are held constant; the per-level 1/n and the 1/L
/// factors are included.
inline std::vector<double> total_cls_grad(std::span<const LevelBatch> batches,
                                          const FocusConfig& cfg) {
  PipelineEval ev = evaluate_levels(batches, cfg, /*want_grads=*/true);
  std::vector<double> grads;
  std::size_t total_n = 0;
  for (const LevelEval& le : ev.levels) total_n += le.grads.size();
  grads.reserve(total_n);
  const double inv_levels = 1.0 / static_cast<double>(batches.size());
  for (const LevelEval& le : ev.levels) {
    const double scale =
        le.grads.empty() ? 0.0
                         : inv_levels / static_cast<double>(le.grads.size());
    for (double g : le.grads) grads.push_back(scale * g);
  }
  return grads;
}

}  // namespace pyrofocus

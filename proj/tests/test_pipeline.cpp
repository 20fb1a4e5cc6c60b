#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "pyrofocus/pipeline.hpp"

using namespace pyrofocus;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::mt19937_64 g_rng(23);

Sample random_sample(int level, bool quality_target) {
  std::uniform_real_distribution<double> logit_d(-5.0, 5.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Target t = Target::hard(u(g_rng) < 0.3 ? 1 : 0);
  if (quality_target) {
    t = Target::quality(u(g_rng) < 0.6 ? u(g_rng) : 0.0);
  }
  return Sample::from_logit(logit_d(g_rng), t, level);
}

std::vector<Sample> random_samples(int n, int num_levels, bool quality_target) {
  std::uniform_int_distribution<int> level_d(0, num_levels - 1);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    out.push_back(random_sample(level_d(g_rng), quality_target));
  }
  return out;
}

// Loss with the schedule frozen at the base point; the finite-difference
// oracle for total_cls_grad must not differentiate through the snapshots.
double frozen_total(const std::vector<LevelBatch>& batches,
                    const std::vector<std::vector<FocusParams>>& params,
                    const FocusConfig& cfg) {
  double acc = 0.0;
  for (std::size_t l = 0; l < batches.size(); ++l) {
    double sum = 0.0;
    for (std::size_t j = 0; j < batches[l].samples.size(); ++j) {
      sum += loss_value(batches[l].samples[j], params[l][j], cfg.loss_kind);
    }
    if (!batches[l].samples.empty()) {
      acc += sum / static_cast<double>(batches[l].samples.size());
    }
  }
  return acc / static_cast<double>(batches.size());
}

}  // namespace

TEST_CASE("split_by_level") {
  SECTION("degenerate partition") {
    std::vector<Sample> samples(10, Sample::from_logit(0.1, Target::hard(0), 0));
    const auto batches = split_by_level(samples, 5);
    REQUIRE(batches.size() == 5);
    REQUIRE(batches[0].samples.size() == 10);
    for (int l = 1; l < 5; ++l) {
      REQUIRE(batches[static_cast<std::size_t>(l)].samples.empty());
      REQUIRE(batches[static_cast<std::size_t>(l)].level == l);
    }
  }

  SECTION("counting") {
    std::vector<Sample> samples;
    for (int level : {0, 1, 0, 4}) {
      samples.push_back(Sample::from_logit(0.0, Target::hard(0), level));
    }
    const auto batches = split_by_level(samples, 5);
    const std::vector<std::size_t> sizes{2, 1, 0, 0, 1};
    for (std::size_t l = 0; l < 5; ++l) {
      REQUIRE(batches[l].samples.size() == sizes[l]);
    }
  }

  SECTION("empty input") {
    const auto batches = split_by_level(std::vector<Sample>{}, 3);
    REQUIRE(batches.size() == 3);
    for (const auto& b : batches) REQUIRE(b.samples.empty());
  }

  SECTION("within-level order is preserved") {
    std::vector<Sample> samples;
    for (int i = 0; i < 8; ++i) {
      samples.push_back(Sample::from_logit(static_cast<double>(i), Target::hard(0),
                                           i % 2));
    }
    const auto batches = split_by_level(samples, 2);
    for (const auto& b : batches) {
      for (std::size_t j = 1; j < b.samples.size(); ++j) {
        REQUIRE(b.samples[j - 1].logit < b.samples[j].logit);
      }
    }
  }

  SECTION("out-of-range level") {
    std::vector<Sample> bad{Sample::from_logit(0.0, Target::hard(0), 7)};
    REQUIRE_THROWS_AS(split_by_level(bad, 5), std::out_of_range);
    std::vector<Sample> neg{Sample{0.0, 0.5, Target::hard(0), -1}};
    REQUIRE_THROWS_AS(split_by_level(neg, 5), std::out_of_range);
  }
}

TEST_CASE("level_loss") {
  SECTION("single positive under the degenerate schedule equals focal loss") {
    FocusConfig cfg;
    cfg.delta = 0.0;
    cfg.w = cfg.alpha_base * cfg.gamma_base;
    LevelBatch batch{0, {Sample::from_logit(0.0, Target::hard(1), 0)}};
    const auto rep = level_loss(batch, cfg);
    REQUIRE_THAT(rep.loss_mean, WithinAbs(0.043321698784996582, 1e-12));
    REQUIRE(rep.n == 1);
    REQUIRE(rep.n_pos == 1);
  }

  SECTION("empty batch") {
    FocusConfig cfg;
    const auto rep = level_loss(LevelBatch{2, {}}, cfg);
    REQUIRE(rep.loss_mean == 0.0);
    REQUIRE(rep.loss_sum == 0.0);
    REQUIRE(rep.snapshot.gamma_clamped == cfg.gamma_base);
    REQUIRE(rep.snapshot.n_pos == 0);
  }

  SECTION("duplicating a batch k times keeps the mean and scales the sum") {
    FocusConfig cfg;
    LevelBatch batch{0, random_samples(40, 1, false)};
    const auto rep1 = level_loss(batch, cfg);
    LevelBatch tripled{0, {}};
    for (int k = 0; k < 3; ++k) {
      tripled.samples.insert(tripled.samples.end(), batch.samples.begin(),
                             batch.samples.end());
    }
    const auto rep3 = level_loss(tripled, cfg);
    REQUIRE_THAT(rep3.loss_mean, WithinRel(rep1.loss_mean, 1e-12));
    REQUIRE_THAT(rep3.loss_sum, WithinRel(3.0 * rep1.loss_sum, 1e-12));
  }

  SECTION("mass conservation: positive + negative mass equals the sum") {
    FocusConfig cfg;
    for (int trial = 0; trial < 20; ++trial) {
      LevelBatch batch{0, random_samples(60, 1, trial % 2 == 1)};
      cfg.loss_kind = trial % 2 == 1 ? LossKind::PF_VFL : LossKind::HPF;
      const auto rep = level_loss(batch, cfg);
      REQUIRE_THAT(rep.pos_loss_mass + rep.neg_loss_mass,
                   WithinRel(rep.loss_sum, 1e-9));
      REQUIRE(rep.n >= rep.n_pos);
    }
  }
}

TEST_CASE("total_cls_loss") {
  FocusConfig cfg;

  SECTION("identical batches: total equals any single level's mean") {
    auto level0 = random_samples(30, 1, false);
    std::vector<LevelBatch> batches;
    for (int l = 0; l < 4; ++l) {
      LevelBatch b{l, level0};
      for (auto& s : b.samples) s.level = l;
      batches.push_back(std::move(b));
    }
    cfg.num_levels = 4;
    const auto [total, reports] = total_cls_loss(batches, cfg);
    REQUIRE_THAT(total, WithinRel(reports[0].loss_mean, 1e-12));
  }

  SECTION("empty levels count in the 1/L mean") {
    cfg.num_levels = 2;
    std::vector<LevelBatch> batches{{0, random_samples(25, 1, false)}, {1, {}}};
    const auto [total, reports] = total_cls_loss(batches, cfg);
    REQUIRE(total == reports[0].loss_mean / 2.0);
    REQUIRE(reports[1].loss_mean == 0.0);
  }

  SECTION("level-wise equals all-level when level positive sets are identical") {
    auto level0 = random_samples(40, 1, false);
    std::vector<LevelBatch> batches;
    for (int l = 0; l < 5; ++l) {
      LevelBatch b{l, level0};
      for (auto& s : b.samples) s.level = l;
      batches.push_back(std::move(b));
    }
    cfg.num_levels = 5;
    cfg.sampling_mode = SamplingMode::LevelWise;
    const double level_wise = total_cls_loss(batches, cfg).first;
    cfg.sampling_mode = SamplingMode::AllLevel;
    const double all_level = total_cls_loss(batches, cfg).first;
    REQUIRE_THAT(level_wise, WithinRel(all_level, 1e-9));
  }

  SECTION("all-level mode is invariant to equal-size repartitioning") {
    cfg.num_levels = 2;
    cfg.sampling_mode = SamplingMode::AllLevel;
    auto samples = random_samples(60, 1, false);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      samples[i].level = static_cast<int>(i % 2);
    }
    const double before = total_cls_loss(split_by_level(samples, 2), cfg).first;
    // a different balanced partition of the same union
    std::shuffle(samples.begin(), samples.end(), g_rng);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      samples[i].level = i < samples.size() / 2 ? 0 : 1;
    }
    const double after = total_cls_loss(split_by_level(samples, 2), cfg).first;
    REQUIRE_THAT(before, WithinRel(after, 1e-12));
  }

  SECTION("order invariance") {
    cfg.num_levels = 3;
    auto samples = random_samples(90, 3, false);
    const double before = total_cls_loss(split_by_level(samples, 3), cfg).first;
    std::shuffle(samples.begin(), samples.end(), g_rng);
    const double after = total_cls_loss(split_by_level(samples, 3), cfg).first;
    REQUIRE_THAT(before, WithinRel(after, 1e-12));
  }
}

TEST_CASE("total_cls_grad") {
  SECTION("single sample, one level, reduces to loss_grad_logit") {
    FocusConfig cfg;
    cfg.num_levels = 1;
    const Sample s = Sample::from_logit(0.4, Target::hard(1), 0);
    std::vector<LevelBatch> batches{{0, {s}}};
    const auto grads = total_cls_grad(batches, cfg);
    REQUIRE(grads.size() == 1);
    const auto snap = resolve_focus(batches[0].samples, cfg, 0);
    REQUIRE(grads[0] == loss_grad_logit(s, snap.params(), cfg.loss_kind));
  }

  SECTION("saturated correct samples contribute zero gradient") {
    FocusConfig cfg;
    cfg.num_levels = 1;
    std::vector<LevelBatch> batches{
        {0,
         {Sample::from_logit(40.0, Target::hard(1), 0),
          Sample::from_logit(-40.0, Target::hard(0), 0)}}};
    for (double g : total_cls_grad(batches, cfg)) {
      REQUIRE_THAT(g, WithinAbs(0.0, 1e-12));
    }
  }

  SECTION("matches the frozen-schedule finite-difference oracle") {
    for (const LossKind kind :
         {LossKind::FL, LossKind::HPF, LossKind::PF_QFL, LossKind::PF_VFL}) {
      for (const SamplingMode mode : {SamplingMode::AllLevel, SamplingMode::LevelWise,
                                      SamplingMode::PerSample}) {
        FocusConfig cfg;
        cfg.loss_kind = kind;
        cfg.sampling_mode = mode;
        cfg.num_levels = 3;
        const bool quality =
            kind == LossKind::PF_QFL || kind == LossKind::PF_VFL;
        auto samples = random_samples(24, 3, quality);
        auto batches = split_by_level(samples, 3);
        const auto grads = total_cls_grad(batches, cfg);

        // freeze the schedule at the base point
        ScheduleSnapshot global = resolve_focus_global(batches, cfg);
        std::vector<std::vector<FocusParams>> params(batches.size());
        for (std::size_t l = 0; l < batches.size(); ++l) {
          const ScheduleSnapshot snap =
              mode == SamplingMode::AllLevel
                  ? global
                  : resolve_focus(batches[l].samples, cfg, batches[l].level);
          for (const Sample& s : batches[l].samples) {
            params[l].push_back(detail::params_for(s, cfg, snap));
          }
        }

        const double h = 1e-6;
        std::size_t flat = 0;
        for (std::size_t l = 0; l < batches.size(); ++l) {
          for (std::size_t j = 0; j < batches[l].samples.size(); ++j, ++flat) {
            const Sample orig = batches[l].samples[j];
            batches[l].samples[j] =
                Sample::from_logit(orig.logit + h, orig.target, orig.level);
            const double up = frozen_total(batches, params, cfg);
            batches[l].samples[j] =
                Sample::from_logit(orig.logit - h, orig.target, orig.level);
            const double dn = frozen_total(batches, params, cfg);
            batches[l].samples[j] = orig;
            const double fd = (up - dn) / (2.0 * h);
            REQUIRE_THAT(grads[flat],
                         WithinAbs(fd, 1e-6 * std::max(1.0, std::fabs(grads[flat])) +
                                           1e-8));
          }
        }
      }
    }
  }
}

TEST_CASE("per-sample mode: positives get their own schedule, negatives the level's") {
  FocusConfig cfg;
  cfg.loss_kind = LossKind::HPF;
  cfg.num_levels = 1;
  // positive probs ~0.14 and ~0.21: their own gammas and the level mean all
  // land strictly inside the clamp interval, so the modes really differ
  LevelBatch batch{0,
                   {Sample::from_logit(-1.8, Target::hard(1), 0),
                    Sample::from_logit(-1.3, Target::hard(1), 0),
                    Sample::from_logit(-1.0, Target::hard(0), 0)}};

  cfg.sampling_mode = SamplingMode::PerSample;
  const auto per_sample = evaluate_level(batch, cfg);
  cfg.sampling_mode = SamplingMode::LevelWise;
  const auto level_wise = evaluate_level(batch, cfg);

  // the negative sample sees the same (level) schedule in both modes
  REQUIRE(per_sample.losses[2] == level_wise.losses[2]);
  // positives with different probs use different parameters in per-sample mode
  const auto fp0 = per_sample_params(batch.samples[0].prob, cfg);
  REQUIRE(per_sample.losses[0] ==
          hpf_loss(batch.samples[0].prob, 1, fp0));
  REQUIRE(per_sample.losses[0] != level_wise.losses[0]);
}

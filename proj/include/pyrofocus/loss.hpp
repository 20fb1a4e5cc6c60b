#pragma once

// Binary hard-case-mining classification losses and their closed-form
// gradients with respect to the pre-activation logit.
//
// Four loss kinds are provided:
//   FL      - focal loss with static (alpha, gamma)
//   HPF     - focal loss driven by scheduled (alpha_ad, gamma_ad)
//   PF_QFL  - quality focal loss with adaptive parameters
//   PF_VFL  - varifocal loss with adaptive parameters
//
// All functions are pure; thread safety is trivial.

#include <cmath>
#include <stdexcept>
#include <string>

namespace pyrofocus {

enum class LossKind { FL, HPF, PF_QFL, PF_VFL };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::FL: return "fl";
    case LossKind::HPF: return "hpf";
    case LossKind::PF_QFL: return "pfqfl";
    case LossKind::PF_VFL: return "pfvfl";
  }
  return "?";
}

/// Probabilities are clamped to [kProbFloor, 1-kProbFloor] before any log.
inline constexpr double kProbFloor = 1e-9;

inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Validates p in [0,1] (NaN rejected) and applies the numerical floor.
inline double clamp_prob(double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::domain_error("probability outside [0,1]: " + std::to_string(p));
  }
  if (p < kProbFloor) return kProbFloor;
  if (p > 1.0 - kProbFloor) return 1.0 - kProbFloor;
  return p;
}

/// Classification target: a hard 0/1 label or a continuous quality score in
/// [0,1]. A sample is positive iff y=1 (hard) or q>0 (quality).
class Target {
 public:
  static Target hard(int y) {
    if (y != 0 && y != 1) {
      throw std::domain_error("hard label must be 0 or 1");
    }
    return Target(Kind::Hard, static_cast<double>(y));
  }

  static Target quality(double q) {
    if (!(q >= 0.0 && q <= 1.0)) {
      throw std::domain_error("quality target outside [0,1]: " + std::to_string(q));
    }
    return Target(Kind::Quality, q);
  }

  bool is_quality() const { return kind_ == Kind::Quality; }
  bool positive() const { return value_ > 0.0; }

  int hard_label() const {
    if (kind_ != Kind::Hard) {
      throw std::domain_error("target carries a quality score, not a hard label");
    }
    return static_cast<int>(value_);
  }

  /// The quality score; hard labels generalize to q = y.
  double as_quality() const { return value_; }

  bool operator==(const Target&) const = default;

 private:
  enum class Kind { Hard, Quality };
  Target(Kind k, double v) : kind_(k), value_(v) {}

  Kind kind_;
  double value_;
};

/// One classification candidate: pre-activation logit, cached sigmoid, target
/// and the pyramid level it was assigned to.
struct Sample {
  double logit = 0.0;
  double prob = 0.5;
  Target target = Target::hard(0);
  int level = 0;

  static Sample from_logit(double logit, Target target, int level) {
    return Sample{logit, sigmoid(logit), target, level};
  }

  bool operator==(const Sample&) const = default;
};

/// A resolved (alpha, gamma) pair. Represents either the static focal-loss
/// setting or one scheduler output.
struct FocusParams {
  double alpha = 0.25;
  double gamma = 2.0;

  bool operator==(const FocusParams&) const = default;
};

namespace detail {

inline void check_params(const FocusParams& fp) {
  if (!(fp.alpha > 0.0 && fp.alpha < 1.0)) {
    throw std::domain_error("alpha outside (0,1): " + std::to_string(fp.alpha));
  }
  if (!(fp.gamma >= 0.0)) {
    throw std::domain_error("gamma must be >= 0: " + std::to_string(fp.gamma));
  }
}

inline int check_hard_label(int y) {
  if (y != 0 && y != 1) throw std::domain_error("label must be 0 or 1");
  return y;
}

inline double check_quality(double q) {
  if (!(q >= 0.0 && q <= 1.0)) {
    throw std::domain_error("quality target outside [0,1]: " + std::to_string(q));
  }
  return q;
}

}  // namespace detail

/// Focal loss:
///   y=1: -alpha (1-p)^gamma log(p)
///   y=0: -(1-alpha) p^gamma log(1-p)
inline double focal_loss(double prob, int y, const FocusParams& fp) {
  detail::check_params(fp);
  detail::check_hard_label(y);
  const double p = clamp_prob(prob);
  if (y == 1) {
    return -fp.alpha * std::pow(1.0 - prob, fp.gamma) * std::log(p);
  }
  return -(1.0 - fp.alpha) * std::pow(prob, fp.gamma) * std::log1p(-p);
}

/// Focal loss evaluated with scheduler-produced parameters. The functional
/// form is identical to focal_loss; the separate entry point keeps schedule
/// provenance explicit in traces.
inline double hpf_loss(double prob, int y, const FocusParams& fp) {
  return focal_loss(prob, y, fp);
}

/// Quality focal loss with progressive focus:
///   -|q-p|^gamma ((1-alpha)(1-q) log(1-p) + alpha q log(p))
/// Zero exactly at p=q for gamma>0.
inline double pf_qfl(double prob, double q, const FocusParams& fp) {
  detail::check_params(fp);
  detail::check_quality(q);
  const double p = clamp_prob(prob);
  const double mod = std::pow(std::fabs(q - prob), fp.gamma);
  const double inner =
      (1.0 - fp.alpha) * (1.0 - q) * std::log1p(-p) + fp.alpha * q * std::log(p);
  return -mod * inner;
}

/// Varifocal loss with progressive focus:
///   q>0: -q (q log(p) + (1-q) log(1-p))      (parameter-free by design)
///   q=0: -alpha p^gamma log(1-p)
inline double pf_vfl(double prob, double q, const FocusParams& fp) {
  detail::check_params(fp);
  detail::check_quality(q);
  const double p = clamp_prob(prob);
  if (q > 0.0) {
    return -q * (q * std::log(p) + (1.0 - q) * std::log1p(-p));
  }
  return -fp.alpha * std::pow(prob, fp.gamma) * std::log1p(-p);
}

/// Evaluates the selected loss kind on one sample.
inline double loss_value(const Sample& s, const FocusParams& fp, LossKind kind) {
  switch (kind) {
    case LossKind::FL:
      return focal_loss(s.prob, s.target.hard_label(), fp);
    case LossKind::HPF:
      return hpf_loss(s.prob, s.target.hard_label(), fp);
    case LossKind::PF_QFL:
      return pf_qfl(s.prob, s.target.as_quality(), fp);
    case LossKind::PF_VFL:
      return pf_vfl(s.prob, s.target.as_quality(), fp);
  }
  throw std::invalid_argument("unknown loss kind");
}

namespace detail {

// d/dx of the focal positive branch, x the logit, p = sigmoid(x):
//   alpha (1-p)^gamma (gamma p log(p) - (1-p))
inline double focal_grad_pos(double p, double pc, const FocusParams& fp) {
  const double one_m = 1.0 - p;
  return fp.alpha * std::pow(one_m, fp.gamma) * (fp.gamma * p * std::log(pc) - one_m);
}

// d/dx of the focal negative branch with weight wneg:
//   wneg p^gamma (p - gamma (1-p) log(1-p))
inline double focal_grad_neg(double p, double pc, double wneg, const FocusParams& fp) {
  return wneg * std::pow(p, fp.gamma) *
         (p - fp.gamma * (1.0 - p) * std::log1p(-pc));
}

}  // namespace detail

/// d(loss)/d(logit) in closed form, with p = sigmoid(logit). Scheduled
/// parameters are treated as constants during differentiation.
///
/// PF-QFL at p=q: the modulating factor |q-p|^gamma is not differentiable for
/// gamma<=1; the gradient is defined as 0 there (the loss attains its
/// minimum). For gamma>1 zero is the true limit.
inline double loss_grad_logit(const Sample& s, const FocusParams& fp, LossKind kind) {
  detail::check_params(fp);
  const double p = s.prob;
  const double pc = clamp_prob(p);
  switch (kind) {
    case LossKind::FL:
    case LossKind::HPF: {
      const int y = s.target.hard_label();
      return y == 1 ? detail::focal_grad_pos(p, pc, fp)
                    : detail::focal_grad_neg(p, pc, 1.0 - fp.alpha, fp);
    }
    case LossKind::PF_QFL: {
      const double q = detail::check_quality(s.target.as_quality());
      if (p == q) return 0.0;
      const double inner = (1.0 - fp.alpha) * (1.0 - q) * std::log1p(-pc) +
                           fp.alpha * q * std::log(pc);
      const double dinner_dx =
          fp.alpha * q * (1.0 - p) - (1.0 - fp.alpha) * (1.0 - q) * p;
      double dmod = 0.0;
      if (fp.gamma != 0.0) {
        const double sign = p > q ? 1.0 : -1.0;
        dmod = fp.gamma * std::pow(std::fabs(q - p), fp.gamma - 1.0) * sign *
               pc * (1.0 - pc);
      }
      return -dmod * inner - std::pow(std::fabs(q - p), fp.gamma) * dinner_dx;
    }
    case LossKind::PF_VFL: {
      const double q = detail::check_quality(s.target.as_quality());
      if (q > 0.0) return q * (p - q);
      return detail::focal_grad_neg(p, pc, fp.alpha, fp);
    }
  }
  throw std::invalid_argument("unknown loss kind");
}

}  // namespace pyrofocus

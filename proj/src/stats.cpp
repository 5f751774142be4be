#include "pstmon/stats.hpp"

#include <cmath>
#include <stdexcept>

namespace pstmon {

// Rational approximation of the inverse normal CDF (P. J. Acklam), relative
// error below 1.2e-9 over the whole range, followed by one Halley step
// against std::erfc.
double normal_quantile(double q) {
  if (!(q > 0.0 && q < 1.0)) throw std::domain_error("normal_quantile: q must lie in (0, 1)");

  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  static constexpr double kLow = 0.02425;

  double x;
  if (q < kLow) {
    double r = std::sqrt(-2.0 * std::log(q));
    x = (((((c[0] * r + c[1]) * r + c[2]) * r + c[3]) * r + c[4]) * r + c[5]) /
        ((((d[0] * r + d[1]) * r + d[2]) * r + d[3]) * r + 1.0);
  } else if (q <= 1.0 - kLow) {
    double s = q - 0.5;
    double r = s * s;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * s /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    double r = std::sqrt(-2.0 * std::log1p(-q));
    x = -(((((c[0] * r + c[1]) * r + c[2]) * r + c[3]) * r + c[4]) * r + c[5]) /
        ((((d[0] * r + d[1]) * r + d[2]) * r + d[3]) * r + 1.0);
  }

  double err = 0.5 * std::erfc(-x / std::sqrt(2.0)) - q;
  double u = err * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
  return x - u / (1.0 + x * u / 2.0);
}

double z_of(double level) {
  if (!(level >= 0.0 && level < 1.0)) throw std::domain_error("confidence level must lie in [0, 1)");
  if (level == 0.0) return 0.0;
  return normal_quantile((1.0 + level) / 2.0);
}

ConfidenceLevel::ConfidenceLevel(double level) : level_(level), zed_(z_of(level)) {}

void ChoiceCounters::record(const std::string& label) {
  ++total_;
  ++per_branch_[label];
}

std::uint64_t ChoiceCounters::count(std::string_view label) const {
  auto it = per_branch_.find(label);
  return it == per_branch_.end() ? 0 : it->second;
}

double estimate(std::uint64_t total, std::uint64_t branch) {
  if (total == 0) throw std::invalid_argument("estimate: choice point never visited");
  if (branch > total) throw std::invalid_argument("estimate: branch count exceeds total");
  return static_cast<double>(branch) / static_cast<double>(total);
}

double max_error(const ConfidenceLevel& level, double p, std::uint64_t total) {
  if (total == 0) throw std::invalid_argument("max_error: choice point never visited");
  return level.zed() * std::sqrt(p * (1.0 - p) / static_cast<double>(total));
}

IntervalReport check_interval(const ConfidenceLevel& level, std::uint64_t total,
                              std::uint64_t branch, double p) {
  IntervalReport r;
  r.estimated = estimate(total, branch);
  r.specified = p;
  r.error = max_error(level, p, total);
  r.low = p - r.error;
  r.high = p + r.error;
  r.inside = r.low <= r.estimated && r.estimated <= r.high;
  return r;
}

std::string_view to_string(Boundary boundary) { return boundary == Boundary::Low ? "low" : "high"; }

std::string_view to_string(Judgement judgement) {
  switch (judgement) {
    case Judgement::Ok: return "ok";
    case Judgement::DeviatedLow: return "deviated-low";
    case Judgement::DeviatedHigh: return "deviated-high";
    case Judgement::Suppressed: return "suppressed";
  }
  return "?";
}

Judgement judge(const ProbAnnotation& annotation, const IntervalReport& report) {
  using Kind = ProbAnnotation::Kind;
  if (annotation.kind == Kind::Unchecked) return Judgement::Suppressed;
  if (annotation.checks_low() && report.estimated < report.low) return Judgement::DeviatedLow;
  if (annotation.checks_high() && report.estimated > report.high) return Judgement::DeviatedHigh;
  return Judgement::Ok;
}

}  // namespace pstmon

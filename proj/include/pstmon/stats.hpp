#pragma once

// Frequentist estimation for choice-point branch probabilities: observed
// frequencies, normal-approximation confidence intervals around the
// specified probability, and the warn/ok judgement per annotation.

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "pstmon/pst.hpp"

namespace pstmon {

/// Two-sided standard-normal critical value: the quantile of N(0,1) at
/// (1 + level) / 2. Throws std::domain_error unless 0 <= level < 1.
double z_of(double level);

/// Standard normal quantile for 0 < q < 1.
double normal_quantile(double q);

class ConfidenceLevel {
 public:
  /// Throws std::domain_error unless 0 <= level < 1.
  explicit ConfidenceLevel(double level);

  double level() const { return level_; }
  double zed() const { return zed_; }

 private:
  double level_;
  double zed_;
};

/// Visit counters for one choice point: c_j and c_{i,j}.
class ChoiceCounters {
 public:
  void record(const std::string& label);

  std::uint64_t total() const { return total_; }
  std::uint64_t count(std::string_view label) const;
  const std::map<std::string, std::uint64_t, std::less<>>& per_branch() const { return per_branch_; }

  bool operator==(const ChoiceCounters&) const = default;

 private:
  std::uint64_t total_ = 0;
  std::map<std::string, std::uint64_t, std::less<>> per_branch_;
};

/// branch / total. Throws std::invalid_argument when total == 0 or
/// branch > total.
double estimate(std::uint64_t total, std::uint64_t branch);

/// Z(level) * sqrt(p (1 - p) / total).
double max_error(const ConfidenceLevel& level, double p, std::uint64_t total);

/// Interval bounds are deliberately not clamped to [0, 1].
struct IntervalReport {
  double estimated = 0.0;
  double specified = 0.0;
  double error = 0.0;
  double low = 0.0;
  double high = 0.0;
  bool inside = true;

  bool operator==(const IntervalReport&) const = default;
};

/// Boundaries are inclusive: an estimate equal to a bound is inside.
IntervalReport check_interval(const ConfidenceLevel& level, std::uint64_t total,
                              std::uint64_t branch, double p);

enum class Boundary { Low, High };

std::string_view to_string(Boundary boundary);

enum class Judgement { Ok, DeviatedLow, DeviatedHigh, Suppressed };

std::string_view to_string(Judgement judgement);

Judgement judge(const ProbAnnotation& annotation, const IntervalReport& report);

}  // namespace pstmon

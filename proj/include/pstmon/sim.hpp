#pragma once

// Synthetic parties and a Monte Carlo harness that drives the monitor core
// without sockets.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pstmon/monitor.hpp"
#include "pstmon/pst.hpp"
#include "pstmon/stats.hpp"

namespace pstmon {

/// xoshiro256** seeded through splitmix64. Fixed algorithm, so results are
/// identical on every platform.
class Xoshiro256 {
 public:
  using result_type = std::uint64_t;

  explicit Xoshiro256(std::uint64_t seed);
  /// Raw state, which must not be all zero.
  static Xoshiro256 from_state(std::uint64_t s0, std::uint64_t s1, std::uint64_t s2, std::uint64_t s3);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::uint64_t s_[4];
};

std::uint64_t splitmix64(std::uint64_t& state);

class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct StopRule {
  /// Number of this party's choice-point visits after which `label` is
  /// taken the next time `choice_point` comes up.
  std::uint64_t after_visits = 0;
  std::size_t choice_point = 0;
  std::string label;
};

/// True behaviour of one party: a distribution for every choice point it
/// controls, in table branch order.
struct PartyModel {
  std::map<std::size_t, std::vector<std::pair<std::string, double>>> distributions;
  std::optional<StopRule> stop;
};

/// Model that follows the type's own annotations at every choice point
/// controlled by `role`. Throws ModelError where an annotation is `*` or the
/// numeric mass does not sum to 1.
PartyModel conforming_model(const ChoicePointTable& table, Endpoint role);

/// Throws ModelError on unknown choice points or labels, choice points the
/// party does not control, missing coverage, or mass != 1.
void check_model(const PartyModel& model, const ChoicePointTable& table, Endpoint role);

/// Walks the table on behalf of both parties and emits their messages.
class SessionGenerator {
 public:
  SessionGenerator(const ChoicePointTable& table, const PartyModel& left, const PartyModel& right,
                   std::uint64_t seed);

  /// Next message, or nullopt once the walk reached `end`.
  std::optional<Message> next();

 private:
  ChoicePointTable table_;
  PartyModel left_;
  PartyModel right_;
  Xoshiro256 rng_;
  Successor position_;
  std::uint64_t visits_[2] = {0, 0};
};

struct RunResult {
  std::uint64_t steps = 0;
  bool terminated = false;
  std::size_t warnings = 0;
  bool active_at_end = false;
  /// Choice-point count c_j at the first Warning of the run.
  std::optional<std::uint64_t> first_warning_visit;
  std::map<WarningKey, std::uint64_t> first_warning_by_key;
};

struct ExperimentResult {
  std::size_t runs = 0;
  std::size_t warnings_issued_ever = 0;
  std::size_t active_at_end = 0;
  std::vector<std::optional<std::uint64_t>> latency;
  std::vector<RunResult> per_run;
};

/// Generates `runs` independent sessions (each capped at `max_steps`
/// messages) and aggregates the monitor's behaviour. Run i is seeded from
/// (seed, i), so the result depends only on the arguments.
ExperimentResult run_experiment(const SessionType& type, ConfidenceLevel level, const PartyModel& left,
                                const PartyModel& right, std::size_t runs, std::uint64_t seed,
                                std::uint64_t max_steps);

struct ExperimentConfig {
  TypePtr type;
  double level = 0.0;
  std::size_t runs = 1;
  std::uint64_t seed = 0;
  std::uint64_t max_steps = 1000;
  PartyModel left;
  PartyModel right;
};

/// Reads the JSON experiment description. A relative `type` path is resolved
/// against the config file's directory. Throws ModelError / ParseError /
/// std::runtime_error.
ExperimentConfig load_experiment(const std::string& path);

/// One row per run.
std::string to_csv(const ExperimentResult& result);
std::string summary_json(const ExperimentResult& result);

}  // namespace pstmon

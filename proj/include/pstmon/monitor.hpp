#pragma once

// Passive partial-identity monitor synthesised from a probabilistic session
// type. The monitor is a value: copy it to fork a session state.
//
// Orientation: the Left endpoint plays the type as written, the Right
// endpoint plays its dual. External choice points are therefore driven by
// Right, internal ones by Left, and the driving side is the one blamed for
// deviations observed there.

#include <compare>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "pstmon/pst.hpp"
#include "pstmon/stats.hpp"

namespace pstmon {

enum class Endpoint { Left, Right };

std::string_view to_string(Endpoint endpoint);

/// The endpoint that selects the branch at a choice point of this direction.
Endpoint controller(Direction direction);

using Value = std::variant<std::int64_t, std::string, bool>;

struct Message {
  Endpoint origin = Endpoint::Left;
  std::string label;
  std::vector<Value> payload;
};

struct WarningKey {
  std::size_t choice_point = 0;
  std::string branch;
  Boundary boundary = Boundary::Low;

  auto operator<=>(const WarningKey&) const = default;
};

enum class EventKind { Warning, Retraction, Violation, Termination };

std::string_view to_string(EventKind kind);

struct MonitorEvent {
  EventKind kind = EventKind::Termination;
  std::uint64_t seq = 0;
  std::optional<std::size_t> choice_point;
  std::optional<std::string> branch;
  std::optional<Boundary> boundary;
  std::optional<Endpoint> blamed;
  std::optional<IntervalReport> report;
  std::optional<std::uint64_t> count_total;
  std::optional<std::uint64_t> count_branch;
  std::string reason;
  // Termination only.
  bool abnormal = false;
  std::vector<WarningKey> verdicts;
};

/// One JSON object, no trailing newline. Field order is fixed and numbers
/// carry exactly four decimals, so logs can be compared byte for byte.
std::string to_json_line(const MonitorEvent& event);

enum class ForwardDecision { Forward, Drop };

enum class StepOutcome {
  Accepted,
  Violated,
  /// The monitor had already terminated or halted; nothing was checked.
  NotRunning,
};

struct StepResult {
  std::vector<MonitorEvent> events;
  ForwardDecision decision = ForwardDecision::Drop;
  StepOutcome outcome = StepOutcome::NotRunning;
};

enum class MonitorStatus {
  Running,
  /// Reached `end`; the Termination event has not been emitted yet.
  AtEnd,
  Terminated,
  /// Stopped by a Violation.
  Halted,
};

class InvalidSessionType : public std::invalid_argument {
 public:
  explicit InvalidSessionType(std::vector<Diagnostic> diagnostics);

  const std::vector<Diagnostic>& diagnostics() const { return diagnostics_; }

 private:
  std::vector<Diagnostic> diagnostics_;
};

struct StatusRow {
  std::size_t choice_point = 0;
  Direction direction = Direction::External;
  std::string branch;
  ProbAnnotation annotation;
  std::uint64_t count_total = 0;
  std::uint64_t count_branch = 0;
  std::optional<double> estimate;
  std::optional<IntervalReport> interval;
  bool warning_low = false;
  bool warning_high = false;

  bool operator==(const StatusRow&) const = default;
};

struct StatusReport {
  Successor position;
  MonitorStatus status = MonitorStatus::Running;
  std::vector<StatusRow> rows;

  bool operator==(const StatusReport&) const = default;
};

std::string to_string(const StatusReport& report);

class Monitor {
 public:
  /// Throws InvalidSessionType if the type does not validate.
  Monitor(const SessionType& type, ConfidenceLevel level);

  /// Processes one message. See the class comment for orientation.
  StepResult step(const Message& message);

  /// Raises a Violation for a frame that never became a Message (framing or
  /// decoding failure). An out-of-turn origin takes precedence over `reason`.
  StepResult reject(Endpoint origin, std::string reason,
                    std::optional<std::string> label = std::nullopt);

  /// Emits Termination if the session reached `end` and has not reported it.
  std::vector<MonitorEvent> finish();

  /// Abnormal termination, e.g. a peer disconnected mid-session. No-op once
  /// terminated or halted.
  std::vector<MonitorEvent> abort(std::string reason);

  MonitorStatus status() const { return status_; }
  /// True once abort() produced an abnormal Termination.
  bool aborted() const { return aborted_; }
  Successor position() const { return position_; }
  const ChoicePointTable& table() const { return *table_; }
  const ConfidenceLevel& level() const { return level_; }
  const ChoiceCounters& counters(std::size_t j) const { return counters_.at(j); }
  std::uint64_t seq() const { return seq_; }

  /// Sender expected by the current choice point, if any.
  std::optional<Endpoint> expected_sender() const;

  bool warning_active(const WarningKey& key) const;
  std::vector<WarningKey> active_warnings() const;

  StatusReport snapshot() const;

 private:
  MonitorEvent make_event(EventKind kind);
  StepResult violate(Endpoint origin, std::string reason, std::optional<std::string> label);
  MonitorEvent termination(bool abnormal, std::string reason);

  std::shared_ptr<const ChoicePointTable> table_;
  ConfidenceLevel level_;
  Successor position_;
  MonitorStatus status_ = MonitorStatus::Running;
  std::vector<ChoiceCounters> counters_;
  std::map<WarningKey, bool> active_;
  std::uint64_t seq_ = 0;
  bool aborted_ = false;
};

}  // namespace pstmon

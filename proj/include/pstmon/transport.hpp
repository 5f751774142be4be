#pragma once

// Runs a monitor between two parties: live as a TCP proxy, or offline over
// a recorded trace. Both paths feed frames through the same SessionDriver,
// so a captured live session replays to the same event log.

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pstmon/codec.hpp"
#include "pstmon/monitor.hpp"
#include "pstmon/pst.hpp"

namespace pstmon {

enum class ExitStatus : int {
  Clean = 0,
  Verdicts = 2,
  Violation = 3,
  TransportError = 4,
  /// Replay only: the trace stopped before the session reached `end`.
  Incomplete = 5,
};

/// Exit status implied by a monitor's state: Clean/Verdicts on a normal
/// termination, Violation when halted, TransportError after an abnormal
/// termination, Incomplete while still running.
ExitStatus exit_status_of(const Monitor& monitor);

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Append-only, line-atomic sink for the JSON event log.
class EventLog {
 public:
  explicit EventLog(std::ostream& out) : out_(&out) {}

  void write(const MonitorEvent& event, std::optional<std::size_t> session = std::nullopt);
  void write_all(const std::vector<MonitorEvent>& events, std::optional<std::size_t> session = std::nullopt);

 private:
  std::mutex mu_;
  std::ostream* out_;
};

struct TraceRecord {
  Endpoint origin = Endpoint::Left;
  std::string text;
};

class TraceError : public std::runtime_error {
 public:
  TraceError(std::size_t line, const std::string& message);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// `L: text` / `R: text`. Blank lines and lines starting with `#` yield
/// nullopt. Throws TraceError on anything else.
std::optional<TraceRecord> parse_trace_line(std::string_view line, std::size_t line_no = 0);
std::string format_trace_record(const TraceRecord& record);

/// Connection-manager side of a session: decodes raw frames against the
/// monitor's current choice point and steps the monitor.
class SessionDriver {
 public:
  SessionDriver(const SessionType& type, ConfidenceLevel level);

  /// Events that precede any traffic (Termination for a type that is just
  /// `end`).
  std::vector<MonitorEvent> start();

  StepResult on_frame(Endpoint origin, std::string_view raw);

  Monitor& monitor() { return monitor_; }
  const Monitor& monitor() const { return monitor_; }

 private:
  Monitor monitor_;
};

struct ReplayResult {
  std::vector<MonitorEvent> events;
  ExitStatus status = ExitStatus::Incomplete;
  /// Records that followed a Violation or Termination and were never fed.
  std::size_t unreachable = 0;
  StatusReport final_status;
};

/// Deterministic offline run. Throws TraceError on malformed records.
ReplayResult replay(const SessionType& type, ConfidenceLevel level, std::istream& trace);

struct Address {
  std::string host;
  std::uint16_t port = 0;
};

/// `host:port`, `[v6]:port` or `:port`. Throws std::invalid_argument.
Address parse_address(std::string_view text);

struct ProxyOptions {
  Address listen;
  Address forward;
  bool halt_on_violation = true;
};

/// Newline-delimited text proxy. Right is the accepted client, Left is the
/// dialled server.
class Proxy {
 public:
  Proxy(TypePtr type, ConfidenceLevel level, ProxyOptions options, EventLog& log);
  ~Proxy();
  Proxy(const Proxy&) = delete;
  Proxy& operator=(const Proxy&) = delete;

  /// Binds and listens. Throws TransportError.
  void bind();
  /// Actual listening port (useful when binding port 0).
  std::uint16_t port() const { return port_; }

  /// Accepts one client, dials the server and runs the session to its end.
  /// `capture`, if given, receives every frame read in trace format.
  ExitStatus serve_one(std::ostream* capture = nullptr, std::optional<std::size_t> session = std::nullopt);

  /// Accepts `sessions` clients, each handled on its own thread. Returns the
  /// most severe exit status. Capture streams are indexed by session.
  ExitStatus serve(std::size_t sessions, const std::vector<std::ostream*>& captures = {});

 private:
  ExitStatus run_session(int client_fd, std::ostream* capture, std::optional<std::size_t> session);

  TypePtr type_;
  ConfidenceLevel level_;
  ProxyOptions options_;
  EventLog& log_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
};

struct SessionConfig {
  std::string type_path;
  double level = 0.0;
  std::string listen;
  std::string forward;
  std::string log_path;  // empty: standard output
  bool halt_on_violation = true;
  std::string capture_path;
  std::size_t sessions = 1;
};

/// Loads the type, serves the configured number of sessions and returns the
/// process exit status.
int run_proxy(const SessionConfig& config);

}  // namespace pstmon

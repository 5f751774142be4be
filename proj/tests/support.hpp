#pragma once

// Shared helpers for the test binaries: fixture loading, random type and
// trace generators, independent reference computations and a loopback
// harness for the proxy.

#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "pstmon/monitor.hpp"
#include "pstmon/pst.hpp"
#include "pstmon/transport.hpp"

namespace testsupport {

using Rng = std::mt19937_64;

std::string data_path(const std::string& name);
std::string read_file(const std::string& path);
pstmon::TypePtr load_type(const std::string& name);

/// Closed, guarded, mass-correct random type.
pstmon::TypePtr random_type(Rng& rng, int depth = 3);

pstmon::Value random_value(pstmon::Sort sort, Rng& rng);

/// A walk through the table with a private, arbitrary branch distribution per
/// choice point, so deviations are common. Stops at `end` or after
/// `max_steps` messages.
std::vector<pstmon::Message> random_walk(const pstmon::ChoicePointTable& table, Rng& rng, std::size_t max_steps);

/// Z(level) by Simpson integration of the normal density plus bisection.
double z_by_integration(double level);

struct OracleResult {
  std::set<pstmon::WarningKey> deviating;
  /// Keys whose estimate lies within 1e-9 of a bound; left out of `deviating`.
  std::set<pstmon::WarningKey> ambiguous;
};

/// Recounts the accepted prefix from scratch and evaluates every checked
/// bound with `zed`.
OracleResult oracle_deviations(const pstmon::ChoicePointTable& table, const std::vector<pstmon::Message>& prefix,
                               double zed);

/// One frame exchanged through the proxy, in script order.
struct ScriptLine {
  pstmon::Endpoint origin;
  std::string text;
};

std::vector<ScriptLine> script_of(const std::vector<pstmon::Message>& messages);
std::vector<ScriptLine> read_trace(const std::string& path);

struct ProxyRun {
  pstmon::ExitStatus status = pstmon::ExitStatus::TransportError;
  std::string log;
  std::string capture;
  std::vector<std::string> left_sent, left_received;
  std::vector<std::string> right_sent, right_received;
};

/// Loopback fixture: a scripted server (Left) behind a proxy, and a scripted
/// client (Right) in front of it. Each party sends its own lines and reads
/// the peer's; it stops at the first end of stream, otherwise half-closes
/// after its last line and drains until the proxy closes.
class LoopbackBench {
 public:
  LoopbackBench(pstmon::TypePtr type, double level, bool halt_on_violation = true);
  ~LoopbackBench();

  ProxyRun run(const std::vector<ScriptLine>& script);
  /// Separate views for when the proxy is expected to drop frames.
  ProxyRun run(const std::vector<ScriptLine>& left_script, const std::vector<ScriptLine>& right_script);

 private:
  pstmon::TypePtr type_;
  double level_;
  bool halt_;
  int server_fd_ = -1;
  std::uint16_t server_port_ = 0;
};

}  // namespace testsupport

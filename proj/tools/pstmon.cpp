// pstmon: command-line front end for the probabilistic session-type monitor.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "pstmon/monitor.hpp"
#include "pstmon/pst.hpp"
#include "pstmon/sim.hpp"
#include "pstmon/transport.hpp"

namespace {

constexpr int kUsage = 64;
constexpr int kDataError = 65;
constexpr int kNoInput = 66;

std::optional<std::string> slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Loads and validates a type file. On failure prints the problem and stores
// the exit code in `rc`.
pstmon::TypePtr load_type(const std::string& path, int& rc) {
  auto src = slurp(path);
  if (!src) {
    std::cerr << path << ": cannot open file\n";
    rc = kNoInput;
    return nullptr;
  }
  pstmon::TypePtr type;
  try {
    type = pstmon::parse(*src);
  } catch (const pstmon::ParseError& e) {
    std::cerr << path << ":" << e.what() << "\n";
    rc = kDataError;
    return nullptr;
  }
  auto diagnostics = pstmon::validate(*type);
  if (!diagnostics.empty()) {
    for (const auto& d : diagnostics) {
      std::cout << path << ":" << d.pos.line << ":" << d.pos.column << ": " << pstmon::to_string(d.kind) << ": "
                << d.message << "\n";
    }
    rc = kDataError;
    return nullptr;
  }
  rc = 0;
  return type;
}

bool valid_level(double level) { return level >= 0.0 && level < 1.0; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Runtime monitor for probabilistic binary session types", "pstmon"};
  app.require_subcommand(1);

  std::string type_path;
  std::string trace_path;
  std::string config_path;
  std::string log_path;
  std::string capture_path;
  std::string csv_path;
  std::string summary_path;
  std::string listen;
  std::string forward;
  double confidence = -1.0;
  bool no_halt = false;
  bool show_status = false;
  std::size_t sessions = 1;

  auto* check = app.add_subcommand("check", "Validate a session type; prints diagnostics");
  check->add_option("file", type_path, "PST file")->required();

  auto* dual = app.add_subcommand("dual", "Print the dual type");
  dual->add_option("file", type_path, "PST file")->required();

  auto* table = app.add_subcommand("table", "Print the choice-point table");
  table->add_option("file", type_path, "PST file")->required();

  auto* proxy = app.add_subcommand("proxy", "Monitor a live session between a client and a server");
  proxy->add_option("file", type_path, "PST file")->required();
  proxy->add_option("--confidence", confidence, "Confidence level in [0, 1)")->required();
  proxy->add_option("--listen", listen, "host:port the client connects to")->required();
  proxy->add_option("--forward", forward, "host:port of the server")->required();
  proxy->add_option("--log", log_path, "Event log file (default: stdout)");
  proxy->add_flag("--no-halt-on-violation", no_halt, "Keep relaying, unmonitored, after a violation");
  proxy->add_option("--capture", capture_path, "Write a replayable trace of the session");
  proxy->add_option("--sessions", sessions, "Number of client sessions to serve")->check(CLI::PositiveNumber);

  auto* replay = app.add_subcommand("replay", "Run the monitor over a recorded trace");
  replay->add_option("file", type_path, "PST file")->required();
  replay->add_option("trace", trace_path, "Trace file (L:/R: records)")->required();
  replay->add_option("--confidence", confidence, "Confidence level in [0, 1)")->required();
  replay->add_option("--log", log_path, "Event log file (default: stdout)");
  replay->add_flag("--status", show_status, "Print the final monitor status to stderr");

  auto* simulate = app.add_subcommand("simulate", "Monte Carlo experiment from a JSON config");
  simulate->add_option("config", config_path, "Experiment config")->required();
  simulate->add_option("--csv", csv_path, "Per-run CSV output");
  simulate->add_option("--summary", summary_path, "Summary JSON output (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kUsage;
  }

  int rc = 0;

  if (check->parsed()) {
    load_type(type_path, rc);
    return rc;
  }

  if (dual->parsed()) {
    auto type = load_type(type_path, rc);
    if (!type) return rc;
    std::cout << pstmon::pretty(*pstmon::dual(*type), true) << "\n";
    return 0;
  }

  if (table->parsed()) {
    auto type = load_type(type_path, rc);
    if (!type) return rc;
    std::cout << pstmon::to_string(pstmon::build_choice_point_table(*type));
    return 0;
  }

  if (proxy->parsed()) {
    if (!valid_level(confidence)) {
      std::cerr << "--confidence must lie in [0, 1)\n";
      return kUsage;
    }
    auto type = load_type(type_path, rc);
    if (!type) return rc;
    try {
      (void)pstmon::parse_address(listen);
      (void)pstmon::parse_address(forward);
    } catch (const std::invalid_argument& e) {
      std::cerr << e.what() << "\n";
      return kUsage;
    }
    pstmon::SessionConfig cfg;
    cfg.type_path = type_path;
    cfg.level = confidence;
    cfg.listen = listen;
    cfg.forward = forward;
    cfg.log_path = log_path;
    cfg.halt_on_violation = !no_halt;
    cfg.capture_path = capture_path;
    cfg.sessions = sessions;
    return pstmon::run_proxy(cfg);
  }

  if (replay->parsed()) {
    if (!valid_level(confidence)) {
      std::cerr << "--confidence must lie in [0, 1)\n";
      return kUsage;
    }
    auto type = load_type(type_path, rc);
    if (!type) return rc;
    std::ifstream trace(trace_path);
    if (!trace) {
      std::cerr << trace_path << ": cannot open file\n";
      return kNoInput;
    }
    std::ofstream log_file;
    std::ostream* out = &std::cout;
    if (!log_path.empty()) {
      log_file.open(log_path);
      if (!log_file) {
        std::cerr << log_path << ": cannot open for writing\n";
        return kNoInput;
      }
      out = &log_file;
    }
    try {
      pstmon::ReplayResult result = pstmon::replay(*type, pstmon::ConfidenceLevel(confidence), trace);
      for (const auto& e : result.events) *out << pstmon::to_json_line(e) << "\n";
      if (result.unreachable > 0) {
        std::cerr << result.unreachable << " record(s) after the end of the session were not replayed\n";
      }
      if (result.status == pstmon::ExitStatus::Incomplete) std::cerr << "session incomplete\n";
      if (show_status) std::cerr << pstmon::to_string(result.final_status);
      return static_cast<int>(result.status);
    } catch (const pstmon::TraceError& e) {
      std::cerr << trace_path << ": " << e.what() << "\n";
      return kDataError;
    }
  }

  if (simulate->parsed()) {
    if (!slurp(config_path)) {
      std::cerr << config_path << ": cannot open file\n";
      return kNoInput;
    }
    try {
      pstmon::ExperimentConfig cfg = pstmon::load_experiment(config_path);
      auto result = pstmon::run_experiment(*cfg.type, pstmon::ConfidenceLevel(cfg.level), cfg.left, cfg.right,
                                           cfg.runs, cfg.seed, cfg.max_steps);
      if (!csv_path.empty()) {
        std::ofstream csv(csv_path);
        csv << pstmon::to_csv(result);
      }
      if (!summary_path.empty()) {
        std::ofstream summary(summary_path);
        summary << pstmon::summary_json(result) << "\n";
      } else {
        std::cout << pstmon::summary_json(result) << "\n";
      }
      return 0;
    } catch (const pstmon::ParseError& e) {
      std::cerr << e.what() << "\n";
      return kDataError;
    } catch (const std::exception& e) {
      std::cerr << e.what() << "\n";
      return kDataError;
    }
  }

  return kUsage;
}

#include "pstmon/monitor.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <utility>

#include "json.hpp"

namespace pstmon {

std::string_view to_string(Endpoint endpoint) { return endpoint == Endpoint::Left ? "left" : "right"; }

Endpoint controller(Direction direction) {
  return direction == Direction::External ? Endpoint::Right : Endpoint::Left;
}

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::Warning: return "warning";
    case EventKind::Retraction: return "retraction";
    case EventKind::Violation: return "violation";
    case EventKind::Termination: return "termination";
  }
  return "?";
}

namespace {

std::string fixed4(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", x);
  std::string s(buf);
  if (s == "-0.0000") s = "0.0000";
  return s;
}

std::string json_quote(std::string_view s) { return nlohmann::json(std::string(s)).dump(); }

class JsonLine {
 public:
  template <typename T>
  void raw(std::string_view key, const T& value) {
    out_ << (first_ ? "{" : ",") << json_quote(key) << ":" << value;
    first_ = false;
  }
  void str(std::string_view key, std::string_view value) { raw(key, json_quote(value)); }
  void num(std::string_view key, double value) { raw(key, fixed4(value)); }
  std::string done() {
    if (first_) return "{}";
    out_ << "}";
    return out_.str();
  }

 private:
  std::ostringstream out_;
  bool first_ = true;
};

}  // namespace

std::string to_json_line(const MonitorEvent& e) {
  JsonLine j;
  j.raw("seq", e.seq);
  j.str("kind", to_string(e.kind));
  if (e.choice_point) j.raw("choice_point", *e.choice_point);
  if (e.branch) j.str("branch", *e.branch);
  if (e.boundary) j.str("boundary", to_string(*e.boundary));
  if (e.blamed) j.str("blamed", to_string(*e.blamed));
  if (e.report) {
    j.num("estimated", e.report->estimated);
    j.num("expected", e.report->specified);
    j.num("interval_low", e.report->low);
    j.num("interval_high", e.report->high);
  }
  if (e.count_total) j.raw("count_total", *e.count_total);
  if (e.count_branch) j.raw("count_branch", *e.count_branch);
  if (!e.reason.empty()) j.str("reason", e.reason);
  if (e.abnormal) j.raw("abnormal", "true");
  if (!e.verdicts.empty()) {
    std::string list = "[";
    for (std::size_t i = 0; i < e.verdicts.size(); ++i) {
      const WarningKey& k = e.verdicts[i];
      if (i > 0) list += ",";
      list += "{\"choice_point\":" + std::to_string(k.choice_point) + ",\"branch\":" + json_quote(k.branch) +
              ",\"boundary\":" + json_quote(to_string(k.boundary)) + "}";
    }
    list += "]";
    j.raw("verdicts", list);
  }
  return j.done();
}

namespace {

std::string join_messages(const std::vector<Diagnostic>& diagnostics) {
  std::string s = "invalid session type";
  for (const Diagnostic& d : diagnostics) s += "; " + d.message;
  return s;
}

std::string_view value_sort_name(const Value& v) {
  if (std::holds_alternative<std::int64_t>(v)) return "Int";
  if (std::holds_alternative<std::string>(v)) return "Str";
  return "Bool";
}

bool has_sort(const Value& v, Sort sort) {
  switch (sort) {
    case Sort::Int: return std::holds_alternative<std::int64_t>(v);
    case Sort::Str: return std::holds_alternative<std::string>(v);
    case Sort::Bool: return std::holds_alternative<bool>(v);
  }
  return false;
}

}  // namespace

InvalidSessionType::InvalidSessionType(std::vector<Diagnostic> diagnostics)
    : std::invalid_argument(join_messages(diagnostics)), diagnostics_(std::move(diagnostics)) {}

Monitor::Monitor(const SessionType& type, ConfidenceLevel level) : level_(level) {
  auto diagnostics = validate(type);
  if (!diagnostics.empty()) throw InvalidSessionType(std::move(diagnostics));
  table_ = std::make_shared<const ChoicePointTable>(build_choice_point_table(type));
  position_ = table_->initial;
  status_ = position_ ? MonitorStatus::Running : MonitorStatus::AtEnd;
  counters_.resize(table_->size());
  for (const ChoicePoint& cp : table_->entries) {
    for (const TableBranch& b : cp.branches) {
      if (b.annotation.checks_low()) active_[{cp.index, b.label, Boundary::Low}] = false;
      if (b.annotation.checks_high()) active_[{cp.index, b.label, Boundary::High}] = false;
    }
  }
}

std::optional<Endpoint> Monitor::expected_sender() const {
  if (status_ != MonitorStatus::Running || !position_) return std::nullopt;
  return controller(table_->at(*position_).direction);
}

bool Monitor::warning_active(const WarningKey& key) const {
  auto it = active_.find(key);
  return it != active_.end() && it->second;
}

std::vector<WarningKey> Monitor::active_warnings() const {
  // Table order: choice point, then branch declaration, Low before High.
  std::vector<WarningKey> out;
  for (const ChoicePoint& cp : table_->entries) {
    for (const TableBranch& b : cp.branches) {
      for (Boundary bd : {Boundary::Low, Boundary::High}) {
        WarningKey key{cp.index, b.label, bd};
        if (warning_active(key)) out.push_back(std::move(key));
      }
    }
  }
  return out;
}

MonitorEvent Monitor::make_event(EventKind kind) {
  MonitorEvent e;
  e.kind = kind;
  e.seq = ++seq_;
  return e;
}

MonitorEvent Monitor::termination(bool abnormal, std::string reason) {
  MonitorEvent e = make_event(EventKind::Termination);
  e.abnormal = abnormal;
  e.reason = std::move(reason);
  e.verdicts = active_warnings();
  status_ = MonitorStatus::Terminated;
  return e;
}

StepResult Monitor::violate(Endpoint origin, std::string reason, std::optional<std::string> label) {
  MonitorEvent e = make_event(EventKind::Violation);
  e.choice_point = position_;
  e.branch = std::move(label);
  e.blamed = origin;
  e.reason = std::move(reason);
  status_ = MonitorStatus::Halted;
  StepResult r;
  r.events.push_back(std::move(e));
  r.decision = ForwardDecision::Drop;
  r.outcome = StepOutcome::Violated;
  return r;
}

StepResult Monitor::reject(Endpoint origin, std::string reason, std::optional<std::string> label) {
  if (status_ != MonitorStatus::Running) {
    StepResult r;
    r.events = finish();
    return r;
  }
  auto expected = expected_sender();
  if (expected && *expected != origin) {
    return violate(origin, "out-of-turn message from " + std::string(to_string(origin)), std::move(label));
  }
  return violate(origin, std::move(reason), std::move(label));
}

std::vector<MonitorEvent> Monitor::finish() {
  std::vector<MonitorEvent> out;
  if (status_ == MonitorStatus::AtEnd) out.push_back(termination(false, "end"));
  return out;
}

std::vector<MonitorEvent> Monitor::abort(std::string reason) {
  std::vector<MonitorEvent> out;
  if (status_ == MonitorStatus::AtEnd) {
    out.push_back(termination(false, "end"));
  } else if (status_ == MonitorStatus::Running) {
    out.push_back(termination(true, std::move(reason)));
    aborted_ = true;
  }
  return out;
}

StepResult Monitor::step(const Message& m) {
  if (status_ != MonitorStatus::Running) {
    StepResult r;
    r.events = finish();
    return r;
  }

  const std::size_t j = *position_;
  const ChoicePoint& cp = table_->at(j);

  // Qualitative checks: direction, label, payload.
  Endpoint expected = controller(cp.direction);
  if (m.origin != expected) {
    return violate(m.origin, "out-of-turn message from " + std::string(to_string(m.origin)), m.label);
  }
  auto taken = cp.find(m.label);
  if (!taken) return violate(m.origin, "unknown label '" + m.label + "'", m.label);
  const TableBranch& branch = cp.branches[*taken];
  if (m.payload.size() != branch.payload.size()) {
    return violate(m.origin,
                   "payload arity: '" + m.label + "' expects " + std::to_string(branch.payload.size()) +
                       " value(s), got " + std::to_string(m.payload.size()),
                   m.label);
  }
  for (std::size_t k = 0; k < m.payload.size(); ++k) {
    if (!has_sort(m.payload[k], branch.payload[k].sort)) {
      return violate(m.origin,
                     "payload sort: argument " + std::to_string(k + 1) + " of '" + m.label + "' must be " +
                         std::string(to_string(branch.payload[k].sort)) + ", got " +
                         std::string(value_sort_name(m.payload[k])),
                     m.label);
    }
  }

  // Quantitative analysis over every checked branch of j.
  StepResult r;
  ChoiceCounters& counters = counters_[j];
  counters.record(m.label);
  for (const TableBranch& b : cp.branches) {
    if (!b.annotation.has_probability()) continue;
    std::uint64_t hits = counters.count(b.label);
    IntervalReport report = check_interval(level_, counters.total(), hits, b.annotation.p);
    Judgement verdict = judge(b.annotation, report);
    for (Boundary bd : {Boundary::Low, Boundary::High}) {
      auto flag = active_.find({j, b.label, bd});
      if (flag == active_.end()) continue;
      bool deviated = (bd == Boundary::Low && verdict == Judgement::DeviatedLow) ||
                      (bd == Boundary::High && verdict == Judgement::DeviatedHigh);
      if (deviated == flag->second) continue;
      flag->second = deviated;
      MonitorEvent e = make_event(deviated ? EventKind::Warning : EventKind::Retraction);
      e.choice_point = j;
      e.branch = b.label;
      e.boundary = bd;
      if (deviated) e.blamed = expected;
      e.report = report;
      e.count_total = counters.total();
      e.count_branch = hits;
      r.events.push_back(std::move(e));
    }
  }

  r.decision = ForwardDecision::Forward;
  r.outcome = StepOutcome::Accepted;
  position_ = branch.next;
  if (!position_) {
    status_ = MonitorStatus::AtEnd;
    for (MonitorEvent& e : finish()) r.events.push_back(std::move(e));
  }
  return r;
}

StatusReport Monitor::snapshot() const {
  StatusReport out;
  out.position = position_;
  out.status = status_;
  for (const ChoicePoint& cp : table_->entries) {
    const ChoiceCounters& c = counters_[cp.index];
    for (const TableBranch& b : cp.branches) {
      StatusRow row;
      row.choice_point = cp.index;
      row.direction = cp.direction;
      row.branch = b.label;
      row.annotation = b.annotation;
      row.count_total = c.total();
      row.count_branch = c.count(b.label);
      if (c.total() > 0) {
        row.estimate = estimate(c.total(), row.count_branch);
        if (b.annotation.has_probability()) {
          row.interval = check_interval(level_, c.total(), row.count_branch, b.annotation.p);
        }
      }
      row.warning_low = warning_active({cp.index, b.label, Boundary::Low});
      row.warning_high = warning_active({cp.index, b.label, Boundary::High});
      out.rows.push_back(std::move(row));
    }
  }
  return out;
}

namespace {

std::string_view status_name(MonitorStatus s) {
  switch (s) {
    case MonitorStatus::Running: return "running";
    case MonitorStatus::AtEnd: return "at-end";
    case MonitorStatus::Terminated: return "terminated";
    case MonitorStatus::Halted: return "halted";
  }
  return "?";
}

}  // namespace

std::string to_string(const StatusReport& report) {
  std::ostringstream out;
  out << "status: " << status_name(report.status)
      << "  position: " << (report.position ? std::to_string(*report.position) : std::string("end")) << "\n";
  for (const StatusRow& row : report.rows) {
    out << "j=" << row.choice_point << " " << row.branch << " [" << to_string(row.annotation) << "] "
        << row.count_branch << "/" << row.count_total << " estimate "
        << (row.estimate ? fixed4(*row.estimate) : std::string("n/a"));
    if (row.interval) {
      out << " interval [" << fixed4(row.interval->low) << ", " << fixed4(row.interval->high) << "]";
    } else {
      out << " interval n/a";
    }
    if (row.warning_low) out << " WARN-LOW";
    if (row.warning_high) out << " WARN-HIGH";
    out << "\n";
  }
  return out.str();
}

}  // namespace pstmon

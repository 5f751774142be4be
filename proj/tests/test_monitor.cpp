#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "pstmon/monitor.hpp"
#include "support.hpp"

using namespace pstmon;

namespace {

const Endpoint L = Endpoint::Left;
const Endpoint R = Endpoint::Right;

Message guess(std::int64_t n = 42) { return {R, "Guess", {n}}; }
Message help() { return {R, "Help", {}}; }
Message quit() { return {R, "Quit", {}}; }
Message hint() { return {L, "Hint", {std::string("low")}}; }
Message correct() { return {L, "Correct", {}}; }
Message incorrect() { return {L, "Incorrect", {}}; }

Monitor game(double level = 0.99999) { return Monitor(*testsupport::load_type("s_game.pst"), ConfidenceLevel(level)); }

std::vector<MonitorEvent> feed(Monitor& m, const std::vector<Message>& msgs) {
  std::vector<MonitorEvent> out;
  for (const Message& msg : msgs) {
    StepResult r = m.step(msg);
    REQUIRE(r.outcome == StepOutcome::Accepted);
    REQUIRE(r.decision == ForwardDecision::Forward);
    out.insert(out.end(), r.events.begin(), r.events.end());
  }
  return out;
}

}  // namespace

TEST_CASE("accepted messages move through the table") {
  Monitor m = game();
  CHECK(m.position() == std::optional<std::size_t>(0));
  CHECK(m.expected_sender() == R);
  feed(m, {guess()});
  CHECK(m.position() == std::optional<std::size_t>(1));
  CHECK(m.expected_sender() == L);
  feed(m, {incorrect(), help(), hint()});
  CHECK(m.position() == std::optional<std::size_t>(0));
  CHECK(m.counters(0).total() == 2);
  CHECK(m.counters(1).count("Incorrect") == 1);
  CHECK(m.counters(2).count("Hint") == 1);
}

TEST_CASE("help flood warns once and blames the client") {
  Monitor m = game();
  std::vector<Message> msgs;
  for (int i = 0; i < 4; ++i) {
    msgs.push_back(guess());
    msgs.push_back(incorrect());
  }
  for (int i = 0; i < 13; ++i) {
    msgs.push_back(help());
    msgs.push_back(hint());
  }
  auto events = feed(m, msgs);
  std::vector<MonitorEvent> help_events;
  for (const auto& e : events) {
    if (e.branch == std::optional<std::string>("Help")) help_events.push_back(e);
  }
  REQUIRE(help_events.size() == 1);
  CHECK(help_events[0].kind == EventKind::Warning);
  CHECK(help_events[0].boundary == Boundary::High);
  CHECK(help_events[0].blamed == R);
  CHECK(help_events[0].choice_point == std::optional<std::size_t>(0));
  CHECK(m.warning_active({0, "Help", Boundary::High}));
}

TEST_CASE("internal choice deviations blame the server and are retracted") {
  Monitor m = game();
  std::vector<MonitorEvent> events;
  auto round = [&](const Message& reply) {
    auto e = feed(m, {guess(), reply});
    events.insert(events.end(), e.begin(), e.end());
  };
  for (int i = 0; i < 4; ++i) round(incorrect());
  for (int i = 0; i < 2; ++i) round(correct());
  std::vector<MonitorEvent> at_j1;
  for (const auto& e : events) {
    if (e.choice_point == std::optional<std::size_t>(1)) at_j1.push_back(e);
  }
  REQUIRE(at_j1.size() == 2);
  CHECK(at_j1[0].branch == std::optional<std::string>("Correct"));
  CHECK(at_j1[0].boundary == Boundary::High);
  CHECK(at_j1[1].branch == std::optional<std::string>("Incorrect"));
  CHECK(at_j1[1].boundary == Boundary::Low);
  CHECK(at_j1[0].blamed == L);
  CHECK(at_j1[1].blamed == L);
  CHECK(at_j1[0].seq + 1 == at_j1[1].seq);

  for (int i = 0; i < 12; ++i) round(incorrect());
  CHECK_FALSE(m.warning_active({1, "Correct", Boundary::High}));
  CHECK_FALSE(m.warning_active({1, "Incorrect", Boundary::Low}));
}

TEST_CASE("violations: direction is checked before label and payload") {
  SUBCASE("out of turn") {
    Monitor m = game();
    StepResult r = m.step({L, "Bogus", {}});
    CHECK(r.outcome == StepOutcome::Violated);
    CHECK(r.decision == ForwardDecision::Drop);
    REQUIRE(r.events.size() == 1);
    CHECK(r.events[0].kind == EventKind::Violation);
    CHECK(r.events[0].blamed == L);
    CHECK(r.events[0].reason == "out-of-turn message from left");
  }
  SUBCASE("unknown label") {
    Monitor m = game();
    StepResult r = m.step({R, "Bogus", {}});
    REQUIRE(r.events.size() == 1);
    CHECK(r.events[0].blamed == R);
    CHECK(r.events[0].reason == "unknown label 'Bogus'");
    CHECK(r.events[0].branch == std::optional<std::string>("Bogus"));
  }
  SUBCASE("arity") {
    Monitor m = game();
    StepResult r = m.step({R, "Guess", {}});
    REQUIRE(r.events.size() == 1);
    CHECK(r.events[0].reason.rfind("payload arity", 0) == 0);
  }
  SUBCASE("sort") {
    Monitor m = game();
    StepResult r = m.step({R, "Guess", {std::string("five")}});
    REQUIRE(r.events.size() == 1);
    CHECK(r.events[0].reason == "payload sort: argument 1 of 'Guess' must be Int, got Str");
  }
  SUBCASE("counters are untouched and the monitor stays halted") {
    Monitor m = game();
    feed(m, {guess(), incorrect()});
    m.step({R, "Guess", {true}});
    CHECK(m.status() == MonitorStatus::Halted);
    CHECK(m.counters(0).total() == 1);
    StepResult again = m.step(help());
    CHECK(again.outcome == StepOutcome::NotRunning);
    CHECK(again.decision == ForwardDecision::Drop);
    CHECK(again.events.empty());
    CHECK(m.finish().empty());
    CHECK(m.abort("late").empty());
  }
}

TEST_CASE("reject goes through the same blame rules") {
  Monitor m = game();
  StepResult r = m.reject(R, "unparseable frame");
  REQUIRE(r.events.size() == 1);
  CHECK(r.events[0].reason == "unparseable frame");
  CHECK(r.events[0].blamed == R);
  Monitor n = game();
  StepResult s = n.reject(L, "unparseable frame");
  CHECK(s.events[0].reason == "out-of-turn message from left");
}

TEST_CASE("termination carries the active warnings as verdicts") {
  Monitor m = game();
  std::vector<Message> msgs;
  for (int i = 0; i < 13; ++i) {
    msgs.push_back(help());
    msgs.push_back(hint());
  }
  msgs.push_back(quit());
  auto events = feed(m, msgs);
  CHECK(m.status() == MonitorStatus::Terminated);
  REQUIRE_FALSE(events.empty());
  const MonitorEvent& t = events.back();
  CHECK(t.kind == EventKind::Termination);
  CHECK_FALSE(t.abnormal);
  CHECK(t.verdicts == m.active_warnings());
  CHECK_FALSE(t.verdicts.empty());
  CHECK(m.step(help()).outcome == StepOutcome::NotRunning);
}

TEST_CASE("abort and end-only sessions") {
  Monitor m = game();
  feed(m, {guess()});
  auto events = m.abort("left disconnected");
  REQUIRE(events.size() == 1);
  CHECK(events[0].abnormal);
  CHECK(events[0].reason == "left disconnected");
  CHECK(m.aborted());
  CHECK(m.status() == MonitorStatus::Terminated);

  Monitor e(*parse("end"), ConfidenceLevel(0.95));
  CHECK(e.status() == MonitorStatus::AtEnd);
  CHECK_FALSE(e.expected_sender().has_value());
  auto fin = e.finish();
  REQUIRE(fin.size() == 1);
  CHECK(fin[0].kind == EventKind::Termination);
  CHECK(fin[0].seq == 1);
  CHECK(e.finish().empty());
}

TEST_CASE("invalid types are refused") {
  CHECK_THROWS_AS(Monitor(*parse("&{?A[0.5] . end}"), ConfidenceLevel(0.95)), InvalidSessionType);
}

TEST_CASE("monitors are values") {
  Monitor a = game();
  feed(a, {guess(), incorrect()});
  Monitor b = a;
  feed(b, {help(), hint()});
  CHECK(a.counters(0).total() == 1);
  CHECK(b.counters(0).total() == 2);
  CHECK(a.seq() == 0);
}

TEST_CASE("json lines") {
  MonitorEvent w;
  w.kind = EventKind::Warning;
  w.seq = 3;
  w.choice_point = 0;
  w.branch = "Help";
  w.boundary = Boundary::High;
  w.blamed = R;
  w.report = IntervalReport{0.76470588, 0.2, 0.4285, -0.2285, 0.62853, false};
  w.count_total = 17;
  w.count_branch = 13;
  CHECK(to_json_line(w) ==
        R"({"seq":3,"kind":"warning","choice_point":0,"branch":"Help","boundary":"high","blamed":"right",)"
        R"("estimated":0.7647,"expected":0.2000,"interval_low":-0.2285,"interval_high":0.6285,)"
        R"("count_total":17,"count_branch":13})");

  MonitorEvent v;
  v.kind = EventKind::Violation;
  v.seq = 1;
  v.blamed = L;
  v.reason = "unknown label \"x\"";
  CHECK(to_json_line(v) == R"({"seq":1,"kind":"violation","blamed":"left","reason":"unknown label \"x\""})");

  MonitorEvent t;
  t.kind = EventKind::Termination;
  t.seq = 9;
  t.reason = "right disconnected";
  t.abnormal = true;
  t.verdicts = {{0, "Help", Boundary::High}};
  CHECK(to_json_line(t) ==
        R"({"seq":9,"kind":"termination","reason":"right disconnected","abnormal":true,)"
        R"("verdicts":[{"choice_point":0,"branch":"Help","boundary":"high"}]})");
}

TEST_CASE("snapshot") {
  Monitor m = game();
  feed(m, {help(), hint()});
  StatusReport s = m.snapshot();
  CHECK(s.position == std::optional<std::size_t>(0));
  CHECK(s.status == MonitorStatus::Running);
  REQUIRE(s.rows.size() == 6);
  CHECK(s.rows[1].branch == "Help");
  CHECK(s.rows[1].count_total == 1);
  CHECK(s.rows[1].count_branch == 1);
  REQUIRE(s.rows[1].estimate.has_value());
  CHECK(*s.rows[1].estimate == 1.0);
  CHECK_FALSE(s.rows[3].estimate.has_value());
  CHECK(to_string(s).find("n/a") != std::string::npos);
}

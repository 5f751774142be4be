#include "pstmon/sim.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace pstmon {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Xoshiro256::Xoshiro256(std::uint64_t seed) {
  for (auto& word : s_) word = splitmix64(seed);
}

Xoshiro256 Xoshiro256::from_state(std::uint64_t s0, std::uint64_t s1, std::uint64_t s2, std::uint64_t s3) {
  Xoshiro256 g(0);
  g.s_[0] = s0;
  g.s_[1] = s1;
  g.s_[2] = s2;
  g.s_[3] = s3;
  return g;
}

Xoshiro256::result_type Xoshiro256::operator()() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Xoshiro256::uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

std::uint64_t Xoshiro256::below(std::uint64_t n) {
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>((*this)()) * n) >> 64);
}

// ---------------------------------------------------------------------------
// Party models

PartyModel conforming_model(const ChoicePointTable& table, Endpoint role) {
  PartyModel m;
  for (const ChoicePoint& cp : table.entries) {
    if (controller(cp.direction) != role) continue;
    std::vector<std::pair<std::string, double>> dist;
    double mass = 0.0;
    for (const TableBranch& b : cp.branches) {
      if (!b.annotation.has_probability()) {
        throw ModelError("choice point " + std::to_string(cp.index) + ": branch '" + b.label +
                         "' has no probability to follow");
      }
      dist.emplace_back(b.label, b.annotation.p);
      mass += b.annotation.p;
    }
    if (std::fabs(mass - 1.0) > kProbabilityTolerance) {
      throw ModelError("choice point " + std::to_string(cp.index) + ": annotations do not sum to 1");
    }
    m.distributions[cp.index] = std::move(dist);
  }
  return m;
}

void check_model(const PartyModel& model, const ChoicePointTable& table, Endpoint role) {
  for (const auto& [j, dist] : model.distributions) {
    if (j >= table.size()) throw ModelError("unknown choice point " + std::to_string(j));
    const ChoicePoint& cp = table.at(j);
    if (controller(cp.direction) != role) {
      throw ModelError("choice point " + std::to_string(j) + " is not controlled by the " +
                       std::string(to_string(role)) + " party");
    }
    double mass = 0.0;
    for (const auto& [label, p] : dist) {
      if (!cp.find(label)) {
        throw ModelError("choice point " + std::to_string(j) + " has no label '" + label + "'");
      }
      if (!(p >= 0.0 && p <= 1.0)) throw ModelError("probability of '" + label + "' outside [0, 1]");
      mass += p;
    }
    if (std::fabs(mass - 1.0) > kProbabilityTolerance) {
      throw ModelError("distribution at choice point " + std::to_string(j) + " does not sum to 1");
    }
  }
  for (const ChoicePoint& cp : table.entries) {
    if (controller(cp.direction) == role && !model.distributions.count(cp.index)) {
      throw ModelError("no distribution for choice point " + std::to_string(cp.index));
    }
  }
  if (model.stop) {
    const StopRule& s = *model.stop;
    if (s.choice_point >= table.size() || controller(table.at(s.choice_point).direction) != role ||
        !table.at(s.choice_point).find(s.label)) {
      throw ModelError("stop rule names an unknown or foreign branch '" + s.label + "'");
    }
  }
}

// ---------------------------------------------------------------------------
// Generator

namespace {

const char kLetters[] = "abcdefghijklmnopqrstuvwxyz,\\ ";

Value random_value(Sort sort, Xoshiro256& rng) {
  switch (sort) {
    case Sort::Int: return static_cast<std::int64_t>(rng.below(100)) + 1;
    case Sort::Bool: return rng.below(2) == 1;
    case Sort::Str: {
      std::string s(rng.below(9), ' ');
      for (char& c : s) c = kLetters[rng.below(sizeof kLetters - 1)];
      return s;
    }
  }
  return std::int64_t{0};
}

}  // namespace

SessionGenerator::SessionGenerator(const ChoicePointTable& table, const PartyModel& left,
                                   const PartyModel& right, std::uint64_t seed)
    : table_(table), left_(left), right_(right), rng_(seed), position_(table.initial) {}

std::optional<Message> SessionGenerator::next() {
  if (!position_) return std::nullopt;
  const ChoicePoint& cp = table_.at(*position_);
  Endpoint who = controller(cp.direction);
  const PartyModel& model = who == Endpoint::Left ? left_ : right_;
  std::uint64_t& visits = visits_[who == Endpoint::Left ? 0 : 1];

  std::string label;
  if (model.stop && visits >= model.stop->after_visits && model.stop->choice_point == cp.index) {
    label = model.stop->label;
  } else {
    const auto& dist = model.distributions.at(cp.index);
    double u = rng_.uniform();
    double acc = 0.0;
    for (const auto& [l, p] : dist) {
      if (p <= 0.0) continue;
      label = l;
      acc += p;
      if (u < acc) break;
    }
  }
  ++visits;

  const TableBranch& branch = cp.branches[*cp.find(label)];
  Message m{who, label, {}};
  for (const Field& f : branch.payload) m.payload.push_back(random_value(f.sort, rng_));
  position_ = branch.next;
  return m;
}

// ---------------------------------------------------------------------------
// Experiments

ExperimentResult run_experiment(const SessionType& type, ConfidenceLevel level, const PartyModel& left,
                                const PartyModel& right, std::size_t runs, std::uint64_t seed,
                                std::uint64_t max_steps) {
  if (runs == 0) throw ModelError("runs must be at least 1");
  const Monitor prototype(type, level);
  const ChoicePointTable& table = prototype.table();
  check_model(left, table, Endpoint::Left);
  check_model(right, table, Endpoint::Right);

  ExperimentResult out;
  out.runs = runs;
  for (std::size_t i = 0; i < runs; ++i) {
    std::uint64_t state = seed ^ (0xd1b54a32d192ed03ULL * (i + 1));
    SessionGenerator gen(table, left, right, splitmix64(state));
    Monitor monitor = prototype;
    RunResult run;
    (void)monitor.finish();
    while (monitor.status() == MonitorStatus::Running && run.steps < max_steps) {
      auto message = gen.next();
      if (!message) break;
      StepResult r = monitor.step(*message);
      ++run.steps;
      for (const MonitorEvent& e : r.events) {
        if (e.kind != EventKind::Warning) continue;
        ++run.warnings;
        if (!run.first_warning_visit) run.first_warning_visit = e.count_total;
        run.first_warning_by_key.try_emplace(WarningKey{*e.choice_point, *e.branch, *e.boundary},
                                             *e.count_total);
      }
    }
    run.terminated = monitor.status() == MonitorStatus::Terminated;
    run.active_at_end = !monitor.active_warnings().empty();
    if (run.warnings > 0) ++out.warnings_issued_ever;
    if (run.active_at_end) ++out.active_at_end;
    out.latency.push_back(run.first_warning_visit);
    out.per_run.push_back(std::move(run));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Config and output

namespace {

PartyModel party_from_json(const nlohmann::json& j, const ChoicePointTable& table, Endpoint role) {
  PartyModel model;
  if (j.contains("choice_points")) {
    for (const auto& [key, dist] : j.at("choice_points").items()) {
      std::size_t idx = std::stoul(key);
      if (idx >= table.size()) throw ModelError("unknown choice point " + key);
      std::vector<std::pair<std::string, double>> ordered;
      for (const auto& [label, p] : dist.items()) {
        if (!table.at(idx).find(label)) throw ModelError("choice point " + key + " has no label '" + label + "'");
      }
      // Keep the type's branch order so sampling does not depend on JSON key order.
      for (const TableBranch& b : table.at(idx).branches) {
        if (dist.contains(b.label)) ordered.emplace_back(b.label, dist.at(b.label).get<double>());
      }
      model.distributions[idx] = std::move(ordered);
    }
  }
  // Anything left uncovered follows the type.
  for (const ChoicePoint& cp : table.entries) {
    if (controller(cp.direction) != role || model.distributions.count(cp.index)) continue;
    PartyModel single = conforming_model(ChoicePointTable{{cp}, cp.index}, role);
    model.distributions[cp.index] = single.distributions.at(cp.index);
  }
  if (j.contains("stop")) {
    const auto& s = j.at("stop");
    model.stop = StopRule{s.at("after").get<std::uint64_t>(), s.at("choice_point").get<std::size_t>(),
                          s.at("label").get<std::string>()};
  }
  return model;
}

}  // namespace

ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(std::string("experiment config: ") + e.what());
  }

  ExperimentConfig cfg;
  try {
    std::filesystem::path type_path = j.at("type").get<std::string>();
    if (type_path.is_relative()) type_path = std::filesystem::path(path).parent_path() / type_path;
    std::ifstream type_in(type_path);
    if (!type_in) throw std::runtime_error("cannot open " + type_path.string());
    std::stringstream src;
    src << type_in.rdbuf();
    cfg.type = parse(src.str());
    auto diagnostics = validate(*cfg.type);
    if (!diagnostics.empty()) throw InvalidSessionType(std::move(diagnostics));

    cfg.level = j.at("confidence").get<double>();
    cfg.runs = j.value("runs", std::size_t{1});
    cfg.seed = j.value("seed", std::uint64_t{0});
    cfg.max_steps = j.value("max_steps", std::uint64_t{1000});
    ChoicePointTable table = build_choice_point_table(*cfg.type);
    cfg.left = party_from_json(j.value("left", nlohmann::json::object()), table, Endpoint::Left);
    cfg.right = party_from_json(j.value("right", nlohmann::json::object()), table, Endpoint::Right);
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(std::string("experiment config: ") + e.what());
  }
  return cfg;
}

std::string to_csv(const ExperimentResult& result) {
  std::ostringstream out;
  out << "run,steps,terminated,warnings,active_at_end,first_warning_visit\n";
  for (std::size_t i = 0; i < result.per_run.size(); ++i) {
    const RunResult& r = result.per_run[i];
    out << i << "," << r.steps << "," << (r.terminated ? 1 : 0) << "," << r.warnings << ","
        << (r.active_at_end ? 1 : 0) << ",";
    if (r.first_warning_visit) out << *r.first_warning_visit;
    out << "\n";
  }
  return out.str();
}

std::string summary_json(const ExperimentResult& result) {
  std::vector<std::uint64_t> seen;
  for (const auto& l : result.latency) {
    if (l) seen.push_back(*l);
  }
  std::sort(seen.begin(), seen.end());
  nlohmann::json j;
  j["runs"] = result.runs;
  j["warnings_issued_ever"] = result.warnings_issued_ever;
  j["active_at_end"] = result.active_at_end;
  j["runs_with_latency"] = seen.size();
  if (!seen.empty()) {
    j["median_first_warning_visit"] = seen[seen.size() / 2];
    j["max_first_warning_visit"] = seen.back();
  }
  return j.dump();
}

}  // namespace pstmon

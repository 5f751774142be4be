#include "support.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "pstmon/codec.hpp"

#ifndef PSTMON_TEST_DATA
#error "PSTMON_TEST_DATA must point at tests/data"
#endif

namespace testsupport {

using namespace pstmon;

std::string data_path(const std::string& name) { return std::string(PSTMON_TEST_DATA) + "/" + name; }

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

TypePtr load_type(const std::string& name) { return parse(read_file(data_path(name))); }

// ---------------------------------------------------------------------------
// Random types

namespace {

const std::vector<std::string> kLabels = {"A", "B", "Go", "Stop", "Hint", "Ok", "Err", "Data", "Ack", "Nack"};

std::uint64_t below(Rng& rng, std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(rng); }

struct TypeGen {
  Rng& rng;
  int fresh = 0;

  TypePtr continuation(int depth, std::vector<std::string>& vars) {
    std::uint64_t pick = below(rng, depth > 0 ? 4 : 2);
    if (pick == 1 && !vars.empty()) return make_var(vars[below(rng, vars.size())]);
    if (pick == 2) return choice(depth - 1, vars);
    if (pick == 3) {
      std::string v = "X" + std::to_string(fresh++);
      vars.push_back(v);
      TypePtr body = choice(depth - 1, vars);
      vars.pop_back();
      return make_rec(v, body);
    }
    return make_end();
  }

  std::vector<ProbAnnotation> annotations(std::size_t n) {
    std::vector<double> w(n);
    double sum = 0.0;
    for (double& x : w) sum += (x = static_cast<double>(1 + below(rng, 20)));
    std::uint64_t mode = below(rng, 3);
    std::vector<ProbAnnotation> out;
    bool any_unchecked = false;
    for (std::size_t i = 0; i < n; ++i) {
      double p = w[i] / sum;
      std::uint64_t kind = below(rng, 4);
      if (mode == 0 || kind == 0) {
        out.push_back(ProbAnnotation::exact(p));
      } else if (kind == 1) {
        out.push_back(ProbAnnotation::lower_only(p));
      } else if (kind == 2) {
        out.push_back(ProbAnnotation::upper_only(p));
      } else {
        out.push_back(ProbAnnotation::unchecked());
        any_unchecked = true;
      }
    }
    // With a wildcard present the remaining mass only has to stay below 1;
    // shrink it sometimes to exercise that rule.
    if (any_unchecked && below(rng, 2) == 0) {
      for (auto& a : out) {
        if (a.has_probability()) a.p *= 0.5;
      }
    }
    return out;
  }

  TypePtr choice(int depth, std::vector<std::string>& vars) {
    std::vector<std::string> labels = kLabels;
    std::shuffle(labels.begin(), labels.end(), rng);
    std::size_t n = 1 + below(rng, 3);
    auto ann = annotations(n);
    std::vector<Branch> branches;
    for (std::size_t i = 0; i < n; ++i) {
      Branch b;
      b.label = labels[i];
      std::size_t fields = below(rng, 3);
      for (std::size_t f = 0; f < fields; ++f) {
        b.payload.push_back(Field{"f" + std::to_string(f), static_cast<Sort>(below(rng, 3))});
      }
      b.annotation = ann[i];
      b.continuation = continuation(depth, vars);
      branches.push_back(std::move(b));
    }
    return make_choice(below(rng, 2) == 0 ? Direction::External : Direction::Internal, std::move(branches));
  }
};

}  // namespace

TypePtr random_type(Rng& rng, int depth) {
  TypeGen gen{rng};
  std::vector<std::string> vars;
  std::uint64_t top = below(rng, 4);
  if (top == 0) return make_end();
  if (top == 1) return gen.choice(depth, vars);
  vars.push_back("X");
  gen.fresh = 0;
  TypePtr body = gen.choice(depth, vars);
  return make_rec("X", body);
}

Value random_value(Sort sort, Rng& rng) {
  switch (sort) {
    case Sort::Int: return static_cast<std::int64_t>(below(rng, 2001)) - 1000;
    case Sort::Bool: return below(rng, 2) == 1;
    case Sort::Str: {
      static const char alphabet[] = "ab, \\xyz()";
      std::string s(below(rng, 6), 'a');
      for (char& c : s) c = alphabet[below(rng, sizeof alphabet - 1)];
      return s;
    }
  }
  return std::int64_t{0};
}

std::vector<Message> random_walk(const ChoicePointTable& table, Rng& rng, std::size_t max_steps) {
  std::map<std::size_t, std::vector<double>> weights;
  for (const ChoicePoint& cp : table.entries) {
    auto& w = weights[cp.index];
    for (std::size_t i = 0; i < cp.branches.size(); ++i) w.push_back(static_cast<double>(below(rng, 10)));
    if (std::all_of(w.begin(), w.end(), [](double x) { return x == 0.0; })) w[below(rng, w.size())] = 1.0;
  }
  std::vector<Message> out;
  Successor pos = table.initial;
  while (pos && out.size() < max_steps) {
    const ChoicePoint& cp = table.at(*pos);
    const auto& w = weights[cp.index];
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    const TableBranch& b = cp.branches[pick(rng)];
    Message m{controller(cp.direction), b.label, {}};
    for (const Field& f : b.payload) m.payload.push_back(random_value(f.sort, rng));
    out.push_back(std::move(m));
    pos = b.next;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reference computations

namespace {

// Integral of the standard normal density over [0, z].
double half_mass(double z) {
  const int n = 4000;
  const double h = z / n;
  auto phi = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); };
  double s = phi(0.0) + phi(z);
  for (int i = 1; i < n; ++i) s += (i % 2 == 1 ? 4.0 : 2.0) * phi(i * h);
  return s * h / 3.0;
}

}  // namespace

double z_by_integration(double level) {
  double lo = 0.0;
  double hi = 10.0;
  for (int i = 0; i < 80; ++i) {
    double mid = 0.5 * (lo + hi);
    if (2.0 * half_mass(mid) < level) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

OracleResult oracle_deviations(const ChoicePointTable& table, const std::vector<Message>& prefix, double zed) {
  std::map<std::size_t, std::map<std::string, std::uint64_t>> counts;
  std::map<std::size_t, std::uint64_t> totals;
  Successor pos = table.initial;
  for (const Message& m : prefix) {
    const ChoicePoint& cp = table.at(*pos);
    ++totals[cp.index];
    ++counts[cp.index][m.label];
    pos = cp.branches[*cp.find(m.label)].next;
  }
  OracleResult out;
  for (const auto& [j, n] : totals) {
    for (const TableBranch& b : table.at(j).branches) {
      const ProbAnnotation& a = b.annotation;
      if (a.kind == ProbAnnotation::Kind::Unchecked) continue;
      double est = static_cast<double>(counts[j][b.label]) / static_cast<double>(n);
      double err = zed * std::sqrt(a.p * (1.0 - a.p) / static_cast<double>(n));
      auto consider = [&](Boundary boundary, double bound, bool outside) {
        WarningKey key{j, b.label, boundary};
        if (std::fabs(est - bound) < 1e-9) {
          out.ambiguous.insert(key);
        } else if (outside) {
          out.deviating.insert(key);
        }
      };
      if (a.kind != ProbAnnotation::Kind::UpperOnly) consider(Boundary::Low, a.p - err, est < a.p - err);
      if (a.kind != ProbAnnotation::Kind::LowerOnly) consider(Boundary::High, a.p + err, est > a.p + err);
    }
  }
  return out;
}

std::vector<ScriptLine> script_of(const std::vector<Message>& messages) {
  std::vector<ScriptLine> out;
  for (const Message& m : messages) out.push_back({m.origin, encode_frame(m.label, m.payload)});
  return out;
}

std::vector<ScriptLine> read_trace(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<ScriptLine> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (auto r = parse_trace_line(line, ++n)) out.push_back({r->origin, r->text});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loopback harness

namespace {

class LineSocket {
 public:
  explicit LineSocket(int fd) : fd_(fd) {}
  ~LineSocket() {
    if (fd_ >= 0) ::close(fd_);
  }
  LineSocket(const LineSocket&) = delete;
  LineSocket& operator=(const LineSocket&) = delete;

  bool send_line(const std::string& text) {
    std::string wire = text + "\n";
    std::size_t off = 0;
    while (off < wire.size()) {
      ssize_t n = ::send(fd_, wire.data() + off, wire.size() - off, MSG_NOSIGNAL);
      if (n <= 0) return false;
      off += static_cast<std::size_t>(n);
    }
    return true;
  }

  void shutdown_write() { ::shutdown(fd_, SHUT_WR); }

  std::optional<std::string> read_line() {
    for (;;) {
      auto nl = buf_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buf_.substr(0, nl);
        buf_.erase(0, nl + 1);
        return line;
      }
      char chunk[4096];
      ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
      if (n <= 0) return std::nullopt;
      buf_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  int fd_;
  std::string buf_;
};

void play(LineSocket& sock, Endpoint me, const std::vector<ScriptLine>& script, std::vector<std::string>& sent,
          std::vector<std::string>& received) {
  for (const ScriptLine& line : script) {
    if (line.origin == me) {
      if (sock.send_line(line.text)) sent.push_back(line.text);
    } else {
      auto got = sock.read_line();
      if (!got) return;
      received.push_back(*got);
    }
  }
  sock.shutdown_write();
  while (auto got = sock.read_line()) received.push_back(*got);
}

sockaddr_in loopback(std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  return addr;
}

}  // namespace

LoopbackBench::LoopbackBench(TypePtr type, double level, bool halt_on_violation)
    : type_(std::move(type)), level_(level), halt_(halt_on_violation) {
  server_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  int one = 1;
  ::setsockopt(server_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr = loopback(0);
  if (::bind(server_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(server_fd_, 16) != 0) {
    throw std::runtime_error("cannot listen on loopback");
  }
  socklen_t len = sizeof addr;
  ::getsockname(server_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  server_port_ = ntohs(addr.sin_port);
}

LoopbackBench::~LoopbackBench() {
  if (server_fd_ >= 0) ::close(server_fd_);
}

ProxyRun LoopbackBench::run(const std::vector<ScriptLine>& script) { return run(script, script); }

ProxyRun LoopbackBench::run(const std::vector<ScriptLine>& left_script, const std::vector<ScriptLine>& right_script) {
  ProxyRun out;
  std::ostringstream log_stream;
  std::ostringstream capture;
  EventLog log(log_stream);
  ProxyOptions options{{"127.0.0.1", 0}, {"127.0.0.1", server_port_}, halt_};
  Proxy proxy(type_, ConfidenceLevel(level_), options, log);
  proxy.bind();

  std::thread server([&] {
    int fd = ::accept(server_fd_, nullptr, nullptr);
    if (fd < 0) return;
    LineSocket sock(fd);
    play(sock, Endpoint::Left, left_script, out.left_sent, out.left_received);
  });
  std::thread client([&] {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr = loopback(proxy.port());
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
      ::close(fd);
      return;
    }
    LineSocket sock(fd);
    play(sock, Endpoint::Right, right_script, out.right_sent, out.right_received);
  });
  out.status = proxy.serve_one(&capture);
  client.join();
  server.join();
  out.log = log_stream.str();
  out.capture = capture.str();
  return out;
}

}  // namespace testsupport

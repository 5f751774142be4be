#include "pstmon/transport.hpp"

#include <fstream>
#include <istream>
#include <sstream>
#include <thread>
#include <utility>

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <iostream>

namespace pstmon {

ExitStatus exit_status_of(const Monitor& monitor) {
  switch (monitor.status()) {
    case MonitorStatus::Halted: return ExitStatus::Violation;
    case MonitorStatus::Terminated:
      if (monitor.aborted()) return ExitStatus::TransportError;
      return monitor.active_warnings().empty() ? ExitStatus::Clean : ExitStatus::Verdicts;
    case MonitorStatus::Running:
    case MonitorStatus::AtEnd:
      break;
  }
  return ExitStatus::Incomplete;
}

void EventLog::write(const MonitorEvent& event, std::optional<std::size_t> session) {
  std::string line = to_json_line(event);
  if (session) line.insert(1, "\"session\":" + std::to_string(*session) + ",");
  line += '\n';
  std::lock_guard lock(mu_);
  *out_ << line;
  out_->flush();
}

void EventLog::write_all(const std::vector<MonitorEvent>& events, std::optional<std::size_t> session) {
  for (const MonitorEvent& e : events) write(e, session);
}

// ---------------------------------------------------------------------------
// Trace files

TraceError::TraceError(std::size_t line, const std::string& message)
    : std::runtime_error("trace line " + std::to_string(line) + ": " + message), line_(line) {}

std::optional<TraceRecord> parse_trace_line(std::string_view line, std::size_t line_no) {
  if (line.find_first_not_of(" \t\r") == std::string_view::npos) return std::nullopt;
  if (line.front() == '#') return std::nullopt;
  if (line.size() < 2 || (line[0] != 'L' && line[0] != 'R') || line[1] != ':') {
    throw TraceError(line_no, "expected 'L:' or 'R:' prefix");
  }
  TraceRecord r;
  r.origin = line[0] == 'L' ? Endpoint::Left : Endpoint::Right;
  std::string_view text = line.substr(2);
  if (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  r.text = std::string(text);
  return r;
}

std::string format_trace_record(const TraceRecord& record) {
  return std::string(record.origin == Endpoint::Left ? "L: " : "R: ") + record.text;
}

// ---------------------------------------------------------------------------
// Session driver and replay

SessionDriver::SessionDriver(const SessionType& type, ConfidenceLevel level) : monitor_(type, level) {}

std::vector<MonitorEvent> SessionDriver::start() { return monitor_.finish(); }

StepResult SessionDriver::on_frame(Endpoint origin, std::string_view raw) {
  if (monitor_.status() != MonitorStatus::Running) return monitor_.step(Message{origin, "", {}});
  if (raw.size() > kMaxFrameBytes) return monitor_.reject(origin, "frame exceeds 64 KiB");
  const ChoicePoint& cp = monitor_.table().at(*monitor_.position());
  DecodeResult decoded = decode_frame(raw, cp, origin);
  if (const auto* err = std::get_if<DecodeError>(&decoded)) {
    std::optional<std::string> label;
    if (!err->label.empty()) label = err->label;
    return monitor_.reject(origin, err->message, std::move(label));
  }
  return monitor_.step(std::get<DecodedFrame>(decoded).message);
}

ReplayResult replay(const SessionType& type, ConfidenceLevel level, std::istream& trace) {
  ReplayResult out;
  SessionDriver driver(type, level);
  out.events = driver.start();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(trace, line)) {
    ++line_no;
    auto record = parse_trace_line(line, line_no);
    if (!record) continue;
    if (driver.monitor().status() != MonitorStatus::Running) {
      ++out.unreachable;
      continue;
    }
    StepResult r = driver.on_frame(record->origin, record->text);
    for (MonitorEvent& e : r.events) out.events.push_back(std::move(e));
  }
  if (trace.bad()) throw TraceError(line_no, "read error");
  out.status = exit_status_of(driver.monitor());
  out.final_status = driver.monitor().snapshot();
  return out;
}

// ---------------------------------------------------------------------------
// Sockets

Address parse_address(std::string_view text) {
  Address a;
  std::string_view port_part;
  if (!text.empty() && text.front() == '[') {
    auto close = text.find(']');
    if (close == std::string_view::npos || close + 1 >= text.size() || text[close + 1] != ':') {
      throw std::invalid_argument("malformed address '" + std::string(text) + "'");
    }
    a.host = std::string(text.substr(1, close - 1));
    port_part = text.substr(close + 2);
  } else {
    auto colon = text.rfind(':');
    if (colon == std::string_view::npos) {
      throw std::invalid_argument("address '" + std::string(text) + "' lacks a port");
    }
    a.host = std::string(text.substr(0, colon));
    port_part = text.substr(colon + 1);
  }
  if (port_part.empty() || port_part.size() > 5 ||
      port_part.find_first_not_of("0123456789") != std::string_view::npos) {
    throw std::invalid_argument("malformed port in '" + std::string(text) + "'");
  }
  unsigned long port = std::stoul(std::string(port_part));
  if (port > 65535) throw std::invalid_argument("port out of range in '" + std::string(text) + "'");
  a.port = static_cast<std::uint16_t>(port);
  return a;
}

namespace {

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  ~Fd() { reset(); }
  Fd(Fd&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Fd& operator=(Fd&& other) noexcept {
    if (this != &other) {
      reset();
      fd_ = std::exchange(other.fd_, -1);
    }
    return *this;
  }

  int get() const { return fd_; }
  int release() { return std::exchange(fd_, -1); }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

std::string errno_text() { return std::strerror(errno); }

struct AddrInfoDeleter {
  void operator()(addrinfo* p) const { ::freeaddrinfo(p); }
};

std::unique_ptr<addrinfo, AddrInfoDeleter> resolve(const Address& a, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  std::string port = std::to_string(a.port);
  const char* host = a.host.empty() ? nullptr : a.host.c_str();
  int rc = ::getaddrinfo(host, port.c_str(), &hints, &res);
  if (rc != 0) throw TransportError("cannot resolve '" + a.host + "': " + ::gai_strerror(rc));
  return std::unique_ptr<addrinfo, AddrInfoDeleter>(res);
}

Fd dial(const Address& a) {
  auto res = resolve(a, false);
  std::string last = "no address";
  for (addrinfo* p = res.get(); p; p = p->ai_next) {
    Fd fd(::socket(p->ai_family, p->ai_socktype, p->ai_protocol));
    if (fd.get() < 0) {
      last = errno_text();
      continue;
    }
    if (::connect(fd.get(), p->ai_addr, p->ai_addrlen) == 0) {
      int one = 1;
      ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      return fd;
    }
    last = errno_text();
  }
  throw TransportError("cannot connect to " + a.host + ":" + std::to_string(a.port) + ": " + last);
}

bool send_all(int fd, std::string_view data) {
  while (!data.empty()) {
    ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

// One connection plus its read-ahead buffer.
struct Side {
  Fd fd;
  std::string buf;
  bool eof = false;

  // Next complete frame, or an oversized partial one.
  std::optional<std::string> take_frame() {
    auto nl = buf.find('\n');
    if (nl == std::string::npos) {
      if (buf.size() > kMaxFrameBytes) return std::exchange(buf, {});
      return std::nullopt;
    }
    std::string line = buf.substr(0, nl);
    buf.erase(0, nl + 1);
    return line;
  }

  void fill() {
    char chunk[8192];
    for (;;) {
      ssize_t n = ::recv(fd.get(), chunk, sizeof chunk, 0);
      if (n > 0) {
        buf.append(chunk, static_cast<std::size_t>(n));
        return;
      }
      if (n < 0 && errno == EINTR) continue;
      eof = true;
      return;
    }
  }
};

Endpoint other(Endpoint e) { return e == Endpoint::Left ? Endpoint::Right : Endpoint::Left; }

// Blocks until at least one live side has data.
void wait_readable(Side& left, Side& right) {
  pollfd fds[2];
  Side* sides[2] = {&left, &right};
  nfds_t n = 0;
  for (Side* s : sides) {
    if (!s->eof) fds[n++] = {s->fd.get(), POLLIN, 0};
  }
  if (n == 0) return;
  while (::poll(fds, n, -1) < 0) {
    if (errno != EINTR) throw TransportError("poll: " + errno_text());
  }
  nfds_t k = 0;
  for (Side* s : sides) {
    if (s->eof) continue;
    if (fds[k].revents & (POLLIN | POLLHUP | POLLERR)) s->fill();
    ++k;
  }
}

// Unmonitored pass-through after a violation when halting is disabled.
void relay(Side& left, Side& right) {
  for (;;) {
    for (auto [from, to] : {std::pair{&left, &right}, std::pair{&right, &left}}) {
      if (!from->buf.empty()) {
        if (!send_all(to->fd.get(), from->buf)) return;
        from->buf.clear();
      }
    }
    if (left.eof || right.eof) return;
    wait_readable(left, right);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Proxy

Proxy::Proxy(TypePtr type, ConfidenceLevel level, ProxyOptions options, EventLog& log)
    : type_(std::move(type)), level_(level), options_(std::move(options)), log_(log) {
  auto diagnostics = validate(*type_);
  if (!diagnostics.empty()) throw InvalidSessionType(std::move(diagnostics));
}

Proxy::~Proxy() {
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void Proxy::bind() {
  auto res = resolve(options_.listen, true);
  std::string last = "no address";
  for (addrinfo* p = res.get(); p; p = p->ai_next) {
    Fd fd(::socket(p->ai_family, p->ai_socktype, p->ai_protocol));
    if (fd.get() < 0) {
      last = errno_text();
      continue;
    }
    int one = 1;
    ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd.get(), p->ai_addr, p->ai_addrlen) != 0 || ::listen(fd.get(), 16) != 0) {
      last = errno_text();
      continue;
    }
    sockaddr_storage ss{};
    socklen_t len = sizeof ss;
    ::getsockname(fd.get(), reinterpret_cast<sockaddr*>(&ss), &len);
    port_ = ntohs(ss.ss_family == AF_INET6 ? reinterpret_cast<sockaddr_in6*>(&ss)->sin6_port
                                           : reinterpret_cast<sockaddr_in*>(&ss)->sin_port);
    listen_fd_ = fd.release();
    return;
  }
  throw TransportError("cannot listen on " + options_.listen.host + ":" + std::to_string(options_.listen.port) +
                       ": " + last);
}

ExitStatus Proxy::serve_one(std::ostream* capture, std::optional<std::size_t> session) {
  if (listen_fd_ < 0) bind();
  int client = -1;
  do {
    client = ::accept(listen_fd_, nullptr, nullptr);
  } while (client < 0 && errno == EINTR);
  if (client < 0) throw TransportError("accept: " + errno_text());
  return run_session(client, capture, session);
}

ExitStatus Proxy::serve(std::size_t sessions, const std::vector<std::ostream*>& captures) {
  if (sessions <= 1) return serve_one(captures.empty() ? nullptr : captures[0]);
  if (listen_fd_ < 0) bind();
  std::vector<std::thread> workers;
  std::vector<ExitStatus> results(sessions, ExitStatus::Clean);
  for (std::size_t i = 0; i < sessions; ++i) {
    int client = -1;
    do {
      client = ::accept(listen_fd_, nullptr, nullptr);
    } while (client < 0 && errno == EINTR);
    if (client < 0) {
      results[i] = ExitStatus::TransportError;
      continue;
    }
    std::ostream* capture = i < captures.size() ? captures[i] : nullptr;
    workers.emplace_back([this, client, capture, i, &results] {
      try {
        results[i] = run_session(client, capture, i);
      } catch (const std::exception& e) {
        std::cerr << "session " << i << ": " << e.what() << "\n";
        results[i] = ExitStatus::TransportError;
      }
    });
  }
  for (auto& t : workers) t.join();
  ExitStatus worst = ExitStatus::Clean;
  for (ExitStatus s : results) {
    if (static_cast<int>(s) > static_cast<int>(worst)) worst = s;
  }
  return worst;
}

ExitStatus Proxy::run_session(int client_fd, std::ostream* capture, std::optional<std::size_t> session) {
  Side right;
  right.fd = Fd(client_fd);
  int one = 1;
  ::setsockopt(client_fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);

  Side left;
  try {
    left.fd = dial(options_.forward);
  } catch (const TransportError& e) {
    std::cerr << e.what() << "\n";
    return ExitStatus::TransportError;
  }

  SessionDriver driver(*type_, level_);
  Monitor& monitor = driver.monitor();
  log_.write_all(driver.start(), session);
  auto side_of = [&](Endpoint e) -> Side& { return e == Endpoint::Left ? left : right; };

  while (monitor.status() == MonitorStatus::Running) {
    // The expected sender's frame goes first; a frame from the other side
    // is only looked at when none is pending from the expected one.
    Endpoint expected = *monitor.expected_sender();
    std::optional<std::string> raw;
    Endpoint origin = expected;
    if ((raw = side_of(expected).take_frame())) {
      origin = expected;
    } else if ((raw = side_of(other(expected)).take_frame())) {
      origin = other(expected);
    }

    if (raw) {
      if (capture) {
        *capture << format_trace_record({origin, *raw}) << '\n';
        capture->flush();
      }
      StepResult r = driver.on_frame(origin, *raw);
      log_.write_all(r.events, session);
      if (r.decision == ForwardDecision::Forward) {
        std::string wire = *raw + '\n';
        if (!send_all(side_of(other(origin)).fd.get(), wire) && monitor.status() == MonitorStatus::Running) {
          log_.write_all(monitor.abort(std::string(to_string(other(origin))) + " connection lost"), session);
        }
      }
      continue;
    }

    if (left.eof || right.eof) {
      Endpoint gone = left.eof ? Endpoint::Left : Endpoint::Right;
      log_.write_all(monitor.abort(std::string(to_string(gone)) + " disconnected"), session);
      break;
    }
    wait_readable(left, right);
  }

  if (monitor.status() == MonitorStatus::Halted && !options_.halt_on_violation) relay(left, right);
  return exit_status_of(monitor);
}

int run_proxy(const SessionConfig& config) {
  std::ifstream in(config.type_path);
  if (!in) {
    std::cerr << "cannot open " << config.type_path << "\n";
    return 66;
  }
  std::stringstream src;
  src << in.rdbuf();

  std::ofstream log_file;
  std::ostream* log_out = &std::cout;
  if (!config.log_path.empty()) {
    log_file.open(config.log_path, std::ios::app);
    if (!log_file) {
      std::cerr << "cannot open log " << config.log_path << "\n";
      return static_cast<int>(ExitStatus::TransportError);
    }
    log_out = &log_file;
  }
  EventLog log(*log_out);

  std::vector<std::unique_ptr<std::ofstream>> capture_files;
  std::vector<std::ostream*> captures;
  if (!config.capture_path.empty()) {
    for (std::size_t i = 0; i < std::max<std::size_t>(config.sessions, 1); ++i) {
      std::string path = config.sessions > 1 ? config.capture_path + "." + std::to_string(i) : config.capture_path;
      capture_files.push_back(std::make_unique<std::ofstream>(path));
      if (!*capture_files.back()) {
        std::cerr << "cannot open capture " << path << "\n";
        return static_cast<int>(ExitStatus::TransportError);
      }
      captures.push_back(capture_files.back().get());
    }
  }

  try {
    ProxyOptions options{parse_address(config.listen), parse_address(config.forward), config.halt_on_violation};
    Proxy proxy(parse(src.str()), ConfidenceLevel(config.level), options, log);
    proxy.bind();
    return static_cast<int>(proxy.serve(config.sessions, captures));
  } catch (const TransportError& e) {
    std::cerr << e.what() << "\n";
    return static_cast<int>(ExitStatus::TransportError);
  }
}

}  // namespace pstmon

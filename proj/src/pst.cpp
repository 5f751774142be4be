#include "pstmon/pst.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>
#include <utility>

namespace pstmon {

std::string_view to_string(Sort sort) {
  switch (sort) {
    case Sort::Int: return "Int";
    case Sort::Str: return "Str";
    case Sort::Bool: return "Bool";
  }
  return "?";
}

std::optional<Sort> sort_from_name(std::string_view name) {
  if (name == "Int") return Sort::Int;
  if (name == "Str") return Sort::Str;
  if (name == "Bool") return Sort::Bool;
  return std::nullopt;
}

std::string_view to_string(Direction direction) {
  return direction == Direction::External ? "external" : "internal";
}

bool ProbAnnotation::operator==(const ProbAnnotation& other) const {
  if (kind != other.kind) return false;
  return kind == Kind::Unchecked || p == other.p;
}

namespace {

std::string format_probability(double p) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, p);
  if (ec != std::errc{}) return "nan";
  return std::string(buf, end);
}

}  // namespace

std::string to_string(const ProbAnnotation& annotation) {
  switch (annotation.kind) {
    case ProbAnnotation::Kind::Exact: return format_probability(annotation.p);
    case ProbAnnotation::Kind::LowerOnly: return format_probability(annotation.p) + ",*";
    case ProbAnnotation::Kind::UpperOnly: return "*," + format_probability(annotation.p);
    case ProbAnnotation::Kind::Unchecked: return "*";
  }
  return "*";
}

TypePtr make_end() { return std::make_shared<SessionType>(SessionType{End{}, {}}); }

TypePtr make_var(std::string name) {
  return std::make_shared<SessionType>(SessionType{Var{std::move(name)}, {}});
}

TypePtr make_rec(std::string var, TypePtr body) {
  return std::make_shared<SessionType>(SessionType{Rec{std::move(var), std::move(body)}, {}});
}

TypePtr make_choice(Direction direction, std::vector<Branch> branches) {
  return std::make_shared<SessionType>(SessionType{Choice{direction, std::move(branches)}, {}});
}

bool equal(const SessionType& a, const SessionType& b) {
  if (a.node.index() != b.node.index()) return false;
  if (auto* ca = std::get_if<Choice>(&a.node)) {
    const auto& cb = std::get<Choice>(b.node);
    if (ca->direction != cb.direction || ca->branches.size() != cb.branches.size()) return false;
    for (std::size_t i = 0; i < ca->branches.size(); ++i) {
      const Branch& x = ca->branches[i];
      const Branch& y = cb.branches[i];
      if (x.label != y.label || x.payload != y.payload || !(x.annotation == y.annotation)) {
        return false;
      }
      if (!equal(*x.continuation, *y.continuation)) return false;
    }
    return true;
  }
  if (auto* ra = std::get_if<Rec>(&a.node)) {
    const auto& rb = std::get<Rec>(b.node);
    return ra->var == rb.var && equal(*ra->body, *rb.body);
  }
  if (auto* va = std::get_if<Var>(&a.node)) return va->name == std::get<Var>(b.node).name;
  return true;
}

namespace {

std::string describe(const std::string& message, SourcePos pos) {
  std::ostringstream out;
  out << pos.line << ":" << pos.column << ": " << message;
  return out.str();
}

}  // namespace

ParseError::ParseError(const std::string& message, SourcePos pos)
    : std::runtime_error(describe(message, pos)), pos_(pos), detail_(message) {}

// ---------------------------------------------------------------------------
// Lexer

namespace {

struct Token {
  enum class Kind { Ident, Number, Punct, Eof };

  Kind kind = Kind::Eof;
  std::string text;
  SourcePos pos;
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  Token next() {
    skip_blank();
    Token tok;
    tok.pos = {line_, col_};
    if (at_end()) return tok;

    char c = peek();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      tok.kind = Token::Kind::Ident;
      while (!at_end() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_')) {
        tok.text += advance();
      }
      return tok;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '-' ||
        (c == '.' && std::isdigit(static_cast<unsigned char>(peek(1))))) {
      tok.kind = Token::Kind::Number;
      tok.text += advance();
      while (!at_end()) {
        char d = peek();
        bool exponent_sign = (d == '+' || d == '-') && (tok.text.back() == 'e' || tok.text.back() == 'E');
        if (std::isdigit(static_cast<unsigned char>(d)) || d == '.' || d == 'e' || d == 'E' ||
            exponent_sign) {
          tok.text += advance();
        } else {
          break;
        }
      }
      return tok;
    }
    static constexpr std::string_view kPunct = "&+{},?!()[].:*";
    if (kPunct.find(c) != std::string_view::npos) {
      tok.kind = Token::Kind::Punct;
      tok.text = std::string(1, advance());
      return tok;
    }
    throw ParseError(std::string("unexpected character '") + c + "'", tok.pos);
  }

 private:
  bool at_end() const { return offset_ >= src_.size(); }
  char peek(std::size_t ahead = 0) const {
    return offset_ + ahead < src_.size() ? src_[offset_ + ahead] : '\0';
  }
  char advance() {
    char c = src_[offset_++];
    if (c == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    return c;
  }

  void skip_blank() {
    while (!at_end()) {
      char c = peek();
      if (std::isspace(static_cast<unsigned char>(c))) {
        advance();
      } else if (c == '/' && peek(1) == '/') {
        while (!at_end() && peek() != '\n') advance();
      } else {
        break;
      }
    }
  }

  std::string_view src_;
  std::size_t offset_ = 0;
  int line_ = 1;
  int col_ = 1;
};

// ---------------------------------------------------------------------------
// Parser

class Parser {
 public:
  explicit Parser(std::string_view src) : lexer_(src) { tok_ = lexer_.next(); }

  TypePtr parse_all() {
    TypePtr t = parse_type();
    if (tok_.kind != Token::Kind::Eof) fail("unexpected '" + tok_.text + "' after type");
    return t;
  }

 private:
  [[noreturn]] void fail(const std::string& message) const { throw ParseError(message, tok_.pos); }

  bool is_punct(char c) const { return tok_.kind == Token::Kind::Punct && tok_.text[0] == c; }

  void expect(char c) {
    if (!is_punct(c)) fail(std::string("expected '") + c + "'" + found());
    bump();
  }

  std::string found() const {
    if (tok_.kind == Token::Kind::Eof) return ", found end of input";
    return ", found '" + tok_.text + "'";
  }

  std::string expect_ident(const char* what) {
    if (tok_.kind != Token::Kind::Ident) fail(std::string("expected ") + what + found());
    std::string s = tok_.text;
    bump();
    return s;
  }

  void bump() { tok_ = lexer_.next(); }

  TypePtr parse_type() {
    SourcePos pos = tok_.pos;
    auto node = std::make_shared<SessionType>();
    node->pos = pos;
    if (tok_.kind == Token::Kind::Ident) {
      if (tok_.text == "rec") {
        bump();
        std::string var = expect_ident("recursion variable");
        if (var == "rec" || var == "end") fail("'" + var + "' is reserved");
        expect('.');
        node->node = Rec{std::move(var), parse_type()};
      } else if (tok_.text == "end") {
        bump();
        node->node = End{};
      } else {
        node->node = Var{tok_.text};
        bump();
      }
      return node;
    }
    if (is_punct('&') || is_punct('+')) {
      Direction dir = is_punct('&') ? Direction::External : Direction::Internal;
      bump();
      expect('{');
      Choice choice{dir, {}};
      choice.branches.push_back(parse_branch(dir));
      while (is_punct(',')) {
        bump();
        choice.branches.push_back(parse_branch(dir));
      }
      expect('}');
      node->node = std::move(choice);
      return node;
    }
    fail("expected a session type" + found());
  }

  Branch parse_branch(Direction dir) {
    Branch b;
    b.pos = tok_.pos;
    char want = dir == Direction::External ? '?' : '!';
    if (is_punct('?') || is_punct('!')) {
      if (!is_punct(want)) {
        fail(std::string("expected '") + want + "' in " + std::string(to_string(dir)) + " choice");
      }
      bump();
    } else {
      fail(std::string("expected '") + want + "'" + found());
    }
    b.label = expect_ident("label");
    if (is_punct('(')) {
      bump();
      if (!is_punct(')')) {
        b.payload.push_back(parse_field());
        while (is_punct(',')) {
          bump();
          b.payload.push_back(parse_field());
        }
      }
      expect(')');
    }
    expect('[');
    b.annotation = parse_annotation();
    expect(']');
    expect('.');
    b.continuation = parse_type();
    return b;
  }

  Field parse_field() {
    Field f;
    f.name = expect_ident("field name");
    expect(':');
    SourcePos pos = tok_.pos;
    std::string sort = expect_ident("sort");
    auto s = sort_from_name(sort);
    if (!s) throw ParseError("unknown sort '" + sort + "'", pos);
    f.sort = *s;
    return f;
  }

  double parse_probability() {
    if (tok_.kind != Token::Kind::Number) fail("malformed probability literal" + found());
    const std::string& text = tok_.text;
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(value)) {
      fail("malformed probability literal '" + text + "'");
    }
    bump();
    return value;
  }

  ProbAnnotation parse_annotation() {
    if (is_punct('*')) {
      bump();
      if (is_punct(',')) {
        bump();
        return ProbAnnotation::upper_only(parse_probability());
      }
      return ProbAnnotation::unchecked();
    }
    double p = parse_probability();
    if (is_punct(',')) {
      bump();
      expect('*');
      return ProbAnnotation::lower_only(p);
    }
    return ProbAnnotation::exact(p);
  }

  Lexer lexer_;
  Token tok_;
};

// ---------------------------------------------------------------------------
// Printer

void print(std::ostream& out, const SessionType& t, bool indent, int depth) {
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, End>) {
          out << "end";
        } else if constexpr (std::is_same_v<T, Var>) {
          out << n.name;
        } else if constexpr (std::is_same_v<T, Rec>) {
          out << "rec " << n.var << " . ";
          print(out, *n.body, indent, depth);
        } else {
          bool ext = n.direction == Direction::External;
          out << (ext ? "&{" : "+{");
          for (std::size_t i = 0; i < n.branches.size(); ++i) {
            const Branch& b = n.branches[i];
            if (i > 0) out << ",";
            if (indent) {
              out << "\n" << std::string(2 * (depth + 1), ' ');
            } else if (i > 0) {
              out << " ";
            }
            out << (ext ? '?' : '!') << b.label;
            if (!b.payload.empty()) {
              out << "(";
              for (std::size_t k = 0; k < b.payload.size(); ++k) {
                if (k > 0) out << ", ";
                out << b.payload[k].name << ":" << to_string(b.payload[k].sort);
              }
              out << ")";
            }
            out << "[" << to_string(b.annotation) << "] . ";
            print(out, *b.continuation, indent, depth + 1);
          }
          if (indent) out << "\n" << std::string(2 * depth, ' ');
          out << "}";
        }
      },
      t.node);
}

}  // namespace

TypePtr parse(std::string_view source) { return Parser(source).parse_all(); }

std::string pretty(const SessionType& type, bool indent) {
  std::ostringstream out;
  print(out, type, indent, 0);
  return out.str();
}

// ---------------------------------------------------------------------------
// Validation

std::string_view to_string(Diagnostic::Kind kind) {
  switch (kind) {
    case Diagnostic::Kind::UnguardedRecursion: return "unguarded-recursion";
    case Diagnostic::Kind::UnboundVariable: return "unbound-variable";
    case Diagnostic::Kind::DuplicateLabel: return "duplicate-label";
    case Diagnostic::Kind::EmptyChoice: return "empty-choice";
    case Diagnostic::Kind::ProbabilityOutOfRange: return "probability-out-of-range";
    case Diagnostic::Kind::MassSum: return "mass-sum";
  }
  return "unknown";
}

namespace {

struct Binding {
  std::string name;
  bool guarded;
};

void check(const SessionType& t, std::vector<Binding>& env, std::vector<Diagnostic>& out) {
  if (const auto* choice = std::get_if<Choice>(&t.node)) {
    if (choice->branches.empty()) {
      out.push_back({Diagnostic::Kind::EmptyChoice, "choice point has no branches", t.pos});
    }
    std::set<std::string> seen;
    double mass = 0.0;
    bool any_unchecked = false;
    for (const Branch& b : choice->branches) {
      if (!seen.insert(b.label).second) {
        out.push_back({Diagnostic::Kind::DuplicateLabel, "duplicate label '" + b.label + "'", b.pos});
      }
      if (b.annotation.has_probability()) {
        double p = b.annotation.p;
        if (!(p > 0.0 && p <= 1.0)) {
          out.push_back({Diagnostic::Kind::ProbabilityOutOfRange,
                         "probability " + to_string(b.annotation) + " of '" + b.label +
                             "' is outside (0, 1]",
                         b.pos});
        }
        mass += p;
      } else {
        any_unchecked = true;
      }
    }
    if (!choice->branches.empty()) {
      bool ok = any_unchecked ? mass <= 1.0 + kProbabilityTolerance
                              : std::fabs(mass - 1.0) <= kProbabilityTolerance;
      if (!ok) {
        std::ostringstream msg;
        msg << "probabilities sum to " << mass
            << (any_unchecked ? ", expected at most 1" : ", expected 1");
        out.push_back({Diagnostic::Kind::MassSum, msg.str(), t.pos});
      }
    }
    std::vector<Binding> guarded = env;
    for (Binding& b : guarded) b.guarded = true;
    for (const Branch& b : choice->branches) check(*b.continuation, guarded, out);
  } else if (const auto* rec = std::get_if<Rec>(&t.node)) {
    env.push_back({rec->var, false});
    check(*rec->body, env, out);
    env.pop_back();
  } else if (const auto* var = std::get_if<Var>(&t.node)) {
    auto it = std::find_if(env.rbegin(), env.rend(),
                           [&](const Binding& b) { return b.name == var->name; });
    if (it == env.rend()) {
      out.push_back({Diagnostic::Kind::UnboundVariable, "unbound variable '" + var->name + "'", t.pos});
    } else if (!it->guarded) {
      out.push_back({Diagnostic::Kind::UnguardedRecursion,
                     "variable '" + var->name + "' is not guarded by a choice", t.pos});
    }
  }
}

}  // namespace

std::vector<Diagnostic> validate(const SessionType& type) {
  std::vector<Diagnostic> out;
  std::vector<Binding> env;
  check(type, env, out);
  return out;
}

TypePtr dual(const SessionType& type) {
  auto node = std::make_shared<SessionType>();
  node->pos = type.pos;
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Choice>) {
          Choice c{n.direction == Direction::External ? Direction::Internal : Direction::External, {}};
          c.branches.reserve(n.branches.size());
          for (const Branch& b : n.branches) {
            Branch copy = b;
            copy.continuation = dual(*b.continuation);
            c.branches.push_back(std::move(copy));
          }
          node->node = std::move(c);
        } else if constexpr (std::is_same_v<T, Rec>) {
          node->node = Rec{n.var, dual(*n.body)};
        } else {
          node->node = n;
        }
      },
      type.node);
  return node;
}

// ---------------------------------------------------------------------------
// Choice-point table

std::optional<std::size_t> ChoicePoint::find(std::string_view label) const {
  for (std::size_t i = 0; i < branches.size(); ++i) {
    if (branches[i].label == label) return i;
  }
  return std::nullopt;
}

namespace {

class TableBuilder {
 public:
  ChoicePointTable build(const SessionType& t) {
    std::vector<std::pair<std::string, Successor>> env;
    table_.initial = visit(t, env);
    return std::move(table_);
  }

 private:
  // Index that the first choice point reached from `t` will receive.
  Successor entry_of(const SessionType& t) const {
    const SessionType* cur = &t;
    while (const auto* rec = std::get_if<Rec>(&cur->node)) cur = rec->body.get();
    if (std::holds_alternative<Choice>(cur->node)) return table_.entries.size();
    if (std::holds_alternative<End>(cur->node)) return std::nullopt;
    throw std::invalid_argument("unguarded recursion variable '" + std::get<Var>(cur->node).name + "'");
  }

  Successor visit(const SessionType& t, std::vector<std::pair<std::string, Successor>>& env) {
    if (std::holds_alternative<End>(t.node)) return std::nullopt;
    if (const auto* var = std::get_if<Var>(&t.node)) {
      for (auto it = env.rbegin(); it != env.rend(); ++it) {
        if (it->first == var->name) return it->second;
      }
      throw std::invalid_argument("unbound recursion variable '" + var->name + "'");
    }
    if (const auto* rec = std::get_if<Rec>(&t.node)) {
      env.emplace_back(rec->var, entry_of(*rec->body));
      Successor s = visit(*rec->body, env);
      env.pop_back();
      return s;
    }
    const auto& choice = std::get<Choice>(t.node);
    std::size_t j = table_.entries.size();
    table_.entries.push_back({j, choice.direction, {}});
    std::vector<TableBranch> branches;
    branches.reserve(choice.branches.size());
    for (const Branch& b : choice.branches) {
      Successor next = visit(*b.continuation, env);
      branches.push_back({b.label, b.payload, b.annotation, next});
    }
    table_.entries[j].branches = std::move(branches);
    return j;
  }

  ChoicePointTable table_;
};

std::string successor_name(const Successor& s) {
  return s ? std::to_string(*s) : std::string("end");
}

}  // namespace

ChoicePointTable build_choice_point_table(const SessionType& type) {
  return TableBuilder().build(type);
}

std::string to_string(const ChoicePointTable& table) {
  std::ostringstream out;
  out << "initial: " << successor_name(table.initial) << "\n";
  for (const ChoicePoint& cp : table.entries) {
    bool ext = cp.direction == Direction::External;
    out << "j=" << cp.index << " " << to_string(cp.direction) << "\n";
    for (const TableBranch& b : cp.branches) {
      out << "  " << (ext ? '?' : '!') << b.label;
      if (!b.payload.empty()) {
        out << "(";
        for (std::size_t k = 0; k < b.payload.size(); ++k) {
          if (k > 0) out << ", ";
          out << b.payload[k].name << ":" << to_string(b.payload[k].sort);
        }
        out << ")";
      }
      out << " [" << to_string(b.annotation) << "] -> " << successor_name(b.next) << "\n";
    }
  }
  return out.str();
}

}  // namespace pstmon

#pragma once

// Probabilistic binary session types: syntax tree, textual language,
// well-formedness checks, duality and the flattened choice-point table.

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace pstmon {

enum class Sort { Int, Str, Bool };

std::string_view to_string(Sort sort);
std::optional<Sort> sort_from_name(std::string_view name);

/// Per-branch probability requirement. `p` is meaningful for every kind
/// except Unchecked.
struct ProbAnnotation {
  enum class Kind { Exact, LowerOnly, UpperOnly, Unchecked };

  Kind kind = Kind::Exact;
  double p = 0.0;

  static ProbAnnotation exact(double p) { return {Kind::Exact, p}; }
  static ProbAnnotation lower_only(double p) { return {Kind::LowerOnly, p}; }
  static ProbAnnotation upper_only(double p) { return {Kind::UpperOnly, p}; }
  static ProbAnnotation unchecked() { return {Kind::Unchecked, 0.0}; }

  bool has_probability() const { return kind != Kind::Unchecked; }
  bool checks_low() const { return kind == Kind::Exact || kind == Kind::LowerOnly; }
  bool checks_high() const { return kind == Kind::Exact || kind == Kind::UpperOnly; }

  bool operator==(const ProbAnnotation& other) const;
};

/// Textual form used by the PST language: `0.2`, `0.2,*`, `*,0.2`, `*`.
std::string to_string(const ProbAnnotation& annotation);

struct SourcePos {
  int line = 0;
  int column = 0;
};

struct Field {
  std::string name;
  Sort sort = Sort::Int;

  bool operator==(const Field&) const = default;
};

/// External choice (`&`): the peer selects, we receive.
/// Internal choice (`+`): we select and send.
enum class Direction { External, Internal };

std::string_view to_string(Direction direction);

struct SessionType;
using TypePtr = std::shared_ptr<const SessionType>;

struct Branch {
  std::string label;
  std::vector<Field> payload;
  ProbAnnotation annotation;
  TypePtr continuation;
  SourcePos pos;
};

struct Choice {
  Direction direction = Direction::External;
  std::vector<Branch> branches;
};

struct Rec {
  std::string var;
  TypePtr body;
};

struct Var {
  std::string name;
};

struct End {};

struct SessionType {
  std::variant<Choice, Rec, Var, End> node;
  SourcePos pos;
};

// Construction helpers, mostly for tests and generators.
TypePtr make_end();
TypePtr make_var(std::string name);
TypePtr make_rec(std::string var, TypePtr body);
TypePtr make_choice(Direction direction, std::vector<Branch> branches);

/// Structural equality; source positions are ignored.
bool equal(const SessionType& a, const SessionType& b);

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& message, SourcePos pos);

  SourcePos pos() const { return pos_; }
  const std::string& detail() const { return detail_; }

 private:
  SourcePos pos_;
  std::string detail_;
};

/// Parses the PST language. Throws ParseError with line/column on syntax
/// errors, unknown sorts and malformed probability literals. Well-formedness
/// (guardedness, mass sums, ...) is left to validate().
TypePtr parse(std::string_view source);

/// Canonical text. With `indent` each branch goes on its own line.
std::string pretty(const SessionType& type, bool indent = false);

struct Diagnostic {
  enum class Kind {
    UnguardedRecursion,
    UnboundVariable,
    DuplicateLabel,
    EmptyChoice,
    ProbabilityOutOfRange,
    MassSum,
  };

  Kind kind;
  std::string message;
  SourcePos pos;
};

std::string_view to_string(Diagnostic::Kind kind);

inline constexpr double kProbabilityTolerance = 1e-9;

/// Empty iff the type is well-formed.
std::vector<Diagnostic> validate(const SessionType& type);

/// Swaps external and internal choice everywhere; everything else is kept.
TypePtr dual(const SessionType& type);

/// Successor of a branch in the table: another choice point, or end.
using Successor = std::optional<std::size_t>;

struct TableBranch {
  std::string label;
  std::vector<Field> payload;
  ProbAnnotation annotation;
  Successor next;
};

struct ChoicePoint {
  std::size_t index = 0;
  Direction direction = Direction::External;
  std::vector<TableBranch> branches;

  /// Position of `label` in `branches`.
  std::optional<std::size_t> find(std::string_view label) const;
};

/// Choice points numbered in pre-order. Recursion variables resolve to the
/// index of their binder's first choice point, so loops revisit the same
/// entry and its counters keep accumulating.
struct ChoicePointTable {
  std::vector<ChoicePoint> entries;
  Successor initial;

  const ChoicePoint& at(std::size_t j) const { return entries.at(j); }
  std::size_t size() const { return entries.size(); }
};

/// Precondition: validate(type) is empty. Throws std::invalid_argument on
/// unbound or unguarded variables.
ChoicePointTable build_choice_point_table(const SessionType& type);

/// Human-readable rendering of the table (used by `pstmon table`).
std::string to_string(const ChoicePointTable& table);

}  // namespace pstmon

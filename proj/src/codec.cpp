#include "pstmon/codec.hpp"

#include <cctype>
#include <charconv>
#include <stdexcept>

namespace pstmon {

namespace {

bool is_label_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_label_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

DecodeError framing(std::string label, std::string message) {
  return {DecodeError::Kind::Framing, std::move(label), 0, std::move(message)};
}

// Splits on unescaped commas and resolves `\,` and `\\`. Other backslashes
// are kept verbatim.
std::vector<std::string> split_args(std::string_view body) {
  std::vector<std::string> out(1);
  for (std::size_t i = 0; i < body.size(); ++i) {
    char c = body[i];
    if (c == '\\' && i + 1 < body.size() && (body[i + 1] == ',' || body[i + 1] == '\\')) {
      out.back() += body[++i];
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

bool parse_int(std::string_view text, std::int64_t& value) {
  if (text.empty()) return false;
  std::size_t start = 0;
  bool negative = false;
  if (text[0] == '+' || text[0] == '-') {
    negative = text[0] == '-';
    start = 1;
  }
  if (start == text.size()) return false;
  for (std::size_t i = start; i < text.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(text[i]))) return false;
  }
  // from_chars rejects a leading '+', so parse the magnitude with the sign
  // re-attached only when negative.
  std::string digits = negative ? "-" + std::string(text.substr(start)) : std::string(text.substr(start));
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
  return ec == std::errc{} && ptr == digits.data() + digits.size();
}

}  // namespace

DecodeResult decode_frame(std::string_view line, const ChoicePoint& expected, Endpoint origin) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  if (line.size() > kMaxFrameBytes) return framing("", "frame exceeds 64 KiB");
  if (line.empty() || !is_label_start(line[0])) return framing("", "unparseable frame");

  std::size_t n = 1;
  while (n < line.size() && is_label_char(line[n])) ++n;
  std::string label(line.substr(0, n));

  std::string_view rest = line.substr(n);
  bool has_args = false;
  std::string_view body;
  if (!rest.empty()) {
    if (rest.front() != '(' || rest.back() != ')' || rest.size() < 2) {
      return framing(label, "unparseable frame");
    }
    has_args = true;
    body = rest.substr(1, rest.size() - 2);
  }

  DecodedFrame out;
  out.message.origin = origin;
  out.message.label = label;

  auto index = expected.find(label);
  if (!index) {
    out.unknown_label = true;
    return out;
  }
  const auto& fields = expected.branches[*index].payload;

  std::vector<std::string> args;
  if (has_args && !(body.empty() && fields.empty())) args = split_args(body);
  if (args.size() != fields.size()) {
    return DecodeError{DecodeError::Kind::Arity, label, 0,
                       "payload arity: '" + label + "' expects " + std::to_string(fields.size()) +
                           " value(s), got " + std::to_string(args.size())};
  }

  for (std::size_t k = 0; k < fields.size(); ++k) {
    const std::string& text = args[k];
    auto mismatch = [&] {
      return DecodeError{DecodeError::Kind::Sort, label, k + 1,
                         "payload sort: argument " + std::to_string(k + 1) + " of '" + label + "' must be " +
                             std::string(to_string(fields[k].sort))};
    };
    switch (fields[k].sort) {
      case Sort::Int: {
        std::int64_t v = 0;
        if (!parse_int(text, v)) return mismatch();
        out.message.payload.emplace_back(v);
        break;
      }
      case Sort::Bool:
        if (text == "true") {
          out.message.payload.emplace_back(true);
        } else if (text == "false") {
          out.message.payload.emplace_back(false);
        } else {
          return mismatch();
        }
        break;
      case Sort::Str:
        out.message.payload.emplace_back(text);
        break;
    }
  }
  return out;
}

std::string encode_frame(std::string_view label, const std::vector<Value>& payload) {
  std::string out(label);
  if (payload.empty()) return out;
  out += '(';
  for (std::size_t k = 0; k < payload.size(); ++k) {
    if (k > 0) out += ',';
    const Value& v = payload[k];
    if (const auto* i = std::get_if<std::int64_t>(&v)) {
      out += std::to_string(*i);
    } else if (const auto* b = std::get_if<bool>(&v)) {
      out += *b ? "true" : "false";
    } else {
      for (char c : std::get<std::string>(v)) {
        if (c == '\n' || c == '\r') throw std::invalid_argument("encode_frame: line break in Str payload");
        if (c == ',' || c == '\\') out += '\\';
        out += c;
      }
    }
  }
  out += ')';
  return out;
}

}  // namespace pstmon

#pragma once

// Reference connection manager codec: one UTF-8 line per message,
// `LABEL` or `LABEL(v1,...,vk)`. Str arguments escape `,` as `\,` and `\` as
// `\\`.

#include <cstddef>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "pstmon/monitor.hpp"
#include "pstmon/pst.hpp"

namespace pstmon {

inline constexpr std::size_t kMaxFrameBytes = 64 * 1024;

struct DecodedFrame {
  Message message;
  /// The label is not offered by the expected choice point; the payload is
  /// left empty so the monitor raises the label violation itself.
  bool unknown_label = false;
};

struct DecodeError {
  enum class Kind { Framing, Arity, Sort };

  Kind kind = Kind::Framing;
  std::string label;
  /// 1-based argument index for Sort errors, 0 otherwise.
  std::size_t position = 0;
  std::string message;
};

using DecodeResult = std::variant<DecodedFrame, DecodeError>;

/// Decodes one frame body (no terminator; a trailing `\r` is ignored)
/// against the branches of `expected`.
DecodeResult decode_frame(std::string_view line, const ChoicePoint& expected, Endpoint origin);

/// Inverse of decode_frame for well-typed messages. Throws
/// std::invalid_argument for strings containing a line break.
std::string encode_frame(std::string_view label, const std::vector<Value>& payload);

}  // namespace pstmon

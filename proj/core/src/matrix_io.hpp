#pragma once

// Checkpoint lines: <key fields...>\t<rows>x<cols>\t<comma-separated values>

#include <string>
#include <string_view>
#include <vector>

#include "portraitid/error.hpp"
#include "portraitid/numerics.hpp"
#include "portraitid/textio.hpp"

namespace portraitid::detail {

inline std::string matrix_line(std::string_view key, const Matrix& m) {
  std::string out(key);
  out += '\t' + std::to_string(m.rows()) + 'x' + std::to_string(m.cols()) + '\t';
  out += text::format_values(m.values());
  out += '\n';
  return out;
}

inline Matrix parse_matrix(std::string_view shape, std::string_view values) {
  const auto x = shape.find('x');
  if (x == std::string_view::npos) throw ContractError("bad shape '" + std::string(shape) + "'");
  const auto rows = static_cast<std::size_t>(text::parse_u64(shape.substr(0, x)));
  const auto cols = static_cast<std::size_t>(text::parse_u64(shape.substr(x + 1)));
  return Matrix(rows, cols, text::parse_values(values));
}

/// Parses `key=value` fields of a checkpoint header after its magic prefix.
inline std::vector<std::pair<std::string_view, std::string_view>> header_fields(
    std::string_view line, std::string_view magic) {
  if (!line.starts_with(magic)) {
    throw ParseError("missing '" + std::string(magic) + "' header", 1);
  }
  std::vector<std::pair<std::string_view, std::string_view>> fields;
  for (auto token : text::split(line.substr(magic.size()), ' ')) {
    if (token.empty()) continue;
    const auto eq = token.find('=');
    if (eq == std::string_view::npos) {
      throw ParseError("bad header field '" + std::string(token) + "'", 1);
    }
    fields.emplace_back(token.substr(0, eq), token.substr(eq + 1));
  }
  return fields;
}

}  // namespace portraitid::detail

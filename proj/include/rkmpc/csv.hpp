#pragma once

#include <charconv>
#include <cstdio>
#include <string>
#include <vector>

#include "rkmpc/errors.hpp"

namespace rkmpc::csv {

// Shortest round-trippable decimal form; all data files use it so identical
// runs produce identical bytes.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline double to_double(const std::string& field, const std::string& context,
                        std::size_t line_no) {
  const char* begin = field.data();
  const char* end = field.data() + field.size();
  while (begin != end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end != begin && (*(end - 1) == ' ' || *(end - 1) == '\t' ||
                          *(end - 1) == '\r')) {
    --end;
  }
  double value = 0.0;
  const auto res = std::from_chars(begin, end, value);
  if (res.ec != std::errc() || res.ptr != end || begin == end) {
    throw ParseError(context + ": non-numeric field '" + field + "' at line " +
                     std::to_string(line_no));
  }
  return value;
}

}  // namespace rkmpc::csv

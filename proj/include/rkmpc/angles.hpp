#pragma once

#include <cmath>
#include <numbers>

namespace rkmpc {

// Wraps an angle to (-pi, pi]. The closed upper end matches the convention
// used for heading errors everywhere in this library: wrap_angle(pi) == pi,
// wrap_angle(-pi) == pi.
inline double wrap_angle(double a) {
  constexpr double kPi = std::numbers::pi;
  double r = std::fmod(a + kPi, 2.0 * kPi);
  if (r <= 0.0) r += 2.0 * kPi;
  return r - kPi;
}

// Shortest signed difference a - b, wrapped to (-pi, pi].
inline double angle_diff(double a, double b) { return wrap_angle(a - b); }

}  // namespace rkmpc

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "rkmpc/angles.hpp"
#include "rkmpc/errors.hpp"
#include "rkmpc/vehicle.hpp"

namespace rkmpc {

struct Track {
  std::vector<Eigen::Vector2d> points;
  std::vector<double> width_right;  // empty when the source had no widths
  std::vector<double> width_left;
  bool closed = true;
};

struct TrackLoadOptions {
  double scale = 1.0;
  bool closed = true;
};

struct SpeedProfileConfig {
  enum class Mode { kConstant, kCurvatureLimited };
  Mode mode = Mode::kConstant;
  double v_const = 1.5;    // m/s, kConstant
  double v_cap = 3.0;      // m/s, kCurvatureLimited ceiling
  double a_lat_max = 2.0;  // m/s^2, kCurvatureLimited
  double v_floor = 0.05;   // m/s, below this the profile is infeasible
};

struct ReferenceTrajectory {
  std::vector<ReferencePoint> points;
  double period = 0.05;
  bool closed = true;

  std::size_t size() const { return points.size(); }

  // Index lookahead used by the controllers: wraps on closed tracks,
  // throws once an open track runs out of points.
  const ReferencePoint& at(long i) const {
    const long n = static_cast<long>(points.size());
    if (closed) {
      long m = i % n;
      if (m < 0) m += n;
      return points[static_cast<std::size_t>(m)];
    }
    if (i < 0 || i >= n) {
      throw ReferenceExhausted("reference index " + std::to_string(i) +
                               " outside open trajectory of length " +
                               std::to_string(n));
    }
    return points[static_cast<std::size_t>(i)];
  }
};

struct TrackingErrors {
  double lateral = 0.0;   // signed, positive left of the path direction
  double heading = 0.0;   // wrapped to (-pi, pi]
  std::size_t index = 0;  // start vertex of the nearest segment
};

namespace detail {

inline double parse_double_field(const std::string& field, std::size_t line_no) {
  double value = 0.0;
  const char* begin = field.data();
  const char* end = field.data() + field.size();
  while (begin != end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end != begin && (*(end - 1) == ' ' || *(end - 1) == '\t')) --end;
  const auto res = std::from_chars(begin, end, value);
  if (res.ec != std::errc() || res.ptr != end || begin == end) {
    throw ParseError("load_track: non-numeric field '" + field + "' at line " +
                     std::to_string(line_no));
  }
  return value;
}

// Signed Menger curvature of the circumscribed circle through a, b, c;
// positive for a left turn, zero when collinear or degenerate.
inline double circumscribed_curvature(const Eigen::Vector2d& a,
                                      const Eigen::Vector2d& b,
                                      const Eigen::Vector2d& c) {
  const Eigen::Vector2d ab = b - a;
  const Eigen::Vector2d bc = c - b;
  const Eigen::Vector2d ac = c - a;
  const double denom = ab.norm() * bc.norm() * ac.norm();
  if (denom < 1e-12) return 0.0;
  const double cross = ab.x() * bc.y() - ab.y() * bc.x();
  return 2.0 * cross / denom;
}

// Piecewise-linear arc-length walker over a track polyline.
class ArcWalker {
 public:
  explicit ArcWalker(const Track& track) : track_(track) {
    const std::size_t n = track.points.size();
    const std::size_t segs = track.closed ? n : n - 1;
    cum_.resize(segs + 1, 0.0);
    for (std::size_t i = 0; i < segs; ++i) {
      const Eigen::Vector2d d =
          track.points[(i + 1) % n] - track.points[i];
      cum_[i + 1] = cum_[i] + d.norm();
    }
  }

  double total_length() const { return cum_.back(); }

  Eigen::Vector2d position(double s) const {
    const double total = total_length();
    if (track_.closed) {
      s = std::fmod(s, total);
      if (s < 0.0) s += total;
    } else {
      s = std::clamp(s, 0.0, total);
    }
    const auto it = std::upper_bound(cum_.begin(), cum_.end(), s);
    std::size_t seg = (it == cum_.begin())
                          ? 0
                          : static_cast<std::size_t>(it - cum_.begin()) - 1;
    seg = std::min(seg, cum_.size() - 2);
    const double seg_len = cum_[seg + 1] - cum_[seg];
    const double t = seg_len > 0.0 ? (s - cum_[seg]) / seg_len : 0.0;
    const std::size_t n = track_.points.size();
    const Eigen::Vector2d& p0 = track_.points[seg];
    const Eigen::Vector2d& p1 = track_.points[(seg + 1) % n];
    return p0 + t * (p1 - p0);
  }

 private:
  const Track& track_;
  std::vector<double> cum_;
};

}  // namespace detail

inline Track load_track(std::istream& in, const TrackLoadOptions& opt = {}) {
  Track track;
  track.closed = opt.closed;
  std::string line;
  std::size_t line_no = 0;
  bool any_widths = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t start = line.find_first_not_of(" \t\r\n");
    if (start == std::string::npos) continue;
    if (line[start] == '#') continue;
    std::stringstream row(line.substr(start));
    std::vector<std::string> fields;
    std::string field;
    while (std::getline(row, field, ',')) fields.push_back(field);
    if (fields.size() < 2) {
      throw ParseError("load_track: expected at least 2 comma-separated "
                       "fields at line " + std::to_string(line_no));
    }
    const double x = detail::parse_double_field(fields[0], line_no) * opt.scale;
    const double y = detail::parse_double_field(fields[1], line_no) * opt.scale;
    track.points.emplace_back(x, y);
    if (fields.size() >= 4) {
      any_widths = true;
      track.width_right.push_back(
          detail::parse_double_field(fields[2], line_no) * opt.scale);
      track.width_left.push_back(
          detail::parse_double_field(fields[3], line_no) * opt.scale);
    } else {
      track.width_right.push_back(0.0);
      track.width_left.push_back(0.0);
    }
  }
  if (!any_widths) {
    track.width_right.clear();
    track.width_left.clear();
  }

  // Drop consecutive duplicates, and the final point of a closed loop when it
  // repeats the first.
  auto erase_at = [&](std::size_t i) {
    track.points.erase(track.points.begin() + static_cast<long>(i));
    if (!track.width_right.empty()) {
      track.width_right.erase(track.width_right.begin() + static_cast<long>(i));
      track.width_left.erase(track.width_left.begin() + static_cast<long>(i));
    }
  };
  for (std::size_t i = 1; i < track.points.size();) {
    if ((track.points[i] - track.points[i - 1]).norm() < 1e-12) {
      erase_at(i);
    } else {
      ++i;
    }
  }
  if (track.closed && track.points.size() > 1 &&
      (track.points.back() - track.points.front()).norm() < 1e-12) {
    erase_at(track.points.size() - 1);
  }

  if (track.points.size() < 3) {
    throw TooFewPoints("load_track: track needs at least 3 distinct points, got " +
                       std::to_string(track.points.size()));
  }
  return track;
}

inline Track load_track_file(const std::string& path,
                             const TrackLoadOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) throw ParseError("load_track: cannot open '" + path + "'");
  return load_track(in, opt);
}

// Resamples the centerline at arc-length steps v_r * T, where the speed comes
// from the configured profile, curvature-limited speeds using curvature from
// the circumscribed circle of the trailing three resampled points. On closed
// tracks the speed profile is uniformly rescaled (factor <= 1, within one step
// fraction of 1) so the samples close exactly on the start point.
inline ReferenceTrajectory build_reference(const Track& track,
                                           const SpeedProfileConfig& speed,
                                           const VehicleParams& params) {
  const detail::ArcWalker walker(track);
  const double total = walker.total_length();
  const double T = params.sampling_period;
  const double L = params.wheelbase;

  auto speed_at = [&](double kappa) {
    double v = speed.mode == SpeedProfileConfig::Mode::kConstant
                   ? speed.v_const
                   : std::min(speed.v_cap,
                              std::sqrt(speed.a_lat_max /
                                        std::max(std::abs(kappa), 1e-9)));
    v = std::min(v, params.v_max);
    if (v < speed.v_floor) {
      throw InfeasibleSpeed("build_reference: profile speed " +
                            std::to_string(v) + " below floor " +
                            std::to_string(speed.v_floor));
    }
    return v;
  };

  // Pass 1: march arc-length steps, estimating curvature from the trailing
  // resampled window (raw-path probes bootstrap the first two steps).
  std::vector<double> arcs{0.0};
  std::vector<double> steps;
  std::vector<Eigen::Vector2d> marched{walker.position(0.0)};
  const double stop = track.closed ? total : total + 1e-12;
  while (true) {
    double kappa = 0.0;
    const std::size_t k = marched.size();
    if (k >= 3) {
      kappa = detail::circumscribed_curvature(marched[k - 3], marched[k - 2],
                                              marched[k - 1]);
    } else {
      const double probe = std::max(1e-6, 0.5 * speed_at(0.0) * T);
      const double s0 = arcs.back();
      kappa = detail::circumscribed_curvature(walker.position(s0),
                                              walker.position(s0 + probe),
                                              walker.position(s0 + 2 * probe));
    }
    const double ds = speed_at(kappa) * T;
    if (arcs.back() + ds >= stop) {
      if (!track.closed) break;
      steps.push_back(ds);  // final step crosses the seam
      break;
    }
    steps.push_back(ds);
    arcs.push_back(arcs.back() + ds);
    marched.push_back(walker.position(arcs.back()));
  }
  if (steps.size() < 3) {
    throw TooFewPoints("build_reference: track too short for the sampling "
                       "period, produced " + std::to_string(steps.size()) +
                       " reference steps");
  }

  // Pass 2 (closed only): rescale steps so they sum exactly to the track
  // length, then re-march. Spacing stays v_r * T because speeds scale too.
  ReferenceTrajectory ref;
  ref.period = T;
  ref.closed = track.closed;
  if (track.closed) {
    double sum = 0.0;
    for (double s : steps) sum += s;
    const double f = total / sum;
    double s = 0.0;
    for (std::size_t k = 0; k < steps.size(); ++k) {
      ReferencePoint p;
      const Eigen::Vector2d q = walker.position(s);
      p.x = q.x();
      p.y = q.y();
      p.v = steps[k] * f / T;
      ref.points.push_back(p);
      s += steps[k] * f;
    }
  } else {
    double s = 0.0;
    for (std::size_t k = 0; k < steps.size(); ++k) {
      ReferencePoint p;
      const Eigen::Vector2d q = walker.position(s);
      p.x = q.x();
      p.y = q.y();
      p.v = steps[k] / T;
      ref.points.push_back(p);
      s += steps[k];
    }
    ReferencePoint last;
    const Eigen::Vector2d q = walker.position(s);
    last.x = q.x();
    last.y = q.y();
    last.v = ref.points.back().v;
    ref.points.push_back(last);
  }

  // Heading from central chords, curvature (for delta_r) from the centered
  // circumscribed circle; one-sided at open ends.
  const std::size_t n = ref.points.size();
  auto pos = [&](long i) -> Eigen::Vector2d {
    long m = i;
    if (track.closed) {
      m = i % static_cast<long>(n);
      if (m < 0) m += static_cast<long>(n);
    } else {
      m = std::clamp(i, 0L, static_cast<long>(n) - 1);
    }
    return {ref.points[static_cast<std::size_t>(m)].x,
            ref.points[static_cast<std::size_t>(m)].y};
  };
  for (std::size_t k = 0; k < n; ++k) {
    const long i = static_cast<long>(k);
    const bool interior = track.closed || (k > 0 && k + 1 < n);
    const Eigen::Vector2d chord =
        interior ? (pos(i + 1) - pos(i - 1))
                 : (k == 0 ? pos(1) - pos(0) : pos(i) - pos(i - 1));
    ref.points[k].theta = std::atan2(chord.y(), chord.x());
    const double kappa =
        detail::circumscribed_curvature(pos(i - 1), pos(i), pos(i + 1));
    ref.points[k].delta = std::clamp(std::atan(L * kappa), params.delta_min,
                                     params.delta_max);
  }
  if (!track.closed && n >= 2) {
    ref.points[0].delta = ref.points[1].delta;
    ref.points[n - 1].delta = ref.points[n - 2].delta;
  }
  return ref;
}

// Closest point on the piecewise-linear reference path. Lateral error is the
// signed perpendicular distance, positive on the left of the path direction.
inline TrackingErrors project(const VehicleState& state,
                              const ReferenceTrajectory& ref) {
  const std::size_t n = ref.points.size();
  if (n == 0) throw InvalidArgument("project: empty reference");
  const Eigen::Vector2d q(state.x, state.y);
  const std::size_t segs = ref.closed ? n : n - 1;

  double best_d2 = std::numeric_limits<double>::infinity();
  std::size_t best_i = 0;
  double best_t = 0.0;
  for (std::size_t i = 0; i < segs; ++i) {
    const Eigen::Vector2d p0(ref.points[i].x, ref.points[i].y);
    const Eigen::Vector2d p1(ref.points[(i + 1) % n].x,
                             ref.points[(i + 1) % n].y);
    const Eigen::Vector2d d = p1 - p0;
    const double len2 = d.squaredNorm();
    const double t =
        len2 > 0.0 ? std::clamp((q - p0).dot(d) / len2, 0.0, 1.0) : 0.0;
    const double d2 = (q - (p0 + t * d)).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best_i = i;
      best_t = t;
    }
  }

  const Eigen::Vector2d p0(ref.points[best_i].x, ref.points[best_i].y);
  const Eigen::Vector2d p1(ref.points[(best_i + 1) % n].x,
                           ref.points[(best_i + 1) % n].y);
  const Eigen::Vector2d d = p1 - p0;
  const Eigen::Vector2d to_q = q - (p0 + best_t * d);
  const double cross = d.x() * to_q.y() - d.y() * to_q.x();
  TrackingErrors err;
  err.lateral = (cross >= 0.0 ? 1.0 : -1.0) * to_q.norm();
  const double th0 = ref.points[best_i].theta;
  const double th1 = ref.points[(best_i + 1) % n].theta;
  const double th_ref = wrap_angle(th0 + best_t * angle_diff(th1, th0));
  err.heading = angle_diff(state.theta, th_ref);
  err.index = best_i;
  return err;
}

}  // namespace rkmpc

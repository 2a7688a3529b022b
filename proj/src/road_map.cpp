#include "cmm/road_map.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "cmm/errors.hpp"
#include "json_util.hpp"

namespace cmm {

namespace {

// Squared distance from p to the closed segment [a, b].
double point_segment_dist2(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return (p - (a + t * ab)).squaredNorm();
}

double polyline_distance(const Vec2& p, const std::vector<Vec2>& pts) {
  double best = std::numeric_limits<double>::max();
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    best = std::min(best, point_segment_dist2(p, pts[i], pts[i + 1]));
  }
  return std::sqrt(best);
}

}  // namespace

RoadMap::RoadMap(std::vector<LaneSegment> segments, double kernel_sigma_m,
                 double origin_lat_deg, double origin_lon_deg)
    : segments_(std::move(segments)),
      kernel_sigma_m_(kernel_sigma_m),
      origin_lat_deg_(origin_lat_deg),
      origin_lon_deg_(origin_lon_deg) {
  if (segments_.empty()) throw ConfigError("RoadMap: empty segment list");
  if (!(kernel_sigma_m_ > 0.0)) throw ConfigError("RoadMap: kernel_sigma must be > 0");
  bounds_.reserve(segments_.size());
  for (const auto& seg : segments_) {
    if (seg.centerline.size() < 2)
      throw ConfigError("RoadMap: centerline needs at least 2 points");
    if (!(seg.half_width_m > 0.0))
      throw ConfigError("RoadMap: half_width must be > 0");
    Eigen::AlignedBox2d box;
    for (std::size_t i = 0; i < seg.centerline.size(); ++i) {
      if (i > 0 && (seg.centerline[i] - seg.centerline[i - 1]).squaredNorm() == 0.0)
        throw ConfigError("RoadMap: consecutive centerline points must be distinct");
      box.extend(seg.centerline[i]);
    }
    bounds_.push_back(box);
  }
}

double RoadMap::distance_to_road(const Vec2& p) const {
  // Exterior distance to the union of capsules: min over segments of
  // (centerline distance - half width), clamped at zero.
  double best = std::numeric_limits<double>::max();
  for (std::size_t k = 0; k < segments_.size(); ++k) {
    const double lower = bounds_[k].exteriorDistance(p) - segments_[k].half_width_m;
    if (lower >= best) continue;
    const double d =
        polyline_distance(p, segments_[k].centerline) - segments_[k].half_width_m;
    best = std::min(best, d);
  }
  return std::max(0.0, best);
}

bool RoadMap::in_constraint(const Vec2& p) const {
  return distance_to_road(p) == 0.0;
}

double RoadMap::road_likelihood(const Vec2& p, double extra_sigma_m) const {
  const double d = distance_to_road(p);
  const double var = kernel_sigma_m_ * kernel_sigma_m_ + extra_sigma_m * extra_sigma_m;
  return std::exp(-d * d / (2.0 * var));
}

RoadMap RoadMap::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("map file not readable: " + path);
  detail::json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    throw DataError("map file " + path + ": " + e.what());
  }
  detail::reject_unknown_keys(doc, "map", {"origin", "kernel_sigma_m", "segments"});
  double lat = 0.0, lon = 0.0;
  if (doc.contains("origin")) {
    detail::reject_unknown_keys(doc["origin"], "map.origin", {"lat_deg", "lon_deg"});
    lat = detail::require_number(doc["origin"], "map.origin", "lat_deg");
    lon = detail::require_number(doc["origin"], "map.origin", "lon_deg");
  }
  const double sigma = detail::get_number(doc, "map", "kernel_sigma_m", 1.0);
  if (!doc.contains("segments") || !doc["segments"].is_array())
    throw DataError("map file " + path + ": missing \"segments\" array");
  std::vector<LaneSegment> segments;
  for (const auto& s : doc["segments"]) {
    detail::reject_unknown_keys(s, "map.segments[]", {"half_width_m", "points"});
    LaneSegment seg;
    seg.half_width_m = detail::get_number(s, "map.segments[]", "half_width_m", 1.75);
    if (!s.contains("points") || !s["points"].is_array())
      throw DataError("map file " + path + ": segment missing \"points\"");
    for (const auto& pt : s["points"]) {
      if (!pt.is_array() || pt.size() != 2 || !pt[0].is_number() || !pt[1].is_number())
        throw DataError("map file " + path + ": points must be [east_m, north_m]");
      seg.centerline.emplace_back(pt[0].get<double>(), pt[1].get<double>());
    }
    segments.push_back(std::move(seg));
  }
  return RoadMap(std::move(segments), sigma, lat, lon);
}

void RoadMap::save_file(const std::string& path) const {
  detail::json doc;
  doc["origin"] = {{"lat_deg", origin_lat_deg_}, {"lon_deg", origin_lon_deg_}};
  doc["kernel_sigma_m"] = kernel_sigma_m_;
  doc["segments"] = detail::json::array();
  for (const auto& seg : segments_) {
    detail::json s;
    s["half_width_m"] = seg.half_width_m;
    s["points"] = detail::json::array();
    for (const auto& p : seg.centerline) s["points"].push_back({p.x(), p.y()});
    doc["segments"].push_back(std::move(s));
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write map file: " + path);
  out << doc.dump(2) << "\n";
}

RoadMap make_grid_map(int n_ew, int n_ns, double spacing_m, double half_width_m,
                      double kernel_sigma_m, double origin_lat_deg,
                      double origin_lon_deg) {
  if (n_ew < 1 || n_ns < 1) throw ConfigError("make_grid_map: street counts must be >= 1");
  if (!(spacing_m > 0.0)) throw ConfigError("make_grid_map: spacing must be > 0");
  const double width = (n_ns - 1) * spacing_m;
  const double height = (n_ew - 1) * spacing_m;
  std::vector<LaneSegment> segments;
  for (int i = 0; i < n_ew; ++i) {
    LaneSegment seg;
    seg.half_width_m = half_width_m;
    const double n = i * spacing_m;
    seg.centerline = {Vec2(0.0, n), Vec2(std::max(width, spacing_m), n)};
    segments.push_back(std::move(seg));
  }
  for (int j = 0; j < n_ns; ++j) {
    LaneSegment seg;
    seg.half_width_m = half_width_m;
    const double e = j * spacing_m;
    seg.centerline = {Vec2(e, 0.0), Vec2(e, std::max(height, spacing_m))};
    segments.push_back(std::move(seg));
  }
  return RoadMap(std::move(segments), kernel_sigma_m, origin_lat_deg, origin_lon_deg);
}

}  // namespace cmm

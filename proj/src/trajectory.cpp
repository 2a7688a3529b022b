#include "cmm/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "cmm/errors.hpp"

namespace cmm {

namespace {

constexpr double kDeg2Rad = M_PI / 180.0;
constexpr double kRad2Deg = 180.0 / M_PI;
constexpr double kTimeSlack = 1e-6;
constexpr char kHeader[] = "vehicle_id,t_s,lat_deg,lon_deg,speed_mps,heading_deg";

double wrap_heading(double deg) {
  double h = std::fmod(deg, 360.0);
  if (h < 0.0) h += 360.0;
  return h;
}

// Shortest signed angular difference in (-180, 180].
double heading_diff(double a_deg, double b_deg) {
  double d = std::fmod(a_deg - b_deg, 360.0);
  if (d <= -180.0) d += 360.0;
  if (d > 180.0) d -= 360.0;
  return d;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v))
      throw DataError(where + ": malformed number '" + s + "'");
    return v;
  } catch (const DataError&) {
    throw;
  } catch (const std::exception&) {
    throw DataError(where + ": malformed number '" + s + "'");
  }
}

int parse_int(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw DataError(where + ": malformed integer '" + s + "'");
    return v;
  } catch (const DataError&) {
    throw;
  } catch (const std::exception&) {
    throw DataError(where + ": malformed integer '" + s + "'");
  }
}

struct RawRow {
  int row_no;
  double t_s;
  Vec2 en;
  double speed_mps;
  double heading_deg;
};

}  // namespace

Vec2 latlon_to_en(double origin_lat_deg, double origin_lon_deg, double lat_deg,
                  double lon_deg) {
  const double east = kEarthRadiusM * std::cos(origin_lat_deg * kDeg2Rad) *
                      (lon_deg - origin_lon_deg) * kDeg2Rad;
  const double north = kEarthRadiusM * (lat_deg - origin_lat_deg) * kDeg2Rad;
  return Vec2(east, north);
}

void en_to_latlon(double origin_lat_deg, double origin_lon_deg, const Vec2& en,
                  double& lat_deg, double& lon_deg) {
  lat_deg = origin_lat_deg + (en.y() / kEarthRadiusM) * kRad2Deg;
  const double cos_lat = std::cos(origin_lat_deg * kDeg2Rad);
  lon_deg = origin_lon_deg + (en.x() / (kEarthRadiusM * cos_lat)) * kRad2Deg;
}

TrajectorySet load_trajectories_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open trajectory file '" + path + "'");

  // An empty file is an empty set, not an error; the header is required only
  // once there is content.
  std::string line;
  if (!std::getline(in, line)) return TrajectorySet{};
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHeader)
    throw DataError(path + ": row 1: expected header '" + std::string(kHeader) + "'");

  // Encounter order per vehicle; vehicles may interleave freely.
  std::map<int, std::vector<RawRow>> by_vehicle;
  bool have_origin = false;
  double origin_lat = 0.0, origin_lon = 0.0;
  int row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path + ": row " + std::to_string(row_no);
    const auto fields = split_csv(line);
    if (fields.size() != 6)
      throw DataError(where + ": expected 6 fields, found " +
                      std::to_string(fields.size()));
    RawRow r;
    r.row_no = row_no;
    const int vid = parse_int(fields[0], where);
    r.t_s = parse_double(fields[1], where);
    const double lat = parse_double(fields[2], where);
    const double lon = parse_double(fields[3], where);
    r.speed_mps = parse_double(fields[4], where);
    r.heading_deg = parse_double(fields[5], where);
    if (lat < -90.0 || lat > 90.0) throw DataError(where + ": latitude out of range");
    if (lon < -180.0 || lon > 180.0) throw DataError(where + ": longitude out of range");
    if (r.speed_mps < 0.0) throw DataError(where + ": negative speed");
    r.heading_deg = wrap_heading(r.heading_deg);
    if (!have_origin) {
      origin_lat = lat;
      origin_lon = lon;
      have_origin = true;
    }
    r.en = latlon_to_en(origin_lat, origin_lon, lat, lon);
    auto& rows = by_vehicle[vid];
    if (!rows.empty() && r.t_s <= rows.back().t_s + kTimeSlack)
      throw DataError(where + ": time does not increase for vehicle " +
                      std::to_string(vid));
    rows.push_back(r);
  }
  if (by_vehicle.empty()) return TrajectorySet{};

  TrajectorySet set;
  set.origin_lat_deg = origin_lat;
  set.origin_lon_deg = origin_lon;

  int max_id = 0;
  for (const auto& [vid, rows] : by_vehicle) max_id = std::max(max_id, vid);

  // A gap beyond the cadence starts a new trajectory; continuation pieces
  // take fresh ids past the largest id in the file.
  int next_fresh = max_id + 1;
  for (const auto& [vid, rows] : by_vehicle) {
    Trajectory cur;
    cur.vehicle_id = vid;
    cur.t0_s = rows.front().t_s;
    auto flush = [&](double new_t0) {
      if (!cur.samples.empty()) {
        set.items.push_back(std::move(cur));
        cur = Trajectory{};
        cur.vehicle_id = next_fresh++;
      }
      cur.t0_s = new_t0;
    };
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (i > 0) {
        const double dt = rows[i].t_s - rows[i - 1].t_s;
        if (dt > kTrajDt + kTimeSlack) {
          flush(rows[i].t_s);
        } else if (std::abs(dt - kTrajDt) > kTimeSlack) {
          throw DataError(path + ": row " + std::to_string(rows[i].row_no) +
                          ": sample spacing " + std::to_string(dt) +
                          " s does not match the 0.1 s cadence");
        }
      }
      cur.samples.push_back(
          TrajSample{rows[i].en.x(), rows[i].en.y(), rows[i].speed_mps,
                     rows[i].heading_deg});
    }
    if (!cur.samples.empty()) set.items.push_back(std::move(cur));
  }
  return set;
}

void save_trajectories_csv(const TrajectorySet& set, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write trajectory file '" + path + "'");
  out << kHeader << '\n';
  char buf[192];
  for (const auto& traj : set.items) {
    for (std::size_t i = 0; i < traj.samples.size(); ++i) {
      const auto& s = traj.samples[i];
      double lat, lon;
      en_to_latlon(set.origin_lat_deg, set.origin_lon_deg,
                   Vec2(s.east_m, s.north_m), lat, lon);
      std::snprintf(buf, sizeof(buf), "%d,%.3f,%.9f,%.9f,%.6f,%.6f\n",
                    traj.vehicle_id, traj.t0_s + static_cast<double>(i) * kTrajDt,
                    lat, lon, s.speed_mps, s.heading_deg);
      out << buf;
    }
  }
  if (!out) throw DataError("failed while writing '" + path + "'");
}

TrajectorySet filter_valid(const TrajectorySet& set, double min_duration_s,
                           double max_heading_jump_deg) {
  if (min_duration_s <= 0.0) throw ConfigError("filter_valid: min_duration_s must be positive");
  const auto keep_count = static_cast<std::size_t>(min_duration_s / kTrajDt + 1e-9);
  TrajectorySet out;
  out.origin_lat_deg = set.origin_lat_deg;
  out.origin_lon_deg = set.origin_lon_deg;
  for (const auto& traj : set.items) {
    if (traj.duration_s() + 1e-9 < min_duration_s) continue;
    bool smooth = true;
    for (std::size_t i = 1; i < traj.samples.size() && smooth; ++i) {
      const double jump = std::abs(
          heading_diff(traj.samples[i].heading_deg, traj.samples[i - 1].heading_deg));
      if (jump > max_heading_jump_deg) smooth = false;
    }
    if (!smooth) continue;
    Trajectory kept;
    kept.vehicle_id = traj.vehicle_id;
    kept.t0_s = traj.t0_s;
    kept.samples.assign(traj.samples.begin(),
                        traj.samples.begin() + std::min(keep_count, traj.samples.size()));
    out.items.push_back(std::move(kept));
  }
  return out;
}

TrajectorySet sample_network(const TrajectorySet& set, int n, RandomStream& rng) {
  const int m = static_cast<int>(set.items.size());
  if (n < 0) throw ConfigError("sample_network: n must be non-negative");
  if (n == 0) {
    TrajectorySet out;
    out.origin_lat_deg = set.origin_lat_deg;
    out.origin_lon_deg = set.origin_lon_deg;
    return out;
  }
  if (n > m)
    throw ConfigError("sample_network: requested " + std::to_string(n) +
                      " trajectories, only " + std::to_string(m) + " available");
  std::vector<int> idx(m);
  for (int i = 0; i < m; ++i) idx[i] = i;
  for (int i = 0; i < n; ++i) {
    const int j = static_cast<int>(rng.uniform_int(i, m - 1));
    std::swap(idx[i], idx[j]);
  }
  std::sort(idx.begin(), idx.begin() + n);
  TrajectorySet out;
  out.origin_lat_deg = set.origin_lat_deg;
  out.origin_lon_deg = set.origin_lon_deg;
  for (int i = 0; i < n; ++i) out.items.push_back(set.items[idx[i]]);
  return out;
}

namespace {

struct PolylineWalker {
  const std::vector<Vec2>* pts;
  std::vector<double> cum;  // cumulative arc length, cum[0] = 0
  double total = 0.0;

  explicit PolylineWalker(const std::vector<Vec2>& centerline) : pts(&centerline) {
    cum.resize(centerline.size(), 0.0);
    for (std::size_t i = 1; i < centerline.size(); ++i)
      cum[i] = cum[i - 1] + ((centerline[i] - centerline[i - 1]).norm());
    total = cum.back();
  }

  void at(double s, Vec2& pos, Vec2& tangent) const {
    s = std::clamp(s, 0.0, total);
    auto it = std::upper_bound(cum.begin(), cum.end(), s);
    std::size_t k = it == cum.begin() ? 0 : static_cast<std::size_t>(it - cum.begin()) - 1;
    if (k + 1 >= pts->size()) k = pts->size() - 2;
    const Vec2 a = (*pts)[k];
    const Vec2 b = (*pts)[k + 1];
    const double len = cum[k + 1] - cum[k];
    const double f = len > 0.0 ? (s - cum[k]) / len : 0.0;
    pos = a + f * (b - a);
    tangent = (b - a) / (len > 0.0 ? len : 1.0);
  }
};

}  // namespace

TrajectorySet synth_trajectories(const RoadMap& map, int n, double duration_s,
                                 double speed_min_mps, double speed_max_mps,
                                 RandomStream& rng) {
  if (n <= 0) throw ConfigError("synth_trajectories: n must be positive");
  if (duration_s <= 0.0) throw ConfigError("synth_trajectories: duration must be positive");
  if (speed_min_mps < 0.0 || speed_max_mps < speed_min_mps)
    throw ConfigError("synth_trajectories: invalid speed range");
  const auto& segs = map.segments();
  if (segs.empty()) throw ConfigError("synth_trajectories: map has no segments");

  const auto n_samples = static_cast<std::size_t>(std::llround(duration_s / kTrajDt));
  TrajectorySet out;
  for (int v = 0; v < n; ++v) {
    const auto seg_idx = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int>(segs.size()) - 1));
    double dir = rng.uniform_int(0, 1) == 0 ? 1.0 : -1.0;
    const double speed =
        speed_min_mps + rng.uniform01() * (speed_max_mps - speed_min_mps);
    PolylineWalker walk(segs[seg_idx].centerline);
    double s = rng.uniform01() * walk.total;

    Trajectory traj;
    traj.vehicle_id = v + 1;
    traj.t0_s = 0.0;
    traj.samples.reserve(n_samples);
    for (std::size_t k = 0; k < n_samples; ++k) {
      Vec2 pos, tan;
      walk.at(s, pos, tan);
      const Vec2 vel = dir * tan;
      const double heading = wrap_heading(std::atan2(vel.x(), vel.y()) * kRad2Deg);
      traj.samples.push_back(TrajSample{pos.x(), pos.y(), speed, heading});
      s += dir * speed * kTrajDt;
      while (s < 0.0 || s > walk.total) {
        if (s < 0.0) {
          s = -s;
          dir = 1.0;
        } else {
          s = 2.0 * walk.total - s;
          dir = -1.0;
        }
      }
    }
    out.items.push_back(std::move(traj));
  }
  return out;
}

}  // namespace cmm

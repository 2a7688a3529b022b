#pragma once
#include <string>
#include <vector>

#include "cmm/random.hpp"
#include "cmm/road_map.hpp"

namespace cmm {

// Fixed resampling cadence of every trajectory in the toolkit.
inline constexpr double kTrajDt = 0.1;

// Mean-radius sphere used by the equirectangular projection.
inline constexpr double kEarthRadiusM = 6'371'000.0;

Vec2 latlon_to_en(double origin_lat_deg, double origin_lon_deg, double lat_deg,
                  double lon_deg);
void en_to_latlon(double origin_lat_deg, double origin_lon_deg, const Vec2& en,
                  double& lat_deg, double& lon_deg);

struct TrajSample {
  double east_m = 0.0;
  double north_m = 0.0;
  double speed_mps = 0.0;
  double heading_deg = 0.0;  // clockwise from north, in [0, 360)
};

struct Trajectory {
  int vehicle_id = 0;
  double t0_s = 0.0;
  std::vector<TrajSample> samples;  // spaced kTrajDt apart

  double duration_s() const { return static_cast<double>(samples.size()) * kTrajDt; }
};

struct TrajectorySet {
  double origin_lat_deg = 0.0;
  double origin_lon_deg = 0.0;
  std::vector<Trajectory> items;
};

// CSV exchange format, header:
//   vehicle_id,t_s,lat_deg,lon_deg,speed_mps,heading_deg
// Rows of different vehicles may interleave; rows of one vehicle must appear
// in strictly increasing time at the kTrajDt cadence. A time gap larger than
// kTrajDt (beyond rounding slack) splits the remainder into a new trajectory
// with a fresh id. The local frame origin is the first data row's lat/lon.
TrajectorySet load_trajectories_csv(const std::string& path);
void save_trajectories_csv(const TrajectorySet& set, const std::string& path);

// Keeps trajectories that last at least min_duration_s and whose consecutive
// heading changes (shortest angular difference) never exceed
// max_heading_jump_deg, then truncates each survivor to exactly
// min_duration_s from its start.
TrajectorySet filter_valid(const TrajectorySet& set, double min_duration_s = 300.0,
                           double max_heading_jump_deg = 10.0);

// Draws n distinct trajectories without replacement, preserving their order
// in the input. Throws ConfigError when fewer than n are available.
TrajectorySet sample_network(const TrajectorySet& set, int n, RandomStream& rng);

// Synthesizes n vehicles riding the map's segment centerlines at constant
// speeds drawn uniformly from [speed_min_mps, speed_max_mps], reversing at
// segment ends. Every sample satisfies the map's corridor constraint.
TrajectorySet synth_trajectories(const RoadMap& map, int n, double duration_s,
                                 double speed_min_mps, double speed_max_mps,
                                 RandomStream& rng);

}  // namespace cmm

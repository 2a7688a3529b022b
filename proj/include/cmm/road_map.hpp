#pragma once
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cmm {

using Vec2 = Eigen::Vector2d;

// One lane centerline with a constant corridor half width. The corridor is
// the centerline polyline dilated by half_width (a capsule union).
struct LaneSegment {
  std::vector<Vec2> centerline;  // east/north meters, >= 2 distinct points
  double half_width_m = 1.75;
};

// Road network in a local east/north frame. Immutable after construction,
// safe for concurrent reads. kernel_sigma controls how sharply membership
// weight falls off outside a corridor.
class RoadMap {
 public:
  RoadMap() = default;
  RoadMap(std::vector<LaneSegment> segments, double kernel_sigma_m,
          double origin_lat_deg = 0.0, double origin_lon_deg = 0.0);

  // Distance from p to the nearest corridor; 0 iff p lies inside one.
  double distance_to_road(const Vec2& p) const;

  // True iff p is inside or on the boundary of some lane corridor.
  bool in_constraint(const Vec2& p) const;

  // exp(-d^2 / (2 (kernel_sigma^2 + extra_sigma^2))) with d = distance_to_road.
  // extra_sigma inflates the kernel for position uncertainty of the query.
  double road_likelihood(const Vec2& p, double extra_sigma_m = 0.0) const;

  const std::vector<LaneSegment>& segments() const { return segments_; }
  double kernel_sigma() const { return kernel_sigma_m_; }
  double origin_lat_deg() const { return origin_lat_deg_; }
  double origin_lon_deg() const { return origin_lon_deg_; }

  static RoadMap load_file(const std::string& path);
  void save_file(const std::string& path) const;

 private:
  std::vector<LaneSegment> segments_;
  double kernel_sigma_m_ = 1.0;
  double origin_lat_deg_ = 0.0;
  double origin_lon_deg_ = 0.0;
  // Axis-aligned bounds per segment, for distance pruning.
  std::vector<Eigen::AlignedBox2d> bounds_;
};

// Demo grid: n_ew east-west streets crossed with n_ns north-south streets at
// the given spacing, corner at the origin.
RoadMap make_grid_map(int n_ew, int n_ns, double spacing_m,
                      double half_width_m = 1.75, double kernel_sigma_m = 1.0,
                      double origin_lat_deg = 0.0, double origin_lon_deg = 0.0);

}  // namespace cmm

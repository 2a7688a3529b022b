#pragma once
#include <cstdint>

#include <Eigen/Dense>
#include <vector>

#include "cmm/random.hpp"
#include "cmm/road_map.hpp"

namespace cmm {

// Satellite geometry in the local east/north/up frame, meters. Static for the
// duration of a scenario; orbital motion is negligible at a 300 s horizon.
struct Constellation {
  std::vector<Eigen::Vector3d> sats;
  void validate() const;  // >= 4 satellites, all above the horizon, distinct
};

// Orbit radius used for synthetic constellations.
inline constexpr double kSatRadiusM = 20'200'000.0;

// Satellites at kSatRadiusM, azimuths evenly spread, elevations drawn
// uniformly in [30, 80] degrees. Deterministic for a fixed seed.
Constellation default_constellation(int n_sats, std::uint64_t seed);

// Per-satellite range bias shared by every receiver that tracks the
// satellite (satellite clock, ionosphere, troposphere). First-order
// Gauss-Markov: c_j += w_j * dt with w_j ~ N(0, drift_sigma^2).
struct CommonBiasState {
  Eigen::VectorXd biases_m;
  double drift_sigma = 0.1;  // meters per root-second
};

void propagate_common_bias(CommonBiasState& state, double dt_s, RandomStream& rng);

struct PseudoRangeSet {
  Eigen::VectorXd ranges_m;
  int vehicle_id = 0;
  int step = 0;
};

// Z_j = ||(pos, 0) - s_j|| + C_j + clock_bias + eps_j,
// eps_j ~ N(0, noncommon_sigma^2) independent across satellites and vehicles.
PseudoRangeSet measure_pseudoranges(const Constellation& c, const Vec2& vehicle_pos,
                                    double clock_bias_m, const CommonBiasState& biases,
                                    double noncommon_sigma_m, RandomStream& rng,
                                    int vehicle_id = 0, int step = 0);

struct RawFix {
  Vec2 pos{0.0, 0.0};
  double clock_bias_m = 0.0;
  int iterations = 0;
  double residual_rms_m = 0.0;
};

// Single-receiver iterative least squares over (east, north, clock bias) with
// the up component fixed at zero. Common biases are not modeled, so they leak
// into the solution; this is the uncooperative baseline. Converges when the
// position update drops below 1e-4 m, errors after 20 iterations.
RawFix raw_fix(const PseudoRangeSet& z, const Constellation& c,
               const Vec2& initial_guess = Vec2(0.0, 0.0));

}  // namespace cmm

#pragma once
#include <cstdint>
#include <map>
#include <vector>

#include <Eigen/Dense>

#include "cmm/gnss.hpp"
#include "cmm/random.hpp"
#include "cmm/road_map.hpp"

namespace cmm {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

// State order of the conditional Kalman filters:
// [east, east rate, north, north rate, clock bias, clock drift].
struct VehicleBelief {
  Vec6 mean = Vec6::Zero();
  Mat6 cov = Mat6::Zero();

  Vec2 position() const { return Vec2(mean[0], mean[2]); }
  // Largest eigenvalue of the 2x2 horizontal position covariance.
  double max_horizontal_var() const;
};

// One hypothesis over the per-satellite common biases, carrying a bank of
// conditional Kalman beliefs (one per tracked vehicle, aligned with the
// owning set's tracked_ids) and a contribution log for the incest guard.
// last_contrib[v] is the most recent step at which vehicle v's information
// shaped this hypothesis, -1 for never.
struct BiasParticle {
  Eigen::VectorXd biases;
  double weight = 0.0;
  std::vector<VehicleBelief> beliefs;
  std::vector<std::int32_t> last_contrib;
};

struct ParticleSet {
  int owner = 0;  // vehicle index, 0-based
  int nominal_size = 0;
  int n_vehicles = 0;  // sizes last_contrib
  std::vector<int> tracked_ids;  // sorted ascending, always contains owner
  std::vector<BiasParticle> particles;

  int belief_index(int vehicle) const;  // -1 when untracked
  double ess() const;                   // 1 / sum of squared weights
};

// Process noise for the constant-velocity / constant-drift model. Sigmas are
// square roots of the white-noise power spectral densities driving the rate
// states; the discrete blocks follow the standard integration
// q * [[dt^3/3, dt^2/2], [dt^2/2, dt]].
struct ProcessParams {
  double accel_sigma = 0.5;        // horizontal, applies to both axes
  double clock_accel_sigma = 0.05;  // clock drift rate
};

Mat6 transition_matrix(double dt_s);
Mat6 process_noise(const ProcessParams& p, double dt_s);

// Advances every particle: biases take the Gauss-Markov step (sigma =
// drift_sigma * dt per satellite), beliefs take mean' = A mean,
// cov' = A cov A^T + Q. Bias draws are per particle, per satellite, in order.
void predict(ParticleSet& ps, double dt_s, const ProcessParams& process,
             double drift_sigma, RandomStream& rng);

// Measurement update of one belief against the pseudo-range model with the
// particle's biases treated as known. Sequential scalar updates per
// satellite; returns the accumulated measurement log-likelihood. The
// covariance is kept symmetric; if a repair has to clamp eigenvalues by more
// than 1e-6 a NumericalError is thrown.
double ekf_update(VehicleBelief& belief, const PseudoRangeSet& z, const Constellation& c,
                  const Eigen::VectorXd& biases, double noncommon_sigma_m);

struct UpdateParams {
  double noncommon_sigma_m = 3.0;
  bool use_road = true;
  int step = 0;  // stamps the owner into each particle's contribution log
};

struct UpdateOutcome {
  bool degenerate = false;  // all weights underflowed; weights were reset uniform
};

// Alg. steps: per particle, run the conditional filter update for every
// vehicle with a delivered measurement, fold the measurement likelihoods and
// the road factors into the weight, then renormalize. Vehicles without a
// measurement this step contribute neither likelihood nor road factor. The
// road factor per vehicle uses extra_sigma = sqrt(max horizontal eigenvalue)
// of that belief's position covariance.
UpdateOutcome weight_and_update(ParticleSet& ps,
                                const std::map<int, PseudoRangeSet>& measurements,
                                const RoadMap& map, const Constellation& c,
                                const UpdateParams& params);

// Systematic resampling positions: u_k = (offset + k) / n_out walked against
// the cumulative weights. Exposed for oracle tests.
std::vector<int> systematic_resample_indices(const Eigen::VectorXd& weights, int n_out,
                                             double offset);

// ESS-gated systematic resampling: acts only when ESS < nominal_size / 2,
// otherwise identity. Output weights are uniform; contribution logs copy.
bool resample(ParticleSet& ps, RandomStream& rng);

// Unconditional systematic resample to nominal_size (used by the fusion pool
// downsizing as well as tests).
void force_resample(ParticleSet& ps, RandomStream& rng);

struct VehicleEstimate {
  int vehicle_id = 0;
  Vec6 mean = Vec6::Zero();
  Mat6 cov = Mat6::Zero();  // weighted within-particle cov + between-particle spread
};

struct Estimate {
  Eigen::VectorXd bias_mean;
  Eigen::MatrixXd bias_cov;  // between-particle spread of the bias hypotheses
  std::vector<VehicleEstimate> vehicles;
};

Estimate estimate(const ParticleSet& ps);

}  // namespace cmm

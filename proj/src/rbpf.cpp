#include "cmm/rbpf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cmm/errors.hpp"

namespace cmm {

namespace {
constexpr double kLogTwoPi = 1.8378770664093453;
}

double VehicleBelief::max_horizontal_var() const {
  const double a = cov(0, 0);
  const double c = cov(2, 2);
  const double b = cov(0, 2);
  const double half_diff = 0.5 * (a - c);
  return 0.5 * (a + c) + std::sqrt(half_diff * half_diff + b * b);
}

int ParticleSet::belief_index(int vehicle) const {
  auto it = std::lower_bound(tracked_ids.begin(), tracked_ids.end(), vehicle);
  if (it == tracked_ids.end() || *it != vehicle) return -1;
  return static_cast<int>(it - tracked_ids.begin());
}

double ParticleSet::ess() const {
  double sum_sq = 0.0;
  for (const auto& p : particles) sum_sq += p.weight * p.weight;
  if (sum_sq <= 0.0) return 0.0;
  return 1.0 / sum_sq;
}

Mat6 transition_matrix(double dt_s) {
  Mat6 a = Mat6::Identity();
  a(0, 1) = dt_s;
  a(2, 3) = dt_s;
  a(4, 5) = dt_s;
  return a;
}

Mat6 process_noise(const ProcessParams& p, double dt_s) {
  const double qh = p.accel_sigma * p.accel_sigma;
  const double qc = p.clock_accel_sigma * p.clock_accel_sigma;
  const double d3 = dt_s * dt_s * dt_s / 3.0;
  const double d2 = dt_s * dt_s / 2.0;
  Mat6 q = Mat6::Zero();
  for (int blk = 0; blk < 3; ++blk) {
    const double qi = blk < 2 ? qh : qc;
    const int r = 2 * blk;
    q(r, r) = qi * d3;
    q(r, r + 1) = qi * d2;
    q(r + 1, r) = qi * d2;
    q(r + 1, r + 1) = qi * dt_s;
  }
  return q;
}

void predict(ParticleSet& ps, double dt_s, const ProcessParams& process,
             double drift_sigma, RandomStream& rng) {
  if (dt_s <= 0.0) throw ConfigError("predict: dt_s must be positive");
  const Mat6 a = transition_matrix(dt_s);
  const Mat6 q = process_noise(process, dt_s);
  const double bias_sigma = drift_sigma * dt_s;
  for (auto& p : ps.particles) {
    for (Eigen::Index j = 0; j < p.biases.size(); ++j)
      p.biases[j] += rng.normal(0.0, bias_sigma);
    for (auto& b : p.beliefs) {
      b.mean = a * b.mean;
      b.cov = a * b.cov * a.transpose() + q;
    }
  }
}

namespace {

// Symmetrize and, if any eigenvalue went negative, clamp to zero. Clamping
// beyond the tolerance means the update itself is broken, not just rounding.
void repair_covariance(Mat6& p) {
  p = (0.5 * (p + p.transpose())).eval();
  double min_diag = p.diagonal().minCoeff();
  if (min_diag >= 0.0 && p.allFinite()) return;
  if (!p.allFinite()) throw NumericalError("conditional filter covariance is not finite");
  Eigen::SelfAdjointEigenSolver<Mat6> es(p);
  const Vec6 evals = es.eigenvalues();
  const double worst = -evals.minCoeff();
  if (worst > 1e-6)
    throw NumericalError("conditional filter covariance lost definiteness (clamp " +
                         std::to_string(worst) + " exceeds 1e-6)");
  Vec6 clamped = evals.cwiseMax(0.0);
  p = es.eigenvectors() * clamped.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double ekf_update(VehicleBelief& belief, const PseudoRangeSet& z, const Constellation& c,
                  const Eigen::VectorXd& biases, double noncommon_sigma_m) {
  const int n_sats = static_cast<int>(c.sats.size());
  if (z.ranges_m.size() != n_sats)
    throw ConfigError("ekf_update: measurement/constellation size mismatch");
  if (biases.size() != n_sats)
    throw ConfigError("ekf_update: bias vector/constellation size mismatch");
  if (noncommon_sigma_m <= 0.0)
    throw ConfigError("ekf_update: noncommon_sigma_m must be positive");

  const double r = noncommon_sigma_m * noncommon_sigma_m;
  double loglik = 0.0;
  Vec6 h;
  for (int j = 0; j < n_sats; ++j) {
    const Eigen::Vector3d& s = c.sats[j];
    const double dx = belief.mean[0] - s[0];
    const double dy = belief.mean[2] - s[1];
    const double dz = -s[2];
    const double range = std::sqrt(dx * dx + dy * dy + dz * dz);
    const double predicted = range + biases[j] + belief.mean[4];
    const double innov = z.ranges_m[j] - predicted;

    h.setZero();
    h[0] = dx / range;
    h[2] = dy / range;
    h[4] = 1.0;

    const Vec6 v = belief.cov * h;  // P h^T
    const double s_innov = h.dot(v) + r;
    if (!(s_innov > 0.0) || !std::isfinite(s_innov))
      throw NumericalError("ekf_update: non-positive innovation variance");
    loglik += -0.5 * (innov * innov / s_innov + std::log(s_innov) + kLogTwoPi);

    belief.mean += v * (innov / s_innov);
    belief.cov -= (v * v.transpose()) / s_innov;
  }
  repair_covariance(belief.cov);
  return loglik;
}

UpdateOutcome weight_and_update(ParticleSet& ps,
                                const std::map<int, PseudoRangeSet>& measurements,
                                const RoadMap& map, const Constellation& c,
                                const UpdateParams& params) {
  UpdateOutcome out;
  if (ps.particles.empty()) return out;

  // Resolve measured vehicles to belief slots once; untracked senders are a
  // caller error.
  std::vector<std::pair<int, const PseudoRangeSet*>> measured;
  measured.reserve(measurements.size());
  for (const auto& [vid, z] : measurements) {
    const int slot = ps.belief_index(vid);
    if (slot < 0)
      throw ConfigError("weight_and_update: measurement for untracked vehicle " +
                        std::to_string(vid));
    measured.emplace_back(slot, &z);
  }

  const int n = static_cast<int>(ps.particles.size());
  std::vector<double> logw(n);
  for (int i = 0; i < n; ++i) {
    auto& p = ps.particles[i];
    double lw = p.weight > 0.0 ? std::log(p.weight)
                               : -std::numeric_limits<double>::infinity();
    for (const auto& [slot, z] : measured) {
      lw += ekf_update(p.beliefs[slot], *z, c, p.biases, params.noncommon_sigma_m);
      if (params.use_road) {
        const auto& b = p.beliefs[slot];
        const double extra = std::sqrt(std::max(0.0, b.max_horizontal_var()));
        lw += std::log(map.road_likelihood(b.position(), extra));
      }
    }
    p.last_contrib[ps.owner] = params.step;
    logw[i] = lw;
  }

  double max_lw = -std::numeric_limits<double>::infinity();
  for (double lw : logw) max_lw = std::max(max_lw, lw);
  double sum = 0.0;
  if (std::isfinite(max_lw)) {
    for (int i = 0; i < n; ++i) {
      const double w = std::exp(logw[i] - max_lw);
      ps.particles[i].weight = w;
      sum += w;
    }
  }
  if (!(sum > 0.0) || !std::isfinite(sum)) {
    // Every hypothesis underflowed; restart from an uninformative weighting
    // rather than dividing by zero. The caller records the event.
    const double uniform = 1.0 / n;
    for (auto& p : ps.particles) p.weight = uniform;
    out.degenerate = true;
    return out;
  }
  for (auto& p : ps.particles) p.weight /= sum;
  return out;
}

std::vector<int> systematic_resample_indices(const Eigen::VectorXd& weights, int n_out,
                                             double offset) {
  const int n = static_cast<int>(weights.size());
  if (n == 0) throw ConfigError("systematic_resample_indices: empty weight vector");
  if (n_out <= 0) throw ConfigError("systematic_resample_indices: n_out must be positive");
  if (!(offset >= 0.0 && offset < 1.0))
    throw ConfigError("systematic_resample_indices: offset must lie in [0, 1)");
  const double total = weights.sum();
  if (!(total > 0.0) || !std::isfinite(total))
    throw NumericalError("systematic_resample_indices: weights do not sum to a positive value");

  std::vector<int> idx(n_out);
  double cum = weights[0];
  int j = 0;
  for (int k = 0; k < n_out; ++k) {
    const double u = total * (offset + k) / n_out;
    while (cum < u && j + 1 < n) cum += weights[++j];
    idx[k] = j;
  }
  return idx;
}

namespace {

void resample_to(ParticleSet& ps, int n_out, RandomStream& rng) {
  Eigen::VectorXd w(ps.particles.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = ps.particles[i].weight;
  const auto idx = systematic_resample_indices(w, n_out, rng.uniform01());
  std::vector<BiasParticle> next;
  next.reserve(n_out);
  const double uniform = 1.0 / n_out;
  for (int i : idx) {
    next.push_back(ps.particles[i]);
    next.back().weight = uniform;
  }
  ps.particles = std::move(next);
}

}  // namespace

bool resample(ParticleSet& ps, RandomStream& rng) {
  if (ps.particles.empty()) return false;
  if (ps.ess() >= 0.5 * ps.nominal_size &&
      static_cast<int>(ps.particles.size()) == ps.nominal_size)
    return false;
  resample_to(ps, ps.nominal_size, rng);
  return true;
}

void force_resample(ParticleSet& ps, RandomStream& rng) {
  if (ps.particles.empty()) throw ConfigError("force_resample: empty particle set");
  resample_to(ps, ps.nominal_size, rng);
}

Estimate estimate(const ParticleSet& ps) {
  Estimate est;
  if (ps.particles.empty()) throw ConfigError("estimate: empty particle set");
  const int n_sats = static_cast<int>(ps.particles.front().biases.size());
  const int n_tracked = static_cast<int>(ps.tracked_ids.size());

  est.bias_mean = Eigen::VectorXd::Zero(n_sats);
  for (const auto& p : ps.particles) est.bias_mean += p.weight * p.biases;
  est.bias_cov = Eigen::MatrixXd::Zero(n_sats, n_sats);
  for (const auto& p : ps.particles) {
    const Eigen::VectorXd d = p.biases - est.bias_mean;
    est.bias_cov += p.weight * (d * d.transpose());
  }

  est.vehicles.resize(n_tracked);
  for (int t = 0; t < n_tracked; ++t) {
    auto& v = est.vehicles[t];
    v.vehicle_id = ps.tracked_ids[t];
    for (const auto& p : ps.particles) v.mean += p.weight * p.beliefs[t].mean;
    // Law of total variance: weighted conditional covariance plus the spread
    // of the conditional means.
    for (const auto& p : ps.particles) {
      const Vec6 d = p.beliefs[t].mean - v.mean;
      v.cov += p.weight * (p.beliefs[t].cov + d * d.transpose());
    }
  }
  return est;
}

}  // namespace cmm

#include "cmm/gnss.hpp"

#include <cmath>

#include "cmm/errors.hpp"

namespace cmm {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kDeg = kPi / 180.0;
}  // namespace

void Constellation::validate() const {
  if (sats.size() < 4)
    throw ConfigError("Constellation: at least 4 satellites required");
  for (std::size_t i = 0; i < sats.size(); ++i) {
    if (!(sats[i].z() > 0.0))
      throw ConfigError("Constellation: satellite below the horizon");
    for (std::size_t j = i + 1; j < sats.size(); ++j)
      if ((sats[i] - sats[j]).squaredNorm() == 0.0)
        throw ConfigError("Constellation: duplicate satellite positions");
  }
}

Constellation default_constellation(int n_sats, std::uint64_t seed) {
  if (n_sats < 4)
    throw ConfigError("default_constellation: n_sats must be >= 4");
  RandomStream rng(derive_seed(seed, StreamKind::constellation));
  Constellation c;
  c.sats.reserve(n_sats);
  for (int i = 0; i < n_sats; ++i) {
    const double az = 2.0 * kPi * i / n_sats;
    const double el = (30.0 + 50.0 * rng.uniform01()) * kDeg;
    c.sats.emplace_back(kSatRadiusM * std::cos(el) * std::sin(az),
                        kSatRadiusM * std::cos(el) * std::cos(az),
                        kSatRadiusM * std::sin(el));
  }
  c.validate();
  return c;
}

void propagate_common_bias(CommonBiasState& state, double dt_s, RandomStream& rng) {
  if (!(dt_s > 0.0)) throw ConfigError("propagate_common_bias: dt must be > 0");
  // Increment standard deviation is drift_sigma * dt (the driving noise is
  // scaled by the step length, not its square root).
  const double sigma = state.drift_sigma * dt_s;
  for (Eigen::Index j = 0; j < state.biases_m.size(); ++j)
    state.biases_m[j] += rng.normal(0.0, sigma);
}

PseudoRangeSet measure_pseudoranges(const Constellation& c, const Vec2& vehicle_pos,
                                    double clock_bias_m, const CommonBiasState& biases,
                                    double noncommon_sigma_m, RandomStream& rng,
                                    int vehicle_id, int step) {
  if (noncommon_sigma_m < 0.0)
    throw ConfigError("measure_pseudoranges: noncommon_sigma must be >= 0");
  if (biases.biases_m.size() != static_cast<Eigen::Index>(c.sats.size()))
    throw ConfigError("measure_pseudoranges: bias count != satellite count");
  const Eigen::Vector3d p(vehicle_pos.x(), vehicle_pos.y(), 0.0);
  PseudoRangeSet out;
  out.vehicle_id = vehicle_id;
  out.step = step;
  out.ranges_m.resize(static_cast<Eigen::Index>(c.sats.size()));
  for (std::size_t j = 0; j < c.sats.size(); ++j) {
    const double range = (c.sats[j] - p).norm();
    out.ranges_m[static_cast<Eigen::Index>(j)] =
        range + biases.biases_m[static_cast<Eigen::Index>(j)] + clock_bias_m +
        rng.normal(0.0, noncommon_sigma_m);
  }
  return out;
}

RawFix raw_fix(const PseudoRangeSet& z, const Constellation& c, const Vec2& initial_guess) {
  const int n = static_cast<int>(c.sats.size());
  if (n < 4) throw ConfigError("raw_fix: at least 4 satellites required");
  if (z.ranges_m.size() != n) throw ConfigError("raw_fix: range count != satellite count");

  Eigen::Vector3d u(initial_guess.x(), initial_guess.y(), 0.0);  // (east, north, clock)
  Eigen::MatrixXd J(n, 3);
  Eigen::VectorXd r(n);
  constexpr int kMaxIter = 20;
  for (int iter = 1; iter <= kMaxIter; ++iter) {
    const Eigen::Vector3d p(u.x(), u.y(), 0.0);
    for (int j = 0; j < n; ++j) {
      const Eigen::Vector3d d = c.sats[j] - p;
      const double range = d.norm();
      r[j] = z.ranges_m[j] - (range + u.z());
      J(j, 0) = -d.x() / range;
      J(j, 1) = -d.y() / range;
      J(j, 2) = 1.0;
    }
    const Eigen::Vector3d delta = J.colPivHouseholderQr().solve(r);
    u += delta;
    if (delta.head<2>().norm() < 1e-4) {
      RawFix fix;
      fix.pos = Vec2(u.x(), u.y());
      fix.clock_bias_m = u.z();
      fix.iterations = iter;
      fix.residual_rms_m = std::sqrt((r - J * delta).squaredNorm() / n);
      return fix;
    }
  }
  const double res = std::sqrt(r.squaredNorm() / n);
  throw NumericalError("raw_fix: no convergence after 20 iterations, residual rms " +
                       std::to_string(res) + " m");
}

}  // namespace cmm

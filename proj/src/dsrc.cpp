#include "cmm/dsrc.hpp"

#include "cmm/errors.hpp"

namespace cmm {

void PdrProfile::validate() const {
  if (!(0.0 < er_m && er_m < mr_m))
    throw ConfigError("PdrProfile: requires 0 < er < mr");
  if (!(0.0 <= p_mr && p_mr <= p_er && p_er <= 1.0))
    throw ConfigError("PdrProfile: requires 0 <= p_mr <= p_er <= 1");
}

double pdr(const PdrProfile& profile, double distance_m) {
  if (distance_m < 0.0) throw ConfigError("pdr: negative distance");
  if (distance_m <= profile.er_m) return profile.p_er;
  if (distance_m > profile.mr_m) return 0.0;
  const double t = (distance_m - profile.er_m) / (profile.mr_m - profile.er_m);
  return profile.p_er + t * (profile.p_mr - profile.p_er);
}

bool try_deliver(const PdrProfile& profile, double distance_m, RandomStream& rng) {
  // The draw happens unconditionally so that stream alignment does not depend
  // on the distance.
  const double u = rng.uniform01();
  return u < pdr(profile, distance_m);
}

LossStats loss_stats(const std::vector<bool>& outcomes) {
  LossStats s;
  s.attempts = static_cast<std::int64_t>(outcomes.size());
  for (bool delivered : outcomes)
    if (!delivered) ++s.drops;
  s.loss_rate = s.attempts > 0 ? static_cast<double>(s.drops) / s.attempts : 0.0;
  return s;
}

}  // namespace cmm

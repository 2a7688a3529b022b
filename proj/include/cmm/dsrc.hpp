#pragma once
#include <cstdint>
#include <vector>

#include "cmm/random.hpp"

namespace cmm {

// Distance-dependent packet delivery ratio. Delivery holds at p_er out to the
// effective range, falls linearly to p_mr at the maximum range, and is zero
// beyond it.
struct PdrProfile {
  double er_m = 150.0;   // effective range
  double mr_m = 600.0;   // maximum range
  double p_er = 0.70;    // delivery ratio at and inside ER
  double p_mr = 0.10;    // delivery ratio at MR

  // Short-range profile from roadside measurements.
  static PdrProfile empirical() { return {150.0, 600.0, 0.70, 0.10}; }
  // Same endpoints stretched for sparse wide-area networks.
  static PdrProfile scaled() { return {1000.0, 4000.0, 0.70, 0.10}; }

  void validate() const;  // 0 < er < mr; 0 <= p_mr <= p_er <= 1
};

double pdr(const PdrProfile& profile, double distance_m);

// One Bernoulli trial at the link's current distance. Consumes exactly one
// draw from the stream regardless of outcome.
bool try_deliver(const PdrProfile& profile, double distance_m, RandomStream& rng);

struct LossStats {
  std::int64_t attempts = 0;
  std::int64_t drops = 0;
  double loss_rate = 0.0;  // drops/attempts, 0 when no attempts
};

// outcomes: one flag per attempted delivery, true = delivered.
LossStats loss_stats(const std::vector<bool>& outcomes);

}  // namespace cmm

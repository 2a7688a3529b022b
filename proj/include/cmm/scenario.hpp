#pragma once
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cmm/dsrc.hpp"
#include "cmm/fusion.hpp"
#include "cmm/gnss.hpp"
#include "cmm/rbpf.hpp"
#include "cmm/road_map.hpp"
#include "cmm/trajectory.hpp"

namespace cmm {

enum class MotionMode { stationary, host_dynamic, full_dynamic };

enum class FusionMode {
  none,                    // independent filters, no exchange
  centralized,             // one global filter fed over star links
  constant_alpha,          // fixed self-weight, rest split over senders
  max_degree,              // Metropolis weights (symmetric graphs only)
  decentralized_rand,      // random feasible rows, redrawn only on topology change
  decentralized_opt,       // joint spread-minimizing weights
  decentralized_opt_local  // per-row one-hop variant
};

enum class Topology { range, ring };

const char* to_string(MotionMode m);
const char* to_string(FusionMode m);
const char* to_string(Topology t);
MotionMode motion_mode_from_string(const std::string& s);
FusionMode fusion_mode_from_string(const std::string& s);
Topology topology_from_string(const std::string& s);

struct GridSpec {
  int n_ew = 5;
  int n_ns = 5;
  double spacing_m = 500.0;
  double half_width_m = 1.75;
  double kernel_sigma_m = 1.0;
};

struct GnssParams {
  int n_sats = 8;
  double noncommon_sigma_m = 3.0;
  double drift_sigma = 0.1;  // common-bias random-walk scale, metres per second of step
  double init_bias_sigma_m = 10.0;
  double init_clock_bias_sigma_m = 30.0;
  double init_clock_drift_sigma = 0.05;
};

struct FilterParams {
  int n_particles = 100;
  double accel_sigma = 0.5;
  double clock_accel_sigma = 0.05;
  int incest_horizon_steps = 20;
  bool road_constraints = true;
};

struct SynthSpec {
  double speed_min_mps = 8.0;
  double speed_max_mps = 14.0;
};

struct ScenarioConfig {
  std::uint64_t seed = 1;
  int n_steps = 1000;
  double dt_s = 0.1;
  int n_vehicles = 4;
  MotionMode motion = MotionMode::stationary;
  FusionMode fusion = FusionMode::none;
  double alpha = 0.5;  // constant_alpha only
  Topology topology = Topology::range;
  double comm_range_m = 1000.0;
  int max_neighbors = 30;
  std::optional<PdrProfile> channel;  // absent: lossless links, no channel draws
  std::optional<std::string> map_file;
  GridSpec grid;  // used when map_file is absent
  std::optional<std::string> trajectory_csv;  // absent: synthesize on the map
  SynthSpec synth;
  GnssParams gnss;
  FilterParams filter;
  int burn_in_steps = 0;  // leading steps excluded from aggregate metrics

  void validate() const;  // throws ConfigError
};

// Strict JSON: unknown keys anywhere are an error.
ScenarioConfig load_scenario_file(const std::string& path);

struct StepRecord {
  int step = 0;
  double t_s = 0.0;
  int vehicle_id = 0;  // 1-based in all outputs
  double true_east_m = 0.0, true_north_m = 0.0;
  double raw_east_m = 0.0, raw_north_m = 0.0;
  double est_east_m = 0.0, est_north_m = 0.0;
  double bias_est_m = 0.0;  // satellite-mean of the fused bias estimate
  double bias_true_m = 0.0;  // satellite-mean of the true common biases
  int nbr_within_er = 0, nbr_within_mr = 0;
};

struct LinkRecord {
  int step = 0;
  int sender_id = 0, receiver_id = 0;  // 1-based
  char payload = 'm';                  // 'm' measurement, 'p' particle batch
  double distance_m = 0.0;
  bool delivered = false;
};

struct MetricsReport {
  // Aggregates over steps after burn-in.
  double rmse_m = 0.0;
  double raw_rmse_m = 0.0;
  double sqrt_variance_m = 0.0;  // sqrt of time-averaged network bias variance
  double sqrt_mse_m = 0.0;       // sqrt of time-averaged network bias MSE
  double loss_rate = 0.0;
  int degeneracy_events = 0;
  int fusion_skips = 0;
  int raw_fix_failures = 0;
  // Largest observed |mse - variance - (mean - truth)^2| over all steps.
  double max_identity_gap = 0.0;
  // Per-step series, index step-1.
  std::vector<double> step_variance;
  std::vector<double> step_mse;
  std::vector<double> step_rms_error;
  std::vector<StepRecord> steps;
  std::vector<LinkRecord> links;
};

// Root of the mean squared Euclidean norm. Throws ConfigError when empty.
double rmse(const std::vector<Vec2>& errors);

// Runs the full simulation. n_threads <= 1 runs the serial reference path;
// larger values run the per-vehicle phases as parallel kernels. Results are
// identical either way: every vehicle, link, and purpose owns its own random
// stream, so the draw sequences do not depend on scheduling.
MetricsReport run_scenario(const ScenarioConfig& cfg, int n_threads = 1);

void write_steps_csv(const MetricsReport& r, const std::string& path);
void write_links_csv(const MetricsReport& r, const std::string& path);
void write_summary_csv(const ScenarioConfig& cfg, const MetricsReport& r,
                       const std::string& path);

// Building blocks for multi-run summaries; neither string ends in a newline.
const char* summary_csv_header();
std::string summary_csv_row(const ScenarioConfig& cfg, const MetricsReport& r);

}  // namespace cmm

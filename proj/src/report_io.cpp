#include <cstdio>
#include <fstream>

#include "cmm/errors.hpp"
#include "cmm/scenario.hpp"

namespace cmm {

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  return out;
}

}  // namespace

void write_steps_csv(const MetricsReport& r, const std::string& path) {
  auto out = open_out(path);
  out << "step,t_s,vehicle_id,true_east_m,true_north_m,raw_east_m,raw_north_m,"
         "est_east_m,est_north_m,bias_est_m,bias_true_m,nbr_within_er,nbr_within_mr\n";
  char buf[512];
  for (const auto& s : r.steps) {
    std::snprintf(buf, sizeof(buf),
                  "%d,%.3f,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%d,%d\n",
                  s.step, s.t_s, s.vehicle_id, s.true_east_m, s.true_north_m,
                  s.raw_east_m, s.raw_north_m, s.est_east_m, s.est_north_m,
                  s.bias_est_m, s.bias_true_m, s.nbr_within_er, s.nbr_within_mr);
    out << buf;
  }
  if (!out) throw DataError("failed while writing '" + path + "'");
}

void write_links_csv(const MetricsReport& r, const std::string& path) {
  auto out = open_out(path);
  out << "step,sender_id,receiver_id,payload,distance_m,delivered\n";
  char buf[160];
  for (const auto& l : r.links) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%d,%c,%.3f,%d\n", l.step, l.sender_id,
                  l.receiver_id, l.payload, l.distance_m, l.delivered ? 1 : 0);
    out << buf;
  }
  if (!out) throw DataError("failed while writing '" + path + "'");
}

const char* summary_csv_header() {
  return "mechanism,topology,motion,seed,n_vehicles,n_steps,dt_s,n_particles,"
         "burn_in_steps,rmse_m,raw_rmse_m,sqrt_variance_m,sqrt_mse_m,loss_rate,"
         "degeneracy_events,fusion_skips,raw_fix_failures,max_identity_gap";
}

std::string summary_csv_row(const ScenarioConfig& cfg, const MetricsReport& r) {
  char buf[640];
  std::snprintf(buf, sizeof(buf),
                "%s,%s,%s,%llu,%d,%d,%.6f,%d,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%d,%d,%d,%.9g",
                to_string(cfg.fusion), to_string(cfg.topology), to_string(cfg.motion),
                static_cast<unsigned long long>(cfg.seed), cfg.n_vehicles, cfg.n_steps,
                cfg.dt_s, cfg.filter.n_particles, cfg.burn_in_steps, r.rmse_m,
                r.raw_rmse_m, r.sqrt_variance_m, r.sqrt_mse_m, r.loss_rate,
                r.degeneracy_events, r.fusion_skips, r.raw_fix_failures,
                r.max_identity_gap);
  return buf;
}

void write_summary_csv(const ScenarioConfig& cfg, const MetricsReport& r,
                       const std::string& path) {
  auto out = open_out(path);
  out << summary_csv_header() << '\n' << summary_csv_row(cfg, r) << '\n';
  if (!out) throw DataError("failed while writing '" + path + "'");
}

}  // namespace cmm

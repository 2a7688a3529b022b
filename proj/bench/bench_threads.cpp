// Wall-clock comparison of the serial reference path against the OpenMP
// kernels, plus a bitwise equality check of the two reports. Usage:
//   bench_threads [--vehicles N] [--steps N] [--particles N] [--threads N]
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cmm/scenario.hpp"

using namespace cmm;

namespace {

double time_run(const ScenarioConfig& cfg, int n_threads, MetricsReport& out) {
  const auto t0 = std::chrono::steady_clock::now();
  out = run_scenario(cfg, n_threads);
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool same_steps(const MetricsReport& a, const MetricsReport& b) {
  if (a.steps.size() != b.steps.size()) return false;
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    const StepRecord &r = a.steps[i], &s = b.steps[i];
    if (r.est_east_m != s.est_east_m || r.est_north_m != s.est_north_m ||
        r.bias_est_m != s.bias_est_m)
      return false;
  }
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  ScenarioConfig cfg;
  cfg.seed = 7;
  cfg.n_steps = 200;
  cfg.n_vehicles = 24;
  cfg.motion = MotionMode::stationary;
  cfg.fusion = FusionMode::decentralized_opt;
  cfg.comm_range_m = 800.0;
  cfg.gnss.n_sats = 6;
  cfg.filter.n_particles = 128;
  cfg.burn_in_steps = 50;

  int n_threads = 0;
#ifdef _OPENMP
  n_threads = omp_get_max_threads();
#endif
  for (int i = 1; i + 1 < argc; i += 2) {
    if (std::strcmp(argv[i], "--vehicles") == 0) cfg.n_vehicles = std::atoi(argv[i + 1]);
    else if (std::strcmp(argv[i], "--steps") == 0) cfg.n_steps = std::atoi(argv[i + 1]);
    else if (std::strcmp(argv[i], "--particles") == 0)
      cfg.filter.n_particles = std::atoi(argv[i + 1]);
    else if (std::strcmp(argv[i], "--threads") == 0) n_threads = std::atoi(argv[i + 1]);
    else {
      std::fprintf(stderr, "unknown flag %s\n", argv[i]);
      return 2;
    }
  }
  if (n_threads < 2) {
    std::printf("OpenMP unavailable or single-core; timing the serial path only.\n");
    n_threads = 2;  // still exercises the parallel code path
  }

  MetricsReport serial, threaded;
  const double t_serial = time_run(cfg, 1, serial);
  const double t_threaded = time_run(cfg, n_threads, threaded);

  std::printf("%d vehicles, %d steps, %d particles\n", cfg.n_vehicles, cfg.n_steps,
              cfg.filter.n_particles);
  std::printf("serial reference: %7.2f s   rmse %.3f m\n", t_serial, serial.rmse_m);
  std::printf("%d-thread kernels: %6.2f s   rmse %.3f m\n", n_threads, t_threaded,
              threaded.rmse_m);
  std::printf("speedup: %.2fx, reports bitwise identical: %s\n", t_serial / t_threaded,
              same_steps(serial, threaded) ? "yes" : "NO");
  return same_steps(serial, threaded) ? 0 : 1;
}

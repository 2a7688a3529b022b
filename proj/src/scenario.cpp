#include "cmm/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <utility>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cmm/errors.hpp"
#include "json_util.hpp"

namespace cmm {

const char* to_string(MotionMode m) {
  switch (m) {
    case MotionMode::stationary: return "stationary";
    case MotionMode::host_dynamic: return "host_dynamic";
    case MotionMode::full_dynamic: return "full_dynamic";
  }
  return "?";
}

const char* to_string(FusionMode m) {
  switch (m) {
    case FusionMode::none: return "none";
    case FusionMode::centralized: return "centralized";
    case FusionMode::constant_alpha: return "constant_alpha";
    case FusionMode::max_degree: return "max_degree";
    case FusionMode::decentralized_rand: return "decentralized_rand";
    case FusionMode::decentralized_opt: return "decentralized_opt";
    case FusionMode::decentralized_opt_local: return "decentralized_opt_local";
  }
  return "?";
}

const char* to_string(Topology t) {
  switch (t) {
    case Topology::range: return "range";
    case Topology::ring: return "ring";
  }
  return "?";
}

MotionMode motion_mode_from_string(const std::string& s) {
  if (s == "stationary") return MotionMode::stationary;
  if (s == "host_dynamic") return MotionMode::host_dynamic;
  if (s == "full_dynamic") return MotionMode::full_dynamic;
  throw ConfigError("unknown motion mode '" + s + "'");
}

FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "none") return FusionMode::none;
  if (s == "centralized") return FusionMode::centralized;
  if (s == "constant_alpha") return FusionMode::constant_alpha;
  if (s == "max_degree") return FusionMode::max_degree;
  if (s == "decentralized_rand") return FusionMode::decentralized_rand;
  if (s == "decentralized_opt") return FusionMode::decentralized_opt;
  if (s == "decentralized_opt_local") return FusionMode::decentralized_opt_local;
  throw ConfigError("unknown fusion mode '" + s + "'");
}

Topology topology_from_string(const std::string& s) {
  if (s == "range") return Topology::range;
  if (s == "ring") return Topology::ring;
  throw ConfigError("unknown topology '" + s + "'");
}

void ScenarioConfig::validate() const {
  if (n_steps < 1) throw ConfigError("n_steps must be at least 1");
  if (!(dt_s > 0.0)) throw ConfigError("dt_s must be positive");
  if (n_vehicles < 1) throw ConfigError("n_vehicles must be at least 1");
  if (topology == Topology::ring && n_vehicles < 2)
    throw ConfigError("ring topology needs at least 2 vehicles");
  if (fusion == FusionMode::constant_alpha && !(alpha > 0.0 && alpha <= 1.0))
    throw ConfigError("constant_alpha fusion needs alpha in (0, 1]");
  if (fusion == FusionMode::max_degree && topology == Topology::ring)
    throw ConfigError("max_degree weights need a symmetric graph; the ring is directed");
  if (!(comm_range_m > 0.0)) throw ConfigError("comm_range_m must be positive");
  if (max_neighbors < 1) throw ConfigError("max_neighbors must be at least 1");
  if (channel) channel->validate();
  if (gnss.n_sats < 4) throw ConfigError("n_sats must be at least 4");
  if (!(gnss.noncommon_sigma_m > 0.0))
    throw ConfigError("noncommon_sigma_m must be positive");
  if (gnss.drift_sigma < 0.0) throw ConfigError("drift_sigma must be non-negative");
  if (gnss.init_bias_sigma_m < 0.0)
    throw ConfigError("init_bias_sigma_m must be non-negative");
  if (gnss.init_clock_bias_sigma_m < 0.0)
    throw ConfigError("init_clock_bias_sigma_m must be non-negative");
  if (gnss.init_clock_drift_sigma < 0.0)
    throw ConfigError("init_clock_drift_sigma must be non-negative");
  if (filter.n_particles < 1) throw ConfigError("n_particles must be at least 1");
  if (filter.accel_sigma < 0.0) throw ConfigError("accel_sigma must be non-negative");
  if (filter.clock_accel_sigma < 0.0)
    throw ConfigError("clock_accel_sigma must be non-negative");
  if (filter.incest_horizon_steps < 0)
    throw ConfigError("incest_horizon_steps must be non-negative");
  if (!map_file) {
    if (grid.n_ew < 1 || grid.n_ns < 1) throw ConfigError("grid needs at least 1x1 streets");
    if (!(grid.spacing_m > 0.0)) throw ConfigError("grid spacing must be positive");
    if (!(grid.half_width_m > 0.0)) throw ConfigError("grid half width must be positive");
    if (!(grid.kernel_sigma_m > 0.0)) throw ConfigError("grid kernel sigma must be positive");
  }
  if (synth.speed_min_mps < 0.0 || synth.speed_max_mps < synth.speed_min_mps)
    throw ConfigError("invalid synthesis speed range");
  if (burn_in_steps < 0 || burn_in_steps >= n_steps)
    throw ConfigError("burn_in_steps must lie in [0, n_steps)");
}

namespace {

using detail::json;

int get_int(const json& obj, const std::string& ctx, const char* key, int fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number_integer())
    throw DataError(ctx + "." + key + ": expected an integer");
  return v.get<int>();
}

bool get_bool(const json& obj, const std::string& ctx, const char* key, bool fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_boolean()) throw DataError(ctx + "." + key + ": expected a boolean");
  return v.get<bool>();
}

std::string get_string(const json& obj, const std::string& ctx, const char* key,
                       const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_string()) throw DataError(ctx + "." + key + ": expected a string");
  return v.get<std::string>();
}

PdrProfile channel_from_json(const json& v, const std::string& ctx) {
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "empirical") return PdrProfile::empirical();
    if (s == "scaled") return PdrProfile::scaled();
    throw DataError(ctx + ": unknown channel preset '" + s + "'");
  }
  detail::reject_unknown_keys(v, ctx, {"er_m", "mr_m", "p_er", "p_mr"});
  PdrProfile p;
  p.er_m = detail::require_number(v, ctx, "er_m");
  p.mr_m = detail::require_number(v, ctx, "mr_m");
  p.p_er = detail::require_number(v, ctx, "p_er");
  p.p_mr = detail::require_number(v, ctx, "p_mr");
  return p;
}

}  // namespace

ScenarioConfig load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scenario file '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError("scenario file '" + path + "': " + e.what());
  }
  const std::string ctx = "scenario";
  detail::reject_unknown_keys(
      doc, ctx,
      {"seed", "n_steps", "dt_s", "n_vehicles", "motion", "fusion", "alpha",
       "topology", "comm_range_m", "max_neighbors", "channel", "map_file", "grid",
       "trajectory_csv", "synth", "gnss", "filter", "burn_in_steps"});

  ScenarioConfig c;
  if (doc.contains("seed")) {
    const auto& v = doc.at("seed");
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
      throw DataError(ctx + ".seed: expected a non-negative integer");
    c.seed = v.get<std::uint64_t>();
  }
  c.n_steps = get_int(doc, ctx, "n_steps", c.n_steps);
  c.dt_s = detail::get_number(doc, ctx, "dt_s", c.dt_s);
  c.n_vehicles = get_int(doc, ctx, "n_vehicles", c.n_vehicles);
  c.motion = motion_mode_from_string(get_string(doc, ctx, "motion", to_string(c.motion)));
  c.fusion = fusion_mode_from_string(get_string(doc, ctx, "fusion", to_string(c.fusion)));
  c.alpha = detail::get_number(doc, ctx, "alpha", c.alpha);
  c.topology = topology_from_string(get_string(doc, ctx, "topology", to_string(c.topology)));
  c.comm_range_m = detail::get_number(doc, ctx, "comm_range_m", c.comm_range_m);
  c.max_neighbors = get_int(doc, ctx, "max_neighbors", c.max_neighbors);
  if (doc.contains("channel") && !doc.at("channel").is_null())
    c.channel = channel_from_json(doc.at("channel"), ctx + ".channel");
  if (doc.contains("map_file") && doc.contains("grid"))
    throw DataError(ctx + ": map_file and grid are mutually exclusive");
  if (doc.contains("map_file"))
    c.map_file = get_string(doc, ctx, "map_file", "");
  if (doc.contains("grid")) {
    const auto& g = doc.at("grid");
    const std::string gc = ctx + ".grid";
    detail::reject_unknown_keys(
        g, gc, {"n_ew", "n_ns", "spacing_m", "half_width_m", "kernel_sigma_m"});
    c.grid.n_ew = get_int(g, gc, "n_ew", c.grid.n_ew);
    c.grid.n_ns = get_int(g, gc, "n_ns", c.grid.n_ns);
    c.grid.spacing_m = detail::get_number(g, gc, "spacing_m", c.grid.spacing_m);
    c.grid.half_width_m = detail::get_number(g, gc, "half_width_m", c.grid.half_width_m);
    c.grid.kernel_sigma_m =
        detail::get_number(g, gc, "kernel_sigma_m", c.grid.kernel_sigma_m);
  }
  if (doc.contains("trajectory_csv"))
    c.trajectory_csv = get_string(doc, ctx, "trajectory_csv", "");
  if (doc.contains("synth")) {
    const auto& s = doc.at("synth");
    const std::string sc = ctx + ".synth";
    detail::reject_unknown_keys(s, sc, {"speed_min_mps", "speed_max_mps"});
    c.synth.speed_min_mps = detail::get_number(s, sc, "speed_min_mps", c.synth.speed_min_mps);
    c.synth.speed_max_mps = detail::get_number(s, sc, "speed_max_mps", c.synth.speed_max_mps);
  }
  if (doc.contains("gnss")) {
    const auto& g = doc.at("gnss");
    const std::string gc = ctx + ".gnss";
    detail::reject_unknown_keys(
        g, gc,
        {"n_sats", "noncommon_sigma_m", "drift_sigma", "init_bias_sigma_m",
         "init_clock_bias_sigma_m", "init_clock_drift_sigma"});
    c.gnss.n_sats = get_int(g, gc, "n_sats", c.gnss.n_sats);
    c.gnss.noncommon_sigma_m =
        detail::get_number(g, gc, "noncommon_sigma_m", c.gnss.noncommon_sigma_m);
    c.gnss.drift_sigma = detail::get_number(g, gc, "drift_sigma", c.gnss.drift_sigma);
    c.gnss.init_bias_sigma_m =
        detail::get_number(g, gc, "init_bias_sigma_m", c.gnss.init_bias_sigma_m);
    c.gnss.init_clock_bias_sigma_m = detail::get_number(
        g, gc, "init_clock_bias_sigma_m", c.gnss.init_clock_bias_sigma_m);
    c.gnss.init_clock_drift_sigma = detail::get_number(
        g, gc, "init_clock_drift_sigma", c.gnss.init_clock_drift_sigma);
  }
  if (doc.contains("filter")) {
    const auto& f = doc.at("filter");
    const std::string fc = ctx + ".filter";
    detail::reject_unknown_keys(f, fc,
                                {"n_particles", "accel_sigma", "clock_accel_sigma",
                                 "incest_horizon_steps", "road_constraints"});
    c.filter.n_particles = get_int(f, fc, "n_particles", c.filter.n_particles);
    c.filter.accel_sigma = detail::get_number(f, fc, "accel_sigma", c.filter.accel_sigma);
    c.filter.clock_accel_sigma =
        detail::get_number(f, fc, "clock_accel_sigma", c.filter.clock_accel_sigma);
    c.filter.incest_horizon_steps =
        get_int(f, fc, "incest_horizon_steps", c.filter.incest_horizon_steps);
    c.filter.road_constraints =
        get_bool(f, fc, "road_constraints", c.filter.road_constraints);
  }
  c.burn_in_steps = get_int(doc, ctx, "burn_in_steps", c.burn_in_steps);
  c.validate();
  return c;
}

namespace {

constexpr std::uint64_t kWeightsStreamId = 1u << 20;

struct TruthState {
  Vec2 pos = Vec2(0.0, 0.0);
  Vec2 vel = Vec2(0.0, 0.0);
  double clock_bias_m = 0.0;
  double clock_drift = 0.0;
};

Vec2 heading_velocity(double speed_mps, double heading_deg) {
  const double h = heading_deg * M_PI / 180.0;
  return Vec2(speed_mps * std::sin(h), speed_mps * std::cos(h));
}

// Runs fn(0..n-1) serially or as an OpenMP kernel. The two paths produce
// identical results because every vehicle writes only its own slots and owns
// its random streams; the serial path is the reference the tests compare
// against.
template <typename F>
void run_phase(int n, int n_threads, F&& fn) {
#ifdef _OPENMP
  if (n_threads > 1) {
    std::exception_ptr err = nullptr;
#pragma omp parallel for schedule(static) num_threads(n_threads)
    for (int i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
#pragma omp critical
        {
          if (!err) err = std::current_exception();
        }
      }
    }
    if (err) std::rethrow_exception(err);
    return;
  }
#else
  (void)n_threads;
#endif
  for (int i = 0; i < n; ++i) fn(i);
}

void remove_tracked(ParticleSet& ps, int vehicle) {
  const int slot = ps.belief_index(vehicle);
  if (slot < 0) return;
  ps.tracked_ids.erase(ps.tracked_ids.begin() + slot);
  for (auto& p : ps.particles) p.beliefs.erase(p.beliefs.begin() + slot);
}

void add_tracked(ParticleSet& ps, int vehicle, const VehicleBelief& init_belief) {
  if (ps.belief_index(vehicle) >= 0) return;
  const auto it =
      std::lower_bound(ps.tracked_ids.begin(), ps.tracked_ids.end(), vehicle);
  const auto slot = it - ps.tracked_ids.begin();
  ps.tracked_ids.insert(it, vehicle);
  for (auto& p : ps.particles) p.beliefs.insert(p.beliefs.begin() + slot, init_belief);
}

const VehicleEstimate& estimate_of(const Estimate& est, int vehicle) {
  for (const auto& v : est.vehicles)
    if (v.vehicle_id == vehicle) return v;
  throw ConfigError("estimate does not cover vehicle " + std::to_string(vehicle));
}

class Engine {
 public:
  Engine(const ScenarioConfig& cfg, int n_threads)
      : cfg_(cfg),
        n_(cfg.n_vehicles),
        threads_(n_threads),
        decentralized_(cfg.fusion != FusionMode::none &&
                       cfg.fusion != FusionMode::centralized),
        truth_rng_(derive_seed(cfg.seed, StreamKind::scenario, 0)),
        weights_rng_(derive_seed(cfg.seed, StreamKind::fusion, kWeightsStreamId)) {}

  MetricsReport run() {
    setup();
    for (int t = 1; t <= cfg_.n_steps; ++t) step(t);
    finish();
    return std::move(rep_);
  }

 private:
  bool vehicle_moves(int i) const {
    if (cfg_.motion == MotionMode::full_dynamic) return true;
    if (cfg_.motion == MotionMode::host_dynamic) return i == 0;
    return false;
  }

  void setup() {
    cfg_.validate();
    map_ = cfg_.map_file ? RoadMap::load_file(*cfg_.map_file)
                         : make_grid_map(cfg_.grid.n_ew, cfg_.grid.n_ns,
                                         cfg_.grid.spacing_m, cfg_.grid.half_width_m,
                                         cfg_.grid.kernel_sigma_m);
    constellation_ = default_constellation(cfg_.gnss.n_sats, cfg_.seed);

    RandomStream setup_rng(derive_seed(cfg_.seed, StreamKind::init, 0));
    const bool any_dynamic = cfg_.motion != MotionMode::stationary;
    const double needed_s =
        any_dynamic ? (cfg_.n_steps + 1) * cfg_.dt_s : kTrajDt;
    TrajectorySet pool;
    if (cfg_.trajectory_csv) {
      pool = filter_valid(load_trajectories_csv(*cfg_.trajectory_csv));
      if (static_cast<int>(pool.items.size()) < n_)
        throw ConfigError("trajectory file yields too few valid trajectories");
    } else {
      pool = synth_trajectories(map_, n_, std::max(needed_s, kTrajDt),
                                cfg_.synth.speed_min_mps, cfg_.synth.speed_max_mps,
                                setup_rng);
    }
    const TrajectorySet picked = sample_network(pool, n_, setup_rng);
    paths_.assign(picked.items.begin(), picked.items.end());

    // Truth: common biases, then per-vehicle clocks, in vehicle order. These
    // draws share one stream so the realized world is identical for every
    // fusion mechanism at the same seed.
    bias_truth_.drift_sigma = cfg_.gnss.drift_sigma;
    bias_truth_.biases_m.resize(cfg_.gnss.n_sats);
    for (int j = 0; j < cfg_.gnss.n_sats; ++j)
      bias_truth_.biases_m[j] = truth_rng_.normal(0.0, cfg_.gnss.init_bias_sigma_m);
    truth_.resize(n_);
    for (int i = 0; i < n_; ++i) {
      const auto& s0 = paths_[i].samples.front();
      truth_[i].pos = Vec2(s0.east_m, s0.north_m);
      truth_[i].vel = vehicle_moves(i) ? heading_velocity(s0.speed_mps, s0.heading_deg)
                                       : Vec2(0.0, 0.0);
      truth_[i].clock_bias_m = truth_rng_.normal(0.0, cfg_.gnss.init_clock_bias_sigma_m);
      truth_[i].clock_drift = truth_rng_.normal(0.0, cfg_.gnss.init_clock_drift_sigma);
    }

    meas_rng_.reserve(n_);
    filter_rng_.reserve(n_);
    fusion_rng_.reserve(n_);
    for (int i = 0; i < n_; ++i) {
      meas_rng_.emplace_back(derive_seed(cfg_.seed, StreamKind::vehicle, i, 0));
      filter_rng_.emplace_back(derive_seed(cfg_.seed, StreamKind::vehicle, i, 1));
      fusion_rng_.emplace_back(derive_seed(cfg_.seed, StreamKind::fusion, i));
    }
    link_rng_.reserve(static_cast<std::size_t>(n_) * n_);
    for (int s = 0; s < n_; ++s)
      for (int r = 0; r < n_; ++r)
        link_rng_.emplace_back(derive_seed(cfg_.seed, StreamKind::link, s, r));

    graph_ = cfg_.topology == Topology::ring
                 ? ring_graph(n_)
                 : build_graph(positions(), cfg_.comm_range_m, cfg_.max_neighbors);

    // Initial beliefs start from an uncooperative fix at t = 0.
    std::vector<VehicleBelief> b0(n_);
    meas_.resize(n_);
    raw_.resize(n_);
    for (int i = 0; i < n_; ++i) {
      meas_[i] = measure_pseudoranges(constellation_, truth_[i].pos,
                                      truth_[i].clock_bias_m, bias_truth_,
                                      cfg_.gnss.noncommon_sigma_m, meas_rng_[i],
                                      i + 1, 0);
      raw_[i] = raw_fix(meas_[i], constellation_);
      const double vel_var = vehicle_moves(i) ? 1.0 : 0.01;
      const double sb = cfg_.gnss.init_bias_sigma_m;
      b0[i].mean << raw_[i].pos.x(), truth_[i].vel.x(), raw_[i].pos.y(),
          truth_[i].vel.y(), raw_[i].clock_bias_m, 0.0;
      Vec6 d;
      d << 25.0, vel_var, 25.0, vel_var, 100.0 + sb * sb,
          cfg_.gnss.init_clock_drift_sigma * cfg_.gnss.init_clock_drift_sigma + 0.01;
      b0[i].cov = d.asDiagonal();
    }

    const int np = cfg_.filter.n_particles;
    x_pre_.resize(n_);
    x_post_.resize(n_);
    published_.resize(n_);
    est_buf_.resize(n_);
    if (cfg_.fusion == FusionMode::centralized) {
      sets_.resize(1);
      auto& ps = sets_[0];
      ps.owner = 0;
      ps.nominal_size = np;
      ps.n_vehicles = n_;
      ps.tracked_ids.resize(n_);
      for (int i = 0; i < n_; ++i) ps.tracked_ids[i] = i;
      init_particles(ps, b0, filter_rng_[0]);
    } else {
      sets_.resize(n_);
      sets_next_.resize(n_);
      for (int i = 0; i < n_; ++i) {
        auto& ps = sets_[i];
        ps.owner = i;
        ps.nominal_size = np;
        ps.n_vehicles = n_;
        ps.tracked_ids = {i};
        if (decentralized_)
          for (int s : graph_.in_nbrs[i]) ps.tracked_ids.push_back(s);
        std::sort(ps.tracked_ids.begin(), ps.tracked_ids.end());
        init_particles(ps, b0, filter_rng_[i]);
      }
    }
    for (int i = 0; i < n_; ++i) published_[i] = b0[i];

    rep_.step_variance.reserve(cfg_.n_steps);
    rep_.step_mse.reserve(cfg_.n_steps);
    rep_.step_rms_error.reserve(cfg_.n_steps);
    rep_.steps.reserve(static_cast<std::size_t>(cfg_.n_steps) * n_);
  }

  void init_particles(ParticleSet& ps, const std::vector<VehicleBelief>& b0,
                      RandomStream& rng) {
    ps.particles.resize(ps.nominal_size);
    const double w = 1.0 / ps.nominal_size;
    for (auto& p : ps.particles) {
      p.weight = w;
      p.biases.resize(cfg_.gnss.n_sats);
      for (int j = 0; j < cfg_.gnss.n_sats; ++j)
        p.biases[j] = rng.normal(0.0, cfg_.gnss.init_bias_sigma_m);
      p.beliefs.reserve(ps.tracked_ids.size());
      for (int v : ps.tracked_ids) p.beliefs.push_back(b0[v]);
      p.last_contrib.assign(n_, -1);
      p.last_contrib[ps.owner] = 0;
    }
  }

  std::vector<Vec2> positions() const {
    std::vector<Vec2> p(n_);
    for (int i = 0; i < n_; ++i) p[i] = truth_[i].pos;
    return p;
  }

  RandomStream& link_stream(int sender, int receiver) {
    return link_rng_[static_cast<std::size_t>(sender) * n_ + receiver];
  }

  bool deliver(int sender, int receiver, char payload, int step,
               std::vector<LinkRecord>& sink) {
    const double dist = (truth_[sender].pos - truth_[receiver].pos).norm();
    const bool ok =
        !cfg_.channel || try_deliver(*cfg_.channel, dist, link_stream(sender, receiver));
    sink.push_back(LinkRecord{step, sender + 1, receiver + 1, payload, dist, ok});
    return ok;
  }

  void advance_truth(int t) {
    propagate_common_bias(bias_truth_, cfg_.dt_s, truth_rng_);
    for (int i = 0; i < n_; ++i) {
      truth_[i].clock_drift +=
          truth_rng_.normal(0.0, cfg_.filter.clock_accel_sigma * cfg_.dt_s);
      truth_[i].clock_bias_m += truth_[i].clock_drift * cfg_.dt_s;
      if (vehicle_moves(i)) {
        const auto& samples = paths_[i].samples;
        const auto idx = std::min<std::size_t>(t, samples.size() - 1);
        truth_[i].pos = Vec2(samples[idx].east_m, samples[idx].north_m);
        truth_[i].vel = heading_velocity(samples[idx].speed_mps, samples[idx].heading_deg);
      }
    }
  }

  void refresh_weights() {
    const bool topo_changed = graph_.in_nbrs != weights_in_nbrs_;
    switch (cfg_.fusion) {
      case FusionMode::constant_alpha:
        if (topo_changed) weights_ = constant_alpha_weights(graph_, cfg_.alpha);
        break;
      case FusionMode::max_degree:
        if (topo_changed) weights_ = max_degree_weights(graph_);
        break;
      case FusionMode::decentralized_rand:
        // Fixed for the run unless the feasible support itself changes.
        if (topo_changed) weights_ = random_row_weights(graph_, weights_rng_);
        break;
      case FusionMode::decentralized_opt:
        weights_ = optimize_weights_qp(x_pre_, graph_);
        break;
      case FusionMode::decentralized_opt_local:
        weights_ = optimize_weights_qp_local(x_pre_, graph_);
        break;
      default:
        break;
    }
    if (topo_changed) weights_in_nbrs_ = graph_.in_nbrs;
  }

  void step(int t) {
    advance_truth(t);

    // Phase 1: measurements and uncooperative fixes.
    std::vector<int> raw_fail(n_, 0);
    run_phase(n_, threads_, [&](int i) {
      meas_[i] = measure_pseudoranges(constellation_, truth_[i].pos,
                                      truth_[i].clock_bias_m, bias_truth_,
                                      cfg_.gnss.noncommon_sigma_m, meas_rng_[i],
                                      i + 1, t);
      try {
        raw_[i] = raw_fix(meas_[i], constellation_, raw_[i].pos);
      } catch (const NumericalError&) {
        raw_fail[i] = 1;  // keep the previous fix
      }
    });
    for (int i = 0; i < n_; ++i) rep_.raw_fix_failures += raw_fail[i];

    // Measurement delivery over the senders of the standing graph. The graph
    // is rebuilt only after the filter update, so this step's sharing uses
    // last step's topology.
    std::vector<std::vector<int>> delivered(n_);
    if (cfg_.fusion == FusionMode::centralized) {
      for (int s = 1; s < n_; ++s)
        if (deliver(s, 0, 'm', t, rep_.links)) delivered[0].push_back(s);
    } else if (decentralized_) {
      for (int r = 0; r < n_; ++r)
        for (int s : graph_.in_nbrs[r])
          if (deliver(s, r, 'm', t, rep_.links)) delivered[r].push_back(s);
    }

    // Phase 2: per-filter predict, update, resample.
    const int n_filters = cfg_.fusion == FusionMode::centralized ? 1 : n_;
    std::vector<int> degen(n_filters, 0);
    const ProcessParams process{cfg_.filter.accel_sigma, cfg_.filter.clock_accel_sigma};
    run_phase(n_filters, threads_, [&](int i) {
      auto& ps = sets_[i];
      if (decentralized_) {
        // Track exactly self plus the standing senders.
        for (int v : std::vector<int>(ps.tracked_ids))
          if (v != i && !graph_.has_in_edge(i, v)) remove_tracked(ps, v);
        for (int s : graph_.in_nbrs[i]) add_tracked(ps, s, published_[s]);
      }
      std::map<int, PseudoRangeSet> inbox;
      inbox.emplace(i, meas_[i]);
      for (int s : delivered[i]) inbox.emplace(s, meas_[s]);
      predict(ps, cfg_.dt_s, process, cfg_.gnss.drift_sigma, filter_rng_[i]);
      UpdateParams up;
      up.noncommon_sigma_m = cfg_.gnss.noncommon_sigma_m;
      up.use_road = cfg_.filter.road_constraints;
      up.step = t;
      const auto out = weight_and_update(ps, inbox, map_, constellation_, up);
      degen[i] = out.degenerate ? 1 : 0;
      resample(ps, filter_rng_[i]);
      est_buf_[i] = estimate(ps);
      x_pre_[i] = est_buf_[i].bias_mean.mean();
    });
    for (int i = 0; i < n_filters; ++i) rep_.degeneracy_events += degen[i];

    // Rebuild the communication graph from the new true positions.
    if (cfg_.topology == Topology::range)
      graph_ = build_graph(positions(), cfg_.comm_range_m, cfg_.max_neighbors);

    refresh_weights();

    // Phase 3: particle exchange and fusion.
    if (decentralized_) {
      std::vector<std::vector<LinkRecord>> plinks(n_);
      std::vector<int> skips(n_, 0);
      run_phase(n_, threads_, [&](int i) {
        std::vector<NeighborBatch> batches;
        std::vector<int> quotas;
        for (int s : graph_.in_nbrs[i]) {
          const bool ok = deliver(s, i, 'p', t, plinks[i]);
          if (!ok) continue;
          const int q = static_cast<int>(
              std::llround(cfg_.filter.n_particles * weights_.a(i, s)));
          if (q <= 0) continue;
          batches.push_back(NeighborBatch{s, &sets_[s]});
          quotas.push_back(q);
        }
        FuseParams fp;
        fp.current_step = t;
        fp.incest_horizon_steps = cfg_.filter.incest_horizon_steps;
        fp.use_road = cfg_.filter.road_constraints;
        FuseOutcome fo;
        sets_next_[i] =
            stack_and_fuse(sets_[i], batches, quotas, map_, fp, fusion_rng_[i], &fo);
        skips[i] = fo.skipped ? 1 : 0;
        est_buf_[i] = estimate(sets_next_[i]);
        x_post_[i] = est_buf_[i].bias_mean.mean();
      });
      for (int i = 0; i < n_; ++i) {
        rep_.fusion_skips += skips[i];
        for (auto& lr : plinks[i]) rep_.links.push_back(lr);
      }
      sets_.swap(sets_next_);
      for (int i = 0; i < n_; ++i)
        published_[i] = VehicleBelief{estimate_of(est_buf_[i], i).mean,
                                      estimate_of(est_buf_[i], i).cov};
    } else if (cfg_.fusion == FusionMode::centralized) {
      x_post_.setConstant(x_pre_[0]);
    } else {
      x_post_ = x_pre_;
    }

    record(t);
  }

  void record(int t) {
    const double c_true = bias_truth_.biases_m.mean();
    const double var = network_variance(x_post_);
    const double mse = network_mse(x_post_, c_true);
    const double mean_err = x_post_.mean() - c_true;
    const double gap = std::abs(mse - var - mean_err * mean_err);
    rep_.max_identity_gap = std::max(rep_.max_identity_gap, gap);
    rep_.step_variance.push_back(var);
    rep_.step_mse.push_back(mse);

    const double er = cfg_.channel ? cfg_.channel->er_m : cfg_.comm_range_m;
    const double mr = cfg_.channel ? cfg_.channel->mr_m : cfg_.comm_range_m;
    double sq_sum = 0.0;
    const bool counted = t > cfg_.burn_in_steps;
    for (int i = 0; i < n_; ++i) {
      const Estimate& est =
          cfg_.fusion == FusionMode::centralized ? est_buf_[0] : est_buf_[i];
      const auto& ve = estimate_of(est, i);
      StepRecord sr;
      sr.step = t;
      sr.t_s = t * cfg_.dt_s;
      sr.vehicle_id = i + 1;
      sr.true_east_m = truth_[i].pos.x();
      sr.true_north_m = truth_[i].pos.y();
      sr.raw_east_m = raw_[i].pos.x();
      sr.raw_north_m = raw_[i].pos.y();
      sr.est_east_m = ve.mean[0];
      sr.est_north_m = ve.mean[2];
      sr.bias_est_m = x_post_[i];
      sr.bias_true_m = c_true;
      for (int j = 0; j < n_; ++j) {
        if (j == i) continue;
        const double d = (truth_[i].pos - truth_[j].pos).norm();
        if (d <= er) ++sr.nbr_within_er;
        if (d <= mr) ++sr.nbr_within_mr;
      }
      rep_.steps.push_back(sr);

      const double ee = sr.est_east_m - sr.true_east_m;
      const double en = sr.est_north_m - sr.true_north_m;
      sq_sum += ee * ee + en * en;
      if (counted) {
        est_sq_sum_ += ee * ee + en * en;
        const double re = sr.raw_east_m - sr.true_east_m;
        const double rn = sr.raw_north_m - sr.true_north_m;
        raw_sq_sum_ += re * re + rn * rn;
        ++err_count_;
      }
    }
    rep_.step_rms_error.push_back(std::sqrt(sq_sum / n_));
    if (counted) {
      var_sum_ += rep_.step_variance.back();
      mse_sum_ += rep_.step_mse.back();
      ++metric_steps_;
    }
  }

  void finish() {
    if (err_count_ > 0) {
      rep_.rmse_m = std::sqrt(est_sq_sum_ / err_count_);
      rep_.raw_rmse_m = std::sqrt(raw_sq_sum_ / err_count_);
    }
    if (metric_steps_ > 0) {
      rep_.sqrt_variance_m = std::sqrt(var_sum_ / metric_steps_);
      rep_.sqrt_mse_m = std::sqrt(mse_sum_ / metric_steps_);
    }
    std::vector<bool> outcomes;
    outcomes.reserve(rep_.links.size());
    for (const auto& l : rep_.links) outcomes.push_back(l.delivered);
    rep_.loss_rate = loss_stats(outcomes).loss_rate;
  }

  ScenarioConfig cfg_;
  int n_;
  int threads_;
  bool decentralized_;
  RoadMap map_;
  Constellation constellation_;
  CommonBiasState bias_truth_;
  std::vector<TruthState> truth_;
  std::vector<Trajectory> paths_;
  RandomStream truth_rng_;
  RandomStream weights_rng_;
  std::vector<RandomStream> meas_rng_, filter_rng_, fusion_rng_, link_rng_;
  std::vector<ParticleSet> sets_, sets_next_;
  std::vector<VehicleBelief> published_;
  std::vector<Estimate> est_buf_;
  std::vector<PseudoRangeSet> meas_;
  std::vector<RawFix> raw_;
  Eigen::VectorXd x_pre_, x_post_;
  CommGraph graph_;
  FusionWeights weights_;
  std::vector<std::vector<int>> weights_in_nbrs_;
  MetricsReport rep_;
  double est_sq_sum_ = 0.0, raw_sq_sum_ = 0.0;
  double var_sum_ = 0.0, mse_sum_ = 0.0;
  std::int64_t err_count_ = 0, metric_steps_ = 0;
};

}  // namespace

double rmse(const std::vector<Vec2>& errors) {
  if (errors.empty()) throw ConfigError("rmse: no error samples");
  double sq = 0.0;
  for (const auto& e : errors) sq += e.squaredNorm();
  return std::sqrt(sq / static_cast<double>(errors.size()));
}

MetricsReport run_scenario(const ScenarioConfig& cfg, int n_threads) {
  Engine engine(cfg, n_threads);
  return engine.run();
}

}  // namespace cmm

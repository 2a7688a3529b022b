#include "cmm/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>

#include "cmm/errors.hpp"

namespace cmm {

bool CommGraph::has_in_edge(int receiver, int sender) const {
  if (receiver < 0 || receiver >= n) return false;
  const auto& v = in_nbrs[receiver];
  return std::binary_search(v.begin(), v.end(), sender);
}

bool CommGraph::symmetric() const {
  for (int i = 0; i < n; ++i)
    for (int j : in_nbrs[i])
      if (!has_in_edge(j, i)) return false;
  return true;
}

bool CommGraph::connected() const {
  if (n == 0) return false;
  if (n == 1) return true;
  // Weak connectivity: walk the undirected union of the edges.
  std::vector<std::vector<int>> undirected(n);
  for (int i = 0; i < n; ++i)
    for (int j : in_nbrs[i]) {
      undirected[i].push_back(j);
      undirected[j].push_back(i);
    }
  std::vector<char> seen(n, 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  int count = 1;
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    for (int w : undirected[v])
      if (!seen[w]) {
        seen[w] = 1;
        ++count;
        stack.push_back(w);
      }
  }
  return count == n;
}

std::vector<int> CommGraph::degrees() const {
  std::vector<int> d(n);
  for (int i = 0; i < n; ++i) d[i] = static_cast<int>(in_nbrs[i].size());
  return d;
}

CommGraph build_graph(const std::vector<Vec2>& positions, double comm_range_m,
                      int max_neighbors) {
  if (comm_range_m <= 0.0) throw ConfigError("build_graph: comm_range_m must be positive");
  if (max_neighbors < 1) throw ConfigError("build_graph: max_neighbors must be at least 1");
  const int n = static_cast<int>(positions.size());
  CommGraph g;
  g.n = n;
  g.in_nbrs.resize(n);

  // Per-node candidate lists, nearest-first with index as tiebreaker.
  std::vector<std::vector<int>> kept(n);
  std::vector<std::pair<double, int>> cand;
  for (int i = 0; i < n; ++i) {
    cand.clear();
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = (positions[i] - positions[j]).norm();
      if (d <= comm_range_m) cand.emplace_back(d, j);
    }
    if (static_cast<int>(cand.size()) > max_neighbors) {
      std::sort(cand.begin(), cand.end());
      cand.resize(max_neighbors);
    }
    kept[i].reserve(cand.size());
    for (const auto& [d, j] : cand) kept[i].push_back(j);
    std::sort(kept[i].begin(), kept[i].end());
  }
  for (int i = 0; i < n; ++i)
    for (int j : kept[i])
      if (std::binary_search(kept[j].begin(), kept[j].end(), i))
        g.in_nbrs[i].push_back(j);
  return g;
}

CommGraph ring_graph(int n) {
  if (n < 2) throw ConfigError("ring_graph: need at least 2 nodes");
  CommGraph g;
  g.n = n;
  g.in_nbrs.resize(n);
  for (int i = 0; i < n; ++i) g.in_nbrs[i] = {(i + 1) % n};
  return g;
}

void FusionWeights::validate(const CommGraph& g) const {
  if (a.rows() != g.n || a.cols() != g.n)
    throw ConfigError("fusion weights: wrong shape");
  for (int i = 0; i < g.n; ++i) {
    double row_sum = 0.0;
    for (int j = 0; j < g.n; ++j) {
      const double v = a(i, j);
      if (!std::isfinite(v)) throw ConfigError("fusion weights: non-finite entry");
      if (v < -1e-12) throw ConfigError("fusion weights: negative entry");
      if (v > 1e-12 && j != i && !g.has_in_edge(i, j))
        throw ConfigError("fusion weights: mass outside the feasible support");
      row_sum += v;
    }
    if (std::abs(row_sum - 1.0) > 1e-9)
      throw ConfigError("fusion weights: row does not sum to 1");
  }
}

FusionWeights constant_alpha_weights(const CommGraph& g, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw ConfigError("constant_alpha_weights: alpha must lie in (0, 1]");
  FusionWeights w;
  w.a = Eigen::MatrixXd::Zero(g.n, g.n);
  for (int i = 0; i < g.n; ++i) {
    const auto& nbrs = g.in_nbrs[i];
    if (nbrs.empty()) {
      w.a(i, i) = 1.0;
      continue;
    }
    w.a(i, i) = alpha;
    const double share = (1.0 - alpha) / static_cast<double>(nbrs.size());
    for (int j : nbrs) w.a(i, j) = share;
  }
  return w;
}

namespace {

Eigen::MatrixXd metropolis_matrix(const CommGraph& g) {
  const auto deg = g.degrees();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(g.n, g.n);
  for (int i = 0; i < g.n; ++i) {
    double off = 0.0;
    for (int j : g.in_nbrs[i]) {
      const double aij = 1.0 / static_cast<double>(std::max(deg[i], deg[j]));
      a(i, j) = aij;
      off += aij;
    }
    a(i, i) = 1.0 - off;
  }
  return a;
}

}  // namespace

FusionWeights max_degree_weights(const CommGraph& g) {
  if (!g.symmetric())
    throw ConfigError("max_degree_weights: requires a symmetric graph");
  if (!g.connected())
    std::cerr << "max_degree_weights: graph is not connected; consensus will not mix\n";
  FusionWeights w;
  w.a = metropolis_matrix(g);
  return w;
}

FusionWeights random_row_weights(const CommGraph& g, RandomStream& rng) {
  FusionWeights w;
  w.a = Eigen::MatrixXd::Zero(g.n, g.n);
  for (int i = 0; i < g.n; ++i) {
    // Exponential spacings normalize to a uniform draw from the simplex.
    std::vector<int> support{i};
    support.insert(support.end(), g.in_nbrs[i].begin(), g.in_nbrs[i].end());
    double sum = 0.0;
    std::vector<double> e(support.size());
    for (std::size_t k = 0; k < support.size(); ++k) {
      e[k] = -std::log(1.0 - rng.uniform01());
      sum += e[k];
    }
    if (sum <= 0.0) {
      w.a(i, i) = 1.0;
      continue;
    }
    for (std::size_t k = 0; k < support.size(); ++k) w.a(i, support[k]) = e[k] / sum;
  }
  return w;
}

namespace {

// Euclidean projection of v onto the probability simplex.
void project_simplex(std::vector<double>& v) {
  std::vector<double> u(v);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0, theta = 0.0;
  int rho = 0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    css += u[j];
    const double t = (css - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) {
      rho = static_cast<int>(j + 1);
      theta = t;
    }
  }
  (void)rho;
  for (double& x : v) x = std::max(x - theta, 0.0);
}

std::vector<std::vector<int>> row_supports(const CommGraph& g) {
  std::vector<std::vector<int>> s(g.n);
  for (int i = 0; i < g.n; ++i) {
    s[i].push_back(i);
    s[i].insert(s[i].end(), g.in_nbrs[i].begin(), g.in_nbrs[i].end());
    std::sort(s[i].begin(), s[i].end());
  }
  return s;
}

double spread_objective(const Eigen::MatrixXd& a, const Eigen::VectorXd& x) {
  const Eigen::VectorXd y = a * x;
  const double mean = y.mean();
  return (y.array() - mean).square().sum() / static_cast<double>(y.size());
}

Eigen::MatrixXd qp_initial(const CommGraph& g) {
  if (g.symmetric()) return metropolis_matrix(g);
  // Directed graphs get uniform rows over the support.
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(g.n, g.n);
  for (int i = 0; i < g.n; ++i) {
    const double share = 1.0 / static_cast<double>(g.in_nbrs[i].size() + 1);
    a(i, i) = share;
    for (int j : g.in_nbrs[i]) a(i, j) = share;
  }
  return a;
}

// Projected gradient descent with monotone backtracking over the given row
// supports. `grad_row_scale(i)` supplies dJ/dy_i; the gradient in the row
// entries is that scale times x_j.
template <typename GradScale, typename Objective>
Eigen::MatrixXd pgd_over_rows(Eigen::MatrixXd a, const Eigen::VectorXd& x,
                              const std::vector<std::vector<int>>& supports,
                              const QpOptions& opts, GradScale grad_scale,
                              Objective objective) {
  const int n = static_cast<int>(supports.size());
  double step = 1.0;
  double j_cur = objective(a);
  if (!std::isfinite(j_cur)) throw NumericalError("weight optimization: non-finite objective");

  std::vector<double> row;
  Eigen::MatrixXd cand = a;
  for (int iter = 0; iter < opts.max_iters; ++iter) {
    const Eigen::VectorXd scale = grad_scale(a);
    bool accepted = false;
    double j_cand = j_cur;
    for (int halvings = 0; halvings < 60; ++halvings) {
      cand = a;
      for (int i = 0; i < n; ++i) {
        row.resize(supports[i].size());
        for (std::size_t k = 0; k < supports[i].size(); ++k) {
          const int j = supports[i][k];
          row[k] = a(i, j) - step * scale[i] * x[j];
        }
        project_simplex(row);
        for (std::size_t k = 0; k < supports[i].size(); ++k)
          cand(i, supports[i][k]) = row[k];
      }
      j_cand = objective(cand);
      if (!std::isfinite(j_cand))
        throw NumericalError("weight optimization: non-finite objective");
      if (j_cand < j_cur - 1e-15 * std::max(1.0, j_cur)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    const double rel = (j_cur - j_cand) / std::max(j_cur, 1e-300);
    a.swap(cand);
    j_cur = j_cand;
    step = std::min(step * 1.3, 1e6);
    if (rel < opts.rel_tol) break;
  }
  return a;
}

}  // namespace

FusionWeights optimize_weights_qp(const Eigen::VectorXd& x, const CommGraph& g,
                                  const QpOptions& opts) {
  if (x.size() != g.n) throw ConfigError("optimize_weights_qp: x/graph size mismatch");
  if (g.n == 0) throw ConfigError("optimize_weights_qp: empty graph");
  const auto supports = row_supports(g);
  const double n = static_cast<double>(g.n);
  auto grad_scale = [&](const Eigen::MatrixXd& a) {
    const Eigen::VectorXd y = a * x;
    const double mean = y.mean();
    return Eigen::VectorXd((2.0 / n) * (y.array() - mean));
  };
  auto objective = [&](const Eigen::MatrixXd& a) { return spread_objective(a, x); };
  FusionWeights w;
  w.a = pgd_over_rows(qp_initial(g), x, supports, opts, grad_scale, objective);
  return w;
}

FusionWeights optimize_weights_qp_local(const Eigen::VectorXd& x, const CommGraph& g,
                                        const QpOptions& opts) {
  if (x.size() != g.n) throw ConfigError("optimize_weights_qp_local: x/graph size mismatch");
  if (g.n == 0) throw ConfigError("optimize_weights_qp_local: empty graph");
  const auto supports = row_supports(g);
  // Row targets: the plain average over each row's support.
  Eigen::VectorXd target(g.n);
  for (int i = 0; i < g.n; ++i) {
    double m = 0.0;
    for (int j : supports[i]) m += x[j];
    target[i] = m / static_cast<double>(supports[i].size());
  }
  auto grad_scale = [&](const Eigen::MatrixXd& a) {
    const Eigen::VectorXd y = a * x;
    return Eigen::VectorXd(2.0 * (y - target));
  };
  auto objective = [&](const Eigen::MatrixXd& a) {
    return (a * x - target).squaredNorm();
  };
  FusionWeights w;
  w.a = pgd_over_rows(qp_initial(g), x, supports, opts, grad_scale, objective);
  return w;
}

Eigen::VectorXd apply_fusion(const FusionWeights& w, const Eigen::VectorXd& x) {
  if (w.a.cols() != x.size()) throw ConfigError("apply_fusion: size mismatch");
  return w.a * x;
}

double network_variance(const Eigen::VectorXd& x) {
  if (x.size() == 0) throw ConfigError("network_variance: empty vector");
  const double mean = x.mean();
  return (x.array() - mean).square().sum() / static_cast<double>(x.size());
}

double network_mse(const Eigen::VectorXd& x, double truth) {
  if (x.size() == 0) throw ConfigError("network_mse: empty vector");
  return (x.array() - truth).square().sum() / static_cast<double>(x.size());
}

double asymptotic_rate(const FusionWeights& w) {
  if (w.a.rows() != w.a.cols() || w.a.rows() == 0)
    throw ConfigError("asymptotic_rate: matrix must be square and non-empty");
  if (w.a.rows() == 1) return 0.0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(w.a, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success)
    throw NumericalError("asymptotic_rate: eigenvalue computation failed");
  std::vector<double> moduli(w.a.rows());
  for (Eigen::Index i = 0; i < w.a.rows(); ++i) moduli[i] = std::abs(es.eigenvalues()[i]);
  std::sort(moduli.begin(), moduli.end(), std::greater<double>());
  return moduli[1];
}

namespace {

bool guard_blocks(const BiasParticle& p, int host, const FuseParams& params) {
  const std::int32_t stamp = p.last_contrib[host];
  return stamp >= 0 && stamp >= params.current_step - params.incest_horizon_steps;
}

}  // namespace

ParticleSet stack_and_fuse(const ParticleSet& host,
                           const std::vector<NeighborBatch>& batches,
                           const std::vector<int>& quotas, const RoadMap& map,
                           const FuseParams& params, RandomStream& rng,
                           FuseOutcome* outcome) {
  if (batches.size() != quotas.size())
    throw ConfigError("stack_and_fuse: one quota per batch required");
  if (params.incest_horizon_steps < 0)
    throw ConfigError("stack_and_fuse: incest_horizon_steps must be non-negative");
  for (int q : quotas)
    if (q < 0) throw ConfigError("stack_and_fuse: negative quota");

  FuseOutcome local;
  FuseOutcome& out = outcome ? *outcome : local;
  out = FuseOutcome{};

  int quota_sum = 0;
  for (int q : quotas) quota_sum += q;
  const int host_quota = std::max(0, host.nominal_size - quota_sum);

  // Host weights double as the donor distribution for re-hosting imports.
  Eigen::VectorXd host_w(host.particles.size());
  for (std::size_t k = 0; k < host.particles.size(); ++k)
    host_w[static_cast<Eigen::Index>(k)] = host.particles[k].weight;

  const int n_tracked = static_cast<int>(host.tracked_ids.size());
  std::vector<BiasParticle> pool;
  pool.reserve(host.nominal_size + quota_sum);

  for (std::size_t b = 0; b < batches.size(); ++b) {
    if (quotas[b] == 0) continue;
    const ParticleSet& sender = *batches[b].set;
    std::vector<int> survivors;
    survivors.reserve(sender.particles.size());
    for (std::size_t k = 0; k < sender.particles.size(); ++k)
      if (!guard_blocks(sender.particles[k], host.owner, params))
        survivors.push_back(static_cast<int>(k));
    if (survivors.empty()) {
      ++out.blocked_batches;
      continue;
    }
    Eigen::VectorXd w(survivors.size());
    for (std::size_t k = 0; k < survivors.size(); ++k)
      w[static_cast<Eigen::Index>(k)] = sender.particles[survivors[k]].weight;
    if (!(w.sum() > 0.0)) {
      ++out.blocked_batches;
      continue;
    }
    // Sender-to-host belief slot mapping, -1 where the sender lacks the vehicle.
    std::vector<int> slot_of(n_tracked);
    for (int t = 0; t < n_tracked; ++t)
      slot_of[t] = sender.belief_index(host.tracked_ids[t]);

    // What travels is the bias hypothesis; conditional vehicle states stay
    // local. A donor particle drawn by host weight supplies the slots the
    // sender cannot know better: the host itself (everything a sender knows
    // about the host originated here) and vehicles the sender does not track.
    const auto picks = systematic_resample_indices(w, quotas[b], rng.uniform01());
    const auto donors =
        systematic_resample_indices(host_w, quotas[b], rng.uniform01());
    for (std::size_t k = 0; k < picks.size(); ++k) {
      const BiasParticle& src = sender.particles[survivors[picks[k]]];
      const BiasParticle& don = host.particles[donors[k]];
      BiasParticle imported;
      imported.biases = src.biases;
      imported.weight = 0.0;  // pool weights assigned below
      imported.last_contrib = src.last_contrib;
      imported.beliefs.resize(n_tracked);
      for (int t = 0; t < n_tracked; ++t) {
        if (slot_of[t] >= 0 && host.tracked_ids[t] != host.owner) {
          imported.beliefs[t] = src.beliefs[slot_of[t]];
        } else {
          imported.beliefs[t] = don.beliefs[t];
        }
      }
      pool.push_back(std::move(imported));
      ++out.imported;
    }
  }

  if (out.imported == 0) {
    // Nothing arrived; fusing would only reshuffle the host's own set.
    out.skipped = true;
    return host;
  }

  if (host_quota > 0) {
    Eigen::VectorXd w(host.particles.size());
    for (std::size_t k = 0; k < host.particles.size(); ++k)
      w[static_cast<Eigen::Index>(k)] = host.particles[k].weight;
    const auto picks = systematic_resample_indices(w, host_quota, rng.uniform01());
    for (int pick : picks) {
      pool.push_back(host.particles[pick]);
      pool.back().weight = 0.0;
    }
  }

  if (pool.empty()) {
    out.skipped = true;
    return host;
  }

  // Stacked pool starts uniform, then takes the road factor per particle.
  const int pool_n = static_cast<int>(pool.size());
  std::vector<double> logw(pool_n, 0.0);
  if (params.use_road) {
    for (int k = 0; k < pool_n; ++k) {
      double lw = 0.0;
      for (const auto& belief : pool[k].beliefs) {
        const double extra = std::sqrt(std::max(0.0, belief.max_horizontal_var()));
        lw += std::log(map.road_likelihood(belief.position(), extra));
      }
      logw[k] = lw;
    }
  }
  double max_lw = *std::max_element(logw.begin(), logw.end());
  Eigen::VectorXd w(pool_n);
  double sum = 0.0;
  if (std::isfinite(max_lw)) {
    for (int k = 0; k < pool_n; ++k) {
      w[k] = std::exp(logw[k] - max_lw);
      sum += w[k];
    }
  }
  if (!(sum > 0.0) || !std::isfinite(sum)) {
    w.setConstant(1.0);
    out.reweight_degenerate = true;
  }

  ParticleSet fused;
  fused.owner = host.owner;
  fused.nominal_size = host.nominal_size;
  fused.n_vehicles = host.n_vehicles;
  fused.tracked_ids = host.tracked_ids;
  const auto picks = systematic_resample_indices(w, host.nominal_size, rng.uniform01());
  fused.particles.reserve(host.nominal_size);
  const double uniform = 1.0 / host.nominal_size;
  for (int pick : picks) {
    fused.particles.push_back(pool[pick]);
    fused.particles.back().weight = uniform;
  }
  return fused;
}

}  // namespace cmm

#pragma once
#include <vector>

#include <Eigen/Dense>

#include "cmm/random.hpp"
#include "cmm/rbpf.hpp"
#include "cmm/road_map.hpp"

namespace cmm {

// Directed communication graph over vehicles 0..n-1. in_nbrs[i] lists the
// senders vehicle i hears, sorted ascending, never containing i itself.
// Range-built graphs are symmetric; the ring topology is not.
struct CommGraph {
  int n = 0;
  std::vector<std::vector<int>> in_nbrs;

  bool has_in_edge(int receiver, int sender) const;
  bool symmetric() const;
  bool connected() const;  // weak connectivity over the edge union
  std::vector<int> degrees() const;  // in-degree per node
};

// Mutual-selection range graph: nodes within comm_range_m propose an edge;
// when a node has more than max_neighbors candidates it keeps the nearest
// (ties broken by lower index) and an edge survives only if both endpoints
// kept it, so the result stays symmetric.
CommGraph build_graph(const std::vector<Vec2>& positions, double comm_range_m,
                      int max_neighbors = 30);

// Directed cycle: node i hears node (i+1) mod n.
CommGraph ring_graph(int n);

// Row-stochastic fusion weights. Row i may place mass only on i and its
// in-neighbors.
struct FusionWeights {
  Eigen::MatrixXd a;

  void validate(const CommGraph& g) const;  // throws ConfigError on violation
};

// a_ii = alpha, remaining mass split evenly over in-neighbors. Isolated nodes
// keep weight 1 on themselves.
FusionWeights constant_alpha_weights(const CommGraph& g, double alpha);

// Metropolis-style weights a_ij = 1 / max(d_i, d_j) for edges, diagonal takes
// the remainder. Requires a symmetric graph; warns on stderr when the graph
// is not connected.
FusionWeights max_degree_weights(const CommGraph& g);

// Each row drawn uniformly from the simplex over its feasible support.
FusionWeights random_row_weights(const CommGraph& g, RandomStream& rng);

struct QpOptions {
  int max_iters = 500;
  double rel_tol = 1e-8;
};

// Minimizes the post-fusion sample variance (1/N) * sum_i (y_i - mean(y))^2,
// y = A x, jointly over all rows, each row constrained to the simplex over
// its support. Projected gradient with monotone backtracking, initialized at
// the Metropolis weights (uniform rows when the graph is directed). The
// returned objective never exceeds the initial one.
FusionWeights optimize_weights_qp(const Eigen::VectorXd& x, const CommGraph& g,
                                  const QpOptions& opts = {});

// One-hop variant: row i independently minimizes (y_i - m_i)^2 where m_i is
// the plain average of x over row i's support.
FusionWeights optimize_weights_qp_local(const Eigen::VectorXd& x, const CommGraph& g,
                                        const QpOptions& opts = {});

Eigen::VectorXd apply_fusion(const FusionWeights& w, const Eigen::VectorXd& x);

double network_variance(const Eigen::VectorXd& x);
double network_mse(const Eigen::VectorXd& x, double truth);

// Second-largest eigenvalue modulus of the weight matrix: the per-step
// contraction factor of the disagreement vector under repeated fusion.
double asymptotic_rate(const FusionWeights& w);

// ---- particle exchange ----

struct NeighborBatch {
  int sender = 0;
  const ParticleSet* set = nullptr;
};

struct FuseParams {
  int current_step = 0;
  int incest_horizon_steps = 20;
  bool use_road = true;
};

struct FuseOutcome {
  bool skipped = false;          // nothing imported; host returned unchanged
  int blocked_batches = 0;       // batches the incest guard emptied entirely
  int imported = 0;              // particles drawn from neighbors
  bool reweight_degenerate = false;
};

// Builds the fused particle set for the host: draws round-robin quotas from
// each delivered neighbor batch (by sender weights, after the incest guard
// removes particles whose log shows a host contribution within the horizon),
// fills the host's own quota (nominal minus the sum of neighbor quotas) from
// the host set by weight, and maps imported beliefs onto the host's tracked
// vehicles. Bias hypotheses travel; conditional vehicle states stay local:
// the host's own slot and any vehicle the sender does not track take the
// beliefs of a donor particle drawn from the host by weight. The stacked pool
// is reweighted by the road factor and resampled down to the nominal size
// with uniform output weights.
ParticleSet stack_and_fuse(const ParticleSet& host,
                           const std::vector<NeighborBatch>& batches,
                           const std::vector<int>& quotas, const RoadMap& map,
                           const FuseParams& params, RandomStream& rng,
                           FuseOutcome* outcome = nullptr);

}  // namespace cmm

#pragma once

#include <cstdint>
#include <optional>

#include "mjlq/types.hpp"

namespace mjlq {

struct SimulationConfig {
  int64_t n_paths = 10000;
  double horizon_T = 20.0;
  double dt = 1e-3;
  uint64_t master_seed = 0;
  Vec x0;
  int i0 = 0;
  double discount_r = 0.0;  // e^{-rt} weight on the cost integrand
};

struct TracePoint {
  double t = 0.0;
  double second_moment = 0.0;  // estimate of E|X(t)|^2
  double stderr_ = 0.0;
};

struct SimResult {
  double cost_mean = 0.0;
  double cost_stderr = 0.0;
  std::vector<TracePoint> second_moment_trace;  // at T/10, 2T/10, ..., T
  double stationarity_residual = 0.0;  // mean of ||N u + L' X + rho~|| over (path, time)
  double mean_state_norm = 0.0;        // mean of |X| over (path, time), scales the residual
  int64_t n_paths_used = 0;
  double overflow_fraction = 0.0;      // fraction of paths with |X| > 1e12
  double truncation_bias = 0.0;        // estimated tail of the cost integral past T
  bool cost_reliable = true;           // false when overflow_fraction >= 1%

  bool overflowed() const { return !cost_reliable; }
};

/// Stationarity oracle for the residual recorded during simulation:
/// ||N(P,alpha)u + L(P,alpha)'X + rho_tilde(alpha)|| evaluated at every cost
/// quadrature point. rho_tilde is zero for homogeneous problems.
struct StationarityOracle {
  CoupledMatrixSet P;
  std::vector<Vec> rho_tilde;  // L entries, size m
};

/// One piecewise-constant chain trajectory: initial state plus the ordered
/// jump times in [0, T].
struct ChainPath {
  int initial = 0;
  std::vector<std::pair<double, int>> jumps;  // (time, new state)

  int state_at(double t) const {
    int s = initial;
    for (const auto& [tau, j] : jumps) {
      if (tau > t) break;
      s = j;
    }
    return s;
  }
};

/// Exact simulation: exponential holding times with rate -pi_ii, next state
/// j != i with probability pi_ij / (-pi_ii).
ChainPath sample_chain_path(const Generator& gen, int i0, double T, uint64_t master_seed,
                            uint64_t path_index);

/// Closed-loop Euler-Maruyama Monte Carlo under u = Theta(alpha)X + nu(alpha).
/// The chain is sampled exactly first; diffusion substeps are clipped to jump,
/// checkpoint and horizon boundaries. Identical (master_seed, config, inputs)
/// give bit-identical results at any worker count: per-path counter-based RNG
/// streams, per-path accumulators, pairwise-tree reduction in path order.
/// `num_threads` <= 0 uses the OpenMP default.
SimResult simulate_paths(const ProblemSpec& pb, const FeedbackStrategy& strategy,
                         const SimulationConfig& config,
                         const StationarityOracle* oracle = nullptr, int num_threads = 0);

/// Serial reference implementation: the same per-path kernel and the same
/// reduction, without the OpenMP work-sharing loop. Kept for the equivalence
/// tests and the benchmark.
SimResult simulate_paths_serial(const ProblemSpec& pb, const FeedbackStrategy& strategy,
                                const SimulationConfig& config,
                                const StationarityOracle* oracle = nullptr);

/// True iff the second-moment trace at T is below 5% of its maximum and the
/// last three checkpoints are non-increasing within a 2-stderr slack.
bool check_decay(const SimResult& result);

/// Monte Carlo check of the Lyapunov representation: estimates
/// E[ int_0^T Phi_i' Lambda(alpha) Phi_i dt | alpha_0 = i ] for the
/// fundamental matrix Phi_i and returns, per regime, the relative Frobenius
/// error against `expected` plus the largest entry-wise |z|-score.
struct RepresentationCheck {
  std::vector<double> rel_errors;
  std::vector<double> max_z_scores;
};
RepresentationCheck lyapunov_representation_mc(const std::vector<Mat>& Abar,
                                               const std::vector<Mat>& Cbar,
                                               const Generator& gen,
                                               const CoupledMatrixSet& Lambda,
                                               const CoupledMatrixSet& expected,
                                               const SimulationConfig& config);

}  // namespace mjlq

#include "mjlq/mcsim.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mjlq/coefficients.hpp"
#include "mjlq/errors.hpp"
#include "mjlq/numerics.hpp"
#include "mjlq/rng.hpp"

namespace mjlq {

namespace {

constexpr double kOverflowNorm = 1e12;
constexpr double kOverflowPathFraction = 0.01;
constexpr int kTracePoints = 10;
constexpr double kInf = std::numeric_limits<double>::infinity();

struct ChainTables {
  int L = 0;
  std::vector<double> rates;  // -pi_ii
  std::vector<double> cum;    // row-major cumulative transition probabilities

  explicit ChainTables(const Generator& gen) : L(gen.regimes()) {
    rates.resize(static_cast<size_t>(L));
    cum.assign(static_cast<size_t>(L * L), 0.0);
    for (int i = 0; i < L; ++i) {
      const double rate = -gen.pi(i, i);
      rates[static_cast<size_t>(i)] = rate;
      if (rate <= 0.0) continue;
      double acc = 0.0;
      for (int j = 0; j < L; ++j) {
        if (j != i) acc += gen.pi(i, j) / rate;
        cum[static_cast<size_t>(i * L + j)] = acc;
      }
    }
  }
};

void sample_chain_into(const ChainTables& tables, int i0, double T, PathRng& rng,
                       std::vector<std::pair<double, int>>& jumps) {
  jumps.clear();
  double t = 0.0;
  int i = i0;
  while (true) {
    const double rate = tables.rates[static_cast<size_t>(i)];
    if (rate <= 0.0) return;  // absorbing state
    t += rng.next_exponential(rate);
    if (t >= T) return;
    const double u = rng.next_uniform();
    int next = -1;
    for (int j = 0; j < tables.L; ++j) {
      if (j == i) continue;
      if (u <= tables.cum[static_cast<size_t>(i * tables.L + j)]) {
        next = j;
        break;
      }
    }
    if (next < 0) {
      for (int j = tables.L - 1; j >= 0; --j)
        if (j != i) {
          next = j;
          break;
        }
    }
    jumps.emplace_back(t, next);
    i = next;
  }
}

/// Flattened per-regime data for the hot loop: closed-loop dynamics, the cost
/// quadratic already composed with u = Theta x + nu, and (optionally) the
/// stationarity residual map x -> ||G x + g||.
struct RegimeKernel {
  std::vector<double> Abar, Cbar;           // n*n, row-major
  std::vector<double> drift_off, diff_off;  // n
  std::vector<double> Qeff;                 // n*n
  std::vector<double> leff;                 // n
  double ceff = 0.0;
  std::vector<double> stat_G;  // m*n
  std::vector<double> stat_g;  // m
};

std::vector<double> flatten(const Mat& m) {
  std::vector<double> out(static_cast<size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      out[static_cast<size_t>(r * m.cols() + c)] = m(r, c);
  return out;
}

std::vector<double> flatten(const Vec& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

struct SimContext {
  int n = 0, m = 0;
  ChainTables chain;
  std::vector<RegimeKernel> regimes;
  SimulationConfig config;
  bool with_oracle = false;

  SimContext(const ProblemSpec& pb, const FeedbackStrategy& strategy,
             const SimulationConfig& cfg, const StationarityOracle* oracle)
      : n(pb.n), m(pb.m), chain(pb.generator), config(cfg), with_oracle(oracle != nullptr) {
    for (int i = 0; i < pb.num_regimes(); ++i) {
      const RegimeData& rd = pb.regimes[static_cast<size_t>(i)];
      const Mat& theta = strategy.theta[static_cast<size_t>(i)];
      const Vec& nu = strategy.nu[static_cast<size_t>(i)];
      RegimeKernel k;
      k.Abar = flatten(Mat(rd.A + rd.B * theta));
      k.Cbar = flatten(Mat(rd.C + rd.D * theta));
      Vec drift = rd.B * nu;
      Vec diff = rd.D * nu;
      if (rd.b) drift += *rd.b;
      if (rd.sigma) diff += *rd.sigma;
      k.drift_off = flatten(drift);
      k.diff_off = flatten(diff);

      // Cost integrand along the closed loop, as a quadratic in x alone:
      //   x'(Q + Th'S + S'Th + Th'R Th)x + 2(S'nu + Th'R nu + Th'rho + q)'x
      //   + nu'R nu + 2 rho'nu.
      const Mat qeff = rd.Q + theta.transpose() * rd.S + rd.S.transpose() * theta +
                       theta.transpose() * rd.R * theta;
      Vec leff = rd.S.transpose() * nu + theta.transpose() * (rd.R * nu);
      double ceff = nu.dot(rd.R * nu);
      if (rd.q) leff += *rd.q;
      if (rd.rho) {
        leff += theta.transpose() * *rd.rho;
        ceff += 2.0 * rd.rho->dot(nu);
      }
      k.Qeff = flatten(qeff);
      k.leff = flatten(leff);
      k.ceff = ceff;

      if (oracle) {
        const Mat N = symmetrized(rd.D.transpose() * oracle->P[i] * rd.D + rd.R);
        const Mat l = oracle->P[i] * rd.B + rd.C.transpose() * oracle->P[i] * rd.D +
                      rd.S.transpose();
        k.stat_G = flatten(Mat(N * theta + l.transpose()));
        k.stat_g = flatten(Vec(N * nu + oracle->rho_tilde[static_cast<size_t>(i)]));
      }
      regimes.push_back(std::move(k));
    }
  }
};

struct PathBuffers {
  std::vector<double> cost;
  std::vector<double> trace;      // n_paths * kTracePoints
  std::vector<double> diverged;   // 0/1 flags
  std::vector<double> stat_sum;   // sum of residual norms
  std::vector<double> xnorm_sum;  // sum of |x|
  std::vector<double> samples;    // quadrature sample count
  std::vector<double> tail_rate;  // mean discounted integrand over [0.9 T, T]

  explicit PathBuffers(int64_t n_paths)
      : cost(static_cast<size_t>(n_paths)),
        trace(static_cast<size_t>(n_paths * kTracePoints)),
        diverged(static_cast<size_t>(n_paths)),
        stat_sum(static_cast<size_t>(n_paths)),
        xnorm_sum(static_cast<size_t>(n_paths)),
        samples(static_cast<size_t>(n_paths)),
        tail_rate(static_cast<size_t>(n_paths)) {}
};

/// One path, fully determined by (master_seed, path index). `x`, `xn` are
/// caller-provided scratch of size n.
void run_path(const SimContext& ctx, int64_t p, double* x, double* xn, PathBuffers& buf,
              std::vector<std::pair<double, int>>& jumps) {
  const int n = ctx.n, m = ctx.m;
  const double T = ctx.config.horizon_T;
  const double r = ctx.config.discount_r;

  PathRng rng(ctx.config.master_seed, static_cast<uint64_t>(p));
  sample_chain_into(ctx.chain, ctx.config.i0, T, rng, jumps);

  for (int k = 0; k < n; ++k) x[k] = ctx.config.x0(k);

  double cost = 0.0, w = 1.0;
  double stat_sum = 0.0, xnorm_sum = 0.0, samples = 0.0;
  double tail_sum = 0.0, tail_count = 0.0;
  bool diverged = false;

  const double tail_start = 0.9 * T;
  int regime = ctx.config.i0;
  size_t jump_idx = 0;
  int cp_idx = 1;
  double t0 = 0.0;

  while (t0 < T && !diverged) {
    const double t_jump = jump_idx < jumps.size() ? jumps[jump_idx].first : kInf;
    // The last checkpoint is pinned to T; k*T/10 can land one ulp past T.
    const double t_cp = cp_idx > kTracePoints
                            ? kInf
                            : (cp_idx == kTracePoints ? T : cp_idx * T / kTracePoints);
    const double t1 = std::min({T, t_jump, t_cp});
    const RegimeKernel& rk = ctx.regimes[static_cast<size_t>(regime)];

    const double len = t1 - t0;
    if (len > 0.0) {
      const auto nsub = static_cast<int64_t>(std::ceil(len / ctx.config.dt - 1e-12));
      const double h = len / static_cast<double>(std::max<int64_t>(nsub, 1));
      const double sqh = std::sqrt(h);
      const double decay = r > 0.0 ? std::exp(-r * h) : 1.0;
      for (int64_t k = 0; k < std::max<int64_t>(nsub, 1); ++k) {
        const double t_left = t0 + static_cast<double>(k) * h;

        // Left-endpoint quadrature of the running cost.
        double c = rk.ceff;
        for (int a = 0; a < n; ++a) {
          double row = 2.0 * rk.leff[static_cast<size_t>(a)];
          for (int b = 0; b < n; ++b)
            row += rk.Qeff[static_cast<size_t>(a * n + b)] * x[b];
          c += x[a] * row;
        }
        cost += w * c * h;
        if (t_left >= tail_start) {
          tail_sum += w * c;
          tail_count += 1.0;
        }

        if (ctx.with_oracle) {
          double res2 = 0.0;
          for (int a = 0; a < m; ++a) {
            double acc = rk.stat_g[static_cast<size_t>(a)];
            for (int b = 0; b < n; ++b)
              acc += rk.stat_G[static_cast<size_t>(a * n + b)] * x[b];
            res2 += acc * acc;
          }
          stat_sum += std::sqrt(res2);
          double x2 = 0.0;
          for (int a = 0; a < n; ++a) x2 += x[a] * x[a];
          xnorm_sum += std::sqrt(x2);
          samples += 1.0;
        }

        const double xi = rng.next_normal();
        double max_abs = 0.0;
        for (int a = 0; a < n; ++a) {
          double drift = rk.drift_off[static_cast<size_t>(a)];
          double diff = rk.diff_off[static_cast<size_t>(a)];
          for (int b = 0; b < n; ++b) {
            const double xb = x[b];
            drift += rk.Abar[static_cast<size_t>(a * n + b)] * xb;
            diff += rk.Cbar[static_cast<size_t>(a * n + b)] * xb;
          }
          xn[a] = x[a] + h * drift + sqh * xi * diff;
          max_abs = std::max(max_abs, std::abs(xn[a]));
        }
        std::swap(x, xn);
        w *= decay;
        if (max_abs > kOverflowNorm) {
          diverged = true;
          break;
        }
      }
    }

    t0 = t1;
    if (t1 == t_jump) {
      regime = jumps[jump_idx].second;
      ++jump_idx;
    }
    if (t1 == t_cp) {
      double x2 = 0.0;
      for (int a = 0; a < n; ++a) x2 += x[a] * x[a];
      buf.trace[static_cast<size_t>(p * kTracePoints + (cp_idx - 1))] = x2;
      ++cp_idx;
    }
  }

  if (diverged) {
    // Freeze the exploded path: remaining checkpoints carry the overflow
    // magnitude so the trace itself shows the divergence.
    for (; cp_idx <= kTracePoints; ++cp_idx)
      buf.trace[static_cast<size_t>(p * kTracePoints + (cp_idx - 1))] =
          kOverflowNorm * kOverflowNorm;
  }

  buf.cost[static_cast<size_t>(p)] = cost;
  buf.diverged[static_cast<size_t>(p)] = diverged ? 1.0 : 0.0;
  buf.stat_sum[static_cast<size_t>(p)] = stat_sum;
  buf.xnorm_sum[static_cast<size_t>(p)] = xnorm_sum;
  buf.samples[static_cast<size_t>(p)] = samples;
  buf.tail_rate[static_cast<size_t>(p)] = tail_count > 0.0 ? tail_sum / tail_count : 0.0;
}

/// Deterministic reduction of the per-path buffers (pairwise trees in path
/// order), shared by the serial and the parallel front ends.
SimResult assemble_result(const SimContext& ctx, const PathBuffers& buf) {
  const auto n_paths = static_cast<size_t>(ctx.config.n_paths);
  const double dn = static_cast<double>(n_paths);
  SimResult result;
  result.n_paths_used = ctx.config.n_paths;

  result.cost_mean = pairwise_sum(buf.cost) / dn;
  std::vector<double> scratch(n_paths);
  for (size_t p = 0; p < n_paths; ++p) {
    const double d = buf.cost[p] - result.cost_mean;
    scratch[p] = d * d;
  }
  const double var = n_paths > 1 ? pairwise_sum(scratch) / (dn - 1.0) : 0.0;
  result.cost_stderr = std::sqrt(var / dn);

  for (int k = 0; k < kTracePoints; ++k) {
    for (size_t p = 0; p < n_paths; ++p)
      scratch[p] = buf.trace[p * kTracePoints + static_cast<size_t>(k)];
    const double mean = pairwise_sum(scratch) / dn;
    std::vector<double> sq(n_paths);
    for (size_t p = 0; p < n_paths; ++p) {
      const double d = scratch[p] - mean;
      sq[p] = d * d;
    }
    const double v = n_paths > 1 ? pairwise_sum(sq) / (dn - 1.0) : 0.0;
    result.second_moment_trace.push_back(
        {(k + 1) * ctx.config.horizon_T / kTracePoints, mean, std::sqrt(v / dn)});
  }

  const double total_samples = pairwise_sum(buf.samples);
  if (total_samples > 0.0) {
    result.stationarity_residual = pairwise_sum(buf.stat_sum) / total_samples;
    result.mean_state_norm = pairwise_sum(buf.xnorm_sum) / total_samples;
  }

  result.overflow_fraction = pairwise_sum(buf.diverged) / dn;
  result.cost_reliable = result.overflow_fraction < kOverflowPathFraction;

  // Tail estimate: decay rate from the last trace points, integrand level
  // from the [0.9 T, T] window; -1 when the trace does not decay.
  const double m8 = result.second_moment_trace[kTracePoints - 3].second_moment;
  const double mT = result.second_moment_trace[kTracePoints - 1].second_moment;
  const double dt_tail = 2.0 * ctx.config.horizon_T / kTracePoints;
  const double tail_level = pairwise_sum(buf.tail_rate) / dn;
  if (m8 > 0.0 && mT > 0.0 && mT < m8) {
    const double lam = std::log(m8 / mT) / dt_tail + ctx.config.discount_r;
    result.truncation_bias = std::abs(tail_level) / lam;
  } else {
    result.truncation_bias = -1.0;
  }
  return result;
}

void validate_config(const ProblemSpec& pb, const FeedbackStrategy& strategy,
                     const SimulationConfig& config) {
  if (config.n_paths <= 0) throw ValidationError("n_paths must be positive");
  if (config.dt <= 0.0 || config.horizon_T <= 0.0 || config.dt > config.horizon_T)
    throw ValidationError("need 0 < dt <= horizon_T");
  if (config.x0.size() != pb.n) throw ValidationError("x0 has wrong dimension");
  if (config.i0 < 0 || config.i0 >= pb.num_regimes())
    throw ValidationError("i0 out of range");
  if (strategy.regimes() != pb.num_regimes())
    throw ValidationError("strategy regime count mismatch");

  double rate_scale = 0.0;
  for (int i = 0; i < pb.num_regimes(); ++i) {
    const Mat a_cl = closed_loop_A(pb, strategy, i);
    const Mat c_cl = closed_loop_C(pb, strategy, i);
    rate_scale = std::max(rate_scale, -pb.generator.pi(i, i) + a_cl.norm() +
                                          c_cl.norm() * c_cl.norm());
  }
  if (rate_scale > 0.0 && config.dt > 0.1 / rate_scale)
    std::cerr << "warning: dt = " << config.dt << " exceeds the recommended 0.1/rate = "
              << 0.1 / rate_scale << "; expect visible discretization bias\n";
}

}  // namespace

ChainPath sample_chain_path(const Generator& gen, int i0, double T, uint64_t master_seed,
                            uint64_t path_index) {
  ChainTables tables(gen);
  PathRng rng(master_seed, path_index);
  ChainPath path;
  path.initial = i0;
  sample_chain_into(tables, i0, T, rng, path.jumps);
  return path;
}

SimResult simulate_paths_serial(const ProblemSpec& pb, const FeedbackStrategy& strategy,
                                const SimulationConfig& config,
                                const StationarityOracle* oracle) {
  validate_config(pb, strategy, config);
  SimContext ctx(pb, strategy, config, oracle);
  PathBuffers buf(config.n_paths);
  std::vector<double> x(static_cast<size_t>(pb.n)), xn(static_cast<size_t>(pb.n));
  std::vector<std::pair<double, int>> jumps;
  for (int64_t p = 0; p < config.n_paths; ++p) run_path(ctx, p, x.data(), xn.data(), buf, jumps);
  return assemble_result(ctx, buf);
}

SimResult simulate_paths(const ProblemSpec& pb, const FeedbackStrategy& strategy,
                         const SimulationConfig& config, const StationarityOracle* oracle,
                         int num_threads) {
  validate_config(pb, strategy, config);
  SimContext ctx(pb, strategy, config, oracle);
  PathBuffers buf(config.n_paths);
#ifdef _OPENMP
  const int nt = num_threads > 0 ? num_threads : omp_get_max_threads();
  // Any schedule is safe: each path writes only its own buffer slots and the
  // reduction below runs in fixed path order.
#pragma omp parallel num_threads(nt)
  {
    std::vector<double> x(static_cast<size_t>(pb.n)), xn(static_cast<size_t>(pb.n));
    std::vector<std::pair<double, int>> jumps;
#pragma omp for schedule(dynamic, 256)
    for (int64_t p = 0; p < config.n_paths; ++p)
      run_path(ctx, p, x.data(), xn.data(), buf, jumps);
  }
#else
  (void)num_threads;
  std::vector<double> x(static_cast<size_t>(pb.n)), xn(static_cast<size_t>(pb.n));
  std::vector<std::pair<double, int>> jumps;
  for (int64_t p = 0; p < config.n_paths; ++p) run_path(ctx, p, x.data(), xn.data(), buf, jumps);
#endif
  return assemble_result(ctx, buf);
}

bool check_decay(const SimResult& result) {
  const auto& trace = result.second_moment_trace;
  if (trace.size() < 3) return false;
  double peak = 0.0;
  for (const TracePoint& p : trace) peak = std::max(peak, p.second_moment);
  if (peak <= 0.0) return true;  // identically zero state
  const double last = trace.back().second_moment;
  if (last > 0.05 * peak) return false;
  for (size_t k = trace.size() - 3; k + 1 < trace.size(); ++k) {
    const double slack = 2.0 * std::max(trace[k].stderr_, trace[k + 1].stderr_);
    if (trace[k + 1].second_moment > trace[k].second_moment + slack) return false;
  }
  return true;
}

RepresentationCheck lyapunov_representation_mc(const std::vector<Mat>& Abar,
                                               const std::vector<Mat>& Cbar,
                                               const Generator& gen,
                                               const CoupledMatrixSet& Lambda,
                                               const CoupledMatrixSet& expected,
                                               const SimulationConfig& config) {
  const int L = gen.regimes();
  const int n = static_cast<int>(Abar[0].rows());
  const ChainTables tables(gen);
  const double T = config.horizon_T;
  RepresentationCheck out;

  for (int i0 = 0; i0 < L; ++i0) {
    const auto n_paths = static_cast<size_t>(config.n_paths);
    Mat mean = Mat::Zero(n, n), m2 = Mat::Zero(n, n);
    std::vector<std::pair<double, int>> jumps;
    for (size_t p = 0; p < n_paths; ++p) {
      // Distinct stream per (initial regime, path).
      PathRng rng(config.master_seed + 0x100000ull * static_cast<uint64_t>(i0 + 1),
                  static_cast<uint64_t>(p));
      sample_chain_into(tables, i0, T, rng, jumps);

      Mat phi = Mat::Identity(n, n);
      Mat acc = Mat::Zero(n, n);
      double t0 = 0.0;
      int regime = i0;
      size_t jump_idx = 0;
      while (t0 < T) {
        const double t1 = std::min(T, jump_idx < jumps.size() ? jumps[jump_idx].first : kInf);
        const double len = t1 - t0;
        if (len > 0.0) {
          const auto nsub = static_cast<int64_t>(std::ceil(len / config.dt - 1e-12));
          const double h = len / static_cast<double>(std::max<int64_t>(nsub, 1));
          const double sqh = std::sqrt(h);
          const Mat& A = Abar[static_cast<size_t>(regime)];
          const Mat& C = Cbar[static_cast<size_t>(regime)];
          const Mat& lam = Lambda[regime];
          for (int64_t k = 0; k < std::max<int64_t>(nsub, 1); ++k) {
            acc += h * (phi.transpose() * lam * phi);
            const double xi = rng.next_normal();
            phi += h * (A * phi) + (sqh * xi) * (C * phi);
          }
        }
        t0 = t1;
        if (jump_idx < jumps.size() && t1 == jumps[jump_idx].first) {
          regime = jumps[jump_idx].second;
          ++jump_idx;
        }
      }
      mean += acc;
      m2 += acc.cwiseProduct(acc);
    }
    mean /= static_cast<double>(n_paths);
    m2 /= static_cast<double>(n_paths);
    const Mat var = (m2 - mean.cwiseProduct(mean)) *
                    (static_cast<double>(n_paths) / std::max<double>(1.0, n_paths - 1.0));
    const Mat se = (var / static_cast<double>(n_paths)).cwiseSqrt();

    out.rel_errors.push_back((mean - expected[i0]).norm() / std::max(1e-300, expected[i0].norm()));
    double zmax = 0.0;
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) {
        const double denom = std::max(se(a, b), 1e-300);
        zmax = std::max(zmax, std::abs(mean(a, b) - expected[i0](a, b)) / denom);
      }
    out.max_z_scores.push_back(zmax);
  }
  return out;
}

}  // namespace mjlq

// Benchmark: serial reference kernel vs the OpenMP path loop, with a
// bit-identity check on every configuration.
//
//   mjlq_bench [paths] [horizon] [dt]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mjlq/mcsim.hpp"
#include "mjlq/model_io.hpp"
#include "mjlq/riccati.hpp"
#include "mjlq/synthesis.hpp"

using namespace mjlq;

namespace {

ProblemSpec bench_problem() {
  // Three-regime scalar instance with two controls; mixed stable/unstable
  // open-loop regimes keep the closed-loop kernel busy.
  ProblemSpec pb;
  pb.n = 1;
  pb.m = 2;
  pb.generator.pi = Mat(3, 3);
  pb.generator.pi << -0.7, 0.3, 0.4, 0.1, -0.3, 0.2, 0.2, 0.3, -0.5;
  const double a[3] = {1, -1, 2};
  const double c[3] = {-1, 2, 1};
  const double b[3][2] = {{1, -1}, {2, 1}, {1, 1}};
  const double d[3][2] = {{0, 1}, {1, 1}, {2, -1}};
  const double q[3] = {9, 7, 15};
  const double s[3][2] = {{1, 1}, {-1, 1}, {3, -2}};
  const double r[3][4] = {{7, 2, 2, 4}, {4, 2, 2, 6}, {6, 2, 2, 7}};
  for (int i = 0; i < 3; ++i) {
    RegimeData rd;
    rd.A = Mat::Constant(1, 1, a[i]);
    rd.C = Mat::Constant(1, 1, c[i]);
    rd.B = Mat(1, 2);
    rd.B << b[i][0], b[i][1];
    rd.D = Mat(1, 2);
    rd.D << d[i][0], d[i][1];
    rd.Q = Mat::Constant(1, 1, q[i]);
    rd.S = Mat(2, 1);
    rd.S << s[i][0], s[i][1];
    rd.R = Mat(2, 2);
    rd.R << r[i][0], r[i][1], r[i][2], r[i][3];
    pb.regimes.push_back(rd);
  }
  return pb;
}

template <typename F>
double timed(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
  const int64_t paths = argc > 1 ? std::atoll(argv[1]) : 40000;
  const double horizon = argc > 2 ? std::atof(argv[2]) : 10.0;
  const double dt = argc > 3 ? std::atof(argv[3]) : 1e-3;

  const ProblemSpec pb = bench_problem();
  const CareSolution sol = solve_care(pb);
  const FeedbackStrategy strategy = build_closed_loop(pb, sol);

  SimulationConfig cfg;
  cfg.n_paths = paths;
  cfg.horizon_T = horizon;
  cfg.dt = dt;
  cfg.master_seed = 123;
  cfg.x0 = Vec::Ones(1);
  cfg.i0 = 0;

  std::printf("paths=%lld horizon=%g dt=%g (%.1e path-steps)\n",
              static_cast<long long>(paths), horizon, dt,
              static_cast<double>(paths) * horizon / dt);

  SimResult reference;
  const double t_serial = timed([&] { reference = simulate_paths_serial(pb, strategy, cfg); });
  std::printf("%-18s %8.3f s   cost %.6f +- %.6f\n", "serial reference", t_serial,
              reference.cost_mean, reference.cost_stderr);
  const std::string expected = to_json_text(reference);

#ifdef _OPENMP
  const int hw = omp_get_max_threads();
#else
  const int hw = 1;
#endif
  int mismatches = 0;
  for (int workers : {1, 2, 4}) {
    if (workers > 2 * hw) break;
    SimResult result;
    const double t = timed([&] { result = simulate_paths(pb, strategy, cfg, nullptr, workers); });
    const bool same = to_json_text(result) == expected;
    mismatches += same ? 0 : 1;
    std::printf("omp x%-2d            %8.3f s   speedup %.2f   bit-identical: %s\n", workers, t,
                t_serial / t, same ? "yes" : "NO");
  }
  return mismatches;
}

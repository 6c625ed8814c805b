// mjlq: solver pipeline for infinite-horizon stochastic LQ control of
// regime-switching linear systems.
//
// Commands: validate | stability | stabilize | solve | verify | synthesize |
//           value | simulate
// Exit codes: 0 ok, 1 I/O, 2 invalid input, 3 unstable, 4 not stabilizable,
//             5 solver failure, 6 verification rejected, 7 simulation overflow.

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>

#include "mjlq/errors.hpp"
#include "mjlq/model_io.hpp"
#include "mjlq/riccati.hpp"
#include "mjlq/stability.hpp"
#include "mjlq/synthesis.hpp"

namespace {

using namespace mjlq;

constexpr int kExitOk = 0;
constexpr int kExitIo = 1;
constexpr int kExitInvalid = 2;
constexpr int kExitUnstable = 3;
constexpr int kExitNotStabilizable = 4;
constexpr int kExitSolverFailure = 5;
constexpr int kExitRejected = 6;
constexpr int kExitOverflow = 7;

Vec parse_vector(const std::string& text) {
  std::vector<double> vals;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      vals.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ValidationError("cannot parse vector entry '" + item + "'");
    }
  }
  Vec v(static_cast<Eigen::Index>(vals.size()));
  for (size_t k = 0; k < vals.size(); ++k) v(static_cast<Eigen::Index>(k)) = vals[k];
  return v;
}

template <typename Artifact>
void emit(const Artifact& artifact, const std::string& out_path) {
  if (out_path.empty())
    std::cout << to_json_text(artifact) << "\n";
  else
    save_artifact(artifact, out_path);
}

int thread_count(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("MJLQ_THREADS")) {
    const int parsed = std::atoi(env);
    if (parsed > 0) return parsed;
  }
  return 0;  // library default
}

int regime_index(int one_based, const ProblemSpec& pb) {
  if (one_based < 1 || one_based > pb.num_regimes())
    throw ValidationError("regime index " + std::to_string(one_based) + " out of range 1.." +
                          std::to_string(pb.num_regimes()));
  return one_based - 1;
}

struct SolveFlags {
  std::string problem_path;
  std::string out_path;
  std::string strategy_out;
  bool eps_homotopy = false;
  double eps0 = 1.0;
  double tol = 1e-9;
  double t_max = 1024.0;
};

int run_solve(const SolveFlags& flags) {
  const ProblemSpec pb = load_problem(flags.problem_path);
  const ProblemSpec work = pb.discount_r > 0.0 ? discount_transform(pb) : pb;

  CareOptions opts;
  opts.convergence_tol = flags.tol;
  opts.t_max = flags.t_max;

  CareSolution sol;
  if (flags.eps_homotopy) {
    sol = solve_care_eps_homotopy(work, flags.eps0, opts);
    const CareVerification v = verify_care(work, sol.P);
    if (!v.accepted) {
      emit(sol, flags.out_path);
      std::cerr << "homotopy candidate rejected by verification (max residual "
                << *std::max_element(v.residual_care.begin(), v.residual_care.end()) << ")\n";
      return kExitRejected;
    }
  } else {
    sol = solve_care(work, opts);
  }

  FeedbackStrategy strategy = build_closed_loop(work, sol);
  if (pb.discount_r > 0.0) strategy = undiscount_strategy(strategy, pb.discount_r);

  emit(sol, flags.out_path);
  if (!flags.strategy_out.empty()) save_artifact(strategy, flags.strategy_out);

  double max_resid = 0.0;
  for (double r : sol.residuals) max_resid = std::max(max_resid, r);
  std::cerr << "solved: max residual " << max_resid << ", stabilizing "
            << (sol.stabilizing ? "yes" : "no") << ", wall " << sol.meta.wall_time_s << " s\n";
  return kExitOk;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"Stochastic LQ control of Markov regime-switching linear systems"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  int threads_flag = 0;
  app.add_option("--threads", threads_flag, "cap simulation workers (or MJLQ_THREADS)");

  std::string val_problem;
  CLI::App* cmd_validate = app.add_subcommand("validate", "check a problem file");
  cmd_validate->add_option("problem", val_problem)->required();

  std::string sta_problem, sta_strategy, sta_out;
  CLI::App* cmd_stability =
      app.add_subcommand("stability", "certify L2-stability of the open or closed loop");
  cmd_stability->add_option("problem", sta_problem)->required();
  cmd_stability->add_option("--strategy", sta_strategy, "closed-loop gain file");
  cmd_stability->add_option("-o,--output", sta_out);

  std::string stb_problem, stb_out;
  CLI::App* cmd_stabilize = app.add_subcommand("stabilize", "synthesize a stabilizing gain");
  cmd_stabilize->add_option("problem", stb_problem)->required();
  cmd_stabilize->add_option("-o,--output", stb_out);

  SolveFlags solve_flags;
  CLI::App* cmd_solve = app.add_subcommand("solve", "solve the coupled Riccati equations");
  cmd_solve->add_option("problem", solve_flags.problem_path)->required();
  cmd_solve->add_flag("--eps-homotopy", solve_flags.eps_homotopy,
                      "convexified homotopy for degenerate control weights");
  cmd_solve->add_option("--eps0", solve_flags.eps0, "initial homotopy weight");
  cmd_solve->add_option("--tol", solve_flags.tol, "horizon-doubling convergence tolerance");
  cmd_solve->add_option("--t-max", solve_flags.t_max, "largest sweep horizon");
  cmd_solve->add_option("-o,--output", solve_flags.out_path);
  cmd_solve->add_option("--strategy-out", solve_flags.strategy_out);

  std::string ver_problem, ver_solution;
  CLI::App* cmd_verify = app.add_subcommand("verify", "check a candidate solution");
  cmd_verify->add_option("problem", ver_problem)->required();
  cmd_verify->add_option("solution", ver_solution)->required();

  std::string syn_problem, syn_solution, syn_out;
  CLI::App* cmd_synthesize =
      app.add_subcommand("synthesize", "assemble the closed-loop strategy from a solution");
  cmd_synthesize->add_option("problem", syn_problem)->required();
  cmd_synthesize->add_option("solution", syn_solution)->required();
  cmd_synthesize->add_option("-o,--output", syn_out);

  std::string valf_problem, valf_solution, valf_x;
  int valf_i = 1;
  CLI::App* cmd_value = app.add_subcommand("value", "evaluate the value function");
  cmd_value->add_option("problem", valf_problem)->required();
  cmd_value->add_option("solution", valf_solution)->required();
  cmd_value->add_option("--x", valf_x, "initial state, comma separated")->required();
  cmd_value->add_option("--i", valf_i, "initial regime (1-based)");

  std::string sim_problem, sim_strategy, sim_solution, sim_out, sim_x0;
  int sim_i0 = 1;
  int64_t sim_paths = 10000;
  double sim_T = 20.0, sim_dt = 1e-3;
  uint64_t sim_seed = 0;
  CLI::App* cmd_simulate = app.add_subcommand("simulate", "Monte Carlo closed-loop simulation");
  cmd_simulate->add_option("problem", sim_problem)->required();
  cmd_simulate->add_option("strategy", sim_strategy)->required();
  cmd_simulate->add_option("--x0", sim_x0, "initial state, comma separated")->required();
  cmd_simulate->add_option("--i0", sim_i0, "initial regime (1-based)");
  cmd_simulate->add_option("--paths", sim_paths);
  cmd_simulate->add_option("--horizon", sim_T);
  cmd_simulate->add_option("--dt", sim_dt);
  cmd_simulate->add_option("--seed", sim_seed);
  cmd_simulate->add_option("--solution", sim_solution,
                           "solution file enabling the stationarity residual");
  cmd_simulate->add_option("-o,--output", sim_out);

  CLI11_PARSE(app, argc, argv);

  if (cmd_validate->parsed()) {
    const ProblemSpec pb = load_problem(val_problem);
    std::cout << "{\"valid\": true, \"n\": " << pb.n << ", \"m\": " << pb.m
              << ", \"L\": " << pb.num_regimes() << ", \"inhomogeneous\": "
              << (pb.inhomogeneous() ? "true" : "false")
              << ", \"discount_r\": " << pb.discount_r << "}\n";
    std::cerr << "valid problem (" << pb.num_regimes() << " regimes, n=" << pb.n
              << ", m=" << pb.m << ")\n";
    return kExitOk;
  }

  if (cmd_stability->parsed()) {
    const ProblemSpec pb = load_problem(sta_problem);
    LinearSystem sys;
    if (sta_strategy.empty()) {
      sys = open_loop_system(pb);
    } else {
      sys = closed_loop_system(pb, load_strategy(sta_strategy));
    }
    const StabilityCertificate cert = check_l2_stable(sys);
    emit(cert, sta_out);
    std::cerr << (cert.stable ? "stable" : "unstable") << " (method " << to_string(cert.method)
              << ", abscissa " << *cert.spectral_abscissa << ")"
              << (cert.boundary_warning ? " [boundary case]" : "") << "\n";
    return cert.stable ? kExitOk : kExitUnstable;
  }

  if (cmd_stabilize->parsed()) {
    const ProblemSpec pb = load_problem(stb_problem);
    const FeedbackStrategy gamma = synthesize_stabilizer(pb);
    emit(gamma, stb_out);
    std::cerr << "stabilizer synthesized and certified\n";
    return kExitOk;
  }

  if (cmd_solve->parsed()) return run_solve(solve_flags);

  if (cmd_verify->parsed()) {
    const ProblemSpec pb = load_problem(ver_problem);
    const ProblemSpec work = pb.discount_r > 0.0 ? discount_transform(pb) : pb;
    const CareSolution sol = load_care_solution(ver_solution);
    const CareVerification v = verify_care(work, sol.P);
    std::cout << "{\"accepted\": " << (v.accepted ? "true" : "false")
              << ", \"residual_care\": [";
    for (size_t i = 0; i < v.residual_care.size(); ++i)
      std::cout << (i ? ", " : "") << v.residual_care[i];
    std::cout << "], \"residual_range\": [";
    for (size_t i = 0; i < v.residual_range.size(); ++i)
      std::cout << (i ? ", " : "") << v.residual_range[i];
    std::cout << "], \"n_min_eigs\": [";
    for (size_t i = 0; i < v.n_min_eigs.size(); ++i)
      std::cout << (i ? ", " : "") << v.n_min_eigs[i];
    std::cout << "], \"gain_stabilizes\": " << (v.gain_stabilizes ? "true" : "false") << "}\n";
    for (size_t i = 0; i < v.residual_care.size(); ++i)
      std::cerr << "regime " << (i + 1) << ": |E(P)| = " << v.residual_care[i] << "\n";
    std::cerr << (v.accepted ? "accepted" : "rejected") << "\n";
    return v.accepted ? kExitOk : kExitRejected;
  }

  if (cmd_synthesize->parsed()) {
    const ProblemSpec pb = load_problem(syn_problem);
    const ProblemSpec work = pb.discount_r > 0.0 ? discount_transform(pb) : pb;
    const CareSolution sol = load_care_solution(syn_solution);
    FeedbackStrategy strategy = build_closed_loop(work, sol);
    if (pb.discount_r > 0.0) strategy = undiscount_strategy(strategy, pb.discount_r);
    emit(strategy, syn_out);
    std::cerr << "strategy assembled\n";
    return kExitOk;
  }

  if (cmd_value->parsed()) {
    const ProblemSpec pb = load_problem(valf_problem);
    const ProblemSpec work = pb.discount_r > 0.0 ? discount_transform(pb) : pb;
    const CareSolution sol = load_care_solution(valf_solution);
    const ValueReport report = value_function(work, sol);
    const Vec x = parse_vector(valf_x);
    if (x.size() != work.n) throw ValidationError("x has wrong dimension");
    const int i = regime_index(valf_i, work);
    std::cout << "{\"value\": " << report.evaluate(x, i)
              << ", \"constant_term_divergent\": "
              << (report.constant_term_divergent ? "true" : "false") << "}\n";
    return kExitOk;
  }

  if (cmd_simulate->parsed()) {
    const ProblemSpec pb = load_problem(sim_problem);
    const FeedbackStrategy strategy = load_strategy(sim_strategy);
    SimulationConfig cfg;
    cfg.n_paths = sim_paths;
    cfg.horizon_T = sim_T;
    cfg.dt = sim_dt;
    cfg.master_seed = sim_seed;
    cfg.x0 = parse_vector(sim_x0);
    cfg.i0 = regime_index(sim_i0, pb);
    cfg.discount_r = pb.discount_r;

    std::optional<StationarityOracle> oracle;
    if (!sim_solution.empty()) {
      const CareSolution sol = load_care_solution(sim_solution);
      if (pb.inhomogeneous()) {
        const StationaryAdjoint adjoint = solve_stationary_adjoint(pb, sol);
        oracle = StationarityOracle{sol.P, stationary_rho_tilde(pb, sol.P, &adjoint)};
      } else {
        oracle = StationarityOracle{sol.P, stationary_rho_tilde(pb, sol.P, nullptr)};
      }
    }
    const SimResult result = simulate_paths(pb, strategy, cfg, oracle ? &*oracle : nullptr,
                                            thread_count(threads_flag));
    emit(result, sim_out);
    std::cerr << "cost " << result.cost_mean << " +- " << result.cost_stderr << " ("
              << result.n_paths_used << " paths)"
              << (result.cost_reliable ? "" : " [overflow: unreliable]") << "\n";
    return result.cost_reliable ? kExitOk : kExitOverflow;
  }

  return kExitInvalid;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const UnsupportedInhomogeneous& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const NotStabilizable& e) {
    std::cerr << "not stabilizable: " << e.what() << "\n";
    return kExitNotStabilizable;
  } catch (const Error& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return kExitSolverFailure;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return kExitSolverFailure;
  }
}

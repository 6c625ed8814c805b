#include "mjlq/model_io.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

#include "mjlq/errors.hpp"
#include "mjlq/numerics.hpp"

namespace mjlq {

using nlohmann::json;

namespace {

constexpr double kRowSumTol = 1e-12;
constexpr double kSymmetryTol = 1e-9;

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vec_to_json(const Vec& v) {
  json out = json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) out.push_back(v(k));
  return out;
}

Mat mat_from_json(const json& j, Eigen::Index rows, Eigen::Index cols, const std::string& name) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows)
    throw ValidationError(name + ": expected " + std::to_string(rows) + " rows");
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = j[static_cast<size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw ValidationError(name + ": expected " + std::to_string(cols) + " columns in row " +
                            std::to_string(r));
    for (Eigen::Index c = 0; c < cols; ++c) {
      const json& e = row[static_cast<size_t>(c)];
      if (!e.is_number()) throw ValidationError(name + ": non-numeric entry");
      m(r, c) = e.get<double>();
    }
  }
  return m;
}

Vec vec_from_json(const json& j, Eigen::Index size, const std::string& name) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != size)
    throw ValidationError(name + ": expected " + std::to_string(size) + " entries");
  Vec v(size);
  for (Eigen::Index k = 0; k < size; ++k) {
    const json& e = j[static_cast<size_t>(k)];
    if (!e.is_number()) throw ValidationError(name + ": non-numeric entry");
    v(k) = e.get<double>();
  }
  return v;
}

void require_finite(const Mat& m, const std::string& name) {
  if (!m.allFinite()) throw IoError("artifact field " + name + " is not finite-valued");
}

void require_finite(double v, const std::string& name) {
  if (!std::isfinite(v)) throw IoError("artifact field " + name + " is not finite-valued");
}

json parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError("malformed JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

void write_atomic(const json& j, const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename into " + path.string());
  }
}

std::string kind_of(const json& j) {
  if (!j.contains("kind") || !j["kind"].is_string()) return "";
  return j["kind"].get<std::string>();
}

void require_kind(const json& j, const std::string& kind, const std::filesystem::path& path) {
  if (kind_of(j) != kind)
    throw ValidationError(path.string() + ": expected artifact kind \"" + kind + "\"");
}

}  // namespace

void validate_problem(ProblemSpec& pb) {
  const int L = pb.generator.regimes();
  if (pb.n <= 0 || pb.m <= 0) throw ValidationError("n and m must be positive");
  if (L <= 0) throw ValidationError("at least one regime is required");
  if (pb.generator.pi.rows() != L || pb.generator.pi.cols() != L)
    throw ValidationError("generator must be square");
  if (pb.num_regimes() != L)
    throw ValidationError("regimes.length must equal the generator size " + std::to_string(L));
  if (pb.discount_r < 0.0) throw ValidationError("discount_r must be nonnegative");

  for (int i = 0; i < L; ++i) {
    double sum = 0.0;
    for (int j = 0; j < L; ++j) {
      if (i != j && pb.generator.pi(i, j) < 0.0)
        throw ValidationError("generator has a negative off-diagonal rate at (" +
                              std::to_string(i) + "," + std::to_string(j) + ")");
      sum += pb.generator.pi(i, j);
    }
    if (std::abs(sum) > kRowSumTol)
      throw ValidationError("generator row " + std::to_string(i) + " sums to " +
                            std::to_string(sum) + ", not 0");
    // Pin the row sum to exactly zero. The residue can sit below the ulp of
    // the large entries, so spend it on the smallest-magnitude entry, whose
    // resolution is finest; iterate until the sum (in evaluation order) is 0.
    for (int pass = 0; pass < 100; ++pass) {
      const double s = pb.generator.pi.row(i).sum();
      if (s == 0.0) break;
      int target = -1;
      double target_abs = std::numeric_limits<double>::infinity();
      for (int j = 0; j < L; ++j) {
        const double v = pb.generator.pi(i, j);
        if (v != 0.0 && std::abs(v) < target_abs && v - s != v) {
          target = j;
          target_abs = std::abs(v);
        }
      }
      if (target < 0) {
        // Residue below every entry's half-ulp: nudge the finest entry.
        for (int j = 0; j < L; ++j) {
          const double v = pb.generator.pi(i, j);
          if (v != 0.0 && std::abs(v) < target_abs) {
            target = j;
            target_abs = std::abs(v);
          }
        }
        if (target < 0) break;
        double& v = pb.generator.pi(i, target);
        v = std::nextafter(v, s > 0.0 ? -std::numeric_limits<double>::infinity()
                                      : std::numeric_limits<double>::infinity());
      } else {
        pb.generator.pi(i, target) -= s;
      }
    }
  }

  auto check_dims = [&](const Mat& mat, Eigen::Index r, Eigen::Index c, const char* name, int i) {
    if (mat.rows() != r || mat.cols() != c)
      throw ValidationError(std::string(name) + " has wrong dimensions in regime " +
                            std::to_string(i));
  };
  auto symmetrize_checked = [&](Mat& mat, const char* name, int i) {
    const double asym = (mat - mat.transpose()).norm();
    if (asym > kSymmetryTol)
      throw ValidationError(std::string(name) + " in regime " + std::to_string(i) +
                            " is asymmetric beyond tolerance (" + std::to_string(asym) + ")");
    mat = symmetrized(mat);
  };

  const bool inhom = pb.regimes.front().b.has_value();
  for (int i = 0; i < L; ++i) {
    RegimeData& rd = pb.regimes[static_cast<size_t>(i)];
    check_dims(rd.A, pb.n, pb.n, "A", i);
    check_dims(rd.B, pb.n, pb.m, "B", i);
    check_dims(rd.C, pb.n, pb.n, "C", i);
    check_dims(rd.D, pb.n, pb.m, "D", i);
    check_dims(rd.Q, pb.n, pb.n, "Q", i);
    check_dims(rd.S, pb.m, pb.n, "S", i);
    check_dims(rd.R, pb.m, pb.m, "R", i);
    symmetrize_checked(rd.Q, "Q", i);
    symmetrize_checked(rd.R, "R", i);

    const bool has_all = rd.b && rd.sigma && rd.q && rd.rho;
    const bool has_none = !rd.b && !rd.sigma && !rd.q && !rd.rho;
    if (!(has_all || has_none) || (inhom ? !has_all : !has_none))
      throw ValidationError("offsets b, sigma, q, rho must be present in every regime or absent "
                            "everywhere (regime " + std::to_string(i) + " differs)");
    if (rd.b) {
      if (rd.b->size() != pb.n || rd.sigma->size() != pb.n || rd.q->size() != pb.n ||
          rd.rho->size() != pb.m)
        throw ValidationError("offset vectors have wrong dimensions in regime " +
                              std::to_string(i));
    }
  }
}

ProblemSpec load_problem(const std::filesystem::path& path) {
  const json j = parse_file(path);
  ProblemSpec pb;
  try {
    if (!j.contains("n") || !j.contains("m") || !j.contains("L") || !j.contains("generator") ||
        !j.contains("regimes"))
      throw ValidationError("problem file must contain n, m, L, generator, regimes");
    pb.n = j["n"].get<int>();
    pb.m = j["m"].get<int>();
    const int L = j["L"].get<int>();
    if (pb.n <= 0 || pb.m <= 0 || L <= 0)
      throw ValidationError("n, m and L must be positive");
    pb.generator.pi = mat_from_json(j["generator"], L, L, "generator");
    pb.discount_r = j.value("discount_r", 0.0);

    const json& regimes = j["regimes"];
    if (!regimes.is_array() || static_cast<int>(regimes.size()) != L)
      throw ValidationError("regimes must be an array of length L");
    for (int i = 0; i < L; ++i) {
      const json& r = regimes[static_cast<size_t>(i)];
      RegimeData rd;
      rd.A = mat_from_json(r.at("A"), pb.n, pb.n, "A");
      rd.B = mat_from_json(r.at("B"), pb.n, pb.m, "B");
      rd.C = mat_from_json(r.at("C"), pb.n, pb.n, "C");
      rd.D = mat_from_json(r.at("D"), pb.n, pb.m, "D");
      rd.Q = mat_from_json(r.at("Q"), pb.n, pb.n, "Q");
      rd.S = mat_from_json(r.at("S"), pb.m, pb.n, "S");
      rd.R = mat_from_json(r.at("R"), pb.m, pb.m, "R");
      if (r.contains("b")) rd.b = vec_from_json(r["b"], pb.n, "b");
      if (r.contains("sigma")) rd.sigma = vec_from_json(r["sigma"], pb.n, "sigma");
      if (r.contains("q")) rd.q = vec_from_json(r["q"], pb.n, "q");
      if (r.contains("rho")) rd.rho = vec_from_json(r["rho"], pb.m, "rho");
      pb.regimes.push_back(std::move(rd));
    }
  } catch (const json::exception& e) {
    throw ParseError("problem file " + path.string() + ": " + e.what());
  }
  validate_problem(pb);
  return pb;
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

namespace {

json to_json(const CoupledMatrixSet& set) {
  json j;
  j["kind"] = "matrix_set";
  j["L"] = set.regimes();
  j["n"] = set.dim();
  json entries = json::array();
  for (const Mat& e : set.entries) {
    require_finite(e, "matrix_set entry");
    entries.push_back(mat_to_json(e));
  }
  j["entries"] = std::move(entries);
  return j;
}

CoupledMatrixSet matrix_set_from_json(const json& j) {
  const int L = j.at("L").get<int>();
  const int n = j.at("n").get<int>();
  CoupledMatrixSet set;
  for (int i = 0; i < L; ++i)
    set.entries.push_back(mat_from_json(j.at("entries").at(static_cast<size_t>(i)), n, n, "entry"));
  return set;
}

json to_json(const FeedbackStrategy& s) {
  json j;
  j["kind"] = "strategy";
  const int L = s.regimes();
  j["L"] = L;
  j["m"] = L > 0 ? static_cast<int>(s.theta[0].rows()) : 0;
  j["n"] = L > 0 ? static_cast<int>(s.theta[0].cols()) : 0;
  json theta = json::array(), nu = json::array();
  for (const Mat& t : s.theta) {
    require_finite(t, "theta");
    theta.push_back(mat_to_json(t));
  }
  for (const Vec& v : s.nu) {
    require_finite(v, "nu");
    nu.push_back(vec_to_json(v));
  }
  j["theta"] = std::move(theta);
  j["nu"] = std::move(nu);
  return j;
}

FeedbackStrategy strategy_from_json(const json& j) {
  const int L = j.at("L").get<int>();
  const int m = j.at("m").get<int>();
  const int n = j.at("n").get<int>();
  FeedbackStrategy s;
  for (int i = 0; i < L; ++i) {
    s.theta.push_back(mat_from_json(j.at("theta").at(static_cast<size_t>(i)), m, n, "theta"));
    s.nu.push_back(vec_from_json(j.at("nu").at(static_cast<size_t>(i)), m, "nu"));
  }
  return s;
}

json to_json(const CareSolution& c) {
  json j;
  j["kind"] = "care_solution";
  j["P"] = to_json(c.P);
  for (double r : c.residuals) require_finite(r, "residuals");
  j["residuals"] = c.residuals;
  j["n_margins"] = c.n_margins;
  j["theta"] = to_json(c.theta);
  j["stabilizing"] = c.stabilizing;
  json checkpoints = json::array();
  for (const CdreCheckpoint& cp : c.trace.checkpoints)
    checkpoints.push_back({{"T", cp.T},
                           {"delta", cp.delta},
                           {"max_residual", cp.max_residual},
                           {"min_n_margin", cp.min_n_margin}});
  json newton = json::array();
  for (const NewtonStep& st : c.trace.newton)
    newton.push_back({{"iter", st.iter}, {"max_residual", st.max_residual}});
  j["trace"] = {{"checkpoints", std::move(checkpoints)}, {"newton", std::move(newton)}};
  j["meta"] = {{"tol_convergence", c.meta.tol_convergence},
               {"tol_residual", c.meta.tol_residual},
               {"newton_iterations", c.meta.newton_iterations},
               {"wall_time_s", c.meta.wall_time_s}};
  return j;
}

CareSolution care_from_json(const json& j) {
  CareSolution c;
  c.P = matrix_set_from_json(j.at("P"));
  c.residuals = j.at("residuals").get<std::vector<double>>();
  c.n_margins = j.at("n_margins").get<std::vector<double>>();
  c.theta = strategy_from_json(j.at("theta"));
  c.stabilizing = j.at("stabilizing").get<bool>();
  for (const json& cp : j.at("trace").at("checkpoints"))
    c.trace.checkpoints.push_back({cp.at("T").get<double>(), cp.at("delta").get<double>(),
                                   cp.at("max_residual").get<double>(),
                                   cp.at("min_n_margin").get<double>()});
  for (const json& st : j.at("trace").at("newton"))
    c.trace.newton.push_back({st.at("iter").get<int>(), st.at("max_residual").get<double>()});
  const json& meta = j.at("meta");
  c.meta.tol_convergence = meta.at("tol_convergence").get<double>();
  c.meta.tol_residual = meta.at("tol_residual").get<double>();
  c.meta.newton_iterations = meta.at("newton_iterations").get<int>();
  c.meta.wall_time_s = meta.at("wall_time_s").get<double>();
  return c;
}

json to_json(const StabilityCertificate& cert) {
  json j;
  j["kind"] = "stability_certificate";
  j["stable"] = cert.stable;
  j["method"] = to_string(cert.method);
  if (cert.witness_P) j["witness_P"] = to_json(*cert.witness_P);
  if (cert.spectral_abscissa) j["spectral_abscissa"] = *cert.spectral_abscissa;
  if (cert.min_eig_P) j["min_eig_P"] = *cert.min_eig_P;
  j["boundary_warning"] = cert.boundary_warning;
  return j;
}

StabilityCertificate certificate_from_json(const json& j) {
  StabilityCertificate cert;
  cert.stable = j.at("stable").get<bool>();
  const std::string method = j.at("method").get<std::string>();
  if (method == "lyapunov") cert.method = StabilityMethod::lyapunov;
  else if (method == "spectral") cert.method = StabilityMethod::spectral;
  else if (method == "sign-sufficient") cert.method = StabilityMethod::sign_sufficient;
  else if (method == "sign-necessary") cert.method = StabilityMethod::sign_necessary;
  else throw ValidationError("unknown stability method " + method);
  if (j.contains("witness_P")) cert.witness_P = matrix_set_from_json(j["witness_P"]);
  if (j.contains("spectral_abscissa")) cert.spectral_abscissa = j["spectral_abscissa"].get<double>();
  if (j.contains("min_eig_P")) cert.min_eig_P = j["min_eig_P"].get<double>();
  cert.boundary_warning = j.value("boundary_warning", false);
  return cert;
}

json to_json(const SimResult& r) {
  require_finite(r.cost_mean, "cost_mean");
  json trace = json::array();
  for (const TracePoint& p : r.second_moment_trace)
    trace.push_back({p.t, p.second_moment, p.stderr_});
  json j;
  j["kind"] = "sim_result";
  j["cost_mean"] = r.cost_mean;
  j["cost_stderr"] = r.cost_stderr;
  j["second_moment_trace"] = std::move(trace);
  j["stationarity_residual"] = r.stationarity_residual;
  j["mean_state_norm"] = r.mean_state_norm;
  j["n_paths_used"] = r.n_paths_used;
  j["overflow_fraction"] = r.overflow_fraction;
  j["truncation_bias"] = r.truncation_bias;
  j["cost_reliable"] = r.cost_reliable;
  return j;
}

SimResult sim_result_from_json(const json& j) {
  SimResult r;
  r.cost_mean = j.at("cost_mean").get<double>();
  r.cost_stderr = j.at("cost_stderr").get<double>();
  for (const json& p : j.at("second_moment_trace"))
    r.second_moment_trace.push_back(
        {p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
  r.stationarity_residual = j.at("stationarity_residual").get<double>();
  r.mean_state_norm = j.at("mean_state_norm").get<double>();
  r.n_paths_used = j.at("n_paths_used").get<int64_t>();
  r.overflow_fraction = j.at("overflow_fraction").get<double>();
  r.truncation_bias = j.at("truncation_bias").get<double>();
  r.cost_reliable = j.at("cost_reliable").get<bool>();
  return r;
}

}  // namespace

void save_artifact(const CoupledMatrixSet& set, const std::filesystem::path& path) {
  write_atomic(to_json(set), path);
}
void save_artifact(const FeedbackStrategy& strategy, const std::filesystem::path& path) {
  write_atomic(to_json(strategy), path);
}
void save_artifact(const CareSolution& solution, const std::filesystem::path& path) {
  write_atomic(to_json(solution), path);
}
void save_artifact(const StabilityCertificate& cert, const std::filesystem::path& path) {
  write_atomic(to_json(cert), path);
}
void save_artifact(const SimResult& result, const std::filesystem::path& path) {
  write_atomic(to_json(result), path);
}

CoupledMatrixSet load_matrix_set(const std::filesystem::path& path) {
  const json j = parse_file(path);
  require_kind(j, "matrix_set", path);
  return matrix_set_from_json(j);
}
FeedbackStrategy load_strategy(const std::filesystem::path& path) {
  const json j = parse_file(path);
  require_kind(j, "strategy", path);
  return strategy_from_json(j);
}
CareSolution load_care_solution(const std::filesystem::path& path) {
  const json j = parse_file(path);
  require_kind(j, "care_solution", path);
  return care_from_json(j);
}
StabilityCertificate load_stability_certificate(const std::filesystem::path& path) {
  const json j = parse_file(path);
  require_kind(j, "stability_certificate", path);
  return certificate_from_json(j);
}
SimResult load_sim_result(const std::filesystem::path& path) {
  const json j = parse_file(path);
  require_kind(j, "sim_result", path);
  return sim_result_from_json(j);
}

std::string to_json_text(const CoupledMatrixSet& set) { return to_json(set).dump(2); }
std::string to_json_text(const FeedbackStrategy& strategy) { return to_json(strategy).dump(2); }
std::string to_json_text(const CareSolution& solution) { return to_json(solution).dump(2); }
std::string to_json_text(const StabilityCertificate& cert) { return to_json(cert).dump(2); }
std::string to_json_text(const SimResult& result) { return to_json(result).dump(2); }

}  // namespace mjlq

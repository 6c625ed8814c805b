#pragma once

#include <filesystem>
#include <string>

#include "mjlq/mcsim.hpp"
#include "mjlq/riccati.hpp"
#include "mjlq/stability.hpp"
#include "mjlq/types.hpp"

namespace mjlq {

/// Validates and normalizes a problem in place: Q and R symmetrized when the
/// asymmetry is at most 1e-9 (rejected above), generator rows corrected to sum
/// exactly to zero when the error is at most 1e-12 (rejected above), offsets
/// all-or-none across regimes. Throws ValidationError.
void validate_problem(ProblemSpec& pb);

/// Parses and validates a problem file. Throws ParseError on malformed input,
/// ValidationError on inconsistent data, IoError when unreadable.
ProblemSpec load_problem(const std::filesystem::path& path);

// Artifact persistence. Writes go to a temporary file in the target directory
// followed by an atomic rename, so no partial artifact survives a failure.
// All values must be finite. Round trips are bit-exact.
void save_artifact(const CoupledMatrixSet& set, const std::filesystem::path& path);
void save_artifact(const FeedbackStrategy& strategy, const std::filesystem::path& path);
void save_artifact(const CareSolution& solution, const std::filesystem::path& path);
void save_artifact(const StabilityCertificate& cert, const std::filesystem::path& path);
void save_artifact(const SimResult& result, const std::filesystem::path& path);

CoupledMatrixSet load_matrix_set(const std::filesystem::path& path);
FeedbackStrategy load_strategy(const std::filesystem::path& path);
CareSolution load_care_solution(const std::filesystem::path& path);
StabilityCertificate load_stability_certificate(const std::filesystem::path& path);
SimResult load_sim_result(const std::filesystem::path& path);

// In-memory JSON text, used by the CLI when writing reports to stdout.
std::string to_json_text(const CoupledMatrixSet& set);
std::string to_json_text(const FeedbackStrategy& strategy);
std::string to_json_text(const CareSolution& solution);
std::string to_json_text(const StabilityCertificate& cert);
std::string to_json_text(const SimResult& result);

}  // namespace mjlq

#pragma once

// Executable checks of the analytical claims behind the sparsifier:
// the alignment lower bound, layer-ranking coverage, the AoI error bound
// and the acceleration identity. Each check returns a per-claim verdict.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "scale/federation.hpp"
#include "scale/model.hpp"
#include "scale/sensitivity.hpp"

namespace scale {

enum class ClaimStatus { pass, fail, paper_discrepancy };
std::string_view to_string(ClaimStatus s);

struct ClaimReport {
  std::string claim_id;
  ClaimStatus status = ClaimStatus::pass;
  std::size_t instances = 0;
  nlohmann::json details = nlohmann::json::object();
  /// null when there is nothing to show.
  nlohmann::json counterexample;

  nlohmann::json to_json() const;
};

// --- alignment bound ------------------------------------------------------

/// rho^2 / 2; always below -1/2 ln(1 - rho^2).
double true_alignment_bound(double rho);
/// rho^2 / (2 (1 - rho^2)); the stronger form, which does not hold.
double printed_alignment_bound(double rho);

ClaimReport check_alignment_bound(std::size_t samples, std::uint64_t seed);

// --- coverage -------------------------------------------------------------

/// W_l = sum_n alpha_{l,n} W_{l,n} + xi_l with per-layer client weights.
struct SyntheticDecomposition {
  /// Every layer is carried by a dense(width, width) block.
  std::size_t width = 4;
  /// alpha[l][n]; each row sums to 1.
  std::vector<std::vector<double>> alpha;
  /// w[n][l]: client n's upload of layer l.
  std::vector<std::vector<std::vector<double>>> w;
  /// xi[l], with ||xi_l|| <= beta.
  std::vector<std::vector<double>> xi;
  double beta = 0.0;

  std::size_t num_layers() const { return alpha.size(); }
  std::size_t num_clients() const { return w.size(); }
  std::vector<double> global_layer(std::size_t l) const;
  Model global_model() const;
  /// Every client recorded with equal data size, so leave-one-out
  /// aggregates are plain means of the other clients.
  FederationHistory history() const;
};

/// Target client 0 gets target_alpha[l] of layer l; the other clients
/// share the rest equally. Client vectors are standard normal, xi_l is a
/// random direction scaled to norm beta.
SyntheticDecomposition make_decomposition(std::size_t clients, std::size_t width,
                                          std::span<const double> target_alpha, double beta, std::uint64_t seed);

/// Kendall tau-a between two score vectors.
double kendall_tau(std::span<const double> a, std::span<const double> b);

struct CoverageResult {
  SensitivityReport report;
  double covered = 0.0;  ///< sum of alpha over the selected layers
  double total = 0.0;    ///< sum of alpha over all layers
  double bound = 0.0;    ///< (1 - delta) * total
  /// Sensitivity ranking equals the alpha ranking.
  bool ordered = false;
  bool holds = false;
  double tau = 0.0;
};

CoverageResult coverage(const SyntheticDecomposition& d, std::size_t m_sel, double lambda = 0.5);

/// Planted-layer ranking plus the coverage inequality on random instances.
ClaimReport check_coverage(std::size_t instances, std::uint64_t seed);

// --- AoI error bound ------------------------------------------------------

enum class EffectivenessForm {
  proof,       ///< U = 1 / (g0 + g1 A)
  assumption,  ///< U = g0 + g1 A
};

struct ErrorBoundInput {
  /// ages[r][j] and s[r][j] per sensitive layer r and group j.
  std::vector<std::vector<double>> ages;
  std::vector<std::vector<double>> s;
  double gamma0 = 1.0;
  double gamma1 = 0.1;
  double s_max = 1.0;
};

struct ErrorBound {
  double lhs = 0.0;  ///< sum of s^2 U over groups
  double rhs = 0.0;  ///< (2 S_max / |L_s|) sum_l (1/G_l) sum_j s^2 / (g0 + g1 A)
  bool holds = false;
};

ErrorBound error_bound(const ErrorBoundInput& in, EffectivenessForm form);

ClaimReport check_error_bound(std::size_t instances, std::uint64_t seed);

// --- acceleration ---------------------------------------------------------

struct AccelerationInput {
  /// ages[l][j] over all L layers.
  std::vector<std::vector<double>> ages;
  std::vector<std::size_t> sensitive;
  double gamma0 = 1.0;
  double gamma1 = 0.1;
  double s = 0.5;
  /// Divide each mean age additionally by its layer count.
  bool aoi_paper_literal = false;
};

struct Acceleration {
  double uniform_sq = 0.0;      ///< ||uni - retrain||^2, term by term
  double dual_sq = 0.0;         ///< ||dual - retrain||^2, term by term
  double ratio_sq = 0.0;        ///< uniform_sq / dual_sq
  double closed_form = 0.0;     ///< (|L_s|^2 / L^2) * sum_all / sum_sen
  double mean_age = 0.0;        ///< over all groups
  double mean_age_sen = 0.0;    ///< over sensitive groups
  double final_lhs = 0.0;       ///< sqrt(ratio_sq)
  double final_rhs = 0.0;       ///< sqrt(L / |L_s|) * mean_age / mean_age_sen
  bool final_holds = false;
};

/// Throws DomainError unless 1 <= |L_s| < L.
Acceleration acceleration(const AccelerationInput& in);

ClaimReport check_acceleration(std::size_t instances, std::uint64_t seed, bool aoi_paper_literal = false);

struct TheoryOptions {
  std::size_t alignment_samples = 100000;
  std::size_t instances = 100;
  std::uint64_t seed = 42;
  bool aoi_paper_literal = false;
};

/// {"claims": [...], "ok": bool}; ok is false only when a claim FAILs.
nlohmann::json theory_report(const TheoryOptions& opt);

}  // namespace scale

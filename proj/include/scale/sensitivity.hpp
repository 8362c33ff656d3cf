#pragma once

// Per-layer sensitivity of the global model to one client.
//
// For each layer l and target client n:
//   rho   = Pearson(W_{l,n}, W_l)
//   S^a   = -1/2 ln(1 - rho^2)            (rho^2 clamped at 1 - 1e-6)
//   S^d   = KL(P(W_l) || P(W_{l,-n}))     (W_{l,-n}: size-weighted mean
//                                          of the other clients' uploads)
//   S     = lambda S^a + (1 - lambda) S^d
// and the top-M_sel layers by S form the sensitive set.

#include <cstddef>
#include <span>
#include <vector>

#include "scale/federation.hpp"
#include "scale/model.hpp"

namespace scale {

/// How a parameter vector is mapped onto the probability simplex for KL.
enum class DistributionScheme {
  softmax,        ///< exp(w - max w) / sum
  abs_smoothed,   ///< (|w| + 1e-8) / sum(|w| + 1e-8)
};

inline constexpr double kRhoSquaredCeiling = 1.0 - 1e-6;

/// Sample correlation; 0 when either vector has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

double alignment_score(double rho);

/// Size-weighted mean of layer l over every recorded client except n.
std::vector<double> loo_aggregate(const FederationHistory& history, std::size_t layer, std::size_t n);

std::vector<double> to_distribution(std::span<const double> w,
                                    DistributionScheme scheme = DistributionScheme::softmax);

/// KL(P || Q) in nats.
double kl(std::span<const double> p, std::span<const double> q);

double combined_score(double align, double impact, double lambda);

/// Descending score, ties to the lower layer index, truncated at min(m, L).
std::vector<std::size_t> select_top_m(std::span<const double> scores, std::size_t m);

/// Default M_sel = ceil(L / 3).
std::size_t default_m_sel(std::size_t num_layers);

struct LayerScore {
  std::size_t layer = 0;
  double rho = 0.0;
  double align = 0.0;
  double impact = 0.0;
  double combined = 0.0;
};

struct SensitivityReport {
  std::size_t target = 0;
  double lambda = 0.5;
  std::vector<LayerScore> layers;
  /// Sensitive layers, most sensitive first.
  std::vector<std::size_t> selected;

  double score(std::size_t layer) const { return layers.at(layer).combined; }
  bool is_selected(std::size_t layer) const;
  /// max_{l in L_s} S_l
  double max_selected_score() const;
};

SensitivityReport analyze(const FederationHistory& history, const Model& global, std::size_t n, double lambda,
                          std::size_t m_sel, DistributionScheme scheme = DistributionScheme::softmax);

}  // namespace scale

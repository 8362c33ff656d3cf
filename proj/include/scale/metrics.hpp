#pragma once

// Unlearning quality (RA, FA, FR) and the AoI-weighted communication cost.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scale/aoi.hpp"
#include "scale/dataset.hpp"
#include "scale/model.hpp"
#include "scale/ppo.hpp"

namespace scale {

/// Accuracy over D_r. Throws DomainError on an empty index set.
double remaining_accuracy(const Model& model, const Dataset& ds, std::span<const std::size_t> remain);

/// Accuracy over D_u. Throws DomainError on an empty index set.
double forgetting_accuracy(const Model& model, const Dataset& ds, std::span<const std::size_t> forget);

inline constexpr double kConfidenceFloor = 1e-8;

/// 1 - mean_i P'(y_i|x_i) / max(P(y_i|x_i), 1e-8). Not clamped; negative
/// values mean the unlearned model became more confident.
double forgetting_rate(const Model& original, const Model& unlearned, const Dataset& ds,
                       std::span<const std::size_t> forget);

/// True-label softmax probabilities, one per index.
std::vector<double> true_label_confidence(const Model& model, const Dataset& ds, std::span<const std::size_t> idx);

struct CommCost {
  /// Scalars carried by every group touch over the trajectory.
  double c_t = 0.0;
  /// Trajectory mean of the global AoI, in steps and in seconds.
  double mean_aoi_steps = 0.0;
  double mean_aoi_secs = 0.0;
  /// alpha_w * c_t + beta_w * mean_aoi_steps
  double objective = 0.0;
};

CommCost comm_overhead(std::span<const ActionRecord> actions, std::span<const AoiSample> aoi, double alpha_w,
                       double beta_w, double secs_per_step);

/// AoI trajectory of `steps` clock ticks with no touches at all.
std::vector<AoiSample> idle_trace(const GroupIndex& idx, std::size_t steps);

/// AoI trajectory when every tracked group is refreshed at step 1 and
/// then left alone: the schedule of methods that rewrite the whole model
/// in one shot (retraining, uniform pruning, gradient ascent).
std::vector<AoiSample> one_shot_trace(const GroupIndex& idx, std::size_t steps);

struct EvalReport {
  std::string method;
  std::string scenario;
  double ra = 0.0;
  double fa = 0.0;
  double fr = 0.0;
  double comm_ct = 0.0;
  double comm_objective = 0.0;
  double mean_aoi_steps = 0.0;
  double mean_aoi_secs = 0.0;
  double wall_secs = 0.0;
  std::uint64_t seed = 0;
};

}  // namespace scale

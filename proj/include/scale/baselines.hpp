#pragma once

// Reference unlearning methods compared against the learned sparsifier.

#include <cstddef>
#include <span>
#include <vector>

#include "scale/dataset.hpp"
#include "scale/model.hpp"

namespace scale {

struct UniformResult {
  Model model;
  std::size_t zeroed = 0;
  /// Scalars in groups that received a nonzero share of the budget.
  std::size_t transmitted = 0;
  std::vector<std::size_t> zeroed_per_layer;
};

/// Splits `budget` zeroings equally over all layers and, within a layer,
/// equally over its G groups; shares that exceed what a layer or group can
/// still give are redistributed over the rest (water-filling). Each group
/// is magnitude-pruned like sparsify(). Throws DomainError when the budget
/// exceeds the model's nonzero count.
UniformResult baseline_uniform(const Model& model, std::size_t budget, std::size_t groups_per_layer);

/// Equal split of `total` over slots with the given capacities; leftovers
/// from saturated slots are re-split over the others. Remainders go to the
/// lowest-index open slots.
std::vector<std::size_t> water_fill(std::size_t total, std::span<const std::size_t> capacity);

struct AscentResult {
  Model model;
  /// Loss on D_u before the first step and after each step.
  std::vector<double> losses;
  /// Steps whose update had to be projected back onto the norm ball.
  std::size_t projections = 0;
};

/// Full-batch gradient ascent on the forget-set loss. After every step the
/// parameter vector is projected onto the ball of twice the original norm.
/// Throws NumericError (with the offending layer) if parameters stop being
/// finite.
AscentResult baseline_grad_ascent(const Model& model, const Dataset& ds, std::span<const std::size_t> forget,
                                  std::size_t steps, double eta_u);

}  // namespace scale

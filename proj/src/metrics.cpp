#include "scale/metrics.hpp"

#include <algorithm>

#include "scale/error.hpp"
#include "scale/federation.hpp"

namespace scale {

double remaining_accuracy(const Model& model, const Dataset& ds, std::span<const std::size_t> remain) {
  if (remain.empty()) throw DomainError("remaining accuracy is undefined on an empty D_r");
  return accuracy(model, ds, remain);
}

double forgetting_accuracy(const Model& model, const Dataset& ds, std::span<const std::size_t> forget) {
  if (forget.empty()) throw DomainError("forgetting accuracy is undefined on an empty D_u");
  return accuracy(model, ds, forget);
}

std::vector<double> true_label_confidence(const Model& model, const Dataset& ds, std::span<const std::size_t> idx) {
  const Batch b = make_batch(ds, idx);
  const Matrix logits = forward(model, b.inputs);
  std::vector<double> probs(logits.cols), out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    softmax(logits.row(i), probs);
    out[i] = probs[static_cast<std::size_t>(b.labels[i])];
  }
  return out;
}

double forgetting_rate(const Model& original, const Model& unlearned, const Dataset& ds,
                       std::span<const std::size_t> forget) {
  if (forget.empty()) throw DomainError("forgetting rate is undefined on an empty D_u");
  const auto before = true_label_confidence(original, ds, forget);
  const auto after = true_label_confidence(unlearned, ds, forget);
  double acc = 0.0;
  for (std::size_t i = 0; i < forget.size(); ++i) acc += after[i] / std::max(before[i], kConfidenceFloor);
  return 1.0 - acc / static_cast<double>(forget.size());
}

CommCost comm_overhead(std::span<const ActionRecord> actions, std::span<const AoiSample> aoi, double alpha_w,
                       double beta_w, double secs_per_step) {
  if (alpha_w < 0.0 || beta_w < 0.0) throw DomainError("communication weights must be non-negative");
  if (secs_per_step < 0.0) throw DomainError("secs_per_step must be non-negative");
  CommCost c;
  for (const auto& a : actions) c.c_t += static_cast<double>(a.transmitted);
  if (!aoi.empty()) {
    double s = 0.0;
    for (const auto& x : aoi) s += x.mean;
    c.mean_aoi_steps = s / static_cast<double>(aoi.size());
  }
  c.mean_aoi_secs = c.mean_aoi_steps * secs_per_step;
  c.objective = alpha_w * c.c_t + beta_w * c.mean_aoi_steps;
  return c;
}

namespace {

AoiSample sample_of(const AoiLedger& led) {
  return AoiSample{static_cast<std::size_t>(led.now()), static_cast<double>(led.sum_age()), global_aoi(led),
                   static_cast<double>(led.max_age())};
}

}  // namespace

std::vector<AoiSample> idle_trace(const GroupIndex& idx, std::size_t steps) {
  AoiLedger led(idx);
  std::vector<AoiSample> out;
  for (std::size_t t = 0; t < steps; ++t) {
    led.advance();
    out.push_back(sample_of(led));
  }
  return out;
}

std::vector<AoiSample> one_shot_trace(const GroupIndex& idx, std::size_t steps) {
  AoiLedger led(idx);
  const auto all = idx.all_groups();
  std::vector<AoiSample> out;
  for (std::size_t t = 0; t < steps; ++t) {
    led.advance();
    if (t == 0) led.touch(all);
    out.push_back(sample_of(led));
  }
  return out;
}

}  // namespace scale

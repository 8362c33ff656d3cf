#include "scale/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "scale/error.hpp"
#include "scale/kernels.hpp"

namespace scale {

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("pearson: length mismatch");
  if (a.size() < 2) throw ShapeError("pearson: need at least two values");
  const double n = static_cast<double>(a.size());
  const double ma = kernels::sum(a) / n;
  const double mb = kernels::sum(b) / n;
  std::vector<double> ca(a.begin(), a.end()), cb(b.begin(), b.end());
  for (auto& v : ca) v -= ma;
  for (auto& v : cb) v -= mb;
  const double saa = kernels::dot(ca, ca);
  const double sbb = kernels::dot(cb, cb);
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  const double r = kernels::dot(ca, cb) / std::sqrt(saa * sbb);
  return std::clamp(r, -1.0, 1.0);
}

double alignment_score(double rho) {
  const double r2 = std::min(rho * rho, kRhoSquaredCeiling);
  return -0.5 * std::log1p(-r2);
}

std::vector<double> loo_aggregate(const FederationHistory& history, std::size_t layer, std::size_t n) {
  std::vector<double> acc;
  std::size_t total = 0;
  for (const auto& [k, rec] : history.clients) {
    if (k == n) continue;
    total += rec.data_size;
  }
  if (total == 0) {
    throw DomainError("leave-one-out aggregate undefined: no client other than " + std::to_string(n) +
                      " in history");
  }
  for (const auto& [k, rec] : history.clients) {
    if (k == n) continue;
    const auto p = rec.model.params(layer);
    if (acc.empty()) acc.assign(p.size(), 0.0);
    kernels::axpy(static_cast<double>(rec.data_size) / static_cast<double>(total), p, acc);
  }
  return acc;
}

std::vector<double> to_distribution(std::span<const double> w, DistributionScheme scheme) {
  if (w.empty()) throw ShapeError("to_distribution: empty vector");
  std::vector<double> p(w.size());
  if (scheme == DistributionScheme::softmax) {
    softmax(w, p);
    return p;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    p[i] = std::abs(w[i]) + 1e-8;
    total += p[i];
  }
  for (auto& v : p) v /= total;
  return p;
}

double kl(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("kl: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) acc += p[i] * std::log(p[i] / q[i]);
  }
  return std::max(acc, 0.0);
}

double combined_score(double align, double impact, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw DomainError("lambda must lie in [0, 1]");
  return lambda * align + (1.0 - lambda) * impact;
}

std::vector<std::size_t> select_top_m(std::span<const double> scores, std::size_t m) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(std::min(m, order.size()));
  return order;
}

std::size_t default_m_sel(std::size_t num_layers) { return (num_layers + 2) / 3; }

bool SensitivityReport::is_selected(std::size_t layer) const {
  return std::find(selected.begin(), selected.end(), layer) != selected.end();
}

double SensitivityReport::max_selected_score() const {
  double mx = 0.0;
  bool first = true;
  for (std::size_t l : selected) {
    if (first || layers[l].combined > mx) mx = layers[l].combined;
    first = false;
  }
  return mx;
}

SensitivityReport analyze(const FederationHistory& history, const Model& global, std::size_t n, double lambda,
                          std::size_t m_sel, DistributionScheme scheme) {
  if (!history.contains(n)) throw DomainError("client " + std::to_string(n) + " has no upload in the history");
  if (m_sel < 1) throw DomainError("M_sel must be >= 1");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw DomainError("lambda must lie in [0, 1]");
  const Model& local = history.at(n).model;
  if (!local.congruent(global)) throw ShapeError("client model is not congruent with the global model");

  SensitivityReport rep;
  rep.target = n;
  rep.lambda = lambda;
  std::vector<double> scores;
  for (std::size_t l = 0; l < global.num_layers(); ++l) {
    LayerScore s;
    s.layer = l;
    const auto wg = global.params(l);
    s.rho = pearson(local.params(l), wg);
    s.align = alignment_score(s.rho);
    const std::vector<double> without = loo_aggregate(history, l, n);
    s.impact = kl(to_distribution(wg, scheme), to_distribution(without, scheme));
    s.combined = combined_score(s.align, s.impact, lambda);
    scores.push_back(s.combined);
    rep.layers.push_back(s);
  }
  rep.selected = select_top_m(scores, m_sel);
  return rep;
}

}  // namespace scale

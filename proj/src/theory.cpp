#include "scale/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "scale/error.hpp"
#include "scale/rng.hpp"

namespace scale {

std::string_view to_string(ClaimStatus s) {
  switch (s) {
    case ClaimStatus::pass: return "PASS";
    case ClaimStatus::fail: return "FAIL";
    case ClaimStatus::paper_discrepancy: return "PAPER-DISCREPANCY";
  }
  return "?";
}

nlohmann::json ClaimReport::to_json() const {
  nlohmann::json j;
  j["claim_id"] = claim_id;
  j["status"] = std::string(to_string(status));
  j["instances"] = instances;
  j["details"] = details;
  if (!counterexample.is_null()) j["counterexample"] = counterexample;
  return j;
}

// ---------------------------------------------------------------------------

double true_alignment_bound(double rho) { return rho * rho / 2.0; }

double printed_alignment_bound(double rho) { return rho * rho / (2.0 * (1.0 - rho * rho)); }

ClaimReport check_alignment_bound(std::size_t samples, std::uint64_t seed) {
  ClaimReport rep;
  rep.claim_id = "alignment_lower_bound";
  rep.instances = samples;
  Rng rng(seed);

  std::size_t true_fail = 0, printed_fail = 0;
  double min_abs = 1.0, max_abs = 0.0;
  nlohmann::json first_true_fail, first_printed_fail;
  for (std::size_t i = 0; i < samples; ++i) {
    double rho = rng.uniform(-1.0, 1.0);
    const double sa = alignment_score(rho);
    if (sa < true_alignment_bound(rho)) {
      if (true_fail++ == 0) first_true_fail = {{"rho", rho}, {"s_a", sa}, {"bound", true_alignment_bound(rho)}};
    }
    if (rho * rho < kRhoSquaredCeiling && sa < printed_alignment_bound(rho)) {
      if (printed_fail++ == 0) {
        first_printed_fail = {{"rho", rho}, {"s_a", sa}, {"printed_bound", printed_alignment_bound(rho)}};
      }
      min_abs = std::min(min_abs, std::abs(rho));
      max_abs = std::max(max_abs, std::abs(rho));
    }
  }

  const double r = std::sqrt(0.5);
  const double sa_half = alignment_score(r);
  const bool zero_tight = alignment_score(0.0) == 0.0 && true_alignment_bound(0.0) == 0.0;
  const bool half_ok = sa_half >= true_alignment_bound(r);
  const bool half_printed_fails = sa_half < printed_alignment_bound(r);

  rep.details = {{"true_bound_violations", true_fail},
                 {"printed_bound_violations", printed_fail},
                 {"printed_violation_abs_rho_range", printed_fail ? nlohmann::json{min_abs, max_abs} : nlohmann::json()},
                 {"rho0_tight", zero_tight},
                 {"rho_sq_half", {{"s_a", sa_half},
                                  {"true_bound", true_alignment_bound(r)},
                                  {"printed_bound", printed_alignment_bound(r)}}}};

  if (true_fail > 0 || !zero_tight || !half_ok) {
    rep.status = ClaimStatus::fail;
    rep.counterexample = true_fail ? first_true_fail : nlohmann::json{{"rho", r}, {"s_a", sa_half}};
  } else if (printed_fail > 0 || half_printed_fails) {
    rep.status = ClaimStatus::paper_discrepancy;
    rep.counterexample = half_printed_fails
                             ? nlohmann::json{{"rho", r}, {"s_a", sa_half}, {"printed_bound", printed_alignment_bound(r)}}
                             : first_printed_fail;
  }
  return rep;
}

// ---------------------------------------------------------------------------

std::vector<double> SyntheticDecomposition::global_layer(std::size_t l) const {
  std::vector<double> g = xi.at(l);
  for (std::size_t n = 0; n < num_clients(); ++n)
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += alpha[l][n] * w[n][l][i];
  return g;
}

namespace {

Model carrier(std::size_t layers, std::size_t width) {
  std::vector<LayerSpec> specs(layers, LayerSpec::dense(width, width));
  specs.back().activation = Activation::none;
  return Model(ArchId::custom, std::move(specs));
}

}  // namespace

Model SyntheticDecomposition::global_model() const {
  Model m = carrier(num_layers(), width);
  for (std::size_t l = 0; l < num_layers(); ++l) m.layer_write(l, global_layer(l));
  return m;
}

FederationHistory SyntheticDecomposition::history() const {
  FederationHistory h;
  for (std::size_t n = 0; n < num_clients(); ++n) {
    Model m = carrier(num_layers(), width);
    for (std::size_t l = 0; l < num_layers(); ++l) m.layer_write(l, w[n][l]);
    h.record(n, std::move(m), 1, 1);
  }
  return h;
}

SyntheticDecomposition make_decomposition(std::size_t clients, std::size_t width,
                                          std::span<const double> target_alpha, double beta, std::uint64_t seed) {
  if (clients < 2) throw DomainError("a decomposition needs at least two clients");
  if (target_alpha.empty()) throw DomainError("a decomposition needs at least one layer");
  if (beta < 0.0) throw DomainError("beta must be non-negative");
  SyntheticDecomposition d;
  d.width = width;
  d.beta = beta;
  const std::size_t L = target_alpha.size();
  const std::size_t dim = width * width + width;
  Rng rng(seed);
  for (double a : target_alpha) {
    if (!(a >= 0.0 && a <= 1.0)) throw DomainError("client weights must lie in [0, 1]");
    std::vector<double> row(clients, (1.0 - a) / static_cast<double>(clients - 1));
    row[0] = a;
    d.alpha.push_back(std::move(row));
  }
  d.w.assign(clients, std::vector<std::vector<double>>(L, std::vector<double>(dim)));
  for (auto& client : d.w)
    for (auto& layer : client)
      for (double& v : layer) v = rng.normal();
  for (std::size_t l = 0; l < L; ++l) {
    std::vector<double> x(dim);
    double n2 = 0.0;
    for (double& v : x) {
      v = rng.normal();
      n2 += v * v;
    }
    const double f = n2 > 0.0 ? beta / std::sqrt(n2) : 0.0;
    for (double& v : x) v *= f;
    d.xi.push_back(std::move(x));
  }
  return d;
}

double kendall_tau(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("kendall_tau: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) return 1.0;
  auto sgn = [](double x) { return (x > 0.0) - (x < 0.0); };
  long long acc = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) acc += sgn(a[i] - a[j]) * sgn(b[i] - b[j]);
  return static_cast<double>(acc) / (static_cast<double>(n * (n - 1)) / 2.0);
}

CoverageResult coverage(const SyntheticDecomposition& d, std::size_t m_sel, double lambda) {
  CoverageResult res;
  res.report = analyze(d.history(), d.global_model(), 0, lambda, m_sel);
  const std::size_t L = d.num_layers();
  std::vector<double> scores(L), alpha(L);
  for (std::size_t l = 0; l < L; ++l) {
    scores[l] = res.report.score(l);
    alpha[l] = d.alpha[l][0];
    res.total += alpha[l];
  }
  for (std::size_t l : res.report.selected) res.covered += alpha[l];
  const double delta = static_cast<double>(L - res.report.selected.size()) / static_cast<double>(L);
  res.bound = (1.0 - delta) * res.total;
  res.holds = res.covered >= res.bound - 1e-12;
  res.ordered = select_top_m(scores, L) == select_top_m(alpha, L);
  res.tau = kendall_tau(scores, alpha);
  return res;
}

ClaimReport check_coverage(std::size_t instances, std::uint64_t seed) {
  ClaimReport rep;
  rep.claim_id = "layer_ranking_coverage";
  rep.instances = instances;

  constexpr std::size_t kLayers = 4, kClients = 5, kWidth = 4;
  std::size_t planted_hits = 0;
  for (std::size_t i = 0; i < instances; ++i) {
    Rng rng(derive_seed(seed, 1, i));
    const std::size_t dominant = rng.below(kLayers);
    std::vector<double> a(kLayers, 0.1);
    a[dominant] = 0.9;
    const auto d = make_decomposition(kClients, kWidth, a, 0.05, derive_seed(seed, 2, i));
    const auto c = coverage(d, 1);
    if (c.report.selected.front() == dominant) ++planted_hits;
  }

  std::size_t ordered = 0, ordered_holds = 0;
  double tau_sum = 0.0;
  std::size_t unordered = 0;
  nlohmann::json counter;
  for (std::size_t i = 0; i < instances; ++i) {
    Rng rng(derive_seed(seed, 3, i));
    const std::size_t L = 3 + rng.below(4);
    std::vector<double> a(L);
    for (double& v : a) v = rng.uniform(0.05, 0.95);
    const auto d = make_decomposition(kClients, kWidth, a, 0.05, derive_seed(seed, 4, i));
    const auto c = coverage(d, default_m_sel(L));
    if (c.ordered) {
      ++ordered;
      if (c.holds) {
        ++ordered_holds;
      } else if (counter.is_null()) {
        counter = {{"instance", i}, {"covered", c.covered}, {"bound", c.bound}};
      }
    } else {
      ++unordered;
      tau_sum += c.tau;
    }
  }

  const std::size_t need = (95 * instances + 99) / 100;
  rep.details = {{"planted_first", planted_hits},
                 {"planted_required", need},
                 {"ordered_instances", ordered},
                 {"ordered_bound_holds", ordered_holds},
                 {"unordered_instances", unordered},
                 {"unordered_mean_kendall_tau", unordered ? tau_sum / static_cast<double>(unordered) : 1.0}};
  const bool ok = planted_hits >= need && ordered_holds == ordered;
  rep.status = ok ? ClaimStatus::pass : ClaimStatus::fail;
  if (!ok) {
    rep.counterexample = counter.is_null() ? nlohmann::json{{"planted_first", planted_hits}} : counter;
  }
  return rep;
}

// ---------------------------------------------------------------------------

ErrorBound error_bound(const ErrorBoundInput& in, EffectivenessForm form) {
  if (in.ages.size() != in.s.size() || in.ages.empty()) throw ShapeError("error_bound: ages and plan must align");
  if (!(in.gamma0 > 0.0 && in.gamma1 > 0.0)) throw DomainError("effectiveness coefficients must be positive");
  ErrorBound eb;
  double inner = 0.0;
  for (std::size_t r = 0; r < in.ages.size(); ++r) {
    if (in.ages[r].size() != in.s[r].size() || in.ages[r].empty()) throw ShapeError("error_bound: ragged layer");
    double layer = 0.0;
    for (std::size_t j = 0; j < in.ages[r].size(); ++j) {
      const double eff = in.gamma0 + in.gamma1 * in.ages[r][j];
      const double s2 = in.s[r][j] * in.s[r][j];
      eb.lhs += s2 * (form == EffectivenessForm::proof ? 1.0 / eff : eff);
      layer += s2 / eff;
    }
    inner += layer / static_cast<double>(in.ages[r].size());
  }
  eb.rhs = 2.0 * in.s_max / static_cast<double>(in.ages.size()) * inner;
  eb.holds = eb.lhs <= eb.rhs + 1e-12 * std::max(1.0, eb.rhs);
  return eb;
}

namespace {

ErrorBoundInput random_plan(Rng& rng) {
  ErrorBoundInput in;
  const std::size_t layers = 1 + rng.below(4);
  for (std::size_t r = 0; r < layers; ++r) {
    const std::size_t g = 1 + rng.below(8);
    std::vector<double> a(g), s(g);
    for (std::size_t j = 0; j < g; ++j) {
      a[j] = static_cast<double>(rng.below(51));
      s[j] = rng.uniform(0.05, 1.0);
    }
    in.ages.push_back(std::move(a));
    in.s.push_back(std::move(s));
  }
  in.gamma0 = rng.uniform(0.1, 2.0);
  in.gamma1 = rng.uniform(0.01, 1.0);
  in.s_max = rng.uniform(0.5, 5.0);
  return in;
}

}  // namespace

ClaimReport check_error_bound(std::size_t instances, std::uint64_t seed) {
  ClaimReport rep;
  rep.claim_id = "aoi_error_bound";
  rep.instances = instances;
  Rng rng(seed);

  // One layer, one group, equal ages: the bound reduces to 2 S_max >= 1.
  bool reduction_ok = true;
  for (double smax : {0.25, 0.5, 0.75, 3.0}) {
    ErrorBoundInput in{{{7.0}}, {{0.6}}, 0.8, 0.3, smax};
    reduction_ok = reduction_ok && error_bound(in, EffectivenessForm::proof).holds == (2.0 * smax >= 1.0);
  }

  std::size_t proof_holds = 0, assumption_holds = 0, monotone_ok = 0, zero_ok = 0;
  nlohmann::json step_counter;
  for (std::size_t i = 0; i < instances; ++i) {
    ErrorBoundInput in = random_plan(rng);
    const ErrorBound p = error_bound(in, EffectivenessForm::proof);
    const ErrorBound a = error_bound(in, EffectivenessForm::assumption);
    proof_holds += p.holds ? 1 : 0;
    assumption_holds += a.holds ? 1 : 0;

    ErrorBoundInput older = in;
    for (auto& layer : older.ages)
      for (double& v : layer) v *= 2.0;
    const ErrorBound po = error_bound(older, EffectivenessForm::proof);
    monotone_ok += (po.lhs <= p.lhs && po.rhs <= p.rhs) ? 1 : 0;

    ErrorBoundInput idle = in;
    for (auto& layer : idle.s) std::fill(layer.begin(), layer.end(), 0.0);
    const ErrorBound pz = error_bound(idle, EffectivenessForm::proof);
    zero_ok += (pz.lhs == 0.0 && pz.rhs == 0.0) ? 1 : 0;

    // The per-group step E||dW||^2 = s^2 U <= s^2 / (g0 + g1 A) only holds
    // for the decreasing form of U.
    if (step_counter.is_null()) {
      for (std::size_t r = 0; r < in.ages.size() && step_counter.is_null(); ++r)
        for (std::size_t j = 0; j < in.ages[r].size(); ++j) {
          const double eff = in.gamma0 + in.gamma1 * in.ages[r][j];
          const double s2 = in.s[r][j] * in.s[r][j];
          if (s2 * eff > s2 / eff) {
            step_counter = {{"instance", i},     {"age", in.ages[r][j]},         {"s", in.s[r][j]},
                            {"gamma0", in.gamma0}, {"gamma1", in.gamma1},        {"s2_u_assumption", s2 * eff},
                            {"s2_u_proof", s2 / eff}};
            break;
          }
        }
    }
  }

  rep.details = {{"effectiveness_form_for_bound", "1/(gamma0+gamma1*A)"},
                 {"single_group_reduction_ok", reduction_ok},
                 {"bound_holds_proof_form", proof_holds},
                 {"bound_holds_assumption_form", assumption_holds},
                 {"age_doubling_monotone", monotone_ok},
                 {"zero_ratio_zero_error", zero_ok}};
  if (!reduction_ok || monotone_ok != instances || zero_ok != instances) {
    rep.status = ClaimStatus::fail;
  } else if (!step_counter.is_null()) {
    rep.status = ClaimStatus::paper_discrepancy;
    rep.counterexample = step_counter;
  }
  return rep;
}

// ---------------------------------------------------------------------------

Acceleration acceleration(const AccelerationInput& in) {
  const std::size_t L = in.ages.size();
  const std::size_t M = in.sensitive.size();
  if (M < 1 || M >= L) throw DomainError("acceleration needs 1 <= |L_s| < L");
  if (!(in.gamma0 > 0.0 && in.gamma1 >= 0.0)) throw DomainError("effectiveness coefficients out of range");
  std::vector<char> sen(L, 0);
  for (std::size_t l : in.sensitive) {
    if (l >= L || sen[l]) throw DomainError("sensitive layers must be distinct and in range");
    sen[l] = 1;
  }

  Acceleration acc;
  const double s2 = in.s * in.s;
  const double Lf = static_cast<double>(L), Mf = static_cast<double>(M);
  double sum_all = 0.0, sum_sen = 0.0;
  double age_all = 0.0, age_sen = 0.0;
  std::size_t n_all = 0, n_sen = 0;
  for (std::size_t l = 0; l < L; ++l) {
    const auto& ages = in.ages[l];
    if (ages.empty()) throw ShapeError("acceleration: layer without groups");
    const double G = static_cast<double>(ages.size());
    double inner = 0.0;
    for (double a : ages) {
      const double eff = in.gamma0 + in.gamma1 * a;
      inner += 1.0 / eff;
      acc.uniform_sq += s2 / (Lf * Lf * G * eff);
      if (sen[l]) acc.dual_sq += s2 / (Mf * Mf * G * eff);
      age_all += a;
      ++n_all;
      if (sen[l]) {
        age_sen += a;
        ++n_sen;
      }
    }
    sum_all += inner / G;
    if (sen[l]) sum_sen += inner / G;
  }
  acc.ratio_sq = acc.uniform_sq / acc.dual_sq;
  acc.closed_form = (Mf * Mf) / (Lf * Lf) * (sum_all / sum_sen);
  acc.mean_age = age_all / static_cast<double>(n_all);
  acc.mean_age_sen = age_sen / static_cast<double>(n_sen);
  if (in.aoi_paper_literal) {
    acc.mean_age /= Lf;
    acc.mean_age_sen /= Mf;
  }
  acc.final_lhs = std::sqrt(acc.ratio_sq);
  acc.final_rhs = acc.mean_age_sen > 0.0 ? std::sqrt(Lf / Mf) * acc.mean_age / acc.mean_age_sen
                                         : std::numeric_limits<double>::infinity();
  acc.final_holds = acc.final_lhs >= acc.final_rhs;
  return acc;
}

ClaimReport check_acceleration(std::size_t instances, std::uint64_t seed, bool paper_literal) {
  ClaimReport rep;
  rep.claim_id = "acceleration_identity";
  rep.instances = instances;
  Rng rng(seed);

  // Equal ages, L = 4, |L_s| = 2: (4 / 16) * (4 / 2) = 0.5.
  AccelerationInput eq{{{3, 3}, {3, 3, 3}, {3}, {3, 3}}, {0, 2}, 1.0, 0.2, 0.4, paper_literal};
  const bool equal_ages_ok = std::abs(acceleration(eq).ratio_sq - 0.5) <= 1e-12;

  // Without the age term the ratio cannot depend on ages.
  AccelerationInput flat_a{{{1, 9}, {4}, {30, 2, 5}}, {1}, 0.7, 0.0, 0.3, paper_literal};
  AccelerationInput flat_b = flat_a;
  for (auto& layer : flat_b.ages)
    for (double& v : layer) v = v * 3.0 + 11.0;
  const bool ages_cancel = std::abs(acceleration(flat_a).ratio_sq - acceleration(flat_b).ratio_sq) <= 1e-12;

  std::size_t identity_ok = 0, final_ok = 0;
  double worst = 0.0;
  nlohmann::json counter, final_counter;
  for (std::size_t i = 0; i < instances; ++i) {
    AccelerationInput in;
    in.aoi_paper_literal = paper_literal;
    const std::size_t L = 2 + rng.below(7);
    for (std::size_t l = 0; l < L; ++l) {
      std::vector<double> ages(1 + rng.below(8));
      for (double& a : ages) a = static_cast<double>(1 + rng.below(50));
      in.ages.push_back(std::move(ages));
    }
    std::vector<std::size_t> layers(L);
    std::iota(layers.begin(), layers.end(), std::size_t{0});
    rng.shuffle(layers);
    layers.resize(1 + rng.below(L - 1));
    std::sort(layers.begin(), layers.end());
    in.sensitive = layers;
    in.gamma0 = rng.uniform(0.1, 2.0);
    in.gamma1 = rng.uniform(0.01, 1.0);
    in.s = rng.uniform(0.05, 1.0);

    const Acceleration a = acceleration(in);
    const double err = std::abs(a.ratio_sq - a.closed_form) / std::max(1.0, std::abs(a.closed_form));
    worst = std::max(worst, err);
    if (err <= 1e-10) {
      ++identity_ok;
    } else if (counter.is_null()) {
      counter = {{"instance", i}, {"ratio_sq", a.ratio_sq}, {"closed_form", a.closed_form}};
    }
    if (a.final_holds) {
      ++final_ok;
    } else if (final_counter.is_null()) {
      final_counter = {{"instance", i}, {"lhs", a.final_lhs}, {"rhs", a.final_rhs}};
    }
  }

  rep.details = {{"identity_holds", identity_ok},
                 {"max_relative_error", worst},
                 {"equal_ages_ratio_half", equal_ages_ok},
                 {"ages_cancel_without_age_term", ages_cancel},
                 {"final_inequality_holds", final_ok},
                 {"final_inequality_fails", instances - final_ok},
                 {"final_inequality_example_failure", final_counter}};
  const bool ok = identity_ok == instances && equal_ages_ok && ages_cancel;
  rep.status = ok ? ClaimStatus::pass : ClaimStatus::fail;
  if (!ok) rep.counterexample = counter.is_null() ? nlohmann::json{{"worst_error", worst}} : counter;
  return rep;
}

nlohmann::json theory_report(const TheoryOptions& opt) {
  std::vector<ClaimReport> claims;
  claims.push_back(check_alignment_bound(opt.alignment_samples, derive_seed(opt.seed, 1)));
  claims.push_back(check_coverage(opt.instances, derive_seed(opt.seed, 2)));
  claims.push_back(check_error_bound(opt.instances, derive_seed(opt.seed, 3)));
  claims.push_back(check_acceleration(opt.instances, derive_seed(opt.seed, 4), opt.aoi_paper_literal));
  nlohmann::json out;
  out["seed"] = opt.seed;
  out["claims"] = nlohmann::json::array();
  bool ok = true;
  for (const auto& c : claims) {
    out["claims"].push_back(c.to_json());
    ok = ok && c.status != ClaimStatus::fail;
  }
  out["ok"] = ok;
  return out;
}

}  // namespace scale

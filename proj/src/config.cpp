#include "scale/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <type_traits>

#include "scale/dataset.hpp"
#include "scale/error.hpp"

namespace scale {

namespace {

using nlohmann::json;

// Every block lists its fields once; the same list drives both reading
// and writing.
template <class V>
void visit(V& v, DatasetConfig& c) {
  v("source", c.source);
  v("classes", c.classes);
  v("dim", c.dim);
  v("per_class", c.per_class);
  v("spread", c.spread);
  v("holdout_per_class", c.holdout_per_class);
  v("idx_images", c.idx_images);
  v("idx_labels", c.idx_labels);
  v("idx_test_images", c.idx_test_images);
  v("idx_test_labels", c.idx_test_labels);
  v("idx_limit", c.idx_limit);
}

template <class V>
void visit(V& v, FederationBlock& c) {
  v("clients", c.clients);
  v("rounds", c.rounds);
  v("local_epochs", c.local_epochs);
  v("eta", c.eta);
  v("clients_per_round", c.clients_per_round);
  v("batch_size", c.batch_size);
  v("dirichlet_alpha", c.dirichlet_alpha);
}

template <class V>
void visit(V& v, ModelBlock& c) {
  v("arch", c.arch);
  v("hidden", c.hidden);
  v("cnn_dense_hidden", c.cnn_dense_hidden);
}

template <class V>
void visit(V& v, PpoConfig& c) {
  v("episodes", c.episodes);
  v("epochs", c.epochs);
  v("clip", c.clip);
  v("gamma", c.gamma);
  v("gae_lambda", c.gae_lambda);
  v("actor_lr", c.actor_lr);
  v("critic_lr", c.critic_lr);
  v("batch_size", c.batch_size);
  v("minibatch_size", c.minibatch_size);
  v("entropy_coef", c.entropy_coef);
  v("max_grad_norm", c.max_grad_norm);
  v("hidden", c.hidden);
}

template <class V>
void visit(V& v, ScaleBlock& c) {
  v("lambda", c.lambda);
  v("m_sel", c.m_sel);
  v("groups", c.groups);
  v("w_f", c.w_f);
  v("w_c", c.w_c);
  v("t_collect", c.t_collect);
  v("deploy_steps", c.deploy_steps);
  v("ratio_levels", c.ratio_levels);
  v("sparsity_cap", c.sparsity_cap);
  v("kl_scheme", c.kl_scheme);
  v.block("ppo", c.ppo);
}

template <class V>
void visit(V& v, BaselineBlock& c) {
  v("ascent_steps", c.ascent_steps);
  v("ascent_eta", c.ascent_eta);
}

template <class V>
void visit(V& v, MetricsBlock& c) {
  v("alpha_w", c.alpha_w);
  v("beta_w", c.beta_w);
  v("secs_per_step", c.secs_per_step);
  v("aoi_paper_literal", c.aoi_paper_literal);
}

struct SeedsBlock {
  std::uint64_t* master;
};

template <class V>
void visit(V& v, SeedsBlock& c) {
  v("master", *c.master);
}

template <class V>
void visit(V& v, ExperimentConfig& c) {
  v("scenario", c.scenario);
  v("request", c.request);
  v.block("dataset", c.dataset);
  v.block("federation", c.federation);
  v.block("model", c.model);
  v.block("scale", c.scale);
  v.block("baselines", c.baselines);
  v.block("metrics", c.metrics);
  SeedsBlock seeds{&c.master_seed};
  v.block("seeds", seeds);
}

struct Writer {
  json& out;

  template <class T>
  void operator()(const char* key, const T& value) {
    out[key] = value;
  }
  template <class B>
  void block(const char* key, B& b) {
    json sub = json::object();
    Writer w{sub};
    visit(w, b);
    out[key] = std::move(sub);
  }
};

template <class T>
T convert(const json& j, const std::string& path) {
  auto fail = [&](const char* what) { throw ConfigError(path + ": expected " + what); };
  if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) fail("a boolean");
    return j.get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!j.is_number_unsigned()) fail("a non-negative integer");
    return j.get<T>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!j.is_number()) fail("a number");
    return j.get<T>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!j.is_string()) fail("a string");
    return j.get<std::string>();
  } else {
    if (!j.is_array()) fail("an array");
    T out;
    for (std::size_t i = 0; i < j.size(); ++i)
      out.push_back(convert<typename T::value_type>(j[i], path + "[" + std::to_string(i) + "]"));
    return out;
  }
}

struct Reader {
  const json& in;
  std::string prefix;
  std::set<std::string> known;

  template <class T>
  void operator()(const char* key, T& value) {
    known.insert(key);
    if (auto it = in.find(key); it != in.end()) value = convert<T>(*it, prefix + key);
  }
  template <class B>
  void block(const char* key, B& b) {
    known.insert(key);
    auto it = in.find(key);
    if (it == in.end()) return;
    if (!it->is_object()) throw ConfigError(prefix + key + ": expected an object");
    Reader r{*it, prefix + key + ".", {}};
    visit(r, b);
    r.finish();
  }
  void finish() const {
    for (const auto& item : in.items())
      if (!known.count(item.key())) throw ConfigError("unknown config key '" + prefix + item.key() + "'");
  }
};

}  // namespace

nlohmann::json ExperimentConfig::to_json() const {
  ExperimentConfig copy = *this;
  json out = json::object();
  Writer w{out};
  visit(w, copy);
  return out;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  ExperimentConfig cfg;
  Reader r{j, "", {}};
  visit(r, cfg);
  r.finish();
  cfg.validate();
  return cfg;
}

void ExperimentConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(dataset.source == "synthetic" || dataset.source == "idx", "dataset.source must be \"synthetic\" or \"idx\"");
  if (dataset.source == "synthetic") {
    need(dataset.classes >= 2, "dataset.classes must be >= 2");
    need(dataset.dim >= 1, "dataset.dim must be >= 1");
    need(dataset.per_class >= 1, "dataset.per_class must be >= 1");
    need(dataset.spread >= 0.0, "dataset.spread must be >= 0");
    need(dataset.holdout_per_class >= 1, "dataset.holdout_per_class must be >= 1");
  } else {
    need(!dataset.idx_images.empty() && !dataset.idx_labels.empty(),
         "dataset.idx_images and dataset.idx_labels are required for idx data");
  }
  need(federation.clients >= 1, "federation.clients must be >= 1");
  need(federation.rounds >= 1, "federation.rounds must be >= 1");
  need(federation.eta >= 0.0, "federation.eta must be >= 0");
  need(federation.clients_per_round >= 1 && federation.clients_per_round <= federation.clients,
       "federation.clients_per_round must lie in [1, clients]");
  need(federation.batch_size >= 1, "federation.batch_size must be >= 1");
  need(federation.dirichlet_alpha > 0.0, "federation.dirichlet_alpha must be > 0");
  need(model.arch == "mlp" || model.arch == "mini_cnn", "model.arch must be \"mlp\" or \"mini_cnn\"");
  need(model.arch != "mini_cnn" || dataset.source == "idx", "model.arch mini_cnn needs image (idx) data");
  for (std::size_t h : model.hidden) need(h >= 1, "model.hidden entries must be >= 1");
  need(scale.lambda >= 0.0 && scale.lambda <= 1.0, "scale.lambda must lie in [0, 1]");
  need(scale.groups >= 1, "scale.groups must be >= 1");
  need(scale.w_f >= 0.0 && scale.w_c >= 0.0, "scale.w_f and scale.w_c must be >= 0");
  need(scale.t_collect >= 1, "scale.t_collect must be >= 1");
  need(scale.ratio_levels >= 1, "scale.ratio_levels must be >= 1");
  need(scale.sparsity_cap > 0.0 && scale.sparsity_cap <= 1.0, "scale.sparsity_cap must lie in (0, 1]");
  need(scale.kl_scheme == "softmax" || scale.kl_scheme == "abs_smoothed",
       "scale.kl_scheme must be \"softmax\" or \"abs_smoothed\"");
  scale.ppo.validate();
  need(baselines.ascent_eta >= 0.0, "baselines.ascent_eta must be >= 0");
  need(metrics.alpha_w >= 0.0 && metrics.beta_w >= 0.0, "metrics weights must be >= 0");
  need(metrics.secs_per_step >= 0.0, "metrics.secs_per_step must be >= 0");
  const auto req = UnlearnRequest::parse(request);
  req.validate();
  for (std::size_t n : req.clients)
    need(n < federation.clients, "request names client " + std::to_string(n) + " but federation.clients is " +
                                     std::to_string(federation.clients));
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string ExperimentConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json().dump())));
  return buf;
}

DistributionScheme ExperimentConfig::distribution_scheme() const {
  return scale.kl_scheme == "abs_smoothed" ? DistributionScheme::abs_smoothed : DistributionScheme::softmax;
}

EnvConfig ExperimentConfig::env_config() const {
  EnvConfig e;
  e.w_f = scale.w_f;
  e.w_c = scale.w_c;
  e.horizon = scale.t_collect;
  e.sparsity_cap = scale.sparsity_cap;
  e.ratio_levels = scale.ratio_levels;
  return e;
}

void apply_seed_override(ExperimentConfig& cfg) {
  const char* env = std::getenv("SCALE_SEED");
  if (env == nullptr || *env == '\0') return;
  std::string_view s(env);
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError("SCALE_SEED must be a non-negative integer, got '" + std::string(s) + "'");
  }
  cfg.master_seed = v;
}

ExperimentConfig load_config(const std::filesystem::path& path, bool apply_env) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  ExperimentConfig cfg = ExperimentConfig::from_json(j);
  if (apply_env) apply_seed_override(cfg);
  return cfg;
}

}  // namespace scale

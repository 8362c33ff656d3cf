#include "scale/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "scale/aoi.hpp"
#include "scale/baselines.hpp"
#include "scale/checkpoint.hpp"
#include "scale/error.hpp"
#include "scale/ppo.hpp"
#include "scale/rng.hpp"
#include "scale/sensitivity.hpp"

namespace scale {

using nlohmann::json;

std::string_view to_string(Method m) {
  switch (m) {
    case Method::scale: return "scale";
    case Method::retrain: return "retrain";
    case Method::uniform: return "uniform";
    case Method::grad_ascent: return "grad_ascent";
  }
  return "?";
}

Method parse_method(std::string_view s) {
  for (Method m : {Method::scale, Method::retrain, Method::uniform, Method::grad_ascent})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown method '" + std::string(s) + "' (expected scale, retrain, uniform or grad_ascent)");
}

std::vector<Method> parse_methods(std::string_view csv) {
  std::vector<Method> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const std::size_t comma = std::min(csv.find(',', start), csv.size());
    out.push_back(parse_method(csv.substr(start, comma - start)));
    start = comma + 1;
  }
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw FormatError("cannot write " + p.string());
  out << text;
  if (!out) throw FormatError("write failed for " + p.string());
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw FormatError("missing artifact " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("malformed JSON in " + p.string() + ": " + e.what());
  }
}

/// Seed of one unlearning run: --seed if given, else the master seed.
std::uint64_t unlearn_seed(const ExperimentConfig& cfg, const UnlearnOptions& opt) {
  return opt.seed.value_or(cfg.master_seed);
}

}  // namespace

// ---------------------------------------------------------------------------

DataBundle build_data(const ExperimentConfig& cfg) {
  const auto& d = cfg.dataset;
  DataBundle b;
  if (d.source == "synthetic") {
    SyntheticSpec spec{d.classes, d.dim, d.per_class, d.spread};
    const std::uint64_t seed = derive_seed(cfg.master_seed, SeedTag::dataset);
    b.train = gen_synthetic(spec, seed);
    b.eval = gen_synthetic_holdout(spec, seed, d.holdout_per_class);
  } else {
    b.train = load_idx(d.idx_images, d.idx_labels, d.idx_limit);
    b.shape = idx_image_shape(d.idx_images);
    if (!d.idx_test_images.empty() && !d.idx_test_labels.empty()) {
      b.eval = load_idx(d.idx_test_images, d.idx_test_labels, d.idx_limit);
    } else {
      b.eval = b.train;
    }
  }
  return b;
}

Model build_init_model(const ExperimentConfig& cfg, const DataBundle& data) {
  const std::uint64_t seed = derive_seed(cfg.master_seed, SeedTag::init);
  const ArchId arch = parse_arch(cfg.model.arch);
  if (arch == ArchId::mini_cnn) {
    if (data.shape.rows * data.shape.cols != data.train.dim) throw ConfigError("mini_cnn needs square image data");
    return Model::mini_cnn(1, data.shape.rows, data.shape.cols, data.train.num_classes, cfg.model.cnn_dense_hidden,
                           seed);
  }
  return Model::mlp(data.train.dim, cfg.model.hidden, data.train.num_classes, seed);
}

FedConfig fed_config(const ExperimentConfig& cfg) {
  FedConfig f;
  f.num_clients = cfg.federation.clients;
  f.rounds = cfg.federation.rounds;
  f.local_epochs = cfg.federation.local_epochs;
  f.eta = cfg.federation.eta;
  f.clients_per_round = cfg.federation.clients_per_round;
  f.batch_size = cfg.federation.batch_size;
  f.seed = derive_seed(cfg.master_seed, SeedTag::federation);
  return f;
}

// ---------------------------------------------------------------------------

TrainSummary cmd_train(const ExperimentConfig& cfg, const fs::path& out, bool force) {
  cfg.validate();
  const RunPaths paths{out};
  if (!force && fs::exists(paths.global_stem().replace_extension(".model"))) {
    throw ConfigError("run directory " + out.string() + " already holds a trained model (use --force)");
  }
  const auto t0 = Clock::now();
  const std::string hash = cfg.hash();

  const DataBundle data = build_data(cfg);
  const ClientPartition part = dirichlet_partition(data.train, cfg.federation.clients, cfg.federation.dirichlet_alpha,
                                                   derive_seed(cfg.master_seed, SeedTag::partition));
  const Model init = build_init_model(cfg, data);
  const FederationResult res = run_rounds(fed_config(cfg), part.clients, data.train, init, &data.eval);

  fs::create_directories(paths.history_dir());
  json cj = cfg.to_json();
  cj["config_hash"] = hash;
  write_json(paths.config(), cj);
  save_model(init, paths.init_stem(), hash);
  save_model(res.model, paths.global_stem(), hash);

  json pj = partition_to_json(part);
  write_json(paths.partition(), json{{"config_hash", hash}, {"clients", pj}});

  json index = json::object();
  for (const auto& [n, rec] : res.history.clients) {
    save_model(rec.model, paths.history_dir() / ("client_" + std::to_string(n)), hash);
    index[std::to_string(n)] = {{"data_size", rec.data_size}, {"last_round", rec.last_round}};
  }
  write_json(paths.history_dir() / "index.json", json{{"config_hash", hash}, {"clients", index}});

  std::ostringstream csv;
  csv << "# config_hash=" << hash << "\n";
  csv << "round,participants,loss,accuracy\n";
  for (const auto& r : res.rounds) {
    csv << r.round << ",";
    for (std::size_t i = 0; i < r.participants.size(); ++i) csv << (i ? ";" : "") << r.participants[i];
    csv << "," << num(r.loss) << "," << num(r.accuracy) << "\n";
  }
  write_text(paths.rounds_csv(), csv.str());

  TrainSummary s;
  s.final_accuracy = res.rounds.empty() ? 0.0 : res.rounds.back().accuracy;
  s.wall_secs = seconds_since(t0);
  s.config_hash = hash;
  write_json(out / "timing.json", json{{"train_secs", s.wall_secs}});
  return s;
}

TrainSummary cmd_train(const fs::path& config_path, const fs::path& out, bool force) {
  return cmd_train(load_config(config_path), out, force);
}

TrainedRun load_run(const fs::path& run) {
  const RunPaths paths{run};
  TrainedRun tr;
  json cj = read_json(paths.config());
  tr.config_hash = cj.value("config_hash", "");
  cj.erase("config_hash");
  tr.cfg = ExperimentConfig::from_json(cj);
  if (tr.cfg.hash() != tr.config_hash) throw FormatError("config.json does not match its recorded hash");
  tr.data = build_data(tr.cfg);
  tr.partition = partition_from_json(read_json(paths.partition()).at("clients"));
  tr.init = load_model(paths.init_stem());
  tr.global = load_model(paths.global_stem());
  const json index = read_json(paths.history_dir() / "index.json");
  for (const auto& [key, rec] : index.at("clients").items()) {
    const std::size_t n = std::stoul(key);
    tr.history.record(n, load_model(paths.history_dir() / ("client_" + key)), rec.at("data_size").get<std::size_t>(),
                      rec.at("last_round").get<std::size_t>());
  }
  return tr;
}

// ---------------------------------------------------------------------------

namespace {

std::string aoi_csv(std::span<const AoiSample> aoi, const std::string& hash) {
  std::ostringstream s;
  s << "# config_hash=" << hash << "\n";
  s << "step,sum_aoi,mean_aoi,max_aoi\n";
  for (const auto& a : aoi) s << a.step << "," << num(a.sum) << "," << num(a.mean) << "," << num(a.max) << "\n";
  return s.str();
}

std::string sensitivity_csv(const SensitivityReport& rep, const std::string& hash) {
  std::ostringstream s;
  s << "# config_hash=" << hash << "\n";
  s << "layer,rho,align,impact,combined,selected\n";
  for (const auto& l : rep.layers) {
    s << l.layer << "," << num(l.rho) << "," << num(l.align) << "," << num(l.impact) << "," << num(l.combined) << ","
      << (rep.is_selected(l.layer) ? 1 : 0) << "\n";
  }
  return s.str();
}

std::string rewards_csv(std::span<const EpisodeStats> curve, const std::string& hash) {
  std::ostringstream s;
  s << "# config_hash=" << hash << "\n";
  s << "episode,total_reward,r_f_sum,r_c_sum\n";
  for (const auto& e : curve)
    s << e.episode << "," << num(e.total_reward) << "," << num(e.forget_reward) << "," << num(e.fresh_reward) << "\n";
  return s.str();
}

std::string actions_jsonl(std::span<const ActionRecord> actions, const std::string& hash) {
  std::string out;
  for (const auto& a : actions) {
    json j{{"step", a.step},           {"layer", a.layer},   {"groups", a.groups},
           {"s", a.ratio},             {"zeroed", a.zeroed}, {"transmitted", a.transmitted},
           {"reward", a.reward.total}, {"config_hash", hash}};
    out += j.dump() + "\n";
  }
  return out;
}

/// Paper-literal AoI divides the per-step mean by |L_s| as well.
void apply_aoi_mode(std::vector<AoiSample>& aoi, const ExperimentConfig& cfg, std::size_t m_sel) {
  if (!cfg.metrics.aoi_paper_literal) return;
  for (auto& a : aoi) a.mean /= static_cast<double>(std::max<std::size_t>(1, m_sel));
}

std::size_t total_retrain_transmission(const FederationResult& r, std::size_t d) {
  std::size_t n = 0;
  for (const auto& round : r.rounds) n += round.participants.size() * d;
  return n;
}

}  // namespace

UnlearnSummary cmd_unlearn(const fs::path& run, const UnlearnOptions& opt) {
  const auto t0 = Clock::now();
  TrainedRun tr = load_run(run);
  const ExperimentConfig& cfg = tr.cfg;
  const RunPaths paths{run};
  const fs::path dir = paths.method_dir(opt.method);
  if (!opt.force && fs::exists(dir / "unlearned.model")) {
    throw ConfigError("method " + std::string(to_string(opt.method)) + " already ran in " + run.string() +
                      " (use --force)");
  }
  fs::create_directories(dir);

  const std::uint64_t seed = unlearn_seed(cfg, opt);
  const UnlearnRequest req =
      UnlearnRequest::parse(opt.request.value_or(cfg.request), derive_seed(seed, SeedTag::request));
  const ForgetSplit split = build_split(tr.data.train, tr.partition, req);

  const std::size_t target = req.clients.front();
  if (!tr.history.contains(target)) {
    throw DomainError("no recorded upload for client " + std::to_string(target) + "; sensitivity needs its history");
  }
  const std::size_t m_sel = cfg.scale.m_sel ? cfg.scale.m_sel : default_m_sel(tr.global.num_layers());
  const SensitivityReport report =
      analyze(tr.history, tr.global, target, cfg.scale.lambda, m_sel, cfg.distribution_scheme());
  const GroupIndex idx = partition_groups(tr.global, report.selected, cfg.scale.groups);
  const EnvConfig env = cfg.env_config();

  UnlearnSummary sum;
  sum.method = opt.method;
  Model result;
  std::vector<ActionRecord> actions;
  std::vector<AoiSample> aoi;
  json extra = json::object();

  switch (opt.method) {
    case Method::scale: {
      TrainResult trained = train_unlearner(tr.global, report, idx, env, cfg.scale.ppo, derive_seed(seed, SeedTag::ppo));
      Deployment dep = deploy(trained.agent.policy, tr.global, report, idx, env, cfg.scale.deploy_steps);
      result = std::move(dep.model);
      actions = std::move(dep.actions);
      aoi = std::move(dep.aoi);
      sum.zeroed = dep.zeroed;
      write_text(dir / "sensitivity.csv", sensitivity_csv(report, tr.config_hash));
      write_text(dir / "ppo_rewards.csv", rewards_csv(trained.curve, tr.config_hash));
      write_text(dir / "actions.jsonl", actions_jsonl(actions, tr.config_hash));
      break;
    }
    case Method::retrain: {
      FederationResult rr = retrain_baseline(fed_config(cfg), split, tr.data.train, tr.init, &tr.data.eval);
      ActionRecord all;
      all.step = 1;
      all.transmitted = total_retrain_transmission(rr, tr.global.total_params());
      actions.push_back(all);
      aoi = one_shot_trace(idx, cfg.scale.deploy_steps);
      result = std::move(rr.model);
      break;
    }
    case Method::uniform: {
      const fs::path scale_trace = paths.method_dir(Method::scale) / "trace.json";
      if (!fs::exists(scale_trace)) {
        throw ConfigError("uniform matches the scale run's zeroing budget; run --method scale first");
      }
      const json st = read_json(scale_trace);
      if (st.at("config_hash") != tr.config_hash) throw FormatError("scale trace belongs to a different config");
      if (st.at("request") != req.to_string()) throw ConfigError("uniform must use the same request as the scale run");
      const auto budget = st.at("zeroed").get<std::size_t>();
      UniformResult u = baseline_uniform(tr.global, budget, cfg.scale.groups);
      ActionRecord all;
      all.step = 1;
      all.transmitted = u.transmitted;
      all.zeroed = u.zeroed;
      actions.push_back(all);
      aoi = one_shot_trace(idx, cfg.scale.deploy_steps);
      sum.zeroed = u.zeroed;
      extra["budget"] = budget;
      extra["zeroed_per_layer"] = u.zeroed_per_layer;
      result = std::move(u.model);
      break;
    }
    case Method::grad_ascent: {
      AscentResult a = baseline_grad_ascent(tr.global, tr.data.train, split.forget, cfg.baselines.ascent_steps,
                                            cfg.baselines.ascent_eta);
      ActionRecord all;
      all.step = 1;
      all.transmitted = tr.global.total_params();
      actions.push_back(all);
      aoi = one_shot_trace(idx, cfg.scale.deploy_steps);
      extra["losses"] = a.losses;
      extra["projections"] = a.projections;
      extra["label"] = "gradient-ascent proxy";
      result = std::move(a.model);
      break;
    }
  }

  apply_aoi_mode(aoi, cfg, report.selected.size());
  const CommCost cc = comm_overhead(actions, aoi, cfg.metrics.alpha_w, cfg.metrics.beta_w, cfg.metrics.secs_per_step);
  sum.comm_ct = cc.c_t;

  save_model(result, dir / "unlearned", tr.config_hash);
  write_text(dir / "aoi_timeseries.csv", aoi_csv(aoi, tr.config_hash));
  write_json(dir / "request.json", json{{"request", req.to_string()},
                                       {"seed", seed},
                                       {"forget_size", split.forget_size()},
                                       {"remain_size", split.remain_size()},
                                       {"config_hash", tr.config_hash}});
  std::vector<double> aoi_means;
  for (const auto& a : aoi) aoi_means.push_back(a.mean);
  write_json(dir / "trace.json", json{{"method", to_string(opt.method)},
                                     {"config_hash", tr.config_hash},
                                     {"request", req.to_string()},
                                     {"seed", seed},
                                     {"sensitive_layers", report.selected},
                                     {"zeroed", sum.zeroed},
                                     {"comm_ct", cc.c_t},
                                     {"comm_objective", cc.objective},
                                     {"mean_aoi_steps", cc.mean_aoi_steps},
                                     {"mean_aoi_secs", cc.mean_aoi_secs},
                                     {"aoi_steps", aoi.size()},
                                     {"aoi_mean_series", aoi_means},
                                     {"extra", extra}});
  sum.wall_secs = seconds_since(t0);
  write_json(dir / "timing.json", json{{"unlearn_secs", sum.wall_secs}});
  return sum;
}

// ---------------------------------------------------------------------------

json eval_report_json(const EvalReport& r, const std::string& config_hash) {
  return json{{"method", r.method},
              {"scenario", r.scenario},
              {"ra", r.ra},
              {"fa", r.fa},
              {"fr", r.fr},
              {"comm_ct", r.comm_ct},
              {"comm_objective", r.comm_objective},
              {"mean_aoi_steps", r.mean_aoi_steps},
              {"mean_aoi_secs", r.mean_aoi_secs},
              {"wall_secs", r.wall_secs},
              {"seed", r.seed},
              {"config_hash", config_hash}};
}

std::vector<EvalReport> cmd_eval(const fs::path& run, std::span<const Method> methods, bool force) {
  if (methods.empty()) throw ConfigError("eval needs at least one method");
  TrainedRun tr = load_run(run);
  const RunPaths paths{run};

  std::vector<EvalReport> reports;
  std::string request;
  for (Method m : methods) {
    const fs::path dir = paths.method_dir(m);
    const json trace = read_json(dir / "trace.json");
    if (trace.at("config_hash") != tr.config_hash && !force) {
      throw FormatError("artifacts of " + std::string(to_string(m)) +
                        " come from a different config (use --force to compare anyway)");
    }
    const std::string req_text = trace.at("request").get<std::string>();
    if (request.empty()) {
      request = req_text;
    } else if (request != req_text && !force) {
      throw ConfigError("methods were run on different requests: " + request + " vs " + req_text);
    }
    const auto seed = trace.at("seed").get<std::uint64_t>();
    const UnlearnRequest req = UnlearnRequest::parse(req_text, derive_seed(seed, SeedTag::request));
    const ForgetSplit split = build_split(tr.data.train, tr.partition, req);
    const Model unlearned = load_model(dir / "unlearned");

    EvalReport r;
    r.method = std::string(to_string(m));
    r.scenario = tr.cfg.scenario;
    r.ra = remaining_accuracy(unlearned, tr.data.train, split.remain);
    r.fa = forgetting_accuracy(unlearned, tr.data.train, split.forget);
    r.fr = forgetting_rate(tr.global, unlearned, tr.data.train, split.forget);
    r.comm_ct = trace.at("comm_ct").get<double>();
    r.comm_objective = trace.at("comm_objective").get<double>();
    r.mean_aoi_steps = trace.at("mean_aoi_steps").get<double>();
    r.mean_aoi_secs = trace.at("mean_aoi_secs").get<double>();
    // Simulated duration of the unlearning trajectory; measured time lives
    // in timing.json so that metrics.json stays reproducible.
    r.wall_secs = static_cast<double>(trace.at("aoi_steps").get<std::size_t>()) * tr.cfg.metrics.secs_per_step;
    r.seed = seed;
    write_json(dir / "metrics.json", eval_report_json(r, tr.config_hash));
    reports.push_back(r);
  }

  const EvalReport* base = nullptr;
  for (const auto& r : reports)
    if (r.method == "retrain") base = &r;
  std::ostringstream csv;
  csv << "# config_hash=" << tr.config_hash << "\n";
  csv << "method,ra,d_ra,fa,d_fa,fr,mean_aoi,comm_ct\n";
  for (const auto& r : reports) {
    csv << r.method << "," << num(r.ra) << "," << (base ? num(std::abs(r.ra - base->ra)) : "") << "," << num(r.fa)
        << "," << (base ? num(std::abs(r.fa - base->fa)) : "") << "," << num(r.fr) << "," << num(r.mean_aoi_steps)
        << "," << num(r.comm_ct) << "\n";
  }
  write_text(paths.comparison_csv(), csv.str());
  return reports;
}

json cmd_theory(const TheoryOptions& opt, const fs::path& out) {
  json rep = theory_report(opt);
  if (!out.empty()) {
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_json(out, rep);
  }
  return rep;
}

}  // namespace scale

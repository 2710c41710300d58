#include "lisa/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "lisa/dataset.hpp"
#include "lisa/seed.hpp"

#ifndef LISA_VERSION
#define LISA_VERSION "unknown"
#endif

namespace lisa {

namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

void write_file(const std::filesystem::path& file, const std::string& contents) {
  std::ofstream out(file, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + file.string());
  }
  out << contents;
}

}  // namespace

const char* version_string() { return LISA_VERSION; }

AttackKind parse_attack_kind(std::string_view tag) {
  if (tag == "lisa") return AttackKind::lisa;
  if (tag == "graphcopy") return AttackKind::graphcopy;
  if (tag == "nia") return AttackKind::nia;
  if (tag == "none") return AttackKind::none;
  throw ConfigError("unknown attack '" + std::string(tag) + "' (expected lisa|graphcopy|nia|none)");
}

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::lisa:
      return "lisa";
    case AttackKind::graphcopy:
      return "graphcopy";
    case AttackKind::nia:
      return "nia";
    case AttackKind::none:
      return "none";
  }
  return "?";
}

void ExperimentConfig::validate() const {
  if (num_targets < 1) throw ConfigError("targets must be >= 1");
  if (k < 1) throw ConfigError("k must be >= 1");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (copy_hops < 0) throw ConfigError("copy hops must be >= 0");
  if (!(copy_noise >= 0.0)) throw ConfigError("copy noise must be >= 0");
  if (!(label_frac > 0.0 && label_frac <= 1.0)) throw ConfigError("label fraction must be in (0, 1]");
  if (!(edge_train_frac > 0.0 && edge_train_frac <= 1.0)) {
    throw ConfigError("edge train fraction must be in (0, 1]");
  }
  if (!(edge_label_frac > 0.0 && edge_label_frac <= 1.0)) {
    throw ConfigError("edge label fraction must be in (0, 1]");
  }
  if (victim_steps < 0 || pretrain_steps < 0) throw ConfigError("training steps must be >= 0");
  lisa_config().validate();
  nia_config().validate();
}

AttackConfig ExperimentConfig::lisa_config() const {
  AttackConfig c = lisa;
  c.k = k;
  c.seed = seed;
  return c;
}

NiaConfig ExperimentConfig::nia_config() const {
  NiaConfig c = nia;
  c.seed = seed;
  return c;
}

AdamOptions victim_classifier_options(ClassifierArch arch) {
  if (arch == ClassifierArch::sgc) {
    return {.lr = 0.2, .weight_decay = 5e-6};
  }
  return {.lr = 0.01, .weight_decay = 5e-4};
}

Graph load_experiment_graph(const ExperimentConfig& config) {
  Graph g = load_dataset(config.dataset, {config.label_frac, 0.0, derive_seed(config.seed, {0})});
  return config.normalize_features ? row_normalized(g) : g;
}

std::vector<NodeId> sample_targets(const Graph& g, int m, std::uint64_t seed) {
  std::vector<NodeId> eligible;
  for (NodeId v = 0; v < g.num_nodes(); ++v) {
    if (!g.train_mask()[static_cast<std::size_t>(v)]) {
      eligible.push_back(v);
    }
  }
  if (m < 0 || static_cast<std::size_t>(m) > eligible.size()) {
    throw ConfigError("cannot sample " + std::to_string(m) + " targets from " +
                      std::to_string(eligible.size()) + " eligible nodes");
  }
  Rng rng(derive_seed(seed, {stream::targets}));
  std::shuffle(eligible.begin(), eligible.end(), rng);
  eligible.resize(static_cast<std::size_t>(m));
  return eligible;
}

Environment make_environment(const Graph& g, const ExperimentConfig& config) {
  Environment env;
  env.graph = &g;
  env.ctx = make_attack_context(g, config.seed, config.edge_train_frac, config.edge_label_frac,
                                config.pretrain_steps);
  env.recommender = config.recommender;
  env.classifier = config.classifier;
  env.seed = config.seed;
  env.victim_steps = config.victim_steps;
  env.victim_cls_options = victim_classifier_options(config.classifier);
  if (config.victim_lr) {
    env.victim_cls_options.lr = *config.victim_lr;
  }
  if (config.victim_weight_decay) {
    env.victim_cls_options.weight_decay = *config.victim_weight_decay;
  }
  env.victim_link_options = {.lr = 0.01};
  env.victim_dropout = config.victim_dropout;
  const ModelGraph clean = model_graph(g);
  env.clean_victim = train_victim_classifier(env, clean);
  env.clean_victim_prediction = classify(clean, env.clean_victim);
  return env;
}

ClassifierParams train_victim_classifier(const Environment& env, const ModelGraph& view) {
  const Graph& g = *env.graph;
  Rng init(derive_seed(env.seed, {stream::victim_cls, 0}));
  ClassifierTrainer trainer(init_classifier(env.classifier, g.num_features(), g.num_classes(), init),
                            env.victim_cls_options, derive_seed(env.seed, {stream::victim_cls, 1}),
                            env.victim_dropout);
  for (int s = 0; s < env.victim_steps; ++s) {
    trainer.step(view, env.ctx.label_nodes, g.labels());
  }
  return trainer.params();
}

LinkPredictorParams train_victim_recommender(const Environment& env, const PoisonedGraph& g_p) {
  const Graph& g = *env.graph;
  Rng init(derive_seed(env.seed, {stream::victim_link, 0}));
  LinkPredictorTrainer trainer(init_link_predictor(env.recommender, g.num_features(), init),
                               env.victim_link_options,
                               derive_seed(env.seed, {stream::victim_link, 1}));
  const ModelGraph message = model_graph(g_p, env.ctx.split.train_edges);
  for (int s = 0; s < env.victim_steps; ++s) {
    trainer.step(message, g_p, env.ctx.split.positive_labels);
  }
  return trainer.params();
}

TargetResult evaluate_clean(const Environment& env, NodeId target) {
  TargetResult r;
  r.target = target;
  r.true_label = env.graph->labels()[static_cast<std::size_t>(target)];
  r.clean_pred = env.clean_victim_prediction.classes[static_cast<std::size_t>(target)];
  r.attacked_pred = r.clean_pred;
  r.misclassified = r.attacked_pred != r.true_label;
  return r;
}

TargetResult evaluate_target(const Environment& env, const Subgraph& payload, NodeId target,
                             int k) {
  const Graph& g = *env.graph;
  TargetResult r = evaluate_clean(env, target);
  r.payload_nodes = payload.num_nodes();
  const PoisonedGraph g_p = compose_poisoned(g, payload);
  const LinkPredictorParams recommender = train_victim_recommender(env, g_p);
  const ModelGraph message = model_graph(g_p, env.ctx.split.train_edges);
  const Recommendation rec =
      recommend_top_k(target, link_scores(g_p, message, recommender, target), k, g.num_nodes());
  r.link_success = rec.link_success;
  for (const Candidate& c : rec.proposed) {
    r.payload_links += c.node >= g.num_nodes() ? 1 : 0;
  }
  if (rec.link_success) {
    const PoisonedGraph g_r = apply_recommendation(g_p, rec);
    const ModelGraph view = model_graph(g_r);
    const ClassifierParams victim = train_victim_classifier(env, view);
    r.attacked_pred = classify(view, victim).classes[static_cast<std::size_t>(target)];
  }
  // Without a payload link the payload stays isolated and G_r classifies like G_o.
  r.misclassified = r.attacked_pred != r.true_label;
  return r;
}

TargetResult evaluate_nia(const Environment& env, const NiaResult& nia) {
  const NodeId target = nia.aggressor.target;
  TargetResult r = evaluate_clean(env, target);
  r.payload_nodes = 1;
  r.y_atk = nia.aggressor.label.y_atk;
  r.link_success = nia.link_formed;
  r.payload_links = nia.link_formed ? 1 : 0;
  if (nia.link_formed) {
    const PoisonedGraph g_r(*env.graph, nia.payload, nia.links);
    const ModelGraph view = model_graph(g_r);
    const ClassifierParams victim = train_victim_classifier(env, view);
    r.attacked_pred = classify(view, victim).classes[static_cast<std::size_t>(target)];
  }
  r.misclassified = r.attacked_pred != r.true_label;
  return r;
}

void aggregate(ExperimentSummary& s) {
  int links = 0;
  int wrong = 0;
  int clean_wrong = 0;
  s.evaluated = 0;
  s.failed = 0;
  for (const TargetResult& r : s.results) {
    if (r.failed) {
      ++s.failed;
      continue;
    }
    ++s.evaluated;
    links += r.link_success ? 1 : 0;
    wrong += r.misclassified ? 1 : 0;
    clean_wrong += r.clean_pred != r.true_label ? 1 : 0;
  }
  const double n = std::max(1, s.evaluated);
  s.lsr = 100.0 * links / n;
  s.asr = 100.0 * wrong / n;
  s.clean_misclassification = 100.0 * clean_wrong / n;
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  const auto work = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        const std::lock_guard lock(error_mutex);
        if (!error) {
          error = std::current_exception();
        }
      }
    }
  };
  const int count = std::clamp(workers, 1, std::max(1, n));
  if (count == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < count; ++w) {
      pool.emplace_back(work);
    }
  }
  if (error) {
    std::rethrow_exception(error);
  }
}

std::string results_csv(std::span<const TargetResult> results) {
  std::ostringstream out;
  out << "target,true_label,clean_pred,attacked_pred,y_atk,link_success,payload_links,"
         "payload_nodes,misclassified,failed\n";
  for (const TargetResult& r : results) {
    out << r.target << ',' << r.true_label << ',' << r.clean_pred << ',' << r.attacked_pred << ','
        << r.y_atk << ',' << (r.link_success ? 1 : 0) << ',' << r.payload_links << ','
        << r.payload_nodes << ',' << (r.misclassified ? 1 : 0) << ',' << (r.failed ? 1 : 0)
        << '\n';
  }
  return out.str();
}

std::string summary_json(const ExperimentConfig& c, const ExperimentSummary& s,
                         const std::string& version) {
  const AttackConfig a = c.lisa_config();
  json failures = json::array();
  for (const TargetResult& r : s.results) {
    if (r.failed) {
      failures.push_back({{"target", r.target}, {"reason", r.failure}});
    }
  }
  json j;
  j["version"] = version;
  j["lsr"] = s.lsr;
  j["asr"] = s.asr;
  j["clean_misclassification"] = s.clean_misclassification;
  j["evaluated"] = s.evaluated;
  j["failed"] = s.failed;
  j["failures"] = failures;
  j["protocol"] = {
      {"victims", "retrained from scratch per target on the poisoned graph"},
      {"no_link_shortcut", "targets without a payload link reuse the clean victim prediction"},
      {"nia_features",
       "projected gradient descent on the attack-label cross-entropy of the clean surrogate"}};
  j["config"] = {{"dataset", c.dataset.string()},
                 {"recommender", to_string(c.recommender)},
                 {"classifier", to_string(c.classifier)},
                 {"attack", to_string(c.attack)},
                 {"targets", c.num_targets},
                 {"k", c.k},
                 {"seed", c.seed},
                 {"subgraph_nodes", a.n_V},
                 {"subgraph_edges", a.n_E},
                 {"alpha", a.alpha},
                 {"beta", a.beta},
                 {"lr_feat", a.lr_feat},
                 {"inner_steps", a.inner_steps},
                 {"epochs", a.outer_epochs},
                 {"swaps", a.swaps_per_step},
                 {"negatives", a.Q},
                 {"variant", to_string(a.variant)},
                 {"lsr", c.nia.lsr},
                 {"nia_steps", c.nia.feature_steps},
                 {"nia_lr", c.nia.feature_lr},
                 {"copy_hops", c.copy_hops},
                 {"copy_noise", c.copy_noise},
                 {"label_frac", c.label_frac},
                 {"edge_train_frac", c.edge_train_frac},
                 {"edge_label_frac", c.edge_label_frac},
                 {"normalize_features", c.normalize_features},
                 {"victim_steps", c.victim_steps},
                 {"workers", c.workers}};
  return j.dump(2) + "\n";
}

ExperimentSummary run_experiment(const Graph& g, const ExperimentConfig& config) {
  config.validate();
  const Environment env = make_environment(g, config);
  const std::vector<NodeId> targets = sample_targets(g, config.num_targets, config.seed);
  const AttackConfig lisa_cfg = config.lisa_config();
  const NiaConfig nia_cfg = config.nia_config();

  ExperimentSummary summary;
  summary.results.resize(targets.size());
  summary.payloads.resize(targets.size());
  std::vector<std::vector<TraceRecord>> traces(targets.size());
  std::atomic<int> done{0};

  parallel_for(static_cast<int>(targets.size()), config.workers, [&](int i) {
    const auto idx = static_cast<std::size_t>(i);
    const NodeId t = targets[idx];
    TargetResult r;
    const auto start = Clock::now();
    try {
      switch (config.attack) {
        case AttackKind::lisa: {
          LisaResult res = run_lisa(env.ctx, t, lisa_cfg);
          const double attack_time = seconds_since(start);
          const auto eval_start = Clock::now();
          r = evaluate_target(env, res.payload, t, config.k);
          r.eval_seconds = seconds_since(eval_start);
          r.attack_seconds = attack_time;
          r.y_atk = res.label.y_atk;
          r.failed = res.failed;
          r.failure = res.failure;
          traces[idx] = std::move(res.trace);
          summary.payloads[idx] = std::move(res.payload);
          break;
        }
        case AttackKind::graphcopy: {
          GraphCopyResult gc = graph_copy(g, t, config.copy_hops, config.copy_noise, config.seed);
          const double attack_time = seconds_since(start);
          const auto eval_start = Clock::now();
          r = evaluate_target(env, gc.payload, t, config.k);
          r.eval_seconds = seconds_since(eval_start);
          r.attack_seconds = attack_time;
          summary.payloads[idx] = std::move(gc.payload);
          break;
        }
        case AttackKind::nia: {
          NiaResult nia = nia_attack(env.ctx, t, nia_cfg);
          const double attack_time = seconds_since(start);
          const auto eval_start = Clock::now();
          r = evaluate_nia(env, nia);
          r.eval_seconds = seconds_since(eval_start);
          r.attack_seconds = attack_time;
          summary.payloads[idx] = std::move(nia.payload);
          break;
        }
        case AttackKind::none:
          r = evaluate_clean(env, t);
          break;
      }
    } catch (const std::exception& e) {
      r = evaluate_clean(env, t);
      r.failed = true;
      r.failure = e.what();
    }
    if (r.failed) {
      spdlog::warn("target {} failed: {}", t, r.failure);
    }
    summary.results[idx] = std::move(r);
    const int finished = ++done;
    spdlog::info("[{}/{}] target {} link={} misclassified={}", finished, targets.size(), t,
                 summary.results[idx].link_success, summary.results[idx].misclassified);
  });
  aggregate(summary);

  if (!config.out.empty()) {
    std::filesystem::create_directories(config.out);
    write_file(config.out / "results.csv", results_csv(summary.results));
    write_file(config.out / "summary.json", summary_json(config, summary, version_string()));
    std::ostringstream timings;
    timings << "target,attack_seconds,eval_seconds\n";
    for (const TargetResult& r : summary.results) {
      timings << r.target << ',' << r.attack_seconds << ',' << r.eval_seconds << '\n';
    }
    write_file(config.out / "timings.csv", timings.str());
    if (config.write_traces && config.attack == AttackKind::lisa) {
      std::filesystem::create_directories(config.out / "trace");
      for (std::size_t i = 0; i < targets.size(); ++i) {
        write_trace(config.out / "trace" / (std::to_string(targets[i]) + ".jsonl"), traces[i]);
      }
    }
  }
  return summary;
}

ExperimentSummary run_experiment(const ExperimentConfig& config) {
  config.validate();
  const Graph g = load_experiment_graph(config);
  return run_experiment(g, config);
}

// ---------------------------------------------------------------------------
// Similarity

double SimilarityReport::mean() const {
  if (similarity.empty()) {
    return 0.0;
  }
  return std::accumulate(similarity.begin(), similarity.end(), 0.0) /
         static_cast<double>(similarity.size());
}

double SimilarityReport::peak() const {
  const auto it = std::max_element(histogram.begin(), histogram.end());
  const auto bin = static_cast<double>(it - histogram.begin());
  return -1.0 + 0.05 * (bin + 0.5);
}

SimilarityReport similarity_analysis(const Graph& g, const EdgeSplit& split,
                                     std::span<const NodeId> targets,
                                     std::span<const Subgraph> payloads, std::uint64_t seed,
                                     int steps) {
  if (targets.size() != payloads.size()) {
    throw ConfigError("similarity analysis needs one payload per target");
  }
  const PoisonedGraph clean(g, Subgraph::empty(g.num_features()));
  Rng init(derive_seed(seed, {stream::similarity, 0}));
  LinkPredictorTrainer trainer(init_link_predictor(LinkArch::gae, g.num_features(), init),
                               AdamOptions{}, derive_seed(seed, {stream::similarity, 1}));
  const ModelGraph clean_view = model_graph(clean, split.train_edges);
  for (int s = 0; s < steps; ++s) {
    trainer.step(clean_view, clean, split.positive_labels);
  }

  SimilarityReport report;
  report.histogram.assign(kSimilarityBins, 0);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const PoisonedGraph g_p = compose_poisoned(g, payloads[i]);
    const Matrix z = encode_links(model_graph(g_p, split.train_edges), trainer.params()).z;
    const RowVector zt = z.row(targets[i]);
    for (NodeId j = 0; j < g_p.num_payload(); ++j) {
      const RowVector zp = z.row(g_p.global_id(j));
      const double norm = zt.norm() * zp.norm();
      if (!(norm > 0.0)) {
        ++report.skipped;
        continue;
      }
      const double sim = std::clamp(zt.dot(zp) / norm, -1.0, 1.0);
      report.targets.push_back(targets[i]);
      report.payload_index.push_back(j);
      report.similarity.push_back(sim);
      const int bin = std::min(kSimilarityBins - 1, static_cast<int>((sim + 1.0) / 0.05));
      ++report.histogram[static_cast<std::size_t>(bin)];
    }
  }
  return report;
}

void write_similarity_csv(const std::filesystem::path& file, const SimilarityReport& report) {
  std::ostringstream out;
  out << "target,payload_node,cosine\n";
  for (std::size_t i = 0; i < report.similarity.size(); ++i) {
    out << report.targets[i] << ',' << report.payload_index[i] << ',' << report.similarity[i]
        << '\n';
  }
  write_file(file, out.str());
  std::filesystem::path hist = file;
  hist.replace_filename(file.stem().string() + "_histogram.csv");
  std::ostringstream h;
  h << "bin_low,bin_high,count\n";
  for (int b = 0; b < kSimilarityBins; ++b) {
    h << -1.0 + 0.05 * b << ',' << -1.0 + 0.05 * (b + 1) << ','
      << report.histogram[static_cast<std::size_t>(b)] << '\n';
  }
  write_file(hist, h.str());
}

// ---------------------------------------------------------------------------
// Sweeps

namespace {

const std::vector<std::string>& sweep_keys() {
  static const std::vector<std::string> keys{"alpha", "beta", "subgraph_nodes", "subgraph_edges",
                                             "k",     "lsr",  "targets"};
  return keys;
}

void apply_key(ExperimentConfig& c, const std::string& key, double v) {
  if (key == "alpha") {
    c.lisa.alpha = v;
  } else if (key == "beta") {
    c.lisa.beta = v;
  } else if (key == "subgraph_nodes") {
    c.lisa.n_V = static_cast<int>(v);
  } else if (key == "subgraph_edges") {
    c.lisa.n_E = static_cast<int>(v);
  } else if (key == "k") {
    c.k = static_cast<int>(v);
  } else if (key == "lsr") {
    c.nia.lsr = v;
  } else if (key == "targets") {
    c.num_targets = static_cast<int>(v);
  } else {
    throw ConfigError("unknown sweep key '" + key + "'");
  }
}

}  // namespace

SweepGrid parse_grid(std::string_view spec) {
  SweepGrid grid;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    std::size_t end = spec.find(';', pos);
    if (end == std::string_view::npos) {
      end = spec.size();
    }
    const std::string_view item = spec.substr(pos, end - pos);
    pos = end + 1;
    if (item.empty()) {
      continue;
    }
    const std::size_t eq = item.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("sweep axis '" + std::string(item) + "' needs key=v1,v2,...");
    }
    std::string key(item.substr(0, eq));
    std::replace(key.begin(), key.end(), '-', '_');
    if (std::find(sweep_keys().begin(), sweep_keys().end(), key) == sweep_keys().end()) {
      throw ConfigError("unknown sweep key '" + key + "'");
    }
    std::vector<double> values;
    std::string rest(item.substr(eq + 1));
    std::stringstream ss(rest);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(tok, &used));
        if (used != tok.size()) {
          throw std::invalid_argument(tok);
        }
      } catch (const std::exception&) {
        throw ConfigError("bad sweep value '" + tok + "' for " + key);
      }
    }
    if (values.empty()) {
      throw ConfigError("sweep axis " + key + " has no values");
    }
    grid.emplace_back(std::move(key), std::move(values));
  }
  if (grid.empty()) {
    throw ConfigError("empty sweep grid");
  }
  return grid;
}

std::vector<SweepCell> sweep(const ExperimentConfig& base, const SweepGrid& grid) {
  std::size_t cells = 1;
  for (const auto& [key, values] : grid) {
    cells *= values.size();
  }
  const Graph g = load_experiment_graph(base);
  std::vector<SweepCell> out;
  for (std::size_t c = 0; c < cells; ++c) {
    SweepCell cell;
    ExperimentConfig cfg = base;
    std::size_t rem = c;
    for (auto it = grid.rbegin(); it != grid.rend(); ++it) {
      const double v = it->second[rem % it->second.size()];
      rem /= it->second.size();
      cell.values[it->first] = v;
    }
    try {
      for (const auto& [key, v] : cell.values) {
        apply_key(cfg, key, v);
      }
      if (!base.out.empty()) {
        cfg.out = base.out / ("cell_" + std::to_string(c));
      }
      spdlog::info("sweep cell {}/{}", c + 1, cells);
      cell.summary = run_experiment(g, cfg);
    } catch (const std::exception& e) {
      cell.error = e.what();
      spdlog::warn("sweep cell {} failed: {}", c, cell.error);
    }
    out.push_back(std::move(cell));
  }
  return out;
}

void write_sweep_csv(const std::filesystem::path& file, const SweepGrid& grid,
                     std::span<const SweepCell> cells) {
  std::ostringstream out;
  for (const auto& [key, values] : grid) {
    out << key << ',';
  }
  out << "lsr,asr,evaluated,failed,error\n";
  for (const SweepCell& cell : cells) {
    for (const auto& [key, values] : grid) {
      out << cell.values.at(key) << ',';
    }
    if (cell.summary) {
      out << cell.summary->lsr << ',' << cell.summary->asr << ',' << cell.summary->evaluated << ','
          << cell.summary->failed << ',';
    } else {
      out << ",,,,";
    }
    std::string err = cell.error;
    std::replace(err.begin(), err.end(), '"', '\'');
    out << (err.empty() ? "" : "\"" + err + "\"") << '\n';
  }
  write_file(file, out.str());
}

}  // namespace lisa

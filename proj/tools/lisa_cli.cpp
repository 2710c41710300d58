#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "lisa/dataset.hpp"
#include "lisa/harness.hpp"
#include "lisa/seed.hpp"

namespace fs = std::filesystem;
using namespace lisa;

namespace {

enum Exit { ok = 0, config_error = 1, dataset_error = 2, runtime_error = 3 };

// String-typed views of the enum options so CLI11 and the config file share them.
struct Options {
  ExperimentConfig cfg;
  std::string recommender = "gae";
  std::string classifier = "gcn";
  std::string attack = "lisa";
  std::string variant = "full";
  std::string grid;
  NodeId target = -1;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Options& o) {
  ExperimentConfig& c = o.cfg;
  cmd->add_option("--dataset", c.dataset, "Dataset directory")->required();
  cmd->add_option("--recommender", o.recommender, "gae|vgae");
  cmd->add_option("--classifier", o.classifier, "gcn|sgc|sage");
  cmd->add_option("--attack", o.attack, "lisa|graphcopy|nia|none");
  cmd->add_option("--targets", c.num_targets, "Number of targets");
  cmd->add_option("--seed", c.seed, "Master seed");
  cmd->add_option("--alpha", c.lisa.alpha, "Link-loss weight in the attack loss");
  cmd->add_option("--beta", c.lisa.beta, "Classification weight in the structure score");
  cmd->add_option("--subgraph-nodes", c.lisa.n_V, "Payload nodes");
  cmd->add_option("--subgraph-edges", c.lisa.n_E, "Payload edges");
  cmd->add_option("--k", c.k, "Recommendations per target");
  cmd->add_option("--lsr", c.nia.lsr, "Link success rate for nia");
  cmd->add_option("--out", c.out, "Output directory");
  cmd->add_option("--epochs", c.lisa.outer_epochs, "Outer epochs");
  cmd->add_option("--inner-steps", c.lisa.inner_steps, "Surrogate steps per epoch");
  cmd->add_option("--lr-feat", c.lisa.lr_feat, "Feature step size");
  cmd->add_option("--swaps", c.lisa.swaps_per_step, "Edge swaps per structure step");
  cmd->add_option("--variant", o.variant, "full|wo_cls|wo_link|wo_str|wo_feat");
  cmd->add_option("--copy-hops", c.copy_hops, "GraphCopy neighbourhood radius");
  cmd->add_option("--copy-noise", c.copy_noise, "GraphCopy feature noise (fraction of std)");
  cmd->add_option("--victim-steps", c.victim_steps, "Victim training steps");
  cmd->add_option("--normalize-features", c.normalize_features, "Row-normalize features (default true)");
  cmd->add_option("--workers", c.workers, "Parallel targets");
  cmd->add_flag("--quiet", o.quiet, "Only warnings");
}

// Enum strings are resolved after parsing so that config and flags agree.
void resolve(Options& o) {
  try {
    o.cfg.recommender = parse_link_arch(o.recommender);
    o.cfg.classifier = parse_classifier_arch(o.classifier);
  } catch (const ModelError& e) {
    throw ConfigError(e.what());
  }
  o.cfg.attack = parse_attack_kind(o.attack);
  o.cfg.lisa.variant = parse_variant(o.variant);
  o.cfg.validate();
  if (o.quiet) {
    spdlog::set_level(spdlog::level::warn);
  }
}

Graph load(const ExperimentConfig& c) { return load_experiment_graph(c); }

void print_summary(const ExperimentSummary& s) {
  std::printf("LSR %.1f%%  ASR %.1f%%  clean %.1f%%  evaluated %d  failed %d\n", s.lsr, s.asr,
              s.clean_misclassification, s.evaluated, s.failed);
}

int cmd_attack(Options& o) {
  const ExperimentConfig& c = o.cfg;
  if (c.attack != AttackKind::lisa) {
    throw ConfigError("attack emits a LiSA payload; use experiment for baselines");
  }
  const Graph g = load(c);
  if (o.target < 0 || o.target >= g.num_nodes()) {
    throw ConfigError("--target out of range");
  }
  const Environment env = make_environment(g, c);
  const LisaResult res = run_lisa(env.ctx, o.target, c.lisa_config());
  const TargetResult r = evaluate_target(env, res.payload, o.target, c.k);
  if (!c.out.empty()) {
    fs::create_directories(c.out / "trace");
    write_trace(c.out / "trace" / (std::to_string(o.target) + ".jsonl"), res.trace);
    nlohmann::json p;
    p["target"] = o.target;
    p["y_atk"] = res.label.y_atk;
    p["epochs"] = res.epochs_run;
    p["converged"] = res.converged;
    p["failed"] = res.failed;
    p["failure"] = res.failure;
    p["link_success"] = r.link_success;
    p["attacked_pred"] = r.attacked_pred;
    p["edges"] = nlohmann::json::array();
    for (const Edge& e : res.payload.edges()) {
      p["edges"].push_back({e.u, e.v});
    }
    const Matrix& f = res.payload.features();
    p["features"] = nlohmann::json::array();
    for (Eigen::Index i = 0; i < f.rows(); ++i) {
      p["features"].push_back(std::vector<double>(f.row(i).data(), f.row(i).data() + f.cols()));
    }
    std::ofstream(c.out / "payload.json") << p.dump() << '\n';
  }
  std::printf("target %d  y_atk %d  link %d  pred %d -> %d  epochs %d\n", o.target,
              res.label.y_atk, r.link_success ? 1 : 0, r.clean_pred, r.attacked_pred,
              res.epochs_run);
  return res.failed ? runtime_error : ok;
}

int cmd_experiment(Options& o) {
  const ExperimentSummary s = run_experiment(o.cfg);
  print_summary(s);
  return ok;
}

int cmd_sweep(Options& o) {
  const SweepGrid grid = parse_grid(o.grid);
  const std::vector<SweepCell> cells = sweep(o.cfg, grid);
  if (!o.cfg.out.empty()) {
    fs::create_directories(o.cfg.out);
    write_sweep_csv(o.cfg.out / "sweep.csv", grid, cells);
  }
  int failures = 0;
  for (const SweepCell& cell : cells) {
    for (const auto& [k, v] : cell.values) {
      std::printf("%s=%g ", k.c_str(), v);
    }
    if (cell.summary) {
      print_summary(*cell.summary);
    } else {
      ++failures;
      std::printf("error: %s\n", cell.error.c_str());
    }
  }
  return failures == static_cast<int>(cells.size()) ? runtime_error : ok;
}

int cmd_similarity(Options& o) {
  ExperimentConfig c = o.cfg;
  const Graph g = load(c);
  const ExperimentSummary s = run_experiment(g, c);
  const EdgeSplit split = edge_split(g, c.edge_train_frac, c.edge_label_frac,
                                     derive_seed(c.seed, {stream::split}));
  std::vector<NodeId> targets;
  std::vector<Subgraph> payloads;
  for (std::size_t i = 0; i < s.results.size(); ++i) {
    if (!s.results[i].failed && s.payloads[i].num_nodes() > 0) {
      targets.push_back(s.results[i].target);
      payloads.push_back(s.payloads[i]);
    }
  }
  const SimilarityReport rep = similarity_analysis(g, split, targets, payloads, c.seed);
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    write_similarity_csv(c.out / "similarity.csv", rep);
  }
  std::printf("samples %zu  mean %.3f  peak %.3f  skipped %d\n", rep.similarity.size(),
              rep.mean(), rep.peak(), rep.skipped);
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Subgraph injection attacks on link recommenders and node classifiers"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);
  // Keys go under a section named after the subcommand, e.g. [experiment].
  app.set_config("--config", "", "TOML/INI file whose keys mirror the long flags");
  app.fallthrough();

  Options o;
  std::string validate_dir;

  auto* attack = app.add_subcommand("attack", "Attack a single target, emit payload and trace");
  add_common(attack, o);
  attack->add_option("--target", o.target, "Target node id")->required();
  auto* experiment = app.add_subcommand("experiment", "Attack sampled targets and score LSR/ASR");
  add_common(experiment, o);
  auto* sweep_cmd = app.add_subcommand("sweep", "Grid of experiments");
  add_common(sweep_cmd, o);
  sweep_cmd->add_option("--grid", o.grid, "key=v1,v2;key2=...")->required();
  auto* similarity = app.add_subcommand("similarity", "Clean-GAE cosine similarity of payloads");
  add_common(similarity, o);
  auto* validate = app.add_subcommand("validate-dataset", "Check a dataset directory");
  validate->add_option("dir", validate_dir, "Dataset directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : config_error;
  }

  try {
    if (validate->parsed()) {
      const ValidationReport rep = validate_dataset(validate_dir);
      std::cout << rep.to_json() << '\n';
      return rep.passed() ? ok : dataset_error;
    }
    resolve(o);
    if (attack->parsed()) return cmd_attack(o);
    if (experiment->parsed()) return cmd_experiment(o);
    if (sweep_cmd->parsed()) return cmd_sweep(o);
    if (similarity->parsed()) return cmd_similarity(o);
  } catch (const ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return config_error;
  } catch (const DatasetError& e) {
    spdlog::error("dataset: {}", e.what());
    return dataset_error;
  } catch (const GraphError& e) {
    spdlog::error("dataset: {}", e.what());
    return dataset_error;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return runtime_error;
  }
  return ok;
}

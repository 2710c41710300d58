#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>

#include "fixtures.hpp"
#include "lisa/harness.hpp"

namespace fs = std::filesystem;
using namespace lisa;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const fs::path& tiny_dir() {
  static const fs::path dir =
      fixture::write_dataset(fixture::random_graph(60, 8, 3, 21, 0.06, 0.3), "harness");
  return dir;
}

ExperimentConfig tiny_config(AttackKind kind, const std::string& out = "") {
  ExperimentConfig c;
  c.dataset = tiny_dir();
  c.attack = kind;
  c.num_targets = 4;
  c.seed = 3;
  c.label_frac = 0.3;
  c.pretrain_steps = 20;
  c.victim_steps = 20;
  c.lisa.n_V = 3;
  c.lisa.n_E = 2;
  c.lisa.outer_epochs = 4;
  c.lisa.inner_steps = 2;
  c.lisa.lr_feat = 0.1;
  c.nia.feature_steps = 10;
  c.copy_hops = 1;
  if (!out.empty()) c.out = fs::temp_directory_path() / out;
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(LISA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(SampleTargets, AllEligibleAndDeterministic) {
  const Graph g = fixture::random_graph(20, 2, 2, 1, 0.2, 0.25);
  const int eligible = 20 - static_cast<int>(g.train_nodes().size());
  auto all = sample_targets(g, eligible, 4);
  std::sort(all.begin(), all.end());
  for (NodeId v : all) EXPECT_FALSE(g.train_mask()[v]);
  EXPECT_EQ(std::set<NodeId>(all.begin(), all.end()).size(), static_cast<std::size_t>(eligible));
  EXPECT_EQ(sample_targets(g, 5, 4), sample_targets(g, 5, 4));
  EXPECT_NE(sample_targets(g, 5, 4), sample_targets(g, 5, 5));
  EXPECT_THROW(sample_targets(g, eligible + 1, 4), ConfigError);
}

TEST(Experiment, NoAttackMatchesCleanVictim) {
  const ExperimentSummary s = run_experiment(tiny_config(AttackKind::none));
  EXPECT_EQ(s.lsr, 0.0);
  EXPECT_EQ(s.asr, s.clean_misclassification);
  for (const auto& r : s.results) EXPECT_EQ(r.clean_pred, r.attacked_pred);
}

TEST(Experiment, NiaWithoutLinksKeepsCleanPredictions) {
  ExperimentConfig c = tiny_config(AttackKind::nia);
  c.nia.lsr = 0.0;
  const ExperimentSummary s = run_experiment(c);
  EXPECT_EQ(s.lsr, 0.0);
  for (const auto& r : s.results) EXPECT_EQ(r.clean_pred, r.attacked_pred);
  c.nia.lsr = 1.0;
  EXPECT_EQ(run_experiment(c).lsr, 100.0);
}

TEST(Experiment, AggregatesMatchPerTargetFileAndRerunsAreIdentical) {
  const ExperimentConfig a = tiny_config(AttackKind::lisa, "lisa_run_a");
  const ExperimentConfig b = tiny_config(AttackKind::lisa, "lisa_run_b");
  const ExperimentSummary s = run_experiment(a);
  run_experiment(b);
  EXPECT_EQ(slurp(a.out / "results.csv"), slurp(b.out / "results.csv"));
  EXPECT_TRUE(fs::exists(a.out / "summary.json"));
  EXPECT_TRUE(fs::exists(a.out / "timings.csv"));

  // recompute the means from results.csv
  std::istringstream csv(slurp(a.out / "results.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "target,true_label,clean_pred,attacked_pred,y_atk,link_success,payload_links,"
                  "payload_nodes,misclassified,failed");
  int n = 0, links = 0, wrong = 0;
  while (std::getline(csv, line)) {
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string x; std::getline(ls, x, ',');) f.push_back(x);
    ASSERT_EQ(f.size(), 10u);
    if (f[9] == "1") continue;
    ++n;
    links += std::stoi(f[5]);
    wrong += std::stoi(f[8]);
  }
  ASSERT_EQ(n, s.evaluated);
  EXPECT_NEAR(s.lsr, 100.0 * links / n, 1e-9);
  EXPECT_NEAR(s.asr, 100.0 * wrong / n, 1e-9);
  const auto j = nlohmann::json::parse(slurp(a.out / "summary.json"));
  EXPECT_NEAR(j["lsr"].get<double>(), s.lsr, 1e-9);
  for (const auto& r : s.results) EXPECT_TRUE(fs::exists(a.out / "trace" / (std::to_string(r.target) + ".jsonl")));
}

TEST(Experiment, GraphCopyPayloadIsNeighbourhoodSized) {
  const ExperimentSummary s = run_experiment(tiny_config(AttackKind::graphcopy));
  const Graph g = load_experiment_graph(tiny_config(AttackKind::graphcopy));
  for (std::size_t i = 0; i < s.results.size(); ++i) {
    EXPECT_EQ(static_cast<std::size_t>(s.results[i].payload_nodes),
              n_hop_neighborhood(g, s.results[i].target, 1).size());
  }
}

TEST(Aggregate, MeansOverNonFailed) {
  ExperimentSummary s;
  TargetResult ok1, ok2, bad;
  ok1.link_success = true;
  ok1.misclassified = true;
  ok2.true_label = 1;
  bad.failed = true;
  bad.link_success = true;
  s.results = {ok1, ok2, bad};
  aggregate(s);
  EXPECT_EQ(s.evaluated, 2);
  EXPECT_EQ(s.failed, 1);
  EXPECT_DOUBLE_EQ(s.lsr, 50.0);
  EXPECT_DOUBLE_EQ(s.asr, 50.0);
}

TEST(Sweep, GridParsingAndSingleCellEqualsRun) {
  const SweepGrid g = parse_grid("alpha=0.5,1;subgraph-nodes=3");
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[0].first, "alpha");
  EXPECT_EQ(g[0].second, (std::vector<double>{0.5, 1.0}));
  EXPECT_EQ(g[1].first, "subgraph_nodes");
  EXPECT_THROW(parse_grid("gamma=1"), ConfigError);
  EXPECT_THROW(parse_grid("alpha=x"), ConfigError);

  ExperimentConfig c = tiny_config(AttackKind::nia);
  const auto cells = sweep(c, parse_grid("lsr=0.5"));
  ASSERT_EQ(cells.size(), 1u);
  ASSERT_TRUE(cells[0].summary);
  c.nia.lsr = 0.5;
  const ExperimentSummary direct = run_experiment(c);
  EXPECT_EQ(cells[0].summary->lsr, direct.lsr);
  EXPECT_EQ(cells[0].summary->asr, direct.asr);
}

TEST(Config, Validation) {
  ExperimentConfig c = tiny_config(AttackKind::lisa);
  c.num_targets = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_attack_kind("pgd"), ConfigError);
  EXPECT_EQ(victim_classifier_options(ClassifierArch::sgc).lr, 0.2);
  EXPECT_EQ(victim_classifier_options(ClassifierArch::gcn).lr, 0.01);
}

TEST(Cli, ExitCodes) {
  const std::string ds = tiny_dir().string();
  EXPECT_EQ(run_cli("--version"), 0);
  EXPECT_EQ(run_cli("experiment"), 1);  // --dataset missing
  EXPECT_EQ(run_cli("experiment --dataset " + ds + " --attack pgd"), 1);
  EXPECT_EQ(run_cli("experiment --dataset " + ds + " --subgraph-nodes 2 --subgraph-edges 5"), 1);
  EXPECT_EQ(run_cli("experiment --dataset /nonexistent/dir --attack none"), 2);
  EXPECT_EQ(run_cli("validate-dataset " + ds), 0);
  EXPECT_EQ(run_cli("validate-dataset /nonexistent/dir"), 2);
  EXPECT_EQ(run_cli("experiment --quiet --dataset " + ds +
                    " --attack none --targets 3 --victim-steps 5"),
            0);
}

TEST(Cli, ConfigFileMirrorsFlags) {
  const fs::path out = fs::temp_directory_path() / "lisa_cli_cfg";
  fs::remove_all(out);
  const fs::path cfg = fs::temp_directory_path() / "lisa_cli.toml";
  std::ofstream(cfg) << "[experiment]\ndataset = \"" << tiny_dir().string() << "\"\nattack = \"none\"\ntargets = 3\n"
                     << "victim-steps = 5\nout = \"" << out.string() << "\"\n";
  EXPECT_EQ(run_cli("experiment --quiet --config " + cfg.string()), 0);
  const auto j = nlohmann::json::parse(slurp(out / "summary.json"));
  EXPECT_EQ(j["evaluated"].get<int>(), 3);
}

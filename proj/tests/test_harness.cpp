#include <cstdlib>
#include <set>
#include <sys/wait.h>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "osssl/ablate.hpp"
#include "osssl/checkpoint.hpp"
#include "osssl/config.hpp"
#include "osssl/errors.hpp"
#include "osssl/report.hpp"
#include "osssl/trainer.hpp"
#include "test_util.hpp"

using namespace osssl;
using nlohmann::json;

namespace {

// Small enough for a few seconds per run, large enough that warm-up finishes
// and the pools fill and start replacing within the run.
TrainConfig tiny_config() {
  TrainConfig c;
  DatasetSpec d;
  d.num_classes = 3;
  d.ood_clusters = 3;
  d.input_dim = 8;
  d.labeled_per_class = 10;
  d.unlabeled_per_class = 100;
  d.ood_count = 150;
  d.test_per_class = 40;
  d.separation = 4.0;
  d.seed = 3;
  c.dataset = d;
  c.hidden_dim = 16;
  c.feature_dim = 6;
  c.epochs = 30;
  c.labeled_batch = 16;
  c.unlabeled_batch = 48;
  c.lr = 0.3;
  c.cluster.prototypes_per_class = 3;
  c.cluster.warmup_samples = 4;
  c.cluster.kmeans_iters = 20;
  c.pool_capacity = 8;
  c.pool_levels = 2;
  c.seed = 5;
  return c;
}

std::vector<std::string> lines(const std::filesystem::path& p) {
  std::vector<std::string> out;
  std::ifstream in(p);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<json> events(const std::filesystem::path& dir) {
  std::vector<json> out;
  for (const auto& l : lines(dir / "events.jsonl")) out.push_back(json::parse(l));
  return out;
}

RunResult run(const TrainConfig& cfg, const std::filesystem::path& dir, std::optional<std::size_t> stop = {},
              bool resume = false) {
  RunOptions o;
  o.out_dir = dir;
  o.event_log = true;
  o.stop_after_iterations = stop;
  o.resume = resume;
  return train(cfg, o);
}

std::size_t first_index(const std::vector<json>& ev, const std::string& type) {
  for (std::size_t i = 0; i < ev.size(); ++i)
    if (ev[i]["event"] == type) return i;
  return ev.size();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(OSSSL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_json(const std::filesystem::path& p, const json& j) { std::ofstream(p) << j.dump(2) << '\n'; }

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("the tiny config exercises every stage") {
  const auto dir = testutil::scratch_dir("h_stages");
  const auto r = run(tiny_config(), dir);
  REQUIRE(r.prototype_init_epoch.has_value());
  CHECK(*r.prototype_init_epoch < 15);
  const auto ev = events(dir);
  CHECK(first_index(ev, "pool_append") < ev.size());
  CHECK(first_index(ev, "pool_replace") < ev.size());
  CHECK(r.epochs.size() == 30);
  CHECK(lines(dir / "metrics.jsonl").size() == 30);
  CHECK(std::filesystem::exists(dir / "summary.json"));
  CHECK(std::filesystem::exists(dir / "config.json"));
}

TEST_CASE("identical configs give byte-identical logs") {
  const auto a = testutil::scratch_dir("h_det_a");
  const auto b = testutil::scratch_dir("h_det_b");
  run(tiny_config(), a);
  run(tiny_config(), b);
  for (const char* f : {"metrics.jsonl", "events.jsonl", "checkpoint.json", "summary.json", "config.json"})
    CHECK_MESSAGE(testutil::read_file(a / f) == testutil::read_file(b / f), f);
}

TEST_CASE("resume reproduces the uninterrupted run") {
  const auto full = testutil::scratch_dir("h_res_full");
  run(tiny_config(), full);
  // 10 iterations per epoch: stop during warm-up, just after prototype
  // initialization, at an epoch boundary, and with the pools in use.
  for (std::size_t stop : {5u, 103u, 150u, 237u}) {
    const auto part = testutil::scratch_dir("h_res_part");
    const auto first = run(tiny_config(), part, stop);
    REQUIRE(first.interrupted);
    CHECK(first.state.global_iteration == stop);
    const auto second = run(tiny_config(), part, std::nullopt, true);
    CHECK_FALSE(second.interrupted);
    for (const char* f : {"metrics.jsonl", "events.jsonl", "checkpoint.json", "summary.json"})
      CHECK_MESSAGE(testutil::read_file(full / f) == testutil::read_file(part / f), f << " after stop at " << stop);
  }
}

TEST_CASE("a raised stop flag checkpoints and resumes") {
  const auto dir = testutil::scratch_dir("h_flag");
  std::atomic<bool> stop{true};
  RunOptions o;
  o.out_dir = dir;
  o.stop_flag = &stop;
  const auto r = train(tiny_config(), o);
  CHECK(r.interrupted);
  CHECK(r.state.global_iteration == 0);
  CHECK(std::filesystem::exists(dir / "checkpoint.json"));
  stop = false;
  o.resume = true;
  CHECK_FALSE(train(tiny_config(), o).interrupted);
}

TEST_CASE("resume refuses a different config") {
  const auto dir = testutil::scratch_dir("h_res_cfg");
  run(tiny_config(), dir, 3);
  auto other = tiny_config();
  other.lr = 0.1;
  CHECK_THROWS_AS(run(other, dir, std::nullopt, true), ConfigError);
}

TEST_CASE("warm-up is plain FixMatch on level 0") {
  const auto dir = testutil::scratch_dir("h_warm");
  run(tiny_config(), dir);
  const auto ev = events(dir);
  const std::size_t init = first_index(ev, "init_prototypes");
  REQUIRE(init < ev.size());
  for (std::size_t i = 0; i < init; ++i) {
    const auto& e = ev[i];
    const std::string type = e["event"];
    CHECK((type == "step" || type == "init_deferred"));
    if (type == "step") {
      CHECK(e["cluster_unlabeled"] == 0.0);
      CHECK(e["cluster_labeled"] == 0.0);
      CHECK(e["level"] == 0);
    }
  }
  CHECK(first_index(ev, "prototype_update") > init);
}

TEST_CASE("the logged total is the sum of its parts") {
  const auto dir = testutil::scratch_dir("h_add");
  run(tiny_config(), dir);
  std::size_t clustered = 0;
  for (const auto& e : events(dir)) {
    if (e["event"] != "step") continue;
    const double parts = e["supervised"].get<double>() + e["unlabeled"].get<double>() +
                         e["cluster_weight"].get<double>() *
                             (e["cluster_unlabeled"].get<double>() + e["cluster_labeled"].get<double>());
    CHECK(std::abs(e["total"].get<double>() - parts) <= 1e-12);
    clustered += e["cluster_labeled"] != 0.0;
  }
  CHECK(clustered > 0);
}

TEST_CASE("disabling refinement leaves the first clustering steps bit-identical") {
  const auto with = testutil::scratch_dir("h_tog_on");
  const auto without = testutil::scratch_dir("h_tog_off");
  auto cfg = tiny_config();
  run(cfg, with);
  cfg.refinement = RefinementMode::off;
  run(cfg, without);
  auto core = [](const std::vector<json>& ev) {
    std::vector<json> out;
    for (const auto& e : ev)
      if (e["event"] == "step" || e["event"] == "prototype_update" || e["event"] == "identify" ||
          e["event"] == "init_prototypes")
        out.push_back(e);
    return out;
  };
  const auto a = core(events(with));
  const auto b = core(events(without));
  // Everything up to the first step drawn from a pool level must agree.
  std::size_t first_pool_step = a.size();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i]["event"] == "step" && a[i]["level"] != 0) {
      first_pool_step = i;
      break;
    }
  }
  REQUIRE(first_pool_step < a.size());
  std::size_t first_cluster_step = a.size();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i]["event"] == "step" && a[i]["cluster_labeled"] != 0.0) {
      first_cluster_step = i;
      break;
    }
  }
  CHECK(first_cluster_step < first_pool_step);
  for (std::size_t i = 0; i < first_pool_step; ++i) REQUIRE(a[i] == b[i]);
}

TEST_CASE("random and importance replacement diverge only at a replacement") {
  const auto imp = testutil::scratch_dir("h_imp");
  const auto rnd = testutil::scratch_dir("h_rnd");
  auto cfg = tiny_config();
  cfg.refinement = RefinementMode::importance;
  run(cfg, imp);
  cfg.refinement = RefinementMode::random;
  run(cfg, rnd);
  const auto a = lines(imp / "events.jsonl");
  const auto b = lines(rnd / "events.jsonl");
  std::size_t diverge = 0;
  while (diverge < a.size() && diverge < b.size() && a[diverge] == b[diverge]) ++diverge;
  REQUIRE(diverge < std::min(a.size(), b.size()));
  // Before the split both logs agree; the split itself is an eviction decision.
  auto type = [](const std::string& l) { return json::parse(l)["event"].get<std::string>(); };
  const std::set<std::string> pool_events{"pool_replace", "pool_discard"};
  CHECK(pool_events.contains(type(a[diverge])));
  CHECK(pool_events.contains(type(b[diverge])));
}

TEST_CASE("with every toggle off training is plain FixMatch") {
  auto cfg = tiny_config();
  cfg.clustering = ClusteringMode::off;
  cfg.refinement = RefinementMode::off;
  cfg.epochs = 3;
  const auto r = train(cfg);

  const auto data = materialize_dataset(cfg);
  Rng init = Rng::stream(cfg.seed, "model_init");
  auto params = init_params({data.input_dim(), cfg.hidden_dim, cfg.feature_dim, data.num_classes}, init);
  Rng lab_rng = Rng::stream(cfg.seed, "labeled_batch");
  Rng raw_rng = Rng::stream(cfg.seed, "raw_draw");
  Rng aug_rng = Rng::stream(cfg.seed, "augment");
  const std::size_t iters = (data.unlabeled.size() + cfg.unlabeled_batch - 1) / cfg.unlabeled_batch;
  std::vector<double> history;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (std::size_t it = 0; it < iters; ++it) {
      std::vector<Vector> lx, ux;
      std::vector<std::size_t> ly;
      for (auto i : lab_rng.sample_without_replacement(data.labeled.size(), cfg.labeled_batch)) {
        lx.push_back(data.labeled[i].x);
        ly.push_back(*data.labeled[i].true_class);
      }
      for (auto i : raw_rng.sample_without_replacement(data.unlabeled.size(), cfg.unlabeled_batch))
        ux.push_back(data.unlabeled[i].x);
      const auto loss = ssl_loss(params, lx, ly, ux, aug_rng, cfg.ssl_config(), cfg.augment_config());
      params = sgd_step(std::move(params), loss.grads, cfg.lr, cfg.weight_decay);
    }
    history.push_back(accuracy(params, data.test));
  }
  CHECK(r.state.params == params);
  CHECK(r.accuracy_history == history);
  CHECK_FALSE(r.prototype_init_epoch.has_value());
}

TEST_CASE("weak-only clustering puts no gradient on the strong view") {
  Rng rng(91);
  const ModelDims dims{4, 6, 3, 2};
  const auto params = init_params(dims, rng);
  std::vector<Vector> lab, weak, strong;
  for (int i = 0; i < 3; ++i) lab.push_back(testutil::random_vector(rng, 4));
  for (int i = 0; i < 5; ++i) {
    weak.push_back(testutil::random_vector(rng, 4));
    strong.push_back(testutil::random_vector(rng, 4));
  }
  const std::vector<std::size_t> y{0, 1, 1};
  PrototypeBank bank(2, 3, 3);
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t j = 0; j < 3; ++j) bank.set_prototype(s, j, testutil::random_unit(rng, 3));
  bank.mark_initialized();
  const std::vector<Vector> centers{testutil::random_unit(rng, 3), testutil::random_unit(rng, 3)};
  ClusterConfig cfg;
  cfg.prototypes_per_class = 3;
  cfg.confidence_threshold = 0.1;  // every gate open

  for (bool consistency : {false, true}) {
    StepGraph graph(params, lab, weak, strong);
    const auto terms = add_ssl_terms(graph, y, SslConfig{1.0, 1.0});  // SSL gates closed
    const auto ct = add_cluster_terms(graph, terms.records, y, bank, centers, cfg, consistency);
    CHECK(ct.gate_open == 5);
    bool strong_zero = true;
    for (std::size_t i = 0; i < 5; ++i) {
      const auto& up = graph.upstream(StepGraph::View::strong, i);
      strong_zero = strong_zero && up.d_feature == Vector(3, 0.0) && up.d_logits == Vector(2, 0.0);
    }
    CHECK(strong_zero == !consistency);
  }
}

TEST_CASE("evaluate reproduces the last logged epoch") {
  const auto dir = testutil::scratch_dir("h_eval");
  const auto cfg = tiny_config();
  run(cfg, dir);
  const auto state = load_checkpoint(dir / "checkpoint.json");
  const auto last = json::parse(lines(dir / "metrics.jsonl").back());
  const auto data = generate_open_set(*cfg.dataset);  // regenerated from the spec
  const auto a = to_json(evaluate_state(state.params, state.bank, state.pyramid, data));
  const auto b = to_json(evaluate_state(state.params, state.bank, state.pyramid, data));
  CHECK(a == b);
  for (const auto& [key, value] : a.items()) CHECK_MESSAGE(last.at(key) == value, key);

  save_csv(data, dir / "data.csv");
  CHECK(to_json(evaluate_state(state.params, state.bank, state.pyramid, load_csv(dir / "data.csv"))) == a);
}

TEST_CASE("checkpoint round trip and errors") {
  const auto dir = testutil::scratch_dir("h_ckpt");
  run(tiny_config(), dir, 30);
  const auto path = dir / "checkpoint.json";
  const auto state = load_checkpoint(path);
  CHECK(checkpoint_to_json(checkpoint_from_json(checkpoint_to_json(state))) == checkpoint_to_json(state));

  auto j = json::parse(testutil::read_file(path));
  SUBCASE("version mismatch") {
    j["format_version"] = kCheckpointFormatVersion + 1;
    CHECK_THROWS_AS(checkpoint_from_json(j), VersionMismatch);
  }
  SUBCASE("missing field") {
    j.erase("bank");
    CHECK_THROWS_AS(checkpoint_from_json(j), CorruptCheckpoint);
  }
  SUBCASE("bad shape") {
    j["params"]["b1"].push_back(0.0);
    CHECK_THROWS_AS(checkpoint_from_json(j), CorruptCheckpoint);
  }
  SUBCASE("truncated file") {
    const auto text = testutil::read_file(path);
    std::ofstream(dir / "cut.json") << text.substr(0, text.size() / 2);
    CHECK_THROWS_AS(load_checkpoint(dir / "cut.json"), CorruptCheckpoint);
  }
}

TEST_CASE("ablation matrix") {
  auto base = tiny_config();
  base.epochs = 3;
  const auto rows = ablation_rows(base);
  REQUIRE(rows.size() == 8);
  CHECK(rows.front().name == "baseline");
  CHECK(rows.back().name == "labeled_only");

  const auto dir = testutil::scratch_dir("h_ablate");
  AblationOptions opts;
  opts.seeds = 1;
  opts.out_dir = dir;
  const auto runs = ablate(base, opts);
  REQUIRE(runs.size() == 8);
  for (const auto& r : runs) {
    CHECK_MESSAGE(r.ok, r.row << ": " << r.error);
    if (r.row == "labeled_only") CHECK(r.summary.gate_open_pseudo == 0);
    if (r.row == "clean") CHECK(r.summary.raw_id_ratio == 1.0);
    if (r.row == "baseline") CHECK(r.summary.raw_id_ratio < 1.0);
  }
  CHECK(std::filesystem::exists(dir / "ablation.csv"));
  CHECK(std::filesystem::exists(dir / "ablation.txt"));
  CHECK(write_report(dir) == 8);
  CHECK(std::filesystem::exists(dir / "summary.csv"));

  opts.only_rows = {"clean"};
  opts.out_dir.clear();
  CHECK(ablate(base, opts).size() == 1);
}

TEST_CASE("seed offsets move both the training and the dataset seed") {
  const auto c = with_seed_offset(tiny_config(), 2);
  CHECK(c.seed == 7);
  CHECK(c.dataset->seed == 5);
}

TEST_CASE("final accuracy averages the last ten epochs") {
  CHECK(final_accuracy({}) == 0.0);
  CHECK(final_accuracy({0.5, 0.7}) == doctest::Approx(0.6));
  std::vector<double> h(15, 0.0);
  for (std::size_t i = 5; i < 15; ++i) h[i] = 1.0;
  CHECK(final_accuracy(h) == 1.0);
}

TEST_CASE("CLI exit codes") {
  const auto dir = testutil::scratch_dir("h_cli");
  const auto cfg = tiny_config();
  write_json(dir / "spec.json", to_json(*cfg.dataset));
  auto small = to_json(cfg);
  small["training"]["epochs"] = 1;
  write_json(dir / "train.json", small);
  auto bad = small;
  bad["training"]["bogus"] = 1;
  write_json(dir / "bad.json", bad);
  const std::string d = dir.string();

  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("no-such-command") == 2);
  CHECK(run_cli("train --config " + d + "/bad.json --out-dir " + d + "/run") == 2);
  CHECK(run_cli("train --config " + d + "/missing.json --out-dir " + d + "/run") == 2);
  CHECK(run_cli("generate-data --spec " + d + "/spec.json --out " + d + "/data.csv") == 0);
  CHECK(std::filesystem::exists(dir / "data.csv"));
  CHECK(run_cli("train --config " + d + "/train.json --out-dir " + d + "/run") == 0);
  CHECK(run_cli("evaluate --checkpoint " + d + "/run/checkpoint.json --data " + d + "/data.csv") == 0);
  CHECK(run_cli("evaluate --checkpoint " + d + "/run/checkpoint.json --data " + d + "/nope.csv") == 3);
  std::ofstream(dir / "junk.json") << "{";
  CHECK(run_cli("evaluate --checkpoint " + d + "/junk.json --data " + d + "/data.csv") == 3);
  CHECK(run_cli("report --run-dir " + d + "/run") == 0);
  CHECK(std::filesystem::exists(dir / "run" / "curves.csv"));
}

}  // TEST_SUITE

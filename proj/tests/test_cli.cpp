#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include <nlohmann/json.hpp>

#include "takand/dataset.hpp"
#include "takand/training.hpp"
#include "test_util.hpp"

using namespace takand;
namespace fs = std::filesystem;

namespace {

const std::string kCli = TAKAND_CLI_PATH;

struct Workspace {
  testutil::TempDir dir{"cli"};
  fs::path data = dir / "data";

  Workspace() {
    const auto r = cli("make-synthetic --out '" + data.string() + "'");
    REQUIRE(r.exit_code == 0);
  }

  testutil::CommandResult cli(const std::string& args) const {
    return testutil::run_command("'" + kCli + "' " + args, dir.path());
  }

  // A small, fast configuration over the generated benchmark.
  fs::path config(const std::string& name, const nlohmann::json& train_overrides = {}) const {
    nlohmann::json train{{"dim", 8},        {"timesteps", 10},  {"sample_steps", 5},
                         {"channels", {4, 8}}, {"groups", 2},     {"token_dim", 4},
                         {"time_dim", 4},   {"label_dim", 2},   {"transe_epochs", 20},
                         {"steps", 5},      {"shared_task_relations", true}};
    if (!train_overrides.is_null()) train.update(train_overrides);
    const nlohmann::json doc{{"data_dir", data.string()}, {"out_dir", (dir / name).string()},
                             {"train", train}};
    const auto path = dir / (name + ".json");
    std::ofstream(path) << doc.dump(2);
    return path;
  }
};

}  // namespace

TEST_CASE("exit codes for usage errors") {
  Workspace w;
  CHECK(w.cli("").exit_code == 1);
  CHECK(w.cli("frobnicate").exit_code == 1);
  CHECK(w.cli("--help").exit_code == 0);
  CHECK(w.cli("train --bogus-flag").exit_code == 1);
}

TEST_CASE("prepare on an empty directory lists every missing file") {
  Workspace w;
  const auto empty = w.dir / "empty";
  fs::create_directories(empty);
  const auto r = w.cli("prepare --data-dir '" + empty.string() + "'");
  CHECK(r.exit_code == 1);
  for (const char* f : {"path_graph", "train_tasks.json", "dev_tasks.json", "test_tasks.json",
                        "rel2candidates.json"})
    CHECK(r.err.find(f) != std::string::npos);
}

TEST_CASE("prepare reports counts that match the generated fixture") {
  Workspace w;
  const auto r = w.cli("prepare --shared-task-relations --data-dir '" + w.data.string() + "'");
  REQUIRE(r.exit_code == 0);
  const auto j = nlohmann::json::parse(r.out);

  std::set<std::string> lines, entities, relations;
  std::ifstream in(w.data / "path_graph");
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    lines.insert(line);
    std::istringstream ss(line);
    std::string h, rel, t;
    std::getline(ss, h, '\t');
    std::getline(ss, rel, '\t');
    std::getline(ss, t, '\t');
    entities.insert(h);
    entities.insert(t);
    relations.insert(rel);
  }
  const auto train = read_json_file(w.data / "train_tasks.json");
  const auto test = read_json_file(w.data / "test_tasks.json");
  std::size_t train_triples = 0, test_triples = 0;
  for (const auto& [rel, triples] : train.items()) {
    train_triples += triples.size();
    for (const auto& t : triples) entities.insert(t[2].get<std::string>());
  }
  for (const auto& [rel, triples] : test.items()) test_triples += triples.size();

  CHECK(j["background_triples"] == lines.size());
  CHECK(j["background_relations"] == relations.size());
  CHECK(j["background_relations"] == 4);
  CHECK(j["entities"] == entities.size());
  CHECK(j["entities"] == 40);
  CHECK(j["task_splits"]["train"]["relations"] == 3);
  CHECK(j["task_splits"]["train"]["triples"] == train_triples);
  CHECK(j["task_splits"]["test"]["triples"] == test_triples);
  CHECK(j["task_splits"]["valid"]["relations"] == 0);

  // the same task relations in train and test need the shared flag
  CHECK(w.cli("prepare --data-dir '" + w.data.string() + "'").exit_code == 1);
}

TEST_CASE("malformed dataset files are input errors") {
  Workspace w;
  std::ofstream(w.data / "path_graph", std::ios::app) << "only\ttwo\n";
  const auto r = w.cli("prepare --shared-task-relations --data-dir '" + w.data.string() + "'");
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("path_graph") != std::string::npos);
}

TEST_CASE("config errors are input errors") {
  Workspace w;
  const auto cfg = w.dir / "bad.json";
  std::ofstream(cfg) << R"({"data_dir": ")" << w.data.string() << R"(", "trian": {}})";
  auto r = w.cli("train --config '" + cfg.string() + "'");
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("trian") != std::string::npos);
  CHECK(w.cli("train --config '" + w.config("c", {{"dim", 0}}).string() + "'").exit_code == 1);
  CHECK(w.cli("train --config '" + w.config("c").string() + "' --variant v7").exit_code == 1);
  CHECK(w.cli("train --config '" + w.config("c").string() + "' --variant v2").exit_code == 1);
  CHECK(w.cli("train --data-dir '" + (w.dir / "nowhere").string() + "'").exit_code == 1);
}

TEST_CASE("runtime failures exit with code 2") {
  Workspace w;
  const auto blocker = w.dir / "blocker";
  std::ofstream(blocker) << "a file where the output directory should go";
  const auto r = w.cli("train --config '" + w.config("c").string() + "' --out '" +
                       (blocker / "sub").string() + "'");
  CHECK(r.exit_code == 2);
}

TEST_CASE("eval on a rank-oracle checkpoint reports mrr 1") {
  Workspace w;
  const auto data = load_dataset(w.data, true);
  const auto ckpt = w.dir / "oracle.ckpt";
  save_rank_oracle(ckpt, vocab_hashes(data));
  const auto r = w.cli("eval --config '" + w.config("oracle").string() + "' --checkpoint '" +
                       ckpt.string() + "'");
  REQUIRE(r.exit_code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["mrr"] == 1.0);
  CHECK(j["hits1"] == 1.0);
  CHECK(j["n_queries"] == 24);
  CHECK(fs::exists(w.dir / "oracle" / "metrics_test.json"));
}

TEST_CASE("train with zero steps writes the initialization") {
  Workspace w;
  const auto cfg_path = w.config("zero", {{"steps", 0}});
  const auto r = w.cli("train --config '" + cfg_path.string() + "'");
  REQUIRE(r.exit_code == 0);
  CHECK(r.err.find("resolved config") != std::string::npos);
  const auto ckpt = read_checkpoint(w.dir / "zero" / "model.ckpt");
  CHECK(fs::exists(w.dir / "zero" / "resolved_config.json"));

  const auto data = load_dataset(w.data, true);
  const auto cfg = train_config_from_json(read_json_file(cfg_path)["train"]);
  const Model fresh = make_model(cfg, pretrain_embeddings(data, cfg));
  const Model loaded = model_from_checkpoint(ckpt);
  CHECK(loaded.store.snapshot() == fresh.store.snapshot());
}

TEST_CASE("train and eval are reproducible") {
  Workspace w;
  const auto a = w.config("a"), b = w.config("b");
  REQUIRE(w.cli("train --config '" + a.string() + "'").exit_code == 0);
  REQUIRE(w.cli("train --config '" + b.string() + "'").exit_code == 0);
  const auto ta = nlohmann::json::parse(testutil::slurp(w.dir / "a" / "loss_trace.json"));
  const auto tb = nlohmann::json::parse(testutil::slurp(w.dir / "b" / "loss_trace.json"));
  CHECK(ta["loss"].size() == 5);
  CHECK(ta["loss"] == tb["loss"]);

  const auto e1 = w.cli("eval --config '" + a.string() + "'");
  REQUIRE(e1.exit_code == 0);
  const auto m1 = testutil::slurp(w.dir / "a" / "metrics_test.json");
  const auto e2 = w.cli("eval --config '" + a.string() + "'");
  REQUIRE(e2.exit_code == 0);
  CHECK(e1.out == e2.out);
  CHECK(testutil::slurp(w.dir / "a" / "metrics_test.json") == m1);

  // flags override the file
  const auto e3 = w.cli("eval --config '" + a.string() + "' --split train");
  REQUIRE(e3.exit_code == 0);
  CHECK(fs::exists(w.dir / "a" / "metrics_train.json"));
}

TEST_CASE("pretrain writes embeddings that train can reuse") {
  Workspace w;
  const auto cfg = w.config("p");
  REQUIRE(w.cli("pretrain --config '" + cfg.string() + "'").exit_code == 0);
  const auto stem = w.dir / "p" / "embeddings";
  nlohmann::json doc = read_json_file(cfg);
  doc["embeddings"] = stem.string();
  doc["out_dir"] = (w.dir / "q").string();
  std::ofstream(w.dir / "q.json") << doc.dump();
  REQUIRE(w.cli("train --config '" + (w.dir / "q.json").string() + "'").exit_code == 0);
  REQUIRE(w.cli("train --config '" + cfg.string() + "'").exit_code == 0);
  // the in-process pretraining uses the same seed, so both runs agree
  const auto tp = nlohmann::json::parse(testutil::slurp(w.dir / "p" / "loss_trace.json"));
  const auto tq = nlohmann::json::parse(testutil::slurp(w.dir / "q" / "loss_trace.json"));
  CHECK(tp["loss"] == tq["loss"]);

  doc["train"]["dim"] = 6;
  std::ofstream(w.dir / "q.json") << doc.dump();
  CHECK(w.cli("train --config '" + (w.dir / "q.json").string() + "'").exit_code == 1);
}

TEST_CASE("sample-episode is deterministic and matches a sampler replay") {
  Workspace w;
  const auto cfg = w.config("s", {{"seed", 17}});
  const std::string cmd = "sample-episode --config '" + cfg.string() + "' --relation task_color";
  const auto a = w.cli(cmd), b = w.cli(cmd);
  REQUIRE(a.exit_code == 0);
  CHECK(a.out == b.out);

  const auto data = load_dataset(w.data, true);
  const auto rel = data.tasks.relations.find("task_color");
  REQUIRE(rel);
  Rng rng(17);
  const auto ep = sample_episode(data.tasks, Split::Train, *rel, 5, 5, data.candidates, rng);
  std::string expected = "support (5)\n";
  for (const auto& p : ep.support)
    expected += "  " + data.entities().name(p.head) + "\t" + data.entities().name(p.tail) + "\n";
  CHECK(a.out.find(expected) != std::string::npos);
  std::string queries = "queries (" + std::to_string(ep.queries.size()) + ")\n";
  for (const auto& p : ep.queries)
    queries += "  " + data.entities().name(p.head) + "\t" + data.entities().name(p.tail) + "\n";
  CHECK(a.out.find(queries) != std::string::npos);

  const auto other = w.cli(cmd + " --seed 18");
  REQUIRE(other.exit_code == 0);
  CHECK(other.out != a.out);
}

TEST_CASE("sample-episode errors name the relation") {
  Workspace w;
  const auto cfg = w.config("s");
  auto r = w.cli("sample-episode --config '" + cfg.string() + "' --relation task_color --k-shot 20");
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("task_color") != std::string::npos);
  r = w.cli("sample-episode --config '" + cfg.string() + "' --relation task_mood");
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("task_mood") != std::string::npos);
}

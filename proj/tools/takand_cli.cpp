#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "takand/dataset.hpp"
#include "takand/embedding.hpp"
#include "takand/kg_store.hpp"
#include "takand/run_config.hpp"
#include "takand/training.hpp"

namespace fs = std::filesystem;
using namespace takand;

namespace {

constexpr int kInputError = 1;
constexpr int kRuntimeError = 2;

struct Flags {
  std::string config;
  std::string data_dir;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string split;
  std::string variant;
  std::optional<std::size_t> k_shot;
  std::optional<std::size_t> steps;
  std::string checkpoint;
  std::string relation;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  cmd->add_option("--data-dir", f.data_dir, "dataset directory (NELL-One layout)");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--variant", f.variant, "full, v1, v2 or v3");
  cmd->add_option("--k-shot", f.k_shot, "support size K");
}

RunConfig resolve(const Flags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (!f.data_dir.empty()) c.data_dir = f.data_dir;
  if (!f.out.empty()) c.out_dir = f.out;
  if (f.seed) c.train.seed = *f.seed;
  if (!f.split.empty()) c.split = std::string(split_name(parse_split(f.split)));
  if (!f.variant.empty()) c.train.variant = parse_variant(f.variant);
  if (f.k_shot) c.train.k_shot = *f.k_shot;
  if (f.steps) c.train.steps = *f.steps;
  if (!f.checkpoint.empty()) c.checkpoint = f.checkpoint;
  c.train.validate();
  if (c.data_dir.empty()) throw InputError("no data directory (use --data-dir or data_dir)");
  if (!fs::is_directory(c.data_dir))
    throw InputError("data directory does not exist: " + c.data_dir.string());
  return c;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void echo_config(const RunConfig& c) {
  std::cerr << "resolved config: " << to_json(c).dump() << '\n';
}

EmbeddingTable embeddings_for(const RunConfig& c, const DataBundle& data) {
  if (c.embeddings.empty()) return pretrain_embeddings(data, c.train);
  return load_embeddings(c.embeddings,
                         embedding_vocab_hash(data.entities(), data.background.relations));
}

int cmd_prepare(const Flags& f, bool shared) {
  fs::path dir = f.data_dir;
  if (dir.empty() && !f.config.empty()) dir = load_run_config(f.config).data_dir;
  if (dir.empty()) throw InputError("no data directory (use --data-dir)");
  const auto data = load_dataset(dir, shared);
  std::cout << dataset_summary(data).dump(2) << '\n';
  return 0;
}

int cmd_pretrain(const Flags& f) {
  const RunConfig c = resolve(f);
  echo_config(c);
  const auto data = load_dataset(c.data_dir, c.train.shared_task_relations);
  const auto table = pretrain_embeddings(data, c.train);
  const auto stem = c.out_dir / "embeddings";
  fs::create_directories(c.out_dir);
  save_embeddings(stem, table, embedding_vocab_hash(data.entities(), data.background.relations));
  write_json(c.out_dir / "resolved_config.json", to_json(c));
  std::cout << "wrote " << stem.string() << ".bin (" << table.entity_count() << " entities, "
            << table.relation_count() << " relations, d=" << table.dim << ")\n";
  return 0;
}

int cmd_train(const Flags& f) {
  const RunConfig c = resolve(f);
  echo_config(c);
  const auto data = load_dataset(c.data_dir, c.train.shared_task_relations);
  Model model = make_model(c.train, embeddings_for(c, data));
  const auto index = model_neighbor_index(data, c.train);
  const auto vocab = vocab_hashes(data);
  const auto ckpt = c.checkpoint_path();
  TrainOptions opts;
  opts.diagnostics_dir = c.out_dir;
  opts.on_improvement = [&](std::size_t step, const MetricsReport& r) {
    std::cerr << "step " << step << ": valid mrr " << r.mrr << " (checkpoint saved)\n";
    save_checkpoint(ckpt, model, vocab);
  };
  const auto result = train(model, data, index, opts);
  save_checkpoint(ckpt, model, vocab);
  write_json(c.out_dir / "resolved_config.json", to_json(c));
  write_json(c.out_dir / "loss_trace.json", {{"loss", result.loss_trace},
                                             {"hinge", result.hinge_trace},
                                             {"diffusion", result.diffusion_trace},
                                             {"steps_run", result.steps_run},
                                             {"early_stopped", result.early_stopped}});
  std::cout << "trained " << result.steps_run << " steps";
  if (!result.loss_trace.empty()) std::cout << ", final loss " << result.loss_trace.back();
  std::cout << "\ncheckpoint: " << ckpt.string() << '\n';
  return 0;
}

int cmd_eval(const Flags& f) {
  const RunConfig c = resolve(f);
  echo_config(c);
  const Checkpoint ckpt = read_checkpoint(c.checkpoint_path());
  const Split split = parse_split(c.split);
  std::optional<Model> model;
  bool shared = c.train.shared_task_relations;
  if (ckpt.kind == "model") {
    model.emplace(model_from_checkpoint(ckpt));
    shared = model->config.shared_task_relations;
  } else if (ckpt.kind != "rank-oracle") {
    throw InputError("unknown checkpoint kind '" + ckpt.kind + "'");
  }
  const auto data = load_dataset(c.data_dir, shared);
  check_vocab(ckpt, vocab_hashes(data));

  EvalOptions eo;
  eo.k_shot = c.train.k_shot;
  eo.seed = c.train.seed;
  eo.support_from_train = shared;
  MetricsReport report;
  if (model) {
    eo.k_shot = model->config.k_shot;
    const auto index = model_neighbor_index(data, model->config);
    report = evaluate(ModelScoring(*model, index), data.tasks, split, data.candidates, eo);
  } else {
    report = evaluate(RankOracle(data.tasks), data.tasks, split, data.candidates, eo);
  }
  const auto j = report.to_json();
  write_json(c.out_dir / ("metrics_" + c.split + ".json"), j);
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_sample_episode(const Flags& f) {
  const RunConfig c = resolve(f);
  const auto data = load_dataset(c.data_dir, c.train.shared_task_relations);
  const auto rel = data.tasks.relations.find(f.relation);
  if (!rel) throw InputError("unknown task relation '" + f.relation + "'");
  const Split split = parse_split(f.split.empty() ? "train" : f.split);
  Rng rng(c.train.seed);
  const Episode ep = sample_episode(data.tasks, split, *rel, c.train.k_shot,
                                    c.train.queries_per_episode(), data.candidates, rng);
  const auto& names = data.entities();
  auto list = [&](const char* title, const std::vector<TaskPair>& pairs) {
    std::cout << title << " (" << pairs.size() << ")\n";
    for (const auto& p : pairs)
      std::cout << "  " << names.name(p.head) << '\t' << names.name(p.tail) << '\n';
  };
  std::cout << "relation " << f.relation << " split " << split_name(split) << " seed "
            << c.train.seed << " K=" << c.train.k_shot << '\n';
  list("support", ep.support);
  list("support negatives", ep.support_neg);
  list("queries", ep.queries);
  list("query negatives", ep.query_neg);
  return 0;
}

int cmd_make_synthetic(const Flags& f, SyntheticConfig synthetic) {
  if (f.out.empty()) throw InputError("make-synthetic needs --out");
  if (f.seed) synthetic.seed = *f.seed;
  write_synthetic(f.out, synthetic);
  std::cout << "wrote synthetic benchmark to " << f.out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot knowledge graph completion with attention enhancement and diffusion"};
  app.require_subcommand(1);
  Flags f;
  bool shared = false;

  auto* prepare = app.add_subcommand("prepare", "validate a dataset directory and print counts");
  prepare->add_option("--data-dir", f.data_dir, "dataset directory");
  prepare->add_option("--config", f.config, "JSON run configuration");
  prepare->add_flag("--shared-task-relations", shared, "allow a task relation in several splits");

  auto* pretrain = app.add_subcommand("pretrain", "pretrain TransE embeddings");
  add_common(pretrain, f);

  auto* train_cmd = app.add_subcommand("train", "train a model checkpoint");
  add_common(train_cmd, f);
  train_cmd->add_option("--steps", f.steps, "optimizer steps");
  train_cmd->add_option("--checkpoint", f.checkpoint, "checkpoint path");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, f);
  eval->add_option("--split", f.split, "train, valid or test");
  eval->add_option("--checkpoint", f.checkpoint, "checkpoint path");

  auto* sample = app.add_subcommand("sample-episode", "print one sampled episode");
  add_common(sample, f);
  sample->add_option("--relation", f.relation, "task relation name")->required();
  sample->add_option("--split", f.split, "split to sample from (default train)");

  auto* synth = app.add_subcommand("make-synthetic", "write the attribute-rule benchmark");
  synth->add_option("--out", f.out, "output directory")->required();
  synth->add_option("--seed", f.seed, "generator seed");
  SyntheticConfig synthetic;
  synth->add_option("--objects", synthetic.objects, "object entities");
  synth->add_option("--held-out", synthetic.held_out, "objects reserved for the test split");
  synth->add_option("--links", synthetic.links_per_object, "random links per object");
  synth->add_option("--value-tails", synthetic.value_tails,
                    "tails are attribute values (true) or separate target entities (false)");
  synth->add_option("--distractors", synthetic.distractors, "attributes no task depends on (0-2)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kInputError;
  }

  try {
    if (*prepare) return cmd_prepare(f, shared);
    if (*pretrain) return cmd_pretrain(f);
    if (*train_cmd) return cmd_train(f);
    if (*eval) return cmd_eval(f);
    if (*sample) return cmd_sample_episode(f);
    if (*synth) return cmd_make_synthetic(f, synthetic);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kRuntimeError;
}

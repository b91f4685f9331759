#include "takand/dataset.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <numeric>
#include <random>

namespace takand {

DatasetFiles DatasetFiles::in(const std::filesystem::path& dir) {
  return {dir / "path_graph", dir / "train_tasks.json", dir / "dev_tasks.json",
          dir / "test_tasks.json", dir / "rel2candidates.json"};
}

std::vector<std::string> DatasetFiles::missing() const {
  std::vector<std::string> out;
  for (const auto* p : {&background, &train, &valid, &test, &candidates})
    if (!std::filesystem::is_regular_file(*p)) out.push_back(p->filename().string());
  return out;
}

DataBundle load_dataset(const std::filesystem::path& dir, bool shared_task_relations) {
  const auto files = DatasetFiles::in(dir);
  if (const auto miss = files.missing(); !miss.empty()) {
    std::string msg = "dataset directory " + dir.string() + " is missing:";
    for (const auto& m : miss) msg += " " + m;
    throw InputError(msg);
  }
  DataBundle data;
  data.shared_task_relations = shared_task_relations;
  data.background = load_triples(files.background);
  data.tasks = load_task_partitions({files.train, files.valid, files.test},
                                    data.background.entities, data.background.relations,
                                    shared_task_relations);
  data.candidates = load_candidates(files.candidates, data.background.entities,
                                    data.tasks.relations);
  return data;
}

nlohmann::json dataset_summary(const DataBundle& data) {
  nlohmann::json j;
  j["background_triples"] = data.background.triples.size();
  j["entities"] = data.entities().size();
  j["background_relations"] = data.background.relations.size();
  nlohmann::json splits = nlohmann::json::object();
  for (Split s : {Split::Train, Split::Valid, Split::Test}) {
    std::size_t triples = 0;
    for (const auto& [rel, pairs] : data.tasks.split(s)) triples += pairs.size();
    splits[std::string(split_name(s))] = {{"relations", data.tasks.split(s).size()},
                                          {"triples", triples}};
  }
  j["task_splits"] = splits;
  j["candidate_relations"] = data.candidates.candidates.size();
  j["candidates_dropped_unknown"] = data.candidates.dropped_unknown;
  return j;
}

void write_synthetic(const std::filesystem::path& dir, const SyntheticConfig& cfg) {
  if (cfg.held_out >= cfg.objects)
    throw std::invalid_argument("synthetic benchmark needs more objects than held-out objects");
  std::filesystem::create_directories(dir);
  Rng rng(cfg.seed);
  constexpr std::size_t kValues = 3;
  const std::array<std::string, 5> attribute_names{"color", "shape", "size", "material", "texture"};
  if (cfg.distractors > 2)
    throw std::invalid_argument("synthetic benchmark supports at most 2 distractor attributes");
  const std::vector<std::string> attributes(attribute_names.begin(),
                                            attribute_names.begin() + 3 + cfg.distractors);
  constexpr std::size_t kTasks = 3;

  std::vector<std::string> objects;
  for (std::size_t i = 0; i < cfg.objects; ++i) objects.push_back("object_" + std::to_string(i));
  const std::size_t train_objects = cfg.objects - cfg.held_out;

  // Attribute values are drawn until every value occurs at least twice among
  // the training objects, so held-out heads never show an unseen value.
  std::vector<std::array<std::size_t, 5>> attr(cfg.objects);
  std::uniform_int_distribution<std::size_t> value(0, kValues - 1);
  for (std::size_t a = 0; a < attributes.size(); ++a) {
    for (;;) {
      std::array<std::size_t, kValues> seen{};
      for (std::size_t i = 0; i < cfg.objects; ++i) {
        attr[i][a] = value(rng);
        if (i < train_objects) ++seen[attr[i][a]];
      }
      if (std::ranges::all_of(seen, [](std::size_t c) { return c >= 2; })) break;
    }
  }

  std::ofstream graph(dir / "path_graph");
  for (std::size_t i = 0; i < cfg.objects; ++i)
    for (std::size_t a = 0; a < attributes.size(); ++a)
      graph << objects[i] << "\thas_" << attributes[a] << '\t' << attributes[a] << '_'
            << attr[i][a] << '\n';
  std::uniform_int_distribution<std::size_t> other(0, cfg.objects - 2);
  for (std::size_t i = 0; i < cfg.objects; ++i)
    for (std::size_t l = 0; l < cfg.links_per_object; ++l) {
      std::size_t j = other(rng);
      if (j >= i) ++j;
      graph << objects[i] << "\tlinked_to\t" << objects[j] << '\n';
    }
  graph.close();

  nlohmann::json train = nlohmann::json::object(), test = nlohmann::json::object();
  nlohmann::json candidates = nlohmann::json::object();
  std::vector<std::string> targets;
  for (std::size_t a = 0; a < kTasks; ++a)
    for (std::size_t v = 0; v < kValues; ++v)
      targets.push_back(cfg.value_tails ? attributes[a] + "_" + std::to_string(v)
                                        : "target_" + std::to_string(a * kValues + v));
  for (std::size_t a = 0; a < kTasks; ++a) {
    const std::string rel = "task_" + attributes[a];
    std::array<std::size_t, kValues> perm{};
    if (cfg.value_tails) {
      // A cyclic shift, so no task triple repeats a background edge.
      const std::size_t shift = std::uniform_int_distribution<std::size_t>(1, kValues - 1)(rng);
      for (std::size_t v = 0; v < kValues; ++v) perm[v] = (v + shift) % kValues;
    } else {
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
    }
    train[rel] = nlohmann::json::array();
    test[rel] = nlohmann::json::array();
    for (std::size_t i = 0; i < cfg.objects; ++i) {
      const auto& tail = targets[a * kValues + perm[attr[i][a]]];
      (i < train_objects ? train : test)[rel].push_back({objects[i], rel, tail});
    }
    candidates[rel] = targets;
  }
  std::ofstream(dir / "train_tasks.json") << train.dump(1) << '\n';
  std::ofstream(dir / "dev_tasks.json") << "{}\n";
  std::ofstream(dir / "test_tasks.json") << test.dump(1) << '\n';
  std::ofstream(dir / "rel2candidates.json") << candidates.dump(1) << '\n';
}

}  // namespace takand

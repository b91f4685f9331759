#pragma once

// Dataset directories in the NELL-One / Wiki-One layout and the generated
// attribute-rule benchmark.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "takand/kg_store.hpp"

namespace takand {

struct DatasetFiles {
  std::filesystem::path background;  // path_graph
  std::filesystem::path train;       // train_tasks.json
  std::filesystem::path valid;       // dev_tasks.json
  std::filesystem::path test;        // test_tasks.json
  std::filesystem::path candidates;  // rel2candidates.json

  static DatasetFiles in(const std::filesystem::path& dir);
  std::vector<std::string> missing() const;
};

// background.entities is the full entity vocabulary: background entities in
// file order, then entities first seen in the task files.
struct DataBundle {
  TripleSet background;
  TaskSet tasks;
  CandidateMap candidates;
  bool shared_task_relations = false;

  const Vocab& entities() const { return background.entities; }
};

// Throws InputError listing every missing file, or naming the malformed one.
DataBundle load_dataset(const std::filesystem::path& dir, bool shared_task_relations = false);

nlohmann::json dataset_summary(const DataBundle& data);

// Objects carry colour, shape and size edges, optional distractor attributes
// and random links to other objects. Each task relation maps one attribute of
// the head to a target entity through a fixed permutation. The first objects
// form the train split, the held-out ones the test split of the same relations.
struct SyntheticConfig {
  std::uint64_t seed = 7;
  std::size_t objects = 28;
  std::size_t held_out = 8;
  std::size_t links_per_object = 0;
  bool value_tails = true;      // tails are attribute values instead of separate targets
  std::size_t distractors = 1;  // extra attributes (at most 2) no task relation depends on
};

void write_synthetic(const std::filesystem::path& dir, const SyntheticConfig& cfg);

}  // namespace takand

#pragma once

// Knowledge-graph storage: background triples, neighborhood index, few-shot
// task partitions, candidate lists and episode sampling.

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "takand/params.hpp"

namespace takand {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

// Malformed or inconsistent input data. The CLI maps this to exit code 1.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dense name <-> id map; ids are assigned in first-appearance order.
class Vocab {
 public:
  std::uint32_t intern(std::string_view name);
  std::optional<std::uint32_t> find(std::string_view name) const;
  const std::string& name(std::uint32_t id) const { return names_.at(id); }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  // FNV-1a over names in id order; identifies a vocabulary in checkpoints.
  std::uint64_t hash() const;
  nlohmann::json to_json() const;
  static Vocab from_json(const nlohmann::json& j);

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> ids_;
};

struct Triple {
  EntityId head;
  RelationId relation;
  EntityId tail;
  auto operator<=>(const Triple&) const = default;
};

struct TripleSet {
  std::vector<Triple> triples;
  Vocab entities;
  Vocab relations;
};

TripleSet parse_triples(std::istream& in, const std::string& source = "<stream>");
TripleSet load_triples(const std::filesystem::path& path);

enum class Direction : std::uint8_t { Outgoing, Incoming };

struct NeighborEdge {
  RelationId relation;
  Direction direction;
  EntityId neighbor;
  auto operator<=>(const NeighborEdge&) const = default;
};

struct NeighborIndex {
  std::vector<std::vector<NeighborEdge>> edges;
  std::size_t max_neighbors = 0;

  const std::vector<NeighborEdge>& of(EntityId e) const { return edges.at(e); }
  std::size_t entity_count() const { return edges.size(); }
};

// entity_count defaults to the background vocabulary size; pass the size of
// an extended vocabulary when task files introduced new entities.
NeighborIndex build_neighbor_index(const TripleSet& ts, std::size_t max_neighbors, Rng& rng,
                                   std::size_t entity_count = 0);

enum class Split : std::uint8_t { Train = 0, Valid = 1, Test = 2 };
std::string_view split_name(Split s);
Split parse_split(std::string_view s);

struct TaskPair {
  EntityId head;
  EntityId tail;
  auto operator<=>(const TaskPair&) const = default;
};

struct TaskSet {
  Vocab relations;  // few-shot task relations, separate from background relations
  std::array<std::map<RelationId, std::vector<TaskPair>>, 3> splits;

  const std::map<RelationId, std::vector<TaskPair>>& split(Split s) const {
    return splits[static_cast<std::size_t>(s)];
  }
  std::map<RelationId, std::vector<TaskPair>>& split(Split s) {
    return splits[static_cast<std::size_t>(s)];
  }
  std::vector<RelationId> relations_in(Split s) const;
  // All pairs of a relation across splits.
  std::vector<TaskPair> all_pairs(RelationId r) const;
};

struct TaskFiles {
  std::filesystem::path train;
  std::filesystem::path valid;  // empty path: split left empty
  std::filesystem::path test;
};

// Parses {relation: [[head, relation, tail], ...]} documents. New entity
// names are appended to `entities`. A task relation may not occur in the
// background graph, and may not occur in two splits unless allow_shared.
TaskSet load_task_partitions(const TaskFiles& files, Vocab& entities,
                             const Vocab& background_relations, bool allow_shared = false);
void add_task_split(TaskSet& tasks, Split split, const nlohmann::json& doc, Vocab& entities,
                    const Vocab& background_relations, bool allow_shared,
                    const std::string& source);

struct CandidateMap {
  std::map<RelationId, std::vector<EntityId>> candidates;
  std::size_t dropped_unknown = 0;     // candidate names missing from the entity vocab
  std::size_t skipped_relations = 0;   // relations not present in the task set

  const std::vector<EntityId>& of(RelationId r) const;
  bool contains(RelationId r) const { return candidates.contains(r); }
};

CandidateMap parse_candidates(const nlohmann::json& doc, const Vocab& entities,
                              const Vocab& task_relations, const std::string& source = "<json>");
CandidateMap load_candidates(const std::filesystem::path& path, const Vocab& entities,
                             const Vocab& task_relations);

struct Episode {
  RelationId relation = 0;
  std::vector<TaskPair> support;
  std::vector<TaskPair> support_neg;
  std::vector<TaskPair> queries;
  std::vector<TaskPair> query_neg;
  std::vector<EntityId> candidates;  // shared candidate pool of the relation
};

using TruthMap = std::unordered_map<EntityId, std::unordered_set<EntityId>>;
TruthMap truth_by_head(std::span<const TaskPair> pairs);

TaskPair corrupt_tail(TaskPair pair, RelationId relation, const CandidateMap& cmap,
                      const std::unordered_set<EntityId>& truth, Rng& rng);

// Shuffles `pairs`, takes K support and min(N, rest) queries, and corrupts
// every tail. Truth for corruption is taken from `pairs` and `extra_truth`.
Episode sample_episode(std::span<const TaskPair> pairs, RelationId relation, std::size_t k,
                       std::size_t n, const CandidateMap& cmap, Rng& rng,
                       const std::string& relation_name = {},
                       std::span<const TaskPair> extra_truth = {});
Episode sample_episode(const TaskSet& tasks, Split split, RelationId relation, std::size_t k,
                       std::size_t n, const CandidateMap& cmap, Rng& rng);

nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace takand

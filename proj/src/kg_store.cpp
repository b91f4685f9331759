#include "takand/kg_store.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace takand {

std::uint32_t Vocab::intern(std::string_view name) {
  auto it = ids_.find(std::string(name));
  if (it != ids_.end()) return it->second;
  const auto id = static_cast<std::uint32_t>(names_.size());
  names_.emplace_back(name);
  ids_.emplace(names_.back(), id);
  return id;
}

std::optional<std::uint32_t> Vocab::find(std::string_view name) const {
  auto it = ids_.find(std::string(name));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::uint64_t Vocab::hash() const {
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 1099511628211ull;
  };
  for (const auto& n : names_) {
    for (unsigned char c : n) mix(c);
    mix(0);
  }
  return h;
}

nlohmann::json Vocab::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < names_.size(); ++i) j[names_[i]] = i;
  return j;
}

Vocab Vocab::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("id map must be a JSON object");
  std::vector<std::string> names(j.size());
  std::vector<char> seen(j.size(), 0);
  for (const auto& [name, id] : j.items()) {
    if (!id.is_number_unsigned() || id.get<std::size_t>() >= names.size() ||
        seen[id.get<std::size_t>()])
      throw InputError("id map is not a dense permutation (entry '" + name + "')");
    seen[id.get<std::size_t>()] = 1;
    names[id.get<std::size_t>()] = name;
  }
  Vocab v;
  for (const auto& n : names) v.intern(n);
  return v;
}

TripleSet parse_triples(std::istream& in, const std::string& source) {
  TripleSet ts;
  std::set<Triple> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::array<std::string, 3> fields;
    std::size_t count = 0, start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      const auto piece = line.substr(start, tab == std::string::npos ? std::string::npos : tab - start);
      if (count < 3) fields[count] = piece;
      ++count;
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (count != 3 || fields[0].empty() || fields[1].empty() || fields[2].empty()) {
      throw InputError(source + ":" + std::to_string(line_no) +
                       ": expected 3 tab-separated fields (head, relation, tail), got " +
                       std::to_string(count));
    }
    Triple t{ts.entities.intern(fields[0]), ts.relations.intern(fields[1]),
             ts.entities.intern(fields[2])};
    if (seen.insert(t).second) ts.triples.push_back(t);
  }
  if (ts.triples.empty()) throw InputError(source + ": no triples found");
  return ts;
}

TripleSet load_triples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open triple file: " + path.string());
  return parse_triples(in, path.string());
}

NeighborIndex build_neighbor_index(const TripleSet& ts, std::size_t max_neighbors, Rng& rng,
                                   std::size_t entity_count) {
  if (max_neighbors < 1) throw std::invalid_argument("max_neighbors must be >= 1");
  NeighborIndex index;
  index.max_neighbors = max_neighbors;
  index.edges.resize(std::max(entity_count, ts.entities.size()));
  for (const auto& t : ts.triples) {
    index.edges[t.head].push_back({t.relation, Direction::Outgoing, t.tail});
    index.edges[t.tail].push_back({t.relation, Direction::Incoming, t.head});
  }
  for (auto& list : index.edges) {
    if (list.size() <= max_neighbors) continue;
    // Partial Fisher-Yates picks a uniform subset; kept in original order.
    std::vector<std::size_t> idx(list.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < max_neighbors; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(max_neighbors);
    std::sort(idx.begin(), idx.end());
    std::vector<NeighborEdge> kept;
    kept.reserve(max_neighbors);
    for (auto i : idx) kept.push_back(list[i]);
    list = std::move(kept);
  }
  return index;
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "valid" || s == "dev") return Split::Valid;
  if (s == "test") return Split::Test;
  throw InputError("unknown split '" + std::string(s) + "' (expected train, valid or test)");
}

std::vector<RelationId> TaskSet::relations_in(Split s) const {
  std::vector<RelationId> out;
  for (const auto& [r, pairs] : split(s)) out.push_back(r);
  return out;
}

std::vector<TaskPair> TaskSet::all_pairs(RelationId r) const {
  std::vector<TaskPair> out;
  for (const auto& s : splits) {
    auto it = s.find(r);
    if (it != s.end()) out.insert(out.end(), it->second.begin(), it->second.end());
  }
  return out;
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open JSON file: " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(path.string() + ": invalid JSON: " + e.what());
  }
}

void add_task_split(TaskSet& tasks, Split split, const nlohmann::json& doc, Vocab& entities,
                    const Vocab& background_relations, bool allow_shared,
                    const std::string& source) {
  if (!doc.is_object()) throw InputError(source + ": expected an object of relation -> triples");
  auto& target = tasks.split(split);
  for (const auto& [rel_name, triples] : doc.items()) {
    if (background_relations.find(rel_name))
      throw InputError(source + ": task relation '" + rel_name +
                       "' also occurs in the background graph");
    if (!triples.is_array()) throw InputError(source + ": '" + rel_name + "' is not a list");
    const RelationId rel = tasks.relations.intern(rel_name);
    for (std::size_t s = 0; s < tasks.splits.size(); ++s) {
      if (static_cast<Split>(s) != split && tasks.splits[s].contains(rel) && !allow_shared)
        throw InputError(source + ": task relation '" + rel_name + "' appears in both " +
                         std::string(split_name(static_cast<Split>(s))) + " and " +
                         std::string(split_name(split)) + " splits");
    }
    auto& pairs = target[rel];
    std::set<TaskPair> seen(pairs.begin(), pairs.end());
    for (const auto& tr : triples) {
      if (!tr.is_array() || tr.size() != 3 || !tr[0].is_string() || !tr[1].is_string() ||
          !tr[2].is_string())
        throw InputError(source + ": malformed triple under '" + rel_name + "'");
      if (tr[1].get<std::string>() != rel_name)
        throw InputError(source + ": triple relation '" + tr[1].get<std::string>() +
                         "' filed under '" + rel_name + "'");
      TaskPair p{entities.intern(tr[0].get<std::string>()),
                 entities.intern(tr[2].get<std::string>())};
      if (seen.insert(p).second) pairs.push_back(p);
    }
  }
}

TaskSet load_task_partitions(const TaskFiles& files, Vocab& entities,
                             const Vocab& background_relations, bool allow_shared) {
  TaskSet tasks;
  const std::array<std::pair<Split, const std::filesystem::path*>, 3> parts{
      {{Split::Train, &files.train}, {Split::Valid, &files.valid}, {Split::Test, &files.test}}};
  for (const auto& [split, path] : parts) {
    if (path->empty()) continue;
    add_task_split(tasks, split, read_json_file(*path), entities, background_relations,
                   allow_shared, path->string());
  }
  return tasks;
}

const std::vector<EntityId>& CandidateMap::of(RelationId r) const {
  auto it = candidates.find(r);
  if (it == candidates.end())
    throw InputError("no candidate list for task relation id " + std::to_string(r));
  return it->second;
}

CandidateMap parse_candidates(const nlohmann::json& doc, const Vocab& entities,
                              const Vocab& task_relations, const std::string& source) {
  if (!doc.is_object()) throw InputError(source + ": expected an object of relation -> names");
  CandidateMap cmap;
  for (const auto& [rel_name, names] : doc.items()) {
    auto rel = task_relations.find(rel_name);
    if (!rel) {
      ++cmap.skipped_relations;
      continue;
    }
    if (!names.is_array()) throw InputError(source + ": candidates of '" + rel_name + "' not a list");
    std::vector<EntityId> ids;
    std::unordered_set<EntityId> seen;
    for (const auto& n : names) {
      if (!n.is_string()) throw InputError(source + ": non-string candidate under '" + rel_name + "'");
      auto id = entities.find(n.get<std::string>());
      if (!id) {
        ++cmap.dropped_unknown;
        continue;
      }
      if (seen.insert(*id).second) ids.push_back(*id);
    }
    if (ids.empty())
      throw InputError(source + ": relation '" + rel_name + "' has no resolvable candidates");
    cmap.candidates[*rel] = std::move(ids);
  }
  return cmap;
}

CandidateMap load_candidates(const std::filesystem::path& path, const Vocab& entities,
                             const Vocab& task_relations) {
  return parse_candidates(read_json_file(path), entities, task_relations, path.string());
}

TruthMap truth_by_head(std::span<const TaskPair> pairs) {
  TruthMap truth;
  for (const auto& p : pairs) truth[p.head].insert(p.tail);
  return truth;
}

TaskPair corrupt_tail(TaskPair pair, RelationId relation, const CandidateMap& cmap,
                      const std::unordered_set<EntityId>& truth, Rng& rng) {
  const auto& cands = cmap.of(relation);
  std::vector<EntityId> feasible;
  feasible.reserve(cands.size());
  for (auto c : cands)
    if (!truth.contains(c)) feasible.push_back(c);
  if (feasible.empty())
    throw InputError("cannot corrupt tail for relation id " + std::to_string(relation) +
                     ": every candidate is a true tail of head " + std::to_string(pair.head));
  std::uniform_int_distribution<std::size_t> pick(0, feasible.size() - 1);
  return {pair.head, feasible[pick(rng)]};
}

Episode sample_episode(std::span<const TaskPair> pairs, RelationId relation, std::size_t k,
                       std::size_t n, const CandidateMap& cmap, Rng& rng,
                       const std::string& relation_name, std::span<const TaskPair> extra_truth) {
  if (pairs.size() < k + 1) {
    const std::string label =
        relation_name.empty() ? "id " + std::to_string(relation) : "'" + relation_name + "'";
    throw InputError("relation " + label + " has " + std::to_string(pairs.size()) +
                     " triples; need at least K+1 = " + std::to_string(k + 1));
  }
  if (!cmap.contains(relation)) throw InputError("relation has no candidate list");

  TruthMap truth = truth_by_head(pairs);
  for (const auto& p : extra_truth) truth[p.head].insert(p.tail);

  std::vector<TaskPair> shuffled(pairs.begin(), pairs.end());
  std::shuffle(shuffled.begin(), shuffled.end(), rng);

  Episode ep;
  ep.relation = relation;
  ep.candidates = cmap.of(relation);
  const std::size_t nq = std::min(n, shuffled.size() - k);
  ep.support.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(k));
  ep.queries.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(k),
                    shuffled.begin() + static_cast<std::ptrdiff_t>(k + nq));
  for (const auto& p : ep.support)
    ep.support_neg.push_back(corrupt_tail(p, relation, cmap, truth[p.head], rng));
  for (const auto& p : ep.queries)
    ep.query_neg.push_back(corrupt_tail(p, relation, cmap, truth[p.head], rng));
  return ep;
}

Episode sample_episode(const TaskSet& tasks, Split split, RelationId relation, std::size_t k,
                       std::size_t n, const CandidateMap& cmap, Rng& rng) {
  auto it = tasks.split(split).find(relation);
  if (it == tasks.split(split).end())
    throw InputError("relation '" + tasks.relations.name(relation) + "' is not in the " +
                     std::string(split_name(split)) + " split");
  const auto all = tasks.all_pairs(relation);
  return sample_episode(it->second, relation, k, n, cmap, rng, tasks.relations.name(relation),
                        all);
}

}  // namespace takand

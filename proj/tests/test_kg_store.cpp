#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "takand/kg_store.hpp"
#include "test_util.hpp"

using namespace takand;
using nlohmann::json;

namespace {

TripleSet parse(const std::string& text) {
  std::istringstream in(text);
  return parse_triples(in, "mem");
}

CandidateMap one_relation_candidates(RelationId r, std::vector<EntityId> ids) {
  CandidateMap m;
  m.candidates[r] = std::move(ids);
  return m;
}

std::vector<TaskPair> chain_pairs(std::size_t n, EntityId tail_base = 1000) {
  std::vector<TaskPair> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({static_cast<EntityId>(i), static_cast<EntityId>(tail_base + i)});
  return out;
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

// Task document with `count` relations named prefix0..prefixN, two triples each.
json task_doc(const std::string& prefix, std::size_t count) {
  json doc = json::object();
  for (std::size_t i = 0; i < count; ++i) {
    const std::string r = prefix + std::to_string(i);
    doc[r] = json::array({json::array({"h" + std::to_string(i), r, "t" + std::to_string(i)}),
                          json::array({"h" + std::to_string(i), r, "u" + std::to_string(i)})});
  }
  return doc;
}

}  // namespace

TEST_CASE("two lines give three entities, two relations, two triples") {
  auto ts = parse("a\tr1\tb\nb\tr2\tc\n");
  CHECK(ts.entities.size() == 3);
  CHECK(ts.relations.size() == 2);
  REQUIRE(ts.triples.size() == 2);
  CHECK(ts.entities.name(0) == "a");
  CHECK(ts.entities.name(2) == "c");
  CHECK(ts.triples[1] == Triple{1, 1, 2});
}

TEST_CASE("duplicate lines are dropped and blank lines skipped") {
  auto ts = parse("a\tr\tb\n\na\tr\tb\r\n  \n");
  CHECK(ts.triples.size() == 1);
}

TEST_CASE("malformed line reports its line number") {
  try {
    parse("a\tr\tb\nx\ty\n");
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("mem:2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse("a\tr\tb\tc\n"), InputError);
  CHECK_THROWS_AS(parse("\n\n"), InputError);
  CHECK_THROWS_AS(load_triples("/nonexistent/path.txt"), InputError);
}

TEST_CASE("triple count matches an independent line dedup count") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> e(0, 30), r(0, 4);
  std::string text;
  std::set<std::string> unique_lines;
  for (int i = 0; i < 3000; ++i) {
    std::string line = "e" + std::to_string(e(rng)) + "\tr" + std::to_string(r(rng)) + "\te" +
                       std::to_string(e(rng));
    unique_lines.insert(line);
    text += line + "\n";
  }
  testutil::TempDir dir("kg");
  write_file(dir / "path_graph", text);
  auto ts = load_triples(dir / "path_graph");
  CHECK(ts.triples.size() == unique_lines.size());
  // ids dense and every id in range
  for (const auto& t : ts.triples) {
    CHECK(t.head < ts.entities.size());
    CHECK(t.tail < ts.entities.size());
    CHECK(t.relation < ts.relations.size());
  }
  // same file, same result
  auto again = load_triples(dir / "path_graph");
  CHECK(again.triples == ts.triples);
  CHECK(again.entities.names() == ts.entities.names());
}

TEST_CASE("vocab json round trip and hash") {
  auto ts = parse("a\tr\tb\nc\tr\ta\n");
  auto back = Vocab::from_json(ts.entities.to_json());
  CHECK(back.names() == ts.entities.names());
  CHECK(back.hash() == ts.entities.hash());
  Vocab other;
  other.intern("b");
  other.intern("a");
  other.intern("c");
  CHECK(other.hash() != ts.entities.hash());
  CHECK_THROWS_AS(Vocab::from_json(json{{"a", 0}, {"b", 2}}), InputError);
}

TEST_CASE("single edge indexes both directions") {
  auto ts = parse("a\tr1\tb\n");
  Rng rng(1);
  auto idx = build_neighbor_index(ts, 50, rng);
  REQUIRE(idx.of(0).size() == 1);
  CHECK(idx.of(0)[0] == NeighborEdge{0, Direction::Outgoing, 1});
  REQUIRE(idx.of(1).size() == 1);
  CHECK(idx.of(1)[0] == NeighborEdge{0, Direction::Incoming, 0});
  CHECK_THROWS(build_neighbor_index(ts, 0, rng));
  CHECK(build_neighbor_index(ts, 5, rng, 7).entity_count() == 7);
}

TEST_CASE("neighbor cap keeps exactly max_neighbors real edges") {
  std::string text;
  for (int i = 0; i < 100; ++i) text += "hub\tr" + std::to_string(i % 3) + "\tn" + std::to_string(i) + "\n";
  auto ts = parse(text);
  Rng rng(3);
  auto idx = build_neighbor_index(ts, 50, rng);
  const auto& hub = idx.of(0);
  CHECK(hub.size() == 50);
  std::set<NeighborEdge> uniq(hub.begin(), hub.end());
  CHECK(uniq.size() == 50);
  for (const auto& e : hub) {
    CHECK(e.direction == Direction::Outgoing);
    CHECK(std::find(ts.triples.begin(), ts.triples.end(), Triple{0, e.relation, e.neighbor}) !=
          ts.triples.end());
  }
}

TEST_CASE("neighbor subsampling is uniform over edges") {
  std::string text;
  for (int i = 0; i < 20; ++i) text += "hub\tr\tn" + std::to_string(i) + "\n";
  auto ts = parse(text);
  std::vector<int> counts(ts.entities.size(), 0);
  const int trials = 4000;
  for (int s = 0; s < trials; ++s) {
    Rng rng(s);
    const auto idx = build_neighbor_index(ts, 5, rng);
    for (const auto& e : idx.of(0)) ++counts[e.neighbor];
  }
  // each edge kept with probability 5/20
  for (std::size_t n = 1; n < counts.size(); ++n)
    CHECK(std::abs(counts[n] / double(trials) - 0.25) < 0.03);
}

TEST_CASE("toy graph index equals exhaustive adjacency enumeration") {
  auto ts = parse("a\tr1\tb\nb\tr2\tc\nc\tr1\ta\na\tr2\ta\n");
  Rng rng(5);
  auto idx = build_neighbor_index(ts, 50, rng);
  for (EntityId e = 0; e < ts.entities.size(); ++e) {
    std::multiset<NeighborEdge> expected;
    for (const auto& t : ts.triples) {
      if (t.head == e) expected.insert({t.relation, Direction::Outgoing, t.tail});
      if (t.tail == e) expected.insert({t.relation, Direction::Incoming, t.head});
    }
    std::multiset<NeighborEdge> got(idx.of(e).begin(), idx.of(e).end());
    CHECK(got == expected);
  }
}

TEST_CASE("uncapped index is symmetric") {
  std::mt19937_64 g(8);
  std::uniform_int_distribution<int> e(0, 40), r(0, 5);
  std::string text;
  for (int i = 0; i < 300; ++i)
    text += "e" + std::to_string(e(g)) + "\tr" + std::to_string(r(g)) + "\te" + std::to_string(e(g)) + "\n";
  auto ts = parse(text);
  Rng rng(2);
  auto idx = build_neighbor_index(ts, 12, rng);
  for (EntityId h = 0; h < idx.entity_count(); ++h) {
    for (const auto& edge : idx.of(h)) {
      const EntityId t = edge.neighbor;
      if (idx.of(t).size() >= idx.max_neighbors || idx.of(h).size() >= idx.max_neighbors) continue;
      const Direction flip =
          edge.direction == Direction::Outgoing ? Direction::Incoming : Direction::Outgoing;
      const auto& back = idx.of(t);
      CHECK(std::find(back.begin(), back.end(), NeighborEdge{edge.relation, flip, h}) != back.end());
    }
    CHECK(idx.of(h).size() <= 12);
  }
}

TEST_CASE("task partitions: relation counts and split rules") {
  testutil::TempDir dir("tasks");
  Vocab background;
  background.intern("bg_rel");

  SUBCASE("51/5/11 relation layout") {
    write_file(dir / "train.json", task_doc("train_", 51).dump());
    write_file(dir / "dev.json", task_doc("dev_", 5).dump());
    write_file(dir / "test.json", task_doc("test_", 11).dump());
    Vocab ents;
    auto ts = load_task_partitions({dir / "train.json", dir / "dev.json", dir / "test.json"}, ents,
                                   background);
    CHECK(ts.split(Split::Train).size() == 51);
    CHECK(ts.split(Split::Valid).size() == 5);
    CHECK(ts.split(Split::Test).size() == 11);
  }
  SUBCASE("133/16/34 relation layout") {
    write_file(dir / "train.json", task_doc("train_", 133).dump());
    write_file(dir / "dev.json", task_doc("dev_", 16).dump());
    write_file(dir / "test.json", task_doc("test_", 34).dump());
    Vocab ents;
    auto ts = load_task_partitions({dir / "train.json", dir / "dev.json", dir / "test.json"}, ents,
                                   background);
    CHECK(ts.split(Split::Train).size() == 133);
    CHECK(ts.split(Split::Valid).size() == 16);
    CHECK(ts.split(Split::Test).size() == 34);
  }
  SUBCASE("two relations keep their triples") {
    json doc{{"p", {{"a", "p", "b"}, {"a", "p", "c"}}}, {"q", {{"c", "q", "a"}}}};
    write_file(dir / "train.json", doc.dump());
    Vocab ents;
    auto ts = load_task_partitions({dir / "train.json", {}, {}}, ents, background);
    REQUIRE(ts.split(Split::Train).size() == 2);
    const auto p = *ts.relations.find("p");
    const auto q = *ts.relations.find("q");
    CHECK(ts.split(Split::Train).at(p) ==
          std::vector<TaskPair>{{*ents.find("a"), *ents.find("b")}, {*ents.find("a"), *ents.find("c")}});
    CHECK(ts.split(Split::Train).at(q).size() == 1);
    CHECK(ts.split(Split::Valid).empty());
  }
  SUBCASE("relation in two splits is rejected unless shared") {
    json doc{{"p", {{"a", "p", "b"}}}};
    write_file(dir / "train.json", doc.dump());
    write_file(dir / "test.json", doc.dump());
    Vocab ents;
    CHECK_THROWS_AS(load_task_partitions({dir / "train.json", {}, dir / "test.json"}, ents, background),
                    InputError);
    auto ts = load_task_partitions({dir / "train.json", {}, dir / "test.json"}, ents, background, true);
    CHECK(ts.split(Split::Test).size() == 1);
  }
  SUBCASE("background relation used as a task is rejected") {
    json doc{{"bg_rel", {{"a", "bg_rel", "b"}}}};
    write_file(dir / "train.json", doc.dump());
    Vocab ents;
    CHECK_THROWS_AS(load_task_partitions({dir / "train.json", {}, {}}, ents, background), InputError);
  }
  SUBCASE("malformed documents") {
    Vocab ents;
    write_file(dir / "bad.json", "{not json");
    CHECK_THROWS_AS(load_task_partitions({dir / "bad.json", {}, {}}, ents, background), InputError);
    write_file(dir / "bad.json", json{{"p", {{"a", "q", "b"}}}}.dump());
    CHECK_THROWS_AS(load_task_partitions({dir / "bad.json", {}, {}}, ents, background), InputError);
    write_file(dir / "bad.json", json{{"p", {{"a", "p"}}}}.dump());
    CHECK_THROWS_AS(load_task_partitions({dir / "bad.json", {}, {}}, ents, background), InputError);
  }
}

TEST_CASE("candidate lists resolve names and drop unknown ones") {
  Vocab ents;
  for (auto n : {"a", "b", "c"}) ents.intern(n);
  Vocab rels;
  rels.intern("r1");
  auto m = parse_candidates(json{{"r1", {"a", "b", "c"}}}, ents, rels);
  CHECK(m.of(0).size() == 3);
  CHECK(m.dropped_unknown == 0);
  auto m2 = parse_candidates(json{{"r1", {"a", "zz", "b"}}, {"other", {"a"}}}, ents, rels);
  CHECK(m2.of(0) == std::vector<EntityId>{0, 1});
  CHECK(m2.dropped_unknown == 1);
  CHECK(m2.skipped_relations == 1);
  CHECK_THROWS_AS(parse_candidates(json{{"r1", {"zz"}}}, ents, rels), InputError);
  CHECK_THROWS_AS(m.of(5), InputError);
}

TEST_CASE("candidate counts match an independent file scan") {
  std::mt19937_64 g(21);
  Vocab ents;
  for (int i = 0; i < 60; ++i) ents.intern("ent" + std::to_string(i));
  Vocab rels;
  json doc = json::object();
  std::uniform_int_distribution<int> name(0, 79), len(1, 40);
  for (int r = 0; r < 8; ++r) {
    const std::string rn = "rel" + std::to_string(r);
    rels.intern(rn);
    json list = json::array();
    for (int i = len(g); i > 0; --i) list.push_back("ent" + std::to_string(name(g)));
    doc[rn] = list;
  }
  testutil::TempDir dir("cand");
  write_file(dir / "rel2candidates.json", doc.dump());
  auto m = load_candidates(dir / "rel2candidates.json", ents, rels);

  std::ifstream in(dir / "rel2candidates.json");
  const json scanned = json::parse(in);
  for (const auto& [rn, list] : scanned.items()) {
    std::set<std::string> known;
    for (const auto& n : list) {
      const auto s = n.get<std::string>();
      if (std::stoi(s.substr(3)) < 60) known.insert(s);
    }
    CHECK(m.of(*rels.find(rn)).size() == known.size());
  }
}

TEST_CASE("corrupt_tail forced choice and empty feasible set") {
  auto m = one_relation_candidates(0, {10, 11});
  Rng rng(1);
  auto p = corrupt_tail({5, 10}, 0, m, {10}, rng);
  CHECK(p.head == 5);
  CHECK(p.tail == 11);
  auto lone = one_relation_candidates(0, {10});
  CHECK_THROWS_AS(corrupt_tail({5, 10}, 0, lone, {10}, rng), InputError);
}

TEST_CASE("corrupt_tail is uniform over the feasible set") {
  std::vector<EntityId> cands(100);
  for (EntityId i = 0; i < 100; ++i) cands[i] = i;
  auto m = one_relation_candidates(0, cands);
  std::unordered_set<EntityId> truth;
  for (EntityId i = 0; i < 10; ++i) truth.insert(i * 7);
  Rng rng(77);
  std::vector<int> counts(100, 0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    auto p = corrupt_tail({1, 0}, 0, m, truth, rng);
    REQUIRE_FALSE(truth.contains(p.tail));
    ++counts[p.tail];
  }
  const double expected = draws / 90.0;
  double chi2 = 0;
  for (EntityId i = 0; i < 100; ++i)
    if (!truth.contains(i)) chi2 += (counts[i] - expected) * (counts[i] - expected) / expected;
  // 0.99 quantile of chi-square with 89 degrees of freedom
  CHECK(chi2 < 122.94);
}

TEST_CASE("episode with exactly K+1 triples has one query") {
  auto pairs = chain_pairs(6);
  std::vector<EntityId> cands;
  for (EntityId i = 1000; i < 1010; ++i) cands.push_back(i);
  auto m = one_relation_candidates(0, cands);
  Rng rng(4);
  auto ep = sample_episode(pairs, 0, 5, 5, m, rng);
  CHECK(ep.support.size() == 5);
  CHECK(ep.queries.size() == 1);
  CHECK(ep.support_neg.size() == 5);
  CHECK(ep.query_neg.size() == 1);
  CHECK_THROWS_AS(sample_episode(chain_pairs(5), 0, 5, 5, m, rng, "short_rel"), InputError);
  try {
    sample_episode(chain_pairs(5), 0, 5, 5, m, rng, "short_rel");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("short_rel") != std::string::npos);
  }
  CHECK_THROWS_AS(sample_episode(pairs, 3, 2, 2, m, rng), InputError);
}

TEST_CASE("episodes are deterministic and match a shuffle replay") {
  auto pairs = chain_pairs(10);
  std::vector<EntityId> cands;
  for (EntityId i = 1000; i < 1020; ++i) cands.push_back(i);
  auto m = one_relation_candidates(0, cands);
  for (std::uint64_t seed : {0u, 7u, 12345u}) {
    Rng a(seed), b(seed);
    auto e1 = sample_episode(pairs, 0, 5, 3, m, a);
    auto e2 = sample_episode(pairs, 0, 5, 3, m, b);
    CHECK(e1.support == e2.support);
    CHECK(e1.queries == e2.queries);
    CHECK(e1.support_neg == e2.support_neg);
    CHECK(e1.query_neg == e2.query_neg);

    Rng replay(seed);
    auto shuffled = pairs;
    std::shuffle(shuffled.begin(), shuffled.end(), replay);
    CHECK(e1.support == std::vector<TaskPair>(shuffled.begin(), shuffled.begin() + 5));
    CHECK(e1.queries == std::vector<TaskPair>(shuffled.begin() + 5, shuffled.begin() + 8));
  }
}

TEST_CASE("episode invariants over 1000 random episodes") {
  std::mt19937_64 g(99);
  TaskSet tasks;
  const RelationId rel = tasks.relations.intern("r");
  std::vector<TaskPair> pairs;
  std::uniform_int_distribution<EntityId> head(0, 14), tail(100, 129);
  std::set<TaskPair> seen;
  while (pairs.size() < 40) {
    TaskPair p{head(g), tail(g)};
    if (seen.insert(p).second) pairs.push_back(p);
  }
  tasks.split(Split::Train)[rel] = pairs;
  std::vector<EntityId> cands;
  for (EntityId t = 100; t < 130; ++t) cands.push_back(t);
  auto m = one_relation_candidates(rel, cands);
  const auto truth = truth_by_head(pairs);
  std::uniform_int_distribution<std::size_t> kdist(1, 10), ndist(1, 40);
  for (int i = 0; i < 1000; ++i) {
    Rng rng(i);
    const std::size_t k = kdist(g), n = ndist(g);
    auto ep = sample_episode(tasks, Split::Train, rel, k, n, m, rng);
    REQUIRE(ep.support.size() == k);
    REQUIRE(ep.queries.size() == std::min(n, pairs.size() - k));
    std::set<TaskPair> sup(ep.support.begin(), ep.support.end());
    for (const auto& q : ep.queries) REQUIRE_FALSE(sup.contains(q));
    auto check_neg = [&](const std::vector<TaskPair>& pos, const std::vector<TaskPair>& neg) {
      REQUIRE(pos.size() == neg.size());
      for (std::size_t j = 0; j < pos.size(); ++j) {
        REQUIRE(neg[j].head == pos[j].head);
        REQUIRE(std::find(cands.begin(), cands.end(), neg[j].tail) != cands.end());
        REQUIRE_FALSE(truth.at(pos[j].head).contains(neg[j].tail));
      }
    };
    check_neg(ep.support, ep.support_neg);
    check_neg(ep.queries, ep.query_neg);
  }
}

TEST_CASE("split names parse") {
  CHECK(parse_split("dev") == Split::Valid);
  CHECK(parse_split("test") == Split::Test);
  CHECK(split_name(Split::Train) == "train");
  CHECK_THROWS_AS(parse_split("other"), InputError);
}

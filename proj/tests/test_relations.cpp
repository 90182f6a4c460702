/* Copyright 2026 The OVSED Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "ovsed/relations.hpp"

#include <algorithm>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "ovsed/llm_client.hpp"

using namespace ovsed;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::vector<ClassId> make_vocab(int n, const std::string& prefix = "c") {
  std::vector<ClassId> v;
  for (int i = 0; i < n; ++i)
    v.push_back(prefix + (i < 10 ? "0" : "") + std::to_string(i));
  return v;
}

Ontology chain_ontology() {
  return Ontology({{"A", "a", {"B"}}, {"B", "b", {"C"}}, {"C", "c", {}}});
}

bool contains(const std::vector<ClassId>& v, const ClassId& c) {
  return std::find(v.begin(), v.end(), c) != v.end();
}

}  // namespace

TEST_CASE("relation table normalization is idempotent") {
  const auto vocab = make_vocab(4);
  RelationTable t;
  t.entries["c00"].subcategories = {"c01", "c00", "ghost"};
  t.entries["c00"].cooccur = {"c02"};
  t.entries["c00"].safe_negatives = {"c01", "c02", "c03", "c00", "ghost"};
  t.entries["c01"].synonyms = {"c01"};

  t.normalize(vocab);
  REQUIRE(t.entries["c00"].subcategories == std::set<ClassId>{"c01"});
  REQUIRE(t.entries["c00"].cooccur == std::set<ClassId>{"c02"});
  // Related classes and self are purged from the safe list.
  REQUIRE(t.entries["c00"].safe_negatives == std::set<ClassId>{"c03"});
  REQUIRE(t.entries["c01"].synonyms.empty());

  const auto once = t.to_json();
  t.normalize(vocab);
  REQUIRE(t.to_json() == once);
}

TEST_CASE("relation table json round trips") {
  RelationTable t;
  t.entries["x"].subcategories = {"y"};
  t.entries["x"].safe_negatives = {"z"};
  t.entries["y"] = {};

  const auto back = RelationTable::from_json(t.to_json());
  REQUIRE(back.to_json() == t.to_json());

  const auto path = temp_path("ovsed_relations.json");
  t.save(path);
  REQUIRE(RelationTable::load(path).to_json() == t.to_json());
  std::filesystem::remove(path);

  REQUIRE_THROWS_AS(RelationTable::load(temp_path("ovsed_rel_missing.json")),
                    IoError);
  {
    std::ofstream os(path);
    os << "{ not json";
  }
  REQUIRE_THROWS_AS(RelationTable::load(path), ParseError);
  std::filesystem::remove(path);
}

TEST_CASE("conflict set unions relations and ontology ancestry") {
  RelationTable t;
  REQUIRE(conflict_set({}, t).empty());

  t.entries["kid-playing"].cooccur = {"kid-speaking"};
  const auto c = conflict_set({"kid-playing"}, t);
  REQUIRE(c.count("kid-playing") == 1);
  REQUIRE(c.count("kid-speaking") == 1);

  // Three positives with a hand-built table: union checked term by term.
  RelationTable h;
  h.entries["p1"].subcategories = {"s1", "s2"};
  h.entries["p1"].synonyms = {"y1"};
  h.entries["p2"].cooccur = {"s2", "k1"};
  h.entries["p3"] = {};
  const auto u = conflict_set({"p1", "p2", "p3"}, h);
  REQUIRE(u == std::set<ClassId>{"p1", "p2", "p3", "s1", "s2", "y1", "k1"});

  // Unknown class: treated as having empty relations, still conflicts with
  // itself.
  REQUIRE(conflict_set({"mystery"}, h) == std::set<ClassId>{"mystery"});

  const Ontology ont = chain_ontology();
  RelationTable empty;
  const auto w = conflict_set({"B"}, empty, &ont);
  REQUIRE(w == std::set<ClassId>{"A", "B", "C"});
}

TEST_CASE("query composition fills the quota with the right split") {
  const auto vocab = make_vocab(26);
  RelationTable t;
  for (const auto& c : vocab)
    for (const auto& o : vocab)
      if (o != c) t.entries[c].safe_negatives.insert(o);

  ComposeOptions opts;
  std::vector<ClassId> labels(vocab.begin(), vocab.begin() + 12);

  Rng rng(5);
  const auto qs = compose_queries("clip", labels, vocab, t, opts, rng);
  REQUIRE(qs.positives.size() == 10);
  REQUIRE(qs.negatives.size() == 10);
  for (const auto& p : qs.positives) {
    REQUIRE(contains(labels, p));
    REQUIRE_FALSE(contains(qs.negatives, p));
  }

  Rng rng2(6);
  const auto none = compose_queries("clip", {}, vocab, t, opts, rng2);
  REQUIRE(none.positives.empty());
  REQUIRE(none.negatives.size() == 20);

  Rng rng3(7);
  REQUIRE_THROWS_AS(
      compose_queries("clip", labels, make_vocab(19), t, opts, rng3),
      ValidationError);

  // Deterministic per seed.
  Rng a(42), b(42), c(43);
  const auto qa = compose_queries("clip", labels, vocab, t, opts, a);
  const auto qb = compose_queries("clip", labels, vocab, t, opts, b);
  const auto qc = compose_queries("clip", labels, vocab, t, opts, c);
  REQUIRE(qa.positives == qb.positives);
  REQUIRE(qa.negatives == qb.negatives);
  REQUIRE((qa.positives != qc.positives || qa.negatives != qc.negatives));
}

TEST_CASE("filtering keeps conflicted classes out across many draws") {
  auto vocab = make_vocab(23);
  vocab.push_back("engine");
  vocab.push_back("truck");

  RelationTable t;
  t.entries["engine"].cooccur = {"truck"};
  for (const auto& c : vocab)
    if (c != "engine" && c != "truck") t.entries["engine"].safe_negatives.insert(c);

  ComposeOptions opts;
  bool truck_seen_filtered = false;
  for (int s = 0; s < 10000; ++s) {
    Rng rng{std::uint64_t(s)};
    const auto qs = compose_queries("clip", {"engine"}, vocab, t, opts, rng);
    REQUIRE(qs.positives == std::vector<ClassId>{"engine"});
    const auto conflicts = conflict_set(qs.positives, t);
    for (const auto& n : qs.negatives) {
      truck_seen_filtered = truck_seen_filtered || n == "truck";
      REQUIRE(conflicts.count(n) == 0);
    }
  }
  REQUIRE_FALSE(truck_seen_filtered);

  // Without filtering the co-occurring class does get sampled.
  ComposeOptions off;
  off.filtering = false;
  bool truck_seen = false;
  for (int s = 0; s < 200 && !truck_seen; ++s) {
    Rng rng{std::uint64_t(s)};
    const auto qs = compose_queries("clip", {"engine"}, vocab, t, off, rng);
    truck_seen = contains(qs.negatives, "truck");
  }
  REQUIRE(truck_seen);
}

TEST_CASE("negative sampling is uniform over the eligible pool") {
  const auto vocab = make_vocab(30);
  RelationTable t;
  for (const auto& c : vocab)
    for (const auto& o : vocab)
      if (o != c) t.entries[c].safe_negatives.insert(o);

  ComposeOptions opts;
  const int draws = 20000;
  std::map<ClassId, int> hits;
  for (int s = 0; s < draws; ++s) {
    Rng rng(std::uint64_t(s) * 2654435761u + 17);
    const auto qs = compose_queries("clip", {"c00"}, vocab, t, opts, rng);
    for (const auto& n : qs.negatives) ++hits[n];
  }
  // 19 of 29 eligible classes per draw; binomial mean +- 3 sigma.
  const double p = 19.0 / 29.0;
  const double mean = draws * p;
  const double sigma = std::sqrt(draws * p * (1.0 - p));
  for (const auto& c : vocab) {
    if (c == "c00") {
      REQUIRE(hits[c] == 0);
      continue;
    }
    REQUIRE(std::abs(hits[c] - mean) <= 3.0 * sigma);
  }
}

TEST_CASE("negative pool relaxes in stages when exhausted") {
  const auto vocab = make_vocab(20);
  ComposeOptions opts;

  // Stage 2: the positive declares no safe negatives, so the safe pool is
  // empty and sampling falls back to the conflict-filtered vocabulary.
  RelationTable sparse;
  sparse.entries["c00"] = {};
  Rng r1(1);
  const auto qs = compose_queries("clip", {"c00"}, vocab, sparse, opts, r1);
  REQUIRE(qs.positives == std::vector<ClassId>{"c00"});
  REQUIRE(qs.negatives.size() == 19);
  REQUIRE_FALSE(contains(qs.negatives, "c00"));

  // Stage 3: the conflict set swallows the whole vocabulary, so sampling
  // falls back to vocabulary minus positives.
  RelationTable hostile;
  for (const auto& c : vocab)
    if (c != "c00") hostile.entries["c00"].cooccur.insert(c);
  Rng r2(2);
  const auto qs2 = compose_queries("clip", {"c00"}, vocab, hostile, opts, r2);
  REQUIRE(qs2.negatives.size() == 19);
  std::set<ClassId> negs(qs2.negatives.begin(), qs2.negatives.end());
  REQUIRE(negs.count("c00") == 0);
  REQUIRE(negs.size() == 19);
}

TEST_CASE("ontology relations match a brute-force closure") {
  // Chain A -> B -> C: neither ancestor nor descendant is safe for B.
  const Ontology chain = chain_ontology();
  const std::vector<ClassId> abc = {"A", "B", "C"};
  const auto t = build_relations_ontology(abc, chain);
  REQUIRE(t.find("B")->subcategories == std::set<ClassId>{"C"});
  REQUIRE(t.find("B")->safe_negatives.empty());
  REQUIRE(t.find("A")->safe_negatives.empty());
  REQUIRE(t.find("C")->safe_negatives.empty());

  // Isolated class among n: everything else is safe.
  std::vector<OntologyNode> iso_nodes;
  const auto vocab21 = make_vocab(21);
  for (const auto& c : vocab21) iso_nodes.push_back({c, c, {}});
  const auto iso = build_relations_ontology(vocab21, Ontology(iso_nodes));
  REQUIRE(iso.find("c07")->safe_negatives.size() == 20);

  // Random DAG: edges only from lower to higher index, reachability by a
  // plain transitive closure over the adjacency matrix.
  const int n = 12;
  Rng rng(2024);
  std::vector<std::vector<bool>> edge(n, std::vector<bool>(n, false));
  std::vector<OntologyNode> nodes;
  const auto vocab = make_vocab(n);
  for (int i = 0; i < n; ++i) {
    OntologyNode node{vocab[std::size_t(i)], vocab[std::size_t(i)], {}};
    for (int j = i + 1; j < n; ++j) {
      if (rng.uniform() < 0.25) {
        edge[std::size_t(i)][std::size_t(j)] = true;
        node.child_ids.push_back(vocab[std::size_t(j)]);
      }
    }
    nodes.push_back(std::move(node));
  }
  std::vector<std::vector<bool>> reach = edge;
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (reach[std::size_t(i)][std::size_t(k)] &&
            reach[std::size_t(k)][std::size_t(j)])
          reach[std::size_t(i)][std::size_t(j)] = true;

  const auto table = build_relations_ontology(vocab, Ontology(nodes));
  for (int i = 0; i < n; ++i) {
    std::set<ClassId> down, related;
    related.insert(vocab[std::size_t(i)]);
    for (int j = 0; j < n; ++j) {
      if (reach[std::size_t(i)][std::size_t(j)]) {
        down.insert(vocab[std::size_t(j)]);
        related.insert(vocab[std::size_t(j)]);
      }
      if (reach[std::size_t(j)][std::size_t(i)]) related.insert(vocab[std::size_t(j)]);
    }
    std::set<ClassId> safe;
    for (const auto& c : vocab)
      if (!related.count(c)) safe.insert(c);

    const ClassRelations* rel = table.find(vocab[std::size_t(i)]);
    REQUIRE(rel != nullptr);
    REQUIRE(rel->subcategories == down);
    REQUIRE(rel->safe_negatives == safe);
    REQUIRE(rel->synonyms.empty());
    REQUIRE(rel->cooccur.empty());
  }
}

namespace {

// Scripted stand-in for the chat endpoint. Replies per target class, with
// optional failures injected before the first success.
class FakeChat : public ChatClient {
 public:
  std::map<std::string, std::string> replies;  // display name -> body
  int fail_first = 0;
  int calls = 0;

  std::string complete(const std::string&, const std::string& user) override {
    ++calls;
    if (fail_first > 0) {
      --fail_first;
      throw IoError("injected failure");
    }
    const auto a = user.find('"');
    const auto b = user.find('"', a + 1);
    const std::string name = user.substr(a + 1, b - a - 1);
    auto it = replies.find(name);
    if (it == replies.end()) throw IoError("no scripted reply for " + name);
    return it->second;
  }
  std::string model_id() const override { return "fake-chat"; }
};

}  // namespace

TEST_CASE("llm relation builder merges scripted responses") {
  const std::vector<ClassId> vocab = {"dog", "animal", "rain"};
  const Ontology ont(
      {{"animal", "animal", {"dog"}}, {"dog", "dog", {}}, {"rain", "rain", {}}});

  FakeChat chat;
  chat.replies["dog"] =
      R"({"subcategories": [], "synonyms": [], "cooccur": ["animal"], "safe_negatives": ["rain", "animal"]})";
  chat.replies["animal"] =
      R"({"subcategories": ["dog"], "synonyms": [], "cooccur": [], "safe_negatives": ["rain"]})";
  chat.replies["rain"] =
      R"({"subcategories": [], "synonyms": ["drizzle"], "cooccur": [], "safe_negatives": ["dog", "animal", "rain"]})";

  LlmBuildOptions opts;
  opts.backoff_base_ms = 0;
  LlmBuildStats stats;
  const auto t = build_relations_llm(vocab, ont, chat, opts, &stats);

  REQUIRE(stats.requests == 3);
  REQUIRE(stats.cache_hits == 0);
  REQUIRE(stats.unresolved.empty());
  // A class listed as cooccur may not stay in safe_negatives.
  REQUIRE(t.find("dog")->cooccur == std::set<ClassId>{"animal"});
  REQUIRE(t.find("dog")->safe_negatives == std::set<ClassId>{"rain"});
  REQUIRE(t.find("animal")->subcategories == std::set<ClassId>{"dog"});
  // Unknown names are dropped, self references removed.
  REQUIRE(t.find("rain")->synonyms.empty());
  REQUIRE(t.find("rain")->safe_negatives == std::set<ClassId>{"dog", "animal"});
}

TEST_CASE("llm relation builder caches and retries") {
  const std::vector<ClassId> vocab = {"dog", "rain"};
  const Ontology ont({{"dog", "dog", {}}, {"rain", "rain", {}}});
  const auto cache = temp_path("ovsed_llm_cache");
  std::filesystem::remove_all(cache);

  FakeChat chat;
  chat.replies["dog"] =
      R"({"subcategories": [], "synonyms": [], "cooccur": [], "safe_negatives": ["rain"]})";
  chat.replies["rain"] =
      R"({"subcategories": [], "synonyms": [], "cooccur": [], "safe_negatives": ["dog"]})";

  LlmBuildOptions opts;
  opts.cache_dir = cache;
  opts.backoff_base_ms = 0;

  LlmBuildStats cold;
  const auto t1 = build_relations_llm(vocab, ont, chat, opts, &cold);
  REQUIRE(cold.requests == 2);
  REQUIRE(cold.cache_hits == 0);

  LlmBuildStats warm;
  const auto t2 = build_relations_llm(vocab, ont, chat, opts, &warm);
  REQUIRE(warm.requests == 0);
  REQUIRE(warm.cache_hits == 2);
  REQUIRE(t2.to_json() == t1.to_json());
  std::filesystem::remove_all(cache);

  // Two failures then success: three attempts, resolved.
  FakeChat flaky;
  flaky.replies["dog"] = chat.replies["dog"];
  flaky.replies["rain"] = chat.replies["rain"];
  flaky.fail_first = 2;
  LlmBuildOptions no_cache;
  no_cache.backoff_base_ms = 0;
  LlmBuildStats st;
  const auto t3 = build_relations_llm(vocab, ont, flaky, no_cache, &st);
  REQUIRE(st.unresolved.empty());
  REQUIRE(st.requests == 4);  // 3 attempts for the first class, 1 for the next
  REQUIRE(t3.find("dog")->safe_negatives == std::set<ClassId>{"rain"});
}

TEST_CASE("llm relation builder falls back to ontology when unresolved") {
  const std::vector<ClassId> vocab = {"A", "B", "C"};
  const Ontology ont = chain_ontology();

  FakeChat broken;
  broken.replies["a"] = "this is not json";
  broken.replies["b"] = "this is not json";
  broken.replies["c"] = "this is not json";

  LlmBuildOptions opts;
  opts.backoff_base_ms = 0;
  LlmBuildStats stats;
  const auto t = build_relations_llm(vocab, ont, broken, opts, &stats);

  REQUIRE(stats.unresolved == vocab);
  REQUIRE(stats.requests == 9);  // 3 classes x 3 attempts
  const auto ref = build_relations_ontology(vocab, ont);
  REQUIRE(t.to_json() == ref.to_json());
}

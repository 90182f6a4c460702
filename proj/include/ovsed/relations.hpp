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

// Class-relation tables (subcategories, synonyms, co-occurrences, safe
// negatives) and per-clip query composition: positives from the clip's
// labels, negatives sampled away from anything related to a positive.

#ifndef OVSED_RELATIONS_HPP_
#define OVSED_RELATIONS_HPP_

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "ovsed/common.hpp"
#include "ovsed/dataio.hpp"
#include "ovsed/rng.hpp"

namespace ovsed {

struct ClassRelations {
  std::set<ClassId> subcategories;
  std::set<ClassId> synonyms;
  std::set<ClassId> cooccur;
  std::set<ClassId> safe_negatives;
};

class RelationTable {
 public:
  std::map<ClassId, ClassRelations> entries;

  const ClassRelations* find(const ClassId& id) const {
    auto it = entries.find(id);
    return it == entries.end() ? nullptr : &it->second;
  }

  // Drops ids outside the vocabulary, removes self references, and purges
  // safe negatives of anything listed as related. Idempotent.
  void normalize(const std::vector<ClassId>& vocabulary) {
    const std::set<ClassId> vocab(vocabulary.begin(), vocabulary.end());
    for (auto& [id, rel] : entries) {
      auto clean = [&](std::set<ClassId>& s, const char* what) {
        for (auto it = s.begin(); it != s.end();) {
          if (*it == id) {
            it = s.erase(it);
          } else if (!vocab.count(*it)) {
            warn("relation table: dropping unknown class '" + *it + "' from " +
                 what + " of '" + id + "'");
            it = s.erase(it);
          } else {
            ++it;
          }
        }
      };
      clean(rel.subcategories, "subcategories");
      clean(rel.synonyms, "synonyms");
      clean(rel.cooccur, "cooccur");
      clean(rel.safe_negatives, "safe_negatives");
      for (const ClassId& c : rel.subcategories) rel.safe_negatives.erase(c);
      for (const ClassId& c : rel.synonyms) rel.safe_negatives.erase(c);
      for (const ClassId& c : rel.cooccur) rel.safe_negatives.erase(c);
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [id, rel] : entries) {
      j[id] = {{"subcategories", rel.subcategories},
               {"synonyms", rel.synonyms},
               {"cooccur", rel.cooccur},
               {"safe_negatives", rel.safe_negatives}};
    }
    return j;
  }

  static RelationTable from_json(const nlohmann::json& j) {
    RelationTable t;
    for (auto it = j.begin(); it != j.end(); ++it) {
      ClassRelations rel;
      const nlohmann::json& e = it.value();
      auto read_set = [&](const char* key) {
        std::set<ClassId> s;
        if (e.contains(key))
          for (const auto& v : e.at(key)) s.insert(v.get<std::string>());
        return s;
      };
      rel.subcategories = read_set("subcategories");
      rel.synonyms = read_set("synonyms");
      rel.cooccur = read_set("cooccur");
      rel.safe_negatives = read_set("safe_negatives");
      t.entries[it.key()] = rel;
    }
    return t;
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write relation table: " + path);
    os << to_json().dump(2) << "\n";
  }

  static RelationTable load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read relation table: " + path);
    nlohmann::json j;
    try {
      is >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("relation table " + path + ": " + e.what());
    }
    return from_json(j);
  }
};

struct QuerySet {
  ClipId clip_id;
  std::vector<ClassId> positives;
  std::vector<ClassId> negatives;
};

// Classes that must not be sampled as negatives for these positives: the
// positives themselves, everything the table relates to them, and (when an
// ontology is supplied) their ancestors and descendants.
inline std::set<ClassId> conflict_set(const std::vector<ClassId>& positives,
                                      const RelationTable& table,
                                      const Ontology* ontology = nullptr) {
  std::set<ClassId> out;
  for (const ClassId& p : positives) {
    out.insert(p);
    const ClassRelations* rel = table.find(p);
    if (rel == nullptr) {
      warn("conflict_set: class '" + p + "' missing from relation table");
    } else {
      out.insert(rel->subcategories.begin(), rel->subcategories.end());
      out.insert(rel->synonyms.begin(), rel->synonyms.end());
      out.insert(rel->cooccur.begin(), rel->cooccur.end());
    }
    if (ontology != nullptr && ontology->contains(p)) {
      for (const ClassId& a : ontology->ancestors(p)) out.insert(a);
      for (const ClassId& d : ontology->descendants(p)) out.insert(d);
    }
  }
  return out;
}

struct ComposeOptions {
  int q_total = 20;
  int p_max = 10;
  bool filtering = true;
  const Ontology* ontology = nullptr;
};

// Builds one clip's query set: positives are the clip's labeled classes
// (subsampled to p_max if needed), negatives fill the remainder. With
// filtering on the negative pool shrinks in stages: intersection of the
// positives' safe-negative sets, then vocabulary minus the conflict set,
// then vocabulary minus positives, warning at each relaxation.
inline QuerySet compose_queries(const ClipId& clip_id,
                                const std::vector<ClassId>& clip_classes,
                                const std::vector<ClassId>& vocabulary,
                                const RelationTable& table,
                                const ComposeOptions& opts, Rng& rng) {
  if (static_cast<int>(vocabulary.size()) < opts.q_total)
    throw ValidationError("compose_queries: vocabulary smaller than Q");

  QuerySet qs;
  qs.clip_id = clip_id;
  std::vector<ClassId> labeled;
  for (const ClassId& c : vocabulary)
    if (std::find(clip_classes.begin(), clip_classes.end(), c) !=
        clip_classes.end())
      labeled.push_back(c);
  if (static_cast<int>(labeled.size()) <= opts.p_max)
    qs.positives = labeled;
  else
    qs.positives = rng.sample(labeled, static_cast<std::size_t>(opts.p_max));

  const int n_neg = opts.q_total - static_cast<int>(qs.positives.size());
  const std::set<ClassId> pos(qs.positives.begin(), qs.positives.end());

  auto minus = [&](const std::set<ClassId>& banned) {
    std::vector<ClassId> pool;
    for (const ClassId& c : vocabulary)
      if (!banned.count(c)) pool.push_back(c);
    return pool;
  };

  std::vector<ClassId> pool;
  if (!opts.filtering) {
    pool = minus(pos);
  } else {
    const std::set<ClassId> conflicts =
        conflict_set(qs.positives, table, opts.ontology);
    if (qs.positives.empty()) {
      pool = minus(conflicts);  // no constraints beyond an empty set
    } else {
      // Safe with respect to every positive.
      std::set<ClassId> safe;
      bool first = true;
      for (const ClassId& p : qs.positives) {
        const ClassRelations* rel = table.find(p);
        std::set<ClassId> s = rel ? rel->safe_negatives : std::set<ClassId>{};
        if (first) {
          safe = std::move(s);
          first = false;
        } else {
          std::set<ClassId> inter;
          std::set_intersection(safe.begin(), safe.end(), s.begin(), s.end(),
                                std::inserter(inter, inter.begin()));
          safe = std::move(inter);
        }
      }
      for (const ClassId& c : conflicts) safe.erase(c);
      std::vector<ClassId> safe_pool;
      for (const ClassId& c : vocabulary)
        if (safe.count(c)) safe_pool.push_back(c);
      if (static_cast<int>(safe_pool.size()) >= n_neg) {
        pool = std::move(safe_pool);
      } else {
        warn("compose_queries: safe-negative pool exhausted for clip '" +
             clip_id + "', relaxing to conflict-filtered vocabulary");
        pool = minus(conflicts);
      }
    }
    if (static_cast<int>(pool.size()) < n_neg) {
      warn("compose_queries: conflict-filtered pool exhausted for clip '" +
           clip_id + "', relaxing to vocabulary minus positives");
      pool = minus(pos);
    }
  }
  if (static_cast<int>(pool.size()) < n_neg)
    throw ValidationError("compose_queries: not enough negative candidates");
  qs.negatives = rng.sample(pool, static_cast<std::size_t>(n_neg));
  return qs;
}

// Relation table from ontology structure alone: descendants become
// subcategories; anything unrelated by ancestry is a safe negative.
inline RelationTable build_relations_ontology(
    const std::vector<ClassId>& vocabulary, const Ontology& ontology) {
  RelationTable t;
  const std::set<ClassId> vocab(vocabulary.begin(), vocabulary.end());
  for (const ClassId& id : vocabulary) {
    ClassRelations rel;
    std::set<ClassId> related;
    related.insert(id);
    if (ontology.contains(id)) {
      for (const ClassId& d : ontology.descendants(id)) {
        related.insert(d);
        if (vocab.count(d)) rel.subcategories.insert(d);
      }
      for (const ClassId& a : ontology.ancestors(id)) related.insert(a);
    } else {
      warn("relations: class '" + id + "' not in ontology, treated as isolated");
    }
    for (const ClassId& c : vocabulary)
      if (!related.count(c)) rel.safe_negatives.insert(c);
    t.entries[id] = rel;
  }
  t.normalize(vocabulary);
  return t;
}

}  // namespace ovsed

#endif  // OVSED_RELATIONS_HPP_

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

// One JSON config for a whole run: model, training, evaluation, fold
// harness, and artifact paths. Strict parsing (unknown keys rejected) plus
// dotted-path --set overrides so experiment matrices can be scripted from a
// single base file.

#ifndef OVSED_RUNCONFIG_HPP_
#define OVSED_RUNCONFIG_HPP_

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ovsed/model.hpp"
#include "ovsed/psds.hpp"
#include "ovsed/trainer.hpp"

namespace ovsed {

struct RunPaths {
  std::string dataset;
  std::string embeddings;
  std::string relations;
  std::string run_dir;

  nlohmann::json to_json() const {
    return {{"dataset", dataset},
            {"embeddings", embeddings},
            {"relations", relations},
            {"run_dir", run_dir}};
  }
  static RunPaths from_json(const nlohmann::json& j) {
    static const std::vector<std::string> known = {"dataset", "embeddings",
                                                   "relations", "run_dir"};
    for (auto it = j.begin(); it != j.end(); ++it)
      if (std::find(known.begin(), known.end(), it.key()) == known.end())
        throw ValidationError("config: unknown key 'paths." + it.key() + "'");
    RunPaths p;
    p.dataset = j.value("dataset", "");
    p.embeddings = j.value("embeddings", "");
    p.relations = j.value("relations", "");
    p.run_dir = j.value("run_dir", "");
    return p;
  }
};

struct RunConfig {
  std::uint64_t seed = 0;
  int k_out = 2;    // excluded classes per fold
  int n_folds = 3;  // exclusion folds
  ModelConfig model;
  TrainConfig train;
  FewShotConfig fewshot;
  PsdsParams eval;
  RunPaths paths;

  nlohmann::json to_json() const {
    return {{"seed", seed},        {"k_out", k_out},
            {"n_folds", n_folds},  {"model", model.to_json()},
            {"train", train.to_json()}, {"fewshot", fewshot.to_json()},
            {"eval", eval.to_json()},   {"paths", paths.to_json()}};
  }

  static RunConfig from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("config: top level must be an object");
    static const std::vector<std::string> known = {
        "seed", "k_out", "n_folds", "model", "train", "fewshot", "eval",
        "paths"};
    for (auto it = j.begin(); it != j.end(); ++it)
      if (std::find(known.begin(), known.end(), it.key()) == known.end())
        throw ValidationError("config: unknown key '" + it.key() + "'");
    RunConfig c;
    c.seed = j.value("seed", c.seed);
    c.k_out = j.value("k_out", c.k_out);
    c.n_folds = j.value("n_folds", c.n_folds);
    if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
    if (j.contains("fewshot"))
      c.fewshot = FewShotConfig::from_json(j.at("fewshot"));
    if (j.contains("eval")) c.eval = PsdsParams::from_json(j.at("eval"));
    if (j.contains("paths")) c.paths = RunPaths::from_json(j.at("paths"));
    // The run seed governs training unless the train block pins its own.
    if (!j.contains("train") || !j.at("train").contains("seed"))
      c.train.seed = c.seed;
    if (c.k_out < 0) throw ValidationError("config: k_out must be >= 0");
    if (c.n_folds < 1) throw ValidationError("config: n_folds must be >= 1");
    return c;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ": " + e.what());
    }
    try {
      return from_json(j);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ": " + e.what());
    }
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write config: " + path);
    out << to_json().dump(2) << "\n";
  }

  // Fails when a referenced input path does not exist; `required` lists the
  // paths.* fields the command cannot run without. run_dir is created, not
  // checked.
  void validate_paths(const std::vector<std::string>& required) const {
    auto field = [&](const std::string& name) -> const std::string& {
      if (name == "dataset") return paths.dataset;
      if (name == "embeddings") return paths.embeddings;
      if (name == "relations") return paths.relations;
      if (name == "run_dir") return paths.run_dir;
      throw ValidationError("config: unknown path field '" + name + "'");
    };
    for (const char* name : {"dataset", "embeddings", "relations"}) {
      const std::string& p = field(name);
      if (!p.empty() && !std::filesystem::exists(p))
        throw ValidationError("config: paths." + std::string(name) +
                              " does not exist: " + p);
    }
    for (const std::string& name : required)
      if (field(name).empty())
        throw ValidationError("config: paths." + name + " is required");
  }
};

namespace detail_cfg {

// Section search order for single-segment --set keys (`epochs=1` means
// train.epochs). Dotted paths are applied verbatim.
inline const std::vector<std::string>& set_sections() {
  static const std::vector<std::string> kOrder = {"train", "model", "eval",
                                                  "paths", "fewshot"};
  return kOrder;
}

inline nlohmann::json parse_set_value(const std::string& text) {
  const nlohmann::json v = nlohmann::json::parse(text, nullptr, false);
  if (!v.is_discarded() && !v.is_object()) return v;
  return text;  // bare words are strings
}

}  // namespace detail_cfg

// Applies one `key=value` or `section.key=value` override to raw config
// JSON. Values parse as JSON scalars where possible, else as strings.
inline void apply_override(nlohmann::json& j, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValidationError("--set expects key=value, got '" + spec + "'");
  const std::string key = spec.substr(0, eq);
  const nlohmann::json value = detail_cfg::parse_set_value(spec.substr(eq + 1));

  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (true) {
    const auto dot = key.find('.', pos);
    parts.push_back(key.substr(pos, dot - pos));
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  for (const std::string& p : parts)
    if (p.empty())
      throw ValidationError("--set: empty path segment in '" + key + "'");

  if (parts.size() == 1) {
    static const std::vector<std::string> top = {"seed", "k_out", "n_folds"};
    if (std::find(top.begin(), top.end(), parts[0]) != top.end()) {
      j[parts[0]] = value;
      return;
    }
    for (const std::string& sec : detail_cfg::set_sections()) {
      nlohmann::json probe = j.contains(sec) ? j.at(sec)
                                             : nlohmann::json::object();
      probe[parts[0]] = value;
      try {
        RunConfig::from_json({{sec, probe}});
      } catch (const ValidationError&) {
        continue;
      } catch (const nlohmann::json::exception&) {
        continue;
      }
      j[sec][parts[0]] = value;
      return;
    }
    throw ValidationError("--set: cannot apply '" + parts[0] +
                          "' to any config section");
  }

  nlohmann::json* node = &j;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i)
    node = &(*node)[parts[i]];
  (*node)[parts.back()] = value;
}

}  // namespace ovsed

#endif  // OVSED_RUNCONFIG_HPP_

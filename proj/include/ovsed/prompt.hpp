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

// Fixed-dimension class-name query embeddings. Vectors come from a
// precomputed store (text side is frozen, so embeddings are data) with a
// deterministic hash-seeded stub for names the store does not cover.

#ifndef OVSED_PROMPT_HPP_
#define OVSED_PROMPT_HPP_

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ovsed/common.hpp"
#include "ovsed/rng.hpp"

namespace ovsed {

inline std::string prompt_template(const std::string& class_name) {
  return "A sound of " + class_name;
}

struct PromptEmbedding {
  std::string name;
  Eigen::VectorXf vector;
  enum Source { kPrecomputed, kStub } source = kStub;
};

// Unit-norm pseudo-random vector seeded by a stable hash of the templated
// prompt string; the same name always maps to the same vector.
inline Eigen::VectorXf stub_embedding(const std::string& class_name, int dim) {
  Rng rng(fnv1a64(prompt_template(class_name)));
  Eigen::VectorXf v(dim);
  for (int i = 0; i < dim; ++i) v(i) = static_cast<float>(rng.normal());
  const float n = v.norm();
  if (n > 0) v /= n;
  return v;
}

class EmbeddingStore {
 public:
  explicit EmbeddingStore(int dim = 512) : dim_(dim) {}

  int dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  bool contains(const std::string& name) const {
    return entries_.count(name) != 0;
  }
  const std::map<std::string, Eigen::VectorXf>& entries() const {
    return entries_;
  }

  void insert(const std::string& name, Eigen::VectorXf v) {
    if (v.size() != dim_)
      throw ValidationError("embedding '" + name + "': dimension " +
                            std::to_string(v.size()) + " != store dim " +
                            std::to_string(dim_));
    if (!v.allFinite())
      throw ValidationError("embedding '" + name + "': non-finite values");
    if (!entries_.emplace(name, std::move(v)).second)
      throw ValidationError("duplicate embedding name '" + name + "'");
  }

  PromptEmbedding embed(const std::string& class_name) const {
    auto it = entries_.find(class_name);
    if (it != entries_.end())
      return PromptEmbedding{class_name, it->second,
                             PromptEmbedding::kPrecomputed};
    return PromptEmbedding{class_name, stub_embedding(class_name, dim_),
                           PromptEmbedding::kStub};
  }

 private:
  int dim_;
  std::map<std::string, Eigen::VectorXf> entries_;
};

// File format: header line `#dim=<D>`, then `<name>\t<v1> <v2> ... <vD>`
// per class with decimal floats.
inline EmbeddingStore import_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embedding file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  if (line.rfind("#dim=", 0) != 0)
    throw ParseError(path + ": first line must be '#dim=<D>'");
  int dim = 0;
  try {
    dim = std::stoi(line.substr(5));
  } catch (const std::exception&) {
    throw ParseError(path + ": bad dimension in header '" + line + "'");
  }
  if (dim <= 0) throw ParseError(path + ": dimension must be positive");

  EmbeddingStore store(dim);
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ParseError(path + ": line " + std::to_string(line_no) +
                       ": missing tab separator");
    const std::string name = line.substr(0, tab);
    std::istringstream vals(line.substr(tab + 1));
    Eigen::VectorXf v(dim);
    for (int i = 0; i < dim; ++i) {
      double x;
      if (!(vals >> x))
        throw ParseError(path + ": line " + std::to_string(line_no) +
                         " ('" + name + "'): expected " + std::to_string(dim) +
                         " values");
      v(i) = static_cast<float>(x);
    }
    double extra;
    if (vals >> extra)
      throw ParseError(path + ": line " + std::to_string(line_no) + " ('" +
                       name + "'): more than " + std::to_string(dim) +
                       " values");
    if (!v.allFinite())
      throw ParseError(path + ": line " + std::to_string(line_no) + " ('" +
                       name + "'): non-finite value");
    try {
      store.insert(name, std::move(v));
    } catch (const ValidationError& e) {
      throw ParseError(path + ": line " + std::to_string(line_no) + ": " +
                       e.what());
    }
  }
  return store;
}

inline void export_embeddings(const EmbeddingStore& store,
                              const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write embedding file: " + path);
  out << "#dim=" << store.dim() << "\n";
  char buf[48];
  for (const auto& [name, v] : store.entries()) {
    out << name << '\t';
    for (int i = 0; i < v.size(); ++i) {
      // %.9g round-trips f32 exactly.
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v(i)));
      out << (i ? " " : "") << buf;
    }
    out << "\n";
  }
  if (!out) throw IoError("failed writing embedding file: " + path);
}

}  // namespace ovsed

#endif  // OVSED_PROMPT_HPP_

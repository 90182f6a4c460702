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

// Chat-completion and text-embedding clients used to elicit class relations
// and prompt embeddings from external services. Both are interfaces so tests
// can substitute mocks; the HTTP implementations speak the common
// /chat/completions and /embeddings JSON shapes over plain HTTP.

#ifndef OVSED_LLM_CLIENT_HPP_
#define OVSED_LLM_CLIENT_HPP_

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "ovsed/common.hpp"
#include "ovsed/dataio.hpp"
#include "ovsed/relations.hpp"

namespace ovsed {

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  // Returns the assistant message content; throws IoError on failure.
  virtual std::string complete(const std::string& system_msg,
                               const std::string& user_msg) = 0;
  virtual std::string model_id() const = 0;
};

class EmbedClient {
 public:
  virtual ~EmbedClient() = default;
  virtual std::vector<std::vector<float>> embed(
      const std::vector<std::string>& texts) = 0;
  virtual std::string model_id() const = 0;
};

namespace detail {

struct UrlParts {
  std::string host;    // scheme://host:port
  std::string prefix;  // path prefix, possibly empty
};

inline UrlParts split_base_url(const std::string& base) {
  if (base.rfind("https://", 0) == 0)
    throw IoError("https endpoints are not supported by this build; "
                  "use an http base url");
  if (base.rfind("http://", 0) != 0)
    throw IoError("API base url must start with http://: " + base);
  const auto slash = base.find('/', 7);
  if (slash == std::string::npos) return {base, ""};
  std::string prefix = base.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {base.substr(0, slash), prefix};
}

inline std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v == nullptr ? fallback : std::string(v);
}

}  // namespace detail

class HttpChatClient : public ChatClient {
 public:
  HttpChatClient(std::string base_url, std::string api_key, std::string model)
      : parts_(detail::split_base_url(base_url)),
        api_key_(std::move(api_key)),
        model_(std::move(model)) {}

  static HttpChatClient from_env(const std::string& model) {
    const std::string base = detail::env_or("LLM_API_BASE", "");
    if (base.empty()) throw IoError("LLM_API_BASE is not set");
    return HttpChatClient(base, detail::env_or("LLM_API_KEY", ""), model);
  }

  std::string complete(const std::string& system_msg,
                       const std::string& user_msg) override {
    nlohmann::json body = {
        {"model", model_},
        {"temperature", 0},
        {"messages",
         {{{"role", "system"}, {"content", system_msg}},
          {{"role", "user"}, {"content", user_msg}}}}};
    httplib::Client cli(parts_.host);
    cli.set_read_timeout(60, 0);
    httplib::Headers headers;
    if (!api_key_.empty())
      headers.emplace("Authorization", "Bearer " + api_key_);
    auto res = cli.Post(parts_.prefix + "/chat/completions", headers,
                        body.dump(), "application/json");
    if (!res) throw IoError("chat request failed: no response");
    if (res->status != 200)
      throw IoError("chat request failed: HTTP " +
                    std::to_string(res->status));
    try {
      nlohmann::json j = nlohmann::json::parse(res->body);
      return j.at("choices").at(0).at("message").at("content")
          .get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad chat response: ") + e.what());
    }
  }

  std::string model_id() const override { return model_; }

 private:
  detail::UrlParts parts_;
  std::string api_key_;
  std::string model_;
};

class HttpEmbedClient : public EmbedClient {
 public:
  HttpEmbedClient(std::string base_url, std::string api_key, std::string model)
      : parts_(detail::split_base_url(base_url)),
        api_key_(std::move(api_key)),
        model_(std::move(model)) {}

  static HttpEmbedClient from_env(const std::string& model) {
    const std::string base = detail::env_or("EMBED_API_BASE", "");
    if (base.empty()) throw IoError("EMBED_API_BASE is not set");
    return HttpEmbedClient(base, detail::env_or("EMBED_API_KEY", ""), model);
  }

  std::vector<std::vector<float>> embed(
      const std::vector<std::string>& texts) override {
    nlohmann::json body = {{"model", model_}, {"input", texts}};
    httplib::Client cli(parts_.host);
    cli.set_read_timeout(60, 0);
    httplib::Headers headers;
    if (!api_key_.empty())
      headers.emplace("Authorization", "Bearer " + api_key_);
    auto res = cli.Post(parts_.prefix + "/embeddings", headers, body.dump(),
                        "application/json");
    if (!res) throw IoError("embedding request failed: no response");
    if (res->status != 200)
      throw IoError("embedding request failed: HTTP " +
                    std::to_string(res->status));
    try {
      nlohmann::json j = nlohmann::json::parse(res->body);
      std::vector<std::vector<float>> out(texts.size());
      for (const auto& item : j.at("data"))
        out.at(item.at("index").get<std::size_t>()) =
            item.at("embedding").get<std::vector<float>>();
      return out;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad embedding response: ") + e.what());
    }
  }

  std::string model_id() const override { return model_; }

 private:
  detail::UrlParts parts_;
  std::string api_key_;
  std::string model_;
};

struct LlmBuildOptions {
  std::string cache_dir;     // empty disables caching
  int max_attempts = 3;
  int backoff_base_ms = 200;  // doubles per retry; 0 in tests
};

struct LlmBuildStats {
  int requests = 0;    // client invocations (cache misses x attempts)
  int cache_hits = 0;
  std::vector<ClassId> unresolved;
};

namespace detail {

inline std::string relation_prompt(const std::string& name,
                                   const std::vector<std::string>& names) {
  std::ostringstream os;
  os << "Target sound class: \"" << name << "\".\n";
  os << "Vocabulary:\n";
  for (const std::string& n : names) os << "- " << n << "\n";
  os << "For the target class, pick from the vocabulary only and reply with "
        "strict JSON of the form {\"subcategories\": [], \"synonyms\": [], "
        "\"cooccur\": [], \"safe_negatives\": []}. subcategories: more "
        "specific kinds of the target sound. synonyms: alternative names for "
        "the same sound. cooccur: sounds frequently present in the same "
        "recording. safe_negatives: sounds essentially never present when "
        "the target occurs.";
  return os.str();
}

inline std::set<ClassId> names_to_ids(
    const nlohmann::json& arr, const std::map<std::string, ClassId>& by_name,
    const ClassId& self, const char* what) {
  std::set<ClassId> out;
  for (const auto& v : arr) {
    const std::string s = v.get<std::string>();
    auto it = by_name.find(s);
    if (it == by_name.end()) {
      warn("relations: response for '" + self + "' lists unknown name '" + s +
           "' under " + what);
      continue;
    }
    out.insert(it->second);
  }
  return out;
}

}  // namespace detail

// Builds a relation table by querying a chat model once per class. Raw
// responses are cached on disk keyed by (model, class, vocabulary hash);
// rerunning against a warm cache performs no client calls. Classes whose
// requests keep failing fall back to ontology-derived relations.
inline RelationTable build_relations_llm(
    const std::vector<ClassId>& vocabulary, const Ontology& ontology,
    ChatClient& client, const LlmBuildOptions& opts,
    LlmBuildStats* stats = nullptr) {
  RelationTable fallback = build_relations_ontology(vocabulary, ontology);
  RelationTable table;
  LlmBuildStats local;
  LlmBuildStats& st = stats ? *stats : local;

  std::vector<std::string> names;
  std::map<std::string, ClassId> by_name;
  for (const ClassId& id : vocabulary) {
    const std::string name = ontology.contains(id) ? ontology.display_name(id)
                                                   : id;
    names.push_back(name);
    by_name[name] = id;
    by_name[id] = id;
  }

  std::string joined;
  for (const ClassId& id : vocabulary) joined += id + "\n";
  const std::uint64_t vocab_hash = fnv1a64(joined);

  if (!opts.cache_dir.empty())
    std::filesystem::create_directories(opts.cache_dir);

  const std::string system_msg =
      "You catalogue relations between sound event classes. "
      "Reply with strict JSON only, no prose.";

  for (std::size_t i = 0; i < vocabulary.size(); ++i) {
    const ClassId& id = vocabulary[i];
    const std::uint64_t key =
        fnv1a64(client.model_id() + "\x1f" + id + "\x1f" +
                std::to_string(vocab_hash));
    std::ostringstream keyname;
    keyname << std::hex << key;
    const std::string cache_path =
        opts.cache_dir.empty()
            ? ""
            : opts.cache_dir + "/" + keyname.str() + ".json";

    std::string content;
    bool have = false;
    if (!cache_path.empty() && std::filesystem::exists(cache_path)) {
      std::ifstream is(cache_path);
      std::ostringstream buf;
      buf << is.rdbuf();
      content = buf.str();
      have = true;
      ++st.cache_hits;
    }

    nlohmann::json parsed;
    bool ok = false;
    if (have) {
      try {
        parsed = nlohmann::json::parse(content);
        ok = true;
      } catch (const nlohmann::json::exception&) {
        warn("relations: corrupt cache entry for '" + id + "', refetching");
        have = false;
      }
    }
    if (!ok) {
      for (int attempt = 0; attempt < opts.max_attempts && !ok; ++attempt) {
        if (attempt > 0 && opts.backoff_base_ms > 0)
          std::this_thread::sleep_for(std::chrono::milliseconds(
              opts.backoff_base_ms << (attempt - 1)));
        try {
          ++st.requests;
          content = client.complete(
              system_msg, detail::relation_prompt(names[i], names));
          parsed = nlohmann::json::parse(content);
          ok = true;
        } catch (const std::exception& e) {
          warn("relations: attempt " + std::to_string(attempt + 1) +
               " for '" + id + "' failed: " + e.what());
        }
      }
      if (ok && !cache_path.empty()) {
        std::ofstream os(cache_path);
        os << content;
      }
    }

    if (!ok) {
      st.unresolved.push_back(id);
      table.entries[id] = fallback.entries.at(id);
      continue;
    }
    ClassRelations rel;
    auto read = [&](const char* key2) {
      return parsed.contains(key2)
                 ? detail::names_to_ids(parsed.at(key2), by_name, id, key2)
                 : std::set<ClassId>{};
    };
    rel.subcategories = read("subcategories");
    rel.synonyms = read("synonyms");
    rel.cooccur = read("cooccur");
    rel.safe_negatives = read("safe_negatives");
    table.entries[id] = rel;
  }

  table.normalize(vocabulary);
  return table;
}

}  // namespace ovsed

#endif  // OVSED_LLM_CLIENT_HPP_

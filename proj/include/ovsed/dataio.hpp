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

// Strong-label ingestion, the AudioSet-style ontology, frame rasterization,
// and the synthetic desk-scale dataset generator.

#ifndef OVSED_DATAIO_HPP_
#define OVSED_DATAIO_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "ovsed/common.hpp"
#include "ovsed/rng.hpp"
#include "json.hpp"

namespace ovsed {

constexpr int kSampleRate = 16000;

struct EventLabel {
  ClipId clip_id;
  ClassId class_id;
  double onset = 0.0;   // seconds
  double offset = 0.0;  // seconds

  bool operator==(const EventLabel& o) const {
    return clip_id == o.clip_id && class_id == o.class_id &&
           onset == o.onset && offset == o.offset;
  }
};

struct ClipRecord {
  ClipId clip_id;
  double duration = 0.0;        // seconds
  std::vector<float> samples;   // 16 kHz mono; may be empty
  std::string audio_path;       // optional on-disk reference

  void validate() const {
    if (duration <= 0.0)
      throw ValidationError("clip " + clip_id + ": non-positive duration");
    if (!samples.empty()) {
      const double audio_dur =
          static_cast<double>(samples.size()) / kSampleRate;
      if (std::abs(audio_dur - duration) > 0.010 + 1e-9)
        throw ValidationError("clip " + clip_id +
                              ": sample count disagrees with duration");
    }
  }
};

// ---------------------------------------------------------------------------
// Ontology

struct OntologyNode {
  ClassId id;
  std::string display_name;
  std::vector<ClassId> child_ids;
};

class Ontology {
 public:
  Ontology() = default;

  explicit Ontology(std::vector<OntologyNode> nodes) {
    for (auto& n : nodes) {
      if (index_.count(n.id))
        throw ValidationError("ontology: duplicate id " + n.id);
      index_[n.id] = nodes_.size();
      nodes_.push_back(std::move(n));
    }
    validate_edges();
  }

  static Ontology from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open ontology file: " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("ontology " + path + ": " + e.what());
    }
    return from_json(j);
  }

  static Ontology from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw ParseError("ontology: top level must be an array");
    std::vector<OntologyNode> nodes;
    for (const auto& item : j) {
      OntologyNode n;
      n.id = item.at("id").get<std::string>();
      n.display_name = item.at("name").get<std::string>();
      if (item.contains("child_ids"))
        n.child_ids = item.at("child_ids").get<std::vector<std::string>>();
      nodes.push_back(std::move(n));
    }
    return Ontology(std::move(nodes));
  }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& n : nodes_) {
      arr.push_back({{"id", n.id},
                     {"name", n.display_name},
                     {"child_ids", n.child_ids}});
    }
    return arr;
  }

  bool contains(const ClassId& id) const { return index_.count(id) != 0; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<OntologyNode>& nodes() const { return nodes_; }

  // Falls back to the raw id for classes the ontology does not know.
  std::string display_name(const ClassId& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? id : nodes_[it->second].display_name;
  }

  const std::vector<ClassId>& children(const ClassId& id) const {
    static const std::vector<ClassId> kEmpty;
    auto it = index_.find(id);
    return it == index_.end() ? kEmpty : nodes_[it->second].child_ids;
  }

  // Transitive closure downward. Does not include id itself.
  std::set<ClassId> descendants(const ClassId& id) const {
    std::set<ClassId> out;
    std::vector<ClassId> stack(children(id).begin(), children(id).end());
    while (!stack.empty()) {
      ClassId c = stack.back();
      stack.pop_back();
      if (!out.insert(c).second) continue;
      for (const auto& g : children(c)) stack.push_back(g);
    }
    return out;
  }

  // Transitive closure upward. Does not include id itself.
  std::set<ClassId> ancestors(const ClassId& id) const {
    ensure_parents();
    std::set<ClassId> out;
    std::vector<ClassId> stack;
    auto push_parents = [&](const ClassId& c) {
      auto it = parents_.find(c);
      if (it == parents_.end()) return;
      for (const auto& p : it->second) stack.push_back(p);
    };
    push_parents(id);
    while (!stack.empty()) {
      ClassId c = stack.back();
      stack.pop_back();
      if (!out.insert(c).second) continue;
      push_parents(c);
    }
    return out;
  }

 private:
  void validate_edges() const {
    for (const auto& n : nodes_)
      for (const auto& c : n.child_ids)
        if (!index_.count(c))
          throw ValidationError("ontology: node " + n.id +
                                " references unknown child " + c);
    // Cycle check: iterative DFS with colors.
    enum { kWhite, kGray, kBlack };
    std::unordered_map<ClassId, int> color;
    for (const auto& n : nodes_) color[n.id] = kWhite;
    for (const auto& root : nodes_) {
      if (color[root.id] != kWhite) continue;
      std::vector<std::pair<ClassId, std::size_t>> stack{{root.id, 0}};
      color[root.id] = kGray;
      while (!stack.empty()) {
        auto& [id, next] = stack.back();
        const auto& kids = children(id);
        if (next < kids.size()) {
          const ClassId& c = kids[next++];
          if (color[c] == kGray)
            throw ValidationError("ontology: cycle through " + c);
          if (color[c] == kWhite) {
            color[c] = kGray;
            stack.emplace_back(c, 0);
          }
        } else {
          color[id] = kBlack;
          stack.pop_back();
        }
      }
    }
  }

  void ensure_parents() const {
    if (parents_built_) return;
    for (const auto& n : nodes_)
      for (const auto& c : n.child_ids) parents_[c].push_back(n.id);
    parents_built_ = true;
  }

  std::vector<OntologyNode> nodes_;
  std::unordered_map<ClassId, std::size_t> index_;
  mutable std::unordered_map<ClassId, std::vector<ClassId>> parents_;
  mutable bool parents_built_ = false;
};

// ---------------------------------------------------------------------------
// DatasetSplit

struct DatasetSplit {
  std::vector<ClipRecord> clips;
  std::vector<EventLabel> labels;
  std::vector<ClassId> class_vocabulary;  // ordered, distinct

  const ClipRecord* find_clip(const ClipId& id) const {
    for (const auto& c : clips)
      if (c.clip_id == id) return &c;
    return nullptr;
  }

  std::vector<EventLabel> labels_of(const ClipId& id) const {
    std::vector<EventLabel> out;
    for (const auto& l : labels)
      if (l.clip_id == id) out.push_back(l);
    return out;
  }

  // Distinct classes labeled in one clip, in vocabulary order.
  std::vector<ClassId> classes_of(const ClipId& id) const {
    std::set<ClassId> present;
    for (const auto& l : labels)
      if (l.clip_id == id) present.insert(l.class_id);
    std::vector<ClassId> out;
    for (const auto& c : class_vocabulary)
      if (present.count(c)) out.push_back(c);
    return out;
  }

  void validate() const {
    std::unordered_set<ClipId> clip_ids;
    for (const auto& c : clips) {
      c.validate();
      clip_ids.insert(c.clip_id);
    }
    std::unordered_set<ClassId> vocab(class_vocabulary.begin(),
                                      class_vocabulary.end());
    for (const auto& l : labels) {
      if (!clip_ids.count(l.clip_id))
        throw ValidationError("label references unknown clip " + l.clip_id);
      if (!vocab.count(l.class_id))
        throw ValidationError("label class " + l.class_id +
                              " missing from vocabulary");
      if (!(l.onset >= 0.0 && l.onset < l.offset))
        throw ValidationError("clip " + l.clip_id + " class " + l.class_id +
                              ": bad event times");
    }
  }
};

// ---------------------------------------------------------------------------
// Strong-label TSV

inline const char* kStrongTsvHeader =
    "segment_id\tstart_time_seconds\tend_time_seconds\tlabel";

namespace detail {
inline std::vector<std::string> split_tsv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return out;
}

inline double parse_seconds(const std::string& s, int line_no,
                            const char* field) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line_no) + ": field " + field +
                     " is not a number: '" + s + "'");
  }
}

inline std::string fmt_seconds(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}
}  // namespace detail

// Parses an AudioSet-strong style TSV. Rows sharing (segment_id, label,
// onset, offset) are deduplicated. Labels unknown to the ontology produce a
// warning but are kept. Clip durations are inferred as the max offset seen
// per clip, since the distribution format carries no duration column.
inline DatasetSplit load_strong_tsv(const std::string& path,
                                    const Ontology* ontology = nullptr) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open TSV: " + path);

  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kStrongTsvHeader)
    throw ParseError(path + ": line 1: bad header, expected '" +
                     std::string(kStrongTsvHeader) + "'");

  DatasetSplit split;
  std::set<std::tuple<ClipId, ClassId, double, double>> seen;
  std::map<ClipId, double> max_offset;
  std::vector<ClipId> clip_order;
  std::set<ClassId> vocab_seen;
  std::set<ClassId> warned;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = detail::split_tsv_line(line);
    if (fields.size() != 4)
      throw ParseError(path + ": line " + std::to_string(line_no) +
                       ": expected 4 tab-separated fields, got " +
                       std::to_string(fields.size()));
    EventLabel ev;
    ev.clip_id = fields[0];
    ev.onset = detail::parse_seconds(fields[1], line_no, "start_time_seconds");
    ev.offset = detail::parse_seconds(fields[2], line_no, "end_time_seconds");
    ev.class_id = fields[3];
    if (ev.clip_id.empty())
      throw ParseError(path + ": line " + std::to_string(line_no) +
                       ": empty segment_id");
    if (!(ev.onset >= 0.0) || !(ev.onset < ev.offset))
      throw ValidationError(path + ": line " + std::to_string(line_no) +
                            ": onset must satisfy 0 <= onset < offset");
    if (ontology && !ontology->contains(ev.class_id) &&
        warned.insert(ev.class_id).second)
      warn("unknown ontology id '" + ev.class_id + "' (line " +
           std::to_string(line_no) + "), keeping row");
    if (!seen.insert({ev.clip_id, ev.class_id, ev.onset, ev.offset}).second)
      continue;  // exact duplicate row
    if (!max_offset.count(ev.clip_id)) clip_order.push_back(ev.clip_id);
    max_offset[ev.clip_id] = std::max(max_offset[ev.clip_id], ev.offset);
    if (vocab_seen.insert(ev.class_id).second)
      split.class_vocabulary.push_back(ev.class_id);
    split.labels.push_back(std::move(ev));
  }
  for (const auto& id : clip_order)
    split.clips.push_back(ClipRecord{id, max_offset[id], {}, {}});
  return split;
}

inline void write_strong_tsv(const std::vector<EventLabel>& labels,
                             const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write TSV: " + path);
  out << kStrongTsvHeader << "\n";
  for (const auto& l : labels)
    out << l.clip_id << '\t' << detail::fmt_seconds(l.onset) << '\t'
        << detail::fmt_seconds(l.offset) << '\t' << l.class_id << "\n";
  if (!out) throw IoError("failed writing TSV: " + path);
}

// ---------------------------------------------------------------------------
// Rasterization

// Frame t (center (t + 0.5) / frame_rate) is 1 for a class iff the center
// lies inside any [onset, offset) event of that class. Events beyond
// n_frames are truncated implicitly.
inline Eigen::MatrixXf rasterize_labels(const std::vector<EventLabel>& labels,
                                        const std::vector<ClassId>& classes,
                                        int n_frames, double frame_rate) {
  if (frame_rate <= 0.0) throw ValidationError("rasterize: frame_rate <= 0");
  Eigen::MatrixXf raster =
      Eigen::MatrixXf::Zero(static_cast<Eigen::Index>(classes.size()),
                            n_frames);
  std::unordered_map<ClassId, int> row;
  for (std::size_t i = 0; i < classes.size(); ++i)
    row[classes[i]] = static_cast<int>(i);
  for (const auto& l : labels) {
    auto it = row.find(l.class_id);
    if (it == row.end()) continue;
    // Frame centers in [onset, offset): t such that onset <= (t+0.5)/fr < offset.
    int t0 = static_cast<int>(std::ceil(l.onset * frame_rate - 0.5));
    int t1 = static_cast<int>(std::ceil(l.offset * frame_rate - 0.5));
    t0 = std::max(t0, 0);
    t1 = std::min(t1, n_frames);
    for (int t = t0; t < t1; ++t) {
      const double center = (t + 0.5) / frame_rate;
      if (center >= l.onset && center < l.offset) raster(it->second, t) = 1.0f;
    }
  }
  return raster;
}

// ---------------------------------------------------------------------------
// WAV (16-bit PCM mono, 16 kHz only)

inline void write_wav(const std::string& path,
                      const std::vector<float>& samples,
                      int sample_rate = kSampleRate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write wav: " + path);
  auto w16 = [&](std::uint16_t v) { out.write(reinterpret_cast<char*>(&v), 2); };
  auto w32 = [&](std::uint32_t v) { out.write(reinterpret_cast<char*>(&v), 4); };
  const std::uint32_t data_bytes =
      static_cast<std::uint32_t>(samples.size() * 2);
  out.write("RIFF", 4);
  w32(36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  w32(16);
  w16(1);  // PCM
  w16(1);  // mono
  w32(static_cast<std::uint32_t>(sample_rate));
  w32(static_cast<std::uint32_t>(sample_rate * 2));
  w16(2);
  w16(16);
  out.write("data", 4);
  w32(data_bytes);
  for (float s : samples) {
    const float c = std::clamp(s, -1.0f, 1.0f);
    const auto q = std::clamp<long>(std::lrint(c * 32768.0f), -32768, 32767);
    const auto v = static_cast<std::int16_t>(q);
    out.write(reinterpret_cast<const char*>(&v), 2);
  }
  if (!out) throw IoError("failed writing wav: " + path);
}

inline std::vector<float> read_wav(const std::string& path,
                                   int expect_rate = kSampleRate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open wav: " + path);
  auto r16 = [&]() {
    std::uint16_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 2);
    return v;
  };
  auto r32 = [&]() {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  char tag[5] = {0};
  in.read(tag, 4);
  if (std::string(tag, 4) != "RIFF") throw ParseError(path + ": not RIFF");
  r32();
  in.read(tag, 4);
  if (std::string(tag, 4) != "WAVE") throw ParseError(path + ": not WAVE");
  std::uint16_t channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::vector<float> samples;
  while (in.read(tag, 4)) {
    const std::uint32_t chunk = r32();
    const std::string name(tag, 4);
    if (name == "fmt ") {
      const std::uint16_t fmt = r16();
      channels = r16();
      rate = r32();
      r32();
      r16();
      bits = r16();
      if (chunk > 16) in.ignore(chunk - 16);
      if (fmt != 1) throw ParseError(path + ": only PCM wav supported");
    } else if (name == "data") {
      if (channels != 1 || bits != 16)
        throw ValidationError(path + ": expected 16-bit mono PCM");
      if (static_cast<int>(rate) != expect_rate)
        throw ValidationError(path + ": expected " +
                              std::to_string(expect_rate) + " Hz, got " +
                              std::to_string(rate));
      const std::size_t n = chunk / 2;
      samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::int16_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 2);
        samples[i] = static_cast<float>(v) / 32768.0f;
      }
      return samples;
    } else {
      in.ignore(chunk + (chunk & 1));
    }
  }
  throw ParseError(path + ": no data chunk");
}

// ---------------------------------------------------------------------------
// Synthetic dataset

// Each class maps to a fixed analytic signature so ground truth is known
// exactly and tests are deterministic.
struct SyntheticSignature {
  enum Kind { kTone, kBandNoise, kAmTone, kHarmonic } kind;
  double f0 = 0.0;      // Hz (tone / AM carrier / harmonic fundamental)
  double f1 = 0.0;      // Hz (band upper edge for noise)
  double mod_hz = 0.0;  // AM rate
  const char* name;
};

inline const std::vector<SyntheticSignature>& synthetic_signatures() {
  static const std::vector<SyntheticSignature> kTable = {
      {SyntheticSignature::kTone, 440.0, 0, 0, "tone_440hz"},
      {SyntheticSignature::kBandNoise, 2000.0, 3000.0, 0, "noise_2to3khz"},
      {SyntheticSignature::kTone, 1760.0, 0, 0, "tone_1760hz"},
      {SyntheticSignature::kAmTone, 600.0, 0, 4.0, "amtone_600hz_4hz"},
      {SyntheticSignature::kHarmonic, 300.0, 0, 0, "harmonic_300hz"},
      {SyntheticSignature::kBandNoise, 4500.0, 6000.0, 0, "noise_4p5to6khz"},
      {SyntheticSignature::kTone, 880.0, 0, 0, "tone_880hz"},
      {SyntheticSignature::kAmTone, 1200.0, 0, 8.0, "amtone_1200hz_8hz"},
      {SyntheticSignature::kHarmonic, 500.0, 0, 0, "harmonic_500hz"},
      {SyntheticSignature::kBandNoise, 500.0, 900.0, 0, "noise_500to900hz"},
      {SyntheticSignature::kTone, 3520.0, 0, 0, "tone_3520hz"},
      {SyntheticSignature::kTone, 7000.0, 0, 0, "tone_7000hz"},
  };
  return kTable;
}

inline ClassId synthetic_class_id(int k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "/synth/%02d", k);
  return buf;
}

inline Ontology synthetic_ontology(int n_classes) {
  std::vector<OntologyNode> nodes;
  for (int k = 0; k < n_classes; ++k)
    nodes.push_back(
        {synthetic_class_id(k), synthetic_signatures()[k].name, {}});
  return Ontology(std::move(nodes));
}

namespace detail {
inline void render_event(std::vector<float>& buf, const SyntheticSignature& sig,
                         double onset, double offset, Rng& rng) {
  const int a = static_cast<int>(std::lrint(onset * kSampleRate));
  const int b = std::min(static_cast<int>(std::lrint(offset * kSampleRate)),
                         static_cast<int>(buf.size()));
  const double amp = 0.25;
  const double phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  const int ramp = kSampleRate / 100;  // 10 ms fade to avoid clicks
  for (int i = a; i < b; ++i) {
    const double t = static_cast<double>(i) / kSampleRate;
    double v = 0.0;
    switch (sig.kind) {
      case SyntheticSignature::kTone:
        v = std::sin(2 * 3.14159265358979323846 * sig.f0 * t + phase);
        break;
      case SyntheticSignature::kBandNoise: {
        // Sum of a few incommensurate sines inside the band; spectrally flat
        // enough for the purpose and fully deterministic.
        v = 0.0;
        for (int k = 0; k < 8; ++k) {
          const double f = sig.f0 + (sig.f1 - sig.f0) * (k + 0.5) / 8.0;
          v += std::sin(2 * 3.14159265358979323846 * f * t +
                        phase * (k + 1) * 0.7312);
        }
        v *= 0.35;
        break;
      }
      case SyntheticSignature::kAmTone:
        v = std::sin(2 * 3.14159265358979323846 * sig.f0 * t + phase) *
            (0.55 + 0.45 * std::sin(2 * 3.14159265358979323846 * sig.mod_hz * t));
        break;
      case SyntheticSignature::kHarmonic:
        for (int h = 1; h <= 3; ++h)
          v += std::sin(2 * 3.14159265358979323846 * sig.f0 * h * t +
                        phase * h) /
               h;
        v *= 0.6;
        break;
    }
    double g = 1.0;
    if (i - a < ramp) g = static_cast<double>(i - a) / ramp;
    if (b - i < ramp) g = std::min(g, static_cast<double>(b - i) / ramp);
    buf[i] += static_cast<float>(amp * g * v);
  }
}
}  // namespace detail

// Generates n_clips clips of clip_dur seconds over n_classes synthetic
// classes. Each clip holds 1-4 events (>= 0.25 s) of uniformly drawn classes
// over a low noise floor; same-class overlaps are re-drawn so every label
// matches exactly one rendered segment. Byte-deterministic per seed.
inline DatasetSplit generate_synthetic_dataset(int n_classes, int n_clips,
                                               double clip_dur,
                                               std::uint64_t seed) {
  if (n_classes < 2) throw ValidationError("synthetic: n_classes must be >= 2");
  if (clip_dur < 2.0) throw ValidationError("synthetic: clip_dur must be >= 2 s");
  if (n_classes > static_cast<int>(synthetic_signatures().size()))
    throw ValidationError(
        "synthetic: only " +
        std::to_string(synthetic_signatures().size()) +
        " distinct class generators are available, requested " +
        std::to_string(n_classes));

  DatasetSplit split;
  for (int k = 0; k < n_classes; ++k)
    split.class_vocabulary.push_back(synthetic_class_id(k));

  const int n_samples = static_cast<int>(std::lrint(clip_dur * kSampleRate));
  for (int c = 0; c < n_clips; ++c) {
    Rng rng = derive_rng(seed, "synth_clip", static_cast<std::uint64_t>(c));
    char name[32];
    std::snprintf(name, sizeof(name), "synth_%05d", c);
    ClipRecord clip{name, clip_dur, std::vector<float>(n_samples, 0.0f), {}};

    // Noise floor.
    for (int i = 0; i < n_samples; ++i)
      clip.samples[i] = static_cast<float>(0.002 * rng.normal());

    const int n_events = static_cast<int>(rng.uniform_int(1, 4));
    std::vector<EventLabel> clip_events;
    for (int e = 0; e < n_events; ++e) {
      const int k = static_cast<int>(rng.uniform_int(0, n_classes - 1));
      double len = rng.uniform(0.25, std::min(3.0, clip_dur - 0.5));
      double onset = 0.0, offset = 0.0;
      bool placed = false;
      for (int attempt = 0; attempt < 16 && !placed; ++attempt) {
        onset = rng.uniform(0.0, clip_dur - len);
        offset = onset + len;
        placed = true;
        for (const auto& prev : clip_events)
          if (prev.class_id == synthetic_class_id(k) &&
              prev.onset < offset && onset < prev.offset)
            placed = false;  // same-class overlap: re-draw position
      }
      if (!placed) continue;
      // Quantize to the 10 ms frontend hop so label boundaries are crisp.
      onset = std::round(onset * 100.0) / 100.0;
      offset = std::round(offset * 100.0) / 100.0;
      if (offset - onset < 0.25) offset = onset + 0.25;
      if (offset > clip_dur) {
        offset = clip_dur;
        onset = std::min(onset, offset - 0.25);
      }
      detail::render_event(clip.samples, synthetic_signatures()[k], onset,
                           offset, rng);
      clip_events.push_back(
          EventLabel{clip.clip_id, synthetic_class_id(k), onset, offset});
    }
    for (auto& ev : clip_events) split.labels.push_back(std::move(ev));
    split.clips.push_back(std::move(clip));
  }
  split.validate();
  return split;
}

}  // namespace ovsed

#endif  // OVSED_DATAIO_HPP_

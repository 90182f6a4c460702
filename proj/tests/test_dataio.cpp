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

#include "ovsed/dataio.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <catch2/catch_amalgamated.hpp>

using namespace ovsed;

namespace {
std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("strong tsv round trip") {
  std::vector<EventLabel> labels = {
      {"clip_a", "/m/01", 0.5, 2.0},
      {"clip_a", "/m/02", 1.25, 3.0},
      {"clip_b", "/m/01", 0.0, 10.0},
  };
  const std::string path = temp_path("ovsed_test_labels.tsv");
  write_strong_tsv(labels, path);

  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == kStrongTsvHeader);

  DatasetSplit split = load_strong_tsv(path);
  REQUIRE(split.labels.size() == 3);
  CHECK(split.labels[0].clip_id == "clip_a");
  CHECK(split.labels[0].class_id == "/m/01");
  CHECK(split.labels[0].onset == Catch::Approx(0.5));
  CHECK(split.labels[1].offset == Catch::Approx(3.0));
  CHECK(split.class_vocabulary == std::vector<ClassId>{"/m/01", "/m/02"});
  REQUIRE(split.clips.size() == 2);
  CHECK(split.find_clip("clip_a")->duration == Catch::Approx(3.0));
  std::remove(path.c_str());
}

TEST_CASE("strong tsv rejects malformed rows") {
  const std::string path = temp_path("ovsed_test_bad.tsv");
  {
    std::ofstream out(path);
    out << kStrongTsvHeader << "\n";
    out << "clip\t1.0\t0.5\t/m/01\n";  // offset before onset
  }
  CHECK_THROWS_AS(load_strong_tsv(path), ValidationError);
  {
    std::ofstream out(path);
    out << "segment_id\tstart\tend\tlabel\n";
  }
  CHECK_THROWS_AS(load_strong_tsv(path), ParseError);
  {
    std::ofstream out(path);
    out << kStrongTsvHeader << "\n";
    out << "clip\tabc\t0.5\t/m/01\n";
  }
  CHECK_THROWS_AS(load_strong_tsv(path), ParseError);
  std::remove(path.c_str());
}

TEST_CASE("duplicate rows are dropped") {
  const std::string path = temp_path("ovsed_test_dup.tsv");
  {
    std::ofstream out(path);
    out << kStrongTsvHeader << "\n";
    out << "clip\t0.5\t1.0\t/m/01\n";
    out << "clip\t0.5\t1.0\t/m/01\n";
  }
  DatasetSplit split = load_strong_tsv(path);
  CHECK(split.labels.size() == 1);
  std::remove(path.c_str());
}

TEST_CASE("ontology json round trip and traversal") {
  Ontology ont({{"/m/root", "Root", {"/m/a", "/m/b"}},
                {"/m/a", "A", {"/m/a1"}},
                {"/m/a1", "A one", {}},
                {"/m/b", "B", {}}});
  const std::string path = temp_path("ovsed_test_ont.json");
  {
    std::ofstream out(path);
    out << ont.to_json().dump(2);
  }
  Ontology back = Ontology::from_json_file(path);
  CHECK(back.contains("/m/a1"));
  CHECK(back.display_name("/m/a1") == "A one");
  CHECK(back.display_name("/m/nope") == "/m/nope");

  const auto desc = back.descendants("/m/root");
  CHECK(desc == std::set<ClassId>{"/m/a", "/m/a1", "/m/b"});
  const auto anc = back.ancestors("/m/a1");
  CHECK(anc == std::set<ClassId>{"/m/a", "/m/root"});
  std::remove(path.c_str());
}

TEST_CASE("rasterization uses frame centers") {
  std::vector<EventLabel> labels = {{"c", "/m/01", 0.10, 0.30}};
  // 25 Hz frames: centers 0.02, 0.06, ..., frame t covers center (t+.5)/25.
  Eigen::MatrixXf r = rasterize_labels(labels, {"/m/01"}, 10, 25.0);
  REQUIRE(r.rows() == 1);
  REQUIRE(r.cols() == 10);
  // centers: t=2 -> 0.10 in [0.10,0.30) yes; t=7 -> 0.30 not (< offset fails)
  for (int t = 0; t < 10; ++t) {
    const double center = (t + 0.5) / 25.0;
    const bool want = center >= 0.10 && center < 0.30;
    CHECK(r(0, t) == (want ? 1.0f : 0.0f));
  }
}

TEST_CASE("wav io round trips 16-bit mono") {
  std::vector<float> samples(1600);
  Rng rng(7);
  for (auto& s : samples) s = static_cast<float>(rng.uniform(-0.9, 0.9));
  const std::string path = temp_path("ovsed_test.wav");
  write_wav(path, samples);
  const auto back = read_wav(path);
  REQUIRE(back.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    CHECK(std::abs(back[i] - samples[i]) <= 0.5f / 32768.0f + 1e-7f);
  std::remove(path.c_str());
}

TEST_CASE("synthetic dataset is deterministic and valid") {
  DatasetSplit a = generate_synthetic_dataset(5, 8, 10.0, 42);
  DatasetSplit b = generate_synthetic_dataset(5, 8, 10.0, 42);
  DatasetSplit c = generate_synthetic_dataset(5, 8, 10.0, 43);
  a.validate();
  REQUIRE(a.clips.size() == 8);
  CHECK(a.class_vocabulary.size() == 5);
  REQUIRE(b.clips.size() == 8);
  CHECK(a.labels.size() == b.labels.size());
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    CHECK(a.labels[i].clip_id == b.labels[i].clip_id);
    CHECK(a.labels[i].onset == b.labels[i].onset);
  }
  CHECK(a.clips[0].samples == b.clips[0].samples);
  CHECK(a.clips[0].samples != c.clips[0].samples);

  for (const auto& clip : a.clips) {
    const auto evs = a.labels_of(clip.clip_id);
    CHECK(evs.size() >= 1);
    CHECK(evs.size() <= 4);
    for (const auto& ev : evs) {
      CHECK(ev.offset - ev.onset >= 0.25);
      CHECK(ev.offset <= clip.duration + 1e-9);
      // 10 ms grid
      CHECK(std::abs(ev.onset * 100 - std::round(ev.onset * 100)) < 1e-6);
    }
  }
}

TEST_CASE("synthetic events carry energy where labeled") {
  DatasetSplit d = generate_synthetic_dataset(3, 4, 10.0, 1);
  const ClipRecord& clip = d.clips[0];
  const auto evs = d.labels_of(clip.clip_id);
  REQUIRE(!evs.empty());
  auto rms = [&](double t0, double t1) {
    const int a = static_cast<int>(t0 * kSampleRate);
    const int b = std::min(static_cast<int>(t1 * kSampleRate),
                           static_cast<int>(clip.samples.size()));
    double e = 0;
    for (int i = a; i < b; ++i)
      e += static_cast<double>(clip.samples[i]) * clip.samples[i];
    return std::sqrt(e / std::max(1, b - a));
  };
  // Mid-event energy well above the noise floor.
  const auto& ev = evs[0];
  const double mid = rms((ev.onset + ev.offset) / 2 - 0.05,
                         (ev.onset + ev.offset) / 2 + 0.05);
  CHECK(mid > 0.02);
}

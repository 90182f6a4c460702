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

// Command-line entry point. Subcommands: dataset synth, relations build,
// embed prompts, train, infer, eval, zeroshot, fewshot. Exit code 0 on
// success, 2 on config or input validation failures, 1 otherwise.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ovsed/dataio.hpp"
#include "ovsed/llm_client.hpp"
#include "ovsed/model.hpp"
#include "ovsed/prompt.hpp"
#include "ovsed/psds.hpp"
#include "ovsed/relations.hpp"
#include "ovsed/runconfig.hpp"
#include "ovsed/trainer.hpp"

namespace fs = std::filesystem;
using namespace ovsed;

namespace {

// ---------------------------------------------------------------------------
// Dataset directory layout:
//   <dir>/meta.json                {"sample_rate":..., "vocabulary":[...]}
//   <dir>/ontology.json
//   <dir>/{train,eval}/labels.tsv
//   <dir>/{train,eval}/clips/<clip_id>.wav

void save_split(const std::string& dir, const DatasetSplit& split) {
  fs::create_directories(dir + "/clips");
  write_strong_tsv(split.labels, dir + "/labels.tsv");
  for (const ClipRecord& c : split.clips)
    write_wav(dir + "/clips/" + c.clip_id + ".wav", c.samples);
}

DatasetSplit load_split(const std::string& dir,
                        const std::vector<ClassId>& vocabulary) {
  DatasetSplit split = load_strong_tsv(dir + "/labels.tsv");
  const std::set<ClassId> vocab(vocabulary.begin(), vocabulary.end());
  std::set<ClassId> missing;
  for (const EventLabel& l : split.labels)
    if (!vocab.count(l.class_id)) missing.insert(l.class_id);
  if (!missing.empty()) {
    std::string list;
    for (const ClassId& c : missing) list += (list.empty() ? "" : ", ") + c;
    throw ValidationError(dir + ": truth classes missing from the dataset's "
                          "vocabulary: " + list);
  }
  split.class_vocabulary = vocabulary;
  for (ClipRecord& c : split.clips) {
    c.audio_path = dir + "/clips/" + c.clip_id + ".wav";
    c.samples = read_wav(c.audio_path);
    c.duration = static_cast<double>(c.samples.size()) / kSampleRate;
  }
  split.validate();
  return split;
}

struct DatasetDir {
  DatasetSplit train;
  DatasetSplit eval_split;
  Ontology ontology;
  std::vector<ClassId> vocabulary;
};

void save_dataset_dir(const std::string& dir, const DatasetSplit& train,
                      const DatasetSplit& eval_split, const Ontology& ont) {
  fs::create_directories(dir);
  save_split(dir + "/train", train);
  save_split(dir + "/eval", eval_split);
  std::ofstream oj(dir + "/ontology.json");
  if (!oj) throw IoError("cannot write " + dir + "/ontology.json");
  oj << ont.to_json().dump(2) << "\n";
  nlohmann::json meta = {{"sample_rate", kSampleRate},
                         {"vocabulary", train.class_vocabulary}};
  std::ofstream om(dir + "/meta.json");
  if (!om) throw IoError("cannot write " + dir + "/meta.json");
  om << meta.dump(2) << "\n";
}

DatasetDir load_dataset_dir(const std::string& dir) {
  std::ifstream im(dir + "/meta.json");
  if (!im) throw IoError("cannot open " + dir + "/meta.json");
  nlohmann::json meta;
  try {
    im >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(dir + "/meta.json: " + e.what());
  }
  DatasetDir d;
  d.vocabulary = meta.at("vocabulary").get<std::vector<std::string>>();
  d.ontology = Ontology::from_json_file(dir + "/ontology.json");
  d.train = load_split(dir + "/train", d.vocabulary);
  d.eval_split = load_split(dir + "/eval", d.vocabulary);
  return d;
}

// ---------------------------------------------------------------------------
// Shared loading for the training-family commands.

EmbeddingStore load_store(const std::string& path, int prompt_dim) {
  if (path.empty()) {
    std::cerr << "note: no embedding file configured; using the deterministic "
                 "stub embedder\n";
    return EmbeddingStore(prompt_dim);
  }
  EmbeddingStore store = import_embeddings(path);
  if (store.dim() != prompt_dim)
    throw ValidationError("embeddings: dimension " +
                          std::to_string(store.dim()) +
                          " != model prompt_dim " + std::to_string(prompt_dim));
  return store;
}

struct RunInputs {
  DatasetDir dd;
  TrainerData data;
  EmbeddingStore store;
  RelationTable table;
};

RunInputs load_run_inputs(const RunConfig& cfg) {
  RunInputs in;
  in.dd = load_dataset_dir(cfg.paths.dataset);
  in.data = prepare_trainer_data(in.dd.train, in.dd.eval_split, &in.dd.ontology);
  in.store = load_store(cfg.paths.embeddings, cfg.model.prompt_dim);
  if (cfg.paths.relations.empty()) {
    std::cerr << "note: no relation table configured; deriving one from the "
                 "dataset ontology\n";
    in.table = build_relations_ontology(in.data.vocabulary, in.dd.ontology);
  } else {
    in.table = RelationTable::load(cfg.paths.relations);
  }
  return in;
}

std::string join_ids(const std::vector<ClassId>& ids) {
  std::string out;
  for (const ClassId& c : ids) out += (out.empty() ? "" : ", ") + c;
  return out;
}

nlohmann::json per_class_json(const PsdsResult& r) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [c, auc] : r.per_class_auc) j[c] = auc;
  return j;
}

// ---------------------------------------------------------------------------
// Subcommand bodies.

int cmd_dataset_synth(const std::string& out, int classes, int n_train,
                      int n_eval, double duration, std::uint64_t seed) {
  const DatasetSplit train = generate_synthetic_dataset(
      classes, n_train, duration, derive_seed(seed, "train_split"));
  const DatasetSplit eval_split = generate_synthetic_dataset(
      classes, n_eval, duration, derive_seed(seed, "eval_split"));
  save_dataset_dir(out, train, eval_split, synthetic_ontology(classes));
  std::cout << "wrote " << out << ": " << classes << " classes, "
            << train.clips.size() << " train / " << eval_split.clips.size()
            << " eval clips of " << duration << " s\n";
  return 0;
}

int cmd_relations_build(const std::string& dataset, const std::string& out,
                        const std::string& mode, const std::string& model,
                        const std::string& cache_dir) {
  const DatasetDir dd = load_dataset_dir(dataset);
  RelationTable table;
  if (mode == "ontology") {
    table = build_relations_ontology(dd.vocabulary, dd.ontology);
  } else if (mode == "llm") {
    HttpChatClient client = HttpChatClient::from_env(model);
    LlmBuildOptions opts;
    opts.cache_dir = cache_dir;
    LlmBuildStats stats;
    table = build_relations_llm(dd.vocabulary, dd.ontology, client, opts,
                                &stats);
    std::cerr << "llm: " << stats.requests << " requests, " << stats.cache_hits
              << " cache hits, " << stats.unresolved.size() << " unresolved\n";
  } else {
    throw ValidationError("relations build: --mode must be llm or ontology");
  }
  table.save(out);
  std::cout << "wrote " << out << ": " << table.entries.size()
            << " classes\n";
  return 0;
}

int cmd_embed_prompts(const std::string& dataset, const std::string& out,
                      int dim, const std::string& model) {
  const DatasetDir dd = load_dataset_dir(dataset);
  EmbeddingStore store(dim);
  const bool remote = !detail::env_or("EMBED_API_BASE", "").empty();
  if (remote) {
    HttpEmbedClient client = HttpEmbedClient::from_env(model);
    std::vector<std::string> texts;
    for (const ClassId& c : dd.vocabulary)
      texts.push_back(prompt_template(dd.ontology.display_name(c)));
    const auto vecs = client.embed(texts);
    if (vecs.size() != dd.vocabulary.size())
      throw IoError("embed: service returned " + std::to_string(vecs.size()) +
                    " vectors for " + std::to_string(dd.vocabulary.size()) +
                    " prompts");
    for (std::size_t i = 0; i < vecs.size(); ++i) {
      if (static_cast<int>(vecs[i].size()) != dim)
        throw IoError("embed: service returned dimension " +
                      std::to_string(vecs[i].size()) + ", expected " +
                      std::to_string(dim));
      Eigen::VectorXf v(dim);
      for (int k = 0; k < dim; ++k) v(k) = vecs[i][static_cast<std::size_t>(k)];
      store.insert(dd.ontology.display_name(dd.vocabulary[i]), v);
    }
  } else {
    std::cerr << "note: EMBED_API_BASE not set; writing deterministic stub "
                 "embeddings\n";
    for (const ClassId& c : dd.vocabulary) {
      const std::string name = dd.ontology.display_name(c);
      store.insert(name, stub_embedding(name, dim));
    }
  }
  export_embeddings(store, out);
  std::cout << "wrote " << out << ": " << store.size() << " embeddings of dim "
            << dim << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  cfg.validate_paths({"dataset", "run_dir"});
  RunInputs in = load_run_inputs(cfg);
  fs::create_directories(cfg.paths.run_dir);
  cfg.save(cfg.paths.run_dir + "/config.json");

  Network<float> net =
      Network<float>::init(cfg.model, derive_seed(cfg.seed, "model_init"));
  const TrainResult res = train(net, in.data, cfg.train, in.table, in.store,
                                cfg.eval, cfg.paths.run_dir);
  if (res.best_epoch >= 0)
    std::cout << "best epoch " << res.best_epoch << " (metric "
              << res.best_metric << ")\n";
  std::cout << "run dir: " << cfg.paths.run_dir << "\n";
  return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& audio,
              const std::vector<std::string>& queries, double threshold,
              const std::string& out_path, const std::string& emb_path,
              int median_window) {
  Network<float> net = load_checkpoint<float>(ckpt);
  EmbeddingStore store(net.cfg.prompt_dim);
  if (!emb_path.empty()) store = load_store(emb_path, net.cfg.prompt_dim);

  std::vector<ag::Mat<float>> prompts;
  for (const std::string& q : queries) {
    if (!store.contains(q))
      std::cerr << "note: query '" << q
                << "' not in the embedding store; using the stub embedder\n";
    prompts.push_back(store.embed(q).vector.transpose());
  }

  std::vector<fs::path> wavs;
  if (fs::is_directory(audio)) {
    for (const auto& e : fs::directory_iterator(audio))
      if (e.path().extension() == ".wav") wavs.push_back(e.path());
    std::sort(wavs.begin(), wavs.end());
  } else {
    wavs.push_back(audio);
  }
  if (wavs.empty())
    throw ValidationError("infer: no .wav files under " + audio);

  std::ofstream out(out_path);
  if (!out) throw IoError("cannot write " + out_path);
  out << "clip\tquery\tonset\toffset\tpeak_score\n";

  MelExtractor ex;
  const double rate = 100.0 / net.cfg.patch_stride_t;
  std::size_t failures = 0, n_rows = 0;
  char buf[96];
  for (const fs::path& p : wavs) {
    const std::string clip = p.stem().string();
    Eigen::MatrixXf spec;
    try {
      spec = ex.melspec(read_wav(p.string()), clip).frames;
    } catch (const std::exception& e) {
      std::cerr << "error: " << p.string() << ": " << e.what() << "\n";
      ++failures;
      continue;
    }
    const auto curves = net.infer_multi(spec, prompts);
    std::cerr << clip << ": 1 encoder call, " << (queries.size() - 1)
              << " cache hits\n";
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
      const auto filtered = median_filter(curves[qi], median_window);
      for (const auto& [onset, offset] : decode_events(filtered, threshold,
                                                       rate)) {
        float peak = 0.0f;
        const auto a = static_cast<std::size_t>(std::lround(onset * rate));
        const auto b = static_cast<std::size_t>(std::lround(offset * rate));
        for (std::size_t t = a; t < b && t < filtered.size(); ++t)
          peak = std::max(peak, filtered[t]);
        std::snprintf(buf, sizeof(buf), "%.6f\t%.6f\t%.6f", onset, offset,
                      static_cast<double>(peak));
        out << clip << "\t" << queries[qi] << "\t" << buf << "\n";
        ++n_rows;
      }
    }
  }
  if (failures == wavs.size())
    throw IoError("infer: all " + std::to_string(failures) +
                  " audio inputs failed");
  std::cout << "wrote " << n_rows << " detections to " << out_path << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& dataset,
             const std::string& split_name, const std::string& mode,
             const std::string& emb_path, const std::string& out_path,
             const PsdsParams& params) {
  Network<float> net = load_checkpoint<float>(ckpt);
  const DatasetDir dd = load_dataset_dir(dataset);
  const DatasetSplit& split =
      split_name == "train" ? dd.train : dd.eval_split;
  MelExtractor ex;
  const std::vector<FeatureClip> clips = extract_features(split, ex);
  std::map<ClassId, std::string> names;
  for (const ClassId& c : dd.vocabulary)
    names[c] = dd.ontology.display_name(c);
  const EmbeddingStore store = load_store(emb_path, net.cfg.prompt_dim);

  const PsdsResult r =
      mode == "A" ? eval_psds_all(net, clips, dd.vocabulary, store, names,
                                  params)
                  : eval_psds_target(net, clips, dd.vocabulary, store, names,
                                     params);
  std::cout << "PSDS1_" << mode << " = " << r.psds << "\n";
  if (!out_path.empty()) {
    std::ofstream os(out_path);
    if (!os) throw IoError("cannot write " + out_path);
    nlohmann::json rep = {{"mode", mode},
                          {"psds1", r.psds},
                          {"per_class_auc", per_class_json(r)}};
    os << rep.dump(2) << "\n";
  }
  return 0;
}

int cmd_zeroshot(const RunConfig& cfg, int shots, std::string out_path) {
  cfg.validate_paths({"dataset", "run_dir"});
  RunInputs in = load_run_inputs(cfg);
  const std::string& run_dir = cfg.paths.run_dir;
  fs::create_directories(run_dir);
  cfg.save(run_dir + "/config.json");
  if (out_path.empty()) out_path = run_dir + "/report.json";

  // Full-vocabulary reference model: the denominator of every R-PSDS1.
  Network<float> full =
      Network<float>::init(cfg.model, derive_seed(cfg.seed, "model_init"));
  train(full, in.data, cfg.train, in.table, in.store, cfg.eval,
        run_dir + "/full");
  const double full_a = eval_psds_all(full, in.data.val, in.data.vocabulary,
                                      in.store, in.data.names, cfg.eval)
                            .psds;
  const double full_t = eval_psds_target(full, in.data.val, in.data.vocabulary,
                                         in.store, in.data.names, cfg.eval)
                            .psds;

  auto folds = run_exclusion_folds(in.data, cfg.k_out, cfg.n_folds, cfg.model,
                                   cfg.train, in.table, in.store, cfg.eval,
                                   run_dir, &in.dd.ontology);

  nlohmann::json jfolds = nlohmann::json::array();
  double zs_r_sum = 0, fs_r_sum = 0, zs_sum = 0, fs_sum = 0;
  int r_count = 0;
  for (FoldResult& fr : folds) {
    const double full_excl =
        eval_psds_target(full, in.data.val, fr.excluded, in.store,
                         in.data.names, cfg.eval)
            .psds;
    const double zs = eval_psds_target(fr.net, in.data.val, fr.excluded,
                                       in.store, in.data.names, cfg.eval)
                          .psds;
    nlohmann::json entry = {{"fold", fr.fold_index},
                            {"excluded", fr.excluded},
                            {"full_excluded_psds1_t", full_excl}};
    const auto zr = retained_ratio(zs, full_excl);
    entry["zero_shot"] = {{"excluded_psds1_t", zs},
                          {"r_psds1", zr ? nlohmann::json(*zr)
                                         : nlohmann::json()}};
    zs_sum += zs;
    if (shots > 0) {
      FewShotConfig fs_cfg = cfg.fewshot;
      fs_cfg.shots = shots;
      finetune_fewshot(fr.net, in.data, fr.excluded, fs_cfg, cfg.train,
                       in.table, in.store, cfg.eval, &in.dd.ontology);
      const double fsv = eval_psds_target(fr.net, in.data.val, fr.excluded,
                                          in.store, in.data.names, cfg.eval)
                             .psds;
      const auto fsr = retained_ratio(fsv, full_excl);
      entry["few_shot"] = {{"shots", shots},
                           {"excluded_psds1_t", fsv},
                           {"r_psds1", fsr ? nlohmann::json(*fsr)
                                           : nlohmann::json()}};
      fs_sum += fsv;
      if (zr && fsr) {
        zs_r_sum += *zr;
        fs_r_sum += *fsr;
        ++r_count;
      }
    } else if (zr) {
      zs_r_sum += *zr;
      ++r_count;
    }
    jfolds.push_back(std::move(entry));
  }

  const double nf = static_cast<double>(folds.size());
  nlohmann::json rows = nlohmann::json::array();
  rows.push_back({{"k_out", cfg.k_out},
                  {"setting", "zero-shot"},
                  {"mean_excluded_psds1_t", zs_sum / nf},
                  {"mean_r_psds1", r_count ? nlohmann::json(zs_r_sum / r_count)
                                           : nlohmann::json()}});
  if (shots > 0)
    rows.push_back({{"k_out", cfg.k_out},
                    {"setting", std::to_string(shots) + "-shot"},
                    {"mean_excluded_psds1_t", fs_sum / nf},
                    {"mean_r_psds1",
                     r_count ? nlohmann::json(fs_r_sum / r_count)
                             : nlohmann::json()}});

  nlohmann::json report = {{"k_out", cfg.k_out},
                           {"n_folds", cfg.n_folds},
                           {"shots", shots},
                           {"full", {{"psds1_a", full_a}, {"psds1_t", full_t}}},
                           {"folds", jfolds},
                           {"rows", rows}};
  std::ofstream os(out_path);
  if (!os) throw IoError("cannot write " + out_path);
  os << report.dump(2) << "\n";
  std::cout << "full PSDS1_A " << full_a << ", PSDS1_T " << full_t << "\n";
  for (const auto& row : rows)
    std::cout << row.at("setting").get<std::string>()
              << " mean excluded PSDS1_T "
              << row.at("mean_excluded_psds1_t").get<double>() << "\n";
  std::cout << "report: " << out_path << "\n";
  return 0;
}

int cmd_fewshot(const RunConfig& cfg, const std::string& ckpt,
                const std::vector<std::string>& excluded, int shots,
                const std::string& out_ckpt) {
  cfg.validate_paths({"dataset"});
  RunInputs in = load_run_inputs(cfg);
  Network<float> net = load_checkpoint<float>(ckpt);
  for (const ClassId& c : excluded)
    if (std::find(in.data.vocabulary.begin(), in.data.vocabulary.end(), c) ==
        in.data.vocabulary.end())
      throw ValidationError("fewshot: class '" + c +
                            "' is not in the dataset vocabulary");

  const double before = eval_psds_target(net, in.data.val, excluded, in.store,
                                         in.data.names, cfg.eval)
                            .psds;
  FewShotConfig fs_cfg = cfg.fewshot;
  if (shots > 0) fs_cfg.shots = shots;
  finetune_fewshot(net, in.data, excluded, fs_cfg, cfg.train, in.table,
                   in.store, cfg.eval, &in.dd.ontology);
  const double after = eval_psds_target(net, in.data.val, excluded, in.store,
                                        in.data.names, cfg.eval)
                           .psds;
  std::cout << "excluded-class PSDS1_T: " << before << " -> " << after << " ("
            << fs_cfg.shots << "-shot, classes " << join_ids(excluded)
            << ")\n";
  if (!out_ckpt.empty()) {
    save_checkpoint(out_ckpt, net);
    std::cout << "wrote " << out_ckpt << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------

RunConfig load_config_with_overrides(const std::string& path,
                                     const std::vector<std::string>& sets,
                                     bool seed_given, std::uint64_t seed) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  for (const std::string& s : sets) apply_override(j, s);
  RunConfig cfg;
  try {
    cfg = RunConfig::from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  if (seed_given) {
    cfg.seed = seed;
    cfg.train.seed = seed;
  }
  return cfg;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"ovsed: open-vocabulary sound event detection toolkit"};
  app.require_subcommand(1);
  int rc = 0;

  // dataset synth
  auto* dataset = app.add_subcommand("dataset", "Dataset utilities");
  dataset->require_subcommand(1);
  auto* synth = dataset->add_subcommand(
      "synth", "Generate a synthetic strongly labeled dataset");
  struct {
    std::string out;
    int classes = 5, train = 200, eval = 50;
    double duration = 10.0;
    std::uint64_t seed = 0;
  } so;
  synth->add_option("--out", so.out, "Output dataset directory")->required();
  synth->add_option("--classes", so.classes, "Number of classes");
  synth->add_option("--train-clips", so.train, "Training clips");
  synth->add_option("--eval-clips", so.eval, "Evaluation clips");
  synth->add_option("--duration", so.duration, "Clip duration in seconds");
  synth->add_option("--seed", so.seed, "Random seed");
  synth->callback([&] {
    rc = cmd_dataset_synth(so.out, so.classes, so.train, so.eval, so.duration,
                           so.seed);
  });

  // relations build
  auto* relations = app.add_subcommand("relations", "Class-relation tables");
  relations->require_subcommand(1);
  auto* rbuild = relations->add_subcommand(
      "build", "Build the per-class relation table used to filter negatives");
  struct {
    std::string dataset, out, mode = "ontology", model = "gpt-4o-mini";
    std::string cache;
    std::uint64_t seed = 0;
  } ro;
  rbuild->add_option("--dataset", ro.dataset, "Dataset directory")->required();
  rbuild->add_option("--out", ro.out, "Output relation JSON")->required();
  rbuild->add_option("--mode", ro.mode, "llm or ontology")
      ->check(CLI::IsMember({"llm", "ontology"}));
  rbuild->add_option("--model", ro.model, "Chat model id for --mode llm");
  rbuild->add_option("--cache", ro.cache, "Response cache directory");
  rbuild->add_option("--seed", ro.seed, "Random seed (unused, accepted)");
  rbuild->callback([&] {
    rc = cmd_relations_build(ro.dataset, ro.out, ro.mode, ro.model, ro.cache);
  });

  // embed prompts
  auto* embed = app.add_subcommand("embed", "Prompt embeddings");
  embed->require_subcommand(1);
  auto* eprompts = embed->add_subcommand(
      "prompts", "Embed one prompt per vocabulary class");
  struct {
    std::string dataset, out, model = "text-embedding-3-small";
    int dim = 512;
    std::uint64_t seed = 0;
  } eo;
  eprompts->add_option("--dataset", eo.dataset, "Dataset directory")
      ->required();
  eprompts->add_option("--out", eo.out, "Output embedding file")->required();
  eprompts->add_option("--dim", eo.dim, "Embedding dimension");
  eprompts->add_option("--model", eo.model, "Embedding model id");
  eprompts->add_option("--seed", eo.seed, "Random seed (unused, accepted)");
  eprompts->callback(
      [&] { rc = cmd_embed_prompts(eo.dataset, eo.out, eo.dim, eo.model); });

  // train
  auto* tr = app.add_subcommand("train", "Train a model from a run config");
  struct {
    std::string config;
    std::vector<std::string> sets;
    std::uint64_t seed = 0;
  } to;
  tr->add_option("--config", to.config, "Run config JSON")->required();
  tr->add_option("--set", to.sets,
                 "key=value or section.key=value config override");
  auto* tr_seed = tr->add_option("--seed", to.seed, "Override the run seed");
  tr->callback([&] {
    rc = cmd_train(load_config_with_overrides(to.config, to.sets,
                                              tr_seed->count() > 0, to.seed));
  });

  // infer
  auto* inf = app.add_subcommand("infer",
                                 "Detect events for free-text queries");
  struct {
    std::string ckpt, audio, out, embeddings;
    std::vector<std::string> queries;
    double threshold = 0.5;
    int median = 7;
    std::uint64_t seed = 0;
  } io;
  inf->add_option("--checkpoint", io.ckpt, "Model checkpoint")->required();
  inf->add_option("--audio", io.audio, "WAV file or directory")->required();
  inf->add_option("--query", io.queries, "Class name query (repeatable)")
      ->required();
  inf->add_option("--threshold", io.threshold, "Detection threshold");
  inf->add_option("--out", io.out, "Output detections TSV")->required();
  inf->add_option("--embeddings", io.embeddings, "Embedding file (else stub)");
  inf->add_option("--median-window", io.median,
                  "Median filter window in frames");
  inf->add_option("--seed", io.seed, "Random seed (unused, accepted)");
  inf->callback([&] {
    rc = cmd_infer(io.ckpt, io.audio, io.queries, io.threshold, io.out,
                   io.embeddings, io.median);
  });

  // eval
  auto* ev = app.add_subcommand("eval", "Threshold-free PSDS1 evaluation");
  struct {
    std::string ckpt, dataset, split = "eval", mode = "A", embeddings, out;
    std::string config;
    std::uint64_t seed = 0;
  } vo;
  ev->add_option("--checkpoint", vo.ckpt, "Model checkpoint")->required();
  ev->add_option("--dataset", vo.dataset, "Dataset directory")->required();
  ev->add_option("--split", vo.split, "train or eval")
      ->check(CLI::IsMember({"train", "eval"}));
  ev->add_option("--mode", vo.mode,
                 "A: all clips per class; T: clips containing the class")
      ->check(CLI::IsMember({"A", "T"}));
  ev->add_option("--embeddings", vo.embeddings, "Embedding file (else stub)");
  ev->add_option("--out", vo.out, "Per-class AUC report JSON");
  ev->add_option("--config", vo.config,
                 "Run config supplying PSDS parameters (else defaults)");
  ev->add_option("--seed", vo.seed, "Random seed (unused, accepted)");
  ev->callback([&] {
    const PsdsParams params =
        vo.config.empty() ? PsdsParams{} : RunConfig::load(vo.config).eval;
    rc = cmd_eval(vo.ckpt, vo.dataset, vo.split, vo.mode, vo.embeddings,
                  vo.out, params);
  });

  // zeroshot
  auto* zs = app.add_subcommand(
      "zeroshot", "Class-exclusion folds with optional few-shot rows");
  struct {
    std::string config, out;
    std::vector<std::string> sets;
    int shots = 10;
    std::uint64_t seed = 0;
  } zo;
  zs->add_option("--config", zo.config, "Run config JSON")->required();
  zs->add_option("--set", zo.sets, "Config override");
  zs->add_option("--shots", zo.shots, "Few-shot clips per class (0 skips)");
  zs->add_option("--out", zo.out, "Report path (default <run_dir>/report.json)");
  auto* zs_seed = zs->add_option("--seed", zo.seed, "Override the run seed");
  zs->callback([&] {
    rc = cmd_zeroshot(load_config_with_overrides(zo.config, zo.sets,
                                                 zs_seed->count() > 0, zo.seed),
                      zo.shots, zo.out);
  });

  // fewshot
  auto* fsc = app.add_subcommand(
      "fewshot", "Fine-tune a checkpoint on a few clips of named classes");
  struct {
    std::string config, ckpt, out;
    std::vector<std::string> excluded, sets;
    int shots = 0;
    std::uint64_t seed = 0;
  } fo;
  fsc->add_option("--config", fo.config, "Run config JSON")->required();
  fsc->add_option("--checkpoint", fo.ckpt, "Checkpoint to fine-tune")
      ->required();
  fsc->add_option("--excluded", fo.excluded, "Class id (repeatable)")
      ->required();
  fsc->add_option("--set", fo.sets, "Config override");
  fsc->add_option("--shots", fo.shots, "Clips per class (0 = config value)");
  fsc->add_option("--out", fo.out, "Write the fine-tuned checkpoint here");
  auto* fs_seed = fsc->add_option("--seed", fo.seed, "Override the run seed");
  fsc->callback([&] {
    rc = cmd_fewshot(load_config_with_overrides(fo.config, fo.sets,
                                                fs_seed->count() > 0, fo.seed),
                     fo.ckpt, fo.excluded, fo.shots, fo.out);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

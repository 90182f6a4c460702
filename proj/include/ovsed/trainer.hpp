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

// Training loop: per clip, a query set of positive and negative classes is
// composed, each query decodes the cached encoder tokens against the class
// prompt, and a frame-level binary cross-entropy (negatives supervised to
// zero) drives a two-group AdamW (encoder at a 10x smaller rate). Includes
// the class-exclusion fold harness and few-shot fine-tuning.

#ifndef OVSED_TRAINER_HPP_
#define OVSED_TRAINER_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "ovsed/audio_frontend.hpp"
#include "ovsed/dataio.hpp"
#include "ovsed/model.hpp"
#include "ovsed/prompt.hpp"
#include "ovsed/psds.hpp"
#include "ovsed/relations.hpp"

namespace ovsed {

struct TrainConfig {
  double lr_decoder = 1e-4;
  double lr_encoder = 1e-5;
  int batch_audio = 16;
  int prompts_per_clip = 20;  // Q
  int p_max = 10;
  int epochs = 10;
  std::uint64_t seed = 0;
  bool filtering = true;
  bool augment = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  std::string select_by = "psds";  // psds | loss | final

  void validate() const {
    if (lr_decoder < 0 || lr_encoder < 0)
      throw ValidationError("train: negative learning rate");
    if (batch_audio < 1) throw ValidationError("train: batch_audio must be >= 1");
    if (prompts_per_clip < 1)
      throw ValidationError("train: prompts_per_clip must be >= 1");
    if (p_max < 0 || p_max > prompts_per_clip)
      throw ValidationError("train: p_max must be in [0, prompts_per_clip]");
    if (epochs < 0) throw ValidationError("train: negative epoch count");
    if (select_by != "psds" && select_by != "loss" && select_by != "final")
      throw ValidationError("train: select_by must be psds, loss, or final");
  }

  nlohmann::json to_json() const {
    return {{"lr_decoder", lr_decoder},
            {"lr_encoder", lr_encoder},
            {"batch_audio", batch_audio},
            {"prompts_per_clip", prompts_per_clip},
            {"p_max", p_max},
            {"epochs", epochs},
            {"seed", seed},
            {"filtering", filtering},
            {"augment", augment},
            {"beta1", beta1},
            {"beta2", beta2},
            {"weight_decay", weight_decay},
            {"select_by", select_by}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    static const std::vector<std::string> known = {
        "lr_decoder", "lr_encoder", "batch_audio", "prompts_per_clip",
        "p_max",      "epochs",     "seed",        "filtering",
        "augment",    "beta1",      "beta2",       "weight_decay",
        "select_by"};
    for (auto it = j.begin(); it != j.end(); ++it)
      if (std::find(known.begin(), known.end(), it.key()) == known.end())
        throw ValidationError("train config: unknown key '" + it.key() + "'");
    TrainConfig c;
    c.lr_decoder = j.value("lr_decoder", c.lr_decoder);
    c.lr_encoder = j.value("lr_encoder", c.lr_encoder);
    c.batch_audio = j.value("batch_audio", c.batch_audio);
    c.prompts_per_clip = j.value("prompts_per_clip", c.prompts_per_clip);
    c.p_max = j.value("p_max", c.p_max);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.filtering = j.value("filtering", c.filtering);
    c.augment = j.value("augment", c.augment);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.select_by = j.value("select_by", c.select_by);
    c.validate();
    return c;
  }
};

struct FewShotConfig {
  double lr_decoder = 1e-5;
  double lr_encoder = 1e-6;
  int epochs = 25;
  int batch_audio = 8;
  int shots = 10;
  int prompts_per_clip = 20;
  int p_max = 10;

  void validate() const {
    if (shots < 1) throw ValidationError("fewshot: shots must be >= 1");
    if (epochs < 0 || batch_audio < 1 || prompts_per_clip < 1)
      throw ValidationError("fewshot: bad size field");
  }

  nlohmann::json to_json() const {
    return {{"lr_decoder", lr_decoder}, {"lr_encoder", lr_encoder},
            {"epochs", epochs},         {"batch_audio", batch_audio},
            {"shots", shots},           {"prompts_per_clip", prompts_per_clip},
            {"p_max", p_max}};
  }
  static FewShotConfig from_json(const nlohmann::json& j) {
    static const std::vector<std::string> known = {
        "lr_decoder", "lr_encoder", "epochs", "batch_audio",
        "shots",      "prompts_per_clip", "p_max"};
    for (auto it = j.begin(); it != j.end(); ++it)
      if (std::find(known.begin(), known.end(), it.key()) == known.end())
        throw ValidationError("fewshot config: unknown key '" + it.key() + "'");
    FewShotConfig c;
    c.lr_decoder = j.value("lr_decoder", c.lr_decoder);
    c.lr_encoder = j.value("lr_encoder", c.lr_encoder);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_audio = j.value("batch_audio", c.batch_audio);
    c.shots = j.value("shots", c.shots);
    c.prompts_per_clip = j.value("prompts_per_clip", c.prompts_per_clip);
    c.p_max = j.value("p_max", c.p_max);
    c.validate();
    return c;
  }
};

// Mean binary cross-entropy over all (curve, frame) cells, in posterior
// space. Targets must be binary.
inline double bce_mean(const std::vector<std::vector<float>>& posteriors,
                       const std::vector<std::vector<float>>& targets) {
  if (posteriors.size() != targets.size())
    throw ValidationError("bce: curve count mismatch");
  double sum = 0;
  std::int64_t cells = 0;
  for (std::size_t i = 0; i < posteriors.size(); ++i) {
    const auto& p = posteriors[i];
    const auto& y = targets[i];
    if (p.size() != y.size())
      throw ValidationError("bce: curve length mismatch");
    for (std::size_t t = 0; t < p.size(); ++t) {
      if (!(p[t] >= 0.0f && p[t] <= 1.0f))
        throw NumericError("bce: posterior outside [0,1]");
      sum += y[t] > 0.5f ? -std::log(static_cast<double>(p[t]))
                         : -std::log1p(-static_cast<double>(p[t]));
      ++cells;
    }
  }
  if (cells == 0) throw ValidationError("bce: empty input");
  return sum / static_cast<double>(cells);
}

// Decoupled-weight-decay adaptive-moment optimizer with two parameter
// groups: encoder tensors at lr_encoder, everything else (decoder blocks,
// modulation maps, head) at lr_decoder.
template <typename S>
class AdamW {
 public:
  AdamW(std::vector<ag::Tensor<S>*> params, double lr_encoder,
        double lr_decoder, double beta1 = 0.9, double beta2 = 0.999,
        double weight_decay = 0.01, double eps = 1e-8)
      : params_(std::move(params)),
        lr_enc_(lr_encoder),
        lr_dec_(lr_decoder),
        b1_(beta1),
        b2_(beta2),
        wd_(weight_decay),
        eps_(eps) {
    for (const ag::Tensor<S>* w : params_) {
      m_.push_back(ag::Mat<S>::Zero(w->value.rows(), w->value.cols()));
      v_.push_back(ag::Mat<S>::Zero(w->value.rows(), w->value.cols()));
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, t_);
    const double bc2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      ag::Tensor<S>& w = *params_[i];
     const double lr = w.encoder_group ? lr_enc_ : lr_dec_;
      if (lr == 0) continue;
      m_[i] = S(b1_) * m_[i] + S(1 - b1_) * w.grad;
      v_[i] = (S(b2_) * v_[i].array() +
               S(1 - b2_) * w.grad.array().square()).matrix();
      for (Eigen::Index k = 0; k < w.value.size(); ++k) {
        const double mh = static_cast<double>(m_[i](k)) / bc1;
        const double vh = static_cast<double>(v_[i](k)) / bc2;
        w.value(k) -= S(lr * (mh / (std::sqrt(vh) + eps_) +
                              wd_ * static_cast<double>(w.value(k))));
      }
    }
  }

 private:
  std::vector<ag::Tensor<S>*> params_;
  std::vector<ag::Mat<S>> m_, v_;
  double lr_enc_, lr_dec_, b1_, b2_, wd_, eps_;
  std::int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// In-memory training data: features are extracted once, augmentation works
// on copies per epoch.

struct FeatureClip {
  ClipId id;
  Eigen::MatrixXf spec;  // frontend frames x n_mels
  std::vector<EventLabel> labels;
  std::vector<ClassId> classes;  // distinct, vocabulary order
  double duration_s = 0;

  std::vector<std::pair<double, double>> truth_of(const ClassId& c) const {
    std::vector<std::pair<double, double>> out;
    for (const EventLabel& l : labels)
      if (l.class_id == c) out.emplace_back(l.onset, l.offset);
    return out;
  }
};

struct TrainerData {
  std::vector<FeatureClip> train;
  std::vector<FeatureClip> val;
  std::vector<ClassId> vocabulary;
  std::map<ClassId, std::string> names;  // display names for prompting
};

inline std::vector<FeatureClip> extract_features(const DatasetSplit& split,
                                                 const MelExtractor& ex) {
  std::vector<FeatureClip> out;
  for (const ClipRecord& clip : split.clips) {
    FeatureClip fc;
    fc.id = clip.clip_id;
    fc.spec = ex.melspec(clip.samples, clip.clip_id).frames;
    fc.labels = split.labels_of(clip.clip_id);
    fc.classes = split.classes_of(clip.clip_id);
    fc.duration_s = clip.duration;
    out.push_back(std::move(fc));
  }
  return out;
}

inline TrainerData prepare_trainer_data(const DatasetSplit& train_split,
                                        const DatasetSplit& val_split,
                                        const Ontology* ontology = nullptr) {
  MelExtractor ex;
  TrainerData d;
  d.train = extract_features(train_split, ex);
  d.val = extract_features(val_split, ex);
  d.vocabulary = train_split.class_vocabulary;
  for (const ClassId& c : d.vocabulary)
    d.names[c] = ontology ? ontology->display_name(c) : c;
  return d;
}

struct AuditEntry {
  ClipId clip_id;
  ClassId class_id;
  bool positive = false;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0;
  double val_psds_a = 0;
  double val_loss = 0;
};

struct TrainResult {
  int best_epoch = -1;  // 1-based; -1 when no selection ran
  double best_metric = 0;
  std::vector<EpochMetrics> history;
};

namespace detail_train {

inline ag::Mat<float> prompt_matrix(const EmbeddingStore& store,
                                    const std::string& name) {
  const PromptEmbedding e = store.embed(name);
  return e.vector.transpose();
}

// Prompt lookup cache; embeddings are frozen during training.
inline std::map<ClassId, ag::Mat<float>> embed_vocab(
    const EmbeddingStore& store, const std::vector<ClassId>& vocab,
    const std::map<ClassId, std::string>& names) {
  std::map<ClassId, ag::Mat<float>> out;
  for (const ClassId& c : vocab) {
    auto it = names.find(c);
    out[c] = prompt_matrix(store, it == names.end() ? c : it->second);
  }
  return out;
}

}  // namespace detail_train

// Scores every listed class on every clip. curves[class][i] parallels clips.
inline std::map<ClassId, std::vector<std::vector<float>>> score_all(
    Network<float>& net, const std::vector<FeatureClip>& clips,
    const std::vector<ClassId>& classes, const EmbeddingStore& store,
    const std::map<ClassId, std::string>& names) {
  std::vector<ag::Mat<float>> prompts;
  for (const ClassId& c : classes) {
    auto it = names.find(c);
    prompts.push_back(detail_train::prompt_matrix(
        store, it == names.end() ? c : it->second));
  }
  std::map<ClassId, std::vector<std::vector<float>>> curves;
  for (const ClassId& c : classes) curves[c].resize(clips.size());
  for (std::size_t i = 0; i < clips.size(); ++i) {
    auto out = net.infer_multi(clips[i].spec, prompts);
    for (std::size_t k = 0; k < classes.size(); ++k)
      curves[classes[k]][i] = std::move(out[k]);
  }
  return curves;
}

// PSDS1 over all (clip, class) pairs: every class is scored on every clip,
// eFPR denominator is the full evaluated duration.
inline PsdsResult eval_psds_all(Network<float>& net,
                                const std::vector<FeatureClip>& clips,
                                const std::vector<ClassId>& classes,
                                const EmbeddingStore& store,
                                const std::map<ClassId, std::string>& names,
                                PsdsParams params) {
  params.frame_rate = 100.0 / net.cfg.patch_stride_t;
  auto curves = score_all(net, clips, classes, store, names);
  std::vector<RocCurve> rocs;
  for (const ClassId& c : classes) {
    ClassEvalInput in;
    in.class_id = c;
    for (std::size_t i = 0; i < clips.size(); ++i)
      in.clips.push_back({clips[i].id, std::move(curves[c][i]),
                          clips[i].truth_of(c), clips[i].duration_s});
    rocs.push_back(class_roc(in, params));
  }
  return psds(rocs, params);
}

// Target-restricted PSDS1: each class is evaluated only on clips where it
// has ground truth; eFPR uses those clips' duration.
inline PsdsResult eval_psds_target(Network<float>& net,
                                   const std::vector<FeatureClip>& clips,
                                   const std::vector<ClassId>& classes,
                                   const EmbeddingStore& store,
                                   const std::map<ClassId, std::string>& names,
                                   PsdsParams params) {
  params.frame_rate = 100.0 / net.cfg.patch_stride_t;
  std::vector<RocCurve> rocs;
  for (const ClassId& c : classes) {
    std::vector<FeatureClip const*> present;
    for (const FeatureClip& fc : clips)
      if (!fc.truth_of(c).empty()) present.push_back(&fc);
    if (present.empty()) {
      warn("psds: class '" + c + "' absent from the evaluation clips");
      continue;
    }
    auto it = names.find(c);
    const ag::Mat<float> prompt = detail_train::prompt_matrix(
        store, it == names.end() ? c : it->second);
    ClassEvalInput in;
    in.class_id = c;
    for (const FeatureClip* fc : present) {
      const auto cache = net.encode_cache(fc->spec);
      in.clips.push_back({fc->id, net.decode_posteriors(cache, prompt),
                          fc->truth_of(c), fc->duration_s});
    }
    rocs.push_back(class_roc(in, params));
  }
  return psds(rocs, params);
}

inline double validation_loss(Network<float>& net, const TrainerData& data,
                              const std::vector<ClassId>& vocab,
                              const std::map<ClassId, ag::Mat<float>>& prompts,
                              int stride);

// Full training loop. When vocab_override is given, queries are drawn from
// that subset only (class-exclusion folds). Leaves the network holding the
// selected checkpoint's weights.
inline TrainResult train(Network<float>& net, const TrainerData& data,
                         const TrainConfig& cfg_in, const RelationTable& table,
                         const EmbeddingStore& store,
                         const PsdsParams& eval_params,
                         const std::string& run_dir = "",
                         std::vector<AuditEntry>* audit = nullptr,
                         const std::vector<ClassId>* vocab_override = nullptr,
                         const Ontology* ontology = nullptr) {
  TrainConfig cfg = cfg_in;
  cfg.validate();
  const std::vector<ClassId>& vocab =
      vocab_override ? *vocab_override : data.vocabulary;
  if (static_cast<int>(vocab.size()) < cfg.prompts_per_clip)
    throw ValidationError("train: vocabulary smaller than prompts_per_clip");
  if (store.dim() != net.cfg.prompt_dim)
    throw ValidationError("train: embedding dim differs from model prompt_dim");
  if (data.val.empty() && cfg.select_by != "final")
    throw ValidationError("train: no validation split for checkpoint selection");

  const int stride = net.cfg.patch_stride_t;
  const double label_rate = 100.0 / stride;
  const auto prompts = detail_train::embed_vocab(store, vocab, data.names);
  const std::set<ClassId> vocab_set(vocab.begin(), vocab.end());

  AdamW<float> opt(net.params.all(), cfg.lr_encoder, cfg.lr_decoder, cfg.beta1,
                   cfg.beta2, cfg.weight_decay);

  if (!run_dir.empty()) {
    std::filesystem::create_directories(run_dir + "/checkpoints");
  }

  TrainResult res;
  std::vector<ag::Mat<float>> best_weights;
  long step_index = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    {
      Rng r = derive_rng(cfg.seed, "epoch_shuffle",
                         static_cast<std::uint64_t>(epoch));
      r.shuffle(order);
    }

    double loss_sum = 0;
    std::int64_t loss_cells = 0;
    for (std::size_t b0 = 0; b0 < order.size();
         b0 += static_cast<std::size_t>(cfg.batch_audio)) {
      const std::size_t b1 = std::min(
          order.size(), b0 + static_cast<std::size_t>(cfg.batch_audio));
      ++step_index;

      struct Prepared {
        const FeatureClip* fc;
        Eigen::MatrixXf spec;
        Eigen::MatrixXf raster;  // clip classes x label frames
        std::vector<ClassId> clip_classes;
        QuerySet queries;
      };
      std::vector<Prepared> batch;
      std::int64_t batch_cells = 0;
      for (std::size_t bi = b0; bi < b1; ++bi) {
        const std::size_t ci = order[bi];
        const FeatureClip& fc = data.train[ci];
        Prepared pr;
        pr.fc = &fc;
        pr.spec = fc.spec;
        for (const ClassId& c : fc.classes)
          if (vocab_set.count(c)) pr.clip_classes.push_back(c);
        const int t_lab = static_cast<int>(pr.spec.rows()) / stride;
        pr.raster = rasterize_labels(fc.labels, pr.clip_classes, t_lab,
                                     label_rate);
        if (cfg.augment) {
          AugmentConfig acfg;
          acfg.frame_shift = true;
          acfg.filter_aug = true;
          acfg.label_stride = stride;
          Rng r = derive_rng(cfg.seed, "augment",
                             static_cast<std::uint64_t>(epoch),
                             static_cast<std::uint64_t>(ci));
          augment(pr.spec, &pr.raster, acfg, r);
        }
        Rng qr = derive_rng(cfg.seed, "queries",
                            static_cast<std::uint64_t>(epoch),
                            static_cast<std::uint64_t>(ci));
        ComposeOptions copts;
        copts.q_total = cfg.prompts_per_clip;
        copts.p_max = cfg.p_max;
        copts.filtering = cfg.filtering;
        copts.ontology = ontology;
        pr.queries = compose_queries(fc.id, pr.clip_classes, vocab, table,
                                     copts, qr);
        if (audit) {
          for (const ClassId& c : pr.queries.positives)
            audit->push_back({fc.id, c, true});
          for (const ClassId& c : pr.queries.negatives)
            audit->push_back({fc.id, c, false});
        }
        batch_cells += static_cast<std::int64_t>(cfg.prompts_per_clip) * t_lab;
        batch.push_back(std::move(pr));
      }

      net.params.zero_grads();
      for (const Prepared& pr : batch) {
        ag::Tape<float> tape;
        const int cache =
            net.graph_encoder(tape, net.graph_patch(tape, pr.spec, true), true);
        const int t_lab = static_cast<int>(pr.spec.rows()) / stride;
        int loss_node = -1;
        auto add_query = [&](const ClassId& c, bool positive) {
          ag::Mat<float> target = ag::Mat<float>::Zero(t_lab, 1);
          if (positive) {
            const auto it = std::find(pr.clip_classes.begin(),
                                      pr.clip_classes.end(), c);
            const Eigen::Index row = it - pr.clip_classes.begin();
            target = pr.raster.row(row).transpose();
          }
          const int logits =
              net.graph_decoder_logits(tape, cache, prompts.at(c), true);
          const int bce = ag::bce_logits_sum(tape, logits, target);
          loss_node = loss_node < 0 ? bce : ag::add(tape, loss_node, bce);
        };
        for (const ClassId& c : pr.queries.positives) add_query(c, true);
        for (const ClassId& c : pr.queries.negatives) add_query(c, false);

        const float clip_loss = tape.val(loss_node)(0, 0);
        if (!std::isfinite(clip_loss))
          throw NumericError("train: non-finite loss at step " +
                             std::to_string(step_index) + ", clip '" +
                             pr.fc->id + "'");
        loss_sum += clip_loss;
        tape.backward(loss_node, 1.0f / static_cast<float>(batch_cells));
      }
      loss_cells += batch_cells;
      for (const ag::Tensor<float>* w : net.params.all())
        if (!w->grad.allFinite())
          throw NumericError("train: non-finite gradient in tensor '" +
                             w->name + "'");
      opt.step();
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss =
        loss_cells > 0 ? loss_sum / static_cast<double>(loss_cells) : 0.0;

    double metric = 0;
    if (cfg.select_by == "psds") {
      em.val_psds_a = eval_psds_all(net, data.val, vocab, store, data.names,
                                    eval_params)
                          .psds;
      metric = em.val_psds_a;
    } else if (cfg.select_by == "loss") {
      em.val_loss = validation_loss(net, data, vocab, prompts, stride);
      metric = -em.val_loss;
    }
    res.history.push_back(em);

    if (!run_dir.empty()) {
      save_checkpoint(run_dir + "/checkpoints/epoch_" + std::to_string(epoch) +
                          ".bin",
                      net);
      std::ofstream ms(run_dir + "/metrics.jsonl", std::ios::app);
      nlohmann::json line = {{"epoch", epoch}, {"train_loss", em.train_loss}};
      if (cfg.select_by == "psds") line["val_psds_a"] = em.val_psds_a;
      if (cfg.select_by == "loss") line["val_loss"] = em.val_loss;
      ms << line.dump() << "\n";
    }
    if (cfg.select_by != "final" &&
        (res.best_epoch < 0 || metric > res.best_metric)) {
      res.best_epoch = epoch;
      res.best_metric = metric;
      best_weights = net.params.snapshot();
    }
  }

  if (res.best_epoch >= 0) net.params.restore(best_weights);
  if (!run_dir.empty() && cfg.epochs > 0)
    save_checkpoint(run_dir + "/best.bin", net);
  return res;
}

inline double validation_loss(Network<float>& net, const TrainerData& data,
                              const std::vector<ClassId>& vocab,
                              const std::map<ClassId, ag::Mat<float>>& prompts,
                              int stride) {
  double sum = 0;
  std::int64_t cells = 0;
  for (const FeatureClip& fc : data.val) {
    const int t_lab = static_cast<int>(fc.spec.rows()) / stride;
    std::vector<ClassId> present;
    for (const ClassId& c : fc.classes)
      if (prompts.count(c)) present.push_back(c);
    const Eigen::MatrixXf raster =
        rasterize_labels(fc.labels, present, t_lab, 100.0 / stride);
    ag::Tape<float> tape;
    const int cache =
        net.graph_encoder(tape, net.graph_patch(tape, fc.spec, false), false);
    for (const ClassId& c : vocab) {
      ag::Mat<float> target = ag::Mat<float>::Zero(t_lab, 1);
      const auto it = std::find(present.begin(), present.end(), c);
      if (it != present.end())
        target = raster.row(it - present.begin()).transpose();
      const int logits =
          net.graph_decoder_logits(tape, cache, prompts.at(c), false);
      sum += tape.val(ag::bce_logits_sum(tape, logits, target))(0, 0);
      cells += t_lab;
    }
  }
  return cells > 0 ? sum / static_cast<double>(cells) : 0.0;
}

// ---------------------------------------------------------------------------
// Class-exclusion folds and few-shot fine-tuning.

struct FoldResult {
  int fold_index = 0;
  std::vector<ClassId> excluded;  // vocabulary order
  Network<float> net;
  TrainResult train_result;
  std::vector<AuditEntry> audit;
};

inline void write_audit_tsv(const std::string& path,
                            const std::vector<AuditEntry>& audit) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write audit log: " + path);
  os << "clip_id\tclass_id\trole\n";
  for (const AuditEntry& e : audit)
    os << e.clip_id << "\t" << e.class_id << "\t" << (e.positive ? "pos" : "neg")
       << "\n";
}

inline std::vector<FoldResult> run_exclusion_folds(
    const TrainerData& data, int k_out, int n_folds, const ModelConfig& mcfg,
    const TrainConfig& cfg, const RelationTable& table,
    const EmbeddingStore& store, const PsdsParams& eval_params,
    const std::string& run_dir = "", const Ontology* ontology = nullptr) {
  if (k_out < 0 || k_out >= static_cast<int>(data.vocabulary.size()))
    throw ValidationError("folds: k_out must be < |vocabulary|");
  std::vector<FoldResult> folds;
  for (int f = 0; f < n_folds; ++f) {
    FoldResult fr;
    fr.fold_index = f;
    Rng r = derive_rng(cfg.seed, "exclude", static_cast<std::uint64_t>(f));
    const std::vector<ClassId> excluded_draw =
        r.sample(data.vocabulary, static_cast<std::size_t>(k_out));
    const std::set<ClassId> excluded_set(excluded_draw.begin(),
                                         excluded_draw.end());
    std::vector<ClassId> kept;
    for (const ClassId& c : data.vocabulary) {
      if (excluded_set.count(c))
        fr.excluded.push_back(c);
      else
        kept.push_back(c);
    }

    fr.net = Network<float>::init(
        mcfg, derive_seed(cfg.seed, "fold_init", static_cast<std::uint64_t>(f)));
    const std::string fold_dir =
        run_dir.empty() ? "" : run_dir + "/fold" + std::to_string(f);
    fr.train_result = train(fr.net, data, cfg, table, store, eval_params,
                            fold_dir, &fr.audit, &kept, ontology);
    if (!run_dir.empty()) {
      std::filesystem::create_directories(run_dir + "/audit");
      write_audit_tsv(run_dir + "/audit/queries_fold" + std::to_string(f) +
                          ".tsv",
                      fr.audit);
    }
    folds.push_back(std::move(fr));
  }
  return folds;
}

// Fine-tunes on `shots` training clips per excluded class (union, deduped).
// Queries may now include the excluded classes again.
inline TrainResult finetune_fewshot(Network<float>& net,
                                    const TrainerData& data,
                                    const std::vector<ClassId>& excluded,
                                    const FewShotConfig& fs,
                                    const TrainConfig& base_cfg,
                                    const RelationTable& table,
                                    const EmbeddingStore& store,
                                    const PsdsParams& eval_params,
                                    const Ontology* ontology = nullptr) {
  fs.validate();
  std::set<std::size_t> chosen;
  for (std::size_t k = 0; k < excluded.size(); ++k) {
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < data.train.size(); ++i) {
      const auto& cs = data.train[i].classes;
      if (std::find(cs.begin(), cs.end(), excluded[k]) != cs.end())
        candidates.push_back(i);
    }
    if (static_cast<int>(candidates.size()) < fs.shots) {
      warn("fewshot: class '" + excluded[k] + "' has only " +
           std::to_string(candidates.size()) + " clips, using all");
      chosen.insert(candidates.begin(), candidates.end());
    } else {
      Rng r = derive_rng(base_cfg.seed, "fewshot",
                         static_cast<std::uint64_t>(k));
      for (std::size_t i : r.sample(candidates,
                                    static_cast<std::size_t>(fs.shots)))
        chosen.insert(i);
    }
  }

  TrainerData sub;
  sub.vocabulary = data.vocabulary;
  sub.names = data.names;
  for (std::size_t i : chosen) sub.train.push_back(data.train[i]);

  TrainConfig cfg = base_cfg;
  cfg.lr_decoder = fs.lr_decoder;
  cfg.lr_encoder = fs.lr_encoder;
  cfg.epochs = fs.epochs;
  cfg.batch_audio = fs.batch_audio;
  cfg.prompts_per_clip = fs.prompts_per_clip;
  cfg.p_max = fs.p_max;
  cfg.seed = derive_seed(base_cfg.seed, "fewshot_train");
  cfg.select_by = "final";
  return train(net, sub, cfg, table, store, eval_params, "", nullptr, nullptr,
               ontology);
}

}  // namespace ovsed

#endif  // OVSED_TRAINER_HPP_

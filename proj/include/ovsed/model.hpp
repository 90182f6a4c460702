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

// Prompt-conditioned sound event detector: patch embedding to 25 Hz tokens,
// an audio-only encoder whose output can be cached, and a decoder fused with
// a prompt embedding through one of four mechanisms (adaptive LN with gate
// initialized to one or zero, a prepended prompt token, or per-block
// cross-attention onto a single prompt key/value).

#ifndef OVSED_MODEL_HPP_
#define OVSED_MODEL_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "ovsed/autograd.hpp"
#include "ovsed/common.hpp"
#include "ovsed/rng.hpp"

namespace ovsed {

enum class Fusion { kAdalnOne, kAdalnZero, kTokenFusion, kCrossAttn };

inline std::string to_string(Fusion f) {
  switch (f) {
    case Fusion::kAdalnOne: return "adaln_one";
    case Fusion::kAdalnZero: return "adaln_zero";
    case Fusion::kTokenFusion: return "token_fusion";
    case Fusion::kCrossAttn: return "cross_attn";
  }
  return "?";
}

inline Fusion fusion_from_string(const std::string& s) {
  if (s == "adaln_one") return Fusion::kAdalnOne;
  if (s == "adaln_zero") return Fusion::kAdalnZero;
  if (s == "token_fusion") return Fusion::kTokenFusion;
  if (s == "cross_attn") return Fusion::kCrossAttn;
  throw ValidationError("unknown fusion variant: " + s);
}

struct ModelConfig {
  int dim = 64;
  int heads = 4;
  int n_blocks = 12;
  int n_encoder = 6;
  Fusion fusion = Fusion::kAdalnOne;
  int prompt_dim = 512;
  int patch_stride_t = 4;
  bool copied_decoder = false;
  int copied_depth = 2;  // decoder depth when copied_decoder
  int n_mels = 64;
  int ffn_mult = 4;

  int n_decoder() const {
    return copied_decoder ? copied_depth : n_blocks - n_encoder;
  }

  void validate() const {
    if (dim <= 0 || heads <= 0 || dim % heads != 0)
      throw ValidationError("model: dim must be a positive multiple of heads");
    if (n_encoder < 1) throw ValidationError("model: n_encoder must be >= 1");
    if (copied_decoder) {
      if (n_encoder != n_blocks)
        throw ValidationError(
            "model: copied_decoder requires n_encoder == n_blocks");
      if (copied_depth < 1 || copied_depth > n_blocks)
        throw ValidationError("model: copied_depth out of range");
    } else if (n_encoder >= n_blocks) {
      throw ValidationError("model: need n_encoder < n_blocks");
    }
    if (prompt_dim <= 0 || patch_stride_t <= 0 || n_mels <= 0 || ffn_mult < 1)
      throw ValidationError("model: nonpositive size field");
  }

  nlohmann::json to_json() const {
    return {{"dim", dim},
            {"heads", heads},
            {"n_blocks", n_blocks},
            {"n_encoder", n_encoder},
            {"fusion", to_string(fusion)},
            {"prompt_dim", prompt_dim},
            {"patch_stride_t", patch_stride_t},
            {"copied_decoder", copied_decoder},
            {"copied_depth", copied_depth},
            {"n_mels", n_mels},
            {"ffn_mult", ffn_mult}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    static const std::vector<std::string> known = {
        "dim",          "heads",       "n_blocks",       "n_encoder",
        "fusion",       "prompt_dim",  "patch_stride_t", "copied_decoder",
        "copied_depth", "n_mels",      "ffn_mult"};
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (std::find(known.begin(), known.end(), it.key()) == known.end())
        throw ValidationError("model config: unknown key '" + it.key() + "'");
    }
    ModelConfig c;
    c.dim = j.value("dim", c.dim);
    c.heads = j.value("heads", c.heads);
    c.n_blocks = j.value("n_blocks", c.n_blocks);
    c.n_encoder = j.value("n_encoder", c.n_encoder);
    if (j.contains("fusion")) c.fusion = fusion_from_string(j.at("fusion"));
    c.prompt_dim = j.value("prompt_dim", c.prompt_dim);
    c.patch_stride_t = j.value("patch_stride_t", c.patch_stride_t);
    c.copied_decoder = j.value("copied_decoder", c.copied_decoder);
    c.copied_depth = j.value("copied_depth", c.copied_depth);
    c.n_mels = j.value("n_mels", c.n_mels);
    c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
    c.validate();
    return c;
  }
};

struct DecodeOptions {
  bool force_gate_zero = false;  // overrides g(p) with 0 in adaln variants
};

template <typename S>
class ParamStore {
 public:
  ag::Tensor<S>& add(const std::string& name, Eigen::Index rows,
                     Eigen::Index cols, bool encoder_group,
                     bool fusion_added) {
    if (by_name_.count(name))
      throw ValidationError("duplicate tensor name: " + name);
    auto t = std::make_unique<ag::Tensor<S>>();
    t->name = name;
    t->value.setZero(rows, cols);
    t->grad.setZero(rows, cols);
    t->encoder_group = encoder_group;
    t->fusion_added = fusion_added;
    ag::Tensor<S>* raw = t.get();
    by_name_[name] = raw;
    list_.push_back(std::move(t));
    return *raw;
  }

  ag::Tensor<S>& at(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end())
      throw ValidationError("unknown tensor name: " + name);
    return *it->second;
  }
  const ag::Tensor<S>& at(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end())
      throw ValidationError("unknown tensor name: " + name);
    return *it->second;
  }

  std::vector<ag::Tensor<S>*> all() {
    std::vector<ag::Tensor<S>*> out;
    for (auto& t : list_) out.push_back(t.get());
    return out;
  }
  std::vector<const ag::Tensor<S>*> all() const {
    std::vector<const ag::Tensor<S>*> out;
    for (auto& t : list_) out.push_back(t.get());
    return out;
  }

  std::int64_t total_count() const {
    std::int64_t n = 0;
    for (auto& t : list_) n += t->count();
    return n;
  }
  std::int64_t fusion_added_count() const {
    std::int64_t n = 0;
    for (auto& t : list_)
      if (t->fusion_added) n += t->count();
    return n;
  }

  void zero_grads() {
    for (auto& t : list_) t->zero_grad();
  }

  std::vector<ag::Mat<S>> snapshot() const {
    std::vector<ag::Mat<S>> out;
    out.reserve(list_.size());
    for (auto& t : list_) out.push_back(t->value);
    return out;
  }
  void restore(const std::vector<ag::Mat<S>>& vals) {
    if (vals.size() != list_.size())
      throw ValidationError("restore: snapshot tensor count mismatch");
    for (std::size_t i = 0; i < vals.size(); ++i) list_[i]->value = vals[i];
  }

 private:
  std::vector<std::unique_ptr<ag::Tensor<S>>> list_;
  std::map<std::string, ag::Tensor<S>*> by_name_;
};

namespace detail {

// Fixed sinusoidal positional table, rows = positions.
template <typename S>
ag::Mat<S> sinusoidal_pe(Eigen::Index n_pos, Eigen::Index dim) {
  ag::Mat<S> pe(n_pos, dim);
  for (Eigen::Index p = 0; p < n_pos; ++p) {
    for (Eigen::Index i = 0; i < dim; i += 2) {
      const double freq = std::pow(10000.0, -double(i) / double(dim));
      pe(p, i) = S(std::sin(double(p) * freq));
      if (i + 1 < dim) pe(p, i + 1) = S(std::cos(double(p) * freq));
    }
  }
  return pe;
}

}  // namespace detail

template <typename S>
struct InferStats {
  std::int64_t encoder_calls = 0;
  std::size_t encoder_tape_bytes = 0;
  std::size_t max_decode_tape_bytes = 0;
  std::size_t total_decode_tape_bytes = 0;
  std::size_t peak_bytes() const {
    return encoder_tape_bytes + max_decode_tape_bytes;
  }
};

template <typename S>
class Network {
 public:
  using Tape = ag::Tape<S>;
  using Matrix = ag::Mat<S>;

  ModelConfig cfg;
  ParamStore<S> params;
  mutable std::int64_t encoder_invocations = 0;

  static Network init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Network net;
    net.cfg = cfg;
    const int dim = cfg.dim, D = cfg.prompt_dim;
    const int ffn = cfg.ffn_mult * dim;
    const int patch_in = cfg.patch_stride_t * cfg.n_mels;

    net.params.add("patch.w", patch_in, dim, true, false);
    net.params.add("patch.b", 1, dim, true, false);
    for (int i = 0; i < cfg.n_blocks; ++i)
      net.add_block_tensors("enc." + std::to_string(i), dim, ffn, true);
    for (int j = 0; j < cfg.n_decoder(); ++j)
      net.add_block_tensors("dec." + std::to_string(j), dim, ffn, false);
    net.params.add("final_ln.g", 1, dim, false, false);
    net.params.add("final_ln.b", 1, dim, false, false);
    net.params.add("head.w", dim, 1, false, false);
    net.params.add("head.b", 1, 1, false, false);

    switch (cfg.fusion) {
      case Fusion::kAdalnOne:
      case Fusion::kAdalnZero:
        net.params.add("mod.proj.w", D, dim, false, true);
        net.params.add("mod.proj.b", 1, dim, false, true);
        for (int j = 0; j < cfg.n_decoder(); ++j) {
          const std::string pre = "dec." + std::to_string(j) + ".mod.";
          net.params.add(pre + "w", dim, 6 * dim, false, true);
          net.params.add(pre + "b", 1, 6 * dim, false, true);
        }
        break;
      case Fusion::kTokenFusion:
        net.params.add("tok.proj.w", D, dim, false, true);
        net.params.add("tok.proj.b", 1, dim, false, true);
        break;
      case Fusion::kCrossAttn:
        for (int j = 0; j < cfg.n_decoder(); ++j) {
          const std::string pre = "dec." + std::to_string(j) + ".xattn.";
          net.params.add(pre + "ln.g", 1, dim, false, true);
          net.params.add(pre + "ln.b", 1, dim, false, true);
          net.params.add(pre + "wq", dim, dim, false, true);
          net.params.add(pre + "bq", 1, dim, false, true);
          net.params.add(pre + "wk", D, dim, false, true);
          net.params.add(pre + "bk", 1, dim, false, true);
          net.params.add(pre + "wv", D, dim, false, true);
          net.params.add(pre + "bv", 1, dim, false, true);
          net.params.add(pre + "wo", dim, dim, false, true);
          net.params.add(pre + "bo", 1, dim, false, true);
        }
        break;
    }

    net.initialize_values(seed);
    return net;
  }

  // ---- graph builders -----------------------------------------------------

  int graph_patch(Tape& t, const Matrix& spec, bool trainable) {
    if (spec.cols() != cfg.n_mels)
      throw ValidationError("patch: spectrogram band count mismatch");
    if (spec.rows() < cfg.patch_stride_t)
      throw ValidationError("patch: fewer frames than patch stride");
    const Eigen::Index stride = cfg.patch_stride_t;
    const Eigen::Index tp = spec.rows() / stride;
    Matrix patches(tp, stride * cfg.n_mels);
    for (Eigen::Index p = 0; p < tp; ++p)
      for (Eigen::Index s = 0; s < stride; ++s)
        patches.row(p).segment(s * cfg.n_mels, cfg.n_mels) =
            spec.row(p * stride + s);
    int x = ag::add_rowvec(t, ag::matmul(t, t.constant(std::move(patches)),
                                         node(t, "patch.w", trainable)),
                           node(t, "patch.b", trainable));
    x = ag::add(t, x, t.constant(detail::sinusoidal_pe<S>(tp, cfg.dim)));
    return x;
  }

  int graph_encoder(Tape& t, int x, bool trainable) {
    ++encoder_invocations;
    for (int i = 0; i < cfg.n_blocks; ++i) {
      x = plain_block(t, x, "enc." + std::to_string(i), trainable);
      check_finite(t, x, "encoder block " + std::to_string(i));
      if (!cfg.copied_decoder && i + 1 == cfg.n_encoder) break;
    }
    return x;
  }

  // Decoder with the configured fusion; returns logits (T' x 1).
  int graph_decoder_logits(Tape& t, int cache, const Matrix& prompt,
                           bool trainable, DecodeOptions opts = {}) {
    if (prompt.rows() != 1 || prompt.cols() != cfg.prompt_dim)
      throw ValidationError("decode: prompt dimension mismatch");
    const int p = t.constant(prompt);
    int x = cache;

    if (cfg.fusion == Fusion::kAdalnOne || cfg.fusion == Fusion::kAdalnZero) {
      int hp = ag::silu(
          t, ag::add_rowvec(t, ag::matmul(t, p, node(t, "mod.proj.w", trainable)),
                            node(t, "mod.proj.b", trainable)));
      for (int j = 0; j < cfg.n_decoder(); ++j) {
        x = adaln_block(t, x, hp, "dec." + std::to_string(j), trainable, opts);
        check_finite(t, x, "decoder block " + std::to_string(j));
      }
    } else if (cfg.fusion == Fusion::kTokenFusion) {
      int tok = ag::add_rowvec(t, ag::matmul(t, p, node(t, "tok.proj.w", trainable)),
                               node(t, "tok.proj.b", trainable));
      x = ag::prepend_row(t, tok, x);
      for (int j = 0; j < cfg.n_decoder(); ++j) {
        x = plain_block(t, x, "dec." + std::to_string(j), trainable);
        check_finite(t, x, "decoder block " + std::to_string(j));
      }
      x = ag::drop_first_row(t, x);
    } else {  // cross_attn
      for (int j = 0; j < cfg.n_decoder(); ++j) {
        const std::string pre = "dec." + std::to_string(j);
        x = ag::add(t, x, attn_sublayer(t, x, pre, trainable));
        x = ag::add(t, x, cross_sublayer(t, x, p, pre + ".xattn.", trainable));
        x = ag::add(t, x, ffn_sublayer(t, x, pre, trainable));
        check_finite(t, x, "decoder block " + std::to_string(j));
      }
    }
    return head_logits(t, x, trainable);
  }

  // Unconditioned reference path: plain decoder blocks, norm, head.
  int graph_baseline_logits(Tape& t, int cache, bool trainable) {
    int x = cache;
    for (int j = 0; j < cfg.n_decoder(); ++j) {
      x = plain_block(t, x, "dec." + std::to_string(j), trainable);
      check_finite(t, x, "decoder block " + std::to_string(j));
    }
    return head_logits(t, x, trainable);
  }

  int head_logits(Tape& t, int x, bool trainable) {
    int u = ag::layer_norm(t, x, node(t, "final_ln.g", trainable),
                           node(t, "final_ln.b", trainable));
    return ag::add_rowvec(t, ag::matmul(t, u, node(t, "head.w", trainable)),
                          node(t, "head.b", trainable));
  }

  // ---- forward-only conveniences ------------------------------------------

  Matrix encode_cache(const Matrix& spec) {
    Tape t;
    return t.val(graph_encoder(t, graph_patch(t, spec, false), false));
  }

  std::vector<S> decode_posteriors(const Matrix& cache, const Matrix& prompt,
                                   DecodeOptions opts = {}) {
    Tape t;
    int z = graph_decoder_logits(t, t.constant(cache), prompt, false, opts);
    return squash(t.val(z));
  }

  std::vector<std::vector<S>> infer_multi(const Matrix& spec,
                                          const std::vector<Matrix>& prompts,
                                          InferStats<S>* stats = nullptr,
                                          DecodeOptions opts = {}) {
    if (prompts.empty()) throw ValidationError("infer: no prompts given");
    Matrix cache;
    std::size_t enc_bytes = 0;
    {
      Tape t;
      cache = t.val(graph_encoder(t, graph_patch(t, spec, false), false));
      enc_bytes = t.bytes();
    }
    std::vector<std::vector<S>> out;
    out.reserve(prompts.size());
    std::size_t max_dec = 0, total_dec = 0;
    for (const Matrix& p : prompts) {
      Tape t;
      int z = graph_decoder_logits(t, t.constant(cache), p, false, opts);
      out.push_back(squash(t.val(z)));
      max_dec = std::max(max_dec, t.bytes());
      total_dec += t.bytes();
    }
    if (stats) {
      stats->encoder_calls = 1;
      stats->encoder_tape_bytes = enc_bytes;
      stats->max_decode_tape_bytes = max_dec;
      stats->total_decode_tape_bytes = total_dec;
    }
    return out;
  }

  static std::vector<S> squash(const Matrix& logits) {
    std::vector<S> out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i)
      out[static_cast<std::size_t>(i)] =
          S(1) / (S(1) + std::exp(-logits(i, 0)));
    return out;
  }

 private:
  void add_block_tensors(const std::string& pre, int dim, int ffn,
                         bool enc_group) {
    params.add(pre + ".ln1.g", 1, dim, enc_group, false);
    params.add(pre + ".ln1.b", 1, dim, enc_group, false);
    params.add(pre + ".attn.wq", dim, dim, enc_group, false);
    params.add(pre + ".attn.bq", 1, dim, enc_group, false);
    params.add(pre + ".attn.wk", dim, dim, enc_group, false);
    params.add(pre + ".attn.bk", 1, dim, enc_group, false);
    params.add(pre + ".attn.wv", dim, dim, enc_group, false);
    params.add(pre + ".attn.bv", 1, dim, enc_group, false);
    params.add(pre + ".attn.wo", dim, dim, enc_group, false);
    params.add(pre + ".attn.bo", 1, dim, enc_group, false);
    params.add(pre + ".ln2.g", 1, dim, enc_group, false);
    params.add(pre + ".ln2.b", 1, dim, enc_group, false);
    params.add(pre + ".ffn.w1", dim, ffn, enc_group, false);
    params.add(pre + ".ffn.b1", 1, ffn, enc_group, false);
    params.add(pre + ".ffn.w2", ffn, dim, enc_group, false);
    params.add(pre + ".ffn.b2", 1, dim, enc_group, false);
  }

  void initialize_values(std::uint64_t seed) {
    for (ag::Tensor<S>* w : params.all()) {
      const std::string& n = w->name;
      const bool is_mod = n.find(".mod.") != std::string::npos;
      const bool is_ln_gain =
          n.size() > 2 && (n.rfind("ln.g") == n.size() - 4 ||
                           n.rfind("ln1.g") == n.size() - 5 ||
                           n.rfind("ln2.g") == n.size() - 5 ||
                           n.rfind("_ln.g") == n.size() - 5);
      if (is_mod) {
        w->value.setZero();
        if (n.back() == 'b' && cfg.fusion == Fusion::kAdalnOne) {
          // layout (gamma_a, beta_a, gate_a, gamma_f, beta_f, gate_f)
          const int dim = cfg.dim;
          w->value.middleCols(2 * dim, dim).setOnes();
          w->value.middleCols(5 * dim, dim).setOnes();
        }
        continue;
      }
      if (is_ln_gain) {
        w->value.setOnes();
        continue;
      }
      if (w->value.rows() == 1 || n.back() == 'b') {
        w->value.setZero();
        continue;
      }
      Rng rng = derive_rng(seed, "init:" + n);
      const double sd =
          std::sqrt(2.0 / double(w->value.rows() + w->value.cols()));
      for (Eigen::Index i = 0; i < w->value.size(); ++i)
        w->value(i) = S(rng.normal() * sd);
    }
    if (cfg.copied_decoder) copy_decoder_from_encoder();
  }

  void copy_decoder_from_encoder() {
    static const char* suffixes[] = {
        ".ln1.g",   ".ln1.b",   ".attn.wq", ".attn.bq",
        ".attn.wk", ".attn.bk", ".attn.wv", ".attn.bv",
        ".attn.wo", ".attn.bo", ".ln2.g",   ".ln2.b",
        ".ffn.w1",  ".ffn.b1",  ".ffn.w2",  ".ffn.b2"};
    for (int j = 0; j < cfg.n_decoder(); ++j) {
      const int src = cfg.n_blocks - cfg.n_decoder() + j;
      for (const char* suf : suffixes)
        params.at("dec." + std::to_string(j) + suf).value =
            params.at("enc." + std::to_string(src) + suf).value;
    }
  }

  int node(Tape& t, const std::string& name, bool trainable) {
    ag::Tensor<S>& w = params.at(name);
    return trainable ? t.leaf(&w) : t.constant(w.value);
  }

  void check_finite(Tape& t, int x, const std::string& where) const {
    if (!t.val(x).allFinite())
      throw NumericError(where + ": non-finite activations");
  }

  int mha(Tape& t, int u, const std::string& pre, bool trainable) {
    const int dh = cfg.dim / cfg.heads;
    int q = ag::add_rowvec(t, ag::matmul(t, u, node(t, pre + "wq", trainable)),
                           node(t, pre + "bq", trainable));
    int k = ag::add_rowvec(t, ag::matmul(t, u, node(t, pre + "wk", trainable)),
                           node(t, pre + "bk", trainable));
    int v = ag::add_rowvec(t, ag::matmul(t, u, node(t, pre + "wv", trainable)),
                           node(t, pre + "bv", trainable));
    std::vector<int> heads;
    for (int h = 0; h < cfg.heads; ++h) {
      int qh = ag::slice_cols(t, q, h * dh, dh);
      int kh = ag::slice_cols(t, k, h * dh, dh);
      int vh = ag::slice_cols(t, v, h * dh, dh);
      int s = ag::scale(t, ag::matmul(t, qh, kh, false, true),
                        S(1) / S(std::sqrt(double(dh))));
      heads.push_back(ag::matmul(t, ag::softmax_rows(t, s), vh));
    }
    int o = ag::concat_cols(t, heads);
    return ag::add_rowvec(t, ag::matmul(t, o, node(t, pre + "wo", trainable)),
                          node(t, pre + "bo", trainable));
  }

  int attn_sublayer(Tape& t, int x, const std::string& pre, bool trainable) {
    int u = ag::layer_norm(t, x, node(t, pre + ".ln1.g", trainable),
                           node(t, pre + ".ln1.b", trainable));
    return mha(t, u, pre + ".attn.", trainable);
  }

  int ffn_sublayer(Tape& t, int x, const std::string& pre, bool trainable) {
    int u = ag::layer_norm(t, x, node(t, pre + ".ln2.g", trainable),
                           node(t, pre + ".ln2.b", trainable));
    int h = ag::gelu(
        t, ag::add_rowvec(t, ag::matmul(t, u, node(t, pre + ".ffn.w1", trainable)),
                          node(t, pre + ".ffn.b1", trainable)));
    return ag::add_rowvec(t, ag::matmul(t, h, node(t, pre + ".ffn.w2", trainable)),
                          node(t, pre + ".ffn.b2", trainable));
  }

  int plain_block(Tape& t, int x, const std::string& pre, bool trainable) {
    x = ag::add(t, x, attn_sublayer(t, x, pre, trainable));
    x = ag::add(t, x, ffn_sublayer(t, x, pre, trainable));
    return x;
  }

  // y = x + g .* Sub((1 + gamma) .* LN(x) + beta), both sub-layers.
  int adaln_block(Tape& t, int x, int hp, const std::string& pre,
                  bool trainable, const DecodeOptions& opts) {
    const int dim = cfg.dim;
    int mod = ag::add_rowvec(t, ag::matmul(t, hp, node(t, pre + ".mod.w", trainable)),
                             node(t, pre + ".mod.b", trainable));
    const int ones = t.constant(Matrix::Ones(1, dim));
    auto chunk = [&](int k) { return ag::slice_cols(t, mod, k * dim, dim); };
    auto gate = [&](int k) {
      if (opts.force_gate_zero) return t.constant(Matrix::Zero(1, dim));
      return chunk(k);
    };

    int u = ag::layer_norm(t, x, node(t, pre + ".ln1.g", trainable),
                           node(t, pre + ".ln1.b", trainable));
    u = ag::mul_rowvec(t, u, ag::add(t, ones, chunk(0)));
    u = ag::add_rowvec(t, u, chunk(1));
    int branch = ag::mul_rowvec(t, mha(t, u, pre + ".attn.", trainable), gate(2));
    x = ag::add(t, x, branch);

    int w = ag::layer_norm(t, x, node(t, pre + ".ln2.g", trainable),
                           node(t, pre + ".ln2.b", trainable));
    w = ag::mul_rowvec(t, w, ag::add(t, ones, chunk(3)));
    w = ag::add_rowvec(t, w, chunk(4));
    int h = ag::gelu(
        t, ag::add_rowvec(t, ag::matmul(t, w, node(t, pre + ".ffn.w1", trainable)),
                          node(t, pre + ".ffn.b1", trainable)));
    int branch2 = ag::mul_rowvec(
        t,
        ag::add_rowvec(t, ag::matmul(t, h, node(t, pre + ".ffn.w2", trainable)),
                       node(t, pre + ".ffn.b2", trainable)),
        gate(5));
    return ag::add(t, x, branch2);
  }

  // Audio tokens query a single projected prompt key/value.
  int cross_sublayer(Tape& t, int x, int p, const std::string& pre,
                     bool trainable) {
    const int dh = cfg.dim / cfg.heads;
    int u = ag::layer_norm(t, x, node(t, pre + "ln.g", trainable),
                           node(t, pre + "ln.b", trainable));
    int q = ag::add_rowvec(t, ag::matmul(t, u, node(t, pre + "wq", trainable)),
                           node(t, pre + "bq", trainable));
    int k = ag::add_rowvec(t, ag::matmul(t, p, node(t, pre + "wk", trainable)),
                           node(t, pre + "bk", trainable));
    int v = ag::add_rowvec(t, ag::matmul(t, p, node(t, pre + "wv", trainable)),
                           node(t, pre + "bv", trainable));
    std::vector<int> heads;
    for (int h = 0; h < cfg.heads; ++h) {
      int qh = ag::slice_cols(t, q, h * dh, dh);
      int kh = ag::slice_cols(t, k, h * dh, dh);
      int vh = ag::slice_cols(t, v, h * dh, dh);
      int s = ag::scale(t, ag::matmul(t, qh, kh, false, true),
                        S(1) / S(std::sqrt(double(dh))));
      heads.push_back(ag::matmul(t, ag::softmax_rows(t, s), vh));
    }
    int o = ag::concat_cols(t, heads);
    return ag::add_rowvec(t, ag::matmul(t, o, node(t, pre + "wo", trainable)),
                          node(t, pre + "bo", trainable));
  }
};

// ---------------------------------------------------------------------------
// Checkpoint: little-endian container with a JSON manifest (config + tensor
// directory) followed by concatenated row-major f32 payloads.

namespace detail {
constexpr std::uint32_t kCheckpointMagic = 0x4F565344;  // "OVSD"
constexpr std::uint32_t kCheckpointVersion = 1;

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v & 0xffffffffu));
  put_u32(os, static_cast<std::uint32_t>(v >> 32));
}
inline std::uint64_t get_u64(std::istream& is) {
  const std::uint64_t lo = get_u32(is);
  const std::uint64_t hi = get_u32(is);
  return lo | (hi << 32);
}
inline void put_f32(std::ostream& os, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(os, v);
}
inline float get_f32(std::istream& is) {
  const std::uint32_t v = get_u32(is);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}
}  // namespace detail

template <typename S>
void save_checkpoint(const std::string& path, const Network<S>& net) {
  nlohmann::json tensors = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const ag::Tensor<S>* w : net.params.all()) {
    tensors[w->name] = {{"shape", {w->value.rows(), w->value.cols()}},
                        {"dtype", "f32"},
                        {"offset", offset}};
    offset += 4u * static_cast<std::uint64_t>(w->value.size());
  }
  nlohmann::json manifest = {{"format", "ovsed-checkpoint"},
                             {"config", net.cfg.to_json()},
                             {"tensors", tensors}};
  const std::string ms = manifest.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint: " + path);
  detail::put_u32(os, detail::kCheckpointMagic);
  detail::put_u32(os, detail::kCheckpointVersion);
  detail::put_u64(os, ms.size());
  os.write(ms.data(), static_cast<std::streamsize>(ms.size()));
  for (const ag::Tensor<S>* w : net.params.all())
    for (Eigen::Index r = 0; r < w->value.rows(); ++r)
      for (Eigen::Index c = 0; c < w->value.cols(); ++c)
        detail::put_f32(os, static_cast<float>(w->value(r, c)));
  if (!os) throw IoError("short write on checkpoint: " + path);
}

template <typename S = float>
Network<S> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint: " + path);
  if (detail::get_u32(is) != detail::kCheckpointMagic)
    throw ParseError("not a checkpoint file: " + path);
  if (detail::get_u32(is) != detail::kCheckpointVersion)
    throw ParseError("unsupported checkpoint version: " + path);
  const std::uint64_t mlen = detail::get_u64(is);
  std::string ms(mlen, '\0');
  is.read(ms.data(), static_cast<std::streamsize>(mlen));
  if (!is) throw ParseError("truncated checkpoint manifest: " + path);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(ms);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad checkpoint manifest: ") + e.what());
  }

  Network<S> net = Network<S>::init(ModelConfig::from_json(manifest.at("config")), 0);
  const nlohmann::json& tensors = manifest.at("tensors");
  for (ag::Tensor<S>* w : net.params.all()) {
    if (!tensors.contains(w->name))
      throw ParseError("checkpoint missing tensor: " + w->name);
    const auto& meta = tensors.at(w->name);
    if (meta.at("shape")[0].template get<Eigen::Index>() != w->value.rows() ||
        meta.at("shape")[1].template get<Eigen::Index>() != w->value.cols())
      throw ParseError("checkpoint shape mismatch for tensor: " + w->name);
  }
  if (tensors.size() != net.params.all().size())
    throw ParseError("checkpoint has extra tensors");
  for (ag::Tensor<S>* w : net.params.all())
    for (Eigen::Index r = 0; r < w->value.rows(); ++r)
      for (Eigen::Index c = 0; c < w->value.cols(); ++c)
        w->value(r, c) = S(detail::get_f32(is));
  if (!is) throw ParseError("truncated checkpoint payload: " + path);
  return net;
}

inline std::uint64_t file_digest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read file: " + path);
  std::uint64_t h = 1469598103934665603ull;
  char buf[4096];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
    if (!is) break;
  }
  return h;
}

}  // namespace ovsed

#endif  // OVSED_MODEL_HPP_

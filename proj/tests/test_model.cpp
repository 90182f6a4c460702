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

#include "ovsed/model.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "ovsed/rng.hpp"

using namespace ovsed;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

template <typename S>
ag::Mat<S> random_mat(Rng& rng, Eigen::Index rows, Eigen::Index cols,
                      double scale = 1.0) {
  ag::Mat<S> m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = S(rng.normal() * scale);
  return m;
}

ModelConfig tiny_config(Fusion f) {
  ModelConfig cfg;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.n_blocks = 2;
  cfg.n_encoder = 1;
  cfg.fusion = f;
  cfg.prompt_dim = 16;
  cfg.patch_stride_t = 2;
  cfg.n_mels = 8;
  cfg.ffn_mult = 2;
  return cfg;
}

double rel_diff(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

// Deterministic fill mirrored by the offline reference computation that
// produced the pinned posteriors in the hand-built decoder test.
ag::Mat<double> fill_pattern(int k, Eigen::Index rows, Eigen::Index cols,
                             bool gain = false) {
  ag::Mat<double> m(rows, cols);
  for (Eigen::Index i = 0; i < rows * cols; ++i) {
    const double v = std::sin(1.0 + 3.0 * double(k) + 0.7 * double(i));
    m(i / cols, i % cols) = gain ? 1.0 + 0.25 * v : 0.4 * v;
  }
  return m;
}

}  // namespace

TEST_CASE("model config validates and round-trips") {
  ModelConfig cfg;
  REQUIRE_NOTHROW(cfg.validate());

  ModelConfig bad = cfg;
  bad.heads = 5;  // 64 % 5 != 0
  REQUIRE_THROWS_AS(bad.validate(), ValidationError);

  bad = cfg;
  bad.n_encoder = bad.n_blocks;
  REQUIRE_THROWS_AS(bad.validate(), ValidationError);

  bad = cfg;
  bad.copied_decoder = true;  // requires n_encoder == n_blocks
  REQUIRE_THROWS_AS(bad.validate(), ValidationError);
  bad.n_encoder = bad.n_blocks;
  REQUIRE_NOTHROW(bad.validate());
  bad.copied_depth = 0;
  REQUIRE_THROWS_AS(bad.validate(), ValidationError);

  for (Fusion f : {Fusion::kAdalnOne, Fusion::kAdalnZero, Fusion::kTokenFusion,
                   Fusion::kCrossAttn}) {
    ModelConfig c = tiny_config(f);
    ModelConfig back = ModelConfig::from_json(c.to_json());
    REQUIRE(back.to_json() == c.to_json());
  }
  REQUIRE_THROWS_AS(fusion_from_string("sideways"), ValidationError);

  nlohmann::json j = cfg.to_json();
  j["n_layres"] = 4;
  REQUIRE_THROWS_AS(ModelConfig::from_json(j), ValidationError);
}

TEST_CASE("initialization is seeded and structured") {
  const ModelConfig cfg = tiny_config(Fusion::kAdalnOne);
  auto a = Network<float>::init(cfg, 11);
  auto b = Network<float>::init(cfg, 11);
  auto c = Network<float>::init(cfg, 12);

  bool same = true, diff = false;
  for (const auto* t : a.params.all()) {
    same = same && t->value == b.params.at(t->name).value;
    diff = diff || t->value != c.params.at(t->name).value;
  }
  REQUIRE(same);
  REQUIRE(diff);

  REQUIRE(a.params.at("enc.0.ln1.g").value.isOnes());
  REQUIRE(a.params.at("final_ln.g").value.isOnes());
  REQUIRE(a.params.at("enc.0.attn.bq").value.isZero());
  REQUIRE(a.params.at("head.b").value.isZero());
  REQUIRE(a.params.at("dec.0.mod.w").value.isZero());
  REQUIRE_FALSE(a.params.at("mod.proj.w").value.isZero());

  // Modulation bias layout: (gamma_a, beta_a, gate_a, gamma_f, beta_f, gate_f).
  const auto& mb = a.params.at("dec.0.mod.b").value;
  const int d = cfg.dim;
  REQUIRE(mb.middleCols(2 * d, d).isOnes());
  REQUIRE(mb.middleCols(5 * d, d).isOnes());
  REQUIRE(mb.leftCols(2 * d).isZero());
  REQUIRE(mb.middleCols(3 * d, 2 * d).isZero());

  auto z = Network<float>::init(tiny_config(Fusion::kAdalnZero), 11);
  REQUIRE(z.params.at("dec.0.mod.b").value.isZero());
}

TEST_CASE("parameter counts are pinned per fusion variant") {
  ModelConfig cfg;  // dim 64, 12 blocks (6/6), prompt dim 512
  auto count = [&](Fusion f) {
    cfg.fusion = f;
    return Network<float>::init(cfg, 0).params.fusion_added_count();
  };
  const auto one = count(Fusion::kAdalnOne);
  const auto zero = count(Fusion::kAdalnZero);
  const auto tok = count(Fusion::kTokenFusion);
  const auto xat = count(Fusion::kCrossAttn);
  REQUIRE(one == 182592);
  REQUIRE(zero == one);
  REQUIRE(tok == 32832);
  REQUIRE(xat == 444672);
  REQUIRE(xat > one);
  REQUIRE(one > tok);

  cfg.fusion = Fusion::kAdalnOne;
  REQUIRE(Network<float>::init(cfg, 0).params.total_count() == 1098945);

  ModelConfig cop;
  cop.copied_decoder = true;
  cop.n_encoder = cop.n_blocks;
  cop.copied_depth = 2;
  auto ccount = [&](Fusion f) {
    cop.fusion = f;
    return Network<float>::init(cop, 0).params.fusion_added_count();
  };
  REQUIRE(ccount(Fusion::kAdalnOne) == 82752);
  REQUIRE(ccount(Fusion::kTokenFusion) == 32832);
  REQUIRE(ccount(Fusion::kCrossAttn) == 148224);
}

TEST_CASE("copied decoder blocks start as copies of the last encoder blocks") {
  ModelConfig cfg = tiny_config(Fusion::kAdalnOne);
  cfg.n_blocks = 4;
  cfg.n_encoder = 4;
  cfg.copied_decoder = true;
  cfg.copied_depth = 2;
  auto net = Network<float>::init(cfg, 3);

  static const char* suffixes[] = {
      ".ln1.g",   ".ln1.b",   ".attn.wq", ".attn.bq", ".attn.wk", ".attn.bk",
      ".attn.wv", ".attn.bv", ".attn.wo", ".attn.bo", ".ln2.g",   ".ln2.b",
      ".ffn.w1",  ".ffn.b1",  ".ffn.w2",  ".ffn.b2"};
  for (int j = 0; j < 2; ++j)
    for (const char* suf : suffixes)
      REQUIRE(net.params.at("dec." + std::to_string(j) + suf).value ==
              net.params.at("enc." + std::to_string(2 + j) + suf).value);

  // Sanity: a split model's decoder blocks are freshly drawn, not copies.
  auto split = Network<float>::init(tiny_config(Fusion::kAdalnOne), 3);
  REQUIRE(split.params.at("dec.0.attn.wq").value !=
          split.params.at("enc.1.attn.wq").value);
}

TEST_CASE("encoder cache follows the patch arithmetic and is deterministic") {
  const ModelConfig cfg = tiny_config(Fusion::kAdalnOne);
  auto net = Network<float>::init(cfg, 5);
  Rng rng(99);
  const auto spec = random_mat<float>(rng, 100, cfg.n_mels);

  net.encoder_invocations = 0;
  const auto cache = net.encode_cache(spec);
  REQUIRE(net.encoder_invocations == 1);
  REQUIRE(cache.rows() == 50);  // 100 frames / stride 2
  REQUIRE(cache.cols() == cfg.dim);
  REQUIRE(cache.allFinite());

  REQUIRE(net.encode_cache(spec) == cache);
  // Trailing frames short of a full patch are dropped.
  REQUIRE(net.encode_cache(random_mat<float>(rng, 103, cfg.n_mels)).rows() ==
          51);

  REQUIRE_THROWS_AS(net.encode_cache(random_mat<float>(rng, 10, 5)),
                    ValidationError);
  REQUIRE_THROWS_AS(net.encode_cache(random_mat<float>(rng, 1, cfg.n_mels)),
                    ValidationError);
}

TEST_CASE("adaln-one starts as the unconditioned baseline") {
  auto net = Network<double>::init(tiny_config(Fusion::kAdalnOne), 21);
  Rng rng(7);
  const auto cache = net.encode_cache(random_mat<double>(rng, 40, 8));

  std::vector<double> base;
  {
    ag::Tape<double> t;
    base = Network<double>::squash(
        t.val(net.graph_baseline_logits(t, t.constant(cache), false)));
  }
  for (int k = 0; k < 10; ++k) {
    const auto p = random_mat<double>(rng, 1, 16, 2.0);
    const auto out = net.decode_posteriors(cache, p);
    REQUIRE(out.size() == base.size());
    for (std::size_t i = 0; i < out.size(); ++i)
      REQUIRE(rel_diff(out[i], base[i]) <= 1e-6);
  }
}

TEST_CASE("forcing the gates to zero reduces to norm plus head") {
  auto net = Network<double>::init(tiny_config(Fusion::kAdalnZero), 33);
  Rng rng(13);
  // Give the modulation path nonzero weights so the override actually bites.
  net.params.at("dec.0.mod.w").value = random_mat<double>(rng, 8, 48, 0.3);
  net.params.at("dec.0.mod.b").value = random_mat<double>(rng, 1, 48, 0.3);

  const auto cache = net.encode_cache(random_mat<double>(rng, 20, 8));
  DecodeOptions opts;
  opts.force_gate_zero = true;

  // Independent recompute: layer norm of the cache rows, then the head.
  const auto& g = net.params.at("final_ln.g").value;
  const auto& b = net.params.at("final_ln.b").value;
  const auto& hw = net.params.at("head.w").value;
  const double hb = net.params.at("head.b").value(0, 0);
  for (const auto p :
       {random_mat<double>(rng, 1, 16), random_mat<double>(rng, 1, 16)}) {
    const auto out = net.decode_posteriors(cache, p, opts);
    for (Eigen::Index r = 0; r < cache.rows(); ++r) {
      const double mu = cache.row(r).mean();
      const double var = (cache.row(r).array() - mu).square().sum() / 8.0;
      Eigen::RowVectorXd xn =
          ((cache.row(r).array() - mu) / std::sqrt(var + 1e-5)) * g.array() +
          b.array();
      const double z = xn.dot(hw.col(0)) + hb;
      REQUIRE(rel_diff(out[std::size_t(r)], 1.0 / (1.0 + std::exp(-z))) <=
              1e-6);
    }
  }
}

TEST_CASE("hand-built tiny decoder matches an independent computation") {
  ModelConfig cfg;
  cfg.dim = 2;
  cfg.heads = 1;
  cfg.n_blocks = 2;
  cfg.n_encoder = 1;
  cfg.fusion = Fusion::kAdalnOne;
  cfg.prompt_dim = 2;
  cfg.patch_stride_t = 1;
  cfg.n_mels = 2;
  cfg.ffn_mult = 2;
  auto net = Network<double>::init(cfg, 0);

  const struct {
    const char* name;
    int rows, cols;
    bool gain;
  } plan[] = {
      {"dec.0.ln1.g", 1, 2, true},   {"dec.0.ln1.b", 1, 2, false},
      {"dec.0.attn.wq", 2, 2, false}, {"dec.0.attn.bq", 1, 2, false},
      {"dec.0.attn.wk", 2, 2, false}, {"dec.0.attn.bk", 1, 2, false},
      {"dec.0.attn.wv", 2, 2, false}, {"dec.0.attn.bv", 1, 2, false},
      {"dec.0.attn.wo", 2, 2, false}, {"dec.0.attn.bo", 1, 2, false},
      {"dec.0.ln2.g", 1, 2, true},   {"dec.0.ln2.b", 1, 2, false},
      {"dec.0.ffn.w1", 2, 4, false}, {"dec.0.ffn.b1", 1, 4, false},
      {"dec.0.ffn.w2", 4, 2, false}, {"dec.0.ffn.b2", 1, 2, false},
      {"final_ln.g", 1, 2, true},    {"final_ln.b", 1, 2, false},
      {"head.w", 2, 1, false},       {"head.b", 1, 1, false},
      {"mod.proj.w", 2, 2, false},   {"mod.proj.b", 1, 2, false},
      {"dec.0.mod.w", 2, 12, false}, {"dec.0.mod.b", 1, 12, false},
  };
  for (int k = 0; k < 24; ++k)
    net.params.at(plan[k].name).value =
        fill_pattern(k, plan[k].rows, plan[k].cols, plan[k].gain);

  ag::Mat<double> prompt(1, 2);
  prompt << 0.9, -0.6;

  ag::Mat<double> one(1, 2);
  one << 0.8, -0.45;
  const auto single = net.decode_posteriors(one, prompt);
  REQUIRE(single.size() == 1);
  REQUIRE(single[0] == Catch::Approx(0.52915055627514385).margin(1e-10));

  ag::Mat<double> three(3, 2);
  three << 0.8, -0.45, 0.1, 0.6, -0.7, 0.2;
  const auto triple = net.decode_posteriors(three, prompt);
  const double want[] = {0.52915053993134176, 0.55130078616844824,
                         0.55130118169878239};
  REQUIRE(triple.size() == 3);
  for (int i = 0; i < 3; ++i)
    REQUIRE(triple[std::size_t(i)] == Catch::Approx(want[i]).margin(1e-10));
}

TEST_CASE("every fusion variant yields valid prompt-sensitive posteriors") {
  Rng rng(55);
  const auto spec = random_mat<float>(rng, 60, 8);
  const auto p1 = random_mat<float>(rng, 1, 16);
  const auto p2 = random_mat<float>(rng, 1, 16);

  for (Fusion f : {Fusion::kTokenFusion, Fusion::kCrossAttn}) {
    auto net = Network<float>::init(tiny_config(f), 17);
    const auto cache = net.encode_cache(spec);
    const auto a = net.decode_posteriors(cache, p1);
    const auto b = net.decode_posteriors(cache, p2);
    float max_diff = 0.f;
    for (std::size_t i = 0; i < a.size(); ++i) {
      REQUIRE(a[i] >= 0.f);
      REQUIRE(a[i] <= 1.f);
      max_diff = std::max(max_diff, std::abs(a[i] - b[i]));
    }
    INFO("fusion " << to_string(f));
    REQUIRE(max_diff > 0.f);
  }

  // Raising the head bias raises every posterior (logit shift is monotone).
  auto net = Network<float>::init(tiny_config(Fusion::kAdalnOne), 17);
  const auto cache = net.encode_cache(spec);
  const auto before = net.decode_posteriors(cache, p1);
  net.params.at("head.b").value(0, 0) += 0.5f;
  const auto after = net.decode_posteriors(cache, p1);
  for (std::size_t i = 0; i < before.size(); ++i)
    REQUIRE(after[i] > before[i]);
}

TEST_CASE("multi-prompt inference reuses a single encoder pass") {
  auto net = Network<float>::init(tiny_config(Fusion::kCrossAttn), 29);
  Rng rng(3);
  const auto spec = random_mat<float>(rng, 80, 8);
  std::vector<ag::Mat<float>> prompts;
  for (int i = 0; i < 5; ++i) prompts.push_back(random_mat<float>(rng, 1, 16));

  net.encoder_invocations = 0;
  InferStats<float> stats;
  const auto multi = net.infer_multi(spec, prompts, &stats);
  REQUIRE(net.encoder_invocations == 1);
  REQUIRE(stats.encoder_calls == 1);
  REQUIRE(stats.encoder_tape_bytes > 0);
  REQUIRE(stats.max_decode_tape_bytes > 0);
  REQUIRE(stats.max_decode_tape_bytes < stats.total_decode_tape_bytes);
  REQUIRE(stats.peak_bytes() ==
          stats.encoder_tape_bytes + stats.max_decode_tape_bytes);

  const auto cache = net.encode_cache(spec);
  REQUIRE(multi.size() == prompts.size());
  for (std::size_t q = 0; q < prompts.size(); ++q) {
    const auto solo = net.decode_posteriors(cache, prompts[q]);
    REQUIRE(solo.size() == multi[q].size());
    for (std::size_t i = 0; i < solo.size(); ++i)
      REQUIRE(rel_diff(multi[q][i], solo[i]) <= 1e-6);
  }

  REQUIRE_THROWS_AS(net.infer_multi(spec, {}), ValidationError);
}

TEST_CASE("gradients reach the modulation path and scale linearly") {
  auto net = Network<double>::init(tiny_config(Fusion::kAdalnOne), 41);
  Rng rng(19);
  const auto spec = random_mat<double>(rng, 40, 8);
  const auto p1 = random_mat<double>(rng, 1, 16);
  const auto p2 = random_mat<double>(rng, 1, 16);
  const auto cache = net.encode_cache(spec);
  ag::Mat<double> targets = random_mat<double>(rng, cache.rows(), 1);
  targets = targets.unaryExpr([](double v) { return v > 0 ? 1.0 : 0.0; });

  auto run_backward = [&](double seed) {
    net.params.zero_grads();
    ag::Tape<double> t;
    int z = net.graph_decoder_logits(t, t.constant(cache), p1, true);
    t.backward(ag::bce_logits_sum(t, z, targets), seed);
  };

  run_backward(1.0);
  REQUIRE(net.params.at("dec.0.mod.w").grad.norm() > 0.0);
  REQUIRE(net.params.at("dec.0.mod.b").grad.norm() > 0.0);
  const auto g1 = net.params.at("dec.0.ffn.w1").grad;
  const auto m1 = net.params.at("dec.0.mod.w").grad;

  run_backward(2.0);
  REQUIRE((net.params.at("dec.0.ffn.w1").grad - 2.0 * g1).norm() <=
          1e-12 * std::max(1.0, g1.norm()));
  REQUIRE((net.params.at("dec.0.mod.w").grad - 2.0 * m1).norm() <=
          1e-12 * std::max(1.0, m1.norm()));

  // One descent step makes the decoder prompt-sensitive.
  for (auto* w : net.params.all()) w->value -= 0.05 * w->grad;
  const auto a = net.decode_posteriors(cache, p1);
  const auto b = net.decode_posteriors(cache, p2);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    max_diff = std::max(max_diff, std::abs(a[i] - b[i]));
  REQUIRE(max_diff > 1e-9);
}

TEST_CASE("zeroed head sees the mean bce gradient at its bias") {
  auto net = Network<double>::init(tiny_config(Fusion::kAdalnOne), 47);
  net.params.at("head.w").value.setZero();  // logits collapse to head.b = 0
  Rng rng(23);
  const auto cache = net.encode_cache(random_mat<double>(rng, 16, 8));
  const auto p = random_mat<double>(rng, 1, 16);
  REQUIRE(cache.rows() == 8);

  ag::Mat<double> targets(8, 1);
  targets << 1, 0, 1, 0, 1, 1, 0, 0;  // balanced
  net.params.zero_grads();
  {
    ag::Tape<double> t;
    int z = net.graph_decoder_logits(t, t.constant(cache), p, true);
    t.backward(ag::bce_logits_sum(t, z, targets), 1.0 / 8.0);
  }
  REQUIRE(net.params.at("head.b").grad(0, 0) == Catch::Approx(0.0).margin(1e-12));

  targets << 1, 0, 0, 0, 1, 1, 0, 0;  // 3 of 8 positive
  net.params.zero_grads();
  {
    ag::Tape<double> t;
    int z = net.graph_decoder_logits(t, t.constant(cache), p, true);
    t.backward(ag::bce_logits_sum(t, z, targets), 1.0 / 8.0);
  }
  REQUIRE(net.params.at("head.b").grad(0, 0) ==
          Catch::Approx(0.125).margin(1e-12));  // mean(0.5 - y)
}

TEST_CASE("checkpoints round trip exactly") {
  const auto path = temp_path("ovsed_ckpt_roundtrip.bin");
  auto net = Network<float>::init(tiny_config(Fusion::kTokenFusion), 61);
  save_checkpoint(path, net);

  auto back = load_checkpoint<float>(path);
  REQUIRE(back.cfg.to_json() == net.cfg.to_json());
  for (const auto* t : net.params.all())
    REQUIRE(back.params.at(t->name).value == t->value);

  // Re-saving the loaded model produces a byte-identical file.
  const auto path2 = temp_path("ovsed_ckpt_roundtrip2.bin");
  save_checkpoint(path2, back);
  REQUIRE(file_digest(path) == file_digest(path2));

  save_checkpoint(path2, Network<float>::init(tiny_config(Fusion::kTokenFusion), 62));
  REQUIRE(file_digest(path) != file_digest(path2));

  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("checkpoint loading rejects damage") {
  REQUIRE_THROWS_AS(load_checkpoint<float>(temp_path("ovsed_no_such.bin")),
                    IoError);

  const auto path = temp_path("ovsed_ckpt_damage.bin");
  auto net = Network<float>::init(tiny_config(Fusion::kAdalnOne), 71);
  save_checkpoint(path, net);

  std::string bytes;
  {
    std::ifstream is(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(is), {});
  }

  {
    std::string wrong = bytes;
    wrong[0] = 'X';
    std::ofstream os(path, std::ios::binary);
    os.write(wrong.data(), std::streamsize(wrong.size()));
  }
  REQUIRE_THROWS_AS(load_checkpoint<float>(path), ParseError);

  {
    std::ofstream os(path, std::ios::binary);
    os.write(bytes.data(), std::streamsize(bytes.size() - 10));
  }
  REQUIRE_THROWS_AS(load_checkpoint<float>(path), ParseError);

  std::filesystem::remove(path);
}

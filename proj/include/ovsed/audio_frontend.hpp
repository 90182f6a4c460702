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

// 64-band log-Mel frontend (10 ms hop, 32 ms Hann window) plus the two
// training-time spectrogram augmentations: aligned circular time shift and
// piecewise-linear filter gain.

#ifndef OVSED_AUDIO_FRONTEND_HPP_
#define OVSED_AUDIO_FRONTEND_HPP_

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <unsupported/Eigen/FFT>

#include "ovsed/common.hpp"
#include "ovsed/rng.hpp"

namespace ovsed {

struct MelSpectrogram {
  ClipId clip_id;
  Eigen::MatrixXf frames;        // T x n_mels, natural-log energies
  double frame_rate = 100.0;     // Hz
};

struct MelOptions {
  int sample_rate = 16000;
  int win = 512;       // 32 ms
  int hop = 160;       // 10 ms
  int n_mels = 64;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = 1e-10;  // energy floor before the natural log
};

namespace melmath {
// HTK Mel scale.
inline double hz_to_mel(double hz) {
  return 2595.0 * std::log10(1.0 + hz / 700.0);
}
inline double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}
}  // namespace melmath

class MelExtractor {
 public:
  explicit MelExtractor(MelOptions opt = {}) : opt_(opt) {
    build_window();
    build_filterbank();
  }

  const MelOptions& options() const { return opt_; }

  // Triangular filter center frequencies, useful for picking the band that
  // contains a given tone.
  const std::vector<double>& band_centers_hz() const { return centers_hz_; }

  MelSpectrogram melspec(const std::vector<float>& waveform,
                         const ClipId& clip_id = {}) const {
    const int n = static_cast<int>(waveform.size());
    if (n < opt_.win)
      throw ValidationError("melspec: waveform shorter than one window (" +
                            std::to_string(n) + " < " +
                            std::to_string(opt_.win) + " samples)");
    const int n_frames = (n - opt_.win) / opt_.hop + 1;
    const int n_bins = opt_.win / 2 + 1;

    MelSpectrogram out;
    out.clip_id = clip_id;
    out.frame_rate = static_cast<double>(opt_.sample_rate) / opt_.hop;
    out.frames.resize(n_frames, opt_.n_mels);

    Eigen::FFT<float> fft;
    std::vector<float> buf(opt_.win);
    std::vector<std::complex<float>> spec(opt_.win);
    std::vector<double> power(n_bins);
    for (int t = 0; t < n_frames; ++t) {
      const int off = t * opt_.hop;
      for (int i = 0; i < opt_.win; ++i) buf[i] = waveform[off + i] * window_[i];
      fft.fwd(spec, buf);
      for (int b = 0; b < n_bins; ++b)
        power[b] = static_cast<double>(std::norm(spec[b]));
      for (int m = 0; m < opt_.n_mels; ++m) {
        double e = 0.0;
        const auto& f = filters_[m];
        for (std::size_t k = 0; k < f.weights.size(); ++k)
          e += f.weights[k] * power[f.first_bin + static_cast<int>(k)];
        out.frames(t, m) =
            static_cast<float>(std::log(std::max(e, opt_.log_floor)));
      }
    }
    if (!out.frames.allFinite())
      throw NumericError("melspec: non-finite output for clip " + clip_id);
    return out;
  }

 private:
  struct Filter {
    int first_bin = 0;
    std::vector<double> weights;
  };

  void build_window() {
    window_.resize(opt_.win);
    for (int i = 0; i < opt_.win; ++i)
      window_[i] = static_cast<float>(
          0.5 - 0.5 * std::cos(2.0 * 3.14159265358979323846 * i / opt_.win));
  }

  // Triangular filters with unit peak, edges uniform on the Mel scale.
  void build_filterbank() {
    const int n_bins = opt_.win / 2 + 1;
    const double bin_hz =
        static_cast<double>(opt_.sample_rate) / opt_.win;
    const double mel_lo = melmath::hz_to_mel(opt_.fmin);
    const double mel_hi = melmath::hz_to_mel(opt_.fmax);
    std::vector<double> edges(opt_.n_mels + 2);
    for (int i = 0; i < opt_.n_mels + 2; ++i)
      edges[i] = melmath::mel_to_hz(mel_lo +
                                    (mel_hi - mel_lo) * i / (opt_.n_mels + 1));
    filters_.resize(opt_.n_mels);
    centers_hz_.resize(opt_.n_mels);
    for (int m = 0; m < opt_.n_mels; ++m) {
      const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
      centers_hz_[m] = mid;
      Filter f;
      f.first_bin = std::max(0, static_cast<int>(std::ceil(lo / bin_hz)));
      for (int b = f.first_bin; b < n_bins; ++b) {
        const double hz = b * bin_hz;
        if (hz >= hi) break;
        double w = 0.0;
        if (hz >= lo && hz < mid && mid > lo)
          w = (hz - lo) / (mid - lo);
        else if (hz >= mid)
          w = (hi - hz) / (hi - mid);
        f.weights.push_back(w);
      }
      filters_[m] = std::move(f);
    }
  }

  MelOptions opt_;
  std::vector<float> window_;
  std::vector<Filter> filters_;
  std::vector<double> centers_hz_;
};

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
  bool frame_shift = false;
  bool filter_aug = false;
  double max_shift_frac = 0.10;  // of the clip length
  int knots_min = 2;
  int knots_max = 5;
  double gain_range = 6.0;       // +- in the natural-log domain
  int label_stride = 4;          // spectrogram frames per label frame
};

/// Circular time rotation, applied jointly: the spectrogram moves by
// k * label_stride frontend frames and the label raster by k frames, so the
// two stay aligned. Positive k moves content toward later times.
inline void rotate_time(Eigen::MatrixXf& spec, Eigen::MatrixXf* raster, int k,
                        int label_stride) {
  const int t_spec = static_cast<int>(spec.rows());
  if (t_spec == 0) return;
  int s = ((k * label_stride) % t_spec + t_spec) % t_spec;
  if (s != 0) {
    Eigen::MatrixXf rotated(spec.rows(), spec.cols());
    rotated.topRows(s) = spec.bottomRows(s);
    rotated.bottomRows(t_spec - s) = spec.topRows(t_spec - s);
    spec = std::move(rotated);
  }
  if (raster && raster->cols() > 0) {
    const int t_lab = static_cast<int>(raster->cols());
    int r = (k % t_lab + t_lab) % t_lab;
    if (r != 0) {
      Eigen::MatrixXf rotated(raster->rows(), raster->cols());
      rotated.leftCols(r) = raster->rightCols(r);
      rotated.rightCols(t_lab - r) = raster->leftCols(t_lab - r);
      *raster = std::move(rotated);
    }
  }
}

// Piecewise-linear gain over the Mel bands, added in the log domain. The
// first and last knots sit on the edge bands so two knots with equal gains
// give a constant offset.
inline void apply_filter_gain(Eigen::MatrixXf& spec,
                              const std::vector<double>& knot_bands,
                              const std::vector<double>& knot_gains) {
  const int n_mels = static_cast<int>(spec.cols());
  Eigen::VectorXf gain(n_mels);
  for (int m = 0; m < n_mels; ++m) {
    std::size_t j = 1;
    while (j + 1 < knot_bands.size() && knot_bands[j] < m) ++j;
    const double x0 = knot_bands[j - 1], x1 = knot_bands[j];
    const double g0 = knot_gains[j - 1], g1 = knot_gains[j];
    double w = x1 > x0 ? (m - x0) / (x1 - x0) : 0.0;
    w = std::clamp(w, 0.0, 1.0);
    gain(m) = static_cast<float>(g0 + (g1 - g0) * w);
  }
  spec.rowwise() += gain.transpose();
}

// Applies the enabled augmentations in place; deterministic given rng.
// Returns the time shift used (in label frames), 0 when disabled.
inline int augment(Eigen::MatrixXf& spec, Eigen::MatrixXf* raster,
                   const AugmentConfig& cfg, Rng& rng) {
  int shift = 0;
  if (cfg.frame_shift) {
    const int t_lab =
        std::max(1, static_cast<int>(spec.rows()) / cfg.label_stride);
    const int max_k = static_cast<int>(cfg.max_shift_frac * t_lab);
    if (max_k > 0) shift = static_cast<int>(rng.uniform_int(-max_k, max_k));
    rotate_time(spec, raster, shift, cfg.label_stride);
  }
  if (cfg.filter_aug) {
    const int n_mels = static_cast<int>(spec.cols());
    const int k =
        static_cast<int>(rng.uniform_int(cfg.knots_min, cfg.knots_max));
    std::vector<double> bands{0.0};
    for (int i = 0; i < k - 2; ++i)
      bands.push_back(rng.uniform(0.0, n_mels - 1.0));
    bands.push_back(n_mels - 1.0);
    std::sort(bands.begin(), bands.end());
    std::vector<double> gains;
    for (int i = 0; i < k; ++i)
      gains.push_back(rng.uniform(-cfg.gain_range, cfg.gain_range));
    apply_filter_gain(spec, bands, gains);
  }
  return shift;
}

// ---------------------------------------------------------------------------
// On-disk spectrogram cache: one binary record per clip.
// Layout: u32 id_len, id bytes, u32 T, u32 n_mels, row-major LE f32 payload.

inline void write_spec_record(std::ostream& out, const MelSpectrogram& spec) {
  const auto id_len = static_cast<std::uint32_t>(spec.clip_id.size());
  const auto rows = static_cast<std::uint32_t>(spec.frames.rows());
  const auto cols = static_cast<std::uint32_t>(spec.frames.cols());
  out.write(reinterpret_cast<const char*>(&id_len), 4);
  out.write(spec.clip_id.data(), id_len);
  out.write(reinterpret_cast<const char*>(&rows), 4);
  out.write(reinterpret_cast<const char*>(&cols), 4);
  for (std::uint32_t r = 0; r < rows; ++r)
    for (std::uint32_t c = 0; c < cols; ++c) {
      const float v = spec.frames(r, c);
      out.write(reinterpret_cast<const char*>(&v), 4);
    }
}

inline MelSpectrogram read_spec_record(std::istream& in) {
  std::uint32_t id_len = 0, rows = 0, cols = 0;
  in.read(reinterpret_cast<char*>(&id_len), 4);
  if (!in) throw ParseError("spec record: truncated header");
  std::string id(id_len, '\0');
  in.read(id.data(), id_len);
  in.read(reinterpret_cast<char*>(&rows), 4);
  in.read(reinterpret_cast<char*>(&cols), 4);
  if (!in) throw ParseError("spec record: truncated header");
  MelSpectrogram spec;
  spec.clip_id = id;
  spec.frames.resize(rows, cols);
  for (std::uint32_t r = 0; r < rows; ++r)
    for (std::uint32_t c = 0; c < cols; ++c) {
      float v = 0;
      in.read(reinterpret_cast<char*>(&v), 4);
      spec.frames(r, c) = v;
    }
  if (!in) throw ParseError("spec record: truncated payload");
  return spec;
}

}  // namespace ovsed

#endif  // OVSED_AUDIO_FRONTEND_HPP_

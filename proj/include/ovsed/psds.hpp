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

// Threshold-free PSDS1 evaluation. Detection sets only change at observed
// score values, so each clip is swept once in descending score order while
// active frame runs grow and merge (union-find); every change point yields a
// (false-positive, true-positive) snapshot. Class curves are the monotone
// upper envelopes of the merged operating points, integrated to e_max.
//
// All intersection arithmetic is in integer microseconds so results carry no
// summation-order noise; the DTC/GTC comparisons against rho * duration are
// the only floating-point steps and use one fixed expression.

#ifndef OVSED_PSDS_HPP_
#define OVSED_PSDS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "ovsed/common.hpp"

namespace ovsed {

struct PsdsParams {
  double rho_dtc = 0.7;
  double rho_gtc = 0.7;
  double alpha_st = 0.0;
  double e_max = 100.0;  // FP per hour
  int median_window = 7;
  double frame_rate = 25.0;

  void validate() const {
    if (rho_dtc <= 0 || rho_dtc > 1 || rho_gtc <= 0 || rho_gtc > 1)
      throw ValidationError("psds: rho must be in (0, 1]");
    if (e_max <= 0) throw ValidationError("psds: e_max must be positive");
    if (median_window < 1 || median_window % 2 == 0)
      throw ValidationError("psds: median_window must be odd and >= 1");
    if (frame_rate <= 0) throw ValidationError("psds: bad frame rate");
  }

  nlohmann::json to_json() const {
    return {{"rho_dtc", rho_dtc},     {"rho_gtc", rho_gtc},
            {"alpha_st", alpha_st},   {"e_max", e_max},
            {"median_window", median_window}, {"frame_rate", frame_rate}};
  }
  static PsdsParams from_json(const nlohmann::json& j) {
    static const std::vector<std::string> known = {
        "rho_dtc", "rho_gtc", "alpha_st", "e_max", "median_window",
        "frame_rate"};
    for (auto it = j.begin(); it != j.end(); ++it)
      if (std::find(known.begin(), known.end(), it.key()) == known.end())
        throw ValidationError("psds params: unknown key '" + it.key() + "'");
    PsdsParams p;
    p.rho_dtc = j.value("rho_dtc", p.rho_dtc);
    p.rho_gtc = j.value("rho_gtc", p.rho_gtc);
    p.alpha_st = j.value("alpha_st", p.alpha_st);
    p.e_max = j.value("e_max", p.e_max);
    p.median_window = j.value("median_window", p.median_window);
    p.frame_rate = j.value("frame_rate", p.frame_rate);
    p.validate();
    return p;
  }
};

struct MemoryMeter {
  std::size_t current = 0;
  std::size_t peak = 0;
  std::size_t streamed = 0;
  void charge(std::size_t b) {
    current += b;
    peak = std::max(peak, current);
  }
  void release(std::size_t b) { current -= std::min(b, current); }
};

// Sliding median with reflected edges: index -k maps to k, T-1+k to T-1-k.
inline std::vector<float> median_filter(const std::vector<float>& v, int w) {
  if (w < 1 || w % 2 == 0)
    throw ValidationError("median_filter: window must be odd and >= 1");
  if (w == 1 || v.empty()) return v;
  const int n = static_cast<int>(v.size());
  const int half = w / 2;
  std::vector<float> out(v.size());
  std::vector<float> win(static_cast<std::size_t>(w));
  for (int t = 0; t < n; ++t) {
    for (int k = -half; k <= half; ++k) {
      int i = t + k;
      while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * (n - 1) - i;
        if (n == 1) i = 0;
      }
      win[static_cast<std::size_t>(k + half)] = v[static_cast<std::size_t>(i)];
    }
    std::nth_element(win.begin(), win.begin() + half, win.end());
    out[static_cast<std::size_t>(t)] = win[static_cast<std::size_t>(half)];
  }
  return out;
}

// Maximal runs with value >= threshold become [onset, offset) in seconds.
inline std::vector<std::pair<double, double>> decode_events(
    const std::vector<float>& v, double threshold, double frame_rate = 25.0) {
  std::vector<std::pair<double, double>> out;
  const int n = static_cast<int>(v.size());
  int start = -1;
  for (int t = 0; t <= n; ++t) {
    const bool on = t < n && static_cast<double>(v[static_cast<std::size_t>(t)]) >= threshold;
    if (on && start < 0) start = t;
    if (!on && start >= 0) {
      out.emplace_back(start / frame_rate, t / frame_rate);
      start = -1;
    }
  }
  return out;
}

struct RocPoint {
  double efpr = 0;
  double tpr = 0;
};

struct RocCurve {
  ClassId class_id;
  std::vector<RocPoint> points;  // envelope breakpoints, ascending efpr
  std::int64_t n_gt = 0;
  double hours = 0;

  // env(e) = tpr of the last breakpoint at or below e, 0 before the first.
  double at(double e) const {
    double v = 0;
    for (const RocPoint& p : points) {
      if (p.efpr > e) break;
      v = p.tpr;
    }
    return v;
  }

  double auc_normalized(double e_max) const {
    double area = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double e0 = std::min(points[i].efpr, e_max);
      const double e1 =
          i + 1 < points.size() ? std::min(points[i + 1].efpr, e_max) : e_max;
      if (e1 > e0) area += (e1 - e0) * points[i].tpr;
    }
    return area / e_max;
  }
};

// One class's evaluation input: per clip, the raw (unfiltered) score curve
// plus that clip's same-class ground-truth events.
struct ClassEvalInput {
  struct Clip {
    ClipId clip_id;
    std::vector<float> scores;
    std::vector<std::pair<double, double>> truth;  // seconds
    double duration_s = 0;
  };
  ClassId class_id;
  std::vector<Clip> clips;
};

namespace detail_psds {

constexpr double kUsPerSec = 1e6;

inline std::int64_t to_us(double seconds) {
  return static_cast<std::int64_t>(std::llround(seconds * kUsPerSec));
}

// Shared verdict expressions; the dense-grid oracle uses the same ones so
// that boundary cases cannot diverge between implementations.
inline bool dtc_pass(std::int64_t inter_us, std::int64_t det_dur_us,
                     double rho) {
  return static_cast<double>(inter_us) >=
         rho * static_cast<double>(det_dur_us);
}
inline bool gtc_pass(std::int64_t covered_us, std::int64_t gt_dur_us,
                     double rho) {
  return static_cast<double>(covered_us) >=
         rho * static_cast<double>(gt_dur_us);
}

struct Snapshot {
  float theta;
  std::int32_t fp;
  std::int32_t tp;
};

// Descending sweep over one clip: frames activate as the threshold passes
// their value, runs merge through union-find, and every distinct value
// yields a snapshot of (FP, TP) for this clip.
class ClipSweep {
 public:
  ClipSweep(const std::vector<float>& filtered,
            const std::vector<std::pair<std::int64_t, std::int64_t>>& gts_us,
            std::int64_t frame_us, const PsdsParams& p)
      : v_(filtered), frame_us_(frame_us), p_(p) {
    const int n = static_cast<int>(v_.size());
    parent_.assign(static_cast<std::size_t>(n), -1);
    len_.assign(static_cast<std::size_t>(n), 0);
    inter_.assign(static_cast<std::size_t>(n), 0);
    counted_.assign(static_cast<std::size_t>(n), 0);
    passing_.assign(static_cast<std::size_t>(n), 0);
    rgts_.assign(static_cast<std::size_t>(n), {});
    dcov_.assign(static_cast<std::size_t>(n), 0);
    gfr_.assign(static_cast<std::size_t>(n), {});
    for (int j = 0; j < static_cast<int>(gts_us.size()); ++j) {
      const auto [s, e] = gts_us[static_cast<std::size_t>(j)];
      gt_dur_.push_back(e - s);
      covered_.push_back(0);
      gt_tp_.push_back(0);
      if (e <= s) continue;
      const int t0 = std::max<std::int64_t>(0, s / frame_us_);
      const int t1 = static_cast<int>(
          std::min<std::int64_t>(n, (e + frame_us_ - 1) / frame_us_));
      for (int t = t0; t < t1; ++t) {
        const std::int64_t lo = std::max<std::int64_t>(s, std::int64_t(t) * frame_us_);
        const std::int64_t hi =
            std::min<std::int64_t>(e, (std::int64_t(t) + 1) * frame_us_);
        if (hi > lo) {
          dcov_[static_cast<std::size_t>(t)] += hi - lo;
          gfr_[static_cast<std::size_t>(t)].emplace_back(j, hi - lo);
        }
      }
    }
  }

  std::size_t bytes() const {
    const std::size_t n = v_.size();
    return n * (sizeof(float) + sizeof(std::int32_t) * 2 +
                sizeof(std::int64_t) * 2 + 2 +
                sizeof(std::vector<std::pair<int, std::int64_t>>) * 2) +
           gt_dur_.size() * 24;
  }

  // Runs the full sweep; emits one snapshot per distinct score value,
  // descending.
  std::vector<Snapshot> run() {
    const int n = static_cast<int>(v_.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      const float va = v_[static_cast<std::size_t>(a)];
      const float vb = v_[static_cast<std::size_t>(b)];
      return va != vb ? va > vb : a < b;
    });
    std::vector<Snapshot> snaps;
    std::size_t i = 0;
    while (i < order.size()) {
      const float theta = v_[static_cast<std::size_t>(order[i])];
      dirty_.clear();
      affected_.clear();
      while (i < order.size() &&
             v_[static_cast<std::size_t>(order[i])] == theta) {
        activate(order[i]);
        ++i;
      }
      for (int d : dirty_) {
        const int r = find(d);
        if (!counted_[static_cast<std::size_t>(r)]) count(r);
      }
      for (int j : affected_) {
        const bool now = gtc_pass(covered_[static_cast<std::size_t>(j)],
                                  gt_dur_[static_cast<std::size_t>(j)],
                                  p_.rho_gtc);
        if (now != (gt_tp_[static_cast<std::size_t>(j)] != 0)) {
          gt_tp_[static_cast<std::size_t>(j)] = now ? 1 : 0;
          n_tp_ += now ? 1 : -1;
        }
      }
      snaps.push_back(Snapshot{theta, n_fp_, n_tp_});
    }
    return snaps;
  }

 private:
  int find(int t) {
    while (parent_[static_cast<std::size_t>(t)] != t) {
      parent_[static_cast<std::size_t>(t)] =
          parent_[static_cast<std::size_t>(parent_[static_cast<std::size_t>(t)])];
      t = parent_[static_cast<std::size_t>(t)];
    }
    return t;
  }

  void uncount(int r) {
    if (!counted_[static_cast<std::size_t>(r)]) return;
    counted_[static_cast<std::size_t>(r)] = 0;
    if (passing_[static_cast<std::size_t>(r)]) {
      for (const auto& [j, us] : rgts_[static_cast<std::size_t>(r)]) {
        covered_[static_cast<std::size_t>(j)] -= us;
        affected_.insert(j);
      }
    } else {
      --n_fp_;
    }
  }

  void count(int r) {
    const bool pass =
        dtc_pass(inter_[static_cast<std::size_t>(r)],
                 std::int64_t(len_[static_cast<std::size_t>(r)]) * frame_us_,
                 p_.rho_dtc);
    passing_[static_cast<std::size_t>(r)] = pass ? 1 : 0;
    counted_[static_cast<std::size_t>(r)] = 1;
    if (pass) {
      for (const auto& [j, us] : rgts_[static_cast<std::size_t>(r)]) {
        covered_[static_cast<std::size_t>(j)] += us;
        affected_.insert(j);
      }
    } else {
      ++n_fp_;
    }
  }

  int merge(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return a;
    uncount(a);
    uncount(b);
    if (len_[static_cast<std::size_t>(a)] < len_[static_cast<std::size_t>(b)])
      std::swap(a, b);
    parent_[static_cast<std::size_t>(b)] = a;
    len_[static_cast<std::size_t>(a)] += len_[static_cast<std::size_t>(b)];
    inter_[static_cast<std::size_t>(a)] += inter_[static_cast<std::size_t>(b)];
    auto& ga = rgts_[static_cast<std::size_t>(a)];
    auto& gb = rgts_[static_cast<std::size_t>(b)];
    for (const auto& e : gb) {
      bool merged = false;
      for (auto& f : ga) {
        if (f.first == e.first) {
          f.second += e.second;
          merged = true;
          break;
        }
      }
      if (!merged) ga.push_back(e);
    }
    gb.clear();
    gb.shrink_to_fit();
    return a;
  }

  void activate(int t) {
    parent_[static_cast<std::size_t>(t)] = t;
    len_[static_cast<std::size_t>(t)] = 1;
    inter_[static_cast<std::size_t>(t)] = dcov_[static_cast<std::size_t>(t)];
    rgts_[static_cast<std::size_t>(t)] = gfr_[static_cast<std::size_t>(t)];
    counted_[static_cast<std::size_t>(t)] = 0;
    int r = t;
    if (t > 0 && parent_[static_cast<std::size_t>(t - 1)] >= 0)
      r = merge(r, t - 1);
    if (t + 1 < static_cast<int>(v_.size()) &&
        parent_[static_cast<std::size_t>(t + 1)] >= 0)
      r = merge(r, t + 1);
    dirty_.push_back(r);
  }

  const std::vector<float>& v_;
  std::int64_t frame_us_;
  const PsdsParams& p_;

  std::vector<std::int32_t> parent_;
  std::vector<std::int32_t> len_;
  std::vector<std::int64_t> inter_;
  std::vector<char> counted_;
  std::vector<char> passing_;
  std::vector<std::vector<std::pair<int, std::int64_t>>> rgts_;
  std::vector<std::int64_t> dcov_;
  std::vector<std::vector<std::pair<int, std::int64_t>>> gfr_;
  std::vector<std::int64_t> gt_dur_;
  std::vector<std::int64_t> covered_;
  std::vector<char> gt_tp_;
  std::vector<int> dirty_;
  std::set<int> affected_;
  std::int32_t n_fp_ = 0;
  std::int32_t n_tp_ = 0;
};

struct ClipPoint {
  float theta;
  int clip;
  std::int32_t fp;
  std::int32_t tp;
};

}  // namespace detail_psds

// Threshold-free per-class operating curve: sweep every clip, merge the
// per-clip snapshots at common descending thresholds, then take the
// monotone upper envelope.
inline RocCurve class_roc(const ClassEvalInput& in, const PsdsParams& p,
                          MemoryMeter* meter = nullptr) {
  p.validate();
  RocCurve roc;
  roc.class_id = in.class_id;
  double total_s = 0;
  std::vector<detail_psds::ClipPoint> pts;
  std::size_t charged = 0;
  auto charge = [&](std::size_t b) {
    charged += b;
    if (meter) meter->charge(b);
  };

  for (int c = 0; c < static_cast<int>(in.clips.size()); ++c) {
    const auto& clip = in.clips[static_cast<std::size_t>(c)];
    total_s += clip.duration_s;
    roc.n_gt += static_cast<std::int64_t>(clip.truth.size());
    for (float s : clip.scores)
      if (!(s >= 0.0f && s <= 1.0f))
        throw ValidationError("psds: score outside [0,1] in clip '" +
                              clip.clip_id + "'");
    if (meter) meter->streamed += clip.scores.size() * sizeof(float);

    const std::vector<float> filtered =
        median_filter(clip.scores, p.median_window);
    std::vector<std::pair<std::int64_t, std::int64_t>> gts;
    for (const auto& [on, off] : clip.truth)
      gts.emplace_back(detail_psds::to_us(on), detail_psds::to_us(off));
    const std::int64_t frame_us =
        static_cast<std::int64_t>(std::llround(1e6 / p.frame_rate));

    detail_psds::ClipSweep sweep(filtered, gts, frame_us, p);
    const std::size_t sweep_bytes =
        sweep.bytes() + filtered.size() * sizeof(float);
    charge(sweep_bytes);
    const auto snaps = sweep.run();
    for (const auto& s : snaps)
      pts.push_back(detail_psds::ClipPoint{s.theta, c, s.fp, s.tp});
    if (meter) meter->release(sweep_bytes);
    charged -= sweep_bytes;
  }
  roc.hours = total_s / 3600.0;
  charge(pts.capacity() * sizeof(detail_psds::ClipPoint));

  // Merge: descending theta, grouping equal values across clips so each
  // point corresponds to one global threshold.
  std::sort(pts.begin(), pts.end(),
            [](const detail_psds::ClipPoint& a, const detail_psds::ClipPoint& b) {
              return a.theta != b.theta ? a.theta > b.theta : a.clip < b.clip;
            });
  std::vector<std::int32_t> cur_fp(in.clips.size(), 0), cur_tp(in.clips.size(), 0);
  std::int64_t total_fp = 0, total_tp = 0;
  std::vector<RocPoint> raw;
  raw.reserve(pts.size() + 1);
  charge(raw.capacity() * sizeof(RocPoint));
  raw.push_back(RocPoint{0.0, 0.0});  // threshold above every score
  std::size_t i = 0;
  while (i < pts.size()) {
    const float theta = pts[i].theta;
    while (i < pts.size() && pts[i].theta == theta) {
      const auto& q = pts[i];
      total_fp += q.fp - cur_fp[static_cast<std::size_t>(q.clip)];
      total_tp += q.tp - cur_tp[static_cast<std::size_t>(q.clip)];
      cur_fp[static_cast<std::size_t>(q.clip)] = q.fp;
      cur_tp[static_cast<std::size_t>(q.clip)] = q.tp;
      ++i;
    }
    RocPoint pt;
    pt.efpr = roc.hours > 0 ? static_cast<double>(total_fp) / roc.hours : 0.0;
    pt.tpr = roc.n_gt > 0
                 ? static_cast<double>(total_tp) / static_cast<double>(roc.n_gt)
                 : 0.0;
    raw.push_back(pt);
  }

  // Monotone upper envelope over ascending eFPR.
  std::sort(raw.begin(), raw.end(), [](const RocPoint& a, const RocPoint& b) {
    return a.efpr != b.efpr ? a.efpr < b.efpr : a.tpr < b.tpr;
  });
  double best = 0;
  for (const RocPoint& pt : raw) {
    const double v = std::max(best, pt.tpr);
    if (roc.points.empty()) {
      roc.points.push_back(RocPoint{pt.efpr, v});
    } else if (roc.points.back().efpr == pt.efpr) {
      roc.points.back().tpr = v;
    } else if (v > roc.points.back().tpr) {
      roc.points.push_back(RocPoint{pt.efpr, v});
    }
    best = v;
  }
  charge(roc.points.capacity() * sizeof(RocPoint));
  if (meter) meter->release(charged);
  return roc;
}

struct PsdsResult {
  double psds = 0;
  std::vector<std::pair<ClassId, double>> per_class_auc;
};

// Aggregates class envelopes: mean TPR (minus alpha_st standard deviations)
// over classes, integrated as a step function over the union of breakpoints.
inline PsdsResult psds(const std::vector<RocCurve>& rocs,
                       const PsdsParams& p) {
  p.validate();
  std::vector<const RocCurve*> use;
  for (const RocCurve& r : rocs) {
    if (r.n_gt <= 0) {
      warn("psds: class '" + r.class_id +
           "' has no ground-truth events, excluded");
      continue;
    }
    use.push_back(&r);
  }
  if (use.empty()) throw ValidationError("psds: no classes with events");

  PsdsResult out;
  for (const RocCurve* r : use)
    out.per_class_auc.emplace_back(r->class_id, r->auc_normalized(p.e_max));

  std::vector<double> breaks;
  breaks.push_back(0);
  breaks.push_back(p.e_max);
  for (const RocCurve* r : use)
    for (const RocPoint& pt : r->points)
      if (pt.efpr > 0 && pt.efpr < p.e_max) breaks.push_back(pt.efpr);
  std::sort(breaks.begin(), breaks.end());
  breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());

  double area = 0;
  for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
    const double e = breaks[i];
    double mu = 0, m2 = 0;
    for (const RocCurve* r : use) {
      const double v = r->at(e);
      mu += v;
      m2 += v * v;
    }
    mu /= static_cast<double>(use.size());
    m2 /= static_cast<double>(use.size());
    const double var = std::max(0.0, m2 - mu * mu);
    const double eff = mu - p.alpha_st * std::sqrt(var);
    area += (breaks[i + 1] - e) * std::max(0.0, eff);
  }
  out.psds = area / p.e_max;
  return out;
}

// Streaming evaluation: one class in memory at a time, only scalar AUCs
// retained. Requires alpha_st = 0 (the variance term needs joint curves).
class StreamingEvaluator {
 public:
  explicit StreamingEvaluator(const PsdsParams& p) : p_(p) {
    p_.validate();
    if (p_.alpha_st != 0)
      throw ValidationError("streaming psds requires alpha_st = 0");
  }

  void add_class(const ClassEvalInput& in) {
    if (std::any_of(in.clips.begin(), in.clips.end(),
                    [](const ClassEvalInput::Clip& c) {
                      return !c.truth.empty();
                    })) {
      RocCurve roc = class_roc(in, p_, &meter_);
      if (roc.n_gt > 0) {
        aucs_.emplace_back(in.class_id, roc.auc_normalized(p_.e_max));
        return;
      }
    }
    warn("psds: class '" + in.class_id +
         "' has no ground-truth events, excluded");
  }

  double psds() const {
    if (aucs_.empty()) throw ValidationError("psds: no classes with events");
    double s = 0;
    for (const auto& [id, a] : aucs_) s += a;
    return s / static_cast<double>(aucs_.size());
  }

  const std::vector<std::pair<ClassId, double>>& per_class() const {
    return aucs_;
  }
  MemoryMeter& meter() { return meter_; }

 private:
  PsdsParams p_;
  std::vector<std::pair<ClassId, double>> aucs_;
  MemoryMeter meter_;
};

// Retained-performance ratio in percent; empty when the reference is zero.
inline std::optional<double> retained_ratio(double ablated, double full) {
  if (full == 0) return std::nullopt;
  return 100.0 * ablated / full;
}

}  // namespace ovsed

#endif  // OVSED_PSDS_HPP_

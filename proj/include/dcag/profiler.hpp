#pragma once

// Delta-to-bias ratio profiling: how far image tokens spread around their
// shared mean, relative to the mean's magnitude, per layer and step.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "dcag/error.hpp"
#include "dcag/format.hpp"
#include "dcag/tensor.hpp"
#include "dcag/toy_stack.hpp"

namespace dcag {

enum class ProjectionSpace { Key, Value };

enum class NormMode {
  /// Norms over the whole token vector (all heads flattened).
  Token,
  /// Ratio computed per head, then averaged over heads.
  PerHead,
};

namespace detail {

inline double token_ratio(const Tensor& block2d) {
  const Tensor bias = mean_over_tokens(block2d);
  const double bias_norm = l2_norm(bias);
  if (bias_norm == 0.0) throw DegenerateInputError("delta-to-bias ratio undefined: bias has zero norm");
  const std::size_t s = block2d.dim(0), d = block2d.dim(1);
  double acc = 0.0;
  std::vector<double> diff(d);
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t c = 0; c < d; ++c) diff[c] = block2d(i, c) - bias[c];
    acc += l2_norm(diff);
  }
  return (acc / static_cast<double>(s)) / bias_norm;
}

}  // namespace detail

/// mean_i ||x_i - mean(x)||_2 / ||mean(x)||_2 over a [S x H x d_h] block.
inline double ratio(const Tensor& block, NormMode mode = NormMode::Token) {
  detail::require_rank(block, 3, "ratio");
  const std::size_t s = block.dim(0), h = block.dim(1), dh = block.dim(2);
  if (s == 0) throw DomainError("ratio: empty token block");
  if (mode == NormMode::Token) return detail::token_ratio(block.reshaped({s, h * dh}));

  double acc = 0.0;
  for (std::size_t hh = 0; hh < h; ++hh) {
    Tensor head({s, dh});
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t c = 0; c < dh; ++c) head(i, c) = block(i, hh, c);
    }
    acc += detail::token_ratio(head);
  }
  return acc / static_cast<double>(h);
}

struct RatioProfile {
  ProjectionSpace space = ProjectionSpace::Key;
  Tensor ratios;  // [L x T], layer-major

  std::size_t layer_count() const { return ratios.dim(0); }
  std::size_t step_count() const { return ratios.dim(1); }
  double at(std::size_t layer, std::size_t step) const { return ratios(layer, step); }

  double mean() const {
    double acc = 0.0;
    for (double r : ratios.data()) acc += r;
    return acc / static_cast<double>(ratios.size());
  }
};

struct ProfilePair {
  RatioProfile key;
  RatioProfile value;
};

/// Runs the unguided stack for `steps` denoising steps and records the ratio
/// of the post-RoPE image K block and the image V block at every (layer, step).
inline ProfilePair profile_stack(const ToyStack& model, const StreamBatch& input, std::size_t steps,
                                 NormMode mode = NormMode::Token) {
  if (steps == 0) throw DomainError("profile_stack: need at least one step");
  const std::size_t layers = model.layer_count();
  ProfilePair out{{ProjectionSpace::Key, Tensor({layers, steps})}, {ProjectionSpace::Value, Tensor({layers, steps})}};
  const auto observe = [&](std::size_t layer, std::size_t step, const JointQKV& qkv) {
    out.key.ratios(layer, step) = ratio(qkv.k.slice_rows(qkv.image_begin, qkv.image_end), mode);
    out.value.ratios(layer, step) = ratio(qkv.v.slice_rows(qkv.image_begin, qkv.image_end), mode);
  };
  model.run(input, std::nullopt, steps, observe);
  return out;
}

/// Pearson correlation over the paired, flattened entries of a and b.
inline double pearson(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "pearson");
  const std::size_t n = a.size();
  if (n == 0) throw DegenerateInputError("pearson: empty input");
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw DegenerateInputError("pearson: zero variance input");
  const double r = sab / (std::sqrt(saa) * std::sqrt(sbb));
  return std::clamp(r, -1.0, 1.0);
}

/// CSV with header `layer,step,ratio_k,ratio_v`, one row per (layer, step), layer-major.
inline void write_ratio_csv(std::ostream& os, const ProfilePair& p) {
  os << "layer,step,ratio_k,ratio_v\n";
  for (std::size_t l = 0; l < p.key.layer_count(); ++l) {
    for (std::size_t t = 0; t < p.key.step_count(); ++t) {
      os << l << ',' << t << ',' << format_number(p.key.at(l, t)) << ',' << format_number(p.value.at(l, t)) << '\n';
    }
  }
}

/// ASCII graymap (P2): layers along x, steps along y, min-max scaled to 0..255.
inline void write_heatmap_pgm(std::ostream& os, const RatioProfile& profile) {
  const std::size_t width = profile.layer_count(), height = profile.step_count();
  if (profile.ratios.size() == 0) throw DomainError("cannot render an empty ratio profile");
  double lo = profile.ratios[0], hi = profile.ratios[0];
  for (double r : profile.ratios.data()) {
    lo = std::min(lo, r);
    hi = std::max(hi, r);
  }
  os << "P2\n" << width << ' ' << height << "\n255\n";
  for (std::size_t t = 0; t < height; ++t) {
    for (std::size_t l = 0; l < width; ++l) {
      const double r = profile.at(l, t);
      const int level = hi > lo ? static_cast<int>(std::lround(255.0 * (r - lo) / (hi - lo))) : 0;
      os << (l ? " " : "") << level;
    }
    os << '\n';
  }
}

}  // namespace dcag

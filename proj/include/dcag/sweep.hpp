#pragma once

// (delta_k, delta_v) grid sweeps over the toy stack, with fidelity measured
// against the unguided output.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "dcag/contour.hpp"
#include "dcag/error.hpp"
#include "dcag/format.hpp"
#include "dcag/guidance.hpp"
#include "dcag/metrics.hpp"
#include "dcag/toy_stack.hpp"

namespace dcag {

/// Side of the square pixel grid for `tokens` image tokens.
inline std::size_t image_side(std::size_t tokens) {
  auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(tokens))));
  if (side * side != tokens) {
    throw ConfigError("image token count " + std::to_string(tokens) + " is not a perfect square");
  }
  return side;
}

struct PixelRange {
  double lo = 0.0;
  double hi = 1.0;
};

/// Per-token channel means of an [S_i x D] block.
inline std::vector<double> token_means(const Tensor& tokens) {
  detail::require_rank(tokens, 2, "token_means");
  const std::size_t s = tokens.dim(0), d = tokens.dim(1);
  std::vector<double> means(s);
  for (std::size_t i = 0; i < s; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) acc += tokens(i, c);
    means[i] = acc / static_cast<double>(d);
  }
  return means;
}

/// Min and max of the per-token channel means; the reference image's range.
inline PixelRange token_range_of(const Tensor& tokens) {
  const auto means = token_means(tokens);
  const auto [lo, hi] = std::minmax_element(means.begin(), means.end());
  if (!(*hi > *lo)) throw DegenerateInputError("rendering range is empty: all token means are equal");
  return {*lo, *hi};
}

/// Token i becomes pixel (i / side, i % side); value is the channel mean
/// mapped through `range` to [0, 1] and clipped.
inline Image render_tokens(const Tensor& tokens, PixelRange range) {
  const std::size_t side = image_side(tokens.dim(0));
  const auto means = token_means(tokens);
  Image img({side, side});
  for (std::size_t i = 0; i < means.size(); ++i) {
    img[i] = std::clamp((means[i] - range.lo) / (range.hi - range.lo), 0.0, 1.0);
  }
  return img;
}

struct SweepRecord {
  double delta_k = 1.0;
  double delta_v = 1.0;
  double mse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

enum class Metric { Mse, Psnr, Ssim };

inline Metric parse_metric(std::string_view name) {
  if (name == "mse") return Metric::Mse;
  if (name == "psnr") return Metric::Psnr;
  if (name == "ssim") return Metric::Ssim;
  throw ConfigError("unknown metric '" + std::string(name) + "' (expected mse, psnr or ssim)");
}

inline double metric_of(const SweepRecord& r, Metric m) {
  switch (m) {
    case Metric::Mse: return r.mse;
    case Metric::Psnr: return r.psnr;
    case Metric::Ssim: return r.ssim;
  }
  return 0.0;
}

struct SweepResult {
  std::vector<double> dk_values;
  std::vector<double> dv_values;
  /// Row-major: delta_k outer, delta_v inner.
  std::vector<SweepRecord> grid;
  Image reference;

  const SweepRecord& at(std::size_t ik, std::size_t iv) const { return grid.at(ik * dv_values.size() + iv); }

  /// Metric values as a [n_k x n_v] surface.
  Tensor surface(Metric m) const {
    if (grid.size() != dk_values.size() * dv_values.size()) {
      throw ShapeError("sweep grid has " + std::to_string(grid.size()) + " records, expected " +
                       std::to_string(dk_values.size() * dv_values.size()));
    }
    Tensor out({dk_values.size(), dv_values.size()});
    for (std::size_t i = 0; i < grid.size(); ++i) out[i] = metric_of(grid[i], m);
    return out;
  }
};

inline SweepRecord evaluate(const Tensor& guided_tokens, const Image& reference, PixelRange range, double dk,
                            double dv) {
  const Image img = render_tokens(guided_tokens, range);
  const double m = mse(img, reference);
  return {dk, dv, m, psnr_from_mse(m), ssim(img, reference)};
}

/// Runs the stack at every (delta_k, delta_v) and scores each output against
/// the (1, 1) output.
inline SweepResult sweep(const ToyStack& stack, const StreamBatch& input, const std::vector<double>& dk_values,
                         const std::vector<double>& dv_values) {
  if (dk_values.empty() || dv_values.empty()) throw ConfigError("sweep needs at least one value per axis");
  image_side(input.img_tokens());
  const Tensor reference_tokens = stack.run(input, GuidanceConfig::identity());
  const PixelRange range = token_range_of(reference_tokens);

  SweepResult result{dk_values, dv_values, {}, render_tokens(reference_tokens, range)};
  result.grid.reserve(dk_values.size() * dv_values.size());
  for (double dk : dk_values) {
    for (double dv : dv_values) {
      const Tensor out = stack.run(input, GuidanceConfig::with_scales(dk, dv));
      result.grid.push_back(evaluate(out, result.reference, range, dk, dv));
    }
  }
  return result;
}

inline std::vector<Polyline> iso_contour(const SweepResult& result, Metric metric, double level) {
  return marching_squares(result.dk_values, result.dv_values, result.surface(metric), level);
}

/// CSV with header `delta_k,delta_v,mse,psnr,ssim`.
inline void write_sweep_csv(std::ostream& os, const SweepResult& r) {
  os << "delta_k,delta_v,mse,psnr,ssim\n";
  for (const auto& rec : r.grid) {
    os << format_number(rec.delta_k) << ',' << format_number(rec.delta_v) << ',' << format_number(rec.mse) << ','
       << format_number(rec.psnr) << ',' << format_number(rec.ssim) << '\n';
  }
}

/// `count` evenly spaced values from start to stop inclusive; count 1 gives {start}.
inline std::vector<double> linspace(double start, double stop, std::size_t count) {
  if (count == 0) throw ConfigError("linspace: count must be at least 1");
  std::vector<double> out(count);
  if (count == 1) {
    out[0] = start;
    return out;
  }
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = start + (stop - start) * static_cast<double>(i) / static_cast<double>(count - 1);
  }
  out.back() = stop;
  return out;
}

}  // namespace dcag

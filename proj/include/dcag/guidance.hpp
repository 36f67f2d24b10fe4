#pragma once

// Dual-channel bias-delta guidance. Image-token K (post-RoPE) and V blocks
// are split into a per-head token mean (bias) and per-token deviations
// (deltas); each channel is then rebuilt as lambda * bias + delta_scale * delta
// before joint attention runs.

#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <string>

#include "dcag/attention.hpp"
#include "dcag/error.hpp"
#include "dcag/tensor.hpp"

namespace dcag {

struct TokenRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  friend bool operator==(const TokenRange&, const TokenRange&) = default;
};

struct GuidanceConfig {
  double delta_k = 1.0;
  double delta_v = 1.0;
  double lambda_k = 1.0;
  double lambda_v = 1.0;
  /// Image-token range to guide. Unset means "the layer's image range".
  std::optional<TokenRange> token_range;
  /// Layer indices to guide; empty means every layer.
  std::set<std::size_t> guided_layers;

  static GuidanceConfig identity() { return {}; }

  /// Best overall fidelity setting reported for the method: (1.10, 1.15).
  static GuidanceConfig recommended() {
    GuidanceConfig cfg;
    cfg.delta_k = 1.10;
    cfg.delta_v = 1.15;
    return cfg;
  }

  static GuidanceConfig with_scales(double delta_k, double delta_v) {
    GuidanceConfig cfg;
    cfg.delta_k = delta_k;
    cfg.delta_v = delta_v;
    return cfg;
  }

  bool is_identity() const {
    return delta_k == 1.0 && delta_v == 1.0 && lambda_k == 1.0 && lambda_v == 1.0;
  }

  bool guides_layer(std::size_t layer) const {
    return guided_layers.empty() || guided_layers.contains(layer);
  }

  void validate() const {
    const auto check = [](double v, const char* name) {
      if (!std::isfinite(v) || v <= 0.0) {
        throw ConfigError(std::string("guidance scale ") + name + " must be finite and > 0, got " +
                          std::to_string(v));
      }
    };
    check(delta_k, "delta_k");
    check(delta_v, "delta_v");
    check(lambda_k, "lambda_k");
    check(lambda_v, "lambda_v");
    if (token_range && token_range->begin >= token_range->end) {
      throw ConfigError("token_range [" + std::to_string(token_range->begin) + ", " +
                        std::to_string(token_range->end) + ") is empty");
    }
  }

  friend bool operator==(const GuidanceConfig&, const GuidanceConfig&) = default;
};

/// Token block split as block = bias + delta + residual. `residual` is the
/// rounding error of the subtraction (at most one ulp per element), carried so
/// that rescale(bd, 1, 1) reproduces the block bit for bit.
struct BiasDelta {
  Tensor bias;      // [1 x H x d_h]
  Tensor delta;     // [S x H x d_h]
  Tensor residual;  // [S x H x d_h]

  std::size_t tokens() const { return delta.dim(0); }
};

inline BiasDelta decompose(const Tensor& block) {
  detail::require_rank(block, 3, "decompose");
  const std::size_t s = block.dim(0), h = block.dim(1), dh = block.dim(2);
  if (s == 0) throw DomainError("decompose: empty token range");
  const std::size_t width = h * dh;

  Tensor bias = mean_over_tokens(block.reshaped({s, width}));
  Tensor delta(block.shape());
  Tensor residual(block.shape());
  for (std::size_t t = 0; t < s; ++t) {
    for (std::size_t c = 0; c < width; ++c) {
      const double x = block[t * width + c];
      const double b = bias[c];
      const double d = x - b;
      delta[t * width + c] = d;
      residual[t * width + c] = x - (b + d);
    }
  }
  return BiasDelta{bias.reshaped({1, h, dh}), std::move(delta), std::move(residual)};
}

/// lambda * bias + delta_scale * delta, broadcast over tokens.
inline Tensor rescale(const BiasDelta& bd, double lambda, double delta_scale) {
  if (!std::isfinite(lambda) || !std::isfinite(delta_scale)) throw DomainError("rescale: non-finite scale");
  const std::size_t s = bd.tokens();
  const std::size_t width = bd.bias.size();
  Tensor out(bd.delta.shape());
  for (std::size_t t = 0; t < s; ++t) {
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t i = t * width + c;
      out[i] = (lambda * bd.bias[c] + delta_scale * bd.delta[i]) + delta_scale * bd.residual[i];
    }
  }
  return out;
}

inline Tensor reconstruct(const BiasDelta& bd) { return rescale(bd, 1.0, 1.0); }

/// Rescales rows [range.begin, range.end) of a [S x H x d_h] tensor in place.
inline void rescale_token_range(Tensor& x, TokenRange range, double lambda, double delta_scale) {
  detail::require_rank(x, 3, "rescale_token_range");
  if (range.begin >= range.end || range.end > x.dim(0)) {
    throw ConfigError("token range [" + std::to_string(range.begin) + ", " + std::to_string(range.end) +
                      ") outside sequence of " + std::to_string(x.dim(0)) + " tokens");
  }
  x.assign_rows(range.begin, rescale(decompose(x.slice_rows(range.begin, range.end)), lambda, delta_scale));
}

/// Key channel on K, Value channel on V, over the image-token range. Q and
/// text-token rows are left untouched.
inline JointQKV apply_dcag(const JointQKV& qkv, const GuidanceConfig& cfg) {
  qkv.validate();
  cfg.validate();
  const TokenRange image{qkv.image_begin, qkv.image_end};
  const TokenRange range = cfg.token_range.value_or(image);
  if (range != image) {
    throw ConfigError("guidance token_range [" + std::to_string(range.begin) + ", " + std::to_string(range.end) +
                      ") does not match image range [" + std::to_string(image.begin) + ", " +
                      std::to_string(image.end) + ")");
  }
  JointQKV out = qkv;
  rescale_token_range(out.k, range, cfg.lambda_k, cfg.delta_k);
  rescale_token_range(out.v, range, cfg.lambda_v, cfg.delta_v);
  return out;
}

inline StreamBatch unguided_attention(const StreamBatch& x, const LayerWeights& w) {
  return joint_attention(project_qkv(x, w));
}

inline StreamBatch guided_attention(const StreamBatch& x, const LayerWeights& w, const GuidanceConfig& cfg) {
  return joint_attention(apply_dcag(project_qkv(x, w), cfg));
}

}  // namespace dcag

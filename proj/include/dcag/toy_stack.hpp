#pragma once

// Seeded stand-in for a dual-stream DiT denoiser: L attention layers applied
// for T steps. Each step adds a per-step embedding to the image tokens, then
// runs every layer as a pre-norm residual block. Text tokens restart from the
// input at every step; the image-token state carries over between steps.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "dcag/attention.hpp"
#include "dcag/error.hpp"
#include "dcag/guidance.hpp"
#include "dcag/random.hpp"
#include "dcag/tensor.hpp"

namespace dcag {

struct ToyShape {
  std::size_t layers = 8;
  std::size_t steps = 6;
  std::size_t txt_tokens = 8;
  std::size_t img_tokens = 144;
  std::size_t dim = 64;
  std::size_t heads = 4;

  void validate() const {
    if (txt_tokens == 0 || img_tokens == 0) throw ConfigError("token counts must be positive");
    if (dim == 0 || heads == 0 || dim % heads != 0) {
      throw ConfigError("dim " + std::to_string(dim) + " must be a positive multiple of heads " + std::to_string(heads));
    }
    if ((dim / heads) % 2 != 0) throw ConfigError("head dimension " + std::to_string(dim / heads) + " must be even");
  }
};

/// Scale of the per-step image-token embedding.
inline constexpr double kStepEmbeddingScale = 0.5;
inline constexpr double kRmsNormEps = 1e-6;

/// Token-wise RMS normalization without learned gain.
inline Tensor rms_normalize(const Tensor& x) {
  detail::require_rank(x, 2, "rms_normalize");
  const std::size_t s = x.dim(0), d = x.dim(1);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < s; ++i) {
    double ss = 0.0;
    for (std::size_t c = 0; c < d; ++c) ss += x(i, c) * x(i, c);
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(d) + kRmsNormEps);
    for (std::size_t c = 0; c < d; ++c) out(i, c) = x(i, c) * inv;
  }
  return out;
}

class ToyStack {
 public:
  /// Called with (layer, step, qkv) after projection and RoPE, before guidance.
  using Observer = std::function<void(std::size_t, std::size_t, const JointQKV&)>;

  ToyStack(std::vector<LayerWeights> layers, std::size_t dim, std::size_t step_count, std::uint64_t seed,
           bool residual = true)
      : layers_(std::move(layers)), dim_(dim), step_count_(step_count), seed_(seed), residual_(residual) {
    for (const auto& w : layers_) {
      w.validate();
      if (w.dim() != dim_) throw ShapeError("ToyStack: layer dim " + std::to_string(w.dim()) + " != " + std::to_string(dim_));
    }
  }

  /// Layer l draws its weights from stream l of `seed`, so stacks with equal
  /// (seed, shape) are identical and layer weights do not depend on L.
  static ToyStack create(const ToyShape& shape, std::uint64_t seed, bool residual = true) {
    shape.validate();
    std::vector<LayerWeights> layers;
    layers.reserve(shape.layers);
    for (std::size_t l = 0; l < shape.layers; ++l) {
      Rng rng(derive_seed(seed, l));
      layers.push_back(LayerWeights::random(shape.dim, shape.heads, rng));
    }
    return ToyStack(std::move(layers), shape.dim, shape.steps, seed, residual);
  }

  std::size_t layer_count() const { return layers_.size(); }
  std::size_t step_count() const { return step_count_; }
  std::size_t dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  bool residual() const { return residual_; }
  const std::vector<LayerWeights>& layers() const { return layers_; }

  /// Embedding added to every image token at step t: [1 x D].
  Tensor step_embedding(std::size_t step) const {
    Rng rng(derive_seed(seed_, kStepStreamBase + step));
    return random_normal({1, dim_}, rng, kStepEmbeddingScale);
  }

  /// Final image-token block after `steps` steps. With no config the plain
  /// attention path is used; otherwise guidance is applied on guided layers.
  Tensor run(const StreamBatch& input, const std::optional<GuidanceConfig>& cfg, std::size_t steps,
             const Observer& observe = {}) const {
    input.validate();
    if (input.dim() != dim_) {
      throw ShapeError("ToyStack::run: input dim " + std::to_string(input.dim()) + " != " + std::to_string(dim_));
    }
    if (cfg) cfg->validate();
    Tensor img = input.img;
    for (std::size_t t = 0; t < steps; ++t) {
      img = add_row(img, step_embedding(t));
      Tensor txt = input.txt;
      for (std::size_t l = 0; l < layers_.size(); ++l) {
        JointQKV qkv = project_qkv(StreamBatch{rms_normalize(txt), rms_normalize(img)}, layers_[l]);
        if (observe) observe(l, t, qkv);
        if (cfg && cfg->guides_layer(l)) qkv = apply_dcag(qkv, *cfg);
        StreamBatch out = joint_attention(qkv);
        if (residual_) {
          txt = add(txt, out.txt);
          img = add(img, out.img);
        } else {
          txt = std::move(out.txt);
          img = std::move(out.img);
        }
      }
    }
    return img;
  }

  Tensor run(const StreamBatch& input, const std::optional<GuidanceConfig>& cfg = std::nullopt) const {
    return run(input, cfg, step_count_);
  }

 private:
  static constexpr std::uint64_t kStepStreamBase = 1ULL << 32;

  std::vector<LayerWeights> layers_;
  std::size_t dim_;
  std::size_t step_count_;
  std::uint64_t seed_;
  bool residual_;
};

/// Seeded input batch for a stack; drawn from a stream disjoint from the weights.
inline StreamBatch make_toy_input(const ToyShape& shape, std::uint64_t seed) {
  shape.validate();
  Rng rng(derive_seed(seed, 1ULL << 40));
  return StreamBatch::random(shape.txt_tokens, shape.img_tokens, shape.dim, rng);
}

}  // namespace dcag

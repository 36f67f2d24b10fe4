#pragma once

// Dual-stream multi-modal attention: per-stream QKV projection, rotary
// embedding on Q and K, text-first concatenation, joint scaled dot-product
// attention over the whole sequence, then a split back into the two streams.
// Guidance hooks in between project_qkv() and joint_attention().

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "dcag/error.hpp"
#include "dcag/random.hpp"
#include "dcag/tensor.hpp"

namespace dcag {

inline constexpr double kDefaultRopeBase = 10000.0;

/// Text-token and image-token embeddings entering one attention layer.
struct StreamBatch {
  Tensor txt;  // [S_t x D]
  Tensor img;  // [S_i x D]

  std::size_t txt_tokens() const { return txt.dim(0); }
  std::size_t img_tokens() const { return img.dim(0); }
  std::size_t dim() const { return img.dim(1); }

  void validate() const {
    if (txt.rank() != 2 || img.rank() != 2) {
      throw ShapeError("StreamBatch streams must be rank 2, got " + shape_to_string(txt.shape()) +
                       " and " + shape_to_string(img.shape()));
    }
    if (txt.dim(1) != img.dim(1)) {
      throw ShapeError("StreamBatch hidden dimensions differ: " + shape_to_string(txt.shape()) +
                       " vs " + shape_to_string(img.shape()));
    }
    if (txt.dim(0) == 0 || img.dim(0) == 0) throw ShapeError("StreamBatch needs at least one token per stream");
  }

  static StreamBatch random(std::size_t txt_tokens, std::size_t img_tokens, std::size_t dim, Rng& rng) {
    StreamBatch b{random_normal({txt_tokens, dim}, rng), random_normal({img_tokens, dim}, rng)};
    b.validate();
    return b;
  }
};

struct StreamProjections {
  Tensor query;  // [D x D]
  Tensor key;
  Tensor value;
};

struct LayerWeights {
  StreamProjections text;
  StreamProjections image;
  std::size_t heads = 1;

  std::size_t dim() const { return text.query.dim(0); }
  std::size_t head_dim() const { return dim() / heads; }

  void validate() const {
    if (heads == 0) throw ShapeError("LayerWeights: head count must be positive");
    const std::size_t d = text.query.rank() == 2 ? text.query.dim(0) : 0;
    for (const Tensor* w : {&text.query, &text.key, &text.value, &image.query, &image.key, &image.value}) {
      if (w->rank() != 2 || w->dim(0) != d || w->dim(1) != d) {
        throw ShapeError("LayerWeights: projection " + shape_to_string(w->shape()) + " is not [" +
                         std::to_string(d) + "x" + std::to_string(d) + "]");
      }
    }
    if (d == 0 || d % heads != 0) {
      throw ShapeError("LayerWeights: hidden dim " + std::to_string(d) + " not divisible by " +
                       std::to_string(heads) + " heads");
    }
  }

  /// Gaussian init with standard deviation 1/sqrt(D).
  static LayerWeights random(std::size_t dim, std::size_t heads, Rng& rng) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
    auto proj = [&] {
      Tensor q = random_normal({dim, dim}, rng, sd);
      Tensor k = random_normal({dim, dim}, rng, sd);
      Tensor v = random_normal({dim, dim}, rng, sd);
      return StreamProjections{std::move(q), std::move(k), std::move(v)};
    };
    StreamProjections text = proj();
    StreamProjections image = proj();
    LayerWeights w{std::move(text), std::move(image), heads};
    w.validate();
    return w;
  }

  static LayerWeights identity(std::size_t dim, std::size_t heads) {
    StreamProjections p{Tensor::identity(dim), Tensor::identity(dim), Tensor::identity(dim)};
    LayerWeights w{p, p, heads};
    w.validate();
    return w;
  }
};

/// Concatenated per-head Q, K, V for the joint sequence. Image tokens sit in
/// [image_begin, image_end); text tokens occupy [0, image_begin).
struct JointQKV {
  Tensor q;  // [S x H x d_h], RoPE applied
  Tensor k;  // [S x H x d_h], RoPE applied
  Tensor v;  // [S x H x d_h]
  std::size_t image_begin = 0;
  std::size_t image_end = 0;

  std::size_t tokens() const { return q.dim(0); }
  std::size_t heads() const { return q.dim(1); }
  std::size_t head_dim() const { return q.dim(2); }

  void validate() const {
    if (q.rank() != 3 || k.shape() != q.shape() || v.shape() != q.shape()) {
      throw ShapeError("JointQKV: Q/K/V shapes " + shape_to_string(q.shape()) + ", " +
                       shape_to_string(k.shape()) + ", " + shape_to_string(v.shape()) +
                       " are not equal rank-3 shapes");
    }
    if (image_begin >= image_end || image_end != q.dim(0)) {
      throw ShapeError("JointQKV: image range [" + std::to_string(image_begin) + ", " +
                       std::to_string(image_end) + ") invalid for " + std::to_string(q.dim(0)) +
                       " tokens");
    }
  }
};

/// Rotary embedding over [S x H x d_h]: coordinate pair (2j, 2j+1) of token s
/// is rotated by positions[s] * base^(-2j/d_h).
inline Tensor rope(const Tensor& x, std::span<const std::size_t> positions, double base = kDefaultRopeBase) {
  detail::require_rank(x, 3, "rope");
  const std::size_t s = x.dim(0), h = x.dim(1), dh = x.dim(2);
  if (dh % 2 != 0) throw DomainError("rope: head dimension " + std::to_string(dh) + " is odd");
  if (positions.size() != s) {
    throw ShapeError("rope: " + std::to_string(positions.size()) + " positions for " + std::to_string(s) +
                     " tokens");
  }
  std::vector<double> theta(dh / 2);
  for (std::size_t j = 0; j < dh / 2; ++j) {
    theta[j] = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(dh));
  }
  Tensor out(x.shape());
  for (std::size_t t = 0; t < s; ++t) {
    const double pos = static_cast<double>(positions[t]);
    for (std::size_t j = 0; j < dh / 2; ++j) {
      const double angle = pos * theta[j];
      const double c = std::cos(angle), sn = std::sin(angle);
      for (std::size_t hh = 0; hh < h; ++hh) {
        const double a = x(t, hh, 2 * j), b = x(t, hh, 2 * j + 1);
        out(t, hh, 2 * j) = a * c - b * sn;
        out(t, hh, 2 * j + 1) = a * sn + b * c;
      }
    }
  }
  return out;
}

/// Projects both streams, applies RoPE to Q and K with contiguous positions
/// (text 0..S_t-1, image S_t..S_t+S_i-1), and concatenates text-first.
inline JointQKV project_qkv(const StreamBatch& x, const LayerWeights& w, double rope_base = kDefaultRopeBase) {
  x.validate();
  w.validate();
  if (x.dim() != w.dim()) {
    throw ShapeError("project_qkv: input dim " + std::to_string(x.dim()) + " vs weight dim " +
                     std::to_string(w.dim()));
  }
  const std::size_t st = x.txt_tokens(), si = x.img_tokens(), total = st + si;
  const std::size_t h = w.heads, dh = w.head_dim();

  auto joint = [&](const Tensor& wt, const Tensor& wi) {
    Tensor out({total, w.dim()});
    out.assign_rows(0, matmul(x.txt, wt));
    out.assign_rows(st, matmul(x.img, wi));
    return out.reshaped({total, h, dh});
  };

  std::vector<std::size_t> positions(total);
  for (std::size_t i = 0; i < total; ++i) positions[i] = i;

  JointQKV qkv{rope(joint(w.text.query, w.image.query), positions, rope_base),
               rope(joint(w.text.key, w.image.key), positions, rope_base),
               joint(w.text.value, w.image.value), st, total};
  return qkv;
}

/// Scaled logits q_i . k_j / sqrt(d_h) per head: [H x S x S].
inline Tensor attention_logits(const Tensor& q, const Tensor& k) {
  detail::require_rank(q, 3, "attention_logits");
  detail::require_same_shape(q, k, "attention_logits");
  const std::size_t s = q.dim(0), h = q.dim(1), dh = q.dim(2);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor logits({h, s, s});
  for (std::size_t hh = 0; hh < h; ++hh) {
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t j = 0; j < s; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < dh; ++c) dot += q(i, hh, c) * k(j, hh, c);
        logits(hh, i, j) = dot * inv_sqrt;
      }
    }
  }
  return logits;
}

/// Row-stochastic attention weights per head: [H x S x S].
inline Tensor attention_weights(const Tensor& q, const Tensor& k) {
  const Tensor logits = attention_logits(q, k);
  const std::size_t h = logits.dim(0), s = logits.dim(1);
  Tensor out(logits.shape());
  for (std::size_t hh = 0; hh < h; ++hh) {
    const Tensor head = softmax_rows(logits.slice_rows(hh, hh + 1).reshaped({s, s}));
    std::copy(head.data().begin(), head.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(hh * s * s));
  }
  return out;
}

inline Tensor attention_weights(const JointQKV& qkv) { return attention_weights(qkv.q, qkv.k); }

/// Weighted sum of V rows per head: weights [H x S x S], v [S x H x d_h] -> [S x H x d_h].
inline Tensor apply_attention(const Tensor& weights, const Tensor& v) {
  detail::require_rank(weights, 3, "apply_attention");
  detail::require_rank(v, 3, "apply_attention");
  const std::size_t h = v.dim(1), s = v.dim(0), dh = v.dim(2);
  if (weights.dim(0) != h || weights.dim(1) != s || weights.dim(2) != s) {
    throw ShapeError("apply_attention: weights " + shape_to_string(weights.shape()) + " vs values " +
                     shape_to_string(v.shape()));
  }
  Tensor out(v.shape());
  for (std::size_t hh = 0; hh < h; ++hh) {
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t j = 0; j < s; ++j) {
        const double a = weights(hh, i, j);
        for (std::size_t c = 0; c < dh; ++c) out(i, hh, c) += a * v(j, hh, c);
      }
    }
  }
  return out;
}

/// Full-sequence attention output with heads merged: [S x D].
inline Tensor attention_output(const JointQKV& qkv) {
  const Tensor out = apply_attention(attention_weights(qkv), qkv.v);
  return out.reshaped({qkv.tokens(), qkv.heads() * qkv.head_dim()});
}

/// Joint attention over the concatenated sequence, split back at image_begin.
inline StreamBatch joint_attention(const JointQKV& qkv) {
  qkv.validate();
  const Tensor merged = attention_output(qkv);
  return StreamBatch{merged.slice_rows(0, qkv.image_begin), merged.slice_rows(qkv.image_begin, qkv.image_end)};
}

}  // namespace dcag

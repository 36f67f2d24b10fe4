#pragma once

// Runtime self-checks of the guidance identities on a concrete layer input:
// identity reduction, channel isolation, logit-difference scaling and
// value-channel affinity. Used by `dcag attend --check`.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dcag/attention.hpp"
#include "dcag/guidance.hpp"
#include "dcag/tensor.hpp"

namespace dcag {

struct CheckResult {
  std::string name;
  bool passed = false;
  /// Worst observed error (0 for bitwise checks that pass).
  double error = 0.0;
  double tolerance = 0.0;
};

inline constexpr double kLogitScalingTolerance = 1e-10;
inline constexpr double kAffinityTolerance = 1e-10;

inline std::vector<CheckResult> check_invariants(const StreamBatch& x, const LayerWeights& w,
                                                 const GuidanceConfig& cfg) {
  std::vector<CheckResult> results;
  const JointQKV base = project_qkv(x, w);
  const TokenRange image{base.image_begin, base.image_end};

  {
    const StreamBatch a = guided_attention(x, w, GuidanceConfig::identity());
    const StreamBatch b = unguided_attention(x, w);
    results.push_back({"identity_reduction", bitwise_equal(a.txt, b.txt) && bitwise_equal(a.img, b.img), 0.0, 0.0});
  }
  {
    GuidanceConfig key_only = cfg;
    key_only.delta_v = 1.0;
    key_only.lambda_v = 1.0;
    results.push_back({"key_only_values_unchanged", bitwise_equal(apply_dcag(base, key_only).v, base.v), 0.0, 0.0});
    results.push_back({"weights_independent_of_value_channel",
                       bitwise_equal(attention_weights(apply_dcag(base, key_only)),
                                     attention_weights(apply_dcag(base, cfg))),
                       0.0, 0.0});
  }
  {
    JointQKV scaled = base;
    rescale_token_range(scaled.k, image, 1.0, cfg.delta_k);
    const Tensor pre = attention_logits(base.q, base.k);
    const Tensor post = attention_logits(base.q, scaled.k);
    double worst = 0.0;
    const std::size_t h = pre.dim(0), s = pre.dim(1);
    for (std::size_t hh = 0; hh < h; ++hh) {
      for (std::size_t i = 0; i < s; ++i) {
        for (std::size_t a = image.begin; a < image.end; ++a) {
          for (std::size_t b = a + 1; b < image.end; ++b) {
            const double want = cfg.delta_k * (pre(hh, i, a) - pre(hh, i, b));
            const double got = post(hh, i, a) - post(hh, i, b);
            worst = std::max(worst, std::abs(got - want) / std::max(1.0, std::abs(want)));
          }
        }
      }
    }
    results.push_back({"logit_difference_scaling", worst <= kLogitScalingTolerance, worst, kLogitScalingTolerance});
  }
  {
    const auto output_at = [&](double dv) {
      JointQKV g = base;
      rescale_token_range(g.v, image, 1.0, dv);
      return attention_output(g);
    };
    const Tensor o0 = output_at(0.0), o1 = output_at(1.0);
    const double scale = std::max(1.0, max_abs(o1));
    double worst = 0.0;
    for (double dv : {0.5, cfg.delta_v, 2.0, 3.0}) {
      worst = std::max(worst, max_abs_diff(output_at(dv), axpby(1.0, o0, dv, subtract(o1, o0))) / scale);
    }
    results.push_back({"value_affinity", worst <= kAffinityTolerance, worst, kAffinityTolerance});
  }
  return results;
}

}  // namespace dcag

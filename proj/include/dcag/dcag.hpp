#pragma once

#include "dcag/attention.hpp"
#include "dcag/contour.hpp"
#include "dcag/error.hpp"
#include "dcag/format.hpp"
#include "dcag/guidance.hpp"
#include "dcag/guidance_config.hpp"
#include "dcag/invariants.hpp"
#include "dcag/metrics.hpp"
#include "dcag/profiler.hpp"
#include "dcag/random.hpp"
#include "dcag/sweep.hpp"
#include "dcag/tensor.hpp"
#include "dcag/toy_stack.hpp"

namespace dcag {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace dcag

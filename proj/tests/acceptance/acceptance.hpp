#pragma once

// Shared between the float driver and the double-precision gradient check.
// Only standard types cross this boundary, so the two builds never share a
// coseg type.

#include <string>

namespace acceptance {

struct GradcheckResult {
  double worst_error = 0.0;
  std::string worst_parameter;
  double seconds = 0.0;
};

/// Full-model finite-difference check with D=8, T=5, M=1, two snippets and a
/// queue of four, run in double precision.
GradcheckResult full_model_gradcheck();

}  // namespace acceptance

#pragma once

// Scalar type of every tensor: float by default, double when
// COSEG_REAL_DOUBLE is defined (finite-difference gradient checks need the
// extra precision). Each choice lives in its own inline namespace, so
// translation units built both ways can be linked into one program.

#ifdef COSEG_REAL_DOUBLE
#define COSEG_PRECISION_NS f64
#else
#define COSEG_PRECISION_NS f32
#endif

namespace coseg::inline COSEG_PRECISION_NS {

#ifdef COSEG_REAL_DOUBLE
using real = double;
#else
using real = float;
#endif

}  // namespace coseg

#pragma once

// The library is compiled twice: once with 32-bit reals (the default) and once
// with DCANAS_DOUBLE for high-precision gradient checking. Each build lives in
// its own inline namespace so both can be linked into one binary.

#if defined(DCANAS_DOUBLE)
#define DCANAS_PRECISION f64
#else
#define DCANAS_PRECISION f32
#endif

namespace dcanas::inline DCANAS_PRECISION {

#if defined(DCANAS_DOUBLE)
using Real = double;
#else
using Real = float;
#endif

}  // namespace dcanas::inline DCANAS_PRECISION

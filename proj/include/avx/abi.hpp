#pragma once

// The numeric core can be built with float or double scalars. Each build lives
// in its own inline namespace so both can link into one executable.
#ifdef AVX_SCALAR_DOUBLE
#define AVX_ABI_NS inline f64
#else
#define AVX_ABI_NS inline f32
#endif

#pragma once

#include "odrl/kernels.hpp"

namespace odrl::kernels {

const Ops& scalar_ops();

// Defined in kernels_avx2.cpp (compiled with AVX2+FMA enabled). Call only
// when the CPU supports AVX2.
const Ops& avx2_ops();

}  // namespace odrl::kernels

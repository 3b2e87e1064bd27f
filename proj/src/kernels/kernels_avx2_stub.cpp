// Placeholder for non-x86 builds. The dispatcher never routes here because
// backend_available(Backend::avx2) is false without x86 CPU support.

#include "backends.hpp"
#include "odrl/errors.hpp"

namespace odrl::kernels {

const Ops& avx2_ops() {
    throw UsageError("AVX2 kernels not compiled into this build");
}

}  // namespace odrl::kernels

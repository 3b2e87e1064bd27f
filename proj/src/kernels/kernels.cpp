#include "odrl/kernels.hpp"

#include <cstdlib>

#include "backends.hpp"
#include "odrl/errors.hpp"

namespace odrl::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Backend choose_backend() {
    if (const char* env = std::getenv("ODRL_KERNELS")) {
        const std::string name(env);
        if (name == "scalar") return Backend::scalar;
        if (name == "avx2") {
            if (!backend_available(Backend::avx2))
                throw UsageError("ODRL_KERNELS=avx2 but CPU lacks AVX2/FMA");
            return Backend::avx2;
        }
        throw UsageError("ODRL_KERNELS must be 'scalar' or 'avx2', got: " + name);
    }
    return backend_available(Backend::avx2) ? Backend::avx2 : Backend::scalar;
}

Backend& active_slot() {
    static Backend b = choose_backend();
    return b;
}

}  // namespace

std::string backend_name(Backend b) {
    return b == Backend::scalar ? "scalar" : "avx2";
}

bool backend_available(Backend b) {
    if (b == Backend::scalar) return true;
    static const bool avx2 = cpu_has_avx2();
    return avx2;
}

std::vector<Backend> available_backends() {
    std::vector<Backend> out{Backend::scalar};
    if (backend_available(Backend::avx2)) out.push_back(Backend::avx2);
    return out;
}

const Ops& ops_for(Backend b) {
    if (!backend_available(b))
        throw UsageError("kernel backend not available on this CPU: " +
                         backend_name(b));
    return b == Backend::scalar ? scalar_ops() : avx2_ops();
}

const Ops& ops() { return ops_for(active_slot()); }

Backend active_backend() { return active_slot(); }

void set_backend(Backend b) {
    if (!backend_available(b))
        throw UsageError("kernel backend not available on this CPU: " +
                         backend_name(b));
    active_slot() = b;
}

}  // namespace odrl::kernels

#include "synbt/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace synbt::kern {

// Defined in kernels_avx2.cpp; returns null when that TU was built without
// AVX2 support.
const KernelOps* avx2_ops_impl();

bool avx2_supported() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const KernelOps* avx2_ops() {
    if (!avx2_supported()) return nullptr;
    return avx2_ops_impl();
}

namespace {

bool env_forces_scalar() {
    const char* e = std::getenv("SYNBT_FORCE_SCALAR");
    return e != nullptr && std::strcmp(e, "1") == 0;
}

bool& force_flag() {
    static bool f = env_forces_scalar();
    return f;
}

}  // namespace

void force_scalar(bool on) { force_flag() = on; }

const KernelOps& ops() {
    if (!force_flag()) {
        const KernelOps* a = avx2_ops();
        if (a) return *a;
    }
    return scalar_ops();
}

}  // namespace synbt::kern

// Runtime backend selection. The AVX2 table is only handed out when the CPU
// reports both AVX2 and FMA; everything else falls back to scalar.

#include "pairrl/kernels.hpp"

#include "pairrl/common.hpp"

namespace pairrl::kern {

const Ops* avx2_ops_table();  // defined in kernels_avx2.cpp

bool avx2_supported() {
#if defined(__x86_64__) || defined(_M_X64) || defined(__i386__)
    if (avx2_ops_table() == nullptr) return false;
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const Ops& ops_for(Backend b) {
    switch (b) {
        case Backend::Scalar:
            return scalar_ops();
        case Backend::Avx2:
            if (!avx2_supported()) {
                throw ValidationError("kernel backend avx2 not supported on this CPU");
            }
            return *avx2_ops_table();
    }
    throw ValidationError("unknown kernel backend");
}

namespace {
Backend g_backend = avx2_supported() ? Backend::Avx2 : Backend::Scalar;
}

const Ops& active_ops() { return ops_for(g_backend); }

Backend active_backend() { return g_backend; }

void set_backend(Backend b) {
    ops_for(b);  // validates availability
    g_backend = b;
}

Backend parse_backend(const std::string& name) {
    if (name == "scalar") return Backend::Scalar;
    if (name == "avx2") return Backend::Avx2;
    if (name == "auto") return avx2_supported() ? Backend::Avx2 : Backend::Scalar;
    throw ValidationError("unknown kernel backend '" + name + "' (expected scalar, avx2, or auto)");
}

const char* backend_name(Backend b) {
    return b == Backend::Avx2 ? "avx2" : "scalar";
}

}  // namespace pairrl::kern

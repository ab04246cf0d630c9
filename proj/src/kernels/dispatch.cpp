#include <cstdlib>
#include <cstring>
#include <cstdio>

#include "mfg/kernels.hpp"

namespace mfg::kernels {

#if defined(MFG_HAVE_AVX2)
const Table* avx2_table_impl();
#endif

const char* to_string(Isa isa) {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2: return "avx2";
    }
    return "unknown";
}

bool cpu_has_avx2() {
#if defined(MFG_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
    return __builtin_cpu_supports("avx2");
#else
    return false;
#endif
}

const Table* avx2_table() {
#if defined(MFG_HAVE_AVX2)
    if (cpu_has_avx2()) return avx2_table_impl();
#endif
    return nullptr;
}

namespace {

const Table& select() {
    const char* env = std::getenv("MFG_KERNELS");
    if (env != nullptr && std::strcmp(env, "scalar") == 0) return scalar_table();
    const Table* simd = avx2_table();
    if (env != nullptr && std::strcmp(env, "avx2") == 0 && simd == nullptr) {
        std::fprintf(stderr, "MFG_KERNELS=avx2 requested but unavailable; using scalar\n");
    }
    return simd != nullptr ? *simd : scalar_table();
}

}  // namespace

const Table& active() {
    static const Table& table = select();
    return table;
}

}  // namespace mfg::kernels

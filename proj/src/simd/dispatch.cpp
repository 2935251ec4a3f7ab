#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "densal/simd/kernels.hpp"

namespace densal::simd {
namespace {

Backend initial_backend() {
    if (const char* env = std::getenv("DENSAL_SIMD")) {
        const std::string choice(env);
        if (choice == "scalar") return Backend::Scalar;
        if (choice == "avx2" && cpu_has_avx2()) return Backend::Avx2;
    }
    return cpu_has_avx2() ? Backend::Avx2 : Backend::Scalar;
}

std::atomic<Backend>& current() {
    static std::atomic<Backend> backend{initial_backend()};
    return backend;
}

}  // namespace

std::vector<Backend> available_backends() {
    std::vector<Backend> out{Backend::Scalar};
    if (cpu_has_avx2()) out.push_back(Backend::Avx2);
    return out;
}

Backend active_backend() { return current().load(std::memory_order_relaxed); }

void set_backend(Backend backend) {
    if (backend == Backend::Avx2 && !cpu_has_avx2())
        throw std::invalid_argument("AVX2 backend requested but not supported on this CPU");
    current().store(backend, std::memory_order_relaxed);
}

std::string_view backend_name(Backend backend) {
    switch (backend) {
        case Backend::Scalar: return "scalar";
        case Backend::Avx2: return "avx2";
    }
    return "unknown";
}

template <typename T>
const KernelTable<T>& kernels() {
    if (active_backend() == Backend::Avx2) {
        if (const auto* table = avx2_kernels<T>()) return *table;
    }
    return scalar_kernels<T>();
}

template const KernelTable<float>& kernels<float>();
template const KernelTable<double>& kernels<double>();

}  // namespace densal::simd

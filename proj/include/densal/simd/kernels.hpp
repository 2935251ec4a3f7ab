#pragma once

// Dense arithmetic kernels behind the tensor operators.
//
// Every kernel has a portable scalar reference implementation. On x86-64 an
// AVX2+FMA variant is compiled with per-function target attributes and chosen
// at runtime when the CPU supports it. The active backend can be forced with
// the DENSAL_SIMD environment variable ("scalar" or "avx2") or set_backend().
//
// All matrices are row-major with explicit leading dimensions.

#include <cstddef>
#include <string_view>
#include <vector>

namespace densal::simd {

enum class Backend { Scalar, Avx2 };

template <typename T>
struct KernelTable {
    // y[i] += a * x[i]
    void (*axpy)(std::size_t n, T a, const T* x, T* y);
    // sum_i x[i] * y[i]
    T (*dot)(std::size_t n, const T* x, const T* y);
    // C[M,N] += A[M,K] * B[K,N]
    void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
                    const T* b, std::size_t ldb, T* c, std::size_t ldc);
    // C[M,N] += A[M,K] * B[N,K]^T
    void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
                    const T* b, std::size_t ldb, T* c, std::size_t ldc);
    // C[M,N] += A[K,M]^T * B[K,N]
    void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
                    const T* b, std::size_t ldb, T* c, std::size_t ldc);
    // y[i] = max(x[i], 0)
    void (*relu)(std::size_t n, const T* x, T* y);
};

// Reference implementations; always available.
template <typename T>
const KernelTable<T>& scalar_kernels();

// nullptr when the build or the CPU lacks AVX2/FMA.
template <typename T>
const KernelTable<T>* avx2_kernels();

bool cpu_has_avx2();
std::vector<Backend> available_backends();

Backend active_backend();
// Throws std::invalid_argument if the backend is not available here.
void set_backend(Backend backend);

std::string_view backend_name(Backend backend);

template <typename T>
const KernelTable<T>& kernels();

}  // namespace densal::simd

#include "densal/simd/kernels.hpp"

namespace densal::simd {
namespace {

template <typename T>
void axpy(std::size_t n, T a, const T* x, T* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
T dot(std::size_t n, const T* x, const T* y) {
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
             std::size_t ldb, T* c, std::size_t ldc) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * ldc;
        for (std::size_t p = 0; p < k; ++p) {
            const T aip = a[i * lda + p];
            if (aip == T(0)) continue;
            axpy(n, aip, b + p * ldb, crow);
        }
    }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
             std::size_t ldb, T* c, std::size_t ldc) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] += dot(k, a + i * lda, b + j * ldb);
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
             std::size_t ldb, T* c, std::size_t ldc) {
    for (std::size_t p = 0; p < k; ++p) {
        const T* brow = b + p * ldb;
        for (std::size_t i = 0; i < m; ++i) {
            const T api = a[p * lda + i];
            if (api == T(0)) continue;
            axpy(n, api, brow, c + i * ldc);
        }
    }
}

template <typename T>
void relu(std::size_t n, const T* x, T* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
constexpr KernelTable<T> kTable{&axpy<T>, &dot<T>, &gemm_nn<T>, &gemm_nt<T>, &gemm_tn<T>, &relu<T>};

}  // namespace

template <typename T>
const KernelTable<T>& scalar_kernels() {
    return kTable<T>;
}

template const KernelTable<float>& scalar_kernels<float>();
template const KernelTable<double>& scalar_kernels<double>();

}  // namespace densal::simd

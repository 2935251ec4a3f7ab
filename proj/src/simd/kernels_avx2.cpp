#include "densal/simd/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define DENSAL_HAVE_X86 1
#include <immintrin.h>
#else
#define DENSAL_HAVE_X86 0
#endif

namespace densal::simd {

#if DENSAL_HAVE_X86

#define DENSAL_AVX2 __attribute__((target("avx2,fma")))

namespace {

// Lane traits so the kernels below are written once for both precisions.
template <typename T>
struct Lanes;

template <>
struct Lanes<float> {
    using Vec = __m256;
    static constexpr std::size_t width = 8;
    DENSAL_AVX2 static Vec zero() { return _mm256_setzero_ps(); }
    DENSAL_AVX2 static Vec set1(float v) { return _mm256_set1_ps(v); }
    DENSAL_AVX2 static Vec load(const float* p) { return _mm256_loadu_ps(p); }
    DENSAL_AVX2 static void store(float* p, Vec v) { _mm256_storeu_ps(p, v); }
    DENSAL_AVX2 static Vec fmadd(Vec a, Vec b, Vec c) { return _mm256_fmadd_ps(a, b, c); }
    DENSAL_AVX2 static Vec add(Vec a, Vec b) { return _mm256_add_ps(a, b); }
    DENSAL_AVX2 static Vec max(Vec a, Vec b) { return _mm256_max_ps(a, b); }
    DENSAL_AVX2 static float hsum(Vec v) {
        __m128 lo = _mm256_castps256_ps128(v);
        __m128 hi = _mm256_extractf128_ps(v, 1);
        lo = _mm_add_ps(lo, hi);
        __m128 shuf = _mm_movehdup_ps(lo);
        __m128 sums = _mm_add_ps(lo, shuf);
        shuf = _mm_movehl_ps(shuf, sums);
        sums = _mm_add_ss(sums, shuf);
        return _mm_cvtss_f32(sums);
    }
};

template <>
struct Lanes<double> {
    using Vec = __m256d;
    static constexpr std::size_t width = 4;
    DENSAL_AVX2 static Vec zero() { return _mm256_setzero_pd(); }
    DENSAL_AVX2 static Vec set1(double v) { return _mm256_set1_pd(v); }
    DENSAL_AVX2 static Vec load(const double* p) { return _mm256_loadu_pd(p); }
    DENSAL_AVX2 static void store(double* p, Vec v) { _mm256_storeu_pd(p, v); }
    DENSAL_AVX2 static Vec fmadd(Vec a, Vec b, Vec c) { return _mm256_fmadd_pd(a, b, c); }
    DENSAL_AVX2 static Vec add(Vec a, Vec b) { return _mm256_add_pd(a, b); }
    DENSAL_AVX2 static Vec max(Vec a, Vec b) { return _mm256_max_pd(a, b); }
    DENSAL_AVX2 static double hsum(Vec v) {
        __m128d lo = _mm256_castpd256_pd128(v);
        __m128d hi = _mm256_extractf128_pd(v, 1);
        lo = _mm_add_pd(lo, hi);
        __m128d high64 = _mm_unpackhi_pd(lo, lo);
        return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
    }
};

template <typename T>
DENSAL_AVX2 inline void axpy_impl(std::size_t n, T a, const T* x, T* y) {
    using L = Lanes<T>;
    constexpr std::size_t w = L::width;
    const auto va = L::set1(a);
    std::size_t i = 0;
    for (; i + 2 * w <= n; i += 2 * w) {
        L::store(y + i, L::fmadd(va, L::load(x + i), L::load(y + i)));
        L::store(y + i + w, L::fmadd(va, L::load(x + i + w), L::load(y + i + w)));
    }
    for (; i + w <= n; i += w) L::store(y + i, L::fmadd(va, L::load(x + i), L::load(y + i)));
    for (; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
DENSAL_AVX2 inline T dot_impl(std::size_t n, const T* x, const T* y) {
    using L = Lanes<T>;
    constexpr std::size_t w = L::width;
    auto acc0 = L::zero();
    auto acc1 = L::zero();
    std::size_t i = 0;
    for (; i + 2 * w <= n; i += 2 * w) {
        acc0 = L::fmadd(L::load(x + i), L::load(y + i), acc0);
        acc1 = L::fmadd(L::load(x + i + w), L::load(y + i + w), acc1);
    }
    for (; i + w <= n; i += w) acc0 = L::fmadd(L::load(x + i), L::load(y + i), acc0);
    T acc = L::hsum(L::add(acc0, acc1));
    for (; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

template <typename T>
DENSAL_AVX2 void axpy(std::size_t n, T a, const T* x, T* y) {
    axpy_impl(n, a, x, y);
}

template <typename T>
DENSAL_AVX2 T dot(std::size_t n, const T* x, const T* y) {
    return dot_impl(n, x, y);
}

template <typename T>
DENSAL_AVX2 void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
                         const T* b, std::size_t ldb, T* c, std::size_t ldc) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * ldc;
        for (std::size_t p = 0; p < k; ++p) {
            const T aip = a[i * lda + p];
            if (aip == T(0)) continue;
            axpy_impl(n, aip, b + p * ldb, crow);
        }
    }
}

template <typename T>
DENSAL_AVX2 void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
                         const T* b, std::size_t ldb, T* c, std::size_t ldc) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] += dot_impl(k, a + i * lda, b + j * ldb);
}

template <typename T>
DENSAL_AVX2 void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
                         const T* b, std::size_t ldb, T* c, std::size_t ldc) {
    for (std::size_t p = 0; p < k; ++p) {
        const T* brow = b + p * ldb;
        for (std::size_t i = 0; i < m; ++i) {
            const T api = a[p * lda + i];
            if (api == T(0)) continue;
            axpy_impl(n, api, brow, c + i * ldc);
        }
    }
}

template <typename T>
DENSAL_AVX2 void relu(std::size_t n, const T* x, T* y) {
    using L = Lanes<T>;
    constexpr std::size_t w = L::width;
    const auto zero = L::zero();
    std::size_t i = 0;
    // max(x, 0) with x as the first operand returns 0 for NaN, matching the scalar path.
    for (; i + w <= n; i += w) L::store(y + i, L::max(L::load(x + i), zero));
    for (; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
constexpr KernelTable<T> kTable{&axpy<T>, &dot<T>, &gemm_nn<T>, &gemm_nt<T>, &gemm_tn<T>, &relu<T>};

}  // namespace

bool cpu_has_avx2() {
    static const bool has = [] {
        __builtin_cpu_init();
        return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    }();
    return has;
}

template <typename T>
const KernelTable<T>* avx2_kernels() {
    return cpu_has_avx2() ? &kTable<T> : nullptr;
}

#else

bool cpu_has_avx2() { return false; }

template <typename T>
const KernelTable<T>* avx2_kernels() {
    return nullptr;
}

#endif

template const KernelTable<float>* avx2_kernels<float>();
template const KernelTable<double>* avx2_kernels<double>();

}  // namespace densal::simd

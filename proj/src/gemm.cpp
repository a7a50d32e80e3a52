#include "hccr/gemm.hpp"

#include <algorithm>
#include <cstring>
#include <memory>
#include <new>

namespace hccr {

namespace {

#if defined(__AVX512F__)
constexpr std::size_t kVecBytes = 64;
constexpr std::size_t kRows = 8;
#elif defined(__AVX__)
constexpr std::size_t kVecBytes = 32;
constexpr std::size_t kRows = 6;
#else
constexpr std::size_t kVecBytes = 16;
constexpr std::size_t kRows = 6;
#endif

template <typename T>
struct Vec;
template <>
struct Vec<float> {
  typedef float type __attribute__((vector_size(kVecBytes)));
};
template <>
struct Vec<double> {
  typedef double type __attribute__((vector_size(kVecBytes)));
};

template <typename T>
struct Blocking {
  static constexpr std::size_t lanes = kVecBytes / sizeof(T);
  static constexpr std::size_t mr = kRows;
  static constexpr std::size_t nr = 2 * lanes;
  static constexpr std::size_t kc = 512;
  static constexpr std::size_t mc = mr * 12;
  static constexpr std::size_t nc = nr * 128;
};

struct AlignedFree {
  void operator()(void* p) const { ::operator delete(p, std::align_val_t{64}); }
};

template <typename T>
T* thread_buffer(std::size_t index, std::size_t count) {
  thread_local std::unique_ptr<T, AlignedFree> buffers[2];
  thread_local std::size_t sizes[2] = {0, 0};
  if (sizes[index] < count) {
    buffers[index].reset(
        static_cast<T*>(::operator new(count * sizeof(T), std::align_val_t{64})));
    sizes[index] = count;
  }
  return buffers[index].get();
}

// Packs an mc x kc block of op(A) into row panels of height mr: for each
// panel, k-major with mr contiguous values. Missing rows are zero.
template <typename T>
void pack_a(Trans trans, const T* a, std::size_t lda, std::size_t row0, std::size_t col0,
            std::size_t mc, std::size_t kc, T* out) {
  constexpr std::size_t mr = Blocking<T>::mr;
  for (std::size_t p = 0; p < mc; p += mr) {
    const std::size_t rows = std::min(mr, mc - p);
    if (trans == Trans::no) {
      for (std::size_t kk = 0; kk < kc; ++kk) {
        std::size_t r = 0;
        for (; r < rows; ++r) out[kk * mr + r] = a[(row0 + p + r) * lda + col0 + kk];
        for (; r < mr; ++r) out[kk * mr + r] = T{0};
      }
    } else {
      for (std::size_t kk = 0; kk < kc; ++kk) {
        const T* src = a + (col0 + kk) * lda + row0 + p;
        std::size_t r = 0;
        for (; r < rows; ++r) out[kk * mr + r] = src[r];
        for (; r < mr; ++r) out[kk * mr + r] = T{0};
      }
    }
    out += mr * kc;
  }
}

// Packs a kc x nc block of op(B) into column panels of width nr.
template <typename T>
void pack_b(Trans trans, const T* b, std::size_t ldb, std::size_t row0, std::size_t col0,
            std::size_t kc, std::size_t nc, T* out) {
  constexpr std::size_t nr = Blocking<T>::nr;
  for (std::size_t p = 0; p < nc; p += nr) {
    const std::size_t cols = std::min(nr, nc - p);
    if (trans == Trans::no) {
      for (std::size_t kk = 0; kk < kc; ++kk) {
        const T* src = b + (row0 + kk) * ldb + col0 + p;
        T* dst = out + kk * nr;
        if (cols == nr) {
          std::memcpy(dst, src, nr * sizeof(T));
        } else {
          std::size_t c = 0;
          for (; c < cols; ++c) dst[c] = src[c];
          for (; c < nr; ++c) dst[c] = T{0};
        }
      }
    } else {
      for (std::size_t kk = 0; kk < kc; ++kk) {
        T* dst = out + kk * nr;
        std::size_t c = 0;
        for (; c < cols; ++c) dst[c] = b[(col0 + p + c) * ldb + row0 + kk];
        for (; c < nr; ++c) dst[c] = T{0};
      }
    }
    out += nr * kc;
  }
}

// C[mr x nr] += alpha * Apanel * Bpanel, with edge tiles clipped to rows x cols.
template <typename T>
void micro_kernel(std::size_t kc, const T* __restrict a, const T* __restrict b, T alpha, T* c,
                  std::size_t ldc, std::size_t rows, std::size_t cols) {
  using V = typename Vec<T>::type;
  constexpr std::size_t mr = Blocking<T>::mr;
  constexpr std::size_t lanes = Blocking<T>::lanes;
  constexpr std::size_t nr = Blocking<T>::nr;

  V acc0[mr];
  V acc1[mr];
#pragma GCC unroll 16
  for (std::size_t r = 0; r < mr; ++r) {
    acc0[r] = V{};
    acc1[r] = V{};
  }
  for (std::size_t kk = 0; kk < kc; ++kk) {
    V b0;
    V b1;
    std::memcpy(&b0, b, sizeof(V));
    std::memcpy(&b1, b + lanes, sizeof(V));
#pragma GCC unroll 16
    for (std::size_t r = 0; r < mr; ++r) {
      const T ar = a[r];
      acc0[r] += b0 * ar;
      acc1[r] += b1 * ar;
    }
    a += mr;
    b += nr;
  }

  if (rows == mr && cols == nr) {
#pragma GCC unroll 16
    for (std::size_t r = 0; r < mr; ++r) {
      T* row = c + r * ldc;
      V c0;
      V c1;
      std::memcpy(&c0, row, sizeof(V));
      std::memcpy(&c1, row + lanes, sizeof(V));
      c0 += acc0[r] * alpha;
      c1 += acc1[r] * alpha;
      std::memcpy(row, &c0, sizeof(V));
      std::memcpy(row + lanes, &c1, sizeof(V));
    }
    return;
  }
  alignas(64) T tile[mr * nr];
  for (std::size_t r = 0; r < mr; ++r) {
    std::memcpy(tile + r * nr, &acc0[r], sizeof(V));
    std::memcpy(tile + r * nr + lanes, &acc1[r], sizeof(V));
  }
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t col = 0; col < cols; ++col) c[r * ldc + col] += alpha * tile[r * nr + col];
  }
}

}  // namespace

template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc) {
  using B = Blocking<T>;
  if (m == 0 || n == 0) return;
  if (beta == T{0}) {
    for (std::size_t i = 0; i < m; ++i) std::fill_n(c + i * ldc, n, T{0});
  } else if (beta != T{1}) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] *= beta;
    }
  }
  if (k == 0 || alpha == T{0}) return;

  T* packed_b = thread_buffer<T>(0, B::kc * B::nc);
  T* packed_a = thread_buffer<T>(1, B::kc * B::mc);

  for (std::size_t jc = 0; jc < n; jc += B::nc) {
    const std::size_t nc = std::min(B::nc, n - jc);
    for (std::size_t pc = 0; pc < k; pc += B::kc) {
      const std::size_t kc = std::min(B::kc, k - pc);
      pack_b(trans_b, b, ldb, pc, jc, kc, nc, packed_b);
      for (std::size_t ic = 0; ic < m; ic += B::mc) {
        const std::size_t mc = std::min(B::mc, m - ic);
        pack_a(trans_a, a, lda, ic, pc, mc, kc, packed_a);
        for (std::size_t jr = 0; jr < nc; jr += B::nr) {
          const std::size_t cols = std::min(B::nr, nc - jr);
          const T* bp = packed_b + jr * kc;
          for (std::size_t ir = 0; ir < mc; ir += B::mr) {
            const std::size_t rows = std::min(B::mr, mc - ir);
            micro_kernel(kc, packed_a + ir * kc, bp, alpha, c + (ic + ir) * ldc + jc + jr, ldc,
                         rows, cols);
          }
        }
      }
    }
  }
}

template void gemm<float>(Trans, Trans, std::size_t, std::size_t, std::size_t, float,
                          const float*, std::size_t, const float*, std::size_t, float, float*,
                          std::size_t);
template void gemm<double>(Trans, Trans, std::size_t, std::size_t, std::size_t, double,
                           const double*, std::size_t, const double*, std::size_t, double,
                           double*, std::size_t);

}  // namespace hccr

#include "preq/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace preq::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr long kParallelWork = 1L << 15;

inline bool worth_parallel(Exec exec, long work) {
  return exec == Exec::parallel && work >= kParallelWork;
}

template <class T>
inline void axpy_row(int m, T alpha, const T* x, T* y) {
  for (int j = 0; j < m; ++j) y[j] += alpha * x[j];
}

}  // namespace

template <class T>
void gemm_nn(Exec exec, int n, int k, int m, const T* a, const T* b, T* c) {
  const long work = static_cast<long>(n) * k * m;
  if (worth_parallel(exec, work)) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
      for (int p = 0; p < k; ++p) axpy_row(m, a[i * k + p], b + p * m, c + i * m);
    }
    return;
  }
  for (int i = 0; i < n; ++i) {
    for (int p = 0; p < k; ++p) axpy_row(m, a[i * k + p], b + p * m, c + i * m);
  }
}

template <class T>
void gemm_tn(Exec exec, int n, int k, int m, const T* a, const T* b, T* c) {
  const long work = static_cast<long>(n) * k * m;
  if (worth_parallel(exec, work)) {
#pragma omp parallel for schedule(static)
    for (int p = 0; p < k; ++p) {
      for (int i = 0; i < n; ++i) axpy_row(m, a[i * k + p], b + i * m, c + p * m);
    }
    return;
  }
  for (int i = 0; i < n; ++i) {
    for (int p = 0; p < k; ++p) axpy_row(m, a[i * k + p], b + i * m, c + p * m);
  }
}

template <class T>
void transpose(int rows, int cols, const T* in, T* out) {
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) out[c * rows + r] = in[r * cols + c];
  }
}

template <class T>
void gemm_nt(Exec exec, int n, int m, int k, const T* a, const T* b, T* c) {
  thread_local std::vector<T> bt;
  bt.resize(static_cast<std::size_t>(k) * m);
  transpose(k, m, b, bt.data());
  gemm_nn(exec, n, m, k, a, bt.data(), c);
}

namespace {

template <class T>
void attention_row(const AttentionShape& s, int h, int i, const T* q, const T* k, const T* v,
                   std::span<const int> limit, std::span<const int> position, const T* rel_bias,
                   T* probs, T* out) {
  const int width = s.n_heads * s.head_dim;
  const int off = h * s.head_dim;
  const T scale = T(1) / std::sqrt(static_cast<T>(s.head_dim));
  T* p = probs + (static_cast<long>(h) * s.n_query + i) * s.n_key;
  std::fill(p, p + s.n_key, T(0));
  T* o = out + static_cast<long>(i) * width + off;
  const int last = std::min(limit[i], s.n_key - 1);
  if (last < 0) return;
  const T* qi = q + static_cast<long>(i) * width + off;
  T best = -std::numeric_limits<T>::infinity();
  for (int j = 0; j <= last; ++j) {
    const T* kj = k + static_cast<long>(j) * width + off;
    T acc = 0;
    for (int d = 0; d < s.head_dim; ++d) acc += qi[d] * kj[d];
    acc *= scale;
    if (rel_bias != nullptr) {
      const int dist = std::clamp(position[i] - j, 0, s.rel_span - 1);
      acc += rel_bias[h * s.rel_span + dist];
    }
    p[j] = acc;
    best = std::max(best, acc);
  }
  T total = 0;
  for (int j = 0; j <= last; ++j) {
    p[j] = std::exp(p[j] - best);
    total += p[j];
  }
  const T inv = T(1) / total;
  for (int j = 0; j <= last; ++j) {
    p[j] *= inv;
    axpy_row(s.head_dim, p[j], v + static_cast<long>(j) * width + off, o);
  }
}

template <class T>
void attention_head_backward(const AttentionShape& s, int h, const T* q, const T* k, const T* v,
                             std::span<const int> limit, std::span<const int> position,
                             const T* probs, const T* d_out, T* dq, T* dk, T* dv, T* d_rel_bias) {
  const int width = s.n_heads * s.head_dim;
  const int off = h * s.head_dim;
  const T scale = T(1) / std::sqrt(static_cast<T>(s.head_dim));
  std::vector<T> dp(static_cast<std::size_t>(s.n_key));
  for (int i = 0; i < s.n_query; ++i) {
    const int last = std::min(limit[i], s.n_key - 1);
    if (last < 0) continue;
    const T* p = probs + (static_cast<long>(h) * s.n_query + i) * s.n_key;
    const T* go = d_out + static_cast<long>(i) * width + off;
    T row_dot = 0;
    for (int j = 0; j <= last; ++j) {
      const T* vj = v + static_cast<long>(j) * width + off;
      T acc = 0;
      for (int d = 0; d < s.head_dim; ++d) acc += go[d] * vj[d];
      dp[j] = acc;
      row_dot += acc * p[j];
      axpy_row(s.head_dim, p[j], go, dv + static_cast<long>(j) * width + off);
    }
    const T* qi = q + static_cast<long>(i) * width + off;
    T* gqi = dq + static_cast<long>(i) * width + off;
    for (int j = 0; j <= last; ++j) {
      const T ds = p[j] * (dp[j] - row_dot);
      if (d_rel_bias != nullptr) {
        const int dist = std::clamp(position[i] - j, 0, s.rel_span - 1);
        d_rel_bias[h * s.rel_span + dist] += ds;
      }
      axpy_row(s.head_dim, ds * scale, k + static_cast<long>(j) * width + off, gqi);
      axpy_row(s.head_dim, ds * scale, qi, dk + static_cast<long>(j) * width + off);
    }
  }
}

}  // namespace

template <class T>
void attention_forward(Exec exec, const AttentionShape& s, const T* q, const T* k, const T* v,
                       std::span<const int> limit, std::span<const int> position,
                       const T* rel_bias, T* probs, T* out) {
  const int width = s.n_heads * s.head_dim;
  std::fill(out, out + static_cast<long>(s.n_query) * width, T(0));
  const int jobs = s.n_heads * s.n_query;
  const long work = static_cast<long>(jobs) * s.n_key * s.head_dim;
  if (worth_parallel(exec, work)) {
#pragma omp parallel for schedule(static)
    for (int job = 0; job < jobs; ++job) {
      attention_row(s, job / s.n_query, job % s.n_query, q, k, v, limit, position, rel_bias, probs,
                    out);
    }
    return;
  }
  for (int job = 0; job < jobs; ++job) {
    attention_row(s, job / s.n_query, job % s.n_query, q, k, v, limit, position, rel_bias, probs,
                  out);
  }
}

template <class T>
void attention_backward(Exec exec, const AttentionShape& s, const T* q, const T* k, const T* v,
                        std::span<const int> limit, std::span<const int> position,
                        const T* probs, const T* d_out, T* dq, T* dk, T* dv, T* d_rel_bias) {
  const long work = static_cast<long>(s.n_heads) * s.n_query * s.n_key * s.head_dim;
  if (worth_parallel(exec, work)) {
#pragma omp parallel for schedule(static)
    for (int h = 0; h < s.n_heads; ++h) {
      attention_head_backward(s, h, q, k, v, limit, position, probs, d_out, dq, dk, dv,
                              d_rel_bias);
    }
    return;
  }
  for (int h = 0; h < s.n_heads; ++h) {
    attention_head_backward(s, h, q, k, v, limit, position, probs, d_out, dq, dk, dv, d_rel_bias);
  }
}

template <class T>
void ordered_sum(Exec exec, std::span<const T* const> parts, std::size_t len, T* out) {
  const long n = static_cast<long>(len);
  const long work = n * static_cast<long>(parts.size());
  if (worth_parallel(exec, work)) {
#pragma omp parallel for schedule(static)
    for (long j = 0; j < n; ++j) {
      T acc = 0;
      for (const T* part : parts) acc += part[j];
      out[j] = acc;
    }
    return;
  }
  for (long j = 0; j < n; ++j) {
    T acc = 0;
    for (const T* part : parts) acc += part[j];
    out[j] = acc;
  }
}

#define PREQ_KERNELS_INSTANTIATE(T)                                                            \
  template void gemm_nn<T>(Exec, int, int, int, const T*, const T*, T*);                       \
  template void gemm_tn<T>(Exec, int, int, int, const T*, const T*, T*);                       \
  template void gemm_nt<T>(Exec, int, int, int, const T*, const T*, T*);                       \
  template void transpose<T>(int, int, const T*, T*);                                          \
  template void attention_forward<T>(Exec, const AttentionShape&, const T*, const T*,          \
                                     const T*, std::span<const int>, std::span<const int>,     \
                                     const T*, T*, T*);                                        \
  template void attention_backward<T>(Exec, const AttentionShape&, const T*, const T*,         \
                                      const T*, std::span<const int>, std::span<const int>,    \
                                      const T*, const T*, T*, T*, T*, T*);                     \
  template void ordered_sum<T>(Exec, std::span<const T* const>, std::size_t, T*);

PREQ_KERNELS_INSTANTIATE(float)
PREQ_KERNELS_INSTANTIATE(double)

#undef PREQ_KERNELS_INSTANTIATE

}  // namespace preq::kernels

#pragma once

// Dense compute kernels shared by the learners and the baseline MLP.
//
// Every kernel exists in two flavours selected by `Exec`: a plain serial loop
// nest kept as the reference, and an OpenMP version that splits work over
// independent output rows (or heads). Both accumulate every output element
// in the same order, so the two paths agree bit for bit.

#include <cstddef>
#include <span>

namespace preq::kernels {

enum class Exec { serial, parallel };

// C[n x m] += A[n x k] * B[k x m]
template <class T>
void gemm_nn(Exec exec, int n, int k, int m, const T* a, const T* b, T* c);

// C[k x m] += A^T * B, with A[n x k] and B[n x m]
template <class T>
void gemm_tn(Exec exec, int n, int k, int m, const T* a, const T* b, T* c);

// C[n x k] += A[n x m] * B^T, with B[k x m]
template <class T>
void gemm_nt(Exec exec, int n, int m, int k, const T* a, const T* b, T* c);

template <class T>
void transpose(int rows, int cols, const T* in, T* out);

// Multi-head scaled dot-product attention over row-major [rows x (heads*head_dim)]
// buffers. Query row i sees key rows j <= limit[i]; when `rel_bias` is given,
// the logit gains rel_bias[h * rel_span + min(position[i] - j, rel_span - 1)].
struct AttentionShape {
  int n_query = 0;
  int n_key = 0;
  int n_heads = 1;
  int head_dim = 1;
  int rel_span = 0;
};

template <class T>
void attention_forward(Exec exec, const AttentionShape& s, const T* q, const T* k, const T* v,
                       std::span<const int> limit, std::span<const int> position,
                       const T* rel_bias, T* probs, T* out);

// Accumulates into dq, dk, dv and d_rel_bias (which may be null).
template <class T>
void attention_backward(Exec exec, const AttentionShape& s, const T* q, const T* k, const T* v,
                        std::span<const int> limit, std::span<const int> position,
                        const T* probs, const T* d_out, T* dq, T* dk, T* dv, T* d_rel_bias);

// out[j] = sum_i parts[i][j], summed in index order i = 0, 1, ...
template <class T>
void ordered_sum(Exec exec, std::span<const T* const> parts, std::size_t len, T* out);

}  // namespace preq::kernels

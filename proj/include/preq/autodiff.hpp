#pragma once

// Tape-based reverse-mode differentiation over small row-major matrices.
//
// A Tape records nodes as ops are applied; `backward` walks them in reverse.
// Instantiated for float (training) and double (gradient checks).

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "preq/kernels.hpp"

namespace preq::ad {

struct Var {
  int id = -1;
  [[nodiscard]] bool valid() const { return id >= 0; }
};

template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&)>;

  explicit Tape(bool record = true, kernels::Exec exec = kernels::Exec::serial)
      : record_(record), exec_(exec) {}

  Var constant(int rows, int cols, std::vector<T> data);
  Var param(int rows, int cols, std::span<const T> data);

  // Adds an op result. `back` runs only when some input requires a gradient.
  Var push(int rows, int cols, std::vector<T> value, std::initializer_list<Var> inputs,
           Backward back);
  Var push(int rows, int cols, std::vector<T> value, std::span<const Var> inputs, Backward back);

  void backward(Var loss);

  [[nodiscard]] int rows(Var v) const { return nodes_[v.id].rows; }
  [[nodiscard]] int cols(Var v) const { return nodes_[v.id].cols; }
  [[nodiscard]] std::span<const T> value(Var v) const { return nodes_[v.id].value; }
  [[nodiscard]] T scalar(Var v) const { return nodes_[v.id].value.at(0); }
  [[nodiscard]] bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  // Empty until backward() has run.
  [[nodiscard]] std::span<T> grad(Var v) { return nodes_[v.id].grad; }
  [[nodiscard]] std::span<const T> grad(Var v) const { return nodes_[v.id].grad; }

  [[nodiscard]] bool recording() const { return record_; }
  [[nodiscard]] kernels::Exec exec() const { return exec_; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    int rows = 0;
    int cols = 0;
    std::vector<T> value;
    std::vector<T> grad;
    bool needs_grad = false;
    Backward back;
  };

  bool record_;
  kernels::Exec exec_;
  std::vector<Node> nodes_;
};

// Matrix products and elementwise arithmetic.
template <class T> Var matmul(Tape<T>& t, Var a, Var b);
template <class T> Var add(Tape<T>& t, Var a, Var b);
template <class T> Var sub(Tape<T>& t, Var a, Var b);
template <class T> Var mul(Tape<T>& t, Var a, Var b);
template <class T> Var scale(Tape<T>& t, Var a, T s);
// a[n x m] + row[1 x m] broadcast over rows
template <class T> Var add_row(Tape<T>& t, Var a, Var row);
template <class T> Var linear(Tape<T>& t, Var x, Var w, Var b);

// Activations.
template <class T> Var relu(Tape<T>& t, Var a);
template <class T> Var gelu(Tape<T>& t, Var a);
template <class T> Var tanh(Tape<T>& t, Var a);
template <class T> Var sigmoid(Tape<T>& t, Var a);

template <class T> Var layer_norm(Tape<T>& t, Var a, Var gain, Var bias);

// Shape manipulation.
template <class T> Var concat_cols(Tape<T>& t, std::span<const Var> parts);
template <class T> Var stack_rows(Tape<T>& t, std::span<const Var> rows);
template <class T> Var gather_rows(Tape<T>& t, Var a, std::span<const int> index);
template <class T> Var slice_cols(Tape<T>& t, Var a, int begin, int end);

struct AttentionSpec {
  int n_heads = 1;
  std::vector<int> limit;     // query row i sees keys 0..limit[i]
  std::vector<int> position;  // query position, used for relative distances
  int rel_span = 0;
};

// Multi-head attention; `rel_bias` is [n_heads x rel_span] or invalid.
template <class T>
Var attention(Tape<T>& t, Var q, Var k, Var v, const AttentionSpec& spec, Var rel_bias = {});

// out[r] = sum_i alpha[r, i] * C_i(x[r]), Chebyshev polynomials of the first kind.
template <class T> Var chebyshev_eval(Tape<T>& t, Var alpha, std::span<const T> x);

// Losses, reduced to 1x1.
// sum_r w[r] * mean_d (pred[r, d] - target[r, d])^2
template <class T>
Var mse_loss(Tape<T>& t, Var pred, std::span<const T> target, std::span<const T> row_weight);
// logits row r holds n_labels groups of n_classes; labels is [rows x n_labels].
template <class T>
Var softmax_xent(Tape<T>& t, Var logits, std::span<const int> labels, int n_labels, int n_classes,
                 std::span<const T> row_weight);
template <class T> Var sum_squares(Tape<T>& t, Var a);
template <class T> Var sum(Tape<T>& t, Var a);

}  // namespace preq::ad

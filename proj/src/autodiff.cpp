#include "preq/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace preq::ad {

using kernels::gemm_nn;
using kernels::gemm_nt;
using kernels::gemm_tn;

template <class T>
Var Tape<T>::constant(int rows, int cols, std::vector<T> data) {
  if (data.size() != static_cast<std::size_t>(rows) * cols) {
    throw std::invalid_argument("constant: data size does not match shape");
  }
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.value = std::move(data);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <class T>
Var Tape<T>::param(int rows, int cols, std::span<const T> data) {
  if (data.size() != static_cast<std::size_t>(rows) * cols) {
    throw std::invalid_argument("param: data size does not match shape");
  }
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.value.assign(data.begin(), data.end());
  n.needs_grad = record_;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <class T>
Var Tape<T>::push(int rows, int cols, std::vector<T> value, std::span<const Var> inputs,
                  Backward back) {
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.value = std::move(value);
  if (record_) {
    for (Var in : inputs) {
      if (in.valid() && nodes_[in.id].needs_grad) n.needs_grad = true;
    }
    if (n.needs_grad) n.back = std::move(back);
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <class T>
Var Tape<T>::push(int rows, int cols, std::vector<T> value, std::initializer_list<Var> inputs,
                  Backward back) {
  return push(rows, cols, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
              std::move(back));
}

template <class T>
void Tape<T>::backward(Var loss) {
  if (!record_) throw std::logic_error("backward on a non-recording tape");
  Node& root = nodes_.at(loss.id);
  if (root.value.size() != 1) throw std::invalid_argument("backward needs a scalar loss");
  if (!std::isfinite(static_cast<double>(root.value[0]))) {
    throw std::runtime_error("backward: non-finite loss");
  }
  for (int i = 0; i <= loss.id; ++i) {
    Node& n = nodes_[i];
    if (n.needs_grad) n.grad.assign(n.value.size(), T(0));
  }
  if (!root.needs_grad) return;
  root.grad[0] = T(1);
  for (int i = loss.id; i >= 0; --i) {
    if (nodes_[i].needs_grad && nodes_[i].back) nodes_[i].back(*this);
  }
}

namespace {

template <class T>
void require_same_shape(const Tape<T>& t, Var a, Var b, const char* op) {
  if (t.rows(a) != t.rows(b) || t.cols(a) != t.cols(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

template <class T, class F, class D>
Var unary(Tape<T>& t, Var a, F f, D dfdx_from_xy) {
  const auto x = t.value(a);
  std::vector<T> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const int self = static_cast<int>(t.size());
  return t.push(t.rows(a), t.cols(a), std::move(y), {a}, [=](Tape<T>& tp) {
    const auto g = tp.grad(Var{self});
    const auto yv = tp.value(Var{self});
    const auto xv = tp.value(a);
    auto ga = tp.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx_from_xy(xv[i], yv[i]);
  });
}

}  // namespace

template <class T>
Var matmul(Tape<T>& t, Var a, Var b) {
  const int n = t.rows(a), k = t.cols(a), m = t.cols(b);
  if (t.rows(b) != k) throw std::invalid_argument("matmul: inner dimension mismatch");
  std::vector<T> out(static_cast<std::size_t>(n) * m, T(0));
  gemm_nn(t.exec(), n, k, m, t.value(a).data(), t.value(b).data(), out.data());
  const int self = static_cast<int>(t.size());
  return t.push(n, m, std::move(out), {a, b}, [=](Tape<T>& tp) {
    const T* g = tp.grad(Var{self}).data();
    if (tp.needs_grad(a)) gemm_nt(tp.exec(), n, m, k, g, tp.value(b).data(), tp.grad(a).data());
    if (tp.needs_grad(b)) gemm_tn(tp.exec(), n, k, m, tp.value(a).data(), g, tp.grad(b).data());
  });
}

template <class T>
Var linear(Tape<T>& t, Var x, Var w, Var b) {
  const int n = t.rows(x), k = t.cols(x), m = t.cols(w);
  if (t.rows(w) != k) throw std::invalid_argument("linear: input width mismatch");
  if (t.rows(b) != 1 || t.cols(b) != m) throw std::invalid_argument("linear: bias shape");
  std::vector<T> out(static_cast<std::size_t>(n) * m);
  const auto bv = t.value(b);
  for (int i = 0; i < n; ++i) std::copy(bv.begin(), bv.end(), out.begin() + i * m);
  gemm_nn(t.exec(), n, k, m, t.value(x).data(), t.value(w).data(), out.data());
  const int self = static_cast<int>(t.size());
  return t.push(n, m, std::move(out), {x, w, b}, [=](Tape<T>& tp) {
    const T* g = tp.grad(Var{self}).data();
    if (tp.needs_grad(x)) gemm_nt(tp.exec(), n, m, k, g, tp.value(w).data(), tp.grad(x).data());
    if (tp.needs_grad(w)) gemm_tn(tp.exec(), n, k, m, tp.value(x).data(), g, tp.grad(w).data());
    if (tp.needs_grad(b)) {
      auto gb = tp.grad(b);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) gb[j] += g[i * m + j];
      }
    }
  });
}

template <class T>
Var add(Tape<T>& t, Var a, Var b) {
  require_same_shape(t, a, b, "add");
  const auto av = t.value(a), bv = t.value(b);
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const int self = static_cast<int>(t.size());
  return t.push(t.rows(a), t.cols(a), std::move(out), {a, b}, [=](Tape<T>& tp) {
    const auto g = tp.grad(Var{self});
    for (Var in : {a, b}) {
      if (!tp.needs_grad(in)) continue;
      auto gi = tp.grad(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

template <class T>
Var sub(Tape<T>& t, Var a, Var b) {
  require_same_shape(t, a, b, "sub");
  const auto av = t.value(a), bv = t.value(b);
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const int self = static_cast<int>(t.size());
  return t.push(t.rows(a), t.cols(a), std::move(out), {a, b}, [=](Tape<T>& tp) {
    const auto g = tp.grad(Var{self});
    if (tp.needs_grad(a)) {
      auto ga = tp.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.needs_grad(b)) {
      auto gb = tp.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <class T>
Var mul(Tape<T>& t, Var a, Var b) {
  require_same_shape(t, a, b, "mul");
  const auto av = t.value(a), bv = t.value(b);
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const int self = static_cast<int>(t.size());
  return t.push(t.rows(a), t.cols(a), std::move(out), {a, b}, [=](Tape<T>& tp) {
    const auto g = tp.grad(Var{self});
    const auto av2 = tp.value(a), bv2 = tp.value(b);
    if (tp.needs_grad(a)) {
      auto ga = tp.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
    }
    if (tp.needs_grad(b)) {
      auto gb = tp.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
    }
  });
}

template <class T>
Var scale(Tape<T>& t, Var a, T s) {
  return unary(t, a, [s](T x) { return s * x; }, [s](T, T) { return s; });
}

template <class T>
Var add_row(Tape<T>& t, Var a, Var row) {
  const int n = t.rows(a), m = t.cols(a);
  if (t.rows(row) != 1 || t.cols(row) != m) throw std::invalid_argument("add_row: shape");
  const auto av = t.value(a), rv = t.value(row);
  std::vector<T> out(av.size());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) out[i * m + j] = av[i * m + j] + rv[j];
  }
  const int self = static_cast<int>(t.size());
  return t.push(n, m, std::move(out), {a, row}, [=](Tape<T>& tp) {
    const auto g = tp.grad(Var{self});
    if (tp.needs_grad(a)) {
      auto ga = tp.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.needs_grad(row)) {
      auto gr = tp.grad(row);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) gr[j] += g[i * m + j];
      }
    }
  });
}

template <class T>
Var relu(Tape<T>& t, Var a) {
  return unary(
      t, a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <class T>
Var gelu(Tape<T>& t, Var a) {
  constexpr T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k = static_cast<T>(0.044715);
  return unary(
      t, a,
      [](T x) { return T(0.5) * x * (T(1) + std::tanh(c * (x + k * x * x * x))); },
      [](T x, T) {
        const T u = c * (x + k * x * x * x);
        const T th = std::tanh(u);
        const T du = c * (T(1) + T(3) * k * x * x);
        return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
      });
}

template <class T>
Var tanh(Tape<T>& t, Var a) {
  return unary(t, a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var sigmoid(Tape<T>& t, Var a) {
  return unary(
      t, a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var layer_norm(Tape<T>& t, Var a, Var gain, Var bias) {
  const int n = t.rows(a), m = t.cols(a);
  if (t.cols(gain) != m || t.cols(bias) != m) throw std::invalid_argument("layer_norm: shape");
  constexpr T eps = static_cast<T>(1e-5);
  const auto x = t.value(a), gv = t.value(gain), bv = t.value(bias);
  std::vector<T> xhat(x.size()), rstd(n), out(x.size());
  for (int i = 0; i < n; ++i) {
    T mean = 0;
    for (int j = 0; j < m; ++j) mean += x[i * m + j];
    mean /= m;
    T var = 0;
    for (int j = 0; j < m; ++j) {
      const T d = x[i * m + j] - mean;
      var += d * d;
    }
    var /= m;
    rstd[i] = T(1) / std::sqrt(var + eps);
    for (int j = 0; j < m; ++j) {
      xhat[i * m + j] = (x[i * m + j] - mean) * rstd[i];
      out[i * m + j] = xhat[i * m + j] * gv[j] + bv[j];
    }
  }
  const int self = static_cast<int>(t.size());
  return t.push(n, m, std::move(out), {a, gain, bias},
                [=, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<T>& tp) {
                  const auto g = tp.grad(Var{self});
                  const auto gv2 = tp.value(gain);
                  if (tp.needs_grad(gain) || tp.needs_grad(bias)) {
                    auto gg = tp.grad(gain);
                    auto gb = tp.grad(bias);
                    for (int i = 0; i < n; ++i) {
                      for (int j = 0; j < m; ++j) {
                        if (!gg.empty()) gg[j] += g[i * m + j] * xhat[i * m + j];
                        if (!gb.empty()) gb[j] += g[i * m + j];
                      }
                    }
                  }
                  if (!tp.needs_grad(a)) return;
                  auto ga = tp.grad(a);
                  for (int i = 0; i < n; ++i) {
                    T mean_dx = 0, mean_dx_xhat = 0;
                    for (int j = 0; j < m; ++j) {
                      const T dx = g[i * m + j] * gv2[j];
                      mean_dx += dx;
                      mean_dx_xhat += dx * xhat[i * m + j];
                    }
                    mean_dx /= m;
                    mean_dx_xhat /= m;
                    for (int j = 0; j < m; ++j) {
                      const T dx = g[i * m + j] * gv2[j];
                      ga[i * m + j] +=
                          rstd[i] * (dx - mean_dx - xhat[i * m + j] * mean_dx_xhat);
                    }
                  }
                });
}

template <class T>
Var concat_cols(Tape<T>& t, std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const int n = t.rows(parts[0]);
  std::vector<int> widths;
  int m = 0;
  for (Var p : parts) {
    if (t.rows(p) != n) throw std::invalid_argument("concat_cols: row mismatch");
    widths.push_back(t.cols(p));
    m += t.cols(p);
  }
  std::vector<T> out(static_cast<std::size_t>(n) * m);
  int off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto v = t.value(parts[p]);
    for (int i = 0; i < n; ++i) {
      std::copy(v.begin() + i * widths[p], v.begin() + (i + 1) * widths[p],
                out.begin() + i * m + off);
    }
    off += widths[p];
  }
  const int self = static_cast<int>(t.size());
  std::vector<Var> ins(parts.begin(), parts.end());
  return t.push(n, m, std::move(out), parts, [=](Tape<T>& tp) {
    const auto g = tp.grad(Var{self});
    int o = 0;
    for (std::size_t p = 0; p < ins.size(); ++p) {
      if (tp.needs_grad(ins[p])) {
        auto gp = tp.grad(ins[p]);
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < widths[p]; ++j) gp[i * widths[p] + j] += g[i * m + o + j];
        }
      }
      o += widths[p];
    }
  });
}

template <class T>
Var stack_rows(Tape<T>& t, std::span<const Var> rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no rows");
  const int m = t.cols(rows[0]);
  std::vector<int> starts;
  int n = 0;
  for (Var r : rows) {
    if (t.cols(r) != m) throw std::invalid_argument("stack_rows: width mismatch");
    starts.push_back(n);
    n += t.rows(r);
  }
  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(n) * m);
  for (Var r : rows) {
    const auto v = t.value(r);
    out.insert(out.end(), v.begin(), v.end());
  }
  const int self = static_cast<int>(t.size());
  std::vector<Var> ins(rows.begin(), rows.end());
  return t.push(n, m, std::move(out), rows, [=](Tape<T>& tp) {
    const auto g = tp.grad(Var{self});
    for (std::size_t r = 0; r < ins.size(); ++r) {
      if (!tp.needs_grad(ins[r])) continue;
      auto gr = tp.grad(ins[r]);
      for (std::size_t i = 0; i < gr.size(); ++i) gr[i] += g[starts[r] * m + i];
    }
  });
}

template <class T>
Var gather_rows(Tape<T>& t, Var a, std::span<const int> index) {
  const int rows = t.rows(a), m = t.cols(a);
  std::vector<int> idx(index.begin(), index.end());
  std::vector<T> out(idx.size() * m);
  const auto v = t.value(a);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= rows) throw std::out_of_range("gather_rows: index out of range");
    std::copy(v.begin() + idx[r] * m, v.begin() + (idx[r] + 1) * m, out.begin() + r * m);
  }
  const int self = static_cast<int>(t.size());
  const int n_out = static_cast<int>(idx.size());
  return t.push(n_out, m, std::move(out), {a},
                [=, idx = std::move(idx)](Tape<T>& tp) {
                  const auto g = tp.grad(Var{self});
                  auto ga = tp.grad(a);
                  for (std::size_t r = 0; r < idx.size(); ++r) {
                    for (int j = 0; j < m; ++j) ga[idx[r] * m + j] += g[r * m + j];
                  }
                });
}

template <class T>
Var slice_cols(Tape<T>& t, Var a, int begin, int end) {
  const int n = t.rows(a), m = t.cols(a);
  if (begin < 0 || end > m || begin >= end) throw std::out_of_range("slice_cols: bad range");
  const int w = end - begin;
  const auto v = t.value(a);
  std::vector<T> out(static_cast<std::size_t>(n) * w);
  for (int i = 0; i < n; ++i) {
    std::copy(v.begin() + i * m + begin, v.begin() + i * m + end, out.begin() + i * w);
  }
  const int self = static_cast<int>(t.size());
  return t.push(n, w, std::move(out), {a}, [=](Tape<T>& tp) {
    const auto g = tp.grad(Var{self});
    auto ga = tp.grad(a);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < w; ++j) ga[i * m + begin + j] += g[i * w + j];
    }
  });
}

template <class T>
Var attention(Tape<T>& t, Var q, Var k, Var v, const AttentionSpec& spec, Var rel_bias) {
  const int width = t.cols(q);
  if (t.cols(k) != width || t.cols(v) != width || t.rows(k) != t.rows(v)) {
    throw std::invalid_argument("attention: q/k/v shapes disagree");
  }
  if (width % spec.n_heads != 0) throw std::invalid_argument("attention: width % heads != 0");
  kernels::AttentionShape s;
  s.n_query = t.rows(q);
  s.n_key = t.rows(k);
  s.n_heads = spec.n_heads;
  s.head_dim = width / spec.n_heads;
  s.rel_span = spec.rel_span;
  if (static_cast<int>(spec.limit.size()) != s.n_query) {
    throw std::invalid_argument("attention: one limit per query row required");
  }
  std::vector<int> position = spec.position;
  if (position.empty()) position = spec.limit;
  if (rel_bias.valid() &&
      (t.rows(rel_bias) != s.n_heads || t.cols(rel_bias) != s.rel_span || s.rel_span < 1)) {
    throw std::invalid_argument("attention: relative bias shape");
  }
  std::vector<T> probs(static_cast<std::size_t>(s.n_heads) * s.n_query * s.n_key);
  std::vector<T> out(static_cast<std::size_t>(s.n_query) * width);
  kernels::attention_forward(t.exec(), s, t.value(q).data(), t.value(k).data(), t.value(v).data(),
                             spec.limit, position,
                             rel_bias.valid() ? t.value(rel_bias).data() : nullptr, probs.data(),
                             out.data());
  const int self = static_cast<int>(t.size());
  std::vector<int> limit = spec.limit;
  auto back = [=, probs = std::move(probs), limit = std::move(limit),
               position = std::move(position)](Tape<T>& tp) {
    const std::size_t qn = static_cast<std::size_t>(s.n_query) * width;
    const std::size_t kn = static_cast<std::size_t>(s.n_key) * width;
    // Inputs without a gradient still need somewhere to write.
    std::vector<T> sq, sk, sv;
    auto target = [&](Var in, std::vector<T>& spare, std::size_t len) -> T* {
      if (tp.needs_grad(in)) return tp.grad(in).data();
      spare.assign(len, T(0));
      return spare.data();
    };
    T* dq = target(q, sq, qn);
    T* dk = target(k, sk, kn);
    T* dv = target(v, sv, kn);
    T* drel = (rel_bias.valid() && tp.needs_grad(rel_bias)) ? tp.grad(rel_bias).data() : nullptr;
    kernels::attention_backward(tp.exec(), s, tp.value(q).data(), tp.value(k).data(),
                                tp.value(v).data(), limit, position, probs.data(),
                                tp.grad(Var{self}).data(), dq, dk, dv, drel);
  };
  if (rel_bias.valid()) return t.push(s.n_query, width, std::move(out), {q, k, v, rel_bias}, back);
  return t.push(s.n_query, width, std::move(out), {q, k, v}, back);
}

template <class T>
Var chebyshev_eval(Tape<T>& t, Var alpha, std::span<const T> x) {
  const int n = t.rows(alpha), nb = t.cols(alpha);
  if (static_cast<int>(x.size()) != n) throw std::invalid_argument("chebyshev_eval: one x per row");
  std::vector<T> basis(static_cast<std::size_t>(n) * nb);
  for (int r = 0; r < n; ++r) {
    T prev = 1, cur = x[r];
    for (int i = 0; i < nb; ++i) {
      if (i == 0) {
        basis[r * nb] = 1;
      } else if (i == 1) {
        basis[r * nb + 1] = x[r];
      } else {
        const T next = T(2) * x[r] * cur - prev;
        prev = cur;
        cur = next;
        basis[r * nb + i] = next;
      }
    }
  }
  const auto av = t.value(alpha);
  std::vector<T> out(n, T(0));
  for (int r = 0; r < n; ++r) {
    for (int i = 0; i < nb; ++i) out[r] += av[r * nb + i] * basis[r * nb + i];
  }
  const int self = static_cast<int>(t.size());
  return t.push(n, 1, std::move(out), {alpha}, [=, basis = std::move(basis)](Tape<T>& tp) {
    const auto g = tp.grad(Var{self});
    auto ga = tp.grad(alpha);
    for (int r = 0; r < n; ++r) {
      for (int i = 0; i < nb; ++i) ga[r * nb + i] += g[r] * basis[r * nb + i];
    }
  });
}

template <class T>
Var mse_loss(Tape<T>& t, Var pred, std::span<const T> target, std::span<const T> row_weight) {
  const int n = t.rows(pred), d = t.cols(pred);
  if (target.size() != static_cast<std::size_t>(n) * d) {
    throw std::invalid_argument("mse_loss: target shape");
  }
  if (!row_weight.empty() && static_cast<int>(row_weight.size()) != n) {
    throw std::invalid_argument("mse_loss: weight per row");
  }
  const auto p = t.value(pred);
  std::vector<T> w(n, T(1));
  if (!row_weight.empty()) w.assign(row_weight.begin(), row_weight.end());
  T total = 0;
  for (int r = 0; r < n; ++r) {
    T acc = 0;
    for (int j = 0; j < d; ++j) {
      const T e = p[r * d + j] - target[r * d + j];
      acc += e * e;
    }
    total += w[r] * acc / d;
  }
  std::vector<T> tgt(target.begin(), target.end());
  const int self = static_cast<int>(t.size());
  return t.push(1, 1, {total}, {pred}, [=, tgt = std::move(tgt), w = std::move(w)](Tape<T>& tp) {
    const T g = tp.grad(Var{self})[0];
    const auto pv = tp.value(pred);
    auto gp = tp.grad(pred);
    for (int r = 0; r < n; ++r) {
      for (int j = 0; j < d; ++j) {
        gp[r * d + j] += g * w[r] * T(2) * (pv[r * d + j] - tgt[r * d + j]) / d;
      }
    }
  });
}

template <class T>
Var softmax_xent(Tape<T>& t, Var logits, std::span<const int> labels, int n_labels, int n_classes,
                 std::span<const T> row_weight) {
  const int n = t.rows(logits);
  if (t.cols(logits) != n_labels * n_classes) throw std::invalid_argument("softmax_xent: width");
  if (labels.size() != static_cast<std::size_t>(n) * n_labels) {
    throw std::invalid_argument("softmax_xent: labels shape");
  }
  if (!row_weight.empty() && static_cast<int>(row_weight.size()) != n) {
    throw std::invalid_argument("softmax_xent: weight per row");
  }
  const auto z = t.value(logits);
  std::vector<T> prob(z.size());
  std::vector<T> w(n, T(1));
  if (!row_weight.empty()) w.assign(row_weight.begin(), row_weight.end());
  T total = 0;
  for (int r = 0; r < n; ++r) {
    for (int l = 0; l < n_labels; ++l) {
      const int base = (r * n_labels + l) * n_classes;
      const int y = labels[r * n_labels + l];
      if (y < 0 || y >= n_classes) throw std::out_of_range("softmax_xent: label out of range");
      T best = z[base];
      for (int c = 1; c < n_classes; ++c) best = std::max(best, z[base + c]);
      T s = 0;
      for (int c = 0; c < n_classes; ++c) {
        prob[base + c] = std::exp(z[base + c] - best);
        s += prob[base + c];
      }
      for (int c = 0; c < n_classes; ++c) prob[base + c] /= s;
      total += w[r] * (std::log(s) + best - z[base + y]);
    }
  }
  std::vector<int> lab(labels.begin(), labels.end());
  const int self = static_cast<int>(t.size());
  return t.push(1, 1, {total}, {logits},
                [=, prob = std::move(prob), lab = std::move(lab), w = std::move(w)](Tape<T>& tp) {
                  const T g = tp.grad(Var{self})[0];
                  auto gz = tp.grad(logits);
                  for (int r = 0; r < n; ++r) {
                    for (int l = 0; l < n_labels; ++l) {
                      const int base = (r * n_labels + l) * n_classes;
                      const int y = lab[r * n_labels + l];
                      for (int c = 0; c < n_classes; ++c) {
                        const T onehot = c == y ? T(1) : T(0);
                        gz[base + c] += g * w[r] * (prob[base + c] - onehot);
                      }
                    }
                  }
                });
}

template <class T>
Var sum_squares(Tape<T>& t, Var a) {
  const auto v = t.value(a);
  T total = 0;
  for (T x : v) total += x * x;
  const int self = static_cast<int>(t.size());
  return t.push(1, 1, {total}, {a}, [=](Tape<T>& tp) {
    const T g = tp.grad(Var{self})[0];
    const auto av = tp.value(a);
    auto ga = tp.grad(a);
    for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g * T(2) * av[i];
  });
}

template <class T>
Var sum(Tape<T>& t, Var a) {
  const auto v = t.value(a);
  T total = 0;
  for (T x : v) total += x;
  const int self = static_cast<int>(t.size());
  return t.push(1, 1, {total}, {a}, [=](Tape<T>& tp) {
    const T g = tp.grad(Var{self})[0];
    auto ga = tp.grad(a);
    for (auto& x : ga) x += g;
  });
}

#define PREQ_AD_INSTANTIATE(T)                                                                  \
  template class Tape<T>;                                                                       \
  template Var matmul<T>(Tape<T>&, Var, Var);                                                   \
  template Var linear<T>(Tape<T>&, Var, Var, Var);                                              \
  template Var add<T>(Tape<T>&, Var, Var);                                                      \
  template Var sub<T>(Tape<T>&, Var, Var);                                                      \
  template Var mul<T>(Tape<T>&, Var, Var);                                                      \
  template Var scale<T>(Tape<T>&, Var, T);                                                      \
  template Var add_row<T>(Tape<T>&, Var, Var);                                                  \
  template Var relu<T>(Tape<T>&, Var);                                                          \
  template Var gelu<T>(Tape<T>&, Var);                                                          \
  template Var tanh<T>(Tape<T>&, Var);                                                          \
  template Var sigmoid<T>(Tape<T>&, Var);                                                       \
  template Var layer_norm<T>(Tape<T>&, Var, Var, Var);                                          \
  template Var concat_cols<T>(Tape<T>&, std::span<const Var>);                                  \
  template Var stack_rows<T>(Tape<T>&, std::span<const Var>);                                   \
  template Var gather_rows<T>(Tape<T>&, Var, std::span<const int>);                             \
  template Var slice_cols<T>(Tape<T>&, Var, int, int);                                          \
  template Var attention<T>(Tape<T>&, Var, Var, Var, const AttentionSpec&, Var);                \
  template Var chebyshev_eval<T>(Tape<T>&, Var, std::span<const T>);                            \
  template Var mse_loss<T>(Tape<T>&, Var, std::span<const T>, std::span<const T>);              \
  template Var softmax_xent<T>(Tape<T>&, Var, std::span<const int>, int, int,                   \
                               std::span<const T>);                                             \
  template Var sum_squares<T>(Tape<T>&, Var);                                                   \
  template Var sum<T>(Tape<T>&, Var);

PREQ_AD_INSTANTIATE(float)
PREQ_AD_INSTANTIATE(double)

#undef PREQ_AD_INSTANTIATE

}  // namespace preq::ad

#pragma once

// Minimal reverse-mode tape used by the audio backbones. Every op computes its
// value eagerly and records a closure that pushes the output gradient back to
// its inputs. Values live in a deque so references stay valid while the graph
// grows.

#include <cmath>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <unordered_map>
#include <vector>

#include "zsa/core/params.hpp"
#include "zsa/core/tensor.hpp"

namespace zsa {

template <class T>
class Graph;

template <class T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return graph->value(id); }
  const Shape& shape() const { return value().shape(); }
};

template <class T>
class Graph {
 public:
  using Backward = std::function<void(Graph&, std::size_t self)>;

  // A graph built with record = false never allocates gradients or stores
  // closures; it is used for inference.
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var<T> constant(Tensor<T> v) { return push(std::move(v), false, nullptr); }

  // Leaf whose gradient is kept (e.g. for input-gradient checks).
  Var<T> leaf(Tensor<T> v) { return push(std::move(v), record_, nullptr); }

  Var<T> param(Parameter<T>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var<T>{this, it->second};
    const bool grad = record_ && p.trainable;
    auto v = push(p.value, grad, grad ? &p : nullptr);
    param_nodes_.emplace(&p, v.id);
    return v;
  }

  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, Backward back) {
    bool grad = false;
    if (record_)
      for (const auto& p : parents) grad = grad || nodes_[p.id].needs_grad;
    auto v = push(std::move(value), grad, nullptr);
    if (grad) nodes_[v.id].back = std::move(back);
    return v;
  }

  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& parents, Backward back) {
    bool grad = false;
    if (record_)
      for (const auto& p : parents) grad = grad || nodes_[p.id].needs_grad;
    auto v = push(std::move(value), grad, nullptr);
    if (grad) nodes_[v.id].back = std::move(back);
    return v;
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(Var<T> v) const { return nodes_[v.id].needs_grad; }

  // Gradient buffer of a node, allocated on first use.
  Tensor<T>& grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.size() != n.value.size()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }
  Tensor<T>& grad(Var<T> v) { return grad(v.id); }
  bool has_grad(std::size_t id) const { return nodes_[id].grad.size() == nodes_[id].value.size() && !nodes_[id].value.empty(); }

  // Backpropagates from a scalar root and accumulates into parameter grads.
  void backward(Var<T> root, T seed = T{1}) {
    if (root.value().size() != 1) throw ConfigError("backward() needs a scalar root");
    if (!nodes_[root.id].needs_grad) return;
    grad(root.id)[0] += seed;
    for (std::size_t i = root.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.needs_grad || n.grad.empty()) continue;
      if (n.back) n.back(*this, i);
      if (n.sink) {
        auto& dst = n.sink->grad;
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Backward back;
    Parameter<T>* sink = nullptr;
    bool needs_grad = false;
  };

  Var<T> push(Tensor<T> v, bool grad, Parameter<T>* sink) {
    nodes_.push_back(Node{std::move(v), {}, {}, sink, grad});
    return Var<T>{this, nodes_.size() - 1};
  }

  bool record_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
};

namespace ops {

namespace detail {
template <class T>
void expect_rank(const Tensor<T>& t, std::size_t r, const char* op) {
  if (t.rank() != r)
    throw DataError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                    shape_str(t.shape()));
}
template <class T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}
}  // namespace detail

template <class T>
T gelu_value(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <class T>
T gelu_derivative(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return cdf + x * pdf;
}

// Stable log(1 + exp(-|x|)) based binary cross-entropy for one logit.
template <class T>
T bce_term(T logit, T target) {
  return std::max(logit, T(0)) - logit * target + std::log1p(std::exp(-std::abs(logit)));
}

template <class T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// a (n x k) * b^T, b (m x k).
template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  const auto& A = a.value();
  const auto& B = b.value();
  detail::expect_rank(A, 2, "matmul_nt");
  detail::expect_rank(B, 2, "matmul_nt");
  const std::size_t n = A.rows(), k = A.cols(), m = B.rows();
  if (B.cols() != k)
    throw DataError("matmul_nt: inner dims " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  Tensor<T> out({n, m});
  gemm_nt(A.data(), B.data(), out.data(), n, k, m);
  return a.graph->record(std::move(out), {a, b}, [a, b, n, k, m](Graph<T>& g, std::size_t self) {
    const auto& G = g.grad(self);
    if (g.needs_grad(a)) gemm_nn(G.data(), b.value().data(), g.grad(a).data(), n, m, k, true);
    if (g.needs_grad(b)) gemm_tn(G.data(), a.value().data(), g.grad(b).data(), n, m, k, true);
  });
}

// a (n x k) * b (k x m).
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& A = a.value();
  const auto& B = b.value();
  detail::expect_rank(A, 2, "matmul");
  detail::expect_rank(B, 2, "matmul");
  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  if (B.rows() != k)
    throw DataError("matmul: inner dims " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  Tensor<T> out({n, m});
  gemm_nn(A.data(), B.data(), out.data(), n, k, m);
  return a.graph->record(std::move(out), {a, b}, [a, b, n, k, m](Graph<T>& g, std::size_t self) {
    const auto& G = g.grad(self);
    // dA = G B^T, dB = A^T G
    if (g.needs_grad(a)) gemm_nt(G.data(), b.value().data(), g.grad(a).data(), n, m, k, true);
    if (g.needs_grad(b)) gemm_tn(a.value().data(), G.data(), g.grad(b).data(), n, k, m, true);
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  if (a.shape() != b.shape())
    throw DataError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = a.value();
  detail::add_into(out, b.value());
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph<T>& g, std::size_t self) {
    const auto& G = g.grad(self);
    if (g.needs_grad(a)) detail::add_into(g.grad(a), G);
    if (g.needs_grad(b)) detail::add_into(g.grad(b), G);
  });
}

// Adds a length-m vector to every row of a (n x m).
template <class T>
Var<T> add_bias(Var<T> a, Var<T> bias) {
  const auto& A = a.value();
  const std::size_t m = A.cols(), n = A.size() / m;
  if (bias.value().size() != m)
    throw DataError("add_bias: bias of size " + std::to_string(bias.value().size()) +
                    " for rows of " + std::to_string(m));
  Tensor<T> out = A;
  const auto& b = bias.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += b[j];
  return a.graph->record(std::move(out), {a, bias}, [a, bias, n, m](Graph<T>& g, std::size_t self) {
    const auto& G = g.grad(self);
    if (g.needs_grad(a)) detail::add_into(g.grad(a), G);
    if (g.needs_grad(bias)) {
      auto& gb = g.grad(bias);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gb[j] += G[i * m + j];
    }
  });
}

// x W^T + b with W stored (out x in).
template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  return add_bias(matmul_nt(x, w), b);
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= s;
  return a.graph->record(std::move(out), {a}, [a, s](Graph<T>& g, std::size_t self) {
    const auto& G = g.grad(self);
    auto& ga = g.grad(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * G[i];
  });
}

template <class T>
Var<T> gelu(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = gelu_value(v);
  return a.graph->record(std::move(out), {a}, [a](Graph<T>& g, std::size_t self) {
    const auto& G = g.grad(self);
    const auto& X = a.value();
    auto& ga = g.grad(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += G[i] * gelu_derivative(X[i]);
  });
}

template <class T>
Var<T> relu(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = v > T(0) ? v : T(0);
  return a.graph->record(std::move(out), {a}, [a](Graph<T>& g, std::size_t self) {
    const auto& G = g.grad(self);
    const auto& X = a.value();
    auto& ga = g.grad(a);
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (X[i] > T(0)) ga[i] += G[i];
  });
}

// Row-wise layer normalisation with affine gamma/beta of length d.
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  const auto& X = x.value();
  detail::expect_rank(X, 2, "layer_norm");
  const std::size_t n = X.rows(), d = X.cols();
  if (gamma.value().size() != d || beta.value().size() != d)
    throw DataError("layer_norm: affine size mismatch");
  Tensor<T> out({n, d});
  Tensor<T> xhat({n, d});
  std::vector<T> rstd(n);
  const auto& ga = gamma.value();
  const auto& be = beta.value();
  for (std::size_t i = 0; i < n; ++i) {
    T mean = 0, var = 0;
    for (std::size_t j = 0; j < d; ++j) mean += X(i, j);
    mean /= T(d);
    for (std::size_t j = 0; j < d; ++j) var += (X(i, j) - mean) * (X(i, j) - mean);
    var /= T(d);
    rstd[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat(i, j) = (X(i, j) - mean) * rstd[i];
      out(i, j) = xhat(i, j) * ga[j] + be[j];
    }
  }
  return x.graph->record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, n, d, xhat = std::move(xhat), rstd = std::move(rstd)](Graph<T>& g,
                                                                              std::size_t self) {
        const auto& G = g.grad(self);
        const auto& gv = gamma.value();
        if (g.needs_grad(gamma) || g.needs_grad(beta)) {
          auto& gg = g.grad(gamma);
          auto& gb = g.grad(beta);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) {
              gg[j] += G(i, j) * xhat(i, j);
              gb[j] += G(i, j);
            }
        }
        if (!g.needs_grad(x)) return;
        auto& gx = g.grad(x);
        std::vector<T> dxhat(d);
        for (std::size_t i = 0; i < n; ++i) {
          T sum = 0, sum_xh = 0;
          for (std::size_t j = 0; j < d; ++j) {
            dxhat[j] = G(i, j) * gv[j];
            sum += dxhat[j];
            sum_xh += dxhat[j] * xhat(i, j);
          }
          for (std::size_t j = 0; j < d; ++j)
            gx(i, j) += rstd[i] / T(d) * (T(d) * dxhat[j] - sum - xhat(i, j) * sum_xh);
        }
      });
}

template <class T>
Var<T> softmax_rows(Var<T> a) {
  const auto& A = a.value();
  detail::expect_rank(A, 2, "softmax_rows");
  const std::size_t n = A.rows(), m = A.cols();
  Tensor<T> out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, A(i, j));
    T s = 0;
    for (std::size_t j = 0; j < m; ++j) s += (out(i, j) = std::exp(A(i, j) - mx));
    for (std::size_t j = 0; j < m; ++j) out(i, j) /= s;
  }
  return a.graph->record(std::move(out), {a}, [a, n, m](Graph<T>& g, std::size_t self) {
    const auto& G = g.grad(self);
    const auto& Y = g.value(self);
    auto& ga = g.grad(a);
    for (std::size_t i = 0; i < n; ++i) {
      T dot = 0;
      for (std::size_t j = 0; j < m; ++j) dot += G(i, j) * Y(i, j);
      for (std::size_t j = 0; j < m; ++j) ga(i, j) += Y(i, j) * (G(i, j) - dot);
    }
  });
}

template <class T>
Var<T> slice_cols(Var<T> a, std::size_t c0, std::size_t c1) {
  const auto& A = a.value();
  detail::expect_rank(A, 2, "slice_cols");
  const std::size_t n = A.rows(), m = A.cols(), w = c1 - c0;
  if (c1 > m || c0 >= c1) throw DataError("slice_cols: bad range");
  Tensor<T> out({n, w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j) out(i, j) = A(i, c0 + j);
  return a.graph->record(std::move(out), {a}, [a, n, m, c0, w](Graph<T>& g, std::size_t self) {
    const auto& G = g.grad(self);
    auto& ga = g.grad(a);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) ga[i * m + c0 + j] += G(i, j);
  });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DataError("concat_cols: no inputs");
  const std::size_t n = parts[0].value().rows();
  std::size_t m = 0;
  for (const auto& p : parts) {
    detail::expect_rank(p.value(), 2, "concat_cols");
    if (p.value().rows() != n) throw DataError("concat_cols: row mismatch");
    m += p.value().cols();
  }
  Tensor<T> out({n, m});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& P = p.value();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < P.cols(); ++j) out(i, off + j) = P(i, j);
    off += P.cols();
  }
  return parts[0].graph->record(std::move(out), parts, [parts, n, m](Graph<T>& g, std::size_t self) {
    const auto& G = g.grad(self);
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t w = p.value().cols();
      if (g.needs_grad(p)) {
        auto& gp = g.grad(p);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < w; ++j) gp(i, j) += G[i * m + off + j];
      }
      off += w;
    }
  });
}

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DataError("concat_rows: no inputs");
  const std::size_t m = parts[0].value().cols();
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.value().cols() != m) throw DataError("concat_rows: column mismatch");
    n += p.value().size() / m;
  }
  std::vector<T> data;
  data.reserve(n * m);
  for (const auto& p : parts) data.insert(data.end(), p.value().values().begin(), p.value().values().end());
  Tensor<T> out({n, m}, std::move(data));
  return parts[0].graph->record(std::move(out), parts, [parts](Graph<T>& g, std::size_t self) {
    const auto& G = g.grad(self);
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t sz = p.value().size();
      if (g.needs_grad(p)) {
        auto& gp = g.grad(p);
        for (std::size_t i = 0; i < sz; ++i) gp[i] += G[off + i];
      }
      off += sz;
    }
  });
}

// Gathers rows by index (repetition allowed); backward scatters.
template <class T>
Var<T> take_rows(Var<T> a, std::vector<std::size_t> idx) {
  const auto& A = a.value();
  const std::size_t m = A.cols();
  Tensor<T> out({idx.size(), m});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= A.rows()) throw DataError("take_rows: index out of range");
    for (std::size_t j = 0; j < m; ++j) out(i, j) = A(idx[i], j);
  }
  return a.graph->record(std::move(out), {a}, [a, m, idx = std::move(idx)](Graph<T>& g, std::size_t self) {
    const auto& G = g.grad(self);
    auto& ga = g.grad(a);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < m; ++j) ga[idx[i] * m + j] += G[i * m + j];
  });
}

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return a.graph->record(std::move(out), {a}, [a](Graph<T>& g, std::size_t self) {
    detail::add_into(g.grad(a), g.grad(self));
  });
}

// Mean over consecutive row groups: rows [0, s0) -> row 0, [s0, s0+s1) -> row 1, ...
template <class T>
Var<T> segment_mean_rows(Var<T> a, std::vector<std::size_t> sizes) {
  const auto& A = a.value();
  const std::size_t m = A.cols();
  std::size_t total = 0;
  for (auto s : sizes) {
    if (s == 0) throw DataError("segment_mean_rows: empty segment");
    total += s;
  }
  if (total != A.size() / m) throw DataError("segment_mean_rows: sizes do not cover rows");
  Tensor<T> out({sizes.size(), m});
  std::size_t r = 0;
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    for (std::size_t k = 0; k < sizes[s]; ++k, ++r)
      for (std::size_t j = 0; j < m; ++j) out(s, j) += A[r * m + j];
    for (std::size_t j = 0; j < m; ++j) out(s, j) /= T(sizes[s]);
  }
  return a.graph->record(std::move(out), {a}, [a, m, sizes = std::move(sizes)](Graph<T>& g, std::size_t self) {
    const auto& G = g.grad(self);
    auto& ga = g.grad(a);
    std::size_t r = 0;
    for (std::size_t s = 0; s < sizes.size(); ++s)
      for (std::size_t k = 0; k < sizes[s]; ++k, ++r)
        for (std::size_t j = 0; j < m; ++j) ga[r * m + j] += G(s, j) / T(sizes[s]);
  });
}

// sum_i a_i * w_i for a fixed weight tensor; handy scalar probe for checks.
template <class T>
Var<T> dot_const(Var<T> a, Tensor<T> w) {
  if (w.size() != a.value().size()) throw DataError("dot_const: size mismatch");
  T s = 0;
  for (std::size_t i = 0; i < w.size(); ++i) s += a.value()[i] * w[i];
  return a.graph->record(Tensor<T>({1}, std::vector<T>{s}), {a},
                         [a, w = std::move(w)](Graph<T>& g, std::size_t self) {
                           const T G = g.grad(self)[0];
                           auto& ga = g.grad(a);
                           for (std::size_t i = 0; i < w.size(); ++i) ga[i] += G * w[i];
                         });
}

// Mean binary cross-entropy over all elements; targets may be soft.
template <class T>
Var<T> bce_with_logits(Var<T> logits, Tensor<T> targets) {
  const auto& L = logits.value();
  if (targets.size() != L.size()) throw DataError("bce_with_logits: target size mismatch");
  T s = 0;
  for (std::size_t i = 0; i < L.size(); ++i) s += bce_term(L[i], targets[i]);
  const T inv = T(1) / T(L.size());
  return logits.graph->record(Tensor<T>({1}, std::vector<T>{s * inv}), {logits},
                              [logits, inv, targets = std::move(targets)](Graph<T>& g, std::size_t self) {
                                const T G = g.grad(self)[0];
                                const auto& L = logits.value();
                                auto& gl = g.grad(logits);
                                for (std::size_t i = 0; i < L.size(); ++i)
                                  gl[i] += G * inv * (sigmoid(L[i]) - targets[i]);
                              });
}

namespace detail {
template <class T>
void im2col3x3(const T* X, std::size_t b, std::size_t Ci, std::size_t H, std::size_t W,
               std::size_t K, std::size_t P, std::vector<T>& cols) {
  cols.assign(P * K, T(0));
  for (std::size_t c = 0; c < Ci; ++c)
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const std::size_t kk = c * 9 + ky * 3 + kx;
        for (std::size_t y = 0; y < H; ++y) {
          const long sy = static_cast<long>(y) + static_cast<long>(ky) - 1;
          if (sy < 0 || sy >= static_cast<long>(H)) continue;
          for (std::size_t xx = 0; xx < W; ++xx) {
            const long sx = static_cast<long>(xx) + static_cast<long>(kx) - 1;
            if (sx < 0 || sx >= static_cast<long>(W)) continue;
            cols[(y * W + xx) * K + kk] = X[((b * Ci + c) * H + sy) * W + sx];
          }
        }
      }
}
}  // namespace detail

// 3x3 convolution, stride 1, zero padding 1, no bias.
// x: [B, Ci, H, W], w: [Co, Ci, 3, 3] -> [B, Co, H, W].
template <class T>
Var<T> conv3x3(Var<T> x, Var<T> w) {
  const auto& X = x.value();
  const auto& Wt = w.value();
  detail::expect_rank(X, 4, "conv3x3");
  detail::expect_rank(Wt, 4, "conv3x3");
  const std::size_t B = X.dim(0), Ci = X.dim(1), H = X.dim(2), W = X.dim(3), Co = Wt.dim(0);
  if (Wt.dim(1) != Ci || Wt.dim(2) != 3 || Wt.dim(3) != 3) throw DataError("conv3x3: weight shape");
  const std::size_t K = Ci * 9, P = H * W;
  auto im2col = [Ci, H, W, K, P](const T* src, std::size_t b, std::vector<T>& cols) {
    detail::im2col3x3(src, b, Ci, H, W, K, P, cols);
  };
  Tensor<T> out({B, Co, H, W});
  std::vector<T> cols, res(P * Co);
  for (std::size_t b = 0; b < B; ++b) {
    im2col(X.data(), b, cols);
    // res[Co, P] = W[Co, K] * cols[P, K]^T
    gemm_nt(Wt.data(), cols.data(), res.data(), Co, K, P);
    std::copy(res.begin(), res.end(), out.data() + b * Co * P);
  }
  return x.graph->record(std::move(out), {x, w}, [x, w, B, Ci, H, W, Co, K, P, im2col](Graph<T>& g, std::size_t self) {
    const auto& G = g.grad(self);
    std::vector<T> cols, dcols(P * K);
    for (std::size_t b = 0; b < B; ++b) {
      const T* Gb = G.data() + b * Co * P;  // [Co, P]
      if (g.needs_grad(w)) {
        im2col(x.value().data(), b, cols);
        // dW[Co, K] += G[Co, P] * cols[P, K]
        gemm_nn(Gb, cols.data(), g.grad(w).data(), Co, P, K, true);
      }
      if (g.needs_grad(x)) {
        // dcols[P, K] = G^T[P, Co] * W[Co, K]
        gemm_tn(Gb, w.value().data(), dcols.data(), Co, P, K, false);
        auto& gx = g.grad(x);
        for (std::size_t c = 0; c < Ci; ++c)
          for (std::size_t ky = 0; ky < 3; ++ky)
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const std::size_t kk = c * 9 + ky * 3 + kx;
              for (std::size_t y = 0; y < H; ++y) {
                const long sy = static_cast<long>(y) + static_cast<long>(ky) - 1;
                if (sy < 0 || sy >= static_cast<long>(H)) continue;
                for (std::size_t xx = 0; xx < W; ++xx) {
                  const long sx = static_cast<long>(xx) + static_cast<long>(kx) - 1;
                  if (sx < 0 || sx >= static_cast<long>(W)) continue;
                  gx[((b * Ci + c) * H + sy) * W + sx] += dcols[(y * W + xx) * K + kk];
                }
              }
            }
      }
    }
  });
}

// Per-channel batch normalisation of [B, C, H, W]. In training mode batch
// statistics are used and the running buffers are updated in place.
template <class T>
Var<T> batch_norm2d(Var<T> x, Var<T> gamma, Var<T> beta, Parameter<T>& running_mean,
                    Parameter<T>& running_var, bool train, T momentum = T(0.1), T eps = T(1e-5)) {
  const auto& X = x.value();
  detail::expect_rank(X, 4, "batch_norm2d");
  const std::size_t B = X.dim(0), C = X.dim(1), HW = X.dim(2) * X.dim(3), N = B * HW;
  std::vector<T> mean(C), rstd(C);
  if (train) {
    for (std::size_t c = 0; c < C; ++c) {
      T s = 0, s2 = 0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < HW; ++i) s += X[(b * C + c) * HW + i];
      const T mu = s / T(N);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < HW; ++i) {
          const T d = X[(b * C + c) * HW + i] - mu;
          s2 += d * d;
        }
      const T var = s2 / T(N);
      mean[c] = mu;
      rstd[c] = T(1) / std::sqrt(var + eps);
      const T unbiased = N > 1 ? s2 / T(N - 1) : var;
      running_mean.value[c] = (T(1) - momentum) * running_mean.value[c] + momentum * mu;
      running_var.value[c] = (T(1) - momentum) * running_var.value[c] + momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = running_mean.value[c];
      rstd[c] = T(1) / std::sqrt(running_var.value[c] + eps);
    }
  }
  const auto& ga = gamma.value();
  const auto& be = beta.value();
  Tensor<T> out(X.shape());
  Tensor<T> xhat(X.shape());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < HW; ++i) {
        const std::size_t k = (b * C + c) * HW + i;
        xhat[k] = (X[k] - mean[c]) * rstd[c];
        out[k] = ga[c] * xhat[k] + be[c];
      }
  return x.graph->record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, B, C, HW, N, train, rstd = std::move(rstd), xhat = std::move(xhat)](
          Graph<T>& g, std::size_t self) {
        const auto& G = g.grad(self);
        const auto& gv = gamma.value();
        std::vector<T> sum_dy(C, T(0)), sum_dy_xh(C, T(0));
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < HW; ++i) {
              const std::size_t k = (b * C + c) * HW + i;
              sum_dy[c] += G[k];
              sum_dy_xh[c] += G[k] * xhat[k];
            }
        if (g.needs_grad(gamma) || g.needs_grad(beta)) {
          auto& gg = g.grad(gamma);
          auto& gb = g.grad(beta);
          for (std::size_t c = 0; c < C; ++c) {
            gg[c] += sum_dy_xh[c];
            gb[c] += sum_dy[c];
          }
        }
        if (!g.needs_grad(x)) return;
        auto& gx = g.grad(x);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < HW; ++i) {
              const std::size_t k = (b * C + c) * HW + i;
              if (train)
                gx[k] += gv[c] * rstd[c] / T(N) *
                         (T(N) * G[k] - sum_dy[c] - xhat[k] * sum_dy_xh[c]);
              else
                gx[k] += gv[c] * rstd[c] * G[k];
            }
      });
}

namespace detail {
template <class T, bool Max>
Var<T> pool2(Var<T> x) {
  const auto& X = x.value();
  expect_rank(X, 4, "pool2");
  const std::size_t B = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  const std::size_t Ho = H / 2, Wo = W / 2;
  if (Ho == 0 || Wo == 0) throw DataError("pool2: input " + shape_str(X.shape()) + " too small");
  Tensor<T> out({B, C, Ho, Wo});
  std::vector<std::size_t> argmax(Max ? out.size() : 0);
  for (std::size_t bc = 0; bc < B * C; ++bc)
    for (std::size_t y = 0; y < Ho; ++y)
      for (std::size_t xx = 0; xx < Wo; ++xx) {
        const std::size_t o = (bc * Ho + y) * Wo + xx;
        const std::size_t i00 = (bc * H + 2 * y) * W + 2 * xx;
        const std::size_t idx[4] = {i00, i00 + 1, i00 + W, i00 + W + 1};
        if constexpr (Max) {
          std::size_t best = idx[0];
          for (auto k : idx)
            if (X[k] > X[best]) best = k;
          out[o] = X[best];
          argmax[o] = best;
        } else {
          out[o] = T(0.25) * (X[idx[0]] + X[idx[1]] + X[idx[2]] + X[idx[3]]);
        }
      }
  return x.graph->record(std::move(out), {x}, [x, B, C, H, W, Ho, Wo, argmax = std::move(argmax)](Graph<T>& g, std::size_t self) {
    const auto& G = g.grad(self);
    auto& gx = g.grad(x);
    for (std::size_t bc = 0; bc < B * C; ++bc)
      for (std::size_t y = 0; y < Ho; ++y)
        for (std::size_t xx = 0; xx < Wo; ++xx) {
          const std::size_t o = (bc * Ho + y) * Wo + xx;
          if constexpr (Max) {
            gx[argmax[o]] += G[o];
          } else {
            const std::size_t i00 = (bc * H + 2 * y) * W + 2 * xx;
            const T v = T(0.25) * G[o];
            gx[i00] += v;
            gx[i00 + 1] += v;
            gx[i00 + W] += v;
            gx[i00 + W + 1] += v;
          }
        }
  });
}
}  // namespace detail

// 2x2 pooling with stride 2; odd trailing rows/columns are dropped.
template <class T>
Var<T> avg_pool2(Var<T> x) {
  return detail::pool2<T, false>(x);
}
template <class T>
Var<T> max_pool2(Var<T> x) {
  return detail::pool2<T, true>(x);
}

// [B, C, F, T] -> [B, C, T], averaging over the frequency axis.
template <class T>
Var<T> mean_over_freq(Var<T> x) {
  const auto& X = x.value();
  detail::expect_rank(X, 4, "mean_over_freq");
  const std::size_t BC = X.dim(0) * X.dim(1), F = X.dim(2), Tm = X.dim(3);
  Tensor<T> out({X.dim(0), X.dim(1), Tm});
  for (std::size_t bc = 0; bc < BC; ++bc)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t t = 0; t < Tm; ++t) out[bc * Tm + t] += X[(bc * F + f) * Tm + t] / T(F);
  return x.graph->record(std::move(out), {x}, [x, BC, F, Tm](Graph<T>& g, std::size_t self) {
    const auto& G = g.grad(self);
    auto& gx = g.grad(x);
    for (std::size_t bc = 0; bc < BC; ++bc)
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t t = 0; t < Tm; ++t) gx[(bc * F + f) * Tm + t] += G[bc * Tm + t] / T(F);
  });
}

// [B, C, T] -> [B, C]: mean over time plus max over time.
template <class T>
Var<T> time_mean_plus_max(Var<T> x) {
  const auto& X = x.value();
  detail::expect_rank(X, 3, "time_mean_plus_max");
  const std::size_t B = X.dim(0), C = X.dim(1), Tm = X.dim(2);
  Tensor<T> out({B, C});
  std::vector<std::size_t> arg(B * C);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    T s = 0;
    std::size_t best = 0;
    for (std::size_t t = 0; t < Tm; ++t) {
      s += X[bc * Tm + t];
      if (X[bc * Tm + t] > X[bc * Tm + best]) best = t;
    }
    arg[bc] = best;
    out[bc] = s / T(Tm) + X[bc * Tm + best];
  }
  return x.graph->record(std::move(out), {x}, [x, B, C, Tm, arg = std::move(arg)](Graph<T>& g, std::size_t self) {
    const auto& G = g.grad(self);
    auto& gx = g.grad(x);
    for (std::size_t bc = 0; bc < B * C; ++bc) {
      for (std::size_t t = 0; t < Tm; ++t) gx[bc * Tm + t] += G[bc] / T(Tm);
      gx[bc * Tm + arg[bc]] += G[bc];
    }
  });
}

}  // namespace ops
}  // namespace zsa

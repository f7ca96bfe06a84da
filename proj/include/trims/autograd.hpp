#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trims/error.hpp"
#include "trims/tensor.hpp"

namespace trims {

template <class T>
class Graph;

// Handle to a node of a Graph. Cheap to copy; only valid while the graph lives.
template <class T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return graph->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

// Tape-based reverse-mode autodiff. Nodes are appended in evaluation order,
// so reverse insertion order is a valid topological order for backward.
// A graph is single-threaded; separate graphs may run on separate threads.
template <class T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Untracked input.
  Var<T> constant(Tensor<T> v) { return push(std::move(v), nullptr, false, nullptr, {}); }

  // Tracked leaf owned by the graph; read its gradient with grad().
  Var<T> variable(Tensor<T> v) { return push(std::move(v), nullptr, true, nullptr, {}); }

  // Leaf referencing an external tensor. On backward its gradient is added
  // into *sink; a null sink makes the parameter untracked.
  Var<T> parameter(const Tensor<T>& v, Tensor<T>* sink) {
    if (sink && sink->shape() != v.shape()) {
      throw ShapeError("gradient sink " + shape_str(sink->shape()) + " does not match parameter " +
                       shape_str(v.shape()));
    }
    return push(Tensor<T>{}, &v, sink != nullptr, sink, {});
  }

  // Records an op result. The node is tracked iff any input is tracked.
  Var<T> record(Tensor<T> v, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    bool tracked = false;
    for (const auto& in : inputs) tracked = tracked || nodes_[in.id].tracked;
    return push(std::move(v), nullptr, tracked, nullptr, tracked ? std::move(fn) : BackwardFn{});
  }
  Var<T> record(Tensor<T> v, std::span<const Var<T>> inputs, BackwardFn fn) {
    bool tracked = false;
    for (const auto& in : inputs) tracked = tracked || nodes_[in.id].tracked;
    return push(std::move(v), nullptr, tracked, nullptr, tracked ? std::move(fn) : BackwardFn{});
  }

  const Tensor<T>& value(Var<T> v) const { return value(v.id); }
  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }

  bool tracked(Var<T> v) const { return nodes_[v.id].tracked; }
  bool tracked(std::size_t id) const { return nodes_[id].tracked; }

  // Gradient of the last backward() w.r.t. this node; zeros if it received none.
  Tensor<T> grad(Var<T> v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.empty()) return Tensor<T>(value(v).shape());
    return n.grad;
  }

  // Gradient buffer of node `id`, allocated on first use. Only valid on tracked nodes.
  Tensor<T>& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape());
    return n.grad;
  }

  const Tensor<T>* grad_if_any(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.grad.empty() ? nullptr : &n.grad;
  }

  void backward(Var<T> loss) {
    const Tensor<T>& lv = value(loss);
    if (lv.size() != 1) {
      throw ShapeError("backward requires a scalar loss, got shape " + shape_str(lv.shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor<T>{};
    if (!nodes_[loss.id].tracked) return;
    grad_buffer(loss.id)[0] = T(1);
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.tracked || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, id);
      if (n.sink) {
        auto dst = n.sink->data();
        auto src = n.grad.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      }
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    bool tracked = false;
    Tensor<T>* sink = nullptr;
    BackwardFn backward;
    Tensor<T> grad;
  };

  Var<T> push(Tensor<T> v, const Tensor<T>* ext, bool tracked, Tensor<T>* sink, BackwardFn fn) {
    nodes_.push_back(Node{std::move(v), ext, tracked, sink, std::move(fn), {}});
    return Var<T>{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

namespace detail {

template <class T>
void same_graph(Var<T> a, Var<T> b, const char* op) {
  if (a.graph != b.graph) throw ShapeError(std::string(op) + ": operands belong to different graphs");
}

template <class T>
[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

template <class T>
void require_matrix(const char* op, const Tensor<T>& t) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

}  // namespace detail

// a[n x k] * b[k x m]
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::same_graph(a, b, "matmul");
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require_matrix("matmul", av);
  detail::require_matrix("matmul", bv);
  if (av.shape()[1] != bv.shape()[0]) detail::shape_fail<T>("matmul", av.shape(), bv.shape());
  const std::size_t n = av.shape()[0], k = av.shape()[1], m = bv.shape()[1];
  Tensor<T> out({n, m});
  kernels::gemm_nn(n, k, m, av.data().data(), bv.data().data(), out.data().data(), false);
  return a.graph->record(std::move(out), {a, b}, [a, b, n, k, m](Graph<T>& g, std::size_t self) {
    const T* dc = g.grad_if_any(self)->data().data();
    if (g.tracked(a)) {
      kernels::gemm_nt(n, m, k, dc, g.value(b).data().data(), g.grad_buffer(a.id).data().data(), true);
    }
    if (g.tracked(b)) {
      kernels::gemm_tn(n, k, m, g.value(a).data().data(), dc, g.grad_buffer(b.id).data().data(), true);
    }
  });
}

// a[n x k] * b[m x k]^T
template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  detail::same_graph(a, b, "matmul_nt");
  const auto& av = a.value();
  const auto& bv = b.value();
  detail::require_matrix("matmul_nt", av);
  detail::require_matrix("matmul_nt", bv);
  if (av.shape()[1] != bv.shape()[1]) detail::shape_fail<T>("matmul_nt", av.shape(), bv.shape());
  const std::size_t n = av.shape()[0], k = av.shape()[1], m = bv.shape()[0];
  Tensor<T> out({n, m});
  kernels::gemm_nt(n, k, m, av.data().data(), bv.data().data(), out.data().data(), false);
  return a.graph->record(std::move(out), {a, b}, [a, b, n, k, m](Graph<T>& g, std::size_t self) {
    const T* dc = g.grad_if_any(self)->data().data();
    if (g.tracked(a)) {
      kernels::gemm_nn(n, m, k, dc, g.value(b).data().data(), g.grad_buffer(a.id).data().data(), true);
    }
    if (g.tracked(b)) {
      kernels::gemm_tn(n, m, k, dc, g.value(a).data().data(), g.grad_buffer(b.id).data().data(), true);
    }
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::same_graph(a, b, "add");
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() != bv.shape()) detail::shape_fail<T>("add", av.shape(), bv.shape());
  Tensor<T> out = av;
  auto o = out.data();
  auto bd = bv.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph<T>& g, std::size_t self) {
    auto d = g.grad_if_any(self)->data();
    for (Var<T> in : {a, b}) {
      if (!g.tracked(in)) continue;
      auto dst = g.grad_buffer(in.id).data();
      for (std::size_t i = 0; i < d.size(); ++i) dst[i] += d[i];
    }
  });
}

// x[n x m] + bias[m], broadcast over rows.
template <class T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  detail::same_graph(x, bias, "add_bias");
  const auto& xv = x.value();
  const auto& bv = bias.value();
  detail::require_matrix("add_bias", xv);
  if (bv.rank() != 1 || bv.size() != xv.cols()) detail::shape_fail<T>("add_bias", xv.shape(), bv.shape());
  Tensor<T> out = xv;
  const std::size_t n = xv.rows(), m = xv.cols();
  for (std::size_t r = 0; r < n; ++r) {
    auto row = out.row(r);
    for (std::size_t j = 0; j < m; ++j) row[j] += bv[j];
  }
  return x.graph->record(std::move(out), {x, bias}, [x, bias, n, m](Graph<T>& g, std::size_t self) {
    const auto& d = *g.grad_if_any(self);
    if (g.tracked(x)) {
      auto dst = g.grad_buffer(x.id).data();
      auto src = d.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
    if (g.tracked(bias)) {
      auto& db = g.grad_buffer(bias.id);
      for (std::size_t r = 0; r < n; ++r) {
        auto row = d.row(r);
        for (std::size_t j = 0; j < m; ++j) db[j] += row[j];
      }
    }
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::same_graph(a, b, "mul");
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() != bv.shape()) detail::shape_fail<T>("mul", av.shape(), bv.shape());
  Tensor<T> out = av;
  auto o = out.data();
  auto bd = bv.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bd[i];
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph<T>& g, std::size_t self) {
    auto d = g.grad_if_any(self)->data();
    if (g.tracked(a)) {
      auto dst = g.grad_buffer(a.id).data();
      auto other = g.value(b).data();
      for (std::size_t i = 0; i < d.size(); ++i) dst[i] += d[i] * other[i];
    }
    if (g.tracked(b)) {
      auto dst = g.grad_buffer(b.id).data();
      auto other = g.value(a).data();
      for (std::size_t i = 0; i < d.size(); ++i) dst[i] += d[i] * other[i];
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= s;
  return a.graph->record(std::move(out), {a}, [a, s](Graph<T>& g, std::size_t self) {
    auto d = g.grad_if_any(self)->data();
    auto dst = g.grad_buffer(a.id).data();
    for (std::size_t i = 0; i < d.size(); ++i) dst[i] += s * d[i];
  });
}

// Rows of table[V x d] selected by ids -> [n x d].
template <class T>
Var<T> embedding(Var<T> table, std::span<const int> ids) {
  const auto& tv = table.value();
  detail::require_matrix("embedding", tv);
  const std::size_t vocab = tv.rows(), d = tv.cols();
  std::vector<int> idv(ids.begin(), ids.end());
  Tensor<T> out({idv.size(), d});
  for (std::size_t i = 0; i < idv.size(); ++i) {
    if (idv[i] < 0 || static_cast<std::size_t>(idv[i]) >= vocab) {
      throw ShapeError("embedding: id " + std::to_string(idv[i]) + " at position " + std::to_string(i) +
                       " out of range for table " + shape_str(tv.shape()));
    }
    auto src = tv.row(static_cast<std::size_t>(idv[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return table.graph->record(std::move(out), {table}, [table, idv = std::move(idv), d](Graph<T>& g, std::size_t self) {
    const auto& dy = *g.grad_if_any(self);
    auto& dt = g.grad_buffer(table.id);
    for (std::size_t i = 0; i < idv.size(); ++i) {
      auto src = dy.row(i);
      auto dst = dt.row(static_cast<std::size_t>(idv[i]));
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

// Per-row normalization of x[n x d] with affine gamma[d], beta[d].
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  detail::same_graph(x, gamma, "layer_norm");
  detail::same_graph(x, beta, "layer_norm");
  const auto& xv = x.value();
  detail::require_matrix("layer_norm", xv);
  const std::size_t n = xv.rows(), d = xv.cols();
  if (gamma.value().size() != d || beta.value().size() != d || gamma.value().rank() != 1 ||
      beta.value().rank() != 1) {
    detail::shape_fail<T>("layer_norm", xv.shape(), gamma.value().shape());
  }
  Tensor<T> xhat({n, d});
  std::vector<T> rstd(n);
  Tensor<T> out({n, d});
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t r = 0; r < n; ++r) {
    auto xr = xv.row(r);
    T mean = 0;
    for (T v : xr) mean += v;
    mean /= static_cast<T>(d);
    T var = 0;
    for (T v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    auto hr = xhat.row(r);
    auto orow = out.row(r);
    for (std::size_t j = 0; j < d; ++j) {
      hr[j] = (xr[j] - mean) * rs;
      orow[j] = hr[j] * gv[j] + bv[j];
    }
  }
  return x.graph->record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, n, d, xhat = std::move(xhat), rstd = std::move(rstd)](Graph<T>& g, std::size_t self) {
        const auto& dy = *g.grad_if_any(self);
        const auto& gv = g.value(gamma);
        if (g.tracked(gamma) || g.tracked(beta)) {
          Tensor<T>* dg = g.tracked(gamma) ? &g.grad_buffer(gamma.id) : nullptr;
          Tensor<T>* db = g.tracked(beta) ? &g.grad_buffer(beta.id) : nullptr;
          for (std::size_t r = 0; r < n; ++r) {
            auto dr = dy.row(r);
            auto hr = xhat.row(r);
            for (std::size_t j = 0; j < d; ++j) {
              if (dg) (*dg)[j] += dr[j] * hr[j];
              if (db) (*db)[j] += dr[j];
            }
          }
        }
        if (g.tracked(x)) {
          auto& dx = g.grad_buffer(x.id);
          std::vector<T> dxhat(d);
          for (std::size_t r = 0; r < n; ++r) {
            auto dr = dy.row(r);
            auto hr = xhat.row(r);
            T mean_dxhat = 0, mean_dxhat_xhat = 0;
            for (std::size_t j = 0; j < d; ++j) {
              dxhat[j] = dr[j] * gv[j];
              mean_dxhat += dxhat[j];
              mean_dxhat_xhat += dxhat[j] * hr[j];
            }
            mean_dxhat /= static_cast<T>(d);
            mean_dxhat_xhat /= static_cast<T>(d);
            auto out_row = dx.row(r);
            for (std::size_t j = 0; j < d; ++j) {
              out_row[j] += rstd[r] * (dxhat[j] - mean_dxhat - hr[j] * mean_dxhat_xhat);
            }
          }
        }
      });
}

// tanh approximation of GELU.
template <class T>
Var<T> gelu(Var<T> x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = T(0.044715);
  Tensor<T> out = x.value();
  for (auto& v : out.data()) {
    const T u = c * (v + a * v * v * v);
    v = T(0.5) * v * (T(1) + std::tanh(u));
  }
  return x.graph->record(std::move(out), {x}, [x](Graph<T>& g, std::size_t self) {
    auto d = g.grad_if_any(self)->data();
    auto xv = g.value(x).data();
    auto dst = g.grad_buffer(x.id).data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const T v = xv[i];
      const T th = std::tanh(c * (v + a * v * v * v));
      const T deriv = T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * c * (T(1) + T(3) * a * v * v);
      dst[i] += d[i] * deriv;
    }
  });
}

// Row-wise softmax. With causal=true, row i only spans columns 0..i and the
// remaining entries are exactly zero.
template <class T>
Var<T> softmax_rows(Var<T> x, bool causal = false) {
  const auto& xv = x.value();
  detail::require_matrix("softmax_rows", xv);
  const std::size_t n = xv.rows(), m = xv.cols();
  Tensor<T> out({n, m});
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t width = causal ? std::min(m, r + 1) : m;
    auto xr = xv.row(r);
    auto yr = out.row(r);
    T mx = xr[0];
    for (std::size_t j = 1; j < width; ++j) mx = std::max(mx, xr[j]);
    T sum = 0;
    for (std::size_t j = 0; j < width; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const T inv = T(1) / sum;
    for (std::size_t j = 0; j < width; ++j) yr[j] *= inv;
  }
  return x.graph->record(std::move(out), {x}, [x, n, m](Graph<T>& g, std::size_t self) {
    const auto& dy = *g.grad_if_any(self);
    const auto& y = g.value(self);
    auto& dx = g.grad_buffer(x.id);
    for (std::size_t r = 0; r < n; ++r) {
      auto yr = y.row(r);
      auto dr = dy.row(r);
      T dot = 0;
      for (std::size_t j = 0; j < m; ++j) dot += yr[j] * dr[j];
      auto out_row = dx.row(r);
      for (std::size_t j = 0; j < m; ++j) out_row[j] += yr[j] * (dr[j] - dot);
    }
  });
}

// Columns [begin, begin + count) of x[n x m].
template <class T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t count) {
  const auto& xv = x.value();
  detail::require_matrix("slice_cols", xv);
  const std::size_t n = xv.rows(), m = xv.cols();
  if (begin + count > m) {
    throw ShapeError("slice_cols: columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + shape_str(xv.shape()));
  }
  Tensor<T> out({n, count});
  for (std::size_t r = 0; r < n; ++r) {
    auto src = xv.row(r).subspan(begin, count);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return x.graph->record(std::move(out), {x}, [x, n, begin, count](Graph<T>& g, std::size_t self) {
    const auto& dy = *g.grad_if_any(self);
    auto& dx = g.grad_buffer(x.id);
    for (std::size_t r = 0; r < n; ++r) {
      auto src = dy.row(r);
      auto dst = dx.row(r).subspan(begin, count);
      for (std::size_t j = 0; j < count; ++j) dst[j] += src[j];
    }
  });
}

template <class T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Graph<T>* graph = parts[0].graph;
  const std::size_t n = parts[0].value().rows();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::same_graph(parts[0], p, "concat_cols");
    detail::require_matrix("concat_cols", p.value());
    if (p.value().rows() != n) detail::shape_fail<T>("concat_cols", parts[0].shape(), p.shape());
    offsets.push_back(total);
    total += p.value().cols();
  }
  Tensor<T> out({n, total});
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& pv = parts[i].value();
    for (std::size_t r = 0; r < n; ++r) {
      auto src = pv.row(r);
      std::copy(src.begin(), src.end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(offsets[i]));
    }
  }
  std::vector<Var<T>> inputs(parts.begin(), parts.end());
  return graph->record(std::move(out), parts,
                       [inputs, offsets = std::move(offsets), n](Graph<T>& g, std::size_t self) {
                         const auto& dy = *g.grad_if_any(self);
                         for (std::size_t i = 0; i < inputs.size(); ++i) {
                           if (!g.tracked(inputs[i])) continue;
                           auto& dx = g.grad_buffer(inputs[i].id);
                           const std::size_t w = dx.cols();
                           for (std::size_t r = 0; r < n; ++r) {
                             auto src = dy.row(r).subspan(offsets[i], w);
                             auto dst = dx.row(r);
                             for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
                           }
                         }
                       });
}

// Weighted softmax cross-entropy: sum_i w_i * (-log softmax(logits_i)[target_i]).
// Rows with weight zero are skipped entirely, so their targets are never read.
template <class T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> targets, std::span<const T> weights) {
  const auto& lv = logits.value();
  detail::require_matrix("cross_entropy", lv);
  const std::size_t n = lv.rows(), v = lv.cols();
  if (targets.size() != n || weights.size() != n) {
    throw ShapeError("cross_entropy: logits " + shape_str(lv.shape()) + " vs " + std::to_string(targets.size()) +
                     " targets and " + std::to_string(weights.size()) + " weights");
  }
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<T> w(weights.begin(), weights.end());
  Tensor<T> probs({n, v});
  T loss = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (w[r] == T(0)) continue;
    if (tg[r] < 0 || static_cast<std::size_t>(tg[r]) >= v) {
      throw ShapeError("cross_entropy: target " + std::to_string(tg[r]) + " at row " + std::to_string(r) +
                       " out of range for " + std::to_string(v) + " classes");
    }
    auto lr = lv.row(r);
    auto pr = probs.row(r);
    T mx = lr[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, lr[j]);
    T sum = 0;
    for (std::size_t j = 0; j < v; ++j) {
      pr[j] = std::exp(lr[j] - mx);
      sum += pr[j];
    }
    const T lse = mx + std::log(sum);
    for (std::size_t j = 0; j < v; ++j) pr[j] /= sum;
    loss += w[r] * (lse - lr[static_cast<std::size_t>(tg[r])]);
  }
  Tensor<T> out(Shape{}, std::vector<T>{loss});
  return logits.graph->record(
      std::move(out), {logits},
      [logits, n, v, tg = std::move(tg), w = std::move(w), probs = std::move(probs)](Graph<T>& g, std::size_t self) {
        const T dl = (*g.grad_if_any(self))[0];
        auto& dx = g.grad_buffer(logits.id);
        for (std::size_t r = 0; r < n; ++r) {
          if (w[r] == T(0)) continue;
          auto pr = probs.row(r);
          auto dr = dx.row(r);
          const T s = dl * w[r];
          for (std::size_t j = 0; j < v; ++j) dr[j] += s * pr[j];
          dr[static_cast<std::size_t>(tg[r])] -= s;
        }
      });
}

template <class T>
Var<T> sum(Var<T> x) {
  T s = 0;
  for (T v : x.value().data()) s += v;
  return x.graph->record(Tensor<T>(Shape{}, std::vector<T>{s}), {x}, [x](Graph<T>& g, std::size_t self) {
    const T d = (*g.grad_if_any(self))[0];
    for (auto& v : g.grad_buffer(x.id).data()) v += d;
  });
}

template <class T>
Var<T> sum_squares(Var<T> x) {
  T s = 0;
  for (T v : x.value().data()) s += v * v;
  return x.graph->record(Tensor<T>(Shape{}, std::vector<T>{s}), {x}, [x](Graph<T>& g, std::size_t self) {
    const T d = (*g.grad_if_any(self))[0];
    auto xv = g.value(x).data();
    auto dst = g.grad_buffer(x.id).data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += T(2) * xv[i] * d;
  });
}

}  // namespace trims

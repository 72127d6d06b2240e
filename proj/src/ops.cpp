#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "attnmamba/autograd.hpp"

namespace attnmamba {

namespace {

template <typename T>
Graph<T>& graph_of(Var<T> a, Var<T> b) {
  if (a.graph == nullptr || a.graph != b.graph) {
    throw std::invalid_argument("operands belong to different graphs");
  }
  return *a.graph;
}

template <typename T>
void require_same_shape(const char* op, Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

// Decomposes a shape around `axis` into (outer, extent, inner).
struct AxisView {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_to_string(shape));
  }
  AxisView v;
  for (std::size_t d = 0; d < axis; ++d) v.outer *= shape[d];
  v.extent = shape[axis];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) v.inner *= shape[d];
  return v;
}

// For each flat index of `shape`, the flat index into the broadcast operand.
std::vector<std::size_t> broadcast_map(const char* op, const Shape& shape, const Shape& small) {
  if (shape.size() != small.size()) {
    throw ShapeError(std::string(op) + ": rank mismatch " + shape_to_string(shape) + " vs " +
                     shape_to_string(small));
  }
  const std::size_t rank = shape.size();
  std::vector<std::size_t> strides(rank, 0);
  std::size_t stride = 1;
  for (std::size_t d = rank; d-- > 0;) {
    if (small[d] != shape[d] && small[d] != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_to_string(small) + " to " +
                       shape_to_string(shape));
    }
    strides[d] = small[d] == 1 ? 0 : stride;
    stride *= small[d];
  }
  const std::size_t n = shape_numel(shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map[i] = j;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      j += strides[d];
      if (idx[d] < shape[d]) break;
      j -= strides[d] * idx[d];
      idx[d] = 0;
    }
  }
  return map;
}

template <typename T, typename F, typename D>
Var<T> unary(const char* op, Var<T> x, F forward, D derivative) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = forward(xv[i]);
  const std::size_t xid = x.id;
  return x.graph->record(op, std::move(out), {xid},
                         [xid, derivative](Graph<T>& g, const Tensor<T>& gy) {
                           const Tensor<T>& xv = g.value(xid);
                           auto& gx = g.grad_buffer(xid);
                           for (std::size_t i = 0; i < xv.numel(); ++i) gx[i] += gy[i] * derivative(xv[i]);
                         });
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// out[M,P] += a[M,K] @ b[K,P]
template <typename T>
void gemm_nn(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    T* orow = out + i * p;
    const T* arow = a + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      const T* brow = b + kk * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += av * brow[j];
    }
  }
}

// out[M,K] += g[M,P] @ b[K,P]^T
template <typename T>
void gemm_nt(const T* g, const T* b, T* out, std::size_t m, std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * p;
    T* orow = out + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T* brow = b + kk * p;
      T acc = 0;
      for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
      orow[kk] += acc;
    }
  }
}

// out[K,P] += a[M,K]^T @ g[M,P]
template <typename T>
void gemm_tn(const T* a, const T* g, T* out, std::size_t m, std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* grow = g + i * p;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      T* orow = out + kk * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += av * grow[j];
    }
  }
}

}  // namespace

PoolWindow adaptive_window(std::size_t i, std::size_t in, std::size_t out) {
  const std::size_t begin = (i * in) / out;
  const std::size_t end = ((i + 1) * in + out - 1) / out;
  return {begin, end};
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  auto& g = graph_of(a, b);
  require_same_shape("add", a, b);
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  const std::size_t aid = a.id, bid = b.id;
  return g.record("add", std::move(out), {aid, bid}, [aid, bid](Graph<T>& g, const Tensor<T>& gy) {
    for (auto id : {aid, bid}) {
      if (!g.requires_grad(id)) continue;
      auto& gx = g.grad_buffer(id);
      for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i];
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  auto& g = graph_of(a, b);
  require_same_shape("sub", a, b);
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  const std::size_t aid = a.id, bid = b.id;
  return g.record("sub", std::move(out), {aid, bid}, [aid, bid](Graph<T>& g, const Tensor<T>& gy) {
    if (g.requires_grad(aid)) {
      auto& ga = g.grad_buffer(aid);
      for (std::size_t i = 0; i < gy.numel(); ++i) ga[i] += gy[i];
    }
    if (g.requires_grad(bid)) {
      auto& gb = g.grad_buffer(bid);
      for (std::size_t i = 0; i < gy.numel(); ++i) gb[i] -= gy[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  auto& g = graph_of(a, b);
  require_same_shape("mul", a, b);
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  const std::size_t aid = a.id, bid = b.id;
  return g.record("mul", std::move(out), {aid, bid}, [aid, bid](Graph<T>& g, const Tensor<T>& gy) {
    const auto& av = g.value(aid);
    const auto& bv = g.value(bid);
    if (g.requires_grad(aid)) {
      auto& ga = g.grad_buffer(aid);
      for (std::size_t i = 0; i < gy.numel(); ++i) ga[i] += gy[i] * bv[i];
    }
    if (g.requires_grad(bid)) {
      auto& gb = g.grad_buffer(bid);
      for (std::size_t i = 0; i < gy.numel(); ++i) gb[i] += gy[i] * av[i];
    }
  });
}

template <typename T>
Var<T> add_bcast(Var<T> x, Var<T> v) {
  auto& g = graph_of(x, v);
  auto map = broadcast_map("add_bcast", x.shape(), v.shape());
  Tensor<T> out = x.value();
  const auto& vv = v.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += vv[map[i]];
  const std::size_t xid = x.id, vid = v.id;
  return g.record("add_bcast", std::move(out), {xid, vid},
                  [xid, vid, map = std::move(map)](Graph<T>& g, const Tensor<T>& gy) {
                    if (g.requires_grad(xid)) {
                      auto& gx = g.grad_buffer(xid);
                      for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i];
                    }
                    if (g.requires_grad(vid)) {
                      auto& gv = g.grad_buffer(vid);
                      for (std::size_t i = 0; i < gy.numel(); ++i) gv[map[i]] += gy[i];
                    }
                  });
}

template <typename T>
Var<T> mul_bcast(Var<T> x, Var<T> v) {
  auto& g = graph_of(x, v);
  auto map = broadcast_map("mul_bcast", x.shape(), v.shape());
  Tensor<T> out = x.value();
  const auto& vv = v.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= vv[map[i]];
  const std::size_t xid = x.id, vid = v.id;
  return g.record("mul_bcast", std::move(out), {xid, vid},
                  [xid, vid, map = std::move(map)](Graph<T>& g, const Tensor<T>& gy) {
                    const auto& xv = g.value(xid);
                    const auto& vv = g.value(vid);
                    if (g.requires_grad(xid)) {
                      auto& gx = g.grad_buffer(xid);
                      for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i] * vv[map[i]];
                    }
                    if (g.requires_grad(vid)) {
                      auto& gv = g.grad_buffer(vid);
                      for (std::size_t i = 0; i < gy.numel(); ++i) gv[map[i]] += gy[i] * xv[i];
                    }
                  });
}

template <typename T>
Var<T> scale(Var<T> x, T s) {
  return unary<T>("scale", x, [s](T v) { return v * s; }, [s](T) { return s; });
}

template <typename T>
Var<T> add_scalar(Var<T> x, T s) {
  return unary<T>("add_scalar", x, [s](T v) { return v + s; }, [](T) { return T(1); });
}

template <typename T>
Var<T> reciprocal(Var<T> x) {
  return unary<T>("reciprocal", x, [](T v) { return T(1) / v; }, [](T v) { return -T(1) / (v * v); });
}

template <typename T>
Var<T> square(Var<T> x) {
  return unary<T>("square", x, [](T v) { return v * v; }, [](T v) { return T(2) * v; });
}

template <typename T>
Var<T> exp(Var<T> x) {
  return unary<T>("exp", x, [](T v) { return std::exp(v); }, [](T v) { return std::exp(v); });
}

template <typename T>
Var<T> erf(Var<T> x) {
  return unary<T>(
      "erf", x, [](T v) { return std::erf(v); },
      [](T v) { return T(2) / std::sqrt(std::numbers::pi_v<T>) * std::exp(-v * v); });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return unary<T>(
      "sigmoid", x, [](T v) { return sigmoid_scalar(v); },
      [](T v) {
        const T s = sigmoid_scalar(v);
        return s * (T(1) - s);
      });
}

template <typename T>
Var<T> silu(Var<T> x) {
  return unary<T>(
      "silu", x, [](T v) { return v * sigmoid_scalar(v); },
      [](T v) {
        const T s = sigmoid_scalar(v);
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  return unary<T>(
      "gelu", x,
      [](T v) { return T(0.5) * v * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>)); },
      [](T v) {
        const T cdf = T(0.5) * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
        const T pdf = std::exp(T(-0.5) * v * v) / std::sqrt(T(2) * std::numbers::pi_v<T>);
        return cdf + v * pdf;
      });
}

template <typename T>
Var<T> softplus(Var<T> x) {
  return unary<T>(
      "softplus", x,
      [](T v) { return v > T(20) ? v : std::log1p(std::exp(v)); },
      [](T v) { return sigmoid_scalar(v); });
}

template <typename T>
Var<T> softmax(Var<T> x) {
  const auto& xv = x.value();
  const std::size_t cols = xv.shape().back();
  const std::size_t rows = xv.numel() / cols;
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * cols;
    T* o = out.data() + r * cols;
    const T mx = *std::max_element(in, in + cols);
    T total = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      total += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  const std::size_t xid = x.id;
  // Output node id, so the closure can read the saved softmax values.
  const std::size_t yid = x.graph->size();
  return x.graph->record("softmax", std::move(out), {xid},
                         [xid, yid, rows, cols](Graph<T>& g, const Tensor<T>& gy) {
                           const auto& yv = g.value(yid);
                           auto& gx = g.grad_buffer(xid);
                           for (std::size_t r = 0; r < rows; ++r) {
                             const T* yr = yv.data() + r * cols;
                             const T* gr = gy.data() + r * cols;
                             T dot = 0;
                             for (std::size_t c = 0; c < cols; ++c) dot += yr[c] * gr[c];
                             T* out = gx.data() + r * cols;
                             for (std::size_t c = 0; c < cols; ++c) out[c] += yr[c] * (gr[c] - dot);
                           }
                         });
}

template <typename T>
Var<T> transpose(Var<T> x) {
  const auto& xv = x.value();
  if (xv.rank() < 2) throw ShapeError("transpose needs rank >= 2, got " + shape_to_string(xv.shape()));
  Shape shape = xv.shape();
  const std::size_t r = shape[shape.size() - 2], c = shape.back();
  const std::size_t batch = xv.numel() / (r * c);
  std::swap(shape[shape.size() - 2], shape.back());
  Tensor<T> out(shape);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* in = xv.data() + b * r * c;
    T* o = out.data() + b * r * c;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) o[j * r + i] = in[i * c + j];
  }
  const std::size_t xid = x.id;
  return x.graph->record("transpose", std::move(out), {xid},
                         [xid, batch, r, c](Graph<T>& g, const Tensor<T>& gy) {
                           auto& gx = g.grad_buffer(xid);
                           for (std::size_t b = 0; b < batch; ++b) {
                             const T* in = gy.data() + b * r * c;
                             T* o = gx.data() + b * r * c;
                             for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < c; ++j) o[i * c + j] += in[j * r + i];
                           }
                         });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const std::size_t xid = x.id;
  return x.graph->record("reshape", std::move(out), {xid}, [xid](Graph<T>& g, const Tensor<T>& gy) {
    auto& gx = g.grad_buffer(xid);
    for (std::size_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i];
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs, std::size_t axis) {
  if (xs.empty()) throw std::invalid_argument("concat of zero tensors");
  Graph<T>& g = *xs.front().graph;
  Shape shape = xs.front().shape();
  const AxisView base = axis_view(shape, axis);
  std::vector<std::size_t> extents;
  std::vector<std::size_t> ids;
  std::size_t total = 0;
  for (const auto& x : xs) {
    graph_of(xs.front(), x);
    Shape s = x.shape();
    if (s.size() != shape.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != shape[d]) {
        throw ShapeError("concat: shape mismatch " + shape_to_string(shape) + " vs " + shape_to_string(s));
      }
    }
    extents.push_back(s[axis]);
    ids.push_back(x.id);
    total += s[axis];
  }
  shape[axis] = total;
  Tensor<T> out(shape);
  const std::size_t inner = base.inner;
  for (std::size_t o = 0; o < base.outer; ++o) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const T* src = xs[k].value().data() + o * extents[k] * inner;
      std::copy(src, src + extents[k] * inner, out.data() + (o * total + offset) * inner);
      offset += extents[k];
    }
  }
  const std::size_t outer = base.outer;
  return g.record("concat", std::move(out), ids,
                  [ids, extents, outer, inner, total](Graph<T>& g, const Tensor<T>& gy) {
                    for (std::size_t o = 0; o < outer; ++o) {
                      std::size_t offset = 0;
                      for (std::size_t k = 0; k < ids.size(); ++k) {
                        if (g.requires_grad(ids[k])) {
                          auto& gx = g.grad_buffer(ids[k]);
                          const T* src = gy.data() + (o * total + offset) * inner;
                          T* dst = gx.data() + o * extents[k] * inner;
                          for (std::size_t i = 0; i < extents[k] * inner; ++i) dst[i] += src[i];
                        }
                        offset += extents[k];
                      }
                    }
                  });
}

template <typename T>
Var<T> slice(Var<T> x, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto& xv = x.value();
  const AxisView v = axis_view(xv.shape(), axis);
  if (begin >= end || end > v.extent) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for extent " + std::to_string(v.extent));
  }
  Shape shape = xv.shape();
  const std::size_t len = end - begin;
  shape[axis] = len;
  Tensor<T> out(shape);
  for (std::size_t o = 0; o < v.outer; ++o) {
    const T* src = xv.data() + (o * v.extent + begin) * v.inner;
    std::copy(src, src + len * v.inner, out.data() + o * len * v.inner);
  }
  const std::size_t xid = x.id;
  return x.graph->record("slice", std::move(out), {xid},
                         [xid, v, begin, len](Graph<T>& g, const Tensor<T>& gy) {
                           auto& gx = g.grad_buffer(xid);
                           for (std::size_t o = 0; o < v.outer; ++o) {
                             const T* src = gy.data() + o * len * v.inner;
                             T* dst = gx.data() + (o * v.extent + begin) * v.inner;
                             for (std::size_t i = 0; i < len * v.inner; ++i) dst[i] += src[i];
                           }
                         });
}

template <typename T>
Var<T> reverse(Var<T> x, std::size_t axis) {
  const auto& xv = x.value();
  const AxisView v = axis_view(xv.shape(), axis);
  Tensor<T> out(xv.shape());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.extent; ++i) {
      const T* src = xv.data() + (o * v.extent + i) * v.inner;
      std::copy(src, src + v.inner, out.data() + (o * v.extent + (v.extent - 1 - i)) * v.inner);
    }
  const std::size_t xid = x.id;
  return x.graph->record("reverse", std::move(out), {xid}, [xid, v](Graph<T>& g, const Tensor<T>& gy) {
    auto& gx = g.grad_buffer(xid);
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t i = 0; i < v.extent; ++i) {
        const T* src = gy.data() + (o * v.extent + (v.extent - 1 - i)) * v.inner;
        T* dst = gx.data() + (o * v.extent + i) * v.inner;
        for (std::size_t k = 0; k < v.inner; ++k) dst[k] += src[k];
      }
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  const auto& xv = x.value();
  T total = 0;
  for (std::size_t i = 0; i < xv.numel(); ++i) total += xv[i];
  const std::size_t xid = x.id;
  return x.graph->record("sum", Tensor<T>::scalar(total), {xid}, [xid](Graph<T>& g, const Tensor<T>& gy) {
    auto& gx = g.grad_buffer(xid);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += gy[0];
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), T(1) / static_cast<T>(x.value().numel()));
}

template <typename T>
Var<T> sum_axis(Var<T> x, std::size_t axis) {
  const auto& xv = x.value();
  const AxisView v = axis_view(xv.shape(), axis);
  Shape shape = xv.shape();
  shape[axis] = 1;
  Tensor<T> out(shape);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.extent; ++i) {
      const T* src = xv.data() + (o * v.extent + i) * v.inner;
      T* dst = out.data() + o * v.inner;
      for (std::size_t k = 0; k < v.inner; ++k) dst[k] += src[k];
    }
  const std::size_t xid = x.id;
  return x.graph->record("sum_axis", std::move(out), {xid}, [xid, v](Graph<T>& g, const Tensor<T>& gy) {
    auto& gx = g.grad_buffer(xid);
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t i = 0; i < v.extent; ++i) {
        const T* src = gy.data() + o * v.inner;
        T* dst = gx.data() + (o * v.extent + i) * v.inner;
        for (std::size_t k = 0; k < v.inner; ++k) dst[k] += src[k];
      }
  });
}

template <typename T>
Var<T> max_axis(Var<T> x, std::size_t axis) {
  const auto& xv = x.value();
  const AxisView v = axis_view(xv.shape(), axis);
  Shape shape = xv.shape();
  shape[axis] = 1;
  Tensor<T> out(shape);
  std::vector<std::size_t> argmax(out.numel());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t k = 0; k < v.inner; ++k) {
      std::size_t best = o * v.extent * v.inner + k;
      for (std::size_t i = 1; i < v.extent; ++i) {
        const std::size_t idx = (o * v.extent + i) * v.inner + k;
        if (xv[idx] > xv[best]) best = idx;
      }
      out[o * v.inner + k] = xv[best];
      argmax[o * v.inner + k] = best;
    }
  const std::size_t xid = x.id;
  return x.graph->record("max_axis", std::move(out), {xid},
                         [xid, argmax = std::move(argmax)](Graph<T>& g, const Tensor<T>& gy) {
                           auto& gx = g.grad_buffer(xid);
                           for (std::size_t i = 0; i < gy.numel(); ++i) gx[argmax[i]] += gy[i];
                         });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  auto& g = graph_of(a, b);
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || as.size() > 3 || bs.size() < 2 || bs.size() > 3) {
    throw ShapeError("matmul supports rank 2 or 3, got " + shape_to_string(as) + " @ " +
                     shape_to_string(bs));
  }
  const std::size_t m = as[as.size() - 2], k = as.back();
  const std::size_t kb = bs[bs.size() - 2], p = bs.back();
  const std::size_t ba = as.size() == 3 ? as[0] : 1;
  const std::size_t bb = bs.size() == 3 ? bs[0] : 1;
  if (k != kb || (ba != bb && ba != 1 && bb != 1)) {
    throw ShapeError("matmul shape mismatch: " + shape_to_string(as) + " @ " + shape_to_string(bs));
  }
  const std::size_t batch = std::max(ba, bb);
  Shape shape = (as.size() == 3 || bs.size() == 3) ? Shape{batch, m, p} : Shape{m, p};
  Tensor<T> out(shape);
  const T* ad = a.value().data();
  const T* bd = b.value().data();
  for (std::size_t n = 0; n < batch; ++n) {
    gemm_nn(ad + (ba == 1 ? 0 : n) * m * k, bd + (bb == 1 ? 0 : n) * k * p, out.data() + n * m * p, m, k, p);
  }
  op_counter::add_macs(static_cast<std::uint64_t>(batch) * m * k * p);
  const std::size_t aid = a.id, bid = b.id;
  return g.record("matmul", std::move(out), {aid, bid},
                  [aid, bid, ba, bb, batch, m, k, p](Graph<T>& g, const Tensor<T>& gy) {
                    const T* ad = g.value(aid).data();
                    const T* bd = g.value(bid).data();
                    for (std::size_t n = 0; n < batch; ++n) {
                      const T* gn = gy.data() + n * m * p;
                      if (g.requires_grad(aid)) {
                        gemm_nt(gn, bd + (bb == 1 ? 0 : n) * k * p,
                                g.grad_buffer(aid).data() + (ba == 1 ? 0 : n) * m * k, m, k, p);
                      }
                      if (g.requires_grad(bid)) {
                        gemm_tn(ad + (ba == 1 ? 0 : n) * m * k, gn,
                                g.grad_buffer(bid).data() + (bb == 1 ? 0 : n) * k * p, m, k, p);
                      }
                    }
                  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
  auto& g = graph_of(x, weight);
  graph_of(x, bias);
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (ws.size() != 2 || xs.back() != ws[0] || bias.shape() != Shape{ws[1]}) {
    throw ShapeError("linear: input " + shape_to_string(xs) + " incompatible with weight " +
                     shape_to_string(ws) + " / bias " + shape_to_string(bias.shape()));
  }
  const std::size_t in = ws[0], outd = ws[1];
  const std::size_t rows = x.value().numel() / in;
  Shape shape = xs;
  shape.back() = outd;
  Tensor<T> out(shape);
  const T* bd = bias.value().data();
  for (std::size_t r = 0; r < rows; ++r) std::copy(bd, bd + outd, out.data() + r * outd);
  gemm_nn(x.value().data(), weight.value().data(), out.data(), rows, in, outd);
  op_counter::add_macs(static_cast<std::uint64_t>(rows) * in * outd);
  const std::size_t xid = x.id, wid = weight.id, bid = bias.id;
  return g.record("linear", std::move(out), {xid, wid, bid},
                  [xid, wid, bid, rows, in, outd](Graph<T>& g, const Tensor<T>& gy) {
                    if (g.requires_grad(xid)) {
                      gemm_nt(gy.data(), g.value(wid).data(), g.grad_buffer(xid).data(), rows, in, outd);
                    }
                    if (g.requires_grad(wid)) {
                      gemm_tn(g.value(xid).data(), gy.data(), g.grad_buffer(wid).data(), rows, in, outd);
                    }
                    if (g.requires_grad(bid)) {
                      auto& gb = g.grad_buffer(bid);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < outd; ++j) gb[j] += gy[r * outd + j];
                    }
                  });
}

template <typename T>
Var<T> depthwise_conv1d_causal(Var<T> x, Var<T> weight, Var<T> bias) {
  auto& g = graph_of(x, weight);
  graph_of(x, bias);
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 3 || ws.size() != 2 || ws[0] != xs[2] || bias.shape() != Shape{xs[2]}) {
    throw ShapeError("depthwise_conv1d_causal: input " + shape_to_string(xs) + ", weight " +
                     shape_to_string(ws) + ", bias " + shape_to_string(bias.shape()));
  }
  const std::size_t batch = xs[0], len = xs[1], ch = xs[2], width = ws[1];
  // Taps reaching before t = 0 only see padding; they are skipped.
  const std::size_t live = std::min(width, len);
  // Kernel reordered to [K, C] so the channel loop is contiguous.
  std::vector<T> wt(width * ch);
  const auto& wv = weight.value();
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t k = 0; k < width; ++k) wt[k * ch + c] = wv[c * width + k];
  Tensor<T> out(xs);
  const T* xd = x.value().data();
  const T* bd = bias.value().data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < len; ++t) {
      T* o = out.data() + (b * len + t) * ch;
      std::copy(bd, bd + ch, o);
      for (std::size_t lag = 0; lag < live && lag <= t; ++lag) {
        const T* w = wt.data() + (width - 1 - lag) * ch;
        const T* src = xd + (b * len + t - lag) * ch;
        for (std::size_t c = 0; c < ch; ++c) o[c] += w[c] * src[c];
      }
    }
  const std::size_t xid = x.id, wid = weight.id, bid = bias.id;
  return g.record("depthwise_conv1d_causal", std::move(out), {xid, wid, bid},
                  [xid, wid, bid, batch, len, ch, width, live, wt = std::move(wt)](Graph<T>& g,
                                                                                   const Tensor<T>& gy) {
                    const T* xd = g.value(xid).data();
                    const bool gx_on = g.requires_grad(xid);
                    const bool gw_on = g.requires_grad(wid);
                    T* gx = gx_on ? g.grad_buffer(xid).data() : nullptr;
                    std::vector<T> gwt(gw_on ? width * ch : 0, T(0));
                    for (std::size_t b = 0; b < batch; ++b)
                      for (std::size_t t = 0; t < len; ++t) {
                        const T* go = gy.data() + (b * len + t) * ch;
                        for (std::size_t lag = 0; lag < live && lag <= t; ++lag) {
                          const std::size_t k = width - 1 - lag;
                          const std::size_t srow = (b * len + t - lag) * ch;
                          if (gx_on) {
                            const T* w = wt.data() + k * ch;
                            for (std::size_t c = 0; c < ch; ++c) gx[srow + c] += w[c] * go[c];
                          }
                          if (gw_on) {
                            T* gw = gwt.data() + k * ch;
                            for (std::size_t c = 0; c < ch; ++c) gw[c] += go[c] * xd[srow + c];
                          }
                        }
                      }
                    if (gw_on) {
                      auto& gw = g.grad_buffer(wid);
                      for (std::size_t c = 0; c < ch; ++c)
                        for (std::size_t k = 0; k < width; ++k) gw[c * width + k] += gwt[k * ch + c];
                    }
                    if (g.requires_grad(bid)) {
                      auto& gb = g.grad_buffer(bid);
                      for (std::size_t r = 0; r < batch * len; ++r)
                        for (std::size_t c = 0; c < ch; ++c) gb[c] += gy[r * ch + c];
                    }
                  });
}

template <typename T>
Var<T> adaptive_pool(Var<T> x, std::size_t axis, std::size_t target, PoolMode mode) {
  const auto& xv = x.value();
  const AxisView v = axis_view(xv.shape(), axis);
  if (target < 1) throw ShapeError("adaptive pooling target must be >= 1");
  Shape shape = xv.shape();
  shape[axis] = target;
  Tensor<T> out(shape);
  std::vector<std::size_t> argmax;
  if (mode == PoolMode::kMax) argmax.resize(out.numel());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < target; ++i) {
      const PoolWindow win = adaptive_window(i, v.extent, target);
      for (std::size_t k = 0; k < v.inner; ++k) {
        const std::size_t dst = (o * target + i) * v.inner + k;
        std::size_t best = (o * v.extent + win.begin) * v.inner + k;
        T acc = 0;
        for (std::size_t j = win.begin; j < win.end; ++j) {
          const std::size_t src = (o * v.extent + j) * v.inner + k;
          acc += xv[src];
          if (xv[src] > xv[best]) best = src;
        }
        if (mode == PoolMode::kAverage) {
          out[dst] = acc / static_cast<T>(win.end - win.begin);
        } else {
          out[dst] = xv[best];
          argmax[dst] = best;
        }
      }
    }
  const std::size_t xid = x.id;
  const char* name = mode == PoolMode::kAverage ? "adaptive_avg_pool" : "adaptive_max_pool";
  return x.graph->record(name, std::move(out), {xid},
                         [xid, v, target, mode, argmax = std::move(argmax)](Graph<T>& g, const Tensor<T>& gy) {
                           auto& gx = g.grad_buffer(xid);
                           if (mode == PoolMode::kMax) {
                             for (std::size_t i = 0; i < gy.numel(); ++i) gx[argmax[i]] += gy[i];
                             return;
                           }
                           for (std::size_t o = 0; o < v.outer; ++o)
                             for (std::size_t i = 0; i < target; ++i) {
                               const PoolWindow win = adaptive_window(i, v.extent, target);
                               const T w = T(1) / static_cast<T>(win.end - win.begin);
                               for (std::size_t k = 0; k < v.inner; ++k) {
                                 const T gv = gy[(o * target + i) * v.inner + k] * w;
                                 for (std::size_t j = win.begin; j < win.end; ++j)
                                   gx[(o * v.extent + j) * v.inner + k] += gv;
                               }
                             }
                         });
}

template <typename T>
Var<T> adaptive_pool_1d(Var<T> x, std::size_t target, PoolMode mode) {
  const std::size_t extent = x.shape().back();
  if (target < 1 || target > extent) {
    throw ShapeError("adaptive_pool_1d: target " + std::to_string(target) + " outside [1, " +
                     std::to_string(extent) + "]");
  }
  return adaptive_pool(x, x.shape().size() - 1, target, mode);
}

template <typename T>
Var<T> mse_loss(Var<T> prediction, Var<T> target) {
  return mean(square(sub(prediction, target)));
}

#define ATTNMAMBA_INSTANTIATE_OPS(T)                                                           \
  template Var<T> add(Var<T>, Var<T>);                                                        \
  template Var<T> sub(Var<T>, Var<T>);                                                        \
  template Var<T> mul(Var<T>, Var<T>);                                                        \
  template Var<T> add_bcast(Var<T>, Var<T>);                                                  \
  template Var<T> mul_bcast(Var<T>, Var<T>);                                                  \
  template Var<T> scale(Var<T>, T);                                                           \
  template Var<T> add_scalar(Var<T>, T);                                                      \
  template Var<T> reciprocal(Var<T>);                                                         \
  template Var<T> square(Var<T>);                                                             \
  template Var<T> transpose(Var<T>);                                                          \
  template Var<T> reshape(Var<T>, Shape);                                                     \
  template Var<T> concat(const std::vector<Var<T>>&, std::size_t);                            \
  template Var<T> slice(Var<T>, std::size_t, std::size_t, std::size_t);                       \
  template Var<T> reverse(Var<T>, std::size_t);                                               \
  template Var<T> sum(Var<T>);                                                                \
  template Var<T> mean(Var<T>);                                                               \
  template Var<T> sum_axis(Var<T>, std::size_t);                                              \
  template Var<T> max_axis(Var<T>, std::size_t);                                              \
  template Var<T> exp(Var<T>);                                                                \
  template Var<T> erf(Var<T>);                                                                \
  template Var<T> sigmoid(Var<T>);                                                            \
  template Var<T> silu(Var<T>);                                                               \
  template Var<T> gelu(Var<T>);                                                               \
  template Var<T> softplus(Var<T>);                                                           \
  template Var<T> softmax(Var<T>);                                                            \
  template Var<T> matmul(Var<T>, Var<T>);                                                     \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                             \
  template Var<T> depthwise_conv1d_causal(Var<T>, Var<T>, Var<T>);                            \
  template Var<T> adaptive_pool(Var<T>, std::size_t, std::size_t, PoolMode);                  \
  template Var<T> adaptive_pool_1d(Var<T>, std::size_t, PoolMode);                            \
  template Var<T> mse_loss(Var<T>, Var<T>);

ATTNMAMBA_INSTANTIATE_OPS(float)
ATTNMAMBA_INSTANTIATE_OPS(double)

#undef ATTNMAMBA_INSTANTIATE_OPS

}  // namespace attnmamba

#include "eclab/numcore/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

namespace eclab::num {

namespace {

using detail::Node;

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;

std::string two_shapes(const Tensor& a, const Tensor& b) {
  return shape_str(a.shape()) + " and " + shape_str(b.shape());
}

void check_dtype(const char* op, const Tensor& a, const Tensor& b) {
  if (a.dtype() != b.dtype()) {
    throw ContractError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " +
                        dtype_name(b.dtype()));
  }
}

void check_defined(const char* op, const Tensor& a) {
  if (!a.defined()) throw ContractError(std::string(op) + ": undefined tensor operand");
}

template <class T>
std::span<T> grad_of(const Tensor& t) {
  return t.node()->ensure_grad().view<T>();
}

std::size_t normalize_axis(const char* op, int axis, std::size_t rank) {
  int r = static_cast<int>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(axis);
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <class Fwd, class Deriv>
Tensor unary(const char* name, const Tensor& a, Fwd fwd, Deriv deriv) {
  check_defined(name, a);
  DType dt = a.dtype();
  Tensor out = Tensor::make_result(name, a.shape(), dt, {a}, [a, deriv](Node& self) {
    dispatch(self.value.dtype(), [&]<class T>() {
      auto x = a.data<T>();
      auto y = std::as_const(self.value).view<T>();
      auto g = std::as_const(self.grad).view<T>();
      auto dx = grad_of<T>(a);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * deriv(x[i], y[i]);
    });
  });
  dispatch(dt, [&]<class T>() {
    auto x = a.data<T>();
    auto y = out.data<T>();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(x[i]);
  });
  return out;
}

enum class Bcast { same, row, scalar };

Bcast classify(const char* op, const Tensor& a, const Tensor& b) {
  check_defined(op, a);
  check_defined(op, b);
  check_dtype(op, a, b);
  if (a.shape() == b.shape()) return Bcast::same;
  if (b.numel() == 1 && b.rank() <= a.rank()) return Bcast::scalar;
  if (b.rank() < a.rank() &&
      std::equal(b.shape().begin(), b.shape().end(), a.shape().end() - b.rank())) {
    return Bcast::row;
  }
  throw ShapeError(std::string(op) + ": cannot broadcast shapes " + two_shapes(a, b));
}

// Calls f(i, j) for every a element i and its paired b element j.
template <class F>
inline void bloop(Bcast mode, std::size_t n, std::size_t bn, F&& f) {
  if (mode == Bcast::row) {
    for (std::size_t r = 0; r < n; r += bn)
      for (std::size_t k = 0; k < bn; ++k) f(r + k, k);
  } else if (mode == Bcast::scalar) {
    for (std::size_t i = 0; i < n; ++i) f(i, std::size_t{0});
  } else {
    for (std::size_t i = 0; i < n; ++i) f(i, i);
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined("matmul", a);
  check_defined("matmul", b);
  check_dtype("matmul", a, b);
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + two_shapes(a, b));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  DType dt = a.dtype();
  Tensor out = Tensor::make_result("matmul", {m, n}, dt, {a, b}, [a, b, m, k, n](Node& self) {
    dispatch(self.value.dtype(), [&]<class T>() {
      CMapR<T> g(std::as_const(self.grad).view<T>().data(), m, n);
      if (a.requires_grad()) {
        MapR<T> da(grad_of<T>(a).data(), m, k);
        CMapR<T> bm(b.data<T>().data(), k, n);
        da.noalias() += g * bm.transpose();
      }
      if (b.requires_grad()) {
        MapR<T> db(grad_of<T>(b).data(), k, n);
        CMapR<T> am(a.data<T>().data(), m, k);
        db.noalias() += am.transpose() * g;
      }
    });
  });
  dispatch(dt, [&]<class T>() {
    CMapR<T> am(a.data<T>().data(), m, k);
    CMapR<T> bm(b.data<T>().data(), k, n);
    MapR<T> c(out.data<T>().data(), m, n);
    c.noalias() = am * bm;
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  Bcast mode = classify("add", a, b);
  DType dt = a.dtype();
  Tensor out = Tensor::make_result("add", a.shape(), dt, {a, b}, [a, b, mode](Node& self) {
    dispatch(self.value.dtype(), [&]<class T>() {
      auto g = std::as_const(self.grad).view<T>();
      if (a.requires_grad()) {
        auto da = grad_of<T>(a);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      }
      if (b.requires_grad()) {
        auto db = grad_of<T>(b);
        bloop(mode, g.size(), db.size(), [&](std::size_t i, std::size_t j) { db[j] += g[i]; });
      }
    });
  });
  dispatch(dt, [&]<class T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out.data<T>();
    bloop(mode, o.size(), y.size(), [&](std::size_t i, std::size_t j) { o[i] = x[i] + y[j]; });
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Bcast mode = classify("sub", a, b);
  DType dt = a.dtype();
  Tensor out = Tensor::make_result("sub", a.shape(), dt, {a, b}, [a, b, mode](Node& self) {
    dispatch(self.value.dtype(), [&]<class T>() {
      auto g = std::as_const(self.grad).view<T>();
      if (a.requires_grad()) {
        auto da = grad_of<T>(a);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      }
      if (b.requires_grad()) {
        auto db = grad_of<T>(b);
        bloop(mode, g.size(), db.size(), [&](std::size_t i, std::size_t j) { db[j] -= g[i]; });
      }
    });
  });
  dispatch(dt, [&]<class T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out.data<T>();
    bloop(mode, o.size(), y.size(), [&](std::size_t i, std::size_t j) { o[i] = x[i] - y[j]; });
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Bcast mode = classify("mul", a, b);
  DType dt = a.dtype();
  Tensor out = Tensor::make_result("mul", a.shape(), dt, {a, b}, [a, b, mode](Node& self) {
    dispatch(self.value.dtype(), [&]<class T>() {
      auto g = std::as_const(self.grad).view<T>();
      auto x = a.data<T>();
      auto y = b.data<T>();
      if (a.requires_grad()) {
        auto da = grad_of<T>(a);
        bloop(mode, g.size(), y.size(), [&](std::size_t i, std::size_t j) { da[i] += g[i] * y[j]; });
      }
      if (b.requires_grad()) {
        auto db = grad_of<T>(b);
        bloop(mode, g.size(), db.size(), [&](std::size_t i, std::size_t j) { db[j] += g[i] * x[i]; });
      }
    });
  });
  dispatch(dt, [&]<class T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out.data<T>();
    bloop(mode, o.size(), y.size(), [&](std::size_t i, std::size_t j) { o[i] = x[i] * y[j]; });
  });
  return out;
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary(
      "add_scalar", a, [c](auto x) { return x + static_cast<decltype(x)>(c); },
      [](auto, auto) { return 1; });
}

Tensor mul_scalar(const Tensor& a, double c) {
  return unary(
      "mul_scalar", a, [c](auto x) { return x * static_cast<decltype(x)>(c); },
      [c](auto x, auto) { return static_cast<decltype(x)>(c); });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor reciprocal(const Tensor& a) {
  return unary(
      "reciprocal", a, [](auto x) { return decltype(x)(1) / x; },
      [](auto, auto y) { return -y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a,
      [](auto x) {
        using T = decltype(x);
        if (x >= 0) return T(1) / (T(1) + std::exp(-x));
        T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](auto, auto y) { return y * (decltype(y)(1) - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(
      "tanh", a, [](auto x) { return std::tanh(x); },
      [](auto, auto y) { return decltype(y)(1) - y * y; });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](auto x) { return x > 0 ? x : decltype(x)(0); },
      [](auto x, auto) { return x > 0 ? decltype(x)(1) : decltype(x)(0); });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](auto x) { return std::exp(x); }, [](auto, auto y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](auto x) { return std::log(x); },
      [](auto x, auto) { return decltype(x)(1) / x; });
}

Tensor softmax(const Tensor& a, int axis) {
  check_defined("softmax", a);
  std::size_t ax = normalize_axis("softmax", axis, a.rank());
  AxisSplit s = split_at(a.shape(), ax);
  DType dt = a.dtype();
  Tensor out = Tensor::make_result("softmax", a.shape(), dt, {a}, [a, s](Node& self) {
    dispatch(self.value.dtype(), [&]<class T>() {
      auto y = std::as_const(self.value).view<T>();
      auto g = std::as_const(self.grad).view<T>();
      auto dx = grad_of<T>(a);
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.len * s.inner + in;
          T dot = 0;
          for (std::size_t l = 0; l < s.len; ++l) dot += g[base + l * s.inner] * y[base + l * s.inner];
          for (std::size_t l = 0; l < s.len; ++l) {
            const std::size_t i = base + l * s.inner;
            dx[i] += y[i] * (g[i] - dot);
          }
        }
      }
    });
  });
  dispatch(dt, [&]<class T>() {
    auto x = a.data<T>();
    auto y = out.data<T>();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t l = 0; l < s.len; ++l) mx = std::max(mx, x[base + l * s.inner]);
        T total = 0;
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t i = base + l * s.inner;
          y[i] = std::exp(x[i] - mx);
          total += y[i];
        }
        for (std::size_t l = 0; l < s.len; ++l) y[base + l * s.inner] /= total;
      }
    }
  });
  return out;
}

Tensor log_softmax(const Tensor& a, int axis) {
  check_defined("log_softmax", a);
  std::size_t ax = normalize_axis("log_softmax", axis, a.rank());
  AxisSplit s = split_at(a.shape(), ax);
  DType dt = a.dtype();
  Tensor out = Tensor::make_result("log_softmax", a.shape(), dt, {a}, [a, s](Node& self) {
    dispatch(self.value.dtype(), [&]<class T>() {
      auto y = std::as_const(self.value).view<T>();
      auto g = std::as_const(self.grad).view<T>();
      auto dx = grad_of<T>(a);
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.len * s.inner + in;
          T gsum = 0;
          for (std::size_t l = 0; l < s.len; ++l) gsum += g[base + l * s.inner];
          for (std::size_t l = 0; l < s.len; ++l) {
            const std::size_t i = base + l * s.inner;
            dx[i] += g[i] - std::exp(y[i]) * gsum;
          }
        }
      }
    });
  });
  dispatch(dt, [&]<class T>() {
    auto x = a.data<T>();
    auto y = out.data<T>();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t l = 0; l < s.len; ++l) mx = std::max(mx, x[base + l * s.inner]);
        T total = 0;
        for (std::size_t l = 0; l < s.len; ++l) total += std::exp(x[base + l * s.inner] - mx);
        const T lse = mx + std::log(total);
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t i = base + l * s.inner;
          y[i] = x[i] - lse;
        }
      }
    }
  });
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  for (const auto& p : parts) check_defined("concat", p);
  const Tensor& first = parts.front();
  std::size_t ax = normalize_axis("concat", axis, first.rank());
  Shape shape = first.shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    check_dtype("concat", first, p);
    bool ok = p.rank() == first.rank();
    for (std::size_t d = 0; ok && d < p.rank(); ++d) ok = d == ax || p.dim(d) == first.dim(d);
    if (!ok) throw ShapeError("concat: incompatible shapes " + two_shapes(first, p));
    total += p.dim(ax);
  }
  shape[ax] = total;
  AxisSplit os = split_at(shape, ax);
  DType dt = first.dtype();
  Tensor out = Tensor::make_result("concat", shape, dt, parts, [parts, ax, os](Node& self) {
    dispatch(self.value.dtype(), [&]<class T>() {
      auto g = std::as_const(self.grad).view<T>();
      std::size_t offset = 0;
      for (const auto& p : parts) {
        const std::size_t chunk = p.dim(ax) * os.inner;
        if (p.requires_grad()) {
          auto dp = grad_of<T>(p);
          for (std::size_t o = 0; o < os.outer; ++o) {
            const T* src = g.data() + o * os.len * os.inner + offset;
            T* dst = dp.data() + o * chunk;
            for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
          }
        }
        offset += chunk;
      }
    });
  });
  dispatch(dt, [&]<class T>() {
    auto y = out.data<T>();
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t chunk = p.dim(ax) * os.inner;
      auto x = p.data<T>();
      for (std::size_t o = 0; o < os.outer; ++o) {
        std::copy_n(x.data() + o * chunk, chunk, y.data() + o * os.len * os.inner + offset);
      }
      offset += chunk;
    }
  });
  return out;
}

Tensor slice(const Tensor& a, int axis, std::size_t start, std::size_t length) {
  check_defined("slice", a);
  std::size_t ax = normalize_axis("slice", axis, a.rank());
  if (start + length > a.dim(ax)) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") exceeds axis of shape " +
                     shape_str(a.shape()));
  }
  Shape shape = a.shape();
  shape[ax] = length;
  AxisSplit is = split_at(a.shape(), ax);
  const std::size_t chunk = length * is.inner;
  const std::size_t skip = start * is.inner;
  DType dt = a.dtype();
  Tensor out = Tensor::make_result("slice", shape, dt, {a}, [a, is, chunk, skip](Node& self) {
    dispatch(self.value.dtype(), [&]<class T>() {
      auto g = std::as_const(self.grad).view<T>();
      auto dx = grad_of<T>(a);
      for (std::size_t o = 0; o < is.outer; ++o) {
        T* dst = dx.data() + o * is.len * is.inner + skip;
        const T* src = g.data() + o * chunk;
        for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
      }
    });
  });
  dispatch(dt, [&]<class T>() {
    auto x = a.data<T>();
    auto y = out.data<T>();
    for (std::size_t o = 0; o < is.outer; ++o) {
      std::copy_n(x.data() + o * is.len * is.inner + skip, chunk, y.data() + o * chunk);
    }
  });
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  check_defined("reshape", a);
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  DType dt = a.dtype();
  Tensor out = Tensor::make_result("reshape", std::move(shape), dt, {a}, [a](Node& self) {
    dispatch(self.value.dtype(), [&]<class T>() {
      auto g = std::as_const(self.grad).view<T>();
      auto dx = grad_of<T>(a);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    });
  });
  dispatch(dt, [&]<class T>() {
    auto x = a.data<T>();
    std::copy(x.begin(), x.end(), out.data<T>().begin());
  });
  return out;
}

Tensor transpose(const Tensor& a) {
  check_defined("transpose", a);
  if (a.rank() != 2) throw ShapeError("transpose: expected 2-D, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  DType dt = a.dtype();
  Tensor out = Tensor::make_result("transpose", {c, r}, dt, {a}, [a, r, c](Node& self) {
    dispatch(self.value.dtype(), [&]<class T>() {
      CMapR<T> g(std::as_const(self.grad).view<T>().data(), c, r);
      MapR<T> dx(grad_of<T>(a).data(), r, c);
      dx += g.transpose();
    });
  });
  dispatch(dt, [&]<class T>() {
    CMapR<T> x(a.data<T>().data(), r, c);
    MapR<T> y(out.data<T>().data(), c, r);
    y = x.transpose();
  });
  return out;
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  check_defined("embedding", table);
  if (table.rank() != 2) throw ShapeError("embedding: table must be 2-D, got " + shape_str(table.shape()));
  const std::size_t v = table.dim(0), e = table.dim(1);
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw ContractError("embedding: id " + std::to_string(id) + " outside vocabulary of size " +
                          std::to_string(v));
    }
  }
  std::vector<int> idv(ids.begin(), ids.end());
  DType dt = table.dtype();
  Tensor out = Tensor::make_result("embedding", {idv.size(), e}, dt, {table}, [table, idv, e](Node& self) {
    dispatch(self.value.dtype(), [&]<class T>() {
      auto g = std::as_const(self.grad).view<T>();
      auto dt_ = grad_of<T>(table);
      for (std::size_t r = 0; r < idv.size(); ++r) {
        T* dst = dt_.data() + static_cast<std::size_t>(idv[r]) * e;
        const T* src = g.data() + r * e;
        for (std::size_t j = 0; j < e; ++j) dst[j] += src[j];
      }
    });
  });
  dispatch(dt, [&]<class T>() {
    auto w = table.data<T>();
    auto y = out.data<T>();
    for (std::size_t r = 0; r < idv.size(); ++r) {
      std::copy_n(w.data() + static_cast<std::size_t>(idv[r]) * e, e, y.data() + r * e);
    }
  });
  return out;
}

Tensor soft_embedding(const Tensor& probs, const Tensor& table) { return matmul(probs, table); }

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check_defined("layer_norm", x);
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  const std::size_t n = x.numel() / d;
  const bool affine = gamma.defined();
  if (affine) {
    check_dtype("layer_norm", x, gamma);
    check_dtype("layer_norm", x, beta);
    if (gamma.numel() != d || beta.numel() != d) {
      throw ShapeError("layer_norm: affine parameters " + two_shapes(gamma, beta) +
                       " do not match last axis of " + shape_str(x.shape()));
    }
  }
  DType dt = x.dtype();
  // Saved normalized values and inverse std for the backward pass.
  auto xhat = std::make_shared<Buffer>(dt, x.numel());
  auto inv = std::make_shared<Buffer>(dt, n);
  std::vector<Tensor> inputs{x};
  if (affine) {
    inputs.push_back(gamma);
    inputs.push_back(beta);
  }
  Tensor out = Tensor::make_result(
      "layer_norm", x.shape(), dt, inputs, [x, gamma, beta, affine, xhat, inv, n, d](Node& self) {
        dispatch(self.value.dtype(), [&]<class T>() {
          auto g = std::as_const(self.grad).view<T>();
          auto xh = std::as_const(*xhat).view<T>();
          auto iv = std::as_const(*inv).view<T>();
          if (affine && gamma.requires_grad()) {
            auto dg = grad_of<T>(gamma);
            for (std::size_t r = 0; r < n; ++r)
              for (std::size_t j = 0; j < d; ++j) dg[j] += g[r * d + j] * xh[r * d + j];
          }
          if (affine && beta.requires_grad()) {
            auto db = grad_of<T>(beta);
            for (std::size_t r = 0; r < n; ++r)
              for (std::size_t j = 0; j < d; ++j) db[j] += g[r * d + j];
          }
          if (x.requires_grad()) {
            auto dx = grad_of<T>(x);
            std::vector<T> dxh(d);
            for (std::size_t r = 0; r < n; ++r) {
              T s1 = 0, s2 = 0;
              for (std::size_t j = 0; j < d; ++j) {
                T gj = g[r * d + j];
                if (affine) gj *= gamma.data<T>()[j];
                dxh[j] = gj;
                s1 += gj;
                s2 += gj * xh[r * d + j];
              }
              const T scale = iv[r] / static_cast<T>(d);
              for (std::size_t j = 0; j < d; ++j) {
                dx[r * d + j] += scale * (static_cast<T>(d) * dxh[j] - s1 - xh[r * d + j] * s2);
              }
            }
          }
        });
      });
  dispatch(dt, [&]<class T>() {
    auto xv = x.data<T>();
    auto y = out.data<T>();
    auto xh = xhat->view<T>();
    auto iv = inv->view<T>();
    for (std::size_t r = 0; r < n; ++r) {
      T mu = 0;
      for (std::size_t j = 0; j < d; ++j) mu += xv[r * d + j];
      mu /= static_cast<T>(d);
      T var = 0;
      for (std::size_t j = 0; j < d; ++j) {
        T c = xv[r * d + j] - mu;
        var += c * c;
      }
      var /= static_cast<T>(d);
      const T is = T(1) / std::sqrt(var + static_cast<T>(eps));
      iv[r] = is;
      for (std::size_t j = 0; j < d; ++j) {
        T h = (xv[r * d + j] - mu) * is;
        xh[r * d + j] = h;
        y[r * d + j] = affine ? h * gamma.data<T>()[j] + beta.data<T>()[j] : h;
      }
    }
  });
  return out;
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttentionMask& mask) {
  check_defined("attention", q);
  check_defined("attention", k);
  check_defined("attention", v);
  check_dtype("attention", q, k);
  check_dtype("attention", q, v);
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3 || q.dim(0) != k.dim(0) ||
      k.dim(0) != v.dim(0) || q.dim(2) != k.dim(2) || k.dim(1) != v.dim(1)) {
    throw ShapeError("attention: incompatible q/k/v shapes " + shape_str(q.shape()) + ", " +
                     shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  const std::size_t groups = q.dim(0), tq = q.dim(1), tk = k.dim(1), dk = q.dim(2), dv = v.dim(2);
  if (!mask.key_lengths.empty() && mask.key_lengths.size() * mask.heads != groups) {
    throw ShapeError("attention: key_lengths of size " + std::to_string(mask.key_lengths.size()) +
                     " x heads " + std::to_string(mask.heads) + " does not cover " +
                     std::to_string(groups) + " groups");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  DType dt = q.dtype();
  auto probs = std::make_shared<Buffer>(dt, groups * tq * tk);
  Tensor out = Tensor::make_result(
      "scaled_dot_attention", {groups, tq, dv}, dt, {q, k, v},
      [q, k, v, probs, groups, tq, tk, dk, dv, scale](Node& self) {
        dispatch(self.value.dtype(), [&]<class T>() {
          const T sc = static_cast<T>(scale);
          auto g = std::as_const(self.grad).view<T>();
          auto pa = std::as_const(*probs).view<T>();
          MatR<T> dp(tq, tk), ds(tq, tk);
          for (std::size_t gi = 0; gi < groups; ++gi) {
            CMapR<T> p(pa.data() + gi * tq * tk, tq, tk);
            CMapR<T> go(g.data() + gi * tq * dv, tq, dv);
            CMapR<T> vm(v.data<T>().data() + gi * tk * dv, tk, dv);
            if (v.requires_grad()) {
              MapR<T> dvm(grad_of<T>(v).data() + gi * tk * dv, tk, dv);
              dvm.noalias() += p.transpose() * go;
            }
            if (!q.requires_grad() && !k.requires_grad()) continue;
            dp.noalias() = go * vm.transpose();
            for (std::size_t i = 0; i < tq; ++i) {
              T dot = 0;
              for (std::size_t j = 0; j < tk; ++j) dot += dp(i, j) * p(i, j);
              for (std::size_t j = 0; j < tk; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot) * sc;
            }
            if (q.requires_grad()) {
              MapR<T> dq(grad_of<T>(q).data() + gi * tq * dk, tq, dk);
              CMapR<T> km(k.data<T>().data() + gi * tk * dk, tk, dk);
              dq.noalias() += ds * km;
            }
            if (k.requires_grad()) {
              MapR<T> dkm(grad_of<T>(k).data() + gi * tk * dk, tk, dk);
              CMapR<T> qm(q.data<T>().data() + gi * tq * dk, tq, dk);
              dkm.noalias() += ds.transpose() * qm;
            }
          }
        });
      });
  dispatch(dt, [&]<class T>() {
    const T sc = static_cast<T>(scale);
    auto pa = probs->view<T>();
    auto o = out.data<T>();
    for (std::size_t gi = 0; gi < groups; ++gi) {
      CMapR<T> qm(q.data<T>().data() + gi * tq * dk, tq, dk);
      CMapR<T> km(k.data<T>().data() + gi * tk * dk, tk, dk);
      CMapR<T> vm(v.data<T>().data() + gi * tk * dv, tk, dv);
      MapR<T> p(pa.data() + gi * tq * tk, tq, tk);
      p.noalias() = qm * km.transpose();
      const std::size_t klen =
          mask.key_lengths.empty() ? tk : std::min(tk, mask.key_lengths[gi / mask.heads]);
      for (std::size_t i = 0; i < tq; ++i) {
        std::size_t limit = klen;
        if (mask.causal) limit = std::min(limit, i + 1 + (tk > tq ? tk - tq : 0));
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < limit; ++j) {
          p(i, j) *= sc;
          mx = std::max(mx, p(i, j));
        }
        T total = 0;
        for (std::size_t j = 0; j < limit; ++j) {
          p(i, j) = std::exp(p(i, j) - mx);
          total += p(i, j);
        }
        for (std::size_t j = 0; j < limit; ++j) p(i, j) /= total;
        for (std::size_t j = limit; j < tk; ++j) p(i, j) = 0;
      }
      MapR<T> om(o.data() + gi * tq * dv, tq, dv);
      om.noalias() = p * vm;
    }
  });
  return out;
}

Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
  check_defined("split_heads", x);
  if (x.rank() != 2 || batch == 0 || heads == 0 || x.dim(0) % batch != 0 || x.dim(1) % heads != 0) {
    throw ShapeError("split_heads: shape " + shape_str(x.shape()) + " incompatible with batch " +
                     std::to_string(batch) + ", heads " + std::to_string(heads));
  }
  const std::size_t t = x.dim(0) / batch, d = x.dim(1), dh = d / heads;
  DType dt = x.dtype();
  Tensor out = Tensor::make_result("split_heads", {batch * heads, t, dh}, dt, {x},
                                   [x, batch, heads, t, d, dh](Node& self) {
    dispatch(self.value.dtype(), [&]<class T>() {
      auto g = std::as_const(self.grad).view<T>();
      auto dx = grad_of<T>(x);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t ti = 0; ti < t; ++ti) {
            const T* src = g.data() + ((b * heads + h) * t + ti) * dh;
            T* dst = dx.data() + (b * t + ti) * d + h * dh;
            for (std::size_t j = 0; j < dh; ++j) dst[j] += src[j];
          }
    });
  });
  dispatch(dt, [&]<class T>() {
    auto xv = x.data<T>();
    auto y = out.data<T>();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t ti = 0; ti < t; ++ti) {
          std::copy_n(xv.data() + (b * t + ti) * d + h * dh, dh,
                      y.data() + ((b * heads + h) * t + ti) * dh);
        }
  });
  return out;
}

Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
  check_defined("merge_heads", x);
  if (x.rank() != 3 || batch == 0 || x.dim(0) != batch * heads) {
    throw ShapeError("merge_heads: shape " + shape_str(x.shape()) + " incompatible with batch " +
                     std::to_string(batch) + ", heads " + std::to_string(heads));
  }
  const std::size_t t = x.dim(1), dh = x.dim(2), d = dh * heads;
  DType dt = x.dtype();
  Tensor out = Tensor::make_result("merge_heads", {batch * t, d}, dt, {x},
                                   [x, batch, heads, t, d, dh](Node& self) {
    dispatch(self.value.dtype(), [&]<class T>() {
      auto g = std::as_const(self.grad).view<T>();
      auto dx = grad_of<T>(x);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t ti = 0; ti < t; ++ti) {
            const T* src = g.data() + (b * t + ti) * d + h * dh;
            T* dst = dx.data() + ((b * heads + h) * t + ti) * dh;
            for (std::size_t j = 0; j < dh; ++j) dst[j] += src[j];
          }
    });
  });
  dispatch(dt, [&]<class T>() {
    auto xv = x.data<T>();
    auto y = out.data<T>();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t ti = 0; ti < t; ++ti) {
          std::copy_n(xv.data() + ((b * heads + h) * t + ti) * dh, dh,
                      y.data() + (b * t + ti) * d + h * dh);
        }
  });
  return out;
}

Tensor squared_l2(const Tensor& x) {
  check_defined("squared_l2", x);
  if (x.rank() == 0) throw ShapeError("squared_l2: scalar input");
  const std::size_t d = x.shape().back();
  const std::size_t n = x.numel() / d;
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  DType dt = x.dtype();
  Tensor out = Tensor::make_result("squared_l2", shape, dt, {x}, [x, n, d](Node& self) {
    dispatch(self.value.dtype(), [&]<class T>() {
      auto g = std::as_const(self.grad).view<T>();
      auto xv = x.data<T>();
      auto dx = grad_of<T>(x);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) dx[r * d + j] += 2 * g[r] * xv[r * d + j];
    });
  });
  dispatch(dt, [&]<class T>() {
    auto xv = x.data<T>();
    auto y = out.data<T>();
    for (std::size_t r = 0; r < n; ++r) {
      T s = 0;
      for (std::size_t j = 0; j < d; ++j) s += xv[r * d + j] * xv[r * d + j];
      y[r] = s;
    }
  });
  return out;
}

Tensor sum(const Tensor& x) {
  check_defined("sum", x);
  DType dt = x.dtype();
  Tensor out = Tensor::make_result("sum", {}, dt, {x}, [x](Node& self) {
    dispatch(self.value.dtype(), [&]<class T>() {
      const T g = std::as_const(self.grad).view<T>()[0];
      for (auto& v : grad_of<T>(x)) v += g;
    });
  });
  dispatch(dt, [&]<class T>() {
    auto v = x.data<T>();
    // Eight fixed lanes: vectorizes, and the order never depends on alignment.
    T lane[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= v.size(); i += 8)
      for (int l = 0; l < 8; ++l) lane[l] += v[i + l];
    T s = 0;
    for (; i < v.size(); ++i) s += v[i];
    for (int l = 0; l < 8; ++l) s += lane[l];
    out.data<T>()[0] = s;
  });
  return out;
}

Tensor mean(const Tensor& x) {
  check_defined("mean", x);
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor repeat_rows(const Tensor& x, std::size_t n) {
  check_defined("repeat_rows", x);
  if (x.rank() != 2 || n == 0) throw ShapeError("repeat_rows: expected 2-D input, got " + shape_str(x.shape()));
  const std::size_t rows = x.dim(0), d = x.dim(1);
  DType dt = x.dtype();
  Tensor out = Tensor::make_result("repeat_rows", {rows * n, d}, dt, {x}, [x, rows, d, n](Node& self) {
    dispatch(self.value.dtype(), [&]<class T>() {
      auto g = std::as_const(self.grad).view<T>();
      auto dx = grad_of<T>(x);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < n; ++c)
          for (std::size_t j = 0; j < d; ++j) dx[r * d + j] += g[(r * n + c) * d + j];
    });
  });
  dispatch(dt, [&]<class T>() {
    auto xv = x.data<T>();
    auto y = out.data<T>();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < n; ++c) std::copy_n(xv.data() + r * d, d, y.data() + (r * n + c) * d);
  });
  return out;
}

Tensor pick(const Tensor& x, std::span<const int> idx) {
  check_defined("pick", x);
  if (x.rank() != 2 || x.dim(0) != idx.size()) {
    throw ShapeError("pick: shape " + shape_str(x.shape()) + " with " + std::to_string(idx.size()) + " indices");
  }
  const std::size_t n = x.dim(0), c = x.dim(1);
  for (int i : idx) {
    if (i < 0 || static_cast<std::size_t>(i) >= c) throw ContractError("pick: index out of range");
  }
  std::vector<int> iv(idx.begin(), idx.end());
  DType dt = x.dtype();
  Tensor out = Tensor::make_result("pick", {n}, dt, {x}, [x, iv, c](Node& self) {
    dispatch(self.value.dtype(), [&]<class T>() {
      auto g = std::as_const(self.grad).view<T>();
      auto dx = grad_of<T>(x);
      for (std::size_t r = 0; r < iv.size(); ++r) dx[r * c + static_cast<std::size_t>(iv[r])] += g[r];
    });
  });
  dispatch(dt, [&]<class T>() {
    auto xv = x.data<T>();
    auto y = out.data<T>();
    for (std::size_t r = 0; r < n; ++r) y[r] = xv[r * c + static_cast<std::size_t>(iv[r])];
  });
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_index) {
  check_defined("softmax_cross_entropy", logits);
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw ShapeError("softmax_cross_entropy: logits " + shape_str(logits.shape()) + " with " +
                     std::to_string(targets.size()) + " targets");
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  for (int t : targets) {
    if (t != ignore_index && (t < 0 || static_cast<std::size_t>(t) >= c)) {
      throw ContractError("softmax_cross_entropy: target " + std::to_string(t) +
                          " outside " + std::to_string(c) + " classes");
    }
  }
  std::vector<int> tv(targets.begin(), targets.end());
  DType dt = logits.dtype();
  auto lse = std::make_shared<std::vector<double>>(n, 0.0);
  Tensor out = Tensor::make_result(
      "softmax_cross_entropy", {n}, dt, {logits}, [logits, tv, c, lse, ignore_index](Node& self) {
        dispatch(self.value.dtype(), [&]<class T>() {
          auto g = std::as_const(self.grad).view<T>();
          auto x = logits.data<T>();
          auto dx = grad_of<T>(logits);
          for (std::size_t r = 0; r < tv.size(); ++r) {
            if (tv[r] == ignore_index) continue;
            const T l = static_cast<T>((*lse)[r]);
            for (std::size_t j = 0; j < c; ++j) dx[r * c + j] += g[r] * std::exp(x[r * c + j] - l);
            dx[r * c + static_cast<std::size_t>(tv[r])] -= g[r];
          }
        });
      });
  dispatch(dt, [&]<class T>() {
    auto x = logits.data<T>();
    auto y = out.data<T>();
    for (std::size_t r = 0; r < n; ++r) {
      if (tv[r] == ignore_index) {
        y[r] = 0;
        continue;
      }
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, x[r * c + j]);
      T total = 0;
      for (std::size_t j = 0; j < c; ++j) total += std::exp(x[r * c + j] - mx);
      const T l = mx + std::log(total);
      (*lse)[r] = static_cast<double>(l);
      y[r] = l - x[r * c + static_cast<std::size_t>(tv[r])];
    }
  });
  return out;
}

Tensor straight_through(const Tensor& hard, const Tensor& soft) {
  check_defined("straight_through", hard);
  check_defined("straight_through", soft);
  check_dtype("straight_through", hard, soft);
  if (hard.shape() != soft.shape()) throw ShapeError("straight_through: shapes " + two_shapes(hard, soft));
  DType dt = soft.dtype();
  Tensor out = Tensor::make_result("straight_through", soft.shape(), dt, {soft}, [soft](Node& self) {
    dispatch(self.value.dtype(), [&]<class T>() {
      auto g = std::as_const(self.grad).view<T>();
      auto dx = grad_of<T>(soft);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    });
  });
  dispatch(dt, [&]<class T>() {
    auto h = hard.data<T>();
    std::copy(h.begin(), h.end(), out.data<T>().begin());
  });
  return out;
}

std::vector<int> argmax_rows(const Tensor& x) {
  check_defined("argmax_rows", x);
  if (x.rank() != 2) throw ShapeError("argmax_rows: expected 2-D, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1);
  std::vector<int> out(n, 0);
  dispatch(x.dtype(), [&]<class T>() {
    auto v = x.data<T>();
    for (std::size_t r = 0; r < n; ++r) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < c; ++j)
        if (v[r * c + j] > v[r * c + best]) best = j;
      out[r] = static_cast<int>(best);
    }
  });
  return out;
}

}  // namespace eclab::num

#pragma once

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>

#include "geotdm/rng.hpp"
#include "geotdm/tensor.hpp"

namespace geotdm {

template <class S>
struct Node;
template <class S>
using Var = std::shared_ptr<Node<S>>;

// Reverse-mode graph node. Parents are held by the child, so the graph is a
// DAG of shared_ptrs that frees itself once the last child goes away.
template <class S>
struct Node {
  Tensor<S> value;
  Tensor<S> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<Var<S>> parents;
  std::function<void(Node<S>&)> backfn;

  void add_grad(const Tensor<S>& g) {
    if (grad.numel() == 0) grad = Tensor<S>::zeros(value.shape());
    S* d = grad.data();
    const S* s = g.data();
    for (int64_t i = 0; i < g.numel(); ++i) d[i] += s[i];
  }
};

namespace ag {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

// Disables graph recording in scope; forwards run value-only.
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
};

template <class S>
Var<S> constant(Tensor<S> v) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(v);
  return n;
}

template <class S>
Var<S> parameter(Tensor<S> v) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(v);
  n->requires_grad = true;
  return n;
}

template <class S>
Var<S> make_op(Tensor<S> value, std::vector<Var<S>> parents,
               std::function<void(Node<S>&)> backfn) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(value);
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  if (rg && grad_mode()) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backfn = std::move(backfn);
  }
  return n;
}

// ---- shape helpers ----------------------------------------------------

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  size_t n = std::max(a.size(), b.size());
  Shape out(n);
  for (size_t i = 0; i < n; ++i) {
    int64_t da = i < n - a.size() ? 1 : a[i - (n - a.size())];
    int64_t db = i < n - b.size() ? 1 : b[i - (n - b.size())];
    if (da != db && da != 1 && db != 1)
      throw std::invalid_argument("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[i] = da == 1 ? db : da;
  }
  return out;
}

// Row-major strides of `in` padded/broadcast against `out`; 0 on broadcast dims.
inline std::vector<int64_t> bcast_strides(const Shape& in, const Shape& out) {
  std::vector<int64_t> st(out.size(), 0);
  int64_t stride = 1;
  size_t off = out.size() - in.size();
  for (size_t i = in.size(); i-- > 0;) {
    st[off + i] = (in[i] == 1 && out[off + i] != 1) ? 0 : stride;
    stride *= in[i];
  }
  return st;
}

// Odometer walk over `out`, calling f(out_flat, a_off, b_off).
template <class F>
void bcast_walk(const Shape& out, const std::vector<int64_t>& sa,
                const std::vector<int64_t>& sb, F&& f) {
  int nd = static_cast<int>(out.size());
  int64_t total = shape_numel(out);
  std::vector<int64_t> idx(nd, 0);
  int64_t oa = 0, ob = 0;
  for (int64_t i = 0; i < total; ++i) {
    f(i, oa, ob);
    for (int d = nd - 1; d >= 0; --d) {
      if (++idx[d] < out[d]) {
        oa += sa[d];
        ob += sb[d];
        break;
      }
      idx[d] = 0;
      oa -= sa[d] * (out[d] - 1);
      ob -= sb[d] * (out[d] - 1);
    }
  }
}

template <class S, class F>
Tensor<S> ew2(const Tensor<S>& a, const Tensor<S>& b, F&& f) {
  if (a.shape() == b.shape()) {
    Tensor<S> out(a.shape());
    S* o = out.data();
    const S* pa = a.data();
    const S* pb = b.data();
    for (int64_t i = 0; i < a.numel(); ++i) o[i] = f(pa[i], pb[i]);
    return out;
  }
  Shape os = broadcast_shape(a.shape(), b.shape());
  Tensor<S> out(os);
  auto sa = bcast_strides(a.shape(), os);
  auto sb = bcast_strides(b.shape(), os);
  S* o = out.data();
  const S* pa = a.data();
  const S* pb = b.data();
  bcast_walk(os, sa, sb, [&](int64_t i, int64_t ia, int64_t ib) { o[i] = f(pa[ia], pb[ib]); });
  return out;
}

// Sum g down to `target` (inverse of broadcasting).
template <class S>
Tensor<S> reduce_to(const Tensor<S>& g, const Shape& target) {
  if (g.shape() == target) return g;
  Tensor<S> out(target);
  auto st = bcast_strides(target, g.shape());
  std::vector<int64_t> zero(g.shape().size(), 0);
  S* o = out.data();
  const S* pg = g.data();
  bcast_walk(g.shape(), st, zero, [&](int64_t i, int64_t it, int64_t) { o[it] += pg[i]; });
  return out;
}

// ---- elementwise binary ------------------------------------------------

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
  Tensor<S> v = ew2(a->value, b->value, [](S x, S y) { return x + y; });
  return make_op<S>(std::move(v), {a, b}, [a, b](Node<S>& n) {
    if (a->requires_grad) a->add_grad(reduce_to(n.grad, a->value.shape()));
    if (b->requires_grad) b->add_grad(reduce_to(n.grad, b->value.shape()));
  });
}

template <class S>
Var<S> sub(Var<S> a, Var<S> b) {
  Tensor<S> v = ew2(a->value, b->value, [](S x, S y) { return x - y; });
  return make_op<S>(std::move(v), {a, b}, [a, b](Node<S>& n) {
    if (a->requires_grad) a->add_grad(reduce_to(n.grad, a->value.shape()));
    if (b->requires_grad) {
      Tensor<S> neg(n.grad.shape());
      for (int64_t i = 0; i < neg.numel(); ++i) neg[i] = -n.grad[i];
      b->add_grad(reduce_to(neg, b->value.shape()));
    }
  });
}

template <class S>
Var<S> mul(Var<S> a, Var<S> b) {
  Tensor<S> v = ew2(a->value, b->value, [](S x, S y) { return x * y; });
  return make_op<S>(std::move(v), {a, b}, [a, b](Node<S>& n) {
    if (a->requires_grad)
      a->add_grad(reduce_to(ew2(n.grad, b->value, [](S g, S y) { return g * y; }),
                            a->value.shape()));
    if (b->requires_grad)
      b->add_grad(reduce_to(ew2(n.grad, a->value, [](S g, S x) { return g * x; }),
                            b->value.shape()));
  });
}

template <class S>
Var<S> ediv(Var<S> a, Var<S> b) {
  Tensor<S> v = ew2(a->value, b->value, [](S x, S y) { return x / y; });
  return make_op<S>(std::move(v), {a, b}, [a, b](Node<S>& n) {
    if (a->requires_grad)
      a->add_grad(reduce_to(ew2(n.grad, b->value, [](S g, S y) { return g / y; }),
                            a->value.shape()));
    if (b->requires_grad) {
      Tensor<S> q = ew2(a->value, b->value, [](S x, S y) { return -x / (y * y); });
      b->add_grad(reduce_to(ew2(n.grad, q, [](S g, S d) { return g * d; }), b->value.shape()));
    }
  });
}

// ---- scalar / unary ----------------------------------------------------

template <class S, class FV, class FD>
Var<S> unary(Var<S> a, FV fv, FD fd) {
  Tensor<S> v(a->value.shape());
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = fv(a->value[i]);
  return make_op<S>(std::move(v), {a}, [a, fd](Node<S>& n) {
    if (!a->requires_grad) return;
    Tensor<S> g(n.grad.shape());
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[i] * fd(a->value[i], n.value[i]);
    a->add_grad(g);
  });
}

template <class S>
Var<S> scale(Var<S> a, S c) {
  return unary(
      a, [c](S x) { return c * x; }, [c](S, S) { return c; });
}

template <class S>
Var<S> add_scalar(Var<S> a, S c) {
  return unary(
      a, [c](S x) { return x + c; }, [](S, S) { return S(1); });
}

template <class S>
Var<S> neg(Var<S> a) {
  return scale(a, S(-1));
}

template <class S>
Var<S> sigmoid(Var<S> a) {
  return unary(
      a, [](S x) { return S(1) / (S(1) + std::exp(-x)); },
      [](S, S y) { return y * (S(1) - y); });
}

template <class S>
Var<S> silu(Var<S> a) {
  return unary(
      a,
      [](S x) {
        S s = S(1) / (S(1) + std::exp(-x));
        return x * s;
      },
      [](S x, S) {
        S s = S(1) / (S(1) + std::exp(-x));
        return s * (S(1) + x * (S(1) - s));
      });
}

template <class S>
Var<S> vexp(Var<S> a) {
  return unary(
      a, [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

template <class S>
Var<S> vlog(Var<S> a) {
  return unary(
      a, [](S x) { return std::log(x); }, [](S x, S) { return S(1) / x; });
}

template <class S>
Var<S> vsqrt(Var<S> a) {
  return unary(
      a, [](S x) { return std::sqrt(x); }, [](S, S y) { return S(0.5) / y; });
}

template <class S>
Var<S> square(Var<S> a) {
  return unary(
      a, [](S x) { return x * x; }, [](S x, S) { return S(2) * x; });
}

template <class S>
Var<S> detach(Var<S> a) {
  return constant(a->value);
}

// ---- matmul ------------------------------------------------------------

template <class S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using EMap = Eigen::Map<EMat<S>>;
template <class S>
using ECMap = Eigen::Map<const EMat<S>>;

// [m,k]x[k,n], [B,m,k]x[B,k,n], or [B,m,k]x[k,n] with a shared right factor.
template <class S>
Var<S> matmul(Var<S> a, Var<S> b) {
  const Tensor<S>& A = a->value;
  const Tensor<S>& B = b->value;
  int an = A.ndim(), bn = B.ndim();
  if ((an != 2 && an != 3) || (bn != 2 && bn != 3) || (an == 2 && bn == 3))
    throw std::invalid_argument("matmul shapes " + shape_str(A.shape()) + " x " +
                                shape_str(B.shape()));
  int64_t batch = an == 3 ? A.dim(0) : 1;
  int64_t m = A.dim(an - 2), k = A.dim(an - 1);
  int64_t kb = B.dim(bn - 2), nn = B.dim(bn - 1);
  if (k != kb || (bn == 3 && B.dim(0) != batch))
    throw std::invalid_argument("matmul shapes " + shape_str(A.shape()) + " x " +
                                shape_str(B.shape()));
  Shape os = an == 3 ? Shape{batch, m, nn} : Shape{m, nn};
  Tensor<S> out(os);
  for (int64_t i = 0; i < batch; ++i) {
    ECMap<S> ma(A.data() + i * m * k, m, k);
    ECMap<S> mb(B.data() + (bn == 3 ? i * k * nn : 0), k, nn);
    EMap<S> mo(out.data() + i * m * nn, m, nn);
    mo.noalias() = ma * mb;
  }
  return make_op<S>(std::move(out), {a, b}, [a, b, batch, m, k, nn](Node<S>& n) {
    int bn = b->value.ndim();
    if (a->requires_grad) {
      Tensor<S> ga(a->value.shape());
      for (int64_t i = 0; i < batch; ++i) {
        ECMap<S> mg(n.grad.data() + i * m * nn, m, nn);
        ECMap<S> mb(b->value.data() + (bn == 3 ? i * k * nn : 0), k, nn);
        EMap<S> mo(ga.data() + i * m * k, m, k);
        mo.noalias() = mg * mb.transpose();
      }
      a->add_grad(ga);
    }
    if (b->requires_grad) {
      Tensor<S> gb(b->value.shape());
      for (int64_t i = 0; i < batch; ++i) {
        ECMap<S> mg(n.grad.data() + i * m * nn, m, nn);
        ECMap<S> ma(a->value.data() + i * m * k, m, k);
        EMap<S> mo(gb.data() + (bn == 3 ? i * k * nn : 0), k, nn);
        if (bn == 3)
          mo.noalias() = ma.transpose() * mg;
        else
          mo.noalias() += ma.transpose() * mg;
      }
      b->add_grad(gb);
    }
  });
}

// ---- structural --------------------------------------------------------

template <class S>
Var<S> reshape(Var<S> a, Shape shape) {
  Tensor<S> v = a->value.reshaped(shape);
  return make_op<S>(std::move(v), {a}, [a](Node<S>& n) {
    if (a->requires_grad) a->add_grad(n.grad.reshaped(a->value.shape()));
  });
}

template <class S>
Tensor<S> transpose_tensor(const Tensor<S>& t, const std::vector<int>& perm) {
  int nd = t.ndim();
  Shape os(nd);
  for (int i = 0; i < nd; ++i) os[i] = t.dim(perm[i]);
  std::vector<int64_t> in_strides(nd, 1);
  for (int i = nd - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * t.dim(i + 1);
  std::vector<int64_t> walk(nd);
  for (int i = 0; i < nd; ++i) walk[i] = in_strides[perm[i]];
  Tensor<S> out(os);
  std::vector<int64_t> idx(nd, 0);
  int64_t src = 0;
  for (int64_t i = 0; i < out.numel(); ++i) {
    out[i] = t[src];
    for (int d = nd - 1; d >= 0; --d) {
      if (++idx[d] < os[d]) {
        src += walk[d];
        break;
      }
      idx[d] = 0;
      src -= walk[d] * (os[d] - 1);
    }
  }
  return out;
}

template <class S>
Var<S> transpose(Var<S> a, std::vector<int> perm) {
  Tensor<S> v = transpose_tensor(a->value, perm);
  return make_op<S>(std::move(v), {a}, [a, perm](Node<S>& n) {
    if (!a->requires_grad) return;
    std::vector<int> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = static_cast<int>(i);
    a->add_grad(transpose_tensor(n.grad, inv));
  });
}

template <class S>
Var<S> slice(Var<S> a, int axis, int64_t start, int64_t len) {
  const Tensor<S>& t = a->value;
  Shape os = t.shape();
  os[axis] = len;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= t.dim(i);
  for (int i = axis + 1; i < t.ndim(); ++i) inner *= t.dim(i);
  int64_t da = t.dim(axis);
  Tensor<S> out(os);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t j = 0; j < len; ++j)
      std::copy_n(t.data() + (o * da + start + j) * inner, inner,
                  out.data() + (o * len + j) * inner);
  return make_op<S>(std::move(out), {a}, [a, axis, start, len, outer, inner, da](Node<S>& n) {
    if (!a->requires_grad) return;
    Tensor<S> g(a->value.shape());
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t j = 0; j < len; ++j)
        std::copy_n(n.grad.data() + (o * len + j) * inner, inner,
                    g.data() + (o * da + start + j) * inner);
    a->add_grad(g);
  });
}

template <class S>
Var<S> concat(std::vector<Var<S>> parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat of nothing");
  const Tensor<S>& t0 = parts[0]->value;
  Shape os = t0.shape();
  int64_t total = 0;
  for (auto& p : parts) total += p->value.dim(axis);
  os[axis] = total;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= os[i];
  for (int i = axis + 1; i < static_cast<int>(os.size()); ++i) inner *= os[i];
  Tensor<S> out(os);
  int64_t at = 0;
  for (auto& p : parts) {
    int64_t d = p->value.dim(axis);
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(p->value.data() + o * d * inner, d * inner,
                  out.data() + (o * total + at) * inner);
    at += d;
  }
  return make_op<S>(std::move(out), parts, [parts, axis, outer, inner, total](Node<S>& n) {
    int64_t at = 0;
    for (auto& p : parts) {
      int64_t d = p->value.dim(axis);
      if (p->requires_grad) {
        Tensor<S> g(p->value.shape());
        for (int64_t o = 0; o < outer; ++o)
          std::copy_n(n.grad.data() + (o * total + at) * inner, d * inner,
                      g.data() + o * d * inner);
        p->add_grad(g);
      }
      at += d;
    }
  });
}

template <class S>
Var<S> expand(Var<S> a, Shape shape) {
  Tensor<S> zero(shape);
  Tensor<S> v = ew2(a->value, zero, [](S x, S) { return x; });
  return make_op<S>(std::move(v), {a}, [a](Node<S>& n) {
    if (a->requires_grad) a->add_grad(reduce_to(n.grad, a->value.shape()));
  });
}

// ---- reductions ----------------------------------------------------------

template <class S>
Var<S> sum_axis(Var<S> a, int axis, bool keepdim = true) {
  const Tensor<S>& t = a->value;
  int64_t outer = 1, inner = 1, d = t.dim(axis);
  for (int i = 0; i < axis; ++i) outer *= t.dim(i);
  for (int i = axis + 1; i < t.ndim(); ++i) inner *= t.dim(i);
  Shape os = t.shape();
  if (keepdim)
    os[axis] = 1;
  else
    os.erase(os.begin() + axis);
  Tensor<S> out(os);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t in = 0; in < inner; ++in) {
      double acc = 0;
      for (int64_t j = 0; j < d; ++j) acc += static_cast<double>(t[(o * d + j) * inner + in]);
      out[o * inner + in] = static_cast<S>(acc);
    }
  return make_op<S>(std::move(out), {a}, [a, axis, outer, inner, d](Node<S>& n) {
    if (!a->requires_grad) return;
    Tensor<S> g(a->value.shape());
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t in = 0; in < inner; ++in) {
        S gv = n.grad[o * inner + in];
        for (int64_t j = 0; j < d; ++j) g[(o * d + j) * inner + in] = gv;
      }
    a->add_grad(g);
  });
}

template <class S>
Var<S> mean_axis(Var<S> a, int axis, bool keepdim = true) {
  return scale(sum_axis(a, axis, keepdim), S(1) / static_cast<S>(a->value.dim(axis)));
}

template <class S>
Var<S> sum_all(Var<S> a) {
  double acc = 0;
  for (int64_t i = 0; i < a->value.numel(); ++i) acc += static_cast<double>(a->value[i]);
  Tensor<S> out({1});
  out[0] = static_cast<S>(acc);
  return make_op<S>(std::move(out), {a}, [a](Node<S>& n) {
    if (!a->requires_grad) return;
    S gv = n.grad[0];
    a->add_grad(Tensor<S>::full(a->value.shape(), gv));
  });
}

template <class S>
Var<S> mean_all(Var<S> a) {
  return scale(sum_all(a), S(1) / static_cast<S>(a->value.numel()));
}

// ---- softmax / norms -----------------------------------------------------

// Softmax over the last axis, max-subtracted.
template <class S>
Var<S> softmax_last(Var<S> a) {
  const Tensor<S>& t = a->value;
  int64_t d = t.dim(t.ndim() - 1);
  int64_t rows = t.numel() / d;
  Tensor<S> out(t.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const S* x = t.data() + r * d;
    S* y = out.data() + r * d;
    S mx = x[0];
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, x[j]);
    double z = 0;
    for (int64_t j = 0; j < d; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += static_cast<double>(y[j]);
    }
    for (int64_t j = 0; j < d; ++j) y[j] = static_cast<S>(y[j] / z);
  }
  return make_op<S>(std::move(out), {a}, [a, rows, d](Node<S>& n) {
    if (!a->requires_grad) return;
    Tensor<S> g(a->value.shape());
    for (int64_t r = 0; r < rows; ++r) {
      const S* y = n.value.data() + r * d;
      const S* go = n.grad.data() + r * d;
      double dot = 0;
      for (int64_t j = 0; j < d; ++j) dot += static_cast<double>(go[j]) * y[j];
      S* gx = g.data() + r * d;
      for (int64_t j = 0; j < d; ++j) gx[j] = (go[j] - static_cast<S>(dot)) * y[j];
    }
    a->add_grad(g);
  });
}

// sqrt(sum(x^2, last axis) + eps2), keepdim.
template <class S>
Var<S> norm_last(Var<S> a, S eps2) {
  const Tensor<S>& t = a->value;
  int64_t d = t.dim(t.ndim() - 1);
  int64_t rows = t.numel() / d;
  Shape os = t.shape();
  os[os.size() - 1] = 1;
  Tensor<S> out(os);
  for (int64_t r = 0; r < rows; ++r) {
    double acc = eps2;
    const S* x = t.data() + r * d;
    for (int64_t j = 0; j < d; ++j) acc += static_cast<double>(x[j]) * x[j];
    out[r] = static_cast<S>(std::sqrt(acc));
  }
  return make_op<S>(std::move(out), {a}, [a, rows, d](Node<S>& n) {
    if (!a->requires_grad) return;
    Tensor<S> g(a->value.shape());
    for (int64_t r = 0; r < rows; ++r) {
      S c = n.grad[r] / n.value[r];
      const S* x = a->value.data() + r * d;
      S* gx = g.data() + r * d;
      for (int64_t j = 0; j < d; ++j) gx[j] = c * x[j];
    }
    a->add_grad(g);
  });
}

// ---- gather / scatter ------------------------------------------------------

// rows of a 2D tensor: out[e,:] = a[idx[e],:]
template <class S>
Var<S> gather_rows(Var<S> a, std::shared_ptr<std::vector<int64_t>> idx) {
  const Tensor<S>& t = a->value;
  int64_t c = t.dim(1);
  int64_t e = static_cast<int64_t>(idx->size());
  Tensor<S> out({e, c});
  for (int64_t i = 0; i < e; ++i)
    std::copy_n(t.data() + (*idx)[i] * c, c, out.data() + i * c);
  return make_op<S>(std::move(out), {a}, [a, idx, c, e](Node<S>& n) {
    if (!a->requires_grad) return;
    Tensor<S> g(a->value.shape());
    for (int64_t i = 0; i < e; ++i) {
      S* dst = g.data() + (*idx)[i] * c;
      const S* src = n.grad.data() + i * c;
      for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
    }
    a->add_grad(g);
  });
}

// out[r,:] = sum over e with idx[e]==r of src[e,:]
template <class S>
Var<S> scatter_add_rows(Var<S> src, std::shared_ptr<std::vector<int64_t>> idx, int64_t rows) {
  const Tensor<S>& t = src->value;
  int64_t c = t.dim(1);
  int64_t e = t.dim(0);
  Tensor<S> out({rows, c});
  for (int64_t i = 0; i < e; ++i) {
    S* dst = out.data() + (*idx)[i] * c;
    const S* s = t.data() + i * c;
    for (int64_t j = 0; j < c; ++j) dst[j] += s[j];
  }
  return make_op<S>(std::move(out), {src}, [src, idx, c, e](Node<S>& n) {
    if (!src->requires_grad) return;
    Tensor<S> g(src->value.shape());
    for (int64_t i = 0; i < e; ++i)
      std::copy_n(n.grad.data() + (*idx)[i] * c, c, g.data() + i * c);
    src->add_grad(g);
  });
}

// ---- relative-position attention helpers -----------------------------------

// out[m,t,s] = sum_f q[m,t,f] * psi[t,s,f]; psi is a fixed table.
template <class S>
Var<S> score_pos(Var<S> q, std::shared_ptr<Tensor<S>> psi) {
  int64_t M = q->value.dim(0), T = q->value.dim(1), F = q->value.dim(2);
  int64_t Sn = psi->dim(1);
  Tensor<S> out({M, T, Sn});
  for (int64_t m = 0; m < M; ++m)
    for (int64_t t = 0; t < T; ++t) {
      const S* qr = q->value.data() + (m * T + t) * F;
      for (int64_t s = 0; s < Sn; ++s) {
        const S* pr = psi->data() + (t * Sn + s) * F;
        double acc = 0;
        for (int64_t f = 0; f < F; ++f) acc += static_cast<double>(qr[f]) * pr[f];
        out[(m * T + t) * Sn + s] = static_cast<S>(acc);
      }
    }
  return make_op<S>(std::move(out), {q}, [q, psi, M, T, F, Sn](Node<S>& n) {
    if (!q->requires_grad) return;
    Tensor<S> g(q->value.shape());
    for (int64_t m = 0; m < M; ++m)
      for (int64_t t = 0; t < T; ++t) {
        S* gq = g.data() + (m * T + t) * F;
        for (int64_t s = 0; s < Sn; ++s) {
          S gv = n.grad[(m * T + t) * Sn + s];
          const S* pr = psi->data() + (t * Sn + s) * F;
          for (int64_t f = 0; f < F; ++f) gq[f] += gv * pr[f];
        }
      }
    q->add_grad(g);
  });
}

// out[m,t,f] = sum_s a[m,t,s] * psi[t,s,f]; psi is a fixed table.
template <class S>
Var<S> pos_mix(Var<S> a, std::shared_ptr<Tensor<S>> psi) {
  int64_t M = a->value.dim(0), T = a->value.dim(1), Sn = a->value.dim(2);
  int64_t F = psi->dim(2);
  Tensor<S> out({M, T, F});
  for (int64_t m = 0; m < M; ++m)
    for (int64_t t = 0; t < T; ++t) {
      S* orow = out.data() + (m * T + t) * F;
      for (int64_t s = 0; s < Sn; ++s) {
        S av = a->value[(m * T + t) * Sn + s];
        const S* pr = psi->data() + (t * Sn + s) * F;
        for (int64_t f = 0; f < F; ++f) orow[f] += av * pr[f];
      }
    }
  return make_op<S>(std::move(out), {a}, [a, psi, M, T, Sn, F](Node<S>& n) {
    if (!a->requires_grad) return;
    Tensor<S> g(a->value.shape());
    for (int64_t m = 0; m < M; ++m)
      for (int64_t t = 0; t < T; ++t) {
        const S* grow = n.grad.data() + (m * T + t) * F;
        for (int64_t s = 0; s < Sn; ++s) {
          const S* pr = psi->data() + (t * Sn + s) * F;
          double acc = 0;
          for (int64_t f = 0; f < F; ++f) acc += static_cast<double>(grow[f]) * pr[f];
          g[(m * T + t) * Sn + s] = static_cast<S>(acc);
        }
      }
    a->add_grad(g);
  });
}

// ---- driver ---------------------------------------------------------------

template <class S>
void backward(const Var<S>& root) {
  if (root->value.numel() != 1)
    throw std::invalid_argument("backward expects a scalar root");
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> seen;
  std::vector<std::pair<Node<S>*, size_t>> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    auto [n, i] = stack.back();
    if (i < n->parents.size()) {
      stack.back().second++;
      Node<S>* p = n->parents[i].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root->grad = Tensor<S>::ones(root->value.shape());
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    if (n->backfn && n->grad.numel() != 0) n->backfn(*n);
  }
}

// ---- composite helpers ------------------------------------------------------

// x @ W + b applied to the last axis; x may have any rank >= 2.
template <class S>
Var<S> linear(Var<S> x, Var<S> W, Var<S> b) {
  Shape in = x->value.shape();
  int64_t fin = in.back();
  int64_t rows = x->value.numel() / fin;
  Var<S> flat = reshape(x, {rows, fin});
  Var<S> y = add(matmul(flat, W), b);
  Shape out = in;
  out.back() = W->value.dim(1);
  return reshape(y, out);
}

// ---- init helpers -------------------------------------------------------------

template <class S>
Tensor<S> randn_tensor(Rng& rng, Shape shape) {
  Tensor<S> t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(rng.normal());
  return t;
}

template <class S>
Tensor<S> randu_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor<S> t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

}  // namespace ag
}  // namespace geotdm

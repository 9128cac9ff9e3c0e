#define EIGEN_DONT_PARALLELIZE
#include "npgrow/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace npgrow {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

namespace {

EMap emap(Tensor& t, int rows, int cols) { return EMap(t.data(), rows, cols); }
ECMap ecmap(const Tensor& t, int rows, int cols) { return ECMap(t.data(), rows, cols); }

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Var Tape::node(Tensor val, bool need_grad) {
  nodes_.emplace_back();
  Node& n = nodes_.back();
  n.val = std::move(val);
  n.need_grad = need_grad;
  return &n;
}

Var Tape::leaf(const Tensor& value, bool need_grad, int param_index) {
  Var v = node(value, need_grad);
  v->param_index = param_index;
  return v;
}

Tensor& ensure_grad(Var v) {
  if (!v->grad.defined()) v->grad = Tensor::zeros(v->val.shape());
  return v->grad;
}

void accum_grad(Var v, const Tensor& delta) {
  if (!v->need_grad) return;
  ensure_grad(v).add_(delta);
}

void Tape::backward(Var loss) {
  require(loss->val.size() == 1, "backward: loss must be a scalar");
  ensure_grad(loss)[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = *it;
    if (n.grad.defined() && n.back) n.back();
  }
}

void Tape::collect_param_grads(const std::function<void(int, const Tensor&)>& sink) const {
  for (const Node& n : nodes_) {
    if (n.param_index >= 0 && n.grad.defined()) sink(n.param_index, n.grad);
  }
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Var unary_op(Tape& t, Var a, Fwd fwd, Bwd dfd) {
  Tensor out(a->val.shape());
  const double* x = a->val.data();
  double* y = out.data();
  const int64_t n = out.size();
  for (int64_t i = 0; i < n; ++i) y[i] = fwd(x[i]);
  Var o = t.node(std::move(out), a->need_grad);
  if (o->need_grad) {
    o->back = [o, a, dfd]() {
      Tensor& ga = ensure_grad(a);
      const double* x = a->val.data();
      const double* y = o->val.data();
      const double* g = o->grad.data();
      for (int64_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * dfd(x[i], y[i]);
    };
  }
  return o;
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
  require(a->val.same_shape(b->val), "add: shape mismatch");
  Tensor out = a->val.clone();
  out.add_(b->val);
  Var o = t.node(std::move(out), a->need_grad || b->need_grad);
  if (o->need_grad)
    o->back = [o, a, b]() {
      accum_grad(a, o->grad);
      accum_grad(b, o->grad);
    };
  return o;
}

Var sub(Tape& t, Var a, Var b) {
  require(a->val.same_shape(b->val), "sub: shape mismatch");
  Tensor out = a->val.clone();
  out.add_scaled_(b->val, -1.0);
  Var o = t.node(std::move(out), a->need_grad || b->need_grad);
  if (o->need_grad)
    o->back = [o, a, b]() {
      accum_grad(a, o->grad);
      if (b->need_grad) ensure_grad(b).add_scaled_(o->grad, -1.0);
    };
  return o;
}

Var mul(Tape& t, Var a, Var b) {
  require(a->val.same_shape(b->val), "mul: shape mismatch");
  Tensor out(a->val.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = a->val[i] * b->val[i];
  Var o = t.node(std::move(out), a->need_grad || b->need_grad);
  if (o->need_grad)
    o->back = [o, a, b]() {
      if (a->need_grad) {
        Tensor& ga = ensure_grad(a);
        for (int64_t i = 0; i < ga.size(); ++i) ga[i] += o->grad[i] * b->val[i];
      }
      if (b->need_grad) {
        Tensor& gb = ensure_grad(b);
        for (int64_t i = 0; i < gb.size(); ++i) gb[i] += o->grad[i] * a->val[i];
      }
    };
  return o;
}

Var div_ew(Tape& t, Var a, Var b) {
  require(a->val.same_shape(b->val), "div: shape mismatch");
  Tensor out(a->val.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = a->val[i] / b->val[i];
  Var o = t.node(std::move(out), a->need_grad || b->need_grad);
  if (o->need_grad)
    o->back = [o, a, b]() {
      if (a->need_grad) {
        Tensor& ga = ensure_grad(a);
        for (int64_t i = 0; i < ga.size(); ++i) ga[i] += o->grad[i] / b->val[i];
      }
      if (b->need_grad) {
        Tensor& gb = ensure_grad(b);
        for (int64_t i = 0; i < gb.size(); ++i)
          gb[i] -= o->grad[i] * o->val[i] / b->val[i];
      }
    };
  return o;
}

Var scale(Tape& t, Var a, double alpha) {
  Tensor out = a->val.clone();
  out.scale_(alpha);
  Var o = t.node(std::move(out), a->need_grad);
  if (o->need_grad)
    o->back = [o, a, alpha]() { ensure_grad(a).add_scaled_(o->grad, alpha); };
  return o;
}

Var add_scalar(Tape& t, Var a, double c) {
  return unary_op(
      t, a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var neg(Tape& t, Var a) { return scale(t, a, -1.0); }

Var exp_ew(Tape& t, Var a) {
  return unary_op(
      t, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log_ew(Tape& t, Var a) {
  return unary_op(
      t, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(Tape& t, Var a) {
  return unary_op(
      t, a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var softplus(Tape& t, Var a) {
  return unary_op(
      t, a,
      [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
      [](double x, double) { return sigmoid(x); });
}

Var silu(Tape& t, Var a) {
  return unary_op(
      t, a, [](double x) { return x * sigmoid(x); },
      [](double x, double) {
        const double s = sigmoid(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Var sum_all(Tape& t, Var a) {
  Var o = t.node(Tensor::scalar(a->val.sum()), a->need_grad);
  if (o->need_grad)
    o->back = [o, a]() {
      Tensor& ga = ensure_grad(a);
      const double g = o->grad[0];
      for (int64_t i = 0; i < ga.size(); ++i) ga[i] += g;
    };
  return o;
}

Var mean_all(Tape& t, Var a) { return scale(t, sum_all(t, a), 1.0 / static_cast<double>(a->val.size())); }

Var sum_spatial(Tape& t, Var a) {
  require(a->val.ndim() == 3, "sum_spatial: expected (C, H, W)");
  const int c = a->val.dim(0);
  const int64_t hw = static_cast<int64_t>(a->val.dim(1)) * a->val.dim(2);
  Tensor out({c});
  for (int ci = 0; ci < c; ++ci) {
    const double* p = a->val.data() + ci * hw;
    double acc = 0.0;
    for (int64_t i = 0; i < hw; ++i) acc += p[i];
    out[ci] = acc;
  }
  Var o = t.node(std::move(out), a->need_grad);
  if (o->need_grad)
    o->back = [o, a, c, hw]() {
      Tensor& ga = ensure_grad(a);
      for (int ci = 0; ci < c; ++ci) {
        double* p = ga.data() + ci * hw;
        const double g = o->grad[ci];
        for (int64_t i = 0; i < hw; ++i) p[i] += g;
      }
    };
  return o;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Var matmul(Tape& t, Var a, Var b) {
  require(a->val.ndim() == 2 && b->val.ndim() == 2 && a->val.dim(1) == b->val.dim(0),
          "matmul: incompatible shapes " + shape_str(a->val.shape()) + " x " +
              shape_str(b->val.shape()));
  const int m = a->val.dim(0), k = a->val.dim(1), n = b->val.dim(1);
  Tensor out({m, n});
  emap(out, m, n).noalias() = ecmap(a->val, m, k) * ecmap(b->val, k, n);
  Var o = t.node(std::move(out), a->need_grad || b->need_grad);
  if (o->need_grad)
    o->back = [o, a, b, m, k, n]() {
      if (a->need_grad)
        emap(ensure_grad(a), m, k).noalias() +=
            ecmap(o->grad, m, n) * ecmap(b->val, k, n).transpose();
      if (b->need_grad)
        emap(ensure_grad(b), k, n).noalias() +=
            ecmap(a->val, m, k).transpose() * ecmap(o->grad, m, n);
    };
  return o;
}

Var matmul_nt(Tape& t, Var a, Var b) {
  require(a->val.ndim() == 2 && b->val.ndim() == 2 && a->val.dim(1) == b->val.dim(1),
          "matmul_nt: incompatible shapes");
  const int m = a->val.dim(0), k = a->val.dim(1), n = b->val.dim(0);
  Tensor out({m, n});
  emap(out, m, n).noalias() = ecmap(a->val, m, k) * ecmap(b->val, n, k).transpose();
  Var o = t.node(std::move(out), a->need_grad || b->need_grad);
  if (o->need_grad)
    o->back = [o, a, b, m, k, n]() {
      if (a->need_grad)
        emap(ensure_grad(a), m, k).noalias() += ecmap(o->grad, m, n) * ecmap(b->val, n, k);
      if (b->need_grad)
        emap(ensure_grad(b), n, k).noalias() +=
            ecmap(o->grad, m, n).transpose() * ecmap(a->val, m, k);
    };
  return o;
}

Var linear(Tape& t, Var x, Var w, Var b) {
  Var y = matmul_nt(t, x, w);
  if (!b) return y;
  require(b->val.ndim() == 1 && b->val.dim(0) == y->val.dim(1), "linear: bias shape");
  const int n = y->val.dim(0), m = y->val.dim(1);
  Tensor out = y->val.clone();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out.at(i, j) += b->val[j];
  Var o = t.node(std::move(out), y->need_grad || b->need_grad);
  if (o->need_grad)
    o->back = [o, y, b, n, m]() {
      accum_grad(y, o->grad);
      if (b->need_grad) {
        Tensor& gb = ensure_grad(b);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < m; ++j) gb[j] += o->grad.at(i, j);
      }
    };
  return o;
}

// ---------------------------------------------------------------------------
// Shape
// ---------------------------------------------------------------------------

Var reshape(Tape& t, Var a, Shape shape) {
  require(shape_numel(shape) == a->val.size(), "reshape: element count mismatch");
  Tensor out = a->val.clone().reshaped(std::move(shape));
  Var o = t.node(std::move(out), a->need_grad);
  if (o->need_grad)
    o->back = [o, a]() { ensure_grad(a).add_(o->grad.reshaped(a->val.shape())); };
  return o;
}

Var concat_channels(Tape& t, const std::vector<Var>& xs) {
  require(!xs.empty(), "concat_channels: empty input");
  const int h = xs[0]->val.dim(1), w = xs[0]->val.dim(2);
  int ctot = 0;
  bool need = false;
  for (Var x : xs) {
    require(x->val.ndim() == 3 && x->val.dim(1) == h && x->val.dim(2) == w,
            "concat_channels: spatial mismatch");
    ctot += x->val.dim(0);
    need = need || x->need_grad;
  }
  Tensor out({ctot, h, w});
  int64_t off = 0;
  for (Var x : xs) {
    std::memcpy(out.data() + off, x->val.data(), sizeof(double) * x->val.size());
    off += x->val.size();
  }
  Var o = t.node(std::move(out), need);
  if (o->need_grad) {
    std::vector<Var> parts = xs;
    o->back = [o, parts]() {
      int64_t off = 0;
      for (Var x : parts) {
        if (x->need_grad) {
          Tensor& gx = ensure_grad(x);
          const double* src = o->grad.data() + off;
          for (int64_t i = 0; i < gx.size(); ++i) gx[i] += src[i];
        }
        off += x->val.size();
      }
    };
  }
  return o;
}

Var concat_cols(Tape& t, const std::vector<Var>& xs) {
  require(!xs.empty(), "concat_cols: empty input");
  const int n = xs[0]->val.dim(0);
  int mtot = 0;
  bool need = false;
  for (Var x : xs) {
    require(x->val.ndim() == 2 && x->val.dim(0) == n, "concat_cols: row mismatch");
    mtot += x->val.dim(1);
    need = need || x->need_grad;
  }
  Tensor out({n, mtot});
  int col = 0;
  for (Var x : xs) {
    const int m = x->val.dim(1);
    for (int i = 0; i < n; ++i)
      std::memcpy(out.data() + static_cast<int64_t>(i) * mtot + col,
                  x->val.data() + static_cast<int64_t>(i) * m, sizeof(double) * m);
    col += m;
  }
  Var o = t.node(std::move(out), need);
  if (o->need_grad) {
    std::vector<Var> parts = xs;
    o->back = [o, parts, n, mtot]() {
      int col = 0;
      for (Var x : parts) {
        const int m = x->val.dim(1);
        if (x->need_grad) {
          Tensor& gx = ensure_grad(x);
          for (int i = 0; i < n; ++i) {
            const double* src = o->grad.data() + static_cast<int64_t>(i) * mtot + col;
            double* dst = gx.data() + static_cast<int64_t>(i) * m;
            for (int j = 0; j < m; ++j) dst[j] += src[j];
          }
        }
        col += m;
      }
    };
  }
  return o;
}

Var concat_rows(Tape& t, const std::vector<Var>& xs) {
  require(!xs.empty(), "concat_rows: empty input");
  const int m = xs[0]->val.dim(1);
  int ntot = 0;
  bool need = false;
  for (Var x : xs) {
    require(x->val.ndim() == 2 && x->val.dim(1) == m, "concat_rows: column mismatch");
    ntot += x->val.dim(0);
    need = need || x->need_grad;
  }
  Tensor out({ntot, m});
  int64_t off = 0;
  for (Var x : xs) {
    std::memcpy(out.data() + off, x->val.data(), sizeof(double) * x->val.size());
    off += x->val.size();
  }
  Var o = t.node(std::move(out), need);
  if (o->need_grad) {
    std::vector<Var> parts = xs;
    o->back = [o, parts]() {
      int64_t off = 0;
      for (Var x : parts) {
        if (x->need_grad) {
          Tensor& gx = ensure_grad(x);
          const double* src = o->grad.data() + off;
          for (int64_t i = 0; i < gx.size(); ++i) gx[i] += src[i];
        }
        off += x->val.size();
      }
    };
  }
  return o;
}

Var slice_channel(Tape& t, Var a, int channel) {
  require(a->val.ndim() == 3 && channel >= 0 && channel < a->val.dim(0),
          "slice_channel: bad channel");
  const int h = a->val.dim(1), w = a->val.dim(2);
  const int64_t hw = static_cast<int64_t>(h) * w;
  Tensor out({h, w});
  std::memcpy(out.data(), a->val.data() + channel * hw, sizeof(double) * hw);
  Var o = t.node(std::move(out), a->need_grad);
  if (o->need_grad)
    o->back = [o, a, channel, hw]() {
      Tensor& ga = ensure_grad(a);
      double* dst = ga.data() + channel * hw;
      for (int64_t i = 0; i < hw; ++i) dst[i] += o->grad[i];
    };
  return o;
}

Var grid_to_rows(Tape& t, Var a) {
  require(a->val.ndim() == 3, "grid_to_rows: expected (C, H, W)");
  const int c = a->val.dim(0);
  const int64_t p = static_cast<int64_t>(a->val.dim(1)) * a->val.dim(2);
  Tensor out({static_cast<int>(p), c});
  for (int ci = 0; ci < c; ++ci)
    for (int64_t pi = 0; pi < p; ++pi) out[pi * c + ci] = a->val[ci * p + pi];
  Var o = t.node(std::move(out), a->need_grad);
  if (o->need_grad)
    o->back = [o, a, c, p]() {
      Tensor& ga = ensure_grad(a);
      for (int ci = 0; ci < c; ++ci)
        for (int64_t pi = 0; pi < p; ++pi) ga[ci * p + pi] += o->grad[pi * c + ci];
    };
  return o;
}

Var rows_to_grid(Tape& t, Var a, int h, int w) {
  require(a->val.ndim() == 2 && a->val.dim(0) == h * w, "rows_to_grid: shape mismatch");
  const int c = a->val.dim(1);
  const int64_t p = static_cast<int64_t>(h) * w;
  Tensor out({c, h, w});
  for (int ci = 0; ci < c; ++ci)
    for (int64_t pi = 0; pi < p; ++pi) out[ci * p + pi] = a->val[pi * c + ci];
  Var o = t.node(std::move(out), a->need_grad);
  if (o->need_grad)
    o->back = [o, a, c, p]() {
      Tensor& ga = ensure_grad(a);
      for (int ci = 0; ci < c; ++ci)
        for (int64_t pi = 0; pi < p; ++pi) ga[pi * c + ci] += o->grad[ci * p + pi];
    };
  return o;
}

// ---------------------------------------------------------------------------
// Neural net ops
// ---------------------------------------------------------------------------

namespace {

// im2col for (Cin, H, W) with square kernel. Result (Cin*kh*kw, Ho*Wo).
Tensor im2col(const Tensor& x, int kh, int kw, int stride, int pad, int ho, int wo) {
  const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor cols({cin * kh * kw, ho * wo});
  double* dst = cols.data();
  for (int c = 0; c < cin; ++c)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        for (int oi = 0; oi < ho; ++oi) {
          const int ii = oi * stride - pad + ki;
          for (int oj = 0; oj < wo; ++oj) {
            const int jj = oj * stride - pad + kj;
            *dst++ = (ii >= 0 && ii < h && jj >= 0 && jj < w) ? x.at(c, ii, jj) : 0.0;
          }
        }
      }
  return cols;
}

void col2im_add(Tensor& gx, const Tensor& gcols, int kh, int kw, int stride, int pad,
                int ho, int wo) {
  const int cin = gx.dim(0), h = gx.dim(1), w = gx.dim(2);
  const double* src = gcols.data();
  for (int c = 0; c < cin; ++c)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        for (int oi = 0; oi < ho; ++oi) {
          const int ii = oi * stride - pad + ki;
          for (int oj = 0; oj < wo; ++oj) {
            const int jj = oj * stride - pad + kj;
            if (ii >= 0 && ii < h && jj >= 0 && jj < w) gx.at(c, ii, jj) += *src;
            ++src;
          }
        }
      }
}

}  // namespace

Var conv2d(Tape& t, Var x, Var w, Var b, int stride, int pad) {
  require(x->val.ndim() == 3 && w->val.ndim() == 4, "conv2d: bad ranks");
  const int cin = x->val.dim(0), h = x->val.dim(1), ww = x->val.dim(2);
  const int cout = w->val.dim(0), kh = w->val.dim(2), kw = w->val.dim(3);
  require(w->val.dim(1) == cin, "conv2d: channel mismatch");
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (ww + 2 * pad - kw) / stride + 1;
  require(ho > 0 && wo > 0, "conv2d: empty output");

  Tensor cols = im2col(x->val, kh, kw, stride, pad, ho, wo);
  const int k = cin * kh * kw, n = ho * wo;
  Tensor out({cout, ho, wo});
  emap(out, cout, n).noalias() =
      ecmap(w->val, cout, k) * ecmap(cols, k, n);
  if (b) {
    require(b->val.ndim() == 1 && b->val.dim(0) == cout, "conv2d: bias shape");
    for (int c = 0; c < cout; ++c) {
      double* p = out.data() + static_cast<int64_t>(c) * n;
      const double bc = b->val[c];
      for (int i = 0; i < n; ++i) p[i] += bc;
    }
  }
  const bool need = x->need_grad || w->need_grad || (b && b->need_grad);
  Var o = t.node(std::move(out), need);
  if (o->need_grad) {
    o->back = [o, x, w, b, cols, kh, kw, stride, pad, ho, wo, k, n, cout]() {
      ECMap gy(o->grad.data(), cout, n);
      if (w->need_grad)
        emap(ensure_grad(w), cout, k).noalias() += gy * ecmap(cols, k, n).transpose();
      if (b && b->need_grad) {
        Tensor& gb = ensure_grad(b);
        for (int c = 0; c < cout; ++c) gb[c] += gy.row(c).sum();
      }
      if (x->need_grad) {
        Tensor gcols({k, n});
        emap(gcols, k, n).noalias() = ecmap(w->val, cout, k).transpose() * gy;
        col2im_add(ensure_grad(x), gcols, kh, kw, stride, pad, ho, wo);
      }
    };
  }
  return o;
}

Var instance_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
  require(x->val.ndim() == 3, "instance_norm: expected (C, H, W)");
  const int c = x->val.dim(0);
  const int64_t hw = static_cast<int64_t>(x->val.dim(1)) * x->val.dim(2);
  require(gamma->val.size() == c && beta->val.size() == c, "instance_norm: affine shape");

  Tensor out(x->val.shape());
  Tensor xhat(x->val.shape());
  Tensor inv_std({c});
  for (int ci = 0; ci < c; ++ci) {
    const double* p = x->val.data() + ci * hw;
    double mu = 0.0;
    for (int64_t i = 0; i < hw; ++i) mu += p[i];
    mu /= static_cast<double>(hw);
    double var = 0.0;
    for (int64_t i = 0; i < hw; ++i) {
      const double d = p[i] - mu;
      var += d * d;
    }
    var /= static_cast<double>(hw);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[ci] = is;
    double* xh = xhat.data() + ci * hw;
    double* y = out.data() + ci * hw;
    const double g = gamma->val[ci], bb = beta->val[ci];
    for (int64_t i = 0; i < hw; ++i) {
      xh[i] = (p[i] - mu) * is;
      y[i] = g * xh[i] + bb;
    }
  }
  const bool need = x->need_grad || gamma->need_grad || beta->need_grad;
  Var o = t.node(std::move(out), need);
  if (o->need_grad) {
    o->back = [o, x, gamma, beta, xhat, inv_std, c, hw]() {
      for (int ci = 0; ci < c; ++ci) {
        const double* gy = o->grad.data() + ci * hw;
        const double* xh = xhat.data() + ci * hw;
        double sum_gy = 0.0, sum_gy_xh = 0.0;
        for (int64_t i = 0; i < hw; ++i) {
          sum_gy += gy[i];
          sum_gy_xh += gy[i] * xh[i];
        }
        if (gamma->need_grad) ensure_grad(gamma)[ci] += sum_gy_xh;
        if (beta->need_grad) ensure_grad(beta)[ci] += sum_gy;
        if (x->need_grad) {
          Tensor& gx = ensure_grad(x);
          double* gp = gx.data() + ci * hw;
          const double g = gamma->val[ci] * inv_std[ci];
          const double m_gy = sum_gy / static_cast<double>(hw);
          const double m_gy_xh = sum_gy_xh / static_cast<double>(hw);
          for (int64_t i = 0; i < hw; ++i)
            gp[i] += g * (gy[i] - m_gy - xh[i] * m_gy_xh);
        }
      }
    };
  }
  return o;
}

Var upsample2x(Tape& t, Var x) {
  require(x->val.ndim() == 3, "upsample2x: expected (C, H, W)");
  const int c = x->val.dim(0), h = x->val.dim(1), w = x->val.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (int ci = 0; ci < c; ++ci)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const double v = x->val.at(ci, i, j);
        out.at(ci, 2 * i, 2 * j) = v;
        out.at(ci, 2 * i, 2 * j + 1) = v;
        out.at(ci, 2 * i + 1, 2 * j) = v;
        out.at(ci, 2 * i + 1, 2 * j + 1) = v;
      }
  Var o = t.node(std::move(out), x->need_grad);
  if (o->need_grad)
    o->back = [o, x, c, h, w]() {
      Tensor& gx = ensure_grad(x);
      for (int ci = 0; ci < c; ++ci)
        for (int i = 0; i < h; ++i)
          for (int j = 0; j < w; ++j)
            gx.at(ci, i, j) += o->grad.at(ci, 2 * i, 2 * j) +
                               o->grad.at(ci, 2 * i, 2 * j + 1) +
                               o->grad.at(ci, 2 * i + 1, 2 * j) +
                               o->grad.at(ci, 2 * i + 1, 2 * j + 1);
    };
  return o;
}

namespace {

void softmax_fwd(const double* x, double* y, int n, int64_t stride) {
  double mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i * stride]);
  double denom = 0.0;
  for (int i = 0; i < n; ++i) {
    const double e = std::exp(x[i * stride] - mx);
    y[i * stride] = e;
    denom += e;
  }
  for (int i = 0; i < n; ++i) y[i * stride] /= denom;
}

void softmax_bwd(const double* y, const double* gy, double* gx, int n, int64_t stride) {
  double dot = 0.0;
  for (int i = 0; i < n; ++i) dot += y[i * stride] * gy[i * stride];
  for (int i = 0; i < n; ++i) gx[i * stride] += y[i * stride] * (gy[i * stride] - dot);
}

}  // namespace

Var softmax_rows(Tape& t, Var a) {
  require(a->val.ndim() == 2, "softmax_rows: expected (N, M)");
  const int n = a->val.dim(0), m = a->val.dim(1);
  Tensor out(a->val.shape());
  for (int i = 0; i < n; ++i)
    softmax_fwd(a->val.data() + static_cast<int64_t>(i) * m,
                out.data() + static_cast<int64_t>(i) * m, m, 1);
  Var o = t.node(std::move(out), a->need_grad);
  if (o->need_grad)
    o->back = [o, a, n, m]() {
      Tensor& ga = ensure_grad(a);
      for (int i = 0; i < n; ++i)
        softmax_bwd(o->val.data() + static_cast<int64_t>(i) * m,
                    o->grad.data() + static_cast<int64_t>(i) * m,
                    ga.data() + static_cast<int64_t>(i) * m, m, 1);
    };
  return o;
}

Var softmax_channels(Tape& t, Var a) {
  require(a->val.ndim() == 3, "softmax_channels: expected (C, H, W)");
  const int c = a->val.dim(0);
  const int64_t hw = static_cast<int64_t>(a->val.dim(1)) * a->val.dim(2);
  Tensor out(a->val.shape());
  for (int64_t p = 0; p < hw; ++p)
    softmax_fwd(a->val.data() + p, out.data() + p, c, hw);
  Var o = t.node(std::move(out), a->need_grad);
  if (o->need_grad)
    o->back = [o, a, c, hw]() {
      Tensor& ga = ensure_grad(a);
      for (int64_t p = 0; p < hw; ++p)
        softmax_bwd(o->val.data() + p, o->grad.data() + p, ga.data() + p, c, hw);
    };
  return o;
}

Var weighted_sum_rows(Tape& t, Var weights, const std::vector<Var>& values) {
  require(weights->val.ndim() == 2, "weighted_sum_rows: weights (P, n)");
  const int p = weights->val.dim(0), n = weights->val.dim(1);
  require(n > 0 && static_cast<int>(values.size()) == n, "weighted_sum_rows: value count");
  const int dv = values[0]->val.dim(1);
  bool need = weights->need_grad;
  for (Var v : values) {
    require(v->val.ndim() == 2 && v->val.dim(0) == p && v->val.dim(1) == dv,
            "weighted_sum_rows: value shape");
    need = need || v->need_grad;
  }
  Tensor out({p, dv});
  for (int i = 0; i < n; ++i) {
    const Tensor& v = values[static_cast<size_t>(i)]->val;
    for (int pi = 0; pi < p; ++pi) {
      const double wv = weights->val.at(pi, i);
      const double* src = v.data() + static_cast<int64_t>(pi) * dv;
      double* dst = out.data() + static_cast<int64_t>(pi) * dv;
      for (int d = 0; d < dv; ++d) dst[d] += wv * src[d];
    }
  }
  Var o = t.node(std::move(out), need);
  if (o->need_grad) {
    std::vector<Var> vals = values;
    o->back = [o, weights, vals, p, n, dv]() {
      for (int i = 0; i < n; ++i) {
        Var v = vals[static_cast<size_t>(i)];
        for (int pi = 0; pi < p; ++pi) {
          const double* gy = o->grad.data() + static_cast<int64_t>(pi) * dv;
          if (weights->need_grad) {
            const double* vv = v->val.data() + static_cast<int64_t>(pi) * dv;
            double dot = 0.0;
            for (int d = 0; d < dv; ++d) dot += gy[d] * vv[d];
            ensure_grad(weights).at(pi, i) += dot;
          }
          if (v->need_grad) {
            const double wv = weights->val.at(pi, i);
            double* gv = ensure_grad(v).data() + static_cast<int64_t>(pi) * dv;
            for (int d = 0; d < dv; ++d) gv[d] += wv * gy[d];
          }
        }
      }
    };
  }
  return o;
}

Var softmax_cross_entropy(Tape& t, Var logits, const Tensor& labels,
                          const std::vector<double>* class_weights) {
  require(logits->val.ndim() == 3, "softmax_cross_entropy: logits (C, H, W)");
  const int c = logits->val.dim(0);
  const int64_t hw = static_cast<int64_t>(logits->val.dim(1)) * logits->val.dim(2);
  require(labels.size() == hw, "softmax_cross_entropy: label grid mismatch");
  if (class_weights)
    require(static_cast<int>(class_weights->size()) == c,
            "softmax_cross_entropy: class_weights size");

  Tensor probs(logits->val.shape());
  for (int64_t p = 0; p < hw; ++p)
    softmax_fwd(logits->val.data() + p, probs.data() + p, c, hw);

  double loss = 0.0;
  std::vector<int> lab(static_cast<size_t>(hw));
  for (int64_t p = 0; p < hw; ++p) {
    const int y = static_cast<int>(std::lround(labels[p]));
    require(y >= 0 && y < c, "softmax_cross_entropy: label out of range");
    lab[static_cast<size_t>(p)] = y;
    const double w = class_weights ? (*class_weights)[static_cast<size_t>(y)] : 1.0;
    loss -= w * std::log(std::max(probs[y * hw + p], 1e-300));
  }
  loss /= static_cast<double>(hw);

  Var o = t.node(Tensor::scalar(loss), logits->need_grad);
  if (o->need_grad) {
    std::vector<double> cw;
    if (class_weights) cw = *class_weights;
    o->back = [o, logits, probs, lab, cw, c, hw]() {
      Tensor& gx = ensure_grad(logits);
      const double g = o->grad[0] / static_cast<double>(hw);
      for (int64_t p = 0; p < hw; ++p) {
        const int y = lab[static_cast<size_t>(p)];
        const double w = cw.empty() ? 1.0 : cw[static_cast<size_t>(y)];
        for (int ci = 0; ci < c; ++ci) {
          const double delta = (ci == y) ? 1.0 : 0.0;
          gx[ci * hw + p] += g * w * (probs[ci * hw + p] - delta);
        }
      }
    };
  }
  return o;
}

}  // namespace npgrow

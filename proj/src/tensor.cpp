#include "vlp/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace vlp {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void gemm(const double* a, const double* b, double* c, int64_t m, int64_t n, int64_t k, bool ta,
          bool tb, bool accumulate) {
  Eigen::Map<RowMat> C(c, m, n);
  auto run = [&](const auto& A, const auto& B) {
    if (accumulate)
      C.noalias() += A * B;
    else
      C.noalias() = A * B;
  };
  Eigen::Map<const RowMat> A(ta ? a : a, ta ? k : m, ta ? m : k);
  Eigen::Map<const RowMat> B(tb ? b : b, tb ? n : k, tb ? k : n);
  if (!ta && !tb)
    run(A, B);
  else if (ta && !tb)
    run(A.transpose(), B);
  else if (!ta && tb)
    run(A, B.transpose());
  else
    run(A.transpose(), B.transpose());
}

namespace {

void axpy(std::vector<double>& dst, const std::vector<double>& src) {
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Var Tape::add(Var a, Var b) {
  if (shape(a) != shape(b))
    throw InputError("add: shape mismatch " + shape(a).str() + " vs " + shape(b).str());
  std::vector<double> out = val(a);
  axpy(out, val(b));
  Var y = make(shape(a), std::move(out), ng(a) || ng(b));
  int ai = a.id, bi = b.id, yi = y.id;
  nodes_[yi].back = [ai, bi, yi](Tape& t) {
    const auto& g = t.node(yi).grad;
    if (t.node(ai).needs_grad) axpy(t.grad_ref(ai), g);
    if (t.node(bi).needs_grad) axpy(t.grad_ref(bi), g);
  };
  return y;
}

Var Tape::add_bcast(Var x, Var b) {
  int64_t n = shape(x).numel();
  int64_t m = shape(b).numel();
  if (m == 0 || n % m != 0) throw InputError("add_bcast: trailing chunk mismatch");
  std::vector<double> out = val(x);
  const auto& bv = val(b);
  for (int64_t r = 0; r < n / m; ++r) {
    double* op = out.data() + r * m;
    for (int64_t i = 0; i < m; ++i) op[i] += bv[i];
  }
  Var y = make(shape(x), std::move(out), ng(x) || ng(b));
  int xi = x.id, bi = b.id, yi = y.id;
  nodes_[yi].back = [xi, bi, yi, n, m](Tape& t) {
    const auto& g = t.node(yi).grad;
    if (t.node(xi).needs_grad) axpy(t.grad_ref(xi), g);
    if (t.node(bi).needs_grad) {
      auto& gb = t.grad_ref(bi);
      for (int64_t r = 0; r < n / m; ++r) {
        const double* gp = g.data() + r * m;
        for (int64_t i = 0; i < m; ++i) gb[i] += gp[i];
      }
    }
  };
  return y;
}

Var Tape::sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var Tape::scale(Var x, double c) {
  std::vector<double> out = val(x);
  for (double& v : out) v *= c;
  Var y = make(shape(x), std::move(out), ng(x));
  int xi = x.id, yi = y.id;
  nodes_[yi].back = [xi, yi, c](Tape& t) {
    if (!t.node(xi).needs_grad) return;
    const auto& g = t.node(yi).grad;
    auto& gx = t.grad_ref(xi);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
  };
  return y;
}

Var Tape::mul(Var a, Var b) {
  if (shape(a) != shape(b)) throw InputError("mul: shape mismatch");
  std::vector<double> out = val(a);
  const auto& bv = val(b);
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  Var y = make(shape(a), std::move(out), ng(a) || ng(b));
  int ai = a.id, bi = b.id, yi = y.id;
  nodes_[yi].back = [ai, bi, yi](Tape& t) {
    const auto& g = t.node(yi).grad;
    if (t.node(ai).needs_grad) {
      auto& ga = t.grad_ref(ai);
      const auto& bv2 = t.node(bi).val;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
    }
    if (t.node(bi).needs_grad) {
      auto& gb = t.grad_ref(bi);
      const auto& av = t.node(ai).val;
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  };
  return y;
}

Var Tape::mul_mask(Var x, std::shared_ptr<const std::vector<double>> mask) {
  if (static_cast<int64_t>(mask->size()) != shape(x).numel())
    throw InputError("mul_mask: mask size mismatch");
  std::vector<double> out = val(x);
  for (size_t i = 0; i < out.size(); ++i) out[i] *= (*mask)[i];
  Var y = make(shape(x), std::move(out), ng(x));
  int xi = x.id, yi = y.id;
  nodes_[yi].back = [xi, yi, mask](Tape& t) {
    if (!t.node(xi).needs_grad) return;
    const auto& g = t.node(yi).grad;
    auto& gx = t.grad_ref(xi);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
  };
  return y;
}

Var Tape::mul_scalar_var(Var x, Var s) {
  if (shape(s).numel() != 1) throw InputError("mul_scalar_var: s must be scalar");
  double sv = val(s)[0];
  std::vector<double> out = val(x);
  for (double& v : out) v *= sv;
  Var y = make(shape(x), std::move(out), ng(x) || ng(s));
  int xi = x.id, si = s.id, yi = y.id;
  nodes_[yi].back = [xi, si, yi, sv](Tape& t) {
    const auto& g = t.node(yi).grad;
    if (t.node(xi).needs_grad) {
      auto& gx = t.grad_ref(xi);
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * sv;
    }
    if (t.node(si).needs_grad) {
      const auto& xv = t.node(xi).val;
      double acc = 0.0;
      for (size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
      t.grad_ref(si)[0] += acc;
    }
  };
  return y;
}

Var Tape::expv(Var x) {
  std::vector<double> out = val(x);
  for (double& v : out) v = std::exp(v);
  Var y = make(shape(x), std::move(out), ng(x));
  int xi = x.id, yi = y.id;
  nodes_[yi].back = [xi, yi](Tape& t) {
    if (!t.node(xi).needs_grad) return;
    const auto& g = t.node(yi).grad;
    const auto& yv = t.node(yi).val;
    auto& gx = t.grad_ref(xi);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * yv[i];
  };
  return y;
}

Var Tape::relu(Var x) {
  std::vector<double> out = val(x);
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  Var y = make(shape(x), std::move(out), ng(x));
  int xi = x.id, yi = y.id;
  nodes_[yi].back = [xi, yi](Tape& t) {
    if (!t.node(xi).needs_grad) return;
    const auto& g = t.node(yi).grad;
    const auto& xv = t.node(xi).val;
    auto& gx = t.grad_ref(xi);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += xv[i] > 0.0 ? g[i] : 0.0;
  };
  return y;
}

Var Tape::gelu(Var x) {
  static const double kInvSqrt2 = 1.0 / std::sqrt(2.0);
  static const double kInvSqrt2Pi = 1.0 / std::sqrt(2.0 * M_PI);
  std::vector<double> out = val(x);
  for (double& v : out) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  Var y = make(shape(x), std::move(out), ng(x));
  int xi = x.id, yi = y.id;
  nodes_[yi].back = [xi, yi](Tape& t) {
    if (!t.node(xi).needs_grad) return;
    const auto& g = t.node(yi).grad;
    const auto& xv = t.node(xi).val;
    auto& gx = t.grad_ref(xi);
    for (size_t i = 0; i < g.size(); ++i) {
      double v = xv[i];
      double phi = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      gx[i] += g[i] * (phi + v * pdf);
    }
  };
  return y;
}

Var Tape::tanhv(Var x) {
  std::vector<double> out = val(x);
  for (double& v : out) v = std::tanh(v);
  Var y = make(shape(x), std::move(out), ng(x));
  int xi = x.id, yi = y.id;
  nodes_[yi].back = [xi, yi](Tape& t) {
    if (!t.node(xi).needs_grad) return;
    const auto& g = t.node(yi).grad;
    const auto& yv = t.node(yi).val;
    auto& gx = t.grad_ref(xi);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - yv[i] * yv[i]);
  };
  return y;
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Var Tape::matmul(Var a, Var b, bool ta, bool tb) {
  const Shape& sa = shape(a);
  const Shape& sb = shape(b);
  if (sa.nd != 2 || sb.nd != 2) throw InputError("matmul: operands must be 2-D");
  int64_t m = ta ? sa[1] : sa[0];
  int64_t k = ta ? sa[0] : sa[1];
  int64_t kb = tb ? sb[1] : sb[0];
  int64_t n = tb ? sb[0] : sb[1];
  if (k != kb) throw InputError("matmul: inner dims differ: " + sa.str() + " x " + sb.str());
  std::vector<double> out(m * n);
  gemm(val(a).data(), val(b).data(), out.data(), m, n, k, ta, tb, false);
  Var y = make(Shape{m, n}, std::move(out), ng(a) || ng(b));
  int ai = a.id, bi = b.id, yi = y.id;
  nodes_[yi].back = [ai, bi, yi, m, n, k, ta, tb](Tape& t) {
    const double* g = t.node(yi).grad.data();
    const double* av = t.node(ai).val.data();
    const double* bv = t.node(bi).val.data();
    if (t.node(ai).needs_grad) {
      double* ga = t.grad_ref(ai).data();
      // dA = dC * B^T (layout depends on flags)
      if (!ta)
        gemm(g, bv, ga, m, k, n, false, !tb, true);
      else
        gemm(bv, g, ga, k, m, n, tb, true, true);
    }
    if (t.node(bi).needs_grad) {
      double* gb = t.grad_ref(bi).data();
      if (!tb)
        gemm(av, g, gb, k, n, m, !ta, false, true);
      else
        gemm(g, av, gb, n, k, m, true, ta, true);
    }
  };
  return y;
}

Var Tape::matmul_lastdim(Var x, Var w) {
  const Shape sx = shape(x);
  const Shape sw = shape(w);
  if (sw.nd != 2) throw InputError("matmul_lastdim: weight must be 2-D");
  int64_t k = sx.d[sx.nd - 1];
  if (k != sw[0]) throw InputError("matmul_lastdim: inner dims differ");
  int64_t rows = sx.numel() / k;
  int64_t n = sw[1];
  std::vector<double> out(rows * n);
  gemm(val(x).data(), val(w).data(), out.data(), rows, n, k, false, false, false);
  Shape ns = sx;
  ns.d[sx.nd - 1] = n;
  Var y = make(ns, std::move(out), ng(x) || ng(w));
  int xi = x.id, wi = w.id, yi = y.id;
  nodes_[yi].back = [xi, wi, yi, rows, n, k](Tape& t) {
    const double* g = t.node(yi).grad.data();
    if (t.node(xi).needs_grad)
      gemm(g, t.node(wi).val.data(), t.grad_ref(xi).data(), rows, k, n, false, true, true);
    if (t.node(wi).needs_grad)
      gemm(t.node(xi).val.data(), g, t.grad_ref(wi).data(), k, n, rows, true, false, true);
  };
  return y;
}

Var Tape::bmm(Var a, Var b, bool ta, bool tb) {
  const Shape& sa = shape(a);
  const Shape& sb = shape(b);
  if (sa.nd != 3 || sb.nd != 3 || sa[0] != sb[0]) throw InputError("bmm: expects [B,M,K]x[B,K,N]");
  int64_t bs = sa[0];
  int64_t m = ta ? sa[2] : sa[1];
  int64_t k = ta ? sa[1] : sa[2];
  int64_t kb = tb ? sb[2] : sb[1];
  int64_t n = tb ? sb[1] : sb[2];
  if (k != kb) throw InputError("bmm: inner dims differ");
  std::vector<double> out(bs * m * n);
  const int64_t a_sl = sa[1] * sa[2], b_sl = sb[1] * sb[2], y_sl = m * n;
  for (int64_t i = 0; i < bs; ++i)
    gemm(val(a).data() + i * a_sl, val(b).data() + i * b_sl, out.data() + i * y_sl, m, n, k, ta, tb,
         false);
  Var y = make(Shape{bs, m, n}, std::move(out), ng(a) || ng(b));
  int ai = a.id, bi = b.id, yi = y.id;
  nodes_[yi].back = [=](Tape& t) {
    for (int64_t i = 0; i < bs; ++i) {
      const double* g = t.node(yi).grad.data() + i * y_sl;
      const double* av = t.node(ai).val.data() + i * a_sl;
      const double* bv = t.node(bi).val.data() + i * b_sl;
      if (t.node(ai).needs_grad) {
        double* ga = t.grad_ref(ai).data() + i * a_sl;
        if (!ta)
          gemm(g, bv, ga, m, k, n, false, !tb, true);
        else
          gemm(bv, g, ga, k, m, n, tb, true, true);
      }
      if (t.node(bi).needs_grad) {
        double* gb = t.grad_ref(bi).data() + i * b_sl;
        if (!tb)
          gemm(av, g, gb, k, n, m, !ta, false, true);
        else
          gemm(g, av, gb, n, k, m, true, ta, true);
      }
    }
  };
  return y;
}

Var Tape::transpose2d(Var x) {
  const Shape& s = shape(x);
  if (s.nd != 2) throw InputError("transpose2d: expects 2-D");
  int64_t m = s[0], n = s[1];
  std::vector<double> out(m * n);
  const auto& xv = val(x);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[j * m + i] = xv[i * n + j];
  Var y = make(Shape{n, m}, std::move(out), ng(x));
  int xi = x.id, yi = y.id;
  nodes_[yi].back = [xi, yi, m, n](Tape& t) {
    if (!t.node(xi).needs_grad) return;
    const auto& g = t.node(yi).grad;
    auto& gx = t.grad_ref(xi);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
  };
  return y;
}

Var Tape::transpose_last2(Var x) {
  const Shape& s = shape(x);
  if (s.nd != 3) throw InputError("transpose_last2: expects 3-D");
  int64_t b = s[0], m = s[1], n = s[2];
  std::vector<double> out(b * m * n);
  const auto& xv = val(x);
  for (int64_t k = 0; k < b; ++k)
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) out[(k * n + j) * m + i] = xv[(k * m + i) * n + j];
  Var y = make(Shape{b, n, m}, std::move(out), ng(x));
  int xi = x.id, yi = y.id;
  nodes_[yi].back = [xi, yi, b, m, n](Tape& t) {
    if (!t.node(xi).needs_grad) return;
    const auto& g = t.node(yi).grad;
    auto& gx = t.grad_ref(xi);
    for (int64_t k = 0; k < b; ++k)
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) gx[(k * m + i) * n + j] += g[(k * n + j) * m + i];
  };
  return y;
}

Var Tape::reshape(Var x, Shape s) {
  if (s.numel() != shape(x).numel())
    throw InputError("reshape: numel mismatch " + shape(x).str() + " -> " + s.str());
  Var y = make(s, val(x), ng(x));
  int xi = x.id, yi = y.id;
  nodes_[yi].back = [xi, yi](Tape& t) {
    if (!t.node(xi).needs_grad) return;
    axpy(t.grad_ref(xi), t.node(yi).grad);
  };
  return y;
}

Var Tape::slice_lastdim(Var x, int64_t offset, int64_t len) {
  const Shape& s = shape(x);
  int64_t f = s[s.nd - 1];
  if (offset < 0 || len <= 0 || offset + len > f) throw InputError("slice_lastdim: out of range");
  int64_t rows = s.numel() / f;
  std::vector<double> out(rows * len);
  const auto& xv = val(x);
  for (int64_t r = 0; r < rows; ++r)
    std::copy_n(xv.data() + r * f + offset, len, out.data() + r * len);
  Shape ns = s;
  ns.d[s.nd - 1] = len;
  Var y = make(ns, std::move(out), ng(x));
  int xi = x.id, yi = y.id;
  nodes_[yi].back = [xi, yi, rows, f, offset, len](Tape& t) {
    if (!t.node(xi).needs_grad) return;
    const auto& g = t.node(yi).grad;
    auto& gx = t.grad_ref(xi);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < len; ++j) gx[r * f + offset + j] += g[r * len + j];
  };
  return y;
}

Var Tape::concat_lastdim(const std::vector<Var>& xs) {
  if (xs.empty()) throw InputError("concat_lastdim: empty list");
  const Shape& s0 = shape(xs[0]);
  int64_t rows = s0.numel() / s0[s0.nd - 1];
  int64_t total = 0;
  bool needs = false;
  for (Var v : xs) {
    const Shape& s = shape(v);
    if (s.nd != s0.nd || s.numel() / s[s.nd - 1] != rows)
      throw InputError("concat_lastdim: leading dims differ");
    total += s[s.nd - 1];
    needs = needs || ng(v);
  }
  Shape ns = s0;
  ns.d[s0.nd - 1] = total;
  std::vector<double> out(rows * total);
  int64_t off = 0;
  for (Var v : xs) {
    int64_t f = shape(v)[s0.nd - 1];
    const auto& xv = val(v);
    for (int64_t r = 0; r < rows; ++r)
      std::copy_n(xv.data() + r * f, f, out.data() + r * total + off);
    off += f;
  }
  Var y = make(ns, std::move(out), needs);
  std::vector<int> ids;
  std::vector<int64_t> widths;
  for (Var v : xs) {
    ids.push_back(v.id);
    widths.push_back(shape(v)[s0.nd - 1]);
  }
  int yi = y.id;
  nodes_[yi].back = [yi, ids, widths, rows, total](Tape& t) {
    const auto& g = t.node(yi).grad;
    int64_t off2 = 0;
    for (size_t k = 0; k < ids.size(); ++k) {
      int64_t f = widths[k];
      if (t.node(ids[k]).needs_grad) {
        auto& gx = t.grad_ref(ids[k]);
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < f; ++j) gx[r * f + j] += g[r * total + off2 + j];
      }
      off2 += f;
    }
  };
  return y;
}

Var Tape::slice_seq(Var x, int64_t offset, int64_t len) {
  const Shape& s = shape(x);
  if (s.nd != 3) throw InputError("slice_seq: expects [B,L,C]");
  int64_t b = s[0], l = s[1], c = s[2];
  if (offset < 0 || len <= 0 || offset + len > l) throw InputError("slice_seq: out of range");
  std::vector<double> out(b * len * c);
  const auto& xv = val(x);
  for (int64_t i = 0; i < b; ++i)
    std::copy_n(xv.data() + (i * l + offset) * c, len * c, out.data() + i * len * c);
  Var y = make(Shape{b, len, c}, std::move(out), ng(x));
  int xi = x.id, yi = y.id;
  nodes_[yi].back = [xi, yi, b, l, c, offset, len](Tape& t) {
    if (!t.node(xi).needs_grad) return;
    const auto& g = t.node(yi).grad;
    auto& gx = t.grad_ref(xi);
    for (int64_t i = 0; i < b; ++i)
      for (int64_t j = 0; j < len * c; ++j) gx[(i * l + offset) * c + j] += g[i * len * c + j];
  };
  return y;
}

Var Tape::concat_seq(Var a, Var b) {
  const Shape& sa = shape(a);
  const Shape& sb = shape(b);
  if (sa.nd != 3 || sb.nd != 3 || sa[0] != sb[0] || sa[2] != sb[2])
    throw InputError("concat_seq: expects [B,La,C] and [B,Lb,C]");
  int64_t bs = sa[0], la = sa[1], lb = sb[1], c = sa[2];
  std::vector<double> out(bs * (la + lb) * c);
  const auto& av = val(a);
  const auto& bv = val(b);
  for (int64_t i = 0; i < bs; ++i) {
    std::copy_n(av.data() + i * la * c, la * c, out.data() + i * (la + lb) * c);
    std::copy_n(bv.data() + i * lb * c, lb * c, out.data() + (i * (la + lb) + la) * c);
  }
  Var y = make(Shape{bs, la + lb, c}, std::move(out), ng(a) || ng(b));
  int ai = a.id, bi = b.id, yi = y.id;
  nodes_[yi].back = [ai, bi, yi, bs, la, lb, c](Tape& t) {
    const auto& g = t.node(yi).grad;
    if (t.node(ai).needs_grad) {
      auto& ga = t.grad_ref(ai);
      for (int64_t i = 0; i < bs; ++i)
        for (int64_t j = 0; j < la * c; ++j) ga[i * la * c + j] += g[i * (la + lb) * c + j];
    }
    if (t.node(bi).needs_grad) {
      auto& gb = t.grad_ref(bi);
      for (int64_t i = 0; i < bs; ++i)
        for (int64_t j = 0; j < lb * c; ++j)
          gb[i * lb * c + j] += g[(i * (la + lb) + la) * c + j];
    }
  };
  return y;
}

Var Tape::slice_dim0(Var x, int64_t offset, int64_t len) {
  const Shape s = shape(x);
  if (s.nd < 1) throw InputError("slice_dim0: scalar input");
  if (offset < 0 || len <= 0 || offset + len > s[0]) throw InputError("slice_dim0: out of range");
  int64_t inner = s.numel() / s[0];
  Shape ns = s;
  ns.d[0] = len;
  std::vector<double> out(len * inner);
  std::copy_n(val(x).data() + offset * inner, len * inner, out.data());
  Var y = make(ns, std::move(out), ng(x));
  int xi = x.id, yi = y.id;
  nodes_[yi].back = [xi, yi, offset, inner, len](Tape& t) {
    if (!t.node(xi).needs_grad) return;
    const auto& g = t.node(yi).grad;
    auto& gx = t.grad_ref(xi);
    for (int64_t i = 0; i < len * inner; ++i) gx[offset * inner + i] += g[i];
  };
  return y;
}

Var Tape::broadcast0(Var x, int64_t b) {
  const Shape& s = shape(x);
  if (s.nd >= 4) throw InputError("broadcast0: rank too high");
  if (b <= 0) throw InputError("broadcast0: b must be positive");
  int64_t n = s.numel();
  std::vector<double> out(b * n);
  for (int64_t i = 0; i < b; ++i) std::copy_n(val(x).data(), n, out.data() + i * n);
  Shape ns;
  ns.nd = s.nd + 1;
  ns.d[0] = b;
  for (int i = 0; i < s.nd; ++i) ns.d[i + 1] = s.d[i];
  Var y = make(ns, std::move(out), ng(x));
  int xi = x.id, yi = y.id;
  nodes_[yi].back = [xi, yi, b, n](Tape& t) {
    if (!t.node(xi).needs_grad) return;
    const auto& g = t.node(yi).grad;
    auto& gx = t.grad_ref(xi);
    for (int64_t i = 0; i < b; ++i)
      for (int64_t j = 0; j < n; ++j) gx[j] += g[i * n + j];
  };
  return y;
}

Var Tape::spatial_to_seq(Var x) {
  const Shape& s = shape(x);
  if (s.nd != 4) throw InputError("spatial_to_seq: expects [B,C,H,W]");
  int64_t b = s[0], c = s[1], hw = s[2] * s[3];
  std::vector<double> out(b * hw * c);
  const auto& xv = val(x);
  for (int64_t i = 0; i < b; ++i)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t p = 0; p < hw; ++p) out[(i * hw + p) * c + ch] = xv[(i * c + ch) * hw + p];
  Var y = make(Shape{b, hw, c}, std::move(out), ng(x));
  int xi = x.id, yi = y.id;
  nodes_[yi].back = [xi, yi, b, c, hw](Tape& t) {
    if (!t.node(xi).needs_grad) return;
    const auto& g = t.node(yi).grad;
    auto& gx = t.grad_ref(xi);
    for (int64_t i = 0; i < b; ++i)
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t p = 0; p < hw; ++p) gx[(i * c + ch) * hw + p] += g[(i * hw + p) * c + ch];
  };
  return y;
}

// ---------------------------------------------------------------------------
// conv / norm
// ---------------------------------------------------------------------------

namespace {

void im2col(const double* x, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t ho, int64_t wo, double* col) {
  // col layout: [ho*wo, cin*kh*kw]
  int64_t kk = cin * kh * kw;
  for (int64_t oy = 0; oy < ho; ++oy) {
    for (int64_t ox = 0; ox < wo; ++ox) {
      double* dst = col + (oy * wo + ox) * kk;
      for (int64_t ci = 0; ci < cin; ++ci) {
        for (int64_t ky = 0; ky < kh; ++ky) {
          int64_t iy = oy * stride - pad + ky;
          for (int64_t kx = 0; kx < kw; ++kx) {
            int64_t ix = ox * stride - pad + kx;
            double v = 0.0;
            if (iy >= 0 && iy < h && ix >= 0 && ix < w) v = x[(ci * h + iy) * w + ix];
            dst[(ci * kh + ky) * kw + kx] = v;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
                int64_t stride, int64_t pad, int64_t ho, int64_t wo, double* gx) {
  int64_t kk = cin * kh * kw;
  for (int64_t oy = 0; oy < ho; ++oy) {
    for (int64_t ox = 0; ox < wo; ++ox) {
      const double* src = col + (oy * wo + ox) * kk;
      for (int64_t ci = 0; ci < cin; ++ci) {
        for (int64_t ky = 0; ky < kh; ++ky) {
          int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int64_t kx = 0; kx < kw; ++kx) {
            int64_t ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            gx[(ci * h + iy) * w + ix] += src[(ci * kh + ky) * kw + kx];
          }
        }
      }
    }
  }
}

}  // namespace

Var Tape::conv2d(Var x, Var w, Var bias, int stride, int pad) {
  const Shape& sx = shape(x);
  const Shape& sw = shape(w);
  if (sx.nd != 4 || sw.nd != 4) throw InputError("conv2d: expects [B,C,H,W] and [Co,Ci,kh,kw]");
  int64_t b = sx[0], cin = sx[1], h = sx[2], wdt = sx[3];
  int64_t cout = sw[0], kh = sw[2], kw = sw[3];
  if (sw[1] != cin) throw InputError("conv2d: channel mismatch");
  if (shape(bias).numel() != cout) throw InputError("conv2d: bias size mismatch");
  if (stride < 1) throw InputError("conv2d: stride must be >= 1");
  int64_t ho = (h + 2 * pad - kh) / stride + 1;
  int64_t wo = (wdt + 2 * pad - kw) / stride + 1;
  if (ho <= 0 || wo <= 0) throw InputError("conv2d: output extent is empty");
  int64_t s = ho * wo, kk = cin * kh * kw;

  auto cols = std::make_shared<std::vector<double>>(b * s * kk);
  std::vector<double> out(b * cout * s);
  const auto& xv = val(x);
  const auto& wv = val(w);
  const auto& bv = val(bias);
  for (int64_t i = 0; i < b; ++i) {
    double* col = cols->data() + i * s * kk;
    im2col(xv.data() + i * cin * h * wdt, cin, h, wdt, kh, kw, stride, pad, ho, wo, col);
    // out[i]: [cout, s] = W [cout, kk] * col^T [kk, s]
    gemm(wv.data(), col, out.data() + i * cout * s, cout, s, kk, false, true, false);
    for (int64_t co = 0; co < cout; ++co) {
      double bval = bv[co];
      double* o = out.data() + (i * cout + co) * s;
      for (int64_t j = 0; j < s; ++j) o[j] += bval;
    }
  }
  Var y = make(Shape{b, cout, ho, wo}, std::move(out), ng(x) || ng(w) || ng(bias));
  int xi = x.id, wi = w.id, bi2 = bias.id, yi = y.id;
  nodes_[yi].back = [=](Tape& t) {
    const auto& g = t.node(yi).grad;
    bool need_x = t.node(xi).needs_grad;
    bool need_w = t.node(wi).needs_grad;
    bool need_b = t.node(bi2).needs_grad;
    std::vector<double> dcol;
    if (need_x) dcol.resize(s * kk);
    for (int64_t i = 0; i < b; ++i) {
      const double* gi = g.data() + i * cout * s;
      const double* col = cols->data() + i * s * kk;
      if (need_w) {
        // dW += dOut [cout, s] * col [s, kk]
        gemm(gi, col, t.grad_ref(wi).data(), cout, kk, s, false, false, true);
      }
      if (need_b) {
        auto& gb = t.grad_ref(bi2);
        for (int64_t co = 0; co < cout; ++co) {
          double acc = 0.0;
          for (int64_t j = 0; j < s; ++j) acc += gi[co * s + j];
          gb[co] += acc;
        }
      }
      if (need_x) {
        // dcol [s, kk] = dOut^T [s, cout] * W [cout, kk]
        gemm(gi, t.node(wi).val.data(), dcol.data(), s, kk, cout, true, false, false);
        col2im_add(dcol.data(), cin, h, wdt, kh, kw, stride, pad, ho, wo,
                   t.grad_ref(xi).data() + i * cin * h * wdt);
      }
    }
  };
  return y;
}

Var Tape::batchnorm2d(Var x, Var gamma, Var beta, std::vector<double>& running_mean,
                      std::vector<double>& running_var, double momentum, double epsilon,
                      bool use_batch_stats) {
  const Shape& s = shape(x);
  if (s.nd != 4) throw InputError("batchnorm2d: expects [B,C,H,W]");
  int64_t b = s[0], c = s[1], hw = s[2] * s[3];
  if (static_cast<int64_t>(running_mean.size()) != c ||
      static_cast<int64_t>(running_var.size()) != c)
    throw InputError("batchnorm2d: running stats channel mismatch");
  if (shape(gamma).numel() != c || shape(beta).numel() != c)
    throw InputError("batchnorm2d: gamma/beta channel mismatch");
  if (b == 0) throw DegenerateInputError("batchnorm2d: zero batch");
  int64_t n = b * hw;

  auto invstd = std::make_shared<std::vector<double>>(c);
  auto mean_saved = std::make_shared<std::vector<double>>(c);
  std::vector<double>& mean_used = *mean_saved;
  std::vector<double> out(s.numel());
  const auto& xv = val(x);

  if (use_batch_stats) {
    for (int64_t ch = 0; ch < c; ++ch) {
      double mu = 0.0;
      for (int64_t i = 0; i < b; ++i) {
        const double* p = xv.data() + (i * c + ch) * hw;
        for (int64_t j = 0; j < hw; ++j) mu += p[j];
      }
      mu /= static_cast<double>(n);
      double var = 0.0;
      for (int64_t i = 0; i < b; ++i) {
        const double* p = xv.data() + (i * c + ch) * hw;
        for (int64_t j = 0; j < hw; ++j) {
          double d = p[j] - mu;
          var += d * d;
        }
      }
      var /= static_cast<double>(n);  // biased, also used for the running update
      mean_used[ch] = mu;
      (*invstd)[ch] = 1.0 / std::sqrt(var + epsilon);
      running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * mu;
      running_var[ch] = (1.0 - momentum) * running_var[ch] + momentum * var;
    }
  } else {
    for (int64_t ch = 0; ch < c; ++ch) {
      mean_used[ch] = running_mean[ch];
      (*invstd)[ch] = 1.0 / std::sqrt(running_var[ch] + epsilon);
    }
  }

  const auto& gv = val(gamma);
  const auto& bv = val(beta);
  for (int64_t i = 0; i < b; ++i) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const double* p = xv.data() + (i * c + ch) * hw;
      double* o = out.data() + (i * c + ch) * hw;
      double mu = mean_used[ch], is = (*invstd)[ch], ga = gv[ch], be = bv[ch];
      for (int64_t j = 0; j < hw; ++j) o[j] = ga * (p[j] - mu) * is + be;
    }
  }

  Var y = make(s, std::move(out), ng(x) || ng(gamma) || ng(beta));
  int xi = x.id, gi = gamma.id, bi2 = beta.id, yi = y.id;
  // backward recomputes xhat from the parent's values instead of storing it
  nodes_[yi].back = [=](Tape& t) {
    const auto& g = t.node(yi).grad;
    const auto& xv2 = t.node(xi).val;
    const auto& gv2 = t.node(gi).val;
    bool need_x = t.node(xi).needs_grad;
    for (int64_t ch = 0; ch < c; ++ch) {
      double mu = (*mean_saved)[ch], is = (*invstd)[ch];
      double sum_g = 0.0, sum_gx = 0.0;
      for (int64_t i = 0; i < b; ++i) {
        const double* gp = g.data() + (i * c + ch) * hw;
        const double* p = xv2.data() + (i * c + ch) * hw;
        for (int64_t j = 0; j < hw; ++j) {
          sum_g += gp[j];
          sum_gx += gp[j] * (p[j] - mu) * is;
        }
      }
      if (t.node(gi).needs_grad) t.grad_ref(gi)[ch] += sum_gx;
      if (t.node(bi2).needs_grad) t.grad_ref(bi2)[ch] += sum_g;
      if (!need_x) continue;
      double ga = gv2[ch];
      auto& gx = t.grad_ref(xi);
      if (use_batch_stats) {
        double mg = sum_g / static_cast<double>(n);
        double mgx = sum_gx / static_cast<double>(n);
        for (int64_t i = 0; i < b; ++i) {
          const double* gp = g.data() + (i * c + ch) * hw;
          const double* p = xv2.data() + (i * c + ch) * hw;
          double* gxp = gx.data() + (i * c + ch) * hw;
          for (int64_t j = 0; j < hw; ++j)
            gxp[j] += ga * is * (gp[j] - mg - (p[j] - mu) * is * mgx);
        }
      } else {
        for (int64_t i = 0; i < b; ++i) {
          const double* gp = g.data() + (i * c + ch) * hw;
          double* gxp = gx.data() + (i * c + ch) * hw;
          for (int64_t j = 0; j < hw; ++j) gxp[j] += ga * is * gp[j];
        }
      }
    }
  };
  return y;
}

Var Tape::layernorm(Var x, Var gamma, Var beta, double epsilon) {
  const Shape& s = shape(x);
  int64_t f = s[s.nd - 1];
  int64_t rows = s.numel() / f;
  if (shape(gamma).numel() != f || shape(beta).numel() != f)
    throw InputError("layernorm: gamma/beta size mismatch");
  auto xhat = std::make_shared<std::vector<double>>(s.numel());
  auto invstd = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(s.numel());
  const auto& xv = val(x);
  const auto& gv = val(gamma);
  const auto& bv = val(beta);
  for (int64_t r = 0; r < rows; ++r) {
    const double* p = xv.data() + r * f;
    double mu = 0.0;
    for (int64_t j = 0; j < f; ++j) mu += p[j];
    mu /= static_cast<double>(f);
    double var = 0.0;
    for (int64_t j = 0; j < f; ++j) {
      double d = p[j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(f);
    double is = 1.0 / std::sqrt(var + epsilon);
    (*invstd)[r] = is;
    double* xh = xhat->data() + r * f;
    double* o = out.data() + r * f;
    for (int64_t j = 0; j < f; ++j) {
      xh[j] = (p[j] - mu) * is;
      o[j] = gv[j] * xh[j] + bv[j];
    }
  }
  Var y = make(s, std::move(out), ng(x) || ng(gamma) || ng(beta));
  int xi = x.id, gi = gamma.id, bi = beta.id, yi = y.id;
  nodes_[yi].back = [=](Tape& t) {
    const auto& g = t.node(yi).grad;
    const auto& gv2 = t.node(gi).val;
    for (int64_t r = 0; r < rows; ++r) {
      const double* gp = g.data() + r * f;
      const double* xh = xhat->data() + r * f;
      if (t.node(gi).needs_grad) {
        auto& gg = t.grad_ref(gi);
        for (int64_t j = 0; j < f; ++j) gg[j] += gp[j] * xh[j];
      }
      if (t.node(bi).needs_grad) {
        auto& gb = t.grad_ref(bi);
        for (int64_t j = 0; j < f; ++j) gb[j] += gp[j];
      }
      if (!t.node(xi).needs_grad) continue;
      double is = (*invstd)[r];
      double mg = 0.0, mgx = 0.0;
      for (int64_t j = 0; j < f; ++j) {
        double gj = gp[j] * gv2[j];
        mg += gj;
        mgx += gj * xh[j];
      }
      mg /= static_cast<double>(f);
      mgx /= static_cast<double>(f);
      auto& gx = t.grad_ref(xi);
      double* gxp = gx.data() + r * f;
      for (int64_t j = 0; j < f; ++j)
        gxp[j] += is * (gp[j] * gv2[j] - mg - xh[j] * mgx);
    }
  };
  return y;
}

Var Tape::softmax_lastdim(Var x) {
  const Shape& s = shape(x);
  int64_t f = s[s.nd - 1];
  int64_t rows = s.numel() / f;
  std::vector<double> out(s.numel());
  const auto& xv = val(x);
  for (int64_t r = 0; r < rows; ++r) {
    const double* p = xv.data() + r * f;
    double* o = out.data() + r * f;
    double m = p[0];
    for (int64_t j = 1; j < f; ++j) m = std::max(m, p[j]);
    double z = 0.0;
    for (int64_t j = 0; j < f; ++j) {
      o[j] = std::exp(p[j] - m);
      z += o[j];
    }
    for (int64_t j = 0; j < f; ++j) o[j] /= z;
  }
  Var y = make(s, std::move(out), ng(x));
  int xi = x.id, yi = y.id;
  nodes_[yi].back = [xi, yi, rows, f](Tape& t) {
    if (!t.node(xi).needs_grad) return;
    const auto& g = t.node(yi).grad;
    const auto& yv = t.node(yi).val;
    auto& gx = t.grad_ref(xi);
    for (int64_t r = 0; r < rows; ++r) {
      const double* gp = g.data() + r * f;
      const double* yp = yv.data() + r * f;
      double dot = 0.0;
      for (int64_t j = 0; j < f; ++j) dot += gp[j] * yp[j];
      double* gxp = gx.data() + r * f;
      for (int64_t j = 0; j < f; ++j) gxp[j] += yp[j] * (gp[j] - dot);
    }
  };
  return y;
}

Var Tape::attention_qkv(Var q, Var k, Var v, int heads) {
  const Shape s = shape(q);
  if (s.nd != 3 || shape(k) != s || shape(v) != s)
    throw InputError("attention_qkv: q/k/v must share [B,L,C]");
  int64_t b = s[0], l = s[1], c = s[2];
  if (heads < 1 || c % heads != 0) throw InputError("attention_qkv: bad head count");
  int64_t hd = c / heads;
  double sc = 1.0 / std::sqrt(static_cast<double>(hd));

  auto probs = std::make_shared<std::vector<double>>(b * heads * l * l);
  std::vector<double> out(s.numel(), 0.0);
  const auto& qv = val(q);
  const auto& kv = val(k);
  const auto& vv = val(v);

  std::vector<double> srow(l);
  for (int64_t i = 0; i < b; ++i) {
    for (int h = 0; h < heads; ++h) {
      const int64_t off = h * hd;
      double* A = probs->data() + (i * heads + h) * l * l;
      for (int64_t r = 0; r < l; ++r) {
        const double* qp = qv.data() + (i * l + r) * c + off;
        double m = -1e300;
        for (int64_t j = 0; j < l; ++j) {
          const double* kp = kv.data() + (i * l + j) * c + off;
          double dot = 0.0;
          for (int64_t d = 0; d < hd; ++d) dot += qp[d] * kp[d];
          srow[j] = dot * sc;
          m = std::max(m, srow[j]);
        }
        double z = 0.0;
        double* arow = A + r * l;
        for (int64_t j = 0; j < l; ++j) {
          arow[j] = std::exp(srow[j] - m);
          z += arow[j];
        }
        double* orow = out.data() + (i * l + r) * c + off;
        for (int64_t j = 0; j < l; ++j) {
          arow[j] /= z;
          const double* vp = vv.data() + (i * l + j) * c + off;
          double a = arow[j];
          for (int64_t d = 0; d < hd; ++d) orow[d] += a * vp[d];
        }
      }
    }
  }

  Var y = make(s, std::move(out), ng(q) || ng(k) || ng(v));
  int qi = q.id, ki = k.id, vi = v.id, yi = y.id;
  nodes_[yi].back = [=](Tape& t) {
    const auto& g = t.node(yi).grad;
    const auto& qv2 = t.node(qi).val;
    const auto& kv2 = t.node(ki).val;
    const auto& vv2 = t.node(vi).val;
    bool nq = t.node(qi).needs_grad, nk = t.node(ki).needs_grad, nv = t.node(vi).needs_grad;
    auto& gq = nq ? t.grad_ref(qi) : t.grad_ref(yi);
    auto& gk = nk ? t.grad_ref(ki) : t.grad_ref(yi);
    auto& gv = nv ? t.grad_ref(vi) : t.grad_ref(yi);
    std::vector<double> da(l), ds(l);
    for (int64_t i = 0; i < b; ++i) {
      for (int h = 0; h < heads; ++h) {
        const int64_t off = h * hd;
        const double* A = probs->data() + (i * heads + h) * l * l;
        for (int64_t r = 0; r < l; ++r) {
          const double* grow = g.data() + (i * l + r) * c + off;
          const double* arow = A + r * l;
          // dV += A^T dO, dA = dO V^T
          double dot = 0.0;
          for (int64_t j = 0; j < l; ++j) {
            const double* vp = vv2.data() + (i * l + j) * c + off;
            double acc = 0.0;
            for (int64_t d = 0; d < hd; ++d) acc += grow[d] * vp[d];
            da[j] = acc;
            dot += acc * arow[j];
            if (nv) {
              double* gvp = gv.data() + (i * l + j) * c + off;
              double a = arow[j];
              for (int64_t d = 0; d < hd; ++d) gvp[d] += a * grow[d];
            }
          }
          if (!nq && !nk) continue;
          for (int64_t j = 0; j < l; ++j) ds[j] = arow[j] * (da[j] - dot) * sc;
          const double* qp = qv2.data() + (i * l + r) * c + off;
          double* gqp = gq.data() + (i * l + r) * c + off;
          for (int64_t j = 0; j < l; ++j) {
            const double* kp = kv2.data() + (i * l + j) * c + off;
            double dsj = ds[j];
            if (nq)
              for (int64_t d = 0; d < hd; ++d) gqp[d] += dsj * kp[d];
            if (nk) {
              double* gkp = gk.data() + (i * l + j) * c + off;
              for (int64_t d = 0; d < hd; ++d) gkp[d] += dsj * qp[d];
            }
          }
        }
      }
    }
  };
  return y;
}

Var Tape::embedding(const std::vector<int>& ids, Shape ids_shape, Var table) {
  const Shape& st = shape(table);
  if (st.nd != 2) throw InputError("embedding: table must be [V,C]");
  if (static_cast<int64_t>(ids.size()) != ids_shape.numel())
    throw InputError("embedding: ids size mismatch");
  int64_t v = st[0], c = st[1];
  for (int id : ids)
    if (id < 0 || id >= v) throw InputError("embedding: token id out of range: " + std::to_string(id));
  Shape ns = ids_shape;
  if (ns.nd >= 4) throw InputError("embedding: ids rank too high");
  ns.d[ns.nd] = c;
  ns.nd += 1;
  std::vector<double> out(ids.size() * c);
  const auto& tv = val(table);
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy_n(tv.data() + static_cast<int64_t>(ids[i]) * c, c, out.data() + i * c);
  Var y = make(ns, std::move(out), ng(table));
  auto ids_copy = std::make_shared<std::vector<int>>(ids);
  int ti = table.id, yi = y.id;
  nodes_[yi].back = [ti, yi, ids_copy, c](Tape& t) {
    if (!t.node(ti).needs_grad) return;
    const auto& g = t.node(yi).grad;
    auto& gt = t.grad_ref(ti);
    for (size_t i = 0; i < ids_copy->size(); ++i) {
      const double* gp = g.data() + i * c;
      double* dst = gt.data() + static_cast<int64_t>((*ids_copy)[i]) * c;
      for (int64_t j = 0; j < c; ++j) dst[j] += gp[j];
    }
  };
  return y;
}

Var Tape::l2normalize_rows(Var x, double min_norm) {
  const Shape& s = shape(x);
  if (s.nd != 2) throw InputError("l2normalize_rows: expects [B,D]");
  int64_t b = s[0], d = s[1];
  auto norms = std::make_shared<std::vector<double>>(b);
  std::vector<double> out(s.numel());
  const auto& xv = val(x);
  for (int64_t i = 0; i < b; ++i) {
    const double* p = xv.data() + i * d;
    double nn = 0.0;
    for (int64_t j = 0; j < d; ++j) nn += p[j] * p[j];
    nn = std::sqrt(nn);
    if (nn < min_norm)
      throw NumericError("l2normalize_rows: zero-norm row " + std::to_string(i));
    (*norms)[i] = nn;
    double* o = out.data() + i * d;
    for (int64_t j = 0; j < d; ++j) o[j] = p[j] / nn;
  }
  Var y = make(s, std::move(out), ng(x));
  int xi = x.id, yi = y.id;
  nodes_[yi].back = [xi, yi, b, d, norms](Tape& t) {
    if (!t.node(xi).needs_grad) return;
    const auto& g = t.node(yi).grad;
    const auto& yv = t.node(yi).val;
    auto& gx = t.grad_ref(xi);
    for (int64_t i = 0; i < b; ++i) {
      const double* gp = g.data() + i * d;
      const double* yp = yv.data() + i * d;
      double dot = 0.0;
      for (int64_t j = 0; j < d; ++j) dot += gp[j] * yp[j];
      double inv = 1.0 / (*norms)[i];
      double* gxp = gx.data() + i * d;
      for (int64_t j = 0; j < d; ++j) gxp[j] += inv * (gp[j] - yp[j] * dot);
    }
  };
  return y;
}

Var Tape::cross_entropy_rows(Var logits, const std::vector<int>& targets) {
  const Shape& s = shape(logits);
  if (s.nd != 2) throw InputError("cross_entropy_rows: expects [N,V]");
  int64_t n = s[0], v = s[1];
  if (static_cast<int64_t>(targets.size()) != n)
    throw InputError("cross_entropy_rows: target count mismatch");
  for (int tgt : targets)
    if (tgt < 0 || tgt >= v) throw InputError("cross_entropy_rows: target out of range");
  auto probs = std::make_shared<std::vector<double>>(s.numel());
  const auto& xv = val(logits);
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double* p = xv.data() + i * v;
    double* q = probs->data() + i * v;
    double m = p[0];
    for (int64_t j = 1; j < v; ++j) m = std::max(m, p[j]);
    double z = 0.0;
    for (int64_t j = 0; j < v; ++j) {
      q[j] = std::exp(p[j] - m);
      z += q[j];
    }
    for (int64_t j = 0; j < v; ++j) q[j] /= z;
    loss += std::log(z) + m - p[targets[i]];
  }
  loss /= static_cast<double>(n);
  Var y = make(Shape{1}, {loss}, ng(logits));
  auto tg = std::make_shared<std::vector<int>>(targets);
  int xi = logits.id, yi = y.id;
  nodes_[yi].back = [xi, yi, n, v, probs, tg](Tape& t) {
    if (!t.node(xi).needs_grad) return;
    double go = t.node(yi).grad[0] / static_cast<double>(n);
    auto& gx = t.grad_ref(xi);
    for (int64_t i = 0; i < n; ++i) {
      const double* q = probs->data() + i * v;
      double* gxp = gx.data() + i * v;
      for (int64_t j = 0; j < v; ++j) gxp[j] += go * q[j];
      gxp[(*tg)[i]] -= go;
    }
  };
  return y;
}

Var Tape::masked_cross_entropy(Var logits, const std::vector<int>& targets,
                               const std::vector<uint8_t>& mask) {
  const Shape& s = shape(logits);
  if (s.nd != 3) throw InputError("masked_cross_entropy: expects [B,L,V]");
  int64_t rows = s[0] * s[1], v = s[2];
  if (static_cast<int64_t>(targets.size()) != rows || targets.size() != mask.size())
    throw InputError("masked_cross_entropy: targets/mask size mismatch");
  int64_t count = 0;
  for (uint8_t m : mask) count += m ? 1 : 0;
  if (count == 0) throw DegenerateInputError("masked_cross_entropy: no masked positions");
  auto probs = std::make_shared<std::vector<double>>();
  auto rowsel = std::make_shared<std::vector<int64_t>>();
  const auto& xv = val(logits);
  double loss = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    if (targets[r] < 0 || targets[r] >= v)
      throw InputError("masked_cross_entropy: target out of range");
    const double* p = xv.data() + r * v;
    double m = p[0];
    for (int64_t j = 1; j < v; ++j) m = std::max(m, p[j]);
    double z = 0.0;
    size_t base = probs->size();
    probs->resize(base + v);
    double* q = probs->data() + base;
    for (int64_t j = 0; j < v; ++j) {
      q[j] = std::exp(p[j] - m);
      z += q[j];
    }
    for (int64_t j = 0; j < v; ++j) q[j] /= z;
    loss += std::log(z) + m - p[targets[r]];
    rowsel->push_back(r);
  }
  loss /= static_cast<double>(count);
  Var y = make(Shape{1}, {loss}, ng(logits));
  auto tg = std::make_shared<std::vector<int>>(targets);
  int xi = logits.id, yi = y.id;
  nodes_[yi].back = [xi, yi, v, count, probs, rowsel, tg](Tape& t) {
    if (!t.node(xi).needs_grad) return;
    double go = t.node(yi).grad[0] / static_cast<double>(count);
    auto& gx = t.grad_ref(xi);
    for (size_t k = 0; k < rowsel->size(); ++k) {
      int64_t r = (*rowsel)[k];
      const double* q = probs->data() + k * v;
      double* gxp = gx.data() + r * v;
      for (int64_t j = 0; j < v; ++j) gxp[j] += go * q[j];
      gxp[(*tg)[r]] -= go;
    }
  };
  return y;
}

Var Tape::sum_all(Var x) {
  const auto& xv = val(x);
  double acc = 0.0;
  for (double v : xv) acc += v;
  Var y = make(Shape{1}, {acc}, ng(x));
  int xi = x.id, yi = y.id;
  nodes_[yi].back = [xi, yi](Tape& t) {
    if (!t.node(xi).needs_grad) return;
    double g = t.node(yi).grad[0];
    auto& gx = t.grad_ref(xi);
    for (double& v : gx) v += g;
  };
  return y;
}

Var Tape::mean_all(Var x) { return scale(sum_all(x), 1.0 / static_cast<double>(shape(x).numel())); }

Var Tape::weighted_sum(const std::vector<Var>& xs, const std::vector<double>& ws) {
  if (xs.size() != ws.size() || xs.empty()) throw InputError("weighted_sum: size mismatch");
  double acc = 0.0;
  bool needs = false;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (shape(xs[i]).numel() != 1) throw InputError("weighted_sum: scalar operands required");
    acc += ws[i] * val(xs[i])[0];
    needs = needs || ng(xs[i]);
  }
  Var y = make(Shape{1}, {acc}, needs);
  std::vector<int> ids;
  for (Var v : xs) ids.push_back(v.id);
  auto wcopy = std::make_shared<std::vector<double>>(ws);
  int yi = y.id;
  nodes_[yi].back = [yi, ids, wcopy](Tape& t) {
    double g = t.node(yi).grad[0];
    for (size_t i = 0; i < ids.size(); ++i)
      if (t.node(ids[i]).needs_grad) t.grad_ref(ids[i])[0] += g * (*wcopy)[i];
  };
  return y;
}

}  // namespace vlp

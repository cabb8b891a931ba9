#include "gprune/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gprune::num {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimError(std::string(op) + ": shape mismatch " +
                   shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

bool want_record(std::initializer_list<const Tensor*> ins) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

void mark_and_record(Tensor& out, std::function<void()> bw) {
  out.set_requires_grad(true);
  Tape::active()->record(std::move(bw));
}

}  // namespace

void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n,
             bool accumulate) {
  if (!accumulate) std::fill(c, c + static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n,
             bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<size_t>(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      if (accumulate)
        crow[j] += acc;
      else
        crow[j] = acc;
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n,
             bool accumulate) {
  if (!accumulate) std::fill(c, c + static_cast<size_t>(m) * n, 0.0);
  for (int p = 0; p < k; ++p) {
    const double* arow = a + static_cast<size_t>(p) * m;
    const double* brow = b + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const auto& da = a.data();
  const auto& db = b.data();
  auto& dst = out.data();
  for (size_t i = 0; i < dst.size(); ++i) dst[i] = da[i] + db[i];
  if (want_record({&a, &b})) {
    Tensor ac = a, bc = b, oc = out;
    mark_and_record(out, [ac, bc, oc]() mutable {
      const auto& go = oc.grad();
      if (ac.requires_grad()) {
        auto& ga = ac.grad();
        for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (bc.requires_grad()) {
        auto& gb = bc.grad();
        for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  const auto& da = a.data();
  const auto& db = b.data();
  auto& dst = out.data();
  for (size_t i = 0; i < dst.size(); ++i) dst[i] = da[i] - db[i];
  if (want_record({&a, &b})) {
    Tensor ac = a, bc = b, oc = out;
    mark_and_record(out, [ac, bc, oc]() mutable {
      const auto& go = oc.grad();
      if (ac.requires_grad()) {
        auto& ga = ac.grad();
        for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (bc.requires_grad()) {
        auto& gb = bc.grad();
        for (size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const auto& da = a.data();
  const auto& db = b.data();
  auto& dst = out.data();
  for (size_t i = 0; i < dst.size(); ++i) dst[i] = da[i] * db[i];
  if (want_record({&a, &b})) {
    Tensor ac = a, bc = b, oc = out;
    mark_and_record(out, [ac, bc, oc]() mutable {
      const auto& go = oc.grad();
      if (ac.requires_grad()) {
        auto& ga = ac.grad();
        const auto& vb = bc.data();
        for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * vb[i];
      }
      if (bc.requires_grad()) {
        auto& gb = bc.grad();
        const auto& va = ac.data();
        for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * va[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape());
  const auto& da = a.data();
  auto& dst = out.data();
  for (size_t i = 0; i < dst.size(); ++i) dst[i] = da[i] * s;
  if (want_record({&a})) {
    Tensor ac = a, oc = out;
    mark_and_record(out, [ac, oc, s]() mutable {
      const auto& go = oc.grad();
      auto& ga = ac.grad();
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * s;
    });
  }
  return out;
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor relu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const auto& da = a.data();
  auto& dst = out.data();
  for (size_t i = 0; i < dst.size(); ++i) dst[i] = da[i] > 0.0 ? da[i] : 0.0;
  if (want_record({&a})) {
    Tensor ac = a, oc = out;
    mark_and_record(out, [ac, oc]() mutable {
      const auto& go = oc.grad();
      const auto& va = ac.data();
      auto& ga = ac.grad();
      for (size_t i = 0; i < go.size(); ++i)
        if (va[i] > 0.0) ga[i] += go[i];
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const auto& da = a.data();
  auto& dst = out.data();
  for (size_t i = 0; i < dst.size(); ++i) dst[i] = 1.0 / (1.0 + std::exp(-da[i]));
  if (want_record({&a})) {
    Tensor ac = a, oc = out;
    mark_and_record(out, [ac, oc]() mutable {
      const auto& go = oc.grad();
      const auto& vo = oc.data();
      auto& ga = ac.grad();
      for (size_t i = 0; i < go.size(); ++i)
        ga[i] += go[i] * vo[i] * (1.0 - vo[i]);
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.ndim() != 1)
    throw DimError("add_bias: bias must be 1-D, got " + shape_str(bias.shape()));
  const int c = bias.dim(0);
  int64_t inner = 1;
  if (x.ndim() == 2) {
    if (x.dim(1) != c) throw DimError("add_bias: channel mismatch");
  } else if (x.ndim() == 4) {
    if (x.dim(1) != c) throw DimError("add_bias: channel mismatch");
    inner = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  } else {
    throw DimError("add_bias: expects 2-D or 4-D input");
  }
  const int n = x.dim(0);
  Tensor out = Tensor::zeros(x.shape());
  const auto& dx = x.data();
  const auto& db = bias.data();
  auto& dst = out.data();
  size_t pos = 0;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const double b = db[static_cast<size_t>(ch)];
      for (int64_t k = 0; k < inner; ++k, ++pos) dst[pos] = dx[pos] + b;
    }
  if (want_record({&x, &bias})) {
    Tensor xc = x, bc = bias, oc = out;
    mark_and_record(out, [xc, bc, oc, n, c, inner]() mutable {
      const auto& go = oc.grad();
      if (xc.requires_grad()) {
        auto& gx = xc.grad();
        for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
      }
      if (bc.requires_grad()) {
        auto& gb = bc.grad();
        size_t pos = 0;
        for (int i = 0; i < n; ++i)
          for (int ch = 0; ch < c; ++ch)
            for (int64_t k = 0; k < inner; ++k, ++pos)
              gb[static_cast<size_t>(ch)] += go[pos];
      }
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw DimError("matmul: incompatible shapes " + shape_str(a.shape()) +
                   " x " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  gemm_nn(a.data().data(), b.data().data(), out.data().data(), m, k, n, false);
  if (want_record({&a, &b})) {
    Tensor ac = a, bc = b, oc = out;
    mark_and_record(out, [ac, bc, oc, m, k, n]() mutable {
      const auto& go = oc.grad();
      if (ac.requires_grad())
        gemm_nt(go.data(), bc.data().data(), ac.grad().data(), m, n, k, true);
      if (bc.requires_grad())
        gemm_tn(ac.data().data(), go.data(), bc.grad().data(), k, m, n, true);
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(1))
    throw DimError("linear: incompatible shapes " + shape_str(x.shape()) +
                   " x " + shape_str(w.shape()) + "^T");
  const int n = x.dim(0), in = x.dim(1), out = w.dim(0);
  if (b.defined() && (b.ndim() != 1 || b.dim(0) != out))
    throw DimError("linear: bad bias shape");
  Tensor y = Tensor::zeros({n, out});
  gemm_nt(x.data().data(), w.data().data(), y.data().data(), n, in, out, false);
  if (b.defined()) {
    auto& yd = y.data();
    const auto& bd = b.data();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < out; ++j) yd[static_cast<size_t>(i) * out + j] += bd[static_cast<size_t>(j)];
  }
  const bool rec =
      b.defined() ? want_record({&x, &w, &b}) : want_record({&x, &w});
  if (rec) {
    Tensor xc = x, wc = w, bc = b, yc = y;
    mark_and_record(y, [xc, wc, bc, yc, n, in, out]() mutable {
      const auto& gy = yc.grad();
      if (xc.requires_grad())
        gemm_nn(gy.data(), wc.data().data(), xc.grad().data(), n, out, in, true);
      if (wc.requires_grad())
        gemm_tn(gy.data(), xc.data().data(), wc.grad().data(), out, n, in, true);
      if (bc.defined() && bc.requires_grad()) {
        auto& gb = bc.grad();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < out; ++j)
            gb[static_cast<size_t>(j)] += gy[static_cast<size_t>(i) * out + j];
      }
    });
  }
  return y;
}

Conv2dDims conv2d_out_dims(int h, int w, int kh, int kw, int sh, int sw,
                           int ph, int pw) {
  Conv2dDims d;
  d.out_h = (h + 2 * ph - kh) / sh + 1;
  d.out_w = (w + 2 * pw - kw) / sw + 1;
  return d;
}

namespace {

// col has (cig*kh*kw) rows and (oh*ow) columns, one input-channel group
void im2col(const double* x, int cig, int h, int w, int kh, int kw, int sh,
            int sw, int ph, int pw, int oh, int ow, double* col) {
  for (int c = 0; c < cig; ++c) {
    const double* xc = x + static_cast<size_t>(c) * h * w;
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        double* crow =
            col + (static_cast<size_t>(c) * kh * kw + ki * kw + kj) * oh * ow;
        for (int i = 0; i < oh; ++i) {
          const int src_i = i * sh - ph + ki;
          if (src_i < 0 || src_i >= h) {
            std::fill(crow + static_cast<size_t>(i) * ow,
                      crow + static_cast<size_t>(i + 1) * ow, 0.0);
            continue;
          }
          const double* xrow = xc + static_cast<size_t>(src_i) * w;
          for (int j = 0; j < ow; ++j) {
            const int src_j = j * sw - pw + kj;
            crow[static_cast<size_t>(i) * ow + j] =
                (src_j >= 0 && src_j < w) ? xrow[src_j] : 0.0;
          }
        }
      }
  }
}

void col2im_add(const double* col, int cig, int h, int w, int kh, int kw,
                int sh, int sw, int ph, int pw, int oh, int ow, double* x) {
  for (int c = 0; c < cig; ++c) {
    double* xc = x + static_cast<size_t>(c) * h * w;
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        const double* crow =
            col + (static_cast<size_t>(c) * kh * kw + ki * kw + kj) * oh * ow;
        for (int i = 0; i < oh; ++i) {
          const int src_i = i * sh - ph + ki;
          if (src_i < 0 || src_i >= h) continue;
          double* xrow = xc + static_cast<size_t>(src_i) * w;
          for (int j = 0; j < ow; ++j) {
            const int src_j = j * sw - pw + kj;
            if (src_j >= 0 && src_j < w)
              xrow[src_j] += crow[static_cast<size_t>(i) * ow + j];
          }
        }
      }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              int stride_h, int stride_w, int pad_h, int pad_w, int groups) {
  if (x.ndim() != 4 || w.ndim() != 4)
    throw DimError("conv2d: expects 4-D input and weight");
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wid = x.dim(3);
  const int cout = w.dim(0), cig = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (groups < 1 || cin % groups != 0 || cout % groups != 0)
    throw DimError("conv2d: groups must divide channel counts");
  if (cig != cin / groups)
    throw DimError("conv2d: weight in-channel dim mismatch");
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != cout))
    throw DimError("conv2d: bad bias shape");
  const auto dims =
      conv2d_out_dims(h, wid, kh, kw, stride_h, stride_w, pad_h, pad_w);
  const int oh = dims.out_h, ow = dims.out_w;
  if (oh <= 0 || ow <= 0)
    throw DimError("conv2d: non-positive output size");
  const int cog = cout / groups;
  const int kd = cig * kh * kw;

  Tensor out = Tensor::zeros({n, cout, oh, ow});
  std::vector<double> col(static_cast<size_t>(kd) * oh * ow);
  const auto& xd = x.data();
  const auto& wd = w.data();
  auto& od = out.data();
  for (int i = 0; i < n; ++i) {
    for (int g = 0; g < groups; ++g) {
      const double* xg = xd.data() +
                         (static_cast<size_t>(i) * cin + g * cig) * h * wid;
      im2col(xg, cig, h, wid, kh, kw, stride_h, stride_w, pad_h, pad_w, oh, ow,
             col.data());
      const double* wg = wd.data() + static_cast<size_t>(g) * cog * kd;
      double* og =
          od.data() + (static_cast<size_t>(i) * cout + g * cog) * oh * ow;
      gemm_nn(wg, col.data(), og, cog, kd, oh * ow, false);
    }
  }
  if (bias.defined()) {
    const auto& bd = bias.data();
    size_t pos = 0;
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < cout; ++c) {
        const double b = bd[static_cast<size_t>(c)];
        for (int p = 0; p < oh * ow; ++p, ++pos) od[pos] += b;
      }
  }

  const bool rec = bias.defined() ? want_record({&x, &w, &bias})
                                  : want_record({&x, &w});
  if (rec) {
    Tensor xc = x, wc = w, bc = bias, oc = out;
    const int sh = stride_h, sw = stride_w, ph = pad_h, pw = pad_w;
    mark_and_record(out, [xc, wc, bc, oc, n, cin, h, wid, cout, cig, kh, kw,
                          sh, sw, ph, pw, groups, oh, ow, cog, kd]() mutable {
      const auto& go = oc.grad();
      std::vector<double> col(static_cast<size_t>(kd) * oh * ow);
      std::vector<double> dcol(static_cast<size_t>(kd) * oh * ow);
      const auto& xd = xc.data();
      const auto& wd = wc.data();
      const bool need_dx = xc.requires_grad();
      const bool need_dw = wc.requires_grad();
      for (int i = 0; i < n; ++i) {
        for (int g = 0; g < groups; ++g) {
          const double* gog =
              go.data() + (static_cast<size_t>(i) * cout + g * cog) * oh * ow;
          if (need_dw) {
            const double* xg =
                xd.data() + (static_cast<size_t>(i) * cin + g * cig) * h * wid;
            im2col(xg, cig, h, wid, kh, kw, sh, sw, ph, pw, oh, ow, col.data());
            double* dwg = wc.grad().data() + static_cast<size_t>(g) * cog * kd;
            gemm_nt(gog, col.data(), dwg, cog, oh * ow, kd, true);
          }
          if (need_dx) {
            const double* wg = wd.data() + static_cast<size_t>(g) * cog * kd;
            gemm_tn(wg, gog, dcol.data(), kd, cog, oh * ow, false);
            double* dxg = xc.grad().data() +
                          (static_cast<size_t>(i) * cin + g * cig) * h * wid;
            col2im_add(dcol.data(), cig, h, wid, kh, kw, sh, sw, ph, pw, oh,
                       ow, dxg);
          }
        }
      }
      if (bc.defined() && bc.requires_grad()) {
        auto& gb = bc.grad();
        size_t pos = 0;
        for (int i = 0; i < n; ++i)
          for (int c = 0; c < cout; ++c)
            for (int p = 0; p < oh * ow; ++p, ++pos)
              gb[static_cast<size_t>(c)] += go[pos];
      }
    });
  }
  return out;
}

Tensor maxpool2d(const Tensor& x, int kh, int kw, int sh, int sw, int ph,
                 int pw) {
  if (x.ndim() != 4) throw DimError("maxpool2d: expects 4-D input");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto dims = conv2d_out_dims(h, w, kh, kw, sh, sw, ph, pw);
  const int oh = dims.out_h, ow = dims.out_w;
  if (oh <= 0 || ow <= 0) throw DimError("maxpool2d: non-positive output");
  Tensor out = Tensor::zeros({n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<int64_t>>(out.data().size(), -1);
  const auto& xd = x.data();
  auto& od = out.data();
  size_t pos = 0;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const double* xc = xd.data() + (static_cast<size_t>(i) * c + ch) * h * w;
      const int64_t base = (static_cast<int64_t>(i) * c + ch) * h * w;
      for (int oi = 0; oi < oh; ++oi)
        for (int oj = 0; oj < ow; ++oj, ++pos) {
          double best = -std::numeric_limits<double>::infinity();
          int64_t best_idx = -1;
          for (int ki = 0; ki < kh; ++ki) {
            const int si = oi * sh - ph + ki;
            if (si < 0 || si >= h) continue;
            for (int kj = 0; kj < kw; ++kj) {
              const int sj = oj * sw - pw + kj;
              if (sj < 0 || sj >= w) continue;
              const double v = xc[static_cast<size_t>(si) * w + sj];
              if (v > best) {
                best = v;
                best_idx = base + static_cast<int64_t>(si) * w + sj;
              }
            }
          }
          od[pos] = best;
          (*argmax)[pos] = best_idx;
        }
    }
  if (want_record({&x})) {
    Tensor xc = x, oc = out;
    mark_and_record(out, [xc, oc, argmax]() mutable {
      const auto& go = oc.grad();
      auto& gx = xc.grad();
      for (size_t i = 0; i < go.size(); ++i)
        if ((*argmax)[i] >= 0) gx[static_cast<size_t>((*argmax)[i])] += go[i];
    });
  }
  return out;
}

Tensor avgpool2d(const Tensor& x, int kh, int kw, int sh, int sw, int ph,
                 int pw) {
  if (x.ndim() != 4) throw DimError("avgpool2d: expects 4-D input");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto dims = conv2d_out_dims(h, w, kh, kw, sh, sw, ph, pw);
  const int oh = dims.out_h, ow = dims.out_w;
  if (oh <= 0 || ow <= 0) throw DimError("avgpool2d: non-positive output");
  const double inv = 1.0 / (kh * kw);  // padded cells count as zeros
  Tensor out = Tensor::zeros({n, c, oh, ow});
  const auto& xd = x.data();
  auto& od = out.data();
  size_t pos = 0;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const double* xc = xd.data() + (static_cast<size_t>(i) * c + ch) * h * w;
      for (int oi = 0; oi < oh; ++oi)
        for (int oj = 0; oj < ow; ++oj, ++pos) {
          double acc = 0.0;
          for (int ki = 0; ki < kh; ++ki) {
            const int si = oi * sh - ph + ki;
            if (si < 0 || si >= h) continue;
            for (int kj = 0; kj < kw; ++kj) {
              const int sj = oj * sw - pw + kj;
              if (sj < 0 || sj >= w) continue;
              acc += xc[static_cast<size_t>(si) * w + sj];
            }
          }
          od[pos] = acc * inv;
        }
    }
  if (want_record({&x})) {
    Tensor xc = x, oc = out;
    mark_and_record(out, [xc, oc, n, c, h, w, kh, kw, sh, sw, ph, pw, oh, ow,
                          inv]() mutable {
      const auto& go = oc.grad();
      auto& gx = xc.grad();
      size_t pos = 0;
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
          double* gxc = gx.data() + (static_cast<size_t>(i) * c + ch) * h * w;
          for (int oi = 0; oi < oh; ++oi)
            for (int oj = 0; oj < ow; ++oj, ++pos) {
              const double g = go[pos] * inv;
              for (int ki = 0; ki < kh; ++ki) {
                const int si = oi * sh - ph + ki;
                if (si < 0 || si >= h) continue;
                for (int kj = 0; kj < kw; ++kj) {
                  const int sj = oj * sw - pw + kj;
                  if (sj >= 0 && sj < w) gxc[static_cast<size_t>(si) * w + sj] += g;
                }
              }
            }
        }
    });
  }
  return out;
}

Tensor global_avgpool(const Tensor& x) {
  if (x.ndim() != 4) throw DimError("global_avgpool: expects 4-D input");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const double inv = 1.0 / (static_cast<double>(h) * w);
  Tensor out = Tensor::zeros({n, c});
  const auto& xd = x.data();
  auto& od = out.data();
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const double* xc = xd.data() + (static_cast<size_t>(i) * c + ch) * h * w;
      double acc = 0.0;
      for (int p = 0; p < h * w; ++p) acc += xc[p];
      od[static_cast<size_t>(i) * c + ch] = acc * inv;
    }
  if (want_record({&x})) {
    Tensor xc = x, oc = out;
    mark_and_record(out, [xc, oc, n, c, h, w, inv]() mutable {
      const auto& go = oc.grad();
      auto& gx = xc.grad();
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
          const double g = go[static_cast<size_t>(i) * c + ch] * inv;
          double* gxc = gx.data() + (static_cast<size_t>(i) * c + ch) * h * w;
          for (int p = 0; p < h * w; ++p) gxc[p] += g;
        }
    });
  }
  return out;
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw DimError("concat: no inputs");
  const int nd = xs[0].ndim();
  if (nd != 2 && nd != 4) throw DimError("concat: expects 2-D or 4-D inputs");
  const int n = xs[0].dim(0);
  int64_t inner = nd == 4 ? static_cast<int64_t>(xs[0].dim(2)) * xs[0].dim(3)
                          : 1;
  int total_c = 0;
  for (const auto& x : xs) {
    if (x.ndim() != nd || x.dim(0) != n)
      throw DimError("concat: rank/batch mismatch");
    if (nd == 4 && (x.dim(2) != xs[0].dim(2) || x.dim(3) != xs[0].dim(3)))
      throw DimError("concat: spatial mismatch");
    total_c += x.dim(1);
  }
  std::vector<int> oshape = xs[0].shape();
  oshape[1] = total_c;
  Tensor out = Tensor::zeros(oshape);
  auto& od = out.data();
  for (int i = 0; i < n; ++i) {
    int64_t coff = 0;
    for (const auto& x : xs) {
      const int cx = x.dim(1);
      const auto& xd = x.data();
      std::copy(xd.begin() + static_cast<size_t>(i) * cx * inner,
                xd.begin() + static_cast<size_t>(i + 1) * cx * inner,
                od.begin() + (static_cast<size_t>(i) * total_c + coff) * inner);
      coff += cx;
    }
  }
  bool rec = grad_enabled();
  if (rec) {
    rec = false;
    for (const auto& x : xs)
      if (x.requires_grad()) rec = true;
  }
  if (rec) {
    std::vector<Tensor> xc = xs;
    Tensor oc = out;
    mark_and_record(out, [xc, oc, n, total_c, inner]() mutable {
      const auto& go = oc.grad();
      for (int i = 0; i < n; ++i) {
        int64_t coff = 0;
        for (auto& x : xc) {
          const int cx = x.dim(1);
          if (x.requires_grad()) {
            auto& gx = x.grad();
            const double* src =
                go.data() + (static_cast<size_t>(i) * total_c + coff) * inner;
            double* dst = gx.data() + static_cast<size_t>(i) * cx * inner;
            for (int64_t p = 0; p < cx * inner; ++p) dst[p] += src[p];
          }
          coff += cx;
        }
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  if (shape_numel(shape) != x.numel())
    throw DimError("reshape: element count mismatch");
  Tensor out = Tensor::from_data(std::move(shape), x.data());
  if (want_record({&x})) {
    Tensor xc = x, oc = out;
    mark_and_record(out, [xc, oc]() mutable {
      const auto& go = oc.grad();
      auto& gx = xc.grad();
      for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    });
  }
  return out;
}

Tensor flatten(const Tensor& x) {
  if (x.ndim() < 2) throw DimError("flatten: expects rank >= 2");
  int64_t rest = x.numel() / x.dim(0);
  return reshape(x, {x.dim(0), static_cast<int>(rest)});
}

Tensor channel_shuffle(const Tensor& x, int groups) {
  if (x.ndim() != 4) throw DimError("channel_shuffle: expects 4-D input");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (groups < 1 || c % groups != 0)
    throw DimError("channel_shuffle: channels not divisible by groups");
  const int k = c / groups;
  // input channel gi*k + ki lands at output channel ki*groups + gi
  std::vector<int> src_of(static_cast<size_t>(c));
  for (int gi = 0; gi < groups; ++gi)
    for (int ki = 0; ki < k; ++ki) src_of[static_cast<size_t>(ki) * groups + gi] = gi * k + ki;
  Tensor out = Tensor::zeros(x.shape());
  const auto& xd = x.data();
  auto& od = out.data();
  const int64_t inner = static_cast<int64_t>(h) * w;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      std::copy(
          xd.begin() + (static_cast<size_t>(i) * c + src_of[static_cast<size_t>(ch)]) * inner,
          xd.begin() + (static_cast<size_t>(i) * c + src_of[static_cast<size_t>(ch)] + 1) * inner,
          od.begin() + (static_cast<size_t>(i) * c + ch) * inner);
  if (want_record({&x})) {
    Tensor xc = x, oc = out;
    mark_and_record(out, [xc, oc, src_of, n, c, inner]() mutable {
      const auto& go = oc.grad();
      auto& gx = xc.grad();
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
          const double* src = go.data() + (static_cast<size_t>(i) * c + ch) * inner;
          double* dst =
              gx.data() + (static_cast<size_t>(i) * c + src_of[static_cast<size_t>(ch)]) * inner;
          for (int64_t p = 0; p < inner; ++p) dst[p] += src[p];
        }
    });
  }
  return out;
}

Tensor vstack(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw DimError("vstack: no inputs");
  const int d = rows[0].dim(1);
  int total = 0;
  for (const auto& r : rows) {
    if (r.ndim() != 2 || r.dim(1) != d) throw DimError("vstack: column mismatch");
    total += r.dim(0);
  }
  Tensor out = Tensor::zeros({total, d});
  auto& od = out.data();
  size_t off = 0;
  for (const auto& r : rows) {
    std::copy(r.data().begin(), r.data().end(), od.begin() + off);
    off += r.data().size();
  }
  bool rec = grad_enabled();
  if (rec) {
    rec = false;
    for (const auto& r : rows)
      if (r.requires_grad()) rec = true;
  }
  if (rec) {
    std::vector<Tensor> rc = rows;
    Tensor oc = out;
    mark_and_record(out, [rc, oc]() mutable {
      const auto& go = oc.grad();
      size_t off = 0;
      for (auto& r : rc) {
        const size_t sz = r.data().size();
        if (r.requires_grad()) {
          auto& gr = r.grad();
          for (size_t i = 0; i < sz; ++i) gr[i] += go[off + i];
        }
        off += sz;
      }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
  if (x.ndim() != 2) throw DimError("gather_rows: expects 2-D input");
  const int d = x.dim(1);
  const int r = x.dim(0);
  Tensor out = Tensor::zeros({static_cast<int>(idx.size()), d});
  auto& od = out.data();
  const auto& xd = x.data();
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= r) throw DimError("gather_rows: index out of range");
    std::copy(xd.begin() + static_cast<size_t>(idx[i]) * d,
              xd.begin() + static_cast<size_t>(idx[i] + 1) * d,
              od.begin() + i * d);
  }
  if (want_record({&x})) {
    Tensor xc = x, oc = out;
    auto ix = idx;
    mark_and_record(out, [xc, oc, ix, d]() mutable {
      const auto& go = oc.grad();
      auto& gx = xc.grad();
      for (size_t i = 0; i < ix.size(); ++i) {
        double* dst = gx.data() + static_cast<size_t>(ix[i]) * d;
        const double* src = go.data() + i * d;
        for (int p = 0; p < d; ++p) dst[p] += src[p];
      }
    });
  }
  return out;
}

Tensor scatter_add_rows(const Tensor& x, const std::vector<int>& idx,
                        int num_rows) {
  if (x.ndim() != 2) throw DimError("scatter_add_rows: expects 2-D input");
  if (static_cast<size_t>(x.dim(0)) != idx.size())
    throw DimError("scatter_add_rows: index count mismatch");
  const int d = x.dim(1);
  Tensor out = Tensor::zeros({num_rows, d});
  auto& od = out.data();
  const auto& xd = x.data();
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= num_rows)
      throw DimError("scatter_add_rows: index out of range");
    double* dst = od.data() + static_cast<size_t>(idx[i]) * d;
    const double* src = xd.data() + i * d;
    for (int p = 0; p < d; ++p) dst[p] += src[p];
  }
  if (want_record({&x})) {
    Tensor xc = x, oc = out;
    auto ix = idx;
    mark_and_record(out, [xc, oc, ix, d]() mutable {
      const auto& go = oc.grad();
      auto& gx = xc.grad();
      for (size_t i = 0; i < ix.size(); ++i) {
        const double* src = go.data() + static_cast<size_t>(ix[i]) * d;
        double* dst = gx.data() + i * d;
        for (int p = 0; p < d; ++p) dst[p] += src[p];
      }
    });
  }
  return out;
}

Tensor scale_rows(const Tensor& x, const std::vector<double>& s) {
  if (x.ndim() != 2 || static_cast<size_t>(x.dim(0)) != s.size())
    throw DimError("scale_rows: row count mismatch");
  const int d = x.dim(1);
  Tensor out = Tensor::zeros(x.shape());
  auto& od = out.data();
  const auto& xd = x.data();
  for (size_t i = 0; i < s.size(); ++i)
    for (int p = 0; p < d; ++p) od[i * d + p] = xd[i * d + p] * s[i];
  if (want_record({&x})) {
    Tensor xc = x, oc = out;
    auto sc = s;
    mark_and_record(out, [xc, oc, sc, d]() mutable {
      const auto& go = oc.grad();
      auto& gx = xc.grad();
      for (size_t i = 0; i < sc.size(); ++i)
        for (int p = 0; p < d; ++p) gx[i * d + p] += go[i * d + p] * sc[i];
    });
  }
  return out;
}

namespace {

struct BnDims {
  int n, c;
  int64_t inner;   // H*W (1 for 2-D input)
  int64_t m;       // reduction count per channel
};

BnDims bn_dims(const Tensor& x) {
  BnDims d{};
  if (x.ndim() == 4) {
    d.n = x.dim(0);
    d.c = x.dim(1);
    d.inner = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  } else if (x.ndim() == 2) {
    d.n = x.dim(0);
    d.c = x.dim(1);
    d.inner = 1;
  } else {
    throw DimError("batchnorm: expects 2-D or 4-D input");
  }
  d.m = static_cast<int64_t>(d.n) * d.inner;
  return d;
}

}  // namespace

Tensor batchnorm_train(const Tensor& x, const Tensor& gamma,
                       const Tensor& beta, Tensor running_mean,
                       Tensor running_var, double momentum, double eps) {
  const BnDims d = bn_dims(x);
  if (gamma.numel() != d.c || beta.numel() != d.c)
    throw DimError("batchnorm: parameter size mismatch");
  const auto& xd = x.data();
  std::vector<double> mu(static_cast<size_t>(d.c), 0.0);
  std::vector<double> var(static_cast<size_t>(d.c), 0.0);
  auto at = [&](int i, int ch, int64_t p) -> size_t {
    return (static_cast<size_t>(i) * d.c + ch) * d.inner + static_cast<size_t>(p);
  };
  for (int i = 0; i < d.n; ++i)
    for (int ch = 0; ch < d.c; ++ch)
      for (int64_t p = 0; p < d.inner; ++p) mu[static_cast<size_t>(ch)] += xd[at(i, ch, p)];
  for (auto& v : mu) v /= static_cast<double>(d.m);
  for (int i = 0; i < d.n; ++i)
    for (int ch = 0; ch < d.c; ++ch)
      for (int64_t p = 0; p < d.inner; ++p) {
        const double diff = xd[at(i, ch, p)] - mu[static_cast<size_t>(ch)];
        var[static_cast<size_t>(ch)] += diff * diff;
      }
  for (auto& v : var) v /= static_cast<double>(d.m);

  // running statistics track the unbiased variance
  if (running_mean.defined() && running_var.defined()) {
    auto& rm = running_mean.data();
    auto& rv = running_var.data();
    const double unbias =
        d.m > 1 ? static_cast<double>(d.m) / static_cast<double>(d.m - 1) : 1.0;
    for (int ch = 0; ch < d.c; ++ch) {
      rm[static_cast<size_t>(ch)] =
          (1.0 - momentum) * rm[static_cast<size_t>(ch)] + momentum * mu[static_cast<size_t>(ch)];
      rv[static_cast<size_t>(ch)] = (1.0 - momentum) * rv[static_cast<size_t>(ch)] +
                     momentum * var[static_cast<size_t>(ch)] * unbias;
    }
  }

  std::vector<double> inv_std(static_cast<size_t>(d.c));
  for (int ch = 0; ch < d.c; ++ch)
    inv_std[static_cast<size_t>(ch)] = 1.0 / std::sqrt(var[static_cast<size_t>(ch)] + eps);

  Tensor out = Tensor::zeros(x.shape());
  auto xhat = std::make_shared<std::vector<double>>(xd.size());
  auto& od = out.data();
  const auto& gd = gamma.data();
  const auto& bd = beta.data();
  for (int i = 0; i < d.n; ++i)
    for (int ch = 0; ch < d.c; ++ch)
      for (int64_t p = 0; p < d.inner; ++p) {
        const size_t q = at(i, ch, p);
        (*xhat)[q] = (xd[q] - mu[static_cast<size_t>(ch)]) * inv_std[static_cast<size_t>(ch)];
        od[q] = gd[static_cast<size_t>(ch)] * (*xhat)[q] + bd[static_cast<size_t>(ch)];
      }

  if (want_record({&x, &gamma, &beta})) {
    Tensor xc = x, gc = gamma, bc = beta, oc = out;
    mark_and_record(out, [xc, gc, bc, oc, xhat, inv_std, d]() mutable {
      auto at = [&d](int i, int ch, int64_t p) -> size_t {
        return (static_cast<size_t>(i) * d.c + ch) * d.inner +
               static_cast<size_t>(p);
      };
      const auto& go = oc.grad();
      const auto& gv = gc.data();
      // per-channel reductions of dL/dy and dL/dy * xhat
      std::vector<double> sum_dy(static_cast<size_t>(d.c), 0.0);
      std::vector<double> sum_dy_xhat(static_cast<size_t>(d.c), 0.0);
      for (int i = 0; i < d.n; ++i)
        for (int ch = 0; ch < d.c; ++ch)
          for (int64_t p = 0; p < d.inner; ++p) {
            const size_t q = at(i, ch, p);
            sum_dy[static_cast<size_t>(ch)] += go[q];
            sum_dy_xhat[static_cast<size_t>(ch)] += go[q] * (*xhat)[q];
          }
      if (gc.requires_grad()) {
        auto& gg = gc.grad();
        for (int ch = 0; ch < d.c; ++ch) gg[static_cast<size_t>(ch)] += sum_dy_xhat[static_cast<size_t>(ch)];
      }
      if (bc.requires_grad()) {
        auto& gb = bc.grad();
        for (int ch = 0; ch < d.c; ++ch) gb[static_cast<size_t>(ch)] += sum_dy[static_cast<size_t>(ch)];
      }
      if (xc.requires_grad()) {
        auto& gx = xc.grad();
        const double inv_m = 1.0 / static_cast<double>(d.m);
        for (int i = 0; i < d.n; ++i)
          for (int ch = 0; ch < d.c; ++ch)
            for (int64_t p = 0; p < d.inner; ++p) {
              const size_t q = at(i, ch, p);
              const double dxhat = go[q] * gv[static_cast<size_t>(ch)];
              gx[q] += inv_std[static_cast<size_t>(ch)] *
                       (dxhat - inv_m * gv[static_cast<size_t>(ch)] * sum_dy[static_cast<size_t>(ch)] -
                        inv_m * gv[static_cast<size_t>(ch)] * (*xhat)[q] * sum_dy_xhat[static_cast<size_t>(ch)]);
            }
      }
    });
  }
  return out;
}

Tensor batchnorm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      const Tensor& mean, const Tensor& var, double eps) {
  const BnDims d = bn_dims(x);
  if (gamma.numel() != d.c || beta.numel() != d.c || mean.numel() != d.c ||
      var.numel() != d.c)
    throw DimError("batchnorm_eval: parameter size mismatch");
  Tensor out = Tensor::zeros(x.shape());
  const auto& xd = x.data();
  auto& od = out.data();
  const auto& gd = gamma.data();
  const auto& bd = beta.data();
  const auto& md = mean.data();
  const auto& vd = var.data();
  std::vector<double> inv_std(static_cast<size_t>(d.c));
  for (int ch = 0; ch < d.c; ++ch)
    inv_std[static_cast<size_t>(ch)] = 1.0 / std::sqrt(vd[static_cast<size_t>(ch)] + eps);
  size_t pos = 0;
  for (int i = 0; i < d.n; ++i)
    for (int ch = 0; ch < d.c; ++ch)
      for (int64_t p = 0; p < d.inner; ++p, ++pos)
        od[pos] = gd[static_cast<size_t>(ch)] * (xd[pos] - md[static_cast<size_t>(ch)]) * inv_std[static_cast<size_t>(ch)] +
                  bd[static_cast<size_t>(ch)];
  if (want_record({&x, &gamma, &beta})) {
    Tensor xc = x, gc = gamma, bc = beta, oc = out;
    std::vector<double> mean_v = md;
    mark_and_record(out, [xc, gc, bc, oc, inv_std, mean_v, d]() mutable {
      const auto& go = oc.grad();
      const auto& gv = gc.data();
      const auto& xd = xc.data();
      size_t pos = 0;
      for (int i = 0; i < d.n; ++i)
        for (int ch = 0; ch < d.c; ++ch)
          for (int64_t p = 0; p < d.inner; ++p, ++pos) {
            const size_t cs = static_cast<size_t>(ch);
            if (xc.requires_grad())
              xc.grad()[pos] += go[pos] * gv[cs] * inv_std[cs];
            if (gc.requires_grad())
              gc.grad()[cs] += go[pos] * (xd[pos] - mean_v[cs]) * inv_std[cs];
            if (bc.requires_grad()) bc.grad()[cs] += go[pos];
          }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor out = Tensor::scalar(acc);
  if (want_record({&x})) {
    Tensor xc = x, oc = out;
    mark_and_record(out, [xc, oc]() mutable {
      const double g = oc.grad()[0];
      auto& gx = xc.grad();
      for (auto& v : gx) v += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.numel());
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor out = Tensor::scalar(acc * inv);
  if (want_record({&x})) {
    Tensor xc = x, oc = out;
    mark_and_record(out, [xc, oc, inv]() mutable {
      const double g = oc.grad()[0] * inv;
      auto& gx = xc.grad();
      for (auto& v : gx) v += g;
    });
  }
  return out;
}

Tensor mse(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mse");
  const auto& da = a.data();
  const auto& db = b.data();
  const double inv = 1.0 / static_cast<double>(a.numel());
  double acc = 0.0;
  for (size_t i = 0; i < da.size(); ++i) {
    const double diff = da[i] - db[i];
    acc += diff * diff;
  }
  Tensor out = Tensor::scalar(acc * inv);
  if (want_record({&a, &b})) {
    Tensor ac = a, bc = b, oc = out;
    mark_and_record(out, [ac, bc, oc, inv]() mutable {
      const double g = oc.grad()[0];
      const auto& va = ac.data();
      const auto& vb = bc.data();
      for (size_t i = 0; i < va.size(); ++i) {
        const double d = 2.0 * (va[i] - vb[i]) * inv * g;
        if (ac.requires_grad()) ac.grad()[i] += d;
        if (bc.requires_grad()) bc.grad()[i] -= d;
      }
    });
  }
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<int>& labels) {
  if (logits.ndim() != 2) throw DimError("softmax_cross_entropy: expects 2-D logits");
  const int n = logits.dim(0), k = logits.dim(1);
  if (static_cast<size_t>(n) != labels.size())
    throw DimError("softmax_cross_entropy: label count mismatch");
  const auto& ld = logits.data();
  auto probs = std::make_shared<std::vector<double>>(ld.size());
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double* row = ld.data() + static_cast<size_t>(i) * k;
    double* prow = probs->data() + static_cast<size_t>(i) * k;
    double mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < k; ++j) {
      prow[j] = std::exp(row[j] - mx);
      z += prow[j];
    }
    for (int j = 0; j < k; ++j) prow[j] /= z;
    if (labels[static_cast<size_t>(i)] < 0 || labels[static_cast<size_t>(i)] >= k)
      throw DimError("softmax_cross_entropy: label out of range");
    loss -= std::log(std::max(prow[labels[static_cast<size_t>(i)]], 1e-300));
  }
  Tensor out = Tensor::scalar(loss / n);
  if (want_record({&logits})) {
    Tensor lc = logits, oc = out;
    auto lab = labels;
    mark_and_record(out, [lc, oc, probs, lab, n, k]() mutable {
      const double g = oc.grad()[0] / n;
      auto& gl = lc.grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) {
          const size_t q = static_cast<size_t>(i) * k + j;
          gl[q] += g * ((*probs)[q] - (j == lab[static_cast<size_t>(i)] ? 1.0 : 0.0));
        }
    });
  }
  return out;
}

}  // namespace gprune::num

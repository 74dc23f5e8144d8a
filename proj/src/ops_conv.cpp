#include <Eigen/Dense>

#include "ops_common.hpp"

namespace mstwins {

using opdet::finish;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

struct ConvDims {
  int64_t batch, cin, h, w;
  int64_t cout, cin_g, kh, kw;
  int64_t stride, pad, groups;
  int64_t oh, ow;
  int64_t cout_g;
};

void check_4d(const char* op, const Tensor& x) {
  MST_CHECK(x.dim() == 4, std::string(op) + ": expected (B,C,H,W), got " + shape_str(x.shape()));
}

// gathers one sample/group into (cin_g*kh*kw, oh*ow), zero filled outside bounds
void im2col(const double* x, const ConvDims& d, int64_t b, int64_t g, double* cols) {
  const int64_t plane = d.h * d.w;
  const double* xb = x + (b * d.cin + g * d.cin_g) * plane;
  int64_t row = 0;
  for (int64_t c = 0; c < d.cin_g; ++c) {
    for (int64_t ky = 0; ky < d.kh; ++ky) {
      for (int64_t kx = 0; kx < d.kw; ++kx, ++row) {
        double* dst = cols + row * d.oh * d.ow;
        for (int64_t oy = 0; oy < d.oh; ++oy) {
          const int64_t iy = oy * d.stride + ky - d.pad;
          if (iy < 0 || iy >= d.h) {
            for (int64_t ox = 0; ox < d.ow; ++ox) dst[oy * d.ow + ox] = 0.0;
            continue;
          }
          const double* src = xb + c * plane + iy * d.w;
          for (int64_t ox = 0; ox < d.ow; ++ox) {
            const int64_t ix = ox * d.stride + kx - d.pad;
            dst[oy * d.ow + ox] = (ix >= 0 && ix < d.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

// scatter-adds (cin_g*kh*kw, oh*ow) back into the sample/group input plane
void col2im_add(const double* cols, const ConvDims& d, int64_t b, int64_t g, double* dx) {
  const int64_t plane = d.h * d.w;
  double* xb = dx + (b * d.cin + g * d.cin_g) * plane;
  int64_t row = 0;
  for (int64_t c = 0; c < d.cin_g; ++c) {
    for (int64_t ky = 0; ky < d.kh; ++ky) {
      for (int64_t kx = 0; kx < d.kw; ++kx, ++row) {
        const double* src = cols + row * d.oh * d.ow;
        for (int64_t oy = 0; oy < d.oh; ++oy) {
          const int64_t iy = oy * d.stride + ky - d.pad;
          if (iy < 0 || iy >= d.h) continue;
          double* dst = xb + c * plane + iy * d.w;
          for (int64_t ox = 0; ox < d.ow; ++ox) {
            const int64_t ix = ox * d.stride + kx - d.pad;
            if (ix >= 0 && ix < d.w) dst[ix] += src[oy * d.ow + ox];
          }
        }
      }
    }
  }
}

// depthwise path: one channel per group, direct taps, no im2col
void depthwise_forward(const double* x, const double* w, const ConvDims& d, double* y) {
  const int64_t plane = d.h * d.w;
  const int64_t oplane = d.oh * d.ow;
#pragma omp parallel for schedule(static)
  for (int64_t bc = 0; bc < d.batch * d.cin; ++bc) {
    const int64_t c = bc % d.cin;
    const double* xp = x + bc * plane;
    const double* wp = w + c * d.kh * d.kw;
    double* yp = y + bc * oplane;
    for (int64_t oy = 0; oy < d.oh; ++oy) {
      for (int64_t ox = 0; ox < d.ow; ++ox) {
        double acc = 0.0;
        for (int64_t ky = 0; ky < d.kh; ++ky) {
          const int64_t iy = oy * d.stride + ky - d.pad;
          if (iy < 0 || iy >= d.h) continue;
          for (int64_t kx = 0; kx < d.kw; ++kx) {
            const int64_t ix = ox * d.stride + kx - d.pad;
            if (ix >= 0 && ix < d.w) acc += wp[ky * d.kw + kx] * xp[iy * d.w + ix];
          }
        }
        yp[oy * d.ow + ox] = acc;
      }
    }
  }
}

void depthwise_backward(const double* x, const double* w, const double* g, const ConvDims& d,
                        double* dx, double* dw) {
  const int64_t plane = d.h * d.w;
  const int64_t oplane = d.oh * d.ow;
  if (dx) {
#pragma omp parallel for schedule(static)
    for (int64_t bc = 0; bc < d.batch * d.cin; ++bc) {
      const int64_t c = bc % d.cin;
      const double* gp = g + bc * oplane;
      const double* wp = w + c * d.kh * d.kw;
      double* dxp = dx + bc * plane;
      for (int64_t oy = 0; oy < d.oh; ++oy) {
        for (int64_t ox = 0; ox < d.ow; ++ox) {
          const double gv = gp[oy * d.ow + ox];
          for (int64_t ky = 0; ky < d.kh; ++ky) {
            const int64_t iy = oy * d.stride + ky - d.pad;
            if (iy < 0 || iy >= d.h) continue;
            for (int64_t kx = 0; kx < d.kw; ++kx) {
              const int64_t ix = ox * d.stride + kx - d.pad;
              if (ix >= 0 && ix < d.w) dxp[iy * d.w + ix] += wp[ky * d.kw + kx] * gv;
            }
          }
        }
      }
    }
  }
  if (dw) {
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < d.cin; ++c) {
      double* dwp = dw + c * d.kh * d.kw;
      for (int64_t b = 0; b < d.batch; ++b) {
        const double* gp = g + (b * d.cin + c) * oplane;
        const double* xp = x + (b * d.cin + c) * plane;
        for (int64_t ky = 0; ky < d.kh; ++ky) {
          for (int64_t kx = 0; kx < d.kw; ++kx) {
            double acc = 0.0;
            for (int64_t oy = 0; oy < d.oh; ++oy) {
              const int64_t iy = oy * d.stride + ky - d.pad;
              if (iy < 0 || iy >= d.h) continue;
              const double* grow = gp + oy * d.ow;
              const double* xrow = xp + iy * d.w;
              for (int64_t ox = 0; ox < d.ow; ++ox) {
                const int64_t ix = ox * d.stride + kx - d.pad;
                if (ix >= 0 && ix < d.w) acc += grow[ox] * xrow[ix];
              }
            }
            dwp[ky * d.kw + kx] += acc;
          }
        }
      }
    }
  }
}

bool is_depthwise(const ConvDims& d) {
  return d.groups == d.cin && d.cout == d.cin && d.cin_g == 1;
}

bool is_pointwise(const ConvDims& d) {
  return d.groups == 1 && d.kh == 1 && d.kw == 1 && d.stride == 1 && d.pad == 0;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t stride,
              int64_t padding, int64_t groups) {
  check_4d("conv2d", x);
  MST_CHECK(w.dim() == 4, "conv2d: weight must be (Cout,Cin/g,kh,kw), got " + shape_str(w.shape()));
  MST_CHECK(stride >= 1, "conv2d: stride must be >= 1");
  MST_CHECK(padding >= 0, "conv2d: padding must be >= 0");
  MST_CHECK(groups >= 1, "conv2d: groups must be >= 1");

  ConvDims d;
  d.batch = x.size(0);
  d.cin = x.size(1);
  d.h = x.size(2);
  d.w = x.size(3);
  d.cout = w.size(0);
  d.cin_g = w.size(1);
  d.kh = w.size(2);
  d.kw = w.size(3);
  d.stride = stride;
  d.pad = padding;
  d.groups = groups;
  MST_CHECK(d.cin % groups == 0 && d.cout % groups == 0, "conv2d: channels not divisible by groups");
  MST_CHECK(d.cin_g == d.cin / groups,
            "conv2d: weight expects " + std::to_string(d.cin_g * groups) + " input channels, got " +
                std::to_string(d.cin));
  MST_CHECK(d.kh <= d.h + 2 * padding && d.kw <= d.w + 2 * padding,
            "conv2d: kernel larger than padded input");
  d.oh = (d.h + 2 * padding - d.kh) / stride + 1;
  d.ow = (d.w + 2 * padding - d.kw) / stride + 1;
  d.cout_g = d.cout / groups;
  if (bias.defined()) {
    MST_CHECK(bias.dim() == 1 && bias.numel() == d.cout, "conv2d: bias shape mismatch");
  }

  Tensor out = make_tensor({d.batch, d.cout, d.oh, d.ow});
  const int64_t krows = d.cin_g * d.kh * d.kw;
  const int64_t onum = d.oh * d.ow;
  const double* px = x.data();
  const double* pw = w.data();
  double* po = out.data();

  if (is_depthwise(d)) {
    depthwise_forward(px, pw, d, po);
  } else if (is_pointwise(d)) {
    // x[b] already is the (Cin, H*W) matrix
#pragma omp parallel for schedule(static) if (d.batch > 1)
    for (int64_t b = 0; b < d.batch; ++b) {
      CMap W(pw, d.cout, d.cin);
      CMap X(px + b * d.cin * onum, d.cin, onum);
      MMap O(po + b * d.cout * onum, d.cout, onum);
      O.noalias() = W * X;
    }
  } else {
#pragma omp parallel for schedule(static) if (d.batch > 1)
    for (int64_t b = 0; b < d.batch; ++b) {
      std::vector<double> cols(static_cast<size_t>(krows * onum));
      for (int64_t g = 0; g < d.groups; ++g) {
        im2col(px, d, b, g, cols.data());
        CMap W(pw + g * d.cout_g * krows, d.cout_g, krows);
        CMap Cols(cols.data(), krows, onum);
        MMap O(po + (b * d.cout + g * d.cout_g) * onum, d.cout_g, onum);
        O.noalias() = W * Cols;
      }
    }
  }
  if (bias.defined()) {
    const double* pbias = bias.data();
    for (int64_t b = 0; b < d.batch; ++b) {
      for (int64_t c = 0; c < d.cout; ++c) {
        double* dst = po + (b * d.cout + c) * onum;
        const double bv = pbias[c];
        for (int64_t i = 0; i < onum; ++i) dst[i] += bv;
      }
    }
  }

  return finish("conv2d", out, {&x, &w, &bias}, [x, w, bias, out, d, krows, onum]() {
    const double* g = out.storage()->grad.data();
    const double* px2 = x.data();
    const double* pw2 = w.data();

    if (is_depthwise(d) && (x.requires_grad() || w.requires_grad())) {
      depthwise_backward(px2, pw2, g, d,
                         x.requires_grad() ? x.storage()->grad_buffer().data() : nullptr,
                         w.requires_grad() ? w.storage()->grad_buffer().data() : nullptr);
    } else if (is_pointwise(d)) {
      if (w.requires_grad()) {
        double* dw = w.storage()->grad_buffer().data();
        for (int64_t b = 0; b < d.batch; ++b) {
          CMap G(g + b * d.cout * onum, d.cout, onum);
          CMap X(px2 + b * d.cin * onum, d.cin, onum);
          MMap dW(dw, d.cout, d.cin);
          dW.noalias() += G * X.transpose();
        }
      }
      if (x.requires_grad()) {
        double* dx = x.storage()->grad_buffer().data();
#pragma omp parallel for schedule(static) if (d.batch > 1)
        for (int64_t b = 0; b < d.batch; ++b) {
          CMap W(pw2, d.cout, d.cin);
          CMap G(g + b * d.cout * onum, d.cout, onum);
          MMap dX(dx + b * d.cin * onum, d.cin, onum);
          dX.noalias() += W.transpose() * G;
        }
      }
    } else {
      if (w.requires_grad()) {
        double* dw = w.storage()->grad_buffer().data();
        std::vector<double> cols(static_cast<size_t>(krows * onum));
        for (int64_t b = 0; b < d.batch; ++b) {
          for (int64_t gi = 0; gi < d.groups; ++gi) {
            im2col(px2, d, b, gi, cols.data());
            CMap G(g + (b * d.cout + gi * d.cout_g) * onum, d.cout_g, onum);
            CMap Cols(cols.data(), krows, onum);
            MMap dW(dw + gi * d.cout_g * krows, d.cout_g, krows);
            dW.noalias() += G * Cols.transpose();
          }
        }
      }
      if (x.requires_grad()) {
        double* dx = x.storage()->grad_buffer().data();
#pragma omp parallel for schedule(static) if (d.batch > 1)
        for (int64_t b = 0; b < d.batch; ++b) {
          std::vector<double> dcols(static_cast<size_t>(krows * onum));
          for (int64_t gi = 0; gi < d.groups; ++gi) {
            CMap W(pw2 + gi * d.cout_g * krows, d.cout_g, krows);
            CMap G(g + (b * d.cout + gi * d.cout_g) * onum, d.cout_g, onum);
            MMap dCols(dcols.data(), krows, onum);
            dCols.noalias() = W.transpose() * G;
            col2im_add(dcols.data(), d, b, gi, dx);
          }
        }
      }
    }
    if (bias.defined() && bias.requires_grad()) {
      double* db = bias.storage()->grad_buffer().data();
      for (int64_t b = 0; b < d.batch; ++b) {
        for (int64_t c = 0; c < d.cout; ++c) {
          const double* src = g + (b * d.cout + c) * onum;
          double acc = 0.0;
          for (int64_t i = 0; i < onum; ++i) acc += src[i];
          db[c] += acc;
        }
      }
    }
  });
}

Tensor avgpool2d(const Tensor& x, int64_t kernel, int64_t stride) {
  check_4d("avgpool2d", x);
  MST_CHECK(kernel >= 1 && stride >= 1, "avgpool2d: kernel and stride must be >= 1");
  const int64_t batch = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  MST_CHECK(h >= kernel && w >= kernel, "avgpool2d: kernel larger than input");
  const int64_t oh = (h - kernel) / stride + 1;
  const int64_t ow = (w - kernel) / stride + 1;
  Tensor out = make_tensor({batch, c, oh, ow});
  const double* px = x.data();
  double* po = out.data();
  const double inv = 1.0 / static_cast<double>(kernel * kernel);
  for (int64_t bc = 0; bc < batch * c; ++bc) {
    const double* plane = px + bc * h * w;
    double* oplane = po + bc * oh * ow;
    for (int64_t oy = 0; oy < oh; ++oy) {
      for (int64_t ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (int64_t ky = 0; ky < kernel; ++ky) {
          const double* srow = plane + (oy * stride + ky) * w + ox * stride;
          for (int64_t kx = 0; kx < kernel; ++kx) acc += srow[kx];
        }
        oplane[oy * ow + ox] = acc * inv;
      }
    }
  }
  return finish("avgpool2d", out, {&x}, [x, out, kernel, stride, batch, c, h, w, oh, ow, inv]() {
    if (!x.requires_grad()) return;
    const double* g = out.storage()->grad.data();
    double* dx = x.storage()->grad_buffer().data();
    for (int64_t bc = 0; bc < batch * c; ++bc) {
      double* plane = dx + bc * h * w;
      const double* gplane = g + bc * oh * ow;
      for (int64_t oy = 0; oy < oh; ++oy) {
        for (int64_t ox = 0; ox < ow; ++ox) {
          const double gv = gplane[oy * ow + ox] * inv;
          for (int64_t ky = 0; ky < kernel; ++ky) {
            double* drow = plane + (oy * stride + ky) * w + ox * stride;
            for (int64_t kx = 0; kx < kernel; ++kx) drow[kx] += gv;
          }
        }
      }
    }
  });
}

Tensor global_avgpool(const Tensor& x) {
  check_4d("global_avgpool", x);
  const int64_t batch = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  Tensor out = make_tensor({batch, c, 1, 1});
  const double* px = x.data();
  double* po = out.data();
  const double inv = 1.0 / static_cast<double>(h * w);
  for (int64_t bc = 0; bc < batch * c; ++bc) {
    const double* plane = px + bc * h * w;
    double acc = 0.0;
    for (int64_t i = 0; i < h * w; ++i) acc += plane[i];
    po[bc] = acc * inv;
  }
  return finish("global_avgpool", out, {&x}, [x, out, batch, c, h, w, inv]() {
    if (!x.requires_grad()) return;
    const double* g = out.storage()->grad.data();
    double* dx = x.storage()->grad_buffer().data();
    for (int64_t bc = 0; bc < batch * c; ++bc) {
      const double gv = g[bc] * inv;
      double* plane = dx + bc * h * w;
      for (int64_t i = 0; i < h * w; ++i) plane[i] += gv;
    }
  });
}

Tensor upsample_nearest(const Tensor& x, int64_t factor) {
  check_4d("upsample_nearest", x);
  MST_CHECK(factor >= 1, "upsample_nearest: factor must be >= 1");
  const int64_t batch = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  const int64_t oh = h * factor, ow = w * factor;
  Tensor out = make_tensor({batch, c, oh, ow});
  const double* px = x.data();
  double* po = out.data();
  for (int64_t bc = 0; bc < batch * c; ++bc) {
    const double* plane = px + bc * h * w;
    double* oplane = po + bc * oh * ow;
    for (int64_t oy = 0; oy < oh; ++oy) {
      const double* srow = plane + (oy / factor) * w;
      double* drow = oplane + oy * ow;
      for (int64_t ox = 0; ox < ow; ++ox) drow[ox] = srow[ox / factor];
    }
  }
  return finish("upsample_nearest", out, {&x}, [x, out, factor, batch, c, h, w, oh, ow]() {
    if (!x.requires_grad()) return;
    const double* g = out.storage()->grad.data();
    double* dx = x.storage()->grad_buffer().data();
    for (int64_t bc = 0; bc < batch * c; ++bc) {
      const double* gplane = g + bc * oh * ow;
      double* plane = dx + bc * h * w;
      for (int64_t oy = 0; oy < oh; ++oy) {
        double* drow = plane + (oy / factor) * w;
        const double* grow = gplane + oy * ow;
        for (int64_t ox = 0; ox < ow; ++ox) drow[ox / factor] += grow[ox];
      }
    }
  });
}

Tensor pad2d(const Tensor& x, int64_t top, int64_t bottom, int64_t left, int64_t right) {
  check_4d("pad2d", x);
  MST_CHECK(top >= 0 && bottom >= 0 && left >= 0 && right >= 0, "pad2d: negative padding");
  const int64_t batch = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  const int64_t oh = h + top + bottom, ow = w + left + right;
  Tensor out = Tensor::zeros({batch, c, oh, ow});
  const double* px = x.data();
  double* po = out.data();
  for (int64_t bc = 0; bc < batch * c; ++bc) {
    const double* plane = px + bc * h * w;
    double* oplane = po + bc * oh * ow;
    for (int64_t y = 0; y < h; ++y) {
      std::copy(plane + y * w, plane + (y + 1) * w, oplane + (y + top) * ow + left);
    }
  }
  return finish("pad2d", out, {&x}, [x, out, top, left, batch, c, h, w, oh, ow]() {
    if (!x.requires_grad()) return;
    const double* g = out.storage()->grad.data();
    double* dx = x.storage()->grad_buffer().data();
    for (int64_t bc = 0; bc < batch * c; ++bc) {
      const double* gplane = g + bc * oh * ow;
      double* plane = dx + bc * h * w;
      for (int64_t y = 0; y < h; ++y) {
        const double* grow = gplane + (y + top) * ow + left;
        double* drow = plane + y * w;
        for (int64_t i = 0; i < w; ++i) drow[i] += grow[i];
      }
    }
  });
}

Tensor crop2d(const Tensor& x, int64_t top, int64_t left, int64_t height, int64_t width) {
  check_4d("crop2d", x);
  const int64_t batch = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  MST_CHECK(top >= 0 && left >= 0 && height >= 1 && width >= 1 && top + height <= h &&
                left + width <= w,
            "crop2d: window out of bounds");
  Tensor out = make_tensor({batch, c, height, width});
  const double* px = x.data();
  double* po = out.data();
  for (int64_t bc = 0; bc < batch * c; ++bc) {
    const double* plane = px + bc * h * w;
    double* oplane = po + bc * height * width;
    for (int64_t y = 0; y < height; ++y) {
      std::copy(plane + (y + top) * w + left, plane + (y + top) * w + left + width,
                oplane + y * width);
    }
  }
  return finish("crop2d", out, {&x}, [x, out, top, left, height, width, batch, c, h, w]() {
    if (!x.requires_grad()) return;
    const double* g = out.storage()->grad.data();
    double* dx = x.storage()->grad_buffer().data();
    for (int64_t bc = 0; bc < batch * c; ++bc) {
      const double* gplane = g + bc * height * width;
      double* plane = dx + bc * h * w;
      for (int64_t y = 0; y < height; ++y) {
        double* drow = plane + (y + top) * w + left;
        const double* grow = gplane + y * width;
        for (int64_t i = 0; i < width; ++i) drow[i] += grow[i];
      }
    }
  });
}

}  // namespace mstwins

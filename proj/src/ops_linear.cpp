// GEMM-backed kernels: convolution (im2col) and the all-pairs correlation volume.
#include <cmath>

#include <Eigen/Core>

#include "xraft/errors.hpp"
#include "xraft/ops.hpp"

namespace xraft::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

// Products run on owned copies. Eigen chooses vectorised paths from pointer
// alignment, so products over mapped tensor memory could round differently
// depending on where the allocator placed a buffer.
RowMat owned(const double* p, std::int64_t rows, std::int64_t cols) { return ConstMatMap(p, rows, cols); }

struct ConvGeometry {
  std::int64_t n, cin, h, w, cout, kh, kw, ho, wo;
  int stride, padding;

  std::int64_t k() const { return cin * kh * kw; }
  std::int64_t p() const { return ho * wo; }
  bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1 && padding == 0; }
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  if (input.rank() != 4) throw ShapeError("conv2d: input must be [N,C,H,W], got " + shape_str(input.shape()));
  if (weight.rank() != 4) throw ShapeError("conv2d: weight must be [Cout,Cin,kh,kw], got " + shape_str(weight.shape()));
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (padding < 0) throw ShapeError("conv2d: padding must be >= 0");
  ConvGeometry g{};
  g.n = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = stride;
  g.padding = padding;
  if (weight.dim(1) != g.cin) {
    throw ShapeError("conv2d: weight expects " + std::to_string(weight.dim(1)) + " input channels, input has " +
                     std::to_string(g.cin));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout)) {
    throw ShapeError("conv2d: bias must be [" + std::to_string(g.cout) + "], got " + shape_str(bias.shape()));
  }
  if (g.h + 2 * padding < g.kh || g.w + 2 * padding < g.kw) {
    throw ShapeError("conv2d: kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                     " does not fit padded input " + std::to_string(g.h + 2 * padding) + "x" +
                     std::to_string(g.w + 2 * padding));
  }
  g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
  g.wo = (g.w + 2 * padding - g.kw) / stride + 1;
  return g;
}

void im2col(const double* x, const ConvGeometry& g, double* cols) {
  for (std::int64_t c = 0; c < g.cin; ++c) {
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        double* row = cols + ((c * g.kh + i) * g.kw + j) * g.p();
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.padding + i;
          double* out = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(out, out + g.wo, 0.0);
            continue;
          }
          const double* in = x + (c * g.h + iy) * g.w;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.padding + j;
            out[ox] = (ix >= 0 && ix < g.w) ? in[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* dx) {
  for (std::int64_t c = 0; c < g.cin; ++c) {
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        const double* row = cols + ((c * g.kh + i) * g.kw + j) * g.p();
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.padding + i;
          if (iy < 0 || iy >= g.h) continue;
          double* out = dx + (c * g.h + iy) * g.w;
          const double* in = row + oy * g.wo;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.padding + j;
            if (ix >= 0 && ix < g.w) out[ix] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  const ConvGeometry g = conv_geometry(input, weight, bias, stride, padding);
  const std::int64_t K = g.k(), P = g.p();
  std::vector<double> out(static_cast<std::size_t>(g.n * g.cout * P));
  RowMat cols(K, P);
  const RowMat wm = owned(weight.values().data(), g.cout, K);
  const double* x = input.values().data();
  for (std::int64_t n = 0; n < g.n; ++n) {
    const double* xn = x + n * g.cin * g.h * g.w;
    if (g.is_pointwise()) {
      std::copy(xn, xn + K * P, cols.data());
    } else {
      im2col(xn, g, cols.data());
    }
    MatMap y(out.data() + n * g.cout * P, g.cout, P);
    y = wm * cols;
    if (bias.defined()) {
      for (std::int64_t o = 0; o < g.cout; ++o) y.row(o).array() += bias[o];
    }
  }
  const bool rec = detail::should_record({&input, &weight, &bias});
  Tensor result = detail::make_output({g.n, g.cout, g.ho, g.wo}, std::move(out), rec);
  if (rec) {
    auto xs = input.storage(), ws = weight.storage(), bs = bias.storage(), ys = result.storage();
    active_graph().record(ys, [xs, ws, bs, ys, g]() {
      const std::int64_t K = g.k(), P = g.p();
      const RowMat wm = owned(ws->data.data(), g.cout, K);
      RowMat cols(K, P), dcols(K, P);
      for (std::int64_t n = 0; n < g.n; ++n) {
        const double* xn = xs->data.data() + n * g.cin * g.h * g.w;
        const double* dyn = ys->grad.data() + n * g.cout * P;
        const RowMat dy = owned(dyn, g.cout, P);
        if (ws->requires_grad) {
          if (g.is_pointwise()) {
            std::copy(xn, xn + K * P, cols.data());
          } else {
            im2col(xn, g, cols.data());
          }
          MatMap(detail::grad_of(*ws).data(), g.cout, K) += dy * cols.transpose();
        }
        if (bs && bs->requires_grad) {
          auto& db = detail::grad_of(*bs);
          for (std::int64_t o = 0; o < g.cout; ++o) {
            double total = 0.0;
            for (std::int64_t i = 0; i < P; ++i) total += dyn[o * P + i];
            db[static_cast<std::size_t>(o)] += total;
          }
        }
        if (xs->requires_grad) {
          double* dx = detail::grad_of(*xs).data() + n * g.cin * g.h * g.w;
          dcols = wm.transpose() * dy;
          if (g.is_pointwise()) {
            MatMap(dx, K, P) += dcols;
          } else {
            col2im_add(dcols.data(), g, dx);
          }
        }
      }
    });
  }
  return result;
}

Tensor correlation_volume(const Tensor& f1, const Tensor& f2) {
  if (f1.rank() != 4 || f1.shape() != f2.shape()) {
    throw ShapeError("correlation_volume: feature maps must share an [N,D,H,W] shape, got " + shape_str(f1.shape()) +
                     " and " + shape_str(f2.shape()));
  }
  const std::int64_t N = f1.dim(0), D = f1.dim(1), H = f1.dim(2), W = f1.dim(3), P = H * W;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(D));
  std::vector<double> out(static_cast<std::size_t>(N * P * P));
  for (std::int64_t n = 0; n < N; ++n) {
    const RowMat a = owned(f1.values().data() + n * D * P, D, P);
    const RowMat b = owned(f2.values().data() + n * D * P, D, P);
    MatMap(out.data() + n * P * P, P, P) = inv_scale * (a.transpose() * b);
  }
  const bool rec = detail::should_record({&f1, &f2});
  Tensor result = detail::make_output({N, H, W, H, W}, std::move(out), rec);
  if (rec) {
    auto as = f1.storage(), bs = f2.storage(), cs = result.storage();
    active_graph().record(cs, [as, bs, cs, N, D, P, inv_scale]() {
      for (std::int64_t n = 0; n < N; ++n) {
        const RowMat dc = owned(cs->grad.data() + n * P * P, P, P);
        if (as->requires_grad) {
          const RowMat prod = owned(bs->data.data() + n * D * P, D, P) * dc.transpose();
          MatMap(detail::grad_of(*as).data() + n * D * P, D, P) += inv_scale * prod;
        }
        if (bs->requires_grad) {
          const RowMat prod = owned(as->data.data() + n * D * P, D, P) * dc;
          MatMap(detail::grad_of(*bs).data() + n * D * P, D, P) += inv_scale * prod;
        }
      }
    });
  }
  return result;
}

}  // namespace xraft::ops

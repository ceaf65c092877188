// Interpolation kernels: bilinear sampling, correlation lookup, pooling and resizing.
#include <cmath>

#include "xraft/errors.hpp"
#include "xraft/ops.hpp"

namespace xraft::ops {

namespace {

// Bilinear footprint of one sample point; out-of-image corners carry no weight.
struct Footprint {
  std::int64_t index[4];
  double weight[4];
  bool inside[4];
  double fx, fy;
};

Footprint footprint(double x, double y, std::int64_t h, std::int64_t w) {
  Footprint f{};
  if (!std::isfinite(x) || !std::isfinite(y) || std::abs(x) > 1e9 || std::abs(y) > 1e9) {
    for (int k = 0; k < 4; ++k) f.inside[k] = false;
    return f;
  }
  const double xf = std::floor(x), yf = std::floor(y);
  const auto x0 = static_cast<std::int64_t>(xf), y0 = static_cast<std::int64_t>(yf);
  f.fx = x - xf;
  f.fy = y - yf;
  const std::int64_t xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const std::int64_t ys[4] = {y0, y0, y0 + 1, y0 + 1};
  const double ws[4] = {(1 - f.fx) * (1 - f.fy), f.fx * (1 - f.fy), (1 - f.fx) * f.fy, f.fx * f.fy};
  for (int k = 0; k < 4; ++k) {
    f.inside[k] = xs[k] >= 0 && xs[k] < w && ys[k] >= 0 && ys[k] < h;
    f.index[k] = f.inside[k] ? ys[k] * w + xs[k] : 0;
    f.weight[k] = ws[k];
  }
  return f;
}

inline double corner(const double* plane, const Footprint& f, int k) { return f.inside[k] ? plane[f.index[k]] : 0.0; }

inline double gather(const double* plane, const Footprint& f) {
  double v = 0.0;
  for (int k = 0; k < 4; ++k)
    if (f.inside[k]) v += f.weight[k] * plane[f.index[k]];
  return v;
}

inline void scatter(double* plane, const Footprint& f, double g) {
  for (int k = 0; k < 4; ++k)
    if (f.inside[k]) plane[f.index[k]] += f.weight[k] * g;
}

// d(sample)/dx and d(sample)/dy at the footprint.
inline void coord_gradient(const double* plane, const Footprint& f, double& dx, double& dy) {
  const double v00 = corner(plane, f, 0), v01 = corner(plane, f, 1);
  const double v10 = corner(plane, f, 2), v11 = corner(plane, f, 3);
  dx = (1 - f.fy) * (v01 - v00) + f.fy * (v11 - v10);
  dy = (1 - f.fx) * (v10 - v00) + f.fx * (v11 - v01);
}

}  // namespace

Tensor bilinear_sample(const Tensor& input, const Tensor& coords) {
  if (input.rank() != 4 || coords.rank() != 4 || coords.dim(1) != 2 || coords.dim(0) != input.dim(0)) {
    throw ShapeError("bilinear_sample: expected input [N,C,H,W] and coords [N,2,Ho,Wo], got " +
                     shape_str(input.shape()) + " and " + shape_str(coords.shape()));
  }
  const std::int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::int64_t Ho = coords.dim(2), Wo = coords.dim(3), Po = Ho * Wo;
  std::vector<double> out(static_cast<std::size_t>(N * C * Po));
  const double* src = input.values().data();
  const double* xy = coords.values().data();
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t p = 0; p < Po; ++p) {
      const Footprint f = footprint(xy[(n * 2) * Po + p], xy[(n * 2 + 1) * Po + p], H, W);
      for (std::int64_t c = 0; c < C; ++c) out[(n * C + c) * Po + p] = gather(src + (n * C + c) * H * W, f);
    }
  }
  const bool rec = detail::should_record({&input, &coords});
  Tensor result = detail::make_output({N, C, Ho, Wo}, std::move(out), rec);
  if (rec) {
    auto is = input.storage(), cs = coords.storage(), ys = result.storage();
    active_graph().record(ys, [is, cs, ys, N, C, H, W, Po]() {
      const double* xy = cs->data.data();
      const double* dy = ys->grad.data();
      double* din = is->requires_grad ? detail::grad_of(*is).data() : nullptr;
      double* dc = cs->requires_grad ? detail::grad_of(*cs).data() : nullptr;
      for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t p = 0; p < Po; ++p) {
          const Footprint f = footprint(xy[(n * 2) * Po + p], xy[(n * 2 + 1) * Po + p], H, W);
          double gx = 0.0, gy = 0.0;
          for (std::int64_t c = 0; c < C; ++c) {
            const double g = dy[(n * C + c) * Po + p];
            if (din) scatter(din + (n * C + c) * H * W, f, g);
            if (dc) {
              double ddx, ddy;
              coord_gradient(is->data.data() + (n * C + c) * H * W, f, ddx, ddy);
              gx += g * ddx;
              gy += g * ddy;
            }
          }
          if (dc) {
            dc[(n * 2) * Po + p] += gx;
            dc[(n * 2 + 1) * Po + p] += gy;
          }
        }
      }
    });
  }
  return result;
}

Tensor corr_lookup(const Tensor& volume, const Tensor& centers, int radius) {
  if (volume.rank() != 5 || centers.rank() != 4 || centers.dim(1) != 2 || centers.dim(0) != volume.dim(0) ||
      centers.dim(2) != volume.dim(1) || centers.dim(3) != volume.dim(2)) {
    throw ShapeError("corr_lookup: expected volume [N,H,W,h,w] and centers [N,2,H,W], got " +
                     shape_str(volume.shape()) + " and " + shape_str(centers.shape()));
  }
  if (radius < 0) throw ShapeError("corr_lookup: negative radius");
  const std::int64_t N = volume.dim(0), H = volume.dim(1), W = volume.dim(2), h = volume.dim(3), w = volume.dim(4);
  const std::int64_t P = H * W, side = 2 * radius + 1, K = side * side;
  std::vector<double> out(static_cast<std::size_t>(N * K * P));
  const double* vol = volume.values().data();
  const double* ctr = centers.values().data();
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t p = 0; p < P; ++p) {
      const double* plane = vol + (n * P + p) * h * w;
      const double cx = ctr[(n * 2) * P + p], cy = ctr[(n * 2 + 1) * P + p];
      for (std::int64_t k = 0; k < K; ++k) {
        const double dx = static_cast<double>(k % side - radius), dy = static_cast<double>(k / side - radius);
        out[(n * K + k) * P + p] = gather(plane, footprint(cx + dx, cy + dy, h, w));
      }
    }
  }
  const bool rec = detail::should_record({&volume, &centers});
  Tensor result = detail::make_output({N, K, H, W}, std::move(out), rec);
  if (rec) {
    auto vs = volume.storage(), cs = centers.storage(), ys = result.storage();
    active_graph().record(ys, [vs, cs, ys, N, P, h, w, K, side, radius]() {
      const double* ctr = cs->data.data();
      const double* g = ys->grad.data();
      double* dvol = vs->requires_grad ? detail::grad_of(*vs).data() : nullptr;
      double* dctr = cs->requires_grad ? detail::grad_of(*cs).data() : nullptr;
      for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t p = 0; p < P; ++p) {
          const double cx = ctr[(n * 2) * P + p], cy = ctr[(n * 2 + 1) * P + p];
          const double* plane = vs->data.data() + (n * P + p) * h * w;
          double gx = 0.0, gy = 0.0;
          for (std::int64_t k = 0; k < K; ++k) {
            const double gk = g[(n * K + k) * P + p];
            if (gk == 0.0) continue;
            const double dx = static_cast<double>(k % side - radius), dy = static_cast<double>(k / side - radius);
            const Footprint f = footprint(cx + dx, cy + dy, h, w);
            if (dvol) scatter(dvol + (n * P + p) * h * w, f, gk);
            if (dctr) {
              double ddx, ddy;
              coord_gradient(plane, f, ddx, ddy);
              gx += gk * ddx;
              gy += gk * ddy;
            }
          }
          if (dctr) {
            dctr[(n * 2) * P + p] += gx;
            dctr[(n * 2 + 1) * P + p] += gy;
          }
        }
      }
    });
  }
  return result;
}

Tensor avg_pool2(const Tensor& input) {
  if (input.rank() != 4) throw ShapeError("avg_pool2: input must be [N,C,H,W], got " + shape_str(input.shape()));
  const std::int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (H % 2 != 0 || W % 2 != 0) {
    throw ShapeError("avg_pool2: spatial size " + std::to_string(H) + "x" + std::to_string(W) + " is not even");
  }
  const std::int64_t Ho = H / 2, Wo = W / 2;
  std::vector<double> out(static_cast<std::size_t>(N * C * Ho * Wo));
  const double* x = input.values().data();
  for (std::int64_t plane = 0; plane < N * C; ++plane) {
    const double* in = x + plane * H * W;
    double* o = out.data() + plane * Ho * Wo;
    for (std::int64_t i = 0; i < Ho; ++i) {
      for (std::int64_t j = 0; j < Wo; ++j) {
        const double* r0 = in + (2 * i) * W + 2 * j;
        o[i * Wo + j] = 0.25 * (r0[0] + r0[1] + r0[W] + r0[W + 1]);
      }
    }
  }
  const bool rec = detail::should_record({&input});
  Tensor result = detail::make_output({N, C, Ho, Wo}, std::move(out), rec);
  if (rec) {
    auto xs = input.storage(), ys = result.storage();
    active_graph().record(ys, [xs, ys, N, C, H, W, Ho, Wo]() {
      double* dx = detail::grad_of(*xs).data();
      const double* g = ys->grad.data();
      for (std::int64_t plane = 0; plane < N * C; ++plane) {
        for (std::int64_t i = 0; i < Ho; ++i) {
          for (std::int64_t j = 0; j < Wo; ++j) {
            const double q = 0.25 * g[plane * Ho * Wo + i * Wo + j];
            double* r0 = dx + plane * H * W + (2 * i) * W + 2 * j;
            r0[0] += q;
            r0[1] += q;
            r0[W] += q;
            r0[W + 1] += q;
          }
        }
      }
    });
  }
  return result;
}

namespace {

struct AxisTaps {
  std::vector<std::int64_t> lo, hi;
  std::vector<double> frac;
};

AxisTaps resize_taps(std::int64_t in, int factor) {
  const std::int64_t out = in * factor;
  AxisTaps t;
  t.lo.resize(static_cast<std::size_t>(out));
  t.hi.resize(static_cast<std::size_t>(out));
  t.frac.resize(static_cast<std::size_t>(out));
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<std::int64_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const std::int64_t hi = std::min(lo + 1, in - 1);
    t.lo[o] = lo;
    t.hi[o] = hi;
    t.frac[o] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& input, int factor) {
  if (input.rank() != 4) throw ShapeError("upsample_bilinear: input must be [N,C,H,W], got " + shape_str(input.shape()));
  if (factor < 1) throw ShapeError("upsample_bilinear: factor must be >= 1");
  const std::int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::int64_t Ho = H * factor, Wo = W * factor;
  const AxisTaps ty = resize_taps(H, factor), tx = resize_taps(W, factor);
  std::vector<double> out(static_cast<std::size_t>(N * C * Ho * Wo));
  const double* x = input.values().data();
  for (std::int64_t plane = 0; plane < N * C; ++plane) {
    const double* in = x + plane * H * W;
    double* o = out.data() + plane * Ho * Wo;
    for (std::int64_t i = 0; i < Ho; ++i) {
      const double fy = ty.frac[i];
      const double* r0 = in + ty.lo[i] * W;
      const double* r1 = in + ty.hi[i] * W;
      for (std::int64_t j = 0; j < Wo; ++j) {
        const double fx = tx.frac[j];
        const double top = (1 - fx) * r0[tx.lo[j]] + fx * r0[tx.hi[j]];
        const double bot = (1 - fx) * r1[tx.lo[j]] + fx * r1[tx.hi[j]];
        o[i * Wo + j] = (1 - fy) * top + fy * bot;
      }
    }
  }
  const bool rec = detail::should_record({&input});
  Tensor result = detail::make_output({N, C, Ho, Wo}, std::move(out), rec);
  if (rec) {
    auto xs = input.storage(), ys = result.storage();
    active_graph().record(ys, [xs, ys, N, C, H, W, Ho, Wo, ty, tx]() {
      double* dx = detail::grad_of(*xs).data();
      const double* g = ys->grad.data();
      for (std::int64_t plane = 0; plane < N * C; ++plane) {
        double* d = dx + plane * H * W;
        for (std::int64_t i = 0; i < Ho; ++i) {
          const double fy = ty.frac[i];
          double* r0 = d + ty.lo[i] * W;
          double* r1 = d + ty.hi[i] * W;
          for (std::int64_t j = 0; j < Wo; ++j) {
            const double gij = g[plane * Ho * Wo + i * Wo + j];
            const double fx = tx.frac[j];
            r0[tx.lo[j]] += (1 - fy) * (1 - fx) * gij;
            r0[tx.hi[j]] += (1 - fy) * fx * gij;
            r1[tx.lo[j]] += fy * (1 - fx) * gij;
            r1[tx.hi[j]] += fy * fx * gij;
          }
        }
      }
    });
  }
  return result;
}

}  // namespace xraft::ops

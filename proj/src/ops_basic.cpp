// Elementwise, layout and reduction kernels.
#include <cmath>

#include "xraft/errors.hpp"
#include "xraft/ops.hpp"

namespace xraft::ops {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " differ");
  }
}

// Unary map; `deriv(x, y)` gives dy/dx from the input and output values.
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v = fwd(v);
  const bool rec = detail::should_record({&a});
  Tensor result = detail::make_output(a.shape(), std::move(out), rec);
  if (rec) {
    auto xs = a.storage(), ys = result.storage();
    active_graph().record(ys, [xs, ys, deriv]() {
      auto& dx = detail::grad_of(*xs);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += ys->grad[i] * deriv(xs->data[i], ys->data[i]);
    });
  }
  return result;
}

std::int64_t outer_size(const Shape& s, int axis) {
  std::int64_t n = 1;
  for (int i = 0; i < axis; ++i) n *= s[static_cast<std::size_t>(i)];
  return n;
}

std::int64_t inner_size(const Shape& s, int axis) {
  std::int64_t n = 1;
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) n *= s[i];
  return n;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(static_cast<std::size_t>(a.numel()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  const bool rec = detail::should_record({&a, &b});
  Tensor result = detail::make_output(a.shape(), std::move(out), rec);
  if (rec) {
    auto as = a.storage(), bs = b.storage(), ys = result.storage();
    active_graph().record(ys, [as, bs, ys]() {
      for (auto* s : {as.get(), bs.get()}) {
        if (!s->requires_grad) continue;
        auto& d = detail::grad_of(*s);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += ys->grad[i];
      }
    });
  }
  return result;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(static_cast<std::size_t>(a.numel()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  const bool rec = detail::should_record({&a, &b});
  Tensor result = detail::make_output(a.shape(), std::move(out), rec);
  if (rec) {
    auto as = a.storage(), bs = b.storage(), ys = result.storage();
    active_graph().record(ys, [as, bs, ys]() {
      if (as->requires_grad) {
        auto& d = detail::grad_of(*as);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += ys->grad[i];
      }
      if (bs->requires_grad) {
        auto& d = detail::grad_of(*bs);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] -= ys->grad[i];
      }
    });
  }
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(static_cast<std::size_t>(a.numel()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  const bool rec = detail::should_record({&a, &b});
  Tensor result = detail::make_output(a.shape(), std::move(out), rec);
  if (rec) {
    auto as = a.storage(), bs = b.storage(), ys = result.storage();
    active_graph().record(ys, [as, bs, ys]() {
      if (as->requires_grad) {
        auto& d = detail::grad_of(*as);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += ys->grad[i] * bs->data[i];
      }
      if (bs->requires_grad) {
        auto& d = detail::grad_of(*bs);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += ys->grad[i] * as->data[i];
      }
    });
  }
  return result;
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis < 0 || static_cast<std::size_t>(axis) >= first.size()) throw ShapeError("concat: axis out of range");
  Shape shape = first;
  shape[static_cast<std::size_t>(axis)] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == static_cast<std::size_t>(axis) || s[i] == first[i];
    if (!ok) throw ShapeError("concat: " + shape_str(s) + " incompatible with " + shape_str(first));
    shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
  }
  const std::int64_t outer = outer_size(first, axis), inner = inner_size(first, axis);
  const std::int64_t total = shape[static_cast<std::size_t>(axis)];
  std::vector<double> out(static_cast<std::size_t>(shape_numel(shape)));
  std::int64_t offset = 0;
  bool rec = false;
  for (const auto& p : parts) {
    const std::int64_t len = p.dim(static_cast<std::size_t>(axis));
    for (std::int64_t o = 0; o < outer; ++o) {
      const double* src = p.values().data() + o * len * inner;
      std::copy(src, src + len * inner, out.begin() + (o * total + offset) * inner);
    }
    offset += len;
    rec = rec || detail::should_record({&p});
  }
  Tensor result = detail::make_output(shape, std::move(out), rec);
  if (rec) {
    std::vector<std::shared_ptr<TensorStorage>> srcs;
    for (const auto& p : parts) srcs.push_back(p.storage());
    auto ys = result.storage();
    active_graph().record(ys, [srcs, ys, outer, inner, total, axis]() {
      std::int64_t offset = 0;
      for (const auto& s : srcs) {
        const std::int64_t len = s->shape[static_cast<std::size_t>(axis)];
        if (s->requires_grad) {
          auto& d = detail::grad_of(*s);
          for (std::int64_t o = 0; o < outer; ++o) {
            const double* g = ys->grad.data() + (o * total + offset) * inner;
            double* dst = d.data() + o * len * inner;
            for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
          }
        }
        offset += len;
      }
    });
  }
  return result;
}

Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t length) {
  const Shape& s = a.shape();
  if (axis < 0 || static_cast<std::size_t>(axis) >= s.size()) throw ShapeError("slice: axis out of range");
  const std::int64_t full = s[static_cast<std::size_t>(axis)];
  if (start < 0 || length < 0 || start + length > full) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") outside axis of size " + std::to_string(full));
  }
  Shape shape = s;
  shape[static_cast<std::size_t>(axis)] = length;
  const std::int64_t outer = outer_size(s, axis), inner = inner_size(s, axis);
  std::vector<double> out(static_cast<std::size_t>(shape_numel(shape)));
  for (std::int64_t o = 0; o < outer; ++o) {
    const double* src = a.values().data() + (o * full + start) * inner;
    std::copy(src, src + length * inner, out.begin() + o * length * inner);
  }
  const bool rec = detail::should_record({&a});
  Tensor result = detail::make_output(shape, std::move(out), rec);
  if (rec) {
    auto xs = a.storage(), ys = result.storage();
    active_graph().record(ys, [xs, ys, outer, inner, full, start, length]() {
      auto& d = detail::grad_of(*xs);
      for (std::int64_t o = 0; o < outer; ++o) {
        const double* g = ys->grad.data() + o * length * inner;
        double* dst = d.data() + (o * full + start) * inner;
        for (std::int64_t i = 0; i < length * inner; ++i) dst[i] += g[i];
      }
    });
  }
  return result;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  const bool rec = detail::should_record({&a});
  Tensor result = detail::make_output(std::move(shape), std::move(out), rec);
  if (rec) {
    auto xs = a.storage(), ys = result.storage();
    active_graph().record(ys, [xs, ys]() {
      auto& d = detail::grad_of(*xs);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += ys->grad[i];
    });
  }
  return result;
}

Tensor instance_norm(const Tensor& input, double eps) {
  if (input.rank() != 4) throw ShapeError("instance_norm: input must be [N,C,H,W], got " + shape_str(input.shape()));
  const std::int64_t planes = input.dim(0) * input.dim(1), P = input.dim(2) * input.dim(3);
  std::vector<double> out(static_cast<std::size_t>(planes * P));
  std::vector<double> inv_std(static_cast<std::size_t>(planes));
  const double* x = input.values().data();
  for (std::int64_t q = 0; q < planes; ++q) {
    const double* in = x + q * P;
    double m = 0.0;
    for (std::int64_t i = 0; i < P; ++i) m += in[i];
    m /= static_cast<double>(P);
    double var = 0.0;
    for (std::int64_t i = 0; i < P; ++i) var += (in[i] - m) * (in[i] - m);
    var /= static_cast<double>(P);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(q)] = is;
    for (std::int64_t i = 0; i < P; ++i) out[q * P + i] = (in[i] - m) * is;
  }
  const bool rec = detail::should_record({&input});
  // Backward uses the unrounded normalized values.
  std::vector<double> normalized = rec ? out : std::vector<double>{};
  Tensor result = detail::make_output(input.shape(), std::move(out), rec);
  if (rec) {
    auto xs = input.storage(), ys = result.storage();
    active_graph().record(ys, [xs, ys, planes, P, inv_std, normalized]() {
      auto& d = detail::grad_of(*xs);
      for (std::int64_t q = 0; q < planes; ++q) {
        const double* g = ys->grad.data() + q * P;
        const double* y = normalized.data() + q * P;
        double mg = 0.0, mgy = 0.0;
        for (std::int64_t i = 0; i < P; ++i) {
          mg += g[i];
          mgy += g[i] * y[i];
        }
        mg /= static_cast<double>(P);
        mgy /= static_cast<double>(P);
        const double is = inv_std[static_cast<std::size_t>(q)];
        for (std::int64_t i = 0; i < P; ++i) d[q * P + i] += is * (g[i] - mg - y[i] * mgy);
      }
    });
  }
  return result;
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  const bool rec = detail::should_record({&a});
  Tensor result = detail::make_output({1}, {s}, rec);
  if (rec) {
    auto xs = a.storage(), ys = result.storage();
    active_graph().record(ys, [xs, ys]() {
      auto& d = detail::grad_of(*xs);
      for (double& v : d) v += ys->grad[0];
    });
  }
  return result;
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor endpoint_error(const Tensor& pred, const Tensor& ref, const Tensor& mask) {
  require_same_shape("endpoint_error", pred, ref);
  if (pred.rank() != 4 || pred.dim(1) != 2) {
    throw ShapeError("endpoint_error: flows must be [N,2,H,W], got " + shape_str(pred.shape()));
  }
  const std::int64_t N = pred.dim(0), P = pred.dim(2) * pred.dim(3);
  if (mask.defined() && mask.shape() != Shape{N, 1, pred.dim(2), pred.dim(3)}) {
    throw ShapeError("endpoint_error: mask must be [N,1,H,W], got " + shape_str(mask.shape()));
  }
  std::vector<double> norms(static_cast<std::size_t>(N * P));
  double total = 0.0, count = 0.0;
  const double* a = pred.values().data();
  const double* b = ref.values().data();
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t p = 0; p < P; ++p) {
      const double w = mask.defined() ? mask.values()[n * P + p] : 1.0;
      if (w == 0.0) continue;
      const double du = a[(n * 2) * P + p] - b[(n * 2) * P + p];
      const double dv = a[(n * 2 + 1) * P + p] - b[(n * 2 + 1) * P + p];
      const double r = std::sqrt(du * du + dv * dv);
      norms[static_cast<std::size_t>(n * P + p)] = r;
      total += w * r;
      count += w;
    }
  }
  if (count == 0.0) throw NoSupervisablePixels();
  const bool rec = detail::should_record({&pred, &ref});
  Tensor result = detail::make_output({1}, {total / count}, rec);
  if (rec) {
    auto as = pred.storage(), bs = ref.storage(), ms = mask.storage(), ys = result.storage();
    active_graph().record(ys, [as, bs, ms, ys, norms, N, P, count]() {
      const double g = ys->grad[0] / count;
      double* da = as->requires_grad ? detail::grad_of(*as).data() : nullptr;
      double* db = bs->requires_grad ? detail::grad_of(*bs).data() : nullptr;
      for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t p = 0; p < P; ++p) {
          const double w = ms ? ms->data[static_cast<std::size_t>(n * P + p)] : 1.0;
          const double r = norms[static_cast<std::size_t>(n * P + p)];
          // The norm has no derivative at zero; use the zero subgradient.
          if (w == 0.0 || r == 0.0) continue;
          const std::int64_t iu = (n * 2) * P + p, iv = (n * 2 + 1) * P + p;
          const double gu = g * w * (as->data[iu] - bs->data[iu]) / r;
          const double gv = g * w * (as->data[iv] - bs->data[iv]) / r;
          if (da) {
            da[iu] += gu;
            da[iv] += gv;
          }
          if (db) {
            db[iu] -= gu;
            db[iv] -= gv;
          }
        }
      }
    });
  }
  return result;
}

}  // namespace xraft::ops

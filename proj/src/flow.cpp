#include "xraft/flow.hpp"

#include <cmath>

#include "byte_io.hpp"
#include "xraft/errors.hpp"
#include "xraft/ops.hpp"

namespace xraft {

namespace {

void require_same_size(const char* op, int w1, int h1, int w2, int h2) {
  if (w1 != w2 || h1 != h2) {
    throw ShapeError(std::string(op) + ": size " + std::to_string(w1) + "x" + std::to_string(h1) + " does not match " +
                     std::to_string(w2) + "x" + std::to_string(h2));
  }
}

constexpr float kFloMagic = 202021.25f;

}  // namespace

FlowField::FlowField(int w, int h, float u0, float v0) : width(w), height(h) {
  if (w < 0 || h < 0) throw ShapeError("flow dimensions must be non-negative");
  uv.resize(2 * pixels());
  for (std::size_t p = 0; p < pixels(); ++p) {
    uv[2 * p] = u0;
    uv[2 * p + 1] = v0;
  }
}

double FlowField::mean_norm() const {
  if (pixels() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t p = 0; p < pixels(); ++p) total += std::hypot(double{uv[2 * p]}, double{uv[2 * p + 1]});
  return total / static_cast<double>(pixels());
}

double FlowField::max_norm() const {
  double best = 0.0;
  for (std::size_t p = 0; p < pixels(); ++p) best = std::max(best, std::hypot(double{uv[2 * p]}, double{uv[2 * p + 1]}));
  return best;
}

Tensor FlowField::to_tensor() const {
  const std::size_t P = pixels();
  std::vector<double> data(2 * P);
  for (std::size_t p = 0; p < P; ++p) {
    data[p] = uv[2 * p];
    data[P + p] = uv[2 * p + 1];
  }
  return Tensor({1, 2, height, width}, std::move(data));
}

FlowField FlowField::from_tensor(const Tensor& t) {
  const auto& s = t.shape();
  const bool ok = (s.size() == 4 && s[0] == 1 && s[1] == 2) || (s.size() == 3 && s[0] == 2);
  if (!ok) throw ShapeError("FlowField::from_tensor: expected [1,2,H,W] or [2,H,W], got " + shape_str(s));
  FlowField f(static_cast<int>(s[s.size() - 1]), static_cast<int>(s[s.size() - 2]));
  const std::size_t P = f.pixels();
  for (std::size_t p = 0; p < P; ++p) {
    f.uv[2 * p] = static_cast<float>(t.values()[p]);
    f.uv[2 * p + 1] = static_cast<float>(t.values()[P + p]);
  }
  return f;
}

ValidityMask::ValidityMask(int w, int h, bool fill)
    : width(w), height(h), valid(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill ? 1 : 0) {}

std::size_t ValidityMask::count() const {
  std::size_t n = 0;
  for (auto v : valid) n += v != 0;
  return n;
}

Tensor ValidityMask::to_tensor() const {
  std::vector<double> data(valid.size());
  for (std::size_t i = 0; i < valid.size(); ++i) data[i] = valid[i] ? 1.0 : 0.0;
  return Tensor({1, 1, height, width}, std::move(data));
}

ValidityMask operator&(const ValidityMask& a, const ValidityMask& b) {
  require_same_size("mask product", a.width, a.height, b.width, b.height);
  ValidityMask out(a.width, a.height, false);
  for (std::size_t i = 0; i < out.valid.size(); ++i) out.valid[i] = (a.valid[i] && b.valid[i]) ? 1 : 0;
  return out;
}

Tensor pixel_grid(std::int64_t n, std::int64_t height, std::int64_t width) {
  const std::int64_t P = height * width;
  std::vector<double> data(static_cast<std::size_t>(n * 2 * P));
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t y = 0; y < height; ++y) {
      for (std::int64_t x = 0; x < width; ++x) {
        data[static_cast<std::size_t>((b * 2) * P + y * width + x)] = static_cast<double>(x);
        data[static_cast<std::size_t>((b * 2 + 1) * P + y * width + x)] = static_cast<double>(y);
      }
    }
  }
  return Tensor({n, 2, height, width}, std::move(data));
}

Tensor warp(const Tensor& entity, const Tensor& flow) {
  if (flow.rank() != 4 || flow.dim(1) != 2 || entity.rank() != 4 || entity.dim(0) != flow.dim(0) ||
      entity.dim(2) != flow.dim(2) || entity.dim(3) != flow.dim(3)) {
    throw ShapeError("warp: entity " + shape_str(entity.shape()) + " and flow " + shape_str(flow.shape()) +
                     " are incompatible");
  }
  const Tensor coords = ops::add(pixel_grid(flow.dim(0), flow.dim(2), flow.dim(3)), flow);
  return ops::bilinear_sample(entity, coords);
}

Tensor compose(const Tensor& f_ab, const Tensor& f_bc) {
  if (f_ab.shape() != f_bc.shape()) {
    throw ShapeError("compose: flows " + shape_str(f_ab.shape()) + " and " + shape_str(f_bc.shape()) + " differ");
  }
  return ops::add(f_ab, warp(f_bc, f_ab));
}

Tensor warp(const Tensor& entity, const FlowField& flow) {
  // Float coordinates near 16 px are off by ~1e-6; sample exactly, round once.
  Tensor out;
  {
    PrecisionScope exact(Precision::kFloat64);
    out = warp(entity, flow.to_tensor());
  }
  return ops::scale(out, 1.0);
}

FlowField compose(const FlowField& f_ab, const FlowField& f_bc) {
  require_same_size("compose", f_ab.width, f_ab.height, f_bc.width, f_bc.height);
  NoGradGuard no_grad;
  PrecisionScope exact(Precision::kFloat64);
  return FlowField::from_tensor(compose(f_ab.to_tensor(), f_bc.to_tensor()));
}

double epe(const FlowField& pred, const FlowField& ref, const ValidityMask* mask) {
  require_same_size("epe", pred.width, pred.height, ref.width, ref.height);
  if (mask) require_same_size("epe mask", mask->width, mask->height, pred.width, pred.height);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < pred.pixels(); ++p) {
    if (mask && !mask->valid[p]) continue;
    const double du = double{pred.uv[2 * p]} - double{ref.uv[2 * p]};
    const double dv = double{pred.uv[2 * p + 1]} - double{ref.uv[2 * p + 1]};
    total += std::sqrt(du * du + dv * dv);
    ++count;
  }
  if (count == 0) throw NoSupervisablePixels();
  return total / static_cast<double>(count);
}

std::vector<double> consistency_residual(const FlowField& f_ij, const FlowField& f_ji) {
  require_same_size("consistency_residual", f_ij.width, f_ij.height, f_ji.width, f_ji.height);
  NoGradGuard no_grad;
  PrecisionScope exact(Precision::kFloat64);
  const Tensor back = warp(f_ji.to_tensor(), f_ij);
  const std::size_t P = f_ij.pixels();
  std::vector<double> r(P);
  for (std::size_t p = 0; p < P; ++p) {
    const double ru = double{f_ij.uv[2 * p]} + back.values()[p];
    const double rv = double{f_ij.uv[2 * p + 1]} + back.values()[P + p];
    r[p] = std::sqrt(ru * ru + rv * rv);
  }
  return r;
}

ValidityMask occlusion_mask(const FlowField& f_ij, const FlowField& f_ji, double eps_o) {
  if (!(eps_o > 0.0)) throw ConfigError("occlusion_mask: threshold must be positive");
  const auto r = consistency_residual(f_ij, f_ji);
  ValidityMask m(f_ij.width, f_ij.height, false);
  for (std::size_t p = 0; p < r.size(); ++p) m.valid[p] = r[p] <= eps_o ? 1 : 0;
  return m;
}

ValidityMask dark_mask(const HsiCube& cube, double eps_d) {
  if (!(eps_d >= 0.0)) throw ConfigError("dark_mask: threshold must be non-negative");
  const Tensor mean = channel_mean(cube);
  ValidityMask m(cube.width, cube.height, false);
  for (std::size_t p = 0; p < m.valid.size(); ++p) m.valid[p] = mean.values()[p] > eps_d ? 1 : 0;
  return m;
}

ValidityMask warp_mask(const ValidityMask& mask, const FlowField& flow) {
  require_same_size("warp_mask", mask.width, mask.height, flow.width, flow.height);
  NoGradGuard no_grad;
  PrecisionScope exact(Precision::kFloat64);
  const Tensor pulled = warp(mask.to_tensor(), flow);
  ValidityMask out(mask.width, mask.height, false);
  for (int y = 0; y < flow.height; ++y) {
    for (int x = 0; x < flow.width; ++x) {
      const double sx = x + double{flow.u(x, y)}, sy = y + double{flow.v(x, y)};
      const bool inside = sx >= 0.0 && sx <= flow.width - 1 && sy >= 0.0 && sy <= flow.height - 1;
      const std::size_t p = static_cast<std::size_t>(y) * static_cast<std::size_t>(flow.width) + static_cast<std::size_t>(x);
      out.valid[p] = (inside && pulled.values()[p] >= 0.5) ? 1 : 0;
    }
  }
  return out;
}

ValidityMask combined_mask(const ValidityMask& m_ac, const ValidityMask& m_ab, const ValidityMask& m_bc,
                           const ValidityMask& m_db, const FlowField& f_ab) {
  return m_ac & m_ab & warp_mask(m_bc & m_db, f_ab);
}

ValidityMask discrepancy_mask(const FlowField& f_ij, const FlowField& f_ji, double threshold) {
  if (!(threshold > 0.0)) throw ConfigError("discrepancy_mask: threshold must be positive");
  return occlusion_mask(f_ij, f_ji, threshold);
}

std::vector<std::uint8_t> encode_flo(const FlowField& flow) {
  detail::ByteWriter w;
  w.put<float>(kFloMagic);
  w.put<std::int32_t>(flow.width);
  w.put<std::int32_t>(flow.height);
  w.put_bytes(flow.uv.data(), flow.uv.size() * sizeof(float));
  return w.take();
}

FlowField decode_flo(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes, "flow");
  if (r.get<float>() != kFloMagic) throw FormatError("flow: bad magic, expected 202021.25");
  const auto w = r.get<std::int32_t>();
  const auto h = r.get<std::int32_t>();
  if (w < 0 || h < 0 || w > 1 << 20 || h > 1 << 20 || std::int64_t{w} * h > std::int64_t{1} << 30) {
    throw FormatError("flow: invalid dimensions " + std::to_string(w) + "x" + std::to_string(h));
  }
  FlowField f(w, h);
  r.get_bytes(f.uv.data(), f.uv.size() * sizeof(float));
  if (r.remaining() != 0) throw FormatError("flow: " + std::to_string(r.remaining()) + " trailing byte(s)");
  return f;
}

void write_flo(const FlowField& flow, const std::filesystem::path& path) { write_file(path, encode_flo(flow)); }

FlowField read_flo(const std::filesystem::path& path) {
  try {
    return decode_flo(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_mask_pgm(const ValidityMask& mask, const std::filesystem::path& path) {
  const std::string header = "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  for (auto v : mask.valid) bytes.push_back(v ? 255 : 0);
  write_file(path, bytes);
}

ValidityMask read_mask_pgm(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  int w = 0, h = 0;
  const std::size_t start = detail::parse_pnm_header(bytes, "P5", w, h, path.string());
  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() - start < need) {
    throw FormatError(path.string() + ": truncated payload, " + std::to_string(need - (bytes.size() - start)) +
                      " byte(s) missing");
  }
  ValidityMask m(w, h, false);
  for (std::size_t i = 0; i < need; ++i) {
    const auto v = bytes[start + i];
    if (v != 0 && v != 255) throw FormatError(path.string() + ": mask values must be 0 or 255");
    m.valid[i] = v ? 1 : 0;
  }
  return m;
}

}  // namespace xraft

#include "xraft/imaging.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

#include "byte_io.hpp"
#include "xraft/errors.hpp"
#include "xraft/filters.hpp"
#include "xraft/rng.hpp"

namespace xraft {

const char* modality_name(Modality m) { return m == Modality::kWhite ? "white" : "blue"; }

HsiCube::HsiCube(int w, int h, int b, Modality m, float fill) : width(w), height(h), bands(b), modality(m) {
  if (w < 0 || h < 0 || b < 0) throw ShapeError("cube dimensions must be non-negative");
  values.assign(static_cast<std::size_t>(b) * plane_size(), fill);
}

Tensor HsiCube::to_tensor() const {
  return Tensor({1, bands, height, width}, std::vector<double>(values.begin(), values.end()));
}

HsiCube cube_from_tensor(const Tensor& t, Modality modality) {
  const auto& s = t.shape();
  const bool batched = s.size() == 4 && s[0] == 1;
  if (!(s.size() == 3 || batched)) throw ShapeError("cube_from_tensor: expected [C,H,W] or [1,C,H,W], got " + shape_str(s));
  const std::size_t o = batched ? 1 : 0;
  HsiCube cube(static_cast<int>(s[o + 2]), static_cast<int>(s[o + 1]), static_cast<int>(s[o]), modality);
  std::transform(t.values().begin(), t.values().end(), cube.values.begin(),
                 [](double v) { return static_cast<float>(v); });
  return cube;
}

ColorMatrix ColorMatrix::identity3() {
  ColorMatrix q;
  q.bands = 3;
  q.weights = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  return q;
}

std::vector<double> band_centres_nm(int bands) {
  std::vector<double> c(static_cast<std::size_t>(bands));
  for (int i = 0; i < bands; ++i) c[static_cast<std::size_t>(i)] = bands == 1 ? 550.0 : 400.0 + 300.0 * i / (bands - 1);
  return c;
}

namespace {

double lobe(double wl, double mu, double s_left, double s_right) {
  const double t = (wl - mu) / (wl < mu ? s_left : s_right);
  return std::exp(-0.5 * t * t);
}

double cie_x(double wl) {
  return 1.056 * lobe(wl, 599.8, 37.9, 31.0) + 0.362 * lobe(wl, 442.0, 16.0, 26.7) - 0.065 * lobe(wl, 501.1, 20.4, 26.2);
}
double cie_y(double wl) { return 0.821 * lobe(wl, 568.8, 46.9, 40.5) + 0.286 * lobe(wl, 530.9, 16.3, 31.1); }
double cie_z(double wl) { return 1.217 * lobe(wl, 437.0, 11.8, 36.0) + 0.681 * lobe(wl, 459.0, 26.0, 13.8); }

}  // namespace

ColorMatrix ColorMatrix::cie_default(int bands) {
  if (bands < 1) throw ConfigError("colour matrix needs at least one band");
  ColorMatrix q;
  q.bands = bands;
  q.weights.resize(static_cast<std::size_t>(3 * bands));
  const auto centres = band_centres_nm(bands);
  double (*curves[3])(double) = {cie_x, cie_y, cie_z};
  for (int r = 0; r < 3; ++r) {
    double total = 0.0;
    for (int c = 0; c < bands; ++c) {
      q(r, c) = curves[r](centres[static_cast<std::size_t>(c)]);
      total += q(r, c);
    }
    for (int c = 0; c < bands; ++c) q(r, c) /= total;
  }
  return q;
}

Tensor to_rgb(const HsiCube& cube, const ColorMatrix& q) {
  if (q.bands != cube.bands || q.weights.size() != static_cast<std::size_t>(3 * q.bands)) {
    throw ShapeError("to_rgb: colour matrix has " + std::to_string(q.bands) + " columns, cube has " +
                     std::to_string(cube.bands) + " bands");
  }
  const std::size_t P = cube.plane_size();
  std::vector<double> out(3 * P, 0.0);
  for (int r = 0; r < 3; ++r) {
    double* dst = out.data() + static_cast<std::size_t>(r) * P;
    for (int c = 0; c < cube.bands; ++c) {
      const double w = q(r, c);
      const float* src = cube.values.data() + static_cast<std::size_t>(c) * P;
      for (std::size_t p = 0; p < P; ++p) dst[p] += w * src[p];
    }
  }
  return Tensor({3, cube.height, cube.width}, std::move(out));
}

Tensor to_bbb(const Tensor& rgb) {
  const auto& s = rgb.shape();
  const bool batched = s.size() == 4;
  if (!((s.size() == 3 && s[0] == 3) || (batched && s[1] == 3))) {
    throw ShapeError("to_bbb: expected a 3-channel image, got " + shape_str(s));
  }
  const std::int64_t N = batched ? s[0] : 1;
  const std::int64_t P = s[s.size() - 1] * s[s.size() - 2];
  std::vector<double> out(static_cast<std::size_t>(rgb.numel()));
  for (std::int64_t n = 0; n < N; ++n) {
    const double* blue = rgb.values().data() + (n * 3 + 2) * P;
    for (int c = 0; c < 3; ++c) std::copy(blue, blue + P, out.begin() + (n * 3 + c) * P);
  }
  return Tensor(s, std::move(out));
}

Tensor channel_mean(const HsiCube& cube) {
  const std::size_t P = cube.plane_size();
  std::vector<double> out(P, 0.0);
  for (int c = 0; c < cube.bands; ++c) {
    const float* src = cube.values.data() + static_cast<std::size_t>(c) * P;
    for (std::size_t p = 0; p < P; ++p) out[p] += src[p];
  }
  if (cube.bands > 0)
    for (double& v : out) v /= cube.bands;
  return Tensor({1, cube.height, cube.width}, std::move(out));
}

ModalityRecipe ModalityRecipe::blue_default(int bands, std::uint64_t mix_seed) {
  Rng rng(mix_seed);
  const auto n = static_cast<std::size_t>(bands);
  // Gram-Schmidt on a Gaussian matrix gives a random orthogonal basis.
  std::vector<double> o(n * n);
  for (double& v : o) v = rng.normal();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t prev = 0; prev < r; ++prev) {
      double dot = 0.0;
      for (std::size_t k = 0; k < n; ++k) dot += o[r * n + k] * o[prev * n + k];
      for (std::size_t k = 0; k < n; ++k) o[r * n + k] -= dot * o[prev * n + k];
    }
    double norm = 0.0;
    for (std::size_t k = 0; k < n; ++k) norm += o[r * n + k] * o[r * n + k];
    norm = std::sqrt(norm);
    for (std::size_t k = 0; k < n; ++k) o[r * n + k] /= norm;
  }
  // Each output band is a distinct non-negative blend of all input bands;
  // output energy is concentrated in the low (short-wavelength) bands while
  // the band-averaged gain stays at one.
  ModalityRecipe recipe;
  recipe.mix.resize(n * n);
  const double decay = std::max(1.0, bands / 3.0);
  std::vector<double> gain(n);
  double gain_total = 0.0;
  for (std::size_t r = 0; r < n; ++r) gain_total += gain[r] = std::exp(-static_cast<double>(r) / decay);
  for (std::size_t r = 0; r < n; ++r) {
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) total += std::abs(o[r * n + k]);
    const double g = gain[r] * static_cast<double>(n) / gain_total;
    for (std::size_t k = 0; k < n; ++k) recipe.mix[r * n + k] = g * std::abs(o[r * n + k]) / total;
  }
  recipe.attenuation = 0.3;
  recipe.darkening_min = 0.2;
  recipe.noise_sigma = 0.02;
  return recipe;
}

HsiCube synth_modality(const HsiCube& white, const ModalityRecipe& recipe) {
  const auto n = static_cast<std::size_t>(white.bands);
  if (!recipe.mix.empty() && recipe.mix.size() != n * n) {
    throw ShapeError("synth_modality: mix matrix has " + std::to_string(recipe.mix.size()) + " entries, need " +
                     std::to_string(n * n));
  }
  const std::size_t P = white.plane_size();
  Rng rng(recipe.seed);
  std::vector<double> dark(P, 1.0);
  if (recipe.darkening_min < 1.0 && P > 0) {
    dark = smooth_noise(white.width, white.height, recipe.darkening_sigma, rng);
    const auto [lo, hi] = std::minmax_element(dark.begin(), dark.end());
    const double a = *lo, span = *hi - *lo;
    for (double& v : dark) v = recipe.darkening_min + (1.0 - recipe.darkening_min) * (span > 0 ? (v - a) / span : 1.0);
  }
  HsiCube out(white.width, white.height, white.bands, Modality::kBlue);
  std::vector<double> mixed(P);
  for (std::size_t c = 0; c < n; ++c) {
    if (recipe.mix.empty()) {
      std::copy(white.values.begin() + static_cast<std::ptrdiff_t>(c * P),
                white.values.begin() + static_cast<std::ptrdiff_t>((c + 1) * P), mixed.begin());
    } else {
      std::fill(mixed.begin(), mixed.end(), 0.0);
      for (std::size_t k = 0; k < n; ++k) {
        const double w = recipe.mix[c * n + k];
        if (w == 0.0) continue;
        const float* src = white.values.data() + k * P;
        for (std::size_t p = 0; p < P; ++p) mixed[p] += w * src[p];
      }
    }
    float* dst = out.values.data() + c * P;
    for (std::size_t p = 0; p < P; ++p) {
      double v = recipe.attenuation * dark[p] * mixed[p];
      if (recipe.noise_sigma > 0.0) v += recipe.noise_sigma * rng.normal();
      dst[p] = static_cast<float>(std::max(0.0, v));
    }
  }
  return out;
}

HsiCube synth_scene(int width, int height, int bands, std::uint64_t seed) {
  Rng rng(seed);
  constexpr int kComponents = 3;
  const auto P = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  const auto centres = band_centres_nm(bands);
  HsiCube cube(width, height, bands, Modality::kWhite);
  std::vector<double> acc(static_cast<std::size_t>(bands) * P, 0.45);
  for (int k = 0; k < kComponents; ++k) {
    // Spatial pattern: fine, medium and coarse texture octaves.
    std::vector<double> pattern(P, 0.0);
    const double sigmas[3] = {1.0, 2.5, 6.0};
    const double weights[3] = {0.7, 0.8, 0.6};
    for (int o = 0; o < 3; ++o) {
      const auto octave = smooth_noise(width, height, sigmas[o], rng);
      for (std::size_t p = 0; p < P; ++p) pattern[p] += weights[o] * octave[p];
    }
    for (double& v : pattern) v = std::tanh(0.8 * v);
    // Spectral signature: one Gaussian bump per component, spread over the range.
    const double mu = 430.0 + 120.0 * k + rng.uniform(-30.0, 30.0);
    const double width_nm = rng.uniform(40.0, 80.0);
    const double amplitude = rng.uniform(0.25, 0.4);
    for (int c = 0; c < bands; ++c) {
      const double t = (centres[static_cast<std::size_t>(c)] - mu) / width_nm;
      const double s = amplitude * std::exp(-0.5 * t * t);
      double* dst = acc.data() + static_cast<std::size_t>(c) * P;
      for (std::size_t p = 0; p < P; ++p) dst[p] += s * pattern[p];
    }
  }
  for (std::size_t i = 0; i < acc.size(); ++i) cube.values[i] = static_cast<float>(std::clamp(acc[i], 0.0, 1.0));
  return cube;
}

namespace {

constexpr char kCubeMagic[4] = {'H', 'S', 'I', 'C'};
constexpr std::uint64_t kMaxCubeValues = std::uint64_t{1} << 32;

}  // namespace

std::vector<std::uint8_t> encode_cube(const HsiCube& cube) {
  if (cube.values.size() != static_cast<std::size_t>(cube.bands) * cube.plane_size()) {
    throw ShapeError("write_cube: value count does not match dimensions");
  }
  detail::ByteWriter w;
  w.put_bytes(kCubeMagic, 4);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cube.width));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cube.height));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cube.bands));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(cube.modality));
  const std::uint8_t reserved[3] = {0, 0, 0};
  w.put_bytes(reserved, 3);
  w.put_bytes(cube.values.data(), cube.values.size() * sizeof(float));
  return w.take();
}

HsiCube decode_cube(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes, "cube");
  char magic[4];
  r.get_bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kCubeMagic)) throw FormatError("cube: bad magic, expected \"HSIC\"");
  const auto width = r.get<std::uint32_t>();
  const auto height = r.get<std::uint32_t>();
  const auto bands = r.get<std::uint32_t>();
  const auto tag = r.get<std::uint8_t>();
  std::uint8_t reserved[3];
  r.get_bytes(reserved, 3);
  if (tag > 1) throw FormatError("cube: unknown modality tag " + std::to_string(tag));
  if (reserved[0] || reserved[1] || reserved[2]) throw FormatError("cube: reserved header bytes are not zero");
  const std::uint64_t count = std::uint64_t{width} * height * bands;
  if (width > 1u << 20 || height > 1u << 20 || bands > 1u << 16 || count > kMaxCubeValues) {
    throw FormatError("cube: dimensions " + std::to_string(width) + "x" + std::to_string(height) + "x" +
                      std::to_string(bands) + " overflow the supported size");
  }
  HsiCube cube(static_cast<int>(width), static_cast<int>(height), static_cast<int>(bands), static_cast<Modality>(tag));
  r.get_bytes(cube.values.data(), cube.values.size() * sizeof(float));
  if (r.remaining() != 0) throw FormatError("cube: " + std::to_string(r.remaining()) + " trailing byte(s)");
  return cube;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string() + ": cannot open for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path.string() + ": cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(path.string() + ": write failed");
}

void write_cube(const HsiCube& cube, const std::filesystem::path& path) { write_file(path, encode_cube(cube)); }

HsiCube read_cube(const std::filesystem::path& path) {
  try {
    return decode_cube(read_file(path));
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    if (msg.rfind(path.string(), 0) == 0) throw;
    throw FormatError(path.string() + ": " + msg);
  }
}

RgbImage render_rgb(const Tensor& rgb) {
  const auto& s = rgb.shape();
  if (s.size() != 3 || s[0] != 3) throw ShapeError("render_rgb: expected [3,H,W], got " + shape_str(s));
  RgbImage img;
  img.height = static_cast<int>(s[1]);
  img.width = static_cast<int>(s[2]);
  const std::size_t P = static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height);
  img.pixels.resize(3 * P);
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(rgb.values()[c * P + p], 0.0, 1.0);
      img.pixels[3 * p + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  return img;
}

void write_ppm(const RgbImage& image, const std::filesystem::path& path) {
  const std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), image.pixels.begin(), image.pixels.end());
  write_file(path, bytes);
}

namespace detail {

std::size_t parse_pnm_header(const std::vector<std::uint8_t>& bytes, const std::string& magic, int& w, int& h,
                             const std::string& what) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto token = [&] {
    skip_space();
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  if (token() != magic) throw FormatError(what + ": bad magic, expected " + magic);
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    const int maxval = std::stoi(token());
    if (maxval != 255) throw FormatError(what + ": only 8-bit images (maxval 255) are supported");
  } catch (const std::logic_error&) {
    throw FormatError(what + ": malformed header");
  }
  if (w <= 0 || h <= 0 || w > 1 << 16 || h > 1 << 16) throw FormatError(what + ": invalid dimensions");
  if (pos >= bytes.size()) throw FormatError(what + ": truncated header");
  return pos + 1;  // single whitespace byte before the raster
}

}  // namespace detail

RgbImage read_ppm(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  RgbImage img;
  const std::size_t start = detail::parse_pnm_header(bytes, "P6", img.width, img.height, path.string());
  const std::size_t need = 3 * static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height);
  if (bytes.size() - start < need) {
    throw FormatError(path.string() + ": truncated payload, " + std::to_string(need - (bytes.size() - start)) +
                      " byte(s) missing");
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                    bytes.begin() + static_cast<std::ptrdiff_t>(start + need));
  return img;
}

}  // namespace xraft

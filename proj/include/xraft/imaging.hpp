#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "xraft/tensor.hpp"

namespace xraft {

enum class Modality : std::uint8_t { kWhite = 0, kBlue = 1 };

const char* modality_name(Modality m);

/// Hyperspectral image: `bands` planes of width x height intensities,
/// band-sequential and row-major within each band.
struct HsiCube {
  int width = 0;
  int height = 0;
  int bands = 0;
  Modality modality = Modality::kWhite;
  std::vector<float> values;

  HsiCube() = default;
  HsiCube(int width, int height, int bands, Modality modality, float fill = 0.0f);

  float& at(int band, int y, int x) { return values[index(band, y, x)]; }
  float at(int band, int y, int x) const { return values[index(band, y, x)]; }
  std::size_t plane_size() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }

  // [1, bands, H, W]
  Tensor to_tensor() const;

  bool operator==(const HsiCube&) const = default;

 private:
  std::size_t index(int band, int y, int x) const {
    return (static_cast<std::size_t>(band) * static_cast<std::size_t>(height) + static_cast<std::size_t>(y)) *
               static_cast<std::size_t>(width) +
           static_cast<std::size_t>(x);
  }
};

// Builds a cube from a [C,H,W] or [1,C,H,W] tensor.
HsiCube cube_from_tensor(const Tensor& t, Modality modality);

/// 3 x C matrix taking band intensities to (R, G, B), row-major.
struct ColorMatrix {
  int bands = 0;
  std::vector<double> weights;

  double operator()(int row, int band) const { return weights[static_cast<std::size_t>(row * bands + band)]; }
  double& operator()(int row, int band) { return weights[static_cast<std::size_t>(row * bands + band)]; }

  static ColorMatrix identity3();
  // Multi-lobe Gaussian fits of the CIE 1931 colour matching functions
  // (x, y, z standing in for R, G, B), sampled at `bands` evenly spaced
  // centres from 400 to 700 nm, each row normalised to unit sum.
  static ColorMatrix cie_default(int bands = 10);
};

// Band centres used by cie_default.
std::vector<double> band_centres_nm(int bands);

// [3, H, W], unclamped.
Tensor to_rgb(const HsiCube& cube, const ColorMatrix& q);

// Replicates the blue channel of a [3,H,W] or [N,3,H,W] image into all three.
Tensor to_bbb(const Tensor& rgb);

// [1, H, W] mean over bands.
Tensor channel_mean(const HsiCube& cube);

/// Recipe turning a white-light cube into a synthetic blue-light counterpart.
struct ModalityRecipe {
  std::vector<double> mix;       // bands x bands, row-major; empty means no mixing
  double attenuation = 1.0;      // global intensity factor
  double darkening_min = 1.0;    // darkening field spans [darkening_min, 1]
  double darkening_sigma = 12.0; // smoothness of the darkening field, pixels
  double noise_sigma = 0.0;      // additive Gaussian noise
  std::uint64_t seed = 0;        // darkening field and noise

  static ModalityRecipe identity() { return {}; }

  // Seeded non-negative mix built from a random orthogonal matrix, with
  // output energy weighted toward low bands; attenuation 0.3, darkening in
  // [0.2, 1], noise sigma 0.02.
  static ModalityRecipe blue_default(int bands, std::uint64_t mix_seed);
};

HsiCube synth_modality(const HsiCube& white, const ModalityRecipe& recipe);

// Procedural smooth multi-band white-light texture.
HsiCube synth_scene(int width, int height, int bands, std::uint64_t seed);

void write_cube(const HsiCube& cube, const std::filesystem::path& path);
HsiCube read_cube(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_cube(const HsiCube& cube);
HsiCube decode_cube(const std::vector<std::uint8_t>& bytes);

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB

  bool operator==(const RgbImage&) const = default;
};

// Clamps a [3,H,W] image to [0,1] and quantises it to 8 bits.
RgbImage render_rgb(const Tensor& rgb);

void write_ppm(const RgbImage& image, const std::filesystem::path& path);
RgbImage read_ppm(const std::filesystem::path& path);

// Whole-file helpers shared by the binary formats.
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace xraft

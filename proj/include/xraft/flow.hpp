#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "xraft/imaging.hpp"
#include "xraft/tensor.hpp"

namespace xraft {

inline constexpr double kOcclusionThreshold = 8.0;    // pixels
inline constexpr double kDarkThreshold = 0.07;        // mean band intensity
inline constexpr double kDiscrepancyThreshold = 3.0;  // pixels, registration rendering

/// Dense displacement field: source pixel (x, y) corresponds to target
/// position (x + u, y + v). Stored as interleaved (u, v) rows.
struct FlowField {
  int width = 0;
  int height = 0;
  std::vector<float> uv;

  FlowField() = default;
  FlowField(int width, int height, float u = 0.0f, float v = 0.0f);

  float u(int x, int y) const { return uv[2 * index(x, y)]; }
  float v(int x, int y) const { return uv[2 * index(x, y) + 1]; }
  void set(int x, int y, float u, float v) {
    uv[2 * index(x, y)] = u;
    uv[2 * index(x, y) + 1] = v;
  }
  std::size_t pixels() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }

  double mean_norm() const;
  double max_norm() const;

  // [1, 2, H, W]
  Tensor to_tensor() const;
  // Accepts [1,2,H,W] or [2,H,W].
  static FlowField from_tensor(const Tensor& t);

  bool operator==(const FlowField&) const = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x);
  }
};

struct ValidityMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> valid;  // 1 = supervisable

  ValidityMask() = default;
  ValidityMask(int width, int height, bool fill);

  bool operator()(int x, int y) const {
    return valid[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)] != 0;
  }
  void set(int x, int y, bool on) {
    valid[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)] = on ? 1 : 0;
  }
  std::size_t count() const;

  // [1, 1, H, W] of 0/1.
  Tensor to_tensor() const;

  bool operator==(const ValidityMask&) const = default;
};

// Pixel-wise product (logical and).
ValidityMask operator&(const ValidityMask& a, const ValidityMask& b);

// [N, 2, H, W] absolute pixel coordinates, channel 0 = x, channel 1 = y.
Tensor pixel_grid(std::int64_t n, std::int64_t height, std::int64_t width);

// Differentiable forms over [N,C,H,W] entities and [N,2,H,W] flows.
Tensor warp(const Tensor& entity, const Tensor& flow);
Tensor compose(const Tensor& f_ab, const Tensor& f_bc);

// Pulls `entity` (a [1,C,H,W] tensor in the flow's target frame) back along
// `flow`: out(x) = entity(x + flow(x)), zero outside the image.
Tensor warp(const Tensor& entity, const FlowField& flow);

// Flow from a to c through b: f_ab + warp(f_bc, f_ab).
FlowField compose(const FlowField& f_ab, const FlowField& f_bc);

// Mean end-point error, optionally restricted to a mask. Throws
// NoSupervisablePixels when the mask is empty.
double epe(const FlowField& pred, const FlowField& ref, const ValidityMask* mask = nullptr);

// Per-pixel forward-backward residual norm ||f_ij + warp(f_ji, f_ij)||.
std::vector<double> consistency_residual(const FlowField& f_ij, const FlowField& f_ji);

// Valid where the forward-backward residual is within eps_o.
ValidityMask occlusion_mask(const FlowField& f_ij, const FlowField& f_ji, double eps_o = kOcclusionThreshold);

// Valid where the band mean of the hyperspectral cube exceeds eps_d.
ValidityMask dark_mask(const HsiCube& cube, double eps_d = kDarkThreshold);

// Bilinearly pulls a mask along a flow and re-binarises at 0.5. Samples whose
// position falls outside the source image are invalid.
ValidityMask warp_mask(const ValidityMask& mask, const FlowField& flow);

// m_ac * m_ab * warp(m_bc * m_db, f_ab), all in image a's frame.
ValidityMask combined_mask(const ValidityMask& m_ac, const ValidityMask& m_ab, const ValidityMask& m_bc,
                           const ValidityMask& m_db, const FlowField& f_ab);

// Same residual test as occlusion_mask, used to grey out uncertain
// correspondences in registrations.
ValidityMask discrepancy_mask(const FlowField& f_ij, const FlowField& f_ji, double threshold = kDiscrepancyThreshold);

// Middlebury .flo layout.
std::vector<std::uint8_t> encode_flo(const FlowField& flow);
FlowField decode_flo(const std::vector<std::uint8_t>& bytes);
void write_flo(const FlowField& flow, const std::filesystem::path& path);
FlowField read_flo(const std::filesystem::path& path);

// 8-bit binary PGM, 0 = invalid, 255 = valid.
void write_mask_pgm(const ValidityMask& mask, const std::filesystem::path& path);
ValidityMask read_mask_pgm(const std::filesystem::path& path);

}  // namespace xraft

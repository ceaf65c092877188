#include "xraft/filters.hpp"

#include <cmath>

namespace xraft {

namespace {

int mirror(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

void gaussian_blur(std::vector<double>& plane, int width, int height, double sigma) {
  if (sigma <= 0.0 || width <= 0 || height <= 0) return;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    const double v = std::exp(-0.5 * (k * k) / (sigma * sigma));
    kernel[static_cast<std::size_t>(k + radius)] = v;
    total += v;
  }
  for (double& v : kernel) v /= total;

  std::vector<double> tmp(plane.size());
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] * plane[static_cast<std::size_t>(y * width + mirror(x + k, width))];
      }
      tmp[static_cast<std::size_t>(y * width + x)] = acc;
    }
  }
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] * tmp[static_cast<std::size_t>(mirror(y + k, height) * width + x)];
      }
      plane[static_cast<std::size_t>(y * width + x)] = acc;
    }
  }
}

std::vector<double> smooth_noise(int width, int height, double sigma, Rng& rng) {
  std::vector<double> field(static_cast<std::size_t>(width) * static_cast<std::size_t>(height));
  for (double& v : field) v = rng.normal();
  gaussian_blur(field, width, height, sigma);
  double mean = 0.0;
  for (double v : field) mean += v;
  mean /= static_cast<double>(field.size());
  double var = 0.0;
  for (double v : field) var += (v - mean) * (v - mean);
  var /= static_cast<double>(field.size());
  const double inv = var > 0.0 ? 1.0 / std::sqrt(var) : 0.0;
  for (double& v : field) v = (v - mean) * inv;
  return field;
}

}  // namespace xraft

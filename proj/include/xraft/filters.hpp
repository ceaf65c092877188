#pragma once

#include <cstdint>
#include <vector>

#include "xraft/rng.hpp"

namespace xraft {

// Separable Gaussian blur of a row-major width x height plane, mirrored at the
// borders, kernel truncated at 3 sigma.
void gaussian_blur(std::vector<double>& plane, int width, int height, double sigma);

// Gaussian white noise smoothed with `sigma`, rescaled to zero mean and unit
// standard deviation (left at zero when the field is constant).
std::vector<double> smooth_noise(int width, int height, double sigma, Rng& rng);

}  // namespace xraft

#pragma once

#include <vector>

#include "xraft/tensor.hpp"

// Differentiable kernels. Shapes are NCHW unless noted; every op throws
// ShapeError on inconsistent inputs.
namespace xraft::ops {

// Cross-correlation. weight is [Cout, Cin, kh, kw]; bias is [Cout] or undefined.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding);

// Samples input [N,C,H,W] at absolute pixel coordinates coords [N,2,Ho,Wo]
// (channel 0 = x, channel 1 = y). Reads outside the image contribute zero.
Tensor bilinear_sample(const Tensor& input, const Tensor& coords);

// All-pairs dot products of [N,D,H,W] feature maps, scaled by 1/sqrt(D).
// Result is [N,H,W,H,W]: source (y1,x1) then target (y2,x2).
Tensor correlation_volume(const Tensor& f1, const Tensor& f2);

// For every source pixel of volume [N,H,W,h,w] gathers a (2r+1)^2 window of
// its correlation map around centers [N,2,H,W] (in level-pixel units),
// bilinearly with zero padding. Result is [N,(2r+1)^2,H,W] with channel
// (dy + r) * (2r + 1) + (dx + r).
Tensor corr_lookup(const Tensor& volume, const Tensor& centers, int radius);

// 2x2 mean pooling. H and W must be even.
Tensor avg_pool2(const Tensor& input);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t length);
Tensor reshape(const Tensor& a, Shape shape);

// Half-pixel bilinear resize by an integer factor, edge-clamped.
Tensor upsample_bilinear(const Tensor& input, int factor);

// Per (n, c) normalization over H*W, no affine parameters.
Tensor instance_norm(const Tensor& input, double eps = 1e-5);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Mean over pixels of ||pred - ref||_2 for [N,2,H,W] fields. mask, when
// defined, is a constant [N,1,H,W] 0/1 map selecting the pixels to average.
// Throws NoSupervisablePixels when the mask selects nothing.
Tensor endpoint_error(const Tensor& pred, const Tensor& ref, const Tensor& mask = Tensor());

}  // namespace xraft::ops

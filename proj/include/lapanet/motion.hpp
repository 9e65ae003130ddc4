#pragma once

#include "lapanet/types.hpp"

#include <cstdint>
#include <vector>

namespace lapanet {

/// out(x) = img(x - u(x)), bilinear, border-clamped; real and imaginary parts
/// are interpolated independently.
ComplexImage warp_bilinear(const ComplexImage& img, const DisplacementField& u);
RGrid warp_bilinear(const RGrid& img, const DisplacementField& u);

/// Bilinear sample at fractional (y, x) with border clamping.
cd sample_bilinear(const ComplexImage& img, double y, double x);
double sample_bilinear(const RGrid& img, double y, double x);

/// Bilinear x2 resampling with half-pixel centers (border clamped).
RGrid upsample2_bilinear(const RGrid& g);

/// Spatial x2 upsampling plus x2 value scaling, since displacements are in
/// pixels of the grid they live on.
DisplacementField upscale_field(const DisplacementField& u, int factor = 2);

/// 2x2 block average with /2 value scaling; inverse of upscale_field for smooth fields.
DisplacementField downscale_field(const DisplacementField& u);

/// One Gaussian displacement bump: u(x) = (ax, ay) * exp(-|x - c|^2 / (2 w^2)).
struct GaussianBump {
    double cy;
    double cx;
    double ay;
    double ax;
    double width;
};

DisplacementField synth_gaussian_field(const std::vector<GaussianBump>& bumps, Eigen::Index rows, Eigen::Index cols);

/// det(I + grad u) sampled with central differences (one-sided at borders).
RGrid jacobian_determinant(const DisplacementField& u);

/// Endpoint error per pixel.
RGrid endpoint_error(const DisplacementField& a, const DisplacementField& b);

} // namespace lapanet

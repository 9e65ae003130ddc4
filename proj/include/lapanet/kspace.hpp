#pragma once

// Fourier-domain primitives. Conventions used throughout the library:
//
//  * The DFT is unitary: 1/sqrt(H*W) in both directions.
//  * Grids are centered. Pixel index n maps to coordinate n - floor(N/2) and
//    frequency index k to angular frequency 2*pi*(k - floor(N/2))/N, so the
//    zero frequency sits at (floor(H/2), floor(W/2)).
//  * x is the column (width) axis, y is the row (height) axis.

#include "lapanet/sampling_pattern.hpp"
#include "lapanet/types.hpp"

namespace lapanet {

CGrid fft2_centered(const CGrid& img);
CGrid ifft2_centered(const CGrid& k);

/// Angular frequency of column index `col` on a width-`n` grid.
double angular_frequency(Eigen::Index index, Eigen::Index n);

/// Circular shift: out(y, x) = in(y - dy, x - dx) with periodic wrap.
CGrid circular_shift(const CGrid& in, Eigen::Index dy, Eigen::Index dx);

/// H(k) = exp(-j (ux*kx + uy*ky)) on the centered angular-frequency grid.
CGrid all_pass_filter_response(double ux, double uy, Eigen::Index rows, Eigen::Index cols);

/// k(k) * exp(-j u^T k). For integer u this is exactly a circular image shift by u.
CGrid apply_phase_ramp(const CGrid& k, double ux, double uy);

/// Moves the zero frequency from the grid center to index (0, 0): a circular
/// shift by -floor(N/2) along each axis. An involution on even-sized grids.
CGrid inverse_zero_frequency_shift(const CGrid& k);
MultiCoil inverse_zero_frequency_shift(const MultiCoil& k);

/// Per-coil acquisition: mask or radially sample fft2_centered(map_c * img).
/// Cartesian output is an H x W grid per coil with unsampled rows exactly zero;
/// radial output is an n_spokes x readout grid of spoke samples per coil.
MultiCoil multicoil_forward(const ComplexImage& img, const CoilSensitivityMap& maps, const SamplingPattern& pattern);

/// Exact adjoint of multicoil_forward for the same pattern.
ComplexImage multicoil_adjoint(const MultiCoil& k, const CoilSensitivityMap& maps, const SamplingPattern& pattern);

/// Adjoint for fully sampled Cartesian k-space: sum_c conj(map_c) * ifft2_centered(k_c).
ComplexImage multicoil_adjoint(const MultiCoil& k, const CoilSensitivityMap& maps);

/// Coil-resolved images map_c * img.
MultiCoil coil_images(const ComplexImage& img, const CoilSensitivityMap& maps);
MultiCoil fft2_centered(const MultiCoil& images);
MultiCoil ifft2_centered(const MultiCoil& k);

/// Smooth synthetic coil maps: Gaussian receive profiles placed on a ring
/// around the field of view with a linear phase each, normalized so that
/// sum_c |map_c|^2 == 1 at every pixel.
CoilSensitivityMap synthetic_coil_maps(int n_coils, Eigen::Index rows, Eigen::Index cols);

/// Largest deviation of sum_c |map_c|^2 from 1.
double coil_normalization_error(const CoilSensitivityMap& maps);

/// Result of projecting the coil dimension onto its leading left singular vectors.
struct CoilCompression {
    MultiCoil data;
    Eigen::MatrixXcd basis;              ///< n_c x n_out, orthonormal columns
    Eigen::VectorXd singular_values;     ///< all n_c values, descending
};

CoilCompression coil_compress_svd(const MultiCoil& k, int n_out);

/// Divides by the largest magnitude so that max |img| == 1.
ComplexImage normalize_max(const ComplexImage& img);

/// Joint normalization of a coil set by its largest magnitude over all coils.
MultiCoil normalize_max(const MultiCoil& images);

double energy(const CGrid& g);
double energy(const MultiCoil& m);

} // namespace lapanet

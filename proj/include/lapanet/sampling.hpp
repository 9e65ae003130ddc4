#pragma once

#include "lapanet/sampling_pattern.hpp"
#include "lapanet/types.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace lapanet {

/// R = full_count / frame_count, lines or spokes per frame.
struct AccelerationReport {
    int full_count = 0;
    int frame_count = 0;
    double R = 1.0;
};

AccelerationReport acceleration(int full_count, int frame_count);
AccelerationReport acceleration(const SamplingPattern& pattern, int full_count);

/// pi * (sqrt(5) - 1) / 2, about 111.246 degrees. Its complement
/// pi * (3 - sqrt(5)) / 2 visits the same angles mod pi in reverse order.
double golden_angle();

/// Number of spokes that satisfies angular Nyquist at the edge of a width-n grid.
int fully_sampled_spokes(int n);

/// Variable-density incoherent Cartesian masks, one per frame. The central line
/// is always kept; the remaining lines are drawn without replacement from a
/// Gaussian density over line offsets (sigma = n_pe / 6) using a per-frame seed.
/// This approximates VISTA; it does not run the VISTA optimization.
std::vector<SamplingPattern> vista_like_mask(int n_pe, int n_frames, int lines_per_frame, uint64_t seed);

/// angle_i = ((start_index + i) * golden_angle()) mod pi.
SamplingPattern golden_angle_spokes(int n_spokes, int64_t start_index, int readout);

/// Angular-frequency location of readout sample `s` on a spoke at `angle`.
struct KLocation {
    double kx;
    double ky;
};
KLocation spoke_location(double angle, int s, int readout);

/// Direct evaluation of the unitary centered DFT at the spoke locations.
/// Output is n_spokes x readout.
CGrid radial_sample(const ComplexImage& img, const SamplingPattern& pattern);

/// Exact adjoint of radial_sample (direct summation back onto the pixel grid).
ComplexImage radial_adjoint(const CGrid& spokes, const SamplingPattern& pattern, Eigen::Index rows, Eigen::Index cols);

/// Density-compensated nearest-neighbour gridding of spoke samples onto the
/// Cartesian k-space grid. Samples that fall into the same cell are averaged
/// with ramp weights max(|k|, dk/2); cells no spoke touches are exactly zero.
CGrid radial_adjoint_grid(const CGrid& spokes, const SamplingPattern& pattern, Eigen::Index rows, Eigen::Index cols);

/// Cells covered by the rasterized spokes (1 = filled).
Eigen::Array<uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
radial_support(const SamplingPattern& pattern, Eigen::Index rows, Eigen::Index cols);

/// Zeroes every non-selected phase-encode row in every coil.
MultiCoil apply_cartesian_mask(const MultiCoil& k, const SamplingPattern& pattern);
CGrid apply_cartesian_mask(const CGrid& k, const SamplingPattern& pattern);

/// Radially samples each coil image's spectrum and grids it back to a k-space grid.
MultiCoil radial_undersample(const MultiCoil& coil_images, const SamplingPattern& pattern);

/// Undersamples fully sampled multi-coil k-space (or coil images for radial)
/// according to the pattern kind and returns gridded k-space.
MultiCoil undersample_kspace(const MultiCoil& full_k, const SamplingPattern& pattern);

/// CSV serialization: cartesian rows "frame,line", radial rows "frame,angle".
void write_patterns_csv(std::ostream& os, const std::vector<SamplingPattern>& patterns);
std::vector<SamplingPattern> read_patterns_csv(std::istream& is, int n_pe_or_readout);

/// Pattern as a real mask grid (1 = acquired k-space cell).
RGrid pattern_mask(const SamplingPattern& pattern, Eigen::Index rows, Eigen::Index cols);

/// Builds the pattern for a requested acceleration on a grid of `n` lines or
/// readout samples. Cartesian keeps round(n / R) lines, radial keeps
/// round(fully_sampled_spokes(n) / R) spokes.
SamplingPattern pattern_for_acceleration(PatternKind kind, int n, double R, uint64_t seed, int frame_index);

std::string to_string(PatternKind kind);
PatternKind pattern_kind_from_string(const std::string& s);

} // namespace lapanet

#pragma once

#include "lapanet/nn/tensor.hpp"
#include "lapanet/sampling_pattern.hpp"
#include "lapanet/types.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace lapanet {

/// Per-input attribution heatmaps: the signed sum over the coil and re/im channels
/// of each input, moved back so the k-space center sits at (H/2, W/2).
struct AttributionMaps {
    RGrid fix;
    RGrid mov;
};
AttributionMaps attribution_maps(const nn::Tensor& attribution, int n_coils);

/// |F(map)|^2 with the unitary centered transform; sums to the energy of the map.
RGrid power_spectrum(const RGrid& map);

/// Lines through the spectrum center: along the readout (row H/2) and phase-encode (column W/2) axes.
struct CentralProfiles {
    std::vector<double> readout;
    std::vector<double> phase_encode;
};
CentralProfiles central_profiles(const RGrid& spectrum);

/// Spectral blur that a Cartesian row mask applies to the power spectrum of a
/// masked map along the phase-encode axis: |F_1d(m)|^2 / n, centered.
std::vector<double> cartesian_psf(const SamplingPattern& pattern);

/// Circular convolution of a centered profile with a centered kernel.
std::vector<double> circular_convolve(const std::vector<double>& profile, const std::vector<double>& kernel);

/// Wiener-style division in the transform domain of the profile:
/// conj(H) / (|H|^2 + lambda^2) with lambda = floor_ratio * max|H|.
std::vector<double> wiener_deconvolve(const std::vector<double>& profile, const std::vector<double>& kernel,
                                      double floor_ratio = 1e-3);

/// Ring average of the spectrum at integer radii 0 .. min(H, W)/2 around the center.
std::vector<double> radial_nps(const RGrid& spectrum);

/// Fraction of the profile energy in the central `band` of its length.
double central_band_fraction(const std::vector<double>& profile, double band = 0.25);

struct NpsResult {
    std::vector<double> readout;         ///< mean readout profile
    std::vector<double> phase_encode;    ///< mean phase-encode profile, PSF-deconvolved where a Cartesian pattern is given
    std::vector<double> nps;             ///< mean ring average
    double low_frequency_fraction = 0.0; ///< central quarter-band share of readout + phase_encode energy
    int maps = 0;
};

/// Mean profiles and NPS over a set of maps. patterns may be empty or hold one
/// entry per map; radial entries and std::nullopt are left undeconvolved.
NpsResult nps_analysis(const std::vector<RGrid>& maps, const std::vector<std::optional<SamplingPattern>>& patterns = {});

/// Long-format CSV rows label,series,index,frequency,value with series in readout, phase_encode, nps
/// and frequency in cycles per pixel.
void write_nps_header(std::ostream& os);
void write_nps_csv(std::ostream& os, const NpsResult& r, const std::string& label);

} // namespace lapanet

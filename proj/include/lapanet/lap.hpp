#pragma once

#include "lapanet/types.hpp"

#include <array>
#include <vector>

namespace lapanet {

/// Separable tapering window of support `width` centered at (cy, cx): flat over
/// the central half, raised-cosine roll-off over the outer quarters. Along an
/// axis where the support spans the whole image the window is 1, so a window
/// the size of the image is the untapered global case.
RGrid taper_weights(Eigen::Index rows, Eigen::Index cols, double cy, double cx, int width);

/// k-space of the image windowed by taper_weights, i.e. the full k-space
/// convolved with the (phase-modulated) window spectrum.
CGrid taper_window(const CGrid& k_full, double cy, double cx, int width);

/// FIR realization of a local all-pass filter: a (2r+1)x(2r+1) stencil.
/// coeffs(r + ny, r + nx) multiplies offset (ny, nx).
struct AllPassFilter {
    RGrid coeffs;
    int r = 0;
    double residual = 0.0;   ///< normalized forward-backward mismatch in [0, 2]
    bool well_posed = true;  ///< false when the normal equations were degenerate

    double sum() const { return coeffs.sum(); }
};

/// Least-squares all-pass filter h with sum(h) = 1 solving
///   sum_n h_n mov(x - n) = sum_n h_n fix(x + n)
/// over the pixels where every offset stays inside the patch. `weights`
/// (optional, same shape) weights each pixel's residual.
AllPassFilter estimate_local_allpass(const CGrid& fix, const CGrid& mov, int r, const RGrid& weights = {});

/// u = 2 * first moment / sum per axis, returned as (ux, uy).
std::array<double, 2> filter_to_displacement(const AllPassFilter& f);

struct LapLevel {
    int window = 0;   ///< window width in pixels
    int radius = 1;   ///< stencil radius
};

struct LapSchedule {
    std::vector<LapLevel> levels;
    int iterations = 3;              ///< warp-and-re-estimate passes per level
    double reject_threshold = 0.35;  ///< absolute residual above which a window is discarded
    double outlier_factor = 3.0;     ///< windows above factor * median residual are discarded
    double min_energy = 1e-3;        ///< windows below this fraction of the max window energy are discarded

    /// Windows of 1, 1/2, 1/4, 1/8 of the field of view with radii 3, 2, 1, 1
    /// (truncated to `levels`).
    static LapSchedule standard(int rows, int cols, int levels = 4);
    void validate() const;
};

struct LapResult {
    DisplacementField u;
    std::vector<double> residuals;   ///< mean |fix - T(mov, u)|: initial, then after each level
    int windows_used = 0;
    int windows_rejected = 0;
};

/// Coarse-to-fine LAP registration of two images.
LapResult lap_register_images(const ComplexImage& fix, const ComplexImage& mov, const LapSchedule& schedule);

/// Same, from k-space grids (zero-filled where unsampled).
LapResult lap_register_multiscale(const CGrid& k_fix, const CGrid& k_mov, const LapSchedule& schedule);

} // namespace lapanet

#pragma once

#include "lapanet/types.hpp"

#include <array>
#include <cstdint>

namespace lapanet {

using Mask = Eigen::Array<uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// RMS of |ref - test| divided by the dynamic range max|ref| - min|ref|.
double nrmse(const ComplexImage& ref, const ComplexImage& test);

/// 2|A n B| / (|A| + |B|), 1 when both masks are empty.
double dice(const Mask& a, const Mask& b);

enum class HausdorffMode { max, percentile95 };

/// Symmetric Hausdorff distance between the boundary pixels of two masks,
/// scaled by `spacing` (mm per pixel). Boundary pixels are mask pixels with a
/// 4-neighbour outside the mask or on the image edge.
double hausdorff(const Mask& a, const Mask& b, double spacing, HausdorffMode mode = HausdorffMode::max);

Mask boundary(const Mask& m);

/// Exact squared Euclidean distance to the nearest set pixel (separable lower-envelope transform).
RGrid squared_distance_transform(const Mask& sites);

Mask label_mask(const LabelGrid& labels, int32_t label);
Mask foreground(const LabelGrid& labels);

/// Segmentation bounding box dilated by `margin` pixels and clipped to the
/// grid. An empty segmentation yields the full grid.
Mask box_mask(const LabelGrid& labels, int margin = 10);

/// Nearest-neighbour label resampling with the warp_bilinear convention.
LabelGrid warp_mask(const LabelGrid& labels, const DisplacementField& u);

/// Registration quality of one pair: the warped moving image and labels
/// against the fixed ones. Per-class arrays are indexed by Label - 1
/// (myocardium, cavity, RV pool); `hdd_mm` is in millimetres.
struct EvalResult {
    double nrmse = 0.0;
    std::array<double, 3> dsc{};
    std::array<double, 3> hdd_mm{};
    double mean_dsc() const { return (dsc[0] + dsc[1] + dsc[2]) / 3.0; }
    double mean_hdd() const { return (hdd_mm[0] + hdd_mm[1] + hdd_mm[2]) / 3.0; }
};

EvalResult evaluate_registration(const ComplexImage& fixed, const ComplexImage& moving, const LabelGrid& fixed_labels,
                                 const LabelGrid& moving_labels, const DisplacementField& u, double spacing_mm,
                                 HausdorffMode mode = HausdorffMode::max);

} // namespace lapanet

#pragma once

#include <Eigen/Core>

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lapanet {

using cd = std::complex<double>;

/// Row-major complex grid, rows = height (y), cols = width (x).
using CGrid = Eigen::Array<cd, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RGrid = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using LabelGrid = Eigen::Array<int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Image-space complex data (normalized intensity, no units).
using ComplexImage = CGrid;

/// Thrown when a caller violates a precondition (shapes, ranges, counts).
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown for failures that depend on the data rather than the call
/// (rank deficiency, divergence, insufficient signal).
class RuntimeFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One complex grid per receiver coil, all sharing the same shape.
struct MultiCoil {
    std::vector<CGrid> coils;

    MultiCoil() = default;
    explicit MultiCoil(std::vector<CGrid> c) : coils(std::move(c)) {}
    MultiCoil(int n_coils, Eigen::Index rows, Eigen::Index cols)
        : coils(static_cast<size_t>(n_coils), CGrid::Zero(rows, cols)) {}

    int count() const { return static_cast<int>(coils.size()); }
    Eigen::Index rows() const { return coils.empty() ? 0 : coils.front().rows(); }
    Eigen::Index cols() const { return coils.empty() ? 0 : coils.front().cols(); }

    /// Throws ValidationError unless there is at least one coil and all coils share a shape.
    void validate() const;
};

using MultiCoilKSpace = MultiCoil;

/// Per-coil complex sensitivity weights.
struct CoilSensitivityMap {
    std::vector<CGrid> maps;

    int count() const { return static_cast<int>(maps.size()); }
    Eigen::Index rows() const { return maps.empty() ? 0 : maps.front().rows(); }
    Eigen::Index cols() const { return maps.empty() ? 0 : maps.front().cols(); }
};

/// Dense 2D displacement in pixels. A field u relates a fixed and a moving
/// image through I_fix(x) = I_mov(x - u(x)).
struct DisplacementField {
    RGrid ux;
    RGrid uy;

    DisplacementField() = default;
    DisplacementField(Eigen::Index rows, Eigen::Index cols)
        : ux(RGrid::Zero(rows, cols)), uy(RGrid::Zero(rows, cols)) {}
    DisplacementField(RGrid x, RGrid y) : ux(std::move(x)), uy(std::move(y)) {}

    static DisplacementField constant(Eigen::Index rows, Eigen::Index cols, double dx, double dy)
    {
        return {RGrid::Constant(rows, cols, dx), RGrid::Constant(rows, cols, dy)};
    }

    Eigen::Index rows() const { return ux.rows(); }
    Eigen::Index cols() const { return ux.cols(); }
    double max_magnitude() const { return (ux.square() + uy.square()).sqrt().maxCoeff(); }
};

bool all_finite(const CGrid& g);
bool all_finite(const RGrid& g);
void require_finite(const CGrid& g, const char* what);
void require_same_shape(const CGrid& a, const CGrid& b, const char* what);

} // namespace lapanet

#include "lapanet/motion.hpp"

#include <algorithm>
#include <cmath>

namespace lapanet {

namespace {

template <class Grid>
auto bilinear(const Grid& img, double y, double x)
{
    const double ymax = static_cast<double>(img.rows() - 1);
    const double xmax = static_cast<double>(img.cols() - 1);
    y = std::clamp(y, 0.0, ymax);
    x = std::clamp(x, 0.0, xmax);
    const auto y0 = static_cast<Eigen::Index>(std::floor(y));
    const auto x0 = static_cast<Eigen::Index>(std::floor(x));
    const Eigen::Index y1 = std::min<Eigen::Index>(y0 + 1, img.rows() - 1);
    const Eigen::Index x1 = std::min<Eigen::Index>(x0 + 1, img.cols() - 1);
    const double fy = y - static_cast<double>(y0);
    const double fx = x - static_cast<double>(x0);
    return (1.0 - fy) * ((1.0 - fx) * img(y0, x0) + fx * img(y0, x1))
           + fy * ((1.0 - fx) * img(y1, x0) + fx * img(y1, x1));
}

template <class Grid>
Grid warp_impl(const Grid& img, const DisplacementField& u)
{
    if (u.rows() != img.rows() || u.cols() != img.cols() || u.uy.rows() != img.rows() || u.uy.cols() != img.cols())
        throw ValidationError("warp_bilinear: field and image shapes differ");
    Grid out(img.rows(), img.cols());
    for (Eigen::Index y = 0; y < img.rows(); ++y) {
        for (Eigen::Index x = 0; x < img.cols(); ++x)
            out(y, x) = bilinear(img, static_cast<double>(y) - u.uy(y, x), static_cast<double>(x) - u.ux(y, x));
    }
    return out;
}

} // namespace

cd sample_bilinear(const ComplexImage& img, double y, double x)
{
    return bilinear(img, y, x);
}

double sample_bilinear(const RGrid& img, double y, double x)
{
    return bilinear(img, y, x);
}

ComplexImage warp_bilinear(const ComplexImage& img, const DisplacementField& u)
{
    return warp_impl(img, u);
}

RGrid warp_bilinear(const RGrid& img, const DisplacementField& u)
{
    return warp_impl(img, u);
}

RGrid upsample2_bilinear(const RGrid& g)
{
    RGrid out(2 * g.rows(), 2 * g.cols());
    for (Eigen::Index y = 0; y < out.rows(); ++y) {
        const double sy = (static_cast<double>(y) + 0.5) / 2.0 - 0.5;
        for (Eigen::Index x = 0; x < out.cols(); ++x) {
            const double sx = (static_cast<double>(x) + 0.5) / 2.0 - 0.5;
            out(y, x) = bilinear(g, sy, sx);
        }
    }
    return out;
}

DisplacementField upscale_field(const DisplacementField& u, int factor)
{
    if (factor < 2 || (factor & (factor - 1)) != 0)
        throw ValidationError("upscale_field: factor must be a power of two >= 2");
    DisplacementField out = u;
    for (int f = 1; f < factor; f *= 2)
        out = {2.0 * upsample2_bilinear(out.ux), 2.0 * upsample2_bilinear(out.uy)};
    return out;
}

DisplacementField downscale_field(const DisplacementField& u)
{
    const Eigen::Index rows = u.rows() / 2;
    const Eigen::Index cols = u.cols() / 2;
    DisplacementField out(rows, cols);
    for (Eigen::Index y = 0; y < rows; ++y) {
        for (Eigen::Index x = 0; x < cols; ++x) {
            out.ux(y, x) = 0.5 * u.ux.block(2 * y, 2 * x, 2, 2).mean();
            out.uy(y, x) = 0.5 * u.uy.block(2 * y, 2 * x, 2, 2).mean();
        }
    }
    return out;
}

DisplacementField synth_gaussian_field(const std::vector<GaussianBump>& bumps, Eigen::Index rows, Eigen::Index cols)
{
    DisplacementField u(rows, cols);
    for (const auto& b : bumps) {
        if (!(b.width > 0.0))
            throw ValidationError("synth_gaussian_field: widths must be positive");
        for (Eigen::Index y = 0; y < rows; ++y) {
            for (Eigen::Index x = 0; x < cols; ++x) {
                const double dy = static_cast<double>(y) - b.cy;
                const double dx = static_cast<double>(x) - b.cx;
                const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * b.width * b.width));
                u.ux(y, x) += b.ax * g;
                u.uy(y, x) += b.ay * g;
            }
        }
    }
    return u;
}

namespace {

double derivative(const RGrid& g, Eigen::Index y, Eigen::Index x, bool along_x)
{
    const Eigen::Index n = along_x ? g.cols() : g.rows();
    const Eigen::Index i = along_x ? x : y;
    auto at = [&](Eigen::Index j) { return along_x ? g(y, j) : g(j, x); };
    if (n < 2)
        return 0.0;
    if (i == 0)
        return at(1) - at(0);
    if (i == n - 1)
        return at(n - 1) - at(n - 2);
    return 0.5 * (at(i + 1) - at(i - 1));
}

} // namespace

RGrid jacobian_determinant(const DisplacementField& u)
{
    RGrid det(u.rows(), u.cols());
    for (Eigen::Index y = 0; y < u.rows(); ++y) {
        for (Eigen::Index x = 0; x < u.cols(); ++x) {
            const double a = 1.0 + derivative(u.ux, y, x, true);
            const double b = derivative(u.ux, y, x, false);
            const double c = derivative(u.uy, y, x, true);
            const double d = 1.0 + derivative(u.uy, y, x, false);
            det(y, x) = a * d - b * c;
        }
    }
    return det;
}

RGrid endpoint_error(const DisplacementField& a, const DisplacementField& b)
{
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ValidationError("endpoint_error: field shapes differ");
    return ((a.ux - b.ux).square() + (a.uy - b.uy).square()).sqrt();
}

} // namespace lapanet

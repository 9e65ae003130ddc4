#include "lapanet/metrics.hpp"

#include "lapanet/motion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace lapanet {

double nrmse(const ComplexImage& ref, const ComplexImage& test)
{
    require_same_shape(ref, test, "nrmse");
    const RGrid mag = ref.abs();
    const double range = mag.maxCoeff() - mag.minCoeff();
    if (!(range > 0.0))
        throw ValidationError("nrmse: reference has zero dynamic range");
    return std::sqrt((ref - test).abs2().mean()) / range;
}

double dice(const Mask& a, const Mask& b)
{
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ValidationError("dice: mask shapes differ");
    long inter = 0, na = 0, nb = 0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const bool pa = a.data()[i] != 0;
        const bool pb = b.data()[i] != 0;
        na += pa;
        nb += pb;
        inter += pa && pb;
    }
    if (na + nb == 0)
        return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

Mask boundary(const Mask& m)
{
    Mask out = Mask::Zero(m.rows(), m.cols());
    for (Eigen::Index y = 0; y < m.rows(); ++y) {
        for (Eigen::Index x = 0; x < m.cols(); ++x) {
            if (!m(y, x))
                continue;
            const bool edge = y == 0 || x == 0 || y == m.rows() - 1 || x == m.cols() - 1;
            if (edge || !m(y - 1, x) || !m(y + 1, x) || !m(y, x - 1) || !m(y, x + 1))
                out(y, x) = 1;
        }
    }
    return out;
}

namespace {

// 1D squared distance transform of a sampled function (lower envelope of parabolas).
void distance_1d(const std::vector<double>& f, std::vector<double>& d)
{
    const int n = static_cast<int>(f.size());
    std::vector<int> v(static_cast<size_t>(n));
    std::vector<double> z(static_cast<size_t>(n) + 1);
    int k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    auto intersect = [&](int q, int p) { return ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p)); };
    for (int q = 1; q < n; ++q) {
        double s = intersect(q, v[k]);
        while (s <= z[k]) {
            --k;
            s = intersect(q, v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q)
            ++k;
        const double diff = q - v[k];
        d[q] = diff * diff + f[v[k]];
    }
}

} // namespace

RGrid squared_distance_transform(const Mask& sites)
{
    const auto rows = sites.rows();
    const auto cols = sites.cols();
    constexpr double far = 1e20;
    RGrid g(rows, cols);
    std::vector<double> f, d;
    f.resize(static_cast<size_t>(rows));
    d.resize(f.size());
    for (Eigen::Index x = 0; x < cols; ++x) {
        for (Eigen::Index y = 0; y < rows; ++y)
            f[y] = sites(y, x) ? 0.0 : far;
        distance_1d(f, d);
        for (Eigen::Index y = 0; y < rows; ++y)
            g(y, x) = d[y];
    }
    f.resize(static_cast<size_t>(cols));
    d.resize(f.size());
    for (Eigen::Index y = 0; y < rows; ++y) {
        for (Eigen::Index x = 0; x < cols; ++x)
            f[x] = g(y, x);
        distance_1d(f, d);
        for (Eigen::Index x = 0; x < cols; ++x)
            g(y, x) = d[x];
    }
    return g;
}

namespace {

std::vector<double> directed_distances(const Mask& from, const RGrid& to_dt)
{
    std::vector<double> out;
    for (Eigen::Index i = 0; i < from.size(); ++i) {
        if (from.data()[i])
            out.push_back(std::sqrt(to_dt.data()[i]));
    }
    return out;
}

double percentile95(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    const double pos = 0.95 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<size_t>(std::floor(pos));
    const size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

} // namespace

double hausdorff(const Mask& a, const Mask& b, double spacing, HausdorffMode mode)
{
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ValidationError("hausdorff: mask shapes differ");
    if ((a != 0).count() == 0 || (b != 0).count() == 0)
        throw ValidationError("hausdorff: masks must be nonempty");
    const Mask ba = boundary(a);
    const Mask bb = boundary(b);
    const auto ab = directed_distances(ba, squared_distance_transform(bb));
    const auto ba_d = directed_distances(bb, squared_distance_transform(ba));
    if (mode == HausdorffMode::percentile95)
        return spacing * std::max(percentile95(ab), percentile95(ba_d));
    return spacing * std::max(*std::max_element(ab.begin(), ab.end()), *std::max_element(ba_d.begin(), ba_d.end()));
}

Mask label_mask(const LabelGrid& labels, int32_t label)
{
    return (labels == label).cast<uint8_t>();
}

Mask foreground(const LabelGrid& labels)
{
    return (labels != 0).cast<uint8_t>();
}

Mask box_mask(const LabelGrid& labels, int margin)
{
    Eigen::Index y0 = labels.rows(), y1 = -1, x0 = labels.cols(), x1 = -1;
    for (Eigen::Index y = 0; y < labels.rows(); ++y) {
        for (Eigen::Index x = 0; x < labels.cols(); ++x) {
            if (labels(y, x) != 0) {
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
            }
        }
    }
    if (y1 < 0)
        return Mask::Ones(labels.rows(), labels.cols());
    y0 = std::max<Eigen::Index>(0, y0 - margin);
    x0 = std::max<Eigen::Index>(0, x0 - margin);
    y1 = std::min<Eigen::Index>(labels.rows() - 1, y1 + margin);
    x1 = std::min<Eigen::Index>(labels.cols() - 1, x1 + margin);
    Mask box = Mask::Zero(labels.rows(), labels.cols());
    box.block(y0, x0, y1 - y0 + 1, x1 - x0 + 1).setOnes();
    return box;
}

LabelGrid warp_mask(const LabelGrid& labels, const DisplacementField& u)
{
    if (u.rows() != labels.rows() || u.cols() != labels.cols())
        throw ValidationError("warp_mask: field and mask shapes differ");
    LabelGrid out(labels.rows(), labels.cols());
    for (Eigen::Index y = 0; y < labels.rows(); ++y) {
        for (Eigen::Index x = 0; x < labels.cols(); ++x) {
            const auto sy = std::clamp<Eigen::Index>(std::lround(static_cast<double>(y) - u.uy(y, x)), 0, labels.rows() - 1);
            const auto sx = std::clamp<Eigen::Index>(std::lround(static_cast<double>(x) - u.ux(y, x)), 0, labels.cols() - 1);
            out(y, x) = labels(sy, sx);
        }
    }
    return out;
}

EvalResult evaluate_registration(const ComplexImage& fixed, const ComplexImage& moving, const LabelGrid& fixed_labels,
                                 const LabelGrid& moving_labels, const DisplacementField& u, double spacing_mm,
                                 HausdorffMode mode)
{
    EvalResult r;
    r.nrmse = nrmse(fixed, warp_bilinear(moving, u));
    const LabelGrid warped = warp_mask(moving_labels, u);
    for (int c = 0; c < 3; ++c) {
        const Mask a = label_mask(fixed_labels, c + 1);
        const Mask b = label_mask(warped, c + 1);
        r.dsc[c] = dice(a, b);
        const bool ea = (a != 0).count() == 0;
        const bool eb = (b != 0).count() == 0;
        if (ea && eb)
            r.hdd_mm[c] = 0.0;
        else if (ea || eb)
            r.hdd_mm[c] = spacing_mm * std::hypot(static_cast<double>(fixed.rows()), static_cast<double>(fixed.cols()));
        else
            r.hdd_mm[c] = hausdorff(a, b, spacing_mm, mode);
    }
    return r;
}

} // namespace lapanet

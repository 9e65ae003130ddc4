#include "lapanet/lap.hpp"

#include "lapanet/kspace.hpp"
#include "lapanet/motion.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace lapanet {

namespace {

double taper_1d(double d, int width, Eigen::Index extent)
{
    if (width >= extent)
        return 1.0;
    const double half = width / 2.0;
    const double flat = width / 4.0;
    const double a = std::abs(d);
    if (a <= flat)
        return 1.0;
    if (a >= half)
        return 0.0;
    return 0.5 * (1.0 + std::cos(std::numbers::pi * (a - flat) / (half - flat)));
}

double median(std::vector<double> v)
{
    if (v.empty())
        return 0.0;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (v.size() % 2)
        return *mid;
    const double hi = *mid;
    const double lo = *std::max_element(v.begin(), mid);
    return 0.5 * (lo + hi);
}

double mean_abs_residual(const ComplexImage& fix, const ComplexImage& mov, const DisplacementField& u)
{
    return (fix - warp_bilinear(mov, u)).abs().mean();
}

// Offset window starts covering [0, n) with the given width and stride.
std::vector<Eigen::Index> window_starts(Eigen::Index n, int width, int stride)
{
    std::vector<Eigen::Index> s;
    if (width >= n)
        return {0};
    for (Eigen::Index p = 0; p + width <= n; p += stride)
        s.push_back(p);
    if (s.back() + width < n)
        s.push_back(n - width);
    return s;
}

struct WindowEstimate {
    double cy = 0.0;
    double cx = 0.0;
    double ux = 0.0;
    double uy = 0.0;
    double residual = 0.0;
    double energy = 0.0;
    bool valid = false;
};

} // namespace

RGrid taper_weights(Eigen::Index rows, Eigen::Index cols, double cy, double cx, int width)
{
    RGrid w(rows, cols);
    for (Eigen::Index y = 0; y < rows; ++y) {
        const double wy = taper_1d(static_cast<double>(y) - cy, width, rows);
        for (Eigen::Index x = 0; x < cols; ++x)
            w(y, x) = wy * taper_1d(static_cast<double>(x) - cx, width, cols);
    }
    return w;
}

CGrid taper_window(const CGrid& k_full, double cy, double cx, int width)
{
    if (width < 4)
        throw ValidationError("taper_window: width must be at least 4");
    const double half = width / 2.0;
    const bool fits_y = width >= k_full.rows() || (cy - half >= -0.5 && cy + half <= k_full.rows() - 0.5);
    const bool fits_x = width >= k_full.cols() || (cx - half >= -0.5 && cx + half <= k_full.cols() - 0.5);
    if (!fits_y || !fits_x)
        throw ValidationError("taper_window: window exceeds the image bounds");
    const RGrid w = taper_weights(k_full.rows(), k_full.cols(), cy, cx, width);
    return fft2_centered(ComplexImage(ifft2_centered(k_full) * w.cast<cd>()));
}

AllPassFilter estimate_local_allpass(const CGrid& fix, const CGrid& mov, int r, const RGrid& weights)
{
    require_same_shape(fix, mov, "estimate_local_allpass");
    if (r < 1 || r > 3)
        throw ValidationError("estimate_local_allpass: radius must be 1, 2 or 3");
    if (weights.size() && (weights.rows() != fix.rows() || weights.cols() != fix.cols()))
        throw ValidationError("estimate_local_allpass: weight shape differs from the windows");
    const Eigen::Index rows = fix.rows(), cols = fix.cols();
    if (rows <= 2 * r || cols <= 2 * r)
        throw ValidationError("estimate_local_allpass: window smaller than the stencil");

    const int side = 2 * r + 1;
    const int k = side * side;
    const int center = k / 2;
    std::vector<std::array<int, 2>> offsets;
    for (int ny = -r; ny <= r; ++ny)
        for (int nx = -r; nx <= r; ++nx)
            offsets.push_back({ny, nx});

    // Normal equations of the constrained problem after eliminating h_center:
    //   min sum_x w |D_c(x) + sum_{n != c} h_n (D_n(x) - D_c(x))|^2
    // with D_n(x) = mov(x - n) - fix(x + n).
    Eigen::MatrixXd ata = Eigen::MatrixXd::Zero(k - 1, k - 1);
    Eigen::VectorXd atb = Eigen::VectorXd::Zero(k - 1);
    Eigen::VectorXcd d(k);
    Eigen::VectorXcd col(k - 1);
    for (Eigen::Index y = r; y < rows - r; ++y) {
        for (Eigen::Index x = r; x < cols - r; ++x) {
            const double w = weights.size() ? weights(y, x) : 1.0;
            if (w <= 0.0)
                continue;
            for (int i = 0; i < k; ++i)
                d(i) = mov(y - offsets[i][0], x - offsets[i][1]) - fix(y + offsets[i][0], x + offsets[i][1]);
            for (int i = 0, j = 0; i < k; ++i) {
                if (i != center)
                    col(j++) = d(i) - d(center);
            }
            // Real unknowns: Re/Im parts contribute separately.
            ata.noalias() += w * (col.real() * col.real().transpose() + col.imag() * col.imag().transpose());
            atb.noalias() -= w * (col.real() * d(center).real() + col.imag() * d(center).imag());
        }
    }

    AllPassFilter f;
    f.r = r;
    f.coeffs = RGrid::Zero(side, side);
    const double trace = ata.trace();
    if (!(trace > 0.0) || !std::isfinite(trace)) {
        f.coeffs(r, r) = 1.0;
        f.well_posed = false;
        f.residual = std::numeric_limits<double>::infinity();
        return f;
    }
    // Light ridge: the constraint leaves a family of equivalent filters
    // (any symmetric factor); the ridge picks the smallest one.
    ata.diagonal().array() += 1e-6 * trace / (k - 1);
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(ata);
    const Eigen::VectorXd h = ldlt.solve(atb);
    if (ldlt.info() != Eigen::Success || !h.allFinite()) {
        f.coeffs(r, r) = 1.0;
        f.well_posed = false;
        f.residual = std::numeric_limits<double>::infinity();
        return f;
    }
    double hc = 1.0;
    for (int i = 0, j = 0; i < k; ++i) {
        if (i == center)
            continue;
        f.coeffs(offsets[i][0] + r, offsets[i][1] + r) = h(j);
        hc -= h(j++);
    }
    f.coeffs(r, r) = hc;

    double num = 0.0, den = 0.0;
    for (Eigen::Index y = r; y < rows - r; ++y) {
        for (Eigen::Index x = r; x < cols - r; ++x) {
            const double w = weights.size() ? weights(y, x) : 1.0;
            if (w <= 0.0)
                continue;
            cd p = 0.0, q = 0.0;
            for (int i = 0; i < k; ++i) {
                const double c = f.coeffs(offsets[i][0] + r, offsets[i][1] + r);
                p += c * mov(y - offsets[i][0], x - offsets[i][1]);
                q += c * fix(y + offsets[i][0], x + offsets[i][1]);
            }
            num += w * std::norm(p - q);
            den += w * (std::norm(p) + std::norm(q));
        }
    }
    if (den > 0.0) {
        f.residual = num / den;
    } else {
        f.residual = std::numeric_limits<double>::infinity();
        f.well_posed = false;
    }
    return f;
}

std::array<double, 2> filter_to_displacement(const AllPassFilter& f)
{
    const double s = f.sum();
    if (s == 0.0 || !std::isfinite(s))
        throw ValidationError("filter_to_displacement: coefficient sum is zero");
    double mx = 0.0, my = 0.0;
    for (Eigen::Index i = 0; i < f.coeffs.rows(); ++i) {
        for (Eigen::Index j = 0; j < f.coeffs.cols(); ++j) {
            my += static_cast<double>(i - f.r) * f.coeffs(i, j);
            mx += static_cast<double>(j - f.r) * f.coeffs(i, j);
        }
    }
    return {2.0 * mx / s, 2.0 * my / s};
}

LapSchedule LapSchedule::standard(int rows, int cols, int levels)
{
    if (levels < 1 || levels > 4)
        throw ValidationError("LapSchedule: levels must be in [1, 4]");
    const int n = std::max(rows, cols);
    const int radii[] = {3, 2, 1, 1};
    LapSchedule s;
    for (int l = 0; l < levels; ++l)
        s.levels.push_back({std::max(4, n >> l), radii[l]});
    return s;
}

void LapSchedule::validate() const
{
    if (levels.empty())
        throw ValidationError("LapSchedule: need at least one level");
    for (const auto& l : levels) {
        if (l.window < 4)
            throw ValidationError("LapSchedule: window width must be at least 4");
        if (l.radius < 1 || l.radius > 3)
            throw ValidationError("LapSchedule: radius must be 1, 2 or 3");
    }
    if (iterations < 1)
        throw ValidationError("LapSchedule: iterations must be positive");
}

namespace {

// One pass at a given window size: local estimates, outlier rejection,
// median filtering and RBF interpolation to a dense increment.
bool estimate_increment(const ComplexImage& fix, const ComplexImage& mov, const LapLevel& level,
                        const LapSchedule& schedule, DisplacementField& delta, int& used, int& rejected)
{
    const Eigen::Index rows = fix.rows(), cols = fix.cols();
    const int width = level.window;
    const int r = level.radius;
    const int stride = std::max(1, width / 2);
    const auto ys = window_starts(rows, width, stride);
    const auto xs = window_starts(cols, width, stride);
    const auto ny = static_cast<Eigen::Index>(ys.size());
    const auto nx = static_cast<Eigen::Index>(xs.size());

    std::vector<WindowEstimate> est(static_cast<size_t>(ny * nx));
    for (Eigen::Index iy = 0; iy < ny; ++iy) {
        for (Eigen::Index ix = 0; ix < nx; ++ix) {
            WindowEstimate& e = est[static_cast<size_t>(iy * nx + ix)];
            const Eigen::Index wy = std::min<Eigen::Index>(width, rows);
            const Eigen::Index wx = std::min<Eigen::Index>(width, cols);
            e.cy = static_cast<double>(ys[iy]) + (wy - 1) / 2.0;
            e.cx = static_cast<double>(xs[ix]) + (wx - 1) / 2.0;
            const Eigen::Index y0 = std::max<Eigen::Index>(0, ys[iy] - r);
            const Eigen::Index x0 = std::max<Eigen::Index>(0, xs[ix] - r);
            const Eigen::Index y1 = std::min<Eigen::Index>(rows, ys[iy] + wy + r);
            const Eigen::Index x1 = std::min<Eigen::Index>(cols, xs[ix] + wx + r);
            const CGrid pf = fix.block(y0, x0, y1 - y0, x1 - x0);
            const CGrid pm = mov.block(y0, x0, y1 - y0, x1 - x0);
            const RGrid w = taper_weights(y1 - y0, x1 - x0, e.cy - y0, e.cx - x0, width);
            e.energy = (w * (pf.abs2() + pm.abs2())).sum();
            const AllPassFilter f = estimate_local_allpass(pf, pm, r, w);
            e.residual = f.residual;
            if (!f.well_posed || std::abs(f.sum()) < 1e-8)
                continue;
            const auto u = filter_to_displacement(f);
            if (!std::isfinite(u[0]) || !std::isfinite(u[1]) || std::hypot(u[0], u[1]) > 2.0 * r)
                continue;
            e.ux = u[0];
            e.uy = u[1];
            e.valid = true;
        }
    }

    double max_energy = 0.0;
    for (const auto& e : est)
        max_energy = std::max(max_energy, e.energy);
    std::vector<double> res;
    for (auto& e : est) {
        if (e.valid && (e.energy < schedule.min_energy * max_energy || e.residual > schedule.reject_threshold))
            e.valid = false;
        if (e.valid)
            res.push_back(e.residual);
    }
    const double med = median(res);
    for (auto& e : est) {
        if (e.valid && est.size() > 1 && e.residual > schedule.outlier_factor * med)
            e.valid = false;
    }

    // 3x3 median over surviving neighbours.
    std::vector<WindowEstimate> filtered = est;
    for (Eigen::Index iy = 0; iy < ny; ++iy) {
        for (Eigen::Index ix = 0; ix < nx; ++ix) {
            auto& out = filtered[static_cast<size_t>(iy * nx + ix)];
            if (!out.valid)
                continue;
            std::vector<double> vx, vy;
            for (Eigen::Index a = std::max<Eigen::Index>(0, iy - 1); a <= std::min(ny - 1, iy + 1); ++a) {
                for (Eigen::Index b = std::max<Eigen::Index>(0, ix - 1); b <= std::min(nx - 1, ix + 1); ++b) {
                    const auto& e = est[static_cast<size_t>(a * nx + b)];
                    if (e.valid) {
                        vx.push_back(e.ux);
                        vy.push_back(e.uy);
                    }
                }
            }
            out.ux = median(vx);
            out.uy = median(vy);
        }
    }

    std::vector<const WindowEstimate*> keep;
    for (const auto& e : filtered) {
        if (e.valid)
            keep.push_back(&e);
    }
    used += static_cast<int>(keep.size());
    rejected += static_cast<int>(filtered.size() - keep.size());
    if (keep.empty())
        return false;

    // Normalized Gaussian RBF interpolation from the window centers.
    const double sigma = std::max(1.0, static_cast<double>(stride));
    delta = DisplacementField(rows, cols);
    for (Eigen::Index y = 0; y < rows; ++y) {
        for (Eigen::Index x = 0; x < cols; ++x) {
            double sw = 0.0, sx = 0.0, sy = 0.0, nearest = std::numeric_limits<double>::infinity();
            const WindowEstimate* closest = keep.front();
            for (const auto* e : keep) {
                const double d2 = (y - e->cy) * (y - e->cy) + (x - e->cx) * (x - e->cx);
                const double w = std::exp(-d2 / (2.0 * sigma * sigma));
                sw += w;
                sx += w * e->ux;
                sy += w * e->uy;
                if (d2 < nearest) {
                    nearest = d2;
                    closest = e;
                }
            }
            if (sw > 1e-300) {
                delta.ux(y, x) = sx / sw;
                delta.uy(y, x) = sy / sw;
            } else {
                delta.ux(y, x) = closest->ux;
                delta.uy(y, x) = closest->uy;
            }
        }
    }
    return true;
}

// u_new(x) = delta(x) + u(x - delta(x)).
DisplacementField compose(const DisplacementField& u, const DisplacementField& delta)
{
    DisplacementField out(u.rows(), u.cols());
    for (Eigen::Index y = 0; y < u.rows(); ++y) {
        for (Eigen::Index x = 0; x < u.cols(); ++x) {
            const double sy = static_cast<double>(y) - delta.uy(y, x);
            const double sx = static_cast<double>(x) - delta.ux(y, x);
            out.ux(y, x) = delta.ux(y, x) + sample_bilinear(u.ux, sy, sx);
            out.uy(y, x) = delta.uy(y, x) + sample_bilinear(u.uy, sy, sx);
        }
    }
    return out;
}

} // namespace

LapResult lap_register_images(const ComplexImage& fix, const ComplexImage& mov, const LapSchedule& schedule)
{
    require_same_shape(fix, mov, "lap_register");
    require_finite(fix, "lap_register");
    require_finite(mov, "lap_register");
    schedule.validate();

    LapResult result;
    result.u = DisplacementField(fix.rows(), fix.cols());
    double current = mean_abs_residual(fix, mov, result.u);
    result.residuals.push_back(current);

    for (size_t l = 0; l < schedule.levels.size(); ++l) {
        const LapLevel& level = schedule.levels[l];
        bool any = false;
        for (int it = 0; it < schedule.iterations; ++it) {
            const ComplexImage warped = warp_bilinear(mov, result.u);
            DisplacementField delta;
            if (!estimate_increment(fix, warped, level, schedule, delta, result.windows_used, result.windows_rejected))
                break;
            any = true;
            DisplacementField candidate = compose(result.u, delta);
            const double next = mean_abs_residual(fix, mov, candidate);
            if (!(next <= current))
                break;
            result.u = std::move(candidate);
            current = next;
        }
        if (l == 0 && !any)
            throw RuntimeFailure("lap_register: insufficient signal (all windows rejected at the coarsest level)");
        result.residuals.push_back(current);
    }
    return result;
}

LapResult lap_register_multiscale(const CGrid& k_fix, const CGrid& k_mov, const LapSchedule& schedule)
{
    return lap_register_images(ifft2_centered(k_fix), ifft2_centered(k_mov), schedule);
}

} // namespace lapanet

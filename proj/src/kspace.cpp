#include "lapanet/kspace.hpp"

#include "lapanet/sampling.hpp"

#include <Eigen/SVD>
#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <tuple>

namespace lapanet {

namespace {

// FFTW planning is not thread-safe; plans are created once per shape under a
// lock and executed through the new-array interface afterwards.
class PlanCache {
public:
    static PlanCache& instance()
    {
        static PlanCache cache;
        return cache;
    }

    fftw_plan get(int rows, int cols, int sign)
    {
        std::lock_guard<std::mutex> lock(mutex_);
        auto key = std::make_tuple(rows, cols, sign);
        auto it = plans_.find(key);
        if (it != plans_.end())
            return it->second;
        std::vector<cd> a(static_cast<size_t>(rows) * cols), b(a.size());
        fftw_plan p = fftw_plan_dft_2d(rows, cols, reinterpret_cast<fftw_complex*>(a.data()),
                                       reinterpret_cast<fftw_complex*>(b.data()), sign,
                                       FFTW_ESTIMATE | FFTW_UNALIGNED);
        plans_.emplace(key, p);
        return p;
    }

    PlanCache(const PlanCache&) = delete;
    PlanCache& operator=(const PlanCache&) = delete;

private:
    PlanCache() = default;
    ~PlanCache()
    {
        for (auto& [key, plan] : plans_)
            fftw_destroy_plan(plan);
    }

    std::mutex mutex_;
    std::map<std::tuple<int, int, int>, fftw_plan> plans_;
};

CGrid centered_transform(const CGrid& in, int sign)
{
    const auto rows = in.rows();
    const auto cols = in.cols();
    CGrid shifted = circular_shift(in, -(rows / 2), -(cols / 2));
    CGrid out(rows, cols);
    fftw_plan plan = PlanCache::instance().get(static_cast<int>(rows), static_cast<int>(cols), sign);
    fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(shifted.data()),
                     reinterpret_cast<fftw_complex*>(out.data()));
    out /= std::sqrt(static_cast<double>(rows * cols));
    return circular_shift(out, rows / 2, cols / 2);
}

Eigen::Index wrap(Eigen::Index i, Eigen::Index n)
{
    Eigen::Index r = i % n;
    return r < 0 ? r + n : r;
}

} // namespace

CGrid fft2_centered(const CGrid& img)
{
    require_finite(img, "fft2_centered");
    return centered_transform(img, FFTW_FORWARD);
}

CGrid ifft2_centered(const CGrid& k)
{
    require_finite(k, "ifft2_centered");
    return centered_transform(k, FFTW_BACKWARD);
}

double angular_frequency(Eigen::Index index, Eigen::Index n)
{
    return 2.0 * std::numbers::pi * static_cast<double>(index - n / 2) / static_cast<double>(n);
}

CGrid circular_shift(const CGrid& in, Eigen::Index dy, Eigen::Index dx)
{
    const auto rows = in.rows();
    const auto cols = in.cols();
    CGrid out(rows, cols);
    for (Eigen::Index y = 0; y < rows; ++y) {
        const Eigen::Index sy = wrap(y - dy, rows);
        for (Eigen::Index x = 0; x < cols; ++x)
            out(y, x) = in(sy, wrap(x - dx, cols));
    }
    return out;
}

CGrid all_pass_filter_response(double ux, double uy, Eigen::Index rows, Eigen::Index cols)
{
    if (!std::isfinite(ux) || !std::isfinite(uy))
        throw ValidationError("all_pass_filter_response: displacement must be finite");
    CGrid h(rows, cols);
    for (Eigen::Index y = 0; y < rows; ++y) {
        const double ky = angular_frequency(y, rows);
        for (Eigen::Index x = 0; x < cols; ++x) {
            const double kx = angular_frequency(x, cols);
            h(y, x) = std::polar(1.0, -(ux * kx + uy * ky));
        }
    }
    return h;
}

CGrid apply_phase_ramp(const CGrid& k, double ux, double uy)
{
    require_finite(k, "apply_phase_ramp");
    return k * all_pass_filter_response(ux, uy, k.rows(), k.cols());
}

CGrid inverse_zero_frequency_shift(const CGrid& k)
{
    return circular_shift(k, -(k.rows() / 2), -(k.cols() / 2));
}

MultiCoil inverse_zero_frequency_shift(const MultiCoil& k)
{
    MultiCoil out;
    out.coils.reserve(k.coils.size());
    for (const auto& c : k.coils)
        out.coils.push_back(inverse_zero_frequency_shift(c));
    return out;
}

namespace {

void check_maps(const ComplexImage& img, const CoilSensitivityMap& maps, const char* what)
{
    if (maps.count() < 1)
        throw ValidationError(std::string(what) + ": need at least one coil map");
    for (const auto& m : maps.maps)
        require_same_shape(img, m, what);
}

} // namespace

MultiCoil coil_images(const ComplexImage& img, const CoilSensitivityMap& maps)
{
    check_maps(img, maps, "coil_images");
    MultiCoil out;
    for (const auto& m : maps.maps)
        out.coils.push_back(m * img);
    return out;
}

MultiCoil fft2_centered(const MultiCoil& images)
{
    MultiCoil out;
    for (const auto& c : images.coils)
        out.coils.push_back(fft2_centered(c));
    return out;
}

MultiCoil ifft2_centered(const MultiCoil& k)
{
    MultiCoil out;
    for (const auto& c : k.coils)
        out.coils.push_back(ifft2_centered(c));
    return out;
}

MultiCoil multicoil_forward(const ComplexImage& img, const CoilSensitivityMap& maps, const SamplingPattern& pattern)
{
    check_maps(img, maps, "multicoil_forward");
    pattern.validate();
    MultiCoil out;
    for (const auto& m : maps.maps) {
        const CGrid weighted = m * img;
        if (pattern.is_cartesian()) {
            if (static_cast<Eigen::Index>(pattern.lines.size()) != img.rows())
                throw ValidationError("multicoil_forward: mask line count differs from image height");
            out.coils.push_back(apply_cartesian_mask(fft2_centered(weighted), pattern));
        } else {
            out.coils.push_back(radial_sample(weighted, pattern));
        }
    }
    return out;
}

ComplexImage multicoil_adjoint(const MultiCoil& k, const CoilSensitivityMap& maps, const SamplingPattern& pattern)
{
    if (k.count() != maps.count())
        throw ValidationError("multicoil_adjoint: coil count mismatch");
    pattern.validate();
    const auto rows = maps.rows();
    const auto cols = maps.cols();
    ComplexImage out = ComplexImage::Zero(rows, cols);
    for (int c = 0; c < k.count(); ++c) {
        if (pattern.is_cartesian()) {
            require_same_shape(k.coils[c], maps.maps[c], "multicoil_adjoint");
            out += maps.maps[c].conjugate() * ifft2_centered(apply_cartesian_mask(k.coils[c], pattern));
        } else {
            out += maps.maps[c].conjugate() * radial_adjoint(k.coils[c], pattern, rows, cols);
        }
    }
    return out;
}

ComplexImage multicoil_adjoint(const MultiCoil& k, const CoilSensitivityMap& maps)
{
    if (k.count() != maps.count())
        throw ValidationError("multicoil_adjoint: coil count mismatch");
    ComplexImage out = ComplexImage::Zero(maps.rows(), maps.cols());
    for (int c = 0; c < k.count(); ++c) {
        require_same_shape(k.coils[c], maps.maps[c], "multicoil_adjoint");
        out += maps.maps[c].conjugate() * ifft2_centered(k.coils[c]);
    }
    return out;
}

CoilSensitivityMap synthetic_coil_maps(int n_coils, Eigen::Index rows, Eigen::Index cols)
{
    if (n_coils < 1)
        throw ValidationError("synthetic_coil_maps: need at least one coil");
    const double pi = std::numbers::pi;
    const double cy = static_cast<double>(rows / 2);
    const double cx = static_cast<double>(cols / 2);
    const double extent = 0.5 * static_cast<double>(std::max(rows, cols));
    const double sigma = 0.8 * extent;
    CoilSensitivityMap maps;
    for (int c = 0; c < n_coils; ++c) {
        const double theta = 2.0 * pi * c / n_coils;
        const double py = cy + (n_coils > 1 ? 1.1 * extent * std::sin(theta) : 0.0);
        const double px = cx + (n_coils > 1 ? 1.1 * extent * std::cos(theta) : 0.0);
        CGrid m(rows, cols);
        for (Eigen::Index y = 0; y < rows; ++y) {
            for (Eigen::Index x = 0; x < cols; ++x) {
                const double dy = y - py;
                const double dx = x - px;
                const double mag = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                const double phase = theta + 0.3 * pi * ((x - cx) * std::cos(theta) + (y - cy) * std::sin(theta)) / extent;
                m(y, x) = std::polar(mag, phase);
            }
        }
        maps.maps.push_back(std::move(m));
    }
    RGrid norm = RGrid::Zero(rows, cols);
    for (const auto& m : maps.maps)
        norm += m.abs2();
    norm = norm.sqrt();
    for (auto& m : maps.maps)
        m /= norm.cast<cd>();
    return maps;
}

double coil_normalization_error(const CoilSensitivityMap& maps)
{
    RGrid sum = RGrid::Zero(maps.rows(), maps.cols());
    for (const auto& m : maps.maps)
        sum += m.abs2();
    return (sum - 1.0).abs().maxCoeff();
}

CoilCompression coil_compress_svd(const MultiCoil& k, int n_out)
{
    k.validate();
    if (n_out < 1)
        throw ValidationError("coil_compress_svd: n_out must be at least 1");
    if (n_out > k.count())
        throw ValidationError("coil_compress_svd: n_out exceeds the coil count");
    const auto samples = k.rows() * k.cols();
    Eigen::MatrixXcd m(k.count(), samples);
    for (int c = 0; c < k.count(); ++c)
        m.row(c) = Eigen::Map<const Eigen::RowVectorXcd>(k.coils[c].data(), samples);

    Eigen::BDCSVD<Eigen::MatrixXcd> svd(m, Eigen::ComputeThinU);
    CoilCompression out;
    out.singular_values = svd.singularValues();
    out.basis = svd.matrixU().leftCols(n_out);
    const Eigen::MatrixXcd compressed = out.basis.adjoint() * m;
    for (int c = 0; c < n_out; ++c) {
        CGrid g(k.rows(), k.cols());
        Eigen::Map<Eigen::RowVectorXcd>(g.data(), samples) = compressed.row(c);
        out.data.coils.push_back(std::move(g));
    }
    return out;
}

ComplexImage normalize_max(const ComplexImage& img)
{
    const double peak = img.abs().maxCoeff();
    if (!(peak > 0.0))
        throw ValidationError("normalize_max: image is all zero");
    return img / peak;
}

MultiCoil normalize_max(const MultiCoil& images)
{
    images.validate();
    double peak = 0.0;
    for (const auto& c : images.coils)
        peak = std::max(peak, c.abs().maxCoeff());
    if (!(peak > 0.0))
        throw ValidationError("normalize_max: coil images are all zero");
    MultiCoil out;
    for (const auto& c : images.coils)
        out.coils.push_back(c / peak);
    return out;
}

double energy(const CGrid& g)
{
    return g.abs2().sum();
}

double energy(const MultiCoil& m)
{
    double e = 0.0;
    for (const auto& c : m.coils)
        e += energy(c);
    return e;
}

} // namespace lapanet

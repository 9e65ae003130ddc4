#include "lapanet/nps.hpp"

#include "lapanet/kspace.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <ostream>
#include <string>
#include <utility>

namespace lapanet {

namespace {

// Unnormalized 1D DFT of a complex sequence.
std::vector<cd> dft(std::vector<cd> in, bool inverse)
{
    const int n = static_cast<int>(in.size());
    std::vector<cd> out(in.size());
    fftw_plan plan = fftw_plan_dft_1d(n, reinterpret_cast<fftw_complex*>(in.data()),
                                      reinterpret_cast<fftw_complex*>(out.data()), inverse ? FFTW_BACKWARD : FFTW_FORWARD,
                                      FFTW_ESTIMATE);
    fftw_execute(plan);
    fftw_destroy_plan(plan);
    return out;
}

// Moves index n/2 of a centered sequence to index 0.
std::vector<cd> uncenter(const std::vector<double>& v)
{
    const size_t n = v.size();
    std::vector<cd> out(n);
    for (size_t i = 0; i < n; ++i)
        out[i] = v[(i + n / 2) % n];
    return out;
}

RGrid roll(const RGrid& g, Eigen::Index dy, Eigen::Index dx)
{
    RGrid out(g.rows(), g.cols());
    for (Eigen::Index y = 0; y < g.rows(); ++y)
        for (Eigen::Index x = 0; x < g.cols(); ++x)
            out((y + dy) % g.rows(), (x + dx) % g.cols()) = g(y, x);
    return out;
}

void require_same(const std::vector<double>& a, const std::vector<double>& b, const char* what)
{
    if (a.empty() || a.size() != b.size())
        throw ValidationError(std::string(what) + ": profile and kernel lengths differ or are zero");
}

void accumulate(std::vector<double>& into, const std::vector<double>& v)
{
    if (into.empty())
        into.assign(v.size(), 0.0);
    if (into.size() != v.size())
        throw ValidationError("nps_analysis: maps must share one shape");
    for (size_t i = 0; i < v.size(); ++i)
        into[i] += v[i];
}

// Positive energy inside the central band and in total.
std::pair<double, double> band_energy(const std::vector<double>& profile, double band)
{
    if (profile.empty() || !(band > 0.0 && band <= 1.0))
        throw ValidationError("central band: needs a profile and a band in (0, 1]");
    const double n = static_cast<double>(profile.size());
    const double c = static_cast<double>(profile.size() / 2);
    double inner = 0.0, total = 0.0;
    for (size_t i = 0; i < profile.size(); ++i) {
        const double v = std::max(0.0, profile[i]);
        total += v;
        const double d = static_cast<double>(i) - c;
        if (d >= -0.5 * band * n && d < 0.5 * band * n)
            inner += v;
    }
    return {inner, total};
}

} // namespace

AttributionMaps attribution_maps(const nn::Tensor& attribution, int n_coils)
{
    if (n_coils < 1 || attribution.n() != 1 || attribution.c() != 4 * n_coils)
        throw ValidationError("attribution_maps: expected (1, 4 n_c, H, W) attributions");
    const int h = attribution.h(), w = attribution.w();
    RGrid fix = RGrid::Zero(h, w), mov = RGrid::Zero(h, w);
    for (int c = 0; c < n_coils; ++c)
        for (int part = 0; part < 2; ++part) {
            fix += Eigen::Map<const RGrid>(attribution.ptr(0, 4 * c + part), h, w);
            mov += Eigen::Map<const RGrid>(attribution.ptr(0, 4 * c + 2 + part), h, w);
        }
    // The network input carries the zero frequency at the corner.
    return {roll(fix, h / 2, w / 2), roll(mov, h / 2, w / 2)};
}

RGrid power_spectrum(const RGrid& map)
{
    return fft2_centered(CGrid(map.cast<cd>())).abs2();
}

CentralProfiles central_profiles(const RGrid& spectrum)
{
    const Eigen::Index h = spectrum.rows(), w = spectrum.cols();
    if (h < 1 || w < 1)
        throw ValidationError("central_profiles: empty spectrum");
    CentralProfiles p;
    p.readout.resize(size_t(w));
    p.phase_encode.resize(size_t(h));
    for (Eigen::Index x = 0; x < w; ++x)
        p.readout[size_t(x)] = spectrum(h / 2, x);
    for (Eigen::Index y = 0; y < h; ++y)
        p.phase_encode[size_t(y)] = spectrum(y, w / 2);
    return p;
}

std::vector<double> cartesian_psf(const SamplingPattern& pattern)
{
    if (!pattern.is_cartesian())
        throw ValidationError("cartesian_psf: pattern is not Cartesian");
    pattern.validate();
    const Eigen::Index n = static_cast<Eigen::Index>(pattern.lines.size());
    CGrid m(1, n);
    for (Eigen::Index i = 0; i < n; ++i)
        m(0, i) = pattern.lines[size_t(i)] ? 1.0 : 0.0;
    const CGrid f = fft2_centered(m);
    std::vector<double> k(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
        k[size_t(i)] = std::norm(f(0, i)) / static_cast<double>(n);
    return k;
}

std::vector<double> circular_convolve(const std::vector<double>& profile, const std::vector<double>& kernel)
{
    require_same(profile, kernel, "circular_convolve");
    const size_t n = profile.size(), c = n / 2;
    std::vector<double> out(n, 0.0);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j)
            out[i] += kernel[j] * profile[(i + n + c - j) % n];
    return out;
}

std::vector<double> wiener_deconvolve(const std::vector<double>& profile, const std::vector<double>& kernel,
                                      double floor_ratio)
{
    require_same(profile, kernel, "wiener_deconvolve");
    if (!(floor_ratio > 0.0))
        throw ValidationError("wiener_deconvolve: floor ratio must be positive");
    const size_t n = profile.size();
    std::vector<cd> p(n);
    for (size_t i = 0; i < n; ++i)
        p[i] = profile[i];
    const std::vector<cd> H = dft(uncenter(kernel), false);
    std::vector<cd> P = dft(p, false);
    double peak = 0.0;
    for (const cd& v : H)
        peak = std::max(peak, std::abs(v));
    const double lambda = floor_ratio * peak;
    for (size_t i = 0; i < n; ++i)
        P[i] *= std::conj(H[i]) / (std::norm(H[i]) + lambda * lambda);
    const std::vector<cd> q = dft(P, true);
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i)
        out[i] = q[i].real() / static_cast<double>(n);
    return out;
}

std::vector<double> radial_nps(const RGrid& spectrum)
{
    const Eigen::Index h = spectrum.rows(), w = spectrum.cols();
    const int r_max = static_cast<int>(std::min(h, w) / 2);
    std::vector<double> sum(size_t(r_max + 1), 0.0);
    std::vector<int> count(size_t(r_max + 1), 0);
    for (Eigen::Index y = 0; y < h; ++y)
        for (Eigen::Index x = 0; x < w; ++x) {
            const double r = std::hypot(double(y - h / 2), double(x - w / 2));
            const auto bin = static_cast<int>(std::lround(r));
            if (bin > r_max)
                continue;
            sum[size_t(bin)] += spectrum(y, x);
            ++count[size_t(bin)];
        }
    for (size_t i = 0; i < sum.size(); ++i)
        sum[i] /= std::max(1, count[i]);
    return sum;
}

double central_band_fraction(const std::vector<double>& profile, double band)
{
    const auto [inner, total] = band_energy(profile, band);
    return total > 0.0 ? inner / total : 0.0;
}

NpsResult nps_analysis(const std::vector<RGrid>& maps, const std::vector<std::optional<SamplingPattern>>& patterns)
{
    if (maps.empty())
        throw ValidationError("nps_analysis: no maps");
    if (!patterns.empty() && patterns.size() != maps.size())
        throw ValidationError("nps_analysis: one pattern per map expected");
    NpsResult r;
    for (size_t i = 0; i < maps.size(); ++i) {
        const RGrid s = power_spectrum(maps[i]);
        CentralProfiles p = central_profiles(s);
        if (!patterns.empty() && patterns[i] && patterns[i]->is_cartesian()) {
            if (patterns[i]->lines.size() != p.phase_encode.size())
                throw ValidationError("nps_analysis: pattern length differs from the map height");
            p.phase_encode = wiener_deconvolve(p.phase_encode, cartesian_psf(*patterns[i]));
        }
        accumulate(r.readout, p.readout);
        accumulate(r.phase_encode, p.phase_encode);
        accumulate(r.nps, radial_nps(s));
    }
    const double inv = 1.0 / static_cast<double>(maps.size());
    for (auto* v : {&r.readout, &r.phase_encode, &r.nps})
        for (double& x : *v)
            x *= inv;
    double inner = 0.0, total = 0.0;
    for (const auto* v : {&r.readout, &r.phase_encode}) {
        const auto [i, t] = band_energy(*v, 0.25);
        inner += i;
        total += t;
    }
    r.low_frequency_fraction = total > 0.0 ? inner / total : 0.0;
    r.maps = static_cast<int>(maps.size());
    return r;
}

void write_nps_header(std::ostream& os)
{
    os << "label,series,index,frequency,value\n";
}

void write_nps_csv(std::ostream& os, const NpsResult& r, const std::string& label)
{
    auto series = [&](const char* name, const std::vector<double>& v, bool radial) {
        const double n = static_cast<double>(v.size());
        for (size_t i = 0; i < v.size(); ++i) {
            const double f = radial ? static_cast<double>(i) : static_cast<double>(i) - static_cast<double>(v.size() / 2);
            os << label << ',' << name << ',' << i << ',' << f / (radial ? 2.0 * (n - 1) : n) << ',' << v[i] << '\n';
        }
    };
    series("readout", r.readout, false);
    series("phase_encode", r.phase_encode, false);
    series("nps", r.nps, true);
}

} // namespace lapanet

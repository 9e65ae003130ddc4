#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "lapanet/nps.hpp"
#include "lapanet/sampling.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace lapanet;

namespace {

RGrid white_noise(int n, std::mt19937_64& rng)
{
    std::normal_distribution<double> nd;
    RGrid g(n, n);
    for (Eigen::Index i = 0; i < g.size(); ++i)
        g.data()[i] = nd(rng);
    return g;
}

RGrid centered_gaussian(int n, double sigma)
{
    RGrid g(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            g(y, x) = std::exp(-((y - n / 2) * (y - n / 2) + (x - n / 2) * (x - n / 2)) / (2.0 * sigma * sigma));
    return g;
}

// Direct O(n^4) power spectrum with the centered unitary convention.
RGrid brute_spectrum(const RGrid& m)
{
    const int h = static_cast<int>(m.rows()), w = static_cast<int>(m.cols());
    RGrid s(h, w);
    for (int ky = 0; ky < h; ++ky)
        for (int kx = 0; kx < w; ++kx) {
            cd acc = 0.0;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const double ph = -2.0 * std::numbers::pi
                                      * (double(ky - h / 2) * (y - h / 2) / h + double(kx - w / 2) * (x - w / 2) / w);
                    acc += m(y, x) * std::polar(1.0, ph);
                }
            s(ky, kx) = std::norm(acc) / (h * w);
        }
    return s;
}

} // namespace

TEST_CASE("power spectrum matches a direct transform and obeys Parseval")
{
    std::mt19937_64 rng(1);
    const RGrid m = white_noise(12, rng);
    const RGrid s = power_spectrum(m);
    CHECK((s - brute_spectrum(m)).abs().maxCoeff() < 1e-10);
    for (int trial = 0; trial < 5; ++trial) {
        const RGrid g = white_noise(32, rng);
        const double e = g.square().sum();
        CHECK(std::abs(power_spectrum(g).sum() - e) < 1e-8 * e);
    }
}

TEST_CASE("white-noise attributions give flat mean profiles")
{
    std::mt19937_64 rng(2);
    const int trials = 1000, n = 32;
    std::vector<RGrid> maps;
    for (int t = 0; t < trials; ++t)
        maps.push_back(white_noise(n, rng));
    const NpsResult r = nps_analysis(maps);
    CHECK(r.maps == trials);
    // Each bin is an exponential variate with mean 1; the mean of 1000 has a 3.2% spread.
    const double tol = 5.0 / std::sqrt(double(trials));
    for (double v : r.readout)
        CHECK(std::abs(v - 1.0) < tol);
    for (double v : r.phase_encode)
        CHECK(std::abs(v - 1.0) < tol);
    for (size_t i = 1; i < r.nps.size(); ++i)
        CHECK(std::abs(r.nps[i] - 1.0) < tol);
    CHECK(r.low_frequency_fraction == doctest::Approx(0.25).epsilon(0.1));
}

TEST_CASE("a map concentrated at the center decays monotonically from the spectrum center")
{
    const RGrid g = centered_gaussian(64, 6.0);
    const CentralProfiles p = central_profiles(power_spectrum(g));
    for (const auto* prof : {&p.readout, &p.phase_encode}) {
        const auto& v = *prof;
        const double roundoff = 1e-12 * v[32];
        for (size_t i = 32; i + 1 < v.size(); ++i)
            CHECK(v[i + 1] <= v[i] + roundoff);
        for (size_t i = 32; i > 0; --i)
            CHECK(v[i - 1] <= v[i] + roundoff);
    }
    const NpsResult r = nps_analysis({g});
    CHECK(r.low_frequency_fraction > 0.9);
    for (size_t i = 0; i + 1 < r.nps.size(); ++i)
        CHECK(r.nps[i + 1] <= r.nps[i] + 1e-12 * r.nps[0]);
}

TEST_CASE("central band fraction counts the middle quarter")
{
    std::vector<double> v(16, 1.0);
    CHECK(central_band_fraction(v) == doctest::Approx(0.25));
    std::vector<double> spike(16, 0.0);
    spike[8] = 3.0;
    CHECK(central_band_fraction(spike) == 1.0);
    CHECK_THROWS_AS(central_band_fraction({}), ValidationError);
}

TEST_CASE("Cartesian PSF sums to the sampled fraction and is a delta when fully sampled")
{
    const SamplingPattern full = SamplingPattern::fully_sampled(32);
    const auto k = cartesian_psf(full);
    CHECK(k[16] == doctest::Approx(1.0));
    double rest = 0.0;
    for (size_t i = 0; i < k.size(); ++i)
        if (i != 16)
            rest += k[i];
    CHECK(rest < 1e-20);

    const SamplingPattern p = pattern_for_acceleration(PatternKind::cartesian_lines, 32, 4.0, 3, 0);
    double sum = 0.0;
    for (double v : cartesian_psf(p))
        sum += v;
    CHECK(sum == doctest::Approx(double(p.active_lines()) / 32.0));
    CHECK_THROWS_AS(cartesian_psf(pattern_for_acceleration(PatternKind::radial_spokes, 32, 4.0, 3, 0)), ValidationError);
}

TEST_CASE("Wiener deconvolution inverts a well-conditioned blur")
{
    const int n = 40;
    std::vector<double> kernel(n, 0.0), profile(n);
    kernel[n / 2] = 0.6;
    kernel[n / 2 - 1] = 0.2;
    kernel[n / 2 + 1] = 0.15;
    for (int i = 0; i < n; ++i)
        profile[size_t(i)] = std::exp(-0.02 * (i - n / 2) * (i - n / 2)) + 0.1 * std::sin(0.7 * i);
    const auto blurred = circular_convolve(profile, kernel);
    const auto back = wiener_deconvolve(blurred, kernel, 1e-6);
    for (int i = 0; i < n; ++i)
        CHECK(back[size_t(i)] == doctest::Approx(profile[size_t(i)]).epsilon(1e-6));
    CHECK_THROWS_AS(wiener_deconvolve(profile, std::vector<double>(3, 1.0)), ValidationError);
}

TEST_CASE("deconvolution restores the flat spectrum of masked white noise")
{
    std::mt19937_64 rng(5);
    const int n = 32, trials = 1000;
    const SamplingPattern p = pattern_for_acceleration(PatternKind::cartesian_lines, n, 4.0, 9, 0);
    std::vector<RGrid> maps;
    std::vector<std::optional<SamplingPattern>> pats;
    for (int t = 0; t < trials; ++t) {
        RGrid g = white_noise(n, rng);
        for (int y = 0; y < n; ++y)
            if (!p.lines[size_t(y)])
                g.row(y).setZero();
        maps.push_back(g);
        pats.push_back(p);
    }
    const NpsResult raw = nps_analysis(maps);
    const NpsResult dec = nps_analysis(maps, pats);
    // Without deconvolution the phase-encode profile sits at the sampled fraction.
    double mean_raw = 0.0, mean_dec = 0.0;
    for (int i = 0; i < n; ++i) {
        mean_raw += raw.phase_encode[size_t(i)] / n;
        mean_dec += dec.phase_encode[size_t(i)] / n;
    }
    CHECK(mean_raw == doctest::Approx(double(p.active_lines()) / n).epsilon(0.05));
    CHECK(mean_dec == doctest::Approx(1.0).epsilon(0.05));
    CHECK_THROWS_AS(nps_analysis(maps, {p}), ValidationError);
}

TEST_CASE("attribution maps sum channels per input and recenter k-space")
{
    const int nc = 2, h = 8, w = 8;
    nn::Tensor a(1, 4 * nc, h, w);
    // Unit attribution at the corner of each fixed channel, which is the k-space center.
    for (int c = 0; c < nc; ++c) {
        a.at(0, 4 * c, 0, 0) = 1.0;
        a.at(0, 4 * c + 1, 0, 0) = 0.5;
        a.at(0, 4 * c + 2, 1, 0) = -1.0;
    }
    const AttributionMaps m = attribution_maps(a, nc);
    CHECK(m.fix(h / 2, w / 2) == doctest::Approx(3.0));
    CHECK(m.fix.abs().sum() == doctest::Approx(3.0));
    CHECK(m.mov(h / 2 + 1, w / 2) == doctest::Approx(-2.0));
    CHECK_THROWS_AS(attribution_maps(nn::Tensor(1, 5, h, w), nc), ValidationError);
}

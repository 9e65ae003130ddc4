#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "lapanet/kspace.hpp"
#include "lapanet/metrics.hpp"
#include "lapanet/motion.hpp"
#include "lapanet/phantom.hpp"
#include "lapanet/rng.hpp"

#include <cmath>
#include <set>

using namespace lapanet;

namespace {

CGrid random_grid(Eigen::Index rows, Eigen::Index cols, uint64_t seed)
{
    SplitMix64 rng(seed);
    CGrid g(rows, cols);
    for (Eigen::Index i = 0; i < g.size(); ++i)
        g.data()[i] = {rng.normal(), rng.normal()};
    return g;
}

double interior_max_diff(const CGrid& a, const CGrid& b, int border)
{
    const auto h = a.rows() - 2 * border;
    const auto w = a.cols() - 2 * border;
    return (a.block(border, border, h, w) - b.block(border, border, h, w)).abs().maxCoeff();
}

} // namespace

TEST_CASE("warp_bilinear")
{
    const CGrid img = random_grid(16, 16, 1);
    CHECK((warp_bilinear(img, DisplacementField(16, 16)) == img).all());

    SUBCASE("integer shift matches the index-shift oracle")
    {
        const CGrid w = warp_bilinear(img, DisplacementField::constant(16, 16, 0.0, 2.0));
        for (int y = 2; y < 14; ++y)
            for (int x = 2; x < 14; ++x)
                CHECK(w(y, x) == img(y - 2, x));
        // Same shift through the k-space phase ramp.
        const CGrid via_k = ifft2_centered(apply_phase_ramp(fft2_centered(img), 0.0, 2.0));
        CHECK(interior_max_diff(w, via_k, 2) < 1e-10);
    }
    SUBCASE("linear in intensity")
    {
        const CGrid other = random_grid(16, 16, 2);
        const auto u = synth_gaussian_field({{8, 7, 1.3, -2.1, 4.0}}, 16, 16);
        const cd a(0.7, -0.2), b(-1.4, 0.5);
        const CGrid lhs = warp_bilinear(CGrid(a * img + b * other), u);
        const CGrid rhs = a * warp_bilinear(img, u) + b * warp_bilinear(other, u);
        CHECK((lhs - rhs).abs().maxCoeff() < 1e-12);
    }
    SUBCASE("phase ramp and warp agree for random integer shifts")
    {
        SplitMix64 rng(4);
        for (int t = 0; t < 10; ++t) {
            const int dx = rng.integer(-3, 3), dy = rng.integer(-3, 3);
            const CGrid w = warp_bilinear(img, DisplacementField::constant(16, 16, dx, dy));
            const CGrid k = ifft2_centered(apply_phase_ramp(fft2_centered(img), dx, dy));
            CHECK(interior_max_diff(w, k, 3) < 1e-10);
        }
    }
    SUBCASE("shape mismatch")
    {
        CHECK_THROWS_AS(warp_bilinear(img, DisplacementField(16, 15)), ValidationError);
    }
}

TEST_CASE("upscale_field")
{
    const auto c = upscale_field(DisplacementField::constant(8, 8, 1.0, 1.0));
    CHECK(c.rows() == 16);
    CHECK(c.cols() == 16);
    CHECK((c.ux - 2.0).abs().maxCoeff() < 1e-15);
    CHECK((c.uy - 2.0).abs().maxCoeff() < 1e-15);
    CHECK(upscale_field(DisplacementField(8, 8)).max_magnitude() == 0.0);
    CHECK(upscale_field(DisplacementField::constant(4, 4, 0.5, -1.0), 8).ux(5, 7) == doctest::Approx(4.0));

    const auto smooth = synth_gaussian_field({{16, 14, 1.5, -1.0, 7.0}, {6, 22, -0.8, 1.2, 5.0}}, 32, 32);
    const auto round_trip = downscale_field(upscale_field(smooth));
    CHECK((round_trip.ux - smooth.ux).abs().maxCoeff() < 0.05);
    CHECK((round_trip.uy - smooth.uy).abs().maxCoeff() < 0.05);
}

TEST_CASE("synth_gaussian_field")
{
    CHECK(synth_gaussian_field({}, 16, 16).max_magnitude() == 0.0);
    const auto u = synth_gaussian_field({{10, 12, 0.0, 3.0, 4.0}}, 24, 24);
    CHECK(u.max_magnitude() == doctest::Approx(3.0).epsilon(0.01));
    CHECK(u.ux(10, 12) == doctest::Approx(3.0));
    CHECK_THROWS_AS(synth_gaussian_field({{1, 1, 1, 1, 0.0}}, 8, 8), ValidationError);

    // Amplitude <= width / 2 keeps the map orientation preserving.
    SplitMix64 rng(12);
    for (int t = 0; t < 50; ++t) {
        const double w = rng.uniform(2.0, 8.0);
        const double amp = rng.uniform(0.0, w / 2.0);
        const double dir = rng.uniform(0.0, 6.283185307179586);
        const auto f = synth_gaussian_field({{rng.uniform(0, 31), rng.uniform(0, 31), amp * std::sin(dir), amp * std::cos(dir), w}}, 32, 32);
        CHECK(jacobian_determinant(f).minCoeff() > 0.0);
    }
}

TEST_CASE("phantom geometry and validation")
{
    PhantomConfig cfg;
    cfg.inner_radius = 12.0;
    cfg.outer_radius = 12.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    CHECK_THROWS_AS(phantom_cine(PhantomConfig{}, 1), ValidationError);

    const auto labels = PhantomModel(PhantomConfig{}).frame_labels(0.0);
    std::set<int32_t> present(labels.data(), labels.data() + labels.size());
    CHECK(present == std::set<int32_t>{0, 1, 2, 3});
}

TEST_CASE("phantom_cine")
{
    SUBCASE("zero contraction gives identical frames and zero fields")
    {
        PhantomConfig cfg;
        cfg.contraction = 0.0;
        const auto scene = phantom_cine(cfg, 3);
        for (int f = 1; f < 3; ++f)
            CHECK((scene.frames[f] == scene.frames[0]).all());
        for (const auto& u : scene.fields)
            CHECK(u.max_magnitude() == 0.0);
    }
    SUBCASE("peak displacement equals contraction times the outer radius")
    {
        PhantomConfig cfg;
        cfg.rows = cfg.cols = 64;
        cfg.center_x = 36;
        cfg.outer_radius = 20.0;
        cfg.inner_radius = 12.0;
        cfg.rv_offset_x = -29.0;
        cfg.rv_semi_x = 4.0;
        cfg.rv_semi_y = 8.0;
        cfg.contraction = 0.1;
        cfg.rv_coupling = 0.0;
        const auto scene = phantom_cine(cfg, 2);
        CHECK(scene.field(0, 1).max_magnitude() == doctest::Approx(2.0).epsilon(0.02));
        CHECK(scene.field(0, 0).max_magnitude() == 0.0);
    }
    SUBCASE("ground-truth fields warp the moving frame onto the fixed frame")
    {
        const auto scene = phantom_cine(PhantomConfig{}, 4);
        for (int fix = 0; fix < 4; ++fix) {
            for (int mov = 0; mov < 4; ++mov) {
                const CGrid warped = warp_bilinear(scene.frames[mov], scene.field(fix, mov));
                const double err = nrmse(scene.frames[fix], warped);
                const double rel = std::sqrt((scene.frames[fix] - warped).abs2().sum() / scene.frames[fix].abs2().sum());
                CHECK(err < scene.residual_bound);
                CHECK(rel < 0.05);
            }
        }
    }
    SUBCASE("deterministic under a fixed configuration")
    {
        const auto a = phantom_cine(PhantomConfig::random(48, 48, 3), 2);
        const auto b = phantom_cine(PhantomConfig::random(48, 48, 3), 2);
        CHECK((a.frames[1] == b.frames[1]).all());
        CHECK((a.fields[1].ux == b.fields[1].ux).all());
    }
}

TEST_CASE("translation_pair and field_pair")
{
    const PhantomModel model(PhantomConfig{});
    const auto tp = translation_pair(model, 2.0, -1.0);
    CGrid shifted = warp_bilinear(tp.moving, tp.truth);
    CHECK(interior_max_diff(shifted, tp.fixed, 3) < 1e-12);

    const auto u = synth_gaussian_field({{32, 34, 1.0, -1.5, 6.0}}, 64, 64);
    const auto fp = field_pair(model, u);
    CHECK(nrmse(fp.fixed, warp_bilinear(fp.moving, u)) < 0.05);
}

TEST_CASE("random phantom configurations stay valid and self-consistent")
{
    for (uint64_t s = 0; s < 6; ++s) {
        const auto cfg = PhantomConfig::random(64, 64, s);
        CHECK_NOTHROW(cfg.validate());
        const auto scene = phantom_cine(cfg, 2);
        CHECK(nrmse(scene.frames[0], warp_bilinear(scene.frames[1], scene.field(0, 1))) < 0.05);
    }
}

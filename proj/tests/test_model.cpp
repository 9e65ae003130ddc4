#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "lapanet/kspace.hpp"
#include "lapanet/nn/model.hpp"
#include "lapanet/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace lapanet;
using namespace lapanet::nn;

namespace {

Tensor random_tensor(int n, int c, int h, int w, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> d(lo, hi);
    Tensor t(n, c, h, w);
    for (Eigen::Index i = 0; i < t.size(); ++i)
        t.data(i) = d(rng);
    return t;
}

// Phantom translation pair in coil-resolved k-space.
Tensor phantom_input(const ModelConfig& cfg, double ux, double uy, uint64_t seed)
{
    const PhantomModel model(PhantomConfig::random(cfg.height, cfg.width, seed));
    const MotionPair pair = translation_pair(model, ux, uy);
    const auto maps = synthetic_coil_maps(cfg.n_coils, cfg.height, cfg.width);
    const MultiCoil kf = fft2_centered(coil_images(normalize_max(pair.fixed), maps));
    const MultiCoil km = fft2_centered(coil_images(normalize_max(pair.moving), maps));
    return prepare_input(kf, km);
}

int scaled(double m, int c)
{
    return std::max(1, static_cast<int>(std::lround(c * m)));
}

// Expected block shapes written out from the channel schedules.
ShapeTrace expected_trace(double m, int s)
{
    const int grm[] = {4, 16, 32, 128};
    const int enc[] = {16, 32, 64, 192};
    ShapeTrace t;
    for (int i = 0; i < 4; ++i)
        t.push_back({"grm" + std::to_string(i + 1), {1, scaled(m, grm[i]), s >> i, s >> i}});
    for (int i = 0; i < 4; ++i)
        t.push_back({"enc" + std::to_string(i + 1), {1, scaled(m, enc[i]), s >> (i + 1), s >> (i + 1)}});
    t.push_back({"bottleneck", {1, scaled(m, 384), s / 32, s / 32}});
    for (int j = 1; j <= 4; ++j)
        t.push_back({"dec" + std::to_string(j), {1, scaled(m, enc[4 - j]), s >> (5 - j), s >> (5 - j)}});
    for (int j = 1; j <= 4; ++j)
        t.push_back({"u" + std::to_string(j), {1, 2, s >> (4 - j), s >> (4 - j)}});
    t.push_back({"ut", {1, 2, 1, 1}});
    return t;
}

void set_param(LapaNet& net, const std::string& name, const Tensor& v)
{
    net.params().get(name)->value = v;
}

} // namespace

TEST_CASE("shape ledger for multipliers {1, 0.25} at sizes {160, 64}")
{
    for (double m : {1.0, 0.25}) {
        for (int s : {160, 64}) {
            ModelConfig cfg;
            cfg.width_multiplier = m;
            cfg.height = cfg.width = s;
            cfg.n_coils = m == 1.0 && s == 160 ? 16 : 2;
            LapaNet net(cfg, 3);
            std::mt19937_64 rng(4);
            NoGradGuard guard;
            const ModelOutput out = net.forward(constant(random_tensor(1, cfg.input_channels(), s, s, rng)), false);
            const ShapeTrace want = expected_trace(m, s);
            REQUIRE(out.trace.size() == want.size());
            for (size_t i = 0; i < want.size(); ++i) {
                INFO(want[i].first, " m=", m, " s=", s);
                CHECK(out.trace[i].first == want[i].first);
                CHECK(out.trace[i].second == want[i].second);
            }
            for (const auto& u : out.u)
                CHECK(u->value.data.allFinite());
        }
    }
}

TEST_CASE("full-scale bottleneck and parameter count")
{
    const ModelConfig full = ModelConfig::full_scale();
    CHECK(full.input_channels() == 64);
    const LapaNet net(full, 1);
    const double count = static_cast<double>(net.params().total_count());
    CHECK(std::abs(count - 17.2e6) / 17.2e6 < 0.15);
    CHECK(full.bottleneck() == 384);
    CHECK((full.height >> 5) == 5);

    ModelConfig desk = full;
    desk.width_multiplier = 0.25;
    const LapaNet small(desk, 1);
    CHECK(static_cast<double>(small.params().total_count()) < count / 8.0);
}

TEST_CASE("parameter initialization is deterministic in the seed")
{
    const ModelConfig cfg = ModelConfig::desk();
    const LapaNet a(cfg, 11), b(cfg, 11), c(cfg, 12);
    REQUIRE(a.params().parameters().size() == b.params().parameters().size());
    bool differs = false;
    for (size_t i = 0; i < a.params().parameters().size(); ++i) {
        const auto& pa = a.params().parameters()[i];
        const auto& pb = b.params().parameters()[i];
        CHECK(pa.first == pb.first);
        CHECK(pa.second->value.data == pb.second->value.data);
        differs = differs || pa.second->value.data != c.params().parameters()[i].second->value.data;
        CHECK(pa.second->value.data.allFinite());
    }
    CHECK(differs);
}

TEST_CASE("configuration validation")
{
    ModelConfig cfg;
    cfg.height = 48;
    CHECK_THROWS_AS(LapaNet(cfg, 1), ValidationError);
    cfg = ModelConfig{};
    cfg.width_multiplier = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = ModelConfig{};
    cfg.n_coils = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    CHECK(norm_groups(12) == 4);
    CHECK(norm_groups(1) == 1);
    CHECK(norm_groups(384) == 8);
}

TEST_CASE("prepare_input layout")
{
    const int nc = 16;
    MultiCoil kf(nc, 8, 8), km(nc, 8, 8);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> d;
    for (int c = 0; c < nc; ++c)
        for (Eigen::Index i = 0; i < 64; ++i) {
            kf.coils[size_t(c)].data()[i] = {d(rng), d(rng)};
            km.coils[size_t(c)].data()[i] = {d(rng), d(rng)};
        }
    const Tensor t = prepare_input(kf, km);
    CHECK(t.c() == 64);
    // Zero frequency at (4, 4) moves to (0, 0).
    CHECK(t.at(0, 4 * 3, 0, 0) == kf.coils[3](4, 4).real());
    CHECK(t.at(0, 4 * 3 + 1, 0, 0) == kf.coils[3](4, 4).imag());
    CHECK(t.at(0, 4 * 3 + 2, 1, 2) == km.coils[3](5, 6).real());
    CHECK(t.at(0, 4 * 3 + 3, 7, 7) == km.coils[3](3, 3).imag());

    const Tensor same = prepare_input(kf, kf);
    for (int c = 0; c < nc; ++c) {
        CHECK(Eigen::Map<const Eigen::VectorXd>(same.ptr(0, 4 * c), 128)
              == Eigen::Map<const Eigen::VectorXd>(same.ptr(0, 4 * c + 2), 128));
    }
    const Tensor zero = prepare_input(MultiCoil(2, 8, 8), MultiCoil(2, 8, 8));
    CHECK(zero.data.isZero(0.0));
    CHECK_THROWS_AS(prepare_input(MultiCoil(2, 8, 8), MultiCoil(3, 8, 8)), ValidationError);
    CHECK_THROWS_AS(prepare_input(MultiCoil(2, 8, 8), MultiCoil(2, 8, 6)), ValidationError);
}

TEST_CASE("GRM output on zero input is finite")
{
    LapaNet net(ModelConfig::desk(), 2);
    NoGradGuard guard;
    const Var x = constant(Tensor(1, 16, 64, 64));
    for (int level = 1; level <= 4; ++level) {
        const Tensor g = net.grm(level, x, false)->value;
        CHECK(g.data.allFinite());
        CHECK(g.h() == 64 >> (level - 1));
    }
    CHECK_THROWS_AS(net.grm(1, constant(Tensor(1, 12, 64, 64)), false), ValidationError);
}

TEST_CASE("attention-weighted squeeze and excitation")
{
    LapaNet net(ModelConfig::desk(), 6);
    std::mt19937_64 rng(7);
    const Tensor f = random_tensor(2, 32, 8, 8, rng, -2, 2);
    const SeOutput se = net.attention_se("grm4.se", constant(f));
    CHECK(se.weights->value.data.minCoeff() > 0.0);
    CHECK(se.weights->value.data.maxCoeff() < 1.0);
    for (int c = 0; c < 32; ++c)
        CHECK(se.out->value.at(1, c, 3, 5) == doctest::Approx(f.at(1, c, 3, 5) * se.weights->value.at(1, c, 0, 0)).epsilon(1e-12));

    // Relabel channels of the input and of every weight that touches them:
    // the excitation weights are relabelled the same way.
    std::vector<int> perm(32);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor fp = f;
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 32; ++c)
            std::copy(f.ptr(n, perm[size_t(c)]), f.ptr(n, perm[size_t(c)]) + 64, fp.ptr(n, c));
    LapaNet permuted(ModelConfig::desk(), 6);
    const auto& P = net.params();
    Tensor proj = P.get("grm4.se.proj.w")->value, fc1 = P.get("grm4.se.fc1.w")->value;
    Tensor fc2 = P.get("grm4.se.fc2.w")->value, fc2b = P.get("grm4.se.fc2.b")->value;
    Tensor proj_p = proj, fc1_p = fc1, fc2_p = fc2, fc2b_p = fc2b;
    for (int c = 0; c < 32; ++c) {
        const int s = perm[size_t(c)];
        for (int k = 0; k < 9; ++k)
            proj_p.at(0, c, k / 3, k % 3) = proj.at(0, s, k / 3, k % 3);
        for (int o = 0; o < fc1.n(); ++o)
            fc1_p.at(o, c, 0, 0) = fc1.at(o, s, 0, 0);
        for (int i = 0; i < fc2.c(); ++i)
            fc2_p.at(c, i, 0, 0) = fc2.at(s, i, 0, 0);
        fc2b_p.data(c) = fc2b.data(s);
    }
    set_param(permuted, "grm4.se.proj.w", proj_p);
    set_param(permuted, "grm4.se.fc1.w", fc1_p);
    set_param(permuted, "grm4.se.fc2.w", fc2_p);
    set_param(permuted, "grm4.se.fc2.b", fc2b_p);
    const SeOutput sp = permuted.attention_se("grm4.se", constant(fp));
    double worst = 0.0;
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 32; ++c)
            worst = std::max(worst, std::abs(sp.weights->value.at(n, c, 0, 0) - se.weights->value.at(n, perm[size_t(c)], 0, 0)));
    CHECK(worst < 1e-12);

    const SeOutput z = net.attention_se("grm4.se", constant(Tensor(1, 32, 8, 8)));
    CHECK(z.out->value.data.isZero(0.0));
    CHECK(z.weights->value.data.minCoeff() > 0.0);
}

TEST_CASE("encoder and decoder blocks")
{
    ModelConfig cfg = ModelConfig::desk();
    LapaNet net(cfg, 8);
    std::mt19937_64 rng(9);
    NoGradGuard guard;
    const Var x = constant(random_tensor(1, 16, 64, 64, rng));
    const Var g = constant(random_tensor(1, 1, 64, 64, rng));
    const Tensor e = net.encoder(1, x, g, false)->value;
    CHECK(e.shape == std::array<int, 4>{1, 4, 32, 32});
    CHECK_THROWS_AS(net.encoder(1, x, constant(Tensor(1, 1, 32, 32)), false), ValidationError);

    // The DFM branch is not degenerate.
    const Var c = net.cim("enc2.cim", constant(random_tensor(1, 4, 32, 32, rng)), true);
    const Tensor with = net.dfm("enc2.dfm", c, false)->value;
    CHECK((with.data - c->value.data).cwiseAbs().maxCoeff() > 0.0);

    ModelConfig no_dfm = cfg;
    no_dfm.use_dfm = false;
    LapaNet ablated(no_dfm, 8);
    CHECK(ablated.params().total_count() < net.params().total_count());
    CHECK(ablated.dfm("enc2.dfm", c, false)->value.data == c->value.data);

    ModelConfig add_mode = cfg;
    add_mode.combine_add = true;
    LapaNet adder(add_mode, 8);
    CHECK(adder.encoder(1, x, g, false)->value.shape == e.shape);

    const Tensor d = net.decoder(1, constant(Tensor(1, 96, 2, 2)), constant(Tensor(1, 48, 4, 4)), false)->value;
    CHECK(d.shape == std::array<int, 4>{1, 48, 4, 4});
    CHECK(d.data.allFinite());
    CHECK_THROWS_AS(net.decoder(1, constant(Tensor(1, 96, 2, 2)), constant(Tensor(1, 48, 2, 2)), false), ValidationError);

    ModelConfig full = ModelConfig::full_scale();
    full.n_coils = 1;
    LapaNet big(full, 1);
    CHECK(big.decoder(1, constant(Tensor(1, 384, 5, 5)), constant(Tensor(1, 192, 10, 10)), false)->value.shape
          == std::array<int, 4>{1, 192, 10, 10});
}

TEST_CASE("motion attention module")
{
    LapaNet net(ModelConfig::desk(), 10);
    std::mt19937_64 rng(11);
    const Var dec = constant(random_tensor(1, 48, 4, 4, rng));
    const MamOutput first = net.motion_attention(1, dec, nullptr);
    CHECK(first.u->value.shape == std::array<int, 4>{1, 2, 8, 8});
    for (const Var& m : {first.mask_x, first.mask_y}) {
        CHECK(m->value.data.minCoeff() > 0.0);
        CHECK(m->value.data.maxCoeff() < 1.0);
    }
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            CHECK(first.u->value.at(0, 0, y, x) == doctest::Approx(first.mask_x->value.at(0, 0, y, x) * first.raw->value.at(0, 0, y, x)));
            CHECK(first.u->value.at(0, 1, y, x) == doctest::Approx(first.mask_y->value.at(0, 0, y, x) * first.raw->value.at(0, 1, y, x)));
        }

    const MamOutput second = net.motion_attention(2, constant(random_tensor(1, 16, 8, 8, rng)), first.u);
    CHECK(second.u->value.shape == std::array<int, 4>{1, 2, 16, 16});

    for (auto& [name, p] : net.params().parameters())
        if (name.rfind("mam", 0) == 0)
            p->value.data.setZero();
    CHECK(net.motion_attention(1, dec, nullptr).u->value.data.isZero(0.0));
    CHECK(net.motion_attention(2, constant(random_tensor(1, 16, 8, 8, rng)), constant(Tensor(1, 2, 8, 8))).u->value.data.isZero(0.0));
}

TEST_CASE("translation head")
{
    LapaNet net(ModelConfig::desk(), 12);
    const Tensor zero = net.translation_head(constant(Tensor(1, 96, 2, 2)))->value;
    CHECK(zero.shape == std::array<int, 4>{1, 2, 1, 1});
    const Tensor& bias = net.params().get("trans.b")->value;
    CHECK(zero.data(0) == bias.data(0));
    CHECK(zero.data(1) == bias.data(1));

    std::mt19937_64 rng(13);
    Tensor b = random_tensor(1, 96, 2, 2, rng);
    const Tensor& w = net.params().get("trans.w")->value;
    const double before = net.translation_head(constant(b))->value.data(0);
    // Raise every activation with a positive weight into output channel 0.
    for (int c = 0; c < 96; ++c)
        if (w.at(0, c, 0, 0) > 0.0)
            for (int p = 0; p < 4; ++p)
                b.ptr(0, c)[p] += 0.5;
    CHECK(net.translation_head(constant(b))->value.data(0) >= before);
    CHECK_THROWS_AS(net.translation_head(constant(Tensor(1, 96, 4, 4))), ValidationError);
}

TEST_CASE("forward determinism and batch independence in inference mode")
{
    const ModelConfig cfg = ModelConfig::desk();
    LapaNet net(cfg, 14);
    const Tensor a = phantom_input(cfg, 2.0, -1.0, 3);
    const Tensor b = phantom_input(cfg, -1.5, 0.5, 4);
    NoGradGuard guard;
    const ModelOutput oa = net.forward(constant(a), false);
    const ModelOutput oa2 = net.forward(constant(a), false);
    const ModelOutput ob = net.forward(constant(b), false);
    const ModelOutput both = net.forward(constant(stack_batch({a, b})), false);
    for (int i = 0; i < 4; ++i) {
        CHECK(oa.u[size_t(i)]->value.data == oa2.u[size_t(i)]->value.data);
        const Tensor& u = both.u[size_t(i)]->value;
        const Eigen::Index half = u.sample_size();
        CHECK((u.data.head(half) - oa.u[size_t(i)]->value.data).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((u.data.tail(half) - ob.u[size_t(i)]->value.data).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("end-to-end gradient of the desk network")
{
    ModelConfig cfg = ModelConfig::desk();
    cfg.height = cfg.width = 32;
    cfg.n_coils = 1;
    LapaNet net(cfg, 15);
    std::mt19937_64 rng(16);
    const Tensor x = random_tensor(2, 4, 32, 32, rng);
    std::vector<Tensor> probes;
    auto loss = [&] {
        const ModelOutput out = net.forward(constant(x), true);
        Var total = sum(mul(out.ut, out.ut));
        for (int i = 0; i < 4; ++i) {
            std::mt19937_64 r(100 + i);
            const Tensor& v = out.u[size_t(i)]->value;
            total = add(total, sum(mul(out.u[size_t(i)], constant(random_tensor(v.n(), v.c(), v.h(), v.w(), r)))));
        }
        return total;
    };
    net.params().zero_grad();
    backward(loss());
    // A spread of parameters across all block types.
    const std::vector<std::string> names = {"grm1.cross.w", "grm2.conv1.w", "grm3.attn.q.w", "grm4.se.proj.w", "grm4.se.fc1.b",
                                            "grm2.bn2.gamma", "enc1.reduce.w", "enc2.cim.conv_c.w", "enc3.dfm.d4.w",
                                            "enc4.dfm.bn_fuse.beta", "bott.cim.attn.v.w", "dec1.up_res.w", "dec2.gn.gamma",
                                            "dec4.cim.res.b", "mam1.enc3.w", "mam3.mask_y1.w", "mam4.mask_x2.b", "trans.w"};
    double worst = 0.0;
    // Smaller than the primitive-level step: with thousands of max-pool
    // windows a 1e-5 step occasionally crosses an argmax switch.
    const double eps = 1e-6;
    for (const auto& name : names) {
        const Var& p = net.params().get(name);
        REQUIRE(p->has_grad());
        const double scale = p->grad.data.cwiseAbs().maxCoeff();
        for (Eigen::Index i : {Eigen::Index(0), p->value.size() / 2, p->value.size() - 1}) {
            const double keep = p->value.data(i);
            p->value.data(i) = keep + eps;
            const double up = loss()->value.item();
            p->value.data(i) = keep - eps;
            const double dn = loss()->value.item();
            p->value.data(i) = keep;
            const double numeric = (up - dn) / (2 * eps);
            const double a = p->grad.data(i);
            const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-4 * scale, 1e-6});
            INFO(name, "[", i, "] analytic ", a, " numeric ", numeric);
            CHECK(err < 1e-4);
            worst = std::max(worst, err);
        }
    }
    MESSAGE("worst relative error ", worst);
    net.params().check_finite();
}

TEST_CASE("constant output gives zero gradients")
{
    LapaNet net(ModelConfig::desk(), 17);
    for (auto& [name, p] : net.params().parameters())
        if (name.rfind("trans", 0) == 0)
            p->value.data.setZero();
    std::mt19937_64 rng(18);
    net.params().zero_grad();
    const ModelOutput out = net.forward(constant(random_tensor(1, 16, 64, 64, rng)), false);
    backward(sum(out.ut));
    for (const auto& [name, p] : net.params().parameters())
        if (name != "trans.w" && name != "trans.b" && p->has_grad())
            CHECK(p->grad.data.isZero(0.0));
}

TEST_CASE("Gauss-Legendre rule integrates polynomials exactly and interlaces its weights")
{
    for (int n : {1, 2, 5, 17, 100}) {
        const QuadratureRule q = gauss_legendre(n);
        REQUIRE(q.nodes.size() == size_t(n));
        // Degree 2n - 1 is exact: the integral of t^k over [0, 1] is 1 / (k + 1).
        for (int k = 0; k <= std::min(2 * n - 1, 40); ++k) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i)
                acc += q.weights[size_t(i)] * std::pow(q.nodes[size_t(i)], k);
            CHECK(acc == doctest::Approx(1.0 / (k + 1)).epsilon(1e-12));
        }
        double cum = 0.0;
        for (int i = 0; i < n; ++i) {
            CHECK(q.weights[size_t(i)] > 0.0);
            CHECK(q.nodes[size_t(i)] > cum);
            cum += q.weights[size_t(i)];
            CHECK(q.nodes[size_t(i)] < cum);
        }
    }
    CHECK_THROWS_AS(gauss_legendre(0), ValidationError);
}

TEST_CASE("integrated gradients completeness on a smooth function")
{
    std::mt19937_64 rng(20);
    const Var w = constant(random_tensor(3, 2, 3, 3, rng));
    const Var b = constant(random_tensor(1, 3, 1, 1, rng));
    auto f = [&](const Var& x) {
        const Var h = silu(conv2d(x, w, b));
        return sum(mul(h, h));
    };
    const Tensor x = random_tensor(1, 2, 8, 8, rng, -2, 2);
    const IgResult r = integrated_gradients(f, x, 100);
    CHECK(r.completeness_gap < 1e-9);
    const IgResult r8 = integrated_gradients(f, x, 8);
    CHECK(r8.completeness_gap < 0.02);
    CHECK(std::abs(r8.sum - r.sum) / std::abs(r.sum) < 0.02);
    CHECK(integrated_gradients(f, Tensor::zeros_like(x), 10).attribution.data.isZero(0.0));
    CHECK_THROWS_AS(integrated_gradients(f, x, 0), ValidationError);
}

TEST_CASE("integrated gradients of the network read-out")
{
    const ModelConfig cfg = ModelConfig::desk();
    LapaNet net(cfg, 19);
    const Tensor x = phantom_input(cfg, 2.0, 1.0, 5);
    const IgResult r = integrated_gradients(net, x, 8);
    CHECK(r.attribution.same_shape(x));
    CHECK(r.attribution.data.allFinite());
    NoGradGuard guard;
    CHECK(r.f_input == doctest::Approx(motion_energy(net.forward(constant(x), false))->value.item()).epsilon(1e-12));
    const IgResult z = integrated_gradients(net, Tensor::zeros_like(x), 4);
    CHECK(z.attribution.data.isZero(0.0));
    CHECK_THROWS_AS(integrated_gradients(net, stack_batch({x, x}), 4), ValidationError);
    // Parameters keep their gradient flags.
    CHECK(net.params().parameters().front().second->requires_grad);
}

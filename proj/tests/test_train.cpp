#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "lapanet/kspace.hpp"
#include "lapanet/nn/losses.hpp"
#include "lapanet/train.hpp"

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

using namespace lapanet;
using namespace lapanet::nn;

namespace {

Tensor field_tensor(const DisplacementField& u)
{
    Tensor t(1, 2, static_cast<int>(u.rows()), static_cast<int>(u.cols()));
    for (int y = 0; y < t.h(); ++y)
        for (int x = 0; x < t.w(); ++x) {
            t.at(0, 0, y, x) = u.ux(y, x);
            t.at(0, 1, y, x) = u.uy(y, x);
        }
    return t;
}

struct Scene {
    Tensor fix, mov, box, truth;
};

Scene phantom_scene(double ux, double uy, uint64_t seed, int n = 64)
{
    const PhantomModel model(PhantomConfig::random(n, n, seed));
    const MotionPair pair = translation_pair(model, ux, uy);
    const auto maps = synthetic_coil_maps(4, n, n);
    const double peak = pair.fixed.abs().maxCoeff();
    return {coil_tensor(coil_images(pair.fixed / peak, maps)), coil_tensor(coil_images(pair.moving / peak, maps)),
            mask_tensor(box_mask(pair.fixed_labels, 10)), field_tensor(pair.truth)};
}

double masked_l1(const Tensor& img, const Tensor& box)
{
    double s = 0.0;
    for (int c = 0; c + 1 < img.c(); c += 2)
        for (int y = 0; y < img.h(); ++y)
            for (int x = 0; x < img.w(); ++x)
                s += box.at(0, 0, y, x) * std::hypot(img.at(0, c, y, x), img.at(0, c + 1, y, x));
    return s;
}

TrainConfig tiny_config()
{
    TrainConfig cfg;
    cfg.model = ModelConfig::desk();
    cfg.model.height = 32;
    cfg.model.width = 32;
    cfg.model.n_coils = 2;
    cfg.model.width_multiplier = 0.0625;
    cfg.batch = 2;
    cfg.curriculum = {{SceneKind::translation, 2, 2.0}, {SceneKind::gaussian, 1, 2.0}};
    cfg.accelerations = {1.0, 4.0};
    return cfg;
}

double max_param_difference(const LapaNet& a, const LapaNet& b)
{
    double d = 0.0;
    const auto& pa = a.params().parameters();
    const auto& pb = b.params().parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i)
        d = std::max(d, (pa[i].second->value.data - pb[i].second->value.data).cwiseAbs().maxCoeff());
    return d;
}

} // namespace

TEST_CASE("photometric loss vanishes for identical images and is small at the true field")
{
    // Image-domain oracle: a single unit coil, so the images themselves are compared.
    const PhantomModel model(PhantomConfig::random(64, 64, 3));
    const MotionPair pair = translation_pair(model, 2.5, -1.5);
    CoilSensitivityMap unit;
    unit.maps.push_back(CGrid::Ones(64, 64));
    const Tensor fix = coil_tensor(coil_images(pair.fixed, unit));
    const Tensor mov = coil_tensor(coil_images(pair.moving, unit));
    const Tensor box = mask_tensor(box_mask(pair.fixed_labels, 10));
    const Var zero = constant(Tensor(1, 2, 64, 64));
    CHECK(photometric_loss(fix, fix, zero, box)->value.item() == 0.0);
    const double at_truth = photometric_loss(fix, mov, constant(field_tensor(pair.truth)), box)->value.item();
    CHECK(at_truth < 0.05 * masked_l1(fix, box));
    CHECK(at_truth < 0.1 * photometric_loss(fix, mov, zero, box)->value.item());
}

TEST_CASE("coil-resolved photometric loss is minimized near the true translation")
{
    // Static coil maps do not move with the anatomy, which leaves a residual
    // at the true field; the minimum still sits within a fraction of a pixel.
    const Scene s = phantom_scene(2.5, -1.5, 3);
    double best = 1e300, bx = 0.0, by = 0.0;
    for (double ux = 1.5; ux <= 3.5 + 1e-9; ux += 0.1)
        for (double uy = -2.5; uy <= -0.5 + 1e-9; uy += 0.1) {
            const double l = photometric_loss(s.fix, s.mov, constant(field_tensor(DisplacementField::constant(64, 64, ux, uy))), s.box)
                                 ->value.item();
            if (l < best) {
                best = l;
                bx = ux;
                by = uy;
            }
        }
    CHECK(std::hypot(bx - 2.5, by + 1.5) < 0.5);
    CHECK(best < 0.5 * photometric_loss(s.fix, s.mov, constant(Tensor(1, 2, 64, 64)), s.box)->value.item());
}

TEST_CASE("photometric loss ignores changes of the fixed image outside the box")
{
    const Scene s = phantom_scene(1.0, 2.0, 5);
    Tensor altered = s.fix;
    for (int c = 0; c < altered.c(); ++c)
        for (int y = 0; y < altered.h(); ++y)
            for (int x = 0; x < altered.w(); ++x)
                if (s.box.at(0, 0, y, x) == 0.0)
                    altered.at(0, c, y, x) += 3.0;
    const Var u = constant(s.truth);
    CHECK(photometric_loss(s.fix, s.mov, u, s.box)->value.item()
          == doctest::Approx(photometric_loss(altered, s.mov, u, s.box)->value.item()).epsilon(1e-14));
}

TEST_CASE("k-space consistency is zero for identical inputs and blind to a global phase")
{
    const Scene s = phantom_scene(1.0, 0.0, 7);
    const Tensor mag = kspace_magnitude(s.fix);
    const Var zero = constant(Tensor(1, 2, 64, 64));
    CHECK(kdc_loss(mag, s.fix, zero)->value.item() == 0.0);

    const double phi = 0.83;
    Tensor rotated = s.mov;
    for (int c = 0; c + 1 < rotated.c(); c += 2)
        for (Eigen::Index i = 0; i < rotated.plane(); ++i) {
            const cd z = cd(s.mov.ptr(0, c)[i], s.mov.ptr(0, c + 1)[i]) * std::polar(1.0, phi);
            rotated.ptr(0, c)[i] = z.real();
            rotated.ptr(0, c + 1)[i] = z.imag();
        }
    const Var u = constant(s.truth);
    CHECK(kdc_loss(mag, rotated, u)->value.item()
          == doctest::Approx(kdc_loss(mag, s.mov, u)->value.item()).epsilon(1e-10));
}

TEST_CASE("k-space consistency gradient stays finite where the moving spectrum vanishes")
{
    const Scene s = phantom_scene(0.0, 0.0, 9, 32);
    const Tensor mag = kspace_magnitude(s.fix);
    const Var u = parameter(Tensor(1, 2, 32, 32));
    const Var loss = kdc_loss(mag, Tensor(1, 8, 32, 32), u);
    backward(loss);
    CHECK(std::isfinite(loss->value.item()));
    CHECK(u->grad.data.allFinite());
}

TEST_CASE("smoothness of a ramp and symmetry under transposition")
{
    const int h = 8, w = 12;
    Tensor ramp(1, 2, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            ramp.at(0, 0, y, x) = x;
    CHECK(smoothness_loss(constant(ramp))->value.item() == doctest::Approx(h * (w - 1)));

    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd;
    Tensor u(1, 2, h, w), ut(1, 2, w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            u.at(0, 0, y, x) = nd(rng);
            u.at(0, 1, y, x) = nd(rng);
            ut.at(0, 1, x, y) = u.at(0, 0, y, x);
            ut.at(0, 0, x, y) = u.at(0, 1, y, x);
        }
    CHECK(smoothness_loss(constant(u))->value.item()
          == doctest::Approx(smoothness_loss(constant(ut))->value.item()).epsilon(1e-13));
}

TEST_CASE("losses average over the batch")
{
    const Scene a = phantom_scene(1.0, 1.0, 11, 32);
    const Scene b = phantom_scene(-2.0, 0.5, 12, 32);
    const Tensor fix = stack_batch({a.fix, b.fix}), mov = stack_batch({a.mov, b.mov}), box = stack_batch({a.box, b.box});
    const Tensor u = stack_batch({a.truth, b.truth});
    const double la = photometric_loss(a.fix, a.mov, constant(Tensor(1, 2, 32, 32)), a.box)->value.item();
    const double lb = photometric_loss(b.fix, b.mov, constant(Tensor(1, 2, 32, 32)), b.box)->value.item();
    CHECK(photometric_loss(fix, mov, constant(Tensor(2, 2, 32, 32)), box)->value.item()
          == doctest::Approx(0.5 * (la + lb)).epsilon(1e-13));
    CHECK(smoothness_loss(constant(u))->value.item() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("translational loss equals the photometric loss of the broadcast field")
{
    const Scene s = phantom_scene(2.0, -3.0, 13, 32);
    Tensor ut(1, 2, 1, 1);
    ut.data << 1.7, -2.4;
    const Tensor broadcast = field_tensor(DisplacementField::constant(32, 32, 1.7, -2.4));
    CHECK(translational_loss(s.fix, s.mov, constant(ut), s.box)->value.item()
          == doctest::Approx(photometric_loss(s.fix, s.mov, constant(broadcast), s.box)->value.item()).epsilon(1e-13));
}

TEST_CASE("total loss is the weighted sum of its terms")
{
    ModelConfig cfg = tiny_config().model;
    LapaNet net(cfg, 21);
    const auto maps = synthetic_coil_maps(cfg.n_coils, cfg.height, cfg.width);
    const MotionPair pair = make_training_pair(SceneKind::translation, 32, 32, 2.0, 4);
    const NetworkSample s = make_network_sample(pair, maps, PatternKind::cartesian_lines, 2.0, 4);
    const ModelOutput out = net.forward(constant(s.input), false);

    const LossWeights w{0.3, 0.07, 0.02};
    const LossTerms t = total_loss(out, s.fix, s.mov, s.box, w);
    double resum = w.alpha * t.tphoto;
    double photo = 0.0;
    for (size_t i = 0; i < 4; ++i) {
        resum += t.photo[i] + w.beta * t.kdc[i] + w.gamma * t.smooth[i];
        photo += t.photo[i];
    }
    CHECK(std::abs(t.total->value.item() - resum) < 1e-10 * std::max(1.0, resum));

    const LossTerms p = total_loss(out, s.fix, s.mov, s.box, LossWeights{0.0, 0.0, 0.0});
    CHECK(p.total->value.item() == doctest::Approx(photo).epsilon(1e-12));
    CHECK_THROWS_AS(total_loss(out, s.fix, s.mov, s.box, LossWeights{-1.0, 0.0, 0.0}), ValidationError);
}

TEST_CASE("training pairs respect the shift bound and the seed")
{
    for (uint64_t seed = 0; seed < 4; ++seed) {
        const MotionPair t = make_training_pair(SceneKind::translation, 64, 64, 3.0, seed);
        CHECK(t.truth.ux.cwiseAbs().maxCoeff() <= 3.0);
        CHECK(t.truth.uy.cwiseAbs().maxCoeff() <= 3.0);
        const MotionPair g = make_training_pair(SceneKind::gaussian, 64, 64, 3.0, seed);
        CHECK(g.truth.ux.cwiseAbs().maxCoeff() <= 3.0);
        CHECK(g.truth.uy.cwiseAbs().maxCoeff() <= 3.0);
        CHECK(g.truth.ux.cwiseAbs().maxCoeff() + g.truth.uy.cwiseAbs().maxCoeff() > 0.0);
    }
    const MotionPair a = make_training_pair(SceneKind::phantom, 64, 64, 3.0, 8);
    const MotionPair b = make_training_pair(SceneKind::phantom, 64, 64, 3.0, 8);
    CHECK((a.fixed - b.fixed).abs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(make_training_pair(SceneKind::translation, 64, 64, -1.0, 1), ValidationError);
}

TEST_CASE("network sample layout")
{
    const auto maps = synthetic_coil_maps(2, 32, 32);
    const MotionPair pair = make_training_pair(SceneKind::translation, 32, 32, 2.0, 6);
    const NetworkSample s = make_network_sample(pair, maps, PatternKind::radial_spokes, 4.0, 6);
    CHECK(s.input.shape == std::array<int, 4>{1, 8, 32, 32});
    CHECK(s.fix.shape == std::array<int, 4>{1, 4, 32, 32});
    CHECK(s.box.data.sum() > 0.0);
    CHECK(s.box.data.sum() < 32.0 * 32.0);

    const NetworkSample full = make_network_sample(pair, maps, PatternKind::cartesian_lines, 1.0, 6);
    const MultiCoil k = fft2_centered(coil_images_from(full.fix));
    const MultiCoil shifted = inverse_zero_frequency_shift(k);
    for (int c = 0; c < 2; ++c)
        for (Eigen::Index i = 0; i < full.input.plane(); ++i)
            REQUIRE(std::abs(full.input.ptr(0, 4 * c)[i] - shifted.coils[size_t(c)].data()[i].real()) < 1e-10);
}

TEST_CASE("cosine schedule and curriculum lookup")
{
    TrainConfig cfg = tiny_config();
    cfg.lr = 1e-3;
    cfg.lr_min = 1e-5;
    CHECK(cfg.total_steps() == 3);
    CHECK(cfg.learning_rate(0) == doctest::Approx(1e-3));
    CHECK(cfg.learning_rate(1) == doctest::Approx(0.5 * (1e-3 + 1e-5)));
    CHECK(cfg.learning_rate(2) == doctest::Approx(1e-5));
    CHECK(cfg.stage(1).scene == SceneKind::translation);
    CHECK(cfg.stage(2).scene == SceneKind::gaussian);
    cfg.batch = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("AdamW first step moves each weight by lr against the gradient sign")
{
    ParameterStore ps;
    Tensor v(1, 1, 1, 3);
    v.data << 1.0, -2.0, 0.5;
    const Var p = ps.add("w", v);
    p->grad = Tensor(1, 1, 1, 3);
    p->grad.data << 0.3, -4.0, 1e-3;
    AdamW opt(0.9, 0.999, 1e-12, 0.1);
    opt.step(ps, 0.01);
    const double decay = 1.0 - 0.01 * 0.1;
    CHECK(p->value.data(0) == doctest::Approx(1.0 * decay - 0.01).epsilon(1e-9));
    CHECK(p->value.data(1) == doctest::Approx(-2.0 * decay + 0.01).epsilon(1e-9));
    CHECK(p->value.data(2) == doctest::Approx(0.5 * decay - 0.01).epsilon(1e-9));
    CHECK(opt.steps_taken() == 1);
}

TEST_CASE("zero learning rate leaves the weights unchanged")
{
    TrainConfig cfg = tiny_config();
    cfg.lr = 0.0;
    LapaNet net(cfg.model, 2), ref(cfg.model, 2);
    const auto rows = train(net, cfg);
    CHECK(rows.size() == 3);
    CHECK(max_param_difference(net, ref) == 0.0);
}

TEST_CASE("training is reproducible from its seed and writes one row per step")
{
    const TrainConfig cfg = tiny_config();
    LapaNet a(cfg.model, 3), b(cfg.model, 3);
    std::ostringstream log;
    const auto ra = train(a, cfg, &log);
    const auto rb = train(b, cfg);
    REQUIRE(ra.size() == rb.size());
    for (size_t i = 0; i < ra.size(); ++i) {
        CHECK(ra[i].total == rb[i].total);
        CHECK(ra[i].R == rb[i].R);
        CHECK(ra[i].trajectory == rb[i].trajectory);
    }
    CHECK(max_param_difference(a, b) == 0.0);
    CHECK(max_param_difference(a, LapaNet(cfg.model, 3)) > 0.0);

    std::istringstream in(log.str());
    std::string line;
    int n = 0;
    while (std::getline(in, line))
        ++n;
    CHECK(n == 4);
}

TEST_CASE("training stops with the step index on a non-finite loss")
{
    const TrainConfig cfg = tiny_config();
    LapaNet net(cfg.model, 4);
    net.params().get("trans.b")->value.data(0) = std::nan("");
    try {
        train(net, cfg);
        FAIL("expected a RuntimeFailure");
    } catch (const RuntimeFailure& e) {
        CHECK(std::string(e.what()).find("step 0") != std::string::npos);
    }
}

TEST_CASE("model config round trip and rejection of bad files")
{
    ModelConfig c = ModelConfig::full_scale();
    c.combine_add = true;
    std::stringstream ss;
    write_model_config(ss, c);
    const ModelConfig r = read_model_config(ss);
    CHECK(r.height == c.height);
    CHECK(r.width_multiplier == c.width_multiplier);
    CHECK(r.grm_channels == c.grm_channels);
    CHECK(r.enc_channels == c.enc_channels);
    CHECK(r.combine_add);

    std::istringstream bad1("height=64\nbogus=1\n"), bad2("height=abc\n"), bad3("grm_channels=1,2,3\n");
    CHECK_THROWS_AS(read_model_config(bad1), ValidationError);
    CHECK_THROWS_AS(read_model_config(bad2), ValidationError);
    CHECK_THROWS_AS(read_model_config(bad3), ValidationError);
}

TEST_CASE("checkpoint round trip reproduces the network output")
{
    TrainConfig cfg = tiny_config();
    cfg.curriculum = {{SceneKind::translation, 1, 2.0}};
    LapaNet net(cfg.model, 5);
    train(net, cfg);
    const auto dir = std::filesystem::temp_directory_path() / "lapanet_test_ckpt";
    std::filesystem::remove_all(dir);
    save_checkpoint(dir, net);
    LapaNet back = load_checkpoint(dir);
    CHECK(max_param_difference(net, back) == 0.0);
    for (const auto& [name, s] : net.params().batch_norms()) {
        CHECK((s.running_mean.data - back.params().batch_norm(name).running_mean.data).cwiseAbs().maxCoeff() == 0.0);
        CHECK((s.running_var.data - back.params().batch_norm(name).running_var.data).cwiseAbs().maxCoeff() == 0.0);
    }
    const auto maps = synthetic_coil_maps(cfg.model.n_coils, 32, 32);
    const NetworkSample s
        = make_network_sample(make_training_pair(SceneKind::gaussian, 32, 32, 2.0, 1), maps, PatternKind::cartesian_lines, 2.0, 1);
    const NetworkEstimate ea = network_register(net, s.input);
    const NetworkEstimate eb = network_register(back, s.input);
    CHECK((ea.u.ux - eb.u.ux).cwiseAbs().maxCoeff() == 0.0);
    CHECK(ea.ut_x == eb.ut_x);

    std::filesystem::remove(dir / "trans.w.cxa");
    CHECK_THROWS(load_checkpoint(dir));
    std::filesystem::remove_all(dir);
}

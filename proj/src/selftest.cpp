#include "lapanet/pipeline.hpp"

#include "lapanet/kspace.hpp"
#include "lapanet/metrics.hpp"
#include "lapanet/nn/ops.hpp"
#include "lapanet/rng.hpp"
#include "lapanet/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

namespace lapanet {

namespace {

std::string describe(const char* what, double value, double tol)
{
    std::ostringstream os;
    os << what << '=' << std::setprecision(3) << value << " tol=" << tol;
    return os.str();
}

CGrid random_grid(Eigen::Index rows, Eigen::Index cols, SplitMix64& rng)
{
    CGrid g(rows, cols);
    for (Eigen::Index i = 0; i < g.size(); ++i)
        g.data()[i] = {rng.normal(), rng.normal()};
    return g;
}

SelftestLine shift_theorem(SplitMix64& rng)
{
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const CGrid img = random_grid(64, 64, rng);
        const int dy = rng.integer(-31, 31), dx = rng.integer(-31, 31);
        const CGrid via_k = ifft2_centered(apply_phase_ramp(fft2_centered(img), dx, dy));
        worst = std::max(worst, (via_k - circular_shift(img, dy, dx)).abs().maxCoeff());
    }
    return {"shift_theorem", worst < 1e-10, describe("max_err", worst, 1e-10)};
}

SelftestLine adjoint(SplitMix64& rng)
{
    const int n = 16;
    double worst = 0.0;
    int probes = 0;
    for (int coils : {1, 4, 16})
        for (PatternKind kind : {PatternKind::cartesian_lines, PatternKind::radial_spokes})
            for (int t = 0; t < 17; ++t) {
                CoilSensitivityMap maps;
                for (int c = 0; c < coils; ++c)
                    maps.maps.push_back(random_grid(n, n, rng));
                const SamplingPattern p
                    = pattern_for_acceleration(kind, n, 1.0 + rng.integer(0, 3), rng.engine()(), t);
                const CGrid x = random_grid(n, n, rng);
                const MultiCoil ax = multicoil_forward(x, maps, p);
                MultiCoil y;
                for (const auto& c : ax.coils)
                    y.coils.push_back(random_grid(c.rows(), c.cols(), rng));
                cd lhs = 0.0;
                for (size_t c = 0; c < ax.coils.size(); ++c)
                    lhs += (ax.coils[c].conjugate() * y.coils[c]).sum();
                const cd rhs = (x.conjugate() * multicoil_adjoint(y, maps, p)).sum();
                worst = std::max(worst, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
                ++probes;
            }
    return {"adjoint", worst < 1e-10, describe("max_rel_err", worst, 1e-10) + " probes=" + std::to_string(probes)};
}

SelftestLine acceleration_anchors()
{
    const double cart = acceleration(156, 2).R;
    const double rad = acceleration(312, 3).R;
    const bool pass = cart == 78.0 && rad == 104.0;
    std::ostringstream os;
    os << "cartesian_R=" << cart << " radial_R=" << rad;
    return {"acceleration_anchors", pass, os.str()};
}

Mask random_mask(int rows, int cols, SplitMix64& rng)
{
    Mask m = Mask::Zero(rows, cols);
    const double cy = rng.uniform(0, rows - 1), cx = rng.uniform(0, cols - 1);
    const double ry = rng.uniform(1.0, rows / 2.0), rx = rng.uniform(1.0, cols / 2.0);
    for (int y = 0; y < rows; ++y)
        for (int x = 0; x < cols; ++x)
            m(y, x) = ((y - cy) * (y - cy) / (ry * ry) + (x - cx) * (x - cx) / (rx * rx) <= 1.0) ? 1 : 0;
    if ((m != 0).count() == 0)
        m(rows / 2, cols / 2) = 1;
    return m;
}

std::vector<std::pair<int, int>> edge(const Mask& m)
{
    std::vector<std::pair<int, int>> pts;
    auto in = [&](int y, int x) { return y >= 0 && x >= 0 && y < m.rows() && x < m.cols() && m(y, x); };
    for (int y = 0; y < m.rows(); ++y)
        for (int x = 0; x < m.cols(); ++x)
            if (in(y, x) && !(in(y - 1, x) && in(y + 1, x) && in(y, x - 1) && in(y, x + 1)))
                pts.emplace_back(y, x);
    return pts;
}

SelftestLine metric_oracles(SplitMix64& rng)
{
    double worst = 0.0;
    for (int t = 0; t < 200; ++t) {
        const int rows = rng.integer(2, 32), cols = rng.integer(2, 32);
        const Mask a = random_mask(rows, cols, rng), b = random_mask(rows, cols, rng);
        double inter = 0, sa = 0, sb = 0;
        for (Eigen::Index i = 0; i < a.size(); ++i) {
            sa += a.data()[i];
            sb += b.data()[i];
            inter += a.data()[i] && b.data()[i];
        }
        worst = std::max(worst, std::abs(dice(a, b) - 2 * inter / (sa + sb)));
        const auto ea = edge(a), eb = edge(b);
        auto directed = [](const auto& from, const auto& to) {
            double d = 0.0;
            for (auto [y, x] : from) {
                double best = std::numeric_limits<double>::infinity();
                for (auto [v, u] : to)
                    best = std::min(best, std::hypot(double(y - v), double(x - u)));
                d = std::max(d, best);
            }
            return d;
        };
        worst = std::max(worst, std::abs(hausdorff(a, b, 1.0) - std::max(directed(ea, eb), directed(eb, ea))));
        const CGrid ref = random_grid(rows, cols, rng), test = random_grid(rows, cols, rng);
        const double range = ref.abs().maxCoeff() - ref.abs().minCoeff();
        const double oracle = std::sqrt((ref - test).abs2().sum() / (rows * cols)) / range;
        worst = std::max(worst, std::abs(nrmse(ref, test) - oracle) / std::max(1.0, oracle));
    }
    return {"metric_oracles", worst < 1e-12, describe("max_err", worst, 1e-12)};
}

nn::Tensor random_tensor(int n, int c, int h, int w, SplitMix64& rng)
{
    nn::Tensor t(n, c, h, w);
    for (Eigen::Index i = 0; i < t.size(); ++i)
        t.data(i) = rng.uniform(-1.0, 1.0);
    return t;
}

// Worst relative central-difference error over every leaf entry.
double fd_error(const std::function<nn::Var(const std::vector<nn::Var>&)>& f, std::vector<nn::Tensor> inputs)
{
    std::vector<nn::Var> leaves;
    for (const auto& t : inputs)
        leaves.push_back(nn::parameter(t));
    const nn::Var out = f(leaves);
    nn::backward(out);
    const double eps = 1e-5;
    double worst = 0.0;
    for (size_t l = 0; l < inputs.size(); ++l) {
        const double floor = std::max(1e-6, 1e-4 * leaves[l]->grad.data.cwiseAbs().maxCoeff());
        for (Eigen::Index i = 0; i < inputs[l].size(); ++i) {
            auto eval = [&](double delta) {
                nn::NoGradGuard guard;
                std::vector<nn::Var> v;
                for (size_t k = 0; k < inputs.size(); ++k) {
                    nn::Tensor t = inputs[k];
                    if (k == l)
                        t.data(i) += delta;
                    v.push_back(nn::constant(t));
                }
                return f(v)->value.item();
            };
            const double num = (eval(eps) - eval(-eps)) / (2 * eps);
            const double ana = leaves[l]->grad.data(i);
            worst = std::max(worst, std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), floor}));
        }
    }
    return worst;
}

// sum(out * r) with r drawn once, at the first call, to match the output shape.
class Probe {
public:
    explicit Probe(uint64_t seed) : seed_(seed) {}
    nn::Var operator()(const nn::Var& out)
    {
        const nn::Tensor& v = out->value;
        if (weights_.size() != v.size()) {
            SplitMix64 rng(seed_);
            weights_ = random_tensor(v.n(), v.c(), v.h(), v.w(), rng);
        }
        return nn::sum(nn::mul(out, nn::constant(weights_)));
    }

private:
    uint64_t seed_;
    nn::Tensor weights_;
};

SelftestLine gradient_checks(SplitMix64& rng)
{
    using nn::Var;
    using Leaves = std::vector<Var>;
    auto t = [&](int n, int c, int h, int w) { return random_tensor(n, c, h, w, rng); };
    std::vector<std::pair<std::string, double>> errs;
    auto check = [&](const std::string& name, auto&& f, std::vector<nn::Tensor> inputs) {
        Probe probe(rng.engine()());
        errs.emplace_back(name, fd_error([&](const Leaves& v) { return probe(f(v)); }, std::move(inputs)));
    };

    check("conv2d", [](const Leaves& v) { return nn::conv2d(v[0], v[1], v[2], 2); },
          {t(2, 2, 6, 6), t(3, 2, 3, 3), t(1, 3, 1, 1)});
    check("depthwise_conv2d", [](const Leaves& v) { return nn::depthwise_conv2d(v[0], v[1], v[2], 2); },
          {t(2, 3, 6, 6), t(3, 1, 3, 3), t(1, 3, 1, 1)});
    check("add_sub_mul_affine",
          [](const Leaves& v) { return nn::affine(nn::mul(nn::add(v[0], v[1]), nn::sub(v[0], v[1])), 1.7, 0.3); },
          {t(1, 2, 4, 4), t(1, 2, 4, 4)});
    check("mul_channel_expand", [](const Leaves& v) { return nn::add(nn::mul_channel(v[0], v[1]), nn::expand(v[1], 4, 4)); },
          {t(2, 3, 4, 4), t(2, 3, 1, 1)});
    check("concat_slice",
          [](const Leaves& v) { return nn::slice_channels(nn::concat({v[0], v[1]}), 1, 4); },
          {t(1, 2, 4, 4), t(1, 3, 4, 4)});
    check("silu_sigmoid", [](const Leaves& v) { return nn::silu(nn::sigmoid(v[0])); }, {t(1, 3, 6, 6)});
    check("max_pool", [](const Leaves& v) { return nn::max_pool(v[0], 2); }, {t(1, 3, 6, 6)});
    check("global_max", [](const Leaves& v) { return nn::global_max(v[0]); }, {t(2, 3, 5, 5)});
    check("upsample_nearest2", [](const Leaves& v) { return nn::upsample_nearest2(v[0]); }, {t(1, 2, 3, 4)});
    check("upsample_bilinear2", [](const Leaves& v) { return nn::upsample_bilinear2(v[0]); }, {t(1, 2, 3, 4)});
    check("spatial_softmax_attention_pool",
          [](const Leaves& v) { return nn::attention_pool(v[0], nn::spatial_softmax(v[1])); },
          {t(2, 3, 5, 5), t(2, 1, 5, 5)});
    check("channel_attention", [](const Leaves& v) { return nn::channel_attention(v[0], v[1], v[2]); },
          {t(1, 3, 5, 5), t(1, 3, 5, 5), t(1, 3, 5, 5)});
    check("group_norm", [](const Leaves& v) { return nn::group_norm(v[0], v[1], v[2], 2); },
          {t(2, 4, 5, 5), t(1, 4, 1, 1), t(1, 4, 1, 1)});
    nn::BatchNormState bn{nn::Tensor(1, 3, 1, 1), nn::Tensor(1, 3, 1, 1)};
    check("batch_norm", [&bn](const Leaves& v) { return nn::batch_norm(v[0], v[1], v[2], bn, true); },
          {t(3, 3, 4, 4), t(1, 3, 1, 1), t(1, 3, 1, 1)});
    nn::Tensor field = t(1, 2, 6, 6);
    field.data = field.data * 0.7 + Eigen::VectorXd::Constant(field.size(), 0.13);
    check("warp", [](const Leaves& v) { return nn::warp(v[0], v[1]); }, {t(1, 3, 6, 6), field});
    check("mean", [](const Leaves& v) { return nn::mean(v[0]); }, {t(2, 2, 3, 3)});

    nn::Tensor mask = t(1, 1, 6, 6);
    mask.data = (mask.data.array() > -0.5).cast<double>().matrix();
    check("complex_l1", [&mask](const Leaves& v) { return nn::complex_l1(v[0], v[1], mask); },
          {t(1, 4, 6, 6), t(1, 4, 6, 6)});
    nn::Tensor magnitude = t(1, 2, 8, 8);
    magnitude.data = magnitude.data.cwiseAbs() + Eigen::VectorXd::Constant(magnitude.size(), 0.5);
    check("kspace_magnitude_l1", [&magnitude](const Leaves& v) { return nn::kspace_magnitude_l1(magnitude, v[0]); },
          {t(1, 4, 8, 8)});
    check("forward_difference_l1", [](const Leaves& v) { return nn::forward_difference_l1(v[0]); }, {t(1, 2, 5, 5)});

    double worst = 0.0;
    std::string name;
    for (const auto& [n, e] : errs)
        if (e >= worst) {
            worst = e;
            name = n;
        }
    return {"gradient_checks", worst < 1e-4,
            describe(("primitives=" + std::to_string(errs.size()) + " worst=" + name + " rel_err").c_str(), worst,
                     1e-4)};
}

} // namespace

std::vector<SelftestLine> run_selftest(uint64_t seed)
{
    SplitMix64 rng(mix_seed(seed, 0x5e1f));
    std::vector<SelftestLine> lines;
    lines.push_back(shift_theorem(rng));
    lines.push_back(adjoint(rng));
    lines.push_back(acceleration_anchors());
    lines.push_back(metric_oracles(rng));
    lines.push_back(gradient_checks(rng));
    return lines;
}

void write_selftest(std::ostream& os, const std::vector<SelftestLine>& lines)
{
    for (const auto& l : lines)
        os << (l.pass ? "PASS " : "FAIL ") << l.name << ' ' << l.detail << '\n';
}

} // namespace lapanet

#include "lapanet/phantom.hpp"

#include "lapanet/rng.hpp"

#include <cmath>
#include <numbers>

namespace lapanet {

namespace {

constexpr double pi = std::numbers::pi;

double logistic(double v, double width)
{
    return 1.0 / (1.0 + std::exp(-v / width));
}

// Compactly supported smooth bump, 1 at r = 0, 0 for r >= support.
double bump(double r, double support)
{
    if (r >= support)
        return 0.0;
    const double c = std::cos(0.5 * pi * r / support);
    return c * c;
}

} // namespace

void PhantomConfig::validate() const
{
    if (rows < 8 || cols < 8)
        throw ValidationError("phantom: grid must be at least 8x8");
    if (!(inner_radius > 0.0) || !(outer_radius > 0.0))
        throw ValidationError("phantom: radii must be positive");
    if (inner_radius >= outer_radius)
        throw ValidationError("phantom: inner radius must be smaller than outer radius");
    if (!(contraction >= 0.0 && contraction < 0.5))
        throw ValidationError("phantom: contraction must lie in [0, 0.5)");
    if (!(decay_width > 0.0) || !(rv_semi_x > 0.0) || !(rv_semi_y > 0.0) || !(edge_width > 0.0))
        throw ValidationError("phantom: widths must be positive");
    if (texture_components < 0 || !(texture_cutoff > 0.0 && texture_cutoff <= 1.0))
        throw ValidationError("phantom: invalid texture settings");
}

PhantomConfig PhantomConfig::random(int rows, int cols, uint64_t seed)
{
    SplitMix64 rng(mix_seed(seed, 0x9a7));
    const double s = std::min(rows, cols) / 64.0;
    PhantomConfig c;
    c.rows = rows;
    c.cols = cols;
    c.center_y = rows / 2.0 + rng.uniform(-3.0, 3.0) * s;
    c.center_x = cols / 2.0 + rng.uniform(0.0, 4.0) * s;
    c.inner_radius = rng.uniform(5.5, 8.0) * s;
    c.outer_radius = c.inner_radius + rng.uniform(3.5, 5.5) * s;
    c.contraction = rng.uniform(0.05, 0.15);
    c.decay_width = rng.uniform(4.0, 8.0) * s;
    c.rv_semi_x = rng.uniform(4.0, 6.0) * s;
    c.rv_semi_y = rng.uniform(7.0, 10.0) * s;
    c.rv_offset_x = -(c.outer_radius + c.rv_semi_x + rng.uniform(1.5, 3.0) * s);
    c.rv_offset_y = rng.uniform(-3.0, 3.0) * s;
    c.rv_coupling = rng.uniform(0.3, 0.7);
    c.rv_direction = rng.uniform(-0.5, 0.5);
    c.texture_amplitude = rng.uniform(0.1, 0.2);
    c.phase_amplitude = rng.uniform(0.0, 0.5);
    c.seed = mix_seed(seed, 0x7e7);
    return c;
}

PhantomModel::PhantomModel(const PhantomConfig& cfg) : cfg_(cfg)
{
    cfg_.validate();
    SplitMix64 rng(cfg_.seed);
    const double wmax = cfg_.texture_cutoff * pi;
    for (int k = 0; k < cfg_.texture_components; ++k) {
        const double mag = rng.uniform(0.05 * pi, wmax);
        const double dir = rng.uniform(0.0, 2.0 * pi);
        texture_.push_back({mag * std::sin(dir), mag * std::cos(dir), rng.uniform(0.0, 2.0 * pi)});
    }
    for (int k = 0; k < 2; ++k) {
        const double mag = rng.uniform(0.02 * pi, 0.08 * pi);
        const double dir = rng.uniform(0.0, 2.0 * pi);
        phase_map_.push_back({mag * std::sin(dir), mag * std::cos(dir), rng.uniform(0.0, 2.0 * pi)});
    }
}

cd PhantomModel::intensity(double y, double x) const
{
    const double w = cfg_.edge_width;
    const double body_ay = 0.44 * cfg_.rows;
    const double body_ax = 0.46 * cfg_.cols;
    const double by = (y - cfg_.rows / 2.0) / body_ay;
    const double bx = (x - cfg_.cols / 2.0) / body_ax;
    const double body = logistic((1.0 - std::sqrt(by * by + bx * bx)) * std::min(body_ay, body_ax), w);

    const double rho = std::hypot(y - cfg_.center_y, x - cfg_.center_x);
    const double epi = logistic(cfg_.outer_radius - rho, w);
    const double endo = logistic(cfg_.inner_radius - rho, w);

    const double ey = (y - cfg_.center_y - cfg_.rv_offset_y) / cfg_.rv_semi_y;
    const double ex = (x - cfg_.center_x - cfg_.rv_offset_x) / cfg_.rv_semi_x;
    const double rv = logistic((1.0 - std::sqrt(ey * ey + ex * ex)) * std::min(cfg_.rv_semi_x, cfg_.rv_semi_y), w);

    double value = 0.5 * body * (1.0 - epi) + 0.25 * (epi - endo) + 1.0 * endo;
    value = value * (1.0 - rv) + 0.9 * rv;

    double texture = 0.0;
    const double amp = texture_.empty() ? 0.0 : cfg_.texture_amplitude * std::sqrt(2.0 / texture_.size());
    for (const auto& t : texture_)
        texture += std::cos(t[0] * y + t[1] * x + t[2]);
    double phase = 0.0;
    for (const auto& p : phase_map_)
        phase += std::sin(p[0] * y + p[1] * x + p[2]);

    const double mag = value * (1.0 + amp * texture) * body;
    return std::polar(mag, 0.5 * cfg_.phase_amplitude * phase);
}

int32_t PhantomModel::label(double y, double x) const
{
    const double rho = std::hypot(y - cfg_.center_y, x - cfg_.center_x);
    if (rho < cfg_.inner_radius)
        return cavity;
    if (rho < cfg_.outer_radius)
        return myocardium;
    const double ey = (y - cfg_.center_y - cfg_.rv_offset_y) / cfg_.rv_semi_y;
    const double ex = (x - cfg_.center_x - cfg_.rv_offset_x) / cfg_.rv_semi_x;
    if (ey * ey + ex * ex < 1.0)
        return rv_pool;
    return background;
}

std::array<double, 2> PhantomModel::frame_displacement(double phase, double y, double x) const
{
    const double a = cfg_.contraction * phase;
    const double dy = y - cfg_.center_y;
    const double dx = x - cfg_.center_x;
    const double rho = std::hypot(dy, dx);
    std::array<double, 2> d{0.0, 0.0};
    if (rho > 0.0) {
        const double r = cfg_.outer_radius;
        const double m = rho <= r ? a * rho
                                  : a * r * std::exp(-(rho - r) * (rho - r) / (2.0 * cfg_.decay_width * cfg_.decay_width));
        d[0] = -m * dy / rho;
        d[1] = -m * dx / rho;
    }
    const double rvy = y - cfg_.center_y - cfg_.rv_offset_y;
    const double rvx = x - cfg_.center_x - cfg_.rv_offset_x;
    const double support = 1.3 * std::max(cfg_.rv_semi_x, cfg_.rv_semi_y);
    const double b = bump(std::hypot(rvy, rvx), support);
    const double shift = cfg_.rv_coupling * a * cfg_.outer_radius * b;
    d[0] += shift * std::sin(cfg_.rv_direction);
    d[1] += shift * std::cos(cfg_.rv_direction);
    return d;
}

std::array<double, 2> PhantomModel::to_frame(double phase, double y, double x) const
{
    const auto d = frame_displacement(phase, y, x);
    return {y + d[0], x + d[1]};
}

std::array<double, 2> PhantomModel::to_reference(double phase, double y, double x) const
{
    std::array<double, 2> p{y, x};
    for (int it = 0; it < 200; ++it) {
        const auto d = frame_displacement(phase, p[0], p[1]);
        const std::array<double, 2> next{y - d[0], x - d[1]};
        const double change = std::abs(next[0] - p[0]) + std::abs(next[1] - p[1]);
        p = next;
        if (change < 1e-14)
            break;
    }
    return p;
}

ComplexImage PhantomModel::render(const std::function<std::array<double, 2>(double, double)>& back) const
{
    ComplexImage img(cfg_.rows, cfg_.cols);
    for (int y = 0; y < cfg_.rows; ++y) {
        for (int x = 0; x < cfg_.cols; ++x) {
            const auto p = back(y, x);
            img(y, x) = intensity(p[0], p[1]);
        }
    }
    return img;
}

LabelGrid PhantomModel::render_labels(const std::function<std::array<double, 2>(double, double)>& back) const
{
    LabelGrid out(cfg_.rows, cfg_.cols);
    for (int y = 0; y < cfg_.rows; ++y) {
        for (int x = 0; x < cfg_.cols; ++x) {
            const auto p = back(y, x);
            out(y, x) = label(p[0], p[1]);
        }
    }
    return out;
}

ComplexImage PhantomModel::render_frame(double phase) const
{
    return render([&](double y, double x) { return to_reference(phase, y, x); });
}

LabelGrid PhantomModel::frame_labels(double phase) const
{
    return render_labels([&](double y, double x) { return to_reference(phase, y, x); });
}

double cycle_weight(int t, int n_frames)
{
    return 0.5 * (1.0 - std::cos(2.0 * pi * t / n_frames));
}

PhantomScene phantom_cine(const PhantomConfig& cfg, int n_frames)
{
    if (n_frames < 2)
        throw ValidationError("phantom_cine: need at least two frames");
    const PhantomModel model(cfg);
    PhantomScene scene;
    scene.spacing_mm = cfg.spacing_mm;
    std::vector<double> phases;
    for (int t = 0; t < n_frames; ++t) {
        phases.push_back(cycle_weight(t, n_frames));
        scene.frames.push_back(model.render_frame(phases.back()));
        scene.masks.push_back(model.frame_labels(phases.back()));
    }
    // u(x) = x - to_frame_mov(to_reference_fix(x)).
    for (int fix = 0; fix < n_frames; ++fix) {
        for (int mov = 0; mov < n_frames; ++mov) {
            DisplacementField u(cfg.rows, cfg.cols);
            if (fix != mov && phases[fix] != phases[mov]) {
                for (int y = 0; y < cfg.rows; ++y) {
                    for (int x = 0; x < cfg.cols; ++x) {
                        const auto ref = model.to_reference(phases[fix], y, x);
                        const auto p = model.to_frame(phases[mov], ref[0], ref[1]);
                        u.uy(y, x) = y - p[0];
                        u.ux(y, x) = x - p[1];
                    }
                }
            }
            scene.fields.push_back(std::move(u));
        }
    }
    return scene;
}

MotionPair translation_pair(const PhantomModel& model, double ux, double uy)
{
    MotionPair pair;
    const auto identity = [](double y, double x) { return std::array<double, 2>{y, x}; };
    const auto shifted = [&](double y, double x) { return std::array<double, 2>{y - uy, x - ux}; };
    pair.moving = model.render(identity);
    pair.fixed = model.render(shifted);
    pair.moving_labels = model.render_labels(identity);
    pair.fixed_labels = model.render_labels(shifted);
    const auto& c = model.config();
    pair.truth = DisplacementField::constant(c.rows, c.cols, ux, uy);
    return pair;
}

MotionPair field_pair(const PhantomModel& model, const DisplacementField& u)
{
    const auto& c = model.config();
    if (u.rows() != c.rows || u.cols() != c.cols)
        throw ValidationError("field_pair: field shape differs from the phantom grid");
    MotionPair pair;
    const auto identity = [](double y, double x) { return std::array<double, 2>{y, x}; };
    const auto warped = [&](double y, double x) {
        const auto iy = static_cast<Eigen::Index>(y);
        const auto ix = static_cast<Eigen::Index>(x);
        return std::array<double, 2>{y - u.uy(iy, ix), x - u.ux(iy, ix)};
    };
    pair.moving = model.render(identity);
    pair.fixed = model.render(warped);
    pair.moving_labels = model.render_labels(identity);
    pair.fixed_labels = model.render_labels(warped);
    pair.truth = u;
    return pair;
}

MotionPair scene_pair(const PhantomScene& scene, int fix, int mov)
{
    const int n = scene.frame_count();
    if (fix < 0 || mov < 0 || fix >= n || mov >= n)
        throw ValidationError("scene_pair: frame index out of range");
    return {scene.frames[fix], scene.frames[mov], scene.field(fix, mov), scene.masks[fix], scene.masks[mov]};
}

} // namespace lapanet

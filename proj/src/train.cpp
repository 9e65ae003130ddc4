#include "lapanet/train.hpp"

#include "lapanet/cxa.hpp"
#include "lapanet/kspace.hpp"
#include "lapanet/metrics.hpp"
#include "lapanet/motion.hpp"
#include "lapanet/rng.hpp"
#include "lapanet/sampling.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>

namespace lapanet {

using nn::Tensor;
using nn::Var;

std::string to_string(SceneKind k)
{
    switch (k) {
    case SceneKind::translation:
        return "translation";
    case SceneKind::gaussian:
        return "gaussian";
    case SceneKind::phantom:
        return "phantom";
    }
    return "unknown";
}

SceneKind scene_kind_from_string(const std::string& s)
{
    if (s == "translation")
        return SceneKind::translation;
    if (s == "gaussian")
        return SceneKind::gaussian;
    if (s == "phantom")
        return SceneKind::phantom;
    throw ValidationError("unknown scene kind '" + s + "'");
}

MotionPair make_training_pair(SceneKind kind, int rows, int cols, double max_shift, uint64_t seed)
{
    if (!(max_shift >= 0.0))
        throw ValidationError("make_training_pair: max_shift must be non-negative");
    SplitMix64 rng(mix_seed(seed, 0x5ce));
    const PhantomConfig cfg = PhantomConfig::random(rows, cols, mix_seed(seed, 1));
    const PhantomModel model(cfg);
    switch (kind) {
    case SceneKind::translation:
        return translation_pair(model, rng.uniform(-max_shift, max_shift), rng.uniform(-max_shift, max_shift));
    case SceneKind::gaussian: {
        std::vector<GaussianBump> bumps;
        const int n = rng.integer(1, 3);
        const double s = std::min(rows, cols) / 64.0;
        for (int i = 0; i < n; ++i) {
            GaussianBump b;
            b.cy = cfg.center_y + rng.uniform(-12.0, 12.0) * s;
            b.cx = cfg.center_x + rng.uniform(-16.0, 12.0) * s;
            b.width = rng.uniform(7.0, 12.0) * s;
            const double a = rng.uniform(0.3, 1.0) * max_shift / n;
            const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
            b.ax = a * std::cos(dir);
            b.ay = a * std::sin(dir);
            bumps.push_back(b);
        }
        return field_pair(model, synth_gaussian_field(bumps, rows, cols));
    }
    case SceneKind::phantom: {
        const int n_frames = 6;
        const PhantomScene scene = phantom_cine(cfg, n_frames);
        const int fix = rng.integer(0, n_frames - 1);
        int mov = rng.integer(0, n_frames - 2);
        if (mov >= fix)
            ++mov;
        return scene_pair(scene, fix, mov);
    }
    }
    throw ValidationError("make_training_pair: unknown scene kind");
}

UndersampledPair undersample_pair(const MotionPair& pair, const CoilSensitivityMap& maps, PatternKind kind, double R,
                                  uint64_t seed)
{
    const double peak = pair.fixed.abs().maxCoeff();
    if (!(peak > 0.0))
        throw ValidationError("undersample_pair: fixed image is zero");
    UndersampledPair u;
    u.scale = 1.0 / peak;
    u.fix = coil_images(pair.fixed / peak, maps);
    u.mov = coil_images(pair.moving / peak, maps);
    const int n = static_cast<int>(pair.fixed.rows());
    u.pattern_fix = pattern_for_acceleration(kind, n, R, seed, 0);
    u.pattern_mov = pattern_for_acceleration(kind, n, R, seed, 1);
    u.k_fix = undersample_kspace(fft2_centered(u.fix), u.pattern_fix);
    u.k_mov = undersample_kspace(fft2_centered(u.mov), u.pattern_mov);
    return u;
}

NetworkSample make_network_sample(const MotionPair& pair, const CoilSensitivityMap& maps, PatternKind kind, double R,
                                  uint64_t seed)
{
    const UndersampledPair u = undersample_pair(pair, maps, kind, R, seed);
    NetworkSample s;
    s.input = nn::prepare_input(u.k_fix, u.k_mov);
    s.fix = nn::coil_tensor(u.fix);
    s.mov = nn::coil_tensor(u.mov);
    s.box = nn::mask_tensor(box_mask(pair.fixed_labels, 10));
    return s;
}

// ---------------------------------------------------------------- config

int TrainConfig::total_steps() const
{
    int n = 0;
    for (const auto& s : curriculum)
        n += s.steps;
    return n;
}

double TrainConfig::learning_rate(int step) const
{
    const int total = total_steps();
    if (total <= 1)
        return lr;
    const double t = static_cast<double>(step) / (total - 1);
    return lr_min + 0.5 * (lr - lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

const CurriculumStage& TrainConfig::stage(int step) const
{
    int end = 0;
    for (const auto& s : curriculum) {
        end += s.steps;
        if (step < end)
            return s;
    }
    return curriculum.back();
}

void TrainConfig::validate() const
{
    model.validate();
    weights.validate();
    if (batch < 1)
        throw ValidationError("batch size must be at least 1");
    if (!(lr >= 0.0 && lr_min >= 0.0 && weight_decay >= 0.0))
        throw ValidationError("learning rates and weight decay must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0))
        throw ValidationError("invalid Adam moments");
    if (curriculum.empty())
        throw ValidationError("curriculum needs at least one stage");
    for (const auto& s : curriculum)
        if (s.steps < 0 || !(s.max_shift >= 0.0))
            throw ValidationError("curriculum stages need non-negative steps and shifts");
    if (accelerations.empty() || trajectories.empty())
        throw ValidationError("acceleration and trajectory grids must be nonempty");
    for (double r : accelerations)
        if (!(r >= 1.0))
            throw ValidationError("accelerations must be >= 1");
}

// ---------------------------------------------------------------- optimizer

AdamW::AdamW(double beta1, double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay)
{
}

void AdamW::step(nn::ParameterStore& params, double lr)
{
    const auto& ps = params.parameters();
    if (m_.empty()) {
        for (const auto& [name, p] : ps) {
            m_.push_back(Eigen::VectorXd::Zero(p->value.size()));
            v_.push_back(Eigen::VectorXd::Zero(p->value.size()));
        }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < ps.size(); ++i) {
        auto& p = ps[i].second;
        if (!p->has_grad())
            continue;
        const Eigen::VectorXd& g = p->grad.data;
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
        p->value.data *= 1.0 - lr * wd_;
        p->value.data.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
}

// ---------------------------------------------------------------- training

void write_train_header(std::ostream& os)
{
    os << "step,total,tphoto,photo,kdc,smooth,lr,R,trajectory,scene\n";
}

void write_train_row(std::ostream& os, const TrainRow& r)
{
    os << r.step << ',' << std::setprecision(10) << r.total << ',' << r.tphoto << ',' << r.photo << ',' << r.kdc << ','
       << r.smooth << ',' << r.lr << ',' << r.R << ',' << to_string(r.trajectory) << ',' << to_string(r.scene) << '\n';
}

TrainBatch make_train_batch(const TrainConfig& cfg, const CoilSensitivityMap& maps, int step)
{
    SplitMix64 rng(mix_seed(cfg.seed, 0xba7c, static_cast<uint64_t>(step)));
    TrainBatch b;
    const CurriculumStage& st = cfg.stage(step);
    b.scene = st.scene;
    b.trajectory = cfg.trajectories[size_t(rng.integer(0, static_cast<int>(cfg.trajectories.size()) - 1))];
    b.R = cfg.accelerations[size_t(rng.integer(0, static_cast<int>(cfg.accelerations.size()) - 1))];
    std::vector<Tensor> in, fix, mov, box;
    for (int i = 0; i < cfg.batch; ++i) {
        const uint64_t s = mix_seed(cfg.seed, static_cast<uint64_t>(step) + 1, static_cast<uint64_t>(i));
        const MotionPair pair = make_training_pair(st.scene, cfg.model.height, cfg.model.width, st.max_shift, s);
        NetworkSample ns = make_network_sample(pair, maps, b.trajectory, b.R, s);
        b.truth.push_back(pair.truth);
        in.push_back(std::move(ns.input));
        fix.push_back(std::move(ns.fix));
        mov.push_back(std::move(ns.mov));
        box.push_back(std::move(ns.box));
    }
    b.input = nn::stack_batch(in);
    b.fix = nn::stack_batch(fix);
    b.mov = nn::stack_batch(mov);
    b.box = nn::stack_batch(box);
    return b;
}

std::vector<TrainRow> train(nn::LapaNet& net, const TrainConfig& cfg, std::ostream* log,
                            const std::function<void(const TrainRow&)>& progress)
{
    cfg.validate();
    const auto& mc = net.config();
    if (mc.height != cfg.model.height || mc.width != cfg.model.width || mc.n_coils != cfg.model.n_coils)
        throw ValidationError("train: network and training config disagree on input shape");
    const CoilSensitivityMap maps = synthetic_coil_maps(mc.n_coils, mc.height, mc.width);
    AdamW opt(cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
    if (log)
        write_train_header(*log);
    std::vector<TrainRow> rows;
    const int total = cfg.total_steps();
    for (int step = 0; step < total; ++step) {
        const TrainBatch b = make_train_batch(cfg, maps, step);
        net.params().zero_grad();
        const nn::ModelOutput out = net.forward(nn::constant(b.input), true);
        const nn::LossTerms terms = nn::total_loss(out, b.fix, b.mov, b.box, cfg.weights);
        TrainRow r;
        r.step = step;
        r.total = terms.total->value.item();
        if (!std::isfinite(r.total))
            throw RuntimeFailure("training diverged at step " + std::to_string(step) + ": non-finite loss");
        nn::backward(terms.total);
        nn::release_graph(terms.total);
        try {
            net.params().check_finite();
        } catch (const RuntimeFailure& e) {
            throw RuntimeFailure("training diverged at step " + std::to_string(step) + ": " + e.what());
        }
        r.lr = cfg.learning_rate(step);
        opt.step(net.params(), r.lr);
        r.tphoto = terms.tphoto;
        for (size_t i = 0; i < 4; ++i) {
            r.photo += terms.photo[i];
            r.kdc += terms.kdc[i];
            r.smooth += terms.smooth[i];
        }
        r.R = b.R;
        r.trajectory = b.trajectory;
        r.scene = b.scene;
        if (log) {
            write_train_row(*log, r);
            log->flush();
        }
        if (progress)
            progress(r);
        rows.push_back(r);
    }
    net.params().zero_grad();
    return rows;
}

double evaluate_loss(nn::LapaNet& net, const TrainBatch& batch, const nn::LossWeights& weights)
{
    nn::NoGradGuard guard;
    const nn::ModelOutput out = net.forward(nn::constant(batch.input), false);
    return nn::total_loss(out, batch.fix, batch.mov, batch.box, weights).total->value.item();
}

NetworkEstimate network_register(nn::LapaNet& net, const Tensor& input)
{
    if (input.n() != 1)
        throw ValidationError("network_register: expects one sample");
    nn::NoGradGuard guard;
    const nn::ModelOutput out = net.forward(nn::constant(input), false);
    const Tensor& u = out.u[3]->value;
    NetworkEstimate e;
    e.u = DisplacementField(u.h(), u.w());
    for (int y = 0; y < u.h(); ++y)
        for (int x = 0; x < u.w(); ++x) {
            e.u.ux(y, x) = u.at(0, 0, y, x);
            e.u.uy(y, x) = u.at(0, 1, y, x);
        }
    e.ut_x = out.ut->value.data(0);
    e.ut_y = out.ut->value.data(1);
    return e;
}

// ---------------------------------------------------------------- persistence

namespace {

std::string join(const std::array<int, 4>& a)
{
    std::ostringstream os;
    for (size_t i = 0; i < a.size(); ++i)
        os << (i ? "," : "") << a[i];
    return os.str();
}

std::array<int, 4> split4(const std::string& s, const std::string& key)
{
    std::array<int, 4> a{};
    std::istringstream is(s);
    std::string item;
    size_t i = 0;
    while (std::getline(is, item, ',')) {
        if (i >= 4)
            throw ValidationError("model config: " + key + " needs 4 entries");
        a[i++] = std::stoi(item);
    }
    if (i != 4)
        throw ValidationError("model config: " + key + " needs 4 entries");
    return a;
}

std::string file_name(const std::string& name, const std::string& role)
{
    return name + (role == "param" ? "" : "." + role) + ".cxa";
}

void write_tensor(const std::filesystem::path& path, const Tensor& t)
{
    const std::vector<double> v(t.data.data(), t.data.data() + t.size());
    write_cxa(path, to_cxa(v, {uint32_t(t.n()), uint32_t(t.c()), uint32_t(t.h()), uint32_t(t.w())}));
}

void read_tensor(const std::filesystem::path& path, Tensor& into, const std::string& name)
{
    const CxaArray a = read_cxa(path);
    const std::vector<uint32_t> want{uint32_t(into.n()), uint32_t(into.c()), uint32_t(into.h()), uint32_t(into.w())};
    if (a.dims != want)
        throw ValidationError("checkpoint tensor " + name + " has the wrong shape");
    const std::vector<double> v = cxa_to_doubles(a);
    into.data = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

} // namespace

void write_model_config(std::ostream& os, const nn::ModelConfig& c)
{
    os << "height=" << c.height << '\n'
       << "width=" << c.width << '\n'
       << "n_coils=" << c.n_coils << '\n'
       << "width_multiplier=" << std::setprecision(17) << c.width_multiplier << '\n'
       << "grm_channels=" << join(c.grm_channels) << '\n'
       << "enc_channels=" << join(c.enc_channels) << '\n'
       << "bottleneck_channels=" << c.bottleneck_channels << '\n'
       << "combine_add=" << (c.combine_add ? 1 : 0) << '\n'
       << "use_dfm=" << (c.use_dfm ? 1 : 0) << '\n';
}

nn::ModelConfig read_model_config(std::istream& is)
{
    nn::ModelConfig c;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#')
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ValidationError("model config: malformed line '" + line + "'");
        const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        try {
            if (key == "height")
                c.height = std::stoi(value);
            else if (key == "width")
                c.width = std::stoi(value);
            else if (key == "n_coils")
                c.n_coils = std::stoi(value);
            else if (key == "width_multiplier")
                c.width_multiplier = std::stod(value);
            else if (key == "grm_channels")
                c.grm_channels = split4(value, key);
            else if (key == "enc_channels")
                c.enc_channels = split4(value, key);
            else if (key == "bottleneck_channels")
                c.bottleneck_channels = std::stoi(value);
            else if (key == "combine_add")
                c.combine_add = std::stoi(value) != 0;
            else if (key == "use_dfm")
                c.use_dfm = std::stoi(value) != 0;
            else
                throw ValidationError("model config: unknown key '" + key + "'");
        } catch (const std::logic_error& e) {
            if (dynamic_cast<const ValidationError*>(&e))
                throw;
            throw ValidationError("model config: bad value for " + key);
        }
    }
    c.validate();
    return c;
}

void save_checkpoint(const std::filesystem::path& dir, const nn::LapaNet& net)
{
    std::filesystem::create_directories(dir);
    {
        std::ofstream cfg(dir / "model.cfg");
        if (!cfg)
            throw RuntimeFailure("cannot write " + (dir / "model.cfg").string());
        write_model_config(cfg, net.config());
    }
    std::ofstream manifest(dir / "manifest.csv");
    if (!manifest)
        throw RuntimeFailure("cannot write " + (dir / "manifest.csv").string());
    manifest << "name,role,dims,file\n";
    auto emit = [&](const std::string& name, const std::string& role, const Tensor& t) {
        const std::string f = file_name(name, role);
        write_tensor(dir / f, t);
        manifest << name << ',' << role << ",\"" << join(t.shape) << "\"," << f << '\n';
    };
    for (const auto& [name, p] : net.params().parameters())
        emit(name, "param", p->value);
    for (const auto& [name, s] : net.params().batch_norms()) {
        emit(name, "running_mean", s.running_mean);
        emit(name, "running_var", s.running_var);
    }
}

nn::LapaNet load_checkpoint(const std::filesystem::path& dir)
{
    std::ifstream cfg(dir / "model.cfg");
    if (!cfg)
        throw ValidationError("missing checkpoint config " + (dir / "model.cfg").string());
    nn::LapaNet net(read_model_config(cfg), 0);
    std::ifstream manifest(dir / "manifest.csv");
    if (!manifest)
        throw ValidationError("missing checkpoint manifest " + (dir / "manifest.csv").string());
    std::string line;
    std::getline(manifest, line);
    size_t params_seen = 0, stats_seen = 0;
    while (std::getline(manifest, line)) {
        if (line.empty())
            continue;
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        const auto f = line.rfind(',');
        if (c1 == std::string::npos || c2 == std::string::npos || f <= c2)
            throw ValidationError("malformed manifest line '" + line + "'");
        const std::string name = line.substr(0, c1), role = line.substr(c1 + 1, c2 - c1 - 1), file = line.substr(f + 1);
        if (role == "param") {
            read_tensor(dir / file, net.params().get(name)->value, name);
            ++params_seen;
        } else if (role == "running_mean") {
            read_tensor(dir / file, net.params().batch_norm(name).running_mean, name);
            ++stats_seen;
        } else if (role == "running_var") {
            read_tensor(dir / file, net.params().batch_norm(name).running_var, name);
            ++stats_seen;
        } else {
            throw ValidationError("unknown manifest role '" + role + "'");
        }
    }
    if (params_seen != net.params().parameters().size() || stats_seen != 2 * net.params().batch_norms().size())
        throw ValidationError("checkpoint manifest does not cover every tensor of the model");
    return net;
}

} // namespace lapanet

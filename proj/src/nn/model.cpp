#include "lapanet/nn/model.hpp"

#include "lapanet/kspace.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace lapanet::nn {

ModelConfig ModelConfig::full_scale()
{
    ModelConfig c;
    c.height = 160;
    c.width = 160;
    c.n_coils = 16;
    c.width_multiplier = 1.0;
    return c;
}

ModelConfig ModelConfig::desk()
{
    return ModelConfig{};
}

int ModelConfig::scaled(int c) const
{
    return std::max(1, static_cast<int>(std::lround(c * width_multiplier)));
}

void ModelConfig::validate() const
{
    const int step = 1 << (levels + 1);
    if (height <= 0 || width <= 0 || height % step || width % step)
        throw ValidationError("model input " + std::to_string(height) + "x" + std::to_string(width)
                              + " must be positive and divisible by " + std::to_string(step));
    if (n_coils < 1)
        throw ValidationError("model needs at least one coil");
    if (!(width_multiplier > 0.0 && width_multiplier <= 1.0))
        throw ValidationError("width multiplier must lie in (0, 1]");
    for (int i = 0; i < levels; ++i)
        if (grm_channels[size_t(i)] < 1 || enc_channels[size_t(i)] < 1)
            throw ValidationError("channel schedule entries must be positive");
    if (bottleneck_channels < 1)
        throw ValidationError("bottleneck channel count must be positive");
}

int norm_groups(int channels)
{
    return std::gcd(channels, 8);
}

// ---------------------------------------------------------------- store

Var ParameterStore::add(const std::string& name, Tensor value)
{
    if (index_.count(name))
        throw ValidationError("duplicate parameter name " + name);
    index_[name] = params_.size();
    params_.emplace_back(name, parameter(std::move(value), name));
    return params_.back().second;
}

BatchNormState& ParameterStore::add_batch_norm(const std::string& name, int channels)
{
    BatchNormState s{Tensor(1, channels, 1, 1), Tensor(1, channels, 1, 1)};
    s.running_var.data.setOnes();
    return bn_[name] = std::move(s);
}

const Var& ParameterStore::get(const std::string& name) const
{
    auto it = index_.find(name);
    if (it == index_.end())
        throw ValidationError("unknown parameter " + name);
    return params_[it->second].second;
}

BatchNormState& ParameterStore::batch_norm(const std::string& name)
{
    auto it = bn_.find(name);
    if (it == bn_.end())
        throw ValidationError("unknown batch norm " + name);
    return it->second;
}

const BatchNormState& ParameterStore::batch_norm(const std::string& name) const
{
    auto it = bn_.find(name);
    if (it == bn_.end())
        throw ValidationError("unknown batch norm " + name);
    return it->second;
}

int64_t ParameterStore::total_count() const
{
    int64_t n = 0;
    for (const auto& [name, p] : params_)
        n += p->value.size();
    return n;
}

void ParameterStore::zero_grad()
{
    for (auto& [name, p] : params_)
        p->grad = Tensor();
}

void ParameterStore::check_finite() const
{
    for (const auto& [name, p] : params_) {
        if (!p->value.data.allFinite())
            throw RuntimeFailure("non-finite value in parameter " + name);
        if (p->has_grad() && !p->grad.data.allFinite())
            throw RuntimeFailure("non-finite gradient in parameter " + name);
    }
}

// ---------------------------------------------------------------- input

Tensor prepare_input(const MultiCoil& k_fix, const MultiCoil& k_mov)
{
    k_fix.validate();
    k_mov.validate();
    if (k_fix.count() != k_mov.count() || k_fix.rows() != k_mov.rows() || k_fix.cols() != k_mov.cols())
        throw ValidationError("prepare_input: fixed and moving k-spaces differ in coils or shape");
    const int nc = k_fix.count();
    const int h = static_cast<int>(k_fix.rows()), w = static_cast<int>(k_fix.cols());
    Tensor t(1, 4 * nc, h, w);
    const MultiCoil f = inverse_zero_frequency_shift(k_fix);
    const MultiCoil m = inverse_zero_frequency_shift(k_mov);
    for (int c = 0; c < nc; ++c) {
        const cd* pf = f.coils[size_t(c)].data();
        const cd* pm = m.coils[size_t(c)].data();
        double* fr = t.ptr(0, 4 * c);
        double* fi = t.ptr(0, 4 * c + 1);
        double* mr = t.ptr(0, 4 * c + 2);
        double* mi = t.ptr(0, 4 * c + 3);
        for (Eigen::Index p = 0; p < t.plane(); ++p) {
            fr[p] = pf[p].real();
            fi[p] = pf[p].imag();
            mr[p] = pm[p].real();
            mi[p] = pm[p].imag();
        }
    }
    return t;
}

Tensor stack_batch(const std::vector<Tensor>& samples)
{
    if (samples.empty())
        throw ValidationError("stack_batch: no samples");
    const Tensor& f = samples.front();
    int n = 0;
    for (const auto& s : samples) {
        if (s.c() != f.c() || s.h() != f.h() || s.w() != f.w())
            throw ValidationError("stack_batch: sample shapes differ");
        n += s.n();
    }
    Tensor out(n, f.c(), f.h(), f.w());
    Eigen::Index offset = 0;
    for (const auto& s : samples) {
        out.data.segment(offset, s.size()) = s.data;
        offset += s.size();
    }
    return out;
}

// ---------------------------------------------------------------- construction

LapaNet::LapaNet(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg), init_rng_(seed)
{
    cfg_.validate();
    build(seed);
}

void LapaNet::add_conv(const std::string& name, int cin, int cout, int k)
{
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin) * k * k);
    std::uniform_real_distribution<double> d(-bound, bound);
    Tensor w(cout, cin, k, k);
    for (Eigen::Index i = 0; i < w.size(); ++i)
        w.data(i) = d(init_rng_);
    Tensor b(1, cout, 1, 1);
    for (Eigen::Index i = 0; i < b.size(); ++i)
        b.data(i) = d(init_rng_);
    store_.add(name + ".w", std::move(w));
    store_.add(name + ".b", std::move(b));
}

void LapaNet::add_depthwise(const std::string& name, int channels, int k)
{
    const double bound = 1.0 / std::sqrt(static_cast<double>(k) * k);
    std::uniform_real_distribution<double> d(-bound, bound);
    Tensor w(channels, 1, k, k);
    for (Eigen::Index i = 0; i < w.size(); ++i)
        w.data(i) = d(init_rng_);
    Tensor b(1, channels, 1, 1);
    for (Eigen::Index i = 0; i < b.size(); ++i)
        b.data(i) = d(init_rng_);
    store_.add(name + ".w", std::move(w));
    store_.add(name + ".b", std::move(b));
}

void LapaNet::add_norm(const std::string& name, int channels)
{
    Tensor g(1, channels, 1, 1);
    g.data.setOnes();
    store_.add(name + ".gamma", std::move(g));
    store_.add(name + ".beta", Tensor(1, channels, 1, 1));
}

void LapaNet::add_bn(const std::string& name, int channels)
{
    add_norm(name, channels);
    store_.add_batch_norm(name, channels);
}

void LapaNet::add_attention(const std::string& prefix, int channels)
{
    add_depthwise(prefix + ".q", channels, 3);
    add_depthwise(prefix + ".k", channels, 3);
    add_depthwise(prefix + ".v", channels, 3);
}

void LapaNet::add_cim(const std::string& prefix, int cin, int cout)
{
    add_conv(prefix + ".conv_a", cin, cout, 3);
    add_conv(prefix + ".conv_b", cout, cout, 3);
    add_conv(prefix + ".conv_c", cout, cout, 3);
    add_attention(prefix + ".attn", cout);
    add_conv(prefix + ".res", cout, cout, 3);
}

void LapaNet::add_dfm(const std::string& prefix, int channels)
{
    if (!cfg_.use_dfm)
        return;
    add_norm(prefix + ".gn", channels);
    for (int k : {1, 2, 4}) {
        add_conv(prefix + ".d" + std::to_string(k), channels, channels, 3);
        add_bn(prefix + ".bn" + std::to_string(k), channels);
    }
    add_conv(prefix + ".fuse", 3 * channels, channels, 1);
    add_bn(prefix + ".bn_fuse", channels);
}

void LapaNet::build(uint64_t)
{
    const int cin = cfg_.input_channels();
    for (int i = 1; i <= ModelConfig::levels; ++i) {
        const std::string p = "grm" + std::to_string(i);
        const int g = cfg_.grm(i);
        add_conv(p + ".cross", cin, g, 3);
        add_bn(p + ".bn1", cin);
        add_conv(p + ".conv1", cin, g, 3);
        add_attention(p + ".attn", g);
        add_bn(p + ".bn2", g);
        add_conv(p + ".conv2", g, g, 3);
        add_conv(p + ".se.proj", g, 1, 3);
        add_conv(p + ".se.fc1", g, std::max(1, g / 4), 1);
        add_conv(p + ".se.fc2", std::max(1, g / 4), g, 1);
    }
    int cx = cin;
    for (int i = 1; i <= ModelConfig::levels; ++i) {
        const std::string p = "enc" + std::to_string(i);
        add_norm(p + ".gn", cx);
        if (cfg_.combine_add)
            add_conv(p + ".proj", cfg_.grm(i), cx, 1);
        else
            add_conv(p + ".reduce", cx + cfg_.grm(i), cx, 1);
        add_cim(p + ".cim", cx, cfg_.enc(i));
        add_dfm(p + ".dfm", cfg_.enc(i));
        cx = cfg_.enc(i);
    }
    add_norm("bott.gn", cx);
    add_cim("bott.cim", cx, cfg_.bottleneck());
    add_dfm("bott.dfm", cfg_.bottleneck());
    cx = cfg_.bottleneck();
    for (int j = 1; j <= ModelConfig::levels; ++j) {
        const std::string p = "dec" + std::to_string(j);
        const int skip = cfg_.enc(ModelConfig::levels + 1 - j);
        add_norm(p + ".gn", cx);
        add_conv(p + ".up_res", cx, cx, 3);
        add_cim(p + ".cim", cx + skip, skip);
        add_dfm(p + ".dfm", skip);
        const std::string m = "mam" + std::to_string(j);
        add_conv(m + ".enc1", skip, skip, 3);
        add_conv(m + ".enc2", skip, skip, 3);
        add_conv(m + ".enc3", skip, 2, 3);
        add_conv(m + ".mask_x1", 4, 1, 3);
        add_conv(m + ".mask_x2", 1, 1, 3);
        add_conv(m + ".mask_y1", 4, 1, 3);
        add_conv(m + ".mask_y2", 1, 1, 3);
        cx = skip;
    }
    add_conv("trans", cfg_.bottleneck(), 2, 1);
}

// ---------------------------------------------------------------- blocks

Var LapaNet::conv(const std::string& name, const Var& x, int dilation)
{
    return conv2d(x, store_.get(name + ".w"), store_.get(name + ".b"), dilation);
}

Var LapaNet::depthwise(const std::string& name, const Var& x)
{
    return depthwise_conv2d(x, store_.get(name + ".w"), store_.get(name + ".b"));
}

Var LapaNet::gn(const std::string& name, const Var& x)
{
    return group_norm(x, store_.get(name + ".gamma"), store_.get(name + ".beta"), norm_groups(x->value.c()));
}

Var LapaNet::bn(const std::string& name, const Var& x, bool training)
{
    return batch_norm(x, store_.get(name + ".gamma"), store_.get(name + ".beta"), store_.batch_norm(name), training);
}

Var LapaNet::attention(const std::string& prefix, const Var& x)
{
    return channel_attention(depthwise(prefix + ".q", x), depthwise(prefix + ".k", x), depthwise(prefix + ".v", x));
}

SeOutput LapaNet::attention_se(const std::string& prefix, const Var& f)
{
    const Var p = spatial_softmax(conv(prefix + ".proj", f));
    const Var descriptor = attention_pool(f, p);
    const Var weights = sigmoid(conv(prefix + ".fc2", silu(conv(prefix + ".fc1", descriptor))));
    return {mul_channel(f, weights), weights};
}

Var LapaNet::grm(int level, const Var& input, bool training)
{
    require_shape(input->value, {input->value.n(), cfg_.input_channels(), cfg_.height, cfg_.width}, "GRM input");
    const std::string p = "grm" + std::to_string(level);
    const Var cross = conv(p + ".cross", input);
    Var main = conv(p + ".conv1", silu(bn(p + ".bn1", input, training)), 2);
    main = attention(p + ".attn", main);
    main = conv(p + ".conv2", silu(bn(p + ".bn2", main, training)), 2);
    const Var se = attention_se(p + ".se", add(cross, main)).out;
    return max_pool(se, 1 << (level - 1));
}

Var LapaNet::cim(const std::string& prefix, const Var& x, bool pool)
{
    Var h = silu(conv(prefix + ".conv_a", x));
    h = silu(conv(prefix + ".conv_b", h));
    h = silu(conv(prefix + ".conv_c", h, 2));
    if (pool)
        h = max_pool(h, 2);
    return add(h, silu(conv(prefix + ".res", attention(prefix + ".attn", h))));
}

Var LapaNet::dfm(const std::string& prefix, const Var& x, bool training)
{
    if (!cfg_.use_dfm)
        return x;
    const Var g = gn(prefix + ".gn", x);
    std::vector<Var> branches;
    for (int k : {1, 2, 4}) {
        const std::string s = std::to_string(k);
        branches.push_back(bn(prefix + ".bn" + s, silu(conv(prefix + ".d" + s, g, k)), training));
    }
    const Var fused = bn(prefix + ".bn_fuse", silu(conv(prefix + ".fuse", concat(branches))), training);
    return add(x, fused);
}

Var LapaNet::encoder(int level, const Var& x, const Var& grm_out, bool training)
{
    const std::string p = "enc" + std::to_string(level);
    const int n = x->value.n();
    const int size = cfg_.height >> (level - 1);
    const int width = cfg_.width >> (level - 1);
    const int cx = level == 1 ? cfg_.input_channels() : cfg_.enc(level - 1);
    require_shape(x->value, {n, cx, size, width}, "encoder input");
    require_shape(grm_out->value, {n, cfg_.grm(level), size, width}, "encoder GRM input");
    const Var g = gn(p + ".gn", x);
    const Var combined
        = cfg_.combine_add ? add(g, conv(p + ".proj", grm_out)) : conv(p + ".reduce", concat({g, grm_out}));
    return dfm(p + ".dfm", cim(p + ".cim", combined, true), training);
}

Var LapaNet::bottleneck(const Var& x, bool training)
{
    require_shape(x->value, {x->value.n(), cfg_.enc(4), cfg_.height >> 4, cfg_.width >> 4}, "bottleneck input");
    return dfm("bott.dfm", cim("bott.cim", gn("bott.gn", x), true), training);
}

Var LapaNet::decoder(int level, const Var& x, const Var& skip, bool training)
{
    const std::string p = "dec" + std::to_string(level);
    const int n = x->value.n();
    const int cx = level == 1 ? cfg_.bottleneck() : cfg_.enc(ModelConfig::levels + 2 - level);
    const int cs = cfg_.enc(ModelConfig::levels + 1 - level);
    const int h = cfg_.height >> (6 - level), w = cfg_.width >> (6 - level);
    require_shape(x->value, {n, cx, h, w}, "decoder input");
    require_shape(skip->value, {n, cs, 2 * h, 2 * w}, "decoder skip");
    const Var up = upsample_nearest2(gn(p + ".gn", x));
    const Var r = add(up, silu(conv(p + ".up_res", up)));
    return dfm(p + ".dfm", cim(p + ".cim", concat({r, skip}), false), training);
}

MamOutput LapaNet::motion_attention(int level, const Var& dec, const Var& prev)
{
    const std::string p = "mam" + std::to_string(level);
    const Var up = upsample_bilinear2(dec);
    const int h = up->value.h(), w = up->value.w();
    Var e = silu(conv(p + ".enc1", up));
    e = silu(conv(p + ".enc2", e));
    const Var raw = conv(p + ".enc3", e);
    Var prior;
    if (prev) {
        require_shape(prev->value, {dec->value.n(), 2, h / 2, w / 2}, "previous motion estimate");
        prior = affine(upsample_bilinear2(prev), 2.0);
    } else {
        prior = constant(Tensor(dec->value.n(), 2, h, w));
    }
    const Var stacked = concat({raw, prior});
    const Var mx = sigmoid(conv(p + ".mask_x2", conv(p + ".mask_x1", stacked)));
    const Var my = sigmoid(conv(p + ".mask_y2", conv(p + ".mask_y1", stacked)));
    const Var m = concat({mx, my});
    Var u = mul(m, raw);
    if (prev)
        u = add(u, sub(prior, mul(m, prior)));
    return {u, raw, mx, my};
}

Var LapaNet::translation_head(const Var& b)
{
    require_shape(b->value, {b->value.n(), cfg_.bottleneck(), cfg_.height >> 5, cfg_.width >> 5}, "translation head input");
    return global_max(conv("trans", b));
}

ModelOutput LapaNet::forward(const Var& input, bool training)
{
    ModelOutput out;
    auto log = [&out](const std::string& name, const Var& v) {
        out.trace.emplace_back(name, v->value.shape);
        return v;
    };
    std::array<Var, 4> g, e, d;
    for (int i = 1; i <= 4; ++i)
        g[size_t(i - 1)] = log("grm" + std::to_string(i), grm(i, input, training));
    Var x = input;
    for (int i = 1; i <= 4; ++i)
        x = e[size_t(i - 1)] = log("enc" + std::to_string(i), encoder(i, x, g[size_t(i - 1)], training));
    const Var b = log("bottleneck", bottleneck(x, training));
    x = b;
    for (int j = 1; j <= 4; ++j)
        x = d[size_t(j - 1)] = log("dec" + std::to_string(j), decoder(j, x, e[size_t(4 - j)], training));
    Var prev;
    for (int j = 1; j <= 4; ++j) {
        prev = out.u[size_t(j - 1)] = log("u" + std::to_string(j), motion_attention(j, d[size_t(j - 1)], prev).u);
    }
    out.ut = log("ut", translation_head(b));
    return out;
}

// ---------------------------------------------------------------- read-outs

Var upscale_to(const Var& u, int height)
{
    Var v = u;
    while (v->value.h() < height)
        v = affine(upsample_bilinear2(v), 2.0);
    if (v->value.h() != height)
        throw ValidationError("upscale_to: height is not a power-of-two multiple of the field height");
    return v;
}

Var motion_energy(const ModelOutput& out)
{
    const Var& u = out.u[3];
    return affine(sum(mul(u, u)), 1.0 / static_cast<double>(u->value.plane() * u->value.n()));
}

QuadratureRule gauss_legendre(int n)
{
    if (n < 1)
        throw ValidationError("gauss_legendre: n must be >= 1");
    QuadratureRule q;
    q.nodes.resize(size_t(n));
    q.weights.resize(size_t(n));
    for (int i = 0; i < n; ++i) {
        // Newton on P_n from the Tricomi estimate of the i-th root.
        double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 1.0;
        for (int it = 0; it < 100; ++it) {
            double p1 = 1.0, p0 = 0.0;
            for (int j = 1; j <= n; ++j) {
                const double pm = p0;
                p0 = p1;
                p1 = ((2.0 * j - 1.0) * z * p0 - (j - 1.0) * pm) / j;
            }
            dp = n * (z * p1 - p0) / (z * z - 1.0);
            const double dz = p1 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-15)
                break;
        }
        // Map [-1, 1] to [0, 1] in ascending order.
        q.nodes[size_t(i)] = 0.5 * (1.0 - z);
        q.weights[size_t(i)] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    return q;
}

IgResult integrated_gradients(const std::function<Var(const Var&)>& f, const Tensor& input, int steps)
{
    if (steps < 1)
        throw ValidationError("integrated_gradients: steps must be >= 1");
    const QuadratureRule q = gauss_legendre(steps);
    IgResult r;
    r.attribution = Tensor::zeros_like(input);
    for (int s = 0; s < steps; ++s) {
        Tensor scaled = input;
        scaled.data *= q.nodes[size_t(s)];
        const Var x = parameter(std::move(scaled));
        const Var y = f(x);
        backward(y);
        release_graph(y);
        if (x->has_grad())
            r.attribution.data += q.weights[size_t(s)] * x->grad.data;
    }
    r.attribution.data = (r.attribution.data.array() * input.data.array()).matrix();
    r.sum = r.attribution.data.sum();
    {
        NoGradGuard guard;
        r.f_input = f(constant(input))->value.item();
        r.f_baseline = f(constant(Tensor::zeros_like(input)))->value.item();
    }
    const double delta = r.f_input - r.f_baseline;
    r.completeness_gap = delta != 0.0 ? std::abs(r.sum - delta) / std::abs(delta) : std::abs(r.sum);
    return r;
}

IgResult integrated_gradients(LapaNet& net, const Tensor& input, int steps)
{
    if (input.n() != 1)
        throw ValidationError("integrated_gradients: expects a single sample");
    // Only the input needs gradients here.
    std::vector<bool> saved;
    for (auto& [name, p] : net.params().parameters()) {
        saved.push_back(p->requires_grad);
        p->requires_grad = false;
    }
    struct Restore {
        LapaNet& net;
        std::vector<bool>& saved;
        ~Restore()
        {
            for (size_t i = 0; i < saved.size(); ++i)
                net.params().parameters()[i].second->requires_grad = saved[i];
        }
    } restore{net, saved};
    return integrated_gradients([&net](const Var& x) { return motion_energy(net.forward(x, false)); }, input, steps);
}

} // namespace lapanet::nn

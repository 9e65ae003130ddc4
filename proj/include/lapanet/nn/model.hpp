#pragma once

#include "lapanet/nn/ops.hpp"
#include "lapanet/types.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace lapanet::nn {

struct ModelConfig {
    int height = 64;
    int width = 64;
    int n_coils = 4;
    double width_multiplier = 0.25;
    std::array<int, 4> grm_channels{4, 16, 32, 128};
    std::array<int, 4> enc_channels{16, 32, 64, 192};
    int bottleneck_channels = 384;
    /// Encoder combination with the GRM output: concat + 1x1 reduce, or 1x1 projection + add.
    bool combine_add = false;
    /// Ablation switch: drop every Dilated Fusion Module.
    bool use_dfm = true;

    static constexpr int levels = 4;

    /// 160x160, 16 coils, multiplier 1.
    static ModelConfig full_scale();
    /// 64x64, 4 coils, multiplier 0.25.
    static ModelConfig desk();

    /// max(1, round(c * width_multiplier))
    int scaled(int c) const;
    int input_channels() const { return 4 * n_coils; }
    int grm(int level) const { return scaled(grm_channels[size_t(level - 1)]); }
    int enc(int level) const { return scaled(enc_channels[size_t(level - 1)]); }
    int bottleneck() const { return scaled(bottleneck_channels); }

    /// Throws ValidationError unless H and W are divisible by 2^(levels+1)
    /// and every count is positive.
    void validate() const;
};

/// Named parameters in registration order plus batch-norm running statistics.
class ParameterStore {
public:
    Var add(const std::string& name, Tensor value);
    BatchNormState& add_batch_norm(const std::string& name, int channels);

    const Var& get(const std::string& name) const;
    BatchNormState& batch_norm(const std::string& name);
    const BatchNormState& batch_norm(const std::string& name) const;

    const std::vector<std::pair<std::string, Var>>& parameters() const { return params_; }
    std::map<std::string, BatchNormState>& batch_norms() { return bn_; }
    const std::map<std::string, BatchNormState>& batch_norms() const { return bn_; }

    int64_t total_count() const;
    void zero_grad();
    /// Throws RuntimeFailure naming the first parameter with a non-finite value or gradient.
    void check_finite() const;

private:
    std::vector<std::pair<std::string, Var>> params_;
    std::map<std::string, size_t> index_;
    std::map<std::string, BatchNormState> bn_;
};

using ShapeTrace = std::vector<std::pair<std::string, std::array<int, 4>>>;

struct ModelOutput {
    std::array<Var, 4> u;   ///< u[i-1] = u_i, 2 channels (u_x, u_y) at H / 2^(4-i)
    Var ut;                 ///< (N, 2, 1, 1) global translation in full-resolution pixels
    ShapeTrace trace;       ///< output shape of every block in evaluation order
};

struct SeOutput {
    Var out;
    Var weights;   ///< (N, C, 1, 1), in (0, 1)
};

struct MamOutput {
    Var u;
    Var raw;
    Var mask_x;
    Var mask_y;
};

/// (N, 4 n_c, H, W) network input: per coil the fixed real, fixed imaginary,
/// moving real and moving imaginary parts of the inverse-zero-frequency-shifted k-space.
Tensor prepare_input(const MultiCoil& k_fix, const MultiCoil& k_mov);
/// Stacks single-sample inputs along the batch axis.
Tensor stack_batch(const std::vector<Tensor>& samples);

class LapaNet {
public:
    /// Parameters: conv weights and biases uniform in +-1/sqrt(fan_in),
    /// normalization scales 1 and offsets 0, drawn in registration order.
    LapaNet(const ModelConfig& cfg, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ParameterStore& params() { return store_; }
    const ParameterStore& params() const { return store_; }

    /// training = true uses batch statistics in batch norm and updates the running ones.
    ModelOutput forward(const Var& input, bool training);

    Var grm(int level, const Var& input, bool training);
    SeOutput attention_se(const std::string& prefix, const Var& f);
    Var attention(const std::string& prefix, const Var& x);
    Var encoder(int level, const Var& x, const Var& grm_out, bool training);
    Var bottleneck(const Var& x, bool training);
    /// level 1 is the coarsest decoder (fed by the bottleneck).
    Var decoder(int level, const Var& x, const Var& skip, bool training);
    /// prev is null at the coarsest level.
    MamOutput motion_attention(int level, const Var& dec, const Var& prev);
    Var translation_head(const Var& bottleneck_features);
    /// Channel Integration Module; `pool` adds the 2x2 max pooling of encoder blocks.
    Var cim(const std::string& prefix, const Var& x, bool pool);
    /// Dilated Fusion Module; identity when the config disables it.
    Var dfm(const std::string& prefix, const Var& x, bool training);

private:
    void build(uint64_t seed);
    void add_conv(const std::string& name, int cin, int cout, int k);
    void add_depthwise(const std::string& name, int channels, int k);
    void add_norm(const std::string& name, int channels);
    void add_bn(const std::string& name, int channels);
    void add_attention(const std::string& prefix, int channels);
    void add_cim(const std::string& prefix, int cin, int cout);
    void add_dfm(const std::string& prefix, int channels);

    Var conv(const std::string& name, const Var& x, int dilation = 1);
    Var depthwise(const std::string& name, const Var& x);
    Var gn(const std::string& name, const Var& x);
    Var bn(const std::string& name, const Var& x, bool training);

    ModelConfig cfg_;
    ParameterStore store_;
    std::mt19937_64 init_rng_;
};

/// Group count used by every group norm: gcd(channels, 8).
int norm_groups(int channels);

/// Scalar read out for attribution: mean over pixels of u_x^2 + u_y^2 of u_4.
Var motion_energy(const ModelOutput& out);

struct IgResult {
    Tensor attribution;   ///< same shape as the input
    double sum = 0.0;     ///< sum of all attributions
    double f_input = 0.0;
    double f_baseline = 0.0;
    /// |sum - (f_input - f_baseline)| / |f_input - f_baseline|
    double completeness_gap = 0.0;
};

/// Gauss-Legendre rule on [0, 1], nodes ascending, weights summing to 1.
struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};
QuadratureRule gauss_legendre(int n);

/// Integrated gradients of a scalar function along the straight path from a
/// zero baseline to `input`, summed over the `steps` Gauss-Legendre nodes.
/// The nodes interlace with the cumulative weights, so this is a Riemann sum
/// on a partition refined toward both ends of the path, where normalized
/// networks change fastest.
IgResult integrated_gradients(const std::function<Var(const Var&)>& f, const Tensor& input, int steps = 100);
/// The same for motion_energy of the network in inference mode (one sample).
IgResult integrated_gradients(LapaNet& net, const Tensor& input, int steps = 100);

/// Bilinear upscaling of a level field to full resolution, values scaled by the factor.
Var upscale_to(const Var& u, int height);

} // namespace lapanet::nn

#pragma once

#include "lapanet/nn/losses.hpp"
#include "lapanet/nn/model.hpp"
#include "lapanet/kspace.hpp"
#include "lapanet/phantom.hpp"
#include "lapanet/sampling_pattern.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace lapanet {

enum class SceneKind { translation, gaussian, phantom };
std::string to_string(SceneKind k);
SceneKind scene_kind_from_string(const std::string& s);

/// Random training pair on a randomized phantom: a global translation with
/// |u| components up to `max_shift`, one to three Gaussian displacement bumps
/// with peak amplitude up to `max_shift`, or two frames of a contracting cine.
MotionPair make_training_pair(SceneKind kind, int rows, int cols, double max_shift, uint64_t seed);

/// Coil-resolved images scaled by 1 / max|fixed| and their undersampled
/// k-spaces; fixed and moving use frames 0 and 1 of the same pattern kind.
struct UndersampledPair {
    MultiCoil fix;
    MultiCoil mov;
    MultiCoil k_fix;
    MultiCoil k_mov;
    SamplingPattern pattern_fix;
    SamplingPattern pattern_mov;
    double scale = 1.0;
};
UndersampledPair undersample_pair(const MotionPair& pair, const CoilSensitivityMap& maps, PatternKind kind, double R,
                                  uint64_t seed);

/// Everything one pair contributes to a network step.
struct NetworkSample {
    nn::Tensor input;   ///< (1, 4 n_c, H, W) undersampled k-spaces
    nn::Tensor fix;     ///< (1, 2 n_c, H, W) fully sampled coil images
    nn::Tensor mov;
    nn::Tensor box;     ///< (1, 1, H, W) bounding box of the fixed segmentation, 10 px margin
};

/// Both images are scaled by 1 / max|fixed|, split into coil images, Fourier
/// transformed and undersampled with independent frames of the same pattern kind.
NetworkSample make_network_sample(const MotionPair& pair, const CoilSensitivityMap& maps, PatternKind kind, double R,
                                  uint64_t seed);

struct CurriculumStage {
    SceneKind scene = SceneKind::translation;
    int steps = 1000;
    double max_shift = 4.0;
};

struct TrainConfig {
    nn::ModelConfig model;
    nn::LossWeights weights;
    int batch = 8;
    double lr = 1e-3;
    double lr_min = 0.0;
    double weight_decay = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::vector<CurriculumStage> curriculum{{SceneKind::translation, 1000, 4.0}, {SceneKind::gaussian, 1000, 3.0}};
    std::vector<double> accelerations{1.0, 2.0, 4.0, 8.0};
    std::vector<PatternKind> trajectories{PatternKind::cartesian_lines, PatternKind::radial_spokes};
    uint64_t seed = 1;

    int total_steps() const;
    /// Cosine annealing from lr to lr_min over total_steps.
    double learning_rate(int step) const;
    const CurriculumStage& stage(int step) const;
    void validate() const;
};

/// Decoupled weight decay Adam.
class AdamW {
public:
    AdamW(double beta1, double beta2, double eps, double weight_decay);
    void step(nn::ParameterStore& params, double lr);
    int steps_taken() const { return t_; }

private:
    double beta1_, beta2_, eps_, wd_;
    int t_ = 0;
    std::vector<Eigen::VectorXd> m_, v_;
};

struct TrainRow {
    int step = 0;
    double total = 0.0;
    double tphoto = 0.0;
    double photo = 0.0;    ///< summed over levels
    double kdc = 0.0;
    double smooth = 0.0;
    double lr = 0.0;
    double R = 1.0;
    PatternKind trajectory = PatternKind::cartesian_lines;
    SceneKind scene = SceneKind::translation;
};

void write_train_header(std::ostream& os);
void write_train_row(std::ostream& os, const TrainRow& r);

/// One batch drawn for `step`: trajectory kind and R are shared by the batch.
struct TrainBatch {
    nn::Tensor input, fix, mov, box;
    std::vector<DisplacementField> truth;  ///< ground-truth field per sample
    double R = 1.0;
    PatternKind trajectory = PatternKind::cartesian_lines;
    SceneKind scene = SceneKind::translation;
};
TrainBatch make_train_batch(const TrainConfig& cfg, const CoilSensitivityMap& maps, int step);

/// Runs the configured number of steps. Rows go to `log` as CSV when given
/// and to `progress` after every step. Throws RuntimeFailure with the step
/// index when the loss or a gradient becomes non-finite.
std::vector<TrainRow> train(nn::LapaNet& net, const TrainConfig& cfg, std::ostream* log = nullptr,
                            const std::function<void(const TrainRow&)>& progress = {});

/// Loss of a fixed batch in inference mode.
double evaluate_loss(nn::LapaNet& net, const TrainBatch& batch, const nn::LossWeights& weights);

/// Network registration of one pair in inference mode.
struct NetworkEstimate {
    DisplacementField u;   ///< u_4 at full resolution
    double ut_x = 0.0;
    double ut_y = 0.0;
};
NetworkEstimate network_register(nn::LapaNet& net, const nn::Tensor& input);

/// Model config as key=value lines.
void write_model_config(std::ostream& os, const nn::ModelConfig& cfg);
nn::ModelConfig read_model_config(std::istream& is);

/// Directory with model.cfg, manifest.csv (name,role,dims,file) and one CXA payload per tensor.
void save_checkpoint(const std::filesystem::path& dir, const nn::LapaNet& net);
nn::LapaNet load_checkpoint(const std::filesystem::path& dir);

} // namespace lapanet

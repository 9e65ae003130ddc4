#pragma once

#include "lapanet/metrics.hpp"
#include "lapanet/nps.hpp"
#include "lapanet/train.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace lapanet {

enum class Method { lap, lapanet };
std::string to_string(Method m);
Method method_from_string(const std::string& s);

/// Settings shared by every command. Read from JSON; unknown keys are rejected.
struct ExperimentConfig {
    int rows = 64;
    int cols = 64;
    int n_frames = 6;
    int n_coils = 4;
    double spacing_mm = 1.9;
    SceneKind scene = SceneKind::phantom;
    double max_shift = 3.0;                        ///< translation and gaussian scenes
    std::vector<std::pair<int, int>> pairs{{0, 3}};
    std::vector<PatternKind> trajectories{PatternKind::cartesian_lines, PatternKind::radial_spokes};
    std::vector<double> accelerations{1.0, 2.0, 4.0, 8.0};
    Method method = Method::lap;
    std::filesystem::path checkpoint;
    int ig_steps = 100;
    TrainConfig train;
    uint64_t seed = 1;

    void validate() const;
    /// Throws ValidationError unless R and the trajectory belong to the configured grid.
    void require_grid(PatternKind kind, double R) const;
};

ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig read_experiment_config(const std::filesystem::path& path);
std::string experiment_config_json(const ExperimentConfig& cfg);

/// The pair (fix, mov) of the configured scene with its ground truth. Phantom
/// scenes index cine frames; translation and gaussian scenes draw a fresh pair per index.
MotionPair experiment_pair(const ExperimentConfig& cfg, int fix, int mov);

// ---------------------------------------------------------------- commands

struct PhantomOutput {
    std::vector<std::filesystem::path> frames;
    std::vector<std::filesystem::path> fields;
    std::vector<std::filesystem::path> masks;
    std::vector<std::filesystem::path> previews;
};
/// frame_<t>.cxa, mask_<t>.cxa, field_<fix>_<mov>.cxa for every ordered pair and frame_<t>.pgm previews.
PhantomOutput cmd_phantom(const ExperimentConfig& cfg, const std::filesystem::path& out);

/// Undersampled coil k-spaces kspace_<t>_<traj>_R<R>.cxa, patterns CSV and zero-filled previews of every frame.
std::vector<std::filesystem::path> cmd_undersample(const ExperimentConfig& cfg, PatternKind kind, double R,
                                                   const std::filesystem::path& out);

struct RegisterRow {
    std::string scene;
    Method method = Method::lap;
    PatternKind trajectory = PatternKind::cartesian_lines;
    double R = 1.0;
    int fix = 0;
    int mov = 0;
    std::string status = "ok";
    double nrmse_before = 0.0;
    EvalResult eval;
    double epe = 0.0;          ///< mean endpoint error inside the box
    double seconds = 0.0;      ///< not written to CSV, so reruns stay byte-identical
};
void write_register_header(std::ostream& os);
void write_register_row(std::ostream& os, const RegisterRow& r);

/// Loads checkpoints once per path.
class ModelCache {
public:
    nn::LapaNet& get(const std::filesystem::path& dir);

private:
    std::map<std::string, std::unique_ptr<nn::LapaNet>> models_;
};

/// Undersample, register, warp and score one pair. With a non-empty `out` the
/// field CXA, error map PGM, flow color PPM and metrics CSV are written there.
/// A LAP failure on weak data is reported in `status` with NaN metrics.
RegisterRow cmd_register(const ExperimentConfig& cfg, Method method, int fix, int mov, PatternKind kind, double R,
                         const std::filesystem::path& out, ModelCache* cache = nullptr);

struct SummaryRow {
    Method method = Method::lap;
    PatternKind trajectory = PatternKind::cartesian_lines;
    double R = 1.0;
    int n = 0;
    double nrmse_mean = 0.0, nrmse_std = 0.0;
    double dsc_mean = 0.0, dsc_std = 0.0;
    double hdd_mean = 0.0, hdd_std = 0.0;
    double epe_mean = 0.0, epe_std = 0.0;
};
/// Mean and sample standard deviation per (method, trajectory, R) over rows with status ok.
std::vector<SummaryRow> summarize(const std::vector<RegisterRow>& rows);
void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows);

/// Every trajectory x acceleration x pair; sweep.csv (long format) and sweep_summary.csv.
std::vector<RegisterRow> cmd_sweep(const ExperimentConfig& cfg, const std::filesystem::path& out);

struct TrainOutcome {
    std::vector<TrainRow> rows;
    double validation_before = 0.0;
    double validation_after = 0.0;
    double seconds = 0.0;
};
/// Held-out batches, one per curriculum scene, drawn with a seed the training never uses.
std::vector<TrainBatch> validation_batches(const TrainConfig& cfg, const CoilSensitivityMap& maps);
/// train.csv, train_time.csv, checkpoint/ and train_summary.csv with the validation loss before and after.
TrainOutcome cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& out,
                       const std::function<void(const TrainRow&)>& progress = {});

struct InterpretOutcome {
    nn::IgResult ig;
    AttributionMaps maps;
    NpsResult nps_fix;
    NpsResult nps_mov;
};
/// Integrated gradients of the trained network on one pair; heatmaps, spectra,
/// nps.csv and ig_summary.csv with the completeness gap.
InterpretOutcome cmd_interpret(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint, int fix, int mov,
                               PatternKind kind, double R, int steps, const std::filesystem::path& out);

struct SelftestLine {
    std::string name;
    bool pass = false;
    std::string detail;
};
/// Shift theorem, adjoint, metric and gradient oracles at fixed seeds.
std::vector<SelftestLine> run_selftest(uint64_t seed);
void write_selftest(std::ostream& os, const std::vector<SelftestLine>& lines);

} // namespace lapanet

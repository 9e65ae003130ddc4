#pragma once

#include "lapanet/motion.hpp"
#include "lapanet/types.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

namespace lapanet {

enum Label : int32_t { background = 0, myocardium = 1, cavity = 2, rv_pool = 3 };

/// Geometry and appearance of the cardiac-like phantom, in pixels.
struct PhantomConfig {
    int rows = 64;
    int cols = 64;
    double center_y = 32.0;          ///< left-ventricle center
    double center_x = 34.0;
    double inner_radius = 7.0;       ///< cavity radius
    double outer_radius = 12.0;      ///< epicardial radius
    double contraction = 0.1;        ///< peak radial contraction, fraction of radius
    double decay_width = 6.0;        ///< falloff of the contraction field outside the annulus
    double rv_offset_x = -19.0;      ///< RV ellipse center relative to the LV center
    double rv_offset_y = 0.0;
    double rv_semi_x = 5.0;
    double rv_semi_y = 9.0;
    double rv_coupling = 0.5;        ///< RV translation as a fraction of the peak LV displacement
    double rv_direction = 0.0;       ///< direction of the RV translation, radians from +x
    double texture_amplitude = 0.15;
    double texture_cutoff = 0.6;     ///< fraction of Nyquist
    int texture_components = 48;
    double phase_amplitude = 0.3;    ///< radians
    double edge_width = 0.7;
    double spacing_mm = 1.9;
    uint64_t seed = 1;

    /// Throws ValidationError on degenerate geometry.
    void validate() const;

    /// Randomized geometry/texture for training, scaled to the grid size.
    static PhantomConfig random(int rows, int cols, uint64_t seed);
};

/// Continuous reference-frame content; frames are point samples of it after
/// a coordinate map.
class PhantomModel {
public:
    explicit PhantomModel(const PhantomConfig& cfg);

    const PhantomConfig& config() const { return cfg_; }

    cd intensity(double y, double x) const;
    int32_t label(double y, double x) const;

    /// Reference -> frame displacement D_t at cycle phase in [0, 1].
    std::array<double, 2> frame_displacement(double phase, double y, double x) const;
    /// Reference point mapped into the frame at `phase`.
    std::array<double, 2> to_frame(double phase, double y, double x) const;
    /// Inverse of to_frame by fixed-point iteration (converges to 1e-13).
    std::array<double, 2> to_reference(double phase, double y, double x) const;

    /// Renders img(x) = intensity(back(x)) at every pixel center.
    ComplexImage render(const std::function<std::array<double, 2>(double, double)>& back) const;
    LabelGrid render_labels(const std::function<std::array<double, 2>(double, double)>& back) const;

    ComplexImage render_frame(double phase) const;
    LabelGrid frame_labels(double phase) const;

private:
    PhantomConfig cfg_;
    std::vector<std::array<double, 3>> texture_;   // (wy, wx, phase)
    std::vector<std::array<double, 3>> phase_map_;
};

/// Frames over one cycle with ground-truth fields and label masks.
struct PhantomScene {
    std::vector<ComplexImage> frames;
    std::vector<LabelGrid> masks;
    std::vector<DisplacementField> fields;   ///< fields[fix * n + mov]; warps mov onto fix
    double residual_bound = 0.05;
    double spacing_mm = 1.9;

    int frame_count() const { return static_cast<int>(frames.size()); }
    const DisplacementField& field(int fix, int mov) const { return fields[static_cast<size_t>(fix * frame_count() + mov)]; }
};

/// Cycle phase of frame t: a raised-cosine contraction with its peak at t = n/2.
double cycle_weight(int t, int n_frames);

PhantomScene phantom_cine(const PhantomConfig& cfg, int n_frames);

/// A fixed/moving pair with its exact ground-truth field.
struct MotionPair {
    ComplexImage fixed;
    ComplexImage moving;
    DisplacementField truth;
    LabelGrid fixed_labels;
    LabelGrid moving_labels;
};

/// moving = reference content, fixed(x) = moving(x - u): a global translation.
MotionPair translation_pair(const PhantomModel& model, double ux, double uy);

/// moving = reference content, fixed(x) = moving(x - u(x)) rendered analytically.
MotionPair field_pair(const PhantomModel& model, const DisplacementField& u);

/// Pair (fix, mov) taken from a scene.
MotionPair scene_pair(const PhantomScene& scene, int fix, int mov);

} // namespace lapanet

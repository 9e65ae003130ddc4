#pragma once

#include <cstdint>
#include <vector>

namespace lapanet {

enum class PatternKind { cartesian_lines, radial_spokes };

/// Acquisition pattern for one temporal frame.
///
/// Cartesian patterns select phase-encode lines, which are k-space rows: an
/// acquired row keeps all of its readout samples. Radial patterns list spoke
/// angles in [0, pi); each spoke carries `readout` samples spanning the
/// angular-frequency diameter [-pi, pi).
struct SamplingPattern {
    PatternKind kind = PatternKind::cartesian_lines;
    std::vector<uint8_t> lines;
    std::vector<double> angles;
    int readout = 0;
    int frame_index = 0;

    static SamplingPattern fully_sampled(int n_pe);
    static SamplingPattern radial(std::vector<double> angles, int readout, int frame_index = 0);

    int active_lines() const;
    int acquired_units() const { return kind == PatternKind::cartesian_lines ? active_lines() : static_cast<int>(angles.size()); }
    bool is_cartesian() const { return kind == PatternKind::cartesian_lines; }

    /// Throws ValidationError if the pattern violates its kind's invariants.
    void validate() const;
};

} // namespace lapanet

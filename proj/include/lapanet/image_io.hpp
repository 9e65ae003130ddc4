#pragma once

#include "lapanet/types.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace lapanet {

struct RgbImage {
    int rows = 0;
    int cols = 0;
    std::vector<std::array<uint8_t, 3>> pixels;
};

/// 8-bit binary PGM, min-max scaled. `comment` goes into a header comment line.
void write_pgm(const std::filesystem::path& path, const RGrid& img, const std::string& comment = {});
void write_ppm(const std::filesystem::path& path, const RgbImage& img, const std::string& comment = {});

/// Reads back the pixel grid of an 8-bit binary PGM (for tests and tooling).
RGrid read_pgm(const std::filesystem::path& path);

/// Optical-flow color wheel (Middlebury convention): hue encodes direction,
/// saturation encodes magnitude relative to `max_magnitude`.
RgbImage flow_to_color(const DisplacementField& u, double max_magnitude);

/// Run-length encoding of a label grid in row-major order: (label, start, length).
struct LabelRun {
    int32_t label;
    int64_t start;
    int64_t length;
};
std::vector<LabelRun> run_length_encode(const LabelGrid& labels);
LabelGrid run_length_decode(const std::vector<LabelRun>& runs, Eigen::Index rows, Eigen::Index cols);

} // namespace lapanet

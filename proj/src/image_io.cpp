#include "lapanet/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace lapanet {

namespace {

std::ofstream open_for_write(const std::filesystem::path& path)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw RuntimeFailure("cannot open " + path.string() + " for writing");
    return os;
}

// Middlebury color wheel: 55 hues over six segments.
std::vector<std::array<double, 3>> make_color_wheel()
{
    constexpr int ry = 15, yg = 6, gc = 4, cb = 11, bm = 13, mr = 6;
    std::vector<std::array<double, 3>> wheel;
    for (int i = 0; i < ry; ++i)
        wheel.push_back({255.0, 255.0 * i / ry, 0.0});
    for (int i = 0; i < yg; ++i)
        wheel.push_back({255.0 - 255.0 * i / yg, 255.0, 0.0});
    for (int i = 0; i < gc; ++i)
        wheel.push_back({0.0, 255.0, 255.0 * i / gc});
    for (int i = 0; i < cb; ++i)
        wheel.push_back({0.0, 255.0 - 255.0 * i / cb, 255.0});
    for (int i = 0; i < bm; ++i)
        wheel.push_back({255.0 * i / bm, 0.0, 255.0});
    for (int i = 0; i < mr; ++i)
        wheel.push_back({255.0, 0.0, 255.0 - 255.0 * i / mr});
    return wheel;
}

} // namespace

void write_pgm(const std::filesystem::path& path, const RGrid& img, const std::string& comment)
{
    auto os = open_for_write(path);
    os << "P5\n";
    if (!comment.empty())
        os << "# " << comment << "\n";
    os << img.cols() << ' ' << img.rows() << "\n255\n";
    const double lo = img.size() ? img.minCoeff() : 0.0;
    const double hi = img.size() ? img.maxCoeff() : 0.0;
    const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
    std::vector<uint8_t> bytes(static_cast<size_t>(img.size()));
    for (Eigen::Index i = 0; i < img.size(); ++i)
        bytes[i] = static_cast<uint8_t>(std::lround(std::clamp((img.data()[i] - lo) * scale, 0.0, 255.0)));
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_ppm(const std::filesystem::path& path, const RgbImage& img, const std::string& comment)
{
    auto os = open_for_write(path);
    os << "P6\n";
    if (!comment.empty())
        os << "# " << comment << "\n";
    os << img.cols << ' ' << img.rows << "\n255\n";
    for (const auto& p : img.pixels)
        os.write(reinterpret_cast<const char*>(p.data()), 3);
}

RGrid read_pgm(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    std::string magic;
    is >> magic;
    if (magic != "P5")
        throw ValidationError("read_pgm: not a binary PGM: " + path.string());
    auto next_int = [&]() {
        is >> std::ws;
        while (is.peek() == '#') {
            std::string line;
            std::getline(is, line);
            is >> std::ws;
        }
        int v = 0;
        is >> v;
        return v;
    };
    const int cols = next_int();
    const int rows = next_int();
    next_int();
    is.get();
    RGrid img(rows, cols);
    for (Eigen::Index i = 0; i < img.size(); ++i)
        img.data()[i] = static_cast<unsigned char>(is.get());
    if (!is)
        throw ValidationError("read_pgm: truncated file " + path.string());
    return img;
}

RgbImage flow_to_color(const DisplacementField& u, double max_magnitude)
{
    static const auto wheel = make_color_wheel();
    const int ncols = static_cast<int>(wheel.size());
    RgbImage out;
    out.rows = static_cast<int>(u.rows());
    out.cols = static_cast<int>(u.cols());
    out.pixels.resize(static_cast<size_t>(u.ux.size()));
    const double norm = max_magnitude > 0.0 ? max_magnitude : 1.0;
    for (Eigen::Index i = 0; i < u.ux.size(); ++i) {
        const double fx = u.ux.data()[i] / norm;
        const double fy = u.uy.data()[i] / norm;
        const double rad = std::sqrt(fx * fx + fy * fy);
        const double a = std::atan2(-fy, -fx) / std::numbers::pi;
        const double fk = (a + 1.0) / 2.0 * (ncols - 1);
        const int k0 = static_cast<int>(std::floor(fk));
        const int k1 = (k0 + 1) % ncols;
        const double f = fk - k0;
        for (int ch = 0; ch < 3; ++ch) {
            double col = ((1.0 - f) * wheel[k0][ch] + f * wheel[k1][ch]) / 255.0;
            col = rad <= 1.0 ? 1.0 - rad * (1.0 - col) : col * 0.75;
            out.pixels[i][ch] = static_cast<uint8_t>(std::lround(255.0 * std::clamp(col, 0.0, 1.0)));
        }
    }
    return out;
}

std::vector<LabelRun> run_length_encode(const LabelGrid& labels)
{
    std::vector<LabelRun> runs;
    for (Eigen::Index i = 0; i < labels.size(); ++i) {
        const int32_t v = labels.data()[i];
        if (!runs.empty() && runs.back().label == v)
            ++runs.back().length;
        else
            runs.push_back({v, static_cast<int64_t>(i), 1});
    }
    return runs;
}

LabelGrid run_length_decode(const std::vector<LabelRun>& runs, Eigen::Index rows, Eigen::Index cols)
{
    LabelGrid out = LabelGrid::Zero(rows, cols);
    for (const auto& r : runs) {
        if (r.start < 0 || r.start + r.length > out.size())
            throw ValidationError("run_length_decode: run exceeds grid");
        std::fill(out.data() + r.start, out.data() + r.start + r.length, r.label);
    }
    return out;
}

} // namespace lapanet

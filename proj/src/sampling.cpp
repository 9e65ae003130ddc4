#include "lapanet/sampling.hpp"

#include "lapanet/kspace.hpp"
#include "lapanet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

namespace lapanet {

SamplingPattern SamplingPattern::fully_sampled(int n_pe)
{
    SamplingPattern p;
    p.kind = PatternKind::cartesian_lines;
    p.lines.assign(static_cast<size_t>(n_pe), 1);
    return p;
}

SamplingPattern SamplingPattern::radial(std::vector<double> angles, int readout, int frame_index)
{
    SamplingPattern p;
    p.kind = PatternKind::radial_spokes;
    p.angles = std::move(angles);
    p.readout = readout;
    p.frame_index = frame_index;
    return p;
}

int SamplingPattern::active_lines() const
{
    return static_cast<int>(std::count_if(lines.begin(), lines.end(), [](uint8_t v) { return v != 0; }));
}

void SamplingPattern::validate() const
{
    if (kind == PatternKind::cartesian_lines) {
        if (active_lines() < 1)
            throw ValidationError("cartesian pattern needs at least one active line");
        return;
    }
    if (readout < 2)
        throw ValidationError("radial pattern needs at least two readout samples per spoke");
    for (double a : angles) {
        if (!(a >= 0.0 && a < std::numbers::pi))
            throw ValidationError("radial spoke angles must lie in [0, pi)");
    }
}

AccelerationReport acceleration(int full_count, int frame_count)
{
    if (frame_count < 1 || full_count < frame_count)
        throw ValidationError("acceleration: need 1 <= frame_count <= full_count");
    return {full_count, frame_count, static_cast<double>(full_count) / frame_count};
}

AccelerationReport acceleration(const SamplingPattern& pattern, int full_count)
{
    return acceleration(full_count, pattern.acquired_units());
}

double golden_angle()
{
    return std::numbers::pi * (std::sqrt(5.0) - 1.0) / 2.0;
}

int fully_sampled_spokes(int n)
{
    return static_cast<int>(std::ceil(std::numbers::pi * n / 2.0));
}

namespace {

std::vector<uint8_t> draw_vista_frame(int n_pe, int lines_per_frame, uint64_t frame_seed)
{
    const int center = n_pe / 2;
    std::vector<uint8_t> mask(static_cast<size_t>(n_pe), 0);
    mask[center] = 1;
    const double sigma = n_pe / 6.0;
    std::vector<double> weight(static_cast<size_t>(n_pe));
    for (int i = 0; i < n_pe; ++i) {
        const double d = i - center;
        weight[i] = i == center ? 0.0 : std::exp(-d * d / (2.0 * sigma * sigma));
    }
    SplitMix64 rng(frame_seed);
    for (int drawn = 1; drawn < lines_per_frame; ++drawn) {
        double total = 0.0;
        for (double w : weight)
            total += w;
        // Far lines can underflow to zero weight; fall back to uniform over the rest.
        if (!(total > 0.0)) {
            for (int i = 0; i < n_pe; ++i)
                weight[i] = mask[i] ? 0.0 : 1.0;
            total = n_pe - drawn;
        }
        double target = rng.uniform() * total;
        int pick = -1;
        for (int i = 0; i < n_pe; ++i) {
            if (weight[i] <= 0.0)
                continue;
            pick = i;
            target -= weight[i];
            if (target < 0.0)
                break;
        }
        mask[pick] = 1;
        weight[pick] = 0.0;
    }
    return mask;
}

} // namespace

std::vector<SamplingPattern> vista_like_mask(int n_pe, int n_frames, int lines_per_frame, uint64_t seed)
{
    if (n_pe < 1 || n_frames < 1)
        throw ValidationError("vista_like_mask: need n_pe >= 1 and n_frames >= 1");
    if (lines_per_frame < 1)
        throw ValidationError("vista_like_mask: lines_per_frame must be at least 1");
    if (lines_per_frame > n_pe)
        throw ValidationError("vista_like_mask: lines_per_frame exceeds n_pe");

    // Identical consecutive frames are only forced when there is a single choice.
    const bool forced = lines_per_frame == n_pe || lines_per_frame == 1;
    std::vector<SamplingPattern> frames;
    for (int f = 0; f < n_frames; ++f) {
        SamplingPattern p;
        p.kind = PatternKind::cartesian_lines;
        p.frame_index = f;
        uint64_t attempt = 0;
        do {
            p.lines = draw_vista_frame(n_pe, lines_per_frame, mix_seed(seed, static_cast<uint64_t>(f), attempt));
            ++attempt;
        } while (!forced && f > 0 && p.lines == frames.back().lines && attempt < 64);
        frames.push_back(std::move(p));
    }
    return frames;
}

SamplingPattern golden_angle_spokes(int n_spokes, int64_t start_index, int readout)
{
    if (n_spokes < 0)
        throw ValidationError("golden_angle_spokes: negative spoke count");
    std::vector<double> angles;
    angles.reserve(static_cast<size_t>(n_spokes));
    const double pi = std::numbers::pi;
    for (int i = 0; i < n_spokes; ++i) {
        double a = std::fmod(static_cast<double>(start_index + i) * golden_angle(), pi);
        if (a < 0.0)
            a += pi;
        angles.push_back(a);
    }
    return SamplingPattern::radial(std::move(angles), readout);
}

KLocation spoke_location(double angle, int s, int readout)
{
    const double rho = 2.0 * std::numbers::pi * (s - readout / 2) / static_cast<double>(readout);
    return {rho * std::cos(angle), rho * std::sin(angle)};
}

namespace {

void require_radial(const SamplingPattern& pattern, const char* what)
{
    if (pattern.kind != PatternKind::radial_spokes)
        throw ValidationError(std::string(what) + ": pattern kind must be radial");
    pattern.validate();
}

// Per-sample exponentials e^{-j w_x (x - cx)} (cols x S) and e^{-j w_y (y - cy)} (rows x S).
void spoke_exponentials(const SamplingPattern& pattern, Eigen::Index rows, Eigen::Index cols,
                        Eigen::MatrixXcd& ex, Eigen::MatrixXcd& ey)
{
    const Eigen::Index n_samples = static_cast<Eigen::Index>(pattern.angles.size()) * pattern.readout;
    ex.resize(cols, n_samples);
    ey.resize(rows, n_samples);
    Eigen::Index s = 0;
    for (double angle : pattern.angles) {
        for (int r = 0; r < pattern.readout; ++r, ++s) {
            const KLocation k = spoke_location(angle, r, pattern.readout);
            for (Eigen::Index x = 0; x < cols; ++x)
                ex(x, s) = std::polar(1.0, -k.kx * static_cast<double>(x - cols / 2));
            for (Eigen::Index y = 0; y < rows; ++y)
                ey(y, s) = std::polar(1.0, -k.ky * static_cast<double>(y - rows / 2));
        }
    }
}

} // namespace

CGrid radial_sample(const ComplexImage& img, const SamplingPattern& pattern)
{
    require_radial(pattern, "radial_sample");
    const auto n_spokes = static_cast<Eigen::Index>(pattern.angles.size());
    CGrid out = CGrid::Zero(n_spokes, pattern.readout);
    if (n_spokes == 0)
        return out;
    Eigen::MatrixXcd ex, ey;
    spoke_exponentials(pattern, img.rows(), img.cols(), ex, ey);
    const Eigen::MatrixXcd partial = img.matrix() * ex;
    const Eigen::RowVectorXcd values = ey.cwiseProduct(partial).colwise().sum()
                                       / std::sqrt(static_cast<double>(img.size()));
    Eigen::Map<Eigen::RowVectorXcd>(out.data(), out.size()) = values;
    return out;
}

ComplexImage radial_adjoint(const CGrid& spokes, const SamplingPattern& pattern, Eigen::Index rows, Eigen::Index cols)
{
    require_radial(pattern, "radial_adjoint");
    if (spokes.rows() != static_cast<Eigen::Index>(pattern.angles.size()) || spokes.cols() != pattern.readout)
        throw ValidationError("radial_adjoint: spoke data does not match the pattern");
    if (spokes.size() == 0)
        return ComplexImage::Zero(rows, cols);
    Eigen::MatrixXcd ex, ey;
    spoke_exponentials(pattern, rows, cols, ex, ey);
    const Eigen::Map<const Eigen::VectorXcd> v(spokes.data(), spokes.size());
    const Eigen::MatrixXcd scaled = ey.conjugate() * v.asDiagonal();
    ComplexImage out = (scaled * ex.conjugate().transpose()).array();
    return out / std::sqrt(static_cast<double>(rows * cols));
}

namespace {

bool grid_cell(const KLocation& k, Eigen::Index rows, Eigen::Index cols, Eigen::Index& row, Eigen::Index& col)
{
    const double two_pi = 2.0 * std::numbers::pi;
    col = static_cast<Eigen::Index>(std::lround(k.kx * static_cast<double>(cols) / two_pi)) + cols / 2;
    row = static_cast<Eigen::Index>(std::lround(k.ky * static_cast<double>(rows) / two_pi)) + rows / 2;
    return row >= 0 && row < rows && col >= 0 && col < cols;
}

} // namespace

CGrid radial_adjoint_grid(const CGrid& spokes, const SamplingPattern& pattern, Eigen::Index rows, Eigen::Index cols)
{
    require_radial(pattern, "radial_adjoint_grid");
    if (spokes.rows() != static_cast<Eigen::Index>(pattern.angles.size()) || spokes.cols() != pattern.readout)
        throw ValidationError("radial_adjoint_grid: spoke data does not match the pattern");
    CGrid acc = CGrid::Zero(rows, cols);
    RGrid wsum = RGrid::Zero(rows, cols);
    const double dk = 2.0 * std::numbers::pi / pattern.readout;
    for (Eigen::Index sp = 0; sp < spokes.rows(); ++sp) {
        for (int r = 0; r < pattern.readout; ++r) {
            const KLocation k = spoke_location(pattern.angles[sp], r, pattern.readout);
            Eigen::Index row = 0, col = 0;
            if (!grid_cell(k, rows, cols, row, col))
                continue;
            const double w = std::max(std::hypot(k.kx, k.ky), 0.5 * dk);
            acc(row, col) += w * spokes(sp, r);
            wsum(row, col) += w;
        }
    }
    for (Eigen::Index i = 0; i < acc.size(); ++i) {
        if (wsum.data()[i] > 0.0)
            acc.data()[i] /= wsum.data()[i];
    }
    return acc;
}

Eigen::Array<uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
radial_support(const SamplingPattern& pattern, Eigen::Index rows, Eigen::Index cols)
{
    require_radial(pattern, "radial_support");
    Eigen::Array<uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> support =
        Eigen::Array<uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(rows, cols);
    for (double angle : pattern.angles) {
        for (int r = 0; r < pattern.readout; ++r) {
            Eigen::Index row = 0, col = 0;
            if (grid_cell(spoke_location(angle, r, pattern.readout), rows, cols, row, col))
                support(row, col) = 1;
        }
    }
    return support;
}

CGrid apply_cartesian_mask(const CGrid& k, const SamplingPattern& pattern)
{
    if (pattern.kind != PatternKind::cartesian_lines)
        throw ValidationError("apply_cartesian_mask: pattern kind must be cartesian");
    if (static_cast<Eigen::Index>(pattern.lines.size()) != k.rows())
        throw ValidationError("apply_cartesian_mask: mask line count differs from k-space height");
    CGrid out = k;
    for (Eigen::Index y = 0; y < k.rows(); ++y) {
        if (!pattern.lines[y])
            out.row(y).setZero();
    }
    return out;
}

MultiCoil apply_cartesian_mask(const MultiCoil& k, const SamplingPattern& pattern)
{
    MultiCoil out;
    for (const auto& c : k.coils)
        out.coils.push_back(apply_cartesian_mask(c, pattern));
    return out;
}

MultiCoil radial_undersample(const MultiCoil& coil_imgs, const SamplingPattern& pattern)
{
    require_radial(pattern, "radial_undersample");
    MultiCoil out;
    for (const auto& c : coil_imgs.coils)
        out.coils.push_back(radial_adjoint_grid(radial_sample(c, pattern), pattern, c.rows(), c.cols()));
    return out;
}

MultiCoil undersample_kspace(const MultiCoil& full_k, const SamplingPattern& pattern)
{
    full_k.validate();
    if (pattern.is_cartesian())
        return apply_cartesian_mask(full_k, pattern);
    return radial_undersample(ifft2_centered(full_k), pattern);
}

void write_patterns_csv(std::ostream& os, const std::vector<SamplingPattern>& patterns)
{
    if (patterns.empty())
        return;
    const bool cart = patterns.front().is_cartesian();
    os << (cart ? "frame,line\n" : "frame,angle\n");
    for (const auto& p : patterns) {
        if (p.is_cartesian() != cart)
            throw ValidationError("write_patterns_csv: mixed pattern kinds");
        if (cart) {
            for (size_t i = 0; i < p.lines.size(); ++i) {
                if (p.lines[i])
                    os << p.frame_index << ',' << i << '\n';
            }
        } else {
            for (double a : p.angles)
                os << p.frame_index << ',' << std::setprecision(17) << a << '\n';
        }
    }
}

std::vector<SamplingPattern> read_patterns_csv(std::istream& is, int n_pe_or_readout)
{
    std::string header;
    if (!std::getline(is, header))
        return {};
    const bool cart = header.rfind("frame,line", 0) == 0;
    if (!cart && header.rfind("frame,angle", 0) != 0)
        throw ValidationError("read_patterns_csv: unknown header '" + header + "'");
    std::vector<SamplingPattern> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty())
            continue;
        std::istringstream ss(line);
        int frame = 0;
        char comma = 0;
        double value = 0.0;
        if (!(ss >> frame >> comma >> value) || comma != ',')
            throw ValidationError("read_patterns_csv: malformed row '" + line + "'");
        if (out.empty() || out.back().frame_index != frame) {
            SamplingPattern p;
            p.frame_index = frame;
            if (cart) {
                p.kind = PatternKind::cartesian_lines;
                p.lines.assign(static_cast<size_t>(n_pe_or_readout), 0);
            } else {
                p.kind = PatternKind::radial_spokes;
                p.readout = n_pe_or_readout;
            }
            out.push_back(std::move(p));
        }
        if (cart) {
            const auto idx = static_cast<long>(value);
            if (idx < 0 || idx >= n_pe_or_readout)
                throw ValidationError("read_patterns_csv: line index out of range");
            out.back().lines[static_cast<size_t>(idx)] = 1;
        } else {
            out.back().angles.push_back(value);
        }
    }
    return out;
}

RGrid pattern_mask(const SamplingPattern& pattern, Eigen::Index rows, Eigen::Index cols)
{
    if (pattern.is_cartesian()) {
        RGrid m = RGrid::Zero(rows, cols);
        for (Eigen::Index y = 0; y < rows && y < static_cast<Eigen::Index>(pattern.lines.size()); ++y) {
            if (pattern.lines[y])
                m.row(y).setOnes();
        }
        return m;
    }
    return radial_support(pattern, rows, cols).cast<double>();
}

SamplingPattern pattern_for_acceleration(PatternKind kind, int n, double R, uint64_t seed, int frame_index)
{
    if (!(R >= 1.0))
        throw ValidationError("pattern_for_acceleration: R must be at least 1");
    if (kind == PatternKind::cartesian_lines) {
        const int lines = std::max(1, static_cast<int>(std::lround(n / R)));
        SamplingPattern p;
        if (lines >= n) {
            p = SamplingPattern::fully_sampled(n);
        } else {
            p.kind = PatternKind::cartesian_lines;
            p.lines = draw_vista_frame(n, lines, mix_seed(seed, static_cast<uint64_t>(frame_index), 0));
        }
        p.frame_index = frame_index;
        return p;
    }
    const int spokes = std::max(1, static_cast<int>(std::lround(fully_sampled_spokes(n) / R)));
    SamplingPattern p = golden_angle_spokes(spokes, static_cast<int64_t>(frame_index) * spokes, n);
    p.frame_index = frame_index;
    return p;
}

std::string to_string(PatternKind kind)
{
    return kind == PatternKind::cartesian_lines ? "cartesian" : "radial";
}

PatternKind pattern_kind_from_string(const std::string& s)
{
    if (s == "cartesian")
        return PatternKind::cartesian_lines;
    if (s == "radial")
        return PatternKind::radial_spokes;
    throw ValidationError("unknown trajectory kind '" + s + "'");
}

} // namespace lapanet

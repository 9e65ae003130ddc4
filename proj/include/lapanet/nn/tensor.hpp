#pragma once

#include <Eigen/Core>

#include <array>
#include <string>

namespace lapanet::nn {

/// Dense NCHW tensor of doubles. Parameters use the same layout
/// (conv weights are Cout x Cin x kH x kW); scalars are 1x1x1x1.
struct Tensor {
    std::array<int, 4> shape{0, 0, 0, 0};
    Eigen::VectorXd data;

    Tensor() = default;
    Tensor(int n, int c, int h, int w) : shape{n, c, h, w}, data(Eigen::VectorXd::Zero(Eigen::Index(n) * c * h * w)) {}

    static Tensor zeros(int n, int c, int h, int w) { return Tensor(n, c, h, w); }
    static Tensor zeros_like(const Tensor& t) { return Tensor(t.n(), t.c(), t.h(), t.w()); }
    static Tensor scalar(double v)
    {
        Tensor t(1, 1, 1, 1);
        t.data(0) = v;
        return t;
    }

    int n() const { return shape[0]; }
    int c() const { return shape[1]; }
    int h() const { return shape[2]; }
    int w() const { return shape[3]; }
    Eigen::Index size() const { return data.size(); }
    Eigen::Index plane() const { return Eigen::Index(h()) * w(); }
    Eigen::Index sample_size() const { return Eigen::Index(c()) * h() * w(); }

    double* ptr(int n_, int c_ = 0) { return data.data() + Eigen::Index(n_) * sample_size() + Eigen::Index(c_) * plane(); }
    const double* ptr(int n_, int c_ = 0) const
    {
        return data.data() + Eigen::Index(n_) * sample_size() + Eigen::Index(c_) * plane();
    }
    double& at(int n_, int c_, int y, int x) { return ptr(n_, c_)[Eigen::Index(y) * w() + x]; }
    double at(int n_, int c_, int y, int x) const { return ptr(n_, c_)[Eigen::Index(y) * w() + x]; }

    double item() const { return data(0); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    std::string shape_string() const;
};

/// Throws ValidationError with `what` when the shapes differ.
void require_shape(const Tensor& t, const std::array<int, 4>& shape, const char* what);

} // namespace lapanet::nn

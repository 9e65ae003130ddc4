#include "lapanet/nn/ops.hpp"

#include "lapanet/kspace.hpp"
#include "lapanet/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace lapanet::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<RowMat>;
using CMapR = Eigen::Map<const RowMat>;

void require_same(const Tensor& a, const Tensor& b, const char* what)
{
    if (!a.same_shape(b))
        throw ValidationError(std::string(what) + ": shapes " + a.shape_string() + " and " + b.shape_string() + " differ");
}

// Column matrix (C*k*k, H*W) of one sample for a k x k kernel with dilation.
void im2col(const double* x, int c_in, int h, int w, int k, int dil, RowMat& cols)
{
    const int half = k / 2;
    cols.resize(Eigen::Index(c_in) * k * k, Eigen::Index(h) * w);
    for (int c = 0; c < c_in; ++c) {
        const double* plane = x + Eigen::Index(c) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            const int dy = (ky - half) * dil;
            for (int kx = 0; kx < k; ++kx) {
                const int dx = (kx - half) * dil;
                double* row = cols.data() + ((Eigen::Index(c) * k + ky) * k + kx) * Eigen::Index(h) * w;
                const int x0 = std::max(0, -dx);
                const int x1 = std::min(w, w - dx);
                for (int y = 0; y < h; ++y) {
                    double* out = row + Eigen::Index(y) * w;
                    const int iy = y + dy;
                    if (iy < 0 || iy >= h || x0 >= x1) {
                        std::fill(out, out + w, 0.0);
                        continue;
                    }
                    std::fill(out, out + x0, 0.0);
                    std::memcpy(out + x0, plane + Eigen::Index(iy) * w + x0 + dx, sizeof(double) * size_t(x1 - x0));
                    std::fill(out + x1, out + w, 0.0);
                }
            }
        }
    }
}

void col2im_add(const RowMat& cols, int c_in, int h, int w, int k, int dil, double* dx_out)
{
    const int half = k / 2;
    for (int c = 0; c < c_in; ++c) {
        double* plane = dx_out + Eigen::Index(c) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            const int dy = (ky - half) * dil;
            for (int kx = 0; kx < k; ++kx) {
                const int dx = (kx - half) * dil;
                const double* row = cols.data() + ((Eigen::Index(c) * k + ky) * k + kx) * Eigen::Index(h) * w;
                const int x0 = std::max(0, -dx);
                const int x1 = std::min(w, w - dx);
                for (int y = 0; y < h; ++y) {
                    const int iy = y + dy;
                    if (iy < 0 || iy >= h)
                        continue;
                    const double* src = row + Eigen::Index(y) * w;
                    double* dst = plane + Eigen::Index(iy) * w + dx;
                    for (int x = x0; x < x1; ++x)
                        dst[x] += src[x];
                }
            }
        }
    }
}

template <class F, class G>
Var unary(const Var& x, F f, G dfdx)
{
    Tensor out = Tensor::zeros_like(x->value);
    const auto& in = x->value.data;
    for (Eigen::Index i = 0; i < in.size(); ++i)
        out.data(i) = f(in(i));
    return make_node(std::move(out), {x}, [x, dfdx](Node& self) {
        auto& g = x->grad_buffer().data;
        const auto& in = x->value.data;
        for (Eigen::Index i = 0; i < in.size(); ++i)
            g(i) += self.grad.data(i) * dfdx(in(i), self.value.data(i));
    });
}

// Per-axis bilinear tables for x2 upsampling with half-pixel centers.
struct Taps {
    std::vector<int> i0, i1;
    std::vector<double> f;
};

Taps upsample_taps(int n)
{
    Taps t;
    for (int o = 0; o < 2 * n; ++o) {
        const double s = std::clamp((o + 0.5) / 2.0 - 0.5, 0.0, double(n - 1));
        const int a = static_cast<int>(std::floor(s));
        t.i0.push_back(a);
        t.i1.push_back(std::min(a + 1, n - 1));
        t.f.push_back(s - a);
    }
    return t;
}

} // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int dilation)
{
    const Tensor& X = x->value;
    const Tensor& W = w->value;
    const int k = W.h();
    if (W.w() != k || k % 2 == 0)
        throw ValidationError("conv2d: kernel must be square with odd size");
    if (W.c() != X.c())
        throw ValidationError("conv2d: weight expects " + std::to_string(W.c()) + " input channels, got " + std::to_string(X.c()));
    if (b)
        require_shape(b->value, {1, W.n(), 1, 1}, "conv2d bias");
    const int n = X.n(), cin = X.c(), h = X.h(), wd = X.w(), cout = W.n();
    const Eigen::Index hw = Eigen::Index(h) * wd;
    Tensor out(n, cout, h, wd);
    const CMapR wm(W.data.data(), cout, Eigen::Index(cin) * k * k);
    RowMat cols;
    for (int s = 0; s < n; ++s) {
        MapR o(out.ptr(s), cout, hw);
        if (k == 1) {
            o.noalias() = wm * CMapR(X.ptr(s), cin, hw);
        } else {
            im2col(X.ptr(s), cin, h, wd, k, dilation, cols);
            o.noalias() = wm * cols;
        }
        if (b)
            o.colwise() += Eigen::Map<const Eigen::VectorXd>(b->value.data.data(), cout);
    }
    std::vector<Var> parents{x, w};
    if (b)
        parents.push_back(b);
    return make_node(std::move(out), parents, [x, w, b, dilation, k](Node& self) {
        const Tensor& X = x->value;
        const Tensor& W = w->value;
        const int n = X.n(), cin = X.c(), h = X.h(), wd = X.w(), cout = W.n();
        const Eigen::Index hw = Eigen::Index(h) * wd;
        const CMapR wm(W.data.data(), cout, Eigen::Index(cin) * k * k);
        RowMat cols, dcols;
        for (int s = 0; s < n; ++s) {
            const CMapR go(self.grad.ptr(s), cout, hw);
            if (w->requires_grad || x->requires_grad) {
                if (k == 1) {
                    if (w->requires_grad)
                        MapR(w->grad_buffer().data.data(), cout, cin).noalias() += go * CMapR(X.ptr(s), cin, hw).transpose();
                    if (x->requires_grad)
                        MapR(x->grad_buffer().ptr(s), cin, hw).noalias() += wm.transpose() * go;
                } else {
                    if (w->requires_grad) {
                        im2col(X.ptr(s), cin, h, wd, k, dilation, cols);
                        MapR(w->grad_buffer().data.data(), cout, Eigen::Index(cin) * k * k).noalias() += go * cols.transpose();
                    }
                    if (x->requires_grad) {
                        dcols.noalias() = wm.transpose() * go;
                        col2im_add(dcols, cin, h, wd, k, dilation, x->grad_buffer().ptr(s));
                    }
                }
            }
            if (b && b->requires_grad)
                Eigen::Map<Eigen::VectorXd>(b->grad_buffer().data.data(), cout) += go.rowwise().sum();
        }
    });
}

Var depthwise_conv2d(const Var& x, const Var& w, const Var& b, int dilation)
{
    const Tensor& X = x->value;
    const Tensor& W = w->value;
    const int k = W.h();
    if (W.n() != X.c() || W.c() != 1 || W.w() != k || k % 2 == 0)
        throw ValidationError("depthwise_conv2d: weight must be C x 1 x k x k with odd k");
    if (b)
        require_shape(b->value, {1, X.c(), 1, 1}, "depthwise_conv2d bias");
    const int n = X.n(), ch = X.c(), h = X.h(), wd = X.w(), half = k / 2;
    Tensor out(n, ch, h, wd);
    for (int s = 0; s < n; ++s) {
        for (int c = 0; c < ch; ++c) {
            const double* in = X.ptr(s, c);
            double* o = out.ptr(s, c);
            const double bias = b ? b->value.data(c) : 0.0;
            std::fill(o, o + Eigen::Index(h) * wd, bias);
            for (int ky = 0; ky < k; ++ky) {
                const int dy = (ky - half) * dilation;
                for (int kx = 0; kx < k; ++kx) {
                    const int dx = (kx - half) * dilation;
                    const double wv = W.data((Eigen::Index(c) * k + ky) * k + kx);
                    const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
                    for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
                        const double* src = in + Eigen::Index(y + dy) * wd + dx;
                        double* dst = o + Eigen::Index(y) * wd;
                        for (int xx = x0; xx < x1; ++xx)
                            dst[xx] += wv * src[xx];
                    }
                }
            }
        }
    }
    std::vector<Var> parents{x, w};
    if (b)
        parents.push_back(b);
    return make_node(std::move(out), parents, [x, w, b, dilation, k](Node& self) {
        const Tensor& X = x->value;
        const Tensor& W = w->value;
        const int n = X.n(), ch = X.c(), h = X.h(), wd = X.w(), half = k / 2;
        for (int s = 0; s < n; ++s) {
            for (int c = 0; c < ch; ++c) {
                const double* in = X.ptr(s, c);
                const double* go = self.grad.ptr(s, c);
                double* gx = x->requires_grad ? x->grad_buffer().ptr(s, c) : nullptr;
                double* gw = w->requires_grad ? w->grad_buffer().data.data() + Eigen::Index(c) * k * k : nullptr;
                for (int ky = 0; ky < k; ++ky) {
                    const int dy = (ky - half) * dilation;
                    for (int kx = 0; kx < k; ++kx) {
                        const int dx = (kx - half) * dilation;
                        const double wv = W.data((Eigen::Index(c) * k + ky) * k + kx);
                        const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
                        double acc = 0.0;
                        for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
                            const Eigen::Index src = Eigen::Index(y + dy) * wd + dx;
                            const double* g = go + Eigen::Index(y) * wd;
                            for (int xx = x0; xx < x1; ++xx) {
                                acc += g[xx] * in[src + xx];
                                if (gx)
                                    gx[src + xx] += wv * g[xx];
                            }
                        }
                        if (gw)
                            gw[ky * k + kx] += acc;
                    }
                }
                if (b && b->requires_grad) {
                    double sg = 0.0;
                    for (Eigen::Index i = 0; i < Eigen::Index(h) * wd; ++i)
                        sg += go[i];
                    b->grad_buffer().data(c) += sg;
                }
            }
        }
    });
}

Var add(const Var& a, const Var& b)
{
    require_same(a->value, b->value, "add");
    Tensor out = a->value;
    out.data += b->value.data;
    return make_node(std::move(out), {a, b}, [a, b](Node& self) {
        if (a->requires_grad)
            a->grad_buffer().data += self.grad.data;
        if (b->requires_grad)
            b->grad_buffer().data += self.grad.data;
    });
}

Var sub(const Var& a, const Var& b)
{
    require_same(a->value, b->value, "sub");
    Tensor out = a->value;
    out.data -= b->value.data;
    return make_node(std::move(out), {a, b}, [a, b](Node& self) {
        if (a->requires_grad)
            a->grad_buffer().data += self.grad.data;
        if (b->requires_grad)
            b->grad_buffer().data -= self.grad.data;
    });
}

Var mul(const Var& a, const Var& b)
{
    require_same(a->value, b->value, "mul");
    Tensor out = a->value;
    out.data.array() *= b->value.data.array();
    return make_node(std::move(out), {a, b}, [a, b](Node& self) {
        if (a->requires_grad)
            a->grad_buffer().data.array() += self.grad.data.array() * b->value.data.array();
        if (b->requires_grad)
            b->grad_buffer().data.array() += self.grad.data.array() * a->value.data.array();
    });
}

Var affine(const Var& a, double scale, double shift)
{
    Tensor out = a->value;
    out.data = (scale * out.data.array() + shift).matrix();
    return make_node(std::move(out), {a}, [a, scale](Node& self) { a->grad_buffer().data += scale * self.grad.data; });
}

Var mul_channel(const Var& x, const Var& s)
{
    const Tensor& X = x->value;
    require_shape(s->value, {X.n(), X.c(), 1, 1}, "mul_channel scale");
    Tensor out = X;
    for (int n = 0; n < X.n(); ++n)
        for (int c = 0; c < X.c(); ++c)
            Eigen::Map<Eigen::VectorXd>(out.ptr(n, c), X.plane()) *= s->value.at(n, c, 0, 0);
    return make_node(std::move(out), {x, s}, [x, s](Node& self) {
        const Tensor& X = x->value;
        for (int n = 0; n < X.n(); ++n) {
            for (int c = 0; c < X.c(); ++c) {
                const Eigen::Map<const Eigen::VectorXd> g(self.grad.ptr(n, c), X.plane());
                if (x->requires_grad)
                    Eigen::Map<Eigen::VectorXd>(x->grad_buffer().ptr(n, c), X.plane()) += s->value.at(n, c, 0, 0) * g;
                if (s->requires_grad)
                    s->grad_buffer().at(n, c, 0, 0) += g.dot(Eigen::Map<const Eigen::VectorXd>(X.ptr(n, c), X.plane()));
            }
        }
    });
}

Var expand(const Var& x, int h, int w)
{
    const Tensor& X = x->value;
    if (X.h() != 1 || X.w() != 1)
        throw ValidationError("expand: input must be N x C x 1 x 1");
    Tensor out(X.n(), X.c(), h, w);
    for (int n = 0; n < X.n(); ++n)
        for (int c = 0; c < X.c(); ++c)
            std::fill(out.ptr(n, c), out.ptr(n, c) + out.plane(), X.at(n, c, 0, 0));
    return make_node(std::move(out), {x}, [x](Node& self) {
        for (int n = 0; n < self.value.n(); ++n)
            for (int c = 0; c < self.value.c(); ++c)
                x->grad_buffer().at(n, c, 0, 0) += Eigen::Map<const Eigen::VectorXd>(self.grad.ptr(n, c), self.value.plane()).sum();
    });
}

Var concat(const std::vector<Var>& xs)
{
    if (xs.empty())
        throw ValidationError("concat: no inputs");
    const Tensor& f = xs.front()->value;
    int channels = 0;
    for (const auto& v : xs) {
        if (v->value.n() != f.n() || v->value.h() != f.h() || v->value.w() != f.w())
            throw ValidationError("concat: spatial or batch sizes differ: " + v->value.shape_string() + " vs " + f.shape_string());
        channels += v->value.c();
    }
    Tensor out(f.n(), channels, f.h(), f.w());
    for (int n = 0; n < f.n(); ++n) {
        int offset = 0;
        for (const auto& v : xs) {
            std::memcpy(out.ptr(n, offset), v->value.ptr(n), sizeof(double) * size_t(v->value.sample_size()));
            offset += v->value.c();
        }
    }
    return make_node(std::move(out), xs, [xs](Node& self) {
        for (int n = 0; n < self.value.n(); ++n) {
            int offset = 0;
            for (const auto& v : xs) {
                if (v->requires_grad)
                    Eigen::Map<Eigen::VectorXd>(v->grad_buffer().ptr(n), v->value.sample_size())
                        += Eigen::Map<const Eigen::VectorXd>(self.grad.ptr(n, offset), v->value.sample_size());
                offset += v->value.c();
            }
        }
    });
}

Var slice_channels(const Var& x, int begin, int end)
{
    const Tensor& X = x->value;
    if (begin < 0 || end > X.c() || begin >= end)
        throw ValidationError("slice_channels: invalid channel range");
    Tensor out(X.n(), end - begin, X.h(), X.w());
    for (int n = 0; n < X.n(); ++n)
        std::memcpy(out.ptr(n), X.ptr(n, begin), sizeof(double) * size_t(out.sample_size()));
    return make_node(std::move(out), {x}, [x, begin](Node& self) {
        for (int n = 0; n < self.value.n(); ++n)
            Eigen::Map<Eigen::VectorXd>(x->grad_buffer().ptr(n, begin), self.value.sample_size())
                += Eigen::Map<const Eigen::VectorXd>(self.grad.ptr(n), self.value.sample_size());
    });
}

Var silu(const Var& x)
{
    return unary(
        x, [](double v) { return v / (1.0 + std::exp(-v)); },
        [](double v, double) {
            const double s = 1.0 / (1.0 + std::exp(-v));
            return s * (1.0 + v * (1.0 - s));
        });
}

Var sigmoid(const Var& x)
{
    return unary(
        x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double, double y) { return y * (1.0 - y); });
}

Var max_pool(const Var& x, int k)
{
    const Tensor& X = x->value;
    if (k < 1 || X.h() % k || X.w() % k)
        throw ValidationError("max_pool: spatial size " + X.shape_string() + " not divisible by " + std::to_string(k));
    if (k == 1)
        return x;
    const int oh = X.h() / k, ow = X.w() / k;
    Tensor out(X.n(), X.c(), oh, ow);
    auto arg = std::make_shared<std::vector<Eigen::Index>>(size_t(out.size()));
    Eigen::Index o = 0;
    for (int n = 0; n < X.n(); ++n) {
        for (int c = 0; c < X.c(); ++c) {
            const double* in = X.ptr(n, c);
            for (int y = 0; y < oh; ++y) {
                for (int xx = 0; xx < ow; ++xx, ++o) {
                    double best = -std::numeric_limits<double>::infinity();
                    Eigen::Index where = 0;
                    for (int dy = 0; dy < k; ++dy) {
                        for (int dx = 0; dx < k; ++dx) {
                            const Eigen::Index i = Eigen::Index(y * k + dy) * X.w() + xx * k + dx;
                            if (in[i] > best || std::isnan(in[i])) {
                                best = in[i];
                                where = i;
                            }
                        }
                    }
                    out.data(o) = best;
                    (*arg)[size_t(o)] = (Eigen::Index(n) * X.c() + c) * X.plane() + where;
                }
            }
        }
    }
    return make_node(std::move(out), {x}, [x, arg](Node& self) {
        auto& g = x->grad_buffer().data;
        for (Eigen::Index i = 0; i < self.grad.size(); ++i)
            g((*arg)[size_t(i)]) += self.grad.data(i);
    });
}

Var global_max(const Var& x)
{
    const Tensor& X = x->value;
    Tensor out(X.n(), X.c(), 1, 1);
    auto arg = std::make_shared<std::vector<Eigen::Index>>(size_t(out.size()));
    for (int n = 0; n < X.n(); ++n) {
        for (int c = 0; c < X.c(); ++c) {
            Eigen::Index where = 0;
            out.at(n, c, 0, 0) = Eigen::Map<const Eigen::VectorXd>(X.ptr(n, c), X.plane()).maxCoeff(&where);
            (*arg)[size_t(n * X.c() + c)] = (Eigen::Index(n) * X.c() + c) * X.plane() + where;
        }
    }
    return make_node(std::move(out), {x}, [x, arg](Node& self) {
        auto& g = x->grad_buffer().data;
        for (Eigen::Index i = 0; i < self.grad.size(); ++i)
            g((*arg)[size_t(i)]) += self.grad.data(i);
    });
}

Var upsample_nearest2(const Var& x)
{
    const Tensor& X = x->value;
    Tensor out(X.n(), X.c(), 2 * X.h(), 2 * X.w());
    for (int n = 0; n < X.n(); ++n)
        for (int c = 0; c < X.c(); ++c)
            for (int y = 0; y < out.h(); ++y)
                for (int xx = 0; xx < out.w(); ++xx)
                    out.at(n, c, y, xx) = X.at(n, c, y / 2, xx / 2);
    return make_node(std::move(out), {x}, [x](Node& self) {
        Tensor& g = x->grad_buffer();
        for (int n = 0; n < self.value.n(); ++n)
            for (int c = 0; c < self.value.c(); ++c)
                for (int y = 0; y < self.value.h(); ++y)
                    for (int xx = 0; xx < self.value.w(); ++xx)
                        g.at(n, c, y / 2, xx / 2) += self.grad.at(n, c, y, xx);
    });
}

Var upsample_bilinear2(const Var& x)
{
    const Tensor& X = x->value;
    const auto ty = std::make_shared<Taps>(upsample_taps(X.h()));
    const auto tx = std::make_shared<Taps>(upsample_taps(X.w()));
    Tensor out(X.n(), X.c(), 2 * X.h(), 2 * X.w());
    for (int n = 0; n < X.n(); ++n) {
        for (int c = 0; c < X.c(); ++c) {
            for (int y = 0; y < out.h(); ++y) {
                const int a = ty->i0[size_t(y)], b = ty->i1[size_t(y)];
                const double fy = ty->f[size_t(y)];
                for (int xx = 0; xx < out.w(); ++xx) {
                    const int l = tx->i0[size_t(xx)], r = tx->i1[size_t(xx)];
                    const double fx = tx->f[size_t(xx)];
                    out.at(n, c, y, xx) = (1 - fy) * ((1 - fx) * X.at(n, c, a, l) + fx * X.at(n, c, a, r))
                                          + fy * ((1 - fx) * X.at(n, c, b, l) + fx * X.at(n, c, b, r));
                }
            }
        }
    }
    return make_node(std::move(out), {x}, [x, ty, tx](Node& self) {
        Tensor& g = x->grad_buffer();
        for (int n = 0; n < self.value.n(); ++n) {
            for (int c = 0; c < self.value.c(); ++c) {
                for (int y = 0; y < self.value.h(); ++y) {
                    const int a = ty->i0[size_t(y)], b = ty->i1[size_t(y)];
                    const double fy = ty->f[size_t(y)];
                    for (int xx = 0; xx < self.value.w(); ++xx) {
                        const int l = tx->i0[size_t(xx)], r = tx->i1[size_t(xx)];
                        const double fx = tx->f[size_t(xx)];
                        const double go = self.grad.at(n, c, y, xx);
                        g.at(n, c, a, l) += go * (1 - fy) * (1 - fx);
                        g.at(n, c, a, r) += go * (1 - fy) * fx;
                        g.at(n, c, b, l) += go * fy * (1 - fx);
                        g.at(n, c, b, r) += go * fy * fx;
                    }
                }
            }
        }
    });
}

Var spatial_softmax(const Var& x)
{
    const Tensor& X = x->value;
    Tensor out = X;
    for (int n = 0; n < X.n(); ++n) {
        for (int c = 0; c < X.c(); ++c) {
            Eigen::Map<Eigen::ArrayXd> p(out.ptr(n, c), X.plane());
            p = (p - p.maxCoeff()).exp();
            p /= p.sum();
        }
    }
    return make_node(std::move(out), {x}, [x](Node& self) {
        for (int n = 0; n < self.value.n(); ++n) {
            for (int c = 0; c < self.value.c(); ++c) {
                const Eigen::Map<const Eigen::ArrayXd> p(self.value.ptr(n, c), self.value.plane());
                const Eigen::Map<const Eigen::ArrayXd> g(self.grad.ptr(n, c), self.value.plane());
                Eigen::Map<Eigen::ArrayXd>(x->grad_buffer().ptr(n, c), self.value.plane()) += p * (g - (g * p).sum());
            }
        }
    });
}

Var attention_pool(const Var& f, const Var& p)
{
    const Tensor& F = f->value;
    require_shape(p->value, {F.n(), 1, F.h(), F.w()}, "attention_pool weights");
    Tensor out(F.n(), F.c(), 1, 1);
    for (int n = 0; n < F.n(); ++n) {
        const Eigen::Map<const Eigen::VectorXd> pw(p->value.ptr(n), F.plane());
        Eigen::Map<Eigen::VectorXd>(out.ptr(n), F.c()).noalias() = CMapR(F.ptr(n), F.c(), F.plane()) * pw;
    }
    return make_node(std::move(out), {f, p}, [f, p](Node& self) {
        const Tensor& F = f->value;
        for (int n = 0; n < F.n(); ++n) {
            const Eigen::Map<const Eigen::VectorXd> g(self.grad.ptr(n), F.c());
            const Eigen::Map<const Eigen::VectorXd> pw(p->value.ptr(n), F.plane());
            if (f->requires_grad)
                MapR(f->grad_buffer().ptr(n), F.c(), F.plane()).noalias() += g * pw.transpose();
            if (p->requires_grad)
                Eigen::Map<Eigen::VectorXd>(p->grad_buffer().ptr(n), F.plane()).noalias()
                    += CMapR(F.ptr(n), F.c(), F.plane()).transpose() * g;
        }
    });
}

Var channel_attention(const Var& q, const Var& k, const Var& v)
{
    require_same(q->value, k->value, "channel_attention");
    require_same(q->value, v->value, "channel_attention");
    const Tensor& Q = q->value;
    const int n = Q.n(), c = Q.c();
    const Eigen::Index hw = Q.plane();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hw));
    Tensor out = Tensor::zeros_like(Q);
    auto attn = std::make_shared<std::vector<RowMat>>(size_t(n));
    for (int s = 0; s < n; ++s) {
        RowMat a = scale * (CMapR(Q.ptr(s), c, hw) * CMapR(k->value.ptr(s), c, hw).transpose());
        for (Eigen::Index r = 0; r < c; ++r) {
            a.row(r).array() -= a.row(r).maxCoeff();
            a.row(r) = a.row(r).array().exp().matrix();
            a.row(r) /= a.row(r).sum();
        }
        MapR(out.ptr(s), c, hw).noalias() = a * CMapR(v->value.ptr(s), c, hw);
        (*attn)[size_t(s)] = std::move(a);
    }
    return make_node(std::move(out), {q, k, v}, [q, k, v, attn, scale](Node& self) {
        const int n = self.value.n(), c = self.value.c();
        const Eigen::Index hw = self.value.plane();
        for (int s = 0; s < n; ++s) {
            const RowMat& a = (*attn)[size_t(s)];
            const CMapR go(self.grad.ptr(s), c, hw);
            if (v->requires_grad)
                MapR(v->grad_buffer().ptr(s), c, hw).noalias() += a.transpose() * go;
            if (q->requires_grad || k->requires_grad) {
                const RowMat da = go * CMapR(v->value.ptr(s), c, hw).transpose();
                RowMat ds = a.cwiseProduct(da);
                const Eigen::VectorXd rs = ds.rowwise().sum();
                ds -= a.cwiseProduct(rs.replicate(1, c));
                ds *= scale;
                if (q->requires_grad)
                    MapR(q->grad_buffer().ptr(s), c, hw).noalias() += ds * CMapR(k->value.ptr(s), c, hw);
                if (k->requires_grad)
                    MapR(k->grad_buffer().ptr(s), c, hw).noalias() += ds.transpose() * CMapR(q->value.ptr(s), c, hw);
            }
        }
    });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps)
{
    const Tensor& X = x->value;
    if (groups < 1 || X.c() % groups)
        throw ValidationError("group_norm: channel count not divisible by the group count");
    require_shape(gamma->value, {1, X.c(), 1, 1}, "group_norm gamma");
    require_shape(beta->value, {1, X.c(), 1, 1}, "group_norm beta");
    const int cg = X.c() / groups;
    const Eigen::Index len = Eigen::Index(cg) * X.plane();
    auto xhat = std::make_shared<Tensor>(Tensor::zeros_like(X));
    auto inv = std::make_shared<std::vector<double>>(size_t(X.n() * groups));
    Tensor out = Tensor::zeros_like(X);
    for (int n = 0; n < X.n(); ++n) {
        for (int g = 0; g < groups; ++g) {
            const Eigen::Map<const Eigen::ArrayXd> in(X.ptr(n, g * cg), len);
            const double mu = in.mean();
            const double var = (in - mu).square().mean();
            const double is = 1.0 / std::sqrt(var + eps);
            (*inv)[size_t(n * groups + g)] = is;
            Eigen::Map<Eigen::ArrayXd>(xhat->ptr(n, g * cg), len) = (in - mu) * is;
        }
        for (int c = 0; c < X.c(); ++c)
            Eigen::Map<Eigen::ArrayXd>(out.ptr(n, c), X.plane())
                = gamma->value.data(c) * Eigen::Map<const Eigen::ArrayXd>(xhat->ptr(n, c), X.plane()) + beta->value.data(c);
    }
    return make_node(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, inv, groups, cg](Node& self) {
        const Tensor& X = x->value;
        const Eigen::Index plane = X.plane();
        const Eigen::Index len = Eigen::Index(cg) * plane;
        Eigen::ArrayXd dxh(len);
        for (int n = 0; n < X.n(); ++n) {
            for (int c = 0; c < X.c(); ++c) {
                const Eigen::Map<const Eigen::ArrayXd> g(self.grad.ptr(n, c), plane);
                const Eigen::Map<const Eigen::ArrayXd> xh(xhat->ptr(n, c), plane);
                if (gamma->requires_grad)
                    gamma->grad_buffer().data(c) += (g * xh).sum();
                if (beta->requires_grad)
                    beta->grad_buffer().data(c) += g.sum();
            }
            if (!x->requires_grad)
                continue;
            for (int gi = 0; gi < groups; ++gi) {
                for (int j = 0; j < cg; ++j) {
                    const int c = gi * cg + j;
                    dxh.segment(Eigen::Index(j) * plane, plane)
                        = gamma->value.data(c) * Eigen::Map<const Eigen::ArrayXd>(self.grad.ptr(n, c), plane);
                }
                const Eigen::Map<const Eigen::ArrayXd> xh(xhat->ptr(n, gi * cg), len);
                const double m1 = dxh.mean();
                const double m2 = (dxh * xh).mean();
                Eigen::Map<Eigen::ArrayXd>(x->grad_buffer().ptr(n, gi * cg), len)
                    += (*inv)[size_t(n * groups + gi)] * (dxh - m1 - xh * m2);
            }
        }
    });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, bool training)
{
    const Tensor& X = x->value;
    const int ch = X.c();
    require_shape(gamma->value, {1, ch, 1, 1}, "batch_norm gamma");
    require_shape(beta->value, {1, ch, 1, 1}, "batch_norm beta");
    require_shape(state.running_mean, {1, ch, 1, 1}, "batch_norm running mean");
    require_shape(state.running_var, {1, ch, 1, 1}, "batch_norm running var");
    const Eigen::Index plane = X.plane();
    const double count = static_cast<double>(X.n()) * plane;
    auto inv = std::make_shared<Eigen::VectorXd>(ch);
    auto xhat = std::make_shared<Tensor>(Tensor::zeros_like(X));
    Tensor out = Tensor::zeros_like(X);
    for (int c = 0; c < ch; ++c) {
        double mu, var;
        if (training) {
            double s = 0.0;
            for (int n = 0; n < X.n(); ++n)
                s += Eigen::Map<const Eigen::ArrayXd>(X.ptr(n, c), plane).sum();
            mu = s / count;
            double ss = 0.0;
            for (int n = 0; n < X.n(); ++n)
                ss += (Eigen::Map<const Eigen::ArrayXd>(X.ptr(n, c), plane) - mu).square().sum();
            var = ss / count;
            const double unbiased = count > 1 ? ss / (count - 1) : var;
            state.running_mean.data(c) = (1 - state.momentum) * state.running_mean.data(c) + state.momentum * mu;
            state.running_var.data(c) = (1 - state.momentum) * state.running_var.data(c) + state.momentum * unbiased;
        } else {
            mu = state.running_mean.data(c);
            var = state.running_var.data(c);
        }
        (*inv)(c) = 1.0 / std::sqrt(var + state.eps);
        for (int n = 0; n < X.n(); ++n) {
            Eigen::Map<Eigen::ArrayXd> xh(xhat->ptr(n, c), plane);
            xh = (Eigen::Map<const Eigen::ArrayXd>(X.ptr(n, c), plane) - mu) * (*inv)(c);
            Eigen::Map<Eigen::ArrayXd>(out.ptr(n, c), plane) = gamma->value.data(c) * xh + beta->value.data(c);
        }
    }
    return make_node(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, inv, training, count](Node& self) {
        const Tensor& X = x->value;
        const Eigen::Index plane = X.plane();
        for (int c = 0; c < X.c(); ++c) {
            double sg = 0.0, sgx = 0.0;
            for (int n = 0; n < X.n(); ++n) {
                const Eigen::Map<const Eigen::ArrayXd> g(self.grad.ptr(n, c), plane);
                sg += g.sum();
                sgx += (g * Eigen::Map<const Eigen::ArrayXd>(xhat->ptr(n, c), plane)).sum();
            }
            if (gamma->requires_grad)
                gamma->grad_buffer().data(c) += sgx;
            if (beta->requires_grad)
                beta->grad_buffer().data(c) += sg;
            if (!x->requires_grad)
                continue;
            const double gm = gamma->value.data(c);
            for (int n = 0; n < X.n(); ++n) {
                const Eigen::Map<const Eigen::ArrayXd> g(self.grad.ptr(n, c), plane);
                Eigen::Map<Eigen::ArrayXd> dx(x->grad_buffer().ptr(n, c), plane);
                if (training) {
                    const Eigen::Map<const Eigen::ArrayXd> xh(xhat->ptr(n, c), plane);
                    dx += gm * (*inv)(c) * (g - sg / count - xh * (sgx / count));
                } else {
                    dx += gm * (*inv)(c) * g;
                }
            }
        }
    });
}

Var warp(const Var& img, const Var& u)
{
    const Tensor& I = img->value;
    require_shape(u->value, {I.n(), 2, I.h(), I.w()}, "warp field");
    const int h = I.h(), w = I.w();
    Tensor out = Tensor::zeros_like(I);
    for (int n = 0; n < I.n(); ++n) {
        const double* ux = u->value.ptr(n, 0);
        const double* uy = u->value.ptr(n, 1);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const Eigen::Index p = Eigen::Index(y) * w + x;
                if (!std::isfinite(ux[p]) || !std::isfinite(uy[p])) {
                    for (int c = 0; c < I.c(); ++c)
                        out.ptr(n, c)[p] = std::numeric_limits<double>::quiet_NaN();
                    continue;
                }
                const double sy = std::clamp(y - uy[p], 0.0, double(h - 1));
                const double sx = std::clamp(x - ux[p], 0.0, double(w - 1));
                const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
                const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
                const double fy = sy - y0, fx = sx - x0;
                for (int c = 0; c < I.c(); ++c) {
                    const double* in = I.ptr(n, c);
                    out.ptr(n, c)[p] = (1 - fy) * ((1 - fx) * in[y0 * w + x0] + fx * in[y0 * w + x1])
                                       + fy * ((1 - fx) * in[y1 * w + x0] + fx * in[y1 * w + x1]);
                }
            }
        }
    }
    return make_node(std::move(out), {img, u}, [img, u](Node& self) {
        const Tensor& I = img->value;
        const int h = I.h(), w = I.w();
        for (int n = 0; n < I.n(); ++n) {
            const double* ux = u->value.ptr(n, 0);
            const double* uy = u->value.ptr(n, 1);
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const Eigen::Index p = Eigen::Index(y) * w + x;
                    if (!std::isfinite(ux[p]) || !std::isfinite(uy[p]))
                        continue;
                    const double ry = y - uy[p], rx = x - ux[p];
                    const bool in_y = ry > 0.0 && ry < h - 1;
                    const bool in_x = rx > 0.0 && rx < w - 1;
                    const double sy = std::clamp(ry, 0.0, double(h - 1));
                    const double sx = std::clamp(rx, 0.0, double(w - 1));
                    const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
                    const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
                    const double fy = sy - y0, fx = sx - x0;
                    double gux = 0.0, guy = 0.0;
                    for (int c = 0; c < I.c(); ++c) {
                        const double go = self.grad.ptr(n, c)[p];
                        if (go == 0.0)
                            continue;
                        const double* in = I.ptr(n, c);
                        const double a = in[y0 * w + x0], b = in[y0 * w + x1], cc = in[y1 * w + x0], d = in[y1 * w + x1];
                        if (img->requires_grad) {
                            double* g = img->grad_buffer().ptr(n, c);
                            g[y0 * w + x0] += go * (1 - fy) * (1 - fx);
                            g[y0 * w + x1] += go * (1 - fy) * fx;
                            g[y1 * w + x0] += go * fy * (1 - fx);
                            g[y1 * w + x1] += go * fy * fx;
                        }
                        // d out / d s, and s = x - u.
                        if (in_x)
                            gux -= go * ((1 - fy) * (b - a) + fy * (d - cc));
                        if (in_y)
                            guy -= go * ((1 - fx) * (cc - a) + fx * (d - b));
                    }
                    if (u->requires_grad) {
                        u->grad_buffer().ptr(n, 0)[p] += gux;
                        u->grad_buffer().ptr(n, 1)[p] += guy;
                    }
                }
            }
        }
    });
}

Var sum(const Var& x)
{
    return make_node(Tensor::scalar(x->value.data.sum()), {x},
                     [x](Node& self) { x->grad_buffer().data.array() += self.grad.data(0); });
}

Var mean(const Var& x)
{
    const double n = static_cast<double>(x->value.size());
    return make_node(Tensor::scalar(x->value.data.mean()), {x},
                     [x, n](Node& self) { x->grad_buffer().data.array() += self.grad.data(0) / n; });
}

Var complex_l1(const Var& a, const Var& b, const Tensor& mask)
{
    require_same(a->value, b->value, "complex_l1");
    const Tensor& A = a->value;
    if (A.c() % 2)
        throw ValidationError("complex_l1: channel count must be even (re/im pairs)");
    if (mask.c() != 1 || mask.h() != A.h() || mask.w() != A.w() || (mask.n() != 1 && mask.n() != A.n()))
        throw ValidationError("complex_l1: mask shape " + mask.shape_string() + " incompatible with " + A.shape_string());
    const Eigen::Index plane = A.plane();
    auto dir = std::make_shared<Tensor>(Tensor::zeros_like(A));
    double total = 0.0;
    for (int n = 0; n < A.n(); ++n) {
        const double* m = mask.ptr(mask.n() == 1 ? 0 : n);
        for (int c = 0; c < A.c(); c += 2) {
            const double *ar = A.ptr(n, c), *ai = A.ptr(n, c + 1);
            const double *br = b->value.ptr(n, c), *bi = b->value.ptr(n, c + 1);
            double *dr = dir->ptr(n, c), *di = dir->ptr(n, c + 1);
            for (Eigen::Index p = 0; p < plane; ++p) {
                if (m[p] == 0.0)
                    continue;
                const double xr = ar[p] - br[p], xi = ai[p] - bi[p];
                const double mag = std::sqrt(xr * xr + xi * xi);
                total += m[p] * mag;
                if (mag > 0.0) {
                    dr[p] = m[p] * xr / mag;
                    di[p] = m[p] * xi / mag;
                }
            }
        }
    }
    return make_node(Tensor::scalar(total), {a, b}, [a, b, dir](Node& self) {
        const double g = self.grad.data(0);
        if (a->requires_grad)
            a->grad_buffer().data += g * dir->data;
        if (b->requires_grad)
            b->grad_buffer().data -= g * dir->data;
    });
}

Var kspace_magnitude_l1(const Tensor& fix_magnitude, const Var& moving, double eps)
{
    const Tensor& M = moving->value;
    if (M.c() % 2 || fix_magnitude.c() * 2 != M.c() || fix_magnitude.n() != M.n() || fix_magnitude.h() != M.h()
        || fix_magnitude.w() != M.w())
        throw ValidationError("kspace_magnitude_l1: magnitude " + fix_magnitude.shape_string() + " incompatible with "
                              + M.shape_string());
    const int h = M.h(), w = M.w();
    // Per coil: d L / d B as a complex grid, pulled back through the unitary FFT.
    auto grad_img = std::make_shared<Tensor>(Tensor::zeros_like(M));
    double total = 0.0;
    CGrid z(h, w);
    for (int n = 0; n < M.n(); ++n) {
        for (int c = 0; c < M.c() / 2; ++c) {
            const double *re = M.ptr(n, 2 * c), *im = M.ptr(n, 2 * c + 1);
            for (Eigen::Index p = 0; p < Eigen::Index(h) * w; ++p)
                z.data()[p] = {re[p], im[p]};
            const CGrid k = fft2_centered(z);
            CGrid gk(h, w);
            const double* fm = fix_magnitude.ptr(n, c);
            for (Eigen::Index p = 0; p < k.size(); ++p) {
                const double mag = std::sqrt(std::norm(k.data()[p]) + eps * eps);
                const double diff = fm[p] - mag;
                total += std::abs(diff);
                const double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
                gk.data()[p] = -s * k.data()[p] / mag;
            }
            const CGrid gz = ifft2_centered(gk);
            double *gr = grad_img->ptr(n, 2 * c), *gi = grad_img->ptr(n, 2 * c + 1);
            for (Eigen::Index p = 0; p < gz.size(); ++p) {
                gr[p] = gz.data()[p].real();
                gi[p] = gz.data()[p].imag();
            }
        }
    }
    return make_node(Tensor::scalar(total), {moving},
                     [moving, grad_img](Node& self) { moving->grad_buffer().data += self.grad.data(0) * grad_img->data; });
}

Var forward_difference_l1(const Var& u)
{
    const Tensor& U = u->value;
    const int h = U.h(), w = U.w();
    auto sg = std::make_shared<Tensor>(Tensor::zeros_like(U));
    double total = 0.0;
    auto sign = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
    for (int n = 0; n < U.n(); ++n) {
        for (int c = 0; c < U.c(); ++c) {
            const double* in = U.ptr(n, c);
            double* g = sg->ptr(n, c);
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const Eigen::Index p = Eigen::Index(y) * w + x;
                    if (x + 1 < w) {
                        const double d = in[p + 1] - in[p];
                        total += std::abs(d);
                        g[p + 1] += sign(d);
                        g[p] -= sign(d);
                    }
                    if (y + 1 < h) {
                        const double d = in[p + w] - in[p];
                        total += std::abs(d);
                        g[p + w] += sign(d);
                        g[p] -= sign(d);
                    }
                }
            }
        }
    }
    return make_node(Tensor::scalar(total), {u}, [u, sg](Node& self) { u->grad_buffer().data += self.grad.data(0) * sg->data; });
}

} // namespace lapanet::nn

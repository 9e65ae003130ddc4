#include "lapanet/nn/losses.hpp"

#include "lapanet/kspace.hpp"

#include <cmath>

namespace lapanet::nn {

void LossWeights::validate() const
{
    if (!(alpha >= 0.0 && beta >= 0.0 && gamma >= 0.0))
        throw ValidationError("loss weights must be non-negative");
}

Tensor coil_tensor(const MultiCoil& images)
{
    images.validate();
    const int nc = images.count();
    Tensor t(1, 2 * nc, static_cast<int>(images.rows()), static_cast<int>(images.cols()));
    for (int c = 0; c < nc; ++c) {
        const cd* p = images.coils[size_t(c)].data();
        double* re = t.ptr(0, 2 * c);
        double* im = t.ptr(0, 2 * c + 1);
        for (Eigen::Index i = 0; i < t.plane(); ++i) {
            re[i] = p[i].real();
            im[i] = p[i].imag();
        }
    }
    return t;
}

MultiCoil coil_images_from(const Tensor& t, int sample)
{
    if (t.c() % 2 || sample < 0 || sample >= t.n())
        throw ValidationError("coil_images_from: expects interleaved re/im channels and a valid sample index");
    MultiCoil m(t.c() / 2, t.h(), t.w());
    for (int c = 0; c < m.count(); ++c) {
        cd* p = m.coils[size_t(c)].data();
        const double* re = t.ptr(sample, 2 * c);
        const double* im = t.ptr(sample, 2 * c + 1);
        for (Eigen::Index i = 0; i < t.plane(); ++i)
            p[i] = {re[i], im[i]};
    }
    return m;
}

Tensor mask_tensor(const Mask& m)
{
    Tensor t(1, 1, static_cast<int>(m.rows()), static_cast<int>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i)
        t.data(i) = m.data()[i] ? 1.0 : 0.0;
    return t;
}

Tensor kspace_magnitude(const Tensor& images, double eps)
{
    if (images.c() % 2)
        throw ValidationError("kspace_magnitude: expects interleaved re/im channels");
    Tensor out(images.n(), images.c() / 2, images.h(), images.w());
    for (int n = 0; n < images.n(); ++n) {
        const MultiCoil k = fft2_centered(coil_images_from(images, n));
        for (int c = 0; c < k.count(); ++c) {
            const cd* p = k.coils[size_t(c)].data();
            double* o = out.ptr(n, c);
            for (Eigen::Index i = 0; i < out.plane(); ++i)
                o[i] = std::sqrt(std::norm(p[i]) + eps * eps);
        }
    }
    return out;
}

namespace {

Var batch_mean(const Var& total, int n)
{
    return affine(total, 1.0 / n);
}

void require_images(const Tensor& fix, const Tensor& mov, const char* what)
{
    if (!fix.same_shape(mov))
        throw ValidationError(std::string(what) + ": fixed " + fix.shape_string() + " and moving " + mov.shape_string()
                              + " differ");
}

} // namespace

Var photometric_loss(const Tensor& fix, const Tensor& mov, const Var& u, const Tensor& box)
{
    require_images(fix, mov, "photometric_loss");
    require_shape(u->value, {fix.n(), 2, fix.h(), fix.w()}, "photometric_loss field");
    const Var warped = warp(constant(mov), u);
    return batch_mean(complex_l1(constant(fix), warped, box), fix.n());
}

Var kdc_loss(const Tensor& fix_magnitude, const Tensor& mov, const Var& u, double eps)
{
    require_shape(u->value, {mov.n(), 2, mov.h(), mov.w()}, "kdc_loss field");
    return batch_mean(kspace_magnitude_l1(fix_magnitude, warp(constant(mov), u), eps), mov.n());
}

Var smoothness_loss(const Var& u)
{
    if (u->value.c() != 2)
        throw ValidationError("smoothness_loss: field must have two channels");
    return batch_mean(forward_difference_l1(u), u->value.n());
}

Var translational_loss(const Tensor& fix, const Tensor& mov, const Var& ut, const Tensor& box)
{
    require_shape(ut->value, {fix.n(), 2, 1, 1}, "translational_loss u_t");
    return photometric_loss(fix, mov, expand(ut, fix.h(), fix.w()), box);
}

LossTerms total_loss(const ModelOutput& out, const Tensor& fix, const Tensor& mov, const Tensor& box,
                     const LossWeights& weights)
{
    weights.validate();
    for (const auto& u : out.u)
        if (!u)
            throw ValidationError("total_loss: missing level estimate");
    if (!out.ut)
        throw ValidationError("total_loss: missing translation estimate");
    LossTerms t;
    const Tensor fix_mag = kspace_magnitude(fix);
    const Var tp = translational_loss(fix, mov, out.ut, box);
    t.tphoto = tp->value.item();
    Var total = affine(tp, weights.alpha);
    for (size_t i = 0; i < 4; ++i) {
        const Var full = upscale_to(out.u[i], fix.h());
        const Var ph = photometric_loss(fix, mov, full, box);
        const Var kd = kdc_loss(fix_mag, mov, full);
        const Var sm = smoothness_loss(out.u[i]);
        t.photo[i] = ph->value.item();
        t.kdc[i] = kd->value.item();
        t.smooth[i] = sm->value.item();
        total = add(total, add(ph, add(affine(kd, weights.beta), affine(sm, weights.gamma))));
    }
    t.total = total;
    return t;
}

} // namespace lapanet::nn

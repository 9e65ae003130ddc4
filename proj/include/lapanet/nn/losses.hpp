#pragma once

#include "lapanet/metrics.hpp"
#include "lapanet/nn/model.hpp"
#include "lapanet/types.hpp"

#include <array>

namespace lapanet::nn {

struct LossWeights {
    double alpha = 0.5;    ///< global translational photometric term
    double beta = 0.05;    ///< k-space data consistency
    double gamma = 0.01;   ///< smoothness
    void validate() const;
};

/// Coil images as a (1, 2 n_c, H, W) tensor with interleaved real/imaginary channels.
Tensor coil_tensor(const MultiCoil& images);
MultiCoil coil_images_from(const Tensor& t, int sample = 0);
/// Binary mask as (1, 1, H, W).
Tensor mask_tensor(const Mask& m);
/// Guarded magnitude sqrt(re^2 + im^2 + eps^2) of the unitary centered FFT of every coil: (N, n_c, H, W).
Tensor kspace_magnitude(const Tensor& images, double eps = 1e-8);

// Every loss is a sum over the pixels of each sample, averaged over the batch.
// Fields are (N, 2, H, W) at image resolution with channels (u_x, u_y).

/// L1 norm over the box of |I_fix - T(I_mov, u)|, complex difference magnitude per coil.
Var photometric_loss(const Tensor& fix, const Tensor& mov, const Var& u, const Tensor& box);
/// L1 norm over k-space of |F(I_fix)| - |F(T(I_mov, u))| per coil; fix_magnitude from kspace_magnitude.
Var kdc_loss(const Tensor& fix_magnitude, const Tensor& mov, const Var& u, double eps = 1e-8);
/// L1 norm of the forward differences of both field components.
Var smoothness_loss(const Var& u);
/// photometric_loss with the constant field u_t (N, 2, 1, 1).
Var translational_loss(const Tensor& fix, const Tensor& mov, const Var& ut, const Tensor& box);

struct LossTerms {
    Var total;
    double tphoto = 0.0;
    std::array<double, 4> photo{};
    std::array<double, 4> kdc{};
    std::array<double, 4> smooth{};
};

/// alpha * L_Tphoto + sum_i (L_photo,i + beta * L_KDC,i + gamma * L_smooth,i), with
/// every u_i upscaled to full resolution for the photometric and k-space terms.
LossTerms total_loss(const ModelOutput& out, const Tensor& fix, const Tensor& mov, const Tensor& box,
                     const LossWeights& weights);

} // namespace lapanet::nn

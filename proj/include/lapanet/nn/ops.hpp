#pragma once

#include "lapanet/nn/autograd.hpp"

#include <vector>

namespace lapanet::nn {

// Convolutions use "same" zero padding: dilation * (k - 1) / 2 on each side.

/// w: Cout x Cin x k x k (k odd); b: 1 x Cout x 1 x 1 or null.
Var conv2d(const Var& x, const Var& w, const Var& b, int dilation = 1);
/// w: C x 1 x k x k, one filter per channel.
Var depthwise_conv2d(const Var& x, const Var& w, const Var& b, int dilation = 1);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// scale * a + shift
Var affine(const Var& a, double scale, double shift = 0.0);
/// x (N,C,H,W) times s (N,C,1,1).
Var mul_channel(const Var& x, const Var& s);
/// Broadcast (N,C,1,1) to (N,C,h,w).
Var expand(const Var& x, int h, int w);

Var concat(const std::vector<Var>& xs);
Var slice_channels(const Var& x, int begin, int end);

Var silu(const Var& x);
Var sigmoid(const Var& x);

/// Non-overlapping k x k max pooling (stride k); H and W must be divisible by k.
Var max_pool(const Var& x, int k);
/// Max over all spatial positions: (N,C,1,1).
Var global_max(const Var& x);
Var upsample_nearest2(const Var& x);
/// x2 bilinear upsampling with half-pixel centers and border clamping.
Var upsample_bilinear2(const Var& x);

/// Softmax over the spatial positions of each (n, c) plane.
Var spatial_softmax(const Var& x);
/// sum_hw p(n,0,hw) * f(n,c,hw) -> (N,C,1,1); p has one channel.
Var attention_pool(const Var& f, const Var& p);
/// Channel self-attention: A = softmax_rows(Q K^T / sqrt(HW)) (C x C), out = A V.
Var channel_attention(const Var& q, const Var& k, const Var& v);

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps = 1e-5);

/// Running statistics live outside the graph and are updated in training mode.
struct BatchNormState {
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.1;
    double eps = 1e-5;
};
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, bool training);

/// out(y, x) = img(y - u_y, x - u_x) per channel, bilinear with border clamping.
/// u has two channels (u_x, u_y).
Var warp(const Var& img, const Var& u);

Var sum(const Var& x);
Var mean(const Var& x);

/// sum over masked pixels of |a - b| where channels (2i, 2i+1) hold the real
/// and imaginary part of complex channel i. mask: (N or 1, 1, H, W).
Var complex_l1(const Var& a, const Var& b, const Tensor& mask);

/// sum over coils and k-space locations of | |F(fix)| - |F(moving)| | with
/// a guarded magnitude sqrt(re^2 + im^2 + eps^2). fix_magnitude holds |F(fix)|
/// per coil (N, n_c, H, W); moving has 2 n_c interleaved re/im channels.
Var kspace_magnitude_l1(const Tensor& fix_magnitude, const Var& moving, double eps = 1e-8);

/// Sum of absolute forward differences along x and y of every channel.
Var forward_difference_l1(const Var& u);

} // namespace lapanet::nn

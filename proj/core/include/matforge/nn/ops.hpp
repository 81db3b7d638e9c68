// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "matforge/nn/autograd.hpp"

namespace matforge::nn {

// Image activations are [N, H, W, C]; vectors are [N, D].

/// Stride-1 'same' convolution. w: [k, k, Cin, Cout], b: [Cout], k odd.
Var conv2d(const Var& x, const Var& w, const Var& b);

/// 3x3 input head over the latent and an optional condition stack.
/// w: [3, 3, Cy + Cc, Cout]. The condition contribution is computed as a
/// separate product and added last, so zero condition weights reproduce the
/// latent-only result bit for bit.
Var input_head_conv(const Var& latent, const Var& cond, const Var& w, const Var& b);

/// Depth-wise 'same' convolution. w: [k, k, C], b: [C].
Var depthwise_conv2d(const Var& x, const Var& w, const Var& b);

/// Group normalization over (H, W, C / groups). gamma, beta: [C].
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps = 1e-5);

Var gelu(const Var& x); // exact erf form
Var silu(const Var& x);

Var add(const Var& a, const Var& b);

/// x: [N, H, W, C] plus a per-sample channel bias [N, C].
Var add_channel_bias(const Var& x, const Var& bias);

/// x: [N, D], w: [D, E], b: [E].
Var linear(const Var& x, const Var& w, const Var& b);

Var concat_channels(const Var& a, const Var& b);
Var avg_pool2(const Var& x);
Var upsample_nearest2(const Var& x);

/// Multi-head softmax attention over the H*W tokens of each sample.
/// qkv: [N, H, W, 3C] laid out as (q heads | k heads | v heads). Returns [N, H, W, C].
Var self_attention(const Var& qkv, int heads);

/// Mean squared error against a constant target; returns a [1] tensor.
Var mse_loss(const Var& pred, const Tensor& target);

} // namespace matforge::nn

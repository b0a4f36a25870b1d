#pragma once

#include "oavm/tensor.hpp"

namespace oavm {

/// 3x3 (or 1x1) same-padded convolution over [H,W,C] maps, stride 1.
/// Weight layout [kh, kw, cin, cout]; bias optional.
struct Conv2d {
    Tensor weight;
    Tensor bias;       // [cout], all-zero when has_bias is false
    bool has_bias = false;

    int ksize() const { return weight.dim(0); }
    int in_channels() const { return weight.dim(2); }
    int out_channels() const { return weight.dim(3); }

    static Conv2d seeded(int ks, int cin, int cout, Rng& rng, bool bias = false);
};

Tensor conv2d(const Conv2d& conv, const Tensor& x);

/// 2x2 average pool, stride 2. Input dims must be even.
Tensor avg_pool2(const Tensor& x);

/// 2x nearest-neighbour upsample.
Tensor upsample_nearest2(const Tensor& x);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
double sigmoid(double x);

/// Per-channel standardization with learned scale/shift, evaluated with
/// running statistics frozen at their init values (mean 0, var 1).
struct FrozenNorm {
    Tensor gamma;  // [C], init 1
    Tensor beta;   // [C], init 0
    double eps = 1e-5;

    static FrozenNorm init(int channels);
};

Tensor frozen_norm(const FrozenNorm& norm, const Tensor& x);

/// Two-layer feed-forward block with ReLU in between, applied over the last
/// axis (rows are tokens).
struct Mlp {
    LinearLayer fc1;
    LinearLayer fc2;

    static Mlp seeded(int dim, int hidden, Rng& rng);
};

Tensor mlp_forward(const Mlp& m, const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);

}  // namespace oavm

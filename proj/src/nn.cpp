#include "oavm/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace oavm {

Conv2d Conv2d::seeded(int ks, int cin, int cout, Rng& rng, bool bias) {
    if (ks % 2 == 0) throw std::invalid_argument("Conv2d: kernel size must be odd");
    Conv2d conv;
    conv.weight = Tensor({ks, ks, cin, cout});
    conv.bias = Tensor({cout});
    conv.has_bias = bias;
    const double bound = 1.0 / std::sqrt(static_cast<double>(ks) * ks * cin);
    for (std::size_t i = 0; i < conv.weight.numel(); ++i) {
        conv.weight[i] = rng.uniform(-bound, bound);
    }
    if (bias) {
        for (std::size_t i = 0; i < conv.bias.numel(); ++i) {
            conv.bias[i] = rng.uniform(-bound, bound);
        }
    }
    return conv;
}

Tensor conv2d(const Conv2d& conv, const Tensor& x) {
    if (x.rank() != 3) throw std::invalid_argument("conv2d: input must be [H,W,C]");
    const int h = x.dim(0), w = x.dim(1), cin = x.dim(2);
    if (cin != conv.in_channels()) {
        throw std::invalid_argument("conv2d: input has " + std::to_string(cin) +
                                    " channels, weight expects " +
                                    std::to_string(conv.in_channels()));
    }
    const int ks = conv.ksize();
    const int r = ks / 2;
    const int cout = conv.out_channels();
    Tensor out({h, w, cout});
    for (int y = 0; y < h; ++y) {
        for (int xx = 0; xx < w; ++xx) {
            double* orow = out.data() + (static_cast<std::size_t>(y) * w + xx) * cout;
            if (conv.has_bias) {
                for (int co = 0; co < cout; ++co) orow[co] = conv.bias[co];
            }
            for (int ky = 0; ky < ks; ++ky) {
                const int sy = y + ky - r;
                if (sy < 0 || sy >= h) continue;
                for (int kx = 0; kx < ks; ++kx) {
                    const int sx = xx + kx - r;
                    if (sx < 0 || sx >= w) continue;
                    const double* in_px = x.data() + (static_cast<std::size_t>(sy) * w + sx) * cin;
                    const double* wk =
                        conv.weight.data() +
                        ((static_cast<std::size_t>(ky) * ks + kx) * cin) * cout;
                    for (int ci = 0; ci < cin; ++ci) {
                        const double v = in_px[ci];
                        const double* wrow = wk + static_cast<std::size_t>(ci) * cout;
                        for (int co = 0; co < cout; ++co) orow[co] += v * wrow[co];
                    }
                }
            }
        }
    }
    return out;
}

Tensor avg_pool2(const Tensor& x) {
    if (x.rank() != 3) throw std::invalid_argument("avg_pool2: input must be [H,W,C]");
    const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
    if (h % 2 != 0 || w % 2 != 0) {
        throw std::invalid_argument("avg_pool2: dims must be even, got " + x.shape_str());
    }
    Tensor out({h / 2, w / 2, c});
    for (int y = 0; y < h / 2; ++y) {
        for (int xx = 0; xx < w / 2; ++xx) {
            for (int ch = 0; ch < c; ++ch) {
                out.at(y, xx, ch) = 0.25 * (x.at(2 * y, 2 * xx, ch) + x.at(2 * y, 2 * xx + 1, ch) +
                                            x.at(2 * y + 1, 2 * xx, ch) +
                                            x.at(2 * y + 1, 2 * xx + 1, ch));
            }
        }
    }
    return out;
}

Tensor upsample_nearest2(const Tensor& x) {
    if (x.rank() != 3) throw std::invalid_argument("upsample_nearest2: input must be [H,W,C]");
    const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
    Tensor out({2 * h, 2 * w, c});
    for (int y = 0; y < 2 * h; ++y) {
        for (int xx = 0; xx < 2 * w; ++xx) {
            for (int ch = 0; ch < c; ++ch) {
                out.at(y, xx, ch) = x.at(y / 2, xx / 2, ch);
            }
        }
    }
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
    return out;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Tensor sigmoid(const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = sigmoid(x[i]);
    return out;
}

FrozenNorm FrozenNorm::init(int channels) {
    FrozenNorm norm;
    norm.gamma = Tensor::full({channels}, 1.0);
    norm.beta = Tensor({channels});
    return norm;
}

Tensor frozen_norm(const FrozenNorm& norm, const Tensor& x) {
    const int c = x.dim(x.rank() - 1);
    if (c != norm.gamma.dim(0)) {
        throw std::invalid_argument("frozen_norm: channel mismatch");
    }
    // running mean 0, running var 1
    const double scale = 1.0 / std::sqrt(1.0 + norm.eps);
    Tensor out(x.shape());
    const std::size_t rows = x.numel() / static_cast<std::size_t>(c);
    for (std::size_t r = 0; r < rows; ++r) {
        for (int ch = 0; ch < c; ++ch) {
            out[r * c + ch] = x[r * c + ch] * scale * norm.gamma[ch] + norm.beta[ch];
        }
    }
    return out;
}

Mlp Mlp::seeded(int dim, int hidden, Rng& rng) {
    Mlp m;
    m.fc1 = LinearLayer::seeded(hidden, dim, rng);
    m.fc2 = LinearLayer::seeded(dim, hidden, rng);
    return m;
}

Tensor mlp_forward(const Mlp& m, const Tensor& x) {
    return linear(m.fc2, relu(linear(m.fc1, x)));
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("add: shape mismatch " + a.shape_str() + " vs " +
                                    b.shape_str());
    }
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
    return out;
}

}  // namespace oavm

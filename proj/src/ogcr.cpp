#include "oavm/ogcr.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace oavm {

int GuidanceMask::support_count() const {
    int n = 0;
    for (std::size_t i = 0; i < values.numel(); ++i) {
        if (values[i] == 0.0) ++n;
    }
    return n;
}

GuidanceMask make_guidance(const Image& prev_mask, int feat_h, int feat_w, int ks) {
    if (ks <= 0 || ks % 2 == 0) {
        throw std::invalid_argument("make_guidance: dilation size must be odd and positive, got " +
                                    std::to_string(ks));
    }
    if (prev_mask.channels != 1) {
        throw std::invalid_argument("make_guidance: mask must be single-channel, got " +
                                    std::to_string(prev_mask.channels));
    }
    Image support = dilate(binarize(resample_bilinear(prev_mask, feat_h, feat_w), 0.5), ks);

    GuidanceMask g;
    g.values = Tensor({feat_h, feat_w});
    const double neg_inf = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (int y = 0; y < feat_h; ++y) {
        for (int x = 0; x < feat_w; ++x) {
            const bool on = support.at(y, x) == 1.0;
            g.values.at(y, x) = on ? 0.0 : neg_inf;
            any = any || on;
        }
    }
    g.empty_support = !any;
    return g;
}

OgcrModule OgcrModule::seeded(int num_queries, int channels, std::uint64_t seed) {
    if (num_queries <= 0 || channels <= 0) {
        throw std::invalid_argument("ogcr: N and C must be positive, got N=" +
                                    std::to_string(num_queries) + " C=" +
                                    std::to_string(channels));
    }
    Rng rng(seed);
    OgcrModule m;
    m.num_queries = num_queries;
    m.channels = channels;

    m.fb_embedding = Tensor({num_queries, channels});
    const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
    for (std::size_t i = 0; i < m.fb_embedding.numel(); ++i) {
        m.fb_embedding[i] = rng.uniform(-bound, bound);
    }

    m.fq_q = LinearLayer::seeded(channels, channels, rng);
    m.fq_k = LinearLayer::seeded(channels, channels, rng);
    m.fq_v = LinearLayer::seeded(channels, channels, rng);
    m.callback_proj = LinearLayer::seeded(channels, 2 * channels, rng);
    m.ref_q = LinearLayer::seeded(channels, channels, rng);
    m.ref_k = LinearLayer::seeded(channels, channels, rng);
    m.ref_v = LinearLayer::seeded(channels, channels, rng);
    m.ref_ffn = Mlp::seeded(channels, 2 * channels, rng);
    return m;
}

Tensor OgcrModule::fuse_fb(const Tensor& q_o) const {
    if (!q_o.same_shape(fb_embedding)) {
        throw std::invalid_argument("fuse_fb: queries " + q_o.shape_str() +
                                    " do not match embedding " + fb_embedding.shape_str());
    }
    return add(fb_embedding, q_o);
}

Tensor OgcrModule::fq_attn(const Tensor& q_fb, const Tensor& f_m, const GuidanceMask& guidance,
                           bool* fell_back) const {
    if (q_fb.rank() != 2 || q_fb.dim(1) != channels) {
        throw std::invalid_argument("fq_attn: queries must be [N," + std::to_string(channels) +
                                    "], got " + q_fb.shape_str());
    }
    if (f_m.rank() != 3 || f_m.dim(2) != channels) {
        throw std::invalid_argument("fq_attn: features must be [H,W," + std::to_string(channels) +
                                    "], got " + f_m.shape_str());
    }
    const int h = f_m.dim(0), w = f_m.dim(1);
    if (guidance.values.dim(0) != h || guidance.values.dim(1) != w) {
        throw std::invalid_argument("fq_attn: guidance is " + guidance.values.shape_str() +
                                    ", features are " + f_m.shape_str());
    }
    const int n = q_fb.dim(0);
    const int tokens = h * w;

    Tensor feat_tokens = f_m.reshape({tokens, channels});
    Tensor q = linear(fq_q, q_fb);
    Tensor k = add(linear(fq_k, feat_tokens),
                   sinusoidal_pos_embed(h, w, channels).reshape({tokens, channels}));
    Tensor v = linear(fq_v, feat_tokens);

    Tensor scores = matmul_nt(q, k);
    const double scale = 1.0 / std::sqrt(static_cast<double>(channels));
    for (std::size_t i = 0; i < scores.numel(); ++i) scores[i] *= scale;

    const bool use_mask = !guidance.empty_support;
    if (use_mask) {
        for (int i = 0; i < n; ++i) {
            for (int t = 0; t < tokens; ++t) {
                scores.at(i, t) += guidance.values[static_cast<std::size_t>(t)];
            }
        }
    }
    if (fell_back != nullptr) *fell_back = !use_mask;
    return matmul(softmax_rows(scores), v);
}

Tensor OgcrModule::callback_correct(const Tensor& x_m, const Tensor& f_m) const {
    if (x_m.rank() != 2 || x_m.dim(1) != channels) {
        throw std::invalid_argument("callback_correct: object features must be [N," +
                                    std::to_string(channels) + "], got " + x_m.shape_str());
    }
    if (f_m.rank() != 3 || f_m.dim(2) != channels) {
        throw std::invalid_argument("callback_correct: features must be [H,W," +
                                    std::to_string(channels) + "], got " + f_m.shape_str());
    }
    const int h = f_m.dim(0), w = f_m.dim(1);
    const double scale = 1.0 / std::sqrt(static_cast<double>(channels));

    // Per-pixel affinity to each object, softmax over objects, weighted sum.
    Tensor feat_tokens = f_m.reshape({h * w, channels});
    Tensor affinity = matmul_nt(feat_tokens, x_m);
    for (std::size_t i = 0; i < affinity.numel(); ++i) affinity[i] *= scale;
    Tensor context = matmul(softmax_rows(affinity), x_m);  // [HW, C]

    Tensor cat({h * w, 2 * channels});
    for (int t = 0; t < h * w; ++t) {
        for (int c = 0; c < channels; ++c) {
            cat.at(t, c) = context.at(t, c);
            cat.at(t, channels + c) = feat_tokens.at(t, c);
        }
    }
    return linear(callback_proj, cat).reshape({h, w, channels});
}

Tensor OgcrModule::refine(const Tensor& features) const {
    if (features.rank() != 3 || features.dim(2) != channels) {
        throw std::invalid_argument("refine: features must be [H,W," + std::to_string(channels) +
                                    "], got " + features.shape_str());
    }
    const int h = features.dim(0), w = features.dim(1);
    Tensor tokens = features.reshape({h * w, channels});

    Tensor scores = matmul_nt(linear(ref_q, tokens), linear(ref_k, tokens));
    const double scale = 1.0 / std::sqrt(static_cast<double>(channels));
    for (std::size_t i = 0; i < scores.numel(); ++i) scores[i] *= scale;
    Tensor x1 = add(tokens, matmul(softmax_rows(scores), linear(ref_v, tokens)));
    Tensor x2 = add(x1, mlp_forward(ref_ffn, x1));
    return x2.reshape({h, w, channels});
}

Tensor OgcrModule::forward(const Tensor& f_m, const Tensor& q_o, const GuidanceMask& guidance,
                           bool* fell_back) const {
    Tensor x_m = fq_attn(fuse_fb(q_o), f_m, guidance, fell_back);
    return refine(callback_correct(x_m, f_m));
}

}  // namespace oavm

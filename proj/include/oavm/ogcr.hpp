#pragma once

#include <cstdint>

#include "oavm/image.hpp"
#include "oavm/nn.hpp"
#include "oavm/tensor.hpp"

namespace oavm {

/// Additive attention mask over the feature grid: 0 where the (dilated,
/// binarized, resampled) previous-frame mask allows attention, -inf elsewhere.
struct GuidanceMask {
    Tensor values;  // [H, W], every entry exactly 0 or -inf
    int source_frame = 0;
    bool empty_support = false;  // consumers fall back to unmasked attention

    int support_count() const;
};

/// prev_mask -> bilinear resample to (feat_h, feat_w) -> binarize at 0.5 ->
/// dilate with a ks x ks square -> {1 -> 0, 0 -> -inf}.
GuidanceMask make_guidance(const Image& prev_mask, int feat_h, int feat_w, int ks);

/// Correction and refinement around the object queries: fuse them with a
/// learnable foreground-background embedding, attend into the pixel features
/// under the cross-frame guidance mask, write the result back into the
/// features, and refine with self-attention + feed-forward.
class OgcrModule {
public:
    int num_queries = 8;
    int channels = 128;

    Tensor fb_embedding;  // [N, C]
    LinearLayer fq_q, fq_k, fq_v;  // query/key/value projections for fq_attn
    LinearLayer callback_proj;     // 2C -> C after the concat
    LinearLayer ref_q, ref_k, ref_v;
    Mlp ref_ffn;

    static OgcrModule seeded(int num_queries, int channels, std::uint64_t seed);

    /// q_fb = E_fb + q_o, elementwise.
    Tensor fuse_fb(const Tensor& q_o) const;

    /// X_m = softmax(Q_q K_f^T / sqrt(C) + M_S) V_f with a fixed sinusoidal
    /// positional code added to the projected keys. All query rows share the
    /// guidance row. Empty support falls back to unmasked attention; the flag
    /// out-param reports it when non-null.
    Tensor fq_attn(const Tensor& q_fb, const Tensor& f_m, const GuidanceMask& guidance,
                   bool* fell_back = nullptr) const;

    /// Per-pixel affinity to each object (dot / sqrt(C)), softmax over
    /// objects, context = affinity-weighted sum of X_m, then
    /// linear(concat(context, F_m)) back to C channels.
    Tensor callback_correct(const Tensor& x_m, const Tensor& f_m) const;

    /// Self-attention over all pixels + residual, feed-forward + residual.
    Tensor refine(const Tensor& features) const;

    /// fuse_fb -> fq_attn -> callback_correct -> refine.
    Tensor forward(const Tensor& f_m, const Tensor& q_o, const GuidanceMask& guidance,
                   bool* fell_back = nullptr) const;
};

}  // namespace oavm

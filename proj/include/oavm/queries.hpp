#pragma once

#include <cstdint>
#include <vector>

#include "oavm/image.hpp"
#include "oavm/nn.hpp"
#include "oavm/tensor.hpp"

namespace oavm {

/// Backbone output: feature maps at strides 2, 4, 8, 16 of the input image,
/// all with the same channel count.
struct FeaturePyramid {
    Tensor s1;  // stride 2
    Tensor s2;  // stride 4
    Tensor s3;  // stride 8
    Tensor s4;  // stride 16

    void validate() const;  // halving resolutions, consistent channels
};

/// Pixel-decoder output: three decoded scales (coarse to fine, strides 8/4/2)
/// plus the finest-resolution per-pixel embedding used to decode masks.
struct PixelDecoderOut {
    std::vector<Tensor> multiscale;  // {stride 8, stride 4, stride 2}
    Tensor per_pixel_embed;          // [H, W, C] at stride 2
};

struct QuerySet {
    Tensor queries;                     // [N, C], final layer
    std::vector<Tensor> layer_outputs;  // initial + one per decoder layer
};

struct InstancePrediction {
    Tensor mask_logits;  // [N, H, W]
    Tensor objectness;   // [N] logits, matching-cost tiebreak head
};

/// Minimum-cost one-to-one assignment of rows (ground-truth objects) to
/// columns (queries); rows must not outnumber columns.
struct Assignment {
    std::vector<int> query_for_gt;  // index of the query matched to GT i
    double total_cost = 0.0;
};

/// Exact rectangular assignment via shortest augmenting paths. Ties broken
/// toward the lowest query index.
Assignment solve_assignment(const Tensor& cost);

struct MatchWeights {
    double dice = 1.0;
    double objectness = 0.0;  // off by default; see hungarian_match
};

struct PairLosses {
    double dice_loss = 0.0;
    double bce_loss = 0.0;
};

/// Query generation: pixel decoder, three masked-attention decoder layers
/// (one per scale, coarse to fine), and the mask/objectness heads shared by
/// every layer's supervision.
class ObjectQueryGenerator {
public:
    int num_queries = 8;
    int channels = 128;

    Tensor initial_queries;  // [N, C], learnable start point

    // pixel decoder
    Conv2d lateral_p0, lateral_p1, lateral_p2;  // 3x3 bias-free, one per scale
    Conv2d embed_proj;                          // 1x1 bias-free -> per-pixel embed

    // one transformer decoder layer per scale
    struct DecoderLayer {
        LinearLayer cross_q, cross_k, cross_v;
        LinearLayer self_q, self_k, self_v;
        Mlp ffn;
    };
    std::vector<DecoderLayer> layers;

    LinearLayer objectness_head;  // C -> 1

    static ObjectQueryGenerator seeded(int num_queries, int channels, std::uint64_t seed);

    PixelDecoderOut pixel_decode(const FeaturePyramid& pyramid) const;

    /// One decoder layer: masked cross-attention into the feature tokens,
    /// self-attention over queries, then a feed-forward block, each with a
    /// residual connection. attn_mask is additive [N, tokens] over {0, -inf};
    /// fully-masked rows fall back to unmasked attention.
    Tensor decoder_layer(int layer_index, const Tensor& queries, const Tensor& feat_tokens,
                         const Tensor* attn_mask) const;

    /// Full refinement: initial queries through all layers, coarse to fine.
    /// The attention mask for each layer comes from the previous queries' mask
    /// prediction, resampled to that scale and binarized at 0.5.
    QuerySet generate(const FeaturePyramid& pyramid) const;

    /// Mask logits as the per-pixel dot product embed[y,x] . query[n].
    /// Supervision-only; inference never calls this.
    InstancePrediction predict_instance_masks(const QuerySet& qs,
                                              const PixelDecoderOut& pp) const;

    /// Dice + BCE on matched pairs for the final queries plus identical terms
    /// for every intermediate layer output (fresh matching per layer).
    /// Supervision-only diagnostics; no gradients anywhere.
    struct Losses {
        PairLosses final_losses;
        std::vector<PairLosses> aux;  // one per layer_output before the final
    };
    Losses instance_losses(const QuerySet& qs, const PixelDecoderOut& pp,
                           const std::vector<Image>& gt_masks) const;
};

/// cost(i,j) = dice_w * (1 - Dice(sigmoid(pred_j), gt_i)) + obj_w * (1 - sigmoid(obj_j)).
Assignment hungarian_match(const InstancePrediction& pred, const std::vector<Image>& gt_masks,
                           const MatchWeights& weights = {});

/// Dice + BCE averaged over the matched pairs of one prediction set.
PairLosses matched_losses(const InstancePrediction& pred, const std::vector<Image>& gt_masks,
                          const Assignment& assignment);

double dice_coefficient(const std::vector<double>& prob, const Image& gt);

}  // namespace oavm

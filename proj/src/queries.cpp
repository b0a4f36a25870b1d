#include "oavm/queries.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "oavm/debug.hpp"

namespace oavm {

void FeaturePyramid::validate() const {
    const Tensor* levels[4] = {&s1, &s2, &s3, &s4};
    for (int i = 0; i < 4; ++i) {
        if (levels[i]->rank() != 3) {
            throw std::invalid_argument("pyramid level s" + std::to_string(i + 1) +
                                        " must be [H,W,C], got " + levels[i]->shape_str());
        }
    }
    const int c = s1.dim(2);
    for (int i = 1; i < 4; ++i) {
        const Tensor& prev = *levels[i - 1];
        const Tensor& cur = *levels[i];
        if (cur.dim(2) != c) {
            throw std::invalid_argument("pyramid channel mismatch: s1 has " + std::to_string(c) +
                                        ", s" + std::to_string(i + 1) + " has " +
                                        std::to_string(cur.dim(2)));
        }
        if (cur.dim(0) * 2 != prev.dim(0) || cur.dim(1) * 2 != prev.dim(1)) {
            throw std::invalid_argument("pyramid level s" + std::to_string(i + 1) + " is " +
                                        cur.shape_str() + ", expected half of " +
                                        prev.shape_str());
        }
    }
}

ObjectQueryGenerator ObjectQueryGenerator::seeded(int num_queries, int channels,
                                                  std::uint64_t seed) {
    if (num_queries <= 0 || channels <= 0) {
        throw std::invalid_argument("query generator: N and C must be positive, got N=" +
                                    std::to_string(num_queries) + " C=" +
                                    std::to_string(channels));
    }
    Rng rng(seed);
    ObjectQueryGenerator g;
    g.num_queries = num_queries;
    g.channels = channels;

    g.initial_queries = Tensor({num_queries, channels});
    const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
    for (std::size_t i = 0; i < g.initial_queries.numel(); ++i) {
        g.initial_queries[i] = rng.uniform(-bound, bound);
    }

    g.lateral_p0 = Conv2d::seeded(3, channels, channels, rng);
    g.lateral_p1 = Conv2d::seeded(3, channels, channels, rng);
    g.lateral_p2 = Conv2d::seeded(3, channels, channels, rng);
    g.embed_proj = Conv2d::seeded(1, channels, channels, rng);

    for (int l = 0; l < 3; ++l) {
        DecoderLayer layer;
        layer.cross_q = LinearLayer::seeded(channels, channels, rng);
        layer.cross_k = LinearLayer::seeded(channels, channels, rng);
        layer.cross_v = LinearLayer::seeded(channels, channels, rng);
        layer.self_q = LinearLayer::seeded(channels, channels, rng);
        layer.self_k = LinearLayer::seeded(channels, channels, rng);
        layer.self_v = LinearLayer::seeded(channels, channels, rng);
        layer.ffn = Mlp::seeded(channels, 2 * channels, rng);
        g.layers.push_back(std::move(layer));
    }

    g.objectness_head = LinearLayer::seeded(1, channels, rng);
    return g;
}

PixelDecoderOut ObjectQueryGenerator::pixel_decode(const FeaturePyramid& pyramid) const {
    pyramid.validate();
    if (pyramid.s4.dim(2) != channels) {
        throw std::invalid_argument("pixel_decode: pyramid has " +
                                    std::to_string(pyramid.s4.dim(2)) + " channels, generator " +
                                    std::to_string(channels));
    }
    PixelDecoderOut out;
    Tensor x = add(conv2d(lateral_p0, upsample_nearest2(pyramid.s4)), pyramid.s3);
    out.multiscale.push_back(x);
    x = add(conv2d(lateral_p1, upsample_nearest2(x)), pyramid.s2);
    out.multiscale.push_back(x);
    x = add(conv2d(lateral_p2, upsample_nearest2(x)), pyramid.s1);
    out.multiscale.push_back(x);
    out.per_pixel_embed = conv2d(embed_proj, x);
    return out;
}

namespace {

Tensor scaled_scores(const Tensor& q, const Tensor& k, int c) {
    Tensor scores = matmul_nt(q, k);
    const double scale = 1.0 / std::sqrt(static_cast<double>(c));
    for (std::size_t i = 0; i < scores.numel(); ++i) scores[i] *= scale;
    return scores;
}

// logits[n,y,x] = embed[y,x,:] . queries[n,:], the shared mask head
Tensor mask_logits_for(const Tensor& queries, const Tensor& embed) {
    const int n = queries.dim(0), c = queries.dim(1);
    if (embed.rank() != 3 || embed.dim(2) != c) {
        throw std::invalid_argument("mask head: embed " + embed.shape_str() +
                                    " does not match queries " + queries.shape_str());
    }
    const int h = embed.dim(0), w = embed.dim(1);
    Tensor logits({n, h, w});
    for (int i = 0; i < n; ++i) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int ch = 0; ch < c; ++ch) acc += embed.at(y, x, ch) * queries.at(i, ch);
                logits.at(i, y, x) = acc;
            }
        }
    }
    return logits;
}

}  // namespace

Tensor ObjectQueryGenerator::decoder_layer(int layer_index, const Tensor& queries,
                                           const Tensor& feat_tokens,
                                           const Tensor* attn_mask) const {
    if (layer_index < 0 || layer_index >= static_cast<int>(layers.size())) {
        throw std::invalid_argument("decoder_layer: layer index " + std::to_string(layer_index) +
                                    " out of range [0," + std::to_string(layers.size()) + ")");
    }
    if (queries.rank() != 2 || queries.dim(1) != channels) {
        throw std::invalid_argument("decoder_layer: queries must be [N," +
                                    std::to_string(channels) + "], got " + queries.shape_str());
    }
    if (feat_tokens.rank() != 2 || feat_tokens.dim(1) != channels) {
        throw std::invalid_argument("decoder_layer: feature tokens must be [T," +
                                    std::to_string(channels) + "], got " +
                                    feat_tokens.shape_str());
    }
    const DecoderLayer& L = layers[static_cast<std::size_t>(layer_index)];

    // masked cross-attention into the feature tokens, residual
    Tensor scores = scaled_scores(linear(L.cross_q, queries), linear(L.cross_k, feat_tokens),
                                  channels);
    if (attn_mask != nullptr) {
        if (!attn_mask->same_shape(scores)) {
            throw std::invalid_argument("decoder_layer: attention mask " +
                                        attn_mask->shape_str() + " does not match scores " +
                                        scores.shape_str());
        }
        scores = apply_mask_rows_with_fallback(scores, *attn_mask);
    }
    Tensor q1 = add(queries, matmul(softmax_rows(scores), linear(L.cross_v, feat_tokens)));

    // self-attention over the query set, residual
    Tensor self_scores = scaled_scores(linear(L.self_q, q1), linear(L.self_k, q1), channels);
    Tensor q2 = add(q1, matmul(softmax_rows(self_scores), linear(L.self_v, q1)));

    // feed-forward, residual
    return add(q2, mlp_forward(L.ffn, q2));
}

QuerySet ObjectQueryGenerator::generate(const FeaturePyramid& pyramid) const {
    PixelDecoderOut pp = pixel_decode(pyramid);
    const double neg_inf = -std::numeric_limits<double>::infinity();

    QuerySet qs;
    Tensor q = initial_queries;
    qs.layer_outputs.push_back(q);

    for (std::size_t l = 0; l < layers.size(); ++l) {
        const Tensor& scale = pp.multiscale[l];
        const int sh = scale.dim(0), sw = scale.dim(1);

        // Attention mask from the current queries' own mask prediction:
        // sigmoid probabilities resampled to this scale, binarized at 0.5.
        Tensor logits = mask_logits_for(q, pp.per_pixel_embed);
        Tensor mask({num_queries, sh * sw});
        Image prob(logits.dim(1), logits.dim(2), 1);
        for (int n = 0; n < num_queries; ++n) {
            for (int y = 0; y < prob.height; ++y) {
                for (int x = 0; x < prob.width; ++x) {
                    prob.at(y, x) = sigmoid(logits.at(n, y, x));
                }
            }
            Image allowed = binarize(resample_bilinear(prob, sh, sw), 0.5);
            for (int t = 0; t < sh * sw; ++t) {
                mask.at(n, t) = allowed.data[static_cast<std::size_t>(t)] == 1.0 ? 0.0 : neg_inf;
            }
        }

        q = decoder_layer(static_cast<int>(l), q, scale.reshape({sh * sw, channels}), &mask);
        qs.layer_outputs.push_back(q);
    }
    qs.queries = q;
    return qs;
}

InstancePrediction ObjectQueryGenerator::predict_instance_masks(const QuerySet& qs,
                                                                const PixelDecoderOut& pp) const {
    debug::instance_mask_calls().fetch_add(1, std::memory_order_relaxed);
    InstancePrediction pred;
    pred.mask_logits = mask_logits_for(qs.queries, pp.per_pixel_embed);
    pred.objectness = linear(objectness_head, qs.queries).reshape({num_queries});
    return pred;
}

// --- assignment --------------------------------------------------------------

Assignment solve_assignment(const Tensor& cost) {
    if (cost.rank() != 2) {
        throw std::invalid_argument("solve_assignment: cost must be rank 2, got " +
                                    cost.shape_str());
    }
    const int n = cost.dim(0);  // ground-truth objects
    const int m = cost.dim(1);  // queries
    if (n > m) {
        throw std::invalid_argument("solve_assignment: " + std::to_string(n) +
                                    " objects exceed " + std::to_string(m) + " queries");
    }

    // Shortest-augmenting-path assignment with potentials; arrays 1-based.
    // Equal-cost alternatives resolve to the lowest column because the strict
    // '<' keeps the first minimum found.
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<double> v(static_cast<std::size_t>(m) + 1, 0.0);
    std::vector<int> match(static_cast<std::size_t>(m) + 1, 0);  // column -> row
    std::vector<int> way(static_cast<std::size_t>(m) + 1, 0);

    for (int i = 1; i <= n; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(m) + 1, inf);
        std::vector<char> used(static_cast<std::size_t>(m) + 1, 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            const int i0 = match[static_cast<std::size_t>(j0)];
            double delta = inf;
            int j1 = -1;
            for (int j = 1; j <= m; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur = cost.at(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                                   v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (match[static_cast<std::size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<std::size_t>(j0)];
            match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0);
    }

    Assignment a;
    a.query_for_gt.assign(static_cast<std::size_t>(n), -1);
    for (int j = 1; j <= m; ++j) {
        const int row = match[static_cast<std::size_t>(j)];
        if (row > 0) a.query_for_gt[static_cast<std::size_t>(row - 1)] = j - 1;
    }
    for (int i = 0; i < n; ++i) {
        a.total_cost += cost.at(i, a.query_for_gt[static_cast<std::size_t>(i)]);
    }
    return a;
}

double dice_coefficient(const std::vector<double>& prob, const Image& gt) {
    if (prob.size() != gt.data.size()) {
        throw std::invalid_argument("dice: prediction has " + std::to_string(prob.size()) +
                                    " pixels, ground truth has " + std::to_string(gt.data.size()));
    }
    const double eps = 1e-8;
    double inter = 0.0, psum = 0.0, gsum = 0.0;
    for (std::size_t i = 0; i < prob.size(); ++i) {
        inter += prob[i] * gt.data[i];
        psum += prob[i];
        gsum += gt.data[i];
    }
    return (2.0 * inter + eps) / (psum + gsum + eps);
}

namespace {

std::vector<double> sigmoid_plane(const Tensor& logits, int n) {
    const int h = logits.dim(1), w = logits.dim(2);
    std::vector<double> prob(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            prob[static_cast<std::size_t>(y) * w + x] = sigmoid(logits.at(n, y, x));
        }
    }
    return prob;
}

void check_gt_dims(const Tensor& logits, const std::vector<Image>& gt) {
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (gt[i].height != logits.dim(1) || gt[i].width != logits.dim(2) ||
            gt[i].channels != 1) {
            throw std::invalid_argument(
                "instance masks: ground truth " + std::to_string(i) + " is " +
                std::to_string(gt[i].height) + "x" + std::to_string(gt[i].width) +
                ", prediction is " + std::to_string(logits.dim(1)) + "x" +
                std::to_string(logits.dim(2)));
        }
    }
}

}  // namespace

Assignment hungarian_match(const InstancePrediction& pred, const std::vector<Image>& gt_masks,
                           const MatchWeights& weights) {
    const int n_gt = static_cast<int>(gt_masks.size());
    const int n_q = pred.mask_logits.dim(0);
    if (n_gt > n_q) {
        throw std::invalid_argument("hungarian_match: " + std::to_string(n_gt) +
                                    " ground-truth objects exceed " + std::to_string(n_q) +
                                    " queries");
    }
    if (n_gt == 0) return Assignment{};
    check_gt_dims(pred.mask_logits, gt_masks);

    Tensor cost({n_gt, n_q});
    for (int j = 0; j < n_q; ++j) {
        const std::vector<double> prob = sigmoid_plane(pred.mask_logits, j);
        const double obj = sigmoid(pred.objectness[static_cast<std::size_t>(j)]);
        for (int i = 0; i < n_gt; ++i) {
            cost.at(i, j) = weights.dice * (1.0 - dice_coefficient(prob, gt_masks[static_cast<std::size_t>(i)])) +
                            weights.objectness * (1.0 - obj);
        }
    }
    return solve_assignment(cost);
}

PairLosses matched_losses(const InstancePrediction& pred, const std::vector<Image>& gt_masks,
                          const Assignment& assignment) {
    debug::instance_loss_calls().fetch_add(1, std::memory_order_relaxed);
    PairLosses out;
    if (gt_masks.empty()) return out;
    check_gt_dims(pred.mask_logits, gt_masks);
    if (assignment.query_for_gt.size() != gt_masks.size()) {
        throw std::invalid_argument("matched_losses: assignment covers " +
                                    std::to_string(assignment.query_for_gt.size()) +
                                    " objects, ground truth has " +
                                    std::to_string(gt_masks.size()));
    }

    const int h = pred.mask_logits.dim(1), w = pred.mask_logits.dim(2);
    for (std::size_t i = 0; i < gt_masks.size(); ++i) {
        const int j = assignment.query_for_gt[i];
        const std::vector<double> prob = sigmoid_plane(pred.mask_logits, j);
        out.dice_loss += 1.0 - dice_coefficient(prob, gt_masks[i]);

        double bce = 0.0;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double logit = pred.mask_logits.at(j, y, x);
                const double g = gt_masks[i].at(y, x);
                // stable form of -g*log(p) - (1-g)*log(1-p)
                bce += std::max(logit, 0.0) - logit * g + std::log1p(std::exp(-std::abs(logit)));
            }
        }
        out.bce_loss += bce / (static_cast<double>(h) * w);
    }
    out.dice_loss /= static_cast<double>(gt_masks.size());
    out.bce_loss /= static_cast<double>(gt_masks.size());
    return out;
}

ObjectQueryGenerator::Losses ObjectQueryGenerator::instance_losses(
    const QuerySet& qs, const PixelDecoderOut& pp, const std::vector<Image>& gt_masks) const {
    Losses losses;
    InstancePrediction final_pred = predict_instance_masks(qs, pp);
    losses.final_losses = matched_losses(final_pred, gt_masks, hungarian_match(final_pred, gt_masks));

    // Same heads, fresh matching, for the initial queries and every
    // intermediate layer.
    for (std::size_t l = 0; l + 1 < qs.layer_outputs.size(); ++l) {
        InstancePrediction aux_pred;
        aux_pred.mask_logits = mask_logits_for(qs.layer_outputs[l], pp.per_pixel_embed);
        aux_pred.objectness = linear(objectness_head, qs.layer_outputs[l]).reshape({num_queries});
        losses.aux.push_back(matched_losses(aux_pred, gt_masks, hungarian_match(aux_pred, gt_masks)));
    }
    return losses;
}

}  // namespace oavm

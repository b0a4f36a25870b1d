#include "oavm/temporal.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "oavm/nn.hpp"

namespace oavm {

void AttentionConfig::validate() const {
    if (channels <= 0) {
        throw std::invalid_argument("attention config: channels must be positive, got " +
                                    std::to_string(channels));
    }
    if (window <= 0 || window % 2 == 0) {
        throw std::invalid_argument("attention config: window must be odd and positive, got " +
                                    std::to_string(window));
    }
}

int MemoryBank::token_count() const {
    int n = 0;
    if (long_term) n += long_term->height * long_term->width;
    if (short_term) n += short_term->height * short_term->width;
    return n;
}

Tensor mask_token_values(const Image& mask) {
    if (mask.channels != 1) {
        throw std::invalid_argument("mask_token_values: expected 1 channel, got " +
                                    std::to_string(mask.channels));
    }
    Tensor out({mask.height * mask.width});
    for (std::size_t i = 0; i < mask.data.size(); ++i) out[i] = mask.data[i];
    return out;
}

Tensor ff_attn(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask_values,
               const LinearLayer& fg_embed) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
        throw std::invalid_argument("ff_attn: q, k, v must be rank-2 token matrices");
    }
    const int c = q.dim(1);
    if (k.dim(1) != c || v.dim(1) != c) {
        throw std::invalid_argument("ff_attn: channel mismatch, q has " + std::to_string(c) +
                                    ", k has " + std::to_string(k.dim(1)) + ", v has " +
                                    std::to_string(v.dim(1)));
    }
    const int tokens = k.dim(0);
    if (v.dim(0) != tokens || static_cast<int>(mask_values.numel()) != tokens) {
        throw std::invalid_argument("ff_attn: token count mismatch, k has " +
                                    std::to_string(tokens) + ", v has " +
                                    std::to_string(v.dim(0)) + ", mask has " +
                                    std::to_string(mask_values.numel()));
    }
    if (fg_embed.in_features() != 1 || fg_embed.out_features() != c) {
        throw std::invalid_argument("ff_attn: fg_embed must map 1 -> " + std::to_string(c));
    }

    // Values augmented with the foreground embedding of their mask entry.
    Tensor v_aug = v;
    for (int t = 0; t < tokens; ++t) {
        const double s = mask_values[static_cast<std::size_t>(t)];
        for (int ch = 0; ch < c; ++ch) {
            v_aug.at(t, ch) += fg_embed.weight.at(ch, 0) * s + fg_embed.bias.at(ch);
        }
    }

    Tensor scores = matmul_nt(q, k);
    const double scale = 1.0 / std::sqrt(static_cast<double>(c));
    for (std::size_t i = 0; i < scores.numel(); ++i) scores[i] *= scale;
    return matmul(softmax_rows(scores), v_aug);
}

TemporalAttention TemporalAttention::seeded(int channels, std::uint64_t seed) {
    Rng rng(seed);
    TemporalAttention t;
    t.q_proj = LinearLayer::seeded(channels, channels, rng);
    t.k_proj = LinearLayer::seeded(channels, channels, rng);
    t.v_proj = LinearLayer::seeded(channels, channels, rng);
    t.fg_embed = LinearLayer::seeded(channels, 1, rng);
    t.fuse = LinearLayer::seeded(channels, channels, rng);
    return t;
}

namespace {

void check_feature_map(const Tensor& t, const char* who) {
    if (t.rank() != 3) {
        throw std::invalid_argument(std::string(who) + ": expected [H,W,C] feature map, got " +
                                    t.shape_str());
    }
}

}  // namespace

Tensor TemporalAttention::global_attn(const Tensor& current, const MemoryBank& bank) const {
    check_feature_map(current, "global_attn");
    if (!bank.long_term) {
        throw std::runtime_error("global_attn: memory bank has no long-term entry");
    }
    const MemoryEntry& mem = *bank.long_term;
    const int h = current.dim(0), w = current.dim(1), c = current.dim(2);
    if (mem.key.dim(1) != c) {
        throw std::invalid_argument("global_attn: channel mismatch, current has " +
                                    std::to_string(c) + ", memory has " +
                                    std::to_string(mem.key.dim(1)));
    }
    Tensor q = linear(q_proj, current.reshape({h * w, c}));
    Tensor out = ff_attn(q, mem.key, mem.value, mask_token_values(mem.mask), fg_embed);
    return out.reshape({h, w, c});
}

Tensor TemporalAttention::local_attn(const Tensor& current, const MemoryBank& bank,
                                     int window) const {
    check_feature_map(current, "local_attn");
    if (window <= 0 || window % 2 == 0) {
        throw std::invalid_argument("local_attn: window must be odd and positive, got " +
                                    std::to_string(window));
    }
    if (!bank.short_term) {
        throw std::runtime_error("local_attn: memory bank has no short-term entry");
    }
    const MemoryEntry& mem = *bank.short_term;
    const int h = current.dim(0), w = current.dim(1), c = current.dim(2);
    if (mem.height != h || mem.width != w) {
        throw std::invalid_argument("local_attn: grid mismatch, current is " + std::to_string(h) +
                                    "x" + std::to_string(w) + ", memory is " +
                                    std::to_string(mem.height) + "x" +
                                    std::to_string(mem.width));
    }
    if (mem.key.dim(1) != c) {
        throw std::invalid_argument("local_attn: channel mismatch, current has " +
                                    std::to_string(c) + ", memory has " +
                                    std::to_string(mem.key.dim(1)));
    }

    Tensor q = linear(q_proj, current.reshape({h * w, c}));
    const double scale = 1.0 / std::sqrt(static_cast<double>(c));
    const int half = window / 2;

    Tensor out({h, w, c});
    std::vector<double> scores;
    std::vector<int> token_ids;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int y0 = std::max(0, y - half), y1 = std::min(h - 1, y + half);
            const int x0 = std::max(0, x - half), x1 = std::min(w - 1, x + half);
            scores.clear();
            token_ids.clear();
            const int qi = y * w + x;
            for (int my = y0; my <= y1; ++my) {
                for (int mx = x0; mx <= x1; ++mx) {
                    const int t = my * w + mx;
                    double dot = 0.0;
                    for (int ch = 0; ch < c; ++ch) dot += q.at(qi, ch) * mem.key.at(t, ch);
                    scores.push_back(dot * scale);
                    token_ids.push_back(t);
                }
            }
            // Softmax over the clipped window only; border pixels see fewer
            // tokens and renormalize over what they see.
            double max_score = scores[0];
            for (double s : scores) max_score = std::max(max_score, s);
            double denom = 0.0;
            for (double& s : scores) {
                s = std::exp(s - max_score);
                denom += s;
            }
            for (std::size_t i = 0; i < scores.size(); ++i) {
                const double wgt = scores[i] / denom;
                const int t = token_ids[i];
                const double s = mem.mask.data[static_cast<std::size_t>(t)];
                for (int ch = 0; ch < c; ++ch) {
                    const double fe = fg_embed.weight.at(ch, 0) * s + fg_embed.bias.at(ch);
                    out.at(y, x, ch) += wgt * (mem.value.at(t, ch) + fe);
                }
            }
        }
    }
    return out;
}

Tensor TemporalAttention::combine_gl(const Tensor& f_global, const Tensor& f_local) const {
    if (!f_global.same_shape(f_local)) {
        throw std::invalid_argument("combine_gl: shape mismatch, global is " +
                                    f_global.shape_str() + ", local is " + f_local.shape_str());
    }
    return linear(fuse, add(f_global, f_local));
}

Tensor TemporalAttention::first_frame_self_attn(const Tensor& current,
                                                const Image& init_mask) const {
    check_feature_map(current, "first_frame_self_attn");
    const int h = current.dim(0), w = current.dim(1), c = current.dim(2);
    if (init_mask.height != h || init_mask.width != w) {
        throw std::invalid_argument("first_frame_self_attn: mask is " +
                                    std::to_string(init_mask.height) + "x" +
                                    std::to_string(init_mask.width) + ", features are " +
                                    std::to_string(h) + "x" + std::to_string(w));
    }
    Tensor tokens = current.reshape({h * w, c});
    Tensor q = linear(q_proj, tokens);
    Tensor k = linear(k_proj, tokens);
    Tensor v = linear(v_proj, tokens);
    Tensor out = ff_attn(q, k, v, mask_token_values(init_mask), fg_embed);
    return out.reshape({h, w, c});
}

MemoryBank TemporalAttention::memory_update(const MemoryBank& bank, const Tensor& feat,
                                            const Image& pred_mask) const {
    check_feature_map(feat, "memory_update");
    const int h = feat.dim(0), w = feat.dim(1), c = feat.dim(2);
    if (pred_mask.height != h || pred_mask.width != w || pred_mask.channels != 1) {
        throw std::invalid_argument("memory_update: mask is " + std::to_string(pred_mask.height) +
                                    "x" + std::to_string(pred_mask.width) + "x" +
                                    std::to_string(pred_mask.channels) + ", features are " +
                                    std::to_string(h) + "x" + std::to_string(w));
    }
    Tensor tokens = feat.reshape({h * w, c});
    MemoryEntry entry;
    entry.key = linear(k_proj, tokens);
    entry.value = linear(v_proj, tokens);
    entry.mask = pred_mask;
    entry.height = h;
    entry.width = w;
    entry.frame = bank.frame_index + 1;

    MemoryBank next = bank;
    next.frame_index = bank.frame_index + 1;
    if (bank.empty()) {
        next.long_term = entry;  // the first frame is pinned for the whole sequence
        next.short_term = std::move(entry);
    } else {
        next.short_term = std::move(entry);
    }
    return next;
}

Tensor TemporalAttention::match_features(const Tensor& current, const MemoryBank& bank,
                                         const Image* init_mask, int window) const {
    if (bank.empty()) {
        if (init_mask == nullptr) {
            throw std::runtime_error(
                "match_features: empty memory bank requires an initial mask for the first frame");
        }
        return first_frame_self_attn(current, *init_mask);
    }
    if (init_mask != nullptr) {
        throw std::runtime_error("match_features: initial mask is only accepted on the first frame");
    }
    Tensor fg = global_attn(current, bank);
    Tensor fl = local_attn(current, bank, window);
    return combine_gl(fg, fl);
}

}  // namespace oavm

#pragma once

#include <cstdint>
#include <optional>

#include "oavm/image.hpp"
#include "oavm/tensor.hpp"

namespace oavm {

struct AttentionConfig {
    int channels = 128;
    int window = 15;  // local attention window, odd

    void validate() const;
};

/// One memorized frame: key/value projections are computed once at insertion
/// time and cached (keys of stored frames never change), together with the
/// frame's predicted foreground mask at feature resolution.
struct MemoryEntry {
    Tensor key;    // [H*W, C]
    Tensor value;  // [H*W, C]
    Image mask;    // [H, W], soft values allowed
    int height = 0;
    int width = 0;
    int frame = 0;  // 1-based index of the frame this entry came from
};

/// Long-term slot holds the first frame and is never replaced; short-term
/// holds the most recent frame. Token count is therefore constant in sequence
/// length.
struct MemoryBank {
    std::optional<MemoryEntry> long_term;
    std::optional<MemoryEntry> short_term;
    int frame_index = 0;  // number of frames absorbed so far

    bool empty() const { return frame_index == 0; }
    int token_count() const;
};

/// Frame-to-frame attention: softmax(Q K^T / sqrt(C)) (V + FE(S)).
/// mask_values holds S per memory token; fg_embed maps a scalar mask value to
/// a C-dim offset added to the value rows.
Tensor ff_attn(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask_values,
               const LinearLayer& fg_embed);

/// Pixel-level temporal matching: shared Q/K/V projections, a foreground
/// embedding layer, global attention over the first frame, window-restricted
/// local attention over the last frame, and their learned fusion.
class TemporalAttention {
public:
    LinearLayer q_proj, k_proj, v_proj;  // C -> C
    LinearLayer fg_embed;                // 1 -> C
    LinearLayer fuse;                    // C -> C, combines global and local

    static TemporalAttention seeded(int channels, std::uint64_t seed);

    /// Full-span attention against the long-term (first) frame.
    Tensor global_attn(const Tensor& current, const MemoryBank& bank) const;

    /// Attention restricted to a w x w neighbourhood in the short-term frame,
    /// clipped at borders, rows renormalized over the restricted token set.
    Tensor local_attn(const Tensor& current, const MemoryBank& bank, int window) const;

    /// Elementwise sum followed by the learned fuse projection.
    Tensor combine_gl(const Tensor& f_global, const Tensor& f_local) const;

    /// Frame-1 fallback: K and V come from the current frame itself and S is
    /// the initial coarse mask (at feature resolution).
    Tensor first_frame_self_attn(const Tensor& current, const Image& init_mask) const;

    /// Inserts the frame: frame 1 fills both slots, later frames overwrite the
    /// short-term slot only.
    MemoryBank memory_update(const MemoryBank& bank, const Tensor& feat,
                             const Image& pred_mask) const;

    /// Dispatch: self-attention on the first frame (init_mask required),
    /// global + local + fuse afterwards. Throws if init_mask is given once
    /// memory exists.
    Tensor match_features(const Tensor& current, const MemoryBank& bank,
                          const Image* init_mask, int window) const;
};

/// Flattened mask values of a memory entry, aligned with its tokens.
Tensor mask_token_values(const Image& mask);

}  // namespace oavm

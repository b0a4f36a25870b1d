#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "oavm/image.hpp"
#include "oavm/manifest.hpp"
#include "oavm/metrics.hpp"
#include "oavm/nn.hpp"
#include "oavm/ogcr.hpp"
#include "oavm/queries.hpp"
#include "oavm/temporal.hpp"

namespace oavm {

struct PipelineConfig {
    int channels = 128;      // feature width C, divisible by 4
    int window = 15;         // local attention window, odd
    int dilation_ks = 3;     // guidance dilation, odd
    int num_queries = 8;
    int decoder_layers = 3;  // fixed by the one-layer-per-scale design
    double p1 = 0.4;         // second-foreground injection probability
    double p2 = 0.5;         // single-object supervision probability
    std::uint64_t seed = 1;

    void validate() const;
    std::string to_json() const;
    static PipelineConfig from_json(const std::string& text);
    static PipelineConfig load(const std::string& path);
};

/// Applies the OAVM_SEED environment variable, when set, over the config seed.
void apply_env_seed(PipelineConfig& cfg);

Tensor image_to_tensor(const Image& img);

/// Symmetric (edge-repeating) reflection pad on the bottom/right up to the
/// next multiple. Requires both dims >= 8 so the padding never exceeds the
/// source extent.
Image pad_reflect_to_multiple(const Image& img, int multiple, int* pad_h = nullptr,
                              int* pad_w = nullptr);

/// Stand-in feature extractor: four 3x3 bias-free conv + 2x2 average-pool
/// levels producing the stride {2,4,8,16} pyramid every downstream stage
/// consumes. Seeded, untrained.
class BackboneStub {
public:
    Conv2d conv1;  // 3 -> C
    Conv2d conv2, conv3, conv4;  // C -> C

    static BackboneStub seeded(int channels, std::uint64_t seed);

    /// Input dims must be divisible by 16 (callers pad first).
    FeaturePyramid forward(const Image& frame) const;
};

/// Stride-16 features back to full resolution: per stage 2x nearest upsample,
/// 3x3 conv, skip projection from the matching pyramid level, frozen-stats
/// normalization + ReLU. Two 1x1 heads: alpha (sigmoid, clamped) and
/// foreground mask (sigmoid binarized at 0.5).
class MattingDecoder {
public:
    struct Stage {
        Conv2d conv;       // 3x3, bias-free
        Conv2d skip;       // 1x1 projection of the pyramid level
        FrozenNorm norm;
        bool has_skip = false;
    };
    std::vector<Stage> stages;  // strides 16->8->4->2->1
    Conv2d alpha_head, mask_head;  // 1x1, with bias

    static MattingDecoder seeded(int channels, std::uint64_t seed);

    std::pair<Image, Image> decode(const Tensor& f_o, const FeaturePyramid& pyramid) const;
};

struct FrameDiagnostics {
    int frame_index = 0;          // 1-based
    int guidance_support = 0;     // allowed tokens in the guidance mask
    bool guidance_fallback = false;
    bool first_frame_attn = false;  // self-attention fallback used
    bool padded = false;
    int pad_h = 0;
    int pad_w = 0;
};

struct FrameResult {
    Image alpha;    // [H,W,1] in [0,1]
    Image fg_mask;  // [H,W,1] binary
    FrameDiagnostics diagnostics;
};

/// The per-sequence inference engine. Frames go through backbone ->
/// temporal matching -> query generation -> guided correction/refinement ->
/// matting decoder; the memory bank then absorbs the frame.
class Pipeline {
public:
    PipelineConfig cfg;
    BackboneStub backbone;
    TemporalAttention temporal;
    ObjectQueryGenerator query_gen;
    OgcrModule ogcr;
    MattingDecoder decoder;

    static Pipeline seeded(const PipelineConfig& cfg);

    /// prev_mask is the previous frame's predicted mask at frame resolution;
    /// for frame 1 (empty bank) it must be the initial coarse mask.
    FrameResult infer_frame(const Image& frame, MemoryBank& bank, const Image& prev_mask) const;
};

struct RunResult {
    std::vector<FrameDiagnostics> diagnostics;
    std::vector<std::string> alpha_files;  // relative to the output directory
    std::vector<std::string> mask_files;
    std::optional<MetricsReport> metrics;  // present when the manifest has GT alphas
};

/// Runs the whole sequence, writing alpha_%04d.pgm (16-bit), mask_%04d.pgm,
/// manifest.json and diagnostics.json into out_dir. When the input manifest
/// carries ground-truth alphas, metrics are computed by reading the emitted
/// files back, so a standalone evaluation of the outputs matches exactly.
RunResult run_sequence(const Manifest& manifest, const Image& init_mask,
                       const PipelineConfig& cfg, const std::string& out_dir);

}  // namespace oavm

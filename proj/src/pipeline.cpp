#include "oavm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;

namespace oavm {

void PipelineConfig::validate() const {
    if (channels <= 0 || channels % 4 != 0) {
        throw std::invalid_argument("config: channels must be positive and divisible by 4, got " +
                                    std::to_string(channels));
    }
    if (window <= 0 || window % 2 == 0) {
        throw std::invalid_argument("config: window must be odd and positive, got " +
                                    std::to_string(window));
    }
    if (dilation_ks <= 0 || dilation_ks % 2 == 0) {
        throw std::invalid_argument("config: dilation_ks must be odd and positive, got " +
                                    std::to_string(dilation_ks));
    }
    if (num_queries <= 0) {
        throw std::invalid_argument("config: num_queries must be positive, got " +
                                    std::to_string(num_queries));
    }
    if (decoder_layers != 3) {
        throw std::invalid_argument(
            "config: decoder_layers is fixed at 3 (one per decoded scale), got " +
            std::to_string(decoder_layers));
    }
    if (p1 < 0.0 || p1 > 1.0 || p2 < 0.0 || p2 > 1.0) {
        throw std::invalid_argument("config: p1 and p2 must lie in [0,1]");
    }
}

std::string PipelineConfig::to_json() const {
    nlohmann::json j;
    j["channels"] = channels;
    j["window"] = window;
    j["dilation_ks"] = dilation_ks;
    j["num_queries"] = num_queries;
    j["decoder_layers"] = decoder_layers;
    j["p1"] = p1;
    j["p2"] = p2;
    j["seed"] = seed;
    return j.dump(2);
}

PipelineConfig PipelineConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(std::string("config: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw std::runtime_error("config: top level must be a JSON object");

    PipelineConfig cfg;
    for (const auto& [key, value] : j.items()) {
        if (key == "channels") cfg.channels = value.get<int>();
        else if (key == "window") cfg.window = value.get<int>();
        else if (key == "dilation_ks") cfg.dilation_ks = value.get<int>();
        else if (key == "num_queries") cfg.num_queries = value.get<int>();
        else if (key == "decoder_layers") cfg.decoder_layers = value.get<int>();
        else if (key == "p1") cfg.p1 = value.get<double>();
        else if (key == "p2") cfg.p2 = value.get<double>();
        else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
        else throw std::runtime_error("config: unknown key \"" + key + "\"");
    }
    cfg.validate();
    return cfg;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json(text);
}

void apply_env_seed(PipelineConfig& cfg) {
    const char* env = std::getenv("OAVM_SEED");
    if (env == nullptr || *env == '\0') return;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0') {
        throw std::runtime_error(std::string("OAVM_SEED is not a valid integer: \"") + env + "\"");
    }
    cfg.seed = static_cast<std::uint64_t>(v);
}

Tensor image_to_tensor(const Image& img) {
    Tensor t({img.height, img.width, img.channels});
    for (std::size_t i = 0; i < img.data.size(); ++i) t[i] = img.data[i];
    return t;
}

Image pad_reflect_to_multiple(const Image& img, int multiple, int* pad_h, int* pad_w) {
    const int ph = (multiple - img.height % multiple) % multiple;
    const int pw = (multiple - img.width % multiple) % multiple;
    if (pad_h) *pad_h = ph;
    if (pad_w) *pad_w = pw;
    if (ph == 0 && pw == 0) return img;
    if (ph > img.height || pw > img.width) {
        throw std::invalid_argument("pad_reflect: image " + std::to_string(img.height) + "x" +
                                    std::to_string(img.width) +
                                    " too small to pad to a multiple of " +
                                    std::to_string(multiple));
    }
    Image out(img.height + ph, img.width + pw, img.channels);
    for (int y = 0; y < out.height; ++y) {
        const int sy = y < img.height ? y : 2 * img.height - 1 - y;
        for (int x = 0; x < out.width; ++x) {
            const int sx = x < img.width ? x : 2 * img.width - 1 - x;
            for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(sy, sx, c);
        }
    }
    return out;
}

// --- backbone ----------------------------------------------------------------

BackboneStub BackboneStub::seeded(int channels, std::uint64_t seed) {
    Rng rng(seed);
    BackboneStub b;
    b.conv1 = Conv2d::seeded(3, 3, channels, rng);
    b.conv2 = Conv2d::seeded(3, channels, channels, rng);
    b.conv3 = Conv2d::seeded(3, channels, channels, rng);
    b.conv4 = Conv2d::seeded(3, channels, channels, rng);
    return b;
}

FeaturePyramid BackboneStub::forward(const Image& frame) const {
    if (frame.channels != 3) {
        throw std::invalid_argument("backbone: expected an RGB frame, got " +
                                    std::to_string(frame.channels) + " channels");
    }
    if (frame.height % 16 != 0 || frame.width % 16 != 0) {
        throw std::invalid_argument("backbone: dims " + std::to_string(frame.height) + "x" +
                                    std::to_string(frame.width) +
                                    " must be divisible by 16 (pad first)");
    }
    FeaturePyramid p;
    p.s1 = avg_pool2(conv2d(conv1, image_to_tensor(frame)));
    p.s2 = avg_pool2(conv2d(conv2, p.s1));
    p.s3 = avg_pool2(conv2d(conv3, p.s2));
    p.s4 = avg_pool2(conv2d(conv4, p.s3));
    return p;
}

// --- matting decoder ---------------------------------------------------------

MattingDecoder MattingDecoder::seeded(int channels, std::uint64_t seed) {
    Rng rng(seed);
    MattingDecoder d;
    int ch_in = channels;
    for (int i = 0; i < 4; ++i) {
        const int ch_out = std::max(channels >> (i + 1), 8);
        Stage stage;
        stage.conv = Conv2d::seeded(3, ch_in, ch_out, rng);
        stage.has_skip = i < 3;  // pyramid provides strides 8, 4, 2; none at 1
        if (stage.has_skip) stage.skip = Conv2d::seeded(1, channels, ch_out, rng);
        stage.norm = FrozenNorm::init(ch_out);
        d.stages.push_back(std::move(stage));
        ch_in = ch_out;
    }
    d.alpha_head = Conv2d::seeded(1, ch_in, 1, rng, /*bias=*/true);
    d.mask_head = Conv2d::seeded(1, ch_in, 1, rng, /*bias=*/true);
    return d;
}

std::pair<Image, Image> MattingDecoder::decode(const Tensor& f_o,
                                               const FeaturePyramid& pyramid) const {
    if (f_o.rank() != 3) {
        throw std::invalid_argument("matting decoder: expected [H,W,C] features, got " +
                                    f_o.shape_str());
    }
    const Tensor* skips[3] = {&pyramid.s3, &pyramid.s2, &pyramid.s1};
    Tensor x = f_o;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const Stage& st = stages[i];
        x = conv2d(st.conv, upsample_nearest2(x));
        if (st.has_skip) x = add(x, conv2d(st.skip, *skips[i]));
        x = relu(frozen_norm(st.norm, x));
    }

    const Tensor alpha_logits = conv2d(alpha_head, x);
    const Tensor mask_logits = conv2d(mask_head, x);
    const int h = alpha_logits.dim(0), w = alpha_logits.dim(1);
    Image alpha(h, w, 1), mask_prob(h, w, 1);
    for (int y = 0; y < h; ++y) {
        for (int x2 = 0; x2 < w; ++x2) {
            alpha.at(y, x2) = std::clamp(sigmoid(alpha_logits.at(y, x2, 0)), 0.0, 1.0);
            mask_prob.at(y, x2) = sigmoid(mask_logits.at(y, x2, 0));
        }
    }
    return {alpha, binarize(mask_prob, 0.5)};
}

// --- pipeline ----------------------------------------------------------------

Pipeline Pipeline::seeded(const PipelineConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    Pipeline p;
    p.cfg = cfg;
    p.backbone = BackboneStub::seeded(cfg.channels, rng.fork());
    p.temporal = TemporalAttention::seeded(cfg.channels, rng.fork());
    p.query_gen = ObjectQueryGenerator::seeded(cfg.num_queries, cfg.channels, rng.fork());
    p.ogcr = OgcrModule::seeded(cfg.num_queries, cfg.channels, rng.fork());
    p.decoder = MattingDecoder::seeded(cfg.channels, rng.fork());
    return p;
}

namespace {

Image crop(const Image& img, int h, int w) {
    if (img.height == h && img.width == w) return img;
    Image out(h, w, img.channels);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y, x, c);
        }
    }
    return out;
}

}  // namespace

FrameResult Pipeline::infer_frame(const Image& frame, MemoryBank& bank,
                                  const Image& prev_mask) const {
    if (frame.channels != 3) {
        throw std::invalid_argument("infer_frame: expected an RGB frame, got " +
                                    std::to_string(frame.channels) + " channels");
    }
    if (prev_mask.height != frame.height || prev_mask.width != frame.width ||
        prev_mask.channels != 1) {
        throw std::invalid_argument(
            "infer_frame: mask " + std::to_string(prev_mask.height) + "x" +
            std::to_string(prev_mask.width) + "x" + std::to_string(prev_mask.channels) +
            " does not match frame " + std::to_string(frame.height) + "x" +
            std::to_string(frame.width));
    }
    if (frame.height < 8 || frame.width < 8) {
        throw std::invalid_argument("infer_frame: frames below 8x8 are not supported, got " +
                                    std::to_string(frame.height) + "x" +
                                    std::to_string(frame.width));
    }

    FrameDiagnostics diag;
    diag.frame_index = bank.frame_index + 1;

    Image padded = pad_reflect_to_multiple(frame, 16, &diag.pad_h, &diag.pad_w);
    diag.padded = diag.pad_h != 0 || diag.pad_w != 0;
    if (diag.padded) {
        std::cerr << "infer: frame " << diag.frame_index << " padded from " << frame.height << "x"
                  << frame.width << " to " << padded.height << "x" << padded.width << "\n";
    }
    Image padded_mask = pad_reflect_to_multiple(prev_mask, 16);

    FeaturePyramid pyramid = backbone.forward(padded);
    const Tensor& feat = pyramid.s4;
    const int fh = feat.dim(0), fw = feat.dim(1);

    // pixel-level temporal matching (self-attention fallback on frame 1)
    Image mask_feat = resample_bilinear(padded_mask, fh, fw);
    Tensor f_m;
    if (bank.empty()) {
        diag.first_frame_attn = true;
        f_m = temporal.match_features(feat, bank, &mask_feat, cfg.window);
    } else {
        f_m = temporal.match_features(feat, bank, nullptr, cfg.window);
    }

    // object queries + guided correction and refinement
    QuerySet qs = query_gen.generate(pyramid);
    GuidanceMask guidance = make_guidance(padded_mask, fh, fw, cfg.dilation_ks);
    diag.guidance_support = guidance.support_count();
    bool fell_back = false;
    Tensor f_o = ogcr.forward(f_m, qs.queries, guidance, &fell_back);
    diag.guidance_fallback = fell_back;

    auto [alpha_padded, mask_padded] = decoder.decode(f_o, pyramid);

    // memory absorbs the padded-resolution prediction, aligned with the features
    bank = temporal.memory_update(bank, feat, resample_bilinear(mask_padded, fh, fw));

    FrameResult result;
    result.alpha = crop(alpha_padded, frame.height, frame.width);
    result.fg_mask = crop(mask_padded, frame.height, frame.width);
    result.diagnostics = diag;
    return result;
}

// --- sequence runner ---------------------------------------------------------

namespace {

std::string frame_file_name(const char* stem, int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%04d.pgm", stem, index);
    return buf;
}

nlohmann::json diagnostics_to_json(const FrameDiagnostics& d) {
    nlohmann::json j;
    j["frame"] = d.frame_index;
    j["guidance_support"] = d.guidance_support;
    j["guidance_fallback"] = d.guidance_fallback;
    j["first_frame_attn"] = d.first_frame_attn;
    j["padded"] = d.padded;
    j["pad_h"] = d.pad_h;
    j["pad_w"] = d.pad_w;
    return j;
}

}  // namespace

RunResult run_sequence(const Manifest& manifest, const Image& init_mask,
                       const PipelineConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    if (manifest.frames.empty()) {
        throw std::invalid_argument("run_sequence: manifest lists no frames");
    }
    if (!manifest.alphas.empty() && manifest.alphas.size() != manifest.frames.size()) {
        throw std::invalid_argument("run_sequence: manifest has " +
                                    std::to_string(manifest.alphas.size()) + " alphas for " +
                                    std::to_string(manifest.frames.size()) + " frames");
    }
    fs::create_directories(out_dir);

    Pipeline pipeline = Pipeline::seeded(cfg);
    MemoryBank bank;
    Image prev_mask = init_mask;

    RunResult run;
    nlohmann::json frame_diags = nlohmann::json::array();
    for (std::size_t t = 0; t < manifest.frames.size(); ++t) {
        Image frame;
        try {
            frame = read_image(manifest.frames[t]);
        } catch (const std::exception& e) {
            throw std::runtime_error("run_sequence: frame " + std::to_string(t) + " (" +
                                     manifest.frames[t] + "): " + e.what());
        }
        FrameResult result = pipeline.infer_frame(frame, bank, prev_mask);
        prev_mask = result.fg_mask;

        const std::string alpha_name = frame_file_name("alpha", static_cast<int>(t));
        const std::string mask_name = frame_file_name("mask", static_cast<int>(t));
        write_image(result.alpha, (fs::path(out_dir) / alpha_name).string(), 65535);
        write_image(result.fg_mask, (fs::path(out_dir) / mask_name).string(), 255);
        run.alpha_files.push_back(alpha_name);
        run.mask_files.push_back(mask_name);
        run.diagnostics.push_back(result.diagnostics);
        frame_diags.push_back(diagnostics_to_json(result.diagnostics));
    }

    // Output manifest: absolute source frames, directory-relative predictions.
    Manifest out_manifest;
    for (const std::string& f : manifest.frames) {
        out_manifest.frames.push_back(fs::absolute(f).string());
    }
    out_manifest.alphas = run.alpha_files;
    out_manifest.masks = run.mask_files;
    out_manifest.seed = cfg.seed;
    out_manifest.fps = manifest.fps;
    save_manifest(out_manifest, out_dir);

    nlohmann::json diag_json;
    diag_json["config"] = nlohmann::json::parse(cfg.to_json());
    diag_json["frames"] = frame_diags;

    // Metrics against ground truth, computed from the files just written so a
    // standalone evaluation of this directory reports identical numbers.
    if (!manifest.alphas.empty()) {
        AlphaSequence pred, gt;
        for (std::size_t t = 0; t < manifest.alphas.size(); ++t) {
            pred.push_back(read_image((fs::path(out_dir) / run.alpha_files[t]).string()));
            gt.push_back(read_image(manifest.alphas[t]));
        }
        MetricsReport report = evaluate_all(pred, gt);
        run.metrics = report;
        diag_json["metrics"] = nlohmann::json::parse(metrics_report_to_json(report));
    }

    std::ofstream diag_out(fs::path(out_dir) / "diagnostics.json");
    if (!diag_out) throw std::runtime_error("cannot write diagnostics.json in " + out_dir);
    diag_out << diag_json.dump(2) << '\n';
    return run;
}

}  // namespace oavm

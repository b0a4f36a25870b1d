#include "oavm/compositing.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include "oavm/tensor.hpp"

namespace oavm {

Image composite(const Image& fg, const Image& bg, const Image& alpha) {
    if (!fg.same_dims(bg)) {
        throw std::invalid_argument("composite: foreground and background dims differ");
    }
    if (alpha.channels != 1 || alpha.height != fg.height || alpha.width != fg.width) {
        throw std::invalid_argument("composite: alpha must be single-channel and match frames");
    }
    Image out(fg.height, fg.width, fg.channels);
    for (int y = 0; y < fg.height; ++y) {
        for (int x = 0; x < fg.width; ++x) {
            const double a = alpha.at(y, x);
            for (int c = 0; c < fg.channels; ++c) {
                out.at(y, x, c) = a * fg.at(y, x, c) + (1.0 - a) * bg.at(y, x, c);
            }
        }
    }
    return out;
}

Image merge_alphas(const Image& a1, const Image& a2) {
    if (!a1.same_dims(a2)) throw std::invalid_argument("merge_alphas: dims differ");
    Image out(a1.height, a1.width, 1);
    for (std::size_t i = 0; i < a1.data.size(); ++i) {
        out.data[i] = 1.0 - (1.0 - a1.data[i]) * (1.0 - a2.data[i]);
    }
    return out;
}

SfmDecisions sfm_decisions(const AugmentConfig& cfg) {
    if (cfg.p1 < 0 || cfg.p1 > 1 || cfg.p2 < 0 || cfg.p2 > 1) {
        throw std::invalid_argument("sfm: probabilities must lie in [0,1]");
    }
    Rng rng(cfg.seed);
    SfmDecisions d;
    d.inject = rng.bernoulli(cfg.p1);
    d.single_supervision = rng.bernoulli(cfg.p2);
    return d;
}

Clip sfm_compose(const Clip& clip1, const Clip& clip2, const std::vector<Image>& bg,
                 const AugmentConfig& cfg, SfmDecisions* decisions_out) {
    const std::size_t n = clip1.size();
    if (clip1.alphas.size() != n) {
        throw std::invalid_argument("sfm_compose: clip1 frame/alpha length mismatch");
    }
    if (bg.size() != n) {
        throw std::invalid_argument("sfm_compose: background sequence length mismatch");
    }
    const SfmDecisions d = sfm_decisions(cfg);
    if (d.inject && (clip2.size() != n || clip2.alphas.size() != n)) {
        throw std::invalid_argument("sfm_compose: clip2 length mismatch");
    }
    if (decisions_out) *decisions_out = d;

    Clip out;
    out.frames.reserve(n);
    out.alphas.reserve(n);
    out.instance_masks.reserve(n);
    for (std::size_t t = 0; t < n; ++t) {
        Image base = d.inject ? composite(clip2.frames[t], bg[t], clip2.alphas[t]) : bg[t];
        out.frames.push_back(composite(clip1.frames[t], base, clip1.alphas[t]));

        if (d.inject && !d.single_supervision) {
            out.alphas.push_back(merge_alphas(clip1.alphas[t], clip2.alphas[t]));
        } else {
            out.alphas.push_back(clip1.alphas[t]);
        }

        std::vector<Image> masks;
        masks.push_back(binarize(clip1.alphas[t], 0.5));
        if (d.inject) masks.push_back(binarize(clip2.alphas[t], 0.5));
        out.instance_masks.push_back(std::move(masks));
    }
    return out;
}

// --- synthetic generator -----------------------------------------------------

SynthParams synth_params(int frames, int height, int width, int n_objects, std::uint64_t seed) {
    if (frames < 1) throw std::invalid_argument("synth: need at least one frame");
    if (n_objects < 1) throw std::invalid_argument("synth: need at least one object");
    if (height < 8 || width < 8) {
        throw std::invalid_argument("synth: frame too small (need >= 8x8)");
    }
    Rng rng(seed);
    SynthParams params;
    params.bg_freq_y = rng.uniform(0.15, 0.45);
    params.bg_freq_x = rng.uniform(0.15, 0.45);
    for (int c = 0; c < 3; ++c) params.bg_phase[c] = rng.uniform(0, 6.28318530717958647692);

    const double min_dim = std::min(height, width);
    for (int i = 0; i < n_objects; ++i) {
        SynthObject obj;
        obj.cx0 = rng.uniform(0.3, 0.7) * width;
        obj.cy0 = rng.uniform(0.3, 0.7) * height;
        obj.vx = rng.uniform(-1.5, 1.5);
        obj.vy = rng.uniform(-1.5, 1.5);
        obj.ax = rng.uniform(0.10, 0.25) * min_dim;
        obj.ay = rng.uniform(0.10, 0.25) * min_dim;
        // two-pixel soft edge along the minor axis, in elliptical-radius units
        obj.edge = 1.0 / std::min(obj.ax, obj.ay);
        for (int c = 0; c < 3; ++c) obj.color[c] = rng.uniform(0.2, 1.0);
        params.objects.push_back(obj);
    }
    return params;
}

double synth_object_alpha(const SynthObject& obj, int t, double px, double py) {
    const double cx = obj.cx0 + obj.vx * t;
    const double cy = obj.cy0 + obj.vy * t;
    const double dx = (px - cx) / obj.ax;
    const double dy = (py - cy) / obj.ay;
    const double rho = std::sqrt(dx * dx + dy * dy);
    // linear falloff across [1-edge, 1+edge]
    return std::clamp((1.0 + obj.edge - rho) / (2.0 * obj.edge), 0.0, 1.0);
}

Clip synth_sequence(int frames, int height, int width, int n_objects, std::uint64_t seed) {
    const SynthParams params = synth_params(frames, height, width, n_objects, seed);

    Clip clip;
    clip.frames.reserve(frames);
    clip.alphas.reserve(frames);
    clip.instance_masks.reserve(frames);

    Image background(height, width, 3);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double wave = std::sin(params.bg_freq_x * x) * std::sin(params.bg_freq_y * y);
            for (int c = 0; c < 3; ++c) {
                background.at(y, x, c) =
                    0.5 + 0.25 * wave * std::cos(params.bg_phase[c]) +
                    0.15 * std::sin(params.bg_freq_y * y + params.bg_phase[c]);
            }
        }
    }
    for (auto& v : background.data) v = std::clamp(v, 0.0, 1.0);

    for (int t = 0; t < frames; ++t) {
        Image frame = background;
        Image union_alpha(height, width, 1);
        std::vector<Image> masks;
        masks.reserve(params.objects.size());

        for (const SynthObject& obj : params.objects) {
            Image alpha(height, width, 1);
            for (int y = 0; y < height; ++y) {
                for (int x = 0; x < width; ++x) {
                    alpha.at(y, x) = synth_object_alpha(obj, t, x, y);
                }
            }
            Image color = Image::zeros(height, width, 3);
            for (int y = 0; y < height; ++y) {
                for (int x = 0; x < width; ++x) {
                    for (int c = 0; c < 3; ++c) color.at(y, x, c) = obj.color[c];
                }
            }
            frame = composite(color, frame, alpha);
            union_alpha = merge_alphas(union_alpha, alpha);
            masks.push_back(binarize(alpha, 0.5));
        }

        clip.frames.push_back(std::move(frame));
        clip.alphas.push_back(std::move(union_alpha));
        clip.instance_masks.push_back(std::move(masks));
    }
    return clip;
}

Manifest save_clip(const Clip& clip, const std::string& dir) {
    if (clip.frames.empty()) throw std::invalid_argument("save_clip: clip has no frames");
    if (clip.alphas.size() != clip.frames.size()) {
        throw std::invalid_argument("save_clip: " + std::to_string(clip.alphas.size()) +
                                    " alphas for " + std::to_string(clip.frames.size()) +
                                    " frames");
    }
    std::filesystem::create_directories(dir);
    const std::filesystem::path root(dir);

    Manifest m;
    char name[32];
    for (std::size_t t = 0; t < clip.frames.size(); ++t) {
        std::snprintf(name, sizeof name, "frame_%04zu.ppm", t);
        write_image(clip.frames[t], (root / name).string(), 255);
        m.frames.push_back(name);

        std::snprintf(name, sizeof name, "alpha_%04zu.pgm", t);
        write_image(clip.alphas[t], (root / name).string(), 65535);
        m.alphas.push_back(name);

        std::snprintf(name, sizeof name, "mask_%04zu.pgm", t);
        write_image(binarize(clip.alphas[t], 0.5), (root / name).string(), 255);
        m.masks.push_back(name);

        if (t < clip.instance_masks.size()) {
            for (std::size_t i = 0; i < clip.instance_masks[t].size(); ++i) {
                std::snprintf(name, sizeof name, "obj%zu_%04zu.pgm", i, t);
                write_image(clip.instance_masks[t][i], (root / name).string(), 255);
            }
        }
    }
    save_manifest(m, dir);
    return m;
}

}  // namespace oavm

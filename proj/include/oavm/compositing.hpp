#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oavm/image.hpp"
#include "oavm/manifest.hpp"

namespace oavm {

/// A frame sequence with per-frame alphas and, when known, per-object binary
/// instance masks (instance_masks[t][i] is object i's mask at frame t).
struct Clip {
    std::vector<Image> frames;
    std::vector<Image> alphas;
    std::vector<std::vector<Image>> instance_masks;

    std::size_t size() const { return frames.size(); }
};

struct AugmentConfig {
    double p1 = 0.4;  // probability of injecting a second foreground
    double p2 = 0.5;  // probability of single-object supervision
    std::uint64_t seed = 0;
};

/// Per-clip branch draws for the merging augmentation. Both are always drawn
/// (stable stream); merged supervision only takes effect when inject is true.
struct SfmDecisions {
    bool inject = false;
    bool single_supervision = false;
};

SfmDecisions sfm_decisions(const AugmentConfig& cfg);

/// I = alpha * F + (1 - alpha) * B, per pixel and channel.
Image composite(const Image& fg, const Image& bg, const Image& alpha);

/// Merged ground-truth alpha of two stacked foregrounds: 1 - (1-a1)(1-a2).
Image merge_alphas(const Image& a1, const Image& a2);

/// Sequential foreground merging: with probability p1, clip2 is composited
/// into the background first (so it sits behind clip1); supervision alpha is
/// clip1's alone with probability p2, the merged alpha otherwise. Ground-truth
/// instance masks are each present foreground's alpha binarized at 0.5.
Clip sfm_compose(const Clip& clip1, const Clip& clip2, const std::vector<Image>& bg,
                 const AugmentConfig& cfg, SfmDecisions* decisions_out = nullptr);

// --- synthetic ground-truth generator ---------------------------------------

/// One moving soft-edged ellipse. alpha(p) falls linearly from 1 to 0 over the
/// elliptical-radius band [1-edge, 1+edge]; edge is chosen so the transition
/// is about two pixels wide along the minor axis.
struct SynthObject {
    double cx0 = 0, cy0 = 0;   // center at frame 0
    double vx = 0, vy = 0;     // pixels per frame
    double ax = 0, ay = 0;     // semi-axes
    double edge = 0;           // soft band half-width in elliptical-radius units
    double color[3] = {0, 0, 0};
};

struct SynthParams {
    std::vector<SynthObject> objects;
    double bg_phase[3] = {0, 0, 0};
    double bg_freq_x = 0, bg_freq_y = 0;
};

/// The seed-expanded scene description behind synth_sequence; exposed so
/// analytic checks can be made against the exact generating parameters.
SynthParams synth_params(int frames, int height, int width, int n_objects, std::uint64_t seed);

/// Exact analytic alpha of one object at frame t, evaluated at pixel centers.
double synth_object_alpha(const SynthObject& obj, int t, double px, double py);

/// Renders a deterministic clip: textured background, n moving ellipses, the
/// union alpha as ground truth, and per-object binary masks.
Clip synth_sequence(int frames, int height, int width, int n_objects, std::uint64_t seed);

/// Writes the clip into dir: frames as PPM, alphas as 16-bit PGM, union
/// masks (alpha binarized at 0.5) and any per-object masks as PGM, plus a
/// manifest.json listing them. Returns the saved manifest.
Manifest save_clip(const Clip& clip, const std::string& dir);

}  // namespace oavm

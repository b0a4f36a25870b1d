#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "oavm/compositing.hpp"
#include "oavm/image.hpp"
#include "oavm/manifest.hpp"
#include "oavm/tensor.hpp"

using namespace oavm;

namespace {

Image random_image(int h, int w, int c, Rng& rng) {
    Image img(h, w, c);
    for (auto& v : img.data) v = rng.next_double();
    return img;
}

Clip random_clip(int frames, int h, int w, Rng& rng) {
    Clip clip;
    for (int t = 0; t < frames; ++t) {
        clip.frames.push_back(random_image(h, w, 3, rng));
        clip.alphas.push_back(random_image(h, w, 1, rng));
    }
    return clip;
}

}  // namespace

TEST_SUITE("compositing") {

TEST_CASE("composite at alpha one returns the foreground") {
    Rng rng(31);
    Image fg = random_image(4, 5, 3, rng), bg = random_image(4, 5, 3, rng);
    Image out = composite(fg, bg, Image::constant(4, 5, 1, 1.0));
    for (std::size_t i = 0; i < out.data.size(); ++i) CHECK(out.data[i] == fg.data[i]);
}

TEST_CASE("composite at alpha zero returns the background") {
    Rng rng(32);
    Image fg = random_image(4, 5, 3, rng), bg = random_image(4, 5, 3, rng);
    Image out = composite(fg, bg, Image::zeros(4, 5));
    for (std::size_t i = 0; i < out.data.size(); ++i) CHECK(out.data[i] == bg.data[i]);
}

TEST_CASE("composite at alpha half blends white and black to half") {
    Image out = composite(Image::constant(2, 2, 3, 1.0), Image::zeros(2, 2, 3),
                          Image::constant(2, 2, 1, 0.5));
    for (double v : out.data) CHECK(v == 0.5);
}

TEST_CASE("composite is elementwise linear in alpha") {
    Rng rng(33);
    Image fg = random_image(6, 6, 3, rng), bg = random_image(6, 6, 3, rng);
    Image a1(6, 6, 1), a2(6, 6, 1), sum(6, 6, 1);
    for (std::size_t i = 0; i < a1.data.size(); ++i) {
        a1.data[i] = rng.uniform(0.0, 0.5);
        a2.data[i] = rng.uniform(0.0, 0.5);
        sum.data[i] = a1.data[i] + a2.data[i];
    }
    Image i1 = composite(fg, bg, a1), i2 = composite(fg, bg, a2);
    Image i0 = composite(fg, bg, Image::zeros(6, 6));
    Image is = composite(fg, bg, sum);
    for (std::size_t i = 0; i < is.data.size(); ++i) {
        CHECK(i1.data[i] + i2.data[i] - i0.data[i] == doctest::Approx(is.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("composite rejects mismatched dimensions") {
    Rng rng(34);
    CHECK_THROWS_AS(composite(random_image(4, 4, 3, rng), random_image(4, 5, 3, rng),
                              Image::zeros(4, 4)),
                    std::invalid_argument);
    CHECK_THROWS_AS(composite(random_image(4, 4, 3, rng), random_image(4, 4, 3, rng),
                              Image::zeros(5, 4)),
                    std::invalid_argument);
}

TEST_CASE("merged alpha follows the two-layer formula and is symmetric") {
    Rng rng(35);
    Image a1 = random_image(7, 3, 1, rng), a2 = random_image(7, 3, 1, rng);
    a1.data[0] = 0.5;
    a2.data[0] = 0.5;  // 1 - 0.25 = 0.75 pinned
    Image m = merge_alphas(a1, a2);
    CHECK(m.data[0] == 0.75);
    for (std::size_t i = 0; i < m.data.size(); ++i) {
        CHECK(m.data[i] == 1.0 - (1.0 - a1.data[i]) * (1.0 - a2.data[i]));
    }
    Image swapped = merge_alphas(a2, a1);
    for (std::size_t i = 0; i < m.data.size(); ++i) CHECK(m.data[i] == swapped.data[i]);
}

TEST_CASE("merged alpha dominates both inputs elementwise") {
    Rng rng(36);
    Image a1 = random_image(16, 16, 1, rng), a2 = random_image(16, 16, 1, rng);
    Image m = merge_alphas(a1, a2);
    for (std::size_t i = 0; i < m.data.size(); ++i) {
        CHECK(m.data[i] >= std::max(a1.data[i], a2.data[i]));
    }
}

TEST_CASE("sfm with injection disabled composites the first clip alone") {
    Rng rng(37);
    Clip c1 = random_clip(3, 8, 8, rng), c2 = random_clip(3, 8, 8, rng);
    std::vector<Image> bg;
    for (int t = 0; t < 3; ++t) bg.push_back(random_image(8, 8, 3, rng));

    AugmentConfig cfg;
    cfg.p1 = 0.0;  // injection branch can never fire
    cfg.seed = 99;
    SfmDecisions d;
    Clip out = sfm_compose(c1, c2, bg, cfg, &d);
    CHECK_FALSE(d.inject);
    REQUIRE(out.size() == 3);
    for (int t = 0; t < 3; ++t) {
        Image expect = composite(c1.frames[t], bg[t], c1.alphas[t]);
        for (std::size_t i = 0; i < expect.data.size(); ++i) {
            CHECK(out.frames[t].data[i] == expect.data[i]);
        }
        // supervision stays the first clip's alpha, one instance mask only
        for (std::size_t i = 0; i < out.alphas[t].data.size(); ++i) {
            CHECK(out.alphas[t].data[i] == c1.alphas[t].data[i]);
        }
        REQUIRE(out.instance_masks[t].size() == 1);
    }
}

TEST_CASE("sfm with injection stacks the second clip behind the first") {
    Rng rng(38);
    Clip c1 = random_clip(2, 8, 8, rng), c2 = random_clip(2, 8, 8, rng);
    std::vector<Image> bg;
    for (int t = 0; t < 2; ++t) bg.push_back(random_image(8, 8, 3, rng));

    AugmentConfig cfg;
    cfg.p1 = 1.0;  // always inject
    cfg.p2 = 0.0;  // always merged supervision
    cfg.seed = 5;
    SfmDecisions d;
    Clip out = sfm_compose(c1, c2, bg, cfg, &d);
    CHECK(d.inject);
    CHECK_FALSE(d.single_supervision);
    for (int t = 0; t < 2; ++t) {
        Image behind = composite(c2.frames[t], bg[t], c2.alphas[t]);
        Image expect = composite(c1.frames[t], behind, c1.alphas[t]);
        for (std::size_t i = 0; i < expect.data.size(); ++i) {
            CHECK(out.frames[t].data[i] == expect.data[i]);
        }
        Image merged = merge_alphas(c1.alphas[t], c2.alphas[t]);
        for (std::size_t i = 0; i < merged.data.size(); ++i) {
            CHECK(out.alphas[t].data[i] == merged.data[i]);
        }
        // one binarized instance mask per present foreground
        REQUIRE(out.instance_masks[t].size() == 2);
        Image m1 = binarize(c1.alphas[t], 0.5), m2 = binarize(c2.alphas[t], 0.5);
        for (std::size_t i = 0; i < m1.data.size(); ++i) {
            CHECK(out.instance_masks[t][0].data[i] == m1.data[i]);
            CHECK(out.instance_masks[t][1].data[i] == m2.data[i]);
        }
    }
}

TEST_CASE("sfm single-object supervision keeps the first alpha despite injection") {
    Rng rng(39);
    Clip c1 = random_clip(2, 8, 8, rng), c2 = random_clip(2, 8, 8, rng);
    std::vector<Image> bg;
    for (int t = 0; t < 2; ++t) bg.push_back(random_image(8, 8, 3, rng));

    AugmentConfig cfg;
    cfg.p1 = 1.0;
    cfg.p2 = 1.0;  // always single-object supervision
    cfg.seed = 6;
    SfmDecisions d;
    Clip out = sfm_compose(c1, c2, bg, cfg, &d);
    CHECK(d.inject);
    CHECK(d.single_supervision);
    for (int t = 0; t < 2; ++t) {
        for (std::size_t i = 0; i < out.alphas[t].data.size(); ++i) {
            CHECK(out.alphas[t].data[i] == c1.alphas[t].data[i]);
        }
        REQUIRE(out.instance_masks[t].size() == 2);  // both foregrounds are present
    }
}

TEST_CASE("sfm rejects mismatched sequence lengths") {
    Rng rng(40);
    Clip c1 = random_clip(3, 8, 8, rng), c2 = random_clip(2, 8, 8, rng);
    std::vector<Image> bg;
    for (int t = 0; t < 3; ++t) bg.push_back(random_image(8, 8, 3, rng));
    AugmentConfig cfg;
    cfg.p1 = 1.0;
    cfg.seed = 1;
    CHECK_THROWS_AS(sfm_compose(c1, c2, bg, cfg), std::invalid_argument);
    bg.pop_back();
    CHECK_THROWS_AS(sfm_compose(c1, c1, bg, cfg), std::invalid_argument);
}

TEST_CASE("sfm decisions are deterministic in the seed") {
    AugmentConfig cfg;
    cfg.seed = 12345;
    const SfmDecisions a = sfm_decisions(cfg);
    const SfmDecisions b = sfm_decisions(cfg);
    CHECK(a.inject == b.inject);
    CHECK(a.single_supervision == b.single_supervision);
    CHECK_THROWS_AS(
        [] {
            AugmentConfig bad;
            bad.p1 = 1.5;
            return sfm_decisions(bad);
        }(),
        std::invalid_argument);
}

TEST_CASE("synthetic clips are deterministic in the seed") {
    const Clip a = synth_sequence(3, 16, 16, 2, 77);
    const Clip b = synth_sequence(3, 16, 16, 2, 77);
    REQUIRE(a.size() == b.size());
    for (std::size_t t = 0; t < a.size(); ++t) {
        CHECK(a.frames[t].data == b.frames[t].data);
        CHECK(a.alphas[t].data == b.alphas[t].data);
        REQUIRE(a.instance_masks[t].size() == 2);
        for (std::size_t i = 0; i < 2; ++i) {
            CHECK(a.instance_masks[t][i].data == b.instance_masks[t][i].data);
        }
    }
}

TEST_CASE("synthetic alpha stays within bounds and masks are binary") {
    const Clip clip = synth_sequence(4, 24, 32, 3, 9);
    for (const Image& a : clip.alphas) {
        for (double v : a.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
    for (const auto& masks : clip.instance_masks) {
        for (const Image& m : masks) CHECK(is_binary(m));
    }
}

TEST_CASE("rendered ellipse area matches the analytic soft area") {
    // stationary ellipse well inside a 64x64 frame
    SynthObject obj;
    obj.cx0 = 32.0;
    obj.cy0 = 30.0;
    obj.ax = 10.0;
    obj.ay = 6.0;
    obj.edge = 1.0 / 6.0;

    double rendered = 0.0;
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) rendered += synth_object_alpha(obj, 0, x, y);
    }

    // integral of the radial profile: pi*a*b*[(1-e)^2 + I/e] with
    // I = int_{1-e}^{1+e} rho*(1+e-rho)/2 drho
    const double e = obj.edge;
    const double hi = 1.0 + e, lo = 1.0 - e;
    const double I = (hi * hi * hi / 6.0) - (hi * lo * lo / 2.0) + (lo * lo * lo / 3.0);
    const double pi = 3.14159265358979323846;
    const double analytic = pi * obj.ax * obj.ay * (lo * lo + I / e);

    // Ramanujan perimeter approximation bounds the 1-pixel sampling ring
    const double a = obj.ax, b = obj.ay;
    const double perimeter = pi * (3.0 * (a + b) - std::sqrt((3.0 * a + b) * (a + 3.0 * b)));
    CHECK(std::abs(rendered - analytic) <= perimeter);
}

TEST_CASE("synthetic alpha vanishes outside the soft band") {
    SynthObject obj;
    obj.cx0 = 20.0;
    obj.cy0 = 20.0;
    obj.ax = 5.0;
    obj.ay = 5.0;
    obj.edge = 0.2;
    CHECK(synth_object_alpha(obj, 0, 20.0, 20.0) == 1.0);             // center
    CHECK(synth_object_alpha(obj, 0, 20.0 + 5.0 * 1.3, 20.0) == 0.0);  // beyond 1+edge
    // inside the band the value is strictly between 0 and 1
    const double mid = synth_object_alpha(obj, 0, 20.0 + 5.0, 20.0);
    CHECK(mid > 0.0);
    CHECK(mid < 1.0);
}

TEST_CASE("saved clips round-trip through the manifest") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "oavm_test_saveclip";
    fs::remove_all(dir);

    const Clip clip = synth_sequence(2, 16, 16, 1, 3);
    const Manifest saved = save_clip(clip, dir.string());
    REQUIRE(saved.frames.size() == 2);
    REQUIRE(saved.alphas.size() == 2);
    REQUIRE(saved.masks.size() == 2);

    const Manifest loaded = load_manifest((dir / "manifest.json").string());
    validate_manifest(loaded);
    // 16-bit alpha storage: round-trip error bounded by half a quantum
    for (std::size_t t = 0; t < 2; ++t) {
        Image alpha = read_image(loaded.alphas[t]);
        REQUIRE(alpha.same_dims(clip.alphas[t]));
        for (std::size_t i = 0; i < alpha.data.size(); ++i) {
            CHECK(std::abs(alpha.data[i] - clip.alphas[t].data[i]) <= 0.5 / 65535.0);
        }
        Image mask = read_image(loaded.masks[t]);
        Image expect = binarize(clip.alphas[t], 0.5);
        CHECK(mask.data == expect.data);
    }
    fs::remove_all(dir);
}

TEST_CASE("synthetic generator rejects degenerate parameters") {
    CHECK_THROWS_AS(synth_sequence(0, 16, 16, 1, 1), std::invalid_argument);
    CHECK_THROWS_AS(synth_sequence(2, 16, 16, 0, 1), std::invalid_argument);
    CHECK_THROWS_AS(synth_sequence(2, 4, 16, 1, 1), std::invalid_argument);
}

}  // TEST_SUITE

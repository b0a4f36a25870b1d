#include <doctest.h>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "oavm/image.hpp"
#include "oavm/ogcr.hpp"
#include "oavm/tensor.hpp"

using namespace oavm;

namespace {

const double kNegInf = -std::numeric_limits<double>::infinity();

Tensor random_tensor(std::vector<int> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-1, 1);
    return t;
}

std::vector<double> linear_row(const LinearLayer& layer, const std::vector<double>& x) {
    std::vector<double> y(static_cast<std::size_t>(layer.out_features()));
    for (int o = 0; o < layer.out_features(); ++o) {
        double acc = layer.bias.at(o);
        for (int i = 0; i < layer.in_features(); ++i) {
            acc += layer.weight.at(o, i) * x[static_cast<std::size_t>(i)];
        }
        y[static_cast<std::size_t>(o)] = acc;
    }
    return y;
}

}  // namespace

TEST_SUITE("ogcr") {

TEST_CASE("full-foreground guidance masks nothing") {
    GuidanceMask g = make_guidance(Image::constant(12, 12, 1, 1.0), 6, 6, 3);
    CHECK_FALSE(g.empty_support);
    CHECK(g.support_count() == 36);
    for (std::size_t i = 0; i < g.values.numel(); ++i) CHECK(g.values[i] == 0.0);
}

TEST_CASE("empty guidance raises the fallback flag") {
    GuidanceMask g = make_guidance(Image::zeros(12, 12), 6, 6, 3);
    CHECK(g.empty_support);
    CHECK(g.support_count() == 0);
    for (std::size_t i = 0; i < g.values.numel(); ++i) CHECK(g.values[i] == kNegInf);
}

TEST_CASE("a centered single-pixel mask dilates to nine allowed cells") {
    Image mask = Image::zeros(9, 9);
    mask.at(4, 4) = 1.0;
    GuidanceMask g = make_guidance(mask, 9, 9, 3);  // same-size resample is the identity
    CHECK(g.support_count() == 9);
    for (int y = 0; y < 9; ++y) {
        for (int x = 0; x < 9; ++x) {
            const bool inside = std::abs(y - 4) <= 1 && std::abs(x - 4) <= 1;
            CHECK(g.values.at(y, x) == (inside ? 0.0 : kNegInf));
        }
    }
}

TEST_CASE("guidance support translates with the mask away from borders") {
    Image a = Image::zeros(9, 9), b = Image::zeros(9, 9);
    a.at(3, 3) = 1.0;
    b.at(3, 4) = 1.0;
    GuidanceMask ga = make_guidance(a, 9, 9, 3);
    GuidanceMask gb = make_guidance(b, 9, 9, 3);
    for (int y = 0; y < 9; ++y) {
        for (int x = 0; x < 8; ++x) {
            CHECK((ga.values.at(y, x) == 0.0) == (gb.values.at(y, x + 1) == 0.0));
        }
    }
}

TEST_CASE("guidance rejects an even dilation kernel") {
    CHECK_THROWS_AS(make_guidance(Image::zeros(8, 8), 4, 4, 2), std::invalid_argument);
}

TEST_CASE("fusing the foreground-background embedding is an elementwise sum") {
    Rng rng(81);
    const int n = 4, c = 8;
    OgcrModule mod = OgcrModule::seeded(n, c, 3);
    Tensor q_o = random_tensor({n, c}, rng);
    Tensor fused = mod.fuse_fb(q_o);
    for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
            CHECK(fused.at(i, ch) == mod.fb_embedding.at(i, ch) + q_o.at(i, ch));
        }
    }

    OgcrModule zeroed = mod;
    zeroed.fb_embedding = Tensor::zeros({n, c});
    Tensor same = zeroed.fuse_fb(q_o);
    for (std::size_t i = 0; i < same.numel(); ++i) CHECK(same[i] == q_o[i]);

    Tensor only_embed = mod.fuse_fb(Tensor::zeros({n, c}));
    for (std::size_t i = 0; i < only_embed.numel(); ++i) CHECK(only_embed[i] == mod.fb_embedding[i]);

    CHECK_THROWS_AS(mod.fuse_fb(random_tensor({n, c + 4}, rng)), std::invalid_argument);
}

TEST_CASE("an all-zero guidance equals the empty-support fallback") {
    Rng rng(82);
    const int n = 3, c = 8, h = 4, w = 4;
    OgcrModule mod = OgcrModule::seeded(n, c, 5);
    Tensor q_fb = random_tensor({n, c}, rng);
    Tensor f_m = random_tensor({h, w, c}, rng);

    GuidanceMask open;
    open.values = Tensor::zeros({h, w});

    GuidanceMask empty;
    empty.values = Tensor::full({h, w}, kNegInf);
    empty.empty_support = true;

    bool fell_back = false;
    Tensor a = mod.fq_attn(q_fb, f_m, open);
    Tensor b = mod.fq_attn(q_fb, f_m, empty, &fell_back);
    CHECK(fell_back);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("a single allowed token is copied to every query") {
    Rng rng(83);
    const int n = 4, c = 8, h = 3, w = 5;
    OgcrModule mod = OgcrModule::seeded(n, c, 7);
    Tensor q_fb = random_tensor({n, c}, rng);
    Tensor f_m = random_tensor({h, w, c}, rng);

    const int ty = 1, tx = 3;
    GuidanceMask g;
    g.values = Tensor::full({h, w}, kNegInf);
    g.values.at(ty, tx) = 0.0;

    Tensor out = mod.fq_attn(q_fb, f_m, g);
    std::vector<double> token(static_cast<std::size_t>(c));
    for (int ch = 0; ch < c; ++ch) token[static_cast<std::size_t>(ch)] = f_m.at(ty, tx, ch);
    const std::vector<double> v = linear_row(mod.fq_v, token);
    for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) CHECK(out.at(i, ch) == v[static_cast<std::size_t>(ch)]);
    }
}

TEST_CASE("features at masked positions cannot reach the output") {
    Rng rng(84);
    const int n = 3, c = 8, h = 4, w = 4;
    OgcrModule mod = OgcrModule::seeded(n, c, 9);
    Tensor q_fb = random_tensor({n, c}, rng);
    Tensor f_m = random_tensor({h, w, c}, rng);

    GuidanceMask g;
    g.values = Tensor::zeros({h, w});
    g.values.at(0, 0) = kNegInf;
    g.values.at(2, 3) = kNegInf;

    Tensor before = mod.fq_attn(q_fb, f_m, g);
    Tensor corrupted = f_m;
    for (int ch = 0; ch < c; ++ch) {
        corrupted.at(0, 0, ch) = 1000.0;
        corrupted.at(2, 3, ch) = -1000.0;
    }
    Tensor after = mod.fq_attn(q_fb, corrupted, g);
    for (std::size_t i = 0; i < before.numel(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("fq attention rejects mismatched guidance resolution") {
    Rng rng(85);
    OgcrModule mod = OgcrModule::seeded(2, 8, 11);
    GuidanceMask g;
    g.values = Tensor::zeros({3, 3});
    CHECK_THROWS_AS(mod.fq_attn(random_tensor({2, 8}, rng), random_tensor({4, 4, 8}, rng), g),
                    std::invalid_argument);
}

TEST_CASE("callback with a single object broadcasts its state everywhere") {
    Rng rng(86);
    const int c = 8, h = 3, w = 3;
    OgcrModule mod = OgcrModule::seeded(1, c, 13);
    Tensor x_m = random_tensor({1, c}, rng);
    Tensor f_m = random_tensor({h, w, c}, rng);
    Tensor out = mod.callback_correct(x_m, f_m);

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            // context = X_m[0]; concat(context, features) through the projection
            std::vector<double> cat(static_cast<std::size_t>(2 * c));
            for (int ch = 0; ch < c; ++ch) {
                cat[static_cast<std::size_t>(ch)] = x_m.at(0, ch);
                cat[static_cast<std::size_t>(c + ch)] = f_m.at(y, x, ch);
            }
            const std::vector<double> want = linear_row(mod.callback_proj, cat);
            for (int ch = 0; ch < c; ++ch) {
                CHECK(out.at(y, x, ch) == doctest::Approx(want[static_cast<std::size_t>(ch)]).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("callback with zero object states reduces to a feature projection") {
    Rng rng(87);
    const int n = 4, c = 8, h = 2, w = 3;
    OgcrModule mod = OgcrModule::seeded(n, c, 17);
    Tensor f_m = random_tensor({h, w, c}, rng);
    Tensor out = mod.callback_correct(Tensor::zeros({n, c}), f_m);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            std::vector<double> cat(static_cast<std::size_t>(2 * c), 0.0);
            for (int ch = 0; ch < c; ++ch) cat[static_cast<std::size_t>(c + ch)] = f_m.at(y, x, ch);
            const std::vector<double> want = linear_row(mod.callback_proj, cat);
            for (int ch = 0; ch < c; ++ch) {
                CHECK(out.at(y, x, ch) == doctest::Approx(want[static_cast<std::size_t>(ch)]).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("callback aggregation matches a scalar softmax-over-objects oracle") {
    Rng rng(88);
    const int n = 3, c = 8, h = 2, w = 2;
    OgcrModule mod = OgcrModule::seeded(n, c, 19);
    Tensor x_m = random_tensor({n, c}, rng);
    Tensor f_m = random_tensor({h, w, c}, rng);
    Tensor out = mod.callback_correct(x_m, f_m);

    const double scale = 1.0 / std::sqrt(static_cast<double>(c));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            std::vector<double> aff(static_cast<std::size_t>(n));
            double max_a = -1e300;
            for (int i = 0; i < n; ++i) {
                double dot = 0;
                for (int ch = 0; ch < c; ++ch) dot += f_m.at(y, x, ch) * x_m.at(i, ch);
                aff[static_cast<std::size_t>(i)] = dot * scale;
                max_a = std::max(max_a, aff[static_cast<std::size_t>(i)]);
            }
            double denom = 0;
            for (double& a : aff) {
                a = std::exp(a - max_a);
                denom += a;
            }
            std::vector<double> cat(static_cast<std::size_t>(2 * c), 0.0);
            for (int i = 0; i < n; ++i) {
                for (int ch = 0; ch < c; ++ch) {
                    cat[static_cast<std::size_t>(ch)] += aff[static_cast<std::size_t>(i)] / denom * x_m.at(i, ch);
                }
            }
            for (int ch = 0; ch < c; ++ch) cat[static_cast<std::size_t>(c + ch)] = f_m.at(y, x, ch);
            const std::vector<double> want = linear_row(mod.callback_proj, cat);
            for (int ch = 0; ch < c; ++ch) {
                CHECK(out.at(y, x, ch) == doctest::Approx(want[static_cast<std::size_t>(ch)]).epsilon(1e-10));
            }
        }
    }
}

TEST_CASE("refinement keeps a constant map constant") {
    const int c = 8;
    OgcrModule mod = OgcrModule::seeded(2, c, 23);
    Tensor out = mod.refine(Tensor::full({3, 4, c}, 0.5));
    REQUIRE(out.dim(0) == 3);
    REQUIRE(out.dim(1) == 4);
    for (int y = 0; y < 3; ++y) {
        for (int x = 0; x < 4; ++x) {
            for (int ch = 0; ch < c; ++ch) CHECK(out.at(y, x, ch) == out.at(0, 0, ch));
        }
    }
}

TEST_CASE("the forward pass is the documented composition and is deterministic") {
    Rng rng(89);
    const int n = 3, c = 8, h = 3, w = 3;
    OgcrModule mod = OgcrModule::seeded(n, c, 29);
    Tensor q_o = random_tensor({n, c}, rng);
    Tensor f_m = random_tensor({h, w, c}, rng);
    Image prev = Image::zeros(h, w);
    prev.at(1, 1) = 1.0;
    GuidanceMask g = make_guidance(prev, h, w, 3);

    Tensor a = mod.forward(f_m, q_o, g);
    Tensor b = mod.forward(f_m, q_o, g);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);

    Tensor chained = mod.refine(mod.callback_correct(mod.fq_attn(mod.fuse_fb(q_o), f_m, g), f_m));
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == chained[i]);
}

TEST_CASE("seeded modules are reproducible") {
    OgcrModule a = OgcrModule::seeded(4, 8, 99);
    OgcrModule b = OgcrModule::seeded(4, 8, 99);
    for (std::size_t i = 0; i < a.fb_embedding.numel(); ++i) {
        CHECK(a.fb_embedding[i] == b.fb_embedding[i]);
    }
    for (std::size_t i = 0; i < a.callback_proj.weight.numel(); ++i) {
        CHECK(a.callback_proj.weight[i] == b.callback_proj.weight[i]);
    }
}

}  // TEST_SUITE

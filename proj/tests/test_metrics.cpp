#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "oavm/image.hpp"
#include "oavm/metrics.hpp"
#include "oavm/tensor.hpp"

using namespace oavm;

namespace {

Image random_alpha(int h, int w, Rng& rng) {
    Image img(h, w, 1);
    for (auto& v : img.data) v = rng.next_double();
    return img;
}

AlphaSequence random_sequence(int frames, int h, int w, Rng& rng) {
    AlphaSequence seq;
    for (int t = 0; t < frames; ++t) seq.push_back(random_alpha(h, w, rng));
    return seq;
}

// direct 2D convolution with replicate borders, no separable shortcut
double gradient_magnitude_direct(const Image& img, int y, int x, const std::vector<double>& smooth,
                                 const std::vector<double>& deriv) {
    const int r = static_cast<int>(smooth.size()) / 2;
    double gx = 0, gy = 0;
    for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
            const int sy = std::clamp(y + dy, 0, img.height - 1);
            const int sx = std::clamp(x + dx, 0, img.width - 1);
            gx += img.at(sy, sx) * smooth[static_cast<std::size_t>(dy + r)] *
                  deriv[static_cast<std::size_t>(dx + r)];
            gy += img.at(sy, sx) * deriv[static_cast<std::size_t>(dy + r)] *
                  smooth[static_cast<std::size_t>(dx + r)];
        }
    }
    return std::sqrt(gx * gx + gy * gy);
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("mad and mse vanish on identical sequences") {
    Rng rng(91);
    AlphaSequence seq = random_sequence(3, 12, 12, rng);
    CHECK(mad(seq, seq) == 0.0);
    CHECK(mse(seq, seq) == 0.0);
}

TEST_CASE("maximal disagreement scores one thousand") {
    AlphaSequence ones, zeros;
    for (int t = 0; t < 2; ++t) {
        ones.push_back(Image::constant(10, 10, 1, 1.0));
        zeros.push_back(Image::zeros(10, 10));
    }
    CHECK(mad(ones, zeros) == 1000.0);
    CHECK(mse(ones, zeros) == 1000.0);
}

TEST_CASE("mad and mse match a double-loop reference and are symmetric") {
    Rng rng(92);
    AlphaSequence pred = random_sequence(4, 16, 16, rng);
    AlphaSequence gt = random_sequence(4, 16, 16, rng);

    double mad_acc = 0, mse_acc = 0;
    for (int t = 0; t < 4; ++t) {
        double m1 = 0, m2 = 0;
        for (int y = 0; y < 16; ++y) {
            for (int x = 0; x < 16; ++x) {
                const double d = pred[static_cast<std::size_t>(t)].at(y, x) -
                                 gt[static_cast<std::size_t>(t)].at(y, x);
                m1 += std::abs(d);
                m2 += d * d;
            }
        }
        mad_acc += m1 / 256.0;
        mse_acc += m2 / 256.0;
    }
    CHECK(mad(pred, gt) == doctest::Approx(mad_acc / 4.0 * 1e3).epsilon(1e-9));
    CHECK(mse(pred, gt) == doctest::Approx(mse_acc / 4.0 * 1e3).epsilon(1e-9));
    CHECK(mad(pred, gt) == mad(gt, pred));
    CHECK(mse(pred, gt) == mse(gt, pred));
}

TEST_CASE("gradient error vanishes on identical and on flat sequences") {
    Rng rng(93);
    AlphaSequence seq = random_sequence(2, 16, 16, rng);
    CHECK(grad_error(seq, seq) == 0.0);

    AlphaSequence flat_a, flat_b;
    for (int t = 0; t < 2; ++t) {
        flat_a.push_back(Image::constant(16, 16, 1, 0.3));
        flat_b.push_back(Image::constant(16, 16, 1, 0.9));
    }
    // flat fields have zero gradient up to roundoff in the derivative taps
    CHECK(grad_error(flat_a, flat_b) < 1e-24);
}

TEST_CASE("the smoothing kernel is normalized and its derivative is odd") {
    const std::vector<double> g = gaussian_kernel(1.4, 4);
    REQUIRE(g.size() == 9);
    double sum = 0;
    for (double v : g) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

    const std::vector<double> dg = gaussian_deriv_kernel(1.4, 4);
    CHECK(dg[4] == 0.0);
    for (int i = 1; i <= 4; ++i) {
        CHECK(dg[static_cast<std::size_t>(4 - i)] == -dg[static_cast<std::size_t>(4 + i)]);
    }
}

TEST_CASE("gradient error on a shifted edge matches direct convolution") {
    Image a(16, 16, 1), b(16, 16, 1);
    for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 16; ++x) {
            a.at(y, x) = x >= 8 ? 1.0 : 0.0;
            b.at(y, x) = x >= 9 ? 1.0 : 0.0;
        }
    }
    const std::vector<double> smooth = gaussian_kernel(1.4, 4);
    const std::vector<double> deriv = gaussian_deriv_kernel(1.4, 4);
    double acc = 0;
    for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 16; ++x) {
            const double d = gradient_magnitude_direct(a, y, x, smooth, deriv) -
                             gradient_magnitude_direct(b, y, x, smooth, deriv);
            acc += d * d;
        }
    }
    const double want = acc / 256.0 * 1e3;
    CHECK(grad_error({a}, {b}) == doctest::Approx(want).epsilon(1e-9));
    CHECK(grad_error({a}, {b}) == grad_error({b}, {a}));
}

TEST_CASE("gradient error rejects frames smaller than its kernel") {
    AlphaSequence tiny;
    tiny.push_back(Image::zeros(8, 16));
    CHECK_THROWS_WITH_AS(grad_error(tiny, tiny), doctest::Contains("9-tap"),
                         std::invalid_argument);
}

TEST_CASE("connectivity vanishes on identical and on fully-foreground frames") {
    Rng rng(94);
    AlphaSequence seq = random_sequence(2, 8, 8, rng);
    CHECK(conn_error(seq, seq) == 0.0);

    AlphaSequence full_a, full_b;
    full_a.push_back(Image::constant(8, 8, 1, 1.0));
    full_b.push_back(Image::constant(8, 8, 1, 1.0));
    CHECK(conn_error(full_a, full_b) == 0.0);
}

TEST_CASE("an isolated spurious pixel is charged in full") {
    // pred adds a disconnected foreground pixel absent from gt: its phi gap is
    // 1 at exactly one of four pixels
    Image pred(2, 2, 1), gt(2, 2, 1);
    pred.at(0, 0) = 1.0;
    pred.at(1, 1) = 1.0;
    gt.at(0, 0) = 1.0;
    CHECK(conn_error({pred}, {gt}) == doctest::Approx(250.0).epsilon(1e-12));
}

TEST_CASE("connectivity matches an independent union-find labeling") {
    Rng rng(95);
    for (int trial = 0; trial < 6; ++trial) {
        // two soft blobs per image so several threshold levels are non-empty
        auto blobs = [&rng](int h, int w) {
            Image img(h, w, 1);
            const int cy1 = 1 + static_cast<int>(rng.next_u64() % (static_cast<unsigned>(h) - 2));
            const int cx1 = 1 + static_cast<int>(rng.next_u64() % (static_cast<unsigned>(w) - 2));
            const int cy2 = 1 + static_cast<int>(rng.next_u64() % (static_cast<unsigned>(h) - 2));
            const int cx2 = 1 + static_cast<int>(rng.next_u64() % (static_cast<unsigned>(w) - 2));
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const double d1 = std::hypot(y - cy1, x - cx1);
                    const double d2 = std::hypot(y - cy2, x - cx2);
                    img.at(y, x) = std::clamp(1.1 - 0.35 * std::min(d1, d2), 0.0, 1.0);
                }
            }
            return img;
        };
        const Image pred = blobs(8, 8), gt = blobs(8, 8);

        // reference: union-find component labeling per threshold level
        const int h = 8, w = 8, n = h * w;
        std::vector<double> l_map(static_cast<std::size_t>(n), -1.0);
        for (int step = 1; step <= 9; ++step) {
            const double theta = step * 0.1;
            std::vector<char> joint(static_cast<std::size_t>(n));
            std::vector<int> parent(static_cast<std::size_t>(n));
            bool any = false;
            for (int i = 0; i < n; ++i) {
                joint[static_cast<std::size_t>(i)] =
                    pred.data[static_cast<std::size_t>(i)] >= theta &&
                    gt.data[static_cast<std::size_t>(i)] >= theta;
                any = any || joint[static_cast<std::size_t>(i)];
                parent[static_cast<std::size_t>(i)] = i;
            }
            if (!any) continue;
            std::function<int(int)> find = [&](int a) {
                return parent[static_cast<std::size_t>(a)] == a
                           ? a
                           : parent[static_cast<std::size_t>(a)] = find(parent[static_cast<std::size_t>(a)]);
            };
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const int i = y * w + x;
                    if (!joint[static_cast<std::size_t>(i)]) continue;
                    if (x + 1 < w && joint[static_cast<std::size_t>(i + 1)]) parent[static_cast<std::size_t>(find(i))] = find(i + 1);
                    if (y + 1 < h && joint[static_cast<std::size_t>(i + w)]) parent[static_cast<std::size_t>(find(i))] = find(i + w);
                }
            }
            std::vector<int> size(static_cast<std::size_t>(n), 0), first(static_cast<std::size_t>(n), n);
            for (int i = 0; i < n; ++i) {
                if (!joint[static_cast<std::size_t>(i)]) continue;
                const int root = find(i);
                ++size[static_cast<std::size_t>(root)];
                first[static_cast<std::size_t>(root)] = std::min(first[static_cast<std::size_t>(root)], i);
            }
            int best = -1;
            for (int i = 0; i < n; ++i) {
                if (!joint[static_cast<std::size_t>(i)]) continue;
                const int root = find(i);
                if (best == -1 || size[static_cast<std::size_t>(root)] > size[static_cast<std::size_t>(best)] ||
                    (size[static_cast<std::size_t>(root)] == size[static_cast<std::size_t>(best)] &&
                     first[static_cast<std::size_t>(root)] < first[static_cast<std::size_t>(best)])) {
                    best = root;
                }
            }
            for (int i = 0; i < n; ++i) {
                const bool in_best = joint[static_cast<std::size_t>(i)] && find(i) == best;
                if (l_map[static_cast<std::size_t>(i)] == -1.0 && !in_best) {
                    l_map[static_cast<std::size_t>(i)] = (step - 1) * 0.1;
                }
            }
        }
        double acc = 0;
        for (int i = 0; i < n; ++i) {
            const double l = l_map[static_cast<std::size_t>(i)] == -1.0 ? 1.0 : l_map[static_cast<std::size_t>(i)];
            const double dp = pred.data[static_cast<std::size_t>(i)] - l;
            const double dg = gt.data[static_cast<std::size_t>(i)] - l;
            acc += std::abs((1.0 - (dp >= 0.15 ? dp : 0.0)) - (1.0 - (dg >= 0.15 ? dg : 0.0)));
        }
        const double want = acc / n * 1e3;
        CHECK(conn_error({pred}, {gt}) == doctest::Approx(want).epsilon(1e-9));
    }
}

TEST_CASE("temporal coherence vanishes on identical and on static sequences") {
    Rng rng(96);
    AlphaSequence seq = random_sequence(3, 8, 8, rng);
    CHECK(dtssd(seq, seq) == 0.0);

    AlphaSequence static_a, static_b;
    for (int t = 0; t < 3; ++t) {
        static_a.push_back(Image::constant(8, 8, 1, 0.2));
        static_b.push_back(Image::constant(8, 8, 1, 0.8));
    }
    CHECK(dtssd(static_a, static_b) == 0.0);
}

TEST_CASE("temporal coherence matches a direct summation") {
    Rng rng(97);
    AlphaSequence pred = random_sequence(3, 8, 8, rng);
    AlphaSequence gt = random_sequence(3, 8, 8, rng);
    double acc = 0;
    for (int t = 1; t < 3; ++t) {
        for (int i = 0; i < 64; ++i) {
            const double dp = pred[static_cast<std::size_t>(t)].data[static_cast<std::size_t>(i)] -
                              pred[static_cast<std::size_t>(t - 1)].data[static_cast<std::size_t>(i)];
            const double dg = gt[static_cast<std::size_t>(t)].data[static_cast<std::size_t>(i)] -
                              gt[static_cast<std::size_t>(t - 1)].data[static_cast<std::size_t>(i)];
            acc += (dp - dg) * (dp - dg);
        }
    }
    const double want = std::sqrt(acc / 128.0) * 1e2;
    CHECK(dtssd(pred, gt) == doctest::Approx(want).epsilon(1e-9));
    CHECK(dtssd(pred, gt) == dtssd(gt, pred));
}

TEST_CASE("temporal coherence needs at least two frames") {
    AlphaSequence one;
    one.push_back(Image::zeros(8, 8));
    CHECK_THROWS_AS(dtssd(one, one), std::invalid_argument);
}

TEST_CASE("metrics reject mismatched sequences") {
    Rng rng(98);
    AlphaSequence a = random_sequence(2, 8, 8, rng);
    AlphaSequence b = random_sequence(3, 8, 8, rng);
    CHECK_THROWS_AS(mad(a, b), std::invalid_argument);
    AlphaSequence c = random_sequence(2, 8, 9, rng);
    CHECK_THROWS_AS(mse(a, c), std::invalid_argument);
}

TEST_CASE("the aggregate report carries per-frame details and serializes") {
    Rng rng(99);
    AlphaSequence pred = random_sequence(3, 16, 16, rng);
    AlphaSequence gt = random_sequence(3, 16, 16, rng);
    MetricsReport report = evaluate_all(pred, gt);
    CHECK(report.mad == mad(pred, gt));
    CHECK(report.mse == mse(pred, gt));
    CHECK(report.grad == grad_error(pred, gt));
    CHECK(report.conn == conn_error(pred, gt));
    REQUIRE(report.has_dtssd);
    CHECK(report.dtssd == dtssd(pred, gt));
    REQUIRE(report.per_frame.mad.size() == 3);
    REQUIRE(report.per_frame.dtssd.size() == 2);

    const nlohmann::json j = nlohmann::json::parse(metrics_report_to_json(report));
    CHECK(j.at("mad").get<double>() == report.mad);
    CHECK(j.at("dtssd").get<double>() == report.dtssd);
    CHECK(j.at("per_frame").at("mse").size() == 3);

    const std::string csv = metrics_report_to_csv(report);
    CHECK(csv.rfind("frame,mad,mse,grad,conn,dtssd", 0) == 0);
}

}  // TEST_SUITE

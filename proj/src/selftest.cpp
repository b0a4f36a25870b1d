#include "oavm/selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <vector>

#include "oavm/compositing.hpp"
#include "oavm/image.hpp"
#include "oavm/manifest.hpp"
#include "oavm/metrics.hpp"
#include "oavm/ogcr.hpp"
#include "oavm/pipeline.hpp"
#include "oavm/queries.hpp"
#include "oavm/temporal.hpp"
#include "oavm/tensor.hpp"

namespace fs = std::filesystem;

namespace oavm::selftest {

namespace {

using Vec = std::vector<double>;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

int randint(Rng& rng, int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
}

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

Image random_image(int h, int w, int c, Rng& rng) {
    Image img(h, w, c);
    for (auto& v : img.data) v = rng.next_double();
    return img;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// ---- scalar building blocks for the oracles ---------------------------------
// Everything below reads weights element by element and sums with plain loops;
// none of it shares code with the library's matmul/linear/softmax path.

Vec proj_row(const LinearLayer& layer, const Vec& x) {
    const int out = layer.out_features(), in = layer.in_features();
    Vec y(static_cast<std::size_t>(out));
    for (int o = 0; o < out; ++o) {
        double acc = layer.bias.at(o);
        for (int i = 0; i < in; ++i) acc += layer.weight.at(o, i) * x[static_cast<std::size_t>(i)];
        y[static_cast<std::size_t>(o)] = acc;
    }
    return y;
}

Vec softmax_vec(const Vec& scores) {
    double m = kNegInf;
    for (double s : scores) m = std::max(m, s);
    Vec w(scores.size());
    double denom = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        w[i] = std::exp(scores[i] - m);
        denom += w[i];
    }
    for (double& v : w) v /= denom;
    return w;
}

Vec pixel_vec(const Tensor& hwc, int y, int x) {
    const int c = hwc.dim(2);
    Vec v(static_cast<std::size_t>(c));
    for (int ch = 0; ch < c; ++ch) v[static_cast<std::size_t>(ch)] = hwc.at(y, x, ch);
    return v;
}

double vdot(const Vec& a, const Vec& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

// Frame-to-frame attention for one query pixel: softmax over the selected
// memory tokens of dot(q,k)/sqrt(C), output sum of weights * (v + FE(s)).
// tokens lists (y, x) coordinates into the memory grid; window < 0 means all.
Vec oracle_ff_row(const Vec& q, const Tensor& mem_feat, const Image& mem_mask,
                  const LinearLayer& k_proj, const LinearLayer& v_proj,
                  const LinearLayer& fg_embed, const std::vector<std::pair<int, int>>& tokens) {
    const int c = static_cast<int>(q.size());
    const double scale = 1.0 / std::sqrt(static_cast<double>(c));
    Vec scores;
    std::vector<Vec> values;
    for (const auto& [ty, tx] : tokens) {
        Vec k = proj_row(k_proj, pixel_vec(mem_feat, ty, tx));
        Vec v = proj_row(v_proj, pixel_vec(mem_feat, ty, tx));
        const double s = mem_mask.at(ty, tx);
        for (int ch = 0; ch < c; ++ch) {
            v[static_cast<std::size_t>(ch)] += fg_embed.weight.at(ch, 0) * s + fg_embed.bias.at(ch);
        }
        scores.push_back(vdot(q, k) * scale);
        values.push_back(std::move(v));
    }
    const Vec w = softmax_vec(scores);
    Vec out(static_cast<std::size_t>(c), 0.0);
    for (std::size_t t = 0; t < w.size(); ++t) {
        for (int ch = 0; ch < c; ++ch) out[static_cast<std::size_t>(ch)] += w[t] * values[t][static_cast<std::size_t>(ch)];
    }
    return out;
}

std::vector<std::pair<int, int>> all_tokens(int h, int w) {
    std::vector<std::pair<int, int>> t;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) t.emplace_back(y, x);
    }
    return t;
}

std::vector<std::pair<int, int>> window_tokens(int h, int w, int qy, int qx, int window) {
    const int half = window / 2;
    std::vector<std::pair<int, int>> t;
    for (int y = std::max(0, qy - half); y <= std::min(h - 1, qy + half); ++y) {
        for (int x = std::max(0, qx - half); x <= std::min(w - 1, qx + half); ++x) {
            t.emplace_back(y, x);
        }
    }
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// independent sinusoidal position code, same documented formula
Vec oracle_pos_embed(int y, int x, int c) {
    const int half = c / 2, pairs = half / 2;
    Vec pe(static_cast<std::size_t>(c), 0.0);
    for (int p = 0; p < pairs; ++p) {
        const double freq = std::pow(10000.0, -2.0 * p / half);
        pe[static_cast<std::size_t>(2 * p)] = std::sin(y * freq);
        pe[static_cast<std::size_t>(2 * p + 1)] = std::cos(y * freq);
        pe[static_cast<std::size_t>(half + 2 * p)] = std::sin(x * freq);
        pe[static_cast<std::size_t>(half + 2 * p + 1)] = std::cos(x * freq);
    }
    return pe;
}

// ---- criterion 1: attention operations vs scalar oracles --------------------

CriterionResult check_attention_oracles() {
    const auto t_start = std::chrono::steady_clock::now();
    Rng master(0xA11E0401);
    double worst = 0.0;
    int instances = 0;

    // global attention
    for (int inst = 0; inst < 100; ++inst) {
        Rng rng(master.fork());
        const int h = randint(rng, 2, 8), w = randint(rng, 2, 8);
        const int c = 4 * randint(rng, 1, 4);
        TemporalAttention attn = TemporalAttention::seeded(c, rng.fork());
        Tensor mem_feat = random_tensor({h, w, c}, rng);
        Image mem_mask = random_image(h, w, 1, rng);
        Tensor current = random_tensor({h, w, c}, rng);

        MemoryBank bank = attn.memory_update(MemoryBank{}, mem_feat, mem_mask);
        Tensor got = attn.global_attn(current, bank);

        Tensor want({h, w, c});
        const auto tokens = all_tokens(h, w);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                Vec q = proj_row(attn.q_proj, pixel_vec(current, y, x));
                Vec out = oracle_ff_row(q, mem_feat, mem_mask, attn.k_proj, attn.v_proj,
                                        attn.fg_embed, tokens);
                for (int ch = 0; ch < c; ++ch) want.at(y, x, ch) = out[static_cast<std::size_t>(ch)];
            }
        }
        worst = std::max(worst, max_abs_diff(got, want));
        ++instances;
    }

    // local attention
    for (int inst = 0; inst < 100; ++inst) {
        Rng rng(master.fork());
        const int h = randint(rng, 2, 8), w = randint(rng, 2, 8);
        const int c = 4 * randint(rng, 1, 4);
        const int window = 2 * randint(rng, 0, 4) + 1;
        TemporalAttention attn = TemporalAttention::seeded(c, rng.fork());
        Tensor mem_feat = random_tensor({h, w, c}, rng);
        Image mem_mask = random_image(h, w, 1, rng);
        Tensor current = random_tensor({h, w, c}, rng);

        MemoryBank bank = attn.memory_update(MemoryBank{}, mem_feat, mem_mask);
        Tensor got = attn.local_attn(current, bank, window);

        Tensor want({h, w, c});
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                Vec q = proj_row(attn.q_proj, pixel_vec(current, y, x));
                Vec out = oracle_ff_row(q, mem_feat, mem_mask, attn.k_proj, attn.v_proj,
                                        attn.fg_embed, window_tokens(h, w, y, x, window));
                for (int ch = 0; ch < c; ++ch) want.at(y, x, ch) = out[static_cast<std::size_t>(ch)];
            }
        }
        worst = std::max(worst, max_abs_diff(got, want));
        ++instances;
    }

    // first-frame self-attention
    for (int inst = 0; inst < 100; ++inst) {
        Rng rng(master.fork());
        const int h = randint(rng, 2, 8), w = randint(rng, 2, 8);
        const int c = 4 * randint(rng, 1, 4);
        TemporalAttention attn = TemporalAttention::seeded(c, rng.fork());
        Tensor current = random_tensor({h, w, c}, rng);
        Image init_mask = random_image(h, w, 1, rng);

        Tensor got = attn.first_frame_self_attn(current, init_mask);

        Tensor want({h, w, c});
        const auto tokens = all_tokens(h, w);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                Vec q = proj_row(attn.q_proj, pixel_vec(current, y, x));
                Vec out = oracle_ff_row(q, current, init_mask, attn.k_proj, attn.v_proj,
                                        attn.fg_embed, tokens);
                for (int ch = 0; ch < c; ++ch) want.at(y, x, ch) = out[static_cast<std::size_t>(ch)];
            }
        }
        worst = std::max(worst, max_abs_diff(got, want));
        ++instances;
    }

    // guided query-to-feature attention
    for (int inst = 0; inst < 100; ++inst) {
        Rng rng(master.fork());
        const int h = randint(rng, 2, 8), w = randint(rng, 2, 8);
        const int c = 4 * randint(rng, 1, 4);
        const int n = randint(rng, 1, 8);
        OgcrModule mod = OgcrModule::seeded(n, c, rng.fork());
        Tensor q_o = random_tensor({n, c}, rng);
        Tensor f_m = random_tensor({h, w, c}, rng);

        GuidanceMask guidance;
        guidance.values = Tensor({h, w});
        bool any = false;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const bool on = rng.bernoulli(0.6);
                guidance.values.at(y, x) = on ? 0.0 : kNegInf;
                any = any || on;
            }
        }
        if (!any) {
            guidance.values.at(randint(rng, 0, h - 1), randint(rng, 0, w - 1)) = 0.0;
        }

        Tensor got = mod.fq_attn(mod.fuse_fb(q_o), f_m, guidance);

        Tensor want({n, c});
        const double scale = 1.0 / std::sqrt(static_cast<double>(c));
        for (int i = 0; i < n; ++i) {
            Vec q_fb(static_cast<std::size_t>(c));
            for (int ch = 0; ch < c; ++ch) {
                q_fb[static_cast<std::size_t>(ch)] = mod.fb_embedding.at(i, ch) + q_o.at(i, ch);
            }
            Vec q = proj_row(mod.fq_q, q_fb);
            Vec scores;
            std::vector<Vec> values;
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    Vec k = proj_row(mod.fq_k, pixel_vec(f_m, y, x));
                    const Vec pe = oracle_pos_embed(y, x, c);
                    for (int ch = 0; ch < c; ++ch) k[static_cast<std::size_t>(ch)] += pe[static_cast<std::size_t>(ch)];
                    scores.push_back(vdot(q, k) * scale + guidance.values.at(y, x));
                    values.push_back(proj_row(mod.fq_v, pixel_vec(f_m, y, x)));
                }
            }
            const Vec wgt = softmax_vec(scores);
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (std::size_t t = 0; t < wgt.size(); ++t) acc += wgt[t] * values[t][static_cast<std::size_t>(ch)];
                want.at(i, ch) = acc;
            }
        }
        worst = std::max(worst, max_abs_diff(got, want));
        ++instances;
    }

    // refinement block (self-attention + feed-forward, residuals)
    for (int inst = 0; inst < 100; ++inst) {
        Rng rng(master.fork());
        const int h = randint(rng, 2, 6), w = randint(rng, 2, 6);
        const int c = 4 * randint(rng, 1, 4);
        OgcrModule mod = OgcrModule::seeded(4, c, rng.fork());
        Tensor f = random_tensor({h, w, c}, rng);

        Tensor got = mod.refine(f);

        const int tokens = h * w;
        const double scale = 1.0 / std::sqrt(static_cast<double>(c));
        std::vector<Vec> x(static_cast<std::size_t>(tokens));
        for (int t = 0; t < tokens; ++t) x[static_cast<std::size_t>(t)] = pixel_vec(f, t / w, t % w);
        std::vector<Vec> q(x.size()), k(x.size()), v(x.size());
        for (std::size_t t = 0; t < x.size(); ++t) {
            q[t] = proj_row(mod.ref_q, x[t]);
            k[t] = proj_row(mod.ref_k, x[t]);
            v[t] = proj_row(mod.ref_v, x[t]);
        }
        Tensor want({h, w, c});
        for (int t = 0; t < tokens; ++t) {
            Vec scores;
            for (int u = 0; u < tokens; ++u) {
                scores.push_back(vdot(q[static_cast<std::size_t>(t)], k[static_cast<std::size_t>(u)]) * scale);
            }
            const Vec wgt = softmax_vec(scores);
            Vec x1 = x[static_cast<std::size_t>(t)];
            for (int u = 0; u < tokens; ++u) {
                for (int ch = 0; ch < c; ++ch) {
                    x1[static_cast<std::size_t>(ch)] += wgt[static_cast<std::size_t>(u)] * v[static_cast<std::size_t>(u)][static_cast<std::size_t>(ch)];
                }
            }
            Vec hidden = proj_row(mod.ref_ffn.fc1, x1);
            for (double& hv : hidden) hv = std::max(hv, 0.0);
            Vec ff = proj_row(mod.ref_ffn.fc2, hidden);
            for (int ch = 0; ch < c; ++ch) {
                want.at(t / w, t % w, ch) = x1[static_cast<std::size_t>(ch)] + ff[static_cast<std::size_t>(ch)];
            }
        }
        worst = std::max(worst, max_abs_diff(got, want));
        ++instances;
    }

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    const bool ok = worst <= 1e-10 && secs < 10.0;
    return {"attention-oracle-equivalence", ok,
            std::to_string(instances) + " instances, max |diff| " + fmt("%.2e", worst) + ", " +
                fmt("%.2f", secs) + " s"};
}

// ---- criterion 2: local equals masked-global for all odd w ------------------

CriterionResult check_local_global_consistency() {
    Rng master(0xA11E0402);
    double worst = 0.0;
    const int h = 6, w = 6, c = 8;
    for (int trial = 0; trial < 20; ++trial) {
        Rng rng(master.fork());
        TemporalAttention attn = TemporalAttention::seeded(c, rng.fork());
        Tensor mem_feat = random_tensor({h, w, c}, rng);
        Image mem_mask = random_image(h, w, 1, rng);
        Tensor current = random_tensor({h, w, c}, rng);
        MemoryBank bank = attn.memory_update(MemoryBank{}, mem_feat, mem_mask);

        for (int window = 1; window <= 15; window += 2) {
            Tensor got = attn.local_attn(current, bank, window);
            Tensor want({h, w, c});
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    Vec q = proj_row(attn.q_proj, pixel_vec(current, y, x));
                    Vec out = oracle_ff_row(q, mem_feat, mem_mask, attn.k_proj, attn.v_proj,
                                            attn.fg_embed, window_tokens(h, w, y, x, window));
                    for (int ch = 0; ch < c; ++ch) want.at(y, x, ch) = out[static_cast<std::size_t>(ch)];
                }
            }
            worst = std::max(worst, max_abs_diff(got, want));
        }
    }
    return {"local-global-consistency", worst <= 1e-10,
            "6x6 grid, w in {1..15}, max |diff| " + fmt("%.2e", worst)};
}

// ---- criterion 3: guidance mask semantics -----------------------------------

CriterionResult check_guidance_semantics() {
    Rng master(0xA11E0403);

    // bit-exact invariance to perturbing features at excluded positions
    for (int inst = 0; inst < 50; ++inst) {
        Rng rng(master.fork());
        const int h = randint(rng, 2, 8), w = randint(rng, 2, 8);
        const int c = 4 * randint(rng, 1, 4);
        const int n = randint(rng, 1, 6);
        OgcrModule mod = OgcrModule::seeded(n, c, rng.fork());
        Tensor q_fb = random_tensor({n, c}, rng);
        Tensor f_m = random_tensor({h, w, c}, rng);

        GuidanceMask guidance;
        guidance.values = Tensor({h, w});
        int support = 0;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const bool on = rng.bernoulli(0.5);
                guidance.values.at(y, x) = on ? 0.0 : kNegInf;
                support += on ? 1 : 0;
            }
        }
        if (support == 0) guidance.values.at(0, 0) = 0.0;
        if (support == h * w) guidance.values.at(h - 1, w - 1) = kNegInf;

        Tensor before = mod.fq_attn(q_fb, f_m, guidance);
        Tensor perturbed = f_m;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                if (guidance.values.at(y, x) != kNegInf) continue;
                for (int ch = 0; ch < c; ++ch) perturbed.at(y, x, ch) += rng.uniform(-5.0, 5.0);
            }
        }
        Tensor after = mod.fq_attn(q_fb, perturbed, guidance);
        for (std::size_t i = 0; i < before.numel(); ++i) {
            if (before[i] != after[i]) {
                return {"guidance-mask-semantics", false,
                        "output changed under masked-position perturbation (instance " +
                            std::to_string(inst) + ")"};
            }
        }
    }

    // support monotone in the dilation size on 1000 random masks
    for (int inst = 0; inst < 1000; ++inst) {
        Rng rng(master.fork());
        const int mh = randint(rng, 4, 32), mw = randint(rng, 4, 32);
        const int fh = randint(rng, 4, 16), fw = randint(rng, 4, 16);
        Image mask(mh, mw, 1);
        const double density = rng.uniform(0.02, 0.6);
        for (auto& v : mask.data) v = rng.bernoulli(density) ? rng.uniform(0.5, 1.0) : rng.uniform(0.0, 0.5);

        const int s3 = make_guidance(mask, fh, fw, 3).support_count();
        const int s5 = make_guidance(mask, fh, fw, 5).support_count();
        const int s7 = make_guidance(mask, fh, fw, 7).support_count();
        if (!(s3 <= s5 && s5 <= s7)) {
            return {"guidance-mask-semantics", false,
                    "support not monotone: ks 3/5/7 -> " + std::to_string(s3) + "/" +
                        std::to_string(s5) + "/" + std::to_string(s7)};
        }
    }
    return {"guidance-mask-semantics", true,
            "50 perturbation instances bit-exact; support monotone on 1000 masks"};
}

// ---- criterion 4: compositing algebra ---------------------------------------

CriterionResult check_compositing_algebra() {
    Rng master(0xA11E0404);

    for (int trial = 0; trial < 20; ++trial) {
        Rng rng(master.fork());
        const int h = randint(rng, 2, 12), w = randint(rng, 2, 12);
        Image fg = random_image(h, w, 3, rng);
        Image bg = random_image(h, w, 3, rng);

        Image a0 = Image::zeros(h, w, 1);
        Image i0 = composite(fg, bg, a0);
        for (std::size_t i = 0; i < i0.data.size(); ++i) {
            if (i0.data[i] != bg.data[i]) {
                return {"compositing-algebra", false, "alpha=0 does not return the background"};
            }
        }
        Image a1 = Image::constant(h, w, 1, 1.0);
        Image i1 = composite(fg, bg, a1);
        for (std::size_t i = 0; i < i1.data.size(); ++i) {
            if (i1.data[i] != fg.data[i]) {
                return {"compositing-algebra", false, "alpha=1 does not return the foreground"};
            }
        }

        Image al1 = random_image(h, w, 1, rng);
        Image al2 = random_image(h, w, 1, rng);
        al1.data[0] = 0.0;
        al2.data[0] = 0.0;  // exercise the boundary
        al1.data.back() = 1.0;
        Image merged = merge_alphas(al1, al2);
        for (std::size_t i = 0; i < merged.data.size(); ++i) {
            const double expect = 1.0 - (1.0 - al1.data[i]) * (1.0 - al2.data[i]);
            if (merged.data[i] != expect) {
                return {"compositing-algebra", false, "merged alpha differs from 1-(1-a1)(1-a2)"};
            }
            if (merged.data[i] < std::max(al1.data[i], al2.data[i])) {
                return {"compositing-algebra", false,
                        "merged alpha below max(a1,a2) at pixel " + std::to_string(i)};
            }
        }
    }

    // branch frequencies over 10000 seeded draws
    int inject = 0, single = 0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        AugmentConfig cfg;
        cfg.p1 = 0.4;
        cfg.p2 = 0.5;
        cfg.seed = master.fork();
        const SfmDecisions d = sfm_decisions(cfg);
        inject += d.inject ? 1 : 0;
        single += d.single_supervision ? 1 : 0;
    }
    const double f1 = static_cast<double>(inject) / draws;
    const double f2 = static_cast<double>(single) / draws;
    const bool freq_ok = std::abs(f1 - 0.4) <= 0.02 && std::abs(f2 - 0.5) <= 0.02;
    return {"compositing-algebra", freq_ok,
            "identities exact; inject rate " + fmt("%.4f", f1) + " (p1=0.4), single rate " +
                fmt("%.4f", f2) + " (p2=0.5)"};
}

// ---- criterion 5: assignment vs factorial brute force -----------------------

CriterionResult check_assignment_brute_force() {
    Rng master(0xA11E0405);
    for (int trial = 0; trial < 1000; ++trial) {
        Rng rng(master.fork());
        const int n = randint(rng, 1, 6);
        const int m = randint(rng, n, 6);
        Tensor cost = random_tensor({n, m}, rng, 0.0, 1.0);

        Assignment got = solve_assignment(cost);

        std::vector<int> perm(static_cast<std::size_t>(m));
        std::iota(perm.begin(), perm.end(), 0);
        double best = std::numeric_limits<double>::infinity();
        do {
            double total = 0.0;
            for (int i = 0; i < n; ++i) total += cost.at(i, perm[static_cast<std::size_t>(i)]);
            best = std::min(best, total);
        } while (std::next_permutation(perm.begin(), perm.end()));

        std::vector<char> used(static_cast<std::size_t>(m), 0);
        for (int i = 0; i < n; ++i) {
            const int j = got.query_for_gt[static_cast<std::size_t>(i)];
            if (j < 0 || j >= m || used[static_cast<std::size_t>(j)]) {
                return {"assignment-brute-force", false,
                        "invalid assignment in trial " + std::to_string(trial)};
            }
            used[static_cast<std::size_t>(j)] = 1;
        }
        if (got.total_cost != best) {
            return {"assignment-brute-force", false,
                    "trial " + std::to_string(trial) + ": solver " + fmt("%.17g", got.total_cost) +
                        " vs brute force " + fmt("%.17g", best)};
        }
    }
    return {"assignment-brute-force", true, "1000 random cost matrices, N <= 6, exact"};
}

// ---- criterion 6: metrics vs oracles ----------------------------------------

double oracle_mad(const AlphaSequence& p, const AlphaSequence& g) {
    double total = 0.0;
    for (std::size_t t = 0; t < p.size(); ++t) {
        double acc = 0.0;
        for (int y = 0; y < p[t].height; ++y) {
            for (int x = 0; x < p[t].width; ++x) acc += std::abs(p[t].at(y, x) - g[t].at(y, x));
        }
        total += acc / (static_cast<double>(p[t].height) * p[t].width);
    }
    return total / static_cast<double>(p.size()) * 1e3;
}

double oracle_mse(const AlphaSequence& p, const AlphaSequence& g) {
    double total = 0.0;
    for (std::size_t t = 0; t < p.size(); ++t) {
        double acc = 0.0;
        for (int y = 0; y < p[t].height; ++y) {
            for (int x = 0; x < p[t].width; ++x) {
                const double d = p[t].at(y, x) - g[t].at(y, x);
                acc += d * d;
            }
        }
        total += acc / (static_cast<double>(p[t].height) * p[t].width);
    }
    return total / static_cast<double>(p.size()) * 1e3;
}

// direct (non-separable) 2D convolution with replicate borders
double oracle_grad(const AlphaSequence& p, const AlphaSequence& g) {
    const double sigma = 1.4;
    const int r = 4;
    Vec smooth(static_cast<std::size_t>(2 * r + 1)), deriv(smooth.size());
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        smooth[static_cast<std::size_t>(i + r)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        sum += smooth[static_cast<std::size_t>(i + r)];
    }
    for (double& v : smooth) v /= sum;
    for (int i = -r; i <= r; ++i) {
        deriv[static_cast<std::size_t>(i + r)] = -i / (sigma * sigma) * smooth[static_cast<std::size_t>(i + r)];
    }

    auto magnitude = [&](const Image& img, int y, int x) {
        double gx = 0.0, gy = 0.0;
        for (int dy = -r; dy <= r; ++dy) {
            for (int dx = -r; dx <= r; ++dx) {
                const int sy = std::clamp(y + dy, 0, img.height - 1);
                const int sx = std::clamp(x + dx, 0, img.width - 1);
                gx += img.at(sy, sx) * smooth[static_cast<std::size_t>(dy + r)] * deriv[static_cast<std::size_t>(dx + r)];
                gy += img.at(sy, sx) * deriv[static_cast<std::size_t>(dy + r)] * smooth[static_cast<std::size_t>(dx + r)];
            }
        }
        return std::sqrt(gx * gx + gy * gy);
    };

    double total = 0.0;
    for (std::size_t t = 0; t < p.size(); ++t) {
        double acc = 0.0;
        for (int y = 0; y < p[t].height; ++y) {
            for (int x = 0; x < p[t].width; ++x) {
                const double d = magnitude(p[t], y, x) - magnitude(g[t], y, x);
                acc += d * d;
            }
        }
        total += acc / (static_cast<double>(p[t].height) * p[t].width) * 1e3;
    }
    return total / static_cast<double>(p.size());
}

// union-find flood fill (the library uses BFS labeling)
double oracle_conn(const AlphaSequence& p, const AlphaSequence& g) {
    auto frame_conn = [](const Image& pred, const Image& gt) {
        const int h = pred.height, w = pred.width;
        const int n = h * w;
        std::vector<double> l_map(static_cast<std::size_t>(n), -1.0);

        std::vector<int> parent(static_cast<std::size_t>(n));
        std::vector<char> joint(static_cast<std::size_t>(n));
        auto find = [&](int a) {
            while (parent[static_cast<std::size_t>(a)] != a) {
                parent[static_cast<std::size_t>(a)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
                a = parent[static_cast<std::size_t>(a)];
            }
            return a;
        };

        for (int step = 1; step <= 9; ++step) {
            const double theta = step * 0.1;
            bool any = false;
            for (int i = 0; i < n; ++i) {
                joint[static_cast<std::size_t>(i)] = pred.data[static_cast<std::size_t>(i)] >= theta &&
                                                     gt.data[static_cast<std::size_t>(i)] >= theta;
                any = any || joint[static_cast<std::size_t>(i)];
                parent[static_cast<std::size_t>(i)] = i;
            }
            if (!any) continue;

            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const int i = y * w + x;
                    if (!joint[static_cast<std::size_t>(i)]) continue;
                    if (x + 1 < w && joint[static_cast<std::size_t>(i + 1)]) {
                        parent[static_cast<std::size_t>(find(i))] = find(i + 1);
                    }
                    if (y + 1 < h && joint[static_cast<std::size_t>(i + w)]) {
                        parent[static_cast<std::size_t>(find(i))] = find(i + w);
                    }
                }
            }
            std::vector<int> size(static_cast<std::size_t>(n), 0);
            std::vector<int> first(static_cast<std::size_t>(n), n);
            for (int i = 0; i < n; ++i) {
                if (!joint[static_cast<std::size_t>(i)]) continue;
                const int root = find(i);
                ++size[static_cast<std::size_t>(root)];
                first[static_cast<std::size_t>(root)] = std::min(first[static_cast<std::size_t>(root)], i);
            }
            int best_root = -1;
            for (int i = 0; i < n; ++i) {
                if (!joint[static_cast<std::size_t>(i)]) continue;
                const int root = find(i);
                if (best_root == -1 || size[static_cast<std::size_t>(root)] > size[static_cast<std::size_t>(best_root)] ||
                    (size[static_cast<std::size_t>(root)] == size[static_cast<std::size_t>(best_root)] &&
                     first[static_cast<std::size_t>(root)] < first[static_cast<std::size_t>(best_root)])) {
                    best_root = root;
                }
            }
            for (int i = 0; i < n; ++i) {
                const bool in_best = joint[static_cast<std::size_t>(i)] && find(i) == best_root;
                if (l_map[static_cast<std::size_t>(i)] == -1.0 && !in_best) {
                    l_map[static_cast<std::size_t>(i)] = (step - 1) * 0.1;
                }
            }
        }

        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            const double l = l_map[static_cast<std::size_t>(i)] == -1.0 ? 1.0 : l_map[static_cast<std::size_t>(i)];
            const double dp = pred.data[static_cast<std::size_t>(i)] - l;
            const double dg = gt.data[static_cast<std::size_t>(i)] - l;
            const double phi_p = 1.0 - (dp >= 0.15 ? dp : 0.0);
            const double phi_g = 1.0 - (dg >= 0.15 ? dg : 0.0);
            acc += std::abs(phi_p - phi_g);
        }
        return acc / static_cast<double>(n) * 1e3;
    };

    double total = 0.0;
    for (std::size_t t = 0; t < p.size(); ++t) total += frame_conn(p[t], g[t]);
    return total / static_cast<double>(p.size());
}

double oracle_dtssd(const AlphaSequence& p, const AlphaSequence& g) {
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t t = 1; t < p.size(); ++t) {
        for (int y = 0; y < p[t].height; ++y) {
            for (int x = 0; x < p[t].width; ++x) {
                const double dp = p[t].at(y, x) - p[t - 1].at(y, x);
                const double dg = g[t].at(y, x) - g[t - 1].at(y, x);
                acc += (dp - dg) * (dp - dg);
                ++count;
            }
        }
    }
    return std::sqrt(acc / static_cast<double>(count)) * 1e2;
}

CriterionResult check_metric_oracles() {
    Rng master(0xA11E0406);
    double worst = 0.0;

    for (int trial = 0; trial < 25; ++trial) {
        Rng rng(master.fork());
        const int t_count = randint(rng, 2, 4);
        const int h = randint(rng, 12, 32), w = randint(rng, 12, 32);
        AlphaSequence pred, gt;
        const bool blobby = trial % 2 == 0;
        for (int t = 0; t < t_count; ++t) {
            if (blobby) {
                // piecewise structure so connectivity sees real regions
                Image pi(h, w, 1), gi(h, w, 1);
                const int cy = randint(rng, 2, h - 3), cx = randint(rng, 2, w - 3);
                const int cy2 = randint(rng, 2, h - 3), cx2 = randint(rng, 2, w - 3);
                for (int y = 0; y < h; ++y) {
                    for (int x = 0; x < w; ++x) {
                        const double d1 = std::hypot(y - cy, x - cx);
                        const double d2 = std::hypot(y - cy2, x - cx2);
                        pi.at(y, x) = std::clamp(1.2 - 0.18 * d1, 0.0, 1.0);
                        gi.at(y, x) = std::clamp(1.2 - 0.18 * d2, 0.0, 1.0);
                    }
                }
                pred.push_back(pi);
                gt.push_back(gi);
            } else {
                pred.push_back(random_image(h, w, 1, rng));
                gt.push_back(random_image(h, w, 1, rng));
            }
        }

        worst = std::max(worst, std::abs(mad(pred, gt) - oracle_mad(pred, gt)));
        worst = std::max(worst, std::abs(mse(pred, gt) - oracle_mse(pred, gt)));
        worst = std::max(worst, std::abs(grad_error(pred, gt) - oracle_grad(pred, gt)));
        worst = std::max(worst, std::abs(conn_error(pred, gt) - oracle_conn(pred, gt)));
        worst = std::max(worst, std::abs(dtssd(pred, gt) - oracle_dtssd(pred, gt)));

        const MetricsReport self = evaluate_all(pred, pred);
        if (self.mad != 0.0 || self.mse != 0.0 || self.grad != 0.0 || self.conn != 0.0 ||
            self.dtssd != 0.0) {
            return {"metric-oracles", false, "metrics nonzero on pred == gt"};
        }
    }
    return {"metric-oracles", worst <= 1e-9,
            "25 sequences <= 32x32x4, max |diff| " + fmt("%.2e", worst) + ", zero on equality"};
}

// ---- criterion 7: memory policy --------------------------------------------

CriterionResult check_memory_policy() {
    Rng rng(0xA11E0407);
    const int h = 4, w = 5, c = 8;
    TemporalAttention attn = TemporalAttention::seeded(c, rng.fork());

    MemoryBank bank;
    Tensor first_feat = random_tensor({h, w, c}, rng);
    Image first_mask = random_image(h, w, 1, rng);
    bank = attn.memory_update(bank, first_feat, first_mask);
    const MemoryEntry frame1 = *bank.long_term;
    const int tokens = bank.token_count();

    for (int k = 2; k <= 64; ++k) {
        bank = attn.memory_update(bank, random_tensor({h, w, c}, rng), random_image(h, w, 1, rng));
        if (bank.frame_index != k) {
            return {"memory-policy", false, "frame_index " + std::to_string(bank.frame_index) +
                                                " after " + std::to_string(k) + " updates"};
        }
        if (!bank.long_term || bank.long_term->frame != 1) {
            return {"memory-policy", false, "long-term slot lost frame 1 at k=" + std::to_string(k)};
        }
        if (!bank.short_term || bank.short_term->frame != k) {
            return {"memory-policy", false, "short-term slot does not hold frame " +
                                                std::to_string(k)};
        }
        for (std::size_t i = 0; i < frame1.key.numel(); ++i) {
            if (bank.long_term->key[i] != frame1.key[i] ||
                bank.long_term->value[i] != frame1.value[i]) {
                return {"memory-policy", false, "long-term entry mutated at k=" + std::to_string(k)};
            }
        }
        if (bank.token_count() != tokens) {
            return {"memory-policy", false, "token count changed at k=" + std::to_string(k)};
        }
    }
    return {"memory-policy", true,
            "bank holds {1, k-1} for k in [2,64], token count " + std::to_string(tokens)};
}

// ---- criterion 8: end-to-end determinism ------------------------------------

std::string read_file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

CriterionResult check_inference_determinism() {
    const fs::path root = fs::temp_directory_path() / "oavm_selftest";
    fs::remove_all(root);
    const fs::path clip_dir = root / "clip", out_a = root / "run_a", out_b = root / "run_b";

    const Clip clip = synth_sequence(8, 64, 64, 1, 7);
    save_clip(clip, clip_dir.string());
    const Manifest manifest = load_manifest((clip_dir / "manifest.json").string());
    const Image init_mask = read_image((clip_dir / "mask_0000.pgm").string());

    PipelineConfig cfg;  // full-width defaults
    const auto t0 = std::chrono::steady_clock::now();
    run_sequence(manifest, init_mask, cfg, out_a.string());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    run_sequence(manifest, init_mask, cfg, out_b.string());

    int files = 0;
    for (const auto& entry : fs::directory_iterator(out_a)) {
        const fs::path name = entry.path().filename();
        if (read_file_bytes(entry.path()) != read_file_bytes(out_b / name)) {
            return {"inference-determinism", false, "byte mismatch in " + name.string()};
        }
        ++files;
    }
    const bool ok = files >= 18 && secs < 30.0;  // 8 alphas + 8 masks + 2 JSON
    return {"inference-determinism", ok,
            "8-frame 64x64 run twice, " + std::to_string(files) + " files byte-identical, " +
                fmt("%.2f", secs) + " s/run"};
}

// ---- criterion 9: constant-input stability ----------------------------------

CriterionResult check_constant_input_stability() {
    const Clip clip = synth_sequence(1, 64, 64, 1, 11);
    const Image frame = clip.frames[0];
    const Image init_mask = binarize(clip.alphas[0], 0.5);

    PipelineConfig cfg;
    cfg.channels = 32;
    cfg.num_queries = 4;
    cfg.window = 9;
    Pipeline pipeline = Pipeline::seeded(cfg);

    MemoryBank bank;
    Image prev = init_mask;
    std::vector<Image> alphas, masks;
    const int horizon = 24;
    int fixed_at = -1;
    for (int k = 1; k <= horizon; ++k) {
        FrameResult r = pipeline.infer_frame(frame, bank, prev);
        alphas.push_back(r.alpha);
        masks.push_back(r.fg_mask);
        prev = r.fg_mask;
        if (fixed_at < 0 && k >= 2 && masks[static_cast<std::size_t>(k - 1)].data == masks[static_cast<std::size_t>(k - 2)].data) {
            fixed_at = k;
        }
    }
    if (fixed_at < 0) {
        return {"constant-input-stability", false,
                "no consecutive identical masks within " + std::to_string(horizon) + " frames"};
    }
    for (int k = fixed_at + 1; k <= horizon; ++k) {
        if (masks[static_cast<std::size_t>(k - 1)].data != masks[static_cast<std::size_t>(fixed_at - 1)].data ||
            alphas[static_cast<std::size_t>(k - 1)].data != alphas[static_cast<std::size_t>(fixed_at - 1)].data) {
            return {"constant-input-stability", false,
                    "outputs diverged at frame " + std::to_string(k) + " after the fixed point at " +
                        std::to_string(fixed_at)};
        }
    }
    return {"constant-input-stability", true,
            "fixed point at frame " + std::to_string(fixed_at) + ", stable through frame " +
                std::to_string(horizon)};
}

CriterionResult guarded(CriterionResult (*fn)(), const char* name) {
    try {
        return fn();
    } catch (const std::exception& e) {
        return {name, false, std::string("exception: ") + e.what()};
    }
}

}  // namespace

std::vector<CriterionResult> run_all(std::ostream& log) {
    struct Entry {
        CriterionResult (*fn)();
        const char* name;
    };
    const Entry entries[] = {
        {check_attention_oracles, "attention-oracle-equivalence"},
        {check_local_global_consistency, "local-global-consistency"},
        {check_guidance_semantics, "guidance-mask-semantics"},
        {check_compositing_algebra, "compositing-algebra"},
        {check_assignment_brute_force, "assignment-brute-force"},
        {check_metric_oracles, "metric-oracles"},
        {check_memory_policy, "memory-policy"},
        {check_inference_determinism, "inference-determinism"},
        {check_constant_input_stability, "constant-input-stability"},
    };

    std::vector<CriterionResult> results;
    for (const Entry& e : entries) {
        CriterionResult r = guarded(e.fn, e.name);
        log << (r.passed ? "PASS" : "FAIL") << "  " << r.name << ": " << r.detail << "\n";
        log.flush();
        results.push_back(std::move(r));
    }
    return results;
}

int run_with_exit_code(std::ostream& log) {
    const std::vector<CriterionResult> results = run_all(log);
    int failed = 0;
    for (const CriterionResult& r : results) failed += r.passed ? 0 : 1;
    if (failed == 0) {
        log << "all " << results.size() << " criteria passed\n";
        return 0;
    }
    log << failed << " of " << results.size() << " criteria failed\n";
    return 1;
}

}  // namespace oavm::selftest

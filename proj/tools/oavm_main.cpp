#include <cstdint>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "oavm/compositing.hpp"
#include "oavm/image.hpp"
#include "oavm/manifest.hpp"
#include "oavm/metrics.hpp"
#include "oavm/pipeline.hpp"
#include "oavm/selftest.hpp"

namespace {

void parse_size(const std::string& text, int* h, int* w) {
    if (std::sscanf(text.c_str(), "%dx%d", h, w) != 2 || *h <= 0 || *w <= 0) {
        throw std::runtime_error("--size expects HxW with positive integers, got \"" + text + "\"");
    }
}

std::vector<oavm::Image> read_all(const std::vector<std::string>& paths) {
    std::vector<oavm::Image> images;
    images.reserve(paths.size());
    for (const std::string& p : paths) images.push_back(oavm::read_image(p));
    return images;
}

oavm::Clip load_clip(const std::string& manifest_path) {
    const oavm::Manifest m = oavm::load_manifest(manifest_path);
    if (m.frames.empty()) throw std::runtime_error(manifest_path + " lists no frames");
    if (m.alphas.size() != m.frames.size()) {
        throw std::runtime_error(manifest_path + " needs one alpha per frame (" +
                                 std::to_string(m.alphas.size()) + " alphas for " +
                                 std::to_string(m.frames.size()) + " frames)");
    }
    oavm::Clip clip;
    clip.frames = read_all(m.frames);
    clip.alphas = read_all(m.alphas);
    return clip;
}

int run_synth(int frames, const std::string& size, int objects, std::uint64_t seed,
              const std::string& out) {
    int h = 0, w = 0;
    parse_size(size, &h, &w);
    const oavm::Clip clip = oavm::synth_sequence(frames, h, w, objects, seed);
    oavm::save_clip(clip, out);
    std::cout << "wrote " << frames << " frames (" << h << "x" << w << ", " << objects
              << " objects, seed " << seed << ") to " << out << "\n";
    return 0;
}

int run_augment(const std::string& clip1, const std::string& clip2, const std::string& bg,
                double p1, double p2, std::uint64_t seed, const std::string& out) {
    const oavm::Clip c1 = load_clip(clip1);
    const oavm::Clip c2 = load_clip(clip2);
    const std::vector<oavm::Image> bg_frames = read_all(oavm::load_manifest(bg).frames);

    oavm::AugmentConfig cfg;
    cfg.p1 = p1;
    cfg.p2 = p2;
    cfg.seed = seed;
    oavm::SfmDecisions decisions;
    const oavm::Clip merged = oavm::sfm_compose(c1, c2, bg_frames, cfg, &decisions);
    oavm::save_clip(merged, out);
    std::cout << "second foreground " << (decisions.inject ? "injected" : "not injected")
              << ", supervision "
              << (decisions.inject && !decisions.single_supervision ? "merged" : "first object only")
              << ", " << merged.size() << " frames to " << out << "\n";
    return 0;
}

int run_infer(const std::string& manifest_path, const std::string& init_mask_path,
              const std::string& config_path, const std::string& out) {
    const oavm::Manifest manifest = oavm::load_manifest(manifest_path);
    const oavm::Image init_mask = oavm::read_image(init_mask_path);
    oavm::PipelineConfig cfg;
    if (!config_path.empty()) cfg = oavm::PipelineConfig::load(config_path);
    oavm::apply_env_seed(cfg);

    const oavm::RunResult result = oavm::run_sequence(manifest, init_mask, cfg, out);
    std::cout << result.alpha_files.size() << " frames inferred to " << out << " (seed "
              << cfg.seed << ")\n";
    for (const oavm::FrameDiagnostics& d : result.diagnostics) {
        if (d.guidance_fallback) {
            std::cout << "frame " << d.frame_index << ": empty guidance, unmasked attention\n";
        }
    }
    if (result.metrics) {
        const oavm::MetricsReport& r = *result.metrics;
        std::cout << "mad " << r.mad << "  mse " << r.mse << "  grad " << r.grad << "  conn "
                  << r.conn;
        if (r.has_dtssd) std::cout << "  dtssd " << r.dtssd;
        std::cout << "\n";
    }
    return 0;
}

int run_eval(const std::string& pred_path, const std::string& gt_path, const std::string& out) {
    const oavm::Manifest pred_m = oavm::load_manifest(pred_path);
    const oavm::Manifest gt_m = oavm::load_manifest(gt_path);
    if (pred_m.alphas.empty()) throw std::runtime_error(pred_path + " lists no alphas");
    if (gt_m.alphas.empty()) throw std::runtime_error(gt_path + " lists no alphas");
    if (pred_m.alphas.size() != gt_m.alphas.size()) {
        throw std::runtime_error("sequence lengths differ: " + std::to_string(pred_m.alphas.size()) +
                                 " predicted vs " + std::to_string(gt_m.alphas.size()) + " ground truth");
    }
    const oavm::AlphaSequence pred = read_all(pred_m.alphas);
    const oavm::AlphaSequence gt = read_all(gt_m.alphas);

    const oavm::MetricsReport report = oavm::evaluate_all(pred, gt);
    std::ofstream file(out, std::ios::binary);
    if (!file) throw std::runtime_error("cannot write " + out);
    file << oavm::metrics_report_to_json(report);

    std::cout << "mad " << report.mad << "  mse " << report.mse << "  grad " << report.grad
              << "  conn " << report.conn;
    if (report.has_dtssd) std::cout << "  dtssd " << report.dtssd;
    std::cout << "\nreport written to " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"object-aware video matting toolkit"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "render a synthetic ground-truth clip");
    int s_frames = 8, s_objects = 1;
    std::string s_size = "64x64", s_out;
    std::uint64_t s_seed = 1;
    synth->add_option("--frames", s_frames, "frame count")->check(CLI::PositiveNumber);
    synth->add_option("--size", s_size, "HxW, e.g. 64x64");
    synth->add_option("--objects", s_objects, "number of foreground objects")
        ->check(CLI::NonNegativeNumber);
    synth->add_option("--seed", s_seed, "generator seed");
    synth->add_option("--out", s_out, "output directory")->required();

    auto* augment = app.add_subcommand("augment", "merge two clips over a shared background");
    std::string a_clip1, a_clip2, a_bg, a_out;
    double a_p1 = 0.4, a_p2 = 0.5;
    std::uint64_t a_seed = 1;
    augment->add_option("--clip1", a_clip1, "front clip manifest")->required();
    augment->add_option("--clip2", a_clip2, "injected clip manifest")->required();
    augment->add_option("--bg", a_bg, "background manifest")->required();
    augment->add_option("--p1", a_p1, "injection probability")->check(CLI::Range(0.0, 1.0));
    augment->add_option("--p2", a_p2, "single-object supervision probability")
        ->check(CLI::Range(0.0, 1.0));
    augment->add_option("--seed", a_seed, "decision seed");
    augment->add_option("--out", a_out, "output directory")->required();

    auto* infer = app.add_subcommand("infer", "run matting over a sequence");
    std::string i_manifest, i_mask, i_config, i_out;
    infer->add_option("--manifest", i_manifest, "input sequence manifest")->required();
    infer->add_option("--init-mask", i_mask, "first-frame coarse mask image")->required();
    infer->add_option("--config", i_config, "JSON config file");
    infer->add_option("--out", i_out, "output directory")->required();

    auto* eval_cmd = app.add_subcommand("eval", "score predicted alphas against ground truth");
    std::string e_pred, e_gt, e_out;
    eval_cmd->add_option("--pred", e_pred, "predicted-sequence manifest")->required();
    eval_cmd->add_option("--gt", e_gt, "ground-truth manifest")->required();
    eval_cmd->add_option("--out", e_out, "report JSON path")->required();

    auto* selftest = app.add_subcommand("selftest", "run the built-in acceptance checks");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return run_synth(s_frames, s_size, s_objects, s_seed, s_out);
        if (augment->parsed()) return run_augment(a_clip1, a_clip2, a_bg, a_p1, a_p2, a_seed, a_out);
        if (infer->parsed()) return run_infer(i_manifest, i_mask, i_config, i_out);
        if (eval_cmd->parsed()) return run_eval(e_pred, e_gt, e_out);
        if (selftest->parsed()) return oavm::selftest::run_with_exit_code(std::cout);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

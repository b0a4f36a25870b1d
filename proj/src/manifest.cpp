#include "oavm/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "oavm/image.hpp"

namespace oavm {

namespace fs = std::filesystem;

Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(path + ": " + e.what());
    }

    const fs::path root = fs::path(path).parent_path();
    auto resolve = [&root](const std::vector<std::string>& names) {
        std::vector<std::string> out;
        out.reserve(names.size());
        for (const auto& name : names) out.push_back((root / name).string());
        return out;
    };

    Manifest m;
    m.frames = resolve(doc.at("frames").get<std::vector<std::string>>());
    if (doc.contains("alphas")) m.alphas = resolve(doc["alphas"].get<std::vector<std::string>>());
    if (doc.contains("masks")) m.masks = resolve(doc["masks"].get<std::vector<std::string>>());
    if (doc.contains("fps")) m.fps = doc["fps"].get<double>();
    if (doc.contains("seed")) m.seed = doc["seed"].get<std::uint64_t>();
    return m;
}

void save_manifest(const Manifest& manifest, const std::string& dir) {
    fs::create_directories(dir);
    nlohmann::json doc;
    doc["frames"] = manifest.frames;
    if (!manifest.alphas.empty()) doc["alphas"] = manifest.alphas;
    if (!manifest.masks.empty()) doc["masks"] = manifest.masks;
    if (manifest.fps) doc["fps"] = *manifest.fps;
    if (manifest.seed) doc["seed"] = *manifest.seed;
    const std::string path = (fs::path(dir) / "manifest.json").string();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << doc.dump(2) << '\n';
}

namespace {

void check_list(const std::vector<std::string>& paths, const char* role, std::size_t frame_count) {
    if (paths.empty()) return;
    if (paths.size() != frame_count) {
        throw std::runtime_error(std::string(role) + " list has " + std::to_string(paths.size()) +
                                 " entries but there are " + std::to_string(frame_count) +
                                 " frames");
    }
    ImageDims first{};
    for (std::size_t i = 0; i < paths.size(); ++i) {
        if (!fs::exists(paths[i])) {
            throw std::runtime_error("manifest references missing file " + paths[i]);
        }
        const ImageDims dims = read_image_dims(paths[i]);
        if (i == 0) {
            first = dims;
        } else if (dims.height != first.height || dims.width != first.width) {
            throw std::runtime_error(paths[i] + ": dimensions differ from " + paths[0]);
        }
    }
}

}  // namespace

void validate_manifest(const Manifest& manifest) {
    if (manifest.frames.empty()) throw std::runtime_error("manifest lists no frames");
    check_list(manifest.frames, "frames", manifest.frames.size());
    check_list(manifest.alphas, "alphas", manifest.frames.size());
    check_list(manifest.masks, "masks", manifest.frames.size());
}

}  // namespace oavm

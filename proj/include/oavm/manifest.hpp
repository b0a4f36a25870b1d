#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace oavm {

/// Sequence description stored as UTF-8 JSON next to the frame files. Paths
/// are relative to the manifest's own directory; load_manifest resolves them.
struct Manifest {
    std::vector<std::string> frames;
    std::vector<std::string> alphas;  // empty when absent
    std::vector<std::string> masks;   // empty when absent
    std::optional<double> fps;
    std::optional<std::uint64_t> seed;

    std::size_t size() const { return frames.size(); }
};

Manifest load_manifest(const std::string& path);

/// Writes `manifest.json` into `dir`; list entries are stored as given
/// (callers pass dir-relative names).
void save_manifest(const Manifest& manifest, const std::string& dir);

/// Checks the manifest invariants: every listed file exists, all share
/// dimensions per role, coexisting lists have equal length. Throws with the
/// offending path on violation.
void validate_manifest(const Manifest& manifest);

}  // namespace oavm

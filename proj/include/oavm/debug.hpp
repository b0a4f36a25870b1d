#pragma once

#include <atomic>

namespace oavm::debug {

/// Call counters for the supervision-only branch. Inference must never touch
/// predict_instance_masks or instance loss computation; tests assert the
/// counters stay flat across infer_frame calls.
inline std::atomic<long>& instance_mask_calls() {
    static std::atomic<long> n{0};
    return n;
}

inline std::atomic<long>& instance_loss_calls() {
    static std::atomic<long> n{0};
    return n;
}

}  // namespace oavm::debug

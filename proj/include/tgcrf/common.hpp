#pragma once

#include <stdexcept>
#include <string>

namespace tgcrf {

// Shared floor for every predictive variance in the library. Keeps NLPD terms
// and the inverse-variance scaling of uGCRF finite.
inline constexpr double kVarianceFloor = 1e-8;

// Condition-number threshold above which a normal-equations matrix is rejected.
inline constexpr double kMaxConditionNumber = 1e12;

/// Error raised by any library operation; `stage` names the subsystem.
class TgcrfError : public std::runtime_error {
public:
    TgcrfError(std::string stage, const std::string& message)
        : std::runtime_error("[" + stage + "] " + message), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

inline double floored_variance(double v) { return v < kVarianceFloor ? kVarianceFloor : v; }

}  // namespace tgcrf

#pragma once

// Central finite-difference checks, built against the double-precision core.
// The interface is scalar-type free so float-built code can call it.

#include <cstdint>
#include <string>
#include <vector>

namespace gradsuite {

inline constexpr double kTolerance = 1e-3;
// Relative error |a - n| / max(|a|, |n|, kAbsFloor).
inline constexpr double kAbsFloor = 1e-6;

struct CheckResult {
    std::string name;
    int checked = 0;
    double max_rel_error = 0;
    bool pass() const { return checked > 0 && max_rel_error < kTolerance; }
};

std::vector<CheckResult> op_checks(uint64_t seed);
// Tiny model (d_lm 16, 2 layers) with active adapters, from waveform and
// frames to the loss.
CheckResult end_to_end_check(uint64_t seed);

}  // namespace gradsuite

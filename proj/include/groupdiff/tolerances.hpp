#pragma once

// Tolerance constants shared by the library and its tests.
namespace groupdiff::tol {

inline constexpr double kAttentionRowSum = 1e-6;
inline constexpr double kBlockRowSum = 1e-6;
inline constexpr double kUnitNorm = 1e-9;
inline constexpr double kIndexUnitNorm = 1e-6;
inline constexpr double kReduction = 1e-9;
inline constexpr double kGradCheck = 1e-4;
inline constexpr double kGradCheckStep = 1e-4;
inline constexpr double kAdamW = 1e-12;
inline constexpr double kFrechet = 1e-9;
inline constexpr double kPsdClamp = 1e-8;

}  // namespace groupdiff::tol

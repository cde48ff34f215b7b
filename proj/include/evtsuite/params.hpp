#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include "evtsuite/types.hpp"

namespace evtsuite {

enum class PixelMode : std::uint8_t { MultiNode, Collapse };

inline const char* to_string(PixelMode m) noexcept { return m == PixelMode::Collapse ? "collapse" : "multinode"; }

/// Temporarily lowers the contrast threshold around detected features.
struct FeatureBoost {
  int radius = 7;         // pixels (Euclidean)
  Tick duration = 0;      // ticks
  int m_override = 0;     // levels
};

struct ParamSet {
  PixelMode mode = PixelMode::Collapse;
  int m_threshold = 0;  // levels, 0..255
  Tick delta_t_max = kDefaultRefInterval;
  std::optional<FeatureBoost> feature_boost;

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    const bool boost_eq = a.feature_boost.has_value() == b.feature_boost.has_value() &&
                          (!a.feature_boost || (a.feature_boost->radius == b.feature_boost->radius &&
                                                a.feature_boost->duration == b.feature_boost->duration &&
                                                a.feature_boost->m_override == b.feature_boost->m_override));
    return a.mode == b.mode && a.m_threshold == b.m_threshold && a.delta_t_max == b.delta_t_max && boost_eq;
  }
};

// CRF table. Index is the crf value; M in 8-bit levels, delta_t_max as a
// multiple of the reference interval.
inline constexpr std::array<int, 10> kCrfMThreshold = {0, 1, 2, 4, 6, 9, 14, 20, 28, 40};
inline constexpr std::array<std::uint32_t, 10> kCrfDeltaTMaxMultiple = {1, 4, 15, 30, 30, 60, 60, 120, 120, 120};
inline constexpr int kDefaultCrf = 3;

inline std::string validate(const ParamSet& p, Tick ref_interval) {
  if (p.m_threshold < 0 || p.m_threshold > 255) return "m_threshold must be in [0,255]";
  if (p.delta_t_max < ref_interval) return "delta_t_max must be >= ref_interval";
  if (p.feature_boost) {
    if (p.feature_boost->radius < 0) return "feature boost radius must be >= 0";
    if (p.feature_boost->m_override < 0 || p.feature_boost->m_override > p.m_threshold)
      return "feature boost m_override must be in [0, m_threshold]";
  }
  return {};
}

inline FeatureBoost default_feature_boost(Tick ref_interval) { return {7, 4 * ref_interval, 0}; }

/// crf 0 is lossless: M = 0, delta_t_max = ref_interval, multi-node
/// integration (a lone Collapse event cannot represent every 8-bit level
/// exactly). crf 1..9 use Collapse.
inline ParamSet params_from_crf(int crf, Tick ref_interval) {
  if (crf < 0 || crf > 9) throw ArgumentError("crf must be in 0..9, got " + std::to_string(crf));
  if (ref_interval < 1) throw ArgumentError("ref_interval must be >= 1");
  ParamSet p;
  p.mode = crf == 0 ? PixelMode::MultiNode : PixelMode::Collapse;
  p.m_threshold = kCrfMThreshold[static_cast<std::size_t>(crf)];
  p.delta_t_max = ref_interval * kCrfDeltaTMaxMultiple[static_cast<std::size_t>(crf)];
  return p;
}

}  // namespace evtsuite

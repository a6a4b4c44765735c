#pragma once

#include "rfbn/lightcurve.hpp"
#include "rfbn/periodogram.hpp"
#include "rfbn/types.hpp"

#include <array>
#include <bitset>
#include <limits>
#include <optional>
#include <string_view>

namespace rfbn {

inline constexpr int kNumFeatures = 13;

enum class Feature : int {
  period = 0,
  amplitude,
  color,
  std_dev,
  skewness,
  small_kurtosis,
  stetson_k,
  autocorrelation_length,
  beyond1std,
  max_slope,
  linear_trend_slope,
  pair_slope_trend,
  flux_percentile_ratio_mid50,
};

inline constexpr std::array<std::string_view, kNumFeatures> kFeatureNames = {
    "period",     "amplitude",          "color",           "std",
    "skewness",   "small_kurtosis",     "stetson_k",       "autocorrelation_length",
    "beyond1std", "max_slope",          "linear_trend_slope", "pair_slope_trend",
    "flux_percentile_ratio_mid50"};

constexpr int index_of(Feature f) noexcept { return static_cast<int>(f); }

using FeatureValues = Eigen::Matrix<double, kNumFeatures, 1>;
using FeatureMask = std::bitset<kNumFeatures>;

// Fixed-order variability descriptor. Masked-out entries hold NaN.
struct FeatureVector {
  FeatureValues values = FeatureValues::Constant(std::numeric_limits<double>::quiet_NaN());
  FeatureMask mask;

  double operator[](Feature f) const { return values[index_of(f)]; }
  bool valid(Feature f) const { return mask.test(static_cast<std::size_t>(index_of(f))); }
  void set(Feature f, double v) {
    values[index_of(f)] = v;
    mask.set(static_cast<std::size_t>(index_of(f)));
  }
};

struct FeatureOptions {
  FrequencyGrid grid;
  int pair_slope_window = 30;
};

FeatureVector extract_features(const LightCurve& blue, const std::optional<LightCurve>& red = std::nullopt,
                               const FeatureOptions& options = {});

// Inverse-variance weighted mean magnitude.
double weighted_mean(const LightCurve& lc);

// Amplitude over median photometric error.
double signal_to_noise(const LightCurve& lc);

// Linear-interpolation percentile (q in [0, 100]) of an unsorted sample.
double percentile(Vector values, double q);

}  // namespace rfbn

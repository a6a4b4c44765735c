#include "rfbn/features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rfbn {

namespace {

double sorted_percentile(const Vector& sorted, double q) {
  const auto n = sorted.size();
  if (n == 1) return sorted[0];
  const double pos = q / 100.0 * static_cast<double>(n - 1);
  const auto lo = static_cast<Eigen::Index>(std::floor(pos));
  const auto hi = std::min<Eigen::Index>(lo + 1, n - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

Vector sorted_copy(const Vector& v) {
  Vector s = v;
  std::sort(s.data(), s.data() + s.size());
  return s;
}

double sample_std(const Vector& x) {
  const double mean = x.mean();
  return std::sqrt((x.array() - mean).square().sum() / static_cast<double>(x.size() - 1));
}

// Smallest lag (days) at which the autocorrelation of the linearly
// resampled series falls below 1/e.
std::optional<double> autocorrelation_length(const LightCurve& lc) {
  const auto n = lc.size();
  if (n < 3) return std::nullopt;
  Vector dt = lc.times.tail(n - 1) - lc.times.head(n - 1);
  std::sort(dt.data(), dt.data() + dt.size());
  const double span = lc.times[n - 1] - lc.times[0];
  constexpr Eigen::Index kMaxGrid = 4096;
  const double step = std::max(sorted_percentile(dt, 50.0), span / static_cast<double>(kMaxGrid - 1));
  const auto m = std::min<Eigen::Index>(kMaxGrid, static_cast<Eigen::Index>(std::floor(span / step)) + 1);
  if (m < 3) return std::nullopt;

  Vector grid(m);
  Eigen::Index j = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double t = lc.times[0] + static_cast<double>(i) * step;
    while (j + 2 < n && lc.times[j + 1] < t) ++j;
    const double t0 = lc.times[j], t1 = lc.times[j + 1];
    const double frac = std::clamp((t - t0) / (t1 - t0), 0.0, 1.0);
    grid[i] = lc.magnitudes[j] + frac * (lc.magnitudes[j + 1] - lc.magnitudes[j]);
  }
  grid.array() -= grid.mean();
  const double c0 = grid.squaredNorm();
  if (!(c0 > 0.0)) return std::nullopt;
  const double threshold = std::exp(-1.0);
  for (Eigen::Index lag = 1; lag < m / 2; ++lag) {
    const double c = grid.head(m - lag).dot(grid.tail(m - lag)) / c0;
    if (c < threshold) return static_cast<double>(lag) * step;
  }
  return std::nullopt;
}

}  // namespace

double percentile(Vector values, double q) {
  std::sort(values.data(), values.data() + values.size());
  return sorted_percentile(values, q);
}

double weighted_mean(const LightCurve& lc) {
  const Vector w = lc.errors.array().square().inverse();
  return w.dot(lc.magnitudes) / w.sum();
}

double signal_to_noise(const LightCurve& lc) {
  const Vector sorted = sorted_copy(lc.magnitudes);
  const double amplitude = 0.5 * (sorted_percentile(sorted, 95.0) - sorted_percentile(sorted, 5.0));
  const double noise = percentile(lc.errors, 50.0);
  return amplitude / noise;
}

FeatureVector extract_features(const LightCurve& blue, const std::optional<LightCurve>& red,
                               const FeatureOptions& options) {
  FeatureVector fv;
  const auto n = blue.size();
  const Vector& t = blue.times;
  const Vector& m = blue.magnitudes;
  const double wmean = weighted_mean(blue);

  if (n >= 10) {
    const auto pg = lomb_scargle(blue, options.grid);
    if (pg.best_power > 0.0 && pg.best_period > 0.0) fv.set(Feature::period, pg.best_period);
  }

  const Vector sorted = sorted_copy(m);
  const double p5 = sorted_percentile(sorted, 5.0);
  const double p95 = sorted_percentile(sorted, 95.0);
  fv.set(Feature::amplitude, 0.5 * (p95 - p5));

  if (red) fv.set(Feature::color, wmean - weighted_mean(*red));

  const double sd = n >= 2 ? sample_std(m) : 0.0;
  if (n >= 2) fv.set(Feature::std_dev, sd);

  if (sd > 0.0) {
    const double dn = static_cast<double>(n);
    const Eigen::ArrayXd z = (m.array() - m.mean()) / sd;
    if (n >= 3) fv.set(Feature::skewness, dn / ((dn - 1.0) * (dn - 2.0)) * z.cube().sum());
    if (n >= 4) {
      const double g2 = dn * (dn + 1.0) / ((dn - 1.0) * (dn - 2.0) * (dn - 3.0)) * z.square().square().sum() -
                        3.0 * (dn - 1.0) * (dn - 1.0) / ((dn - 2.0) * (dn - 3.0));
      fv.set(Feature::small_kurtosis, g2);
    }
  }

  if (sd > 0.0) {
    const double dn = static_cast<double>(n);
    const Eigen::ArrayXd delta = std::sqrt(dn / (dn - 1.0)) * (m.array() - wmean) / blue.errors.array();
    const double rms = std::sqrt(delta.square().mean());
    if (rms > 0.0) fv.set(Feature::stetson_k, delta.abs().mean() / rms);
  }

  if (const auto acf = autocorrelation_length(blue)) fv.set(Feature::autocorrelation_length, *acf);

  if (n >= 2) {
    const auto beyond = sd > 0.0 ? ((m.array() - wmean).abs() > sd).count() : 0;
    fv.set(Feature::beyond1std, static_cast<double>(beyond) / static_cast<double>(n));

    const Eigen::ArrayXd slopes =
        (m.tail(n - 1) - m.head(n - 1)).array() / (t.tail(n - 1) - t.head(n - 1)).array();
    fv.set(Feature::max_slope, slopes.abs().maxCoeff());

    const Eigen::ArrayXd tc = t.array() - t.mean();
    const double sxx = tc.square().sum();
    if (sxx > 0.0) fv.set(Feature::linear_trend_slope, (tc * (m.array() - m.mean())).sum() / sxx);

    const auto window = std::min<Eigen::Index>(n, options.pair_slope_window);
    const Vector tail = m.tail(window);
    const Eigen::ArrayXd diffs = (tail.tail(window - 1) - tail.head(window - 1)).array();
    const auto pos = (diffs > 0.0).count();
    const auto neg = (diffs < 0.0).count();
    fv.set(Feature::pair_slope_trend, static_cast<double>(pos - neg) / static_cast<double>(window - 1));
  }

  const double width = p95 - p5;
  if (width > 0.0) {
    fv.set(Feature::flux_percentile_ratio_mid50,
           (sorted_percentile(sorted, 75.0) - sorted_percentile(sorted, 25.0)) / width);
  }
  return fv;
}

}  // namespace rfbn

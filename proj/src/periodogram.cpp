#include "rfbn/periodogram.hpp"

#include "csv.hpp"
#include "rfbn/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace rfbn {

namespace {

constexpr Eigen::Index kMinSamples = 10;
constexpr Eigen::Index kReseedEvery = 512;

struct WeightedSeries {
  Vector t;
  Vector w;   // sums to 1
  Vector y;   // mean removed
  double yy = 0.0;
};

WeightedSeries prepare(const LightCurve& lc) {
  WeightedSeries s;
  s.t = lc.times;
  s.w = lc.errors.array().square().inverse();
  s.w /= s.w.sum();
  const double mean = s.w.dot(lc.magnitudes);
  s.y = lc.magnitudes.array() - mean;
  s.yy = s.w.dot(s.y.cwiseProduct(s.y));
  // residuals at rounding level of the magnitudes mean a flat curve
  const double floor = 64.0 * std::numeric_limits<double>::epsilon() * lc.magnitudes.cwiseAbs().maxCoeff();
  if (s.yy <= floor * floor) s.yy = 0.0;
  return s;
}

// GLS power from the weighted trigonometric sums; y is already mean-free.
template <typename CosExpr, typename SinExpr>
double gls_power(const WeightedSeries& s, const CosExpr& cosv, const SinExpr& sinv) {
  if (!(s.yy > 0.0)) return 0.0;
  double c = 0, sn = 0, yc = 0, ys = 0, cc = 0, ss = 0, cs = 0;
  for (Eigen::Index i = 0; i < s.t.size(); ++i) {
    const double w = s.w[i], ci = cosv[i], si = sinv[i], y = s.y[i];
    const double wc = w * ci, ws = w * si;
    c += wc;
    sn += ws;
    yc += wc * y;
    ys += ws * y;
    cc += wc * ci;
    ss += ws * si;
    cs += wc * si;
  }
  cc -= c * c;
  ss -= sn * sn;
  cs -= c * sn;
  const double d = cc * ss - cs * cs;
  if (!(d > 1e-15)) return 0.0;
  const double p = (ss * yc * yc + cc * ys * ys - 2.0 * cs * yc * ys) / (s.yy * d);
  return std::clamp(p, 0.0, 1.0);
}

}  // namespace

double lomb_scargle_power(const LightCurve& lc, double frequency) {
  const auto s = prepare(lc);
  const Vector phase = (2.0 * std::numbers::pi * frequency) * s.t;
  const Eigen::ArrayXd cosv = phase.array().cos();
  const Eigen::ArrayXd sinv = phase.array().sin();
  return gls_power(s, cosv, sinv);
}

Periodogram lomb_scargle(const LightCurve& lc, const FrequencyGrid& grid) {
  if (lc.size() < kMinSamples) {
    throw InvalidArgument("lomb_scargle needs at least " + std::to_string(kMinSamples) + " samples, got " +
                          std::to_string(lc.size()));
  }
  const double span = lc.times[lc.size() - 1] - lc.times[0];
  if (!(span > 0.0)) throw InvalidArgument("light curve has zero time span");
  const double f_min = grid.min_frequency > 0.0 ? grid.min_frequency : 1.0 / span;
  const double f_max = grid.max_frequency;
  if (!(f_min > 0.0) || !(f_max > f_min) || !(grid.oversampling > 0.0)) {
    throw InvalidArgument("degenerate frequency grid [" + detail::format_double(f_min) + ", " +
                          detail::format_double(f_max) + "]");
  }
  const double df = 1.0 / (grid.oversampling * span);
  const auto nf = static_cast<Eigen::Index>(std::floor((f_max - f_min) / df)) + 1;

  Periodogram pg;
  pg.frequencies = Vector::LinSpaced(nf, f_min, f_min + static_cast<double>(nf - 1) * df);
  pg.powers.resize(nf);

  const auto s = prepare(lc);
  const double two_pi = 2.0 * std::numbers::pi;
  // Per-sample phasors advanced by a fixed rotation each frequency step,
  // reseeded periodically to bound accumulated rounding.
  const Vector step_phase = (two_pi * df) * s.t;
  const Eigen::ArrayXd rot_c = step_phase.array().cos();
  const Eigen::ArrayXd rot_s = step_phase.array().sin();
  Eigen::ArrayXd cosv, sinv;
  for (Eigen::Index k = 0; k < nf; ++k) {
    if (k % kReseedEvery == 0) {
      const Eigen::ArrayXd phase = (two_pi * pg.frequencies[k]) * s.t.array();
      cosv = phase.cos();
      sinv = phase.sin();
    } else {
      const Eigen::ArrayXd c_next = cosv * rot_c - sinv * rot_s;
      sinv = sinv * rot_c + cosv * rot_s;
      cosv = c_next;
    }
    pg.powers[k] = gls_power(s, cosv, sinv);
  }

  Eigen::Index best = 0;
  pg.best_power = pg.powers.maxCoeff(&best);
  double f_best = pg.frequencies[best];
  if (best > 0 && best + 1 < nf) {
    const double a = pg.powers[best - 1], b = pg.powers[best], c = pg.powers[best + 1];
    const double denom = a - 2.0 * b + c;
    if (denom < 0.0) {
      const double offset = 0.5 * (a - c) / denom;
      if (std::abs(offset) < 1.0) f_best += offset * df;
    }
  }
  pg.best_period = 1.0 / f_best;
  return pg;
}

}  // namespace rfbn

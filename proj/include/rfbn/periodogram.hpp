#pragma once

#include "rfbn/lightcurve.hpp"
#include "rfbn/types.hpp"

namespace rfbn {

// Frequencies in cycles/day. A non-positive min_frequency means 1/(time span).
struct FrequencyGrid {
  double min_frequency = 0.0;
  double max_frequency = 10.0;
  double oversampling = 5.0;
};

struct Periodogram {
  Vector frequencies;  // strictly increasing
  Vector powers;       // normalized to [0, 1]
  double best_period = 0.0;
  double best_power = 0.0;
};

// Generalized (floating-mean, error-weighted) least-squares periodogram.
// Requires at least 10 samples. The best period is refined by a parabola
// through the three grid points around the peak.
Periodogram lomb_scargle(const LightCurve& lc, const FrequencyGrid& grid = {});

// Power at a single frequency, same normalization as lomb_scargle.
double lomb_scargle_power(const LightCurve& lc, double frequency);

}  // namespace rfbn

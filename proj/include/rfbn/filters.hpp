#pragma once

#include "rfbn/candidates.hpp"

#include <limits>
#include <map>
#include <string>
#include <vector>

namespace rfbn {

inline constexpr double kSiderealDay = 0.99727;
inline constexpr double kSolarDay = 1.0;
inline constexpr double kYear = 365.25;

struct AliasTolerance {
  double relative = 0.01;  // |P - alias| <= relative * alias
  std::vector<double> daily_bases{kSiderealDay, kSolarDay};
  std::vector<double> harmonics{1.0 / 3.0, 0.5, 1.0, 2.0, 3.0};
  std::vector<double> seasonal{kYear};
};

struct FilterResult {
  std::vector<CandidateRecord> kept;
  std::vector<CandidateRecord> removed;
  std::map<std::string, std::size_t> tally;  // reason -> count
};

// Name of the alias a period falls on ("sidereal_x0.5", "year", ...), or empty.
std::string alias_match(double period, const AliasTolerance& tolerance);

// Removes candidates whose period sits on a daily alias, one of its
// harmonics, or the seasonal period. Candidates without a valid period stay.
FilterResult alias_filter(const std::vector<CandidateRecord>& candidates, const AliasTolerance& tolerance = {});

inline constexpr std::size_t kUnlimitedDepth = std::numeric_limits<std::size_t>::max();

// Keeps blue candidates whose object id appears among the first `depth`
// ranks of the red list.
FilterResult cross_band_filter(const std::vector<CandidateRecord>& blue, const std::vector<CandidateRecord>& red,
                               std::size_t depth);

// Proportional depth for a red list produced by scoring `scored` objects.
std::size_t proportional_depth(std::size_t scored, double fraction = 0.001);

}  // namespace rfbn

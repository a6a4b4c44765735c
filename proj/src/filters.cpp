#include "rfbn/filters.hpp"

#include "rfbn/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace rfbn {

namespace {

bool near(double period, double alias, double relative) {
  return std::abs(period - alias) <= relative * alias;
}

std::string harmonic_name(double base, double h) {
  std::ostringstream s;
  s << (base == kSiderealDay ? "sidereal" : base == kSolarDay ? "day" : "daily") << "_x";
  if (h < 1.0) {
    s << "1/" << std::lround(1.0 / h);
  } else {
    s << h;
  }
  return s.str();
}

}  // namespace

std::string alias_match(double period, const AliasTolerance& tolerance) {
  if (!(period > 0.0) || !std::isfinite(period)) return {};
  for (double base : tolerance.daily_bases) {
    for (double h : tolerance.harmonics) {
      if (near(period, base * h, tolerance.relative)) return harmonic_name(base, h);
    }
  }
  for (double season : tolerance.seasonal) {
    if (near(period, season, tolerance.relative)) return "year";
  }
  return {};
}

FilterResult alias_filter(const std::vector<CandidateRecord>& candidates, const AliasTolerance& tolerance) {
  if (!(tolerance.relative >= 0.0)) throw InvalidArgument("alias tolerance must be non-negative");
  FilterResult out;
  for (const auto& c : candidates) {
    const auto reason = alias_match(c.period, tolerance);
    if (reason.empty()) {
      out.kept.push_back(c);
    } else {
      ++out.tally[reason];
      out.removed.push_back(c);
    }
  }
  return out;
}

FilterResult cross_band_filter(const std::vector<CandidateRecord>& blue, const std::vector<CandidateRecord>& red,
                               std::size_t depth) {
  if (depth == 0) throw InvalidArgument("cross-band depth must be positive");
  std::vector<const CandidateRecord*> ordered;
  ordered.reserve(red.size());
  for (const auto& r : red) ordered.push_back(&r);
  std::stable_sort(ordered.begin(), ordered.end(), [](const CandidateRecord* a, const CandidateRecord* b) {
    return a->rank < b->rank;
  });
  std::unordered_set<std::string> top;
  for (std::size_t i = 0; i < ordered.size() && i < depth; ++i) top.insert(ordered[i]->object_id);

  FilterResult out;
  for (const auto& c : blue) {
    if (top.contains(c.object_id)) {
      out.kept.push_back(c);
    } else {
      ++out.tally["not_in_red_top"];
      out.removed.push_back(c);
    }
  }
  return out;
}

std::size_t proportional_depth(std::size_t scored, double fraction) {
  if (!(fraction > 0.0)) throw InvalidArgument("depth fraction must be positive");
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(scored))));
}

}  // namespace rfbn

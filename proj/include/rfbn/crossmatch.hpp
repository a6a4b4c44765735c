#pragma once

#include "rfbn/candidates.hpp"

#include <cmath>
#include <filesystem>
#include <iosfwd>
#include <numbers>
#include <string>
#include <vector>

namespace rfbn {

// Great-circle separation (haversine form), degrees in and out.
template <typename Scalar>
Scalar angular_separation_deg(Scalar ra1, Scalar dec1, Scalar ra2, Scalar dec2) {
  const Scalar to_rad = std::numbers::pi_v<Scalar> / Scalar(180);
  const Scalar d_dec = (dec2 - dec1) * to_rad;
  const Scalar d_ra = (ra2 - ra1) * to_rad;
  const Scalar s_dec = std::sin(d_dec / 2);
  const Scalar s_ra = std::sin(d_ra / 2);
  const Scalar h = s_dec * s_dec + std::cos(dec1 * to_rad) * std::cos(dec2 * to_rad) * s_ra * s_ra;
  return Scalar(2) * std::asin(std::min(Scalar(1), std::sqrt(h))) / to_rad;
}

struct CatalogEntry {
  std::string id;
  double ra_deg = 0.0;
  double dec_deg = 0.0;
  std::string label;
};

struct Catalog {
  std::string name;
  std::vector<CatalogEntry> entries;
  std::size_t skipped_rows = 0;
};

// CSV with columns ra_deg, dec_deg, label (optional id). Malformed rows are
// skipped and counted.
Catalog read_catalog(std::istream& in, std::string name);
Catalog read_catalog(const std::filesystem::path& path);

struct CrossMatch {
  std::string object_id;
  bool matched = false;
  std::size_t catalog_row = 0;
  std::string counterpart_id;
  std::string counterpart_label;  // "no counterpart" when unmatched
  double separation_arcsec = 0.0;
};

struct CrossMatchReport {
  std::string catalog;
  std::vector<CrossMatch> matches;  // aligned with the candidate list
  std::size_t matched = 0;
  std::size_t skipped_catalog_rows = 0;
};

// Nearest catalog entry within `radius_arcsec`; ties go to the lower row.
CrossMatchReport crossmatch(const std::vector<CandidateRecord>& candidates, const Catalog& catalog,
                            double radius_arcsec);

void write_crossmatch(std::ostream& out, const std::vector<CandidateRecord>& candidates,
                      const CrossMatchReport& report);

}  // namespace rfbn

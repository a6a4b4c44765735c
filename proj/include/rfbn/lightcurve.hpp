#pragma once

#include "rfbn/types.hpp"

#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rfbn {

enum class Band { blue, red };

std::string_view to_string(Band band) noexcept;
Band parse_band(std::string_view text);

// Irregularly sampled magnitude series. Times are strictly increasing MJD,
// all errors are positive and the three series have equal length >= 2.
struct LightCurve {
  std::string object_id;
  Band band = Band::blue;
  Vector times;
  Vector magnitudes;
  Vector errors;
  double ra_deg = 0.0;
  double dec_deg = 0.0;
  std::size_t dropped_rows = 0;
  std::size_t merged_epochs = 0;

  Eigen::Index size() const noexcept { return times.size(); }
};

struct FoldedLightCurve {
  Vector phases;  // ascending, in [0, 1)
  Vector magnitudes;
  Vector errors;
  double period = 0.0;
  double t0 = 0.0;
};

enum class DuplicateEpochs { average, reject };

struct ParseOptions {
  DuplicateEpochs duplicates = DuplicateEpochs::average;
  std::string object_id;
};

// Rows of (time, magnitude, error) separated by whitespace or commas; lines
// starting with '#' are comments. Non-finite or non-numeric rows are dropped
// and counted in LightCurve::dropped_rows.
LightCurve parse_lightcurve(std::istream& in, Band band, const ParseOptions& options = {});
LightCurve parse_lightcurve(std::string_view text, Band band, const ParseOptions& options = {});
LightCurve read_lightcurve(const std::filesystem::path& path, Band band,
                           const ParseOptions& options = {});

// Writes values with round-trip precision.
void write_lightcurve(std::ostream& out, const LightCurve& lc);

// phase = frac((t - t0) / period), sorted ascending. t0 defaults to the first epoch.
FoldedLightCurve fold(const LightCurve& lc, double period, std::optional<double> t0 = std::nullopt);
FoldedLightCurve fold(const FoldedLightCurve& folded, double period, double t0 = 0.0);

struct ManifestEntry {
  std::string object_id;
  std::filesystem::path path;
  std::string label;
  double ra_deg = 0.0;
  double dec_deg = 0.0;
  std::optional<std::filesystem::path> red_path;
};

struct TrainingManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> classes;  // order of first appearance

  std::size_t size() const noexcept { return entries.size(); }
  std::size_t num_classes() const noexcept { return classes.size(); }
  int class_index(std::string_view label) const;
  std::map<std::string, std::size_t> class_counts() const;
};

// CSV with header `id,path,label,ra_deg,dec_deg` (optional `red_path`).
// Relative curve paths resolve against the manifest's directory. With
// `labeled == false` the label column may be absent or empty and the class
// checks are skipped (unlabeled scoring sets).
TrainingManifest read_manifest(const std::filesystem::path& path, bool labeled = true);
TrainingManifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir, bool labeled = true);

// Streams the manifest's curves one entry at a time, in manifest order.
using CurveVisitor = std::function<void(std::size_t index, const ManifestEntry& entry,
                                        const LightCurve& blue,
                                        const std::optional<LightCurve>& red)>;
void for_each_curve(const TrainingManifest& manifest, const CurveVisitor& visit);

}  // namespace rfbn

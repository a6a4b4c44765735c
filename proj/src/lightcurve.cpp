#include "rfbn/lightcurve.hpp"

#include "csv.hpp"
#include "rfbn/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace rfbn {

std::string_view to_string(Band band) noexcept { return band == Band::blue ? "blue" : "red"; }

Band parse_band(std::string_view text) {
  text = detail::trim(text);
  if (text == "blue" || text == "B" || text.empty()) return Band::blue;
  if (text == "red" || text == "R") return Band::red;
  throw InvalidArgument("unknown band '" + std::string(text) + "'");
}

namespace {

struct Sample {
  double t, m, e;
};

std::vector<std::string_view> tokenize_row(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  auto is_sep = [](char c) { return c == ',' || c == ' ' || c == '\t' || c == '\r'; };
  while (i < line.size()) {
    while (i < line.size() && is_sep(line[i])) ++i;
    const std::size_t start = i;
    while (i < line.size() && !is_sep(line[i])) ++i;
    if (i > start) tokens.push_back(line.substr(start, i - start));
  }
  return tokens;
}

}  // namespace

LightCurve parse_lightcurve(std::istream& in, Band band, const ParseOptions& options) {
  std::vector<Sample> rows;
  std::size_t dropped = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto tokens = tokenize_row(body);
    if (tokens.size() < 3) {
      ++dropped;
      continue;
    }
    const auto t = detail::to_double(tokens[0]);
    const auto m = detail::to_double(tokens[1]);
    const auto e = detail::to_double(tokens[2]);
    if (!t || !m || !e || !std::isfinite(*t) || !std::isfinite(*m) || !std::isfinite(*e)) {
      ++dropped;
      continue;
    }
    if (*e <= 0.0) {
      throw MalformedInput("non-positive error " + std::string(tokens[2]) + " on line " +
                           std::to_string(line_no));
    }
    rows.push_back({*t, *m, *e});
  }

  std::stable_sort(rows.begin(), rows.end(), [](const Sample& a, const Sample& b) { return a.t < b.t; });

  // Collapse identical epochs with inverse-variance weights.
  std::vector<Sample> merged;
  merged.reserve(rows.size());
  std::size_t merged_count = 0;
  for (std::size_t i = 0; i < rows.size();) {
    std::size_t j = i + 1;
    while (j < rows.size() && rows[j].t == rows[i].t) ++j;
    if (j - i == 1) {
      merged.push_back(rows[i]);
    } else {
      if (options.duplicates == DuplicateEpochs::reject) {
        throw MalformedInput("duplicate epoch " + detail::format_double(rows[i].t));
      }
      double wsum = 0.0, wm = 0.0;
      for (std::size_t r = i; r < j; ++r) {
        const double w = 1.0 / (rows[r].e * rows[r].e);
        wsum += w;
        wm += w * rows[r].m;
      }
      merged.push_back({rows[i].t, wm / wsum, 1.0 / std::sqrt(wsum)});
      merged_count += j - i - 1;
    }
    i = j;
  }

  if (merged.size() < 2) {
    throw MalformedInput("light curve '" + options.object_id + "' has " +
                         std::to_string(merged.size()) + " valid rows, need at least 2");
  }

  LightCurve lc;
  lc.object_id = options.object_id;
  lc.band = band;
  const auto n = static_cast<Eigen::Index>(merged.size());
  lc.times.resize(n);
  lc.magnitudes.resize(n);
  lc.errors.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    lc.times[i] = merged[static_cast<std::size_t>(i)].t;
    lc.magnitudes[i] = merged[static_cast<std::size_t>(i)].m;
    lc.errors[i] = merged[static_cast<std::size_t>(i)].e;
  }
  lc.dropped_rows = dropped;
  lc.merged_epochs = merged_count;
  return lc;
}

LightCurve parse_lightcurve(std::string_view text, Band band, const ParseOptions& options) {
  std::istringstream in{std::string(text)};
  return parse_lightcurve(in, band, options);
}

LightCurve read_lightcurve(const std::filesystem::path& path, Band band, const ParseOptions& options) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open light curve " + path.string());
  ParseOptions opts = options;
  if (opts.object_id.empty()) opts.object_id = path.stem().string();
  return parse_lightcurve(in, band, opts);
}

void write_lightcurve(std::ostream& out, const LightCurve& lc) {
  out << "# id=" << lc.object_id << " band=" << to_string(lc.band) << "\n";
  out << "# time,magnitude,error\n";
  for (Eigen::Index i = 0; i < lc.size(); ++i) {
    out << detail::format_double(lc.times[i]) << ',' << detail::format_double(lc.magnitudes[i]) << ','
        << detail::format_double(lc.errors[i]) << '\n';
  }
}

namespace {

FoldedLightCurve fold_series(const Vector& times, const Vector& mags, const Vector& errs, double period,
                             double t0) {
  if (!(period > 0.0) || !std::isfinite(period)) {
    throw InvalidArgument("fold period must be positive, got " + detail::format_double(period));
  }
  const auto n = times.size();
  Vector phases(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double r = std::fmod(times[i] - t0, period);
    if (r < 0.0) r += period;
    double phase = r / period;
    if (phase >= 1.0) phase = 0.0;
    phases[i] = phase;
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return phases[a] < phases[b]; });

  FoldedLightCurve out;
  out.period = period;
  out.t0 = t0;
  out.phases.resize(n);
  out.magnitudes.resize(n);
  out.errors.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto src = order[static_cast<std::size_t>(i)];
    out.phases[i] = phases[src];
    out.magnitudes[i] = mags[src];
    out.errors[i] = errs[src];
  }
  return out;
}

}  // namespace

FoldedLightCurve fold(const LightCurve& lc, double period, std::optional<double> t0) {
  const double origin = t0.value_or(lc.size() > 0 ? lc.times[0] : 0.0);
  return fold_series(lc.times, lc.magnitudes, lc.errors, period, origin);
}

FoldedLightCurve fold(const FoldedLightCurve& folded, double period, double t0) {
  return fold_series(folded.phases, folded.magnitudes, folded.errors, period, t0);
}

int TrainingManifest::class_index(std::string_view label) const {
  const auto it = std::find(classes.begin(), classes.end(), label);
  return it == classes.end() ? -1 : static_cast<int>(it - classes.begin());
}

std::map<std::string, std::size_t> TrainingManifest::class_counts() const {
  std::map<std::string, std::size_t> counts;
  for (const auto& c : classes) counts[c] = 0;
  for (const auto& e : entries) ++counts[e.label];
  return counts;
}

TrainingManifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir, bool labeled) {
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    const auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    for (auto f : detail::split(body)) header.emplace_back(f);
    break;
  }
  if (header.empty()) throw MalformedInput("manifest is empty");

  auto column = [&](std::string_view name) -> int {
    const auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  };
  const int id_col = column("id");
  const int path_col = column("path");
  const int label_col = column("label");
  const int ra_col = column("ra_deg");
  const int dec_col = column("dec_deg");
  const int red_col = column("red_path");
  if (id_col < 0 || path_col < 0) throw MalformedInput("manifest header needs `id` and `path` columns");
  if (label_col < 0 && labeled) throw MalformedInput("manifest header has no `label` class column");

  TrainingManifest manifest;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    const auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto fields = detail::split(body);
    if (fields.size() < header.size()) {
      throw MalformedInput("manifest row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                           " fields, expected " + std::to_string(header.size()));
    }
    ManifestEntry e;
    e.object_id = std::string(fields[static_cast<std::size_t>(id_col)]);
    e.path = std::filesystem::absolute(base_dir / std::string(fields[static_cast<std::size_t>(path_col)])).lexically_normal();
    if (label_col >= 0) e.label = std::string(fields[static_cast<std::size_t>(label_col)]);
    if (e.label.empty() && labeled) throw MalformedInput("manifest row " + std::to_string(row) + " has an empty label");
    auto coord = [&](int col, std::string_view name) {
      if (col < 0) return 0.0;
      const auto v = detail::to_double(fields[static_cast<std::size_t>(col)]);
      if (!v) throw MalformedInput("manifest row " + std::to_string(row) + ": bad " + std::string(name));
      return *v;
    };
    e.ra_deg = coord(ra_col, "ra_deg");
    e.dec_deg = coord(dec_col, "dec_deg");
    if (red_col >= 0 && !fields[static_cast<std::size_t>(red_col)].empty()) {
      e.red_path = std::filesystem::absolute(base_dir / std::string(fields[static_cast<std::size_t>(red_col)])).lexically_normal();
    }
    std::error_code ec;
    if (!std::filesystem::is_regular_file(e.path, ec)) {
      throw IoError("manifest entry '" + e.object_id + "' (row " + std::to_string(row) +
                    "): cannot resolve " + e.path.string());
    }
    if (e.red_path && !std::filesystem::is_regular_file(*e.red_path, ec)) {
      throw IoError("manifest entry '" + e.object_id + "' (row " + std::to_string(row) +
                    "): cannot resolve " + e.red_path->string());
    }
    if (!e.label.empty() && manifest.class_index(e.label) < 0) manifest.classes.push_back(e.label);
    manifest.entries.push_back(std::move(e));
  }

  if (manifest.entries.empty()) throw MalformedInput("manifest has no entries");
  if (labeled && manifest.classes.size() < 2) {
    throw InvalidArgument("manifest has " + std::to_string(manifest.classes.size()) +
                          " class(es); at least 2 are required");
  }
  return manifest;
}

TrainingManifest read_manifest(const std::filesystem::path& path, bool labeled) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path(), labeled);
}

void for_each_curve(const TrainingManifest& manifest, const CurveVisitor& visit) {
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    ParseOptions opts;
    opts.object_id = e.object_id;
    LightCurve blue = read_lightcurve(e.path, Band::blue, opts);
    blue.ra_deg = e.ra_deg;
    blue.dec_deg = e.dec_deg;
    std::optional<LightCurve> red;
    if (e.red_path) {
      red = read_lightcurve(*e.red_path, Band::red, opts);
      red->ra_deg = e.ra_deg;
      red->dec_deg = e.dec_deg;
    }
    visit(i, e, blue, red);
  }
}

}  // namespace rfbn

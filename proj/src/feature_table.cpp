#include "rfbn/feature_table.hpp"

#include "csv.hpp"
#include "rfbn/errors.hpp"
#include "rfbn/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace rfbn {

namespace {

constexpr std::array<std::string_view, 8> kMetaColumns = {"id",     "label",   "path",     "band",
                                                           "ra_deg", "dec_deg", "mean_mag", "snr"};
constexpr std::size_t kNumColumns = kMetaColumns.size() + kNumFeatures + 1;

}  // namespace

Matrix FeatureTable::matrix() const {
  Matrix x(static_cast<Eigen::Index>(rows.size()), kNumFeatures);
  for (std::size_t i = 0; i < rows.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = rows[i].features.values.transpose();
  return x;
}

FeatureRecord make_record(const LightCurve& blue, const std::optional<LightCurve>& red,
                          const FeatureOptions& options) {
  FeatureRecord r;
  r.object_id = blue.object_id;
  r.band = blue.band;
  r.ra_deg = blue.ra_deg;
  r.dec_deg = blue.dec_deg;
  r.mean_mag = weighted_mean(blue);
  r.snr = signal_to_noise(blue);
  r.features = extract_features(blue, red, options);
  return r;
}

FeatureTable extract_feature_table(const TrainingManifest& manifest, const FeatureOptions& options,
                                   unsigned workers) {
  FeatureTable table;
  table.rows.resize(manifest.size());
  parallel_for(manifest.size(), resolve_workers(workers), [&](std::size_t i) {
    const auto& e = manifest.entries[i];
    ParseOptions popts;
    popts.object_id = e.object_id;
    LightCurve blue = read_lightcurve(e.path, Band::blue, popts);
    blue.ra_deg = e.ra_deg;
    blue.dec_deg = e.dec_deg;
    std::optional<LightCurve> red;
    if (e.red_path) red = read_lightcurve(*e.red_path, Band::red, popts);
    FeatureRecord r = make_record(blue, red, options);
    r.label = e.label;
    r.path = e.path.string();
    table.rows[i] = std::move(r);
  });
  return table;
}

std::string feature_table_header() {
  std::string h;
  for (auto c : kMetaColumns) {
    h += c;
    h += ',';
  }
  for (auto c : kFeatureNames) {
    h += c;
    h += ',';
  }
  h += "mask_bits";
  return h;
}

void write_feature_row(std::ostream& out, const FeatureRecord& r) {
  out << r.object_id << ',' << r.label << ',' << r.path << ',' << to_string(r.band) << ','
      << detail::format_double(r.ra_deg) << ',' << detail::format_double(r.dec_deg) << ','
      << detail::format_double(r.mean_mag) << ',' << detail::format_double(r.snr);
  for (int f = 0; f < kNumFeatures; ++f) out << ',' << detail::format_double(r.features.values[f]);
  out << ',' << r.features.mask.to_ulong() << '\n';
}

void write_feature_table(std::ostream& out, const FeatureTable& table) {
  out << feature_table_header() << '\n';
  for (const auto& r : table.rows) write_feature_row(out, r);
}

void write_feature_table(const std::filesystem::path& path, const FeatureTable& table) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write feature table " + path.string());
  write_feature_table(out, table);
}

FeatureTable read_feature_table(const std::filesystem::path& path) {
  FeatureTableReader reader(path);
  FeatureTable table;
  FeatureRecord r;
  while (reader.next(r)) table.rows.push_back(r);
  return table;
}

FeatureTableReader::FeatureTableReader(std::istream& in) : in_(&in) { read_header(); }

FeatureTableReader::FeatureTableReader(const std::filesystem::path& path)
    : owned_(std::make_unique<std::ifstream>(path)), in_(owned_.get()) {
  if (!*owned_) throw IoError("cannot open feature table " + path.string());
  read_header();
}

FeatureTableReader::~FeatureTableReader() = default;

void FeatureTableReader::read_header() {
  std::string line;
  while (std::getline(*in_, line)) {
    ++line_no_;
    const auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    if (body != feature_table_header()) {
      throw InvalidArgument("feature table schema mismatch: expected header '" + feature_table_header() + "'");
    }
    return;
  }
  throw InvalidArgument("feature table has no header");
}

bool FeatureTableReader::next(FeatureRecord& r) {
  std::string line;
  while (std::getline(*in_, line)) {
    ++line_no_;
    const auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto fields = detail::split(body);
    if (fields.size() != kNumColumns) {
      throw MalformedInput("feature table line " + std::to_string(line_no_) + " has " +
                           std::to_string(fields.size()) + " fields, expected " + std::to_string(kNumColumns));
    }
    auto number = [&](std::size_t col) {
      const auto v = detail::to_double(fields[col]);
      if (!v) throw MalformedInput("feature table line " + std::to_string(line_no_) + ": bad number '" +
                                   std::string(fields[col]) + "'");
      return *v;
    };
    r = FeatureRecord{};
    r.object_id = std::string(fields[0]);
    r.label = std::string(fields[1]);
    r.path = std::string(fields[2]);
    r.band = parse_band(fields[3]);
    r.ra_deg = number(4);
    r.dec_deg = number(5);
    r.mean_mag = number(6);
    r.snr = number(7);
    const auto bits = detail::to_integer(fields[kNumColumns - 1]);
    if (!bits || *bits < 0 || *bits >= (1LL << kNumFeatures)) {
      throw MalformedInput("feature table line " + std::to_string(line_no_) + ": bad mask_bits");
    }
    r.features.mask = FeatureMask(static_cast<unsigned long>(*bits));
    for (int f = 0; f < kNumFeatures; ++f) {
      const double v = number(kMetaColumns.size() + static_cast<std::size_t>(f));
      r.features.values[f] = r.features.mask.test(static_cast<std::size_t>(f))
                                 ? v
                                 : std::numeric_limits<double>::quiet_NaN();
    }
    ++rows_read_;
    return true;
  }
  return false;
}

Imputation fit_imputation(const FeatureTable& table) {
  Imputation imp;
  const auto n = table.rows.size();
  for (int f = 0; f < kNumFeatures; ++f) {
    std::vector<double> valid;
    valid.reserve(n);
    for (const auto& r : table.rows) {
      if (r.features.mask.test(static_cast<std::size_t>(f))) valid.push_back(r.features.values[f]);
    }
    imp.imputed_counts[static_cast<std::size_t>(f)] = n - valid.size();
    if (valid.empty()) {
      imp.medians[f] = 0.0;
      if (n > 0) imp.warnings.push_back(std::string(kFeatureNames[static_cast<std::size_t>(f)]) +
                                        ": no valid values, imputing 0");
      continue;
    }
    imp.medians[f] = percentile(Eigen::Map<const Vector>(valid.data(), static_cast<Eigen::Index>(valid.size())), 50.0);
    if (2 * (n - valid.size()) > n) {
      imp.warnings.push_back(std::string(kFeatureNames[static_cast<std::size_t>(f)]) + ": masked for " +
                             std::to_string(n - valid.size()) + " of " + std::to_string(n) + " objects");
    }
  }
  return imp;
}

FeatureValues impute(const FeatureVector& fv, const FeatureValues& medians) {
  FeatureValues out = fv.values;
  for (int f = 0; f < kNumFeatures; ++f) {
    if (!fv.mask.test(static_cast<std::size_t>(f)) || !std::isfinite(out[f])) out[f] = medians[f];
  }
  return out;
}

TrainingData feature_matrix(const FeatureTable& table, std::vector<std::string> classes) {
  TrainingData data;
  if (classes.empty()) {
    for (const auto& r : table.rows) {
      if (std::find(classes.begin(), classes.end(), r.label) == classes.end()) classes.push_back(r.label);
    }
  }
  data.classes = std::move(classes);
  data.imputation = fit_imputation(table);
  const auto n = static_cast<Eigen::Index>(table.rows.size());
  data.features.resize(n, kNumFeatures);
  data.labels.resize(table.rows.size());
  data.object_ids.resize(table.rows.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = table.rows[static_cast<std::size_t>(i)];
    const auto it = std::find(data.classes.begin(), data.classes.end(), r.label);
    if (it == data.classes.end()) {
      throw InvalidArgument("object '" + r.object_id + "' has label '" + r.label + "' outside the class list");
    }
    data.labels[static_cast<std::size_t>(i)] = static_cast<int>(it - data.classes.begin());
    data.object_ids[static_cast<std::size_t>(i)] = r.object_id;
    data.features.row(i) = impute(r.features, data.imputation.medians).transpose();
  }
  return data;
}

TrainingData feature_matrix(const TrainingManifest& manifest, const FeatureOptions& options, unsigned workers) {
  return feature_matrix(extract_feature_table(manifest, options, workers), manifest.classes);
}

}  // namespace rfbn

#pragma once

#include "rfbn/features.hpp"
#include "rfbn/lightcurve.hpp"

#include <array>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace rfbn {

struct FeatureRecord {
  std::string object_id;
  std::string label;  // empty for unlabeled objects
  std::string path;
  Band band = Band::blue;
  double ra_deg = 0.0;
  double dec_deg = 0.0;
  double mean_mag = 0.0;
  double snr = 0.0;
  FeatureVector features;
};

struct FeatureTable {
  std::vector<FeatureRecord> rows;

  std::size_t size() const noexcept { return rows.size(); }
  // n x 13, NaN where masked.
  Matrix matrix() const;
};

FeatureRecord make_record(const LightCurve& blue, const std::optional<LightCurve>& red,
                          const FeatureOptions& options = {});

// Curves are read and featurized one at a time per worker; rows keep manifest order.
FeatureTable extract_feature_table(const TrainingManifest& manifest, const FeatureOptions& options = {},
                                   unsigned workers = 1);

// CSV: id,label,path,band,ra_deg,dec_deg,mean_mag,snr,<13 feature names>,mask_bits
std::string feature_table_header();
void write_feature_row(std::ostream& out, const FeatureRecord& row);
void write_feature_table(std::ostream& out, const FeatureTable& table);
void write_feature_table(const std::filesystem::path& path, const FeatureTable& table);
FeatureTable read_feature_table(const std::filesystem::path& path);

// Row-at-a-time reader; the header is validated on construction.
class FeatureTableReader {
 public:
  explicit FeatureTableReader(std::istream& in);
  explicit FeatureTableReader(const std::filesystem::path& path);
  ~FeatureTableReader();
  FeatureTableReader(const FeatureTableReader&) = delete;
  FeatureTableReader& operator=(const FeatureTableReader&) = delete;

  bool next(FeatureRecord& row);
  std::size_t rows_read() const noexcept { return rows_read_; }

 private:
  void read_header();

  std::unique_ptr<std::istream> owned_;
  std::istream* in_;
  std::size_t line_no_ = 0;
  std::size_t rows_read_ = 0;
};

struct Imputation {
  FeatureValues medians = FeatureValues::Zero();
  std::array<std::size_t, kNumFeatures> imputed_counts{};
  std::vector<std::string> warnings;
};

// Per-feature median over valid entries; warns when a feature is masked for
// more than half of the rows.
Imputation fit_imputation(const FeatureTable& table);
FeatureValues impute(const FeatureVector& fv, const FeatureValues& medians);

struct TrainingData {
  Matrix features;  // n x 13, imputed
  Labels labels;
  std::vector<std::string> classes;
  std::vector<std::string> object_ids;
  Imputation imputation;
};

// Rows aligned with table order. Labels must all appear in `classes`; when
// `classes` is empty the order of first appearance is used.
TrainingData feature_matrix(const FeatureTable& table, std::vector<std::string> classes = {});
TrainingData feature_matrix(const TrainingManifest& manifest, const FeatureOptions& options = {},
                            unsigned workers = 1);

}  // namespace rfbn

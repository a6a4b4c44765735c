#pragma once

// Seeded generators for test fixtures and benchmarks: Gaussian feature
// clusters, validation fixtures built from them, and light-curve surveys.

#include "rfbn/feature_table.hpp"
#include "rfbn/lightcurve.hpp"
#include "rfbn/pipeline.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace rfbn::synthetic {

struct ClassSpec {
  std::string label;
  std::size_t count = 0;
  FeatureValues mean = FeatureValues::Zero();
  double sigma = 1.0;
};

// Random class centers, `separation` standard deviations apart per feature on average.
std::vector<FeatureValues> class_means(std::size_t classes, double separation, std::uint64_t seed);

// A center that takes feature f from means[sources[f % sources.size()]].
FeatureValues mixed_mean(const std::vector<FeatureValues>& means, const std::vector<std::size_t>& sources);

FeatureRecord gaussian_record(const std::string& id, const std::string& label, const FeatureValues& mean,
                              double sigma, std::mt19937_64& rng);

// Rows are emitted class by class with ids `<prefix><index>`.
FeatureTable gaussian_table(const std::vector<ClassSpec>& classes, std::uint64_t seed,
                            const std::string& id_prefix = "obj");

// Four trained classes (1400/800/450/300 objects) plus 50 members of
// "held"; 3000 rows. The held class mixes features of all trained classes,
// or copies class 0 when `duplicate_control` is set.
FeatureTable loco_fixture(std::uint64_t seed, bool duplicate_control = false);

struct RetrainFixture {
  FeatureTable training;                 // four labeled classes
  FeatureTable survey;                   // unlabeled
  std::vector<std::string> artifact_ids;  // 10 tight four-way mixtures
  std::vector<std::string> outlier_ids;   // 400 mild anomalies between classes
};
RetrainFixture retrain_fixture(std::uint64_t seed);

// Streams `count` unlabeled records drawn from `means` without storing them.
class RecordStream {
 public:
  RecordStream(std::vector<FeatureValues> means, std::size_t count, std::uint64_t seed);
  bool operator()(FeatureRecord& record);

 private:
  std::vector<FeatureValues> means_;
  std::size_t count_;
  std::size_t next_ = 0;
  std::mt19937_64 rng_;
};

// P-periodic sinusoid sampled at n uniform-random epochs over the baseline,
// Gaussian noise sigma = amplitude / snr.
LightCurve sinusoid(double period, double amplitude, std::size_t n, double baseline, double snr,
                    std::uint64_t seed);
LightCurve constant(std::size_t n, double baseline, double sigma, std::uint64_t seed);

struct SurveySpec {
  std::size_t per_class = 40;
  std::size_t points = 160;
  double baseline = 1000.0;
  // unlabeled objects unlike any class, written only to the scoring manifest
  std::size_t oddballs = 0;
};

struct SurveyPaths {
  std::filesystem::path training_manifest;
  std::filesystem::path scoring_manifest;
};

// Classes: constant, pulsator, eclipsing, long_period. Every object has a
// blue and a red curve. The scoring manifest holds a fresh draw of every
// class plus the oddballs.
SurveyPaths write_survey(const std::filesystem::path& dir, const SurveySpec& spec, std::uint64_t seed);

}  // namespace rfbn::synthetic

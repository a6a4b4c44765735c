#include "rfbn/synthetic.hpp"

#include "csv.hpp"
#include "rfbn/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace rfbn::synthetic {

namespace fs = std::filesystem;

namespace {

std::string numbered(const std::string& prefix, std::size_t i, int width = 6) {
  std::string digits = std::to_string(i);
  if (static_cast<int>(digits.size()) < width) digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
  return prefix + digits;
}

Vector sorted_epochs(std::size_t n, double baseline, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, baseline);
  std::vector<double> t(n);
  for (auto& v : t) v = 50000.0 + u(rng);
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  return Eigen::Map<Vector>(t.data(), static_cast<Eigen::Index>(t.size()));
}

LightCurve curve_from(const std::string& id, Band band, const Vector& times, const Vector& mags, double sigma) {
  LightCurve lc;
  lc.object_id = id;
  lc.band = band;
  lc.times = times;
  lc.magnitudes = mags;
  lc.errors = Vector::Constant(times.size(), sigma);
  return lc;
}

}  // namespace

std::vector<FeatureValues> class_means(std::size_t classes, double separation, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  // uniform on [-s, s] gives mean pairwise distance 2s/3 per feature
  std::uniform_real_distribution<double> u(-1.5 * separation, 1.5 * separation);
  std::vector<FeatureValues> means(classes);
  for (auto& m : means) {
    for (int f = 0; f < kNumFeatures; ++f) m[f] = u(rng);
  }
  return means;
}

FeatureValues mixed_mean(const std::vector<FeatureValues>& means, const std::vector<std::size_t>& sources) {
  if (sources.empty()) throw InvalidArgument("mixed_mean needs at least one source class");
  FeatureValues m;
  for (int f = 0; f < kNumFeatures; ++f) m[f] = means.at(sources[static_cast<std::size_t>(f) % sources.size()])[f];
  return m;
}

FeatureRecord gaussian_record(const std::string& id, const std::string& label, const FeatureValues& mean,
                              double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, sigma);
  std::uniform_real_distribution<double> ra(80.0, 82.0);
  std::uniform_real_distribution<double> dec(-70.0, -68.0);
  FeatureRecord r;
  r.object_id = id;
  r.label = label;
  r.ra_deg = ra(rng);
  r.dec_deg = dec(rng);
  r.mean_mag = 17.0 + 0.5 * noise(rng);
  r.snr = 10.0;
  for (int f = 0; f < kNumFeatures; ++f) r.features.set(static_cast<Feature>(f), mean[f] + noise(rng));
  return r;
}

FeatureTable gaussian_table(const std::vector<ClassSpec>& classes, std::uint64_t seed, const std::string& id_prefix) {
  std::mt19937_64 rng(seed);
  FeatureTable table;
  std::size_t next = 0;
  for (const auto& c : classes) {
    for (std::size_t i = 0; i < c.count; ++i) {
      table.rows.push_back(gaussian_record(numbered(id_prefix, next++), c.label, c.mean, c.sigma, rng));
    }
  }
  return table;
}

FeatureTable loco_fixture(std::uint64_t seed, bool duplicate_control) {
  const auto means = class_means(4, 5.0, seed);
  const FeatureValues held = duplicate_control ? means[0] : mixed_mean(means, {0, 1, 2, 3});
  const std::vector<ClassSpec> classes{
      {"alpha", 1400, means[0], 1.0}, {"beta", 800, means[1], 1.0}, {"gamma", 450, means[2], 1.0},
      {"delta", 300, means[3], 1.0},  {"held", 50, held, 1.0},
  };
  return gaussian_table(classes, seed ^ 0x9e3779b97f4a7c15ull);
}

RetrainFixture retrain_fixture(std::uint64_t seed) {
  const auto means = class_means(4, 5.0, seed);
  const std::vector<std::string> names{"alpha", "beta", "gamma", "delta"};
  RetrainFixture fx;
  std::vector<ClassSpec> train_spec;
  for (std::size_t c = 0; c < 4; ++c) train_spec.push_back({names[c], 300, means[c], 1.0});
  fx.training = gaussian_table(train_spec, seed + 1, "trn");

  std::mt19937_64 rng(seed + 2);
  std::size_t next = 0;
  for (std::size_t c = 0; c < 4; ++c) {
    for (int i = 0; i < 250; ++i) {
      fx.survey.rows.push_back(gaussian_record(numbered("srv", next++), "", means[c], 1.0, rng));
    }
  }
  const FeatureValues artifact = mixed_mean(means, {0, 1, 2, 3});
  for (int i = 0; i < 10; ++i) {
    fx.artifact_ids.push_back(numbered("srv", next));
    fx.survey.rows.push_back(gaussian_record(numbered("srv", next++), "", artifact, 0.3, rng));
  }
  // mild anomalies: a class center pulled 18-24% of the way toward another
  std::uniform_real_distribution<double> pull(0.18, 0.24);
  for (std::size_t i = 0; i < 400; ++i) {
    const std::size_t a = i % 4;
    std::size_t b = (i / 4) % 4;
    if (b == a) b = (a + 1) % 4;
    const FeatureValues mean = means[a] + pull(rng) * (means[b] - means[a]);
    fx.outlier_ids.push_back(numbered("srv", next));
    fx.survey.rows.push_back(gaussian_record(numbered("srv", next++), "", mean, 1.0, rng));
  }
  return fx;
}

RecordStream::RecordStream(std::vector<FeatureValues> means, std::size_t count, std::uint64_t seed)
    : means_(std::move(means)), count_(count), rng_(seed) {
  if (means_.empty()) throw InvalidArgument("RecordStream needs at least one class mean");
}

bool RecordStream::operator()(FeatureRecord& record) {
  if (next_ >= count_) return false;
  const auto& mean = means_[next_ % means_.size()];
  record = gaussian_record(numbered("str", next_, 8), "", mean, 1.0, rng_);
  ++next_;
  return true;
}

LightCurve sinusoid(double period, double amplitude, std::size_t n, double baseline, double snr,
                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Vector t = sorted_epochs(n, baseline, rng);
  const double sigma = amplitude / snr;
  std::normal_distribution<double> noise(0.0, sigma);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double phi = phase(rng);
  Vector m(t.size());
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    m[i] = 16.0 + amplitude * std::sin(2.0 * std::numbers::pi * t[i] / period + phi) + noise(rng);
  }
  return curve_from("sinusoid", Band::blue, t, m, sigma);
}

LightCurve constant(std::size_t n, double baseline, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Vector t = sorted_epochs(n, baseline, rng);
  std::normal_distribution<double> noise(0.0, sigma);
  Vector m(t.size());
  for (auto& v : m) v = 17.0 + noise(rng);
  return curve_from("constant", Band::blue, t, m, sigma);
}

namespace {

enum class Kind { constant, pulsator, eclipsing, long_period, oddball };

constexpr const char* kind_name(Kind k) {
  switch (k) {
    case Kind::constant: return "constant";
    case Kind::pulsator: return "pulsator";
    case Kind::eclipsing: return "eclipsing";
    case Kind::long_period: return "long_period";
    case Kind::oddball: return "oddball";
  }
  return "";
}

struct Shape {
  Kind kind;
  double period = 0.0;
  double amplitude = 0.0;
  double phi = 0.0;
  double base = 0.0;
  double color = 0.0;
};

Shape draw_shape(Kind kind, std::mt19937_64& rng) {
  auto u = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  Shape s{kind};
  s.phi = u(0.0, 1.0);
  switch (kind) {
    case Kind::constant: s.base = u(16.5, 17.5); s.color = 0.3; break;
    case Kind::pulsator: s.period = u(4.0, 9.0); s.amplitude = u(0.3, 0.6); s.base = u(15.5, 16.5); s.color = 0.5; break;
    case Kind::eclipsing: s.period = u(1.2, 1.9); s.amplitude = u(0.6, 1.0); s.base = u(15.0, 16.0); s.color = 0.1; break;
    case Kind::long_period: s.period = u(150.0, 400.0); s.amplitude = u(1.0, 2.0); s.base = u(13.5, 14.5); s.color = 1.2; break;
    case Kind::oddball: s.amplitude = u(1.5, 2.5); s.base = u(15.5, 16.5); s.color = -0.4; break;
  }
  return s;
}

double magnitude(const Shape& s, double t, double t_start, double baseline) {
  const double two_pi = 2.0 * std::numbers::pi;
  switch (s.kind) {
    case Kind::constant: return s.base;
    case Kind::pulsator: return s.base + s.amplitude * std::sin(two_pi * (t / s.period + s.phi));
    case Kind::eclipsing: {
      double ph = std::fmod(t / s.period + s.phi, 1.0);
      const double d1 = std::min(ph, 1.0 - ph);
      const double d2 = std::abs(ph - 0.5);
      return s.base + s.amplitude * std::exp(-0.5 * std::pow(d1 / 0.03, 2)) +
             0.4 * s.amplitude * std::exp(-0.5 * std::pow(d2 / 0.03, 2));
    }
    case Kind::long_period: {
      const double ph = std::fmod(t / s.period + s.phi, 1.0);
      return s.base + s.amplitude * (ph < 0.3 ? 1.0 - ph / 0.3 : (ph - 0.3) / 0.7);
    }
    case Kind::oddball: {
      // slow brightening with a single flare
      const double x = (t - t_start) / baseline;
      const double centre = 0.2 + 0.6 * s.phi;
      return s.base + 0.8 * x - s.amplitude * std::exp(-std::max(0.0, x - centre) * 40.0) * (x >= centre ? 1.0 : 0.0);
    }
  }
  return s.base;
}

void write_curve(const fs::path& path, const LightCurve& lc) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_lightcurve(out, lc);
}

}  // namespace

SurveyPaths write_survey(const fs::path& dir, const SurveySpec& spec, std::uint64_t seed) {
  fs::create_directories(dir / "curves");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> ra(80.0, 82.0);
  std::uniform_real_distribution<double> dec(-70.0, -68.0);
  const double sigma = 0.03;

  auto emit = [&](std::ofstream& manifest, const std::string& id, Kind kind, bool labeled) {
    const Shape s = draw_shape(kind, rng);
    const Vector t = sorted_epochs(spec.points, spec.baseline, rng);
    Vector blue(t.size());
    Vector red(t.size());
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double m = magnitude(s, t[i], t[0], spec.baseline);
      blue[i] = m + sigma * unit(rng);
      red[i] = m - s.color + sigma * unit(rng);
    }
    const std::string blue_rel = "curves/" + id + "_B.dat";
    const std::string red_rel = "curves/" + id + "_R.dat";
    write_curve(dir / blue_rel, curve_from(id, Band::blue, t, blue, sigma));
    write_curve(dir / red_rel, curve_from(id, Band::red, t, red, sigma));
    manifest << id << ',' << blue_rel << ',' << (labeled ? kind_name(kind) : "") << ','
             << detail::format_double(ra(rng)) << ',' << detail::format_double(dec(rng)) << ',' << red_rel << '\n';
  };

  SurveyPaths paths{dir / "training.csv", dir / "scoring.csv"};
  const Kind classes[] = {Kind::constant, Kind::pulsator, Kind::eclipsing, Kind::long_period};
  {
    std::ofstream m(paths.training_manifest);
    if (!m) throw IoError("cannot write " + paths.training_manifest.string());
    m << "id,path,label,ra_deg,dec_deg,red_path\n";
    std::size_t next = 0;
    for (Kind k : classes) {
      for (std::size_t i = 0; i < spec.per_class; ++i) emit(m, numbered("trn", next++), k, true);
    }
  }
  {
    std::ofstream m(paths.scoring_manifest);
    if (!m) throw IoError("cannot write " + paths.scoring_manifest.string());
    m << "id,path,label,ra_deg,dec_deg,red_path\n";
    std::size_t next = 0;
    for (Kind k : classes) {
      for (std::size_t i = 0; i < spec.per_class; ++i) emit(m, numbered("srv", next++), k, false);
    }
    for (std::size_t i = 0; i < spec.oddballs; ++i) emit(m, numbered("srv", next++), Kind::oddball, false);
  }
  return paths;
}

}  // namespace rfbn::synthetic

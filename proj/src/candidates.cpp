#include "rfbn/candidates.hpp"

#include "csv.hpp"
#include "rfbn/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace rfbn {

namespace {

constexpr std::array<std::string_view, 12> kLeadColumns = {
    "id", "rank", "score", "log_joint", "period", "band", "ra_deg", "dec_deg", "mean_mag", "snr", "low_snr", "path"};
constexpr std::string_view kVotePrefix = "v_";

}  // namespace

bool outranks(const CandidateRecord& a, const CandidateRecord& b) {
  if (a.log_joint != b.log_joint) return a.log_joint < b.log_joint;
  return a.object_id < b.object_id;
}

void assign_ranks(std::vector<CandidateRecord>& candidates) {
  std::stable_sort(candidates.begin(), candidates.end(), outranks);
  for (std::size_t i = 0; i < candidates.size(); ++i) candidates[i].rank = i + 1;
}

void write_candidates(std::ostream& out, const CandidateList& list) {
  for (auto c : kLeadColumns) out << c << ',';
  for (const auto& name : list.class_names) out << kVotePrefix << name << ',';
  for (auto f : kFeatureNames) out << f << ',';
  out << "mask_bits,triage_label\n";
  for (const auto& c : list.candidates) {
    out << c.object_id << ',' << c.rank << ',' << detail::format_double(c.score) << ','
        << detail::format_double(c.log_joint) << ',' << detail::format_double(c.period) << ','
        << to_string(c.band) << ',' << detail::format_double(c.ra_deg) << ',' << detail::format_double(c.dec_deg)
        << ',' << detail::format_double(c.mean_mag) << ',' << detail::format_double(c.snr) << ','
        << (c.low_snr ? 1 : 0) << ',' << c.path << ',';
    for (Eigen::Index j = 0; j < c.votes.size(); ++j) out << detail::format_double(c.votes[j]) << ',';
    for (int f = 0; f < kNumFeatures; ++f) out << detail::format_double(c.features.values[f]) << ',';
    out << c.features.mask.to_ulong() << ',' << c.triage_label << '\n';
  }
}

void write_candidates(const std::filesystem::path& path, const CandidateList& list) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_candidates(out, list);
}

CandidateList read_candidates(std::istream& in) {
  CandidateList list;
  std::string line;
  if (!std::getline(in, line)) throw MalformedInput("candidate file is empty");
  const auto header = detail::split(detail::trim(line));
  std::size_t col = 0;
  for (auto c : kLeadColumns) {
    if (col >= header.size() || header[col] != c) throw MalformedInput("candidate header mismatch at '" + std::string(c) + "'");
    ++col;
  }
  while (col < header.size() && header[col].starts_with(kVotePrefix)) {
    list.class_names.emplace_back(header[col].substr(kVotePrefix.size()));
    ++col;
  }
  const std::size_t k = list.class_names.size();
  for (auto f : kFeatureNames) {
    if (col >= header.size() || header[col] != f) throw MalformedInput("candidate header mismatch at '" + std::string(f) + "'");
    ++col;
  }
  if (header.size() != col + 2) throw MalformedInput("candidate header has unexpected trailing columns");

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto fields = detail::split(body);
    if (fields.size() != header.size()) {
      throw MalformedInput("candidate line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                           " fields, expected " + std::to_string(header.size()));
    }
    auto number = [&](std::size_t i) {
      const auto v = detail::to_double(fields[i]);
      if (!v) throw MalformedInput("candidate line " + std::to_string(line_no) + ": bad number '" + std::string(fields[i]) + "'");
      return *v;
    };
    CandidateRecord c;
    c.object_id = std::string(fields[0]);
    c.rank = static_cast<std::size_t>(number(1));
    c.score = number(2);
    c.log_joint = number(3);
    c.period = number(4);
    c.band = parse_band(fields[5]);
    c.ra_deg = number(6);
    c.dec_deg = number(7);
    c.mean_mag = number(8);
    c.snr = number(9);
    c.low_snr = number(10) != 0.0;
    c.path = std::string(fields[11]);
    std::size_t i = kLeadColumns.size();
    c.votes.resize(static_cast<Eigen::Index>(k));
    for (std::size_t j = 0; j < k; ++j) c.votes[static_cast<Eigen::Index>(j)] = number(i++);
    for (int f = 0; f < kNumFeatures; ++f) c.features.values[f] = number(i++);
    const auto bits = detail::to_integer(fields[i++]);
    if (!bits) throw MalformedInput("candidate line " + std::to_string(line_no) + ": bad mask_bits");
    c.features.mask = FeatureMask(static_cast<unsigned long>(*bits));
    c.triage_label = std::string(fields[i]);
    list.candidates.push_back(std::move(c));
  }
  return list;
}

CandidateList read_candidates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_candidates(in);
}

}  // namespace rfbn

#pragma once

#include "rfbn/features.hpp"
#include "rfbn/lightcurve.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace rfbn {

// Triage states as stored on a candidate: "unreviewed", "artifact:<group>",
// "known:<class>" or "interesting".
inline constexpr std::string_view kUnreviewed = "unreviewed";

struct CandidateRecord {
  std::string object_id;
  double score = 0.0;      // 1 - joint probability
  double log_joint = 0.0;  // ranking key; finer-grained than score
  std::size_t rank = 0;    // 1-based
  Vector votes;
  FeatureVector features;
  double period = 0.0;  // NaN when the period feature is invalid
  Band band = Band::blue;
  std::string triage_label{kUnreviewed};
  std::string run_id;

  std::string path;
  double ra_deg = 0.0;
  double dec_deg = 0.0;
  double mean_mag = 0.0;
  double snr = 0.0;
  bool low_snr = false;
};

// Most outlying first: ascending log joint probability, then object id.
bool outranks(const CandidateRecord& a, const CandidateRecord& b);

// Sorts with `outranks` and assigns ranks 1..m.
void assign_ranks(std::vector<CandidateRecord>& candidates);

struct CandidateList {
  std::vector<std::string> class_names;
  std::vector<CandidateRecord> candidates;
};

void write_candidates(std::ostream& out, const CandidateList& list);
void write_candidates(const std::filesystem::path& path, const CandidateList& list);
CandidateList read_candidates(std::istream& in);
CandidateList read_candidates(const std::filesystem::path& path);

}  // namespace rfbn

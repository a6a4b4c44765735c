#include "rfbn/crossmatch.hpp"

#include "csv.hpp"
#include "rfbn/errors.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>

namespace rfbn {

Catalog read_catalog(std::istream& in, std::string name) {
  Catalog cat;
  cat.name = std::move(name);
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    const auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    for (auto f : detail::split(body)) header.emplace_back(f);
    break;
  }
  auto column = [&](std::string_view n) {
    const auto it = std::find(header.begin(), header.end(), n);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  };
  const int ra = column("ra_deg"), dec = column("dec_deg"), label = column("label"), id = column("id");
  if (ra < 0 || dec < 0) throw MalformedInput("catalog header needs ra_deg and dec_deg");

  std::size_t row = 0;
  while (std::getline(in, line)) {
    const auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    ++row;
    const auto fields = detail::split(body);
    if (fields.size() < header.size()) {
      ++cat.skipped_rows;
      continue;
    }
    const auto r = detail::to_double(fields[static_cast<std::size_t>(ra)]);
    const auto d = detail::to_double(fields[static_cast<std::size_t>(dec)]);
    if (!r || !d || *r < 0.0 || *r >= 360.0 || *d < -90.0 || *d > 90.0) {
      ++cat.skipped_rows;
      continue;
    }
    CatalogEntry e;
    e.ra_deg = *r;
    e.dec_deg = *d;
    e.label = label >= 0 ? std::string(fields[static_cast<std::size_t>(label)]) : std::string{};
    e.id = id >= 0 ? std::string(fields[static_cast<std::size_t>(id)]) : std::to_string(row);
    cat.entries.push_back(std::move(e));
  }
  return cat;
}

Catalog read_catalog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open catalog " + path.string());
  return read_catalog(in, path.stem().string());
}

CrossMatchReport crossmatch(const std::vector<CandidateRecord>& candidates, const Catalog& catalog,
                            double radius_arcsec) {
  if (!(radius_arcsec > 0.0)) throw InvalidArgument("cross-match radius must be positive");
  CrossMatchReport report;
  report.catalog = catalog.name;
  report.skipped_catalog_rows = catalog.skipped_rows;

  // Declination-sorted index; only the band |dec - dec0| <= radius is scanned.
  std::vector<std::size_t> by_dec(catalog.entries.size());
  std::iota(by_dec.begin(), by_dec.end(), std::size_t{0});
  std::stable_sort(by_dec.begin(), by_dec.end(), [&](std::size_t a, std::size_t b) {
    return catalog.entries[a].dec_deg < catalog.entries[b].dec_deg;
  });
  const double radius_deg = radius_arcsec / 3600.0;

  for (const auto& c : candidates) {
    CrossMatch m;
    m.object_id = c.object_id;
    const auto lo = std::lower_bound(by_dec.begin(), by_dec.end(), c.dec_deg - radius_deg,
                                     [&](std::size_t i, double v) { return catalog.entries[i].dec_deg < v; });
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_row = 0;
    for (auto it = lo; it != by_dec.end() && catalog.entries[*it].dec_deg <= c.dec_deg + radius_deg; ++it) {
      const auto& e = catalog.entries[*it];
      const double sep = angular_separation_deg(c.ra_deg, c.dec_deg, e.ra_deg, e.dec_deg) * 3600.0;
      if (sep > radius_arcsec) continue;
      if (sep < best || (sep == best && *it < best_row)) {
        best = sep;
        best_row = *it;
      }
    }
    if (std::isfinite(best)) {
      m.matched = true;
      m.catalog_row = best_row;
      m.counterpart_id = catalog.entries[best_row].id;
      m.counterpart_label = catalog.entries[best_row].label;
      m.separation_arcsec = best;
      ++report.matched;
    } else {
      m.counterpart_label = "no counterpart";
    }
    report.matches.push_back(std::move(m));
  }
  return report;
}

void write_crossmatch(std::ostream& out, const std::vector<CandidateRecord>& candidates,
                      const CrossMatchReport& report) {
  out << "id,rank,score,catalog,matched,counterpart_id,counterpart_label,separation_arcsec\n";
  for (std::size_t i = 0; i < candidates.size() && i < report.matches.size(); ++i) {
    const auto& c = candidates[i];
    const auto& m = report.matches[i];
    out << c.object_id << ',' << c.rank << ',' << detail::format_double(c.score) << ',' << report.catalog << ','
        << (m.matched ? 1 : 0) << ',' << m.counterpart_id << ',' << m.counterpart_label << ','
        << (m.matched ? detail::format_double(m.separation_arcsec) : std::string{}) << '\n';
  }
}

}  // namespace rfbn

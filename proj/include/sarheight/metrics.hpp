#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <tuple>
#include <string>
#include <vector>

#include "sarheight/common.hpp"
#include "sarheight/geometry.hpp"

namespace sarheight {

struct EvalPair {
  std::string building_id;
  std::string city_id;
  double ref_height_m = 0.0;
  double pred_height_m = 0.0;
};

/// Per-bucket aggregate. Metrics are absent (not zero) for empty buckets.
struct BucketStats {
  int64_t n = 0;
  std::optional<double> mae;
  std::optional<double> rmse;
};

/// Stratified error report: all buildings, below-threshold, and
/// at-or-above-threshold buckets on the reference height.
struct MetricsReport {
  std::string city_id = "ALL";
  double threshold_m = 40.0;
  BucketStats all;
  BucketStats lt;
  BucketStats ge;
};

namespace detail {

/// Single-pass accumulator (count, sum |e|, sum e^2).
struct ErrorAccum {
  int64_t n = 0;
  double abs_sum = 0.0;
  double sq_sum = 0.0;

  void add(double err) {
    ++n;
    abs_sum += std::fabs(err);
    sq_sum += err * err;
  }

  BucketStats stats() const {
    BucketStats b;
    b.n = n;
    if (n > 0) {
      b.mae = abs_sum / static_cast<double>(n);
      b.rmse = std::sqrt(sq_sum / static_cast<double>(n));
    }
    return b;
  }
};

}  // namespace detail

inline std::optional<double> mae(const std::vector<EvalPair>& pairs) {
  detail::ErrorAccum acc;
  for (const auto& p : pairs) acc.add(p.pred_height_m - p.ref_height_m);
  return acc.stats().mae;
}

inline std::optional<double> rmse(const std::vector<EvalPair>& pairs) {
  detail::ErrorAccum acc;
  for (const auto& p : pairs) acc.add(p.pred_height_m - p.ref_height_m);
  return acc.stats().rmse;
}

/// Buckets on the reference height: strictly below the threshold vs at or
/// above it (a reference of exactly threshold_m lands in the >= bucket).
inline MetricsReport stratified_report(const std::vector<EvalPair>& pairs,
                                       const std::string& city_id = "ALL",
                                       double threshold_m = 40.0) {
  detail::ErrorAccum all, lt, ge;
  for (const auto& p : pairs) {
    double err = p.pred_height_m - p.ref_height_m;
    all.add(err);
    (p.ref_height_m < threshold_m ? lt : ge).add(err);
  }
  MetricsReport r;
  r.city_id = city_id;
  r.threshold_m = threshold_m;
  r.all = all.stats();
  r.lt = lt.stats();
  r.ge = ge.stats();
  return r;
}

namespace detail {

inline std::string fmt2(const std::optional<double>& v) {
  if (!v) return "—";  // em dash for absent metrics
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", *v);
  return buf;
}

}  // namespace detail

/// Text table, one row per report: City | MAE (all, <40, >=40) | RMSE (all,
/// <40, >=40), two decimals, absent metrics rendered as an em dash.
inline std::string format_table(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw InvalidInputError("format_table: no reports");
  size_t city_w = std::string("City").size();
  for (const auto& r : reports) city_w = std::max(city_w, r.city_id.size());
  city_w += 2;
  std::ostringstream out;
  auto pad = [&](const std::string& s, size_t w) {
    out << s;
    for (size_t i = s.size(); i < w; ++i) out << ' ';
  };
  auto cell = [&](const std::string& s) {
    // em dash is 3 bytes but 1 column; pad on display width
    size_t display = s == "—" ? 1 : s.size();
    for (size_t i = display; i < 10; ++i) out << ' ';
    out << s;
  };
  pad("City", city_w);
  for (const char* h : {"MAE all", "MAE <40", "MAE >=40", "RMSE all", "RMSE <40", "RMSE >=40"}) {
    std::string s(h);
    for (size_t i = s.size(); i < 10; ++i) out << ' ';
    out << s;
  }
  out << "\n";
  for (const auto& r : reports) {
    pad(r.city_id, city_w);
    cell(detail::fmt2(r.all.mae));
    cell(detail::fmt2(r.lt.mae));
    cell(detail::fmt2(r.ge.mae));
    cell(detail::fmt2(r.all.rmse));
    cell(detail::fmt2(r.lt.rmse));
    cell(detail::fmt2(r.ge.rmse));
    out << "\n";
  }
  return out.str();
}

/// Parsed counterpart of one format_table row.
struct ParsedTableRow {
  std::string city_id;
  std::array<std::optional<double>, 6> values;  // mae all/lt/ge, rmse all/lt/ge
};

/// Parses format_table output back into rows (the last six whitespace-
/// separated tokens are values, the rest is the city label).
inline std::vector<ParsedTableRow> parse_table(const std::string& text) {
  std::vector<ParsedTableRow> rows;
  std::istringstream lines(text);
  std::string line;
  bool header = true;
  while (std::getline(lines, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {  // first non-comment line is the header
      header = false;
      continue;
    }
    std::vector<std::string> tokens;
    std::istringstream ls(line);
    std::string tok;
    while (ls >> tok) tokens.push_back(tok);
    if (tokens.size() < 7) throw FormatError("parse_table: malformed row: " + line);
    ParsedTableRow row;
    size_t n_city = tokens.size() - 6;
    for (size_t i = 0; i < n_city; ++i) {
      if (i) row.city_id += ' ';
      row.city_id += tokens[i];
    }
    for (size_t i = 0; i < 6; ++i) {
      const std::string& t = tokens[n_city + i];
      if (t == "—") continue;
      row.values[i] = std::stod(t);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_metrics_csv(const std::vector<MetricsReport>& reports,
                              const std::filesystem::path& path,
                              const std::string& config_hash = "") {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  if (!config_hash.empty()) out << "# config_hash=" << config_hash << "\n";
  out << "city_id,n_all,mae_all,rmse_all,n_lt40,mae_lt40,rmse_lt40,n_ge40,mae_ge40,rmse_ge40\n";
  auto field = [](const std::optional<double>& v) {
    if (!v) return std::string();
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", *v);
    return std::string(buf);
  };
  for (const auto& r : reports) {
    out << r.city_id << ',' << r.all.n << ',' << field(r.all.mae) << ',' << field(r.all.rmse)
        << ',' << r.lt.n << ',' << field(r.lt.mae) << ',' << field(r.lt.rmse) << ',' << r.ge.n
        << ',' << field(r.ge.mae) << ',' << field(r.ge.rmse) << "\n";
  }
  if (!out) throw IoError("write failed: " + path.string());
}

/// Per-building scatter export: building_id, city_id, ref_height_m,
/// abs_error_m; rows ordered by (city_id, building_id).
inline void export_scatter(std::vector<EvalPair> pairs, const std::filesystem::path& path,
                           const std::string& config_hash = "") {
  std::sort(pairs.begin(), pairs.end(), [](const EvalPair& a, const EvalPair& b) {
    return std::tie(a.city_id, a.building_id) < std::tie(b.city_id, b.building_id);
  });
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  if (!config_hash.empty()) out << "# config_hash=" << config_hash << "\n";
  out << "building_id,city_id,ref_height_m,abs_error_m\n";
  char buf[96];
  for (const auto& p : pairs) {
    std::snprintf(buf, sizeof(buf), ",%.9g,%.9g\n", p.ref_height_m,
                  std::fabs(p.pred_height_m - p.ref_height_m));
    out << p.building_id << ',' << p.city_id << buf;
  }
  if (!out) throw IoError("write failed: " + path.string());
}

struct CityFootprints {
  std::string city_id;
  const std::vector<Footprint>* footprints;
};

/// Per-city reference-height histogram: city_id, bin_start_m, count, density.
/// Densities integrate to 1 per city (sum * bin_m == 1).
inline void export_height_density(const std::vector<CityFootprints>& cities, double bin_m,
                                  const std::filesystem::path& path,
                                  const std::string& config_hash = "") {
  if (!(bin_m > 0.0)) throw InvalidInputError("export_height_density: bin width must be positive");
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  if (!config_hash.empty()) out << "# config_hash=" << config_hash << "\n";
  out << "city_id,bin_start_m,count,density\n";
  char buf[96];
  for (const auto& city : cities) {
    std::map<long, int64_t> bins;
    int64_t total = 0;
    for (const Footprint& fp : *city.footprints) {
      ++bins[static_cast<long>(std::floor(fp.height_m / bin_m))];
      ++total;
    }
    for (const auto& [bin, count] : bins) {
      double density = static_cast<double>(count) / (static_cast<double>(total) * bin_m);
      std::snprintf(buf, sizeof(buf), ",%.9g,%lld,%.12g\n", bin * bin_m,
                    static_cast<long long>(count), density);
      out << city.city_id << buf;
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace sarheight

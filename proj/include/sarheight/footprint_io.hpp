#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sarheight/geometry.hpp"

namespace sarheight {

/// A footprint collection as read from disk. Buildings whose rings are
/// degenerate (collinear / zero area) are skipped and counted so the rest of
/// the pipeline can proceed and report them.
struct FootprintSet {
  std::string city;
  std::vector<Footprint> buildings;
  std::vector<std::string> skipped_ids;
  std::string config_hash;  // empty when the file carries none
};

/// Footprint collection document:
/// { "crs": "local-meters", "city": str,
///   "buildings": [ { "id": str, "polygon": [[x,y],...], "height_m": num } ] }
/// Polygons are open rings in meters; a repeated closing vertex is tolerated
/// and dropped.
inline void write_footprints(const FootprintSet& set, const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["crs"] = "local-meters";
  doc["city"] = set.city;
  if (!set.config_hash.empty()) doc["config_hash"] = set.config_hash;
  nlohmann::json buildings = nlohmann::json::array();
  for (const Footprint& fp : set.buildings) {
    nlohmann::json poly = nlohmann::json::array();
    for (const Vec2& v : fp.vertices) poly.push_back({v.x, v.y});
    buildings.push_back({{"id", fp.id}, {"polygon", poly}, {"height_m", fp.height_m}});
  }
  doc["buildings"] = std::move(buildings);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << doc.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path.string());
}

inline FootprintSet read_footprints(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("cannot open footprint file: " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("footprint file " + path.string() + ": " + e.what());
  }
  FootprintSet set;
  try {
    if (doc.value("crs", "") != "local-meters") {
      throw FormatError("footprint file " + path.string() + ": crs must be 'local-meters'");
    }
    set.city = doc.value("city", "");
    set.config_hash = doc.value("config_hash", "");
    for (const auto& b : doc.at("buildings")) {
      std::string id = b.at("id").get<std::string>();
      std::vector<Vec2> ring;
      for (const auto& v : b.at("polygon")) {
        ring.emplace_back(v.at(0).get<double>(), v.at(1).get<double>());
      }
      if (ring.size() >= 2 && ring.front() == ring.back()) ring.pop_back();
      double h = b.at("height_m").get<double>();
      try {
        set.buildings.emplace_back(std::move(id), std::move(ring), h);
      } catch (const DegenerateGeometryError&) {
        set.skipped_ids.push_back(b.at("id").get<std::string>());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("footprint file " + path.string() + ": " + e.what());
  }
  return set;
}

}  // namespace sarheight

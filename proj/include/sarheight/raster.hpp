#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sarheight/common.hpp"

namespace sarheight {

static_assert(std::endian::native == std::endian::little,
              "raster payloads are written as raw little-endian f32");

/// North-up single-band raster. Row 0 is the northernmost row; `origin` is
/// the top-left corner of pixel (0, 0) in local metric coordinates.
struct Raster {
  int width_px = 0;
  int height_px = 0;
  double pixel_size_m = 1.0;
  Vec2 origin;  // top-left corner
  std::string band;
  std::vector<float> values;  // row-major

  Raster() = default;
  Raster(int width, int height, double pixel_size, Vec2 origin_, std::string band_,
         float fill = 0.0f)
      : width_px(width),
        height_px(height),
        pixel_size_m(pixel_size),
        origin(origin_),
        band(std::move(band_)),
        values(static_cast<size_t>(width) * static_cast<size_t>(height), fill) {
    if (width_px <= 0 || height_px <= 0) throw InvalidInputError("raster dimensions must be positive");
    if (!(pixel_size_m > 0.0)) throw InvalidInputError("raster pixel size must be positive");
  }

  size_t size() const { return values.size(); }
  float& at(int row, int col) { return values[static_cast<size_t>(row) * width_px + col]; }
  float at(int row, int col) const { return values[static_cast<size_t>(row) * width_px + col]; }

  Vec2 pixel_center(int row, int col) const {
    return {origin.x + (col + 0.5) * pixel_size_m, origin.y - (row + 0.5) * pixel_size_m};
  }

  /// Row/col of the pixel containing a point; may fall outside the raster.
  std::pair<long, long> pixel_of(const Vec2& p) const {
    long col = static_cast<long>(std::floor((p.x - origin.x) / pixel_size_m));
    long row = static_cast<long>(std::floor((origin.y - p.y) / pixel_size_m));
    return {row, col};
  }

  bool in_bounds(long row, long col) const {
    return row >= 0 && row < height_px && col >= 0 && col < width_px;
  }
};

namespace detail {

/// Accepts a bare base path or one of its two component paths.
inline std::filesystem::path raster_base(const std::filesystem::path& path) {
  std::string s = path.string();
  const std::string hdr = ".hdr.json";
  if (s.size() > hdr.size() && s.compare(s.size() - hdr.size(), hdr.size(), hdr) == 0) {
    return s.substr(0, s.size() - hdr.size());
  }
  if (path.extension() == ".bin") return path.parent_path() / path.stem();
  return path;
}

}  // namespace detail

/// Writes `<base>.hdr.json` plus `<base>.bin` (width*height little-endian
/// f32, row-major, row 0 north).
inline void write_raster(const Raster& r, const std::filesystem::path& path,
                         const std::string& config_hash = "") {
  if (r.values.size() != static_cast<size_t>(r.width_px) * static_cast<size_t>(r.height_px)) {
    throw InvalidInputError("raster value count does not match dimensions");
  }
  for (float v : r.values) {
    if (!std::isfinite(v)) throw InvalidInputError("raster contains non-finite values");
  }
  std::filesystem::path base = detail::raster_base(path);
  nlohmann::json hdr;
  hdr["width"] = r.width_px;
  hdr["height"] = r.height_px;
  hdr["pixel_size_m"] = r.pixel_size_m;
  hdr["origin"] = {r.origin.x, r.origin.y};
  hdr["band"] = r.band;
  hdr["dtype"] = "f32le";
  hdr["order"] = "row-major-north-up";
  if (!config_hash.empty()) hdr["config_hash"] = config_hash;
  std::filesystem::path hdr_path = base;
  hdr_path += ".hdr.json";
  std::ofstream hout(hdr_path);
  if (!hout) throw IoError("cannot open for writing: " + hdr_path.string());
  hout << hdr.dump(2) << "\n";
  if (!hout) throw IoError("write failed: " + hdr_path.string());

  std::filesystem::path bin_path = base;
  bin_path += ".bin";
  std::ofstream bout(bin_path, std::ios::binary);
  if (!bout) throw IoError("cannot open for writing: " + bin_path.string());
  bout.write(reinterpret_cast<const char*>(r.values.data()),
             static_cast<std::streamsize>(r.values.size() * sizeof(float)));
  if (!bout) throw IoError("write failed: " + bin_path.string());
}

/// Reads a raster written by write_raster. Header/payload mismatches raise
/// FormatError naming the byte offset where the payload went wrong.
inline Raster read_raster(const std::filesystem::path& path, std::string* config_hash = nullptr) {
  std::filesystem::path base = detail::raster_base(path);
  std::filesystem::path hdr_path = base;
  hdr_path += ".hdr.json";
  std::ifstream hin(hdr_path);
  if (!hin) throw MissingInputError("cannot open raster header: " + hdr_path.string());
  nlohmann::json hdr;
  try {
    hin >> hdr;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("raster header " + hdr_path.string() + ": " + e.what());
  }
  Raster r;
  try {
    if (hdr.at("dtype").get<std::string>() != "f32le") {
      throw FormatError("raster header " + hdr_path.string() + ": unsupported dtype");
    }
    if (hdr.at("order").get<std::string>() != "row-major-north-up") {
      throw FormatError("raster header " + hdr_path.string() + ": unsupported order");
    }
    int w = hdr.at("width").get<int>();
    int h = hdr.at("height").get<int>();
    double px = hdr.at("pixel_size_m").get<double>();
    Vec2 origin{hdr.at("origin").at(0).get<double>(), hdr.at("origin").at(1).get<double>()};
    r = Raster(w, h, px, origin, hdr.value("band", ""));
    if (config_hash) *config_hash = hdr.value("config_hash", "");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("raster header " + hdr_path.string() + ": " + e.what());
  }

  std::filesystem::path bin_path = base;
  bin_path += ".bin";
  std::ifstream bin(bin_path, std::ios::binary | std::ios::ate);
  if (!bin) throw MissingInputError("cannot open raster payload: " + bin_path.string());
  auto actual = static_cast<uint64_t>(bin.tellg());
  uint64_t expected = r.size() * sizeof(float);
  if (actual != expected) {
    throw FormatError("raster payload " + bin_path.string() + ": expected " +
                      std::to_string(expected) + " bytes, found " + std::to_string(actual) +
                      " (mismatch at byte offset " + std::to_string(std::min(actual, expected)) +
                      ")");
  }
  bin.seekg(0);
  bin.read(reinterpret_cast<char*>(r.values.data()), static_cast<std::streamsize>(expected));
  if (!bin) throw IoError("read failed: " + bin_path.string());
  for (size_t i = 0; i < r.values.size(); ++i) {
    if (!std::isfinite(r.values[i])) {
      throw FormatError("raster payload " + bin_path.string() + ": non-finite value at byte offset " +
                        std::to_string(i * sizeof(float)));
    }
  }
  return r;
}

}  // namespace sarheight

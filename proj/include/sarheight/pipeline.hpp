#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "sarheight/common.hpp"
#include "sarheight/geometry.hpp"
#include "sarheight/raster.hpp"
#include "sarheight/rng.hpp"

namespace sarheight {

// ---------------------------------------------------------------------------
// Patches
// ---------------------------------------------------------------------------

/// One patch_px x patch_px window of a source raster (amplitude plus an
/// optional aligned truth window). Windows smaller than the source are padded
/// with zeros on the south/east and flagged.
struct Patch {
  int origin_row = 0;
  int origin_col = 0;
  int size_px = 0;
  bool padded = false;
  double pixel_size_m = 1.0;
  Vec2 world_origin;          // top-left corner of this patch
  std::vector<float> amp;     // size_px * size_px
  std::vector<float> truth;   // empty when tiled without a truth raster

  bool contains_px(long row, long col) const {
    return row >= 0 && row < size_px && col >= 0 && col < size_px;
  }
};

namespace detail {

inline std::vector<int> tile_positions(int dim, int patch_px, int stride) {
  std::vector<int> pos;
  if (dim <= patch_px) {
    pos.push_back(0);
    return pos;
  }
  for (int p = 0; p + patch_px <= dim; p += stride) pos.push_back(p);
  if (pos.back() + patch_px < dim) pos.push_back(dim - patch_px);
  return pos;
}

}  // namespace detail

/// Regular-grid tiling with the given fractional overlap. The stride is
/// floor(patch_px * (1 - overlap)) so adjacent regular patches overlap by at
/// least the requested fraction; a clamped final position is appended when
/// the regular grid stops short of the edge, and every source pixel lands in
/// at least one patch.
inline std::vector<Patch> tile(const Raster& amp, const Raster* truth = nullptr,
                               int patch_px = 256, double overlap = 0.2) {
  if (patch_px <= 0) throw InvalidInputError("tile: patch size must be positive");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw InvalidInputError("tile: overlap must lie in [0, 1)");
  int stride = static_cast<int>(std::floor(patch_px * (1.0 - overlap)));
  if (stride < 1) throw InvalidInputError("tile: stride underflow (overlap too large)");
  if (truth && (truth->width_px != amp.width_px || truth->height_px != amp.height_px)) {
    throw InvalidInputError("tile: truth raster dimensions differ from amplitude raster");
  }
  std::vector<int> rows = detail::tile_positions(amp.height_px, patch_px, stride);
  std::vector<int> cols = detail::tile_positions(amp.width_px, patch_px, stride);
  std::vector<Patch> out;
  out.reserve(rows.size() * cols.size());
  for (int r0 : rows) {
    for (int c0 : cols) {
      Patch p;
      p.origin_row = r0;
      p.origin_col = c0;
      p.size_px = patch_px;
      p.pixel_size_m = amp.pixel_size_m;
      p.world_origin = {amp.origin.x + c0 * amp.pixel_size_m,
                        amp.origin.y - r0 * amp.pixel_size_m};
      p.padded = (r0 + patch_px > amp.height_px) || (c0 + patch_px > amp.width_px);
      p.amp.assign(static_cast<size_t>(patch_px) * patch_px, 0.0f);
      if (truth) p.truth.assign(p.amp.size(), 0.0f);
      int copy_rows = std::min(patch_px, amp.height_px - r0);
      int copy_cols = std::min(patch_px, amp.width_px - c0);
      for (int r = 0; r < copy_rows; ++r) {
        const float* src = &amp.values[static_cast<size_t>(r0 + r) * amp.width_px + c0];
        std::copy(src, src + copy_cols, &p.amp[static_cast<size_t>(r) * patch_px]);
        if (truth) {
          const float* tsrc = &truth->values[static_cast<size_t>(r0 + r) * truth->width_px + c0];
          std::copy(tsrc, tsrc + copy_cols, &p.truth[static_cast<size_t>(r) * patch_px]);
        }
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-building samples
// ---------------------------------------------------------------------------

/// One per-building training/inference record. Chips are cut from the owning
/// patch window; the amplitude chip is median-normalized and clipped to
/// [0, 8].
struct BuildingSample {
  std::string building_id;
  std::string city_id;
  int chip_px = 0;
  std::vector<float> chip_amp;
  std::vector<float> chip_mask;
  double fbb_extent_u_m = 0.0;
  double fbb_extent_v_m = 0.0;
  double cos_theta = 0.0;
  double target_lbbb_m = 0.0;
  double ref_height_m = 0.0;
  bool truncated = false;      // footprint larger than the chip window

  // provenance used by deduplicate(); not persisted
  bool mask_complete = true;
  int mask_pixels = 0;
  Vec2 footprint_centroid;
  double footprint_area_m2 = 0.0;
  int patch_row = 0;
  int patch_col = 0;
};

/// Footprints pre-indexed for sampling: range-aligned FBB and dedup keys
/// computed once per city. Degenerate footprints are dropped and counted.
struct FootprintIndex {
  struct Item {
    const Footprint* footprint;
    OrientedRect fbb;
    Vec2 centroid;
    double area_m2;
  };
  std::vector<Item> items;
  int skipped_degenerate = 0;
  double range_az_deg = 0.0;

  static FootprintIndex build(const std::vector<Footprint>& footprints,
                              const AcquisitionGeometry& geom) {
    FootprintIndex index;
    index.range_az_deg = range_azimuth(geom);
    index.items.reserve(footprints.size());
    for (const Footprint& fp : footprints) {
      try {
        OrientedRect fbb = heading_aligned_bbox(fp, index.range_az_deg);
        index.items.push_back({&fp, fbb, fp.centroid(), fp.area()});
      } catch (const DegenerateGeometryError&) {
        ++index.skipped_degenerate;
      }
    }
    return index;
  }
};

struct ExtractOptions {
  int chip_px = 128;
  LayoverFactor projection = LayoverFactor::cos_theta;
  std::string city_id;
};

struct ExtractStats {
  int emitted = 0;
  int skipped_empty_mask = 0;
};

namespace detail {

/// Rasterization count of a polygon over the unrestricted pixel lattice
/// anchored at `lattice_origin` (top-left of pixel (0,0)).
inline int full_raster_count(const std::vector<Vec2>& poly, const Vec2& lattice_origin,
                             double px) {
  double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
  for (const Vec2& v : poly) {
    min_x = std::min(min_x, v.x);
    max_x = std::max(max_x, v.x);
    min_y = std::min(min_y, v.y);
    max_y = std::max(max_y, v.y);
  }
  long row0 = static_cast<long>(std::floor((lattice_origin.y - max_y) / px));
  long row1 = static_cast<long>(std::floor((lattice_origin.y - min_y) / px)) + 1;
  long col0 = static_cast<long>(std::floor((min_x - lattice_origin.x) / px));
  long col1 = static_cast<long>(std::floor((max_x - lattice_origin.x) / px)) + 1;
  int count = 0;
  for (long r = row0; r <= row1; ++r) {
    for (long c = col0; c <= col1; ++c) {
      Vec2 center{lattice_origin.x + (c + 0.5) * px, lattice_origin.y - (r + 0.5) * px};
      if (point_in_polygon(center, poly)) ++count;
    }
  }
  return count;
}

}  // namespace detail

/// Emits one sample per footprint whose FBB center pixel falls inside the
/// patch. Chip windows are centered on that pixel; mask pixels outside the
/// patch are clipped (making dedup's completeness tie-break meaningful).
/// Samples whose mask rasterizes to zero pixels are skipped and counted.
inline std::vector<BuildingSample> extract_samples(const Patch& patch,
                                                   const FootprintIndex& index,
                                                   const AcquisitionGeometry& geom,
                                                   const ExtractOptions& opts = {},
                                                   ExtractStats* stats = nullptr) {
  if (opts.chip_px <= 0) throw InvalidInputError("extract_samples: chip size must be positive");
  std::vector<BuildingSample> out;
  const double px = patch.pixel_size_m;
  for (const auto& item : index.items) {
    Vec2 center = item.fbb.center;
    long prow = static_cast<long>(std::floor((patch.world_origin.y - center.y) / px));
    long pcol = static_cast<long>(std::floor((center.x - patch.world_origin.x) / px));
    if (!patch.contains_px(prow, pcol)) continue;

    const int S = opts.chip_px;
    long row0 = prow - S / 2;
    long col0 = pcol - S / 2;
    BuildingSample s;
    s.building_id = item.footprint->id;
    s.city_id = opts.city_id;
    s.chip_px = S;
    s.chip_amp.assign(static_cast<size_t>(S) * S, 0.0f);
    s.chip_mask.assign(s.chip_amp.size(), 0.0f);

    Vec2 chip_origin{patch.world_origin.x + col0 * px, patch.world_origin.y - row0 * px};
    std::vector<float> valid;
    valid.reserve(s.chip_amp.size());
    int mask_count = 0;
    for (int r = 0; r < S; ++r) {
      for (int c = 0; c < S; ++c) {
        long sr = row0 + r;
        long sc = col0 + c;
        if (!patch.contains_px(sr, sc)) continue;
        size_t ci = static_cast<size_t>(r) * S + c;
        float a = patch.amp[static_cast<size_t>(sr) * patch.size_px + sc];
        s.chip_amp[ci] = a;
        valid.push_back(a);
        Vec2 pc{chip_origin.x + (c + 0.5) * px, chip_origin.y - (r + 0.5) * px};
        if (point_in_polygon(pc, item.footprint->vertices)) {
          s.chip_mask[ci] = 1.0f;
          ++mask_count;
        }
      }
    }
    if (mask_count == 0) {
      if (stats) ++stats->skipped_empty_mask;
      continue;
    }

    // per-chip normalization: divide by the median of in-patch pixels, clip [0, 8]
    std::nth_element(valid.begin(), valid.begin() + valid.size() / 2, valid.end());
    double med = valid[valid.size() / 2];
    if (!(med > 1e-12)) med = 1.0;
    for (int r = 0; r < S; ++r) {
      for (int c = 0; c < S; ++c) {
        size_t ci = static_cast<size_t>(r) * S + c;
        s.chip_amp[ci] = static_cast<float>(
            std::clamp(static_cast<double>(s.chip_amp[ci]) / med, 0.0, 8.0));
      }
    }

    int full_count =
        detail::full_raster_count(item.footprint->vertices, patch.world_origin, px);
    s.mask_pixels = mask_count;
    s.mask_complete = (mask_count == full_count);
    double fp_min_x = 1e300, fp_max_x = -1e300, fp_min_y = 1e300, fp_max_y = -1e300;
    for (const Vec2& v : item.footprint->vertices) {
      fp_min_x = std::min(fp_min_x, v.x);
      fp_max_x = std::max(fp_max_x, v.x);
      fp_min_y = std::min(fp_min_y, v.y);
      fp_max_y = std::max(fp_max_y, v.y);
    }
    s.truncated = fp_min_x < chip_origin.x || fp_max_x > chip_origin.x + S * px ||
                  fp_max_y > chip_origin.y || fp_min_y < chip_origin.y - S * px;

    s.fbb_extent_u_m = item.fbb.extent_u_m;
    s.fbb_extent_v_m = item.fbb.extent_v_m;
    s.cos_theta = geom.cos_incidence();
    s.target_lbbb_m =
        project_bbb(item.fbb, item.footprint->height_m, geom, opts.projection).extent_u_m;
    s.ref_height_m = item.footprint->height_m;
    s.footprint_centroid = item.centroid;
    s.footprint_area_m2 = item.area_m2;
    s.patch_row = patch.origin_row;
    s.patch_col = patch.origin_col;
    out.push_back(std::move(s));
    if (stats) ++stats->emitted;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Deduplication, subsampling, splits
// ---------------------------------------------------------------------------

/// Removes duplicate per-building samples produced by overlapping patches.
/// Key: (city, centroid quantized to 0.5 m, footprint area quantized to
/// 0.5 m^2). Among duplicates, a complete (unclipped) mask wins, then the
/// largest mask pixel count, then the lexicographically smallest patch
/// origin. Output order is stable by (city_id, building_id).
inline std::vector<BuildingSample> deduplicate(std::vector<BuildingSample> samples) {
  struct Key {
    std::string city;
    long long qx, qy, qa;
    bool operator<(const Key& o) const {
      return std::tie(city, qx, qy, qa) < std::tie(o.city, o.qx, o.qy, o.qa);
    }
  };
  auto better = [](const BuildingSample& a, const BuildingSample& b) {
    if (a.mask_complete != b.mask_complete) return a.mask_complete;
    if (a.mask_pixels != b.mask_pixels) return a.mask_pixels > b.mask_pixels;
    return std::tie(a.patch_row, a.patch_col) < std::tie(b.patch_row, b.patch_col);
  };
  std::map<Key, size_t> best;
  for (size_t i = 0; i < samples.size(); ++i) {
    const BuildingSample& s = samples[i];
    Key k{s.city_id, std::llround(s.footprint_centroid.x / 0.5),
          std::llround(s.footprint_centroid.y / 0.5), std::llround(s.footprint_area_m2 / 0.5)};
    auto [it, inserted] = best.emplace(k, i);
    if (!inserted && better(samples[i], samples[it->second])) it->second = i;
  }
  std::vector<size_t> keep;
  keep.reserve(best.size());
  for (const auto& [k, i] : best) keep.push_back(i);
  std::sort(keep.begin(), keep.end(), [&](size_t a, size_t b) {
    return std::tie(samples[a].city_id, samples[a].building_id) <
           std::tie(samples[b].city_id, samples[b].building_id);
  });
  std::vector<BuildingSample> out;
  out.reserve(keep.size());
  for (size_t i : keep) out.push_back(std::move(samples[i]));
  return out;
}

struct SubsampleOptions {
  bool stratified = false;   // stratify by reference height
  double stratum_m = 10.0;
};

namespace detail {

inline std::vector<size_t> pick_without_replacement(std::vector<size_t> pool, size_t n, Rng rng) {
  rng.shuffle(pool);
  pool.resize(std::min(n, pool.size()));
  return pool;
}

}  // namespace detail

/// Uniform random subset of at most `n` samples per city, seeded and
/// deterministic; cities at or under the cap keep everything. The stratified
/// option allocates the cap across height bins by largest remainder.
inline std::vector<BuildingSample> subsample_city(std::vector<BuildingSample> samples,
                                                  size_t n = 20000, uint64_t seed = 0,
                                                  const SubsampleOptions& opts = {}) {
  std::map<std::string, std::vector<size_t>> by_city;
  for (size_t i = 0; i < samples.size(); ++i) by_city[samples[i].city_id].push_back(i);
  std::vector<char> selected(samples.size(), 0);
  for (auto& [city, idx] : by_city) {
    if (idx.size() <= n) {
      for (size_t i : idx) selected[i] = 1;
      continue;
    }
    Rng rng = derive(seed, stream_tag(city));
    if (!opts.stratified) {
      for (size_t i : detail::pick_without_replacement(idx, n, rng)) selected[i] = 1;
      continue;
    }
    // proportional allocation over height strata, largest remainder
    std::map<long, std::vector<size_t>> strata;
    for (size_t i : idx) {
      strata[static_cast<long>(std::floor(samples[i].ref_height_m / opts.stratum_m))].push_back(i);
    }
    std::vector<std::pair<double, long>> remainders;
    std::map<long, size_t> quota;
    size_t assigned = 0;
    for (const auto& [bin, members] : strata) {
      double exact = static_cast<double>(n) * members.size() / idx.size();
      size_t q = std::min(members.size(), static_cast<size_t>(std::floor(exact)));
      quota[bin] = q;
      assigned += q;
      if (q < members.size()) remainders.push_back({exact - std::floor(exact), bin});
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
      return a.first > b.first || (a.first == b.first && a.second < b.second);
    });
    for (const auto& [frac, bin] : remainders) {
      if (assigned >= n) break;
      if (quota[bin] < strata[bin].size()) {
        ++quota[bin];
        ++assigned;
      }
    }
    for (auto& [bin, members] : strata) {
      Rng srng = rng.substream(static_cast<uint64_t>(bin) * 2654435761u + 17);
      for (size_t i : detail::pick_without_replacement(members, quota[bin], srng)) selected[i] = 1;
    }
  }
  std::vector<BuildingSample> out;
  out.reserve(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    if (selected[i]) out.push_back(std::move(samples[i]));
  }
  return out;
}

/// Leave-one-city-out split: test = the held-out city, train = the rest.
inline std::pair<std::vector<BuildingSample>, std::vector<BuildingSample>> split_loco(
    std::vector<BuildingSample> samples, const std::string& held_out_city) {
  bool found = false;
  for (const auto& s : samples) {
    if (s.city_id == held_out_city) {
      found = true;
      break;
    }
  }
  if (!found) {
    throw InvalidInputError("split_loco: no samples for held-out city '" + held_out_city + "'");
  }
  std::vector<BuildingSample> train, test;
  for (auto& s : samples) {
    (s.city_id == held_out_city ? test : train).push_back(std::move(s));
  }
  return {std::move(train), std::move(test)};
}

/// Seeded shuffle, then split at round(train_frac * n).
inline std::pair<std::vector<BuildingSample>, std::vector<BuildingSample>> split_ratio(
    std::vector<BuildingSample> samples, double train_frac = 0.7, uint64_t seed = 0) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) {
    throw InvalidInputError("split_ratio: train fraction must lie in (0, 1)");
  }
  Rng rng = derive(seed, stream_tag("ratio-split"));
  rng.shuffle(samples);
  size_t n_train = static_cast<size_t>(std::llround(train_frac * samples.size()));
  n_train = std::min(n_train, samples.size());
  std::vector<BuildingSample> train(std::make_move_iterator(samples.begin()),
                                    std::make_move_iterator(samples.begin() + n_train));
  std::vector<BuildingSample> test(std::make_move_iterator(samples.begin() + n_train),
                                   std::make_move_iterator(samples.end()));
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Sample-set files
// ---------------------------------------------------------------------------

/// Writes `<base>.json` (manifest) plus `<base>.bin` with each sample's
/// amplitude chip followed by its mask chip, f32 little-endian row-major.
/// chip_offset is the float-element offset of the sample's block.
inline void write_sample_set(const std::vector<BuildingSample>& samples,
                             const std::filesystem::path& base, const std::string& city_id,
                             int chip_px, const std::string& config_hash = "") {
  nlohmann::json manifest;
  manifest["city_id"] = city_id;
  manifest["chip_px"] = chip_px;
  if (!config_hash.empty()) manifest["config_hash"] = config_hash;
  nlohmann::json entries = nlohmann::json::array();

  std::filesystem::path bin_path = base;
  bin_path += ".bin";
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError("cannot open for writing: " + bin_path.string());
  uint64_t offset = 0;
  const size_t chip_len = static_cast<size_t>(chip_px) * chip_px;
  for (const BuildingSample& s : samples) {
    if (s.city_id != city_id) {
      throw InvalidInputError("write_sample_set: sample city '" + s.city_id +
                              "' does not match file city '" + city_id + "'");
    }
    if (s.chip_amp.size() != chip_len || s.chip_mask.size() != chip_len) {
      throw InvalidInputError("write_sample_set: chip size mismatch for '" + s.building_id + "'");
    }
    entries.push_back({{"building_id", s.building_id},
                       {"fbb_extent_u_m", s.fbb_extent_u_m},
                       {"fbb_extent_v_m", s.fbb_extent_v_m},
                       {"cos_theta", s.cos_theta},
                       {"target_lbbb_m", s.target_lbbb_m},
                       {"ref_height_m", s.ref_height_m},
                       {"truncated", s.truncated},
                       {"chip_offset", offset}});
    bin.write(reinterpret_cast<const char*>(s.chip_amp.data()),
              static_cast<std::streamsize>(chip_len * sizeof(float)));
    bin.write(reinterpret_cast<const char*>(s.chip_mask.data()),
              static_cast<std::streamsize>(chip_len * sizeof(float)));
    offset += 2 * chip_len;
  }
  if (!bin) throw IoError("write failed: " + bin_path.string());
  manifest["samples"] = std::move(entries);

  std::filesystem::path json_path = base;
  json_path += ".json";
  std::ofstream out(json_path);
  if (!out) throw IoError("cannot open for writing: " + json_path.string());
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + json_path.string());
}

struct SampleSet {
  std::string city_id;
  int chip_px = 0;
  std::string config_hash;
  std::vector<BuildingSample> samples;
};

inline SampleSet read_sample_set(const std::filesystem::path& base) {
  std::filesystem::path json_path = base;
  json_path += ".json";
  std::ifstream in(json_path);
  if (!in) throw MissingInputError("cannot open sample manifest: " + json_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("sample manifest " + json_path.string() + ": " + e.what());
  }
  std::filesystem::path bin_path = base;
  bin_path += ".bin";
  std::ifstream bin(bin_path, std::ios::binary | std::ios::ate);
  if (!bin) throw MissingInputError("cannot open sample payload: " + bin_path.string());
  uint64_t bin_size = static_cast<uint64_t>(bin.tellg());
  bin.seekg(0);

  SampleSet set;
  try {
    set.city_id = manifest.at("city_id").get<std::string>();
    set.chip_px = manifest.at("chip_px").get<int>();
    set.config_hash = manifest.value("config_hash", "");
    const size_t chip_len = static_cast<size_t>(set.chip_px) * set.chip_px;
    for (const auto& e : manifest.at("samples")) {
      BuildingSample s;
      s.building_id = e.at("building_id").get<std::string>();
      s.city_id = set.city_id;
      s.chip_px = set.chip_px;
      s.fbb_extent_u_m = e.at("fbb_extent_u_m").get<double>();
      s.fbb_extent_v_m = e.at("fbb_extent_v_m").get<double>();
      s.cos_theta = e.at("cos_theta").get<double>();
      s.target_lbbb_m = e.at("target_lbbb_m").get<double>();
      s.ref_height_m = e.at("ref_height_m").get<double>();
      s.truncated = e.value("truncated", false);
      uint64_t offset = e.at("chip_offset").get<uint64_t>();
      uint64_t need = (offset + 2 * chip_len) * sizeof(float);
      if (need > bin_size) {
        throw FormatError("sample payload " + bin_path.string() + ": expected at least " +
                          std::to_string(need) + " bytes, found " + std::to_string(bin_size));
      }
      s.chip_amp.resize(chip_len);
      s.chip_mask.resize(chip_len);
      bin.seekg(static_cast<std::streamoff>(offset * sizeof(float)));
      bin.read(reinterpret_cast<char*>(s.chip_amp.data()),
               static_cast<std::streamsize>(chip_len * sizeof(float)));
      bin.read(reinterpret_cast<char*>(s.chip_mask.data()),
               static_cast<std::streamsize>(chip_len * sizeof(float)));
      if (!bin) throw IoError("read failed: " + bin_path.string());
      s.mask_pixels = static_cast<int>(std::count(s.chip_mask.begin(), s.chip_mask.end(), 1.0f));
      set.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("sample manifest " + json_path.string() + ": " + e.what());
  }
  return set;
}

}  // namespace sarheight

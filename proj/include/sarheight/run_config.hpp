#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sarheight/common.hpp"
#include "sarheight/digest.hpp"
#include "sarheight/regressor.hpp"
#include "sarheight/rng.hpp"
#include "sarheight/scene_sim.hpp"

namespace sarheight {

struct CityConfig {
  std::string name;
  SceneSpec scene;
};

struct SplitConfig {
  enum class Mode { loco, ratio };
  Mode mode = Mode::ratio;
  std::string held_out_city;
  double train_frac = 0.7;
};

struct PipelineConfig {
  int patch_px = 256;
  double overlap = 0.2;
  int chip_px = 128;
  int64_t subsample_n = 20000;
  bool subsample_stratified = false;
};

/// One reproducible run: synthetic cities, acquisition geometry, pipeline
/// parameters, model, training, and split mode. (config, seed) fixes every
/// artifact byte in single-threaded mode.
struct RunConfig {
  uint64_t seed = 0;
  LayoverFactor projection = LayoverFactor::cos_theta;
  std::vector<CityConfig> cities;
  PipelineConfig pipeline;
  ModelConfig model;
  TrainHyper training;
  SplitConfig split;
  std::string out_dir = "out";
  std::string config_hash;  // digest of the effective config, out_dir excluded

  uint64_t derived_seed(const char* stream) const { return mix64(seed ^ stream_tag(stream)); }
};

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& j, const char* key,
                                     const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(where + ": missing required key '" + key + "'");
  return *it;
}

inline AcquisitionGeometry parse_geometry(const nlohmann::json& j, const std::string& where) {
  std::string pass = require(j, "pass", where).get<std::string>();
  std::string look = require(j, "look_side", where).get<std::string>();
  if (pass != "ascending" && pass != "descending") {
    throw ConfigError(where + ": pass must be 'ascending' or 'descending'");
  }
  if (look != "left" && look != "right") {
    throw ConfigError(where + ": look_side must be 'left' or 'right'");
  }
  std::optional<double> override_deg;
  if (j.contains("heading_override_deg")) override_deg = j.at("heading_override_deg").get<double>();
  try {
    return AcquisitionGeometry(
        require(j, "incidence_deg", where).get<double>(),
        require(j, "orbit_inclination_deg", where).get<double>(),
        pass == "ascending" ? OrbitPass::ascending : OrbitPass::descending,
        look == "left" ? LookSide::left : LookSide::right,
        require(j, "latitude_deg", where).get<double>(), override_deg);
  } catch (const InvalidInputError& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline SceneSpec parse_scene(const nlohmann::json& city, const std::string& where,
                             uint64_t default_seed) {
  const nlohmann::json& s = require(city, "scene", where);
  SceneSpec spec(parse_geometry(require(city, "geometry", where), where + ".geometry"));
  spec.seed = s.value("seed", default_seed);
  const auto& extent = require(s, "extent_m", where + ".scene");
  spec.extent_w_m = extent.at(0).get<double>();
  spec.extent_h_m = extent.at(1).get<double>();
  spec.pixel_size_m = s.value("pixel_size_m", 2.5);
  spec.n_buildings = require(s, "n_buildings", where + ".scene").get<int>();
  const auto& sides = require(s, "footprint_side_range_m", where + ".scene");
  spec.side_min_m = sides.at(0).get<double>();
  spec.side_max_m = sides.at(1).get<double>();
  const auto& hd = require(s, "height_distribution", where + ".scene");
  if (hd.contains("lognormal")) {
    spec.height_dist =
        HeightDistribution::make_lognormal(hd.at("lognormal").at(0), hd.at("lognormal").at(1));
  } else if (hd.contains("uniform")) {
    spec.height_dist =
        HeightDistribution::make_uniform(hd.at("uniform").at(0), hd.at("uniform").at(1));
  } else {
    throw ConfigError(where + ".scene: height_distribution must be lognormal or uniform");
  }
  spec.min_spacing_m = s.value("min_spacing_m", 5.0);
  spec.background_amp = s.value("background_amp", 1.0);
  spec.roof_amp = s.value("roof_amp", 3.0);
  spec.layover_amp = s.value("layover_amp", 6.0);
  spec.shadow_amp = s.value("shadow_amp", 0.05);
  std::string speckle = s.value("speckle", "single_look");
  if (speckle == "off") {
    spec.speckle = SpeckleMode::off;
  } else if (speckle == "single_look") {
    spec.speckle = SpeckleMode::single_look;
  } else {
    throw ConfigError(where + ".scene: speckle must be 'off' or 'single_look'");
  }
  spec.random_orientation = s.value("random_orientation", false);
  return spec;
}

/// Applies one `--set path.to.key=value` override; the value is parsed as
/// JSON when possible, else taken as a string.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("--set expects key.path=value, got '" + assignment + "'");
  }
  std::string path = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);
  std::string pointer = "/";
  for (char c : path) pointer += (c == '.') ? '/' : c;
  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(value);
  } catch (const nlohmann::json::exception&) {
    parsed = value;  // plain string
  }
  try {
    j[nlohmann::json::json_pointer(pointer)] = parsed;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("--set " + assignment + ": " + e.what());
  }
}

}  // namespace detail

/// Digest of the effective config document with out_dir excluded, so moving
/// outputs does not invalidate artifacts.
inline std::string config_digest(nlohmann::json doc) {
  doc.erase("out_dir");
  return sha256_hex(doc.dump());
}

/// Builds a RunConfig from a parsed JSON document (already including any
/// overrides).
inline RunConfig run_config_from_json(const nlohmann::json& doc) {
  RunConfig cfg;
  try {
    cfg.seed = doc.value("seed", 0ULL);
    std::string factor = doc.value("projection_factor", "cos");
    if (factor == "cos") {
      cfg.projection = LayoverFactor::cos_theta;
    } else if (factor == "cot") {
      cfg.projection = LayoverFactor::cot_theta;
    } else {
      throw ConfigError("projection_factor must be 'cos' or 'cot'");
    }
    cfg.out_dir = doc.value("out_dir", "out");

    const auto& cities = detail::require(doc, "cities", "config");
    std::set<std::string> names;
    for (size_t i = 0; i < cities.size(); ++i) {
      const auto& c = cities[i];
      std::string where = "cities[" + std::to_string(i) + "]";
      CityConfig city{detail::require(c, "name", where).get<std::string>(),
                      detail::parse_scene(c, where,
                                          mix64(cfg.seed ^ stream_tag(
                                                    c.value("name", std::to_string(i)))))};
      city.scene.projection = cfg.projection;
      if (!names.insert(city.name).second) {
        throw ConfigError("duplicate city name '" + city.name + "'");
      }
      cfg.cities.push_back(std::move(city));
    }
    if (cfg.cities.empty()) throw ConfigError("config needs at least one city");

    if (doc.contains("pipeline")) {
      const auto& p = doc.at("pipeline");
      cfg.pipeline.patch_px = p.value("patch_px", 256);
      cfg.pipeline.overlap = p.value("overlap", 0.2);
      cfg.pipeline.chip_px = p.value("chip_px", 128);
      cfg.pipeline.subsample_n = p.value("subsample_n", static_cast<int64_t>(20000));
      cfg.pipeline.subsample_stratified = p.value("subsample_stratified", false);
    }
    if (cfg.pipeline.patch_px <= 0 || cfg.pipeline.chip_px <= 0) {
      throw ConfigError("pipeline patch_px and chip_px must be positive");
    }
    if (!(cfg.pipeline.overlap >= 0.0 && cfg.pipeline.overlap < 1.0)) {
      throw ConfigError("pipeline overlap must lie in [0, 1)");
    }
    if (cfg.pipeline.subsample_n <= 0) throw ConfigError("pipeline subsample_n must be positive");

    cfg.model.chip_px = cfg.pipeline.chip_px;
    cfg.model.seed = cfg.derived_seed("model");
    if (doc.contains("model")) {
      const auto& m = doc.at("model");
      if (m.contains("conv_layers")) {
        cfg.model.conv_layers.clear();
        for (const auto& c : m.at("conv_layers")) {
          cfg.model.conv_layers.push_back(
              {c.at(0).get<int>(), c.at(1).get<int>(), c.at(2).get<int>()});
        }
      }
      if (m.contains("fc_widths")) cfg.model.fc_widths = m.at("fc_widths").get<std::vector<int>>();
      if (m.contains("seed")) cfg.model.seed = m.at("seed").get<uint64_t>();
      if (m.contains("chip_px") && m.at("chip_px").get<int>() != cfg.pipeline.chip_px) {
        throw ConfigError("model.chip_px must match pipeline.chip_px");
      }
    }
    ModelLayout::build(cfg.model);  // validate early

    cfg.training.seed = cfg.derived_seed("training");
    if (doc.contains("training")) {
      const auto& t = doc.at("training");
      cfg.training.lr = t.value("lr", 1e-3);
      cfg.training.batch = t.value("batch", 32);
      cfg.training.beta1 = t.value("beta1", 0.9);
      cfg.training.beta2 = t.value("beta2", 0.999);
      cfg.training.epochs = t.value("epochs", 1);
      if (t.contains("seed")) cfg.training.seed = t.at("seed").get<uint64_t>();
    }
    if (cfg.training.batch <= 0 || cfg.training.epochs <= 0) {
      throw ConfigError("training batch and epochs must be positive");
    }

    const auto& sp = detail::require(doc, "split", "config");
    std::string mode = detail::require(sp, "mode", "split").get<std::string>();
    if (mode == "loco") {
      cfg.split.mode = SplitConfig::Mode::loco;
      cfg.split.held_out_city = detail::require(sp, "held_out_city", "split").get<std::string>();
      bool known = false;
      for (const auto& c : cfg.cities) known |= (c.name == cfg.split.held_out_city);
      if (!known) {
        throw ConfigError("split.held_out_city '" + cfg.split.held_out_city +
                          "' is not a configured city");
      }
    } else if (mode == "ratio") {
      cfg.split.mode = SplitConfig::Mode::ratio;
      cfg.split.train_frac = sp.value("train_frac", 0.7);
      if (!(cfg.split.train_frac > 0.0 && cfg.split.train_frac < 1.0)) {
        throw ConfigError("split.train_frac must lie in (0, 1)");
      }
    } else {
      throw ConfigError("split.mode must be 'loco' or 'ratio'");
    }

    for (auto& c : cfg.cities) c.scene.validate();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const InvalidInputError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.config_hash = config_digest(doc);
  return cfg;
}

/// Loads a config file, applies SARHEIGHT_SEED and --set overrides (in that
/// order), resolves the out_dir override, and computes the content digest.
inline RunConfig load_run_config(const std::filesystem::path& path,
                                 const std::vector<std::string>& overrides = {},
                                 const std::string& out_dir_override = "") {
  std::ifstream in(path);
  if (!in) throw MissingInputError("cannot open config: " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  if (const char* env_seed = std::getenv("SARHEIGHT_SEED")) {
    try {
      doc["seed"] = static_cast<uint64_t>(std::stoull(env_seed));
    } catch (const std::exception&) {
      throw ConfigError(std::string("SARHEIGHT_SEED is not an unsigned integer: ") + env_seed);
    }
  }
  for (const std::string& o : overrides) detail::apply_override(doc, o);
  if (!out_dir_override.empty()) doc["out_dir"] = out_dir_override;
  return run_config_from_json(doc);
}

}  // namespace sarheight

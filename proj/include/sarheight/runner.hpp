#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sarheight/footprint_io.hpp"
#include "sarheight/parallel.hpp"
#include "sarheight/metrics.hpp"
#include "sarheight/pipeline.hpp"
#include "sarheight/raster.hpp"
#include "sarheight/regressor.hpp"
#include "sarheight/run_config.hpp"
#include "sarheight/scene_sim.hpp"

namespace sarheight {

/// Artifact layout under the run's output directory.
struct RunPaths {
  std::filesystem::path root;

  static RunPaths at(const std::string& out_dir) { return RunPaths{out_dir}; }

  std::filesystem::path cities() const { return root / "cities"; }
  std::filesystem::path dataset() const { return root / "dataset"; }
  std::filesystem::path model() const { return root / "model"; }
  std::filesystem::path predict() const { return root / "predict"; }
  std::filesystem::path eval() const { return root / "eval"; }
  std::filesystem::path report() const { return root / "report"; }

  std::filesystem::path footprints(const std::string& city) const {
    return cities() / (city + ".footprints.json");
  }
  std::filesystem::path amplitude(const std::string& city) const {
    return cities() / (city + ".amp");
  }
  std::filesystem::path truth(const std::string& city) const {
    return cities() / (city + ".truth");
  }
  std::filesystem::path samples(const std::string& city) const {
    return dataset() / (city + ".samples");
  }
  std::filesystem::path checkpoint() const { return model() / "checkpoint"; }
  std::filesystem::path loss_csv() const { return model() / "loss.csv"; }
  std::filesystem::path split_json() const { return model() / "split.json"; }
  std::filesystem::path predictions() const { return predict() / "predictions.csv"; }
  std::filesystem::path pred_raster(const std::string& city) const {
    return predict() / (city + ".predheight");
  }
};

namespace detail {

inline void check_stage_hash(const std::string& found, const RunConfig& cfg,
                             const std::string& what) {
  if (found != cfg.config_hash) {
    throw StaleArtifactError(what + " was produced by config " +
                             (found.empty() ? "<unhashed>" : found.substr(0, 12)) +
                             ", current config is " + cfg.config_hash.substr(0, 12) +
                             "; re-run the earlier stages");
  }
}

inline const CityConfig& city_config(const RunConfig& cfg, const std::string& name) {
  for (const auto& c : cfg.cities) {
    if (c.name == name) return c;
  }
  throw ConfigError("unknown city '" + name + "'");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

inline void run_simulate(const RunConfig& cfg, int threads = 1) {
  RunPaths paths = RunPaths::at(cfg.out_dir);
  std::filesystem::create_directories(paths.cities());
  for (const auto& city : cfg.cities) {
    std::vector<Footprint> buildings = generate_city(city.scene);
    FootprintSet set;
    set.city = city.name;
    set.buildings = std::move(buildings);
    set.config_hash = cfg.config_hash;
    write_footprints(set, paths.footprints(city.name));
    Raster amp = render_amplitude(set.buildings, city.scene, threads);
    write_raster(amp, paths.amplitude(city.name), cfg.config_hash);
    Raster truth = render_height_truth(set.buildings, city.scene, threads);
    write_raster(truth, paths.truth(city.name), cfg.config_hash);
    std::cout << "simulate: " << city.name << ": " << set.buildings.size() << " buildings, "
              << amp.width_px << "x" << amp.height_px << " px\n";
  }
}

// ---------------------------------------------------------------------------
// build-dataset
// ---------------------------------------------------------------------------

inline void run_build_dataset(const RunConfig& cfg, int threads = 1) {
  RunPaths paths = RunPaths::at(cfg.out_dir);
  std::filesystem::create_directories(paths.dataset());
  for (const auto& city : cfg.cities) {
    FootprintSet fps = read_footprints(paths.footprints(city.name));
    detail::check_stage_hash(fps.config_hash, cfg, "footprints of " + city.name);
    std::string amp_hash;
    Raster amp = read_raster(paths.amplitude(city.name), &amp_hash);
    detail::check_stage_hash(amp_hash, cfg, "amplitude raster of " + city.name);

    FootprintIndex index = FootprintIndex::build(fps.buildings, city.scene.geom);
    std::vector<Patch> patches = tile(amp, nullptr, cfg.pipeline.patch_px, cfg.pipeline.overlap);
    ExtractOptions opts;
    opts.chip_px = cfg.pipeline.chip_px;
    opts.projection = cfg.projection;
    opts.city_id = city.name;
    // per-patch extraction is pure; concatenation stays in patch order
    std::vector<std::vector<BuildingSample>> per_patch(patches.size());
    std::vector<ExtractStats> per_stats(patches.size());
    parallel_for(patches.size(), threads, [&](size_t i) {
      per_patch[i] = extract_samples(patches[i], index, city.scene.geom, opts, &per_stats[i]);
    });
    ExtractStats stats;
    std::vector<BuildingSample> samples;
    for (size_t i = 0; i < patches.size(); ++i) {
      stats.emitted += per_stats[i].emitted;
      stats.skipped_empty_mask += per_stats[i].skipped_empty_mask;
      samples.insert(samples.end(), std::make_move_iterator(per_patch[i].begin()),
                     std::make_move_iterator(per_patch[i].end()));
    }
    size_t raw = samples.size();
    samples = deduplicate(std::move(samples));
    size_t unique = samples.size();
    SubsampleOptions sopts;
    sopts.stratified = cfg.pipeline.subsample_stratified;
    samples = subsample_city(std::move(samples), static_cast<size_t>(cfg.pipeline.subsample_n),
                             cfg.derived_seed("subsample"), sopts);
    write_sample_set(samples, paths.samples(city.name), city.name, cfg.pipeline.chip_px,
                     cfg.config_hash);
    std::cout << "build-dataset: " << city.name << ": " << patches.size() << " patches, " << raw
              << " raw samples, " << unique << " unique, " << samples.size() << " kept";
    int skipped = static_cast<int>(fps.skipped_ids.size()) + index.skipped_degenerate;
    if (skipped > 0) std::cout << ", " << skipped << " degenerate skipped";
    if (stats.skipped_empty_mask > 0) {
      std::cout << ", " << stats.skipped_empty_mask << " empty-mask skipped";
    }
    std::cout << "\n";
  }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<BuildingSample> load_city_samples(const RunConfig& cfg,
                                                     const std::string& city) {
  RunPaths paths = RunPaths::at(cfg.out_dir);
  SampleSet set = read_sample_set(paths.samples(city));
  check_stage_hash(set.config_hash, cfg, "sample set of " + city);
  if (set.chip_px != cfg.pipeline.chip_px) {
    throw StaleArtifactError("sample set of " + city + " has chip_px " +
                             std::to_string(set.chip_px) + ", config expects " +
                             std::to_string(cfg.pipeline.chip_px));
  }
  return std::move(set.samples);
}

struct SplitOutcome {
  std::vector<BuildingSample> train;
  std::vector<BuildingSample> test;
};

inline SplitOutcome make_split(const RunConfig& cfg) {
  SplitOutcome out;
  if (cfg.split.mode == SplitConfig::Mode::loco) {
    for (const auto& city : cfg.cities) {
      auto samples = load_city_samples(cfg, city.name);
      auto& dest = (city.name == cfg.split.held_out_city) ? out.test : out.train;
      dest.insert(dest.end(), std::make_move_iterator(samples.begin()),
                  std::make_move_iterator(samples.end()));
    }
    return out;
  }
  std::vector<BuildingSample> pool;
  for (const auto& city : cfg.cities) {
    auto samples = load_city_samples(cfg, city.name);
    pool.insert(pool.end(), std::make_move_iterator(samples.begin()),
                std::make_move_iterator(samples.end()));
  }
  auto [train, test] = split_ratio(std::move(pool), cfg.split.train_frac,
                                   cfg.derived_seed("ratio-split"));
  out.train = std::move(train);
  out.test = std::move(test);
  return out;
}

}  // namespace detail

inline void run_train(const RunConfig& cfg, int threads = 1) {
  RunPaths paths = RunPaths::at(cfg.out_dir);
  std::filesystem::create_directories(paths.model());
  detail::SplitOutcome split = detail::make_split(cfg);
  if (split.train.empty()) throw InvalidInputError("train: the training split is empty");

  TrainState state = init_model(cfg.model);
  TrainHyper hyper = cfg.training;
  hyper.threads = threads;
  state = train(std::move(state), split.train, hyper);
  save_checkpoint(state, paths.checkpoint(), cfg.config_hash);
  write_loss_csv(state, paths.loss_csv(), cfg.config_hash);

  nlohmann::json split_doc;
  split_doc["config_hash"] = cfg.config_hash;
  if (cfg.split.mode == SplitConfig::Mode::loco) {
    split_doc["mode"] = "loco";
    split_doc["held_out_city"] = cfg.split.held_out_city;
  } else {
    split_doc["mode"] = "ratio";
    split_doc["train_frac"] = cfg.split.train_frac;
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& s : split.test) ids.push_back({s.city_id, s.building_id});
    split_doc["test_ids"] = std::move(ids);
  }
  std::ofstream out(paths.split_json());
  if (!out) throw IoError("cannot open for writing: " + paths.split_json().string());
  out << split_doc.dump(2) << "\n";

  std::cout << "train: " << split.train.size() << " samples, " << state.step
            << " steps, final batch MSE "
            << (state.loss_history.empty() ? 0.0 : state.loss_history.back().second) << "\n";
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

struct Prediction {
  std::string building_id;
  std::string city_id;
  double pred_height_m = 0.0;
  double ref_height_m = 0.0;  // in-memory only; not part of the predictions file
  bool clamped = false;
};

/// Batch inference: regressed BBB extents inverted to heights through the
/// run's projection factor, with undershoot clamped to zero.
inline std::vector<Prediction> predict_samples(const RunConfig& cfg, const TrainState& state,
                                               const std::vector<BuildingSample>& samples,
                                               int threads = 1) {
  std::vector<Prediction> out;
  if (samples.empty()) return out;
  std::vector<const BuildingSample*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  std::vector<double> extents = forward(state, ptrs, threads);
  out.reserve(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    const BuildingSample& s = samples[i];
    double length = extents[i] - s.fbb_extent_u_m;
    Prediction p;
    p.building_id = s.building_id;
    p.city_id = s.city_id;
    p.ref_height_m = s.ref_height_m;
    if (length < 0.0) {
      p.pred_height_m = 0.0;
      p.clamped = true;
    } else {
      double cos_th = s.cos_theta;
      double scale = cfg.projection == LayoverFactor::cos_theta
                         ? cos_th
                         : cos_th / std::sqrt(std::max(0.0, 1.0 - cos_th * cos_th));
      p.pred_height_m = length / scale;
    }
    out.push_back(std::move(p));
  }
  std::sort(out.begin(), out.end(), [](const Prediction& a, const Prediction& b) {
    return std::tie(a.city_id, a.building_id) < std::tie(b.city_id, b.building_id);
  });
  return out;
}

inline void write_predictions_csv(const std::vector<Prediction>& preds,
                                  const std::filesystem::path& path,
                                  const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  if (!config_hash.empty()) out << "# config_hash=" << config_hash << "\n";
  out << "building_id,city_id,pred_height_m\n";
  char buf[48];
  for (const auto& p : preds) {
    std::snprintf(buf, sizeof(buf), ",%.9g\n", p.pred_height_m);
    out << p.building_id << ',' << p.city_id << buf;
  }
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<Prediction> read_predictions_csv(const std::filesystem::path& path,
                                                    std::string* config_hash = nullptr) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("cannot open predictions: " + path.string());
  std::vector<Prediction> out;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto eq = line.find("config_hash=");
      if (eq != std::string::npos && config_hash) *config_hash = line.substr(eq + 12);
      continue;
    }
    if (!header_seen) {
      if (line != "building_id,city_id,pred_height_m") {
        throw FormatError("predictions " + path.string() + ": unexpected header '" + line + "'");
      }
      header_seen = true;
      continue;
    }
    auto c1 = line.find(',');
    auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      throw FormatError("predictions " + path.string() + ": malformed row '" + line + "'");
    }
    Prediction p;
    p.building_id = line.substr(0, c1);
    p.city_id = line.substr(c1 + 1, c2 - c1 - 1);
    p.pred_height_m = std::stod(line.substr(c2 + 1));
    out.push_back(std::move(p));
  }
  if (!header_seen) throw FormatError("predictions " + path.string() + ": missing header");
  return out;
}

/// Loads the membership recorded by run_train and returns the test samples.
inline std::vector<BuildingSample> load_test_samples(const RunConfig& cfg) {
  RunPaths paths = RunPaths::at(cfg.out_dir);
  std::ifstream in(paths.split_json());
  if (!in) throw MissingInputError("cannot open split file: " + paths.split_json().string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("split file: " + std::string(e.what()));
  }
  detail::check_stage_hash(doc.value("config_hash", ""), cfg, "split file");
  std::string mode = doc.value("mode", "");
  if (mode == "loco") {
    return detail::load_city_samples(cfg, doc.at("held_out_city").get<std::string>());
  }
  if (mode != "ratio") throw FormatError("split file: unknown mode '" + mode + "'");
  std::set<std::pair<std::string, std::string>> wanted;
  for (const auto& id : doc.at("test_ids")) {
    wanted.insert({id.at(0).get<std::string>(), id.at(1).get<std::string>()});
  }
  std::vector<BuildingSample> out;
  for (const auto& city : cfg.cities) {
    auto samples = detail::load_city_samples(cfg, city.name);
    for (auto& s : samples) {
      if (wanted.count({s.city_id, s.building_id})) out.push_back(std::move(s));
    }
  }
  return out;
}

inline void run_predict(const RunConfig& cfg, int threads = 1, bool emit_rasters = false) {
  RunPaths paths = RunPaths::at(cfg.out_dir);
  std::filesystem::create_directories(paths.predict());
  std::string ckpt_hash;
  TrainState state = load_checkpoint(paths.checkpoint(), &ckpt_hash);
  detail::check_stage_hash(ckpt_hash, cfg, "checkpoint");
  std::vector<BuildingSample> test = load_test_samples(cfg);
  std::vector<Prediction> preds = predict_samples(cfg, state, test, threads);
  write_predictions_csv(preds, paths.predictions(), cfg.config_hash);
  size_t clamped = 0;
  for (const auto& p : preds) clamped += p.clamped ? 1 : 0;
  std::cout << "predict: " << preds.size() << " buildings";
  if (clamped > 0) std::cout << " (" << clamped << " clamped to 0)";
  std::cout << "\n";

  if (emit_rasters) {
    std::map<std::string, std::map<std::string, double>> by_city;
    for (const auto& p : preds) by_city[p.city_id][p.building_id] = p.pred_height_m;
    for (const auto& [city_name, heights] : by_city) {
      const CityConfig& city = detail::city_config(cfg, city_name);
      FootprintSet fps = read_footprints(paths.footprints(city_name));
      detail::check_stage_hash(fps.config_hash, cfg, "footprints of " + city_name);
      std::vector<Footprint> predicted;
      for (const Footprint& fp : fps.buildings) {
        auto it = heights.find(fp.id);
        if (it == heights.end()) continue;
        predicted.emplace_back(fp.id, fp.vertices, it->second);
      }
      Raster raster = render_height_truth(predicted, city.scene, threads);
      raster.band = "height_pred";
      write_raster(raster, paths.pred_raster(city_name), cfg.config_hash);
    }
  }
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<EvalPair> join_predictions(const RunConfig& cfg,
                                              const std::vector<Prediction>& preds) {
  std::set<std::string> cities;
  for (const auto& p : preds) cities.insert(p.city_id);
  std::map<std::pair<std::string, std::string>, double> refs;
  for (const std::string& city : cities) {
    for (const auto& s : load_city_samples(cfg, city)) {
      refs[{s.city_id, s.building_id}] = s.ref_height_m;
    }
  }
  std::vector<EvalPair> pairs;
  pairs.reserve(preds.size());
  for (const auto& p : preds) {
    auto it = refs.find({p.city_id, p.building_id});
    if (it == refs.end()) {
      throw StaleArtifactError("prediction for unknown building " + p.city_id + "/" +
                               p.building_id + "; dataset and predictions disagree");
    }
    pairs.push_back({p.building_id, p.city_id, it->second, p.pred_height_m});
  }
  return pairs;
}

inline std::vector<MetricsReport> city_reports(const std::vector<EvalPair>& pairs) {
  std::map<std::string, std::vector<EvalPair>> by_city;
  for (const auto& p : pairs) by_city[p.city_id].push_back(p);
  std::vector<MetricsReport> reports;
  for (const auto& [city, group] : by_city) reports.push_back(stratified_report(group, city));
  if (by_city.size() > 1) reports.push_back(stratified_report(pairs, "ALL"));
  return reports;
}

}  // namespace detail

inline void run_evaluate(const RunConfig& cfg) {
  RunPaths paths = RunPaths::at(cfg.out_dir);
  std::filesystem::create_directories(paths.eval());
  std::string pred_hash;
  std::vector<Prediction> preds = read_predictions_csv(paths.predictions(), &pred_hash);
  detail::check_stage_hash(pred_hash, cfg, "predictions");
  std::vector<EvalPair> pairs = detail::join_predictions(cfg, preds);
  std::vector<MetricsReport> reports = detail::city_reports(pairs);

  write_metrics_csv(reports, paths.eval() / "metrics.csv", cfg.config_hash);
  std::string table = format_table(reports);
  std::ofstream tout(paths.eval() / "table.txt");
  if (!tout) throw IoError("cannot open for writing: " + (paths.eval() / "table.txt").string());
  tout << "# config_hash=" << cfg.config_hash << "\n" << table;
  export_scatter(pairs, paths.eval() / "scatter.csv", cfg.config_hash);

  std::vector<FootprintSet> sets;
  std::vector<CityFootprints> density_input;
  sets.reserve(cfg.cities.size());
  for (const auto& city : cfg.cities) {
    sets.push_back(read_footprints(paths.footprints(city.name)));
    detail::check_stage_hash(sets.back().config_hash, cfg, "footprints of " + city.name);
  }
  for (const auto& set : sets) density_input.push_back({set.city, &set.buildings});
  export_height_density(density_input, 5.0, paths.eval() / "height_density.csv",
                        cfg.config_hash);
  std::cout << table;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

/// Full protocol on one config: a leave-one-city-out experiment per city plus
/// one 70/30 in-distribution experiment, consolidated into a single report.
inline void run_report(const RunConfig& cfg, int threads = 1) {
  RunPaths paths = RunPaths::at(cfg.out_dir);
  std::filesystem::create_directories(paths.report());
  std::map<std::string, std::vector<BuildingSample>> by_city;
  for (const auto& city : cfg.cities) {
    by_city[city.name] = detail::load_city_samples(cfg, city.name);
  }
  TrainHyper hyper = cfg.training;
  hyper.threads = threads;

  auto fit_and_predict = [&](const std::vector<BuildingSample>& train_set,
                             const std::vector<BuildingSample>& test_set,
                             const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    TrainState state = train(init_model(cfg.model), train_set, hyper);
    std::vector<Prediction> preds = predict_samples(cfg, state, test_set, threads);
    write_predictions_csv(preds, dir / "predictions.csv", cfg.config_hash);
    std::vector<EvalPair> pairs;
    pairs.reserve(preds.size());
    for (const auto& p : preds) {
      pairs.push_back({p.building_id, p.city_id, p.ref_height_m, p.pred_height_m});
    }
    return pairs;
  };

  std::vector<MetricsReport> ood_rows;
  std::vector<std::string> fold_notes;
  for (const auto& city : cfg.cities) {
    std::vector<BuildingSample> train_set;
    std::string trained_on;
    for (const auto& [name, samples] : by_city) {
      if (name == city.name) continue;
      train_set.insert(train_set.end(), samples.begin(), samples.end());
      trained_on += trained_on.empty() ? name : ", " + name;
    }
    if (train_set.empty()) {
      throw InvalidInputError("report: no training data when holding out " + city.name);
    }
    auto pairs = fit_and_predict(train_set, by_city[city.name],
                                 paths.report() / ("loco_" + city.name));
    ood_rows.push_back(stratified_report(pairs, city.name));
    fold_notes.push_back("held out " + city.name + ", trained on " + trained_on);
  }

  std::vector<BuildingSample> pool;
  for (const auto& [name, samples] : by_city) pool.insert(pool.end(), samples.begin(), samples.end());
  auto [id_train, id_test] =
      split_ratio(std::move(pool), cfg.split.mode == SplitConfig::Mode::ratio
                                       ? cfg.split.train_frac
                                       : 0.7,
                  cfg.derived_seed("ratio-split"));
  if (id_train.empty() || id_test.empty()) {
    throw InvalidInputError("report: 70/30 split left an empty side");
  }
  auto id_pairs = fit_and_predict(id_train, id_test, paths.report() / "ratio");
  char label[64];
  std::snprintf(label, sizeof(label), "In-Distribution (%d-%d)",
                static_cast<int>(std::lround(100 * (cfg.split.mode == SplitConfig::Mode::ratio
                                                        ? cfg.split.train_frac
                                                        : 0.7))),
                static_cast<int>(std::lround(100 - 100 * (cfg.split.mode == SplitConfig::Mode::ratio
                                                              ? cfg.split.train_frac
                                                              : 0.7))));
  MetricsReport id_row = stratified_report(id_pairs, label);

  std::string ood_table = format_table(ood_rows);
  std::string id_table = format_table({id_row});
  std::ostringstream text;
  text << "# config_hash=" << cfg.config_hash << "\n"
       << "Out-of-distribution (leave-one-city-out)\n";
  for (const std::string& note : fold_notes) text << "#   " << note << "\n";
  text << ood_table << "\n"
       << "In-distribution\n"
       << id_table;
  std::ofstream out(paths.report() / "report.txt");
  if (!out) throw IoError("cannot open for writing: " + (paths.report() / "report.txt").string());
  out << text.str();

  std::vector<MetricsReport> all_rows = ood_rows;
  all_rows.push_back(id_row);
  write_metrics_csv(all_rows, paths.report() / "report.csv", cfg.config_hash);
  std::cout << text.str();
}

}  // namespace sarheight

// sarheight: object-based building-height estimation from synthetic SAR
// scenes. Subcommands chain simulate -> build-dataset -> train -> predict ->
// evaluate, with `report` running the full leave-one-city-out + 70/30
// protocol on top of a built dataset.

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sarheight/run_config.hpp"
#include "sarheight/runner.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  int threads = 1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "Run configuration JSON")->required();
  cmd->add_option("--set", opts.overrides,
                  "Override a config field by dotted path, e.g. --set training.lr=0.001");
  cmd->add_option("--out", opts.out_dir, "Override the configured output directory");
  cmd->add_option("--threads", opts.threads, "Worker threads (1 = bit-exact determinism)")
      ->check(CLI::PositiveNumber);
}

constexpr int kExitConfig = 2;
constexpr int kExitMissingInput = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitIo = 5;

int fail(const char* code, const std::string& message, int exit_code) {
  std::cerr << "sarheight: error [" << code << "]: " << message << "\n";
  return exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Object-based building height estimation toolkit"};
  app.require_subcommand(1);

  CommonOpts opts;
  bool predict_rasters = false;

  CLI::App* simulate = app.add_subcommand("simulate", "Generate footprints and SAR-like rasters");
  CLI::App* build = app.add_subcommand("build-dataset", "Tile, extract, dedup, subsample");
  CLI::App* train_cmd = app.add_subcommand("train", "Train the extent regressor");
  CLI::App* predict = app.add_subcommand("predict", "Predict heights for the test split");
  predict->add_flag("--raster", predict_rasters, "Also write per-city predicted-height rasters");
  CLI::App* evaluate = app.add_subcommand("evaluate", "Stratified metrics, table, and exports");
  CLI::App* report = app.add_subcommand("report", "Leave-one-city-out + 70/30 protocol report");

  for (CLI::App* cmd : {simulate, build, train_cmd, predict, evaluate, report}) {
    add_common(cmd, opts);
  }

  CLI11_PARSE(app, argc, argv);

  try {
    sarheight::RunConfig cfg =
        sarheight::load_run_config(opts.config_path, opts.overrides, opts.out_dir);
    if (simulate->parsed()) {
      sarheight::run_simulate(cfg, opts.threads);
    } else if (build->parsed()) {
      sarheight::run_build_dataset(cfg, opts.threads);
    } else if (train_cmd->parsed()) {
      sarheight::run_train(cfg, opts.threads);
    } else if (predict->parsed()) {
      sarheight::run_predict(cfg, opts.threads, predict_rasters);
    } else if (evaluate->parsed()) {
      sarheight::run_evaluate(cfg);
    } else if (report->parsed()) {
      sarheight::run_report(cfg, opts.threads);
    }
    return 0;
  } catch (const sarheight::StaleArtifactError& e) {
    return fail("E_STALE_ARTIFACT", e.what(), kExitConfig);
  } catch (const sarheight::ConfigError& e) {
    return fail("E_CONFIG", e.what(), kExitConfig);
  } catch (const sarheight::MissingInputError& e) {
    return fail("E_MISSING_INPUT", e.what(), kExitMissingInput);
  } catch (const sarheight::NumericError& e) {
    return fail("E_NUMERIC", e.what(), kExitNumeric);
  } catch (const sarheight::FormatError& e) {
    return fail("E_FORMAT", e.what(), kExitIo);
  } catch (const sarheight::IoError& e) {
    return fail("E_IO", e.what(), kExitIo);
  } catch (const sarheight::Error& e) {
    return fail("E_RUNTIME", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("E_INTERNAL", e.what(), 1);
  }
}

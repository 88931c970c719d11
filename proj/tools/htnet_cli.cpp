// htnet: micro-expression recognition pipeline.
//
//   init-config  write a full-default run configuration
//   make-synth   generate the bundled synthetic corpus
//   spot         fill missing apex indices by histogram-correlation spotting
//   extract      compute composite optical-flow feature files
//   train        fit a model on the full manifest
//   eval-loso    leave-one-subject-out evaluation with UF1/UAR reporting
//   report       render a report JSON as human-readable text
//
// Exit codes: 0 success, 2 input/validation error, 3 numerical failure.
// HTNET_LOG=error|info|debug controls verbosity.
#include <cstdint>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "htnet/commands.hpp"
#include "htnet/config.hpp"
#include "htnet/error.hpp"
#include "htnet/log.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::string manifest;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool wants_out = true) {
  cmd->add_option("--config", opts.config_path,
                  "Run configuration JSON (defaults used when omitted)");
  cmd->add_option("--manifest", opts.manifest,
                  "Manifest CSV (overrides the config's manifest)");
  if (wants_out)
    cmd->add_option(
        "--out", opts.out,
        "Run directory for outputs (overrides the config's out_dir)");
  cmd->add_option("--seed", opts.seed, "Run seed (overrides the config's seed)");
}

// Layer the config file and command-line overrides into one resolved config.
htnet::RunConfig resolve(const CommonOpts& opts) {
  htnet::RunConfig cfg;
  if (!opts.config_path.empty()) cfg = htnet::load_run_config(opts.config_path);
  if (!opts.manifest.empty()) cfg.manifest = opts.manifest;
  if (!opts.out.empty()) cfg.out_dir = opts.out;
  if (opts.seed) {
    cfg.seed = *opts.seed;
    cfg.train.seed = *opts.seed;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"htnet: micro-expression recognition pipeline"};
  app.require_subcommand(1);

  // init-config
  CommonOpts init_opts;
  std::string init_out = "config.json";
  CLI::App* init = app.add_subcommand(
      "init-config", "Write a full-default run configuration file");
  init->add_option("--out", init_out, "Destination path")
      ->capture_default_str();
  init->add_option("--seed", init_opts.seed, "Seed stored in the config");

  // make-synth
  htnet::SynthConfig synth_cfg;
  std::string synth_out = "synth";
  CLI::App* synth = app.add_subcommand(
      "make-synth", "Generate the bundled synthetic corpus");
  synth->add_option("--out", synth_out, "Corpus output directory")
      ->capture_default_str();
  synth->add_option("--seed", synth_cfg.seed, "Corpus seed")
      ->capture_default_str();
  synth->add_option("--subjects", synth_cfg.subjects, "Number of subjects")
      ->capture_default_str();
  synth->add_option("--samples-per-class", synth_cfg.samples_per_class,
                    "Samples per subject and class")
      ->capture_default_str();
  synth->add_option("--frames", synth_cfg.frames, "Frames per sample")
      ->capture_default_str();
  synth->add_option("--frame-size", synth_cfg.frame_size,
                    "Frame side length in pixels")
      ->capture_default_str();

  // spot / extract / train / eval-loso
  CommonOpts spot_opts, extract_opts, train_opts, eval_opts;
  int extract_jobs = 1, eval_jobs = 1;
  CLI::App* spot = app.add_subcommand(
      "spot",
      "Fill missing apex indices; writes manifest_spotted.csv next to the "
      "input manifest");
  add_common(spot, spot_opts, /*wants_out=*/false);

  CLI::App* extract = app.add_subcommand(
      "extract", "Compute composite flow feature files for every sample");
  add_common(extract, extract_opts);
  extract->add_option("--jobs", extract_jobs, "Worker threads")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  CLI::App* train = app.add_subcommand(
      "train", "Train on the full manifest and write a checkpoint");
  add_common(train, train_opts);

  CLI::App* eval = app.add_subcommand(
      "eval-loso", "Leave-one-subject-out evaluation with UF1/UAR report");
  add_common(eval, eval_opts);
  eval->add_option("--jobs", eval_jobs, "Folds trained in parallel")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  // report
  std::string report_path;
  CLI::App* report = app.add_subcommand(
      "report", "Render a report JSON as human-readable text");
  report->add_option("report", report_path, "Path to report.json")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (init->parsed()) {
      htnet::RunConfig cfg;
      if (init_opts.seed) {
        cfg.seed = *init_opts.seed;
        cfg.train.seed = *init_opts.seed;
      }
      return htnet::cmd_init_config(cfg, init_out);
    }
    if (synth->parsed()) return htnet::cmd_make_synth(synth_cfg, synth_out);
    if (spot->parsed()) return htnet::cmd_spot(resolve(spot_opts));
    if (extract->parsed())
      return htnet::cmd_extract(resolve(extract_opts), extract_jobs);
    if (train->parsed()) return htnet::cmd_train(resolve(train_opts));
    if (eval->parsed())
      return htnet::cmd_eval_loso(resolve(eval_opts), eval_jobs);
    if (report->parsed()) return htnet::cmd_report(report_path);
  } catch (const std::exception& e) {
    // config loading in resolve() happens before the command's own fence
    htnet::log::error(e.what());
    return 2;
  }
  return 2;  // unreachable: require_subcommand(1) guarantees a match
}

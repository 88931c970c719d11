// Pipeline commands behind the CLI. Each one reads its inputs, writes its
// artifacts under the run directory, and returns a process exit code:
//   0  success
//   2  input / validation error (bad files, missing entries, schema problems)
//   3  numerical failure (non-finite loss)
// Per-entry data problems are collected and logged rather than aborting the
// whole command; partial success still exits nonzero.
#pragma once

#include <string>

#include "htnet/config.hpp"
#include "htnet/synth.hpp"

namespace htnet {

// Writes a full-default config (plus any caller overrides already applied to
// `cfg`) to out_path.
int cmd_init_config(const RunConfig& cfg, const std::string& out_path);

// Generates the bundled synthetic corpus under out_dir.
int cmd_make_synth(const SynthConfig& cfg, const std::string& out_dir);

// Fills empty apex columns by histogram-correlation spotting and writes
// manifest_spotted.csv next to the input manifest (so its relative frame
// paths stay valid). When every apex is already present the input bytes are
// copied verbatim. Entries whose frames or landmarks cannot be read keep an
// empty apex and are listed in the error log.
int cmd_spot(const RunConfig& cfg);

// Computes composite flow maps for every manifest entry and writes
// <out_dir>/features/<sample_id>.htfm plus <out_dir>/extract_log.csv with
// per-sample mean |u|, mean |v| and max strain.
int cmd_extract(const RunConfig& cfg, int jobs = 1);

// Trains on the full manifest; writes <out_dir>/checkpoint.htck,
// <out_dir>/loss_curve.csv and the resolved <out_dir>/config.json.
int cmd_train(const RunConfig& cfg);

// Leave-one-subject-out evaluation; writes <out_dir>/report.json,
// <out_dir>/confusion.csv and the resolved <out_dir>/config.json.
int cmd_eval_loso(const RunConfig& cfg, int jobs = 1);

// Renders a report JSON as a human-readable summary on stdout.
int cmd_report(const std::string& report_path);

}  // namespace htnet

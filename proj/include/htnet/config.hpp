// Run configuration: one JSON file drives every pipeline command, and each
// artifact embeds the resolved copy so results carry their own provenance.
#pragma once

#include <cstdint>
#include <string>

#include "htnet/flow.hpp"
#include "htnet/model.hpp"
#include "htnet/train.hpp"

namespace htnet {

// Apex-spotting knobs: histogram resolution and the side length of the
// landmark-centered ROIs fed to the correlation score.
struct SpotParams {
  int bins = 16;
  int roi_size = 16;

  void validate() const;  // ConfigError on out-of-range fields
};

struct RunConfig {
  std::string manifest;        // dataset manifest CSV; commands may override
  std::string out_dir = "run"; // default workspace for command outputs
  std::uint64_t seed = 0;      // the run seed; wins over train.seed on load
  ModelConfig model;
  TrainConfig train;
  FlowParams flow;
  SpotParams spot;

  // Field-range validation for every section. Does not touch the filesystem.
  void validate() const;
};

// JSON schema "htnet-run-config/1" with sections model/train/flow/spot.
// Missing fields fall back to defaults; unknown top-level keys are rejected
// so typos fail loudly. After parsing, train.seed is set to the run seed.
std::string run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text);

RunConfig load_run_config(const std::string& path);  // DataError if unreadable
void save_run_config(const RunConfig& cfg, const std::string& path);

}  // namespace htnet

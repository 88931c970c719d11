// Bundled synthetic corpus: textured faces warped by class-specific motion
// signatures, so the full spot/extract/train/evaluate pipeline can run
// without access-restricted datasets.
#pragma once

#include <cstdint>
#include <string>

#include "htnet/train.hpp"

namespace htnet {

struct SynthConfig {
  int subjects = 12;
  int samples_per_class = 3;  // per subject; 3 classes -> 9 samples each
  int frame_size = 64;
  int frames = 10;  // onset is frame 0, offset the last frame
  std::uint64_t seed = 0;

  void validate() const;  // ConfigError on out-of-range fields
};

// Writes <out_dir>/frames/<sample_id>/frame_NNN.pgm, per-subject landmark
// JSON under <out_dir>/landmarks/, and <out_dir>/manifest.csv whose apex
// column is left empty (the spotting step fills it). Paths inside the
// manifest are relative to out_dir. Returns the written manifest.
// Deterministic: the same config produces bit-identical files.
Manifest generate_synth_corpus(const SynthConfig& cfg,
                               const std::string& out_dir);

}  // namespace htnet

#include "htnet/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <random>

#include "htnet/error.hpp"
#include "htnet/flow.hpp"
#include "htnet/image.hpp"
#include "htnet/log.hpp"

namespace htnet {

namespace {

// canonical landmark layout on a 64-px face, scaled to the configured size
LandmarkSet canonical_landmarks(int size) {
  const double s = size / 64.0;
  LandmarkSet lm;
  lm.left_eye = {20.0 * s, 22.0 * s};
  lm.right_eye = {44.0 * s, 22.0 * s};
  lm.left_lip = {22.0 * s, 46.0 * s};
  lm.right_lip = {42.0 * s, 46.0 * s};
  return lm;
}

// smooth per-subject texture: a shallow gradient plus random Gaussian bumps,
// normalized into a comfortable grayscale range
Image render_face(int size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> grad(-0.8, 0.8);
  std::uniform_real_distribution<double> pos(0.0, static_cast<double>(size));
  std::uniform_real_distribution<double> sigma(3.0, 9.0);
  std::uniform_real_distribution<double> amp(-40.0, 40.0);

  const double gx = grad(rng), gy = grad(rng);
  struct Bump {
    double cx, cy, inv2s2, a;
  };
  std::vector<Bump> bumps(48);
  for (Bump& b : bumps) {
    b.cx = pos(rng);
    b.cy = pos(rng);
    const double s = sigma(rng);
    b.inv2s2 = 1.0 / (2.0 * s * s);
    b.a = amp(rng);
  }

  std::vector<double> field(static_cast<std::size_t>(size) * size);
  double lo = 1e300, hi = -1e300;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double v = gx * x + gy * y;
      for (const Bump& b : bumps) {
        const double r2 =
            (x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy);
        v += b.a * std::exp(-r2 * b.inv2s2);
      }
      field[static_cast<std::size_t>(y) * size + x] = v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }

  Image img;
  img.height = img.width = size;
  img.pixels.resize(field.size());
  const double span = hi > lo ? hi - lo : 1.0;
  for (std::size_t i = 0; i < field.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(
        std::lround(25.0 + 205.0 * (field[i] - lo) / span));
  return img;
}

struct MotionSite {
  double cx, cy;  // center
  double du, dv;  // unit displacement direction
};

// class signatures: negatives move the eye regions horizontally, positives
// the lip regions horizontally, surprise moves all four regions vertically
std::vector<MotionSite> class_sites(int label, const LandmarkSet& lm) {
  std::vector<MotionSite> sites;
  auto add = [&](const std::array<double, 2>& p, double du, double dv) {
    sites.push_back(MotionSite{p[0], p[1], du, dv});
  };
  switch (label) {
    case kClassNegative:
      add(lm.left_eye, 1.0, 0.0);
      add(lm.right_eye, 1.0, 0.0);
      break;
    case kClassPositive:
      add(lm.left_lip, 1.0, 0.0);
      add(lm.right_lip, 1.0, 0.0);
      break;
    default:
      add(lm.left_eye, 0.0, 1.0);
      add(lm.right_eye, 0.0, 1.0);
      add(lm.left_lip, 0.0, 1.0);
      add(lm.right_lip, 0.0, 1.0);
      break;
  }
  return sites;
}

double bilinear(const Image& img, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - x0, fy = y - y0;
  const double top = (1.0 - fx) * img.at(y0, x0) + fx * img.at(y0, x1);
  const double bot = (1.0 - fx) * img.at(y1, x0) + fx * img.at(y1, x1);
  return (1.0 - fy) * top + fy * bot;
}

// backward warp: each output pixel samples the base image displaced against
// the motion field, so stronger alpha moves more texture
Image warp(const Image& base, const std::vector<MotionSite>& sites,
           double amplitude, double alpha, double motion_sigma) {
  if (alpha == 0.0) return base;
  Image out;
  out.height = base.height;
  out.width = base.width;
  out.pixels.resize(base.pixels.size());
  const double inv2s2 = 1.0 / (2.0 * motion_sigma * motion_sigma);
  for (int y = 0; y < base.height; ++y)
    for (int x = 0; x < base.width; ++x) {
      double du = 0.0, dv = 0.0;
      for (const MotionSite& s : sites) {
        const double r2 = (x - s.cx) * (x - s.cx) + (y - s.cy) * (y - s.cy);
        const double g = std::exp(-r2 * inv2s2);
        du += s.du * g;
        dv += s.dv * g;
      }
      const double sx = x - alpha * amplitude * du;
      const double sy = y - alpha * amplitude * dv;
      out.at(y, x) = static_cast<std::uint8_t>(std::lround(
          std::clamp(bilinear(base, sx, sy), 0.0, 255.0)));
    }
  return out;
}

const char* raw_label_for(int label, int rep) {
  static const char* negatives[] = {"anger", "disgust", "sadness",
                                    "fear", "contempt", "repression"};
  switch (label) {
    case kClassNegative:
      return negatives[rep % 6];
    case kClassPositive:
      return "happiness";
    default:
      return "surprise";
  }
}

}  // namespace

void SynthConfig::validate() const {
  if (subjects < 2)
    throw ConfigError("synth: need at least 2 subjects for LOSO");
  if (samples_per_class < 1)
    throw ConfigError("synth: samples_per_class must be >= 1");
  if (frame_size < 32)
    throw ConfigError("synth: frame_size must be >= 32");
  if (frames < 4) throw ConfigError("synth: need at least 4 frames");
}

Manifest generate_synth_corpus(const SynthConfig& cfg,
                               const std::string& out_dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "frames");
  fs::create_directories(fs::path(out_dir) / "landmarks");

  std::mt19937_64 master(cfg.seed);
  Manifest manifest;
  for (int subject = 1; subject <= cfg.subjects; ++subject) {
    std::mt19937_64 subject_rng(master());
    char subj_name[16];
    std::snprintf(subj_name, sizeof subj_name, "s%02d", subject);

    const Image face = render_face(cfg.frame_size, subject_rng);
    LandmarkSet lm = canonical_landmarks(cfg.frame_size);
    std::uniform_real_distribution<double> jitter(-1.5, 1.5);
    for (auto* pt : {&lm.left_eye, &lm.right_eye, &lm.left_lip, &lm.right_lip}) {
      (*pt)[0] += jitter(subject_rng);
      (*pt)[1] += jitter(subject_rng);
    }
    const std::string lm_rel = std::string("landmarks/") + subj_name + ".json";
    save_landmarks(lm, (fs::path(out_dir) / lm_rel).string());

    for (int label = 0; label < kNumClasses; ++label) {
      const std::vector<MotionSite> sites = class_sites(label, lm);
      for (int rep = 0; rep < cfg.samples_per_class; ++rep) {
        std::mt19937_64 sample_rng(master());
        std::uniform_real_distribution<double> amp_dist(1.9, 2.5);
        std::uniform_int_distribution<int> apex_jitter(-1, 1);
        const double amplitude =
            amp_dist(sample_rng) * cfg.frame_size / 64.0;
        const double motion_sigma = 7.0 * cfg.frame_size / 64.0;
        int apex = cfg.frames / 2 + apex_jitter(sample_rng);
        apex = std::clamp(apex, 1, cfg.frames - 2);

        static const char* class_words[] = {"negative", "positive", "surprise"};
        const char* raw = raw_label_for(label, rep);
        const std::string sample_id = std::string(subj_name) + "_" +
                                      class_words[label] + "_" +
                                      std::to_string(rep);
        const std::string frames_rel = "frames/" + sample_id;
        fs::create_directories(fs::path(out_dir) / frames_rel);

        for (int t = 0; t < cfg.frames; ++t) {
          // ramp to full displacement at the apex, relax partway afterwards
          double alpha;
          if (t <= apex)
            alpha = static_cast<double>(t) / apex;
          else
            alpha = 1.0 - 0.7 * static_cast<double>(t - apex) /
                              (cfg.frames - 1 - apex);
          const Image frame = warp(face, sites, amplitude, alpha, motion_sigma);
          save_pgm(frame,
                   (fs::path(out_dir) / frame_path(frames_rel, t)).string());
        }

        ManifestEntry e;
        e.sample_id = sample_id;
        e.subject_id = subj_name;
        e.dataset = "SYNTH";
        e.frames_dir = frames_rel;
        e.onset = 0;
        e.apex.reset();  // the spotting step must find it
        e.offset = cfg.frames - 1;
        e.raw_label = raw;
        e.label = label;
        e.landmarks_path = lm_rel;
        manifest.entries.push_back(std::move(e));
      }
    }
  }
  const std::string manifest_path =
      (fs::path(out_dir) / "manifest.csv").string();
  save_manifest(manifest, manifest_path);
  log::info("synth: wrote " + std::to_string(manifest.entries.size()) +
            " samples to " + out_dir);
  return manifest;
}

}  // namespace htnet

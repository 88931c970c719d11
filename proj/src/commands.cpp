#include "htnet/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>
#include <vector>

#include "htnet/error.hpp"
#include "htnet/flow.hpp"
#include "htnet/image.hpp"
#include "htnet/log.hpp"
#include "htnet/model.hpp"

namespace htnet {

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;

// Top-level exception fence shared by every command: numerical failures keep
// their dedicated exit code, everything else counts as an input problem.
template <typename Fn>
int guarded(const char* command, Fn&& fn) {
  try {
    return fn();
  } catch (const NumericError& e) {
    log::error(std::string(command) + ": " + e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    log::error(std::string(command) + ": " + e.what());
    return kExitInput;
  }
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw DataError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out.good()) throw DataError("cannot write: " + path);
  out << bytes;
  if (!out.good()) throw DataError("write failed: " + path);
}

// Manifest paths are stored relative to the manifest file itself so a corpus
// directory can be moved or shared wholesale.
void resolve_entry_paths(Manifest& m, const std::string& manifest_path) {
  const fs::path base = fs::path(manifest_path).parent_path();
  for (ManifestEntry& e : m.entries) {
    if (!fs::path(e.frames_dir).is_absolute())
      e.frames_dir = (base / e.frames_dir).string();
    if (!fs::path(e.landmarks_path).is_absolute())
      e.landmarks_path = (base / e.landmarks_path).string();
  }
}

Manifest load_resolved_manifest(const std::string& path) {
  Manifest m = load_manifest(path);
  resolve_entry_paths(m, path);
  return m;
}

std::string feature_path(const RunConfig& cfg, const std::string& sample_id) {
  return (fs::path(cfg.out_dir) / "features" / (sample_id + ".htfm")).string();
}

// Loads every sample's composite flow tensor; missing or unreadable feature
// files are all reported before giving up.
std::vector<Tensor> load_feature_tensors(const RunConfig& cfg,
                                         const Manifest& m,
                                         const char* command) {
  std::vector<Tensor> inputs;
  inputs.reserve(m.entries.size());
  std::vector<std::string> missing;
  for (const ManifestEntry& e : m.entries) {
    const std::string path = feature_path(cfg, e.sample_id);
    try {
      inputs.push_back(composite_to_tensor(read_flow_file(path)));
    } catch (const std::exception& ex) {
      missing.push_back(e.sample_id + ": " + ex.what());
    }
  }
  if (!missing.empty()) {
    for (const std::string& line : missing)
      log::error(std::string(command) + ": " + line);
    throw DataError(std::string(command) + ": " +
                    std::to_string(missing.size()) +
                    " sample(s) lack a readable flow file under " +
                    (fs::path(cfg.out_dir) / "features").string() +
                    " (first: " + missing.front() + ")");
  }
  return inputs;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_resolved_config(const RunConfig& cfg) {
  save_run_config(cfg, (fs::path(cfg.out_dir) / "config.json").string());
}

TrainConfig resolved_train_config(const RunConfig& cfg) {
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  return tc;
}

}  // namespace

int cmd_init_config(const RunConfig& cfg, const std::string& out_path) {
  return guarded("init-config", [&] {
    cfg.validate();
    save_run_config(cfg, out_path);
    log::info("init-config: wrote " + out_path);
    return kExitOk;
  });
}

int cmd_make_synth(const SynthConfig& cfg, const std::string& out_dir) {
  return guarded("make-synth", [&] {
    const Manifest m = generate_synth_corpus(cfg, out_dir);
    log::info("make-synth: wrote " + std::to_string(m.entries.size()) +
              " samples under " + out_dir);
    return kExitOk;
  });
}

int cmd_spot(const RunConfig& cfg) {
  return guarded("spot", [&] {
    cfg.spot.validate();
    const std::string original = read_bytes(cfg.manifest);
    Manifest m = load_manifest(cfg.manifest);
    // the output lives next to the input so the manifest-relative frame and
    // landmark paths stay valid without rewriting them
    const std::string out_path =
        (fs::path(cfg.manifest).parent_path() / "manifest_spotted.csv")
            .string();
    if (fs::weakly_canonical(out_path) == fs::weakly_canonical(cfg.manifest))
      throw ConfigError(
          "spot: output would overwrite the input manifest; rename " +
          cfg.manifest + " first");

    const bool any_empty =
        std::any_of(m.entries.begin(), m.entries.end(),
                    [](const ManifestEntry& e) { return !e.apex; });
    if (!any_empty) {
      // nothing to spot: preserve the input byte-for-byte
      write_bytes(out_path, original);
      log::info("spot: all apexes present, copied manifest to " + out_path);
      return kExitOk;
    }

    Manifest resolved = m;
    resolve_entry_paths(resolved, cfg.manifest);
    std::vector<std::string> failures;
    int spotted_count = 0;
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
      ManifestEntry& e = m.entries[i];
      const ManifestEntry& r = resolved.entries[i];
      if (e.apex) continue;
      try {
        FrameSequence seq;
        for (int t = r.onset; t <= r.offset; ++t)
          seq.frames.push_back(load_image(frame_path(r.frames_dir, t)));
        seq.onset_index = 0;
        seq.offset_index = r.offset - r.onset;
        const LandmarkSet lm = load_landmarks(r.landmarks_path);
        const auto rois =
            default_rois(lm, seq.frames.front().width,
                         seq.frames.front().height, cfg.spot.roi_size);
        e.apex = r.onset + spot_apex(seq, rois, cfg.spot.bins);
        ++spotted_count;
        log::debug("spot: " + e.sample_id + " -> frame " +
                   std::to_string(*e.apex));
      } catch (const std::exception& ex) {
        failures.push_back(e.sample_id + ": " + ex.what());
      }
    }

    save_manifest(m, out_path);
    log::info("spot: filled " + std::to_string(spotted_count) +
              " apex indices -> " + out_path);
    if (!failures.empty()) {
      for (const std::string& line : failures) log::error("spot: " + line);
      log::error("spot: " + std::to_string(failures.size()) +
                 " entr" + (failures.size() == 1 ? "y" : "ies") +
                 " could not be spotted");
      return kExitInput;
    }
    return kExitOk;
  });
}

int cmd_extract(const RunConfig& cfg, int jobs) {
  return guarded("extract", [&] {
    cfg.flow.validate();
    if (cfg.model.image_size < 2)
      throw ConfigError("extract: image_size must be >= 2, got " +
                        std::to_string(cfg.model.image_size));
    const Manifest m = load_resolved_manifest(cfg.manifest);
    const fs::path feature_dir = fs::path(cfg.out_dir) / "features";
    fs::create_directories(feature_dir);

    struct Row {
      bool ok = false;
      std::string error;
      double mean_abs_u = 0.0, mean_abs_v = 0.0, max_strain = 0.0;
    };
    std::vector<Row> rows(m.entries.size());

    auto extract_one = [&](std::size_t i) {
      const ManifestEntry& e = m.entries[i];
      Row& row = rows[i];
      try {
        if (!e.apex)
          throw DataError("apex index missing; run the spot command first");
        const Image onset = load_image(frame_path(e.frames_dir, e.onset));
        const Image apex = load_image(frame_path(e.frames_dir, *e.apex));
        const FlowField flow = compute_flow(onset, apex, cfg.flow);
        const std::vector<double> strain = compute_strain(flow);
        const LandmarkSet lm = load_landmarks(e.landmarks_path);
        const CompositeFlowMap map =
            build_composite(flow, strain, lm, cfg.model.image_size);
        write_flow_file(map, feature_path(cfg, e.sample_id));

        double su = 0.0, sv = 0.0;
        for (double u : flow.u) su += std::abs(u);
        for (double v : flow.v) sv += std::abs(v);
        const double n = static_cast<double>(flow.u.size());
        row.mean_abs_u = su / n;
        row.mean_abs_v = sv / n;
        row.max_strain = *std::max_element(strain.begin(), strain.end());
        row.ok = true;
      } catch (const std::exception& ex) {
        row.error = ex.what();
      }
    };

    if (jobs <= 1) {
      for (std::size_t i = 0; i < m.entries.size(); ++i) extract_one(i);
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::thread> pool;
      const int workers = std::min<int>(jobs, static_cast<int>(m.entries.size()));
      for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
          for (std::size_t i = next.fetch_add(1); i < m.entries.size();
               i = next.fetch_add(1))
            extract_one(i);
        });
      for (std::thread& t : pool) t.join();
    }

    // the extraction log keeps manifest order so reruns are byte-identical
    std::string csv = "sample_id,mean_abs_u,mean_abs_v,max_strain\n";
    int failures = 0;
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
      const ManifestEntry& e = m.entries[i];
      const Row& row = rows[i];
      if (!row.ok) {
        ++failures;
        log::error("extract: " + e.sample_id + ": " + row.error);
        continue;
      }
      csv += e.sample_id + "," + format_double(row.mean_abs_u) + "," +
             format_double(row.mean_abs_v) + "," +
             format_double(row.max_strain) + "\n";
      log::debug("extract: " + e.sample_id + " mean|u|=" +
                 format_double(row.mean_abs_u) + " mean|v|=" +
                 format_double(row.mean_abs_v) + " max_strain=" +
                 format_double(row.max_strain));
    }
    write_bytes((fs::path(cfg.out_dir) / "extract_log.csv").string(), csv);
    log::info("extract: wrote " +
              std::to_string(m.entries.size() - failures) + "/" +
              std::to_string(m.entries.size()) + " flow files under " +
              feature_dir.string());
    return failures == 0 ? kExitOk : kExitInput;
  });
}

int cmd_train(const RunConfig& cfg) {
  return guarded("train", [&] {
    cfg.validate();
    const Manifest m = load_manifest(cfg.manifest);
    fs::create_directories(cfg.out_dir);
    const std::vector<Tensor> inputs = load_feature_tensors(cfg, m, "train");

    std::vector<TrainSample> samples;
    samples.reserve(m.entries.size());
    for (std::size_t i = 0; i < m.entries.size(); ++i)
      samples.push_back({inputs[i], m.entries[i].label});

    const TrainConfig tcfg = resolved_train_config(cfg);
    HTNet model(cfg.model, cfg.seed);
    const std::vector<double> curve = fit(model, samples, tcfg);

    save_checkpoint(model, (fs::path(cfg.out_dir) / "checkpoint.htck").string());
    std::string csv = "epoch,mean_loss\n";
    for (std::size_t e = 0; e < curve.size(); ++e)
      csv += std::to_string(e) + "," + format_double(curve[e]) + "\n";
    write_bytes((fs::path(cfg.out_dir) / "loss_curve.csv").string(), csv);
    write_resolved_config(cfg);

    log::info("train: " + std::to_string(samples.size()) + " samples, " +
              std::to_string(curve.size()) + " epochs" +
              (curve.empty() ? std::string()
                             : ", final loss " + format_double(curve.back())) +
              " -> " + cfg.out_dir);
    return kExitOk;
  });
}

int cmd_eval_loso(const RunConfig& cfg, int jobs) {
  return guarded("eval-loso", [&] {
    cfg.validate();
    const Manifest m = load_manifest(cfg.manifest);
    fs::create_directories(cfg.out_dir);
    const std::vector<Tensor> inputs = load_feature_tensors(cfg, m, "eval-loso");

    const TrainConfig tcfg = resolved_train_config(cfg);
    const EvalReport report =
        evaluate_loso(m, inputs, cfg.model, tcfg, jobs);

    write_bytes((fs::path(cfg.out_dir) / "report.json").string(),
                report_to_json(report));
    write_bytes((fs::path(cfg.out_dir) / "confusion.csv").string(),
                confusion_to_csv(report.pooled));
    write_resolved_config(cfg);

    log::info("eval-loso: " + std::to_string(report.folds.size()) +
              " folds, pooled UF1 " + format_double(report.pooled_uf1) +
              ", UAR " + format_double(report.pooled_uar) + " -> " +
              cfg.out_dir);
    return kExitOk;
  });
}

namespace {

const char* kClassHeaders[3] = {"negative", "positive", "surprise"};

void print_metrics_line(const std::string& label, double uf1_value,
                        const std::optional<double>& uar_value,
                        long long total) {
  std::printf("%-12s UF1 %.4f   UAR ", label.c_str(), uf1_value);
  if (uar_value)
    std::printf("%.4f", *uar_value);
  else
    std::printf("n/a   ");
  std::printf("   (%lld samples)\n", total);
}

void print_confusion(const Confusion& c) {
  std::printf("  %-10s", "true\\pred");
  for (const char* h : kClassHeaders) std::printf("  %9s", h);
  std::printf("\n");
  for (int t = 0; t < 3; ++t) {
    long long row_total = 0;
    for (int p = 0; p < 3; ++p) row_total += c.counts[t][p];
    std::printf("  %-10s", kClassHeaders[t]);
    for (int p = 0; p < 3; ++p) {
      const double frac =
          row_total == 0 ? 0.0
                         : static_cast<double>(c.counts[t][p]) / row_total;
      std::printf("  %9.4f", frac);
    }
    std::printf("   [n=%lld]\n", row_total);
  }
}

}  // namespace

int cmd_report(const std::string& report_path) {
  return guarded("report", [&] {
    const EvalReport r = report_from_json(read_bytes(report_path));
    std::printf("run seed: %llu\n",
                static_cast<unsigned long long>(r.train_config.seed));
    std::printf("folds: %zu\n\n", r.folds.size());

    print_metrics_line("pooled:", r.pooled_uf1, r.pooled_uar,
                       r.pooled.total());
    std::printf("\nconfusion matrix (rows true, columns predicted, "
                "row-normalized):\n");
    print_confusion(r.pooled);

    if (!r.per_dataset.empty()) {
      std::printf("\nper-dataset:\n");
      for (const auto& [name, metrics] : r.per_dataset)
        print_metrics_line("  " + name + ":", metrics.uf1, metrics.uar,
                           metrics.confusion.total());
    }

    if (!r.flags.empty()) {
      std::printf("\nnotes:\n");
      for (const std::string& flag : r.flags)
        std::printf("  - %s\n", flag.c_str());
    }
    return kExitOk;
  });
}

}  // namespace htnet

#include "htnet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "htnet/error.hpp"

namespace htnet {

namespace {

constexpr const char* kSchema = "htnet-run-config/1";

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw DataError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out.good()) throw DataError("cannot write config file: " + path);
  out << text;
  if (!out.good()) throw DataError("write failed for config file: " + path);
}

nlohmann::json flow_to_json(const FlowParams& f) {
  nlohmann::json j;
  j["pyramid_levels"] = f.pyramid_levels;
  j["pyr_scale"] = f.pyr_scale;
  j["window_size"] = f.window_size;
  j["iterations"] = f.iterations;
  j["poly_n"] = f.poly_n;
  j["poly_sigma"] = f.poly_sigma;
  return j;
}

FlowParams flow_from_json(const nlohmann::json& j) {
  FlowParams f;
  f.pyramid_levels = j.value("pyramid_levels", f.pyramid_levels);
  f.pyr_scale = j.value("pyr_scale", f.pyr_scale);
  f.window_size = j.value("window_size", f.window_size);
  f.iterations = j.value("iterations", f.iterations);
  f.poly_n = j.value("poly_n", f.poly_n);
  f.poly_sigma = j.value("poly_sigma", f.poly_sigma);
  return f;
}

nlohmann::json spot_to_json(const SpotParams& s) {
  nlohmann::json j;
  j["bins"] = s.bins;
  j["roi_size"] = s.roi_size;
  return j;
}

SpotParams spot_from_json(const nlohmann::json& j) {
  SpotParams s;
  s.bins = j.value("bins", s.bins);
  s.roi_size = j.value("roi_size", s.roi_size);
  return s;
}

}  // namespace

void SpotParams::validate() const {
  if (bins < 2)
    throw ConfigError("spot: bins must be >= 2, got " + std::to_string(bins));
  if (roi_size < 1)
    throw ConfigError("spot: roi_size must be >= 1, got " +
                      std::to_string(roi_size));
}

void RunConfig::validate() const {
  if (out_dir.empty()) throw ConfigError("run config: out_dir is empty");
  model.validate();
  train.validate();
  flow.validate();
  spot.validate();
}

std::string run_config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["schema"] = kSchema;
  j["seed"] = cfg.seed;
  j["manifest"] = cfg.manifest;
  j["out_dir"] = cfg.out_dir;
  j["model"] = nlohmann::json::parse(model_config_to_json(cfg.model));
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;  // one seed drives the whole run
  j["train"] = nlohmann::json::parse(train_config_to_json(tc));
  j["flow"] = flow_to_json(cfg.flow);
  j["spot"] = spot_to_json(cfg.spot);
  return j.dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("run config JSON: not an object");

  static const std::set<std::string> known = {
      "schema", "seed", "manifest", "out_dir", "model", "train", "flow",
      "spot"};
  for (const auto& item : j.items())
    if (!known.count(item.key()))
      throw ConfigError("run config JSON: unknown key '" + item.key() + "'");
  if (j.contains("schema") && j["schema"] != kSchema)
    throw ConfigError("run config JSON: expected schema '" +
                      std::string(kSchema) + "', got '" +
                      j["schema"].dump() + "'");

  RunConfig cfg;
  try {
    cfg.seed = j.value("seed", cfg.seed);
    cfg.manifest = j.value("manifest", cfg.manifest);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    if (j.contains("model")) cfg.model = model_config_from_json(j["model"].dump());
    if (j.contains("train")) cfg.train = train_config_from_json(j["train"].dump());
    if (j.contains("flow")) cfg.flow = flow_from_json(j["flow"]);
    if (j.contains("spot")) cfg.spot = spot_from_json(j["spot"]);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config JSON: ") + e.what());
  }
  cfg.train.seed = cfg.seed;
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  return run_config_from_json(read_text(path));
}

void save_run_config(const RunConfig& cfg, const std::string& path) {
  write_text(path, run_config_to_json(cfg));
}

}  // namespace htnet

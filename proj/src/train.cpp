#include "htnet/train.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "htnet/error.hpp"
#include "htnet/log.hpp"

namespace htnet {

namespace {

const char* const kClassNames[3] = {"negative", "positive", "surprise"};

const char* const kDatasets[] = {"SAMM", "SMIC", "CASME2", "CASME3", "SYNTH"};

std::string lower(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string read_text_file(const std::string& path, const char* what) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw DataError(std::string(what) + ": cannot open " + path);
  std::string text;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, n);
  std::fclose(f);
  return text;
}

void write_text_file(const std::string& text, const std::string& path,
                     const char* what) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw DataError(std::string(what) + ": cannot write " + path);
  const std::size_t n = std::fwrite(text.data(), 1, text.size(), f);
  std::fclose(f);
  if (n != text.size())
    throw DataError(std::string(what) + ": short write to " + path);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

int parse_int(const std::string& field, const std::string& context) {
  int v = 0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  const auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc{} || ptr != end)
    throw DataError(context + ": not an integer: '" + field + "'");
  return v;
}

}  // namespace

// --- manifest ---------------------------------------------------------------

const char* const kManifestHeader =
    "sample_id,subject_id,dataset,frames_dir,onset,apex,offset,raw_label,"
    "class,landmarks_path";

int map_label(const std::string& raw) {
  const std::string w = lower(raw);
  if (w == "happiness" || w == "positive") return kClassPositive;
  if (w == "surprise") return kClassSurprise;
  if (w == "sadness" || w == "disgust" || w == "contempt" || w == "fear" ||
      w == "anger" || w == "repression" || w == "negative")
    return kClassNegative;
  throw DataError("unknown emotion label: '" + raw + "'");
}

std::string manifest_line(const ManifestEntry& e) {
  std::ostringstream os;
  os << e.sample_id << ',' << e.subject_id << ',' << e.dataset << ','
     << e.frames_dir << ',' << e.onset << ','
     << (e.apex ? std::to_string(*e.apex) : std::string()) << ',' << e.offset
     << ',' << e.raw_label << ',' << e.label << ',' << e.landmarks_path;
  return os.str();
}

Manifest load_manifest(const std::string& path) {
  const std::string text = read_text_file(path, "manifest");
  Manifest m;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  std::vector<std::string> seen_ids;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != kManifestHeader)
        throw DataError("manifest " + path + " line 1: bad header (expected '" +
                        kManifestHeader + "')");
      continue;
    }
    if (line.empty()) continue;
    const std::string where = "manifest " + path + " line " +
                              std::to_string(line_no);
    const auto fields = split_csv(line);
    if (fields.size() != 10)
      throw DataError(where + ": expected 10 fields, got " +
                      std::to_string(fields.size()));
    ManifestEntry e;
    e.sample_id = fields[0];
    e.subject_id = fields[1];
    e.dataset = fields[2];
    e.frames_dir = fields[3];
    e.onset = parse_int(fields[4], where + " onset");
    if (!fields[5].empty()) e.apex = parse_int(fields[5], where + " apex");
    e.offset = parse_int(fields[6], where + " offset");
    e.raw_label = fields[7];
    e.label = parse_int(fields[8], where + " class");
    e.landmarks_path = fields[9];

    if (e.sample_id.empty()) throw DataError(where + ": empty sample_id");
    if (std::find(seen_ids.begin(), seen_ids.end(), e.sample_id) !=
        seen_ids.end())
      throw DataError(where + ": duplicate sample_id '" + e.sample_id + "'");
    seen_ids.push_back(e.sample_id);
    if (std::find(std::begin(kDatasets), std::end(kDatasets), e.dataset) ==
        std::end(kDatasets))
      throw DataError(where + ": unknown dataset tag '" + e.dataset + "'");
    if (e.onset < 0 || e.offset < e.onset)
      throw DataError(where + ": need 0 <= onset <= offset, got onset=" +
                      std::to_string(e.onset) + " offset=" +
                      std::to_string(e.offset));
    if (e.apex && (*e.apex < e.onset || *e.apex > e.offset))
      throw DataError(where + ": apex " + std::to_string(*e.apex) +
                      " outside [onset, offset]");
    if (e.label < 0 || e.label >= kNumClasses)
      throw DataError(where + ": class " + std::to_string(e.label) +
                      " out of range");
    if (map_label(e.raw_label) != e.label)
      throw DataError(where + ": class " + std::to_string(e.label) +
                      " contradicts raw label '" + e.raw_label + "' (maps to " +
                      std::to_string(map_label(e.raw_label)) + ")");
    m.entries.push_back(std::move(e));
  }
  if (line_no == 0) throw DataError("manifest " + path + ": empty file");
  return m;
}

void save_manifest(const Manifest& m, const std::string& path) {
  std::string text = std::string(kManifestHeader) + "\n";
  for (const ManifestEntry& e : m.entries) text += manifest_line(e) + "\n";
  write_text_file(text, path, "manifest");
}

// --- loss -------------------------------------------------------------------

std::array<double, 3> class_weights(const std::array<long long, 3>& counts) {
  const long long total = counts[0] + counts[1] + counts[2];
  std::array<double, 3> w{};
  for (int c = 0; c < kNumClasses; ++c) {
    if (counts[c] <= 0)
      throw DataError(std::string("class_weights: class ") + kClassNames[c] +
                      " has no samples");
    w[static_cast<std::size_t>(c)] =
        static_cast<double>(total) /
        (static_cast<double>(kNumClasses) * static_cast<double>(counts[c]));
  }
  return w;
}

std::array<double, 3> class_weights(const std::vector<int>& labels) {
  std::array<long long, 3> counts{};
  for (int y : labels) {
    if (y < 0 || y >= kNumClasses)
      throw DataError("class_weights: label " + std::to_string(y) +
                      " out of range");
    ++counts[static_cast<std::size_t>(y)];
  }
  return class_weights(counts);
}

Tensor weighted_cross_entropy(const Tensor& logits,
                              const std::vector<int>& labels,
                              const std::array<double, 3>& weights) {
  if (logits.rank() != 2 || logits.dim(1) != kNumClasses)
    throw ShapeError("weighted_cross_entropy: logits must be [n, 3], got " +
                     shape_str(logits.shape()));
  const int n = logits.dim(0);
  if (static_cast<int>(labels.size()) != n)
    throw ShapeError("weighted_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " logit rows");
  // -w[y_i] picked out by a one-hot mask so the whole loss stays inside the
  // autodiff graph
  std::vector<double> mask(static_cast<std::size_t>(n) * kNumClasses, 0.0);
  for (int i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= kNumClasses)
      throw DataError("weighted_cross_entropy: label " + std::to_string(y) +
                      " out of range");
    mask[static_cast<std::size_t>(i) * kNumClasses + y] =
        weights[static_cast<std::size_t>(y)];
  }
  Tensor m({n, kNumClasses}, std::move(mask));
  Tensor picked = mul(log_softmax_rows(logits), m);
  return scale(sum_all(picked), -1.0 / n);
}

// --- training ---------------------------------------------------------------

void TrainConfig::validate() const {
  // zero learning rate and zero epochs are legal boundary configs: both must
  // leave parameters bit-identical
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("train config: learning_rate must be >= 0");
  if (max_epochs < 0) throw ConfigError("train config: max_epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0))
    throw ConfigError("train config: beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("train config: beta2 must be in [0, 1)");
  if (!(epsilon > 0.0))
    throw ConfigError("train config: epsilon must be > 0");
}

std::string train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["learning_rate"] = cfg.learning_rate;
  j["max_epochs"] = cfg.max_epochs;
  j["batch_size"] = cfg.batch_size;
  j["seed"] = cfg.seed;
  j["beta1"] = cfg.beta1;
  j["beta2"] = cfg.beta2;
  j["epsilon"] = cfg.epsilon;
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config JSON: ") + e.what());
  }
  TrainConfig cfg;
  try {
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.max_epochs = j.value("max_epochs", cfg.max_epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.beta1 = j.value("beta1", cfg.beta1);
    cfg.beta2 = j.value("beta2", cfg.beta2);
    cfg.epsilon = j.value("epsilon", cfg.epsilon);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config JSON: ") + e.what());
  }
  return cfg;
}

namespace {

double parameter_norm(const std::vector<Tensor>& params) {
  double sq = 0.0;
  for (const Tensor& p : params)
    for (double v : p.data()) sq += v * v;
  return std::sqrt(sq);
}

}  // namespace

std::vector<double> fit(HTNet& model, const std::vector<TrainSample>& train,
                        const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw DataError("fit: empty training set");
  std::vector<int> labels;
  labels.reserve(train.size());
  for (const TrainSample& s : train) labels.push_back(s.label);
  const std::array<double, 3> weights = class_weights(labels);

  std::vector<Tensor>& params = model.params().tensors();
  std::vector<std::vector<double>> moment1(params.size()), moment2(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    moment1[i].assign(static_cast<std::size_t>(params[i].size()), 0.0);
    moment2[i].assign(static_cast<std::size_t>(params[i].size()), 0.0);
  }

  const int n = static_cast<int>(train.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed);

  std::vector<double> curve;
  curve.reserve(static_cast<std::size_t>(cfg.max_epochs));
  long long step = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (int b0 = 0; b0 < n; b0 += cfg.batch_size) {
      const int bsz = std::min(cfg.batch_size, n - b0);
      for (Tensor& p : params) p.zero_grad();
      double batch_loss = 0.0;
      for (int k = b0; k < b0 + bsz; ++k) {
        const TrainSample& s = train[static_cast<std::size_t>(
            order[static_cast<std::size_t>(k)])];
        Tensor logits = model.forward(s.input);
        Tensor loss = weighted_cross_entropy(logits, {s.label}, weights);
        // per-sample backward keeps only one graph alive at a time; the 1/bsz
        // scale makes the accumulated gradient the batch mean
        backward(scale(loss, 1.0 / bsz));
        batch_loss += loss.item();
      }
      batch_loss /= bsz;
      const int batch_index = b0 / cfg.batch_size;
      if (!std::isfinite(batch_loss))
        throw NumericError(
            "fit: non-finite loss at epoch " + std::to_string(epoch) +
            ", batch " + std::to_string(batch_index) + " (parameter norm " +
            std::to_string(parameter_norm(params)) + ")");
      ++step;
      const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      for (std::size_t i = 0; i < params.size(); ++i) {
        std::span<double> p = params[i].mutable_data();
        std::span<const double> g = params[i].grad();
        std::vector<double>& m1 = moment1[i];
        std::vector<double>& m2 = moment2[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
          m1[j] = cfg.beta1 * m1[j] + (1.0 - cfg.beta1) * g[j];
          m2[j] = cfg.beta2 * m2[j] + (1.0 - cfg.beta2) * g[j] * g[j];
          const double mhat = m1[j] / bias1;
          const double vhat = m2[j] / bias2;
          p[j] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
        }
      }
      epoch_loss += batch_loss * bsz;
    }
    curve.push_back(epoch_loss / n);
    log::debug("fit: epoch " + std::to_string(epoch) + " mean loss " +
               std::to_string(curve.back()));
  }
  return curve;
}

int predict_class(const Tensor& logits) {
  if (logits.size() < 1) throw ShapeError("predict_class: empty logits");
  std::span<const double> row = logits.data();
  int best = 0;
  for (int c = 1; c < static_cast<int>(row.size()); ++c)
    if (row[static_cast<std::size_t>(c)] > row[static_cast<std::size_t>(best)])
      best = c;
  return best;
}

// --- LOSO protocol ----------------------------------------------------------

std::vector<Fold> loso_split(const Manifest& m) {
  std::vector<Fold> folds;
  auto fold_of = [&](const ManifestEntry& e) -> Fold& {
    for (Fold& f : folds)
      if (f.dataset == e.dataset && f.subject_id == e.subject_id) return f;
    folds.push_back(Fold{e.dataset, e.subject_id, {}, {}});
    return folds.back();
  };
  for (std::size_t i = 0; i < m.entries.size(); ++i)
    fold_of(m.entries[i]).test_indices.push_back(static_cast<int>(i));
  if (folds.size() < 2)
    throw DataError("leave-one-subject-out needs at least 2 distinct subjects, "
                    "manifest has " + std::to_string(folds.size()));
  for (Fold& f : folds)
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
      const ManifestEntry& e = m.entries[i];
      if (e.dataset != f.dataset || e.subject_id != f.subject_id)
        f.train_indices.push_back(static_cast<int>(i));
    }
  return folds;
}

// --- metrics ----------------------------------------------------------------

long long Confusion::total() const {
  long long t = 0;
  for (const auto& row : counts)
    for (long long v : row) t += v;
  return t;
}

void Confusion::add(int true_class, int predicted_class, long long n) {
  if (true_class < 0 || true_class >= kNumClasses || predicted_class < 0 ||
      predicted_class >= kNumClasses)
    throw ContractError("confusion: class index out of range");
  counts[static_cast<std::size_t>(true_class)]
        [static_cast<std::size_t>(predicted_class)] += n;
}

Confusion& Confusion::operator+=(const Confusion& other) {
  for (int t = 0; t < kNumClasses; ++t)
    for (int p = 0; p < kNumClasses; ++p)
      counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)] +=
          other.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  return *this;
}

double uf1(const Confusion& c) {
  if (c.total() == 0) throw DataError("uf1: all-zero confusion matrix");
  double sum = 0.0;
  for (int k = 0; k < kNumClasses; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    long long tp = c.counts[ku][ku], fp = 0, fn = 0;
    for (int o = 0; o < kNumClasses; ++o) {
      if (o == k) continue;
      fp += c.counts[static_cast<std::size_t>(o)][ku];
      fn += c.counts[ku][static_cast<std::size_t>(o)];
    }
    const long long denom = 2 * tp + fp + fn;
    // a class with no true or predicted samples contributes F1 = 0
    sum += denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) /
                                  static_cast<double>(denom);
  }
  return sum / kNumClasses;
}

double uar(const Confusion& c) {
  if (c.total() == 0) throw DataError("uar: all-zero confusion matrix");
  double sum = 0.0;
  for (int k = 0; k < kNumClasses; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    long long n_k = 0;
    for (long long v : c.counts[ku]) n_k += v;
    if (n_k == 0)
      throw DataError(std::string("uar: class ") + kClassNames[k] +
                      " has no true samples");
    sum += static_cast<double>(c.counts[ku][ku]) / static_cast<double>(n_k);
  }
  return sum / kNumClasses;
}

// --- evaluation -------------------------------------------------------------

EvalReport aggregate_folds(std::vector<FoldReport> folds,
                           const ModelConfig& mcfg, const TrainConfig& tcfg) {
  if (folds.empty()) throw DataError("aggregate_folds: no folds");
  EvalReport r;
  r.model_config = mcfg;
  r.train_config = tcfg;
  for (const FoldReport& f : folds) r.pooled += f.confusion;
  if (r.pooled.total() == 0)
    throw DataError("aggregate_folds: no samples in any fold");
  r.pooled_uf1 = uf1(r.pooled);
  r.pooled_uar = uar(r.pooled);
  for (int k = 0; k < kNumClasses; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    long long tp = r.pooled.counts[ku][ku], fp = 0, fn = 0;
    for (int o = 0; o < kNumClasses; ++o) {
      if (o == k) continue;
      fp += r.pooled.counts[static_cast<std::size_t>(o)][ku];
      fn += r.pooled.counts[ku][static_cast<std::size_t>(o)];
    }
    if (tp == 0 && fp == 0 && fn == 0)
      r.flags.push_back(std::string("pooled: class ") + kClassNames[k] +
                        " has no true or predicted samples; its F1 term is 0");
  }

  // per-dataset metrics slice the pooled counts by each fold's dataset tag
  for (const FoldReport& f : folds) {
    auto it = std::find_if(r.per_dataset.begin(), r.per_dataset.end(),
                           [&](const auto& p) { return p.first == f.dataset; });
    if (it == r.per_dataset.end()) {
      r.per_dataset.emplace_back(f.dataset, DatasetMetrics{});
      it = std::prev(r.per_dataset.end());
    }
    it->second.confusion += f.confusion;
  }
  for (auto& [tag, metrics] : r.per_dataset) {
    metrics.uf1 = uf1(metrics.confusion);
    bool all_rows_nonzero = true;
    for (int k = 0; k < kNumClasses; ++k) {
      long long n_k = 0;
      for (long long v : metrics.confusion.counts[static_cast<std::size_t>(k)])
        n_k += v;
      if (n_k == 0) {
        all_rows_nonzero = false;
        r.flags.push_back("dataset " + tag + ": class " +
                          kClassNames[k] +
                          " has no true samples; UAR omitted");
      }
    }
    if (all_rows_nonzero) metrics.uar = uar(metrics.confusion);
  }
  r.folds = std::move(folds);
  return r;
}

namespace {

FoldReport run_fold(const Manifest& m, const std::vector<Tensor>& inputs,
                    const ModelConfig& mcfg, const TrainConfig& tcfg,
                    const Fold& fold, std::size_t fold_index) {
  // fresh initialization per fold, deterministically derived from the run seed
  const std::uint64_t fold_seed = tcfg.seed + fold_index;
  HTNet model(mcfg, fold_seed);
  std::vector<TrainSample> train;
  train.reserve(fold.train_indices.size());
  for (int idx : fold.train_indices)
    train.push_back(TrainSample{inputs[static_cast<std::size_t>(idx)],
                                m.entries[static_cast<std::size_t>(idx)].label});
  TrainConfig fold_cfg = tcfg;
  fold_cfg.seed = fold_seed;
  fit(model, train, fold_cfg);

  FoldReport rep;
  rep.dataset = fold.dataset;
  rep.subject_id = fold.subject_id;
  NoGradGuard no_grad;
  for (int idx : fold.test_indices) {
    const ManifestEntry& e = m.entries[static_cast<std::size_t>(idx)];
    Tensor logits = model.forward(inputs[static_cast<std::size_t>(idx)]);
    SampleResult s;
    s.sample_id = e.sample_id;
    s.true_class = e.label;
    s.predicted_class = predict_class(logits);
    for (int c = 0; c < kNumClasses; ++c)
      s.logits[static_cast<std::size_t>(c)] =
          logits.data()[static_cast<std::size_t>(c)];
    rep.confusion.add(s.true_class, s.predicted_class);
    rep.samples.push_back(std::move(s));
  }
  return rep;
}

}  // namespace

EvalReport evaluate_loso(const Manifest& m, const std::vector<Tensor>& inputs,
                         const ModelConfig& mcfg, const TrainConfig& tcfg,
                         int jobs) {
  mcfg.validate();
  tcfg.validate();
  if (inputs.size() != m.entries.size())
    throw ShapeError("evaluate_loso: " + std::to_string(inputs.size()) +
                     " inputs for " + std::to_string(m.entries.size()) +
                     " manifest entries");
  const std::vector<Fold> folds = loso_split(m);
  std::vector<FoldReport> reports(folds.size());
  std::vector<std::exception_ptr> errors(folds.size());

  auto run_one = [&](std::size_t i) {
    const std::string fold_id = folds[i].dataset + "/" + folds[i].subject_id;
    try {
      log::info("eval-loso: fold " + std::to_string(i + 1) + "/" +
                std::to_string(folds.size()) + " (" + fold_id + ")");
      reports[i] = run_fold(m, inputs, mcfg, tcfg, folds[i], i);
    } catch (const NumericError& e) {
      errors[i] = std::make_exception_ptr(
          NumericError("fold " + fold_id + ": " + e.what()));
    } catch (const Error& e) {
      errors[i] = std::make_exception_ptr(
          DataError("fold " + fold_id + ": " + e.what()));
    } catch (const std::exception& e) {
      errors[i] = std::make_exception_ptr(
          Error("fold " + fold_id + ": " + e.what()));
    }
  };

  const int workers =
      std::clamp(jobs, 1, static_cast<int>(folds.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < folds.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        while (true) {
          const std::size_t i = next.fetch_add(1);
          if (i >= folds.size()) return;
          run_one(i);
        }
      });
    for (std::thread& t : pool) t.join();
  }
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
  return aggregate_folds(std::move(reports), mcfg, tcfg);
}

// --- report files -----------------------------------------------------------

namespace {

constexpr const char* kReportSchema = "htnet-eval-report/1";

nlohmann::json confusion_to_json(const Confusion& c) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : c.counts) rows.push_back(row);
  return rows;
}

Confusion confusion_from_json(const nlohmann::json& j) {
  Confusion c;
  if (!j.is_array() || j.size() != 3)
    throw DataError("report: confusion matrix must be 3x3");
  for (std::size_t t = 0; t < 3; ++t) {
    if (!j[t].is_array() || j[t].size() != 3)
      throw DataError("report: confusion matrix must be 3x3");
    for (std::size_t p = 0; p < 3; ++p)
      c.counts[t][p] = j[t][p].get<long long>();
  }
  return c;
}

}  // namespace

std::string report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["schema"] = kReportSchema;
  j["seed"] = r.train_config.seed;
  j["model_config"] = nlohmann::json::parse(model_config_to_json(r.model_config));
  j["train_config"] = nlohmann::json::parse(train_config_to_json(r.train_config));
  j["pooled"]["uf1"] = r.pooled_uf1;
  j["pooled"]["uar"] = r.pooled_uar;
  j["pooled"]["confusion"] = confusion_to_json(r.pooled);
  j["per_dataset"] = nlohmann::json::array();
  for (const auto& [tag, metrics] : r.per_dataset) {
    nlohmann::json d;
    d["dataset"] = tag;
    d["uf1"] = metrics.uf1;
    if (metrics.uar)
      d["uar"] = *metrics.uar;
    else
      d["uar"] = nullptr;
    d["confusion"] = confusion_to_json(metrics.confusion);
    j["per_dataset"].push_back(std::move(d));
  }
  j["folds"] = nlohmann::json::array();
  for (const FoldReport& f : r.folds) {
    nlohmann::json jf;
    jf["dataset"] = f.dataset;
    jf["subject_id"] = f.subject_id;
    jf["confusion"] = confusion_to_json(f.confusion);
    jf["samples"] = nlohmann::json::array();
    for (const SampleResult& s : f.samples) {
      nlohmann::json js;
      js["sample_id"] = s.sample_id;
      js["true_class"] = s.true_class;
      js["predicted_class"] = s.predicted_class;
      js["logits"] = s.logits;
      jf["samples"].push_back(std::move(js));
    }
    j["folds"].push_back(std::move(jf));
  }
  j["flags"] = r.flags;
  return j.dump(2);
}

EvalReport report_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("report JSON: ") + e.what());
  }
  try {
    if (j.value("schema", std::string()) != kReportSchema)
      throw DataError("report JSON: missing or unsupported schema field");
    EvalReport r;
    r.model_config = model_config_from_json(j.at("model_config").dump());
    r.train_config = train_config_from_json(j.at("train_config").dump());
    r.pooled_uf1 = j.at("pooled").at("uf1").get<double>();
    r.pooled_uar = j.at("pooled").at("uar").get<double>();
    r.pooled = confusion_from_json(j.at("pooled").at("confusion"));
    for (const auto& d : j.at("per_dataset")) {
      DatasetMetrics metrics;
      metrics.uf1 = d.at("uf1").get<double>();
      if (!d.at("uar").is_null()) metrics.uar = d.at("uar").get<double>();
      metrics.confusion = confusion_from_json(d.at("confusion"));
      r.per_dataset.emplace_back(d.at("dataset").get<std::string>(),
                                 std::move(metrics));
    }
    for (const auto& jf : j.at("folds")) {
      FoldReport f;
      f.dataset = jf.at("dataset").get<std::string>();
      f.subject_id = jf.at("subject_id").get<std::string>();
      f.confusion = confusion_from_json(jf.at("confusion"));
      for (const auto& js : jf.at("samples")) {
        SampleResult s;
        s.sample_id = js.at("sample_id").get<std::string>();
        s.true_class = js.at("true_class").get<int>();
        s.predicted_class = js.at("predicted_class").get<int>();
        const auto& lg = js.at("logits");
        if (!lg.is_array() || lg.size() != 3)
          throw DataError("report JSON: logits must have 3 entries");
        for (std::size_t c = 0; c < 3; ++c) s.logits[c] = lg[c].get<double>();
        f.samples.push_back(std::move(s));
      }
      r.folds.push_back(std::move(f));
    }
    r.flags = j.value("flags", std::vector<std::string>{});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("report JSON: ") + e.what());
  }
}

std::string confusion_to_csv(const Confusion& c) {
  std::ostringstream os;
  os << "true\\pred";
  for (const char* name : kClassNames) os << ',' << name;
  os << '\n';
  for (int t = 0; t < kNumClasses; ++t) {
    os << kClassNames[t];
    for (int p = 0; p < kNumClasses; ++p)
      os << ','
         << c.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
    os << '\n';
  }
  return os.str();
}

}  // namespace htnet

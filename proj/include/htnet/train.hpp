// Weighted cross-entropy training, leave-one-subject-out evaluation, and the
// UF1/UAR metrics, plus the manifest CSV and report JSON formats they share.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "htnet/model.hpp"
#include "htnet/tensor.hpp"

namespace htnet {

inline constexpr int kNumClasses = 3;
inline constexpr int kClassNegative = 0;
inline constexpr int kClassPositive = 1;
inline constexpr int kClassSurprise = 2;

// --- manifest --------------------------------------------------------------

struct ManifestEntry {
  std::string sample_id;
  std::string subject_id;
  std::string dataset;  // SAMM | SMIC | CASME2 | CASME3 | SYNTH
  std::string frames_dir;
  int onset = 0;
  std::optional<int> apex;  // empty field = "spot it"
  int offset = 0;
  std::string raw_label;
  int label = 0;  // 0 negative, 1 positive, 2 surprise
  std::string landmarks_path;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
};

// Maps a raw emotion word (case-insensitive) to its 3-class label; accepts the
// literal class names as well. Unknown words -> DataError.
int map_label(const std::string& raw);

extern const char* const kManifestHeader;

Manifest load_manifest(const std::string& path);
void save_manifest(const Manifest& m, const std::string& path);
std::string manifest_line(const ManifestEntry& e);

// --- loss ------------------------------------------------------------------

// Inverse-frequency weights w_c = N / (C * n_c); balanced counts give all
// ones. A class with zero samples -> DataError.
std::array<double, 3> class_weights(const std::array<long long, 3>& counts);
std::array<double, 3> class_weights(const std::vector<int>& labels);

// Batch-mean weighted cross-entropy: mean_i of -w[y_i] * log softmax(x_i)[y_i]
// over the rows of logits [n, 3]. Differentiable.
Tensor weighted_cross_entropy(const Tensor& logits,
                              const std::vector<int>& labels,
                              const std::array<double, 3>& weights);

// --- training --------------------------------------------------------------

struct TrainConfig {
  double learning_rate = 5e-5;
  int max_epochs = 800;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double beta1 = 0.9;    // first-moment decay
  double beta2 = 0.999;  // second-moment decay
  double epsilon = 1e-8;

  void validate() const;  // ConfigError on out-of-range fields
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

struct TrainSample {
  Tensor input;  // [in_channels, image_size, image_size], no grad
  int label = 0;
};

// Adam with bias correction; per-epoch seeded shuffles; class weights from the
// training labels. Returns the per-epoch mean loss curve. Non-finite loss ->
// NumericError naming the epoch, batch and parameter norm.
std::vector<double> fit(HTNet& model, const std::vector<TrainSample>& train,
                        const TrainConfig& cfg);

// Argmax class of a [1, num_classes] logits row (first max wins).
int predict_class(const Tensor& logits);

// --- LOSO protocol ---------------------------------------------------------

struct Fold {
  std::string dataset;
  std::string subject_id;
  std::vector<int> train_indices;
  std::vector<int> test_indices;
};

// One fold per distinct (dataset, subject) pair, ordered by first appearance.
// Fewer than 2 subjects -> DataError.
std::vector<Fold> loso_split(const Manifest& m);

// --- metrics ---------------------------------------------------------------

struct Confusion {
  // counts[true_class][predicted_class]
  std::array<std::array<long long, 3>, 3> counts{};

  long long total() const;
  void add(int true_class, int predicted_class, long long n = 1);
  Confusion& operator+=(const Confusion& other);
};

// Mean over classes of 2TP/(2TP+FP+FN); an absent class (TP=FP=FN=0)
// contributes 0. All-zero matrix -> DataError.
double uf1(const Confusion& c);
// Mean over classes of TP_c/n_c; any class with n_c == 0 -> DataError.
double uar(const Confusion& c);

// --- evaluation ------------------------------------------------------------

struct SampleResult {
  std::string sample_id;
  int true_class = 0;
  int predicted_class = 0;
  std::array<double, 3> logits{};
};

struct FoldReport {
  std::string dataset;
  std::string subject_id;
  std::vector<SampleResult> samples;
  Confusion confusion;
};

struct DatasetMetrics {
  Confusion confusion;
  double uf1 = 0.0;
  std::optional<double> uar;  // absent when a class has no true samples
};

struct EvalReport {
  Confusion pooled;
  double pooled_uf1 = 0.0;
  double pooled_uar = 0.0;
  std::vector<std::pair<std::string, DatasetMetrics>> per_dataset;
  std::vector<FoldReport> folds;
  std::vector<std::string> flags;  // empty-class and other footnotes
  ModelConfig model_config;
  TrainConfig train_config;
};

// Pools fold confusions into the aggregate report (metrics computed once over
// the pooled counts, per-dataset metrics over that dataset's slice).
EvalReport aggregate_folds(std::vector<FoldReport> folds,
                           const ModelConfig& mcfg, const TrainConfig& tcfg);

// Full LOSO run: one freshly initialized model per fold, trained on the fold's
// train split and scored on the held-out subject. inputs[i] is the composite
// flow tensor for manifest entry i. jobs > 1 trains folds in parallel.
EvalReport evaluate_loso(const Manifest& m, const std::vector<Tensor>& inputs,
                         const ModelConfig& mcfg, const TrainConfig& tcfg,
                         int jobs = 1);

// --- report files ----------------------------------------------------------

std::string report_to_json(const EvalReport& r);
EvalReport report_from_json(const std::string& text);  // DataError on schema
std::string confusion_to_csv(const Confusion& c);

}  // namespace htnet

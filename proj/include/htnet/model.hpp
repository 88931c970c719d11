// Hierarchical transformer: patch embedding, per-block local self-attention,
// block aggregation between levels, and an MLP classification head.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "htnet/tensor.hpp"

namespace htnet {

struct ModelConfig {
  int image_size = 28;
  int patch_size = 1;
  int bottom_block = 7;  // pixels per block side at the finest level
  int levels = 3;
  std::vector<int> dims = {64, 128, 256};
  std::vector<int> heads = {4, 4, 4};
  std::vector<int> layers = {2, 2, 8};
  int num_classes = 3;
  int ffn_expansion = 4;
  int head_hidden = 256;
  int in_channels = 3;

  // throws ConfigError when any geometry or divisibility rule is violated
  void validate() const;

  // blocks per side at a level: 4 -> 2 -> 1 under defaults
  int grid_side(int level) const;
  // token-lattice side at a level: 28 -> 14 -> 7 under defaults
  int spatial_side(int level) const;
  // tokens inside one block; identical at every level
  int tokens_per_block() const;
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

// Ordered collection of named parameter tensors. Registration order is the
// canonical order used by initialization and the checkpoint format.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Shape shape);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  int total_size() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

// Parameter views (shared tensor handles) for the free-function operators.
struct AttentionParams {
  Tensor wq, wk, wv, wo;  // each [d, d], no bias
};

struct LayerParams {
  Tensor ln1_gamma, ln1_beta;
  AttentionParams attn;
  Tensor ln2_gamma, ln2_beta;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

struct AggParams {
  Tensor conv_weight, conv_bias;  // [d_next, d, 3, 3], [d_next]
  Tensor ln_gamma, ln_beta;       // [d_next]
};

// Multi-head scaled dot-product attention applied independently inside each
// of `blocks` equal groups of rows; no token attends across a group boundary.
// When attn_out is non-null every per-block, per-head attention matrix is
// appended to it.
Tensor local_msa(const Tensor& tokens, int blocks, int heads,
                 const AttentionParams& p,
                 std::vector<Tensor>* attn_out = nullptr);

// Pre-norm residual transformer layer:
//   y' = y + MSA(LN(y)); y'' = y' + FFN(LN(y')), FFN = relu(xW1+b1)W2+b2.
Tensor transformer_layer(const Tensor& tokens, int blocks, int heads,
                         const LayerParams& p,
                         std::vector<Tensor>* attn_out = nullptr);

// conv3x3(stride 1, pad 1) -> layer norm over channels at each spatial site
// -> maxpool3x3(stride 2, pad 1); halves each spatial side, widens channels.
Tensor block_aggregate(const Tensor& grid, const AggParams& p);

class HTNet {
 public:
  HTNet(ModelConfig cfg, std::uint64_t seed);

  HTNet(const HTNet&) = delete;
  HTNet& operator=(const HTNet&) = delete;
  HTNet(HTNet&&) = default;
  HTNet& operator=(HTNet&&) = default;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // x: [in_channels, image_size, image_size] -> logits [1, num_classes]
  Tensor forward(const Tensor& x) const;

  // tokens after the level-0 transformer layers, before any aggregation;
  // rows are block-major so block b owns rows [b*n, (b+1)*n)
  Tensor level0_features(const Tensor& x) const;

  // forward pass that also collects every attention matrix
  Tensor forward_collect_attention(const Tensor& x,
                                   std::vector<Tensor>& attn_out) const;

 private:
  Tensor run(const Tensor& x, int stop_after_level,
             std::vector<Tensor>* attn_out) const;

  ModelConfig cfg_;
  ParamStore store_;
  Tensor patch_weight_, patch_bias_;
  std::vector<Tensor> pos_embeds_;
  std::vector<std::vector<LayerParams>> level_layers_;
  std::vector<AggParams> aggs_;
  Tensor head_w1_, head_b1_, head_w2_, head_b2_;
};

// Checkpoint container: "HTCK" magic, version, embedded config JSON, then the
// parameter tensors in registry order. Round-trips bit-exactly.
void save_checkpoint(const HTNet& model, const std::string& path);
HTNet load_checkpoint(const std::string& path);

}  // namespace htnet

#include "htnet/model.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "htnet/binio.hpp"
#include "htnet/error.hpp"

namespace htnet {

// --- ModelConfig ------------------------------------------------------------

void ModelConfig::validate() const {
  std::ostringstream err;
  auto fail = [&err](const std::string& msg) { throw ConfigError(msg); };

  if (image_size < 1 || patch_size < 1 || bottom_block < 1 || levels < 1 ||
      num_classes < 2 || ffn_expansion < 1 || head_hidden < 1 ||
      in_channels < 1)
    fail("model config: all sizes must be positive and num_classes >= 2");
  if (static_cast<int>(dims.size()) != levels ||
      static_cast<int>(heads.size()) != levels ||
      static_cast<int>(layers.size()) != levels)
    fail("model config: dims/heads/layers must each have one entry per level (" +
         std::to_string(levels) + ")");
  if (image_size % bottom_block != 0)
    fail("model config: image_size " + std::to_string(image_size) +
         " not divisible by bottom_block " + std::to_string(bottom_block));
  if (bottom_block % patch_size != 0)
    fail("model config: bottom_block " + std::to_string(bottom_block) +
         " not divisible by patch_size " + std::to_string(patch_size));
  const int grid = image_size / bottom_block;
  if ((grid & (grid - 1)) != 0)
    fail("model config: blocks per side (" + std::to_string(grid) +
         ") must be a power of two");
  int expected_levels = 1;
  for (int g = grid; g > 1; g /= 2) ++expected_levels;
  if (levels != expected_levels)
    fail("model config: levels must be log2(image_size/bottom_block)+1 = " +
         std::to_string(expected_levels) + ", got " + std::to_string(levels));
  for (int l = 0; l < levels; ++l) {
    if (dims[l] < 1 || heads[l] < 1 || layers[l] < 1)
      fail("model config: dims/heads/layers entries must be positive");
    if (dims[l] % heads[l] != 0)
      fail("model config: dims[" + std::to_string(l) + "] = " +
           std::to_string(dims[l]) + " not divisible by heads[" +
           std::to_string(l) + "] = " + std::to_string(heads[l]));
    if (l > 0 && dims[l] <= dims[l - 1])
      fail("model config: dims must be strictly increasing across levels");
  }
}

int ModelConfig::grid_side(int level) const {
  return (image_size / bottom_block) >> level;
}

int ModelConfig::spatial_side(int level) const {
  return (image_size / patch_size) >> level;
}

int ModelConfig::tokens_per_block() const {
  const int side = bottom_block / patch_size;
  return side * side;
}

std::string model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["image_size"] = cfg.image_size;
  j["patch_size"] = cfg.patch_size;
  j["bottom_block"] = cfg.bottom_block;
  j["levels"] = cfg.levels;
  j["dims"] = cfg.dims;
  j["heads"] = cfg.heads;
  j["layers"] = cfg.layers;
  j["num_classes"] = cfg.num_classes;
  j["ffn_expansion"] = cfg.ffn_expansion;
  j["head_hidden"] = cfg.head_hidden;
  j["in_channels"] = cfg.in_channels;
  return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config JSON: ") + e.what());
  }
  ModelConfig cfg;
  try {
    cfg.image_size = j.value("image_size", cfg.image_size);
    cfg.patch_size = j.value("patch_size", cfg.patch_size);
    cfg.bottom_block = j.value("bottom_block", cfg.bottom_block);
    cfg.levels = j.value("levels", cfg.levels);
    cfg.dims = j.value("dims", cfg.dims);
    cfg.heads = j.value("heads", cfg.heads);
    cfg.layers = j.value("layers", cfg.layers);
    cfg.num_classes = j.value("num_classes", cfg.num_classes);
    cfg.ffn_expansion = j.value("ffn_expansion", cfg.ffn_expansion);
    cfg.head_hidden = j.value("head_hidden", cfg.head_hidden);
    cfg.in_channels = j.value("in_channels", cfg.in_channels);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config JSON: ") + e.what());
  }
  return cfg;
}

// --- ParamStore -------------------------------------------------------------

Tensor& ParamStore::add(const std::string& name, Shape shape) {
  if (has(name)) throw ContractError("duplicate parameter name: " + name);
  names_.push_back(name);
  tensors_.push_back(Tensor::zeros(std::move(shape), /*requires_grad=*/true));
  return tensors_.back();
}

Tensor& ParamStore::get(const std::string& name) {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return tensors_[i];
  throw ContractError("unknown parameter name: " + name);
}

const Tensor& ParamStore::get(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return tensors_[i];
  throw ContractError("unknown parameter name: " + name);
}

bool ParamStore::has(const std::string& name) const {
  for (const auto& n : names_)
    if (n == name) return true;
  return false;
}

int ParamStore::total_size() const {
  int total = 0;
  for (const auto& t : tensors_) total += t.size();
  return total;
}

// --- free-function operators ------------------------------------------------

Tensor local_msa(const Tensor& tokens, int blocks, int heads,
                 const AttentionParams& p, std::vector<Tensor>* attn_out) {
  if (tokens.rank() != 2)
    throw ShapeError("local_msa: tokens must be [rows, d], got " +
                     shape_str(tokens.shape()));
  const int rows = tokens.dim(0), d = tokens.dim(1);
  if (blocks < 1 || rows % blocks != 0)
    throw ShapeError("local_msa: " + std::to_string(rows) +
                     " rows do not split into " + std::to_string(blocks) +
                     " blocks");
  if (heads < 1 || d % heads != 0)
    throw ShapeError("local_msa: width " + std::to_string(d) +
                     " not divisible by " + std::to_string(heads) + " heads");
  const int n = rows / blocks, dh = d / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Tensor q = matmul(tokens, p.wq);
  const Tensor k = matmul(tokens, p.wk);
  const Tensor v = matmul(tokens, p.wv);

  std::vector<Tensor> block_ctx;
  block_ctx.reserve(static_cast<std::size_t>(blocks));
  for (int b = 0; b < blocks; ++b) {
    const int r0 = b * n, r1 = (b + 1) * n;
    const Tensor qb = slice_rows(q, r0, r1);
    const Tensor kb = slice_rows(k, r0, r1);
    const Tensor vb = slice_rows(v, r0, r1);
    std::vector<Tensor> head_ctx;
    head_ctx.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      const int c0 = h * dh, c1 = (h + 1) * dh;
      const Tensor qh = slice_cols(qb, c0, c1);
      const Tensor kh = slice_cols(kb, c0, c1);
      const Tensor vh = slice_cols(vb, c0, c1);
      const Tensor attn =
          softmax_rows(scale(matmul(qh, transpose(kh)), inv_scale));
      if (attn_out != nullptr) attn_out->push_back(attn);
      head_ctx.push_back(matmul(attn, vh));
    }
    block_ctx.push_back(heads == 1 ? head_ctx[0] : concat_cols(head_ctx));
  }
  const Tensor ctx = blocks == 1 ? block_ctx[0] : concat_rows(block_ctx);
  return matmul(ctx, p.wo);
}

Tensor transformer_layer(const Tensor& tokens, int blocks, int heads,
                         const LayerParams& p, std::vector<Tensor>* attn_out) {
  const Tensor normed1 = layer_norm(tokens, p.ln1_gamma, p.ln1_beta);
  const Tensor y1 =
      add(tokens, local_msa(normed1, blocks, heads, p.attn, attn_out));
  const Tensor normed2 = layer_norm(y1, p.ln2_gamma, p.ln2_beta);
  const Tensor hidden =
      relu(add_row_bias(matmul(normed2, p.ffn_w1), p.ffn_b1));
  const Tensor ffn = add_row_bias(matmul(hidden, p.ffn_w2), p.ffn_b2);
  return add(y1, ffn);
}

Tensor block_aggregate(const Tensor& grid, const AggParams& p) {
  if (grid.rank() != 3)
    throw ShapeError("block_aggregate: expected [channels, h, w], got " +
                     shape_str(grid.shape()));
  const int h = grid.dim(1), w = grid.dim(2);
  if (h % 2 != 0 || w % 2 != 0)
    throw GeometryError("block_aggregate: spatial sides must be even, got " +
                        shape_str(grid.shape()));
  const Tensor conv = conv2d_3x3(grid, p.conv_weight, p.conv_bias, 1, 1);
  // normalize the channel vector at each spatial site
  const Tensor sites = grid_to_tokens(conv, 1, 1);
  const Tensor normed = layer_norm(sites, p.ln_gamma, p.ln_beta);
  const Tensor back = tokens_to_grid(normed, 1, 1, h, w);
  return maxpool2d_3x3(back, 2, 1);
}

// --- HTNet ------------------------------------------------------------------

HTNet::HTNet(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  auto uniform_init = [&rng](Tensor& t, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.mutable_data()) v = dist(rng);
  };
  auto ones_init = [](Tensor& t) {
    for (double& v : t.mutable_data()) v = 1.0;
  };

  const int patch_feat = cfg_.in_channels * cfg_.patch_size * cfg_.patch_size;
  patch_weight_ = store_.add("patch_proj.weight", {patch_feat, cfg_.dims[0]});
  uniform_init(patch_weight_, patch_feat);
  patch_bias_ = store_.add("patch_proj.bias", {cfg_.dims[0]});

  const int n_tokens = cfg_.tokens_per_block();
  for (int l = 0; l < cfg_.levels; ++l) {
    const int d = cfg_.dims[l];
    pos_embeds_.push_back(
        store_.add("pos_embed.l" + std::to_string(l), {n_tokens, d}));
    level_layers_.emplace_back();
    for (int i = 0; i < cfg_.layers[l]; ++i) {
      const std::string prefix =
          "level" + std::to_string(l) + ".layer" + std::to_string(i) + ".";
      LayerParams lp;
      lp.ln1_gamma = store_.add(prefix + "ln1.gamma", {d});
      ones_init(lp.ln1_gamma);
      lp.ln1_beta = store_.add(prefix + "ln1.beta", {d});
      lp.attn.wq = store_.add(prefix + "attn.wq", {d, d});
      uniform_init(lp.attn.wq, d);
      lp.attn.wk = store_.add(prefix + "attn.wk", {d, d});
      uniform_init(lp.attn.wk, d);
      lp.attn.wv = store_.add(prefix + "attn.wv", {d, d});
      uniform_init(lp.attn.wv, d);
      lp.attn.wo = store_.add(prefix + "attn.wo", {d, d});
      uniform_init(lp.attn.wo, d);
      lp.ln2_gamma = store_.add(prefix + "ln2.gamma", {d});
      ones_init(lp.ln2_gamma);
      lp.ln2_beta = store_.add(prefix + "ln2.beta", {d});
      const int hidden = cfg_.ffn_expansion * d;
      lp.ffn_w1 = store_.add(prefix + "ffn.w1", {d, hidden});
      uniform_init(lp.ffn_w1, d);
      lp.ffn_b1 = store_.add(prefix + "ffn.b1", {hidden});
      lp.ffn_w2 = store_.add(prefix + "ffn.w2", {hidden, d});
      uniform_init(lp.ffn_w2, hidden);
      lp.ffn_b2 = store_.add(prefix + "ffn.b2", {d});
      level_layers_.back().push_back(std::move(lp));
    }
    if (l + 1 < cfg_.levels) {
      const std::string prefix = "agg" + std::to_string(l) + ".";
      AggParams ap;
      const int d_next = cfg_.dims[l + 1];
      ap.conv_weight = store_.add(prefix + "conv.weight", {d_next, d, 3, 3});
      uniform_init(ap.conv_weight, d * 9);
      ap.conv_bias = store_.add(prefix + "conv.bias", {d_next});
      ap.ln_gamma = store_.add(prefix + "ln.gamma", {d_next});
      ones_init(ap.ln_gamma);
      ap.ln_beta = store_.add(prefix + "ln.beta", {d_next});
      aggs_.push_back(std::move(ap));
    }
  }

  const int d_last = cfg_.dims[cfg_.levels - 1];
  head_w1_ = store_.add("head.w1", {d_last, cfg_.head_hidden});
  uniform_init(head_w1_, d_last);
  head_b1_ = store_.add("head.b1", {cfg_.head_hidden});
  head_w2_ = store_.add("head.w2", {cfg_.head_hidden, cfg_.num_classes});
  uniform_init(head_w2_, cfg_.head_hidden);
  head_b2_ = store_.add("head.b2", {cfg_.num_classes});
}

Tensor HTNet::run(const Tensor& x, int stop_after_level,
                  std::vector<Tensor>* attn_out) const {
  if (x.rank() != 3 || x.dim(0) != cfg_.in_channels ||
      x.dim(1) != cfg_.image_size || x.dim(2) != cfg_.image_size)
    throw ShapeError("forward: expected input " +
                     shape_str({cfg_.in_channels, cfg_.image_size,
                                cfg_.image_size}) +
                     ", got " + shape_str(x.shape()));

  const Tensor patches = patchify(x, cfg_.bottom_block, cfg_.patch_size);
  Tensor tokens = add_tiled_rows(
      add_row_bias(matmul(patches, patch_weight_), patch_bias_),
      pos_embeds_[0]);

  for (int l = 0; l < cfg_.levels; ++l) {
    if (l > 0) tokens = add_tiled_rows(tokens, pos_embeds_[l]);
    const int g = cfg_.grid_side(l);
    const int blocks = g * g;
    for (const LayerParams& lp : level_layers_[l])
      tokens = transformer_layer(tokens, blocks, cfg_.heads[l], lp, attn_out);
    if (l == stop_after_level) return tokens;
    if (l + 1 < cfg_.levels) {
      const int side = cfg_.spatial_side(l);
      const Tensor grid = tokens_to_grid(tokens, g, g, side / g, side / g);
      const Tensor next = block_aggregate(grid, aggs_[l]);
      tokens = grid_to_tokens(next, g / 2, g / 2);
    }
  }

  const Tensor pooled = mean_rows(tokens);
  const Tensor hidden = relu(add_row_bias(matmul(pooled, head_w1_), head_b1_));
  return add_row_bias(matmul(hidden, head_w2_), head_b2_);
}

Tensor HTNet::forward(const Tensor& x) const { return run(x, -1, nullptr); }

Tensor HTNet::level0_features(const Tensor& x) const {
  return run(x, 0, nullptr);
}

Tensor HTNet::forward_collect_attention(const Tensor& x,
                                        std::vector<Tensor>& attn_out) const {
  return run(x, -1, &attn_out);
}

// --- checkpoint -------------------------------------------------------------

void save_checkpoint(const HTNet& model, const std::string& path) {
  binio::Writer w;
  w.magic("HTCK");
  w.u32(1);
  const std::string cfg_json = model_config_to_json(model.config());
  w.u32(static_cast<std::uint32_t>(cfg_json.size()));
  w.bytes(cfg_json);
  const ParamStore& store = model.params();
  for (std::size_t i = 0; i < store.names().size(); ++i) {
    const std::string& name = store.names()[i];
    const Tensor& t = store.tensors()[i];
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d)
      w.u32(static_cast<std::uint32_t>(t.dim(d)));
    w.f64_array(t.data().data(), t.data().size());
  }
  w.save(path);
}

HTNet load_checkpoint(const std::string& path) {
  binio::Reader r(path);
  r.expect_magic("HTCK", "checkpoint");
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32("checkpoint version");
  if (version != 1)
    throw FormatError("checkpoint: unsupported version " +
                          std::to_string(version),
                      version_at);
  const std::uint32_t cfg_len = r.u32("checkpoint config length");
  const std::size_t cfg_at = r.offset();
  const std::string cfg_json = r.bytes(cfg_len, "checkpoint config");
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(cfg_json);
    cfg.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint: invalid config: ") + e.what(),
                      cfg_at);
  }

  HTNet model(cfg, /*seed=*/0);
  ParamStore& store = model.params();
  for (std::size_t i = 0; i < store.names().size(); ++i) {
    const std::string& expected = store.names()[i];
    Tensor& t = store.tensors()[i];
    std::size_t at = r.offset();
    const std::uint32_t name_len = r.u32("checkpoint tensor name length");
    const std::string name = r.bytes(name_len, "checkpoint tensor name");
    if (name != expected)
      throw FormatError("checkpoint: expected tensor '" + expected +
                            "', found '" + name + "'",
                        at);
    at = r.offset();
    const std::uint32_t rank = r.u32("checkpoint tensor rank");
    if (rank != static_cast<std::uint32_t>(t.rank()))
      throw FormatError("checkpoint: tensor '" + name + "' rank " +
                            std::to_string(rank) + ", expected " +
                            std::to_string(t.rank()),
                        at);
    for (int d = 0; d < t.rank(); ++d) {
      at = r.offset();
      const std::uint32_t dim = r.u32("checkpoint tensor dim");
      if (dim != static_cast<std::uint32_t>(t.dim(d)))
        throw FormatError("checkpoint: tensor '" + name + "' dim " +
                              std::to_string(d) + " is " +
                              std::to_string(dim) + ", expected " +
                              std::to_string(t.dim(d)),
                          at);
    }
    auto dst = t.mutable_data();
    r.f64_array(dst.data(), dst.size(), "checkpoint tensor payload");
  }
  r.expect_eof("checkpoint");
  return model;
}

}  // namespace htnet

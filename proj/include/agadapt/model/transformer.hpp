#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "agadapt/model/vocab.hpp"
#include "agadapt/numerics/autodiff.hpp"
#include "agadapt/numerics/tensor.hpp"

namespace agadapt {

struct ModelConfig {
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  std::size_t heads = 4;
  std::size_t width = 64;
  std::size_t ffn_width = 256;
  std::size_t adapter_dim = 8;
  std::size_t feat_dim = 16;
  std::size_t max_frames = 64;
  std::size_t max_tokens = 24;
  std::size_t words_a = 40;
  std::size_t words_b = 40;

  std::size_t head_dim() const { return width / heads; }
  std::size_t head_count() const { return dec_layers * heads; }
  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;
};

enum class Activation { gelu, identity };

/// Plain-value adapter weights: down [width x b], up [b x width].
struct AdapterWeights {
  Tensor down_w;
  Tensor down_b;
  Tensor up_w;
  Tensor up_b;
};

/// Residual bottleneck x + up(act(down(x))) on a [T x width] sequence.
Tensor adapter_apply(const Tensor& x, const AdapterWeights& w, Activation act = Activation::gelu);

/// softmax(q k^T / sqrt(d)) with an optional causal mask.
Tensor attention_map(const Tensor& q, const Tensor& k, bool causal);

/// Names of the adapter parameters, split by side.
struct AdapterSet {
  std::vector<std::string> encoder;
  std::vector<std::string> decoder;
  std::size_t adapter_values = 0;
  std::size_t backbone_values = 0;

  double trainable_fraction() const {
    return static_cast<double>(adapter_values) / static_cast<double>(adapter_values + backbone_values);
  }
};

/// Formats "<count> (<pct>%)", e.g. "14.3 K (5.6%)".
std::string format_param_share(std::size_t adapter_values, std::size_t backbone_values);

struct AdapterMask {
  bool encoder = true;
  bool decoder = true;
};

struct ForwardResult {
  /// [N x M]; row n is the next-token distribution after reading y_0..y_n.
  Var logits;
  /// Decoder self-attention maps, index layer * heads + head, each [N x N].
  std::vector<Var> self_attention;
};

bool is_adapter_param(const std::string& name);
bool is_encoder_param(const std::string& name);

/// Pre-LN transformer encoder-decoder with tied output embedding, learned
/// absolute positions, and optional bottleneck adapters after the
/// (self-)attention and feed-forward sub-blocks of every layer.
class Transformer {
 public:
  Transformer(ModelConfig config, std::uint64_t seed);
  /// Builds the parameter layout without initialising values (loader path).
  static Transformer empty(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  /// Marks every non-adapter parameter frozen.
  void freeze_backbone();
  /// Inserts adapters (or re-initialises existing ones): seeded random
  /// down-projection, zero up-projection and biases; all adapters trainable.
  AdapterSet init_adapters(std::uint64_t seed);
  bool has_adapters() const;
  AdapterSet adapters() const;
  /// Sets `trainable` from a name predicate for every parameter.
  void set_trainable(const std::function<bool(const std::string&)>& pred);

  /// [T x width] encoder states.
  Var encode(Graph& g, const Tensor& frames, bool use_adapters) const;
  ForwardResult decode(Graph& g, Var encoded, std::span<const int> ids, bool use_adapters) const;
  ForwardResult forward(Graph& g, const Tensor& frames, std::span<const int> ids, AdapterMask mask = {}) const;

  /// Greedy decoding from `prompt` until <eot> or max_tokens; returns the
  /// generated content tokens (prompt and <eot> excluded).
  std::vector<int> greedy_decode(const Tensor& frames, std::span<const int> prompt, AdapterMask mask = {}) const;

 private:
  Transformer(ModelConfig config, bool init_values, std::uint64_t seed);
  void add_backbone(std::uint64_t seed, bool init_values);
  Var attention_block(Graph& g, const std::string& prefix, Var xq, Var xkv, bool causal,
                      std::vector<Var>* maps) const;
  Var ffn_block(Graph& g, const std::string& prefix, Var x) const;
  Var adapter_block(Graph& g, const std::string& prefix, Var x) const;
  Var param(Graph& g, const std::string& name) const;

  ModelConfig config_;
  Vocabulary vocab_;
  ParameterStore params_;
};

}  // namespace agadapt

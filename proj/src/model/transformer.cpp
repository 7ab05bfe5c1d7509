#include "agadapt/model/transformer.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include "agadapt/error.hpp"

namespace agadapt {

namespace {

std::string layer_prefix(const char* side, std::size_t l) { return std::string(side) + "." + std::to_string(l); }

void linear_names(std::vector<std::pair<std::string, std::vector<std::size_t>>>& out, const std::string& prefix,
                  std::size_t in, std::size_t outdim) {
  out.push_back({prefix + ".weight", {in, outdim}});
  out.push_back({prefix + ".bias", {outdim}});
}

void norm_names(std::vector<std::pair<std::string, std::vector<std::size_t>>>& out, const std::string& prefix,
                std::size_t width) {
  out.push_back({prefix + ".weight", {width}});
  out.push_back({prefix + ".bias", {width}});
}

void attn_names(std::vector<std::pair<std::string, std::vector<std::size_t>>>& out, const std::string& prefix,
                std::size_t width) {
  for (const char* p : {"q_proj", "k_proj", "v_proj", "o_proj"}) linear_names(out, prefix + "." + p, width, width);
}

void adapter_names(std::vector<std::pair<std::string, std::vector<std::size_t>>>& out, const std::string& prefix,
                   std::size_t width, std::size_t b) {
  linear_names(out, prefix + ".down", width, b);
  linear_names(out, prefix + ".up", b, width);
}

std::vector<std::pair<std::string, std::vector<std::size_t>>> adapter_layout(const ModelConfig& c) {
  std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
  for (std::size_t l = 0; l < c.enc_layers; ++l) {
    adapter_names(out, layer_prefix("enc", l) + ".adapter_attn", c.width, c.adapter_dim);
    adapter_names(out, layer_prefix("enc", l) + ".adapter_ffn", c.width, c.adapter_dim);
  }
  for (std::size_t l = 0; l < c.dec_layers; ++l) {
    adapter_names(out, layer_prefix("dec", l) + ".adapter_attn", c.width, c.adapter_dim);
    adapter_names(out, layer_prefix("dec", l) + ".adapter_ffn", c.width, c.adapter_dim);
  }
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  if (enc_layers == 0 || dec_layers == 0 || heads == 0 || width == 0 || ffn_width == 0 || adapter_dim == 0 ||
      feat_dim == 0 || max_frames == 0 || max_tokens == 0 || words_a == 0 || words_b == 0) {
    throw ConfigError("model config: all dimensions must be positive");
  }
  if (width % heads != 0) throw ConfigError("model config: width must be divisible by heads");
}

Tensor adapter_apply(const Tensor& x, const AdapterWeights& w, Activation act) {
  const std::size_t width = x.cols();
  const std::size_t b = w.down_w.cols();
  if (w.down_w.rows() != width || w.down_b.size() != b || w.up_w.rows() != b || w.up_w.cols() != width ||
      w.up_b.size() != width) {
    throw NumericError("adapter_apply: dimension mismatch");
  }
  Graph g(false);
  Var xv = g.constant(x);
  Var h = add_row(matmul(xv, g.constant(w.down_w)), g.constant(w.down_b));
  if (act == Activation::gelu) h = gelu(h);
  Var y = add_row(matmul(h, g.constant(w.up_w)), g.constant(w.up_b));
  Tensor out = x;
  const Tensor& yv = y.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += yv[i];
  return out;
}

Tensor attention_map(const Tensor& q, const Tensor& k, bool causal) {
  if (q.cols() == 0 || k.cols() == 0) throw NumericError("attention_map: key/query dimension must be positive");
  if (q.cols() != k.cols()) throw NumericError("attention_map: query/key dimension mismatch");
  if (causal && q.rows() != k.rows()) throw NumericError("attention_map: causal map must be square");
  Graph g(false);
  Var s = scale(matmul_nt(g.constant(q), g.constant(k)), 1.0 / std::sqrt(static_cast<double>(q.cols())));
  return softmax(s, causal).value();
}

std::string format_param_share(std::size_t adapter_values, std::size_t backbone_values) {
  const double total = static_cast<double>(adapter_values + backbone_values);
  const double pct = 100.0 * static_cast<double>(adapter_values) / total;
  char buf[64];
  if (adapter_values >= 1000000) {
    std::snprintf(buf, sizeof buf, "%.1f M (%.1f%%)", static_cast<double>(adapter_values) / 1e6, pct);
  } else {
    std::snprintf(buf, sizeof buf, "%.1f K (%.1f%%)", static_cast<double>(adapter_values) / 1e3, pct);
  }
  return buf;
}

bool is_adapter_param(const std::string& name) { return name.find(".adapter_") != std::string::npos; }

bool is_encoder_param(const std::string& name) { return name.rfind("enc.", 0) == 0; }

Transformer::Transformer(ModelConfig config, std::uint64_t seed) : Transformer(std::move(config), true, seed) {}

Transformer Transformer::empty(ModelConfig config) { return Transformer(std::move(config), false, 0); }

Transformer::Transformer(ModelConfig config, bool init_values, std::uint64_t seed)
    : config_(std::move(config)), vocab_(Vocabulary::standard(config_.words_a, config_.words_b)) {
  config_.validate();
  add_backbone(seed, init_values);
}

void Transformer::add_backbone(std::uint64_t seed, bool init_values) {
  const auto& c = config_;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> layout;
  linear_names(layout, "enc.in_proj", c.feat_dim, c.width);
  layout.push_back({"enc.pos", {c.max_frames, c.width}});
  for (std::size_t l = 0; l < c.enc_layers; ++l) {
    const auto p = layer_prefix("enc", l);
    norm_names(layout, p + ".attn_ln", c.width);
    attn_names(layout, p + ".attn", c.width);
    norm_names(layout, p + ".ffn_ln", c.width);
    linear_names(layout, p + ".ffn.fc1", c.width, c.ffn_width);
    linear_names(layout, p + ".ffn.fc2", c.ffn_width, c.width);
  }
  norm_names(layout, "enc.ln_post", c.width);
  layout.push_back({"dec.tok_emb", {vocab_.size(), c.width}});
  layout.push_back({"dec.pos", {c.max_tokens, c.width}});
  for (std::size_t l = 0; l < c.dec_layers; ++l) {
    const auto p = layer_prefix("dec", l);
    norm_names(layout, p + ".self_ln", c.width);
    attn_names(layout, p + ".self_attn", c.width);
    norm_names(layout, p + ".cross_ln", c.width);
    attn_names(layout, p + ".cross_attn", c.width);
    norm_names(layout, p + ".ffn_ln", c.width);
    linear_names(layout, p + ".ffn.fc1", c.width, c.ffn_width);
    linear_names(layout, p + ".ffn.fc2", c.ffn_width, c.width);
  }
  norm_names(layout, "dec.ln_post", c.width);

  std::mt19937_64 rng(seed);
  for (auto& [name, shape] : layout) {
    Tensor t(shape, 0.0);
    if (init_values) {
      const bool is_norm = name.find("_ln.") != std::string::npos || name.find("ln_post") != std::string::npos;
      const bool is_bias = name.size() > 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
      if (is_norm && !is_bias) {
        t.fill(1.0);
      } else if (!is_bias) {
        // embeddings and position tables use a fixed scale, projections 1/sqrt(fan_in)
        const bool table = name == "enc.pos" || name == "dec.pos" || name == "dec.tok_emb";
        const double sd = table ? 0.1 : 1.0 / std::sqrt(static_cast<double>(shape[0]));
        std::normal_distribution<double> nd(0.0, sd);
        for (double& v : t.data()) v = nd(rng);
      }
    }
    params_.add(name, std::move(t), true);
  }
}

void Transformer::freeze_backbone() {
  for (auto& p : params_.items()) {
    if (!is_adapter_param(p.name)) p.trainable = false;
  }
}

AdapterSet Transformer::init_adapters(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& [name, shape] : adapter_layout(config_)) {
    Tensor t(shape, 0.0);
    if (name.find(".down.weight") != std::string::npos) {
      std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(static_cast<double>(shape[0])));
      for (double& v : t.data()) v = nd(rng);
    }
    if (Parameter* p = params_.find(name)) {
      p->value = std::move(t);
      p->trainable = true;
    } else {
      params_.add(name, std::move(t), true);
    }
  }
  return adapters();
}

bool Transformer::has_adapters() const {
  for (const auto& p : params_.items()) {
    if (is_adapter_param(p.name)) return true;
  }
  return false;
}

AdapterSet Transformer::adapters() const {
  AdapterSet s;
  for (const auto& p : params_.items()) {
    if (is_adapter_param(p.name)) {
      (is_encoder_param(p.name) ? s.encoder : s.decoder).push_back(p.name);
      s.adapter_values += p.value.size();
    } else {
      s.backbone_values += p.value.size();
    }
  }
  return s;
}

void Transformer::set_trainable(const std::function<bool(const std::string&)>& pred) {
  for (auto& p : params_.items()) p.trainable = pred(p.name);
}

Var Transformer::param(Graph& g, const std::string& name) const { return g.parameter(params_.at(name)); }

Var Transformer::attention_block(Graph& g, const std::string& prefix, Var xq, Var xkv, bool causal,
                                 std::vector<Var>* maps) const {
  const std::size_t heads = config_.heads;
  const std::size_t d = config_.head_dim();
  auto proj = [&](Var x, const char* which) {
    return add_row(matmul(x, param(g, prefix + "." + which + ".weight")), param(g, prefix + "." + which + ".bias"));
  };
  Var q = proj(xq, "q_proj");
  Var k = proj(xkv, "k_proj");
  Var v = proj(xkv, "v_proj");
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = col_slice(q, h * d, (h + 1) * d);
    Var kh = col_slice(k, h * d, (h + 1) * d);
    Var vh = col_slice(v, h * d, (h + 1) * d);
    Var a = softmax(scale(matmul_nt(qh, kh), inv), causal);
    if (maps) maps->push_back(a);
    outs.push_back(matmul(a, vh));
  }
  Var cat = concat_cols(outs);
  return proj(cat, "o_proj");
}

Var Transformer::ffn_block(Graph& g, const std::string& prefix, Var x) const {
  Var h = gelu(add_row(matmul(x, param(g, prefix + ".fc1.weight")), param(g, prefix + ".fc1.bias")));
  return add_row(matmul(h, param(g, prefix + ".fc2.weight")), param(g, prefix + ".fc2.bias"));
}

Var Transformer::adapter_block(Graph& g, const std::string& prefix, Var x) const {
  Var h = gelu(add_row(matmul(x, param(g, prefix + ".down.weight")), param(g, prefix + ".down.bias")));
  Var y = add_row(matmul(h, param(g, prefix + ".up.weight")), param(g, prefix + ".up.bias"));
  return add(x, y);
}

Var Transformer::encode(Graph& g, const Tensor& frames, bool use_adapters) const {
  const auto& c = config_;
  if (frames.cols() != c.feat_dim) throw DataError("encode: frame dimension mismatch");
  if (frames.rows() > c.max_frames) {
    throw DataError("encode: sequence too long (" + std::to_string(frames.rows()) + " frames > " +
                    std::to_string(c.max_frames) + ")");
  }
  use_adapters = use_adapters && has_adapters();
  Var x = add_row(matmul(g.constant(frames), param(g, "enc.in_proj.weight")), param(g, "enc.in_proj.bias"));
  x = add(x, row_slice(param(g, "enc.pos"), 0, frames.rows()));
  for (std::size_t l = 0; l < c.enc_layers; ++l) {
    const auto p = layer_prefix("enc", l);
    Var h = layer_norm(x, param(g, p + ".attn_ln.weight"), param(g, p + ".attn_ln.bias"));
    x = add(x, attention_block(g, p + ".attn", h, h, false, nullptr));
    if (use_adapters) x = adapter_block(g, p + ".adapter_attn", x);
    h = layer_norm(x, param(g, p + ".ffn_ln.weight"), param(g, p + ".ffn_ln.bias"));
    x = add(x, ffn_block(g, p + ".ffn", h));
    if (use_adapters) x = adapter_block(g, p + ".adapter_ffn", x);
  }
  return layer_norm(x, param(g, "enc.ln_post.weight"), param(g, "enc.ln_post.bias"));
}

ForwardResult Transformer::decode(Graph& g, Var encoded, std::span<const int> ids, bool use_adapters) const {
  const auto& c = config_;
  if (ids.empty()) throw DataError("decode: empty token sequence");
  if (ids.size() > c.max_tokens) {
    throw DataError("decode: sequence too long (" + std::to_string(ids.size()) + " tokens > " +
                    std::to_string(c.max_tokens) + ")");
  }
  use_adapters = use_adapters && has_adapters();
  ForwardResult out;
  out.self_attention.reserve(c.head_count());
  Var emb = param(g, "dec.tok_emb");
  Var x = add(gather_rows(emb, ids), row_slice(param(g, "dec.pos"), 0, ids.size()));
  for (std::size_t l = 0; l < c.dec_layers; ++l) {
    const auto p = layer_prefix("dec", l);
    Var h = layer_norm(x, param(g, p + ".self_ln.weight"), param(g, p + ".self_ln.bias"));
    x = add(x, attention_block(g, p + ".self_attn", h, h, true, &out.self_attention));
    if (use_adapters) x = adapter_block(g, p + ".adapter_attn", x);
    h = layer_norm(x, param(g, p + ".cross_ln.weight"), param(g, p + ".cross_ln.bias"));
    x = add(x, attention_block(g, p + ".cross_attn", h, encoded, false, nullptr));
    h = layer_norm(x, param(g, p + ".ffn_ln.weight"), param(g, p + ".ffn_ln.bias"));
    x = add(x, ffn_block(g, p + ".ffn", h));
    if (use_adapters) x = adapter_block(g, p + ".adapter_ffn", x);
  }
  Var h = layer_norm(x, param(g, "dec.ln_post.weight"), param(g, "dec.ln_post.bias"));
  out.logits = matmul_nt(h, emb);
  return out;
}

ForwardResult Transformer::forward(Graph& g, const Tensor& frames, std::span<const int> ids, AdapterMask mask) const {
  Var enc = encode(g, frames, mask.encoder);
  return decode(g, enc, ids, mask.decoder);
}

std::vector<int> Transformer::greedy_decode(const Tensor& frames, std::span<const int> prompt, AdapterMask mask) const {
  Tensor enc;
  {
    Graph g(false);
    enc = encode(g, frames, mask.encoder).value();
  }
  const int eot = vocab_.id(tok::eot);
  std::vector<int> ids(prompt.begin(), prompt.end());
  std::vector<int> out;
  while (ids.size() < config_.max_tokens) {
    Graph g(false);
    auto res = decode(g, g.constant(enc), ids, mask.decoder);
    const Tensor& lv = res.logits.value();
    const std::size_t last = lv.rows() - 1;
    std::size_t best = 0;
    for (std::size_t m = 1; m < lv.cols(); ++m) {
      if (lv(last, m) > lv(last, best)) best = m;
    }
    const int next = static_cast<int>(best);
    if (next == eot) break;
    out.push_back(next);
    ids.push_back(next);
  }
  return out;
}

}  // namespace agadapt

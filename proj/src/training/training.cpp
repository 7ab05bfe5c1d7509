#include "agadapt/training/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "agadapt/error.hpp"

namespace agadapt {

const char* mode_name(AdaptMode m) {
  switch (m) {
    case AdaptMode::one_stage: return "one-stage";
    case AdaptMode::one_stage_ag: return "one-stage-ag";
    case AdaptMode::two_stage_ag: return "two-stage-ag";
  }
  return "?";
}

AdaptMode mode_from_name(const std::string& s) {
  if (s == "one-stage") return AdaptMode::one_stage;
  if (s == "one-stage-ag" || s == "one-stage+ag") return AdaptMode::one_stage_ag;
  if (s == "two-stage-ag" || s == "two-stage+ag") return AdaptMode::two_stage_ag;
  throw ConfigError("unknown adaptation mode '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma must be a finite value >= 0");
  if (!(soft_label > 0.5 && soft_label < 1.0)) throw ConfigError("soft label out of range");
  if (!(lr > 0.0) || !(pretrain_lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (epochs == 0 || batch_size == 0 || pretrain_epochs == 0) throw ConfigError("epochs and batch_size must be positive");
  if (!(head_fraction > 0.0 && head_fraction <= 1.0)) throw ConfigError("head_fraction must lie in (0, 1]");
  if (avg_k == 0 || avg_k > epochs) throw ConfigError("avg_k must lie in [1, epochs]");
  if (!(pretrain_min_accuracy >= 0.0 && pretrain_min_accuracy <= 1.0)) {
    throw ConfigError("pretrain_min_accuracy must lie in [0, 1]");
  }
  model.validate();
}

TrainConfig TrainConfig::from_config(const KeyValues& kv, std::initializer_list<const char*> extra_keys) {
  static const char* const known[] = {
      "gamma",        "soft_label",      "lr",        "weight_decay",          "epochs",     "batch_size",
      "seed",         "head_fraction",   "avg_k",     "mode",                  "pretrain_epochs",
      "pretrain_lr",  "pretrain_min_accuracy",        "enc_layers",            "dec_layers", "heads",
      "width",        "ffn_width",       "adapter_dim", "feat_dim",            "max_frames", "max_tokens",
      "words_a",      "words_b"};
  for (const auto& [key, value] : kv.values()) {
    const bool ok = std::any_of(std::begin(known), std::end(known), [&](const char* k) { return key == k; }) ||
                    std::any_of(extra_keys.begin(), extra_keys.end(), [&](const char* k) { return key == k; });
    if (!ok) throw ConfigError("unknown config key '" + key + "'");
  }
  TrainConfig c;
  c.gamma = kv.get_double("gamma", c.gamma);
  c.soft_label = kv.get_double("soft_label", c.soft_label);
  c.lr = kv.get_double("lr", c.lr);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.epochs = kv.get_uint("epochs", c.epochs);
  c.batch_size = kv.get_uint("batch_size", c.batch_size);
  c.seed = kv.get_uint("seed", c.seed);
  c.head_fraction = kv.get_double("head_fraction", c.head_fraction);
  c.avg_k = kv.get_uint("avg_k", c.avg_k);
  c.mode = mode_from_name(kv.get_string("mode", mode_name(c.mode)));
  c.pretrain_epochs = kv.get_uint("pretrain_epochs", c.pretrain_epochs);
  c.pretrain_lr = kv.get_double("pretrain_lr", c.pretrain_lr);
  c.pretrain_min_accuracy = kv.get_double("pretrain_min_accuracy", c.pretrain_min_accuracy);
  auto& m = c.model;
  m.enc_layers = kv.get_uint("enc_layers", m.enc_layers);
  m.dec_layers = kv.get_uint("dec_layers", m.dec_layers);
  m.heads = kv.get_uint("heads", m.heads);
  m.width = kv.get_uint("width", m.width);
  m.ffn_width = kv.get_uint("ffn_width", m.ffn_width);
  m.adapter_dim = kv.get_uint("adapter_dim", m.adapter_dim);
  m.feat_dim = kv.get_uint("feat_dim", m.feat_dim);
  m.max_frames = kv.get_uint("max_frames", m.max_frames);
  m.max_tokens = kv.get_uint("max_tokens", m.max_tokens);
  m.words_a = kv.get_uint("words_a", m.words_a);
  m.words_b = kv.get_uint("words_b", m.words_b);
  c.validate();
  return c;
}

KeyValues TrainConfig::to_config() const {
  KeyValues kv;
  const auto num = format_number;
  kv.set("gamma", num(gamma));
  kv.set("soft_label", num(soft_label));
  kv.set("lr", num(lr));
  kv.set("weight_decay", num(weight_decay));
  kv.set("epochs", std::to_string(epochs));
  kv.set("batch_size", std::to_string(batch_size));
  kv.set("seed", std::to_string(seed));
  kv.set("head_fraction", num(head_fraction));
  kv.set("avg_k", std::to_string(avg_k));
  kv.set("mode", mode_name(mode));
  kv.set("pretrain_epochs", std::to_string(pretrain_epochs));
  kv.set("pretrain_lr", num(pretrain_lr));
  kv.set("pretrain_min_accuracy", num(pretrain_min_accuracy));
  kv.set("enc_layers", std::to_string(model.enc_layers));
  kv.set("dec_layers", std::to_string(model.dec_layers));
  kv.set("heads", std::to_string(model.heads));
  kv.set("width", std::to_string(model.width));
  kv.set("ffn_width", std::to_string(model.ffn_width));
  kv.set("adapter_dim", std::to_string(model.adapter_dim));
  kv.set("feat_dim", std::to_string(model.feat_dim));
  kv.set("max_frames", std::to_string(model.max_frames));
  kv.set("max_tokens", std::to_string(model.max_tokens));
  kv.set("words_a", std::to_string(model.words_a));
  kv.set("words_b", std::to_string(model.words_b));
  return kv;
}

std::vector<int> next_token_targets(const TokenSequence& y) {
  const std::size_t n = y.size();
  std::vector<int> t(n, -1);
  for (std::size_t i = y.prompt_length - 1; i + 1 < n; ++i) t[i] = y.ids[i + 1];
  return t;
}

JointLoss joint_loss(Graph& g, const Transformer& model, const Tensor& frames, const TokenSequence& y,
                     const HeadSelection* selection, double gamma, double soft_label, AdapterMask mask) {
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
  auto res = model.forward(g, frames, y.ids, mask);
  const auto targets = next_token_targets(y);
  JointLoss out;
  out.ce = softmax_cross_entropy(res.logits, targets);
  out.total = out.ce;
  if (selection != nullptr) {
    const auto target = guidance_target(y, soft_label);
    out.ag = ag_loss(res.self_attention, model.config().heads, selection->selected, target);
    out.total = add(out.ce, scale(out.ag, gamma));
  }
  return out;
}

double joint_loss_value(const Transformer& model, const Tensor& frames, const TokenSequence& y,
                        const HeadSelection* selection, double gamma, double soft_label, AdapterMask mask) {
  Graph g(false);
  return joint_loss(g, model, frames, y, selection, gamma, soft_label, mask).total.value()[0];
}

std::vector<double> RunRecord::loss_trace() const {
  std::vector<double> out;
  for (const auto& e : epochs) {
    out.push_back(e.train_ce);
    out.push_back(e.train_ag);
    out.push_back(e.valid_ce);
  }
  return out;
}

NamedTensors average_checkpoints(std::span<const Checkpoint> checkpoints, std::size_t k) {
  if (k == 0) throw ConfigError("checkpoint averaging needs k >= 1");
  if (k > checkpoints.size()) {
    throw ConfigError("checkpoint averaging: asked for " + std::to_string(k) + " but only " +
                      std::to_string(checkpoints.size()) + " exist");
  }
  std::vector<std::size_t> order(checkpoints.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return checkpoints[a].valid_loss < checkpoints[b].valid_loss; });
  NamedTensors avg = checkpoints[order[0]].params;
  for (std::size_t r = 1; r < k; ++r) {
    const auto& other = checkpoints[order[r]].params;
    if (other.size() != avg.size()) throw DataError("checkpoint averaging: parameter sets differ");
    for (std::size_t i = 0; i < avg.size(); ++i) {
      if (other[i].first != avg[i].first || !other[i].second.same_shape(avg[i].second)) {
        throw DataError("checkpoint averaging: parameter sets differ at " + avg[i].first);
      }
      auto dst = avg[i].second.data();
      auto src = other[i].second.data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  }
  const double inv = static_cast<double>(k);
  for (auto& [name, t] : avg) {
    for (auto& v : t.data()) v /= inv;
  }
  return avg;
}

void assign_parameters(Transformer& model, const NamedTensors& values) {
  for (const auto& [name, t] : values) {
    auto& p = model.params().at(name);
    if (!p.value.same_shape(t)) throw DataError("shape mismatch assigning " + name);
    p.value = t;
  }
}

NamedTensors snapshot_trainable(const Transformer& model) {
  NamedTensors out;
  for (const auto& p : model.params().items()) {
    if (p.trainable) out.emplace_back(p.name, p.value);
  }
  return out;
}

TokenAccuracy decoding_accuracy(const Transformer& model, std::span<const Utterance> data, bool monolingual_prompt,
                                AdapterMask mask) {
  TokenAccuracy acc;
  const auto& vocab = model.vocab();
  for (const auto& u : data) {
    const bool mono = monolingual_prompt && u.kind != UttKind::code_switched;
    const auto prompt = mono ? build_monolingual_prompt(vocab, u.kind == UttKind::mono_a ? Lang::a : Lang::b)
                             : build_prompt(vocab);
    const auto hyp = model.greedy_decode(u.frames, prompt, mask);
    const auto e = edit_distance(u.words, hyp);
    acc.correct += u.words.size() - e.substitutions - e.deletions;
    acc.total += u.words.size();
  }
  return acc;
}

namespace {

using Clock = std::chrono::steady_clock;

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t stage_tag, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stage_tag), static_cast<std::uint32_t>(epoch)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

void accumulate(GradientStore& into, const GradientStore& g) {
  for (const auto& [name, t] : g) {
    auto it = into.find(name);
    if (it == into.end()) {
      into.emplace(name, t);
    } else {
      auto dst = it->second.data();
      auto src = t.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
}

struct StagePlan {
  std::string name;
  std::uint64_t tag = 0;
  std::function<bool(const std::string&)> trainable;
  AdapterMask mask;
  const HeadSelection* selection = nullptr;
  double gamma = 0.0;
  std::size_t epochs = 0;
  double lr = 0.0;
  bool monolingual_prompt = false;
  std::size_t average_k = 0;  // 0 disables averaging
};

TokenSequence prompt_for(const Utterance& u, const Vocabulary& vocab, bool monolingual) {
  return monolingual ? u.monolingual_reference(vocab) : u.reference(vocab);
}

double mean_ce(const Transformer& model, const Corpus& data, AdapterMask mask, bool monolingual_prompt) {
  if (data.utterances.empty()) throw DataError("validation set '" + data.name + "' is empty");
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& u : data.utterances) {
    if (monolingual_prompt && u.kind == UttKind::code_switched) continue;
    const auto y = prompt_for(u, model.vocab(), monolingual_prompt);
    s += joint_loss_value(model, u.frames, y, nullptr, 0.0, 0.6, mask);
    ++n;
  }
  if (n == 0) throw DataError("validation set '" + data.name + "' has no usable utterances");
  return s / static_cast<double>(n);
}

void run_plan(Transformer& model, const Corpus& train, const Corpus& valid, const TrainConfig& cfg,
              const StagePlan& plan, RunRecord& record, const EpochCallback& on_epoch) {
  if (train.utterances.empty()) throw DataError("training set '" + train.name + "' is empty");
  model.set_trainable(plan.trainable);
  OptimizerState opt;
  opt.hyper.lr = plan.lr;
  opt.hyper.weight_decay = cfg.weight_decay;
  std::vector<Checkpoint> checkpoints;
  const auto& vocab = model.vocab();
  for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    const auto t0 = Clock::now();
    const auto order = epoch_order(train.utterances.size(), cfg.seed, plan.tag, epoch);
    double ce_sum = 0.0;
    double ag_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      GradientStore batch;
      for (std::size_t b = start; b < stop; ++b) {
        const auto& u = train.utterances[order[b]];
        const auto y = prompt_for(u, vocab, plan.monolingual_prompt);
        Graph g;
        auto loss = joint_loss(g, model, u.frames, y, plan.selection, plan.gamma, cfg.soft_label, plan.mask);
        ce_sum += loss.ce.value()[0];
        if (loss.ag.valid()) {
          ag_sum += loss.ag.value()[0];
          ++record.ag_evaluations;
        }
        accumulate(batch, g.backward(loss.total, model.params()));
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (auto& [name, t] : batch) {
        for (auto& v : t.data()) v *= inv;
      }
      adamw_step(opt, model.params(), batch);
    }
    EpochRecord rec;
    rec.stage = plan.name;
    rec.epoch = epoch;
    const double n = static_cast<double>(order.size());
    rec.train_ce = ce_sum / n;
    rec.train_ag = ag_sum / n;
    rec.valid_ce = mean_ce(model, valid, plan.mask, plan.monolingual_prompt);
    rec.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    if (!std::isfinite(rec.train_ce) || !std::isfinite(rec.train_ag) || !std::isfinite(rec.valid_ce)) {
      throw NumericError("non-finite loss in stage " + plan.name + " epoch " + std::to_string(epoch));
    }
    record.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (plan.average_k > 0) checkpoints.push_back({rec.valid_ce, snapshot_trainable(model)});
  }
  if (plan.average_k > 0) assign_parameters(model, average_checkpoints(checkpoints, plan.average_k));
}

}  // namespace

double validation_ce(const Transformer& model, const Corpus& data, AdapterMask mask) {
  return mean_ce(model, data, mask, false);
}

PretrainResult pretrain_backbone(const Corpus& train, const Corpus& heldout, const TrainConfig& cfg,
                                 const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  for (const auto& u : train.utterances) {
    if (u.kind == UttKind::code_switched) throw DataError("pretraining corpus contains code-switched utterance " + u.id);
  }
  std::vector<Utterance> mono;
  std::vector<Utterance> cs;
  for (const auto& u : heldout.utterances) (u.kind == UttKind::code_switched ? cs : mono).push_back(u);
  if (mono.empty()) throw DataError("held-out set has no monolingual utterances");

  PretrainResult out{Transformer(cfg.model, cfg.seed), {}, 0.0, 0.0};
  StagePlan plan;
  plan.name = "pretrain";
  plan.tag = 0;
  plan.trainable = [](const std::string&) { return true; };
  plan.mask = AdapterMask{false, false};
  plan.epochs = cfg.pretrain_epochs;
  plan.lr = cfg.pretrain_lr;
  plan.monolingual_prompt = true;
  run_plan(out.model, train, heldout, cfg, plan, out.record, on_epoch);
  out.model.freeze_backbone();

  out.mono_accuracy = decoding_accuracy(out.model, mono, true, AdapterMask{false, false}).value();
  if (!cs.empty()) out.cs_accuracy = decoding_accuracy(out.model, cs, false, AdapterMask{false, false}).value();
  if (out.mono_accuracy < cfg.pretrain_min_accuracy) {
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "backbone reached %.4f held-out accuracy, below the required %.2f; raise pretrain_epochs",
                  out.mono_accuracy, cfg.pretrain_min_accuracy);
    throw NumericError(buf);
  }
  return out;
}

void run_stage1(Transformer& model, const Corpus& train, const Corpus& valid, const TrainConfig& cfg,
                RunRecord& record, const EpochCallback& on_epoch) {
  if (!model.has_adapters()) throw ConfigError("stage 1 needs adapters");
  StagePlan plan;
  plan.name = "stage1";
  plan.tag = 1;
  plan.trainable = [](const std::string& n) { return is_adapter_param(n) && is_encoder_param(n); };
  plan.mask = AdapterMask{true, false};
  plan.epochs = cfg.epochs;
  plan.lr = cfg.lr;
  plan.average_k = cfg.avg_k;
  run_plan(model, train, valid, cfg, plan, record, on_epoch);
}

void run_stage2(Transformer& model, const Corpus& train, const Corpus& valid, const HeadSelection* selection,
                const TrainConfig& cfg, RunRecord& record, const EpochCallback& on_epoch) {
  if (!model.has_adapters()) throw ConfigError("stage 2 needs adapters");
  if (cfg.gamma > 0.0 && (selection == nullptr || selection->selected.empty())) {
    throw ConfigError("guided training needs a head selection");
  }
  StagePlan plan;
  plan.name = "stage2";
  plan.tag = 2;
  plan.trainable = [](const std::string& n) { return is_adapter_param(n); };
  plan.mask = AdapterMask{true, true};
  plan.selection = cfg.gamma > 0.0 ? selection : nullptr;
  plan.gamma = cfg.gamma;
  plan.epochs = cfg.epochs;
  plan.lr = cfg.lr;
  plan.average_k = cfg.avg_k;
  run_plan(model, train, valid, cfg, plan, record, on_epoch);
}

AdaptResult adapt(const Transformer& backbone, const Corpus& train, const Corpus& valid,
                  const HeadSelection* selection, const TrainConfig& cfg, const EpochCallback& on_epoch,
                  const StageCallback& on_stage) {
  cfg.validate();
  AdaptResult out{backbone, {}};
  out.model.freeze_backbone();
  out.model.init_adapters(cfg.seed);
  auto notify = [&](const char* stage) {
    if (on_stage) on_stage(stage, out.model);
  };
  notify("init");
  TrainConfig stage_cfg = cfg;
  switch (cfg.mode) {
    case AdaptMode::one_stage:
      stage_cfg.gamma = 0.0;
      run_stage2(out.model, train, valid, nullptr, stage_cfg, out.record, on_epoch);
      notify("stage2");
      break;
    case AdaptMode::one_stage_ag:
      run_stage2(out.model, train, valid, selection, stage_cfg, out.record, on_epoch);
      notify("stage2");
      break;
    case AdaptMode::two_stage_ag:
      run_stage1(out.model, train, valid, stage_cfg, out.record, on_epoch);
      notify("stage1");
      run_stage2(out.model, train, valid, selection, stage_cfg, out.record, on_epoch);
      notify("stage2");
      break;
  }
  out.model.set_trainable([](const std::string&) { return false; });
  return out;
}

double lid_attribution(const Transformer& model, const Corpus& data, const HeadSelection& selection,
                       std::size_t* word_tokens, AdapterMask mask) {
  if (selection.selected.empty()) throw ConfigError("LID attribution needs selected heads");
  if (data.utterances.empty()) throw DataError("attribution set '" + data.name + "' is empty");
  const std::size_t heads = model.config().heads;
  std::size_t hit = 0;
  std::size_t total = 0;
  for (const auto& u : data.utterances) {
    const auto y = u.reference(model.vocab());
    Graph g(false);
    auto res = model.forward(g, u.frames, y.ids, mask);
    const std::size_t zh = y.lid_positions[0];
    const std::size_t en = y.lid_positions[1];
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y.langs[i] == Lang::none) continue;
      double to_zh = 0.0;
      double to_en = 0.0;
      for (const auto& h : selection.selected) {
        const Tensor& a = res.self_attention.at(h.layer * heads + h.head).value();
        to_zh += a(i, zh);
        to_en += a(i, en);
      }
      const Lang guess = to_zh > to_en ? Lang::a : (to_en > to_zh ? Lang::b : Lang::none);
      hit += guess == y.langs[i] ? 1 : 0;
      ++total;
    }
  }
  if (word_tokens != nullptr) *word_tokens = total;
  return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

EvalReport evaluate_model(const Transformer& model, std::span<const Corpus* const> test_sets,
                          const HeadSelection* selection, const Corpus* attribution_set, AdapterMask mask) {
  std::vector<ScoredRef> refs;
  std::vector<ScoredHyp> hyps;
  const auto prompt = build_prompt(model.vocab());
  for (const Corpus* set : test_sets) {
    if (set->utterances.empty()) throw DataError("test set '" + set->name + "' is empty");
    for (const auto& u : set->utterances) {
      refs.push_back({set->name + "/" + u.id, u.kind, u.words});
      hyps.push_back({set->name + "/" + u.id, model.greedy_decode(u.frames, prompt, mask)});
    }
  }
  EvalReport rep;
  rep.errors = mixed_error_rate(refs, hyps);
  if (selection != nullptr && attribution_set != nullptr) {
    rep.lid_attribution = lid_attribution(model, *attribution_set, *selection, &rep.lid_tokens, mask);
  }
  return rep;
}

}  // namespace agadapt

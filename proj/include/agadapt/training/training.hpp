#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "agadapt/guidance/guidance.hpp"
#include "agadapt/kvconfig.hpp"
#include "agadapt/model/checkpoint.hpp"
#include "agadapt/model/transformer.hpp"
#include "agadapt/numerics/optim.hpp"
#include "agadapt/synth/corpus.hpp"
#include "agadapt/synth/metrics.hpp"

namespace agadapt {

enum class AdaptMode { one_stage, one_stage_ag, two_stage_ag };
const char* mode_name(AdaptMode m);
/// Accepts "one-stage", "one-stage-ag", "two-stage-ag" (and "+ag" spellings).
AdaptMode mode_from_name(const std::string& s);

struct TrainConfig {
  double gamma = 0.01;
  double soft_label = 0.6;
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::size_t epochs = 15;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  double head_fraction = 0.6;
  std::size_t avg_k = 3;
  AdaptMode mode = AdaptMode::two_stage_ag;

  // Backbone pretraining budget.
  std::size_t pretrain_epochs = 20;
  double pretrain_lr = 1e-3;
  double pretrain_min_accuracy = 0.90;

  ModelConfig model;

  /// Throws ConfigError.
  void validate() const;
  /// Unknown keys are rejected, except those listed in `extra_keys`.
  static TrainConfig from_config(const KeyValues& kv, std::initializer_list<const char*> extra_keys = {});
  KeyValues to_config() const;
};

/// Row n of the logits predicts y[n+1]. Rows before the last prompt token and
/// the final row carry no target (-1).
std::vector<int> next_token_targets(const TokenSequence& y);

struct JointLoss {
  Var ce;
  Var ag;  // invalid when no selection was given
  Var total;
};

/// CE(y | x) + gamma * AG over the selected heads. Without a selection the AG
/// term is not built and total is the CE node itself.
JointLoss joint_loss(Graph& g, const Transformer& model, const Tensor& frames, const TokenSequence& y,
                     const HeadSelection* selection, double gamma, double soft_label, AdapterMask mask = {});

/// Plain-value version of joint_loss().total.
double joint_loss_value(const Transformer& model, const Tensor& frames, const TokenSequence& y,
                        const HeadSelection* selection, double gamma, double soft_label, AdapterMask mask = {});

struct EpochRecord {
  std::string stage;
  std::size_t epoch = 0;
  double train_ce = 0.0;  // mean per utterance
  double train_ag = 0.0;  // mean per utterance; 0 when guidance is off
  double valid_ce = 0.0;  // mean per utterance
  double seconds = 0.0;
  std::string checkpoint;
};

/// Trainable parameters at the end of one epoch.
struct Checkpoint {
  double valid_loss = 0.0;
  NamedTensors params;
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  std::size_t ag_evaluations = 0;

  std::vector<double> loss_trace() const;
};

/// Mean of the k checkpoints with the lowest validation loss (earlier epoch
/// wins ties). Throws ConfigError when k is 0 or exceeds the count.
NamedTensors average_checkpoints(std::span<const Checkpoint> checkpoints, std::size_t k);

/// Copies named values into the model's parameters.
void assign_parameters(Transformer& model, const NamedTensors& values);
NamedTensors snapshot_trainable(const Transformer& model);

struct TokenAccuracy {
  std::size_t correct = 0;
  std::size_t total = 0;
  double value() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

/// Greedy-decoding accuracy: reference tokens aligned to a matching hypothesis
/// token, over reference length. Monolingual utterances use the single-LID
/// prompt when `monolingual_prompt` is set.
TokenAccuracy decoding_accuracy(const Transformer& model, std::span<const Utterance> data, bool monolingual_prompt,
                                AdapterMask mask = {});

struct PretrainResult {
  Transformer model;
  RunRecord record;
  double mono_accuracy = 0.0;
  double cs_accuracy = 0.0;
};

/// Trains every backbone parameter on monolingual utterances with
/// monolingual prompts, then freezes it. Throws DataError if the corpus holds
/// code-switched utterances, NumericError if the held-out monolingual accuracy
/// stays below the configured minimum.
PretrainResult pretrain_backbone(const Corpus& train, const Corpus& heldout, const TrainConfig& cfg,
                                 const std::function<void(const EpochRecord&)>& on_epoch = {});

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Encoder adapters only, decoder adapters bypassed, CE only. Ends with
/// checkpoint averaging over the stage's epochs.
void run_stage1(Transformer& model, const Corpus& train, const Corpus& valid, const TrainConfig& cfg,
                RunRecord& record, const EpochCallback& on_epoch = {});

/// Encoder and decoder adapters with CE + gamma * AG. Throws ConfigError when
/// gamma > 0 and no selection is given.
void run_stage2(Transformer& model, const Corpus& train, const Corpus& valid, const HeadSelection* selection,
                const TrainConfig& cfg, RunRecord& record, const EpochCallback& on_epoch = {});

struct AdaptResult {
  Transformer model;
  RunRecord record;
};
/// Called with "init" once the adapters are in place and with the stage name
/// after each stage finishes.
using StageCallback = std::function<void(const std::string& stage, const Transformer& model)>;

/// Inserts fresh adapters into a copy of the frozen backbone and runs the
/// stages of `cfg.mode`.
AdaptResult adapt(const Transformer& backbone, const Corpus& train, const Corpus& valid,
                  const HeadSelection* selection, const TrainConfig& cfg, const EpochCallback& on_epoch = {},
                  const StageCallback& on_stage = {});

/// Mean per-utterance CE on `data` with the bilingual prompt.
double validation_ce(const Transformer& model, const Corpus& data, AdapterMask mask = {});

struct EvalReport {
  ErrorReport errors;
  /// Fraction of word tokens in the CS set whose argmax over the two LID
  /// columns (of the selected maps averaged) names the right language.
  std::optional<double> lid_attribution;
  std::size_t lid_tokens = 0;
};

/// Greedy decoding with the bilingual prompt over the given sets. Throws
/// DataError on an empty set.
EvalReport evaluate_model(const Transformer& model, std::span<const Corpus* const> test_sets,
                          const HeadSelection* selection, const Corpus* attribution_set, AdapterMask mask = {});

/// LID attribution alone (teacher-forced maps).
double lid_attribution(const Transformer& model, const Corpus& data, const HeadSelection& selection,
                       std::size_t* word_tokens = nullptr, AdapterMask mask = {});

}  // namespace agadapt

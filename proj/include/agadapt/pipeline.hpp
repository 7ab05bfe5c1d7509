#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "agadapt/analysis/analysis.hpp"
#include "agadapt/model/checkpoint.hpp"
#include "agadapt/training/training.hpp"

namespace agadapt {

/// A generated dataset, either read back from disk or held in memory.
struct Dataset {
  SynthSpec spec;
  std::map<std::string, Corpus> splits;

  /// Throws DataError for a split that was not loaded.
  const Corpus& split(const std::string& name) const;
};

Dataset make_dataset(const SynthSpec& spec);
/// Reads <dir>/spec.cfg and the listed splits (all of them when empty).
Dataset load_dataset(const std::filesystem::path& dir, const std::vector<std::string>& splits = {});

/// Parses a training config file. The vocabulary size and feature width are
/// taken from the dataset; a config that sets them to other values is a
/// ConfigError.
TrainConfig load_train_config(const std::filesystem::path& path, const SynthSpec& data);
TrainConfig train_config_for(const KeyValues& kv, const SynthSpec& data);

/// One CSV line per epoch: stage, epoch, train_ce, train_ag, valid_ce
/// (round-trip precision, no timings).
void write_trace(const std::filesystem::path& path, const RunRecord& record);
std::string format_trace(const RunRecord& record);

/// "metric,value" CSV with per-set error rates and, when present, the LID
/// attribution.
void write_eval_report(const std::filesystem::path& path, const EvalReport& report);

/// Teacher-forced decoder self-attention map of one head for an utterance
/// (bilingual prompt, adapters used when present), with its token strings.
struct AttentionView {
  Tensor map;
  std::vector<std::string> tokens;
  TokenSequence reference;
};
AttentionView attention_view(const Transformer& model, const Utterance& u, std::size_t layer, std::size_t head);

/// Everything the end-to-end comparison needs, computed from one seed.
struct ExperimentResult {
  PretrainResult backbone;
  HeadSelection selection;
  HeadSelection random_heads;
  EvalReport backbone_report;
  std::map<std::string, EvalReport> reports;  // keyed by run name
  std::map<std::string, RunRecord> records;
  std::map<std::string, Transformer> models;
  /// Adapter values keyed "<run>/<stage>" with stage init, stage1, stage2.
  std::map<std::string, NamedTensors> adapter_snapshots;
};

inline constexpr const char* kRunNames[] = {"one-stage", "one-stage-ag", "two-stage-ag", "two-stage-ag-random"};

/// Pretrains, selects heads, runs the three adaptation modes plus guidance on
/// a random half of all heads, and evaluates each on the three test sets.
ExperimentResult run_experiment(const Dataset& data, const TrainConfig& cfg,
                                const std::function<void(const std::string&)>& log = {});

}  // namespace agadapt

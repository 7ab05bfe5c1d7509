#include "agadapt/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "agadapt/error.hpp"

namespace agadapt {

const Corpus& Dataset::split(const std::string& name) const {
  const auto it = splits.find(name);
  if (it == splits.end()) throw DataError("split '" + name + "' is not loaded");
  return it->second;
}

Dataset make_dataset(const SynthSpec& spec) {
  spec.validate();
  Dataset d;
  d.spec = spec;
  const auto vocab = Vocabulary::standard(spec.words_per_lang, spec.words_per_lang);
  WordBank bank(spec, vocab);
  for (const char* name : kSplitNames) d.splits[name] = generate_split(spec, bank, name);
  return d;
}

Dataset load_dataset(const std::filesystem::path& dir, const std::vector<std::string>& splits) {
  const auto spec_path = dir / "spec.cfg";
  if (!std::filesystem::exists(spec_path)) throw DataError("no spec.cfg in " + dir.string());
  Dataset d;
  try {
    d.spec = SynthSpec::from_config(KeyValues::load(spec_path));
  } catch (const ConfigError& e) {
    throw DataError(std::string("dataset spec: ") + e.what());
  }
  std::vector<std::string> names = splits;
  if (names.empty()) names.assign(std::begin(kSplitNames), std::end(kSplitNames));
  for (const auto& n : names) d.splits[n] = read_corpus(dir, n);
  return d;
}

TrainConfig train_config_for(const KeyValues& kv, const SynthSpec& data) {
  auto cfg = TrainConfig::from_config(kv);
  auto check = [&](const char* key, std::size_t& field, std::size_t value) {
    if (kv.has(key) && field != value) {
      throw ConfigError(std::string("config sets ") + key + " = " + std::to_string(field) + " but the dataset has " +
                        std::to_string(value));
    }
    field = value;
  };
  check("words_a", cfg.model.words_a, data.words_per_lang);
  check("words_b", cfg.model.words_b, data.words_per_lang);
  check("feat_dim", cfg.model.feat_dim, data.feat_dim);
  cfg.validate();
  cfg.model.validate();
  return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path, const SynthSpec& data) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return train_config_for(KeyValues::load(path), data);
}

std::string format_trace(const RunRecord& record) {
  std::ostringstream os;
  os << "stage,epoch,train_ce,train_ag,valid_ce\n";
  char buf[128];
  for (const auto& e : record.epochs) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%.17g,%.17g,%.17g\n", e.stage.c_str(), e.epoch, e.train_ce, e.train_ag,
                  e.valid_ce);
    os << buf;
  }
  return os.str();
}

void write_trace(const std::filesystem::path& path, const RunRecord& record) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os << format_trace(record);
  if (!os) throw DataError("cannot write trace " + path.string());
}

void write_eval_report(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write report " + path.string());
  os << "metric,value\n";
  auto cell = [&](const char* name, const RateCell& c) {
    if (c.utterances == 0) return;
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s_error_rate,%.4f\n", name, c.percent());
    os << buf;
    os << name << "_errors," << c.errors << '\n';
    os << name << "_ref_tokens," << c.ref_tokens << '\n';
    os << name << "_utterances," << c.utterances << '\n';
  };
  cell("mono_a", report.errors.mono_a);
  cell("mono_b", report.errors.mono_b);
  cell("code_switched", report.errors.code_switched);
  cell("overall", report.errors.overall);
  if (report.lid_attribution) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "lid_attribution,%.6f\n", *report.lid_attribution);
    os << buf << "lid_word_tokens," << report.lid_tokens << '\n';
  }
  if (!os) throw DataError("failed writing report " + path.string());
}

AttentionView attention_view(const Transformer& model, const Utterance& u, std::size_t layer, std::size_t head) {
  const auto& c = model.config();
  if (layer >= c.dec_layers || head >= c.heads) {
    throw ConfigError("head (" + std::to_string(layer) + ", " + std::to_string(head) + ") outside the " +
                      std::to_string(c.dec_layers) + " x " + std::to_string(c.heads) + " decoder");
  }
  AttentionView v;
  v.reference = u.reference(model.vocab());
  Graph g(false);
  const auto res = model.forward(g, u.frames, v.reference.ids);
  v.map = g.value(res.self_attention.at(layer * c.heads + head));
  for (int id : v.reference.ids) v.tokens.push_back(model.vocab().token(id));
  return v;
}

ExperimentResult run_experiment(const Dataset& data, const TrainConfig& cfg,
                                const std::function<void(const std::string&)>& log) {
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  auto epoch_logger = [&](const std::string& run) {
    return [&, run](const EpochRecord& e) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s %s epoch %zu: train ce %.4f ag %.4f, valid ce %.4f (%.1fs)", run.c_str(),
                    e.stage.c_str(), e.epoch, e.train_ce, e.train_ag, e.valid_ce, e.seconds);
      say(buf);
    };
  };
  ExperimentResult r{pretrain_backbone(data.split("pretrain"), data.split("valid"), cfg, epoch_logger("pretrain")),
                     {}, {}, {}, {}, {}, {}};
  {
    char buf[128];
    std::snprintf(buf, sizeof buf, "backbone accuracy: monolingual %.4f, code-switched %.4f", r.backbone.mono_accuracy,
                  r.backbone.cs_accuracy);
    say(buf);
  }
  r.selection = count_and_select(r.backbone.model, data.split("adapt_train"), SelectionRequest{std::nullopt, cfg.head_fraction});
  r.random_heads = random_selection(r.selection, 0.5, cfg.seed);
  say("qualifying heads: " + std::to_string(r.selection.qualifying().size()) + " of " +
      std::to_string(r.selection.counts.size()) + ", selected " + std::to_string(r.selection.selected.size()));

  const Corpus* tests[] = {&data.split("test_mono_a"), &data.split("test_mono_b"), &data.split("test_cs")};
  r.backbone_report = evaluate_model(r.backbone.model, tests, &r.selection, &data.split("test_cs"));

  for (const std::string run : kRunNames) {
    TrainConfig c = cfg;
    const HeadSelection* sel = &r.selection;
    if (run == "one-stage") {
      c.mode = AdaptMode::one_stage;
    } else if (run == "one-stage-ag") {
      c.mode = AdaptMode::one_stage_ag;
    } else {
      c.mode = AdaptMode::two_stage_ag;
      if (run == "two-stage-ag-random") sel = &r.random_heads;
    }
    auto snapshot = [&r, run](const std::string& stage, const Transformer& m) {
      NamedTensors values;
      for (const auto& p : m.params().items()) {
        if (is_adapter_param(p.name)) values.emplace_back(p.name, p.value);
      }
      r.adapter_snapshots[run + "/" + stage] = std::move(values);
    };
    auto res = adapt(r.backbone.model, data.split("adapt_train"), data.split("valid"), sel, c, epoch_logger(run),
                     snapshot);
    r.reports[run] = evaluate_model(res.model, tests, &r.selection, &data.split("test_cs"));
    char buf[160];
    const auto& e = r.reports[run];
    std::snprintf(buf, sizeof buf, "%s: CS error %.2f%%, overall %.2f%%, LID attribution %.4f", run.c_str(),
                  e.errors.code_switched.percent(), e.errors.overall.percent(), e.lid_attribution.value_or(0.0));
    say(buf);
    r.records.emplace(run, std::move(res.record));
    r.models.emplace(run, std::move(res.model));
  }
  return r;
}

}  // namespace agadapt

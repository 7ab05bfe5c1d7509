#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "agadapt/error.hpp"
#include "agadapt/model/checkpoint.hpp"
#include "agadapt/pipeline.hpp"

using namespace agadapt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

void print_epoch(const EpochRecord& e) {
  std::fprintf(stderr, "%s epoch %zu: train ce %.4f ag %.4f, valid ce %.4f (%.1fs)\n", e.stage.c_str(), e.epoch,
               e.train_ce, e.train_ag, e.valid_ce, e.seconds);
}

std::filesystem::path trace_path(const std::filesystem::path& ckpt) {
  auto p = ckpt;
  p += ".trace.csv";
  return p;
}

Transformer load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("checkpoint not found: " + path.string());
  return load_model(path);
}

int gen_data(const std::string& spec_file, const std::string& out, std::optional<std::uint64_t> seed) {
  if (!std::filesystem::exists(spec_file)) throw ConfigError("spec file not found: " + spec_file);
  auto spec = SynthSpec::from_config(KeyValues::load(spec_file));
  if (seed) spec.seed = *seed;
  generate_dataset(spec, out);
  std::printf("wrote dataset (seed %llu) to %s\n", static_cast<unsigned long long>(spec.seed), out.c_str());
  return kExitOk;
}

// Config file plus "key=value" overrides from the command line.
TrainConfig read_config(const std::string& path, const std::vector<std::string>& overrides, const SynthSpec& data) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path);
  auto kv = KeyValues::load(path);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + o + "'");
    kv.set(o.substr(0, eq), o.substr(eq + 1));
  }
  return train_config_for(kv, data);
}

int pretrain(const std::string& data_dir, const std::string& out, const std::string& config,
             const std::vector<std::string>& overrides) {
  const auto data = load_dataset(data_dir, {"pretrain", "valid"});
  const auto cfg = read_config(config, overrides, data.spec);
  const auto r = pretrain_backbone(data.split("pretrain"), data.split("valid"), cfg, print_epoch);
  save_model(out, r.model);
  write_trace(trace_path(out), r.record);
  std::printf("backbone accuracy: monolingual %.4f, code-switched %.4f\n", r.mono_accuracy, r.cs_accuracy);
  std::printf("wrote %s\n", out.c_str());
  return kExitOk;
}

int select_heads(const std::string& backbone, const std::string& data_dir, std::optional<double> fraction,
                 std::optional<std::size_t> top_k, std::optional<double> random_fraction, std::uint64_t seed,
                 const std::string& out) {
  if (fraction.has_value() == top_k.has_value()) throw ConfigError("give exactly one of --fraction and --top-k");
  const auto model = load_checkpoint(backbone);
  const auto data = load_dataset(data_dir, {"adapt_train"});
  auto sel = count_and_select(model, data.split("adapt_train"), SelectionRequest{top_k, fraction});
  std::printf("qualifying heads: %zu of %zu\n", sel.qualifying().size(), sel.counts.size());
  if (random_fraction) {
    sel = random_selection(sel, *random_fraction, seed);
    std::printf("replaced the selection with %zu random heads\n", sel.selected.size());
  }
  for (const auto& h : sel.selected) std::printf("selected layer %zu head %zu (count %zu)\n", h.layer, h.head, sel.count(h));
  write_selection(out, sel);
  return kExitOk;
}

int run_adapt(const std::string& mode, const std::string& backbone, const std::string& heads,
              const std::string& config, const std::vector<std::string>& overrides, const std::string& data_dir,
              const std::string& out) {
  const auto data = load_dataset(data_dir, {"adapt_train", "valid"});
  auto cfg = read_config(config, overrides, data.spec);
  cfg.mode = mode_from_name(mode);
  const auto model = load_checkpoint(backbone);
  std::optional<HeadSelection> sel;
  if (!heads.empty()) {
    sel = read_selection(heads);
  } else if (cfg.mode != AdaptMode::one_stage && cfg.gamma > 0.0) {
    throw ConfigError("mode " + mode + " needs --heads");
  }
  const auto r = adapt(model, data.split("adapt_train"), data.split("valid"), sel ? &*sel : nullptr, cfg, print_epoch);
  save_model(out, r.model);
  write_trace(trace_path(out), r.record);
  std::printf("wrote %s (guidance loss evaluated %zu times)\n", out.c_str(), r.record.ag_evaluations);
  return kExitOk;
}

int eval(const std::string& model_path, const std::string& data_dir, const std::string& heads,
         const std::string& report) {
  const auto model = load_checkpoint(model_path);
  const auto data = load_dataset(data_dir, {"test_mono_a", "test_mono_b", "test_cs"});
  std::optional<HeadSelection> sel;
  if (!heads.empty()) sel = read_selection(heads);
  const Corpus* sets[] = {&data.split("test_mono_a"), &data.split("test_mono_b"), &data.split("test_cs")};
  const auto r = evaluate_model(model, sets, sel ? &*sel : nullptr, sel ? &data.split("test_cs") : nullptr);
  write_eval_report(report, r);
  std::printf("error rate: A %.2f%%, B %.2f%%, code-switched %.2f%%, overall %.2f%%\n", r.errors.mono_a.percent(),
              r.errors.mono_b.percent(), r.errors.code_switched.percent(), r.errors.overall.percent());
  if (r.lid_attribution) std::printf("LID attribution: %.4f over %zu word tokens\n", *r.lid_attribution, r.lid_tokens);
  return kExitOk;
}

int inspect_attention(const std::string& model_path, const std::string& data_dir, const std::string& utterance,
                      std::size_t layer, std::size_t head, const std::string& format, const std::string& out) {
  const auto fmt = heatmap_format_from_name(format);
  const auto model = load_checkpoint(model_path);
  const auto dash = utterance.rfind('-');
  if (dash == std::string::npos) throw DataError("utterance id '" + utterance + "' has no split prefix");
  const auto data = load_dataset(data_dir, {utterance.substr(0, dash)});
  const auto& u = data.split(utterance.substr(0, dash)).find(utterance);
  const auto view = attention_view(model, u, layer, head);
  export_heatmap(view.map, view.tokens, out, fmt);
  const auto label = classify_head_pattern(view.map, view.reference, model.vocab());
  std::printf("layer %zu head %zu on %s: %s pattern\n", layer, head, utterance.c_str(), pattern_name(label.label));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-guided adapter training for code-switched recognition on a synthetic task"};
  app.require_subcommand(1);

  std::string spec_file, out, data_dir, config, backbone, heads, mode, model, report, utterance, format;
  std::optional<std::uint64_t> seed;
  std::optional<double> fraction, random_fraction;
  std::optional<std::size_t> top_k;
  std::uint64_t random_seed = 1;
  std::size_t layer = 0, head = 0;
  std::vector<std::string> overrides;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic bilingual corpus");
  gen->add_option("--spec", spec_file, "Synthetic-task spec file")->required();
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--seed", seed, "Overrides the spec seed");

  auto* pre = app.add_subcommand("pretrain", "Train and freeze the monolingual backbone");
  pre->add_option("--data", data_dir, "Dataset directory")->required();
  pre->add_option("--out", out, "Output checkpoint")->required();
  pre->add_option("--config", config, "Training config file")->required();
  pre->add_option("--set", overrides, "Override a config key, key=value (repeatable)");

  auto* sel = app.add_subcommand("select-heads", "Count LID heads on the adaptation set and select the top ones");
  sel->add_option("--backbone", backbone, "Backbone checkpoint")->required();
  sel->add_option("--data", data_dir, "Dataset directory")->required();
  sel->add_option("--fraction", fraction, "Fraction of the qualifying heads");
  sel->add_option("--top-k", top_k, "Absolute number of heads");
  sel->add_option("--random", random_fraction, "Select this fraction of all heads at random instead");
  sel->add_option("--random-seed", random_seed, "Seed for --random");
  sel->add_option("--out", out, "Output heads file")->required();

  auto* ad = app.add_subcommand("adapt", "Insert adapters and train them");
  ad->add_option("--mode", mode, "one-stage | one-stage-ag | two-stage-ag")->required();
  ad->add_option("--backbone", backbone, "Backbone checkpoint")->required();
  ad->add_option("--heads", heads, "Heads file from select-heads");
  ad->add_option("--config", config, "Training config file")->required();
  ad->add_option("--set", overrides, "Override a config key, key=value (repeatable)");
  ad->add_option("--data", data_dir, "Dataset directory")->required();
  ad->add_option("--out", out, "Output checkpoint")->required();

  auto* ev = app.add_subcommand("eval", "Greedy decoding error rates on the test sets");
  ev->add_option("--model", model, "Model checkpoint")->required();
  ev->add_option("--data", data_dir, "Dataset directory")->required();
  ev->add_option("--heads", heads, "Heads file; adds the LID attribution");
  ev->add_option("--report", report, "Output CSV")->required();

  auto* ins = app.add_subcommand("inspect-attention", "Export one decoder self-attention map");
  ins->add_option("--model", model, "Model checkpoint")->required();
  ins->add_option("--data", data_dir, "Dataset directory")->required();
  ins->add_option("--utterance", utterance, "Utterance id, e.g. test_cs-00003")->required();
  ins->add_option("--layer", layer, "Decoder layer")->required();
  ins->add_option("--head", head, "Head within the layer")->required();
  ins->add_option("--format", format, "csv | pgm")->required();
  ins->add_option("--out", out, "Output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*gen) return gen_data(spec_file, out, seed);
    if (*pre) return pretrain(data_dir, out, config, overrides);
    if (*sel) return select_heads(backbone, data_dir, fraction, top_k, random_fraction, random_seed, out);
    if (*ad) return run_adapt(mode, backbone, heads, config, overrides, data_dir, out);
    if (*ev) return eval(model, data_dir, heads, report);
    if (*ins) return inspect_attention(model, data_dir, utterance, layer, head, format, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitConfig;
}

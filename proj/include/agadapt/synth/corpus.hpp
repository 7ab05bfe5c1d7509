#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "agadapt/kvconfig.hpp"
#include "agadapt/model/vocab.hpp"
#include "agadapt/numerics/tensor.hpp"

namespace agadapt {

/// Parameters of the synthetic bilingual "speech" task.
///
/// Every word owns a cluster mean in feature space: a standard-normal draw
/// plus a language offset (+lang_offset for A, -lang_offset for B) on the
/// first half of the feature dimensions. Each word is rendered as a short
/// block of noisy frames around its mean.
///
/// With `shared_base`, word k of language B reuses the standard-normal draw
/// of word k of language A, so the pair differs only by the language offset
/// (cross-language homophones).
struct SynthSpec {
  std::size_t words_per_lang = 40;
  std::size_t feat_dim = 16;
  std::size_t frames_min = 2;
  std::size_t frames_max = 4;
  double lang_offset = 2.0;
  double noise = 0.3;
  double switch_prob = 0.3;
  std::size_t utt_words_min = 3;
  std::size_t utt_words_max = 10;
  std::uint64_t seed = 1;

  std::size_t n_pretrain = 2000;
  std::size_t n_adapt = 1000;
  std::size_t n_valid = 200;
  std::size_t n_test = 200;
  double adapt_cs_share = 0.7;
  bool shared_base = false;

  /// Throws ConfigError when an invariant does not hold.
  void validate() const;
  static SynthSpec from_config(const KeyValues& kv);
  KeyValues to_config() const;
};

enum class UttKind { mono_a, mono_b, code_switched };

const char* kind_name(UttKind k);
UttKind kind_from_name(const std::string& s);

struct Utterance {
  std::string id;
  UttKind kind = UttKind::code_switched;
  /// [T x feat_dim]; values are exactly representable as f32.
  Tensor frames;
  std::vector<int> words;
  std::vector<Lang> langs;

  /// Reference y with the bilingual prompt (adaptation and evaluation).
  TokenSequence reference(const Vocabulary& vocab) const;
  /// Reference with the single-LID prompt of the utterance's language; only
  /// valid for monolingual utterances.
  TokenSequence monolingual_reference(const Vocabulary& vocab) const;
};

/// Cluster means for every word id in the vocabulary (special-token rows are
/// empty), derived from the spec seed.
class WordBank {
 public:
  WordBank(const SynthSpec& spec, const Vocabulary& vocab);
  const Tensor& mean(int word) const;
  const Vocabulary& vocab() const { return vocab_; }

 private:
  Vocabulary vocab_;
  std::vector<Tensor> means_;
};

/// Frames for one word: frame count uniform in [frames_min, frames_max], each
/// frame = mean + N(0, noise^2), rounded to f32. Throws DataError for a
/// non-word id.
Tensor render_features(int word, const SynthSpec& spec, const WordBank& bank, std::mt19937_64& rng);

/// Draws one utterance. Monolingual kinds use a single language; the
/// code-switched kind flips language after each word with probability
/// switch_prob and always contains both languages.
Utterance generate_utterance(const SynthSpec& spec, const WordBank& bank, UttKind kind, std::mt19937_64& rng);

/// Deterministic per-utterance stream keyed by (seed, split, index).
std::mt19937_64 utterance_rng(std::uint64_t seed, const std::string& split, std::size_t index);

struct Corpus {
  std::string name;
  std::vector<Utterance> utterances;

  const Utterance& find(const std::string& id) const;
};

inline constexpr const char* kSplitNames[] = {"pretrain", "adapt_train", "valid", "test_mono_a", "test_mono_b",
                                              "test_cs"};

Corpus generate_split(const SynthSpec& spec, const WordBank& bank, const std::string& split);

/// Writes <dir>/<name>.tsv (manifest) and <dir>/<name>.frames.
///
/// Manifest line: id, kind, comma-separated word ids, language tags (one char
/// per word), byte offset and byte length of the utterance's block in the
/// frames file. A block is u32 T, u32 featdim, then T*featdim little-endian
/// f32 values.
void write_corpus(const std::filesystem::path& dir, const Corpus& corpus);
Corpus read_corpus(const std::filesystem::path& dir, const std::string& name);

/// Generates every split plus spec.cfg into `dir`.
void generate_dataset(const SynthSpec& spec, const std::filesystem::path& dir);

}  // namespace agadapt

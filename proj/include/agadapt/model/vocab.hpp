#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace agadapt {

/// Language tag of a token. Language A pairs with the <zh> LID token and
/// language B with <en>.
enum class Lang : std::uint8_t { none = 0, a = 1, b = 2 };

char lang_code(Lang l);  // '-', 'A', 'B'
Lang lang_from_code(char c);

namespace tok {
inline constexpr std::string_view sot = "<sot>";
inline constexpr std::string_view zh = "<zh>";
inline constexpr std::string_view en = "<en>";
inline constexpr std::string_view trans = "<trans>";
inline constexpr std::string_view nots = "<nots>";
inline constexpr std::string_view eot = "<eot>";
inline constexpr std::string_view blnk = "<blnk>";
}  // namespace tok

class Vocabulary {
 public:
  /// Seven special tokens (ids 0..6 in the order sot, zh, en, trans, nots,
  /// eot, blnk) followed by `words_a` language-A and `words_b` language-B
  /// word tokens named a00.., b00...
  static Vocabulary standard(std::size_t words_a, std::size_t words_b);
  /// Arbitrary token list; validates uniqueness and that special tokens carry
  /// no language tag.
  static Vocabulary from_tokens(std::vector<std::string> tokens, std::vector<Lang> langs);

  std::size_t size() const { return tokens_.size(); }
  std::optional<int> find(std::string_view token) const;
  /// Throws ConfigError when the token is absent.
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  Lang lang(int id) const;
  bool is_word(int id) const { return lang(id) != Lang::none; }
  const std::vector<int>& words(Lang l) const { return l == Lang::a ? words_a_ : words_b_; }
  /// LID token id for a language (<zh> for A, <en> for B).
  int lid_for(Lang l) const;

 private:
  std::vector<std::string> tokens_;
  std::vector<Lang> langs_;
  std::map<std::string, int, std::less<>> index_;
  std::vector<int> words_a_;
  std::vector<int> words_b_;
};

/// <sot><zh><en><trans><nots>
std::vector<int> build_prompt(const Vocabulary& vocab);
/// <sot><lid><trans><nots>, used while pretraining the backbone.
std::vector<int> build_monolingual_prompt(const Vocabulary& vocab, Lang lang);

enum class PromptKind { bilingual, monolingual };

/// Target token sequence y: prompt, content words, <eot>.
struct TokenSequence {
  std::vector<int> ids;
  std::vector<Lang> langs;
  std::vector<std::size_t> lid_positions;
  std::size_t prompt_length = 0;

  std::size_t size() const { return ids.size(); }
  std::span<const int> content() const {
    return std::span<const int>(ids).subspan(prompt_length, ids.size() - prompt_length - 1);
  }
};

/// Wraps content words with a prompt and <eot>. For the monolingual prompt,
/// `mono_lang` picks the LID token.
TokenSequence make_sequence(const Vocabulary& vocab, std::span<const int> words,
                            PromptKind kind = PromptKind::bilingual, Lang mono_lang = Lang::a);

}  // namespace agadapt

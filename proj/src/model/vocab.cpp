#include "agadapt/model/vocab.hpp"

#include <cstdio>

#include "agadapt/error.hpp"

namespace agadapt {

char lang_code(Lang l) {
  switch (l) {
    case Lang::a:
      return 'A';
    case Lang::b:
      return 'B';
    default:
      return '-';
  }
}

Lang lang_from_code(char c) {
  switch (c) {
    case 'A':
      return Lang::a;
    case 'B':
      return Lang::b;
    case '-':
      return Lang::none;
    default:
      throw DataError(std::string("unknown language tag '") + c + "'");
  }
}

Vocabulary Vocabulary::standard(std::size_t words_a, std::size_t words_b) {
  std::vector<std::string> tokens;
  std::vector<Lang> langs;
  for (auto t : {tok::sot, tok::zh, tok::en, tok::trans, tok::nots, tok::eot, tok::blnk}) {
    tokens.emplace_back(t);
    langs.push_back(Lang::none);
  }
  char buf[32];
  for (std::size_t i = 0; i < words_a; ++i) {
    std::snprintf(buf, sizeof buf, "a%02zu", i);
    tokens.emplace_back(buf);
    langs.push_back(Lang::a);
  }
  for (std::size_t i = 0; i < words_b; ++i) {
    std::snprintf(buf, sizeof buf, "b%02zu", i);
    tokens.emplace_back(buf);
    langs.push_back(Lang::b);
  }
  return from_tokens(std::move(tokens), std::move(langs));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens, std::vector<Lang> langs) {
  if (tokens.size() != langs.size()) throw ConfigError("vocabulary: token/tag count mismatch");
  Vocabulary v;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const bool special = tokens[i].size() > 1 && tokens[i].front() == '<' && tokens[i].back() == '>';
    if (special && langs[i] != Lang::none) throw ConfigError("vocabulary: special token with language tag");
    if (!special && langs[i] == Lang::none) throw ConfigError("vocabulary: word token without language tag");
    if (!v.index_.emplace(tokens[i], static_cast<int>(i)).second) {
      throw ConfigError("vocabulary: duplicate token " + tokens[i]);
    }
    if (langs[i] == Lang::a) v.words_a_.push_back(static_cast<int>(i));
    if (langs[i] == Lang::b) v.words_b_.push_back(static_cast<int>(i));
  }
  v.tokens_ = std::move(tokens);
  v.langs_ = std::move(langs);
  return v;
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::id(std::string_view token) const {
  auto found = find(token);
  if (!found) throw ConfigError("vocabulary is missing token " + std::string(token));
  return *found;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw DataError("token id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

Lang Vocabulary::lang(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= langs_.size()) throw DataError("token id out of range");
  return langs_[static_cast<std::size_t>(id)];
}

int Vocabulary::lid_for(Lang l) const {
  if (l == Lang::a) return id(tok::zh);
  if (l == Lang::b) return id(tok::en);
  throw DataError("no LID token for untagged language");
}

std::vector<int> build_prompt(const Vocabulary& vocab) {
  return {vocab.id(tok::sot), vocab.id(tok::zh), vocab.id(tok::en), vocab.id(tok::trans), vocab.id(tok::nots)};
}

std::vector<int> build_monolingual_prompt(const Vocabulary& vocab, Lang lang) {
  return {vocab.id(tok::sot), vocab.lid_for(lang), vocab.id(tok::trans), vocab.id(tok::nots)};
}

TokenSequence make_sequence(const Vocabulary& vocab, std::span<const int> words, PromptKind kind,
                            Lang mono_lang) {
  TokenSequence seq;
  if (kind == PromptKind::bilingual) {
    seq.ids = build_prompt(vocab);
    seq.lid_positions = {1, 2};
  } else {
    seq.ids = build_monolingual_prompt(vocab, mono_lang);
    seq.lid_positions = {1};
  }
  seq.prompt_length = seq.ids.size();
  seq.langs.assign(seq.ids.size(), Lang::none);
  for (int w : words) {
    const Lang l = vocab.lang(w);
    if (l == Lang::none) throw DataError("content token " + vocab.token(w) + " is not a word");
    seq.ids.push_back(w);
    seq.langs.push_back(l);
  }
  seq.ids.push_back(vocab.id(tok::eot));
  seq.langs.push_back(Lang::none);
  return seq;
}

}  // namespace agadapt

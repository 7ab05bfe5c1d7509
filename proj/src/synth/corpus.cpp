#include "agadapt/synth/corpus.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "agadapt/error.hpp"

namespace agadapt {

static_assert(std::endian::native == std::endian::little, "frame I/O assumes a little-endian host");

namespace {

constexpr int kMaxResample = 32;

std::uint32_t fnv1a(const std::string& s) {
  std::uint32_t h = 2166136261u;
  for (unsigned char c : s) {
    h ^= c;
    h *= 16777619u;
  }
  return h;
}

Lang other(Lang l) { return l == Lang::a ? Lang::b : Lang::a; }

bool bilingual(const std::vector<Lang>& langs) {
  bool a = false;
  bool b = false;
  for (auto l : langs) {
    a = a || l == Lang::a;
    b = b || l == Lang::b;
  }
  return a && b;
}

}  // namespace

void SynthSpec::validate() const {
  if (words_per_lang == 0 || feat_dim < 2) throw ConfigError("synth spec: need words and at least 2 feature dims");
  if (frames_min == 0 || frames_max < frames_min) throw ConfigError("synth spec: bad frames-per-word range");
  if (!(noise >= 0.0)) throw ConfigError("synth spec: noise must be >= 0");
  if (!(switch_prob >= 0.0 && switch_prob <= 1.0)) throw ConfigError("synth spec: switch_prob must lie in [0, 1]");
  if (utt_words_min == 0 || utt_words_max < utt_words_min) throw ConfigError("synth spec: bad word-count range");
  if (!(adapt_cs_share >= 0.0 && adapt_cs_share <= 1.0)) throw ConfigError("synth spec: adapt_cs_share in [0, 1]");
  if (n_pretrain == 0 || n_adapt == 0 || n_valid == 0 || n_test == 0) throw ConfigError("synth spec: empty split");
}

SynthSpec SynthSpec::from_config(const KeyValues& kv) {
  kv.require_known({"words_per_lang", "feat_dim", "frames_min", "frames_max", "lang_offset", "noise", "switch_prob",
                    "utt_words_min", "utt_words_max", "seed", "n_pretrain", "n_adapt", "n_valid", "n_test",
                    "adapt_cs_share", "shared_base"});
  SynthSpec s;
  s.words_per_lang = kv.get_uint("words_per_lang", s.words_per_lang);
  s.feat_dim = kv.get_uint("feat_dim", s.feat_dim);
  s.frames_min = kv.get_uint("frames_min", s.frames_min);
  s.frames_max = kv.get_uint("frames_max", s.frames_max);
  s.lang_offset = kv.get_double("lang_offset", s.lang_offset);
  s.noise = kv.get_double("noise", s.noise);
  s.switch_prob = kv.get_double("switch_prob", s.switch_prob);
  s.utt_words_min = kv.get_uint("utt_words_min", s.utt_words_min);
  s.utt_words_max = kv.get_uint("utt_words_max", s.utt_words_max);
  s.seed = kv.get_uint("seed", s.seed);
  s.n_pretrain = kv.get_uint("n_pretrain", s.n_pretrain);
  s.n_adapt = kv.get_uint("n_adapt", s.n_adapt);
  s.n_valid = kv.get_uint("n_valid", s.n_valid);
  s.n_test = kv.get_uint("n_test", s.n_test);
  s.adapt_cs_share = kv.get_double("adapt_cs_share", s.adapt_cs_share);
  s.shared_base = kv.get_bool("shared_base", s.shared_base);
  s.validate();
  return s;
}

KeyValues SynthSpec::to_config() const {
  KeyValues kv;
  const auto num = format_number;
  kv.set("words_per_lang", std::to_string(words_per_lang));
  kv.set("feat_dim", std::to_string(feat_dim));
  kv.set("frames_min", std::to_string(frames_min));
  kv.set("frames_max", std::to_string(frames_max));
  kv.set("lang_offset", num(lang_offset));
  kv.set("noise", num(noise));
  kv.set("switch_prob", num(switch_prob));
  kv.set("utt_words_min", std::to_string(utt_words_min));
  kv.set("utt_words_max", std::to_string(utt_words_max));
  kv.set("seed", std::to_string(seed));
  kv.set("n_pretrain", std::to_string(n_pretrain));
  kv.set("n_adapt", std::to_string(n_adapt));
  kv.set("n_valid", std::to_string(n_valid));
  kv.set("n_test", std::to_string(n_test));
  kv.set("adapt_cs_share", num(adapt_cs_share));
  kv.set("shared_base", shared_base ? "true" : "false");
  return kv;
}

const char* kind_name(UttKind k) {
  switch (k) {
    case UttKind::mono_a:
      return "mono-a";
    case UttKind::mono_b:
      return "mono-b";
    default:
      return "cs";
  }
}

UttKind kind_from_name(const std::string& s) {
  if (s == "mono-a") return UttKind::mono_a;
  if (s == "mono-b") return UttKind::mono_b;
  if (s == "cs") return UttKind::code_switched;
  throw DataError("unknown utterance kind '" + s + "'");
}

TokenSequence Utterance::reference(const Vocabulary& vocab) const {
  return make_sequence(vocab, words, PromptKind::bilingual);
}

TokenSequence Utterance::monolingual_reference(const Vocabulary& vocab) const {
  if (kind == UttKind::code_switched) throw DataError("monolingual prompt requested for code-switched " + id);
  return make_sequence(vocab, words, PromptKind::monolingual, kind == UttKind::mono_a ? Lang::a : Lang::b);
}

WordBank::WordBank(const SynthSpec& spec, const Vocabulary& vocab) : vocab_(vocab), means_(vocab.size()) {
  spec.validate();
  if (vocab.words(Lang::a).size() != spec.words_per_lang || vocab.words(Lang::b).size() != spec.words_per_lang) {
    throw ConfigError("word bank: vocabulary does not match words_per_lang");
  }
  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> nd(0.0, 1.0);
  const std::size_t half = spec.feat_dim / 2;
  std::vector<std::vector<double>> base_a;
  for (Lang l : {Lang::a, Lang::b}) {
    const double off = l == Lang::a ? spec.lang_offset : -spec.lang_offset;
    const auto& words = vocab.words(l);
    for (std::size_t k = 0; k < words.size(); ++k) {
      std::vector<double> base(spec.feat_dim);
      if (l == Lang::b && spec.shared_base) {
        base = base_a[k];
      } else {
        for (auto& v : base) v = nd(rng);
      }
      if (l == Lang::a) base_a.push_back(base);
      Tensor m({spec.feat_dim}, 0.0);
      for (std::size_t d = 0; d < spec.feat_dim; ++d) m[d] = base[d] + (d < half ? off : 0.0);
      means_[static_cast<std::size_t>(words[k])] = std::move(m);
    }
  }
}

const Tensor& WordBank::mean(int word) const {
  if (word < 0 || static_cast<std::size_t>(word) >= means_.size() || means_[static_cast<std::size_t>(word)].size() == 0) {
    throw DataError("word bank: unknown word id " + std::to_string(word));
  }
  return means_[static_cast<std::size_t>(word)];
}

Tensor render_features(int word, const SynthSpec& spec, const WordBank& bank, std::mt19937_64& rng) {
  const Tensor& mu = bank.mean(word);
  std::uniform_int_distribution<std::size_t> nf(spec.frames_min, spec.frames_max);
  const std::size_t t = nf(rng);
  Tensor out = Tensor::matrix(t, spec.feat_dim);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (std::size_t r = 0; r < t; ++r) {
    for (std::size_t d = 0; d < spec.feat_dim; ++d) {
      const double noise = spec.noise > 0.0 ? spec.noise * nd(rng) : 0.0;
      out(r, d) = static_cast<double>(static_cast<float>(mu[d] + noise));
    }
  }
  return out;
}

Utterance generate_utterance(const SynthSpec& spec, const WordBank& bank, UttKind kind, std::mt19937_64& rng) {
  const Vocabulary& vocab = bank.vocab();
  std::uniform_int_distribution<std::size_t> nw(spec.utt_words_min, spec.utt_words_max);
  std::uniform_int_distribution<std::size_t> pick(0, spec.words_per_lang - 1);
  std::bernoulli_distribution coin(0.5);
  std::bernoulli_distribution flip(spec.switch_prob);

  std::size_t count = nw(rng);
  std::vector<Lang> langs;
  if (kind == UttKind::code_switched) {
    count = std::max<std::size_t>(count, 2);
    for (int attempt = 0; attempt < kMaxResample && !bilingual(langs); ++attempt) {
      langs.clear();
      Lang cur = coin(rng) ? Lang::a : Lang::b;
      for (std::size_t i = 0; i < count; ++i) {
        if (i > 0 && flip(rng)) cur = other(cur);
        langs.push_back(cur);
      }
    }
    if (!bilingual(langs)) {
      // low switch probability: force one switch point
      std::uniform_int_distribution<std::size_t> at(1, count - 1);
      const std::size_t k = at(rng);
      for (std::size_t i = k; i < count; ++i) langs[i] = other(langs[0]);
    }
  } else {
    langs.assign(count, kind == UttKind::mono_a ? Lang::a : Lang::b);
  }

  Utterance u;
  u.kind = kind;
  u.langs = langs;
  std::vector<Tensor> blocks;
  std::size_t total = 0;
  for (Lang l : langs) {
    const int w = vocab.words(l)[pick(rng)];
    u.words.push_back(w);
    blocks.push_back(render_features(w, spec, bank, rng));
    total += blocks.back().rows();
  }
  u.frames = Tensor::matrix(total, spec.feat_dim);
  std::size_t row = 0;
  for (const auto& b : blocks) {
    std::copy(b.ptr(), b.ptr() + b.size(), u.frames.ptr() + row * spec.feat_dim);
    row += b.rows();
  }
  return u;
}

std::mt19937_64 utterance_rng(std::uint64_t seed, const std::string& split, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), fnv1a(split),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

const Utterance& Corpus::find(const std::string& id) const {
  for (const auto& u : utterances) {
    if (u.id == id) return u;
  }
  throw DataError("utterance '" + id + "' not found in " + name);
}

Corpus generate_split(const SynthSpec& spec, const WordBank& bank, const std::string& split) {
  std::size_t n = 0;
  double share_cs = 0.0;
  double share_a_of_mono = 0.5;
  if (split == "pretrain") {
    n = spec.n_pretrain;
  } else if (split == "adapt_train") {
    n = spec.n_adapt;
    share_cs = spec.adapt_cs_share;
  } else if (split == "valid") {
    n = spec.n_valid;
    share_cs = spec.adapt_cs_share;
  } else if (split == "test_mono_a") {
    n = spec.n_test;
    share_a_of_mono = 1.0;
  } else if (split == "test_mono_b") {
    n = spec.n_test;
    share_a_of_mono = 0.0;
  } else if (split == "test_cs") {
    n = spec.n_test;
    share_cs = 1.0;
  } else {
    throw ConfigError("unknown split '" + split + "'");
  }
  const auto n_cs = static_cast<std::size_t>(std::llround(share_cs * static_cast<double>(n)));
  const auto n_a = static_cast<std::size_t>(std::llround(share_a_of_mono * static_cast<double>(n - n_cs)));

  Corpus c;
  c.name = split;
  c.utterances.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    UttKind kind = UttKind::code_switched;
    if (i >= n_cs) kind = (i - n_cs) < n_a ? UttKind::mono_a : UttKind::mono_b;
    auto rng = utterance_rng(spec.seed, split, i);
    Utterance u = generate_utterance(spec, bank, kind, rng);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s-%05zu", split.c_str(), i);
    u.id = buf;
    c.utterances.push_back(std::move(u));
  }
  return c;
}

void write_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / (corpus.name + ".tsv"), std::ios::trunc);
  std::ofstream frames(dir / (corpus.name + ".frames"), std::ios::binary | std::ios::trunc);
  if (!manifest || !frames) throw DataError("cannot write corpus files in " + dir.string());
  std::uint64_t offset = 0;
  for (const auto& u : corpus.utterances) {
    const auto t = static_cast<std::uint32_t>(u.frames.rows());
    const auto f = static_cast<std::uint32_t>(u.frames.cols());
    frames.write(reinterpret_cast<const char*>(&t), 4);
    frames.write(reinterpret_cast<const char*>(&f), 4);
    for (double v : u.frames.data()) {
      const auto x = static_cast<float>(v);
      frames.write(reinterpret_cast<const char*>(&x), 4);
    }
    const std::uint64_t length = 8 + 4ULL * t * f;
    manifest << u.id << '\t' << kind_name(u.kind) << '\t';
    for (std::size_t i = 0; i < u.words.size(); ++i) manifest << (i ? "," : "") << u.words[i];
    manifest << '\t';
    for (auto l : u.langs) manifest << lang_code(l);
    manifest << '\t' << offset << '\t' << length << '\n';
    offset += length;
  }
  if (!manifest || !frames) throw DataError("failed writing corpus " + corpus.name);
}

Corpus read_corpus(const std::filesystem::path& dir, const std::string& name) {
  std::ifstream manifest(dir / (name + ".tsv"));
  std::ifstream frames(dir / (name + ".frames"), std::ios::binary);
  if (!manifest || !frames) throw DataError("cannot read corpus '" + name + "' in " + dir.string());
  Corpus c;
  c.name = name;
  std::string line;
  int lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    const std::string where = name + ".tsv:" + std::to_string(lineno);
    if (fields.size() != 6) throw DataError(where + ": expected 6 fields");
    Utterance u;
    u.id = fields[0];
    u.kind = kind_from_name(fields[1]);
    std::stringstream ws(fields[2]);
    std::string tokstr;
    try {
      while (std::getline(ws, tokstr, ',')) u.words.push_back(std::stoi(tokstr));
      for (char ch : fields[3]) u.langs.push_back(lang_from_code(ch));
      const auto offset = std::stoull(fields[4]);
      const auto length = std::stoull(fields[5]);
      if (u.words.size() != u.langs.size() || u.words.empty()) throw DataError(where + ": token/tag count mismatch");
      frames.seekg(static_cast<std::streamoff>(offset));
      std::uint32_t t = 0;
      std::uint32_t f = 0;
      frames.read(reinterpret_cast<char*>(&t), 4);
      frames.read(reinterpret_cast<char*>(&f), 4);
      if (!frames || t == 0 || f == 0 || length != 8 + 4ULL * t * f) throw DataError(where + ": bad frame block");
      std::vector<float> buf(static_cast<std::size_t>(t) * f);
      frames.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
      if (!frames) throw DataError(where + ": truncated frame block");
      u.frames = Tensor::matrix(t, f);
      for (std::size_t i = 0; i < buf.size(); ++i) u.frames[i] = static_cast<double>(buf[i]);
    } catch (const std::invalid_argument&) {
      throw DataError(where + ": malformed number");
    } catch (const std::out_of_range&) {
      throw DataError(where + ": number out of range");
    }
    c.utterances.push_back(std::move(u));
  }
  if (c.utterances.empty()) throw DataError("corpus '" + name + "' is empty");
  return c;
}

void generate_dataset(const SynthSpec& spec, const std::filesystem::path& dir) {
  spec.validate();
  std::filesystem::create_directories(dir);
  const auto vocab = Vocabulary::standard(spec.words_per_lang, spec.words_per_lang);
  WordBank bank(spec, vocab);
  for (const char* split : kSplitNames) write_corpus(dir, generate_split(spec, bank, split));
  std::ofstream os(dir / "spec.cfg", std::ios::trunc);
  const auto kv = spec.to_config();
  for (const auto& [k, v] : kv.values()) os << k << " = " << v << '\n';
  if (!os) throw DataError("cannot write spec.cfg in " + dir.string());
}

}  // namespace agadapt

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "agadapt/error.hpp"
#include "agadapt/model/checkpoint.hpp"
#include "agadapt/model/transformer.hpp"
#include "agadapt/model/vocab.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace agadapt;
using testutil::random_matrix;

namespace {

std::vector<int> sample_ids(const Vocabulary& v) {
  auto ids = build_prompt(v);
  for (int w : {v.words(Lang::a)[1], v.words(Lang::b)[2], v.words(Lang::a)[0]}) ids.push_back(w);
  ids.push_back(v.id(tok::eot));
  return ids;
}

Tensor logits_of(const Transformer& m, const Tensor& frames, std::span<const int> ids, AdapterMask mask = {}) {
  Graph g(false);
  return m.forward(g, frames, ids, mask).logits.value();
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("agadapt_test_model_" + name);
}

}  // namespace

TEST_CASE("vocabulary and prompts") {
  auto v = Vocabulary::standard(3, 2);
  CHECK(v.size() == 7 + 5);
  CHECK(v.words(Lang::a).size() == 3);
  CHECK(v.words(Lang::b).size() == 2);
  for (int w : v.words(Lang::a)) CHECK(v.lang(w) == Lang::a);
  for (int w : v.words(Lang::b)) CHECK(v.lang(w) == Lang::b);

  const auto p = build_prompt(v);
  REQUIRE(p.size() == 5);
  CHECK(p == std::vector<int>{v.id(tok::sot), v.id(tok::zh), v.id(tok::en), v.id(tok::trans), v.id(tok::nots)});
  const auto mono = build_monolingual_prompt(v, Lang::b);
  CHECK(mono == std::vector<int>{v.id(tok::sot), v.id(tok::en), v.id(tok::trans), v.id(tok::nots)});

  const int words[] = {v.words(Lang::a)[0], v.words(Lang::b)[1]};
  auto y = make_sequence(v, words);
  CHECK(y.lid_positions == std::vector<std::size_t>{1, 2});
  CHECK(y.size() == 8);
  CHECK(y.ids.back() == v.id(tok::eot));
  CHECK(y.langs[5] == Lang::a);
  CHECK(y.langs[6] == Lang::b);
  CHECK(y.langs[0] == Lang::none);
}

TEST_CASE("prompt construction rejects a vocabulary without <trans>") {
  auto v = Vocabulary::from_tokens({"<sot>", "<zh>", "<en>", "<nots>", "<eot>", "w"},
                                   {Lang::none, Lang::none, Lang::none, Lang::none, Lang::none, Lang::a});
  CHECK_THROWS_AS(build_prompt(v), ConfigError);
  CHECK_THROWS_AS(Vocabulary::from_tokens({"a", "a"}, {Lang::a, Lang::a}), ConfigError);
  CHECK_THROWS_AS(Vocabulary::from_tokens({"a"}, {Lang::none}), ConfigError);
}

TEST_CASE("attention_map examples") {
  SUBCASE("zero queries give uniform causal rows") {
    std::mt19937_64 rng(1);
    auto a = attention_map(Tensor::matrix(4, 3), random_matrix(4, 3, rng), true);
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        CHECK(a(i, j) == doctest::Approx(j <= i ? 1.0 / static_cast<double>(i + 1) : 0.0).epsilon(1e-14));
      }
    }
  }
  SUBCASE("single token") {
    auto a = attention_map(Tensor::from_rows({{0.3, -1.0}}), Tensor::from_rows({{2.0, 0.5}}), true);
    CHECK(a(0, 0) == 1.0);
  }
  SUBCASE("two tokens, d = 1") {
    auto a = attention_map(Tensor::from_rows({{1}, {1}}), Tensor::from_rows({{0}, {2}}), true);
    CHECK(a(0, 0) == 1.0);
    CHECK(a(0, 1) == 0.0);
    // softmax([0, 2]) evaluated independently in long double.
    const long double z = 1.0L + std::exp(2.0L);
    CHECK(a(1, 0) == doctest::Approx(static_cast<double>(1.0L / z)).epsilon(1e-15));
    CHECK(a(1, 1) == doctest::Approx(static_cast<double>(std::exp(2.0L) / z)).epsilon(1e-15));
    CHECK(a(1, 0) == doctest::Approx(0.11920).epsilon(1e-4));
    CHECK(a(1, 1) == doctest::Approx(0.88080).epsilon(1e-5));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(attention_map(Tensor::matrix(2, 2), Tensor::matrix(2, 3), true), NumericError);
  }
}

TEST_CASE("adapter_apply examples") {
  std::mt19937_64 rng(2);
  SUBCASE("zero up-projection is the identity, bitwise") {
    const auto x = random_matrix(5, 8, rng);
    AdapterWeights w{random_matrix(8, 2, rng), random_matrix(1, 2, rng), Tensor::matrix(2, 8), Tensor::matrix(1, 8)};
    CHECK(adapter_apply(x, w).bit_equal(x));
  }
  SUBCASE("identity projections with identity activation double the input") {
    const auto x = random_matrix(3, 4, rng);
    auto eye = Tensor::matrix(4, 4);
    for (std::size_t i = 0; i < 4; ++i) eye(i, i) = 1.0;
    AdapterWeights w{eye, Tensor::matrix(1, 4), eye, Tensor::matrix(1, 4)};
    const auto y = adapter_apply(x, w, Activation::identity);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == 2.0 * x[i]);
  }
  SUBCASE("random 8 -> 2 -> 8 adapter against direct loops") {
    const auto x = random_matrix(6, 8, rng);
    AdapterWeights w{random_matrix(8, 2, rng), random_matrix(1, 2, rng), random_matrix(2, 8, rng),
                     random_matrix(1, 8, rng)};
    const auto y = adapter_apply(x, w);
    for (std::size_t t = 0; t < 6; ++t) {
      double h[2];
      for (std::size_t k = 0; k < 2; ++k) {
        double s = w.down_b[k];
        for (std::size_t i = 0; i < 8; ++i) s += x(t, i) * w.down_w(i, k);
        h[k] = 0.5 * s * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (s + 0.044715 * s * s * s)));
      }
      for (std::size_t j = 0; j < 8; ++j) {
        const double expect = x(t, j) + w.up_b[j] + h[0] * w.up_w(0, j) + h[1] * w.up_w(1, j);
        CHECK(y(t, j) == doctest::Approx(expect).epsilon(1e-13));
      }
    }
  }
  SUBCASE("dimension mismatch") {
    AdapterWeights w{Tensor::matrix(8, 2), Tensor::matrix(1, 2), Tensor::matrix(2, 7), Tensor::matrix(1, 8)};
    CHECK_THROWS_AS(adapter_apply(Tensor::matrix(2, 8), w), NumericError);
  }
}

TEST_CASE("model config validation") {
  ModelConfig c = testutil::tiny_config();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = testutil::tiny_config();
  c.adapter_dim = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("forward shape contract") {
  const auto cfg = testutil::tiny_config();
  Transformer m(cfg, 3);
  std::mt19937_64 rng(4);
  const auto frames = random_matrix(7, cfg.feat_dim, rng);
  const auto ids = sample_ids(m.vocab());
  Graph g(false);
  auto res = m.forward(g, frames, ids);
  CHECK(res.logits.value().rows() == ids.size());
  CHECK(res.logits.value().cols() == m.vocab().size());
  REQUIRE(res.self_attention.size() == cfg.dec_layers * cfg.heads);
  for (auto a : res.self_attention) {
    const Tensor& v = a.value();
    CHECK(v.rows() == ids.size());
    CHECK(v.cols() == ids.size());
    for (std::size_t i = 0; i < v.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < v.cols(); ++j) {
        s += v(i, j);
        if (j > i) CHECK(v(i, j) == 0.0);
      }
      CHECK(std::abs(s - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("forward rejects over-long inputs") {
  const auto cfg = testutil::tiny_config();
  Transformer m(cfg, 3);
  std::vector<int> ids(cfg.max_tokens + 1, m.vocab().id(tok::blnk));
  Graph g(false);
  CHECK_THROWS_AS(m.forward(g, Tensor::matrix(3, cfg.feat_dim), ids), DataError);
  Graph h(false);
  CHECK_THROWS_AS(m.forward(h, Tensor::matrix(cfg.max_frames + 1, cfg.feat_dim), sample_ids(m.vocab())), DataError);
}

TEST_CASE("property: causality of the decoder") {
  const auto cfg = testutil::tiny_config();
  Transformer m(cfg, 5);
  testutil::randomize_adapters(m, 6);
  std::mt19937_64 rng(7);
  const auto frames = random_matrix(9, cfg.feat_dim, rng);
  const auto ids = sample_ids(m.vocab());
  const auto base = logits_of(m, frames, ids);
  std::uniform_int_distribution<int> tok(0, static_cast<int>(m.vocab().size()) - 1);
  for (std::size_t k = 0; k + 1 < ids.size(); ++k) {
    auto changed = ids;
    for (std::size_t n = k + 1; n < ids.size(); ++n) changed[n] = tok(rng);
    const auto out = logits_of(m, frames, changed);
    for (std::size_t r = 0; r <= k; ++r) {
      for (std::size_t c = 0; c < base.cols(); ++c) CHECK(out(r, c) == base(r, c));
    }
  }
}

TEST_CASE("zero-initialised adapters preserve the backbone exactly") {
  const auto cfg = testutil::tiny_config();
  Transformer m(cfg, 8);
  std::mt19937_64 rng(9);
  const auto frames = random_matrix(6, cfg.feat_dim, rng);
  const auto ids = sample_ids(m.vocab());
  const auto before = logits_of(m, frames, ids);
  m.freeze_backbone();
  m.init_adapters(10);
  CHECK(logits_of(m, frames, ids).bit_equal(before));
  CHECK(logits_of(m, frames, ids, AdapterMask{true, false}).bit_equal(before));
  CHECK(logits_of(m, frames, ids, AdapterMask{false, false}).bit_equal(before));
  // Decoder adapters disabled versus present at zero init.
  testutil::randomize_adapters(m, 11);
  for (auto& p : m.params().items()) {
    if (is_adapter_param(p.name) && !is_encoder_param(p.name) && p.name.find(".up.") != std::string::npos) {
      p.value.fill(0.0);
    }
  }
  CHECK(logits_of(m, frames, ids).bit_equal(logits_of(m, frames, ids, AdapterMask{true, false})));
}

TEST_CASE("adapter bookkeeping") {
  const auto cfg = testutil::tiny_config();
  Transformer m(cfg, 12);
  const std::size_t backbone = m.params().count_values(false);
  m.freeze_backbone();
  const auto set = m.init_adapters(13);
  // Closed form per insertion point, two insertion points per layer.
  const std::size_t per_point = 2 * cfg.width * cfg.adapter_dim + cfg.width + cfg.adapter_dim;
  const std::size_t closed = per_point * 2 * (cfg.enc_layers + cfg.dec_layers);
  std::size_t enumerated = 0;
  for (const auto& p : m.params().items()) {
    if (is_adapter_param(p.name)) {
      enumerated += p.value.size();
      CHECK(p.trainable);
    } else {
      CHECK_FALSE(p.trainable);
    }
  }
  CHECK(enumerated == closed);
  CHECK(set.adapter_values == closed);
  CHECK(set.backbone_values == backbone);
  CHECK(set.encoder.size() == 8 * cfg.enc_layers);
  CHECK(set.decoder.size() == 8 * cfg.dec_layers);
  CHECK(set.trainable_fraction() ==
        doctest::Approx(static_cast<double>(closed) / static_cast<double>(closed + backbone)));
  CHECK(m.params().count_values(true) == closed);

  CHECK(format_param_share(14300000, 240700000) == "14.3 M (5.6%)");
  CHECK(format_param_share(1500, 8500) == "1.5 K (15.0%)");

  for (const auto& p : m.params().items()) {
    if (p.name.find(".up.") != std::string::npos || p.name.find(".bias") != std::string::npos) {
      if (is_adapter_param(p.name)) {
        for (auto v : p.value.data()) CHECK(v == 0.0);
      }
    }
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  const auto cfg = testutil::tiny_config();
  Transformer m(cfg, 14);
  m.freeze_backbone();
  m.init_adapters(15);
  testutil::randomize_adapters(m, 16);
  const auto path = temp_path("roundtrip.ckpt");
  save_model(path, m);
  const auto back = load_model(path);
  REQUIRE(back.params().size() == m.params().size());
  for (const auto& p : m.params().items()) {
    CHECK(back.params().at(p.name).value.bit_equal(p.value));
    CHECK_FALSE(back.params().at(p.name).trainable);
  }
  CHECK(back.config().width == cfg.width);

  // Raw container round trip and header layout.
  NamedTensors raw{{"x", Tensor::from_rows({{1.5, -0.0}, {1e-300, 3.0}})}, {"s", Tensor::scalar(7.0)}};
  write_tensors(path, raw);
  std::ifstream is(path, std::ios::binary);
  char magic[4];
  is.read(magic, 4);
  CHECK(std::string(magic, 4) == "AGCK");
  const auto again = read_tensors(path);
  REQUIRE(again.size() == 2);
  CHECK(again[0].first == "x");
  CHECK(again[0].second.bit_equal(raw[0].second));
  CHECK(again[1].second.bit_equal(raw[1].second));
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint loader rejects damaged files") {
  const auto path = temp_path("bad.ckpt");
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOPE";
  }
  CHECK_THROWS_AS(read_tensors(path), DataError);
  CHECK_THROWS_AS(read_tensors(temp_path("missing.ckpt")), DataError);
  std::filesystem::remove(path);
}

TEST_CASE("greedy decoding stops at the token budget") {
  const auto cfg = testutil::tiny_config();
  Transformer m(cfg, 17);
  std::mt19937_64 rng(18);
  const auto prompt = build_prompt(m.vocab());
  const auto out = m.greedy_decode(random_matrix(5, cfg.feat_dim, rng), prompt);
  CHECK(out.size() + prompt.size() <= cfg.max_tokens);
  for (int t : out) CHECK(t != m.vocab().id(tok::eot));
}

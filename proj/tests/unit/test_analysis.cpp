#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "agadapt/analysis/analysis.hpp"
#include "agadapt/error.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace agadapt;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("agadapt_test_analysis_" + name);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct Sample {
  Vocabulary vocab = Vocabulary::standard(3, 3);
  TokenSequence y;
  Sample() {
    const int words[] = {vocab.words(Lang::a)[0], vocab.words(Lang::b)[1], vocab.words(Lang::a)[2]};
    y = make_sequence(vocab, words);
  }
  std::size_t n() const { return y.size(); }
};

}  // namespace

TEST_CASE("pattern examples") {
  Sample s;
  const auto n = s.n();
  SUBCASE("identity is self") {
    Tensor a = Tensor::matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) a(i, i) = 1.0;
    const auto p = classify_head_pattern(a, s.y, s.vocab);
    CHECK(p.label == Pattern::self);
    CHECK(p.scores[0] == doctest::Approx(1.0));
  }
  SUBCASE("subdiagonal shift is neighboring") {
    Tensor a = Tensor::matrix(n, n);
    a(0, 0) = 1.0;
    for (std::size_t i = 1; i < n; ++i) a(i, i - 1) = 1.0;
    const auto p = classify_head_pattern(a, s.y, s.vocab);
    CHECK(p.label == Pattern::neighboring);
    CHECK(p.scores[1] == doctest::Approx(static_cast<double>(n - 1) / static_cast<double>(n)));
  }
  SUBCASE("one-hot on the zh column is lid") {
    Tensor a = Tensor::matrix(n, n);
    const auto zh = static_cast<std::size_t>(s.y.lid_positions.at(0));
    for (std::size_t i = 0; i < n; ++i) a(i, zh) = 1.0;
    const auto p = classify_head_pattern(a, s.y, s.vocab);
    CHECK(p.label == Pattern::lid_token);
  }
  SUBCASE("one-hot on sot is special") {
    Tensor a = Tensor::matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) a(i, 0) = 1.0;
    CHECK(classify_head_pattern(a, s.y, s.vocab).label == Pattern::special_token);
  }
  SUBCASE("tiny maps are other") {
    Tensor a = Tensor::matrix(1, 1, 1.0);
    TokenSequence one;
    one.ids = {s.vocab.id(tok::sot)};
    one.langs = {Lang::none};
    CHECK(classify_head_pattern(a, one, s.vocab).label == Pattern::other);
  }
}

TEST_CASE("property: pattern scores partition the attention mass") {
  Sample s;
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = testutil::random_stochastic(s.n(), s.n(), rng);
    const auto p = classify_head_pattern(a, s.y, s.vocab);
    double total = 0.0;
    for (double v : p.scores) {
      CHECK(v >= 0.0);
      total += v;
    }
    CHECK(total <= 1.0 + 1e-9);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    std::size_t best = 0;
    for (std::size_t k = 1; k < kPatternCount; ++k) {
      if (p.scores[k] > p.scores[best]) best = k;
    }
    CHECK(static_cast<std::size_t>(p.label) == best);
  }
}

TEST_CASE("pgm rounding contract") {
  const auto a = Tensor::from_rows({{1.0, 0.0}, {0.5, 0.5}});
  const auto path = temp_file("map.pgm");
  export_heatmap(a, {"x", "y"}, path, HeatmapFormat::pgm);
  CHECK(slurp(path) == "P2\n2 2\n255\n255 0\n128 128\n");
  const auto bad = Tensor::from_rows({{1.5, -0.5}, {0.5, 0.5}});
  CHECK_THROWS_AS(export_heatmap(bad, {"x", "y"}, path, HeatmapFormat::pgm), NumericError);
  std::filesystem::remove(path);
}

TEST_CASE("csv round trip and byte determinism") {
  std::mt19937_64 rng(42);
  const auto a = testutil::random_stochastic(6, 6, rng);
  const std::vector<std::string> toks{"<sot>", "<zh>", "<en>", "<trans>", "<nots>", "a3"};
  const auto p1 = temp_file("map1.csv");
  const auto p2 = temp_file("map2.csv");
  export_heatmap(a, toks, p1, HeatmapFormat::csv);
  export_heatmap(a, toks, p2, HeatmapFormat::csv);
  CHECK(slurp(p1) == slurp(p2));
  CHECK(slurp(p1).rfind("query,<sot>,<zh>,<en>,<trans>,<nots>,a3\n", 0) == 0);
  const auto back = read_heatmap_csv(p1);
  CHECK(back.tokens == toks);
  REQUIRE(back.values.rows() == 6);
  REQUIRE(back.values.cols() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(back.values(i, j) - a(i, j)) <= 1e-6);
  }
  const auto q1 = temp_file("map1.pgm");
  const auto q2 = temp_file("map2.pgm");
  export_heatmap(a, toks, q1, HeatmapFormat::pgm);
  export_heatmap(a, toks, q2, HeatmapFormat::pgm);
  CHECK(slurp(q1) == slurp(q2));
  for (const auto& p : {p1, p2, q1, q2}) std::filesystem::remove(p);
}

TEST_CASE("heatmap errors") {
  const auto a = Tensor::from_rows({{1.0, 0.0}, {0.5, 0.5}});
  CHECK_THROWS_AS(export_heatmap(a, {"x", "y"}, "/nonexistent-dir/x.csv", HeatmapFormat::csv), DataError);
  CHECK_THROWS(export_heatmap(a, {"x"}, temp_file("short.csv"), HeatmapFormat::csv));
  CHECK(heatmap_format_from_name("pgm") == HeatmapFormat::pgm);
  CHECK_THROWS_AS(heatmap_format_from_name("png"), ConfigError);
  CHECK_THROWS_AS(read_heatmap_csv(temp_file("missing.csv")), DataError);
}

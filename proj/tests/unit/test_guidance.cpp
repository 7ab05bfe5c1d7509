#include <algorithm>
#include <filesystem>
#include <random>
#include <tuple>

#include "agadapt/error.hpp"
#include "agadapt/guidance/guidance.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace agadapt;

namespace {

// Two-loop summation, written independently of lid_indicator.
int indicator_oracle(const Tensor& a, const std::vector<std::size_t>& omega) {
  double in = 0.0;
  double out = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      if (std::find(omega.begin(), omega.end(), j) != omega.end()) {
        in += a(i, j);
      } else {
        out += a(i, j);
      }
    }
  }
  return in > out ? 1 : 0;
}

// Random map whose LID share is pushed up or down so both indicator outcomes occur.
Tensor biased_map(std::size_t n, const std::vector<std::size_t>& omega, double lid_weight, std::mt19937_64& rng) {
  auto a = testutil::random_stochastic(n, n, rng);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (std::find(omega.begin(), omega.end(), j) != omega.end()) a(i, j) *= lid_weight;
      s += a(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) a(i, j) /= s;
  }
  return a;
}

Vocabulary small_vocab() { return Vocabulary::standard(3, 3); }

TokenSequence seven_token_sequence(const Vocabulary& v) {
  const int words[] = {v.words(Lang::a)[0], v.words(Lang::b)[0]};
  auto y = make_sequence(v, words);
  // Drop <eot> to get exactly [<sot>,<zh>,<en>,<trans>,<nots>, wordA, wordB].
  y.ids.pop_back();
  y.langs.pop_back();
  return y;
}

}  // namespace

TEST_CASE("lid_indicator examples") {
  const std::vector<std::size_t> omega{1, 2};
  auto uniform = Tensor::matrix(6, 6, 1.0 / 6.0);
  CHECK(lid_indicator(uniform, omega) == 0);

  auto zh = Tensor::matrix(5, 5);
  for (std::size_t i = 0; i < 5; ++i) zh(i, 1) = 1.0;
  CHECK(lid_indicator(zh, omega) == 1);

  auto bad = Tensor::matrix(2, 3, 0.2);
  CHECK_THROWS_AS(lid_indicator(bad, omega), NumericError);
  const std::vector<std::size_t> out_of_range{1, 9};
  CHECK_THROWS_AS(lid_indicator(uniform, out_of_range), NumericError);
}

TEST_CASE("lid_indicator agrees with a two-loop oracle on 100 random maps") {
  std::mt19937_64 rng(101);
  const std::vector<std::size_t> omega{1, 2};
  std::uniform_real_distribution<double> w(0.5, 6.0);
  int ones = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto a = biased_map(8, omega, w(rng), rng);
    const int got = lid_indicator(a, omega);
    CHECK(got == indicator_oracle(a, omega));
    ones += got;
  }
  CHECK(ones > 0);
  CHECK(ones < 100);
}

TEST_CASE("property: lid_indicator ignores permutations of non-LID columns") {
  std::mt19937_64 rng(102);
  const std::vector<std::size_t> omega{1, 2};
  std::vector<std::size_t> rest{0, 3, 4, 5, 6};
  for (int trial = 0; trial < 50; ++trial) {
    auto a = biased_map(7, omega, 2.5, rng);
    auto perm = rest;
    std::shuffle(perm.begin(), perm.end(), rng);
    auto b = a;
    for (std::size_t i = 0; i < 7; ++i) {
      for (std::size_t k = 0; k < rest.size(); ++k) b(i, perm[k]) = a(i, rest[k]);
    }
    CHECK(lid_indicator(a, omega) == lid_indicator(b, omega));
  }
}

TEST_CASE("top-k selection examples") {
  // counts {(0,0):5, (0,1):9, (1,0):7, (1,1):1}
  const std::size_t counts[] = {5, 9, 7, 1};
  CHECK(select_top_k(counts, 2, 2) == std::vector<HeadIndex>{{0, 1}, {1, 0}});
  const std::size_t equal[] = {4, 4, 4, 4, 4, 4};
  CHECK(select_top_k(equal, 3, 3) == std::vector<HeadIndex>{{0, 0}, {0, 1}, {0, 2}});
  const auto all = select_top_k(counts, 2, 4);
  CHECK(all.size() == 4);
  CHECK_THROWS_AS(select_top_k(counts, 2, 5), ConfigError);
}

TEST_CASE("head selection equals a brute-force oracle on 100 random datasets") {
  std::mt19937_64 rng(103);
  const std::vector<std::size_t> omega{1, 2};
  std::uniform_int_distribution<std::size_t> layers_d(1, 3), heads_d(1, 4), size_d(1, 12), len_d(4, 8);
  std::uniform_real_distribution<double> w(0.3, 5.0);
  int matches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t layers = layers_d(rng);
    const std::size_t heads = heads_d(rng);
    const std::size_t total = layers * heads;
    // Per-head bias so heads differ systematically, with many ties on small datasets.
    std::vector<double> bias(total);
    for (auto& b : bias) b = w(rng);
    const std::size_t dataset = size_d(rng);
    HeadCounter counter(layers, heads);
    std::vector<std::vector<Tensor>> data;
    for (std::size_t u = 0; u < dataset; ++u) {
      const std::size_t n = len_d(rng);
      std::vector<Tensor> maps;
      for (std::size_t h = 0; h < total; ++h) maps.push_back(biased_map(n, omega, bias[h], rng));
      counter.add(maps, omega);
      data.push_back(std::move(maps));
    }
    std::uniform_int_distribution<std::size_t> k_d(0, total);
    const std::size_t k = k_d(rng);
    const auto sel = make_selection(counter, SelectionRequest{k, std::nullopt});

    // Oracle: two nested loops for the counts, then a full sort on (-count, layer, head).
    std::vector<std::size_t> oracle_counts(total, 0);
    for (std::size_t u = 0; u < dataset; ++u) {
      for (std::size_t h = 0; h < total; ++h) oracle_counts[h] += indicator_oracle(data[u][h], omega);
    }
    std::vector<std::tuple<long long, std::size_t, std::size_t>> keyed;
    for (std::size_t h = 0; h < total; ++h) {
      keyed.emplace_back(-static_cast<long long>(oracle_counts[h]), h / heads, h % heads);
    }
    std::sort(keyed.begin(), keyed.end());
    std::vector<HeadIndex> expect;
    for (std::size_t i = 0; i < k; ++i) expect.push_back({std::get<1>(keyed[i]), std::get<2>(keyed[i])});

    const bool same = sel.counts == oracle_counts && sel.selected == expect && sel.dataset_size == dataset;
    CHECK(same);
    matches += same ? 1 : 0;
  }
  CHECK(matches == 100);
}

TEST_CASE("fraction-based selection uses the qualifying heads") {
  HeadCounter counter(2, 3);
  // Build counts {6, 0, 4, 9, 1, 10} over a dataset of 10 by feeding indicator maps directly.
  const std::size_t target[] = {6, 0, 4, 9, 1, 10};
  const std::vector<std::size_t> omega{1, 2};
  auto lid = Tensor::matrix(3, 3);
  auto other = Tensor::matrix(3, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    lid(i, 1) = 1.0;
    other(i, 0) = 1.0;
  }
  for (std::size_t u = 0; u < 10; ++u) {
    std::vector<Tensor> maps;
    for (auto t : target) maps.push_back(u < t ? lid : other);
    counter.add(maps, omega);
  }
  CHECK(counter.counts() == std::vector<std::size_t>(std::begin(target), std::end(target)));
  const auto sel = make_selection(counter, SelectionRequest{std::nullopt, 0.6});
  // Qualifying (count > 0): five heads -> round(0.6 * 5) = 3.
  CHECK(sel.qualifying() == std::vector<HeadIndex>{{0, 0}, {0, 2}, {1, 0}, {1, 1}, {1, 2}});
  CHECK(sel.selected == std::vector<HeadIndex>{{1, 2}, {1, 0}, {0, 0}});
  CHECK(sel.threshold() == 0.0);
  const auto full = make_selection(counter, SelectionRequest{std::nullopt, 1.0});
  CHECK(full.selected.size() == 5);
  const auto small = make_selection(counter, SelectionRequest{std::nullopt, 0.05});
  CHECK(small.selected == std::vector<HeadIndex>{{1, 2}});
  const auto all = make_selection(counter, SelectionRequest{std::size_t{6}, std::nullopt});
  CHECK(all.selected.size() == 6);

  HeadCounter none(1, 2);
  CHECK_THROWS_AS(make_selection(none, SelectionRequest{std::size_t{1}, std::nullopt}), DataError);
}

TEST_CASE("selection file round trip") {
  HeadSelection sel;
  sel.layers = 2;
  sel.heads = 2;
  sel.dataset_size = 11;
  sel.counts = {5, 9, 7, 1};
  sel.selected = {{0, 1}, {1, 0}};
  const auto path = std::filesystem::temp_directory_path() / "agadapt_test_heads.tsv";
  write_selection(path, sel);
  CHECK(read_selection(path) == sel);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_selection(path), DataError);
}

TEST_CASE("random selection draws half of all heads deterministically") {
  HeadSelection base;
  base.layers = 3;
  base.heads = 4;
  base.dataset_size = 1;
  base.counts.assign(12, 0);
  const auto a = random_selection(base, 0.5, 9);
  const auto b = random_selection(base, 0.5, 9);
  CHECK(a.selected.size() == 6);
  CHECK(a.selected == b.selected);
  CHECK(std::is_sorted(a.selected.begin(), a.selected.end()));
}

TEST_CASE("guidance target for the seven-token example") {
  const auto v = small_vocab();
  const auto y = seven_token_sequence(v);
  const auto g = guidance_target(y, 0.6);
  REQUIRE(g.n == 7);
  CHECK(g.lid_columns == std::vector<std::size_t>{1, 2});
  CHECK(g.at(5, 1) == 0.6);
  CHECK(g.at(5, 2) == 0.0);
  CHECK(g.at(6, 1) == 0.0);
  CHECK(g.at(6, 2) == 0.6);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(g.at(i, 1) == 0.0);
    CHECK(g.at(i, 2) == 0.0);
  }
  CHECK_THROWS_AS(g.at(5, 0), NumericError);
  CHECK_THROWS_WITH_AS(guidance_target(y, 0.5), "soft label out of range", ConfigError);
  CHECK_THROWS_WITH_AS(guidance_target(y, 1.0), "soft label out of range", ConfigError);
}

TEST_CASE("guidance target for a monolingual sentence") {
  const auto v = small_vocab();
  const auto words = v.words(Lang::a);
  const auto y = make_sequence(v, words);
  const auto g = guidance_target(y, 0.8);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const bool word = y.langs[i] == Lang::a;
    CHECK(g.at(i, 1) == (word ? 0.8 : 0.0));
    CHECK(g.at(i, 2) == 0.0);
  }
}

TEST_CASE("ag loss examples") {
  // One head, N = 3, single LID column 1.
  GuidanceTarget g;
  g.n = 3;
  g.lid_columns = {1};
  g.soft_label = 0.6;
  g.values = Tensor::from_rows({{0.0}, {0.6}, {0.6}});
  auto a = Tensor::from_rows({{0.8, 0.2, 0.0}, {0.3, 0.7, 0.0}, {0.4, 0.1, 0.5}});
  const std::vector<Tensor> maps{a};
  const std::vector<HeadIndex> one{{0, 0}};
  CHECK(ag_loss_value(maps, 1, one, g) == doctest::Approx(0.30).epsilon(1e-12));
  const std::vector<HeadIndex> twice{{0, 0}, {0, 0}};
  CHECK(ag_loss_value(maps, 1, twice, g) == doctest::Approx(0.60).epsilon(1e-12));

  Graph graph;
  const std::vector<Var> vars{graph.variable(a)};
  CHECK(ag_loss(vars, 1, one, g).value()[0] == doctest::Approx(0.30).epsilon(1e-12));

  auto exact = a;
  exact(0, 1) = 0.0;
  exact(1, 1) = 0.6;
  exact(2, 1) = 0.6;
  const std::vector<Tensor> exact_maps{exact};
  CHECK(ag_loss_value(exact_maps, 1, one, g) == 0.0);

  const std::vector<HeadIndex> missing{{1, 0}};
  CHECK_THROWS_AS(ag_loss_value(maps, 1, missing, g), NumericError);
  CHECK_THROWS_AS(ag_loss_value(maps, 1, std::vector<HeadIndex>{}, g), ConfigError);
}

TEST_CASE("ag loss gradient vanishes outside the LID columns") {
  const auto v = small_vocab();
  const int words[] = {v.words(Lang::a)[0], v.words(Lang::b)[1], v.words(Lang::b)[2]};
  const auto y = make_sequence(v, words);
  const auto g = guidance_target(y, 0.6);
  std::mt19937_64 rng(104);
  Graph graph;
  std::vector<Var> maps;
  for (int h = 0; h < 4; ++h) maps.push_back(graph.variable(testutil::random_stochastic(y.size(), y.size(), rng)));
  const std::vector<HeadIndex> sel{{0, 1}, {1, 0}, {1, 1}};
  auto loss = ag_loss(maps, 2, sel, g);
  graph.backward(loss);
  for (std::size_t h = 0; h < maps.size(); ++h) {
    const Tensor* grad = graph.grad(maps[h]);
    // Head (0, 0) is not selected and receives no gradient at all.
    if (h == 0) {
      CHECK(grad == nullptr);
      continue;
    }
    REQUIRE(grad != nullptr);
    for (std::size_t i = 0; i < y.size(); ++i) {
      for (std::size_t j = 0; j < y.size(); ++j) {
        if (j != 1 && j != 2) CHECK(std::abs((*grad)(i, j)) <= 1e-12);
      }
    }
  }
  CHECK(loss.value()[0] >= 0.0);
  // Values agree with the plain evaluation.
  std::vector<Tensor> plain;
  for (auto m : maps) plain.push_back(m.value());
  CHECK(loss.value()[0] == doctest::Approx(ag_loss_value(plain, 2, sel, g)).epsilon(1e-14));
}

TEST_CASE("count_and_select on a model is deterministic and matches manual counting") {
  const auto cfg = testutil::tiny_config();
  Transformer m(cfg, 20);
  auto spec = testutil::tiny_spec();
  const auto vocab = Vocabulary::standard(spec.words_per_lang, spec.words_per_lang);
  WordBank bank(spec, vocab);
  const auto data = generate_split(spec, bank, "adapt_train");
  const auto a = count_and_select(m, data, SelectionRequest{std::size_t{2}, std::nullopt});
  const auto b = count_and_select(m, data, SelectionRequest{std::size_t{2}, std::nullopt});
  CHECK(a == b);
  HeadCounter manual(cfg.dec_layers, cfg.heads);
  for (const auto& u : data.utterances) {
    const auto y = u.reference(vocab);
    Graph g(false);
    auto res = m.forward(g, u.frames, y.ids, AdapterMask{false, false});
    std::vector<Tensor> maps;
    for (auto x : res.self_attention) maps.push_back(x.value());
    manual.add(maps, y.lid_positions);
  }
  CHECK(a.counts == manual.counts());
  CHECK(a.dataset_size == data.utterances.size());
  CHECK_THROWS_AS(count_and_select(m, Corpus{"empty", {}}, SelectionRequest{std::size_t{1}, std::nullopt}), DataError);
}

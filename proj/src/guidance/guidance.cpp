#include "agadapt/guidance/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "agadapt/error.hpp"

namespace agadapt {

int lid_indicator(const Tensor& attn, std::span<const std::size_t> lid_columns) {
  const std::size_t n = attn.rows();
  const std::size_t cols = attn.cols();
  std::vector<bool> is_lid(cols, false);
  for (auto c : lid_columns) {
    if (c >= cols) throw NumericError("lid_indicator: LID column out of range");
    is_lid[c] = true;
  }
  double lid = 0.0;
  double rest = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = attn(i, j);
      row += v;
      (is_lid[j] ? lid : rest) += v;
    }
    if (std::abs(row - 1.0) > 1e-6) throw NumericError("lid_indicator: attention row is not stochastic");
  }
  return lid > rest ? 1 : 0;
}

std::vector<HeadIndex> HeadSelection::qualifying() const {
  std::vector<HeadIndex> out;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (static_cast<double>(counts[i]) > threshold()) out.push_back({i / heads, i % heads});
  }
  return out;
}

HeadCounter::HeadCounter(std::size_t layers, std::size_t heads)
    : layers_(layers), heads_(heads), counts_(layers * heads, 0) {}

void HeadCounter::add(std::span<const Tensor> maps, std::span<const std::size_t> lid_columns) {
  if (maps.size() != counts_.size()) throw NumericError("HeadCounter: expected one map per head");
  for (std::size_t i = 0; i < maps.size(); ++i) counts_[i] += static_cast<std::size_t>(lid_indicator(maps[i], lid_columns));
  ++seen_;
}

std::vector<HeadIndex> select_top_k(std::span<const std::size_t> counts, std::size_t heads_per_layer, std::size_t k) {
  if (heads_per_layer == 0) throw ConfigError("select_top_k: heads per layer must be positive");
  if (k > counts.size()) throw ConfigError("select_top_k: k exceeds the number of heads");
  std::vector<std::size_t> order(counts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
  std::vector<HeadIndex> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back({order[i] / heads_per_layer, order[i] % heads_per_layer});
  return out;
}

HeadSelection make_selection(const HeadCounter& counter, SelectionRequest request) {
  if (counter.dataset_size() == 0) throw DataError("head selection: empty dataset");
  HeadSelection sel;
  sel.layers = counter.layers();
  sel.heads = counter.heads();
  sel.dataset_size = counter.dataset_size();
  sel.counts = counter.counts();
  std::size_t k = 0;
  if (request.top_k) {
    k = *request.top_k;
  } else if (request.fraction) {
    const double f = *request.fraction;
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("head selection: fraction must lie in (0, 1]");
    const auto q = sel.qualifying().size();
    if (q == 0) throw DataError("head selection: no head attends the LID tokens on any utterance");
    k = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(f * static_cast<double>(q))));
  } else {
    throw ConfigError("head selection: need top_k or fraction");
  }
  sel.selected = select_top_k(sel.counts, sel.heads, k);
  return sel;
}

HeadSelection count_and_select(const Transformer& backbone, const Corpus& data, SelectionRequest request) {
  if (data.utterances.empty()) throw DataError("head selection: empty dataset");
  const auto& cfg = backbone.config();
  HeadCounter counter(cfg.dec_layers, cfg.heads);
  std::vector<Tensor> maps;
  for (const auto& u : data.utterances) {
    const auto y = u.reference(backbone.vocab());
    Graph g(false);
    auto res = backbone.forward(g, u.frames, y.ids, AdapterMask{false, false});
    maps.clear();
    for (auto v : res.self_attention) maps.push_back(v.value());
    counter.add(maps, y.lid_positions);
  }
  return make_selection(counter, request);
}

HeadSelection random_selection(const HeadSelection& base, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("random selection: fraction must lie in (0, 1]");
  const std::size_t total = base.layers * base.heads;
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(total))));
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  HeadSelection out = base;
  out.selected.clear();
  for (auto i : idx) out.selected.push_back({i / base.heads, i % base.heads});
  return out;
}

void write_selection(const std::filesystem::path& path, const HeadSelection& sel) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write head selection " + path.string());
  os << "# dataset_size\t" << sel.dataset_size << "\tthreshold\t" << sel.threshold() << "\tlayers\t" << sel.layers
     << "\theads\t" << sel.heads << '\n';
  os << "# counts\t";
  for (std::size_t i = 0; i < sel.counts.size(); ++i) os << (i ? "," : "") << sel.counts[i];
  os << '\n';
  for (const auto& h : sel.selected) os << h.layer << '\t' << h.head << '\t' << sel.count(h) << '\n';
  if (!os) throw DataError("failed writing head selection " + path.string());
}

HeadSelection read_selection(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read head selection " + path.string());
  HeadSelection sel;
  std::string line;
  auto fail = [&](const std::string& why) { return DataError(path.string() + ": " + why); };
  if (!std::getline(is, line)) throw fail("missing header");
  {
    std::istringstream ss(line);
    std::string hash, k1, k2, k3, k4;
    double thr = 0.0;
    if (!(ss >> hash >> k1 >> sel.dataset_size >> k2 >> thr >> k3 >> sel.layers >> k4 >> sel.heads) || hash != "#" ||
        k1 != "dataset_size" || k2 != "threshold" || k3 != "layers" || k4 != "heads") {
      throw fail("malformed header");
    }
  }
  if (!std::getline(is, line) || line.rfind("# counts\t", 0) != 0) throw fail("missing counts line");
  {
    std::istringstream ss(line.substr(9));
    std::string c;
    while (std::getline(ss, c, ',')) sel.counts.push_back(std::stoull(c));
    if (sel.counts.size() != sel.layers * sel.heads) throw fail("count list does not match layers x heads");
  }
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    HeadIndex h;
    std::size_t count = 0;
    if (!(ss >> h.layer >> h.head >> count)) throw fail("malformed head line");
    if (h.layer >= sel.layers || h.head >= sel.heads) throw fail("head index out of range");
    if (sel.count(h) != count) throw fail("head count disagrees with counts line");
    sel.selected.push_back(h);
  }
  return sel;
}

double GuidanceTarget::at(std::size_t i, std::size_t j) const {
  for (std::size_t k = 0; k < lid_columns.size(); ++k) {
    if (lid_columns[k] == j) return values(i, k);
  }
  throw NumericError("guidance target is defined only on LID columns");
}

GuidanceTarget guidance_target(const TokenSequence& y, double c) {
  if (!(c > 0.5 && c < 1.0)) throw ConfigError("soft label out of range");
  if (y.lid_positions.size() != 2) throw DataError("guidance target needs the bilingual prompt");
  GuidanceTarget g;
  g.n = y.size();
  g.lid_columns = y.lid_positions;
  g.soft_label = c;
  g.values = Tensor::matrix(g.n, 2, 0.0);
  for (std::size_t i = 0; i < g.n; ++i) {
    if (y.langs[i] == Lang::a) g.values(i, 0) = c;
    if (y.langs[i] == Lang::b) g.values(i, 1) = c;
  }
  return g;
}

namespace {

void check_selection(std::size_t map_count, std::size_t heads_per_layer, std::span<const HeadIndex> selected) {
  if (selected.empty()) throw ConfigError("ag_loss: empty head selection");
  for (const auto& h : selected) {
    if (h.head >= heads_per_layer || h.layer * heads_per_layer + h.head >= map_count) {
      throw NumericError("ag_loss: selected head (" + std::to_string(h.layer) + "," + std::to_string(h.head) +
                         ") missing from attention tensor");
    }
  }
}

}  // namespace

Var ag_loss(std::span<const Var> maps, std::size_t heads_per_layer, std::span<const HeadIndex> selected,
            const GuidanceTarget& target) {
  check_selection(maps.size(), heads_per_layer, selected);
  std::vector<Var> terms;
  terms.reserve(selected.size());
  for (const auto& h : selected) {
    Var a = maps[h.layer * heads_per_layer + h.head];
    if (a.value().rows() != target.n) throw NumericError("ag_loss: map and target lengths differ");
    terms.push_back(column_sq_error(a, target.lid_columns, target.values));
  }
  return add_all(terms);
}

double ag_loss_value(std::span<const Tensor> maps, std::size_t heads_per_layer, std::span<const HeadIndex> selected,
                     const GuidanceTarget& target) {
  check_selection(maps.size(), heads_per_layer, selected);
  double s = 0.0;
  for (const auto& h : selected) {
    const Tensor& a = maps[h.layer * heads_per_layer + h.head];
    if (a.rows() != target.n) throw NumericError("ag_loss: map and target lengths differ");
    for (std::size_t i = 0; i < target.n; ++i) {
      for (std::size_t k = 0; k < target.lid_columns.size(); ++k) {
        const double e = a(i, target.lid_columns[k]) - target.values(i, k);
        s += e * e;
      }
    }
  }
  return s;
}

}  // namespace agadapt

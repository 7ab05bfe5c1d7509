#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "agadapt/model/transformer.hpp"
#include "agadapt/model/vocab.hpp"
#include "agadapt/numerics/autodiff.hpp"
#include "agadapt/numerics/tensor.hpp"
#include "agadapt/synth/corpus.hpp"

namespace agadapt {

struct HeadIndex {
  std::size_t layer = 0;
  std::size_t head = 0;
  auto operator<=>(const HeadIndex&) const = default;
};

/// 1 when the total attention mass on the LID columns exceeds the total mass
/// on every other column, summed over all rows. Throws NumericError if a row
/// does not sum to 1 within 1e-6 or a column index is out of range.
int lid_indicator(const Tensor& attn, std::span<const std::size_t> lid_columns);

/// Per-head indicator sums over a dataset and the chosen subset.
struct HeadSelection {
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::size_t dataset_size = 0;
  /// counts[layer * heads + head]
  std::vector<std::size_t> counts;
  std::vector<HeadIndex> selected;

  /// A head qualifies when its count exceeds this, i.e. when it attends the
  /// LID tokens by majority on at least one utterance.
  double threshold() const { return 0.0; }
  std::size_t count(HeadIndex h) const { return counts.at(h.layer * heads + h.head); }
  std::vector<HeadIndex> qualifying() const;
  bool operator==(const HeadSelection&) const = default;
};

/// Accumulates indicator counts one attention tensor at a time.
class HeadCounter {
 public:
  HeadCounter(std::size_t layers, std::size_t heads);
  /// `maps` holds layers*heads matrices in (layer, head) order.
  void add(std::span<const Tensor> maps, std::span<const std::size_t> lid_columns);
  const std::vector<std::size_t>& counts() const { return counts_; }
  std::size_t dataset_size() const { return seen_; }
  std::size_t layers() const { return layers_; }
  std::size_t heads() const { return heads_; }

 private:
  std::size_t layers_;
  std::size_t heads_;
  std::size_t seen_ = 0;
  std::vector<std::size_t> counts_;
};

/// Top-k heads by count; ties go to the lower (layer, head).
std::vector<HeadIndex> select_top_k(std::span<const std::size_t> counts, std::size_t heads_per_layer, std::size_t k);

/// Either an absolute k or a fraction of the qualifying heads (rounded, at
/// least one).
struct SelectionRequest {
  std::optional<std::size_t> top_k;
  std::optional<double> fraction;
};

HeadSelection make_selection(const HeadCounter& counter, SelectionRequest request);

/// Runs the frozen backbone (adapters bypassed) over every reference in the
/// corpus with the bilingual prompt, counts LID heads and selects.
/// Throws DataError on an empty corpus.
HeadSelection count_and_select(const Transformer& backbone, const Corpus& data, SelectionRequest request);

/// Replaces the selected set with round(fraction * all heads) heads drawn
/// uniformly without replacement, listed in (layer, head) order.
HeadSelection random_selection(const HeadSelection& base, double fraction, std::uint64_t seed);

/// Text format:
///   # dataset_size <n> threshold <t> layers <L> heads <H>
///   # counts <c0>,<c1>,...
///   <layer>\t<head>\t<count>      (one line per selected head, in order)
void write_selection(const std::filesystem::path& path, const HeadSelection& sel);
HeadSelection read_selection(const std::filesystem::path& path);

/// Target code-switching map restricted to the LID columns.
struct GuidanceTarget {
  std::size_t n = 0;
  std::vector<std::size_t> lid_columns;  // {pos(<zh>), pos(<en>)}
  double soft_label = 0.0;
  /// [n x 2]: column 0 targets <zh>, column 1 targets <en>.
  Tensor values;

  /// Target at (i, j) for j in the LID columns; throws for other columns.
  double at(std::size_t i, std::size_t j) const;
};

/// Word rows of language A get (c, 0), language B (0, c); all other rows
/// (0, 0). Throws ConfigError("soft label out of range") unless 0.5 < c < 1.
GuidanceTarget guidance_target(const TokenSequence& y, double c);

/// Sum over selected heads, rows and LID columns of (A_ij - G_ij)^2.
Var ag_loss(std::span<const Var> maps, std::size_t heads_per_layer, std::span<const HeadIndex> selected,
            const GuidanceTarget& target);
double ag_loss_value(std::span<const Tensor> maps, std::size_t heads_per_layer, std::span<const HeadIndex> selected,
                     const GuidanceTarget& target);

}  // namespace agadapt

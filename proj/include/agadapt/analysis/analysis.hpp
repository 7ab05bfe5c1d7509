#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "agadapt/model/vocab.hpp"
#include "agadapt/numerics/tensor.hpp"

namespace agadapt {

enum class Pattern { self, neighboring, special_token, lid_token, other };
inline constexpr std::size_t kPatternCount = 5;
const char* pattern_name(Pattern p);

struct PatternLabel {
  Pattern label = Pattern::other;
  /// Share of the total attention mass per category, indexed by Pattern.
  std::array<double, kPatternCount> scores{};
};

/// Assigns every cell (i, j) to exactly one category, first match wins:
/// diagonal, then |i - j| = 1, then a special-token column (<sot>, <trans>,
/// <nots>, <eot>, <blnk>), then an LID column, else other. The label is the
/// highest score, earlier category on ties. Maps with fewer than two rows are
/// labelled other.
PatternLabel classify_head_pattern(const Tensor& attn, const TokenSequence& y, const Vocabulary& vocab);

enum class HeatmapFormat { csv, pgm };
HeatmapFormat heatmap_format_from_name(const std::string& s);

/// CSV: header "query,<tok_0>,...,<tok_N-1>", then one line per query token
/// with six-decimal values. PGM: plain P2, N x N, maxval 255, pixel
/// round(255 * a). Throws DataError when the file cannot be written.
void export_heatmap(const Tensor& attn, const std::vector<std::string>& tokens, const std::filesystem::path& path,
                    HeatmapFormat format);

struct HeatmapCsv {
  std::vector<std::string> tokens;
  Tensor values;
};
HeatmapCsv read_heatmap_csv(const std::filesystem::path& path);

}  // namespace agadapt

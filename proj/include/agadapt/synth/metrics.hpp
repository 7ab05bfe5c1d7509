#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "agadapt/synth/corpus.hpp"

namespace agadapt {

struct EditResult {
  std::size_t distance = 0;
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
};

/// Levenshtein distance between token sequences with the S/D/I breakdown of
/// one optimal alignment. The traceback prefers substitution (or match), then
/// deletion, then insertion when several predecessors are optimal.
EditResult edit_distance(std::span<const int> ref, std::span<const int> hyp);

struct ScoredRef {
  std::string id;
  UttKind kind = UttKind::code_switched;
  std::vector<int> tokens;
};

struct ScoredHyp {
  std::string id;
  std::vector<int> tokens;
};

struct RateCell {
  std::size_t errors = 0;
  std::size_t ref_tokens = 0;
  std::size_t utterances = 0;
  double percent() const {
    return ref_tokens == 0 ? 0.0 : 100.0 * static_cast<double>(errors) / static_cast<double>(ref_tokens);
  }
};

/// Token error rates per utterance kind: the A-language rate (WER analog),
/// the B-language rate (CER analog), the code-switched mixed rate (MER
/// analog), and the pooled overall rate.
struct ErrorReport {
  RateCell mono_a;
  RateCell mono_b;
  RateCell code_switched;
  RateCell overall;
};

/// Throws DataError unless refs and hyps cover the same ids exactly once.
ErrorReport mixed_error_rate(std::span<const ScoredRef> refs, std::span<const ScoredHyp> hyps);

}  // namespace agadapt

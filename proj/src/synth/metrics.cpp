#include "agadapt/synth/metrics.hpp"

#include <map>

#include "agadapt/error.hpp"

namespace agadapt {

EditResult edit_distance(std::span<const int> ref, std::span<const int> hyp) {
  const std::size_t n = ref.size();
  const std::size_t m = hyp.size();
  std::vector<std::size_t> cost((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return cost[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }

  EditResult r;
  r.distance = at(n, m);
  std::size_t i = n;
  std::size_t j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = ref[i - 1] == hyp[j - 1];
      if (at(i, j) == at(i - 1, j - 1) + (same ? 0 : 1)) {
        if (!same) ++r.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++r.deletions;
      --i;
    } else {
      ++r.insertions;
      --j;
    }
  }
  return r;
}

ErrorReport mixed_error_rate(std::span<const ScoredRef> refs, std::span<const ScoredHyp> hyps) {
  std::map<std::string, const ScoredHyp*> by_id;
  for (const auto& h : hyps) {
    if (!by_id.emplace(h.id, &h).second) throw DataError("duplicate hypothesis id " + h.id);
  }
  if (by_id.size() != refs.size()) throw DataError("reference/hypothesis id sets differ");
  ErrorReport rep;
  for (const auto& ref : refs) {
    auto it = by_id.find(ref.id);
    if (it == by_id.end()) throw DataError("no hypothesis for utterance " + ref.id);
    const auto e = edit_distance(ref.tokens, it->second->tokens).distance;
    RateCell* cell = ref.kind == UttKind::mono_a   ? &rep.mono_a
                     : ref.kind == UttKind::mono_b ? &rep.mono_b
                                                   : &rep.code_switched;
    for (RateCell* c : {cell, &rep.overall}) {
      c->errors += e;
      c->ref_tokens += ref.tokens.size();
      c->utterances += 1;
    }
  }
  return rep;
}

}  // namespace agadapt

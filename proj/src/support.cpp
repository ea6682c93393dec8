#include "qann/support.hpp"

#include <algorithm>
#include <unordered_set>

#include "qann/errors.hpp"

namespace qann {

std::size_t Example::gold_index() const {
  const auto it = std::find(candidates.begin(), candidates.end(), gold);
  if (it == candidates.end()) {
    throw DataError("gold symbol " + std::to_string(gold) + " is not among the candidates");
  }
  return static_cast<std::size_t>(it - candidates.begin());
}

std::vector<Span> extract_sois(const Document& doc, std::span<const SymbolId> candidates) {
  const std::unordered_set<SymbolId> wanted(candidates.begin(), candidates.end());
  std::vector<Span> spans;
  for (std::size_t l = 0; l < doc.size(); ++l) {
    if (wanted.contains(doc.symbols[l])) spans.push_back({l + 1, l + 1});
  }
  return spans;
}

SupportSet build_support(const Document& doc, std::span<const Span> spans,
                         const EncoderStates& states, ad::Var W_q, ad::Var E_i,
                         const OutputEmbedding& E_o,
                         std::span<const SymbolId> candidates) {
  SupportSet support;
  support.candidates.assign(candidates.begin(), candidates.end());
  if (spans.empty()) return support;

  std::vector<SymbolId> answers;
  std::vector<ad::Var> keys;
  answers.reserve(spans.size());
  keys.reserve(spans.size());
  for (const Span& span : spans) {
    if (span.start < 1 || span.end > doc.size() || span.start > span.end) {
      throw IndexError("span (" + std::to_string(span.start) + ", " +
                       std::to_string(span.end) + ") outside document of length " +
                       std::to_string(doc.size()));
    }
    answers.push_back(doc.symbols[span.start - 1]);
    keys.push_back(encode_span_query(states, span, W_q));
  }

  support.keys = ad::stack(keys);
  support.answers_in = ad::gather_rows(E_i, answers);
  support.answers_out = E_o.rows(answers);
  support.pairs.reserve(spans.size());
  for (std::size_t k = 0; k < spans.size(); ++k) {
    support.pairs.push_back({spans[k], answers[k], keys[k], ad::row(support.answers_in, k),
                             ad::row(support.answers_out, k)});
  }
  return support;
}

}  // namespace qann

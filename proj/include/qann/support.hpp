#pragma once

// Supporting knowledge as cloze-style (z, y) pairs: every occurrence of an
// answer candidate in the document is a span-of-interest whose outer
// context forms a query z and whose symbol is the answer y.

#include <cstddef>
#include <span>
#include <vector>

#include "qann/autodiff.hpp"
#include "qann/encoder.hpp"

namespace qann {

struct SupportPair {
  Span span;
  SymbolId answer = 0;
  ad::Var z;
  ad::Var y_in;
  ad::Var y_out;
};

struct SupportSet {
  std::vector<SupportPair> pairs;
  std::vector<SymbolId> candidates;
  ad::Var query;  // q_0

  // Pair tensors stacked row-wise, built once and reused by every hop.
  ad::Var keys;         // [M×h]   z_k
  ad::Var answers_in;   // [M×h]   y^i_k
  ad::Var answers_out;  // [M×C]   y^o_k

  std::size_t size() const { return pairs.size(); }
};

struct Example {
  Document document;
  Document query;
  std::vector<SymbolId> candidates;
  SymbolId gold = 0;

  /// Position of gold within candidates; DataError if absent.
  std::size_t gold_index() const;
  bool operator==(const Example&) const = default;
};

/// One single-token span per document position holding a candidate, in
/// document order.
std::vector<Span> extract_sois(const Document& doc, std::span<const SymbolId> candidates);

/// Builds the (z, y) memory from one encoding pass. The query field is left
/// unset; the caller encodes the actual query from the same states.
SupportSet build_support(const Document& doc, std::span<const Span> spans,
                         const EncoderStates& states, ad::Var W_q, ad::Var E_i,
                         const OutputEmbedding& E_o,
                         std::span<const SymbolId> candidates);

}  // namespace qann

#pragma once

// Embedding lookup, bi-directional GRU and span-context query encoding.
//
// Positions follow 1-based document indexing: a document x_1..x_N yields
// forward states h^f_0..h^f_N and backward states h^b_1..h^b_{N+1}, where
// h^f_0 and h^b_{N+1} are the zero initial states. A span (l_s, l_e) is
// encoded from its outer context only:
//
//   z = W_q · [h^f_{l_s-1}; h^b_{l_e+1}]

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qann/autodiff.hpp"
#include "qann/model.hpp"

namespace qann {

enum class Mode { kTrain, kEval };

struct Document {
  std::vector<SymbolId> symbols;
  std::vector<std::string> raw_tokens;
  std::optional<std::size_t> placeholder_pos;  // 0-based

  std::size_t size() const { return symbols.size(); }
  bool operator==(const Document&) const = default;
};

/// Inclusive, 1-based span.
struct Span {
  std::size_t start = 1;
  std::size_t end = 1;
  bool operator==(const Span&) const = default;
};

class EncoderStates {
 public:
  EncoderStates(std::vector<ad::Var> forward, std::vector<ad::Var> backward);

  std::size_t length() const { return forward_.size() - 1; }
  /// h^f_l for l in [0, N].
  ad::Var forward(std::size_t l) const;
  /// h^b_l for l in [1, N+1].
  ad::Var backward(std::size_t l) const;

 private:
  std::vector<ad::Var> forward_;   // index l
  std::vector<ad::Var> backward_;  // index l - 1
};

/// Rows of E_i for ids, with inverted dropout in train mode.
ad::Var embed_sequence(ad::Tape& tape, std::span<const SymbolId> ids, ad::Var E_i,
                       double dropout_rate, Mode mode, Rng* rng);

ad::Var gru_step(ad::Var x, ad::Var state, const GruSet<ad::Var>& p);

EncoderStates bigru_encode(ad::Var embedded, const GruSet<ad::Var>& forward,
                           const GruSet<ad::Var>& backward);

ad::Var encode_span_query(const EncoderStates& states, Span span, ad::Var W_q);

/// [I_h I_h] plus N(0, noise_stddev) noise, shape h×2h.
Tensor init_wq(std::size_t h, Rng& rng, double noise_stddev = 0.1);

/// Output-side answer embeddings: either rows of a trained E_o or one-hot
/// rows of a frozen identity.
class OutputEmbedding {
 public:
  static OutputEmbedding learned(ad::Var E_o);
  static OutputEmbedding identity(ad::Tape& tape, std::size_t vocab);

  /// Embeddings of ids as a [n×dim] matrix.
  ad::Var rows(std::span<const SymbolId> ids) const;
  std::size_t dim() const { return dim_; }
  bool is_identity() const { return identity_; }

 private:
  OutputEmbedding() = default;

  ad::Tape* tape_ = nullptr;
  ad::Var table_;
  std::size_t dim_ = 0;
  bool identity_ = false;
};

struct AnswerEmbedding {
  ad::Var input;   // y^i, row of E_i
  ad::Var output;  // y^o, row of E_o (one-hot in identity mode)
};

AnswerEmbedding embed_answer(SymbolId symbol, ad::Var E_i, const OutputEmbedding& E_o);

}  // namespace qann

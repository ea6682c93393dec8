#pragma once

// Support retrieval cycles ("hops") with gated query and answer updates,
// and the final candidate scoring. Per hop t:
//
//   alpha    = softmax_k(q_t · z_k)
//   (z~, y~i, y~o) = sum_k alpha_k (z_k, y^i_k, y^o_k)
//   eta_t    = max_c softmax_c(y~o · c)
//   g^a_t    = sigmoid(u^a_g · [q_t ⊙ z~ ; a_0 ⊙ y~o ; eta_t] + b_a)
//   a_{t+1}  = a_t + g^a_t y~o
//   q~_t     = tanh(U^q_c [q_t ; y~i ; z~])
//   g^q_t    = sigmoid(U^q_g [q_t ; z~] + b^q_g)
//   q_{t+1}  = g^q_t ⊙ q_t + (1 - g^q_t) ⊙ q~_t
//
// with a_0 = sigmoid(g^a_q) U^a_q q_0, and scores s_c = a_T · c.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "qann/autodiff.hpp"
#include "qann/encoder.hpp"
#include "qann/support.hpp"

namespace qann {

struct HopParams {
  ad::Var U_qc, U_qg, b_qg, U_aq, g_aq, u_ag, b_a;

  static HopParams from(const BoundParams& bound);
};

struct RetrievedSupport {
  ad::Var alpha;        // [M]
  ad::Var z_tilde;      // [h]
  ad::Var y_in_tilde;   // [h]
  ad::Var y_out_tilde;  // [C]
};

RetrievedSupport retrieve(ad::Var query, const SupportSet& support);

struct QueryUpdate {
  ad::Var next;
  ad::Var gate;
};

/// forced_gate replaces g^q by a constant vector (probe only).
QueryUpdate update_query(ad::Var query, const RetrievedSupport& retrieved,
                         const HopParams& params,
                         std::optional<double> forced_gate = std::nullopt);

ad::Var init_answer(ad::Var initial_query, const HopParams& params);

/// Highest candidate probability if y~o were the final answer.
ad::Var eta(ad::Var y_out_tilde, ad::Var candidate_embeddings);

/// In identity-E_o mode a_0 lives in the vocab-sized answer space and is
/// identically zero; its gate block is then an h-dim zero vector.
ad::Var answer_gate(ad::Var query, ad::Var z_tilde, ad::Var initial_answer,
                    ad::Var y_out_tilde, ad::Var eta_value, const HopParams& params);

ad::Var update_answer(ad::Var answer, ad::Var gate, ad::Var y_out_tilde);

/// Raw scores a · c for every candidate row.
ad::Var candidate_scores(ad::Var answer, ad::Var candidate_embeddings);
/// softmax over candidate_scores.
ad::Var score_candidates(ad::Var answer, ad::Var candidate_embeddings);

struct HopTrace {
  std::size_t hop = 0;  // 1-based
  std::vector<double> alpha;
  std::vector<double> g_q;
  double g_a = 0.0;
  double eta = 0.0;
  std::vector<double> y_out_tilde;
  std::vector<double> answer;  // a_{t+1}

  double g_q_mean() const;
};

struct ForwardOptions {
  std::size_t hops = 1;
  Mode mode = Mode::kEval;
  double dropout = 0.0;
  Rng* rng = nullptr;
  // Removes the query from the answer (a_0 := 0), the sigmoid(g^a_q) -> 0 limit.
  bool ablate_query_gate = false;
  std::optional<double> force_query_gate;
  std::optional<double> force_answer_gate;
};

struct ForwardResult {
  ad::Var scores;     // [|A_q|]
  ad::Var log_probs;  // [|A_q|]
  std::vector<double> probs;
  std::size_t prediction = 0;  // index into candidates
  std::vector<HopTrace> trace;
  std::vector<Span> spans;
  std::vector<SymbolId> support_answers;
  std::vector<double> initial_answer;  // a_0
};

/// Encodes document + separator + query with the shared bi-GRU, builds the
/// support memory, runs `hops` retrieval cycles and scores the candidates.
ForwardResult forward_pass(ad::Tape& tape, const BoundParams& params,
                           const ModelDims& dims, const Example& example,
                           const ForwardOptions& options);

/// Full input sequence fed to the encoder: document, separator, query.
std::vector<SymbolId> encoder_input(const Example& example);

/// One JSON record per hop:
/// {"hop":t,"alpha":[...],"spans":[[ls,le],...],"g_a":x,"eta":x,"g_q_mean":x}
void write_trace_jsonl(std::ostream& out, const ForwardResult& result);

struct TraceRecord {
  std::size_t hop = 0;
  std::vector<double> alpha;
  std::vector<Span> spans;
  double g_a = 0.0;
  double eta = 0.0;
  double g_q_mean = 0.0;
};

std::vector<TraceRecord> read_trace_jsonl(std::istream& in);

}  // namespace qann

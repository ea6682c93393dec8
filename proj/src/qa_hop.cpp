#include "qann/qa_hop.hpp"

#include <array>
#include <istream>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "qann/errors.hpp"

namespace qann {

namespace {

std::vector<double> to_vector(ad::Var v) {
  const auto data = v.value().data();
  return {data.begin(), data.end()};
}

}  // namespace

HopParams HopParams::from(const BoundParams& bound) {
  return {bound.U_qc, bound.U_qg, bound.b_qg, bound.U_aq, bound.g_aq, bound.u_ag, bound.b_a};
}

RetrievedSupport retrieve(ad::Var query, const SupportSet& support) {
  if (support.size() == 0) {
    throw EmptySupportError("retrieval over an empty support set");
  }
  ad::Var alpha = ad::softmax(ad::matmul(support.keys, query));
  return {alpha, ad::matmul(ad::transpose(support.keys), alpha),
          ad::matmul(ad::transpose(support.answers_in), alpha),
          ad::matmul(ad::transpose(support.answers_out), alpha)};
}

QueryUpdate update_query(ad::Var query, const RetrievedSupport& retrieved,
                         const HopParams& params, std::optional<double> forced_gate) {
  const std::array<ad::Var, 3> candidate_input = {query, retrieved.y_in_tilde,
                                                  retrieved.z_tilde};
  ad::Var candidate = ad::tanh(ad::matmul(params.U_qc, ad::concat(candidate_input)));

  ad::Var gate;
  if (forced_gate) {
    gate = query.tape().constant(Tensor(query.shape(), *forced_gate));
  } else {
    const std::array<ad::Var, 2> gate_input = {query, retrieved.z_tilde};
    gate = ad::sigmoid(ad::add(ad::matmul(params.U_qg, ad::concat(gate_input)), params.b_qg));
  }
  ad::Var next = ad::add(ad::mul(gate, query), ad::mul(ad::one_minus(gate), candidate));
  return {next, gate};
}

ad::Var init_answer(ad::Var initial_query, const HopParams& params) {
  return ad::mul_scalar(ad::sigmoid(params.g_aq), ad::matmul(params.U_aq, initial_query));
}

ad::Var eta(ad::Var y_out_tilde, ad::Var candidate_embeddings) {
  if (candidate_embeddings.value().rows() == 0) {
    throw DataError("eta needs at least one answer candidate");
  }
  return ad::max(score_candidates(y_out_tilde, candidate_embeddings));
}

ad::Var answer_gate(ad::Var query, ad::Var z_tilde, ad::Var initial_answer,
                    ad::Var y_out_tilde, ad::Var eta_value, const HopParams& params) {
  const std::size_t h = query.size();
  ad::Var answer_block;
  if (initial_answer.size() == h && y_out_tilde.size() == h) {
    answer_block = ad::mul(initial_answer, y_out_tilde);
  } else {
    for (double v : initial_answer.value().data()) {
      if (v != 0.0) {
        throw DimensionError("answer gate: a_0 of shape " +
                             shape_string(initial_answer.shape()) +
                             " must be zero when it differs from the hidden size");
      }
    }
    answer_block = query.tape().constant(Tensor({h}));
  }
  const std::array<ad::Var, 3> parts = {ad::mul(query, z_tilde), answer_block, eta_value};
  return ad::sigmoid(ad::add(ad::dot(params.u_ag, ad::concat(parts)), params.b_a));
}

ad::Var update_answer(ad::Var answer, ad::Var gate, ad::Var y_out_tilde) {
  return ad::add(answer, ad::mul_scalar(gate, y_out_tilde));
}

ad::Var candidate_scores(ad::Var answer, ad::Var candidate_embeddings) {
  if (candidate_embeddings.value().rows() == 0) {
    throw DataError("cannot score an empty candidate set");
  }
  return ad::matmul(candidate_embeddings, answer);
}

ad::Var score_candidates(ad::Var answer, ad::Var candidate_embeddings) {
  return ad::softmax(candidate_scores(answer, candidate_embeddings));
}

double HopTrace::g_q_mean() const {
  if (g_q.empty()) return 0.0;
  return std::accumulate(g_q.begin(), g_q.end(), 0.0) / static_cast<double>(g_q.size());
}

std::vector<SymbolId> encoder_input(const Example& example) {
  std::vector<SymbolId> input = example.document.symbols;
  input.push_back(kSeparatorId);
  input.insert(input.end(), example.query.symbols.begin(), example.query.symbols.end());
  return input;
}

ForwardResult forward_pass(ad::Tape& tape, const BoundParams& params,
                           const ModelDims& dims, const Example& example,
                           const ForwardOptions& options) {
  if (options.hops < 1) throw ConfigError("number of hops must be at least 1");
  if (example.candidates.empty()) throw DataError("example has no answer candidates");
  if (!example.query.placeholder_pos || *example.query.placeholder_pos >= example.query.size()) {
    throw DataError("query has no placeholder position");
  }

  const std::vector<SymbolId> input = encoder_input(example);
  ad::Var embedded =
      embed_sequence(tape, input, params.E_i, options.dropout, options.mode, options.rng);
  const EncoderStates states = bigru_encode(embedded, params.gru_fwd, params.gru_bwd);

  const OutputEmbedding outputs = dims.identity_eo
                                      ? OutputEmbedding::identity(tape, dims.vocab)
                                      : OutputEmbedding::learned(params.E_o);
  const std::vector<Span> spans = extract_sois(example.document, example.candidates);
  SupportSet support = build_support(example.document, spans, states, params.W_q,
                                     params.E_i, outputs, example.candidates);
  if (support.size() == 0) {
    throw EmptySupportError("no candidate occurs in the document");
  }

  const std::size_t query_pos =
      example.document.size() + 1 + *example.query.placeholder_pos + 1;
  support.query = encode_span_query(states, {query_pos, query_pos}, params.W_q);

  const HopParams hop = HopParams::from(params);
  ad::Var candidates = outputs.rows(example.candidates);
  ad::Var a0 = (dims.identity_eo || options.ablate_query_gate)
                   ? tape.constant(Tensor({dims.answer_dim()}))
                   : init_answer(support.query, hop);

  ForwardResult result;
  result.spans = spans;
  for (const SupportPair& pair : support.pairs) result.support_answers.push_back(pair.answer);
  result.initial_answer = to_vector(a0);

  ad::Var answer = a0;
  ad::Var query = support.query;
  for (std::size_t t = 1; t <= options.hops; ++t) {
    const RetrievedSupport retrieved = retrieve(query, support);
    ad::Var eta_t = eta(retrieved.y_out_tilde, candidates);
    ad::Var gate_a =
        options.force_answer_gate
            ? tape.constant(Tensor::scalar(*options.force_answer_gate))
            : answer_gate(query, retrieved.z_tilde, a0, retrieved.y_out_tilde, eta_t, hop);
    answer = update_answer(answer, gate_a, retrieved.y_out_tilde);
    const QueryUpdate updated = update_query(query, retrieved, hop, options.force_query_gate);

    HopTrace record;
    record.hop = t;
    record.alpha = to_vector(retrieved.alpha);
    record.g_q = to_vector(updated.gate);
    record.g_a = gate_a.value().item();
    record.eta = eta_t.value().item();
    record.y_out_tilde = to_vector(retrieved.y_out_tilde);
    record.answer = to_vector(answer);
    result.trace.push_back(std::move(record));

    query = updated.next;
  }

  result.scores = candidate_scores(answer, candidates);
  result.log_probs = ad::log_softmax(result.scores);
  result.probs = ad::stable_softmax(result.scores.value().data());
  result.prediction = ad::argmax(result.scores.value().data());
  return result;
}

void write_trace_jsonl(std::ostream& out, const ForwardResult& result) {
  for (const HopTrace& hop : result.trace) {
    nlohmann::ordered_json record;
    record["hop"] = hop.hop;
    record["alpha"] = hop.alpha;
    nlohmann::ordered_json spans = nlohmann::ordered_json::array();
    for (const Span& s : result.spans) spans.push_back({s.start, s.end});
    record["spans"] = std::move(spans);
    record["g_a"] = hop.g_a;
    record["eta"] = hop.eta;
    record["g_q_mean"] = hop.g_q_mean();
    out << record.dump() << '\n';
  }
}

std::vector<TraceRecord> read_trace_jsonl(std::istream& in) {
  std::vector<TraceRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TraceRecord r;
      r.hop = j.at("hop").get<std::size_t>();
      r.alpha = j.at("alpha").get<std::vector<double>>();
      for (const auto& s : j.at("spans")) {
        r.spans.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
      }
      r.g_a = j.at("g_a").get<double>();
      r.eta = j.at("eta").get<double>();
      r.g_q_mean = j.at("g_q_mean").get<double>();
      if (r.alpha.size() != r.spans.size()) {
        throw ParseError("trace line " + std::to_string(line_no), "alpha/spans length mismatch");
      }
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("trace line " + std::to_string(line_no), e.what());
    }
  }
  return records;
}

}  // namespace qann

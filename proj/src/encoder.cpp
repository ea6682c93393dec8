#include "qann/encoder.hpp"

#include <array>

#include "qann/errors.hpp"

namespace qann {

EncoderStates::EncoderStates(std::vector<ad::Var> forward, std::vector<ad::Var> backward)
    : forward_(std::move(forward)), backward_(std::move(backward)) {
  if (forward_.empty() || forward_.size() != backward_.size()) {
    throw DimensionError("encoder states: forward/backward lengths disagree");
  }
}

ad::Var EncoderStates::forward(std::size_t l) const {
  if (l > length()) {
    throw IndexError("forward state " + std::to_string(l) + " out of range [0, " +
                     std::to_string(length()) + "]");
  }
  return forward_[l];
}

ad::Var EncoderStates::backward(std::size_t l) const {
  if (l < 1 || l > length() + 1) {
    throw IndexError("backward state " + std::to_string(l) + " out of range [1, " +
                     std::to_string(length() + 1) + "]");
  }
  return backward_[l - 1];
}

ad::Var embed_sequence(ad::Tape& tape, std::span<const SymbolId> ids, ad::Var E_i,
                       double dropout_rate, Mode mode, Rng* rng) {
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(dropout_rate));
  }
  ad::Var embedded = ad::gather_rows(E_i, ids);
  if (mode == Mode::kEval || dropout_rate == 0.0 || ids.empty()) return embedded;
  if (rng == nullptr) throw ContractError("train-mode dropout requires an rng");

  Tensor mask(embedded.shape());
  std::bernoulli_distribution keep(1.0 - dropout_rate);
  const double survivor = 1.0 / (1.0 - dropout_rate);
  for (double& m : mask.data()) m = keep(*rng) ? survivor : 0.0;
  return ad::mul(embedded, tape.constant(std::move(mask)));
}

ad::Var gru_step(ad::Var x, ad::Var state, const GruSet<ad::Var>& p) {
  using namespace ad;
  Var z = sigmoid(add(add(matmul(p.W_z, x), matmul(p.U_z, state)), p.b_z));
  Var r = sigmoid(add(add(matmul(p.W_r, x), matmul(p.U_r, state)), p.b_r));
  Var c = ad::tanh(add(add(matmul(p.W_c, x), matmul(p.U_c, mul(r, state))), p.b_c));
  return add(mul(z, state), mul(one_minus(z), c));
}

EncoderStates bigru_encode(ad::Var embedded, const GruSet<ad::Var>& forward,
                           const GruSet<ad::Var>& backward) {
  const Tensor& x = embedded.value();
  if (x.rank() != 2 || x.rows() == 0) {
    throw DimensionError("bigru_encode needs a non-empty [N×h] input, got " +
                         shape_string(x.shape()));
  }
  const std::size_t n = x.rows();
  const std::size_t h = forward.b_z.size();
  ad::Tape& tape = embedded.tape();

  std::vector<ad::Var> inputs;
  inputs.reserve(n);
  for (std::size_t l = 0; l < n; ++l) inputs.push_back(ad::row(embedded, l));

  std::vector<ad::Var> fwd(n + 1);
  fwd[0] = tape.constant(Tensor({h}));
  for (std::size_t l = 1; l <= n; ++l) fwd[l] = gru_step(inputs[l - 1], fwd[l - 1], forward);

  std::vector<ad::Var> bwd(n + 1);  // bwd[l-1] = h^b_l
  bwd[n] = tape.constant(Tensor({h}));
  for (std::size_t l = n; l >= 1; --l) bwd[l - 1] = gru_step(inputs[l - 1], bwd[l], backward);

  return EncoderStates(std::move(fwd), std::move(bwd));
}

ad::Var encode_span_query(const EncoderStates& states, Span span, ad::Var W_q) {
  if (span.start < 1 || span.start > span.end || span.end > states.length()) {
    throw IndexError("span (" + std::to_string(span.start) + ", " +
                     std::to_string(span.end) + ") invalid for document of length " +
                     std::to_string(states.length()));
  }
  const std::array<ad::Var, 2> context = {states.forward(span.start - 1),
                                          states.backward(span.end + 1)};
  return ad::matmul(W_q, ad::concat(context));
}

Tensor init_wq(std::size_t h, Rng& rng, double noise_stddev) {
  if (h == 0) throw ConfigError("hidden size must be positive");
  Tensor w({h, 2 * h});
  if (noise_stddev > 0.0) {
    std::normal_distribution<double> noise(0.0, noise_stddev);
    for (double& v : w.data()) v = noise(rng);
  }
  for (std::size_t i = 0; i < h; ++i) {
    w.at(i, i) += 1.0;
    w.at(i, h + i) += 1.0;
  }
  return w;
}

OutputEmbedding OutputEmbedding::learned(ad::Var E_o) {
  OutputEmbedding out;
  out.tape_ = &E_o.tape();
  out.table_ = E_o;
  out.dim_ = E_o.value().cols();
  return out;
}

OutputEmbedding OutputEmbedding::identity(ad::Tape& tape, std::size_t vocab) {
  OutputEmbedding out;
  out.tape_ = &tape;
  out.dim_ = vocab;
  out.identity_ = true;
  return out;
}

ad::Var OutputEmbedding::rows(std::span<const SymbolId> ids) const {
  if (!identity_) return ad::gather_rows(table_, ids);
  Tensor one_hot({ids.size(), dim_});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= dim_) {
      throw IndexError("answer symbol " + std::to_string(ids[r]) +
                       " outside identity output space of size " + std::to_string(dim_));
    }
    one_hot.at(r, ids[r]) = 1.0;
  }
  return tape_->constant(std::move(one_hot));
}

AnswerEmbedding embed_answer(SymbolId symbol, ad::Var E_i, const OutputEmbedding& E_o) {
  const std::array<SymbolId, 1> ids = {symbol};
  return {ad::row(ad::gather_rows(E_i, ids), 0), ad::row(E_o.rows(ids), 0)};
}

}  // namespace qann

#pragma once

// Trainable parameter set of the query-answer network and its tape binding.

#include <cstddef>
#include <random>
#include <string>

#include "qann/autodiff.hpp"
#include "qann/tensor.hpp"

namespace qann {

using SymbolId = std::size_t;
using Rng = std::mt19937_64;

// Reserved vocabulary entries, fixed for every vocabulary.
inline constexpr SymbolId kSeparatorId = 0;
inline constexpr SymbolId kPlaceholderId = 1;
inline constexpr SymbolId kUnknownId = 2;

struct ModelDims {
  std::size_t vocab = 0;
  std::size_t hidden = 0;
  // Output embeddings frozen to the identity: answers live in a
  // vocab-sized one-hot space and scoring reduces to summed attention.
  bool identity_eo = false;

  std::size_t answer_dim() const { return identity_eo ? vocab : hidden; }
  bool operator==(const ModelDims&) const = default;
};

/// GRU weights for one direction. W_* act on the input, U_* on the state;
/// z is the update gate (fraction of the old state kept), r the reset gate,
/// c the candidate state.
template <class T>
struct GruSet {
  T W_z, U_z, b_z;
  T W_r, U_r, b_r;
  T W_c, U_c, b_c;
};

template <class T>
struct ParamSet {
  T E_i;  // input embeddings [V×h]
  T E_o;  // output embeddings [V×h]; empty in identity mode
  GruSet<T> gru_fwd;
  GruSet<T> gru_bwd;
  T W_q;   // span query projection [h×2h]
  T U_qc;  // query candidate [h×3h]
  T U_qg;  // query gate [h×2h]
  T b_qg;  // [h]
  T U_aq;  // answer init [h×h]
  T g_aq;  // query-answer gate logit {1}
  T u_ag;  // answer gate weights [2h+1]
  T b_a;   // answer gate bias {1}
};

/// Calls f(name, field) for every tensor in a fixed order. The order defines
/// checkpoint layout and optimizer state layout.
template <class Set, class F>
void visit_params(Set& set, F&& f) {
  auto gru = [&f](const std::string& prefix, auto& g) {
    f(prefix + "W_z", g.W_z);
    f(prefix + "U_z", g.U_z);
    f(prefix + "b_z", g.b_z);
    f(prefix + "W_r", g.W_r);
    f(prefix + "U_r", g.U_r);
    f(prefix + "b_r", g.b_r);
    f(prefix + "W_c", g.W_c);
    f(prefix + "U_c", g.U_c);
    f(prefix + "b_c", g.b_c);
  };
  f(std::string("E_i"), set.E_i);
  f(std::string("E_o"), set.E_o);
  gru("gru_fwd.", set.gru_fwd);
  gru("gru_bwd.", set.gru_bwd);
  f(std::string("W_q"), set.W_q);
  f(std::string("U_qc"), set.U_qc);
  f(std::string("U_qg"), set.U_qg);
  f(std::string("b_qg"), set.b_qg);
  f(std::string("U_aq"), set.U_aq);
  f(std::string("g_aq"), set.g_aq);
  f(std::string("u_ag"), set.u_ag);
  f(std::string("b_a"), set.b_a);
}

struct ModelParams : ParamSet<Tensor> {
  ModelDims dims;

  /// Zero tensors of the right shapes.
  static ModelParams zeros(const ModelDims& dims);
  std::size_t parameter_count() const;
  bool operator==(const ModelParams& other) const;
};

using BoundParams = ParamSet<ad::Var>;

/// Registers every tensor of params as a parameter leaf on tape.
BoundParams bind(ad::Tape& tape, const ModelParams& params);

/// Gradients of the bound parameters after tape.backward().
ModelParams gradients(const ad::Tape& tape, const BoundParams& bound,
                      const ModelDims& dims);

struct InitOptions {
  double embed_stddev = 0.1;
  double wq_noise_stddev = 0.1;
  double gru_update_bias = 1.0;
};

/// Gaussian embeddings, Glorot-uniform matrices, zero biases except the GRU
/// update gate, W_q = [I I] + noise.
ModelParams init_params(const ModelDims& dims, Rng& rng,
                        const InitOptions& options = {});

/// Glorot/Xavier uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)),
/// which gives variance 2 / (fan_in + fan_out).
Tensor glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng);

}  // namespace qann

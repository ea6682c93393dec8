#include "qann/model.hpp"

#include <cmath>

#include "qann/encoder.hpp"
#include "qann/errors.hpp"

namespace qann {

namespace {

void shape_gru(GruSet<Tensor>& g, std::size_t h) {
  for (Tensor* m : {&g.W_z, &g.U_z, &g.W_r, &g.U_r, &g.W_c, &g.U_c}) *m = Tensor({h, h});
  for (Tensor* b : {&g.b_z, &g.b_r, &g.b_c}) *b = Tensor({h});
}

void init_gru(GruSet<Tensor>& g, std::size_t h, Rng& rng, double update_bias) {
  for (Tensor* m : {&g.W_z, &g.U_z, &g.W_r, &g.U_r, &g.W_c, &g.U_c}) {
    *m = glorot_uniform(h, h, rng);
  }
  g.b_z = Tensor({h}, update_bias);
  g.b_r = Tensor({h});
  g.b_c = Tensor({h});
}

Tensor gaussian(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace

Tensor glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t({rows, cols});
  for (double& v : t.data()) v = dist(rng);
  return t;
}

ModelParams ModelParams::zeros(const ModelDims& dims) {
  if (dims.vocab == 0 || dims.hidden == 0) {
    throw ConfigError("model dimensions must be positive (vocab " +
                      std::to_string(dims.vocab) + ", hidden " +
                      std::to_string(dims.hidden) + ")");
  }
  const std::size_t h = dims.hidden;
  ModelParams p;
  p.dims = dims;
  p.E_i = Tensor({dims.vocab, h});
  p.E_o = dims.identity_eo ? Tensor({0, dims.vocab}) : Tensor({dims.vocab, h});
  shape_gru(p.gru_fwd, h);
  shape_gru(p.gru_bwd, h);
  p.W_q = Tensor({h, 2 * h});
  p.U_qc = Tensor({h, 3 * h});
  p.U_qg = Tensor({h, 2 * h});
  p.b_qg = Tensor({h});
  p.U_aq = Tensor({h, h});
  p.g_aq = Tensor({1});
  p.u_ag = Tensor({2 * h + 1});
  p.b_a = Tensor({1});
  return p;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  visit_params(*this, [&n](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

bool ModelParams::operator==(const ModelParams& other) const {
  if (!(dims == other.dims)) return false;
  std::vector<const Tensor*> mine;
  std::vector<const Tensor*> theirs;
  visit_params(*this, [&](const std::string&, const Tensor& t) { mine.push_back(&t); });
  visit_params(other, [&](const std::string&, const Tensor& t) { theirs.push_back(&t); });
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (!(*mine[i] == *theirs[i])) return false;
  }
  return true;
}

BoundParams bind(ad::Tape& tape, const ModelParams& params) {
  BoundParams bound;
  std::vector<ad::Var*> slots;
  visit_params(bound, [&](const std::string&, ad::Var& v) { slots.push_back(&v); });
  std::size_t i = 0;
  visit_params(params, [&](const std::string&, const Tensor& t) {
    *slots[i++] = tape.parameter(t);
  });
  return bound;
}

ModelParams gradients(const ad::Tape& tape, const BoundParams& bound,
                      const ModelDims& dims) {
  ModelParams grads = ModelParams::zeros(dims);
  std::vector<ad::Var> vars;
  visit_params(bound, [&](const std::string&, const ad::Var& v) { vars.push_back(v); });
  std::size_t i = 0;
  visit_params(grads, [&](const std::string&, Tensor& t) { t = tape.grad(vars[i++]); });
  return grads;
}

ModelParams init_params(const ModelDims& dims, Rng& rng, const InitOptions& options) {
  ModelParams p = ModelParams::zeros(dims);
  const std::size_t h = dims.hidden;
  p.E_i = gaussian({dims.vocab, h}, options.embed_stddev, rng);
  if (!dims.identity_eo) p.E_o = gaussian({dims.vocab, h}, options.embed_stddev, rng);
  init_gru(p.gru_fwd, h, rng, options.gru_update_bias);
  init_gru(p.gru_bwd, h, rng, options.gru_update_bias);
  p.W_q = init_wq(h, rng, options.wq_noise_stddev);
  p.U_qc = glorot_uniform(h, 3 * h, rng);
  p.U_qg = glorot_uniform(h, 2 * h, rng);
  p.U_aq = glorot_uniform(h, h, rng);
  Tensor u = glorot_uniform(1, 2 * h + 1, rng);
  p.u_ag = Tensor({2 * h + 1}, std::vector<double>(u.data().begin(), u.data().end()));
  return p;
}

}  // namespace qann

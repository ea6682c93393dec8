#pragma once

// Straight-line reimplementation of the network on plain vectors, written
// without the tape or any library op so it can serve as an oracle for
// forward_pass.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "qann/model.hpp"
#include "qann/support.hpp"

namespace qann::oracle {

using Vec = std::vector<double>;

inline Vec matvec(const Tensor& m, const Vec& x) {
  const std::size_t rows = m.shape()[0], cols = m.shape()[1];
  Vec out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += m.at(r, c) * x[c];
    out[r] = acc;
  }
  return out;
}

inline Vec table_row(const Tensor& m, std::size_t r) {
  const auto row = m.row(r);
  return {row.begin(), row.end()};
}

inline Vec join(std::initializer_list<Vec> parts) {
  Vec out;
  for (const Vec& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double inner(const Vec& a, const Vec& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline Vec normalize_exp(const Vec& logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  Vec out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) total += out[i] = std::exp(logits[i] - top);
  for (double& v : out) v /= total;
  return out;
}

inline Vec gru(const GruSet<Tensor>& p, const Vec& x, const Vec& state) {
  const std::size_t h = state.size();
  const Vec wz = matvec(p.W_z, x), uz = matvec(p.U_z, state);
  const Vec wr = matvec(p.W_r, x), ur = matvec(p.U_r, state);
  Vec reset(h), keep(h);
  for (std::size_t i = 0; i < h; ++i) {
    keep[i] = logistic(wz[i] + uz[i] + p.b_z[i]);
    reset[i] = logistic(wr[i] + ur[i] + p.b_r[i]);
  }
  Vec gated(h);
  for (std::size_t i = 0; i < h; ++i) gated[i] = reset[i] * state[i];
  const Vec wc = matvec(p.W_c, x), uc = matvec(p.U_c, gated);
  Vec next(h);
  for (std::size_t i = 0; i < h; ++i) {
    const double cand = std::tanh(wc[i] + uc[i] + p.b_c[i]);
    next[i] = keep[i] * state[i] + (1.0 - keep[i]) * cand;
  }
  return next;
}

struct Outcome {
  Vec scores;
  std::vector<Vec> alphas;
  std::vector<double> answer_gates;
  Vec answer;
};

inline Outcome run(const ModelParams& p, const Example& ex, std::size_t hops,
                   bool zero_initial_answer = false) {
  const std::size_t h = p.dims.hidden;
  const std::size_t C = p.dims.answer_dim();
  auto out_row = [&](SymbolId s) {
    if (p.dims.identity_eo) {
      Vec v(C, 0.0);
      v[s] = 1.0;
      return v;
    }
    return table_row(p.E_o, s);
  };

  std::vector<SymbolId> seq = ex.document.symbols;
  seq.push_back(kSeparatorId);
  seq.insert(seq.end(), ex.query.symbols.begin(), ex.query.symbols.end());
  const std::size_t n = seq.size();

  std::vector<Vec> fwd(n + 1, Vec(h, 0.0)), bwd(n + 2, Vec(h, 0.0));  // 1-based
  for (std::size_t l = 1; l <= n; ++l) fwd[l] = gru(p.gru_fwd, table_row(p.E_i, seq[l - 1]), fwd[l - 1]);
  for (std::size_t l = n; l >= 1; --l) bwd[l] = gru(p.gru_bwd, table_row(p.E_i, seq[l - 1]), bwd[l + 1]);
  auto span_query = [&](std::size_t l) { return matvec(p.W_q, join({fwd[l - 1], bwd[l + 1]})); };

  std::vector<Vec> keys, ins, outs;
  for (std::size_t l = 1; l <= ex.document.size(); ++l) {
    const SymbolId s = ex.document.symbols[l - 1];
    if (std::find(ex.candidates.begin(), ex.candidates.end(), s) == ex.candidates.end()) continue;
    keys.push_back(span_query(l));
    ins.push_back(table_row(p.E_i, s));
    outs.push_back(out_row(s));
  }
  std::vector<Vec> cands;
  for (SymbolId c : ex.candidates) cands.push_back(out_row(c));

  Vec q = span_query(ex.document.size() + 2 + *ex.query.placeholder_pos);
  Vec a0(C, 0.0);
  if (!p.dims.identity_eo && !zero_initial_answer) {
    const double g = logistic(p.g_aq[0]);
    a0 = matvec(p.U_aq, q);
    for (double& v : a0) v *= g;
  }

  Outcome result;
  Vec a = a0;
  for (std::size_t t = 0; t < hops; ++t) {
    Vec logits;
    for (const Vec& k : keys) logits.push_back(inner(q, k));
    const Vec alpha = normalize_exp(logits);
    Vec zt(h, 0.0), yi(h, 0.0), yo(C, 0.0);
    for (std::size_t m = 0; m < keys.size(); ++m) {
      for (std::size_t i = 0; i < h; ++i) {
        zt[i] += alpha[m] * keys[m][i];
        yi[i] += alpha[m] * ins[m][i];
      }
      for (std::size_t i = 0; i < C; ++i) yo[i] += alpha[m] * outs[m][i];
    }

    Vec cand_logits;
    for (const Vec& c : cands) cand_logits.push_back(inner(yo, c));
    const Vec cand_probs = normalize_exp(cand_logits);
    const double eta = *std::max_element(cand_probs.begin(), cand_probs.end());

    Vec gate_in(2 * h + 1, 0.0);
    for (std::size_t i = 0; i < h; ++i) {
      gate_in[i] = q[i] * zt[i];
      if (C == h) gate_in[h + i] = a0[i] * yo[i];
    }
    gate_in[2 * h] = eta;
    const double ga = logistic(inner(p.u_ag.values(), gate_in) + p.b_a[0]);
    for (std::size_t i = 0; i < C; ++i) a[i] += ga * yo[i];

    const Vec qc = matvec(p.U_qc, join({q, yi, zt}));
    const Vec qg = matvec(p.U_qg, join({q, zt}));
    Vec next(h);
    for (std::size_t i = 0; i < h; ++i) {
      const double g = logistic(qg[i] + p.b_qg[i]);
      next[i] = g * q[i] + (1.0 - g) * std::tanh(qc[i]);
    }
    q = next;
    result.alphas.push_back(alpha);
    result.answer_gates.push_back(ga);
  }
  for (const Vec& c : cands) result.scores.push_back(inner(a, c));
  result.answer = a;
  return result;
}

}  // namespace qann::oracle

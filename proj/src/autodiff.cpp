#include "qann/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qann/errors.hpp"

namespace qann::ad {

namespace {

void require_same_tape(Var a, Var b, const char* op) {
  if (&a.tape() != &b.tape()) {
    throw ContractError(std::string(op) + ": operands live on different tapes");
  }
}

void require_same_shape(Var a, Var b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_rank(Var a, std::size_t rank, const char* op) {
  if (a.value().rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + ", got " +
                         shape_string(a.shape()));
  }
}

Var unary(OpKind op, Var a, Tensor value, double scalar = 0.0) {
  return a.tape().record(op, {a.id()}, std::move(value), scalar);
}

Var binary(OpKind op, Var a, Var b, Tensor value) {
  require_same_tape(a, b, op_name(op));
  return a.tape().record(op, {a.id(), b.id()}, std::move(value));
}

template <class F>
Tensor map_values(const Tensor& x, F f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

}  // namespace

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::kConstant: return "constant";
    case OpKind::kParameter: return "parameter";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kOneMinus: return "one_minus";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kSliceRows: return "slice_rows";
    case OpKind::kConcat: return "concat";
    case OpKind::kDot: return "dot";
    case OpKind::kSum: return "sum";
    case OpKind::kMulScalar: return "mul_scalar";
    case OpKind::kPick: return "pick";
    case OpKind::kMax: return "max";
  }
  return "?";
}

// ---- scalar helpers -----------------------------------------------------

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<double> stable_softmax(std::span<const double> logits) {
  if (logits.empty()) throw EmptySupportError("softmax over an empty vector");
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - top);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw EmptySupportError("log-sum-exp over an empty vector");
  const double top = *std::max_element(values.begin(), values.end());
  double total = 0.0;
  for (double v : values) total += std::exp(v - top);
  return top + std::log(total);
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

// ---- Var / Tape ---------------------------------------------------------

const Tensor& Var::value() const { return tape_->node(id_).result(); }

Var Tape::record(OpKind op, std::vector<std::size_t> parents, Tensor value,
                 double scalar, std::vector<std::size_t> indices) {
  Node node;
  node.op = op;
  node.needs_grad = std::any_of(parents.begin(), parents.end(),
                                [&](std::size_t p) { return nodes_[p].needs_grad; });
  node.parents = std::move(parents);
  node.value = std::move(value);
  node.scalar = scalar;
  node.indices = std::move(indices);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  return record(OpKind::kConstant, {}, std::move(value));
}

Var Tape::parameter(const Tensor& value) {
  Node node;
  node.op = OpKind::kParameter;
  node.external = &value;
  node.needs_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_slot(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.shape() != node.result().shape()) {
    node.grad = Tensor(node.result().shape());
  }
  return node.grad;
}

void Tape::zero_grad() {
  for (Node& node : nodes_) node.grad = Tensor();
  backward_done_ = false;
}

Tensor Tape::grad(Var parameter) const {
  const Node& node = nodes_.at(parameter.id());
  if (node.op != OpKind::kParameter && backward_done_) {
    throw ContractError("gradients of intermediate nodes are released after backward");
  }
  if (node.grad.shape() == node.result().shape()) return node.grad;
  return Tensor(node.result().shape());
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ContractError("backward: loss is on another tape");
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        shape_string(loss.shape()));
  }
  if (backward_done_) {
    throw ContractError("backward called twice without zero_grad()");
  }
  backward_done_ = true;
  for (Node& node : nodes_) node.grad = Tensor();
  if (!nodes_[loss.id()].needs_grad) return;
  grad_slot(loss.id())[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (!node.needs_grad || node.grad.empty()) continue;
    if (node.op != OpKind::kParameter && node.op != OpKind::kConstant) {
      propagate(id);
    }
  }
  for (Node& node : nodes_) {
    if (node.op != OpKind::kParameter) node.grad = Tensor();
  }
}

void Tape::propagate(std::size_t id) {
  // Copies of the handful of fields used below; grad_slot may reallocate
  // parent grads but never the node vector itself.
  const Node& node = nodes_[id];
  const Tensor& dy = node.grad;
  const Tensor& y = node.result();
  const auto& parents = node.parents;
  auto wants = [&](std::size_t k) { return nodes_[parents[k]].needs_grad; };
  auto value_of = [&](std::size_t k) -> const Tensor& {
    return nodes_[parents[k]].result();
  };

  switch (node.op) {
    case OpKind::kConstant:
    case OpKind::kParameter:
      break;

    case OpKind::kMatMul: {
      const Tensor& a = value_of(0);
      const Tensor& b = value_of(1);
      const std::size_t m = a.shape()[0];
      const std::size_t k = a.shape()[1];
      const std::size_t n = b.rank() == 1 ? 1 : b.shape()[1];
      if (wants(0)) {
        Tensor& da = grad_slot(parents[0]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double g = dy[i * n + j];
            if (g == 0.0) continue;
            for (std::size_t p = 0; p < k; ++p) da[i * k + p] += g * b[p * n + j];
          }
      }
      if (wants(1)) {
        Tensor& db = grad_slot(parents[1]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            for (std::size_t j = 0; j < n; ++j) db[p * n + j] += av * dy[i * n + j];
          }
      }
      break;
    }

    case OpKind::kTranspose: {
      const std::size_t r = y.shape()[0];
      const std::size_t c = y.shape()[1];
      Tensor& da = grad_slot(parents[0]);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) da[j * r + i] += dy[i * c + j];
      break;
    }

    case OpKind::kAdd:
    case OpKind::kSub: {
      const double sign = node.op == OpKind::kAdd ? 1.0 : -1.0;
      if (wants(0)) {
        Tensor& da = grad_slot(parents[0]);
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
      }
      if (wants(1)) {
        Tensor& db = grad_slot(parents[1]);
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += sign * dy[i];
      }
      break;
    }

    case OpKind::kMul: {
      const Tensor& a = value_of(0);
      const Tensor& b = value_of(1);
      if (wants(0)) {
        Tensor& da = grad_slot(parents[0]);
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * b[i];
      }
      if (wants(1)) {
        Tensor& db = grad_slot(parents[1]);
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * a[i];
      }
      break;
    }

    case OpKind::kScale: {
      Tensor& da = grad_slot(parents[0]);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += node.scalar * dy[i];
      break;
    }

    case OpKind::kOneMinus: {
      Tensor& da = grad_slot(parents[0]);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] -= dy[i];
      break;
    }

    case OpKind::kTanh: {
      Tensor& da = grad_slot(parents[0]);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * (1.0 - y[i] * y[i]);
      break;
    }

    case OpKind::kSigmoid: {
      Tensor& da = grad_slot(parents[0]);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * y[i] * (1.0 - y[i]);
      break;
    }

    case OpKind::kSoftmax: {
      double inner = 0.0;
      for (std::size_t i = 0; i < dy.size(); ++i) inner += dy[i] * y[i];
      Tensor& da = grad_slot(parents[0]);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += y[i] * (dy[i] - inner);
      break;
    }

    case OpKind::kLogSoftmax: {
      double total = 0.0;
      for (std::size_t i = 0; i < dy.size(); ++i) total += dy[i];
      Tensor& da = grad_slot(parents[0]);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] - std::exp(y[i]) * total;
      break;
    }

    case OpKind::kGatherRows: {
      Tensor& dt = grad_slot(parents[0]);
      const std::size_t h = dt.cols();
      for (std::size_t r = 0; r < node.indices.size(); ++r) {
        const std::size_t dst = node.indices[r] * h;
        for (std::size_t j = 0; j < h; ++j) dt[dst + j] += dy[r * h + j];
      }
      break;
    }

    case OpKind::kSliceRows: {
      Tensor& da = grad_slot(parents[0]);
      const std::size_t offset = node.indices[0];
      for (std::size_t i = 0; i < dy.size(); ++i) da[offset + i] += dy[i];
      break;
    }

    case OpKind::kConcat: {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < parents.size(); ++k) {
        const std::size_t len = value_of(k).size();
        if (wants(k)) {
          Tensor& dp = grad_slot(parents[k]);
          for (std::size_t i = 0; i < len; ++i) dp[i] += dy[offset + i];
        }
        offset += len;
      }
      break;
    }

    case OpKind::kDot: {
      const Tensor& a = value_of(0);
      const Tensor& b = value_of(1);
      const double g = dy[0];
      if (wants(0)) {
        Tensor& da = grad_slot(parents[0]);
        for (std::size_t i = 0; i < a.size(); ++i) da[i] += g * b[i];
      }
      if (wants(1)) {
        Tensor& db = grad_slot(parents[1]);
        for (std::size_t i = 0; i < b.size(); ++i) db[i] += g * a[i];
      }
      break;
    }

    case OpKind::kSum: {
      Tensor& da = grad_slot(parents[0]);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[0];
      break;
    }

    case OpKind::kMulScalar: {
      const double s = value_of(0)[0];
      const Tensor& x = value_of(1);
      if (wants(0)) {
        double inner = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) inner += dy[i] * x[i];
        grad_slot(parents[0])[0] += inner;
      }
      if (wants(1)) {
        Tensor& dx = grad_slot(parents[1]);
        for (std::size_t i = 0; i < x.size(); ++i) dx[i] += s * dy[i];
      }
      break;
    }

    case OpKind::kPick:
    case OpKind::kMax: {
      grad_slot(parents[0])[node.indices[0]] += dy[0];
      break;
    }
  }
}

// ---- ops ----------------------------------------------------------------

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || (bv.rank() != 1 && bv.rank() != 2) ||
      av.shape()[1] != bv.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(av.shape()) +
                         " and " + shape_string(bv.shape()));
  }
  const std::size_t m = av.shape()[0];
  const std::size_t k = av.shape()[1];
  const std::size_t n = bv.rank() == 1 ? 1 : bv.shape()[1];
  Tensor out(bv.rank() == 1 ? Shape{m} : Shape{m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aval = av[i * k + p];
      if (aval == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aval * bv[p * n + j];
    }
  return binary(OpKind::kMatMul, a, b, std::move(out));
}

Var transpose(Var a) {
  require_rank(a, 2, "transpose");
  const Tensor& av = a.value();
  const std::size_t r = av.shape()[0];
  const std::size_t c = av.shape()[1];
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return unary(OpKind::kTranspose, a, std::move(out));
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return binary(OpKind::kAdd, a, b, std::move(out));
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return binary(OpKind::kSub, a, b, std::move(out));
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return binary(OpKind::kMul, a, b, std::move(out));
}

Var scale(Var a, double factor) {
  return unary(OpKind::kScale, a,
               map_values(a.value(), [factor](double x) { return factor * x; }),
               factor);
}

Var one_minus(Var a) {
  return unary(OpKind::kOneMinus, a,
               map_values(a.value(), [](double x) { return 1.0 - x; }));
}

Var tanh(Var a) {
  return unary(OpKind::kTanh, a,
               map_values(a.value(), [](double x) { return std::tanh(x); }));
}

Var sigmoid(Var a) {
  return unary(OpKind::kSigmoid, a, map_values(a.value(), stable_sigmoid));
}

Var softmax(Var logits) {
  require_rank(logits, 1, "softmax");
  const Tensor& x = logits.value();
  Tensor out({x.size()}, stable_softmax(x.data()));
  return unary(OpKind::kSoftmax, logits, std::move(out));
}

Var log_softmax(Var logits) {
  require_rank(logits, 1, "log_softmax");
  const Tensor& x = logits.value();
  const double lse = log_sum_exp(x.data());
  return unary(OpKind::kLogSoftmax, logits,
               map_values(x, [lse](double v) { return v - lse; }));
}

Var gather_rows(Var table, std::span<const std::size_t> ids) {
  require_rank(table, 2, "gather_rows");
  const Tensor& t = table.value();
  const std::size_t h = t.shape()[1];
  Tensor out({ids.size(), h});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= t.shape()[0]) {
      throw IndexError("gather_rows: id " + std::to_string(ids[r]) +
                       " out of range for table " + shape_string(t.shape()));
    }
    std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(ids[r] * h), h,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * h));
  }
  return table.tape().record(OpKind::kGatherRows, {table.id()}, std::move(out), 0.0,
                             std::vector<std::size_t>(ids.begin(), ids.end()));
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  if (av.rank() == 0 || begin + count > av.shape()[0]) {
    throw IndexError("slice_rows: rows [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " +
                     shape_string(av.shape()));
  }
  Shape shape = av.shape();
  shape[0] = count;
  const std::size_t stride = av.size() / av.shape()[0];
  std::vector<double> data(av.data().begin() + static_cast<std::ptrdiff_t>(begin * stride),
                           av.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * stride));
  return a.tape().record(OpKind::kSliceRows, {a.id()}, Tensor(shape, std::move(data)), 0.0,
                         {begin * stride});
}

Var row(Var matrix, std::size_t r) {
  require_rank(matrix, 2, "row");
  const Tensor& m = matrix.value();
  if (r >= m.shape()[0]) {
    throw IndexError("row: index " + std::to_string(r) + " out of range for " +
                     shape_string(m.shape()));
  }
  const std::size_t c = m.shape()[1];
  std::vector<double> data(m.data().begin() + static_cast<std::ptrdiff_t>(r * c),
                           m.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * c));
  return matrix.tape().record(OpKind::kSliceRows, {matrix.id()},
                              Tensor({c}, std::move(data)), 0.0, {r * c});
}

namespace {

Var concat_with_shape(std::span<const Var> parts, Shape shape) {
  std::vector<std::size_t> parents;
  std::vector<double> data;
  data.reserve(shape_size(shape));
  for (const Var& p : parts) {
    parents.push_back(p.id());
    const auto values = p.value().data();
    data.insert(data.end(), values.begin(), values.end());
  }
  return parts.front().tape().record(OpKind::kConcat, std::move(parents),
                                     Tensor(std::move(shape), std::move(data)));
}

}  // namespace

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat: no parts");
  const Shape& first = parts.front().shape();
  if (first.empty()) throw DimensionError("concat: rank-0 part");
  Shape shape = first;
  shape[0] = 0;
  for (const Var& p : parts) {
    require_same_tape(parts.front(), p, "concat");
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin() + 1, s.end(), first.begin() + 1)) {
      throw DimensionError("concat: incompatible shapes " + shape_string(first) +
                           " and " + shape_string(s));
    }
    shape[0] += s[0];
  }
  return concat_with_shape(parts, std::move(shape));
}

Var stack(std::span<const Var> rows) {
  if (rows.empty()) throw DimensionError("stack: no rows");
  const Shape& first = rows.front().shape();
  for (const Var& r : rows) {
    require_same_tape(rows.front(), r, "stack");
    if (r.shape() != first || first.size() != 1) {
      throw DimensionError("stack: incompatible shapes " + shape_string(first) +
                           " and " + shape_string(r.shape()));
    }
  }
  return concat_with_shape(rows, Shape{rows.size(), first[0]});
}

Var dot(Var a, Var b) {
  require_same_shape(a, b, "dot");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  double total = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) total += av[i] * bv[i];
  return binary(OpKind::kDot, a, b, Tensor::scalar(total));
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return unary(OpKind::kSum, a, Tensor::scalar(total));
}

Var mul_scalar(Var s, Var x) {
  require_same_tape(s, x, "mul_scalar");
  if (s.size() != 1) {
    throw DimensionError("mul_scalar: expected scalar, got " + shape_string(s.shape()));
  }
  const double factor = s.value()[0];
  Tensor out = map_values(x.value(), [factor](double v) { return factor * v; });
  return s.tape().record(OpKind::kMulScalar, {s.id(), x.id()}, std::move(out));
}

Var pick(Var a, std::size_t index) {
  if (index >= a.size()) {
    throw IndexError("pick: index " + std::to_string(index) + " out of range for " +
                     shape_string(a.shape()));
  }
  return a.tape().record(OpKind::kPick, {a.id()}, Tensor::scalar(a.value()[index]), 0.0,
                         {index});
}

Var max(Var a) {
  if (a.size() == 0) throw EmptySupportError("max over an empty vector");
  const std::size_t best = argmax(a.value().data());
  return a.tape().record(OpKind::kMax, {a.id()}, Tensor::scalar(a.value()[best]), 0.0,
                         {best});
}

}  // namespace qann::ad

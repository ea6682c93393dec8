#pragma once

// Dense reverse-mode automatic differentiation on a dynamic tape.
//
// A Tape records every forward op as a Node (op kind, parents, cached value).
// Nodes are appended in execution order, so the node vector is already a
// topological order and backward() is a single reverse sweep. Tapes are
// rebuilt per example; parameters enter a tape as borrowed leaves and their
// gradients survive the sweep, intermediate gradients are released.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "qann/tensor.hpp"

namespace qann::ad {

enum class OpKind : std::uint8_t {
  kConstant,
  kParameter,
  kMatMul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kScale,
  kOneMinus,
  kTanh,
  kSigmoid,
  kSoftmax,
  kLogSoftmax,
  kGatherRows,
  kSliceRows,
  kConcat,
  kDot,
  kSum,
  kMulScalar,
  kPick,
  kMax,
};

const char* op_name(OpKind op);

struct Node {
  OpKind op = OpKind::kConstant;
  std::vector<std::size_t> parents;
  Tensor value;
  const Tensor* external = nullptr;  // borrowed value for parameter leaves
  Tensor grad;
  bool needs_grad = false;
  double scalar = 0.0;
  std::vector<std::size_t> indices;

  const Tensor& result() const { return external ? *external : value; }
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; it and any reference from
/// value() stay valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Registers a trainable tensor. The tensor is borrowed, not copied, and
  /// must outlive the tape.
  Var parameter(const Tensor& value);

  /// Reverse sweep from a scalar loss. A second call without zero_grad()
  /// throws ContractError; gradients never silently accumulate.
  void backward(Var loss);
  void zero_grad();

  /// dLoss/dParam after backward(). Zeros if the parameter was not reached.
  Tensor grad(Var parameter) const;

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_[id]; }

  Var record(OpKind op, std::vector<std::size_t> parents, Tensor value,
             double scalar = 0.0, std::vector<std::size_t> indices = {});

 private:
  void propagate(std::size_t id);
  Tensor& grad_slot(std::size_t id);

  std::deque<Node> nodes_;  // deque: value() references stay valid as the tape grows
  bool backward_done_ = false;
};

// ---- ops ----------------------------------------------------------------

/// A[m×k]·B[k×n] -> [m×n]; a rank-1 B is treated as a column, giving [m].
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var one_minus(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var softmax(Var logits);
Var log_softmax(Var logits);
Var gather_rows(Var table, std::span<const std::size_t> ids);
/// Row r of a matrix as a rank-1 tensor.
Var row(Var matrix, std::size_t r);
/// Rows [begin, begin+count) along axis 0; for rank 1 this is a sub-vector.
Var slice_rows(Var a, std::size_t begin, std::size_t count);
/// Concatenation along axis 0. Trailing extents must agree.
Var concat(std::span<const Var> parts);
/// Stacks equal-length vectors into a [k×n] matrix.
Var stack(std::span<const Var> rows);
Var dot(Var a, Var b);
Var sum(Var a);
/// s{1} * x, with gradient flowing into both.
Var mul_scalar(Var s, Var x);
Var pick(Var a, std::size_t index);
/// Maximum entry of a vector. Subgradient goes to the first maximizer.
Var max(Var a);

// ---- scalar helpers shared with the forward ops -------------------------

double stable_sigmoid(double x);
std::vector<double> stable_softmax(std::span<const double> logits);
double log_sum_exp(std::span<const double> values);
/// Index of the largest entry, lowest index on ties.
std::size_t argmax(std::span<const double> values);

}  // namespace qann::ad

#pragma once

#include "nspark/tensor.hpp"

#include <deque>
#include <functional>
#include <string>
#include <vector>

namespace nspark {

template <typename Scalar>
class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid for the tape's lifetime.
template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int id = -1;

  const Tensor<Scalar>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Reverse-mode tape. Nodes are appended in evaluation order; `backward`
/// replays them in reverse, visiting each node exactly once. Single-threaded.
template <typename Scalar>
class Tape {
 public:
  using TensorT = Tensor<Scalar>;
  using VarT = Var<Scalar>;
  /// Reads grad(self) and accumulates into the grads of the node's inputs.
  using BackwardFn = std::function<void(Tape&, int self)>;

  VarT constant(TensorT value);
  /// Leaf that receives a gradient.
  VarT variable(TensorT value);
  /// Append an operation result. Throws NumericError if `value` is not finite.
  VarT record(TensorT value, std::initializer_list<VarT> inputs, BackwardFn backward, const char* op);
  VarT record(TensorT value, const std::vector<VarT>& inputs, BackwardFn backward, const char* op);

  const TensorT& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const TensorT& value(VarT v) const { return value(v.id); }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  bool requires_grad(VarT v) const { return requires_grad(v.id); }

  /// Gradient slot of a node, zero-initialised on first access.
  TensorT& grad(int id);
  TensorT& grad(VarT v) { return grad(v.id); }

  /// Clears all gradients, seeds `root` with ones and replays the tape.
  void backward(VarT root);
  void backward(VarT root, const TensorT& seed);

  std::size_t size() const { return nodes_.size(); }
  const char* op_name(int id) const { return nodes_[static_cast<std::size_t>(id)].op; }

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    bool requires_grad = false;
    BackwardFn backward;
    const char* op = "";
  };

  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Primitive operations. Broadcasting applies only to the second operand `b`
// of binary ops and is limited to: a single scalar, a trailing-suffix shape
// (bias add, per-column scale), or a per-row shape a.shape[:-1] + [1].

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b);

/// x[..., in] * W^T for W of shape [out, in].
template <typename Scalar>
Var<Scalar> linear(Var<Scalar> x, Var<Scalar> weight);

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar>
Var<Scalar> div(Var<Scalar> a, Var<Scalar> b);

/// scale * x + shift
template <typename Scalar>
Var<Scalar> affine(Var<Scalar> x, Scalar scale, Scalar shift);

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> x);
template <typename Scalar>
Var<Scalar> softplus(Var<Scalar> x);
template <typename Scalar>
Var<Scalar> abs(Var<Scalar> x);
template <typename Scalar>
Var<Scalar> exp(Var<Scalar> x);
template <typename Scalar>
Var<Scalar> log(Var<Scalar> x);
template <typename Scalar>
Var<Scalar> sqrt(Var<Scalar> x);

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> x);
template <typename Scalar>
Var<Scalar> mean(Var<Scalar> x);

template <typename Scalar>
Var<Scalar> reshape(Var<Scalar> x, Shape shape);

template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) { return sub(a, b); }
template <typename Scalar>
Var<Scalar> operator*(Var<Scalar> a, Var<Scalar> b) { return mul(a, b); }
template <typename Scalar>
Var<Scalar> operator/(Var<Scalar> a, Var<Scalar> b) { return div(a, b); }
template <typename Scalar>
Var<Scalar> operator*(Scalar s, Var<Scalar> x) { return affine(x, s, Scalar(0)); }
template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> x, Scalar s) { return affine(x, Scalar(1), s); }
template <typename Scalar>
Var<Scalar> operator-(Scalar s, Var<Scalar> x) { return affine(x, Scalar(-1), s); }

namespace detail {

enum class BroadcastKind { same, scalar, trailing, row };

BroadcastKind broadcast_kind(const Shape& a, const Shape& b);

/// Sum `g` (shaped like the broadcast result) back onto the shape of `b`.
template <typename Scalar>
Tensor<Scalar> reduce_to(const Tensor<Scalar>& g, const Shape& b_shape, BroadcastKind kind);

}  // namespace detail

}  // namespace nspark

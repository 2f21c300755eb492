#include "nspark/tape.hpp"

#include <sstream>

namespace nspark {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::constant(TensorT value) {
  Node node;
  node.value = std::move(value);
  node.op = "constant";
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::variable(TensorT value) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = true;
  node.op = "variable";
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::record(TensorT value, std::initializer_list<VarT> inputs, BackwardFn backward,
                                 const char* op) {
  return record(std::move(value), std::vector<VarT>(inputs), std::move(backward), op);
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::record(TensorT value, const std::vector<VarT>& inputs, BackwardFn backward,
                                 const char* op) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op + " (node " +
                       std::to_string(nodes_.size()) + ", shape " + to_string(value.shape()) + ")");
  }
  Node node;
  node.value = std::move(value);
  node.op = op;
  for (const VarT& in : inputs) {
    if (in.tape != this) throw std::logic_error(std::string(op) + ": input belongs to another tape");
    node.requires_grad = node.requires_grad || requires_grad(in.id);
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

template <typename Scalar>
Tensor<Scalar>& Tape<Scalar>::grad(int id) {
  Node& node = nodes_[static_cast<std::size_t>(id)];
  if (node.grad.shape() != node.value.shape() || node.grad.size() != node.value.size()) {
    node.grad = TensorT(node.value.shape());
  }
  return node.grad;
}

template <typename Scalar>
void Tape<Scalar>::backward(VarT root) {
  backward(root, TensorT(value(root).shape(), Scalar(1)));
}

template <typename Scalar>
void Tape<Scalar>::backward(VarT root, const TensorT& seed) {
  if (root.tape != this) throw std::logic_error("backward: root belongs to another tape");
  require_shape(seed, value(root).shape(), "backward seed");
  for (Node& node : nodes_) node.grad = TensorT();
  grad(root.id) = seed;
  for (int id = root.id; id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.requires_grad || !node.backward || node.grad.empty()) continue;
    node.backward(*this, id);
  }
}

namespace detail {

BroadcastKind broadcast_kind(const Shape& a, const Shape& b) {
  if (a == b) return BroadcastKind::same;
  if (numel(b) == 1) return BroadcastKind::scalar;
  if (b.size() <= a.size() && std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()))) {
    return BroadcastKind::trailing;
  }
  if (!a.empty() && b.size() == a.size() && b.back() == 1 &&
      std::equal(b.begin(), b.end() - 1, a.begin())) {
    return BroadcastKind::row;
  }
  throw DimensionError("shapes " + to_string(a) + " and " + to_string(b) + " are not broadcast-compatible");
}

template <typename Scalar>
Tensor<Scalar> reduce_to(const Tensor<Scalar>& g, const Shape& b_shape, BroadcastKind kind) {
  Tensor<Scalar> out(b_shape);
  switch (kind) {
    case BroadcastKind::same:
      return g;
    case BroadcastKind::scalar: {
      double acc = 0;
      for (Scalar v : g.values()) acc += v;
      out[0] = static_cast<Scalar>(acc);
      return out;
    }
    case BroadcastKind::trailing: {
      const Index bs = out.size();
      std::vector<double> acc(static_cast<std::size_t>(bs), 0.0);
      const Scalar* src = g.data();
      for (Index r = 0; r < g.size() / bs; ++r) {
        for (Index j = 0; j < bs; ++j) acc[static_cast<std::size_t>(j)] += src[r * bs + j];
      }
      for (Index j = 0; j < bs; ++j) out[j] = static_cast<Scalar>(acc[static_cast<std::size_t>(j)]);
      return out;
    }
    case BroadcastKind::row: {
      const Index cols = g.cols();
      for (Index r = 0; r < g.rows(); ++r) {
        double acc = 0;
        for (Index c = 0; c < cols; ++c) acc += g[r * cols + c];
        out[r] = static_cast<Scalar>(acc);
      }
      return out;
    }
  }
  return out;
}

namespace {

/// Calls fn(i, j) for every element i of `a` with j the matching index into `b`.
template <typename Fn>
void for_each_broadcast(Index a_size, Index cols, Index b_size, BroadcastKind kind, Fn&& fn) {
  switch (kind) {
    case BroadcastKind::same:
      for (Index i = 0; i < a_size; ++i) fn(i, i);
      break;
    case BroadcastKind::scalar:
      for (Index i = 0; i < a_size; ++i) fn(i, Index{0});
      break;
    case BroadcastKind::trailing:
      for (Index r = 0; r < a_size / b_size; ++r) {
        for (Index j = 0; j < b_size; ++j) fn(r * b_size + j, j);
      }
      break;
    case BroadcastKind::row:
      for (Index i = 0; i < a_size; ++i) fn(i, i / cols);
      break;
  }
}

}  // namespace

}  // namespace detail

namespace {

using detail::BroadcastKind;

template <typename Scalar>
void accumulate(Tensor<Scalar>& dst, const Tensor<Scalar>& src) {
  dst.array() += src.array();
}

enum class BinaryOp { add, sub, mul, div };

template <typename Scalar>
Var<Scalar> binary(Var<Scalar> a, Var<Scalar> b, BinaryOp op, const char* name) {
  Tape<Scalar>& tape = *a.tape;
  const Tensor<Scalar>& av = a.value();
  const Tensor<Scalar>& bv = b.value();
  const BroadcastKind kind = detail::broadcast_kind(av.shape(), bv.shape());
  if (op == BinaryOp::div) {
    for (Scalar v : bv.values()) {
      if (v == Scalar(0)) throw DomainError("div: division by zero");
    }
  }
  Tensor<Scalar> out(av.shape());
  Scalar* o = out.data();
  const Scalar* x = av.data();
  const Scalar* y = bv.data();
  switch (op) {
    case BinaryOp::add:
      detail::for_each_broadcast(av.size(), av.cols(), bv.size(), kind, [&](Index i, Index j) { o[i] = x[i] + y[j]; });
      break;
    case BinaryOp::sub:
      detail::for_each_broadcast(av.size(), av.cols(), bv.size(), kind, [&](Index i, Index j) { o[i] = x[i] - y[j]; });
      break;
    case BinaryOp::mul:
      detail::for_each_broadcast(av.size(), av.cols(), bv.size(), kind, [&](Index i, Index j) { o[i] = x[i] * y[j]; });
      break;
    case BinaryOp::div:
      detail::for_each_broadcast(av.size(), av.cols(), bv.size(), kind, [&](Index i, Index j) { o[i] = x[i] / y[j]; });
      break;
  }
  const int ia = a.id;
  const int ib = b.id;
  return tape.record(
      std::move(out), {a, b},
      [ia, ib, kind, op](Tape<Scalar>& t, int self) {
        const Tensor<Scalar>& g = t.grad(self);
        const Tensor<Scalar>& av = t.value(ia);
        const Tensor<Scalar>& bv = t.value(ib);
        const Scalar* gp = g.data();
        const Scalar* x = av.data();
        const Scalar* y = bv.data();
        if (t.requires_grad(ia)) {
          Tensor<Scalar>& ga = t.grad(ia);
          Scalar* d = ga.data();
          switch (op) {
            case BinaryOp::add:
              accumulate(ga, g);
              break;
            case BinaryOp::sub:
              accumulate(ga, g);
              break;
            case BinaryOp::mul:
              detail::for_each_broadcast(av.size(), av.cols(), bv.size(), kind,
                                         [&](Index i, Index j) { d[i] += gp[i] * y[j]; });
              break;
            case BinaryOp::div:
              detail::for_each_broadcast(av.size(), av.cols(), bv.size(), kind,
                                         [&](Index i, Index j) { d[i] += gp[i] / y[j]; });
              break;
          }
        }
        if (t.requires_grad(ib)) {
          Tensor<Scalar> local(av.shape());
          Scalar* l = local.data();
          switch (op) {
            case BinaryOp::add:
              local = g;
              break;
            case BinaryOp::sub:
              local.array() = -g.array();
              break;
            case BinaryOp::mul:
              local.array() = g.array() * av.array();
              break;
            case BinaryOp::div:
              detail::for_each_broadcast(av.size(), av.cols(), bv.size(), kind,
                                         [&](Index i, Index j) { l[i] = -gp[i] * x[i] / (y[j] * y[j]); });
              break;
          }
          accumulate(t.grad(ib), detail::reduce_to(local, bv.shape(), kind));
        }
      },
      name);
}

/// Elementwise unary op; `deriv(x, y)` returns dy/dx given input x and output y.
template <typename Scalar, typename Fwd, typename Deriv>
Var<Scalar> unary(Var<Scalar> x, Fwd fwd, Deriv deriv, const char* name) {
  const Tensor<Scalar>& xv = x.value();
  Tensor<Scalar> out(xv.shape());
  for (Index i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  const int ix = x.id;
  return x.tape->record(
      std::move(out), {x},
      [ix, deriv](Tape<Scalar>& t, int self) {
        const Tensor<Scalar>& g = t.grad(self);
        const Tensor<Scalar>& xv = t.value(ix);
        const Tensor<Scalar>& yv = t.value(self);
        Tensor<Scalar>& gx = t.grad(ix);
        for (Index i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], yv[i]);
      },
      name);
}

}  // namespace

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  const Tensor<Scalar>& av = a.value();
  const Tensor<Scalar>& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + to_string(av.shape()) + " and " + to_string(bv.shape()));
  }
  Tensor<Scalar> out(Shape{av.dim(0), bv.dim(1)});
  out.matrix().noalias() = av.matrix() * bv.matrix();
  const int ia = a.id;
  const int ib = b.id;
  return a.tape->record(
      std::move(out), {a, b},
      [ia, ib](Tape<Scalar>& t, int self) {
        const auto g = t.grad(self).matrix();
        if (t.requires_grad(ia)) t.grad(ia).matrix().noalias() += g * t.value(ib).matrix().transpose();
        if (t.requires_grad(ib)) t.grad(ib).matrix().noalias() += t.value(ia).matrix().transpose() * g;
      },
      "matmul");
}

template <typename Scalar>
Var<Scalar> linear(Var<Scalar> x, Var<Scalar> weight) {
  const Tensor<Scalar>& xv = x.value();
  const Tensor<Scalar>& wv = weight.value();
  if (wv.rank() != 2 || xv.rank() < 1 || xv.cols() != wv.dim(1)) {
    throw DimensionError("linear: input " + to_string(xv.shape()) + " incompatible with weight " +
                         to_string(wv.shape()));
  }
  Shape out_shape = xv.shape();
  out_shape.back() = wv.dim(0);
  Tensor<Scalar> out(out_shape);
  out.matrix().noalias() = xv.matrix() * wv.matrix().transpose();
  const int ix = x.id;
  const int iw = weight.id;
  return x.tape->record(
      std::move(out), {x, weight},
      [ix, iw](Tape<Scalar>& t, int self) {
        const auto g = t.grad(self).matrix();
        if (t.requires_grad(ix)) t.grad(ix).matrix().noalias() += g * t.value(iw).matrix();
        if (t.requires_grad(iw)) t.grad(iw).matrix().noalias() += g.transpose() * t.value(ix).matrix();
      },
      "linear");
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  return binary(a, b, BinaryOp::add, "add");
}
template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  return binary(a, b, BinaryOp::sub, "sub");
}
template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  return binary(a, b, BinaryOp::mul, "mul");
}
template <typename Scalar>
Var<Scalar> div(Var<Scalar> a, Var<Scalar> b) {
  return binary(a, b, BinaryOp::div, "div");
}

template <typename Scalar>
Var<Scalar> affine(Var<Scalar> x, Scalar scale, Scalar shift) {
  return unary(
      x, [scale, shift](Scalar v) { return scale * v + shift; }, [scale](Scalar, Scalar) { return scale; },
      "affine");
}

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> x) {
  return unary(
      x, [](Scalar v) { return nspark::sigmoid(v); }, [](Scalar, Scalar y) { return y * (Scalar(1) - y); },
      "sigmoid");
}

template <typename Scalar>
Var<Scalar> softplus(Var<Scalar> x) {
  return unary(
      x, [](Scalar v) { return nspark::softplus(v); }, [](Scalar v, Scalar) { return nspark::sigmoid(v); },
      "softplus");
}

template <typename Scalar>
Var<Scalar> abs(Var<Scalar> x) {
  // d|x|/dx taken as sign(x), with 0 at the kink.
  return unary(
      x, [](Scalar v) { return std::abs(v); },
      [](Scalar v, Scalar) { return v > 0 ? Scalar(1) : (v < 0 ? Scalar(-1) : Scalar(0)); }, "abs");
}

template <typename Scalar>
Var<Scalar> exp(Var<Scalar> x) {
  return unary(
      x, [](Scalar v) { return std::exp(v); }, [](Scalar, Scalar y) { return y; }, "exp");
}

template <typename Scalar>
Var<Scalar> log(Var<Scalar> x) {
  for (Scalar v : x.value().values()) {
    if (!(v > 0)) throw DomainError("log: non-positive argument");
  }
  return unary(
      x, [](Scalar v) { return std::log(v); }, [](Scalar v, Scalar) { return Scalar(1) / v; }, "log");
}

template <typename Scalar>
Var<Scalar> sqrt(Var<Scalar> x) {
  for (Scalar v : x.value().values()) {
    if (v < 0) throw DomainError("sqrt: negative argument");
  }
  return unary(
      x, [](Scalar v) { return std::sqrt(v); }, [](Scalar, Scalar y) { return Scalar(0.5) / y; }, "sqrt");
}

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> x) {
  double acc = 0;
  for (Scalar v : x.value().values()) acc += v;
  const int ix = x.id;
  return x.tape->record(
      Tensor<Scalar>::scalar(static_cast<Scalar>(acc)), {x},
      [ix](Tape<Scalar>& t, int self) { t.grad(ix).array() += t.grad(self)[0]; }, "sum");
}

template <typename Scalar>
Var<Scalar> mean(Var<Scalar> x) {
  const Index n = x.value().size();
  if (n == 0) throw DimensionError("mean of empty tensor");
  double acc = 0;
  for (Scalar v : x.value().values()) acc += v;
  const int ix = x.id;
  return x.tape->record(
      Tensor<Scalar>::scalar(static_cast<Scalar>(acc / static_cast<double>(n))), {x},
      [ix, n](Tape<Scalar>& t, int self) {
        t.grad(ix).array() += t.grad(self)[0] / static_cast<Scalar>(n);
      },
      "mean");
}

template <typename Scalar>
Var<Scalar> reshape(Var<Scalar> x, Shape shape) {
  Tensor<Scalar> out = x.value().reshaped(std::move(shape));
  const int ix = x.id;
  return x.tape->record(
      std::move(out), {x},
      [ix](Tape<Scalar>& t, int self) { t.grad(ix).array() += t.grad(self).array(); }, "reshape");
}

#define NSPARK_INSTANTIATE_TAPE(S)                                        \
  template class Tape<S>;                                                  \
  template Tensor<S> detail::reduce_to(const Tensor<S>&, const Shape&,     \
                                       detail::BroadcastKind);             \
  template Var<S> matmul(Var<S>, Var<S>);                                  \
  template Var<S> linear(Var<S>, Var<S>);                                  \
  template Var<S> add(Var<S>, Var<S>);                                     \
  template Var<S> sub(Var<S>, Var<S>);                                     \
  template Var<S> mul(Var<S>, Var<S>);                                     \
  template Var<S> div(Var<S>, Var<S>);                                     \
  template Var<S> affine(Var<S>, S, S);                                    \
  template Var<S> sigmoid(Var<S>);                                         \
  template Var<S> softplus(Var<S>);                                        \
  template Var<S> abs(Var<S>);                                             \
  template Var<S> exp(Var<S>);                                             \
  template Var<S> log(Var<S>);                                             \
  template Var<S> sqrt(Var<S>);                                            \
  template Var<S> sum(Var<S>);                                             \
  template Var<S> mean(Var<S>);                                            \
  template Var<S> reshape(Var<S>, Shape);

NSPARK_INSTANTIATE_TAPE(float)
NSPARK_INSTANTIATE_TAPE(double)

}  // namespace nspark

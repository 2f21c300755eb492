#include "nspark/ponder.hpp"

#include <cmath>

namespace nspark {

namespace {

/// frames [T*K, rest..., D] viewed as tokens x K x M x D.
struct FrameLayout {
  Index tokens = 0;
  Index k = 0;
  Index m = 0;  // product of the middle axes
  Index d = 0;
  Shape middle;
};

template <typename Scalar>
FrameLayout frame_layout(const Tensor<Scalar>& frames, int k_steps, const char* what) {
  if (k_steps < 1) throw DimensionError(std::string(what) + ": K must be >= 1");
  if (frames.rank() < 2) throw DimensionError(std::string(what) + ": frames need shape [T*K, ..., D]");
  FrameLayout l;
  l.k = k_steps;
  if (frames.dim(0) % k_steps != 0) {
    throw DimensionError(std::string(what) + ": " + std::to_string(frames.dim(0)) + " frames not divisible by K=" +
                         std::to_string(k_steps));
  }
  l.tokens = frames.dim(0) / k_steps;
  l.d = frames.cols();
  l.middle.assign(frames.shape().begin() + 1, frames.shape().end() - 1);
  l.m = numel(l.middle);
  return l;
}

Shape with_ends(Index first, const Shape& middle, Index last) {
  Shape s{first};
  s.insert(s.end(), middle.begin(), middle.end());
  s.push_back(last);
  return s;
}

template <typename Scalar>
Tensor<Scalar> raw_logits(const Tensor<Scalar>& frames, const FrameLayout& l, const Tensor<Scalar>& w, Scalar b) {
  Tensor<Scalar> a(with_ends(l.tokens, l.middle, l.k));
  const auto f = frames.matrix();  // rows: (i*K + k)*M + m
  const auto wv = ConstArrayMap<Scalar>(w.data(), l.d).matrix();
  for (Index i = 0; i < l.tokens; ++i) {
    for (Index k = 0; k < l.k; ++k) {
      for (Index m = 0; m < l.m; ++m) {
        a[(i * l.m + m) * l.k + k] = f.row((i * l.k + k) * l.m + m).dot(wv.transpose()) + b;
      }
    }
  }
  return a;
}

template <typename Scalar>
Tensor<Scalar> weighted_sum(const Tensor<Scalar>& frames, const FrameLayout& l, const Tensor<Scalar>& lambda_hat) {
  Tensor<Scalar> out(with_ends(l.tokens, l.middle, l.d));
  auto o = out.matrix();
  const auto f = frames.matrix();
  for (Index i = 0; i < l.tokens; ++i) {
    for (Index m = 0; m < l.m; ++m) {
      for (Index k = 0; k < l.k; ++k) {
        o.row(i * l.m + m) += lambda_hat[(i * l.m + m) * l.k + k] * f.row((i * l.k + k) * l.m + m);
      }
    }
  }
  return out;
}

template <typename Scalar>
void check_params(const PonderParams<Scalar>& p, Index d) {
  require_shape(p.W_halt, {d}, "ponder W_halt");
  require_shape(p.b_halt, {1}, "ponder b_halt");
}

}  // namespace

template <typename Scalar>
PonderParams<Scalar> init_ponder(int dim, Rng& rng) {
  if (dim < 1) throw std::invalid_argument("init_ponder: dim must be >= 1");
  const double bound = std::sqrt(6.0 / (dim + 1)) * kHaltWeightScale;
  PonderParams<Scalar> p{Tensor<Scalar>({dim}), Tensor<Scalar>({1}, static_cast<Scalar>(kHaltBiasInit))};
  for (Scalar& w : p.W_halt.values()) w = static_cast<Scalar>(uniform(rng, -bound, bound));
  return p;
}

template <typename Scalar>
PonderWeights<Scalar> halt_weights_from_logits(const Tensor<Scalar>& logits) {
  if (logits.rank() < 1 || logits.cols() < 1) throw DimensionError("halt weights: K must be >= 1");
  const Index k_steps = logits.cols();
  const Index rows = logits.rows();
  Shape token_shape(logits.shape().begin(), logits.shape().end() - 1);
  PonderWeights<Scalar> w{Tensor<Scalar>(logits.shape()), Tensor<Scalar>(logits.shape()),
                          Tensor<Scalar>(logits.shape()), Tensor<Scalar>(token_shape)};
  std::vector<double> log_lambda(static_cast<std::size_t>(k_steps));
  for (Index r = 0; r < rows; ++r) {
    const Index base = r * k_steps;
    double log_survival = 0;
    double peak = -INFINITY;
    for (Index k = 0; k < k_steps; ++k) {
      const double a = logits[base + k];
      w.p[base + k] = static_cast<Scalar>(sigmoid(a));
      w.survival[base + k] = static_cast<Scalar>(std::exp(log_survival));
      const double ll = -softplus(-a) + log_survival;
      log_lambda[static_cast<std::size_t>(k)] = ll;
      peak = std::max(peak, ll);
      log_survival -= softplus(a);
    }
    double total = 0;
    for (double& ll : log_lambda) total += (ll = std::exp(ll - peak));
    double ek = 0;
    for (Index k = 0; k < k_steps; ++k) {
      const double lh = log_lambda[static_cast<std::size_t>(k)] / total;
      w.lambda_hat[base + k] = static_cast<Scalar>(lh);
      ek += static_cast<double>(k + 1) * lh;
    }
    w.expected_k[r] = static_cast<Scalar>(ek);
  }
  return w;
}

template <typename Scalar>
PonderResult<Scalar> ponder_aggregate(const Tensor<Scalar>& frames, int k_steps, const PonderParams<Scalar>& params) {
  const FrameLayout l = frame_layout(frames, k_steps, "ponder_aggregate");
  check_params(params, l.d);
  PonderResult<Scalar> r;
  r.weights = halt_weights_from_logits(raw_logits(frames, l, params.W_halt, params.b_halt[0]));
  r.output = weighted_sum(frames, l, r.weights.lambda_hat);
  return r;
}

template <typename Scalar>
double ponder_cost(const std::vector<PonderWeights<Scalar>>& all, double lambda) {
  if (all.empty()) throw std::invalid_argument("ponder_cost: no aggregation points");
  double total = 0;
  for (const auto& w : all) total += w.expected_k.array().template cast<double>().mean();
  return lambda * total / static_cast<double>(all.size());
}

template <typename Scalar>
Var<Scalar> halt_weights(Var<Scalar> frames, Var<Scalar> W_halt, Var<Scalar> b_halt, int k_steps) {
  const FrameLayout l = frame_layout(frames.value(), k_steps, "halt_weights");
  require_shape(W_halt.value(), {l.d}, "halt_weights W_halt");
  require_shape(b_halt.value(), {1}, "halt_weights b_halt");
  PonderWeights<Scalar> w =
      halt_weights_from_logits(raw_logits(frames.value(), l, W_halt.value(), b_halt.value()[0]));
  Tape<Scalar>& tape = *frames.tape;
  const int fi = frames.id, wi = W_halt.id, bi = b_halt.id;
  Tensor<Scalar> p = std::move(w.p);
  return tape.record(
      std::move(w.lambda_hat), {frames, W_halt, b_halt},
      [l, fi, wi, bi, p](Tape<Scalar>& t, int self) {
        const Tensor<Scalar>& lh = t.value(self);
        const Tensor<Scalar>& g = t.grad(self);
        // d lambda_hat / d logits through the log-space form.
        Tensor<Scalar> ga(lh.shape());
        std::vector<double> G(static_cast<std::size_t>(l.k));
        for (Index r = 0; r < lh.rows(); ++r) {
          const Index base = r * l.k;
          double dot = 0;
          for (Index k = 0; k < l.k; ++k) dot += static_cast<double>(lh[base + k]) * g[base + k];
          for (Index k = 0; k < l.k; ++k) G[static_cast<std::size_t>(k)] = lh[base + k] * (g[base + k] - dot);
          double tail = 0;
          for (Index k = l.k - 1; k >= 0; --k) {
            const double pk = p[base + k];
            ga[base + k] = static_cast<Scalar>(G[static_cast<std::size_t>(k)] * (1 - pk) - pk * tail);
            tail += G[static_cast<std::size_t>(k)];
          }
        }
        const Tensor<Scalar>& f = t.value(fi);
        const auto fm = f.matrix();
        const bool need_f = t.requires_grad(fi);
        const bool need_w = t.requires_grad(wi);
        const bool need_b = t.requires_grad(bi);
        Eigen::Matrix<Scalar, 1, Eigen::Dynamic> gw = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>::Zero(l.d);
        double gb = 0;
        const auto wv = ConstArrayMap<Scalar>(t.value(wi).data(), l.d).matrix().transpose();
        for (Index i = 0; i < l.tokens; ++i) {
          for (Index k = 0; k < l.k; ++k) {
            for (Index m = 0; m < l.m; ++m) {
              const Scalar gak = ga[(i * l.m + m) * l.k + k];
              const Index row = (i * l.k + k) * l.m + m;
              if (need_f) t.grad(fi).matrix().row(row) += gak * wv;
              if (need_w) gw += gak * fm.row(row);
              gb += gak;
            }
          }
        }
        if (need_w) ArrayMap<Scalar>(t.grad(wi).data(), l.d) += gw.transpose().array();
        if (need_b) t.grad(bi)[0] += static_cast<Scalar>(gb);
      },
      "halt_weights");
}

template <typename Scalar>
Var<Scalar> weighted_frames(Var<Scalar> frames, Var<Scalar> lambda_hat) {
  const Index k_steps = lambda_hat.value().cols();
  const FrameLayout l = frame_layout(frames.value(), static_cast<int>(k_steps), "weighted_frames");
  require_shape(lambda_hat.value(), with_ends(l.tokens, l.middle, l.k), "weighted_frames lambda_hat");
  Tensor<Scalar> out = weighted_sum(frames.value(), l, lambda_hat.value());
  const int fi = frames.id, li = lambda_hat.id;
  return frames.tape->record(
      std::move(out), {frames, lambda_hat},
      [l, fi, li](Tape<Scalar>& t, int self) {
        const auto g = t.grad(self).matrix();
        const Tensor<Scalar>& lh = t.value(li);
        const auto f = t.value(fi).matrix();
        const bool need_f = t.requires_grad(fi);
        const bool need_l = t.requires_grad(li);
        for (Index i = 0; i < l.tokens; ++i) {
          for (Index m = 0; m < l.m; ++m) {
            const Index orow = i * l.m + m;
            for (Index k = 0; k < l.k; ++k) {
              const Index frow = (i * l.k + k) * l.m + m;
              const Index li_idx = orow * l.k + k;
              if (need_f) t.grad(fi).matrix().row(frow) += lh[li_idx] * g.row(orow);
              if (need_l) t.grad(li)[li_idx] += g.row(orow).dot(f.row(frow));
            }
          }
        }
      },
      "weighted_frames");
}

template <typename Scalar>
Var<Scalar> expected_steps(Var<Scalar> lambda_hat) {
  const Tensor<Scalar>& lh = lambda_hat.value();
  if (lh.rank() < 1) throw DimensionError("expected_steps: lambda_hat needs a K axis");
  const Index k_steps = lh.cols();
  Shape token_shape(lh.shape().begin(), lh.shape().end() - 1);
  Tensor<Scalar> out(token_shape);
  for (Index r = 0; r < lh.rows(); ++r) {
    double ek = 0;
    for (Index k = 0; k < k_steps; ++k) ek += static_cast<double>(k + 1) * lh[r * k_steps + k];
    out[r] = static_cast<Scalar>(ek);
  }
  const int li = lambda_hat.id;
  return lambda_hat.tape->record(
      std::move(out), {lambda_hat},
      [li, k_steps](Tape<Scalar>& t, int self) {
        const Tensor<Scalar>& g = t.grad(self);
        Tensor<Scalar>& gl = t.grad(li);
        for (Index r = 0; r < g.size(); ++r) {
          for (Index k = 0; k < k_steps; ++k) gl[r * k_steps + k] += static_cast<Scalar>(k + 1) * g[r];
        }
      },
      "expected_steps");
}

template <typename Scalar>
Var<Scalar> frame_mean(Var<Scalar> frames, int k_steps) {
  const Tensor<Scalar>& f = frames.value();
  if (k_steps < 1 || f.rank() < 1 || f.dim(0) % k_steps != 0) {
    throw DimensionError("frame_mean: leading axis not divisible by K");
  }
  Shape shape = f.shape();
  shape[0] /= k_steps;
  const Index row = f.size() / std::max<Index>(f.dim(0), 1);
  Tensor<Scalar> out(shape);
  const Scalar inv = Scalar(1) / static_cast<Scalar>(k_steps);
  for (Index i = 0; i < shape[0]; ++i) {
    auto o = ArrayMap<Scalar>(out.data() + i * row, row);
    for (Index k = 0; k < k_steps; ++k) o += ConstArrayMap<Scalar>(f.data() + (i * k_steps + k) * row, row);
    o *= inv;
  }
  const int fi = frames.id;
  return frames.tape->record(
      std::move(out), {frames},
      [fi, k_steps, row, inv](Tape<Scalar>& t, int self) {
        const Tensor<Scalar>& g = t.grad(self);
        Tensor<Scalar>& gf = t.grad(fi);
        for (Index i = 0; i < g.size() / std::max<Index>(row, 1); ++i) {
          const auto gi = ConstArrayMap<Scalar>(g.data() + i * row, row);
          for (Index k = 0; k < k_steps; ++k) ArrayMap<Scalar>(gf.data() + (i * k_steps + k) * row, row) += inv * gi;
        }
      },
      "frame_mean");
}

template <typename Scalar>
Var<Scalar> frame_repeat(Var<Scalar> tokens, int k_steps) {
  const Tensor<Scalar>& x = tokens.value();
  if (k_steps < 1 || x.rank() < 1) throw DimensionError("frame_repeat: need K >= 1 and a leading axis");
  Shape shape = x.shape();
  shape[0] *= k_steps;
  const Index row = x.size() / std::max<Index>(x.dim(0), 1);
  Tensor<Scalar> out(shape);
  for (Index i = 0; i < x.dim(0); ++i) {
    for (Index k = 0; k < k_steps; ++k) {
      ArrayMap<Scalar>(out.data() + (i * k_steps + k) * row, row) = ConstArrayMap<Scalar>(x.data() + i * row, row);
    }
  }
  const int xi = tokens.id;
  return tokens.tape->record(
      std::move(out), {tokens},
      [xi, k_steps, row](Tape<Scalar>& t, int self) {
        const Tensor<Scalar>& g = t.grad(self);
        Tensor<Scalar>& gx = t.grad(xi);
        for (Index i = 0; i < gx.size() / std::max<Index>(row, 1); ++i) {
          auto gi = ArrayMap<Scalar>(gx.data() + i * row, row);
          for (Index k = 0; k < k_steps; ++k) gi += ConstArrayMap<Scalar>(g.data() + (i * k_steps + k) * row, row);
        }
      },
      "frame_repeat");
}

#define NSPARK_INSTANTIATE_PONDER(S)                                                      \
  template PonderParams<S> init_ponder(int, Rng&);                                       \
  template PonderWeights<S> halt_weights_from_logits(const Tensor<S>&);                  \
  template PonderResult<S> ponder_aggregate(const Tensor<S>&, int, const PonderParams<S>&); \
  template double ponder_cost(const std::vector<PonderWeights<S>>&, double);             \
  template Var<S> halt_weights(Var<S>, Var<S>, Var<S>, int);                             \
  template Var<S> weighted_frames(Var<S>, Var<S>);                                       \
  template Var<S> expected_steps(Var<S>);                                                \
  template Var<S> frame_mean(Var<S>, int);                                               \
  template Var<S> frame_repeat(Var<S>, int);

NSPARK_INSTANTIATE_PONDER(float)
NSPARK_INSTANTIATE_PONDER(double)

}  // namespace nspark

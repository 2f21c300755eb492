#include "nspark/stabilizers.hpp"

#include <cmath>

namespace nspark {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return !suffix.empty() && s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename Scalar>
CompensationTypeReport equalize(const ParamStore<Scalar>& store, std::vector<Tensor<Scalar>>& grads,
                                const std::string& suffix, bool apply) {
  CompensationTypeReport rep;
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (ends_with(store[i].name, suffix)) members.push_back(i);
  }
  double log_sum = 0;
  int counted = 0;
  for (std::size_t i : members) {
    const double n = std::sqrt(grads[i].array().template cast<double>().square().sum());
    rep.pre_norms.push_back(n);
    if (n >= 1e-12) {
      log_sum += std::log(n);
      ++counted;
    }
  }
  rep.geomean = counted > 0 ? std::exp(log_sum / counted) : 0.0;
  for (std::size_t j = 0; j < members.size(); ++j) {
    const double n = rep.pre_norms[j];
    if (apply && n >= 1e-12) grads[members[j]].array() *= static_cast<Scalar>(rep.geomean / n);
    rep.post_norms.push_back(std::sqrt(grads[members[j]].array().template cast<double>().square().sum()));
  }
  return rep;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> center(const Tensor<Scalar>& x) {
  Tensor<Scalar> out = x;
  auto m = out.matrix();
  if (out.cols() > 0) m.colwise() -= m.rowwise().mean();
  return out;
}

template <typename Scalar>
Tensor<Scalar> rms_norm(const Tensor<Scalar>& h, const Tensor<Scalar>& gamma, double eps) {
  require_shape(gamma, {h.cols()}, "rms_norm gamma");
  Tensor<Scalar> out(h.shape());
  const auto hm = h.matrix();
  auto om = out.matrix();
  const auto g = gamma.array().transpose();
  for (Index r = 0; r < hm.rows(); ++r) {
    const double ms = hm.row(r).template cast<double>().squaredNorm() / static_cast<double>(hm.cols());
    const auto inv = static_cast<Scalar>(1 / std::sqrt(ms + eps));
    om.row(r) = (hm.row(r).array() * g * inv).matrix();
  }
  return out;
}

template <typename Scalar>
Var<Scalar> center(Var<Scalar> x) {
  const int xi = x.id;
  return x.tape->record(
      center(x.value()), {x},
      [xi](Tape<Scalar>& t, int self) { t.grad(xi).array() += center(t.grad(self)).array(); }, "center");
}

template <typename Scalar>
Var<Scalar> rms_norm(Var<Scalar> h, Var<Scalar> gamma, double eps) {
  const int hi = h.id, gi = gamma.id;
  return h.tape->record(
      rms_norm(h.value(), gamma.value(), eps), {h, gamma},
      [hi, gi, eps](Tape<Scalar>& t, int self) {
        const auto hm = t.value(hi).matrix();
        const auto g = t.grad(self).matrix();
        const auto gam = t.value(gi).array().transpose();
        const Index d = hm.cols();
        const bool need_h = t.requires_grad(hi);
        const bool need_g = t.requires_grad(gi);
        Eigen::Array<double, 1, Eigen::Dynamic> ggam = Eigen::Array<double, 1, Eigen::Dynamic>::Zero(d);
        for (Index r = 0; r < hm.rows(); ++r) {
          const auto hr = hm.row(r).array().template cast<double>();
          const auto gr = g.row(r).array().template cast<double>();
          const double inv = 1 / std::sqrt(hr.square().sum() / static_cast<double>(d) + eps);
          if (need_g) ggam += gr * hr * inv;
          if (need_h) {
            const auto gg = gr * gam.template cast<double>();
            const double proj = (gg * hr).sum() * inv * inv * inv / static_cast<double>(d);
            t.grad(hi).matrix().row(r).array() += (gg * inv - hr * proj).template cast<Scalar>();
          }
        }
        if (need_g) t.grad(gi).array() += ggam.transpose().template cast<Scalar>();
      },
      "rms_norm");
}

template <typename Scalar>
CompensationReport compensate_gradients(const ParamStore<Scalar>& store, std::vector<Tensor<Scalar>>& grads,
                                        const CompensationConfig& cfg) {
  if (grads.size() != store.size()) throw DimensionError("compensate_gradients: gradient count mismatch");
  if (!(cfg.c_max >= 1)) throw std::invalid_argument("compensate_gradients: c_max must be >= 1");
  if (cfg.phase1) {
    const double beta_floor = 1 / cfg.c_max;
    for (std::size_t i = 0; i < store.size(); ++i) {
      const auto& e = store[i];
      if (ends_with(e.name, cfg.beta_suffix)) {
        for (Index j = 0; j < e.value.size(); ++j) {
          const double b = sigmoid(static_cast<double>(e.value[j]));
          grads[i][j] = static_cast<Scalar>(grads[i][j] / std::max(b * (1 - b), beta_floor));
        }
      } else if (ends_with(e.name, cfg.alpha_suffix)) {
        for (Index j = 0; j < e.value.size(); ++j) {
          const double s = sigmoid(static_cast<double>(e.value[j]));
          grads[i][j] = static_cast<Scalar>(grads[i][j] / std::max(s, cfg.alpha_floor));
        }
      }
    }
  }
  CompensationReport rep;
  rep.beta = equalize(store, grads, cfg.beta_suffix, cfg.phase2);
  rep.alpha = equalize(store, grads, cfg.alpha_suffix, cfg.phase2);
  rep.th = equalize(store, grads, cfg.th_suffix, cfg.phase2);
  return rep;
}

template <typename Scalar>
CompensationReport compensate_gradients(ParamStore<Scalar>& store, const CompensationConfig& cfg) {
  std::vector<Tensor<Scalar>> grads;
  grads.reserve(store.size());
  for (auto& e : store.entries()) grads.push_back(std::move(e.grad));
  CompensationReport rep = compensate_gradients(static_cast<const ParamStore<Scalar>&>(store), grads, cfg);
  for (std::size_t i = 0; i < store.size(); ++i) store[i].grad = std::move(grads[i]);
  return rep;
}

#define NSPARK_INSTANTIATE_STABILIZERS(S)                                                                     \
  template Tensor<S> center(const Tensor<S>&);                                                               \
  template Tensor<S> rms_norm(const Tensor<S>&, const Tensor<S>&, double);                                   \
  template Var<S> center(Var<S>);                                                                            \
  template Var<S> rms_norm(Var<S>, Var<S>, double);                                                          \
  template CompensationReport compensate_gradients(const ParamStore<S>&, std::vector<Tensor<S>>&,            \
                                                   const CompensationConfig&);                               \
  template CompensationReport compensate_gradients(ParamStore<S>&, const CompensationConfig&);

NSPARK_INSTANTIATE_STABILIZERS(float)
NSPARK_INSTANTIATE_STABILIZERS(double)

}  // namespace nspark

#include "nspark/oracle.hpp"

#include <cmath>
#include <stdexcept>

namespace nspark::oracle {

double Real::value() const { return tape->value(id); }

Real ScalarTape::constant(double v) {
  nodes_.push_back(Node{v});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Real ScalarTape::variable(double v) { return constant(v); }

Real ScalarTape::unary(Real a, double value, double da) {
  nodes_.push_back(Node{value, a.id, -1, da, 0});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Real ScalarTape::binary(Real a, Real b, double value, double da, double db) {
  nodes_.push_back(Node{value, a.id, b.id, da, db});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

std::vector<double> ScalarTape::adjoints(Real out) const {
  std::vector<double> adj(nodes_.size(), 0.0);
  adj[static_cast<std::size_t>(out.id)] = 1.0;
  for (int i = out.id; i >= 0; --i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    const double g = adj[static_cast<std::size_t>(i)];
    if (g == 0.0) continue;
    if (n.a >= 0) adj[static_cast<std::size_t>(n.a)] += g * n.da;
    if (n.b >= 0) adj[static_cast<std::size_t>(n.b)] += g * n.db;
  }
  return adj;
}

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Real operator+(Real a, Real b) { return a.tape->binary(a, b, a.value() + b.value(), 1.0, 1.0); }
Real operator-(Real a, Real b) { return a.tape->binary(a, b, a.value() - b.value(), 1.0, -1.0); }
Real operator*(Real a, Real b) {
  return a.tape->binary(a, b, a.value() * b.value(), b.value(), a.value());
}
Real operator/(Real a, Real b) {
  const double bv = b.value();
  if (bv == 0.0) throw std::domain_error("oracle: division by zero");
  return a.tape->binary(a, b, a.value() / bv, 1.0 / bv, -a.value() / (bv * bv));
}
Real operator-(Real a) { return a.tape->unary(a, -a.value(), -1.0); }
Real operator+(Real a, double b) { return a.tape->unary(a, a.value() + b, 1.0); }
Real operator+(double a, Real b) { return b + a; }
Real operator-(Real a, double b) { return a.tape->unary(a, a.value() - b, 1.0); }
Real operator-(double a, Real b) { return b.tape->unary(b, a - b.value(), -1.0); }
Real operator*(Real a, double b) { return a.tape->unary(a, a.value() * b, b); }
Real operator*(double a, Real b) { return b * a; }
Real operator/(Real a, double b) { return a * (1.0 / b); }
Real& operator+=(Real& a, Real b) {
  a = a + b;
  return a;
}

Real sigmoid(Real x) {
  const double s = logistic(x.value());
  return x.tape->unary(x, s, s * (1.0 - s));
}

Real softplus(Real x) {
  const double v = x.value();
  const double y = v > 30 ? v : std::log(1.0 + std::exp(v));
  return x.tape->unary(x, y, logistic(v));
}

Real abs(Real x) {
  const double v = x.value();
  return x.tape->unary(x, std::fabs(v), v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0));
}

Real exp(Real x) {
  const double y = std::exp(x.value());
  return x.tape->unary(x, y, y);
}

Real log(Real x) {
  const double v = x.value();
  if (v <= 0) throw std::domain_error("oracle: log of non-positive value");
  return x.tape->unary(x, std::log(v), 1.0 / v);
}

Real sqrt(Real x) {
  const double v = x.value();
  if (v < 0) throw std::domain_error("oracle: sqrt of negative value");
  const double y = std::sqrt(v);
  return x.tape->unary(x, y, 0.5 / y);
}

double surrogate(double x, double sharpness) {
  const double s = logistic(sharpness * x);
  return sharpness * s * (1.0 - s);
}

Real spike(Real x, SpikeRule rule, double sharpness) {
  const double v = x.value();
  if (rule == SpikeRule::hard) return x.tape->unary(x, v >= 0.0 ? 1.0 : 0.0, surrogate(v, sharpness));
  const double s = logistic(sharpness * v);
  return x.tape->unary(x, s, sharpness * s * (1.0 - s));
}

OracleResult oracle_grad(const ScalarFn& f, const ParamMap& params) {
  ScalarTape tape;
  RealMap leaves;
  for (const auto& [name, values] : params) {
    auto& dst = leaves[name];
    dst.reserve(values.size());
    for (double v : values) dst.push_back(tape.variable(v));
  }
  const Real out = f(tape, leaves);
  const std::vector<double> adj = tape.adjoints(out);
  OracleResult result;
  result.value = out.value();
  for (const auto& [name, reals] : leaves) {
    auto& g = result.grads[name];
    g.reserve(reals.size());
    for (const Real& r : reals) g.push_back(adj[static_cast<std::size_t>(r.id)]);
  }
  return result;
}

}  // namespace nspark::oracle

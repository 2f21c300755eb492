#pragma once

// Scalar-level reverse-mode tape used as an independent gradient reference.
// Every arithmetic operation on a `Real` becomes one node holding its local
// partial derivatives; gradients come from a plain reverse sweep. Runs in
// 64-bit and shares no code with the tensor tape or the fused scan backward.

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace nspark::oracle {

class ScalarTape;

struct Real {
  ScalarTape* tape = nullptr;
  int id = -1;
  double value() const;
};

class ScalarTape {
 public:
  Real constant(double v);
  Real variable(double v);
  Real unary(Real a, double value, double da);
  Real binary(Real a, Real b, double value, double da, double db);

  double value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  std::size_t size() const { return nodes_.size(); }

  /// d out / d node for every node on the tape.
  std::vector<double> adjoints(Real out) const;

 private:
  struct Node {
    double value = 0;
    int a = -1;
    int b = -1;
    double da = 0;
    double db = 0;
  };
  std::vector<Node> nodes_;
};

Real operator+(Real a, Real b);
Real operator-(Real a, Real b);
Real operator*(Real a, Real b);
Real operator/(Real a, Real b);
Real operator-(Real a);
Real operator+(Real a, double b);
Real operator+(double a, Real b);
Real operator-(Real a, double b);
Real operator-(double a, Real b);
Real operator*(Real a, double b);
Real operator*(double a, Real b);
Real operator/(Real a, double b);
Real& operator+=(Real& a, Real b);

Real sigmoid(Real x);
Real softplus(Real x);
Real abs(Real x);
Real exp(Real x);
Real log(Real x);
Real sqrt(Real x);

enum class SpikeRule { hard, smooth };

/// a * sigma(a x) * (1 - sigma(a x)), evaluated directly.
double surrogate(double x, double sharpness = 4.0);

/// Hard rule: value is 1 when x >= 0 else 0, derivative is the surrogate.
/// Smooth rule: value is sigma(sharpness * x) with its exact derivative.
Real spike(Real x, SpikeRule rule, double sharpness = 4.0);

using ParamMap = std::map<std::string, std::vector<double>>;
using RealMap = std::map<std::string, std::vector<Real>>;
using ScalarFn = std::function<Real(ScalarTape&, const RealMap&)>;

struct OracleResult {
  double value = 0;
  ParamMap grads;
};

/// Evaluates f on a fresh scalar tape with every entry of `params` as a leaf
/// and returns the gradient of f with respect to each of them.
OracleResult oracle_grad(const ScalarFn& f, const ParamMap& params);

}  // namespace nspark::oracle

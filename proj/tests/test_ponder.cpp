#include "doctest.h"
#include "test_util.hpp"

#include "nspark/ponder.hpp"
#include "nspark/reference.hpp"

#include <cmath>

using namespace nspark;
using nspark::test::rel_err;

namespace {

Tensor<double> logits_of(std::vector<double> a) {
  const Index k = static_cast<Index>(a.size());
  return Tensor<double>({1, 1, k}, std::move(a));
}

double logit(double p) { return std::log(p / (1 - p)); }

}  // namespace

TEST_CASE("two steps at one half") {
  const auto w = halt_weights_from_logits(logits_of({0.0, 0.0}));
  CHECK(w.lambda_hat[0] == doctest::Approx(2.0 / 3.0));
  CHECK(w.lambda_hat[1] == doctest::Approx(1.0 / 3.0));
  CHECK(w.expected_k[0] == doctest::Approx(4.0 / 3.0));
  CHECK(w.survival[0] == doctest::Approx(1.0));
  CHECK(w.survival[1] == doctest::Approx(0.5));
}

TEST_CASE("immediate halt puts all weight on the first frame") {
  const auto w = halt_weights_from_logits(logits_of({40.0, -3.0, 5.0, 0.0}));
  CHECK(w.lambda_hat[0] == doctest::Approx(1.0));
  CHECK(w.expected_k[0] == doctest::Approx(1.0));
  // A certain halt at step 3 zeroes everything after it.
  const auto w3 = halt_weights_from_logits(logits_of({-2.0, -1.0, 60.0, 3.0}));
  CHECK(w3.lambda_hat[3] < 1e-20);
}

TEST_CASE("equal halting probabilities follow the geometric closed form") {
  for (double p : {0.03, 0.2, 0.5, 0.9}) {
    for (int k = 1; k <= 8; ++k) {
      const auto w = halt_weights_from_logits(logits_of(std::vector<double>(static_cast<std::size_t>(k), logit(p))));
      const double z = 1 - std::pow(1 - p, k);
      double ek = 0;
      for (int j = 0; j < k; ++j) {
        const double expect = p * std::pow(1 - p, j) / z;
        CHECK(w.lambda_hat[j] == doctest::Approx(expect).epsilon(1e-10));
        ek += (j + 1) * expect;
      }
      CHECK(w.expected_k[0] == doctest::Approx(ek).epsilon(1e-10));
    }
  }
}

TEST_CASE("weights are a distribution for extreme logits") {
  Rng rng(12);
  const auto a = test::random_tensor({5, 3, 16}, rng, -80, 80);
  const auto w = halt_weights_from_logits(a);
  for (Index r = 0; r < 15; ++r) {
    double s = 0;
    for (Index k = 0; k < 16; ++k) {
      const double l = w.lambda_hat[r * 16 + k];
      CHECK(l >= 0);
      s += l;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(w.expected_k[r] >= 1.0);
    CHECK(w.expected_k[r] <= 16.0);
  }
  // Everything refuses to halt: the weights still normalize.
  const auto low = halt_weights_from_logits(logits_of(std::vector<double>(8, -200.0)));
  double s = 0;
  for (Index k = 0; k < 8; ++k) s += low.lambda_hat[k];
  CHECK(s == doctest::Approx(1.0));
}

TEST_CASE("fresh halt head gives near-uniform expected steps") {
  Rng rng(1);
  const auto params = init_ponder<double>(16, rng);
  CHECK(params.b_halt[0] == kHaltBiasInit);
  const double bound = std::sqrt(6.0 / 17.0) * kHaltWeightScale;
  CHECK(params.W_halt.array().abs().maxCoeff() <= bound);

  const auto zero = ponder_aggregate(Tensor<double>({8, 2, 16}), 4, params);
  const double p0 = 1 / (1 + std::exp(3.5));
  CHECK(zero.weights.p[0] == doctest::Approx(p0));
  CHECK(zero.output.shape() == Shape{2, 2, 16});
  CHECK(zero.output.array().abs().maxCoeff() == 0.0);
  // E[K] for K=4 at p = sigmoid(-3.5).
  double z = 1 - std::pow(1 - p0, 4), ek = 0;
  for (int j = 0; j < 4; ++j) ek += (j + 1) * p0 * std::pow(1 - p0, j) / z;
  CHECK(zero.weights.expected_k[0] == doctest::Approx(ek));
  CHECK(ek > 2.4);
}

TEST_CASE("aggregation of identical frames returns the frame") {
  Rng rng(2);
  auto params = init_ponder<double>(4, rng);
  params.W_halt = test::random_tensor({4}, rng, -2, 2);
  const auto tok = test::random_tensor({3, 2, 4}, rng);
  Tensor<double> frames({9, 2, 4});
  for (Index t = 0; t < 3; ++t)
    for (Index k = 0; k < 3; ++k)
      for (Index i = 0; i < 8; ++i) frames[(t * 3 + k) * 8 + i] = tok[t * 8 + i];
  const auto r = ponder_aggregate(frames, 3, params);
  CHECK(rel_err(r.output.values(), tok.values()) < 1e-12);
}

TEST_CASE("ponder cost") {
  PonderWeights<double> a, b;
  a.expected_k = Tensor<double>({2, 1}, {1.0, 2.0});
  b.expected_k = Tensor<double>({2, 1}, {3.0, 2.0});
  CHECK(ponder_cost<double>({a}, 0.01) == doctest::Approx(0.015));
  CHECK(ponder_cost<double>({a, b}, 0.01) == doctest::Approx(0.02));
  CHECK(ponder_cost<double>({b}, 0.5) == doctest::Approx(1.25));
  CHECK_THROWS(ponder_cost<double>({}, 0.01));
}

TEST_CASE("frame helpers") {
  Tape<double> tape;
  auto tok = tape.variable(Tensor<double>({2, 1, 2}, {1, 2, 3, 4}));
  auto rep = frame_repeat(tok, 3);
  CHECK(rep.value().shape() == Shape{6, 1, 2});
  CHECK(rep.value() == Tensor<double>({6, 1, 2}, {1, 2, 1, 2, 1, 2, 3, 4, 3, 4, 3, 4}));
  auto back = frame_mean(rep, 3);
  CHECK(back.value() == tok.value());
  tape.backward(sum(rep));
  CHECK(tape.grad(tok) == Tensor<double>({2, 1, 2}, 3.0));
  CHECK_THROWS_AS(frame_mean(tok, 3), DimensionError);
}

TEST_CASE("halt gradients match the product-form oracle") {
  Rng rng(31);
  const Index tokens = 3, batch = 2, d = 3;
  for (int k : {1, 2, 4, 7}) {
    CAPTURE(k);
    const auto frames = test::random_tensor({tokens * k, batch, d}, rng, -2, 2);
    const auto w = test::random_tensor({d}, rng, -1.5, 1.5);
    const auto b = test::random_tensor({1}, rng, -1, 1);
    const auto proj = test::random_tensor({tokens, batch, d}, rng);
    const auto proj_e = test::random_tensor({tokens, batch}, rng);

    Tape<double> tape;
    auto fv = tape.variable(frames), wv = tape.variable(w), bv = tape.variable(b);
    auto lam = halt_weights(fv, wv, bv, k);
    auto loss = test::project(weighted_frames(fv, lam), proj) + test::project(expected_steps(lam), proj_e);
    tape.backward(loss);

    const auto ref = oracle::oracle_grad(
        [&](oracle::ScalarTape& t, const oracle::RealMap& m) {
          const auto r = oracle::ponder_ref(m.at("frames"), tokens, k, batch, d, m.at("w"), m.at("b")[0]);
          oracle::Real acc = t.constant(0);
          for (std::size_t i = 0; i < r.output.size(); ++i) acc += proj[static_cast<Index>(i)] * r.output[i];
          for (std::size_t i = 0; i < r.expected_k.size(); ++i) acc += proj_e[static_cast<Index>(i)] * r.expected_k[i];
          return acc;
        },
        {{"frames", test::to_vec(frames)}, {"w", test::to_vec(w)}, {"b", test::to_vec(b)}});
    CHECK(loss.value()[0] == doctest::Approx(ref.value).epsilon(1e-10));
    CHECK(rel_err(tape.grad(fv).values(), ref.grads.at("frames")) <= 1e-6);
    CHECK(rel_err(tape.grad(wv).values(), ref.grads.at("w")) <= 1e-6);
    CHECK(rel_err(tape.grad(bv).values(), ref.grads.at("b")) <= 1e-6);
  }
}

#include "doctest.h"
#include "test_util.hpp"

#include "nspark/blocks.hpp"
#include "nspark/reference.hpp"

#include <cmath>

using namespace nspark;
using nspark::test::rel_err;

namespace {

ModelConfig small_config(int d, int n) {
  ModelConfig c;
  c.d_model = d;
  c.n_state = n;
  c.d_ff = 3 * d;
  c.n_layers = 2;
  return c;
}

double rms(const Tensor<double>& t) { return std::sqrt(t.array().square().mean()); }

oracle::ParamMap block_param_map(const SnnBlockParams<double>& p) {
  return {{"W_in", test::to_vec(p.W_in)},     {"W_beta", test::to_vec(p.W_beta)}, {"W_alpha", test::to_vec(p.W_alpha)},
          {"W_th", test::to_vec(p.W_th)},     {"W_gate", test::to_vec(p.W_gate)}, {"W_skip", test::to_vec(p.W_skip)},
          {"W_out", test::to_vec(p.W_out)},   {"b_beta", test::to_vec(p.b_beta)}, {"b_alpha", test::to_vec(p.b_alpha)},
          {"b_th", test::to_vec(p.b_th)}};
}

/// Random block with weights large enough that hidden neurons actually fire.
SnnBlockParams<double> lively_block(int d, int n, Rng& rng) {
  SnnBlockParams<double> p;
  const Index dn = d * n;
  p.W_in = test::random_tensor({dn, d}, rng, -1.5, 1.5);
  p.W_beta = test::random_tensor({dn, d}, rng, -0.5, 0.5);
  p.W_alpha = test::random_tensor({dn, d}, rng, -0.5, 0.5);
  p.W_th = test::random_tensor({dn, d}, rng, -0.5, 0.5);
  p.W_gate = test::random_tensor({d, d}, rng);
  p.W_skip = test::random_tensor({d, d}, rng);
  p.W_out = test::random_tensor({d, dn}, rng);
  p.b_beta = test::random_tensor({dn}, rng, -1, 2);
  p.b_alpha = test::random_tensor({dn}, rng, 0, 1);
  p.b_th = test::random_tensor({dn}, rng, 0.1, 0.6);
  return p;
}

}  // namespace

TEST_CASE("inverse normal CDF") {
  CHECK(std::abs(inv_normal_cdf(0.5)) < 1e-12);
  CHECK(inv_normal_cdf(0.75) == doctest::Approx(0.67449).epsilon(1e-4));
  CHECK(inv_normal_cdf(0.92) == doctest::Approx(1.40507).epsilon(1e-4));
  // Round trip through the CDF across the body and both tails.
  for (double q : {1e-10, 1e-4, 0.01, 0.02425, 0.1, 0.3, 0.6, 0.9, 0.975, 0.999, 1 - 1e-7}) {
    const double x = inv_normal_cdf(q);
    CHECK(std::abs(0.5 * std::erfc(-x / std::sqrt(2.0)) - q) <= 1e-7 * std::min(q, 1 - q) + 1e-15);
  }
  CHECK_THROWS_AS(inv_normal_cdf(0.0), DomainError);
  CHECK_THROWS_AS(inv_normal_cdf(1.0), DomainError);
  CHECK_THROWS_AS(inv_normal_cdf(-0.2), DomainError);
}

TEST_CASE("structured init targets") {
  const auto t = structured_init_targets(8);
  CHECK(t.beta.front() == doctest::Approx(0.80));
  CHECK(t.beta[1] == doctest::Approx(0.8271).epsilon(1e-4));
  CHECK(t.beta.back() == doctest::Approx(0.99));
  CHECK(t.sigma_v[0] == doctest::Approx(0.2235).epsilon(1e-3));
  CHECK(t.v_th[0] == doctest::Approx(0.1508).epsilon(1e-3));
  double mean = 0;
  for (double c : t.col_scale) mean += c / 8;
  CHECK(mean == doctest::Approx(1.0).epsilon(1e-6));
  CHECK_THROWS(structured_init_targets(0));
}

TEST_CASE("init_snn_block statistics") {
  Rng rng(101);
  const ModelConfig cfg = small_config(64, 8);
  const auto p = init_snn_block<double>(cfg, rng);
  const auto t = structured_init_targets(8);
  CHECK(p.W_in.shape() == Shape{512, 64});
  CHECK(p.W_out.shape() == Shape{64, 512});
  CHECK(p.b_th.shape() == Shape{512});

  for (int n = 0; n < 8; ++n) {
    double mean_logit = 0, mean_beta = 0;
    for (int d = 0; d < 64; ++d) {
      mean_logit += p.b_beta[n * 64 + d] / 64;
      mean_beta += sigmoid(p.b_beta[n * 64 + d]) / 64;
    }
    CHECK(mean_beta == doctest::Approx(t.beta[static_cast<std::size_t>(n)]).epsilon(0.03));
    if (n == 0) CHECK(mean_logit == doctest::Approx(1.3863).epsilon(0.03));
    CHECK(p.b_th[n * 64] == doctest::Approx(std::max(t.v_th[static_cast<std::size_t>(n)] - cfg.v_min, 0.0)));
  }
  int in_range = 0;
  for (double b : p.b_alpha.values()) in_range += softplus(b) >= 0.7 && softplus(b) <= 1.4;
  CHECK(in_range >= 0.99 * p.b_alpha.size());
  CHECK(rms(p.W_beta) / rms(p.W_in) == doctest::Approx(0.1).epsilon(0.1));
  CHECK(rms(p.W_th) / rms(p.W_in) == doctest::Approx(0.1).epsilon(0.1));

  // Row groups shrink with beta; column groups grow as p_fire falls.
  const auto w_in = p.W_in.matrix();
  const auto w_out = p.W_out.matrix();
  CHECK(w_in.topRows(64).norm() > w_in.bottomRows(64).norm());
  CHECK(w_out.leftCols(64).norm() < w_out.rightCols(64).norm());

  ModelConfig bad = cfg;
  bad.n_state = 0;
  CHECK_THROWS(init_snn_block<double>(bad, rng));
}

TEST_CASE("init_plif_node distributions") {
  Rng rng(5);
  const auto p = init_plif_node<double>(100000, 2.0, 1.0, rng);
  double mean_w = 0, mean_beta = 0;
  for (Index i = 0; i < p.w.size(); ++i) {
    mean_w += p.w[i] / p.w.size();
    mean_beta += sigmoid(p.w[i]) / p.w.size();
  }
  CHECK(std::abs(mean_w) < 0.01);
  CHECK(mean_beta == doctest::Approx(0.5).epsilon(0.05));
  CHECK(p.v_th.array().minCoeff() >= 0.5);
  CHECK(p.v_th.array().maxCoeff() <= 1.5);
  CHECK_THROWS(init_plif_node<double>(4, 1.0, 1.0, rng));
  CHECK_THROWS(init_plif_node<double>(4, 2.0, 0.0, rng));
}

TEST_CASE("init_snn_ffn shapes and residual scaling") {
  Rng rng(9);
  ModelConfig cfg = small_config(32, 2);
  cfg.n_layers = 16;
  const auto p = init_snn_ffn<double>(cfg, rng);
  CHECK(p.W_gate.shape() == Shape{96, 32});
  CHECK(p.W_down.shape() == Shape{32, 96});
  CHECK(p.gate.w.shape() == Shape{96});
  CHECK(rms(p.W_down) == doctest::Approx(kInitStd / 4).epsilon(0.1));
  CHECK(rms(p.W_up) == doctest::Approx(kInitStd).epsilon(0.1));
}

TEST_CASE("selective block collapses to biases on zero input") {
  Rng rng(3);
  const auto p = init_snn_block<double>(small_config(4, 2), rng);
  BlockDiagnostics diag;
  const auto out = snn_block_forward(Tensor<double>({3, 2, 4}), p, {}, &diag);
  CHECK(out.array().abs().maxCoeff() == 0.0);
  double mean_beta = 0;
  for (double b : p.b_beta.values()) mean_beta += sigmoid(b) / p.b_beta.size();
  CHECK(diag.mean_beta == doctest::Approx(mean_beta));
  CHECK(diag.group_firing_rate.size() == 2);
}

TEST_CASE("selective block skip path isolation") {
  Rng rng(4);
  auto p = lively_block(4, 2, rng);
  p.W_out.fill(0);
  const auto leak = test::random_tensor({5, 3, 4}, rng);
  const auto out = snn_block_forward(leak, p);
  Tape<double> tape;
  const auto skip = linear(tape.constant(leak), tape.constant(p.W_skip)).value();
  CHECK(out == skip);
}

TEST_CASE("selective block single-token hand instance") {
  // D = 2, N = 1, one frame: V_post = alpha*I - v_th*s.
  SnnBlockParams<double> p;
  p.W_in = Tensor<double>({2, 2}, {1.0, 0.5, -0.5, 2.0});
  p.W_beta = Tensor<double>({2, 2});
  p.W_alpha = Tensor<double>({2, 2});
  p.W_th = Tensor<double>({2, 2}, {0.1, 0.0, 0.0, -0.2});
  p.W_gate = Tensor<double>({2, 2}, {1, 0, 0, 1});
  p.W_skip = Tensor<double>({2, 2}, {0, 1, 1, 0});
  p.W_out = Tensor<double>({2, 2}, {2, 0, 0, 3});
  p.b_beta = Tensor<double>({2});
  p.b_alpha = Tensor<double>({2}, {0.5413, 0.0});
  p.b_th = Tensor<double>({2}, {0.3, -0.9});
  const Tensor<double> leak({1, 1, 2}, {1.0, 0.4});

  double expect[2];
  const double x[2] = {1.0, 0.4};
  for (int i = 0; i < 2; ++i) {
    const double cur = p.W_in[i * 2] * x[0] + p.W_in[i * 2 + 1] * x[1];
    const double alpha = softplus(p.b_alpha[i]);
    const double th = 0.1 + std::abs(p.W_th[i * 2] * x[0] + p.W_th[i * 2 + 1] * x[1] + p.b_th[i]);
    const double pre = alpha * cur;
    const double post = pre - th * (pre >= th ? 1.0 : 0.0);
    const double gate = sigmoid(x[i]);
    const double skip = x[1 - i];
    expect[i] = p.W_out[i * 2 + i] * post * gate + skip;
  }
  const auto out = snn_block_forward(leak, p);
  CHECK(out[0] == doctest::Approx(expect[0]).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(expect[1]).epsilon(1e-12));
}

TEST_CASE("spiking FFN gating limits") {
  Rng rng(8);
  ModelConfig cfg = small_config(4, 1);
  cfg.d_ff = 6;
  auto p = init_snn_ffn<double>(cfg, rng);
  p.W_gate = test::random_tensor({6, 4}, rng, -2, 2);
  p.W_up = test::random_tensor({6, 4}, rng, -2, 2);
  p.W_down = test::random_tensor({4, 6}, rng);
  const auto leak = test::random_tensor({6, 2, 4}, rng);
  Tape<double> tape;
  const auto skip = linear(tape.constant(leak), tape.constant(p.W_skip)).value();

  SUBCASE("zero gate weights") {
    p.W_gate.fill(0);
    CHECK(snn_ffn_forward(leak, p) == skip);
  }
  SUBCASE("decay near one silences the leakage") {
    p.gate.w.fill(40);
    p.up.w.fill(40);
    CHECK(rel_err(snn_ffn_forward(leak, p).values(), skip.values()) < 1e-12);
  }
  SUBCASE("one-step hand instance") {
    SnnFfnParams<double> q;
    q.input = init_plif_node<double>(2, 2.0, 1.0, rng);
    q.gate = {Tensor<double>({2}, {0.0, 1.0}), Tensor<double>({2}, {0.2, 5.0})};
    q.up = {Tensor<double>({2}, {-1.0, 0.5}), Tensor<double>({2}, {5.0, 0.1})};
    q.W_gate = Tensor<double>({2, 2}, {1, 0, 0, 1});
    q.W_up = Tensor<double>({2, 2}, {0, 1, 1, 0});
    q.W_down = Tensor<double>({2, 2}, {1, 2, 3, 4});
    q.W_skip = Tensor<double>({2, 2}, {0.5, 0, 0, 0.5});
    const double x[2] = {0.8, -0.3};
    double hidden[2];
    for (int j = 0; j < 2; ++j) {
      auto node = [](double in, double w, double th) {
        const double b = sigmoid(w);
        const double pre = (1 - b) * in;
        const double post = pre - th * (pre >= th ? 1.0 : 0.0);
        return (1 - b) * post;
      };
      hidden[j] = node(x[j], q.gate.w[j], q.gate.v_th[j]) * node(x[1 - j], q.up.w[j], q.up.v_th[j]);
    }
    const auto out = snn_ffn_forward(Tensor<double>({1, 1, 2}, {x[0], x[1]}), q);
    CHECK(out[0] == doctest::Approx(hidden[0] + 2 * hidden[1] + 0.5 * x[0]).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(3 * hidden[0] + 4 * hidden[1] + 0.5 * x[1]).epsilon(1e-12));
  }
}

TEST_CASE("block and FFN backward match the scalar oracle") {
  Rng rng(21);
  for (int rep = 0; rep < 5; ++rep) {
    const int d = 3, n = 2;
    const Index frames = 6, batch = 2;
    const auto p = lively_block(d, n, rng);
    const auto leak = test::random_tensor({frames, batch, d}, rng, -1, 1);
    const auto proj = test::random_tensor({frames, batch, d}, rng);

    Tape<double> tape;
    const auto vars = bind_variables(tape, p);
    auto x = tape.variable(leak);
    BlockOptions opts;
    tape.backward(test::project(snn_block_forward(x, vars, n, opts), proj));

    oracle::ParamMap params = block_param_map(p);
    params["leak"] = test::to_vec(leak);
    const auto ref = oracle::oracle_grad(
        [&](oracle::ScalarTape& t, const oracle::RealMap& m) {
          const auto y = oracle::snn_block_ref(m, "", m.at("leak"), frames, batch, d, n, opts.v_min, {});
          oracle::Real acc = t.constant(0);
          for (std::size_t i = 0; i < y.size(); ++i) acc += proj[static_cast<Index>(i)] * y[i];
          return acc;
        },
        params);
    CHECK(rel_err(tape.grad(x).values(), ref.grads.at("leak")) <= 1e-5);
    CHECK(rel_err(tape.grad(vars.W_in).values(), ref.grads.at("W_in")) <= 1e-5);
    CHECK(rel_err(tape.grad(vars.W_beta).values(), ref.grads.at("W_beta")) <= 1e-5);
    CHECK(rel_err(tape.grad(vars.W_th).values(), ref.grads.at("W_th")) <= 1e-5);
    CHECK(rel_err(tape.grad(vars.b_alpha).values(), ref.grads.at("b_alpha")) <= 1e-5);
    CHECK(rel_err(tape.grad(vars.b_th).values(), ref.grads.at("b_th")) <= 1e-5);
    CHECK(rel_err(tape.grad(vars.W_out).values(), ref.grads.at("W_out")) <= 1e-5);
  }
}

TEST_CASE("calibrated thresholds hit the target firing rates") {
  Rng rng(77);
  const ModelConfig cfg = small_config(64, 8);
  const auto p = init_snn_block<double>(cfg, rng);
  const auto res = calibration_probe(p, cfg.v_min, 200, rng);
  REQUIRE(res.target.size() == 8);
  for (std::size_t n = 0; n < 8; ++n) {
    CAPTURE(n);
    CAPTURE(res.reset_free[n]);
    CHECK(res.reset_free[n] >= 0.5 * res.target[n]);
    CHECK(res.reset_free[n] <= 1.5 * res.target[n]);
    CHECK(res.with_reset[n] <= res.reset_free[n] + 0.05);
  }
}

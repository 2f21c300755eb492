#include "doctest.h"
#include "test_util.hpp"

#include "nspark/neuron.hpp"
#include "nspark/reference.hpp"

using namespace nspark;
using nspark::test::rel_err;

namespace {

Tensor<double> vec(std::vector<double> v) {
  const Index n = static_cast<Index>(v.size());
  return Tensor<double>({n}, std::move(v));
}

Tensor<double> col(std::vector<double> v) {
  const Index n = static_cast<Index>(v.size());
  return Tensor<double>({n, 1}, std::move(v));
}

struct FixedInstance {
  Tensor<double> x, w, v_th;
};

FixedInstance random_fixed(Rng& rng, Index steps, Index channels, Index batch) {
  FixedInstance f;
  f.x = test::random_tensor({steps, batch, channels}, rng, -0.5, 2.5);
  f.w = test::random_tensor({channels}, rng, -2, 2);
  f.v_th = test::random_tensor({channels}, rng, 0.5, 1.5);
  return f;
}

SelectiveInputs<double> random_selective(Rng& rng, Index steps, Index lanes) {
  SelectiveInputs<double> in;
  in.beta = test::random_tensor({steps, lanes}, rng, 0.05, 0.95);
  in.alpha = test::random_tensor({steps, lanes}, rng, 0.2, 1.5);
  in.v_th = test::random_tensor({steps, lanes}, rng, 0.1, 1.2);
  in.current = test::random_tensor({steps, lanes}, rng, -0.5, 1.5);
  return in;
}

}  // namespace

TEST_CASE("surrogate gradient values") {
  CHECK(surrogate_grad(0.0) == doctest::Approx(1.0));
  CHECK(surrogate_grad(0.5) == doctest::Approx(0.419974).epsilon(1e-5));
  CHECK(surrogate_grad(50.0) < 1e-12);
}

TEST_CASE("fixed scan hand instances") {
  auto tr = plif_scan_fixed(col({2.2}), vec({0.5}), vec({1.0}), Tensor<double>());
  CHECK(tr.v_pre[0] == doctest::Approx(1.1));
  CHECK(tr.spikes[0] == 1.0);
  CHECK(tr.v_post[0] == doctest::Approx(0.1));

  tr = plif_scan_fixed(col({1.0, 1.0}), vec({0.9}), vec({10.0}), Tensor<double>());
  CHECK(tr.v_pre[0] == doctest::Approx(0.1));
  CHECK(tr.v_pre[1] == doctest::Approx(0.19));
  CHECK(tr.spikes.array().sum() == 0.0);

  tr = plif_scan_fixed(Tensor<double>({5, 3}), vec({0.3, 0.6, 0.9}), vec({1, 1, 1}), Tensor<double>());
  CHECK(tr.v_post.array().abs().maxCoeff() == 0.0);
  CHECK(tr.spikes.array().sum() == 0.0);
}

TEST_CASE("threshold boundary fires") {
  // beta = 0.5, x = 2 -> V_pre = 1 exactly at V_th = 1.
  auto tr = plif_scan_fixed(col({2.0}), vec({0.5}), vec({1.0}), Tensor<double>());
  CHECK(tr.v_pre[0] == 1.0);
  CHECK(tr.spikes[0] == 1.0);
  CHECK(tr.v_post[0] == 0.0);
  auto smooth = plif_scan_smooth(col({2.0}), vec({0.5}), vec({1.0}), Tensor<double>());
  CHECK(smooth.spikes[0] == 0.5);
}

TEST_CASE("selective scan hand instances") {
  SelectiveInputs<double> in{col({0.5}), col({2.0}), col({1.5}), col({1.0})};
  auto tr = plif_scan_selective(in, Tensor<double>());
  CHECK(tr.v_pre[0] == doctest::Approx(2.0));
  CHECK(tr.spikes[0] == 1.0);
  CHECK(tr.v_post[0] == doctest::Approx(0.5));

  // beta = 0, alpha = 1: memoryless.
  SelectiveInputs<double> m{col({0, 0, 0}), col({1, 1, 1}), col({10, 10, 10}), col({0.3, -0.2, 0.7})};
  tr = plif_scan_selective(m, Tensor<double>());
  for (Index t = 0; t < 3; ++t) CHECK(tr.v_post[t] == m.current[t]);
}

TEST_CASE("pure decay is monotone") {
  SelectiveInputs<double> in{col({0.9, 0.5, 0.7, 0.99}), col({0, 0, 0, 0}), col({5, 5, 5, 5}), col({1, 1, 1, 1})};
  auto tr = plif_scan_selective(in, vec({2.0}));
  double prev = 2.0;
  for (Index t = 0; t < 4; ++t) {
    CHECK(std::abs(tr.v_post[t]) <= prev);
    prev = std::abs(tr.v_post[t]);
  }
  auto fixed = plif_scan_fixed(Tensor<double>({6, 1}), vec({0.8}), vec({5.0}), vec({-3.0}));
  prev = 3.0;
  for (Index t = 0; t < 6; ++t) {
    CHECK(std::abs(fixed.v_post[t]) <= prev);
    prev = std::abs(fixed.v_post[t]);
  }
}

TEST_CASE("trace invariants: soft reset identity and binary spikes") {
  Rng rng(5);
  auto f = random_fixed(rng, 40, 6, 3);
  PlifParams<double> p{f.w, f.v_th};
  auto tr = plif_scan_fixed(f.x, p, Tensor<double>());
  for (Index i = 0; i < tr.v_pre.size(); ++i) {
    const double th = f.v_th[i % 6];
    CHECK((tr.spikes[i] == 0.0 || tr.spikes[i] == 1.0));
    CHECK(tr.v_post[i] == tr.v_pre[i] - th * tr.spikes[i]);
  }
}

TEST_CASE("leakage values") {
  CHECK(leakage(vec({2.0}), vec({0.9}))[0] == doctest::Approx(0.2));
  CHECK(leakage(vec({5.0}), vec({1.0}))[0] == 0.0);
  CHECK(leakage(vec({-1.25}), vec({0.0}))[0] == -1.25);
}

TEST_CASE("scan errors") {
  Tensor<double> x({3, 2});
  x[3] = std::numeric_limits<double>::quiet_NaN();
  try {
    plif_scan_fixed(x, vec({0.5, 0.5}), vec({1, 1}), Tensor<double>());
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("step 1") != std::string::npos);
  }
  CHECK_THROWS_AS(plif_scan_fixed(Tensor<double>({3, 5}), vec({0.5, 0.5}), vec({1, 1}), Tensor<double>()),
                  DimensionError);
}

TEST_CASE("one-step fixed backward by hand") {
  const double beta = 0.6, th = 1.0, x = 0.5;
  auto tr = plif_scan_fixed(col({x}), vec({beta}), vec({th}), Tensor<double>());
  REQUIRE(tr.spikes[0] == 0.0);
  auto g = plif_backward(tr, col({x}), vec({beta}), vec({th}), Tensor<double>(), col({1.0}));
  const double vpre = (1 - beta) * x;
  CHECK(g.x[0] == doctest::Approx((1 - beta) * (1 - th * surrogate_grad(vpre - th))));

  auto zero = plif_backward(tr, col({x}), vec({beta}), vec({th}), Tensor<double>(), col({0.0}));
  CHECK(zero.x[0] == 0.0);
  CHECK(zero.v_th[0] == 0.0);
  CHECK(zero.beta[0] == 0.0);
}

namespace {

oracle::ParamMap fixed_params(const FixedInstance& f) {
  return {{"x", test::to_vec(f.x)}, {"w", test::to_vec(f.w)}, {"v_th", test::to_vec(f.v_th)}};
}

}  // namespace

TEST_CASE("fixed backward matches the scalar oracle") {
  Rng rng(17);
  for (int rep = 0; rep < 10; ++rep) {
    const Index steps = 16, channels = 8, batch = 2;
    auto f = random_fixed(rng, steps, channels, batch);
    const auto proj = test::random_tensor({steps, batch, channels}, rng);

    Tape<double> tape;
    auto x = tape.variable(f.x);
    auto w = tape.variable(f.w);
    auto th = tape.variable(f.v_th);
    auto loss = test::project(plif_fixed(x, w, th), proj);
    tape.backward(loss);

    auto ref = oracle::oracle_grad(
        [&](oracle::ScalarTape& t, const oracle::RealMap& p) {
          const auto v = oracle::plif_fixed_ref(p.at("x"), steps, batch * channels, p.at("w"), p.at("v_th"), {});
          oracle::Real acc = t.constant(0);
          for (std::size_t i = 0; i < v.size(); ++i) acc += proj[static_cast<Index>(i)] * v[i];
          return acc;
        },
        fixed_params(f));
    CHECK(rel_err(tape.grad(x).values(), ref.grads.at("x")) <= 1e-5);
    CHECK(rel_err(tape.grad(w).values(), ref.grads.at("w")) <= 1e-5);
    CHECK(rel_err(tape.grad(th).values(), ref.grads.at("v_th")) <= 1e-5);
  }
}

TEST_CASE("selective backward matches the scalar oracle") {
  Rng rng(19);
  for (int rep = 0; rep < 10; ++rep) {
    const Index steps = 16, lanes = 8;
    auto in = random_selective(rng, steps, lanes);
    const auto proj = test::random_tensor({steps, lanes}, rng);
    Tape<double> tape;
    auto c = tape.variable(in.current);
    auto b = tape.variable(in.beta);
    auto a = tape.variable(in.alpha);
    auto th = tape.variable(in.v_th);
    tape.backward(test::project(plif_selective(c, b, a, th), proj));

    auto ref = oracle::oracle_grad(
        [&](oracle::ScalarTape& t, const oracle::RealMap& p) {
          const auto v = oracle::plif_selective_ref(p.at("c"), p.at("b"), p.at("a"), p.at("th"), steps, lanes, {});
          oracle::Real acc = t.constant(0);
          for (std::size_t i = 0; i < v.size(); ++i) acc += proj[static_cast<Index>(i)] * v[i];
          return acc;
        },
        {{"c", test::to_vec(in.current)},
         {"b", test::to_vec(in.beta)},
         {"a", test::to_vec(in.alpha)},
         {"th", test::to_vec(in.v_th)}});
    CHECK(rel_err(tape.grad(c).values(), ref.grads.at("c")) <= 1e-5);
    CHECK(rel_err(tape.grad(b).values(), ref.grads.at("b")) <= 1e-5);
    CHECK(rel_err(tape.grad(a).values(), ref.grads.at("a")) <= 1e-5);
    CHECK(rel_err(tape.grad(th).values(), ref.grads.at("th")) <= 1e-5);
  }
}

TEST_CASE("smooth-mode backward matches central differences") {
  Rng rng(23);
  const ScanOptions smooth{SpikeMode::smooth, kSurrogateSharpness};
  auto f = random_fixed(rng, 12, 4, 2);
  const auto proj = test::random_tensor({12, 2, 4}, rng);
  test::TapeFn fn = [&](Tape<double>&, const std::vector<Var<double>>& v) {
    return test::project(plif_fixed(v[0], v[1], v[2], smooth), proj);
  };
  const auto g = test::tape_grads(fn, {f.x, f.w, f.v_th});
  const auto fd = test::fd_grads(fn, {f.x, f.w, f.v_th}, 1e-3);
  int total = 0, good = 0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    for (Index i = 0; i < g[k].size(); ++i) {
      if (std::abs(fd[k][i]) < 1e-8) continue;
      ++total;
      good += std::abs(g[k][i] - fd[k][i]) <= 1e-3 * std::abs(fd[k][i]);
    }
  }
  CHECK(good >= 0.99 * total);
}

TEST_CASE("prefix oracle agrees with the sequential scan") {
  // Each sweep settles at least one more step, so sequences shorter than
  // max_iters always converge without the sequential fallback.
  Rng rng(29);
  reset_prefix_oracle_fallbacks();
  for (int rep = 0; rep < 60; ++rep) {
    const Index steps = 1 + rep, channels = 5;
    auto f = random_fixed(rng, steps, channels, 2);
    PlifParams<double> p{f.w, f.v_th};
    const auto seq = plif_scan_fixed(f.x, p, Tensor<double>());
    const auto pre = plif_scan_prefix_oracle(f.x, p.beta(), f.v_th, Tensor<double>());
    CHECK(pre.trace.spikes == seq.spikes);
    CHECK(rel_err(pre.trace.v_post.values(), seq.v_post.values()) * std::max(1.0, seq.v_post.array().abs().maxCoeff()) <=
          1e-5);

    auto in = random_selective(rng, steps, 6);
    const auto sseq = plif_scan_selective(in, Tensor<double>());
    const auto spre = plif_scan_prefix_oracle(in, Tensor<double>());
    CHECK(spre.trace.spikes == sseq.spikes);
  }
  CHECK(prefix_oracle_fallbacks() == 0);
}

TEST_CASE("prefix oracle trivial convergence") {
  Rng rng(31);
  auto x = test::random_tensor({20, 4}, rng, 0, 0.5);
  auto no_spike = plif_scan_prefix_oracle(x, vec({0.5, 0.6, 0.7, 0.8}), vec({10, 10, 10, 10}), Tensor<double>());
  CHECK(no_spike.stats.iterations == 1);
  CHECK(no_spike.trace.spikes.array().sum() == 0.0);

  auto x2 = test::random_tensor({20, 4}, rng, 0, 3);
  auto memoryless = plif_scan_prefix_oracle(x2, vec({0, 0, 0, 0}), vec({1, 1, 1, 1}), Tensor<double>());
  CHECK(memoryless.stats.iterations == 1);
}

TEST_CASE("fault injection is detected") {
  SUBCASE("strict threshold breaks the boundary instance") {
    fault_injection().strict_threshold_prefix = true;
    auto pre = plif_scan_prefix_oracle(col({2.0}), vec({0.5}), vec({1.0}), Tensor<double>());
    fault_injection() = {};
    auto seq = plif_scan_fixed(col({2.0}), vec({0.5}), vec({1.0}), Tensor<double>());
    CHECK_FALSE(pre.trace.spikes == seq.spikes);
  }
  SUBCASE("reset sign flip changes the backward") {
    Rng rng(37);
    auto f = random_fixed(rng, 8, 3, 1);
    auto beta = PlifParams<double>{f.w, f.v_th}.beta();
    auto tr = plif_scan_fixed(f.x, beta, f.v_th, Tensor<double>());
    Tensor<double> ones(f.x.shape(), 1.0);
    auto good = plif_backward(tr, f.x, beta, f.v_th, Tensor<double>(), ones);
    fault_injection().flip_reset_sign = true;
    auto bad = plif_backward(tr, f.x, beta, f.v_th, Tensor<double>(), ones);
    fault_injection() = {};
    CHECK(rel_err(bad.x.values(), good.x.values()) > 1e-3);
  }
}

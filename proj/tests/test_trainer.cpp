#include "doctest.h"
#include "test_util.hpp"

#include "nspark/train.hpp"

#include <filesystem>
#include <fstream>

using namespace nspark;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 16;
  c.n_state = 2;
  c.k_steps = 2;
  c.n_layers = 2;
  c.d_ff = 24;
  c.context_len = 16;
  c.seed = 11;
  return c;
}

TrainConfig small_train() {
  TrainConfig t;
  t.batch = 4;
  t.context_len = 12;
  t.total_steps = 40;
  t.warmup_steps = 5;
  t.seed = 3;
  return t;
}

std::vector<int> repeating_stream(std::size_t n) {
  const std::string unit = "the cat sat on the mat. ";
  std::string text;
  while (text.size() < n) text += unit;
  text.resize(n);
  std::vector<int> s{kBosId};
  const auto ids = tokenize(text);
  s.insert(s.end(), ids.begin(), ids.end());
  return s;
}

std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("nspark_" + name);
  std::filesystem::remove_all(p);
  return p.string();
}

std::size_t line_count(const std::string& path) {
  std::ifstream in(path);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

std::size_t field_count(const std::string& line) { return static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1; }

}  // namespace

TEST_CASE("byte tokenizer round trip") {
  CHECK(tokenize("ab") == std::vector<int>{97, 98});
  CHECK(tokenize("").empty());
  CHECK(detokenize({}).empty());
  Rng rng(1);
  std::string bytes(1024, '\0');
  for (char& c : bytes) c = static_cast<char>(std::uniform_int_distribution<int>(0, 255)(rng));
  const auto ids = tokenize(bytes);
  for (int id : ids) CHECK((id >= 0 && id < 256));
  CHECK(detokenize(ids) == bytes);
  CHECK(detokenize({kBosId, 104, kPadId, 105}) == "hi");
  CHECK_THROWS_AS(detokenize({kByteVocab}), std::invalid_argument);
  CHECK_THROWS_AS(detokenize({-1}), std::invalid_argument);
}

TEST_CASE("corpus puts BOS before each document and holds out the tail") {
  const auto c = build_corpus({"abcd", "efgh"}, 0.2);
  const std::vector<int> all{kBosId, 'a', 'b', 'c', 'd', kBosId, 'e', 'f', 'g', 'h'};
  CHECK(c.eval.size() == 2);
  std::vector<int> joined = c.train;
  joined.insert(joined.end(), c.eval.begin(), c.eval.end());
  CHECK(joined == all);
  CHECK(build_corpus({"xy"}, 0.0).eval.empty());
  CHECK_THROWS_AS(build_corpus({"xy"}, 1.0), std::invalid_argument);
  CHECK_THROWS(load_corpus({"/nonexistent/corpus.txt"}, 0.1));
}

TEST_CASE("batches shift targets by one and mask PAD") {
  const std::vector<int> stream{kBosId, 1, 2, 3, kPadId, 5, 6};
  const auto b = window_batch(stream, {0, 2}, 3);
  CHECK(b.inputs.steps == 3);
  CHECK(b.inputs.batch == 2);
  CHECK(b.inputs.at(0, 0) == kBosId);
  CHECK(b.inputs.at(2, 1) == kPadId);
  for (Index t = 0; t < 3; ++t) {
    for (Index j = 0; j < 2; ++j) {
      const auto r = static_cast<std::size_t>(t * 2 + j);
      CHECK(b.targets[r] == stream[static_cast<std::size_t>((j == 0 ? 0 : 2) + t + 1)]);
      CHECK(b.mask[r] == (b.targets[r] == kPadId ? 0.0f : 1.0f));
    }
  }
  CHECK(b.mask[1 * 2 + 1] == 0.0f);
  CHECK_THROWS_AS(window_batch(stream, {4}, 3), std::out_of_range);

  Rng rng(4);
  const auto s = sample_batch(repeating_stream(200), 5, 10, rng);
  CHECK(s.inputs.ids.size() == 50);
  CHECK_THROWS_AS(sample_batch(stream, 1, 7, rng), std::invalid_argument);
}

TEST_CASE("learning-rate schedule boundaries") {
  TrainConfig c;
  c.peak_lr = 1e-2;
  c.warmup_steps = 10;
  c.total_steps = 110;
  CHECK(lr_at(c, 1) == doctest::Approx(1e-3));
  CHECK(lr_at(c, 10) == doctest::Approx(1e-2));
  CHECK(lr_at(c, 60) == doctest::Approx(5e-3));
  CHECK(lr_at(c, 110) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(lr_at(c, 500) == doctest::Approx(0.0).epsilon(1e-12));
  for (long s = 11; s < 110; ++s) CHECK(lr_at(c, s + 1) <= lr_at(c, s));
  c.warmup_steps = 0;
  CHECK(lr_at(c, 1) <= 1e-2);
  CHECK(lr_at(c, 1) > 0.99e-2);
}

TEST_CASE("global-norm clipping") {
  std::vector<Tensor<float>> g{Tensor<float>({2}, {3, 0}), Tensor<float>({1}, {4})};
  CHECK(clip_global_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(global_norm(g) <= 1 + 1e-6);
  CHECK(g[0][0] == doctest::Approx(0.6).epsilon(1e-5));
  std::vector<Tensor<float>> small{Tensor<float>({2}, {0.1f, 0.2f})};
  const auto before = small[0];
  clip_global_norm(small, 1.0);
  CHECK(small[0] == before);
}

TEST_CASE("first Adam step moves each coordinate by the group learning rate") {
  ParamStore<float> p;
  p.add("w", Tensor<float>({3}, {1, 1, 1}), ParamGroup::weight);
  p.add("b", Tensor<float>({1}, {0}), ParamGroup::neuron);
  TrainConfig c;
  c.neuron_lr_mult = 10;
  auto st = init_adam(p);
  adam_update(p, {Tensor<float>({3}, {0.5f, -2.0f, 0.0f}), Tensor<float>({1}, {1e-3f})}, st, 1e-2, c);
  CHECK(p.at("w").value[0] == doctest::Approx(0.99).epsilon(1e-5));
  CHECK(p.at("w").value[1] == doctest::Approx(1.01).epsilon(1e-5));
  CHECK(p.at("w").value[2] == 1.0f);
  CHECK(p.at("b").value[0] == doctest::Approx(-0.1).epsilon(1e-4));
  CHECK(st.t == 1);

  c.weight_decay = 0.5;
  ParamStore<float> q;
  q.add("w", Tensor<float>({1}, {2}), ParamGroup::weight);
  auto sq = init_adam(q);
  adam_update(q, {Tensor<float>({1}, 0.0f)}, sq, 0.1, c);
  CHECK(q.at("w").value[0] == doctest::Approx(2 * (1 - 0.05)));
}

TEST_CASE("training step bookkeeping") {
  const auto mc = small_config();
  auto tc = small_train();
  const auto stream = repeating_stream(2000);
  Rng rng(2);
  const auto batch = sample_batch(stream, tc.batch, tc.context_len, rng);

  SUBCASE("zero learning rate leaves parameters bit-identical") {
    auto model = init_model<float>(mc);
    const auto before = model.params;
    tc.peak_lr = 0;
    auto opt = init_adam(model.params);
    const auto rec = train_step(model, opt, tc, {batch}, 1);
    CHECK(rec.lr == 0);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(model.params[i].value == before[i].value);
  }

  SUBCASE("loss is CE plus ponder; diagnostics are in range") {
    auto model = init_model<float>(mc);
    auto opt = init_adam(model.params);
    const auto rec = train_step(model, opt, tc, {batch}, 1);
    CHECK(std::abs(rec.loss - (rec.ce + rec.ponder)) <= 1e-6);
    CHECK(rec.ce > 0);
    CHECK(rec.ce < std::log(258.0) + 1);
    CHECK(rec.grad_norm > 0);
    REQUIRE(rec.ek_block.size() == 2);
    for (double e : rec.ek_block) CHECK((e >= 1 && e <= mc.k_steps));
    for (double e : rec.ek_ffn) CHECK((e >= 1 && e <= mc.k_steps));
    CHECK(rec.firing_rate.size() == 2);
    for (double f : rec.firing_rate) CHECK((f >= 0 && f <= 1));
    CHECK(rec.beta.group_mean.size() == 2);
    CHECK(rec.beta.min <= rec.beta.mean);
    CHECK(rec.beta.mean <= rec.beta.max);
    CHECK(field_count(stats_csv_row(rec)) == field_count(stats_csv_header(mc.n_layers, mc.n_state)));
  }

  SUBCASE("two micro-batches equal one batch of both") {
    auto m1 = init_model<float>(mc);
    auto m2 = init_model<float>(mc);
    auto o1 = init_adam(m1.params), o2 = init_adam(m2.params);
    const auto half_a = window_batch(stream, {0, 37}, tc.context_len);
    const auto half_b = window_batch(stream, {91, 150}, tc.context_len);
    const auto whole = window_batch(stream, {0, 37, 91, 150}, tc.context_len);
    const auto r1 = train_step(m1, o1, tc, {half_a, half_b}, 1);
    const auto r2 = train_step(m2, o2, tc, {whole}, 1);
    CHECK(r1.loss == doctest::Approx(r2.loss).epsilon(1e-5));
    CHECK(r1.grad_norm == doctest::Approx(r2.grad_norm).epsilon(1e-4));
  }

  SUBCASE("thread count does not change the step beyond roundoff") {
    auto m1 = init_model<float>(mc);
    auto m2 = init_model<float>(mc);
    auto o1 = init_adam(m1.params), o2 = init_adam(m2.params);
    auto t2 = tc;
    t2.threads = 2;
    const auto r1 = train_step(m1, o1, tc, {batch}, 1);
    const auto r2 = train_step(m2, o2, t2, {batch}, 1);
    CHECK(r1.loss == doctest::Approx(r2.loss).epsilon(1e-5));
    for (std::size_t i = 0; i < m1.params.size(); ++i)
      CHECK(test::rel_err(m2.params[i].value.values(), m1.params[i].value.values()) < 1e-3);
  }
}

TEST_CASE("a short run lowers the loss on repetitive text") {
  auto model = init_model<float>(small_config());
  auto tc = small_train();
  tc.peak_lr = 1e-2;
  const auto stream = repeating_stream(4000);
  auto opt = init_adam(model.params);
  Rng rng(tc.seed);
  double first = 0, last = 0;
  for (long s = 1; s <= tc.total_steps; ++s) {
    const auto rec = train_step(model, opt, tc, {sample_batch(stream, tc.batch, tc.context_len, rng)}, s);
    if (s <= 5) first += rec.ce / 5;
    if (s > tc.total_steps - 5) last += rec.ce / 5;
  }
  CHECK(last < first - 0.5);
}

TEST_CASE("fresh-init decay groups sit at their structured targets") {
  auto mc = small_config();
  mc.d_model = 64;
  mc.n_state = 4;
  const auto model = init_model<float>(mc);
  const auto s = beta_summary(model);
  const auto targets = structured_init_targets(4);
  for (std::size_t n = 0; n < 4; ++n) CHECK(std::abs(s.group_mean[n] - targets.beta[n]) < 0.03);
  CHECK(s.min > 0);
  CHECK(s.max < 1);
}

TEST_CASE("unigram entropy") {
  CHECK(unigram_entropy({'a', 'b', 'a', 'b'}) == doctest::Approx(std::log(2.0)));
  CHECK(unigram_entropy({kBosId, 'a', 'a', kBosId}) == doctest::Approx(0.0));
}

TEST_CASE("generation") {
  const auto mc = small_config();
  const auto model = init_model<float>(mc);
  Rng rng(5);
  const std::vector<int> prompt{kBosId, 't', 'h'};
  CHECK(generate(model, prompt, 0, 1.0, rng) == prompt);
  CHECK_THROWS_AS(generate(model, std::vector<int>(16, 'a'), 1, 1.0, rng), std::invalid_argument);
  CHECK_THROWS_AS(generate(model, prompt, 1, -1.0, rng), std::invalid_argument);
  CHECK(generate(model, {}, 0, 0.0, rng) == std::vector<int>{kBosId});

  Rng a(9), b(9);
  const auto ga = generate(model, prompt, 20, 1.0, a);
  CHECK(ga == generate(model, prompt, 20, 1.0, b));
  CHECK(ga.size() == 23);
  for (int id : ga) CHECK(id != kPadId);

  // Greedy tokens agree with a fresh scan over the whole prefix.
  const auto greedy = generate(model, prompt, 6, 0.0, rng);
  for (std::size_t i = prompt.size(); i < greedy.size(); ++i) {
    const std::vector<int> prefix(greedy.begin(), greedy.begin() + static_cast<std::ptrdiff_t>(i));
    const auto z = logits(model, TokenBatch{static_cast<Index>(i), 1, prefix});
    const float* last = z.data() + (static_cast<Index>(i) - 1) * z.dim(-1);
    CHECK(greedy[i] == std::max_element(last, last + z.dim(-1)) - last);
  }
}

TEST_CASE("evaluation and statistics files") {
  const auto mc = small_config();
  const auto model = init_model<float>(mc);
  const auto stream = repeating_stream(300);
  const auto e = evaluate(model, stream, 12, 5, 2);
  CHECK(e.tokens == 60);
  CHECK(e.ce > 0);
  CHECK((e.mean_ek >= 1 && e.mean_ek <= mc.k_steps));

  const auto dir = temp_dir("stats");
  const auto paths = stats_dump(model, stream, dir);
  CHECK(paths.size() == 5);
  // 4 windows of context_len tokens, one row per token per sublayer.
  CHECK(line_count(dir + "/per_token_ek.csv") == 1 + 4 * 16 * 2 * 2);
  CHECK(line_count(dir + "/layer_ek.csv") == 1 + 2 * 2);
  CHECK(line_count(dir + "/beta_hist.csv") == 1 + 2 * 2 * 20);
  CHECK(line_count(dir + "/beta_groups.csv") == 1 + 2 * 2);
  CHECK(line_count(dir + "/firing_rates.csv") == 1 + 2 * (2 + 2));
  std::filesystem::remove_all(dir);
}

TEST_CASE("config keys round trip and validate") {
  TrainConfig c;
  for (const auto& [k, v] : small_train().to_map()) CHECK(c.set(k, v));
  CHECK(c.to_map() == small_train().to_map());
  CHECK_FALSE(c.set("d_model", "3"));
  CHECK_THROWS_AS(c.set("batch", "x"), std::invalid_argument);
  CHECK_THROWS_AS(c.set("seed", "-1"), std::invalid_argument);
  c.warmup_steps = c.total_steps;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("end-to-end training loop writes logs and a checkpoint") {
  auto model = init_model<float>(small_config());
  auto tc = small_train();
  tc.total_steps = 6;
  tc.log_every = 2;
  tc.eval_every = 3;
  tc.eval_windows = 2;
  const auto dir = temp_dir("train");
  const auto corpus = build_corpus({std::string(2000, 'x') + "hello world"}, 0.1);
  int steps_seen = 0;
  TrainHooks hooks;
  hooks.on_step = [&](const StatsRecord&) { ++steps_seen; };
  const auto res = train(model, tc, corpus, dir, hooks);
  CHECK(steps_seen == 6);
  CHECK(res.history.size() == 6);
  CHECK(res.evals.size() == 2);
  CHECK(line_count(dir + "/train_log.csv") == 1 + 4);  // steps 1, 2, 4, 6
  CHECK(line_count(dir + "/eval_log.csv") == 1 + 2);
  const auto ck = load_checkpoint(dir + "/model.nspk");
  CHECK(ck.config == model.config);
  for (std::size_t i = 0; i < ck.params.size(); ++i) CHECK(ck.params[i].value == model.params[i].value);

  auto too_long = tc;
  too_long.context_len = 32;
  CHECK_THROWS_AS(train(model, too_long, corpus, ""), std::invalid_argument);
  std::filesystem::remove_all(dir);
}

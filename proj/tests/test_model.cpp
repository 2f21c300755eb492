#include "doctest.h"
#include "test_util.hpp"

#include "nspark/model.hpp"
#include "nspark/reference.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace nspark;
using nspark::test::rel_err;

namespace {

ModelConfig micro_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_state = 2;
  c.k_steps = 2;
  c.n_layers = 2;
  c.d_ff = 12;
  c.vocab_size = 20;
  c.context_len = 8;
  c.seed = 5;
  return c;
}

TokenBatch random_tokens(Index steps, Index batch, int vocab, Rng& rng) {
  TokenBatch t{steps, batch, {}};
  std::uniform_int_distribution<int> pick(0, vocab - 1);
  for (Index i = 0; i < steps * batch; ++i) t.ids.push_back(pick(rng));
  return t;
}

/// Scales every weight matrix so hidden neurons cross threshold often.
void enliven(ParamStore<double>& store, double gain) {
  for (auto& e : store.entries()) {
    if (e.group == ParamGroup::weight && e.value.rank() == 2 && e.name != "embed.weight") e.value.array() *= gain;
  }
  store.at("embed.weight").value.array() *= 30.0;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("nspark_" + name)).string();
}

}  // namespace

TEST_CASE("parameter counts at the reference configuration") {
  const auto c = count_params(ModelConfig::reference());
  CHECK(c.embedding == 5'505'024);
  CHECK(c.snn_block_total == 674'831'360);
  CHECK(c.snn_ffn_total == 160'814'080);
  CHECK(c.residual_proj_total == 32'112'640);
  CHECK(c.other == 878'120);
  CHECK(c.total == 874'141'224);

  Index from_layout = 0;
  for (const auto& s : param_layout(ModelConfig::reference())) from_layout += numel(s.shape);
  CHECK(from_layout == c.total);
}

TEST_CASE("parameter counts by hand at D = N = L = D_ff = 1") {
  ModelConfig cfg;
  cfg.d_model = 1;
  cfg.n_state = 1;
  cfg.n_layers = 1;
  cfg.d_ff = 1;
  cfg.vocab_size = 3;
  const auto c = count_params(cfg);
  CHECK(c.embedding == 3);
  CHECK(c.snn_block_total == 12);
  CHECK(c.snn_ffn_total == 10);
  CHECK(c.residual_proj_total == 2);
  CHECK(c.other == 11);
  CHECK(c.total == 38);
}

TEST_CASE("initialized store matches the layout") {
  const auto cfg = micro_config();
  const auto model = init_model<double>(cfg);
  const auto layout = param_layout(cfg);
  REQUIRE(model.params.size() == layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) {
    CAPTURE(layout[i].name);
    CHECK(model.params.entries()[i].name == layout[i].name);
    CHECK(model.params.entries()[i].value.shape() == layout[i].shape);
    CHECK(model.params.entries()[i].group == layout[i].group);
  }
  CHECK(model.params.total_elements() == count_params(cfg).total);
  CHECK(model.params.at("layers.0.block.norm.gamma").value == Tensor<double>({8}, 1.0));
  CHECK(model.params.at("layers.1.ffn.halt.b").value[0] == kHaltBiasInit);
  // No separate output head: logits reuse the embedding.
  for (const auto& s : layout) CHECK(s.name.find("head") == std::string::npos);

  const auto again = init_model<double>(cfg);
  for (std::size_t i = 0; i < layout.size(); ++i) CHECK(again.params.entries()[i].value == model.params.entries()[i].value);
  auto other_cfg = cfg;
  other_cfg.seed = 6;
  CHECK_FALSE(init_model<double>(other_cfg).params.at("embed.weight").value == model.params.at("embed.weight").value);
}

TEST_CASE("encode replicates embedding rows and routes gradients back") {
  Tape<double> tape;
  auto emb = tape.variable(Tensor<double>({3, 2}, {0, 1, 10, 11, 20, 21}));
  const TokenBatch toks{2, 1, {2, 2}};
  auto h = encode(emb, toks, 3);
  CHECK(h.value().shape() == Shape{6, 1, 2});
  CHECK(h.value()[0] == 20);
  CHECK(h.value()[11] == 21);
  tape.backward(sum(h));
  CHECK(tape.grad(emb) == Tensor<double>({3, 2}, {0, 0, 0, 0, 6, 6}));
  CHECK_THROWS_AS(encode(emb, TokenBatch{1, 1, {3}}, 2), std::out_of_range);
  CHECK_THROWS_AS(encode(emb, TokenBatch{1, 1, {-1}}, 2), std::out_of_range);
}

TEST_CASE("cross entropy hand values") {
  Tape<double> tape;
  auto z = tape.variable(Tensor<double>({2, 3}, {0, 0, 0, 1, 2, 3}));
  auto ce = cross_entropy(z, {0, 2});
  const double l1 = std::log(3.0);
  const double l2 = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0;
  CHECK(ce.value()[0] == doctest::Approx((l1 + l2) / 2));
  CHECK(cross_entropy(z, {0, 2}, {1.0f, 0.0f}).value()[0] == doctest::Approx(l1));
  CHECK(cross_entropy(z, {0, 2}, {1.0f, 1.0f}, 4.0).value()[0] == doctest::Approx((l1 + l2) / 4));
  tape.backward(ce);
  CHECK(tape.grad(z)[0] == doctest::Approx((1.0 / 3 - 1) / 2));
  CHECK_THROWS(cross_entropy(z, {0, 3}));
}

TEST_CASE("full-model gradient matches the scalar oracle") {
  const auto cfg = micro_config();
  Rng rng(17);
  for (double gain : {1.0, 25.0}) {
    CAPTURE(gain);
    auto model = init_model<double>(cfg);
    enliven(model.params, gain);
    const auto inputs = random_tokens(3, 2, cfg.vocab_size, rng);
    const auto targets = random_tokens(3, 2, cfg.vocab_size, rng).ids;

    Tape<double> tape;
    ParamBinding<double> bind(tape, model.params);
    LossOptions opts;
    opts.forward.diagnostics = true;
    const auto parts = model_loss(bind, cfg, inputs, targets, {}, opts);
    tape.backward(parts.loss);
    std::vector<Tensor<double>> grads;
    bind.add_grads_to(grads);

    double rate = 0;
    for (const auto& l : parts.forward.layers)
      for (double r : l.block.group_firing_rate) rate += r;
    if (gain > 1) CHECK(rate > 0.1);

    oracle::ParamMap pm;
    for (const auto& e : model.params.entries()) pm[e.name] = test::to_vec(e.value);
    const auto ref = oracle::oracle_grad(
        [&](oracle::ScalarTape&, const oracle::RealMap& m) {
          return oracle::model_loss_ref(m, cfg, inputs.ids, targets, 3, 2, {});
        },
        pm);
    CHECK(parts.loss.value()[0] == doctest::Approx(ref.value).epsilon(1e-10));
    for (std::size_t i = 0; i < grads.size(); ++i) {
      const auto& name = model.params.entries()[i].name;
      CAPTURE(name);
      CHECK(rel_err(grads[i].values(), ref.grads.at(name)) <= 1e-5);
    }
  }
}

TEST_CASE("logits are causal") {
  const auto cfg = micro_config();
  auto model = init_model<double>(cfg);
  enliven(model.params, 25.0);
  Rng rng(3);
  auto toks = random_tokens(6, 2, cfg.vocab_size, rng);
  const auto base = logits(model, toks);
  CHECK(logits(model, toks) == base);
  toks.ids[4 * 2 + 1] = (toks.ids[4 * 2 + 1] + 7) % cfg.vocab_size;
  const auto changed = logits(model, toks);
  const Index row = cfg.vocab_size;
  for (Index t = 0; t < 6; ++t) {
    for (Index b = 0; b < 2; ++b) {
      bool same = true;
      for (Index v = 0; v < row; ++v) same &= base[(t * 2 + b) * row + v] == changed[(t * 2 + b) * row + v];
      CAPTURE(t);
      CAPTURE(b);
      if (t < 4 || b == 0) CHECK(same);
      if (t == 4 && b == 1) CHECK_FALSE(same);
    }
  }
}

TEST_CASE("output projection is tied to the embedding") {
  const auto cfg = micro_config();
  auto model = init_model<double>(cfg);
  Rng rng(8);
  TokenBatch toks = random_tokens(4, 2, 10, rng);  // ids below 10 only
  const auto base = logits(model, toks);
  auto& emb = model.params.at("embed.weight").value;
  for (Index i = 0; i < cfg.d_model; ++i) emb[15 * cfg.d_model + i] += 1.0;
  const auto moved = logits(model, toks);
  for (Index r = 0; r < 8; ++r) {
    for (Index v = 0; v < cfg.vocab_size; ++v) {
      if (v == 15)
        CHECK(moved[r * cfg.vocab_size + v] != base[r * cfg.vocab_size + v]);
      else
        CHECK(moved[r * cfg.vocab_size + v] == base[r * cfg.vocab_size + v]);
    }
  }
}

TEST_CASE("zero residual projections make every layer the identity") {
  const auto cfg = micro_config();
  auto model = init_model<double>(cfg);
  for (auto& e : model.params.entries())
    if (e.name.ends_with("out_proj")) e.value.fill(0);
  Rng rng(2);
  const auto toks = random_tokens(3, 2, cfg.vocab_size, rng);
  const auto full = logits(model, toks);

  Tape<double> tape;
  ParamBinding<double> bind(tape, model.params);
  const auto direct = decode(bind, cfg, encode(bind("embed.weight"), toks, cfg.k_steps), {});
  CHECK(full == direct.value());
}

TEST_CASE("float and double forwards agree") {
  const auto cfg = micro_config();
  const auto md = init_model<double>(cfg);
  const auto mf = md.cast<float>();
  Rng rng(9);
  const auto toks = random_tokens(4, 2, cfg.vocab_size, rng);
  const auto zd = logits(md, toks);
  const auto zf = logits(mf, toks);
  CHECK(rel_err(zf.values(), zd.values()) < 1e-4);
}

TEST_CASE("checkpoint round trip and corruption") {
  const auto cfg = micro_config();
  const auto model = init_model<float>(cfg);
  const auto path = temp_path("ckpt_roundtrip.bin");
  save_checkpoint(model.params, cfg, path);
  const auto loaded = load_checkpoint(path);
  CHECK(loaded.config == cfg);
  REQUIRE(loaded.params.size() == model.params.size());
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    CHECK(loaded.params.entries()[i].name == model.params.entries()[i].name);
    CHECK(loaded.params.entries()[i].value == model.params.entries()[i].value);
    CHECK(loaded.params.entries()[i].group == model.params.entries()[i].group);
  }

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  auto write_variant = [&](const std::string& content) {
    const auto p = temp_path("ckpt_bad.bin");
    std::ofstream(p, std::ios::binary) << content;
    return p;
  };
  CHECK_THROWS_AS(load_checkpoint(write_variant(bytes.substr(0, bytes.size() - 3))), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(write_variant(bytes.substr(0, 20))), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(write_variant(bytes + "x")), CheckpointError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(load_checkpoint(write_variant(bad_magic)), CheckpointError);
  std::string bad_version = bytes;
  bad_version[4] = 2;
  CHECK_THROWS_AS(load_checkpoint(write_variant(bad_version)), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(temp_path("does_not_exist.bin")), CheckpointError);
  std::remove(path.c_str());
}

// nspark: init, train, eval, generate, stats, count-params, selftest.

#include "CLI11.hpp"
#include "nspark/checks.hpp"
#include "nspark/train.hpp"

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>

using namespace nspark;
namespace fs = std::filesystem;

namespace {

struct Settings {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
  std::optional<std::uint64_t> seed;
  std::string out = "run";
};

struct Configs {
  ModelConfig model;
  TrainConfig train;
};

void apply_key(Configs& c, const std::string& key, const std::string& value) {
  const bool in_model = c.model.set(key, value);
  const bool in_train = c.train.set(key, value);
  if (!in_model && !in_train) throw std::invalid_argument("unknown config key: " + key);
}

Configs resolve(const Settings& s) {
  Configs c;
  if (const char* env = std::getenv("NEURONSPARK_THREADS")) c.train.threads = parse_int("NEURONSPARK_THREADS", env);
  if (!s.config_path.empty())
    for (const auto& [k, v] : read_key_value_file(s.config_path)) apply_key(c, k, v);
  for (const auto& kv : s.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got " + kv);
    apply_key(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (s.seed) {
    c.model.seed = *s.seed;
    c.train.seed = *s.seed;
  }
  c.model.validate();
  c.train.validate();
  return c;
}

void add_common(CLI::App* cmd, Settings& s) {
  cmd->add_option("--config", s.config_path, "key=value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", s.overrides, "Override a config key (key=value), repeatable");
  cmd->add_option("--seed", s.seed, "Seed for init, sampling and batching");
  cmd->add_option("--out", s.out, "Output directory");
}

void write_config(const Configs& c, const std::string& dir) {
  fs::create_directories(dir);
  auto kv = c.train.to_map();
  for (const auto& [k, v] : c.model.to_map()) kv[k] = v;
  std::ofstream(fs::path(dir) / "config.txt") << format_key_values(kv);
}

Model<float> load_model(const std::string& path) { return load_checkpoint(path); }

void print_counts(const ModelConfig& cfg) {
  const auto c = count_params(cfg);
  std::cout << "embedding        " << c.embedding << "\n"
            << "snn_block        " << c.snn_block_total << "\n"
            << "snn_ffn          " << c.snn_ffn_total << "\n"
            << "residual_proj    " << c.residual_proj_total << "\n"
            << "other            " << c.other << "\n"
            << "total            " << c.total << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NeuronSpark spiking language model"};
  app.require_subcommand(1);

  Settings s;
  std::string model_path, corpus_override, prompt, text_path, inject;
  int max_new = 200, windows = 64, eval_context = 0, instances = 1000;
  double temperature = 0.8;
  bool reference = false;

  auto* init = app.add_subcommand("init", "Initialize a model and write <out>/model.nspk");
  add_common(init, s);

  auto* train_cmd = app.add_subcommand("train", "Train on the configured corpus");
  add_common(train_cmd, s);
  train_cmd->add_option("--init", model_path, "Start from this checkpoint instead of a fresh init")
      ->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "Held-out cross-entropy of a checkpoint");
  add_common(eval, s);
  eval->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
  eval->add_option("--corpus", corpus_override, "Evaluate on this whole file instead of the held-out split");
  eval->add_option("--windows", windows);
  eval->add_option("--context", eval_context, "Window length (default: model context_len)");

  auto* gen = app.add_subcommand("generate", "Sample a continuation");
  add_common(gen, s);
  gen->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
  gen->add_option("--prompt", prompt);
  gen->add_option("--max-new", max_new)->check(CLI::NonNegativeNumber);
  gen->add_option("--temperature", temperature)->check(CLI::NonNegativeNumber);

  auto* stats = app.add_subcommand("stats", "Write E[K], beta and firing-rate CSVs");
  add_common(stats, s);
  stats->add_option("--model", model_path, "Checkpoint (default: fresh init from config)")->check(CLI::ExistingFile);
  stats->add_option("--text", text_path, "Eval text (default: held-out split of the corpus)")->check(CLI::ExistingFile);

  auto* count = app.add_subcommand("count-params", "Closed-form parameter counts");
  add_common(count, s);
  count->add_flag("--reference", reference, "Use the 0.9B reference configuration");

  auto* selftest = app.add_subcommand("selftest", "Run the oracle suites");
  add_common(selftest, s);
  selftest->add_option("--inject", inject, "Deliberate fault for mutation testing")
      ->check(CLI::IsMember({"reset-sign", "theta-zero"}));
  selftest->add_option("--instances", instances, "Scan-equivalence instances")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    const Configs c = resolve(s);

    if (*init) {
      const auto model = init_model<float>(c.model);
      write_config(c, s.out);
      const auto path = (fs::path(s.out) / "model.nspk").string();
      save_checkpoint(model.params, model.config, path);
      std::cout << "wrote " << path << " (" << model.params.total_elements() << " parameters)\n";
    } else if (*train_cmd) {
      Model<float> model = model_path.empty() ? init_model<float>(c.model) : load_model(model_path);
      TrainConfig tc = c.train;
      if (tc.context_len > model.config.context_len) model.config.context_len = tc.context_len;
      write_config(Configs{model.config, tc}, s.out);
      const Corpus corpus = load_corpus({tc.corpus}, tc.eval_fraction);
      std::cout << "corpus " << tc.corpus << ": " << corpus.train.size() << " train / " << corpus.eval.size()
                << " eval tokens; " << model.params.total_elements() << " parameters\n";
      TrainHooks hooks;
      hooks.on_step = [&](const StatsRecord& r) {
        if (r.step % tc.log_every == 0 || r.step == 1 || r.step == tc.total_steps)
          std::cout << "step " << r.step << " loss " << std::fixed << std::setprecision(4) << r.loss << " ce " << r.ce
                    << " lr " << std::scientific << std::setprecision(2) << r.lr << std::fixed << " tok/s "
                    << std::setprecision(0) << r.tokens_per_sec << std::endl;
      };
      hooks.on_eval = [](long step, const EvalResult& e) {
        std::cout << "eval step " << step << " ce " << std::fixed << std::setprecision(4) << e.ce << " mean E[K] "
                  << e.mean_ek << std::endl;
      };
      const auto res = train(model, tc, corpus, s.out, hooks);
      std::cout << "unigram entropy " << std::setprecision(4) << res.unigram_entropy << " nats; wrote "
                << (fs::path(s.out) / "model.nspk").string() << "\n";
    } else if (*eval) {
      const auto model = load_model(model_path);
      const std::vector<int> stream = corpus_override.empty()
                                          ? load_corpus({c.train.corpus}, c.train.eval_fraction).eval
                                          : load_corpus({corpus_override}, 0.0).train;
      const int ctx = eval_context > 0 ? eval_context : model.config.context_len;
      const auto e = evaluate(model, stream, ctx, windows);
      std::cout << std::fixed << std::setprecision(4) << "ce " << e.ce << " nats/token, " << e.ce / std::log(2.0)
                << " bits/byte, mean E[K] " << e.mean_ek << ", " << e.tokens << " tokens\n";
    } else if (*gen) {
      const auto model = load_model(model_path);
      Rng rng(c.train.seed);
      std::vector<int> ids{kBosId};
      const auto p = tokenize(prompt);
      ids.insert(ids.end(), p.begin(), p.end());
      const auto out = generate(model, ids, max_new, temperature, rng);
      std::cout << detokenize(out) << "\n";
    } else if (*stats) {
      const auto model = model_path.empty() ? init_model<float>(c.model) : load_model(model_path);
      const std::vector<int> text = text_path.empty() ? load_corpus({c.train.corpus}, c.train.eval_fraction).eval
                                                      : load_corpus({text_path}, 0.0).train;
      for (const auto& p : stats_dump(model, text, s.out)) std::cout << "wrote " << p << "\n";
    } else if (*count) {
      print_counts(reference ? ModelConfig::reference() : c.model);
    } else if (*selftest) {
      const std::uint64_t seed = s.seed.value_or(1234);
      fault_injection().flip_reset_sign = inject == "reset-sign";
      fault_injection().strict_threshold_prefix = inject == "theta-zero";
      if (!inject.empty()) std::cout << "fault injected: " << inject << "\n";
      const std::vector<checks::CheckResult> results = {
          checks::param_counts(),
          checks::scan_equivalence(seed, instances),
          checks::backward_oracle(seed),
          checks::smooth_finite_differences(seed),
          checks::ponder_invariants(seed),
      };
      int failed = 0;
      for (const auto& r : results) {
        failed += !r.passed;
        std::cout << checks::format_result(r) << "\n";
      }
      std::cout << results.size() - static_cast<std::size_t>(failed) << "/" << results.size() << " suites passed\n";
      return failed == 0 ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

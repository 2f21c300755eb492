// Runs every acceptance criterion and prints one PASS/FAIL line each.
// Exit status is nonzero if any criterion fails.

#include "CLI11.hpp"
#include "nspark/checks.hpp"
#include "nspark/train.hpp"

#include <chrono>
#include <filesystem>
#include <iostream>
#include <set>

using namespace nspark;
using checks::CheckResult;

namespace {

CheckResult desk_learning(std::uint64_t seed, const std::string& corpus_path, const TrainConfig& base,
                          const std::string& out_dir) {
  const auto start = std::chrono::steady_clock::now();
  CheckResult r{"desk-scale learning", false, "", seed, 0};
  ModelConfig mc;
  mc.d_model = 64;
  mc.n_state = 4;
  mc.k_steps = 4;
  mc.n_layers = 4;
  mc.seed = seed;
  mc.context_len = std::max(mc.context_len, base.context_len);
  TrainConfig tc = base;
  tc.seed = seed;
  tc.corpus = corpus_path;
  const Corpus corpus = load_corpus({corpus_path}, tc.eval_fraction);
  Model<float> model = init_model<float>(mc);
  std::filesystem::create_directories(out_dir);
  TrainHooks hooks;
  hooks.on_step = [&](const StatsRecord& s) {
    if (s.step % 100 == 0) std::cerr << "  step " << s.step << " ce " << s.ce << " loss " << s.loss << "\n";
  };
  const TrainResult res = train(model, tc, corpus, out_dir, hooks);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  // 200-step window means of the training CE.
  std::vector<double> windows;
  double acc = 0;
  int count = 0;
  for (const auto& s : res.history) {
    acc += s.ce;
    if (++count == 200) {
      windows.push_back(acc / count);
      acc = 0;
      count = 0;
    }
  }
  int rises = 0;
  for (std::size_t i = 1; i < windows.size(); ++i) rises += windows[i] > windows[i - 1];
  const double final_window = windows.empty() ? res.history.back().ce : windows.back();
  const double eval_ce = res.evals.empty() ? final_window : res.evals.back().second.ce;
  const double h = res.unigram_entropy;
  r.passed = eval_ce < h && final_window < h && rises == 0 && seconds <= 1800;
  std::ostringstream os;
  os.precision(4);
  os << std::fixed << tc.total_steps << " steps (batch " << tc.batch << " x " << tc.context_len
     << "), unigram entropy " << h << " nats, final 200-step train CE " << final_window << ", held-out CE "
     << eval_ce << ", rising windows " << rises << "/" << (windows.empty() ? 0 : windows.size() - 1) << ", "
     << seconds / 60 << " min";
  r.detail = os.str();
  r.seconds = seconds;
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NeuronSpark acceptance runner"};
  std::uint64_t seed = 1234;
  std::string corpus = "data/shakespeare.txt";
  std::string out_dir = "acceptance_out";
  std::vector<std::string> only;
  bool skip_learning = false;
  TrainConfig tc;
  tc.batch = 8;
  tc.context_len = 32;
  tc.total_steps = 2000;
  tc.log_every = 50;
  tc.eval_windows = 64;
  app.add_option("--seed", seed);
  app.add_option("--corpus", corpus)->check(CLI::ExistingFile);
  app.add_option("--out", out_dir);
  app.add_option("--only", only, "Run only these criteria (substring match)");
  app.add_flag("--skip-learning", skip_learning);
  app.add_option("--steps", tc.total_steps);
  app.add_option("--lr", tc.peak_lr);
  app.add_option("--neuron-lr-mult", tc.neuron_lr_mult);
  app.add_option("--warmup", tc.warmup_steps);
  app.add_option("--batch", tc.batch);
  app.add_option("--context", tc.context_len);
  CLI11_PARSE(app, argc, argv);

  using Fn = std::function<CheckResult()>;
  const std::vector<std::pair<std::string, Fn>> all = {
      {"param-count", [] { return checks::param_counts(); }},
      {"scan", [&] { return checks::scan_equivalence(seed); }},
      {"backward",
       [&] {
         auto a = checks::backward_oracle(seed);
         const auto b = checks::smooth_finite_differences(seed);
         a.name = "backward correctness";
         a.passed = a.passed && b.passed;
         a.detail += "; finite differences: " + b.detail;
         a.seconds += b.seconds;
         return a;
       }},
      {"ponder", [&] { return checks::ponder_invariants(seed); }},
      {"calibration", [&] { return checks::init_calibration(seed); }},
      {"compensation", [&] { return checks::compensation(seed); }},
      {"stabilizers", [&] { return checks::stabilizers(seed); }},
      {"learning",
       [&] {
         if (skip_learning) return CheckResult{"desk-scale learning", false, "skipped", seed, 0};
         return desk_learning(seed, corpus, tc, out_dir);
       }},
      {"determinism",
       [&] {
         std::vector<int> stream;
         if (std::filesystem::exists(corpus)) stream = load_corpus({corpus}, 0.05).train;
         else stream = checks::synthetic_stream(seed, 200'000);
         return checks::determinism(seed, stream);
       }},
      {"causality", [&] { return checks::causality(seed); }},
  };

  int failed = 0, run = 0;
  for (const auto& [key, fn] : all) {
    if (!only.empty() && std::none_of(only.begin(), only.end(), [&](const std::string& o) { return key.find(o) != std::string::npos; }))
      continue;
    CheckResult r;
    try {
      r = fn();
    } catch (const std::exception& e) {
      r = CheckResult{key, false, std::string("exception: ") + e.what(), seed, 0};
    }
    ++run;
    failed += !r.passed;
    std::cout << checks::format_result(r) << std::endl;
  }
  std::cout << run - failed << "/" << run << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}

#pragma once

// Byte tokenizer, corpus batching, Adam with per-group learning rates, the
// training step, greedy/temperature generation, evaluation and CSV statistics.

#include "nspark/model.hpp"
#include "nspark/stabilizers.hpp"

#include <chrono>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace nspark {

inline constexpr int kBosId = 256;
inline constexpr int kPadId = 257;
inline constexpr int kByteVocab = 258;

std::vector<int> tokenize(std::string_view bytes);
/// Special ids are dropped; every other id must be a byte.
std::string detokenize(const std::vector<int>& ids);

/// Token stream of one or more documents, each preceded by BOS.
struct Corpus {
  std::vector<int> train;
  std::vector<int> eval;
};

/// The last `eval_fraction` of the concatenated stream is held out.
Corpus build_corpus(const std::vector<std::string>& documents, double eval_fraction);
Corpus load_corpus(const std::vector<std::string>& paths, double eval_fraction);
std::string read_file(const std::string& path);

/// Inputs and next-token targets, time-major; mask 0 drops a position from the loss.
struct TrainBatch {
  TokenBatch inputs;
  std::vector<int> targets;
  std::vector<float> mask;
};

/// `batch` random windows of length `context` (+1 for the shifted target).
/// PAD targets are masked.
TrainBatch sample_batch(const std::vector<int>& stream, int batch, int context, Rng& rng);

/// Consecutive windows starting at `offsets`.
TrainBatch window_batch(const std::vector<int>& stream, const std::vector<Index>& offsets, int context);

struct TrainConfig {
  double peak_lr = 3e-3;
  double neuron_lr_mult = 10.0;
  int warmup_steps = 100;
  int total_steps = 2000;
  double weight_decay = 0.0;  // > 0 selects decoupled (AdamW) decay on the weight group
  int batch = 16;
  int grad_accum = 1;
  double grad_clip = 1.0;
  std::uint64_t seed = 42;
  std::string corpus = "data/shakespeare.txt";
  int context_len = 128;
  double eval_fraction = 0.05;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool compensate = true;
  int log_every = 10;
  int eval_every = 0;  // 0: only at the end
  int eval_windows = 32;
  int save_every = 0;  // 0: only at the end
  int threads = 1;     // batch shards run concurrently and merge in shard order

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  bool set(const std::string& key, const std::string& value);
};

/// Linear warmup from peak/warmup at step 1 to peak at step `warmup`, then
/// cosine decay reaching 0 at `total`. Steps are 1-based.
double lr_at(const TrainConfig& cfg, long step);

struct AdamState {
  std::vector<Tensor<float>> m;
  std::vector<Tensor<float>> v;
  long t = 0;
};

AdamState init_adam(const ParamStore<float>& params);

/// One Adam step; the neuron group uses lr * neuron_lr_mult.
void adam_update(ParamStore<float>& params, const std::vector<Tensor<float>>& grads, AdamState& state, double lr,
                 const TrainConfig& cfg);

/// Scales grads so their global L2 norm is at most max_norm; returns the pre-clip norm.
double clip_global_norm(std::vector<Tensor<float>>& grads, double max_norm);
double global_norm(const std::vector<Tensor<float>>& grads);

struct BetaSummary {
  double mean = 0, min = 0, max = 0;
  std::vector<double> group_mean;  // N entries, averaged over layers
};

struct StatsRecord {
  long step = 0;
  double loss = 0;
  double ce = 0;
  double ponder = 0;
  double lr = 0;
  double grad_norm = 0;  // before clipping
  std::vector<double> ek_block;  // per layer
  std::vector<double> ek_ffn;
  BetaSummary beta;
  std::vector<double> firing_rate;  // per selective-block group, averaged over layers
  double tokens_per_sec = 0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Forward/backward over all micro-batches (loss normalized over the whole
/// effective batch), compensation, clipping and the Adam update.
StatsRecord train_step(Model<float>& model, AdamState& opt, const TrainConfig& cfg,
                       const std::vector<TrainBatch>& micro_batches, long step);

/// Zero-input decay sigma(b_beta) of every selective-block hidden neuron.
BetaSummary beta_summary(const Model<float>& model);

struct EvalResult {
  double ce = 0;  // nats per token
  double mean_ek = 0;
  Index tokens = 0;
};

/// Mean CE over up to `max_windows` evenly spaced windows of the stream.
EvalResult evaluate(const Model<float>& model, const std::vector<int>& stream, int context, int max_windows,
                    int batch = 8);

/// i.i.d. byte-unigram entropy in nats of a token stream (BOS excluded).
double unigram_entropy(const std::vector<int>& stream);

/// Appends `max_new` tokens. Each step re-runs the model from fresh neuron
/// state over the last context_len tokens. temperature 0 is argmax.
std::vector<int> generate(const Model<float>& model, std::vector<int> prompt, int max_new, double temperature,
                          Rng& rng);

/// CSV statistics files written into `out_dir`; returns the paths written.
std::vector<std::string> stats_dump(const Model<float>& model, const std::vector<int>& eval_tokens,
                                    const std::string& out_dir);

/// Ordered background writer for log lines.
class AsyncLineWriter {
 public:
  explicit AsyncLineWriter(const std::string& path);
  ~AsyncLineWriter();
  AsyncLineWriter(const AsyncLineWriter&) = delete;
  AsyncLineWriter& operator=(const AsyncLineWriter&) = delete;

  void write(std::string line);
  void close();

 private:
  void run();

  std::ofstream out_;
  std::deque<std::string> queue_;
  std::mutex mu_;
  std::condition_variable cv_;
  bool done_ = false;
  std::thread worker_;
};

std::string stats_csv_header(int n_layers, int n_state);
std::string stats_csv_row(const StatsRecord& r);

/// Full training loop with logging, periodic eval and checkpoints.
struct TrainResult {
  std::vector<StatsRecord> history;
  std::vector<std::pair<long, EvalResult>> evals;
  double unigram_entropy = 0;
};

struct TrainHooks {
  std::function<void(const StatsRecord&)> on_step;
  std::function<void(long, const EvalResult&)> on_eval;
};

TrainResult train(Model<float>& model, const TrainConfig& cfg, const Corpus& corpus, const std::string& out_dir,
                  const TrainHooks& hooks = {});

}  // namespace nspark

#include "nspark/train.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <numbers>
#include <regex>
#include <sstream>

namespace nspark {

// ---------------------------------------------------------------------------
// Tokenizer and corpus.

std::vector<int> tokenize(std::string_view bytes) {
  std::vector<int> ids;
  ids.reserve(bytes.size());
  for (char c : bytes) ids.push_back(static_cast<unsigned char>(c));
  return ids;
}

std::string detokenize(const std::vector<int>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= kByteVocab) throw std::invalid_argument("detokenize: id out of range: " + std::to_string(id));
    if (id < 256) out.push_back(static_cast<char>(id));
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Corpus build_corpus(const std::vector<std::string>& documents, double eval_fraction) {
  if (!(eval_fraction >= 0 && eval_fraction < 1)) throw std::invalid_argument("eval_fraction must be in [0, 1)");
  std::vector<int> stream;
  for (const auto& doc : documents) {
    stream.push_back(kBosId);
    const auto ids = tokenize(doc);
    stream.insert(stream.end(), ids.begin(), ids.end());
  }
  const auto n_eval = static_cast<std::size_t>(std::floor(static_cast<double>(stream.size()) * eval_fraction));
  Corpus c;
  c.train.assign(stream.begin(), stream.end() - static_cast<std::ptrdiff_t>(n_eval));
  c.eval.assign(stream.end() - static_cast<std::ptrdiff_t>(n_eval), stream.end());
  return c;
}

Corpus load_corpus(const std::vector<std::string>& paths, double eval_fraction) {
  std::vector<std::string> docs;
  for (const auto& p : paths) docs.push_back(read_file(p));
  return build_corpus(docs, eval_fraction);
}

TrainBatch window_batch(const std::vector<int>& stream, const std::vector<Index>& offsets, int context) {
  const Index batch = static_cast<Index>(offsets.size());
  TrainBatch b;
  b.inputs = TokenBatch{context, batch, std::vector<int>(static_cast<std::size_t>(context * batch))};
  b.targets.resize(static_cast<std::size_t>(context * batch));
  b.mask.resize(static_cast<std::size_t>(context * batch));
  for (Index j = 0; j < batch; ++j) {
    const Index o = offsets[static_cast<std::size_t>(j)];
    if (o < 0 || o + context + 1 > static_cast<Index>(stream.size()))
      throw std::out_of_range("window_batch: window runs past the stream");
    for (Index t = 0; t < context; ++t) {
      const auto r = static_cast<std::size_t>(t * batch + j);
      b.inputs.ids[r] = stream[static_cast<std::size_t>(o + t)];
      b.targets[r] = stream[static_cast<std::size_t>(o + t + 1)];
      b.mask[r] = b.targets[r] == kPadId ? 0.0f : 1.0f;
    }
  }
  return b;
}

TrainBatch sample_batch(const std::vector<int>& stream, int batch, int context, Rng& rng) {
  const Index span = static_cast<Index>(stream.size()) - context - 1;
  if (span < 0) throw std::invalid_argument("sample_batch: stream shorter than context + 1");
  std::uniform_int_distribution<Index> pick(0, span);
  std::vector<Index> offsets(static_cast<std::size_t>(batch));
  for (auto& o : offsets) o = pick(rng);
  return window_batch(stream, offsets, context);
}

namespace {

/// Columns [b0, b1) of a batch.
TrainBatch slice_batch(const TrainBatch& in, Index b0, Index b1) {
  const Index steps = in.inputs.steps, batch = in.inputs.batch, w = b1 - b0;
  TrainBatch out;
  out.inputs = TokenBatch{steps, w, std::vector<int>(static_cast<std::size_t>(steps * w))};
  out.targets.resize(static_cast<std::size_t>(steps * w));
  out.mask.resize(static_cast<std::size_t>(steps * w));
  for (Index t = 0; t < steps; ++t) {
    for (Index j = 0; j < w; ++j) {
      const auto src = static_cast<std::size_t>(t * batch + b0 + j);
      const auto dst = static_cast<std::size_t>(t * w + j);
      out.inputs.ids[dst] = in.inputs.ids[src];
      out.targets[dst] = in.targets[src];
      out.mask[dst] = in.mask.empty() ? 1.0f : in.mask[src];
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration and schedule.

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (!(peak_lr >= 0)) fail("peak_lr must be >= 0");
  if (!(neuron_lr_mult > 0)) fail("neuron_lr_mult must be > 0");
  if (total_steps < 1) fail("total_steps must be >= 1");
  if (warmup_steps < 0 || warmup_steps >= total_steps) fail("warmup_steps must be in [0, total_steps)");
  if (weight_decay < 0) fail("weight_decay must be >= 0");
  if (batch < 1) fail("batch must be >= 1");
  if (grad_accum < 1) fail("grad_accum must be >= 1");
  if (!(grad_clip > 0)) fail("grad_clip must be > 0");
  if (context_len < 1) fail("context_len must be >= 1");
  if (!(eval_fraction >= 0 && eval_fraction < 1)) fail("eval_fraction must be in [0, 1)");
  if (threads < 1) fail("threads must be >= 1");
  if (log_every < 1) fail("log_every must be >= 1");
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  return {{"peak_lr", format_double(peak_lr)},
          {"neuron_lr_mult", format_double(neuron_lr_mult)},
          {"warmup_steps", std::to_string(warmup_steps)},
          {"total_steps", std::to_string(total_steps)},
          {"weight_decay", format_double(weight_decay)},
          {"batch", std::to_string(batch)},
          {"grad_accum", std::to_string(grad_accum)},
          {"grad_clip", format_double(grad_clip)},
          {"seed", std::to_string(seed)},
          {"corpus", corpus},
          {"context_len", std::to_string(context_len)},
          {"eval_fraction", format_double(eval_fraction)},
          {"adam_beta1", format_double(adam_beta1)},
          {"adam_beta2", format_double(adam_beta2)},
          {"adam_eps", format_double(adam_eps)},
          {"compensate", compensate ? "true" : "false"},
          {"log_every", std::to_string(log_every)},
          {"eval_every", std::to_string(eval_every)},
          {"eval_windows", std::to_string(eval_windows)},
          {"save_every", std::to_string(save_every)},
          {"threads", std::to_string(threads)}};
}

bool TrainConfig::set(const std::string& key, const std::string& v) {
  if (key == "peak_lr") peak_lr = parse_double(key, v);
  else if (key == "neuron_lr_mult") neuron_lr_mult = parse_double(key, v);
  else if (key == "warmup_steps") warmup_steps = parse_int(key, v);
  else if (key == "total_steps") total_steps = parse_int(key, v);
  else if (key == "weight_decay") weight_decay = parse_double(key, v);
  else if (key == "batch") batch = parse_int(key, v);
  else if (key == "grad_accum") grad_accum = parse_int(key, v);
  else if (key == "grad_clip") grad_clip = parse_double(key, v);
  else if (key == "seed") seed = parse_seed(key, v);
  else if (key == "corpus") corpus = v;
  else if (key == "context_len") context_len = parse_int(key, v);
  else if (key == "eval_fraction") eval_fraction = parse_double(key, v);
  else if (key == "adam_beta1") adam_beta1 = parse_double(key, v);
  else if (key == "adam_beta2") adam_beta2 = parse_double(key, v);
  else if (key == "adam_eps") adam_eps = parse_double(key, v);
  else if (key == "compensate") compensate = parse_bool(key, v);
  else if (key == "log_every") log_every = parse_int(key, v);
  else if (key == "eval_every") eval_every = parse_int(key, v);
  else if (key == "eval_windows") eval_windows = parse_int(key, v);
  else if (key == "save_every") save_every = parse_int(key, v);
  else if (key == "threads") threads = parse_int(key, v);
  else return false;
  return true;
}

double lr_at(const TrainConfig& cfg, long step) {
  step = std::max(step, 1L);
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) {
    return cfg.peak_lr * static_cast<double>(step) / cfg.warmup_steps;
  }
  const double span = cfg.total_steps - cfg.warmup_steps;
  const double progress = std::clamp((static_cast<double>(step) - cfg.warmup_steps) / span, 0.0, 1.0);
  return 0.5 * cfg.peak_lr * (1 + std::cos(std::numbers::pi * progress));
}

// ---------------------------------------------------------------------------
// Optimizer.

AdamState init_adam(const ParamStore<float>& params) {
  AdamState s;
  for (const auto& e : params.entries()) {
    s.m.emplace_back(e.value.shape());
    s.v.emplace_back(e.value.shape());
  }
  return s;
}

void adam_update(ParamStore<float>& params, const std::vector<Tensor<float>>& grads, AdamState& state, double lr,
                 const TrainConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw std::invalid_argument("adam_update: gradient/state count does not match the store");
  ++state.t;
  const double bc1 = 1 - std::pow(cfg.adam_beta1, static_cast<double>(state.t));
  const double bc2 = 1 - std::pow(cfg.adam_beta2, static_cast<double>(state.t));
  const auto b1 = static_cast<float>(cfg.adam_beta1), b2 = static_cast<float>(cfg.adam_beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& e = params[i];
    const auto g = grads[i].array();
    auto m = state.m[i].array();
    auto v = state.v[i].array();
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g.square();
    const double group_lr = e.group == ParamGroup::neuron ? lr * cfg.neuron_lr_mult : lr;
    if (group_lr == 0) continue;
    auto p = e.value.array();
    if (cfg.weight_decay > 0 && e.group == ParamGroup::weight) p *= static_cast<float>(1 - group_lr * cfg.weight_decay);
    const auto step = static_cast<float>(group_lr / bc1);
    p -= step * m / ((v / static_cast<float>(bc2)).sqrt() + static_cast<float>(cfg.adam_eps));
  }
}

double global_norm(const std::vector<Tensor<float>>& grads) {
  double sq = 0;
  for (const auto& g : grads) sq += g.array().cast<double>().square().sum();
  return std::sqrt(sq);
}

double clip_global_norm(std::vector<Tensor<float>>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const auto scale = static_cast<float>(max_norm / (norm + 1e-6));
    for (auto& g : grads) g.array() *= scale;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Training step.

BetaSummary beta_summary(const Model<float>& model) {
  const auto& cfg = model.config;
  BetaSummary s;
  s.group_mean.assign(static_cast<std::size_t>(cfg.n_state), 0.0);
  s.min = 1;
  s.max = 0;
  double total = 0;
  Index count = 0;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& b = model.params.at("layers." + std::to_string(l) + ".block.b_beta").value;
    for (int n = 0; n < cfg.n_state; ++n) {
      for (int d = 0; d < cfg.d_model; ++d) {
        const double beta = sigmoid(static_cast<double>(b[n * cfg.d_model + d]));
        s.group_mean[static_cast<std::size_t>(n)] += beta / (cfg.d_model * cfg.n_layers);
        s.min = std::min(s.min, beta);
        s.max = std::max(s.max, beta);
        total += beta;
        ++count;
      }
    }
  }
  s.mean = total / static_cast<double>(count);
  return s;
}

namespace {

struct ShardResult {
  std::vector<Tensor<float>> grads;
  double loss = 0, ce = 0, ponder = 0;
  std::vector<double> ek_sum;       // 2L entries: summed E[K]
  std::vector<double> fire_sum;     // N entries, weighted by shard columns
  std::string error;
};

/// Norms of every parameter of the layer named in a NumericError message.
std::string layer_dump(const ParamStore<float>& params, const std::string& message) {
  std::smatch m;
  std::string prefix;
  if (std::regex_search(message, m, std::regex(R"(layer (\d+) \((selective block|ffn)\))"))) {
    prefix = "layers." + m[1].str() + (m[2].str() == "ffn" ? ".ffn." : ".block.");
  } else if (message.find("decode head") != std::string::npos) {
    prefix = "decode.";
  }
  std::ostringstream os;
  os << message;
  if (prefix.empty()) return os.str();
  os << "\nparameter dump for " << prefix << "*:";
  for (const auto& e : params.entries()) {
    if (e.name.rfind(prefix, 0) != 0) continue;
    const auto a = e.value.array().cast<double>();
    os << "\n  " << e.name << " l2=" << std::sqrt(a.square().sum()) << " max|.|=" << a.abs().maxCoeff()
       << " finite=" << (e.value.all_finite() ? "yes" : "no");
  }
  return os.str();
}

ShardResult run_shard(const Model<float>& model, const TrainBatch& shard, double ce_denom, double ponder_denom) {
  ShardResult r;
  try {
    Tape<float> tape;
    ParamBinding<float> bind(tape, model.params);
    LossOptions opts;
    opts.forward.diagnostics = true;
    opts.ce_denominator = ce_denom;
    opts.ponder_denominator = ponder_denom;
    auto parts = model_loss(bind, model.config, shard.inputs, shard.targets, shard.mask, opts);
    tape.backward(parts.loss);
    bind.add_grads_to(r.grads);
    r.loss = parts.loss.value()[0];
    r.ce = parts.ce.value()[0];
    r.ponder = parts.ponder.value()[0];
    for (const auto& ek : parts.forward.expected_k) r.ek_sum.push_back(ek.value().array().cast<double>().sum());
    const double cols = static_cast<double>(shard.inputs.batch);
    r.fire_sum.assign(static_cast<std::size_t>(model.config.n_state), 0.0);
    for (const auto& layer : parts.forward.layers) {
      for (std::size_t n = 0; n < layer.block.group_firing_rate.size(); ++n)
        r.fire_sum[n] += cols * layer.block.group_firing_rate[n];
    }
  } catch (const NumericError& e) {
    r.error = layer_dump(model.params, e.what());
  }
  return r;
}

}  // namespace

StatsRecord train_step(Model<float>& model, AdamState& opt, const TrainConfig& cfg,
                       const std::vector<TrainBatch>& micro_batches, long step) {
  if (micro_batches.empty()) throw std::invalid_argument("train_step: no batches");
  const auto t0 = std::chrono::steady_clock::now();
  const auto& mc = model.config;
  const int layers = mc.n_layers;

  double mask_total = 0;
  Index columns = 0, tokens = 0;
  for (const auto& b : micro_batches) {
    for (float w : b.mask) mask_total += w;
    if (b.mask.empty()) mask_total += static_cast<double>(b.targets.size());
    columns += b.inputs.batch;
    tokens += b.inputs.steps * b.inputs.batch;
  }
  if (mask_total <= 0) throw std::invalid_argument("train_step: mask selects no tokens");
  const double ponder_denom = 2.0 * layers * static_cast<double>(tokens);

  // Shards of every micro-batch, in a fixed order.
  std::vector<TrainBatch> shards;
  for (const auto& b : micro_batches) {
    const Index n = std::min<Index>(cfg.threads, b.inputs.batch);
    for (Index s = 0; s < n; ++s) shards.push_back(slice_batch(b, s * b.inputs.batch / n, (s + 1) * b.inputs.batch / n));
  }
  std::vector<ShardResult> results(shards.size());
  for (std::size_t s0 = 0; s0 < shards.size(); s0 += static_cast<std::size_t>(cfg.threads)) {
    const std::size_t s1 = std::min(shards.size(), s0 + static_cast<std::size_t>(cfg.threads));
    if (s1 - s0 == 1) {
      results[s0] = run_shard(model, shards[s0], mask_total, ponder_denom);
      continue;
    }
    std::vector<std::thread> pool;
    for (std::size_t s = s0; s < s1; ++s)
      pool.emplace_back([&, s] { results[s] = run_shard(model, shards[s], mask_total, ponder_denom); });
    for (auto& t : pool) t.join();
  }

  StatsRecord rec;
  rec.step = step;
  rec.ek_block.assign(static_cast<std::size_t>(layers), 0.0);
  rec.ek_ffn.assign(static_cast<std::size_t>(layers), 0.0);
  rec.firing_rate.assign(static_cast<std::size_t>(mc.n_state), 0.0);
  std::vector<Tensor<float>> grads;
  for (auto& r : results) {
    if (!r.error.empty()) throw TrainingError("step " + std::to_string(step) + ": " + r.error);
    if (grads.empty()) {
      grads = std::move(r.grads);
    } else {
      for (std::size_t i = 0; i < grads.size(); ++i) grads[i].array() += r.grads[i].array();
    }
    rec.loss += r.loss;
    rec.ce += r.ce;
    rec.ponder += r.ponder;
    for (int l = 0; l < layers; ++l) {
      rec.ek_block[static_cast<std::size_t>(l)] += r.ek_sum[static_cast<std::size_t>(2 * l)];
      rec.ek_ffn[static_cast<std::size_t>(l)] += r.ek_sum[static_cast<std::size_t>(2 * l + 1)];
    }
    for (std::size_t n = 0; n < rec.firing_rate.size(); ++n) rec.firing_rate[n] += r.fire_sum[n];
  }
  for (auto& e : rec.ek_block) e /= static_cast<double>(tokens);
  for (auto& e : rec.ek_ffn) e /= static_cast<double>(tokens);
  for (auto& f : rec.firing_rate) f /= static_cast<double>(columns) * layers;

  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].all_finite())
      throw TrainingError("step " + std::to_string(step) + ": non-finite gradient in " + model.params[i].name);
  }
  if (cfg.compensate) {
    CompensationConfig cc;
    cc.c_max = mc.c_max;
    compensate_gradients(std::as_const(model.params), grads, cc);
  }
  rec.grad_norm = clip_global_norm(grads, cfg.grad_clip);
  rec.lr = lr_at(cfg, step);
  adam_update(model.params, grads, opt, rec.lr, cfg);
  rec.beta = beta_summary(model);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rec.tokens_per_sec = secs > 0 ? static_cast<double>(tokens) / secs : 0;
  return rec;
}

// ---------------------------------------------------------------------------
// Evaluation and generation.

double unigram_entropy(const std::vector<int>& stream) {
  std::vector<double> counts(256, 0.0);
  double n = 0;
  for (int id : stream) {
    if (id >= 0 && id < 256) {
      counts[static_cast<std::size_t>(id)] += 1;
      n += 1;
    }
  }
  if (n == 0) return 0;
  double h = 0;
  for (double c : counts)
    if (c > 0) h -= c / n * std::log(c / n);
  return h;
}

EvalResult evaluate(const Model<float>& model, const std::vector<int>& stream, int context, int max_windows,
                    int batch) {
  const Index span = static_cast<Index>(stream.size()) - context - 1;
  if (span < 0) throw std::invalid_argument("evaluate: stream shorter than context + 1");
  const Index windows = std::min<Index>(max_windows, span / context + 1);
  std::vector<Index> offsets;
  for (Index w = 0; w < windows; ++w) offsets.push_back(windows == 1 ? 0 : w * span / (windows - 1));

  EvalResult res;
  double ce_sum = 0, ek_sum = 0;
  Index ek_count = 0;
  for (std::size_t i = 0; i < offsets.size(); i += static_cast<std::size_t>(batch)) {
    const std::vector<Index> chunk(offsets.begin() + static_cast<std::ptrdiff_t>(i),
                                   offsets.begin() + static_cast<std::ptrdiff_t>(std::min(offsets.size(), i + batch)));
    const TrainBatch b = window_batch(stream, chunk, context);
    Tape<float> tape;
    ParamBinding<float> bind(tape, model.params);
    LossOptions opts;
    opts.ce_denominator = 1;
    auto parts = model_loss(bind, model.config, b.inputs, b.targets, b.mask, opts);
    ce_sum += parts.ce.value()[0];
    for (float m : b.mask) res.tokens += m > 0;
    for (const auto& ek : parts.forward.expected_k) {
      ek_sum += ek.value().array().cast<double>().sum();
      ek_count += ek.value().size();
    }
  }
  res.ce = ce_sum / static_cast<double>(std::max<Index>(res.tokens, 1));
  res.mean_ek = ek_sum / static_cast<double>(std::max<Index>(ek_count, 1));
  return res;
}

std::vector<int> generate(const Model<float>& model, std::vector<int> prompt, int max_new, double temperature,
                          Rng& rng) {
  const int context = model.config.context_len;
  if (static_cast<int>(prompt.size()) >= context) throw std::invalid_argument("generate: prompt too long");
  if (temperature < 0) throw std::invalid_argument("generate: temperature must be >= 0");
  if (prompt.empty()) prompt.push_back(kBosId);
  for (int i = 0; i < max_new; ++i) {
    const Index start = std::max<Index>(0, static_cast<Index>(prompt.size()) - context);
    TokenBatch window{static_cast<Index>(prompt.size()) - start, 1,
                      std::vector<int>(prompt.begin() + static_cast<std::ptrdiff_t>(start), prompt.end())};
    const auto z = logits(model, window);
    const Index v = z.dim(-1);
    const float* last = z.data() + (window.steps - 1) * v;
    int next = 0;
    if (temperature == 0) {
      next = static_cast<int>(std::max_element(last, last + v) - last);
    } else {
      const double mx = *std::max_element(last, last + v);
      std::vector<double> w(static_cast<std::size_t>(v));
      for (Index j = 0; j < v; ++j) w[static_cast<std::size_t>(j)] = std::exp((last[j] - mx) / temperature);
      if (v > kPadId) w[kPadId] = 0;
      next = std::discrete_distribution<int>(w.begin(), w.end())(rng);
    }
    prompt.push_back(next);
  }
  return prompt;
}

// ---------------------------------------------------------------------------
// Statistics files.

namespace {

const char* token_class(int id) {
  if (id >= 256) return "special";
  const auto c = static_cast<unsigned char>(id);
  if (c == '\n') return "newline";
  if (c == ' ' || c == '\t') return "space";
  if (std::isalpha(c)) return "letter";
  if (std::isdigit(c)) return "digit";
  if (std::ispunct(c)) return "punct";
  return "other";
}

std::ofstream open_csv(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << std::setprecision(9);
  return out;
}

}  // namespace

std::vector<std::string> stats_dump(const Model<float>& model, const std::vector<int>& eval_tokens,
                                    const std::string& out_dir) {
  const auto& cfg = model.config;
  std::filesystem::create_directories(out_dir);
  const Index steps = std::min<Index>(cfg.context_len, static_cast<Index>(eval_tokens.size()));
  if (steps < 1) throw std::invalid_argument("stats_dump: empty eval text");
  const Index windows = std::clamp<Index>(static_cast<Index>(eval_tokens.size()) / steps, 1, 4);
  TokenBatch tb{steps, windows, std::vector<int>(static_cast<std::size_t>(steps * windows))};
  for (Index w = 0; w < windows; ++w)
    for (Index t = 0; t < steps; ++t)
      tb.ids[static_cast<std::size_t>(t * windows + w)] = eval_tokens[static_cast<std::size_t>(w * steps + t)];

  Tape<float> tape;
  ParamBinding<float> bind(tape, model.params);
  ForwardOptions fo;
  fo.diagnostics = true;
  const auto out = forward(bind, cfg, tb, fo);

  std::vector<std::string> paths;
  const auto path = [&](const char* name) {
    paths.push_back((std::filesystem::path(out_dir) / name).string());
    return paths.back();
  };

  auto per_token = open_csv(path("per_token_ek.csv"));
  per_token << "window,position,token,class,layer,sublayer,expected_k\n";
  for (Index w = 0; w < windows; ++w) {
    for (Index t = 0; t < steps; ++t) {
      const int id = tb.at(t, w);
      for (int s = 0; s < 2 * cfg.n_layers; ++s) {
        per_token << w << ',' << t << ',' << id << ',' << token_class(id) << ',' << s / 2 << ','
                  << (s % 2 == 0 ? "block" : "ffn") << ',' << out.expected_k[static_cast<std::size_t>(s)].value()[t * windows + w]
                  << '\n';
      }
    }
  }

  auto layer_ek = open_csv(path("layer_ek.csv"));
  layer_ek << "layer,sublayer,mean_expected_k\n";
  for (int s = 0; s < 2 * cfg.n_layers; ++s) {
    layer_ek << s / 2 << ',' << (s % 2 == 0 ? "block" : "ffn") << ','
             << out.expected_k[static_cast<std::size_t>(s)].value().array().cast<double>().mean() << '\n';
  }

  constexpr int kBins = 20;
  const auto targets = structured_init_targets(cfg.n_state);
  auto hist = open_csv(path("beta_hist.csv"));
  hist << "layer,group,bin_lo,bin_hi,count\n";
  auto groups = open_csv(path("beta_groups.csv"));
  groups << "layer,group,mean_beta,init_target\n";
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& b = model.params.at("layers." + std::to_string(l) + ".block.b_beta").value;
    for (int n = 0; n < cfg.n_state; ++n) {
      std::vector<int> counts(kBins, 0);
      double mean = 0;
      for (int d = 0; d < cfg.d_model; ++d) {
        const double beta = sigmoid(static_cast<double>(b[n * cfg.d_model + d]));
        mean += beta / cfg.d_model;
        ++counts[static_cast<std::size_t>(std::min(kBins - 1, static_cast<int>(beta * kBins)))];
      }
      for (int k = 0; k < kBins; ++k)
        hist << l << ',' << n << ',' << static_cast<double>(k) / kBins << ',' << static_cast<double>(k + 1) / kBins << ','
             << counts[static_cast<std::size_t>(k)] << '\n';
      groups << l << ',' << n << ',' << mean << ',' << targets.beta[static_cast<std::size_t>(n)] << '\n';
    }
  }

  auto fire = open_csv(path("firing_rates.csv"));
  fire << "layer,sublayer,group,rate\n";
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& d = out.layers[static_cast<std::size_t>(l)];
    for (std::size_t n = 0; n < d.block.group_firing_rate.size(); ++n)
      fire << l << ",block," << n << ',' << d.block.group_firing_rate[n] << '\n';
    const char* names[] = {"gate", "up"};
    for (std::size_t n = 0; n < d.ffn.group_firing_rate.size() && n < 2; ++n)
      fire << l << ",ffn," << names[n] << ',' << d.ffn.group_firing_rate[n] << '\n';
  }
  return paths;
}

// ---------------------------------------------------------------------------
// Logging.

AsyncLineWriter::AsyncLineWriter(const std::string& path) : out_(path) {
  if (!out_) throw std::runtime_error("cannot write " + path);
  worker_ = std::thread([this] { run(); });
}

AsyncLineWriter::~AsyncLineWriter() { close(); }

void AsyncLineWriter::write(std::string line) {
  {
    std::lock_guard lock(mu_);
    queue_.push_back(std::move(line));
  }
  cv_.notify_one();
}

void AsyncLineWriter::close() {
  {
    std::lock_guard lock(mu_);
    if (done_) return;
    done_ = true;
  }
  cv_.notify_one();
  if (worker_.joinable()) worker_.join();
  out_.flush();
}

void AsyncLineWriter::run() {
  std::unique_lock lock(mu_);
  for (;;) {
    cv_.wait(lock, [this] { return done_ || !queue_.empty(); });
    while (!queue_.empty()) {
      std::string line = std::move(queue_.front());
      queue_.pop_front();
      lock.unlock();
      out_ << line << '\n';
      lock.lock();
    }
    if (done_) return;
  }
}

std::string stats_csv_header(int n_layers, int n_state) {
  std::ostringstream os;
  os << "step,loss,ce,ponder,lr,grad_norm,tokens_per_sec,beta_mean,beta_min,beta_max";
  for (int l = 0; l < n_layers; ++l) os << ",ek_block_" << l;
  for (int l = 0; l < n_layers; ++l) os << ",ek_ffn_" << l;
  for (int n = 0; n < n_state; ++n) os << ",fire_group_" << n;
  for (int n = 0; n < n_state; ++n) os << ",beta_group_" << n;
  return os.str();
}

std::string stats_csv_row(const StatsRecord& r) {
  std::ostringstream os;
  os << std::setprecision(9) << r.step << ',' << r.loss << ',' << r.ce << ',' << r.ponder << ',' << r.lr << ','
     << r.grad_norm << ',' << r.tokens_per_sec << ',' << r.beta.mean << ',' << r.beta.min << ',' << r.beta.max;
  for (double v : r.ek_block) os << ',' << v;
  for (double v : r.ek_ffn) os << ',' << v;
  for (double v : r.firing_rate) os << ',' << v;
  for (double v : r.beta.group_mean) os << ',' << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Loop.

TrainResult train(Model<float>& model, const TrainConfig& cfg, const Corpus& corpus, const std::string& out_dir,
                  const TrainHooks& hooks) {
  cfg.validate();
  model.config.validate();
  if (cfg.context_len > model.config.context_len)
    throw std::invalid_argument("train: context_len exceeds the model's context_len");
  TrainResult res;
  res.unigram_entropy = unigram_entropy(corpus.train);

  std::optional<AsyncLineWriter> log;
  std::optional<AsyncLineWriter> eval_log;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    log.emplace((std::filesystem::path(out_dir) / "train_log.csv").string());
    log->write(stats_csv_header(model.config.n_layers, model.config.n_state));
    eval_log.emplace((std::filesystem::path(out_dir) / "eval_log.csv").string());
    eval_log->write("step,eval_ce,eval_mean_ek,tokens");
  }

  const auto run_eval = [&](long step) {
    if (corpus.eval.size() <= static_cast<std::size_t>(cfg.context_len + 1)) return;
    const EvalResult e = evaluate(model, corpus.eval, cfg.context_len, cfg.eval_windows);
    res.evals.emplace_back(step, e);
    if (eval_log) {
      std::ostringstream os;
      os << std::setprecision(9) << step << ',' << e.ce << ',' << e.mean_ek << ',' << e.tokens;
      eval_log->write(os.str());
    }
    if (hooks.on_eval) hooks.on_eval(step, e);
  };
  const auto save = [&](const std::string& name) {
    if (!out_dir.empty()) save_checkpoint(model.params, model.config, (std::filesystem::path(out_dir) / name).string());
  };

  Rng rng(cfg.seed);
  AdamState opt = init_adam(model.params);
  for (long step = 1; step <= cfg.total_steps; ++step) {
    std::vector<TrainBatch> micro;
    for (int a = 0; a < cfg.grad_accum; ++a) micro.push_back(sample_batch(corpus.train, cfg.batch, cfg.context_len, rng));
    StatsRecord rec = train_step(model, opt, cfg, micro, step);
    if (log && (step % cfg.log_every == 0 || step == 1 || step == cfg.total_steps)) log->write(stats_csv_row(rec));
    if (hooks.on_step) hooks.on_step(rec);
    res.history.push_back(std::move(rec));
    if (cfg.eval_every > 0 && step % cfg.eval_every == 0 && step != cfg.total_steps) run_eval(step);
    if (cfg.save_every > 0 && step % cfg.save_every == 0 && step != cfg.total_steps)
      save("step_" + std::to_string(step) + ".nspk");
  }
  run_eval(cfg.total_steps);
  save("model.nspk");
  return res;
}

}  // namespace nspark

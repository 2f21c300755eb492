#include "nspark/model.hpp"

#include "nspark/stabilizers.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace nspark {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

const char* to_string(ParamGroup g) { return g == ParamGroup::weight ? "weight" : "neuron"; }

namespace {

std::string layer_name(int layer, const char* sub) { return "layers." + std::to_string(layer) + "." + sub + "."; }

template <typename Scalar>
Tensor<Scalar> normal_init(Shape shape, double stddev, Rng& rng) {
  Tensor<Scalar> t(std::move(shape));
  for (Scalar& v : t.values()) v = static_cast<Scalar>(normal(rng, 0.0, stddev));
  return t;
}

}  // namespace

ParamCount count_params(const ModelConfig& cfg) {
  const Index d = cfg.d_model, n = cfg.n_state, f = cfg.d_ff, v = cfg.vocab_size, l = cfg.n_layers;
  ParamCount c;
  c.embedding = v * d;
  c.snn_block_total = l * (5 * d * d * n + 2 * d * d + 3 * d * n + 2 * d);
  c.snn_ffn_total = l * (3 * f * d + d * d + 2 * d + 4 * f);
  c.residual_proj_total = 2 * l * d * d;
  c.other = (2 * l + 1) * d  // pre-sublayer and decode norms
            + 2 * d          // output PLIF
            + d * d          // decode projection
            + d              // lateral inhibition gain
            + 2 * l * (d + 1);  // halt units
  c.total = c.embedding + c.snn_block_total + c.snn_ffn_total + c.residual_proj_total + c.other;
  return c;
}

std::vector<ParamSpec> param_layout(const ModelConfig& cfg) {
  const Index d = cfg.d_model, dn = cfg.d_model * static_cast<Index>(cfg.n_state), f = cfg.d_ff;
  constexpr ParamGroup W = ParamGroup::weight, N = ParamGroup::neuron;
  std::vector<ParamSpec> out;
  out.push_back({"embed.weight", {cfg.vocab_size, d}, W});
  for (int i = 0; i < cfg.n_layers; ++i) {
    const std::string b = layer_name(i, "block");
    out.insert(out.end(), {{b + "norm.gamma", {d}, W},
                           {b + "input_plif.w", {d}, N},
                           {b + "input_plif.v_th", {d}, N},
                           {b + "W_in", {dn, d}, W},
                           {b + "W_beta", {dn, d}, W},
                           {b + "W_alpha", {dn, d}, W},
                           {b + "W_th", {dn, d}, W},
                           {b + "W_gate", {d, d}, W},
                           {b + "W_skip", {d, d}, W},
                           {b + "W_out", {d, dn}, W},
                           {b + "b_beta", {dn}, N},
                           {b + "b_alpha", {dn}, N},
                           {b + "b_th", {dn}, N},
                           {b + "halt.W", {d}, N},
                           {b + "halt.b", {1}, N},
                           {b + "out_proj", {d, d}, W}});
    const std::string m = layer_name(i, "ffn");
    out.insert(out.end(), {{m + "norm.gamma", {d}, W},
                           {m + "input_plif.w", {d}, N},
                           {m + "input_plif.v_th", {d}, N},
                           {m + "gate_plif.w", {f}, N},
                           {m + "gate_plif.v_th", {f}, N},
                           {m + "up_plif.w", {f}, N},
                           {m + "up_plif.v_th", {f}, N},
                           {m + "W_gate", {f, d}, W},
                           {m + "W_up", {f, d}, W},
                           {m + "W_down", {d, f}, W},
                           {m + "W_skip", {d, d}, W},
                           {m + "halt.W", {d}, N},
                           {m + "halt.b", {1}, N},
                           {m + "out_proj", {d, d}, W}});
  }
  out.insert(out.end(), {{"decode.norm.gamma", {d}, W},
                         {"decode.output_plif.w", {d}, N},
                         {"decode.output_plif.v_th", {d}, N},
                         {"decode.proj", {d, d}, W},
                         {"decode.lateral.gamma", {d}, W}});
  return out;
}

template <typename Scalar>
ParamStore<Scalar> init_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  using T = Tensor<Scalar>;
  const Index d = cfg.d_model;
  const double proj_std = kInitStd / std::sqrt(2.0 * cfg.n_layers);
  ParamStore<Scalar> s;
  constexpr ParamGroup W = ParamGroup::weight, N = ParamGroup::neuron;
  s.add("embed.weight", normal_init<Scalar>({cfg.vocab_size, d}, kInitStd, rng), W);
  for (int i = 0; i < cfg.n_layers; ++i) {
    const std::string b = layer_name(i, "block");
    SnnBlockParams<Scalar> blk = init_snn_block<Scalar>(cfg, rng);
    PonderParams<Scalar> bh = init_ponder<Scalar>(cfg.d_model, rng);
    s.add(b + "norm.gamma", T({d}, Scalar(1)), W);
    s.add(b + "input_plif.w", std::move(blk.input.w), N);
    s.add(b + "input_plif.v_th", std::move(blk.input.v_th), N);
    s.add(b + "W_in", std::move(blk.W_in), W);
    s.add(b + "W_beta", std::move(blk.W_beta), W);
    s.add(b + "W_alpha", std::move(blk.W_alpha), W);
    s.add(b + "W_th", std::move(blk.W_th), W);
    s.add(b + "W_gate", std::move(blk.W_gate), W);
    s.add(b + "W_skip", std::move(blk.W_skip), W);
    s.add(b + "W_out", std::move(blk.W_out), W);
    s.add(b + "b_beta", std::move(blk.b_beta), N);
    s.add(b + "b_alpha", std::move(blk.b_alpha), N);
    s.add(b + "b_th", std::move(blk.b_th), N);
    s.add(b + "halt.W", std::move(bh.W_halt), N);
    s.add(b + "halt.b", std::move(bh.b_halt), N);
    s.add(b + "out_proj", normal_init<Scalar>({d, d}, proj_std, rng), W);

    const std::string m = layer_name(i, "ffn");
    SnnFfnParams<Scalar> ffn = init_snn_ffn<Scalar>(cfg, rng);
    PonderParams<Scalar> fh = init_ponder<Scalar>(cfg.d_model, rng);
    s.add(m + "norm.gamma", T({d}, Scalar(1)), W);
    s.add(m + "input_plif.w", std::move(ffn.input.w), N);
    s.add(m + "input_plif.v_th", std::move(ffn.input.v_th), N);
    s.add(m + "gate_plif.w", std::move(ffn.gate.w), N);
    s.add(m + "gate_plif.v_th", std::move(ffn.gate.v_th), N);
    s.add(m + "up_plif.w", std::move(ffn.up.w), N);
    s.add(m + "up_plif.v_th", std::move(ffn.up.v_th), N);
    s.add(m + "W_gate", std::move(ffn.W_gate), W);
    s.add(m + "W_up", std::move(ffn.W_up), W);
    s.add(m + "W_down", std::move(ffn.W_down), W);
    s.add(m + "W_skip", std::move(ffn.W_skip), W);
    s.add(m + "halt.W", std::move(fh.W_halt), N);
    s.add(m + "halt.b", std::move(fh.b_halt), N);
    s.add(m + "out_proj", normal_init<Scalar>({d, d}, proj_std, rng), W);
  }
  PlifParams<Scalar> out_plif = init_plif_node<Scalar>(cfg.d_model, cfg.tau0, cfg.v0, rng);
  s.add("decode.norm.gamma", T({d}, Scalar(1)), W);
  s.add("decode.output_plif.w", std::move(out_plif.w), N);
  s.add("decode.output_plif.v_th", std::move(out_plif.v_th), N);
  s.add("decode.proj", normal_init<Scalar>({d, d}, kInitStd, rng), W);
  s.add("decode.lateral.gamma", T({d}, Scalar(1)), W);
  return s;
}

template <typename Scalar>
Model<Scalar> init_model(const ModelConfig& cfg) {
  Rng rng(cfg.seed);
  return {cfg, init_params<Scalar>(cfg, rng)};
}

template <typename Scalar>
Var<Scalar> embedding_lookup(Var<Scalar> embedding, const TokenBatch& tokens) {
  const Tensor<Scalar>& e = embedding.value();
  if (e.rank() != 2) throw DimensionError("embedding_lookup: embedding must be [V, D]");
  if (static_cast<Index>(tokens.ids.size()) != tokens.steps * tokens.batch) {
    throw DimensionError("embedding_lookup: id count does not match steps * batch");
  }
  const Index vocab = e.dim(0), d = e.dim(1);
  for (int id : tokens.ids) {
    if (id < 0 || id >= vocab) {
      throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab));
    }
  }
  Tensor<Scalar> out({tokens.steps, tokens.batch, d});
  auto om = out.matrix();
  const auto em = e.matrix();
  for (std::size_t r = 0; r < tokens.ids.size(); ++r) om.row(static_cast<Index>(r)) = em.row(tokens.ids[r]);
  const int ei = embedding.id;
  std::vector<int> ids = tokens.ids;
  return embedding.tape->record(
      std::move(out), {embedding},
      [ei, ids = std::move(ids)](Tape<Scalar>& t, int self) {
        const auto g = t.grad(self).matrix();
        auto ge = t.grad(ei).matrix();
        for (std::size_t r = 0; r < ids.size(); ++r) ge.row(ids[r]) += g.row(static_cast<Index>(r));
      },
      "embedding_lookup");
}

template <typename Scalar>
Var<Scalar> encode(Var<Scalar> embedding, const TokenBatch& tokens, int k_steps) {
  return frame_repeat(embedding_lookup(embedding, tokens), k_steps);
}

namespace {

template <typename Scalar>
Var<Scalar> input_leak(ParamBinding<Scalar>& p, const std::string& prefix, Var<Scalar> h, const ScanOptions& scan) {
  Var<Scalar> u = rms_norm(h, p(prefix + "norm.gamma"));
  Var<Scalar> w = p(prefix + "input_plif.w");
  return leakage(plif_fixed(u, w, p(prefix + "input_plif.v_th"), scan), w);
}

/// Ponder-aggregate the sublayer output, project, center and broadcast back to K frames.
template <typename Scalar>
Var<Scalar> residual_update(ParamBinding<Scalar>& p, const std::string& prefix, Var<Scalar> y, int k_steps,
                            ForwardOutput<Scalar>* out) {
  Var<Scalar> lh = halt_weights(y, p(prefix + "halt.W"), p(prefix + "halt.b"), k_steps);
  if (out) out->expected_k.push_back(expected_steps(lh));
  Var<Scalar> agg = linear(weighted_frames(y, lh), p(prefix + "out_proj"));
  return frame_repeat(center(agg), k_steps);
}

}  // namespace

template <typename Scalar>
Var<Scalar> decoder_layer(ParamBinding<Scalar>& p, const ModelConfig& cfg, int layer, Var<Scalar> h,
                          const ForwardOptions& opts, ForwardOutput<Scalar>* out) {
  const BlockOptions bopts{opts.scan, cfg.v_min};
  LayerDiagnostics diag;
  const bool want_diag = out != nullptr && opts.diagnostics;
  const std::string b = layer_name(layer, "block");
  const std::string m = layer_name(layer, "ffn");
  try {
    Var<Scalar> leak = input_leak(p, b, h, opts.scan);
    const SnnBlockVars<Scalar> bv{p(b + "W_in"),   p(b + "W_beta"), p(b + "W_alpha"), p(b + "W_th"),
                                  p(b + "W_gate"), p(b + "W_skip"), p(b + "W_out"),   p(b + "b_beta"),
                                  p(b + "b_alpha"), p(b + "b_th")};
    Var<Scalar> y = snn_block_forward(leak, bv, cfg.n_state, bopts, want_diag ? &diag.block : nullptr);
    h = h + residual_update(p, b, y, cfg.k_steps, out);
  } catch (const NumericError& e) {
    throw NumericError("layer " + std::to_string(layer) + " (selective block): " + e.what());
  }
  try {
    Var<Scalar> leak = input_leak(p, m, h, opts.scan);
    const SnnFfnVars<Scalar> fv{p(m + "W_gate"),      p(m + "W_up"),        p(m + "W_down"),    p(m + "W_skip"),
                                p(m + "gate_plif.w"), p(m + "gate_plif.v_th"), p(m + "up_plif.w"), p(m + "up_plif.v_th")};
    Var<Scalar> y = snn_ffn_forward(leak, fv, bopts, want_diag ? &diag.ffn : nullptr);
    h = h + residual_update(p, m, y, cfg.k_steps, out);
  } catch (const NumericError& e) {
    throw NumericError("layer " + std::to_string(layer) + " (ffn): " + e.what());
  }
  if (want_diag) out->layers.push_back(std::move(diag));
  return h;
}

template <typename Scalar>
Var<Scalar> decode(ParamBinding<Scalar>& p, const ModelConfig& cfg, Var<Scalar> h, const ForwardOptions& opts) {
  try {
    Var<Scalar> u = rms_norm(h, p("decode.norm.gamma"));
    Var<Scalar> w = p("decode.output_plif.w");
    Var<Scalar> leak = leakage(plif_fixed(u, w, p("decode.output_plif.v_th"), opts.scan), w);
    Var<Scalar> z = linear(frame_mean(leak, cfg.k_steps), p("decode.proj"));
    return linear(lateral_inhibition(z, p("decode.lateral.gamma")), p("embed.weight"));
  } catch (const NumericError& e) {
    throw NumericError(std::string("decode head: ") + e.what());
  }
}

template <typename Scalar>
ForwardOutput<Scalar> forward(ParamBinding<Scalar>& p, const ModelConfig& cfg, const TokenBatch& tokens,
                              const ForwardOptions& opts) {
  ForwardOptions o = opts;
  o.scan.sharpness = cfg.surrogate_alpha;
  ForwardOutput<Scalar> out;
  Var<Scalar> h = encode(p("embed.weight"), tokens, cfg.k_steps);
  for (int i = 0; i < cfg.n_layers; ++i) h = decoder_layer(p, cfg, i, h, o, &out);
  out.logits = decode(p, cfg, h, o);
  return out;
}

template <typename Scalar>
Var<Scalar> cross_entropy(Var<Scalar> logits, const std::vector<int>& targets, const std::vector<float>& mask,
                          double denominator) {
  const Tensor<Scalar>& z = logits.value();
  const Index rows = z.rows(), vocab = z.cols();
  if (static_cast<Index>(targets.size()) != rows) throw DimensionError("cross_entropy: target count mismatch");
  if (!mask.empty() && static_cast<Index>(mask.size()) != rows) throw DimensionError("cross_entropy: mask size mismatch");
  std::vector<double> weights(static_cast<std::size_t>(rows), 1.0);
  if (!mask.empty()) weights.assign(mask.begin(), mask.end());
  if (denominator <= 0) {
    denominator = 0;
    for (double w : weights) denominator += w;
    if (denominator <= 0) throw DomainError("cross_entropy: mask selects no tokens");
  }
  const auto zm = z.matrix();
  double total = 0;
  for (Index r = 0; r < rows; ++r) {
    const int tgt = targets[static_cast<std::size_t>(r)];
    if (tgt < 0 || tgt >= vocab) throw std::out_of_range("cross_entropy: target id out of range");
    if (weights[static_cast<std::size_t>(r)] == 0) continue;
    const auto row = zm.row(r).template cast<double>();
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    total += weights[static_cast<std::size_t>(r)] * (lse - row(tgt));
  }
  const int zi = logits.id;
  return logits.tape->record(
      Tensor<Scalar>::scalar(static_cast<Scalar>(total / denominator)), {logits},
      [zi, targets, weights = std::move(weights), denominator](Tape<Scalar>& t, int self) {
        const double g = t.grad(self)[0] / denominator;
        const auto zm = t.value(zi).matrix();
        auto gz = t.grad(zi).matrix();
        for (Index r = 0; r < zm.rows(); ++r) {
          const double w = weights[static_cast<std::size_t>(r)];
          if (w == 0) continue;
          const auto row = zm.row(r).template cast<double>();
          const double mx = row.maxCoeff();
          Eigen::Array<double, 1, Eigen::Dynamic> prob = (row.array() - mx).exp();
          prob /= prob.sum();
          prob(targets[static_cast<std::size_t>(r)]) -= 1;
          gz.row(r).array() += (g * w * prob).template cast<Scalar>();
        }
      },
      "cross_entropy");
}

template <typename Scalar>
LossParts<Scalar> model_loss(ParamBinding<Scalar>& p, const ModelConfig& cfg, const TokenBatch& inputs,
                             const std::vector<int>& targets, const std::vector<float>& mask, const LossOptions& opts) {
  LossParts<Scalar> parts;
  parts.forward = forward(p, cfg, inputs, opts.forward);
  parts.ce = cross_entropy(parts.forward.logits, targets, mask, opts.ce_denominator);
  double denom = opts.ponder_denominator;
  if (denom <= 0) denom = 2.0 * cfg.n_layers * static_cast<double>(inputs.steps * inputs.batch);
  Var<Scalar> total = sum(parts.forward.expected_k.front());
  for (std::size_t i = 1; i < parts.forward.expected_k.size(); ++i) total = total + sum(parts.forward.expected_k[i]);
  parts.ponder = affine(total, static_cast<Scalar>(cfg.lambda_ponder / denom), Scalar(0));
  parts.loss = parts.ce + parts.ponder;
  if (!std::isfinite(static_cast<double>(parts.loss.value()[0]))) throw NumericError("non-finite loss");
  return parts;
}

template <typename Scalar>
Tensor<Scalar> logits(const Model<Scalar>& model, const TokenBatch& tokens, const ForwardOptions& opts) {
  Tape<Scalar> tape;
  ParamBinding<Scalar> binding(tape, model.params);
  return forward(binding, model.config, tokens, opts).logits.value();
}

// ---------------------------------------------------------------------------
// Checkpoints.

namespace {

constexpr char kMagic[4] = {'N', 'S', 'P', 'K'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  template <typename T>
  T get(const char* what) {
    T v;
    need(sizeof(T), what);
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void raw(void* dst, std::size_t n, const std::string& what) {
    need(n, what.c_str());
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  }

  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const ParamStore<float>& params, const ModelConfig& cfg, const std::string& path) {
  std::ostringstream os;
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kCheckpointVersion);
  const std::string cfg_text = format_key_values(cfg.to_map());
  put<std::uint32_t>(os, static_cast<std::uint32_t>(cfg_text.size()));
  os.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params.entries()) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(e.value.rank()));
    for (Index x : e.value.shape()) put<std::uint64_t>(os, static_cast<std::uint64_t>(x));
    os.write(reinterpret_cast<const char*>(e.value.data()),
             static_cast<std::streamsize>(e.value.size() * static_cast<Index>(sizeof(float))));
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + tmp + " for writing");
    const std::string bytes = os.str();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw CheckpointError("cannot rename " + tmp + " to " + path);
}

Model<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  Reader r(ss.str());

  if (r.str(4, "magic") != std::string(kMagic, 4)) throw CheckpointError("not a checkpoint (bad magic): " + path);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("incompatible checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto cfg_len = r.get<std::uint32_t>("config length");
  ModelConfig cfg;
  for (const auto& [k, v] : parse_key_values(r.str(cfg_len, "config"))) {
    if (!cfg.set(k, v)) throw CheckpointError("incompatible checkpoint: unknown config field '" + k + "'");
  }
  cfg.validate();

  const std::vector<ParamSpec> layout = param_layout(cfg);
  std::vector<Tensor<float>> values(layout.size());
  std::vector<bool> seen(layout.size(), false);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < layout.size(); ++i) index.emplace(layout[i].name, i);

  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = r.get<std::uint32_t>("tensor name length");
    const std::string name = r.str(name_len, "tensor name");
    const auto it = index.find(name);
    if (it == index.end()) throw CheckpointError("unknown tensor in checkpoint: " + name);
    if (seen[it->second]) throw CheckpointError("duplicate tensor in checkpoint: " + name);
    const auto rank = r.get<std::uint32_t>("tensor rank");
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(static_cast<Index>(r.get<std::uint64_t>("tensor extent")));
    if (shape != layout[it->second].shape) {
      throw CheckpointError("tensor " + name + " has shape " + to_string(shape) + ", expected " +
                            to_string(layout[it->second].shape));
    }
    Tensor<float> v(shape);
    r.raw(v.data(), static_cast<std::size_t>(v.size()) * sizeof(float), "tensor data of " + name);
    values[it->second] = std::move(v);
    seen[it->second] = true;
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint tensors");
  Model<float> model{cfg, {}};
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (!seen[i]) throw CheckpointError("checkpoint is missing tensor " + layout[i].name);
    model.params.add(layout[i].name, std::move(values[i]), layout[i].group);
  }
  return model;
}

#define NSPARK_INSTANTIATE_MODEL(S)                                                                               \
  template ParamStore<S> init_params(const ModelConfig&, Rng&);                                                  \
  template Model<S> init_model(const ModelConfig&);                                                              \
  template Var<S> embedding_lookup(Var<S>, const TokenBatch&);                                                   \
  template Var<S> encode(Var<S>, const TokenBatch&, int);                                                        \
  template Var<S> decoder_layer(ParamBinding<S>&, const ModelConfig&, int, Var<S>, const ForwardOptions&,       \
                                ForwardOutput<S>*);                                                              \
  template Var<S> decode(ParamBinding<S>&, const ModelConfig&, Var<S>, const ForwardOptions&);                  \
  template ForwardOutput<S> forward(ParamBinding<S>&, const ModelConfig&, const TokenBatch&, const ForwardOptions&); \
  template Var<S> cross_entropy(Var<S>, const std::vector<int>&, const std::vector<float>&, double);            \
  template LossParts<S> model_loss(ParamBinding<S>&, const ModelConfig&, const TokenBatch&,                      \
                                   const std::vector<int>&, const std::vector<float>&, const LossOptions&);      \
  template Tensor<S> logits(const Model<S>&, const TokenBatch&, const ForwardOptions&);

NSPARK_INSTANTIATE_MODEL(float)
NSPARK_INSTANTIATE_MODEL(double)

}  // namespace nspark

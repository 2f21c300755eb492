#pragma once

// Encode -> L decoder layers -> decode pipeline over a [T*K, B, D] frame stream.
//
// Parameter names (store order):
//   embed.weight                                   [V, D] (tied output head)
//   layers.{i}.block.{norm.gamma, input_plif.w, input_plif.v_th, W_in, W_beta,
//                     W_alpha, W_th, W_gate, W_skip, W_out, b_beta, b_alpha,
//                     b_th, halt.W, halt.b, out_proj}
//   layers.{i}.ffn.{norm.gamma, input_plif.w, input_plif.v_th, gate_plif.w,
//                   gate_plif.v_th, up_plif.w, up_plif.v_th, W_gate, W_up,
//                   W_down, W_skip, halt.W, halt.b, out_proj}
//   decode.{norm.gamma, output_plif.w, output_plif.v_th, proj, lateral.gamma}

#include "nspark/blocks.hpp"
#include "nspark/config.hpp"
#include "nspark/param_store.hpp"
#include "nspark/ponder.hpp"

#include <string>
#include <vector>

namespace nspark {

struct ParamCount {
  Index embedding = 0;
  Index snn_block_total = 0;
  Index snn_ffn_total = 0;
  Index residual_proj_total = 0;
  Index other = 0;
  Index total = 0;
};

/// Closed-form counts from shapes. Norm gains, decode head, output PLIF and
/// halt units are reported under `other`.
ParamCount count_params(const ModelConfig& cfg);

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamGroup group;
};

/// Names, shapes and groups in store order, without allocating values.
std::vector<ParamSpec> param_layout(const ModelConfig& cfg);

template <typename Scalar>
struct Model {
  ModelConfig config;
  ParamStore<Scalar> params;

  template <typename Other>
  Model<Other> cast() const {
    return {config, params.template cast<Other>()};
  }
};

/// Draws every parameter from a generator seeded with cfg.seed.
template <typename Scalar>
Model<Scalar> init_model(const ModelConfig& cfg);
template <typename Scalar>
ParamStore<Scalar> init_params(const ModelConfig& cfg, Rng& rng);

/// Token ids laid out time-major: ids[t * batch + b].
struct TokenBatch {
  Index steps = 0;
  Index batch = 0;
  std::vector<int> ids;

  int at(Index t, Index b) const { return ids[static_cast<std::size_t>(t * batch + b)]; }
};

struct ForwardOptions {
  ScanOptions scan;
  bool diagnostics = false;
};

struct LayerDiagnostics {
  BlockDiagnostics block;
  BlockDiagnostics ffn;
};

template <typename Scalar>
struct ForwardOutput {
  Var<Scalar> logits;                   // [T, B, V]
  std::vector<Var<Scalar>> expected_k;  // 2L entries of [T, B], block then ffn per layer
  std::vector<LayerDiagnostics> layers;  // filled when diagnostics are requested
};

/// Embedding rows for each id: [T, B, D]. Throws std::out_of_range on bad ids.
template <typename Scalar>
Var<Scalar> embedding_lookup(Var<Scalar> embedding, const TokenBatch& tokens);

/// Embedding lookup then K-fold frame replication: [T*K, B, D].
template <typename Scalar>
Var<Scalar> encode(Var<Scalar> embedding, const TokenBatch& tokens, int k_steps);

/// One decoder layer (selective block sublayer then FFN sublayer).
template <typename Scalar>
Var<Scalar> decoder_layer(ParamBinding<Scalar>& params, const ModelConfig& cfg, int layer, Var<Scalar> h,
                          const ForwardOptions& opts, ForwardOutput<Scalar>* out = nullptr);

/// Decode head: logits [T, B, V].
template <typename Scalar>
Var<Scalar> decode(ParamBinding<Scalar>& params, const ModelConfig& cfg, Var<Scalar> h, const ForwardOptions& opts);

/// Surrogate sharpness is taken from cfg.surrogate_alpha.
template <typename Scalar>
ForwardOutput<Scalar> forward(ParamBinding<Scalar>& params, const ModelConfig& cfg, const TokenBatch& tokens,
                              const ForwardOptions& opts = {});

/// sum_r mask[r] * (logsumexp(logits[r]) - logits[r, target[r]]) / denominator.
/// An empty mask means all ones; denominator <= 0 means sum(mask).
template <typename Scalar>
Var<Scalar> cross_entropy(Var<Scalar> logits, const std::vector<int>& targets, const std::vector<float>& mask = {},
                          double denominator = 0);

template <typename Scalar>
struct LossParts {
  Var<Scalar> loss;    // ce + ponder
  Var<Scalar> ce;
  Var<Scalar> ponder;  // lambda * sum E[K] / ponder_denominator
  ForwardOutput<Scalar> forward;
};

struct LossOptions {
  ForwardOptions forward;
  double ce_denominator = 0;      // <= 0: sum of the mask
  double ponder_denominator = 0;  // <= 0: 2L * T * B (a plain mean)
};

template <typename Scalar>
LossParts<Scalar> model_loss(ParamBinding<Scalar>& params, const ModelConfig& cfg, const TokenBatch& inputs,
                             const std::vector<int>& targets, const std::vector<float>& mask,
                             const LossOptions& opts = {});

/// Forward-only logits for a batch.
template <typename Scalar>
Tensor<Scalar> logits(const Model<Scalar>& model, const TokenBatch& tokens, const ForwardOptions& opts = {});

// Checkpoints: "NSPK", u32 version, u32-length config text, u32 tensor count,
// then per tensor: u32 name length, name, u32 rank, u64 extents, f32 data (LE).
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const ParamStore<float>& params, const ModelConfig& cfg, const std::string& path);
Model<float> load_checkpoint(const std::string& path);

}  // namespace nspark

#include "nspark/reference.hpp"

#include <algorithm>
#include <stdexcept>

namespace nspark::oracle {

namespace {

ScalarTape& tape_of(const Reals& v) {
  if (v.empty() || v.front().tape == nullptr) throw std::invalid_argument("reference: empty or unbound input");
  return *v.front().tape;
}

const Reals& param(const RealMap& p, const std::string& name) {
  const auto it = p.find(name);
  if (it == p.end()) throw std::out_of_range("reference: missing parameter " + name);
  return it->second;
}

std::size_t u(Index i) { return static_cast<std::size_t>(i); }

}  // namespace

Reals linear_ref(const Reals& x, Index rows, Index in, const Reals& w, Index out) {
  ScalarTape& tape = tape_of(x);
  Reals y(u(rows * out));
  for (Index r = 0; r < rows; ++r) {
    for (Index o = 0; o < out; ++o) {
      Real acc = tape.constant(0);
      for (Index i = 0; i < in; ++i) acc += x[u(r * in + i)] * w[u(o * in + i)];
      y[u(r * out + o)] = acc;
    }
  }
  return y;
}

Reals plif_fixed_ref(const Reals& x, Index steps, Index lanes, const Reals& w, const Reals& v_th,
                     const RefOptions& opts) {
  ScalarTape& tape = tape_of(x);
  const Index channels = static_cast<Index>(w.size());
  Reals out(x.size());
  for (Index j = 0; j < lanes; ++j) {
    const Index c = j % channels;
    const Real beta = sigmoid(w[u(c)]);
    Real v = tape.constant(0);
    for (Index t = 0; t < steps; ++t) {
      const Real pre = beta * v + (1.0 - beta) * x[u(t * lanes + j)];
      const Real s = spike(pre - v_th[u(c)], opts.rule, opts.sharpness);
      v = pre - v_th[u(c)] * s;
      out[u(t * lanes + j)] = v;
    }
  }
  return out;
}

Reals plif_selective_ref(const Reals& current, const Reals& beta, const Reals& alpha, const Reals& v_th,
                         Index steps, Index lanes, const RefOptions& opts) {
  ScalarTape& tape = tape_of(current);
  Reals out(current.size());
  for (Index j = 0; j < lanes; ++j) {
    Real v = tape.constant(0);
    for (Index t = 0; t < steps; ++t) {
      const std::size_t i = u(t * lanes + j);
      const Real pre = beta[i] * v + alpha[i] * current[i];
      const Real s = spike(pre - v_th[i], opts.rule, opts.sharpness);
      v = pre - v_th[i] * s;
      out[i] = v;
    }
  }
  return out;
}

Reals leakage_ref(const Reals& v, const Reals& w) {
  Reals out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (1.0 - sigmoid(w[i % w.size()])) * v[i];
  return out;
}

Reals rms_norm_ref(const Reals& h, Index rows, Index d, const Reals& gamma, double eps) {
  ScalarTape& tape = tape_of(h);
  Reals out(h.size());
  for (Index r = 0; r < rows; ++r) {
    Real ss = tape.constant(0);
    for (Index i = 0; i < d; ++i) ss += h[u(r * d + i)] * h[u(r * d + i)];
    const Real rms = sqrt(ss / static_cast<double>(d) + eps);
    for (Index i = 0; i < d; ++i) out[u(r * d + i)] = gamma[u(i)] * h[u(r * d + i)] / rms;
  }
  return out;
}

Reals center_ref(const Reals& x, Index rows, Index d) {
  ScalarTape& tape = tape_of(x);
  Reals out(x.size());
  for (Index r = 0; r < rows; ++r) {
    Real s = tape.constant(0);
    for (Index i = 0; i < d; ++i) s += x[u(r * d + i)];
    const Real mean = s / static_cast<double>(d);
    for (Index i = 0; i < d; ++i) out[u(r * d + i)] = x[u(r * d + i)] - mean;
  }
  return out;
}

Reals snn_block_ref(const RealMap& p, const std::string& prefix, const Reals& leak, Index frames, Index batch,
                    Index d, Index n_state, double v_min, const RefOptions& opts) {
  const Index rows = frames * batch;
  const Index dn = d * n_state;
  const Reals cur = linear_ref(leak, rows, d, param(p, prefix + "W_in"), dn);
  const Reals zb = linear_ref(leak, rows, d, param(p, prefix + "W_beta"), dn);
  const Reals za = linear_ref(leak, rows, d, param(p, prefix + "W_alpha"), dn);
  const Reals zt = linear_ref(leak, rows, d, param(p, prefix + "W_th"), dn);
  const Reals zg = linear_ref(leak, rows, d, param(p, prefix + "W_gate"), d);
  const Reals skip = linear_ref(leak, rows, d, param(p, prefix + "W_skip"), d);
  const Reals& bb = param(p, prefix + "b_beta");
  const Reals& ba = param(p, prefix + "b_alpha");
  const Reals& bt = param(p, prefix + "b_th");
  Reals beta(cur.size()), alpha(cur.size()), th(cur.size());
  for (Index i = 0; i < rows * dn; ++i) {
    const Index n = i % dn;
    beta[u(i)] = sigmoid(zb[u(i)] + bb[u(n)]);
    alpha[u(i)] = softplus(za[u(i)] + ba[u(n)]);
    th[u(i)] = abs(zt[u(i)] + bt[u(n)]) + v_min;
  }
  const Reals v = plif_selective_ref(cur, beta, alpha, th, frames, batch * dn, opts);
  const Reals proj = linear_ref(v, rows, dn, param(p, prefix + "W_out"), d);
  Reals out(proj.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = proj[i] * sigmoid(zg[i]) + skip[i];
  return out;
}

Reals snn_ffn_ref(const RealMap& p, const std::string& prefix, const Reals& leak, Index frames, Index batch, Index d,
                  Index d_ff, const RefOptions& opts) {
  const Index rows = frames * batch;
  const Reals& gw = param(p, prefix + "gate_plif.w");
  const Reals& uw = param(p, prefix + "up_plif.w");
  const Reals gate = leakage_ref(plif_fixed_ref(linear_ref(leak, rows, d, param(p, prefix + "W_gate"), d_ff), frames,
                                                batch * d_ff, gw, param(p, prefix + "gate_plif.v_th"), opts),
                                 gw);
  const Reals up = leakage_ref(plif_fixed_ref(linear_ref(leak, rows, d, param(p, prefix + "W_up"), d_ff), frames,
                                              batch * d_ff, uw, param(p, prefix + "up_plif.v_th"), opts),
                               uw);
  Reals hidden(gate.size());
  for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i] = gate[i] * up[i];
  const Reals down = linear_ref(hidden, rows, d_ff, param(p, prefix + "W_down"), d);
  const Reals skip = linear_ref(leak, rows, d, param(p, prefix + "W_skip"), d);
  Reals out(down.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = down[i] + skip[i];
  return out;
}

PonderRef ponder_ref(const Reals& frames, Index tokens, Index k_steps, Index batch, Index d, const Reals& w_halt,
                     Real b_halt) {
  ScalarTape& tape = tape_of(frames);
  PonderRef r;
  r.output.resize(u(tokens * batch * d));
  r.lambda_hat.resize(u(tokens * batch * k_steps));
  r.expected_k.resize(u(tokens * batch));
  for (Index t = 0; t < tokens; ++t) {
    for (Index b = 0; b < batch; ++b) {
      Reals lambda;
      Real survival = tape.constant(1);
      Real total = tape.constant(0);
      for (Index k = 0; k < k_steps; ++k) {
        Real a = b_halt;
        for (Index i = 0; i < d; ++i) a += w_halt[u(i)] * frames[u(((t * k_steps + k) * batch + b) * d + i)];
        const Real pk = sigmoid(a);
        lambda.push_back(pk * survival);
        total += lambda.back();
        survival = survival * (1.0 - pk);
      }
      const Index tb = t * batch + b;
      Real ek = tape.constant(0);
      for (Index k = 0; k < k_steps; ++k) {
        const Real lh = lambda[u(k)] / total;
        r.lambda_hat[u(tb * k_steps + k)] = lh;
        ek += static_cast<double>(k + 1) * lh;
      }
      r.expected_k[u(tb)] = ek;
      for (Index i = 0; i < d; ++i) {
        Real acc = tape.constant(0);
        for (Index k = 0; k < k_steps; ++k) {
          acc += r.lambda_hat[u(tb * k_steps + k)] * frames[u(((t * k_steps + k) * batch + b) * d + i)];
        }
        r.output[u(tb * d + i)] = acc;
      }
    }
  }
  return r;
}

Reals model_logits_ref(const RealMap& p, const ModelConfig& cfg, const std::vector<int>& ids, Index steps,
                       Index batch, const RefOptions& opts, Reals* expected_k_all) {
  const Index d = cfg.d_model, k = cfg.k_steps, v = cfg.vocab_size;
  const Index frames = steps * k;
  const Reals& embed = param(p, "embed.weight");

  Reals h(u(frames * batch * d));
  for (Index t = 0; t < steps; ++t) {
    for (Index f = 0; f < k; ++f) {
      for (Index b = 0; b < batch; ++b) {
        for (Index i = 0; i < d; ++i) {
          h[u(((t * k + f) * batch + b) * d + i)] = embed[u(ids[u(t * batch + b)] * d + i)];
        }
      }
    }
  }

  auto sublayer = [&](const std::string& prefix, bool block) {
    const Reals norm = rms_norm_ref(h, frames * batch, d, param(p, prefix + "norm.gamma"));
    const Reals& w = param(p, prefix + "input_plif.w");
    const Reals leak = leakage_ref(plif_fixed_ref(norm, frames, batch * d, w, param(p, prefix + "input_plif.v_th"), opts), w);
    const Reals y = block ? snn_block_ref(p, prefix, leak, frames, batch, d, cfg.n_state, cfg.v_min, opts)
                          : snn_ffn_ref(p, prefix, leak, frames, batch, d, cfg.d_ff, opts);
    const PonderRef pr = ponder_ref(y, steps, k, batch, d, param(p, prefix + "halt.W"), param(p, prefix + "halt.b")[0]);
    if (expected_k_all) expected_k_all->insert(expected_k_all->end(), pr.expected_k.begin(), pr.expected_k.end());
    const Reals c = center_ref(linear_ref(pr.output, steps * batch, d, param(p, prefix + "out_proj"), d), steps * batch, d);
    for (Index t = 0; t < steps; ++t) {
      for (Index f = 0; f < k; ++f) {
        for (Index b = 0; b < batch; ++b) {
          for (Index i = 0; i < d; ++i) {
            Real& dst = h[u(((t * k + f) * batch + b) * d + i)];
            dst = dst + c[u((t * batch + b) * d + i)];
          }
        }
      }
    }
  };
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string base = "layers." + std::to_string(l) + ".";
    sublayer(base + "block.", true);
    sublayer(base + "ffn.", false);
  }

  ScalarTape& tape = tape_of(h);
  const Reals norm = rms_norm_ref(h, frames * batch, d, param(p, "decode.norm.gamma"));
  const Reals& w = param(p, "decode.output_plif.w");
  const Reals leak = leakage_ref(plif_fixed_ref(norm, frames, batch * d, w, param(p, "decode.output_plif.v_th"), opts), w);
  Reals pooled(u(steps * batch * d));
  for (Index t = 0; t < steps; ++t) {
    for (Index b = 0; b < batch; ++b) {
      for (Index i = 0; i < d; ++i) {
        Real acc = tape.constant(0);
        for (Index f = 0; f < k; ++f) acc += leak[u(((t * k + f) * batch + b) * d + i)];
        pooled[u((t * batch + b) * d + i)] = acc / static_cast<double>(k);
      }
    }
  }
  const Reals z = rms_norm_ref(linear_ref(pooled, steps * batch, d, param(p, "decode.proj"), d), steps * batch, d,
                               param(p, "decode.lateral.gamma"));
  return linear_ref(z, steps * batch, d, embed, v);
}

Real model_loss_ref(const RealMap& p, const ModelConfig& cfg, const std::vector<int>& ids,
                    const std::vector<int>& targets, Index steps, Index batch, const RefOptions& opts) {
  Reals ek;
  const Reals z = model_logits_ref(p, cfg, ids, steps, batch, opts, &ek);
  ScalarTape& tape = tape_of(z);
  const Index v = cfg.vocab_size;
  const Index rows = steps * batch;
  Real ce = tape.constant(0);
  for (Index r = 0; r < rows; ++r) {
    double mx = z[u(r * v)].value();
    for (Index j = 1; j < v; ++j) mx = std::max(mx, z[u(r * v + j)].value());
    Real s = tape.constant(0);
    for (Index j = 0; j < v; ++j) s += exp(z[u(r * v + j)] - mx);
    ce += log(s) + mx - z[u(r * v + targets[u(r)])];
  }
  Real ponder = tape.constant(0);
  for (const Real& e : ek) ponder += e;
  return ce / static_cast<double>(rows) + cfg.lambda_ponder * (ponder / static_cast<double>(ek.size()));
}

}  // namespace nspark::oracle

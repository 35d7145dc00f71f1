// Copyright (C) 2026 The condiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Conditional noise predictor with cross-attention conditioning.
//
//   input     x = [z_t | masked background]                        (2D)
//   tokens    H = reshape(W_in x + b_in) + W_time phi(t)           (n x w)
//   block     H += SiLU(H W_mlp^T + b_mlp)
//             H += softmax(Q K^T / sqrt(a)) V W_o^T,  Q = H W_q^T,
//                  K = C W_k^T, V = C W_v^T
//   output    eps_hat = W_out vec(H) + b_out                        (D)
//
// Condition tokens C are produced by two-layer adapters, one per identity
// embedding plus one for the expression embedding. Adapters are untied unless
// `tie_id_adapters` is set, in which case every identity token goes through
// adapter 0. Linear maps are stored [out, in], row-major.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "condiff/condition.hpp"
#include "condiff/numerics.hpp"
#include "condiff/samplers.hpp"
#include "condiff/world.hpp"

namespace condiff {

struct DenoiserConfig {
  int data_dim = 32;
  int num_tokens = 8;
  int token_width = 16;
  int num_blocks = 2;
  int attn_dim = 16;
  int cond_width = 16;
  int adapter_hidden = 16;
  int id_embed_dim = 3;
  int exp_embed_dim = 2;
  int num_id_adapters = 3;
  bool tie_id_adapters = false;

  [[nodiscard]] int hidden_size() const noexcept { return num_tokens * token_width; }

  void validate() const {
    if (data_dim < 1 || num_tokens < 1 || token_width < 2 || token_width % 2 != 0 ||
        num_blocks < 0 || attn_dim < 1 || cond_width < 1 || adapter_hidden < 1 ||
        id_embed_dim < 1 || exp_embed_dim < 1 || num_id_adapters < 1) {
      throw std::invalid_argument("DenoiserConfig: dimensions out of range");
    }
  }
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double silu(double x) { return x * sigmoid(x); }
inline double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

// y (+)= W x, W is [out, in]
inline void matvec(const double* w, int out, int in, const double* x, double* y, bool acc) {
  for (int o = 0; o < out; ++o) {
    const double* row = w + static_cast<std::ptrdiff_t>(o) * in;
    double s = acc ? y[o] : 0.0;
    for (int i = 0; i < in; ++i) s += row[i] * x[i];
    y[o] = s;
  }
}

// gx += W^T g
inline void matvec_t(const double* w, int out, int in, const double* g, double* gx) {
  for (int o = 0; o < out; ++o) {
    const double* row = w + static_cast<std::ptrdiff_t>(o) * in;
    const double go = g[o];
    if (go == 0.0) continue;
    for (int i = 0; i < in; ++i) gx[i] += row[i] * go;
  }
}

// gW += g x^T
inline void outer_acc(double* gw, int out, int in, const double* g, const double* x) {
  for (int o = 0; o < out; ++o) {
    double* row = gw + static_cast<std::ptrdiff_t>(o) * in;
    const double go = g[o];
    if (go == 0.0) continue;
    for (int i = 0; i < in; ++i) row[i] += go * x[i];
  }
}

}  // namespace detail

/// Sinusoidal timestep features of length `width` (sin half, then cos half).
inline std::vector<double> time_features(int t, int width) {
  std::vector<double> phi(static_cast<std::size_t>(width));
  const int half = width / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    phi[static_cast<std::size_t>(i)] = std::sin(t * freq);
    phi[static_cast<std::size_t>(half + i)] = std::cos(t * freq);
  }
  return phi;
}

class ConditionalDenoiser {
 public:
  /// Intermediate values of one forward pass, consumed by backward().
  struct Cache {
    struct Block {
      std::vector<double> h_in, pre, h_mid, q, k, v, attn, ctx;
    };
    struct Token {
      int adapter = 0;
      std::vector<double> embed, pre, act, out;
    };
    int t = 0;
    std::vector<double> x, phi, h0, h_final;
    std::vector<Block> blocks;
    std::vector<Token> tokens;
  };

  ConditionalDenoiser() = default;

  ConditionalDenoiser(DenoiserConfig cfg, ParamSet params)
      : cfg_(cfg), params_(std::move(params)) {
    cfg_.validate();
    if (!params_.same_layout(make_layout(cfg_))) {
      throw std::invalid_argument("ConditionalDenoiser: parameter layout does not match config");
    }
    bind();
  }

  /// Zero-valued parameter set with this config's names and shapes.
  static ParamSet make_layout(const DenoiserConfig& c) {
    const auto z = [](int a) { return static_cast<std::size_t>(a); };
    const int P = c.hidden_size();
    const int w = c.token_width;
    ParamSet p;
    p.add("in.w", Array({z(P), z(2 * c.data_dim)}));
    p.add("in.b", Array({z(P)}));
    p.add("time.w", Array({z(w), z(w)}));
    for (int b = 0; b < c.num_blocks; ++b) {
      const std::string pre = "block" + std::to_string(b) + ".";
      p.add(pre + "mlp.w", Array({z(w), z(w)}));
      p.add(pre + "mlp.b", Array({z(w)}));
      p.add(pre + "q", Array({z(c.attn_dim), z(w)}));
      p.add(pre + "k", Array({z(c.attn_dim), z(c.cond_width)}));
      p.add(pre + "v", Array({z(c.attn_dim), z(c.cond_width)}));
      p.add(pre + "o", Array({z(w), z(c.attn_dim)}));
    }
    for (int a = 0; a <= c.num_id_adapters; ++a) {
      const bool is_exp = a == c.num_id_adapters;
      const std::string pre = is_exp ? std::string("adapter.exp.") : "adapter.id" + std::to_string(a) + ".";
      const int in = is_exp ? c.exp_embed_dim : c.id_embed_dim;
      p.add(pre + "w1", Array({z(c.adapter_hidden), z(in)}));
      p.add(pre + "b1", Array({z(c.adapter_hidden)}));
      p.add(pre + "w2", Array({z(c.cond_width), z(c.adapter_hidden)}));
      p.add(pre + "b2", Array({z(c.cond_width)}));
    }
    p.add("out.w", Array({z(c.data_dim), z(P)}));
    p.add("out.b", Array({z(c.data_dim)}));
    return p;
  }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases. With
  /// `zero_output` the output projection starts at zero so eps_hat == 0.
  static ConditionalDenoiser initialize(const DenoiserConfig& cfg, Rng& rng,
                                        bool zero_output = true) {
    cfg.validate();
    ParamSet p = make_layout(cfg);
    for (std::size_t i = 0; i < p.size(); ++i) {
      Array& a = p[i];
      if (a.ndim() != 2) continue;
      if (zero_output && p.name(i) == "out.w") continue;
      const double bound = 1.0 / std::sqrt(static_cast<double>(a.shape()[1]));
      for (double& v : a.data()) v = bound * (2.0 * rng.uniform() - 1.0);
    }
    if (!zero_output) {
      for (double& v : p.at("out.b").data()) v = 0.1 * (2.0 * rng.uniform() - 1.0);
    }
    return ConditionalDenoiser(cfg, std::move(p));
  }

  [[nodiscard]] const DenoiserConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] const ParamSet& params() const noexcept { return params_; }
  /// Mutable access; layout must not change.
  [[nodiscard]] ParamSet& params() noexcept { return params_; }

  [[nodiscard]] Array forward(const Array& zt, int t, const ConditionBundle& cond) const {
    Cache cache;
    return forward(zt, t, cond, cache);
  }

  Array forward(const Array& zt, int t, const ConditionBundle& cond, Cache& cache) const {
    const int D = cfg_.data_dim, n = cfg_.num_tokens, w = cfg_.token_width, a = cfg_.attn_dim;
    const int P = cfg_.hidden_size(), cw = cfg_.cond_width, h = cfg_.adapter_hidden;
    check_inputs(zt, cond);
    cache.t = t;

    cache.x.resize(static_cast<std::size_t>(2 * D));
    std::copy(zt.data().begin(), zt.data().end(), cache.x.begin());
    std::copy(cond.masked_bkg.data().begin(), cond.masked_bkg.data().end(), cache.x.begin() + D);

    // Condition tokens.
    const std::size_t n_id = cond.id_embeds.size();
    const std::size_t nc = n_id + 1;
    cache.tokens.resize(nc);
    for (std::size_t j = 0; j < nc; ++j) {
      Cache::Token& tok = cache.tokens[j];
      const bool is_exp = j == n_id;
      tok.adapter = is_exp ? cfg_.num_id_adapters
                           : (cfg_.tie_id_adapters ? 0 : static_cast<int>(j));
      const Array& e = is_exp ? cond.exp_embed : cond.id_embeds[j];
      tok.embed.assign(e.data().begin(), e.data().end());
      const Adapter& ad = adapters_[static_cast<std::size_t>(tok.adapter)];
      const int in = static_cast<int>(tok.embed.size());
      tok.pre.resize(static_cast<std::size_t>(h));
      tok.act.resize(static_cast<std::size_t>(h));
      tok.out.resize(static_cast<std::size_t>(cw));
      std::copy_n(params_[ad.b1].ptr(), h, tok.pre.begin());
      detail::matvec(params_[ad.w1].ptr(), h, in, tok.embed.data(), tok.pre.data(), true);
      for (int i = 0; i < h; ++i) tok.act[i] = detail::silu(tok.pre[i]);
      std::copy_n(params_[ad.b2].ptr(), cw, tok.out.begin());
      detail::matvec(params_[ad.w2].ptr(), cw, h, tok.act.data(), tok.out.data(), true);
    }

    // Input projection and time features.
    cache.phi = time_features(t, w);
    cache.h0.resize(static_cast<std::size_t>(P));
    std::copy_n(params_[in_b_].ptr(), P, cache.h0.begin());
    detail::matvec(params_[in_w_].ptr(), P, 2 * D, cache.x.data(), cache.h0.data(), true);
    std::vector<double> tvec(static_cast<std::size_t>(w));
    detail::matvec(params_[time_w_].ptr(), w, w, cache.phi.data(), tvec.data(), false);
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < w; ++c) cache.h0[static_cast<std::size_t>(i * w + c)] += tvec[c];
    }

    std::vector<double> hcur = cache.h0;
    cache.blocks.resize(blocks_.size());
    const double scale = 1.0 / std::sqrt(static_cast<double>(a));
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const BlockIdx& bi = blocks_[b];
      Cache::Block& cb = cache.blocks[b];
      cb.h_in = hcur;
      cb.pre.resize(static_cast<std::size_t>(P));
      for (int i = 0; i < n; ++i) {
        double* pre = cb.pre.data() + i * w;
        std::copy_n(params_[bi.mlp_b].ptr(), w, pre);
        detail::matvec(params_[bi.mlp_w].ptr(), w, w, cb.h_in.data() + i * w, pre, true);
      }
      cb.h_mid = cb.h_in;
      for (int i = 0; i < P; ++i) cb.h_mid[i] += detail::silu(cb.pre[i]);

      cb.q.resize(static_cast<std::size_t>(n * a));
      for (int i = 0; i < n; ++i) {
        detail::matvec(params_[bi.q].ptr(), a, w, cb.h_mid.data() + i * w, cb.q.data() + i * a,
                       false);
      }
      cb.k.resize(nc * static_cast<std::size_t>(a));
      cb.v.resize(nc * static_cast<std::size_t>(a));
      for (std::size_t j = 0; j < nc; ++j) {
        detail::matvec(params_[bi.k].ptr(), a, cw, cache.tokens[j].out.data(),
                       cb.k.data() + j * a, false);
        detail::matvec(params_[bi.v].ptr(), a, cw, cache.tokens[j].out.data(),
                       cb.v.data() + j * a, false);
      }
      cb.attn.resize(static_cast<std::size_t>(n) * nc);
      cb.ctx.assign(static_cast<std::size_t>(n * a), 0.0);
      for (int i = 0; i < n; ++i) {
        double* row = cb.attn.data() + i * nc;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < nc; ++j) {
          double s = 0.0;
          for (int c = 0; c < a; ++c) s += cb.q[i * a + c] * cb.k[j * a + c];
          row[j] = s * scale;
          mx = std::max(mx, row[j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < nc; ++j) {
          row[j] = std::exp(row[j] - mx);
          total += row[j];
        }
        for (std::size_t j = 0; j < nc; ++j) row[j] /= total;
        for (std::size_t j = 0; j < nc; ++j) {
          for (int c = 0; c < a; ++c) cb.ctx[i * a + c] += row[j] * cb.v[j * a + c];
        }
      }
      hcur = cb.h_mid;
      for (int i = 0; i < n; ++i) {
        detail::matvec(params_[bi.o].ptr(), w, a, cb.ctx.data() + i * a, hcur.data() + i * w,
                       true);
      }
    }
    cache.h_final = std::move(hcur);

    Array out({static_cast<std::size_t>(D)});
    std::copy_n(params_[out_b_].ptr(), D, out.ptr());
    detail::matvec(params_[out_w_].ptr(), D, P, cache.h_final.data(), out.ptr(), true);
    return out;
  }

  /// Reverse pass for the forward call recorded in `cache`. Accumulates
  /// parameter gradients into `grads` (which must share the parameter layout)
  /// and returns the gradient with respect to z_t.
  Array backward(const Cache& cache, const Array& upstream, ParamSet& grads) const {
    const int D = cfg_.data_dim, n = cfg_.num_tokens, w = cfg_.token_width, a = cfg_.attn_dim;
    const int P = cfg_.hidden_size(), cw = cfg_.cond_width, h = cfg_.adapter_hidden;
    if (upstream.size() != static_cast<std::size_t>(D)) {
      throw std::invalid_argument("ConditionalDenoiser::backward: upstream size mismatch");
    }
    const std::size_t nc = cache.tokens.size();

    // Output projection.
    {
      double* gb = grads[out_b_].ptr();
      for (int i = 0; i < D; ++i) gb[i] += upstream[static_cast<std::size_t>(i)];
    }
    detail::outer_acc(grads[out_w_].ptr(), D, P, upstream.ptr(), cache.h_final.data());
    std::vector<double> gh(static_cast<std::size_t>(P), 0.0);
    detail::matvec_t(params_[out_w_].ptr(), D, P, upstream.ptr(), gh.data());

    std::vector<std::vector<double>> gtok(nc, std::vector<double>(static_cast<std::size_t>(cw), 0.0));
    const double scale = 1.0 / std::sqrt(static_cast<double>(a));
    std::vector<double> gctx, gattn(nc), gscore(nc), gq(static_cast<std::size_t>(a));
    std::vector<double> gk, gv;

    for (std::size_t bb = blocks_.size(); bb-- > 0;) {
      const BlockIdx& bi = blocks_[bb];
      const Cache::Block& cb = cache.blocks[bb];

      // h_out = h_mid + ctx W_o^T
      gctx.assign(static_cast<std::size_t>(n * a), 0.0);
      for (int i = 0; i < n; ++i) {
        detail::outer_acc(grads[bi.o].ptr(), w, a, gh.data() + i * w, cb.ctx.data() + i * a);
        detail::matvec_t(params_[bi.o].ptr(), w, a, gh.data() + i * w, gctx.data() + i * a);
      }
      // gh now flows into h_mid unchanged; add attention contributions.
      gk.assign(nc * static_cast<std::size_t>(a), 0.0);
      gv.assign(nc * static_cast<std::size_t>(a), 0.0);
      for (int i = 0; i < n; ++i) {
        const double* row = cb.attn.data() + i * nc;
        const double* gc = gctx.data() + i * a;
        double dot_sum = 0.0;
        for (std::size_t j = 0; j < nc; ++j) {
          double s = 0.0;
          for (int c = 0; c < a; ++c) {
            s += gc[c] * cb.v[j * a + c];
            gv[j * a + c] += row[j] * gc[c];
          }
          gattn[j] = s;
          dot_sum += row[j] * s;
        }
        std::fill(gq.begin(), gq.end(), 0.0);
        for (std::size_t j = 0; j < nc; ++j) {
          gscore[j] = row[j] * (gattn[j] - dot_sum) * scale;
          for (int c = 0; c < a; ++c) {
            gq[c] += gscore[j] * cb.k[j * a + c];
            gk[j * a + c] += gscore[j] * cb.q[i * a + c];
          }
        }
        detail::outer_acc(grads[bi.q].ptr(), a, w, gq.data(), cb.h_mid.data() + i * w);
        detail::matvec_t(params_[bi.q].ptr(), a, w, gq.data(), gh.data() + i * w);
      }
      for (std::size_t j = 0; j < nc; ++j) {
        const double* c_out = cache.tokens[j].out.data();
        detail::outer_acc(grads[bi.k].ptr(), a, cw, gk.data() + j * a, c_out);
        detail::outer_acc(grads[bi.v].ptr(), a, cw, gv.data() + j * a, c_out);
        detail::matvec_t(params_[bi.k].ptr(), a, cw, gk.data() + j * a, gtok[j].data());
        detail::matvec_t(params_[bi.v].ptr(), a, cw, gv.data() + j * a, gtok[j].data());
      }

      // h_mid = h_in + SiLU(pre)
      std::vector<double> gpre(static_cast<std::size_t>(w));
      for (int i = 0; i < n; ++i) {
        for (int c = 0; c < w; ++c) {
          const std::size_t idx = static_cast<std::size_t>(i * w + c);
          gpre[c] = gh[idx] * detail::silu_grad(cb.pre[idx]);
        }
        double* gbias = grads[bi.mlp_b].ptr();
        for (int c = 0; c < w; ++c) gbias[c] += gpre[c];
        detail::outer_acc(grads[bi.mlp_w].ptr(), w, w, gpre.data(), cb.h_in.data() + i * w);
        detail::matvec_t(params_[bi.mlp_w].ptr(), w, w, gpre.data(), gh.data() + i * w);
      }
    }

    // Time features: every token received W_time phi.
    {
      std::vector<double> gt(static_cast<std::size_t>(w), 0.0);
      for (int i = 0; i < n; ++i) {
        for (int c = 0; c < w; ++c) gt[c] += gh[static_cast<std::size_t>(i * w + c)];
      }
      detail::outer_acc(grads[time_w_].ptr(), w, w, gt.data(), cache.phi.data());
    }
    // Input projection.
    {
      double* gb = grads[in_b_].ptr();
      for (int i = 0; i < P; ++i) gb[i] += gh[static_cast<std::size_t>(i)];
    }
    detail::outer_acc(grads[in_w_].ptr(), P, 2 * D, gh.data(), cache.x.data());
    std::vector<double> gx(static_cast<std::size_t>(2 * D), 0.0);
    detail::matvec_t(params_[in_w_].ptr(), P, 2 * D, gh.data(), gx.data());

    // Adapters.
    for (std::size_t j = 0; j < nc; ++j) {
      const Cache::Token& tok = cache.tokens[j];
      const Adapter& ad = adapters_[static_cast<std::size_t>(tok.adapter)];
      const int in = static_cast<int>(tok.embed.size());
      double* gb2 = grads[ad.b2].ptr();
      for (int c = 0; c < cw; ++c) gb2[c] += gtok[j][c];
      detail::outer_acc(grads[ad.w2].ptr(), cw, h, gtok[j].data(), tok.act.data());
      std::vector<double> gact(static_cast<std::size_t>(h), 0.0);
      detail::matvec_t(params_[ad.w2].ptr(), cw, h, gtok[j].data(), gact.data());
      for (int c = 0; c < h; ++c) gact[c] *= detail::silu_grad(tok.pre[c]);
      double* gb1 = grads[ad.b1].ptr();
      for (int c = 0; c < h; ++c) gb1[c] += gact[c];
      detail::outer_acc(grads[ad.w1].ptr(), h, in, gact.data(), tok.embed.data());
    }

    Array gz({static_cast<std::size_t>(D)});
    std::copy_n(gx.begin(), D, gz.ptr());
    return gz;
  }

  /// Attention weights of block b from a cached pass, [num_tokens x n_cond].
  static std::vector<double> attention_weights(const Cache& cache, std::size_t b) {
    return cache.blocks.at(b).attn;
  }

  /// Callable view for samplers. The denoiser must outlive the returned object.
  [[nodiscard]] Denoiser as_denoiser() const {
    return [this](const Array& zt, int t, const ConditionBundle& c) { return forward(zt, t, c); };
  }

 private:
  struct BlockIdx {
    std::size_t mlp_w, mlp_b, q, k, v, o;
  };
  struct Adapter {
    std::size_t w1, b1, w2, b2;
  };

  void bind() {
    in_w_ = params_.find("in.w");
    in_b_ = params_.find("in.b");
    time_w_ = params_.find("time.w");
    out_w_ = params_.find("out.w");
    out_b_ = params_.find("out.b");
    blocks_.clear();
    for (int b = 0; b < cfg_.num_blocks; ++b) {
      const std::string pre = "block" + std::to_string(b) + ".";
      blocks_.push_back({params_.find(pre + "mlp.w"), params_.find(pre + "mlp.b"),
                         params_.find(pre + "q"), params_.find(pre + "k"), params_.find(pre + "v"),
                         params_.find(pre + "o")});
    }
    adapters_.clear();
    for (int a = 0; a <= cfg_.num_id_adapters; ++a) {
      const std::string pre = a == cfg_.num_id_adapters ? std::string("adapter.exp.")
                                                        : "adapter.id" + std::to_string(a) + ".";
      adapters_.push_back({params_.find(pre + "w1"), params_.find(pre + "b1"),
                           params_.find(pre + "w2"), params_.find(pre + "b2")});
    }
  }

  void check_inputs(const Array& zt, const ConditionBundle& cond) const {
    const auto D = static_cast<std::size_t>(cfg_.data_dim);
    if (zt.size() != D || cond.masked_bkg.size() != D) {
      throw std::invalid_argument("ConditionalDenoiser: state or background size mismatch");
    }
    if (cond.id_embeds.empty() ||
        cond.id_embeds.size() > static_cast<std::size_t>(cfg_.num_id_adapters)) {
      throw std::invalid_argument("ConditionalDenoiser: identity embedding count out of range");
    }
    for (const Array& e : cond.id_embeds) {
      if (e.size() != static_cast<std::size_t>(cfg_.id_embed_dim)) {
        throw std::invalid_argument("ConditionalDenoiser: identity embedding size mismatch");
      }
    }
    if (cond.exp_embed.size() != static_cast<std::size_t>(cfg_.exp_embed_dim)) {
      throw std::invalid_argument("ConditionalDenoiser: expression embedding size mismatch");
    }
  }

  DenoiserConfig cfg_;
  ParamSet params_;
  std::size_t in_w_ = 0, in_b_ = 0, time_w_ = 0, out_w_ = 0, out_b_ = 0;
  std::vector<BlockIdx> blocks_;
  std::vector<Adapter> adapters_;
};

struct ConditionOptions {
  int num_id_embeds = 3;
  /// When false the background channel carries only the face mask, so the
  /// model never sees background pixels through its conditioning input.
  bool use_bkg_condition = true;
};

/// C = [M (.) I_bkg, E_id(I_id), E_exp(I_exp)]. Passing the same sample three
/// times gives the matched (reconstruction) condition; distinct sources give
/// the swapping condition.
inline ConditionBundle build_condition(const FactorSample& bkg, const FactorSample& id_src,
                                       const FactorSample& exp_src, const OracleEncoders& enc,
                                       const ConditionOptions& opt = {}) {
  ConditionBundle c;
  c.masked_bkg = opt.use_bkg_condition ? mask_background(bkg.x0, bkg.mask) : bkg.mask;
  c.id_embeds = enc.identity_embeds(id_src.x0, opt.num_id_embeds);
  c.exp_embed = enc.expression(exp_src.x0);
  return c;
}

}  // namespace condiff

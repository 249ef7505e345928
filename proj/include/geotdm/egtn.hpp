#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "geotdm/autodiff.hpp"
#include "geotdm/geom.hpp"

namespace geotdm {

// Sinusoidal embedding of a (possibly negative or fractional) position:
// pairs (sin(k * f_i), cos(k * f_i)) with f_i = base^(-2i/dim).
template <class S>
Tensor<S> sinusoidal_embedding(double k, int dim, double base = 10000.0) {
  if (dim % 2 != 0) throw std::invalid_argument("sinusoidal embedding dim must be even");
  Tensor<S> out({dim});
  for (int i = 0; i < dim / 2; ++i) {
    double freq = std::pow(base, -2.0 * i / dim);
    out[2 * i] = static_cast<S>(std::sin(k * freq));
    out[2 * i + 1] = static_cast<S>(std::cos(k * freq));
  }
  return out;
}

struct EgtnConfig {
  int n_layers = 6;
  int hidden_dim = 128;
  int time_emb_dim = 32;
  int n_heads = 1;
  int feat_dim = 1;   // node feature width of the data
  int space_dim = 3;
  bool conditional = false;
  int t_target = 0;   // frame-gain length; required when conditional
};

// Per-sample edge lists over a shared node count. Batched graph ops flatten
// nodes to rows (b*T + t)*N + n and gather/scatter along edges.
struct GraphBatch {
  int64_t n_batch = 0;
  int64_t n_nodes = 0;
  std::vector<std::vector<std::array<int32_t, 2>>> edges;  // (src, dst) per sample
};

// Flattened (src_row, dst_row) indices replicated over frames.
void build_edge_rows(const GraphBatch& g, int64_t frames,
                     std::vector<int64_t>& src_rows, std::vector<int64_t>& dst_rows);

// ---- parameter blocks -------------------------------------------------------

// Linear chain with SiLU on hidden layers and a linear output.
template <class S>
struct Mlp {
  std::vector<Var<S>> W, b;

  static Mlp create(Rng& rng, const std::vector<int64_t>& widths, bool zero_last = false) {
    Mlp m;
    for (size_t i = 0; i + 1 < widths.size(); ++i) {
      int64_t fin = widths[i], fout = widths[i + 1];
      double bound = 1.0 / std::sqrt(static_cast<double>(fin));
      bool zero = zero_last && i + 2 == widths.size();
      Tensor<S> w = zero ? Tensor<S>::zeros({fin, fout})
                         : ag::randu_tensor<S>(rng, {fin, fout}, -bound, bound);
      Tensor<S> bias = zero ? Tensor<S>::zeros({fout})
                            : ag::randu_tensor<S>(rng, {fout}, -bound, bound);
      m.W.push_back(ag::parameter(std::move(w)));
      m.b.push_back(ag::parameter(std::move(bias)));
    }
    return m;
  }

  Var<S> forward(Var<S> x) const {
    for (size_t i = 0; i < W.size(); ++i) {
      x = ag::linear(x, W[i], b[i]);
      if (i + 1 < W.size()) x = ag::silu(x);
    }
    return x;
  }

  void visit(const std::string& prefix,
             const std::function<void(const std::string&, Var<S>&)>& fn) {
    for (size_t i = 0; i < W.size(); ++i) {
      fn(prefix + ".w" + std::to_string(i), W[i]);
      fn(prefix + ".b" + std::to_string(i), b[i]);
    }
  }
};

template <class S>
struct EgclParams {
  Mlp<S> msg;   // (h_dst, h_src, dist) -> message
  Mlp<S> feat;  // (h, aggregated message) -> h'
  Mlp<S> gate;  // message -> per-edge displacement scale, zero-initialized
};

template <class S>
struct AttnParams {
  Mlp<S> query, key, value;
  Mlp<S> gate;  // per-(t,s) value -> displacement scale, zero-initialized
};

template <class S>
struct EgtnLayer {
  EgclParams<S> egcl;
  AttnParams<S> attn;
};

template <class S>
struct EgtnStack {
  std::vector<EgtnLayer<S>> layers;
};

template <class S>
struct EgtnModel {
  EgtnConfig cfg;
  Mlp<S> time_proj;      // diffusion-step embedding projection
  EgtnStack<S> stack;
  // Conditional models also carry the prior: a 2-layer inner network, a
  // scalar head on its output features, and per-target-frame gains.
  EgtnStack<S> prior_net;
  Mlp<S> prior_head;
  Var<S> frame_gain;     // [t_target]

  static EgtnModel create(const EgtnConfig& cfg, Rng& rng);
  void visit_params(const std::function<void(const std::string&, Var<S>&)>& fn);
  std::vector<Var<S>> params();
  int64_t param_count();
};

// ---- batched streams ---------------------------------------------------------

template <class S>
struct StreamBatch {
  Var<S> coords;  // [B, T, N, D]
  Var<S> feats;   // [B, T, N, F]
};

// ---- layer forwards -----------------------------------------------------------

namespace detail {

template <class S>
Var<S> center_per_sample(Var<S> x) {
  const Shape& s = x->value.shape();
  int64_t B = s[0], rows = s[1] * s[2], D = s[3];
  Var<S> flat = ag::reshape(x, {B, rows, D});
  Var<S> m = ag::mean_axis(flat, 1, true);
  return ag::reshape(ag::sub(flat, m), s);
}

}  // namespace detail

// One equivariant graph convolution applied independently to every frame.
template <class S>
StreamBatch<S> egcl_forward(const StreamBatch<S>& in, const GraphBatch& g,
                            const EgclParams<S>& p) {
  const Shape& cs = in.coords->value.shape();
  int64_t B = cs[0], T = cs[1], N = cs[2], D = cs[3];
  int64_t F = in.feats->value.shape()[3];
  int64_t R = B * T * N;
  Var<S> x2 = ag::reshape(in.coords, {R, D});
  Var<S> h2 = ag::reshape(in.feats, {R, F});
  auto src = std::make_shared<std::vector<int64_t>>();
  auto dst = std::make_shared<std::vector<int64_t>>();
  build_edge_rows(g, T, *src, *dst);
  Var<S> hi = ag::gather_rows(h2, dst);
  Var<S> hj = ag::gather_rows(h2, src);
  Var<S> xi = ag::gather_rows(x2, dst);
  Var<S> xj = ag::gather_rows(x2, src);
  Var<S> dvec = ag::sub(xi, xj);
  Var<S> dist = ag::norm_last(dvec, S(1e-8));
  Var<S> msg = p.msg.forward(ag::concat<S>({hi, hj, dist}, 1));
  Var<S> agg = ag::scatter_add_rows(msg, dst, R);
  Var<S> hout = p.feat.forward(ag::concat<S>({h2, agg}, 1));
  Var<S> gate = p.gate.forward(msg);
  Var<S> xout = ag::add(x2, ag::scatter_add_rows(ag::mul(gate, dvec), dst, R));
  return {ag::reshape(xout, {B, T, N, D}), ag::reshape(hout, {B, T, N, hout->value.dim(1)})};
}

// Attention across frames for each node. Keys, values, and displacement
// sources are the target frames themselves plus, when given, the condition
// frames, under one joint softmax. The relative-position table psi(t - s) is
// added to keys and values after projection; a scalar gate on each (t, s)
// value weights the coordinate differences.
template <class S>
StreamBatch<S> attention_forward(const StreamBatch<S>& self, const std::vector<int64_t>& times,
                                 const StreamBatch<S>* cond,
                                 const std::vector<int64_t>& cond_times,
                                 const AttnParams<S>& p, int n_heads) {
  const Shape& cs = self.coords->value.shape();
  int64_t B = cs[0], T = cs[1], N = cs[2], D = cs[3];
  int64_t F = self.feats->value.shape()[3];
  if (F % n_heads != 0) throw std::invalid_argument("hidden width not divisible by heads");
  int64_t M = B * N;
  auto to_m = [&](Var<S> v, int64_t frames) {
    return ag::reshape(ag::transpose(v, {0, 2, 1, 3}), {M, frames, v->value.shape()[3]});
  };
  Var<S> xq = to_m(self.coords, T);
  Var<S> hq = to_m(self.feats, T);
  Var<S> xs = xq, hs = hq;
  std::vector<int64_t> src_times = times;
  if (cond) {
    int64_t Tc = cond->coords->value.shape()[1];
    Var<S> xc = to_m(cond->coords, Tc);
    Var<S> hc = to_m(cond->feats, Tc);
    xs = ag::concat<S>({xc, xq}, 1);
    hs = ag::concat<S>({hc, hq}, 1);
    src_times = cond_times;
    src_times.insert(src_times.end(), times.begin(), times.end());
  }
  int64_t Sn = static_cast<int64_t>(src_times.size());
  Var<S> q = p.query.forward(hq);
  Var<S> k = p.key.forward(hs);
  Var<S> v = p.value.forward(hs);
  // psi[t][s][:] = embedding of the signed frame offset t - s
  Tensor<S> psi({T, Sn, F});
  for (int64_t t = 0; t < T; ++t)
    for (int64_t s = 0; s < Sn; ++s) {
      Tensor<S> e = sinusoidal_embedding<S>(
          static_cast<double>(times[t] - src_times[s]), static_cast<int>(F));
      std::copy_n(e.data(), F, psi.data() + (t * Sn + s) * F);
    }
  int64_t fh = F / n_heads;
  std::vector<Var<S>> h_upds;
  Var<S> x_upd;
  for (int head = 0; head < n_heads; ++head) {
    Var<S> qh = n_heads == 1 ? q : ag::slice(q, 2, head * fh, fh);
    Var<S> kh = n_heads == 1 ? k : ag::slice(k, 2, head * fh, fh);
    Var<S> vh = n_heads == 1 ? v : ag::slice(v, 2, head * fh, fh);
    auto psih = std::make_shared<Tensor<S>>(Tensor<S>({T, Sn, fh}));
    for (int64_t t = 0; t < T; ++t)
      for (int64_t s = 0; s < Sn; ++s)
        std::copy_n(psi.data() + (t * Sn + s) * F + head * fh, fh,
                    psih->data() + (t * Sn + s) * fh);
    Var<S> scores = ag::add(ag::matmul(qh, ag::transpose(kh, {0, 2, 1})),
                            ag::score_pos(qh, psih));
    Var<S> a = ag::softmax_last(scores);  // [M, T, Sn]
    h_upds.push_back(ag::add(ag::matmul(a, vh), ag::pos_mix(a, psih)));
    Var<S> v_pair = ag::add(ag::reshape(vh, {M, 1, Sn, fh}),
                            ag::constant(psih->reshaped({1, T, Sn, fh})));
    Var<S> gate = ag::reshape(p.gate.forward(v_pair), {M, T, Sn});
    Var<S> w = ag::mul(a, gate);
    Var<S> row = ag::sum_axis(w, 2, true);                       // [M, T, 1]
    Var<S> xu = ag::sub(ag::mul(row, xq), ag::matmul(w, xs));    // [M, T, D]
    x_upd = head == 0 ? xu : ag::add(x_upd, xu);
  }
  Var<S> hout = ag::add(hq, n_heads == 1 ? h_upds[0] : ag::concat(h_upds, 2));
  Var<S> xout = ag::add(xq, x_upd);
  auto from_m = [&](Var<S> m, int64_t width) {
    return ag::transpose(ag::reshape(m, {B, N, T, width}), {0, 2, 1, 3});
  };
  return {from_m(xout, D), from_m(hout, F)};
}

// ---- model forward -------------------------------------------------------------

template <class S>
struct EgtnOut {
  Var<S> coords, feats;        // target stream
  Var<S> cond_coords, cond_feats;  // condition stream after the last layer
};

template <class S>
Var<S> time_embedding_rows(const EgtnModel<S>& m, const std::vector<int>& taus) {
  int64_t B = static_cast<int64_t>(taus.size());
  int dim = m.cfg.time_emb_dim;
  Tensor<S> rows({B, dim});
  for (int64_t b = 0; b < B; ++b) {
    Tensor<S> e = sinusoidal_embedding<S>(static_cast<double>(taus[b]), dim);
    std::copy_n(e.data(), dim, rows.data() + b * dim);
  }
  return m.time_proj.forward(ag::constant(std::move(rows)));
}

template <class S>
Var<S> broadcast_node_feats(Var<S> h_node /*[B,N,Dh]*/, int64_t T) {
  const Shape& s = h_node->value.shape();
  return ag::expand(ag::reshape(h_node, {s[0], 1, s[1], s[2]}), {s[0], T, s[1], s[2]});
}

// Runs the alternating EGCL / attention stack. `taus` may be empty for
// networks without a diffusion-step input (the prior). When `x_cond` is
// non-null the condition stream is refreshed through the same layers and
// target frames cross-attend to it.
template <class S>
EgtnOut<S> egtn_stack_forward(const EgtnStack<S>& stack, Var<S> x, Var<S> h0,
                              const GraphBatch& g, const std::vector<int64_t>& times,
                              Var<S> x_cond, Var<S> h0_cond,
                              const std::vector<int64_t>& cond_times, int n_heads) {
  StreamBatch<S> tgt{x, h0};
  bool has_cond = static_cast<bool>(x_cond);
  StreamBatch<S> cnd{x_cond, h0_cond};
  for (const auto& layer : stack.layers) {
    tgt = egcl_forward(tgt, g, layer.egcl);
    if (has_cond) {
      cnd = egcl_forward(cnd, g, layer.egcl);
      cnd = attention_forward<S>(cnd, cond_times, nullptr, {}, layer.attn, n_heads);
      tgt = attention_forward<S>(tgt, times, &cnd, cond_times, layer.attn, n_heads);
    } else {
      tgt = attention_forward<S>(tgt, times, nullptr, {}, layer.attn, n_heads);
    }
  }
  return {tgt.coords, tgt.feats, cnd.coords, cnd.feats};
}

template <class S>
EgtnOut<S> egtn_forward(const EgtnModel<S>& m, Var<S> x /*[B,T,N,D]*/,
                        Var<S> h_node /*[B,N,Dh]*/, const GraphBatch& g,
                        const std::vector<int>& taus,
                        const std::vector<int64_t>& times,
                        Var<S> x_cond = nullptr,
                        const std::vector<int64_t>& cond_times = {}) {
  int64_t B = x->value.shape()[0], T = x->value.shape()[1], N = x->value.shape()[2];
  Var<S> emb = time_embedding_rows(m, taus);  // [B, E]
  int64_t E = emb->value.dim(1);
  auto with_emb = [&](int64_t frames) {
    return ag::expand(ag::reshape(emb, {B, 1, 1, E}), {B, frames, N, E});
  };
  Var<S> h0 = ag::concat<S>({broadcast_node_feats(h_node, T), with_emb(T)}, 3);
  Var<S> h0c = nullptr;
  if (x_cond) {
    int64_t Tc = x_cond->value.shape()[1];
    h0c = ag::concat<S>({broadcast_node_feats(h_node, Tc), with_emb(Tc)}, 3);
  }
  return egtn_stack_forward(m.stack, x, h0, g, times, x_cond, h0c, cond_times, m.cfg.n_heads);
}

inline std::vector<int64_t> default_times(int64_t T, int64_t offset = 0) {
  std::vector<int64_t> t(T);
  for (int64_t i = 0; i < T; ++i) t[i] = i + offset;
  return t;
}

// Noise prediction in the zero-CoM subspace: network displacement, projected.
template <class S>
Var<S> predict_eps_uncond(const EgtnModel<S>& m, Var<S> x, Var<S> h_node, const GraphBatch& g,
                          const std::vector<int>& taus) {
  int64_t T = x->value.shape()[1];
  EgtnOut<S> out = egtn_forward(m, x, h_node, g, taus, default_times(T));
  return detail::center_per_sample(ag::sub(out.coords, x));
}

// Ambient noise prediction for the conditional model. Condition frames sit at
// negative offsets by default; interpolation passes explicit offsets.
template <class S>
Var<S> predict_eps_cond(const EgtnModel<S>& m, Var<S> x, Var<S> x_cond, Var<S> h_node,
                        const GraphBatch& g, const std::vector<int>& taus,
                        const std::vector<int64_t>& times = {},
                        const std::vector<int64_t>& cond_times = {}) {
  int64_t T = x->value.shape()[1];
  int64_t Tc = x_cond->value.shape()[1];
  std::vector<int64_t> tt = times.empty() ? default_times(T) : times;
  std::vector<int64_t> ct = cond_times.empty() ? default_times(Tc, -Tc) : cond_times;
  EgtnOut<S> out = egtn_forward(m, x, h_node, g, taus, tt, x_cond, ct);
  return ag::sub(out.coords, x);
}

// ---- equivariant prior -----------------------------------------------------------

template <class S>
struct PriorOut {
  Var<S> anchor;     // [B, T, N, D]
  Var<S> weights;    // [B, T, Tc, N], rows sum to one over Tc
  Var<S> coords;     // inner network coordinate output [B, Tc, N, D]
  Var<S> head_vals;  // inner network scalar head [B, Tc, N]
};

// Mixes x_hat frames with weights gamma_t * head_vals[s], assigning the
// sum-to-one remainder to the last condition frame.
template <class S>
std::pair<Var<S>, Var<S>> prior_from_parts(Var<S> x_hat /*[B,Tc,N,D]*/,
                                           Var<S> head_vals /*[B,Tc,N]*/,
                                           Var<S> gamma /*[T]*/) {
  const Shape& s = x_hat->value.shape();
  int64_t B = s[0], Tc = s[1], N = s[2], D = s[3];
  int64_t T = gamma->value.numel();
  Var<S> w;
  if (Tc == 1) {
    w = ag::constant(Tensor<S>::ones({B, T, 1, N}));
  } else {
    Var<S> wall = ag::mul(ag::reshape(gamma, {1, T, 1, 1}),
                          ag::reshape(head_vals, {B, 1, Tc, N}));
    Var<S> w_head = ag::slice(wall, 2, 0, Tc - 1);
    Var<S> w_last = ag::add_scalar(ag::neg(ag::sum_axis(w_head, 2, true)), S(1));
    w = ag::concat<S>({w_head, w_last}, 2);
  }
  Var<S> prod = ag::mul(ag::reshape(w, {B, T, Tc, N, 1}),
                        ag::reshape(x_hat, {B, 1, Tc, N, D}));
  return {ag::sum_axis(prod, 2, false), w};
}

template <class S>
PriorOut<S> build_prior(const EgtnModel<S>& m, Var<S> x_cond /*[B,Tc,N,D]*/,
                        Var<S> h_node /*[B,N,Dh]*/, const GraphBatch& g,
                        const std::vector<int64_t>& cond_times = {}) {
  if (!m.cfg.conditional) throw std::logic_error("prior requires a conditional model");
  int64_t Tc = x_cond->value.shape()[1];
  std::vector<int64_t> ct = cond_times.empty() ? default_times(Tc, -Tc) : cond_times;
  Var<S> h0 = broadcast_node_feats(h_node, Tc);
  EgtnOut<S> out = egtn_stack_forward(m.prior_net, x_cond, h0, g, ct, Var<S>(nullptr),
                                      Var<S>(nullptr), {}, m.cfg.n_heads);
  const Shape& hs = out.feats->value.shape();
  Var<S> vals = ag::reshape(m.prior_head.forward(out.feats), {hs[0], hs[1], hs[2]});
  auto [anchor, w] = prior_from_parts(out.coords, vals, m.frame_gain);
  return {anchor, w, out.coords, vals};
}

// ---- construction -----------------------------------------------------------------

template <class S>
EgtnModel<S> EgtnModel<S>::create(const EgtnConfig& cfg, Rng& rng) {
  if (cfg.hidden_dim % 2 != 0) throw std::invalid_argument("hidden_dim must be even");
  if (cfg.conditional && cfg.t_target < 1)
    throw std::invalid_argument("conditional model needs t_target >= 1");
  EgtnModel<S> m;
  m.cfg = cfg;
  int64_t H = cfg.hidden_dim, E = cfg.time_emb_dim;
  m.time_proj = Mlp<S>::create(rng, {E, E, E, E});
  auto make_layer = [&](int64_t fin, int64_t fout) {
    EgtnLayer<S> layer;
    layer.egcl.msg = Mlp<S>::create(rng, {2 * fin + 1, H, H, H});
    layer.egcl.feat = Mlp<S>::create(rng, {fin + H, H, H, fout});
    layer.egcl.gate = Mlp<S>::create(rng, {H, H, H, 1}, true);
    int64_t fh = fout / cfg.n_heads;
    layer.attn.query = Mlp<S>::create(rng, {fout, H, H, fout});
    layer.attn.key = Mlp<S>::create(rng, {fout, H, H, fout});
    layer.attn.value = Mlp<S>::create(rng, {fout, H, H, fout});
    layer.attn.gate = Mlp<S>::create(rng, {fh, H, H, 1}, true);
    return layer;
  };
  for (int l = 0; l < cfg.n_layers; ++l)
    m.stack.layers.push_back(make_layer(l == 0 ? cfg.feat_dim + E : H, H));
  if (cfg.conditional) {
    for (int l = 0; l < 2; ++l)
      m.prior_net.layers.push_back(make_layer(l == 0 ? cfg.feat_dim : H, H));
    m.prior_head = Mlp<S>::create(rng, {H, 1});
    m.frame_gain = ag::parameter(Tensor<S>::zeros({cfg.t_target}));
  }
  return m;
}

template <class S>
void EgtnModel<S>::visit_params(const std::function<void(const std::string&, Var<S>&)>& fn) {
  time_proj.visit("time_proj", fn);
  auto visit_stack = [&](EgtnStack<S>& st, const std::string& prefix) {
    for (size_t l = 0; l < st.layers.size(); ++l) {
      std::string base = prefix + std::to_string(l);
      st.layers[l].egcl.msg.visit(base + ".egcl.msg", fn);
      st.layers[l].egcl.feat.visit(base + ".egcl.feat", fn);
      st.layers[l].egcl.gate.visit(base + ".egcl.gate", fn);
      st.layers[l].attn.query.visit(base + ".attn.query", fn);
      st.layers[l].attn.key.visit(base + ".attn.key", fn);
      st.layers[l].attn.value.visit(base + ".attn.value", fn);
      st.layers[l].attn.gate.visit(base + ".attn.gate", fn);
    }
  };
  visit_stack(stack, "layers.");
  if (cfg.conditional) {
    visit_stack(prior_net, "prior.layers.");
    prior_head.visit("prior.head", fn);
    fn("prior.gamma", frame_gain);
  }
}

template <class S>
std::vector<Var<S>> EgtnModel<S>::params() {
  std::vector<Var<S>> out;
  visit_params([&](const std::string&, Var<S>& v) { out.push_back(v); });
  return out;
}

template <class S>
int64_t EgtnModel<S>::param_count() {
  int64_t n = 0;
  visit_params([&](const std::string&, Var<S>& v) { n += v->value.numel(); });
  return n;
}

// Cast every parameter (float -> double model for verification runs).
template <class S, class S2>
EgtnModel<S2> cast_model(EgtnModel<S>& src) {
  Rng dummy(0);
  EgtnModel<S2> dst = EgtnModel<S2>::create(src.cfg, dummy);
  std::vector<std::pair<std::string, Tensor<S>>> vals;
  src.visit_params([&](const std::string& name, Var<S>& v) {
    vals.emplace_back(name, v->value);
  });
  size_t i = 0;
  dst.visit_params([&](const std::string& name, Var<S2>& v) {
    if (vals[i].first != name) throw std::logic_error("parameter order mismatch in cast");
    v->value = vals[i].second.template cast<S2>();
    ++i;
  });
  return dst;
}

// ---- batching ----------------------------------------------------------------------

template <class S>
struct TrajBatch {
  Tensor<S> coords;  // [B, T, N, D]
  Tensor<S> feats;   // [B, N, Dh]
  GraphBatch graph;
};

// Gathers frames [t0, t1) of the chosen trajectories into one batch.
template <class S>
TrajBatch<S> make_batch(const std::vector<GeoTrajectory>& trajs,
                        const std::vector<int64_t>& idx, int64_t t0, int64_t t1) {
  if (idx.empty()) throw std::invalid_argument("empty batch");
  const GeoTrajectory& first = trajs[idx[0]];
  int64_t N = first.nodes(), D = first.space_dim(), Dh = first.feat_dim();
  int64_t B = static_cast<int64_t>(idx.size()), T = t1 - t0;
  TrajBatch<S> out;
  out.coords = Tensor<S>({B, T, N, D});
  out.feats = Tensor<S>({B, N, Dh});
  out.graph.n_batch = B;
  out.graph.n_nodes = N;
  for (int64_t b = 0; b < B; ++b) {
    const GeoTrajectory& tr = trajs[idx[b]];
    if (tr.nodes() != N || tr.space_dim() != D || tr.feat_dim() != Dh)
      throw std::invalid_argument("inconsistent trajectory shapes in batch");
    if (t1 > tr.frames()) throw std::invalid_argument("frame range beyond trajectory");
    for (int64_t t = 0; t < T; ++t)
      for (int64_t i = 0; i < N; ++i)
        for (int64_t d = 0; d < D; ++d)
          out.coords.at({b, t, i, d}) = static_cast<S>(tr.coords.at({t0 + t, i, d}));
    for (int64_t i = 0; i < N; ++i)
      for (int64_t d = 0; d < Dh; ++d)
        out.feats.at({b, i, d}) = static_cast<S>(tr.node_feats.at({i, d}));
    out.graph.edges.push_back(tr.edges);
  }
  return out;
}

}  // namespace geotdm

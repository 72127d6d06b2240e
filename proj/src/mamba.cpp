#include "attnmamba/mamba.hpp"

#include <cmath>
#include <stdexcept>

namespace attnmamba {

template <typename T>
MambaParams<T>::MambaParams(const MambaConfig& cfg, std::string name)
    : config(cfg),
      in_proj(name + ".in_proj", cfg.embed, 2 * cfg.inner()),
      conv_weight(Shape{cfg.inner(), cfg.conv_width}),
      conv_bias(Shape{cfg.inner()}),
      x_proj(name + ".x_proj", cfg.inner(), cfg.resolved_dt_rank() + 2 * cfg.state_dim),
      dt_proj(name + ".dt_proj", cfg.resolved_dt_rank(), cfg.inner()),
      a_log(Shape{cfg.inner(), cfg.state_dim}),
      d_skip(Shape{cfg.inner()}, T(1)),
      out_proj(name + ".out_proj", cfg.inner(), cfg.embed),
      prefix(std::move(name)) {
  for (std::size_t c = 0; c < cfg.inner(); ++c)
    for (std::size_t s = 0; s < cfg.state_dim; ++s)
      a_log[c * cfg.state_dim + s] = static_cast<T>(std::log(static_cast<double>(s + 1)));
}

template <typename T>
void MambaParams<T>::init(std::mt19937_64& rng) {
  in_proj.init_uniform(rng);
  {
    const double bound = 1.0 / std::sqrt(static_cast<double>(config.conv_width));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& w : conv_weight.values()) w = static_cast<T>(dist(rng));
    for (auto& b : conv_bias.values()) b = static_cast<T>(dist(rng));
  }
  x_proj.init_uniform(rng);
  {
    const double bound = 1.0 / std::sqrt(static_cast<double>(config.resolved_dt_rank()));
    std::uniform_real_distribution<double> wdist(-bound, bound);
    for (auto& w : dt_proj.weight.values()) w = static_cast<T>(wdist(rng));
    std::uniform_real_distribution<double> ldist(std::log(1e-3), std::log(1e-1));
    for (auto& b : dt_proj.bias.values()) {
      const double dt = std::exp(ldist(rng));
      b = static_cast<T>(dt + std::log(-std::expm1(-dt)));  // softplus^-1(dt)
    }
  }
  out_proj.init_uniform(rng);
  for (std::size_t c = 0; c < config.inner(); ++c)
    for (std::size_t s = 0; s < config.state_dim; ++s)
      a_log[c * config.state_dim + s] = static_cast<T>(std::log(static_cast<double>(s + 1)));
  d_skip.fill(T(1));
}

template <typename T>
void MambaParams<T>::append_params(ParamList<T>& out) {
  in_proj.append_params(out);
  out.push_back({prefix + ".conv.weight", &conv_weight});
  out.push_back({prefix + ".conv.bias", &conv_bias});
  x_proj.append_params(out);
  dt_proj.append_params(out);
  out.push_back({prefix + ".A_log", &a_log});
  out.push_back({prefix + ".D", &d_skip});
  out_proj.append_params(out);
}

template <typename T>
BoundMamba<T> bind(Graph<T>& g, const MambaParams<T>& p) {
  return {p.config,
          bind(g, p.in_proj),
          g.parameter(p.prefix + ".conv.weight", p.conv_weight),
          g.parameter(p.prefix + ".conv.bias", p.conv_bias),
          bind(g, p.x_proj),
          bind(g, p.dt_proj),
          g.parameter(p.prefix + ".A_log", p.a_log),
          g.parameter(p.prefix + ".D", p.d_skip),
          bind(g, p.out_proj)};
}

template <typename T>
Var<T> selective_scan(Var<T> u, Var<T> delta, Var<T> a, Var<T> b_ssm, Var<T> c_ssm, Var<T> d_skip) {
  const Shape& us = u.shape();
  if (us.size() != 3 || delta.shape() != us) {
    throw ShapeError("selective_scan: u " + shape_to_string(us) + " and delta " +
                     shape_to_string(delta.shape()) + " must both be [B, C, N]");
  }
  const std::size_t batch = us[0], ch = us[1], len = us[2];
  const Shape& as = a.shape();
  if (as.size() != 2 || as[0] != ch) throw ShapeError("selective_scan: A must be [C, S], got " + shape_to_string(as));
  const std::size_t state = as[1];
  const Shape bs_expected{batch, len, state};
  if (b_ssm.shape() != bs_expected || c_ssm.shape() != bs_expected) {
    throw ShapeError("selective_scan: B/C must be " + shape_to_string(bs_expected) + ", got " +
                     shape_to_string(b_ssm.shape()) + " / " + shape_to_string(c_ssm.shape()));
  }
  if (d_skip.shape() != Shape{ch}) throw ShapeError("selective_scan: D must be [C]");

  const auto& uv = u.value();
  const auto& dv = delta.value();
  const auto& av = a.value();
  const auto& bv = b_ssm.value();
  const auto& cv = c_ssm.value();
  const auto& skip = d_skip.value();
  for (std::size_t i = 0; i < dv.numel(); ++i) {
    if (!(dv[i] > T(0))) throw std::invalid_argument("selective_scan: delta must be strictly positive");
  }

  Tensor<T> out(us);
  // Hidden states after every step, [B, C, N, S], for the backward sweep.
  Tensor<T> states(Shape{batch, ch, len, state});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      const T* arow = av.data() + c * state;
      T* hist = states.data() + (b * ch + c) * len * state;
      for (std::size_t t = 0; t < len; ++t) {
        const std::size_t ut = (b * ch + c) * len + t;
        const T ui = uv[ut], di = dv[ut];
        const T* brow = bv.data() + (b * len + t) * state;
        const T* crow = cv.data() + (b * len + t) * state;
        T* h = hist + t * state;
        const T* prev = t ? hist + (t - 1) * state : nullptr;
        T y = skip[c] * ui;
        for (std::size_t s = 0; s < state; ++s) {
          const T decay = std::exp(di * arow[s]);
          h[s] = (prev ? decay * prev[s] : T(0)) + di * brow[s] * ui;
          y += crow[s] * h[s];
        }
        out[ut] = y;
      }
    }

  Graph<T>& g = *u.graph;
  const std::size_t uid = u.id, did = delta.id, aid = a.id, bid = b_ssm.id, cid = c_ssm.id, sid = d_skip.id;
  return g.record(
      "selective_scan", std::move(out), {uid, did, aid, bid, cid, sid},
      [=, states = std::move(states)](Graph<T>& g, const Tensor<T>& gy) {
        const auto& uv = g.value(uid);
        const auto& dv = g.value(did);
        const auto& av = g.value(aid);
        const auto& bv = g.value(bid);
        const auto& cv = g.value(cid);
        const auto& skip = g.value(sid);
        Tensor<T> gu(uv.shape()), gd(dv.shape()), ga(av.shape()), gb(bv.shape()), gc(cv.shape()), gs(skip.shape());
        std::vector<T> gh(state);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t c = 0; c < ch; ++c) {
            const T* arow = av.data() + c * state;
            T* garow = ga.data() + c * state;
            const T* hist = states.data() + (b * ch + c) * len * state;
            std::fill(gh.begin(), gh.end(), T(0));
            for (std::size_t t = len; t-- > 0;) {
              const std::size_t ut = (b * ch + c) * len + t;
              const T ui = uv[ut], di = dv[ut], go = gy[ut];
              const T* brow = bv.data() + (b * len + t) * state;
              const T* crow = cv.data() + (b * len + t) * state;
              T* gbrow = gb.data() + (b * len + t) * state;
              T* gcrow = gc.data() + (b * len + t) * state;
              const T* h = hist + t * state;
              const T* prev = t ? hist + (t - 1) * state : nullptr;
              gs[c] += go * ui;
              T gui = go * skip[c];
              T gdi = 0;
              for (std::size_t s = 0; s < state; ++s) {
                gcrow[s] += go * h[s];
                const T ghs = gh[s] + go * crow[s];
                const T decay = std::exp(di * arow[s]);
                if (prev) {
                  const T gdecay = ghs * prev[s] * decay;
                  gdi += gdecay * arow[s];
                  garow[s] += gdecay * di;
                }
                gdi += ghs * brow[s] * ui;
                gbrow[s] += ghs * di * ui;
                gui += ghs * di * brow[s];
                gh[s] = ghs * decay;
              }
              gu[ut] += gui;
              gd[ut] += gdi;
            }
          }
        const auto flush = [&g](std::size_t id, const Tensor<T>& src) {
          if (!g.requires_grad(id)) return;
          auto& dst = g.grad_buffer(id);
          for (std::size_t i = 0; i < src.numel(); ++i) dst[i] += src[i];
        };
        flush(uid, gu);
        flush(did, gd);
        flush(aid, ga);
        flush(bid, gb);
        flush(cid, gc);
        flush(sid, gs);
      });
}

template <typename T>
Var<T> mamba_forward(Var<T> x, const BoundMamba<T>& p) {
  const Shape& xs = x.shape();
  const MambaConfig& cfg = p.config;
  if (xs.size() != 3 || xs[2] != cfg.embed) {
    throw ShapeError("mamba_forward expects [B, N, " + std::to_string(cfg.embed) + "], got " + shape_to_string(xs));
  }
  const std::size_t inner = cfg.inner();
  const std::size_t rank = cfg.resolved_dt_rank();
  const std::size_t state = cfg.state_dim;

  Var<T> xz = linear(x, p.in_proj);
  Var<T> branch = slice(xz, 2, 0, inner);
  Var<T> gate = slice(xz, 2, inner, 2 * inner);

  Var<T> conv = silu(depthwise_conv1d_causal(branch, p.conv_weight, p.conv_bias));
  Var<T> proj = linear(conv, p.x_proj);
  Var<T> dt_pre = slice(proj, 2, 0, rank);
  Var<T> b_ssm = slice(proj, 2, rank, rank + state);
  Var<T> c_ssm = slice(proj, 2, rank + state, rank + 2 * state);
  Var<T> delta = softplus(linear(dt_pre, p.dt_proj));
  Var<T> a = scale(exp(p.a_log), T(-1));

  Var<T> y = transpose(selective_scan(transpose(conv), transpose(delta), a, b_ssm, c_ssm, p.d_skip));
  return linear(mul(y, silu(gate)), p.out_proj);
}

template <typename T>
Var<T> bidirectional_mamba(Var<T> x, const BoundMamba<T>& fwd, const BoundMamba<T>& bwd, BidirectionalMode mode) {
  Var<T> normal = mamba_forward(x, fwd);
  Var<T> reversed = mamba_forward(reverse(x, 1), bwd);
  if (mode == BidirectionalMode::kLiteral) return reverse(add(normal, reversed), 1);
  return add(normal, reverse(reversed, 1));
}

#define ATTNMAMBA_INSTANTIATE_MAMBA(T)                                                          \
  template struct MambaParams<T>;                                                              \
  template BoundMamba<T> bind(Graph<T>&, const MambaParams<T>&);                               \
  template Var<T> selective_scan(Var<T>, Var<T>, Var<T>, Var<T>, Var<T>, Var<T>);              \
  template Var<T> mamba_forward(Var<T>, const BoundMamba<T>&);                                 \
  template Var<T> bidirectional_mamba(Var<T>, const BoundMamba<T>&, const BoundMamba<T>&, BidirectionalMode);

ATTNMAMBA_INSTANTIATE_MAMBA(float)
ATTNMAMBA_INSTANTIATE_MAMBA(double)

#undef ATTNMAMBA_INSTANTIATE_MAMBA

}  // namespace attnmamba

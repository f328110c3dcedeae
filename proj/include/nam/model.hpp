#ifndef NAM_MODEL_HPP
#define NAM_MODEL_HPP

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "nam/core_math.hpp"
#include "nam/errors.hpp"
#include "nam/views.hpp"

namespace nam {

struct Linear {
  ParamTensor W;  // out x in
  ParamTensor b;  // out x 1

  Linear() = default;
  Linear(std::size_t out, std::size_t in) : W(out, in), b(out, 1) {}

  Vec forward(const Vec& x) const { return linear_forward(W.value, b.value.a, x); }

  Vec backward(const Vec& x, const Vec& upstream) {
    return linear_backward(W.value, x, upstream, W.grad, b.grad.a);
  }
};

// Context/target embedding net: CF views use a single linear layer
// z_h -> z_t; content views a linear z_h -> z_t, ReLU, linear z_t -> z_t.
struct TowerNet {
  bool mlp = false;
  Linear l1, l2;

  static TowerNet make(bool mlp, std::size_t z_h, std::size_t z_t) {
    TowerNet net;
    net.mlp = mlp;
    net.l1 = Linear(z_t, z_h);
    if (mlp) net.l2 = Linear(z_t, z_t);
    return net;
  }
};

struct NetCache {
  const Vec* x = nullptr;
  Vec pre;  // hidden pre-activation (mlp only)
  Vec hid;  // hidden post-ReLU (mlp only)
  Vec out;
};

inline void net_forward(const TowerNet& net, const Vec& x, NetCache& cache) {
  cache.x = &x;
  if (net.mlp) {
    cache.pre = net.l1.forward(x);
    cache.hid = relu_forward(cache.pre);
    cache.out = net.l2.forward(cache.hid);
  } else {
    cache.out = net.l1.forward(x);
  }
}

inline void net_backward(TowerNet& net, const NetCache& cache, const Vec& d_out) {
  if (net.mlp) {
    const Vec d_hid = net.l2.backward(cache.hid, d_out);
    const Vec d_pre = relu_backward(cache.pre, d_hid);
    net.l1.backward(*cache.x, d_pre);
  } else {
    net.l1.backward(*cache.x, d_out);
  }
}

struct ViewTower {
  TowerNet f, g;   // context / target embedding nets, output z_t
  Linear alpha;    // attention embedding, output z_a
  ParamTensor w;   // 1x1 affine scale
  ParamTensor b;   // 1x1 affine shift

  std::vector<ParamTensor*> params() {
    std::vector<ParamTensor*> out{&f.l1.W, &f.l1.b};
    if (f.mlp) { out.push_back(&f.l2.W); out.push_back(&f.l2.b); }
    out.push_back(&g.l1.W);
    out.push_back(&g.l1.b);
    if (g.mlp) { out.push_back(&g.l2.W); out.push_back(&g.l2.b); }
    out.push_back(&alpha.W);
    out.push_back(&alpha.b);
    out.push_back(&w);
    out.push_back(&b);
    return out;
  }
};

struct NamModel {
  std::vector<std::string> view_names;
  std::vector<ViewKind> view_kinds;
  std::vector<std::size_t> view_dims;  // z_h per view
  std::vector<ViewTower> towers;
  std::size_t z_t = 0, z_a = 0;

  std::size_t n_views() const { return towers.size(); }

  std::vector<ParamTensor*> params() {
    std::vector<ParamTensor*> out;
    for (auto& tower : towers)
      for (ParamTensor* p : tower.params()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (ParamTensor* p : params()) p->zero_grad();
  }
};

inline void xavier_init(Mat& m, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(m.rows + m.cols));
  std::uniform_real_distribution<double> unif(-limit, limit);
  for (double& x : m.a) x = unif(rng);
}

// Xavier-uniform weights, zero biases; w = 1, b = 0 so that mu == s at
// phase-2 start.
inline NamModel make_model(const ViewRegistry& registry, std::size_t z_t,
                           std::size_t z_a, std::uint64_t seed) {
  NamModel model;
  model.z_t = z_t;
  model.z_a = z_a;
  std::mt19937_64 rng(seed);
  for (const auto& table : registry.views) {
    model.view_names.push_back(table.view.name);
    model.view_kinds.push_back(table.view.kind);
    model.view_dims.push_back(table.dim);
    const bool mlp = table.view.kind != ViewKind::cf;
    ViewTower tower;
    tower.f = TowerNet::make(mlp, table.dim, z_t);
    tower.g = TowerNet::make(mlp, table.dim, z_t);
    tower.alpha = Linear(z_a, table.dim);
    tower.w = ParamTensor(1, 1);
    tower.b = ParamTensor(1, 1);
    tower.w.value.a[0] = 1.0;
    xavier_init(tower.f.l1.W.value, rng);
    if (mlp) xavier_init(tower.f.l2.W.value, rng);
    xavier_init(tower.g.l1.W.value, rng);
    if (mlp) xavier_init(tower.g.l2.W.value, rng);
    xavier_init(tower.alpha.W.value, rng);
    model.towers.push_back(std::move(tower));
  }
  return model;
}

// -------------------------------------------------------------------------
// Pair scoring

struct TowerPairCache {
  bool active = false;
  NetCache fi, gj, ai, aj;
  double s = 0.0, gamma = 0.0, mu = 0.0;
};

struct PairCache {
  std::uint32_t item_i = 0, item_j = 0;
  std::vector<TowerPairCache> views;
  Mask mask;
  Vec a;  // attention coefficients (only when scored with attention)
  double psi = 0.0;
  bool ok = false;           // at least one common view
  bool with_attention = false;
};

// Per-pair score breakdown for reporting.
struct PairScoreBreakdown {
  std::vector<double> s, gamma, a, mu;
  Mask mask;
  double psi = 0.0;
};

// Scores the pair (i, j). mask[h] = present(i,h) && present(j,h), minus any
// views disabled by the caller. Masked views are excluded from the softmax
// support (the -inf rule). When need_attention is false only the per-view
// cosine scores s are computed (phase-1 graph).
inline PairCache try_pair_forward(const NamModel& model,
                                  const ViewRegistry& registry,
                                  std::uint32_t i, std::uint32_t j,
                                  bool need_attention = true,
                                  const Mask* disabled = nullptr) {
  PairCache cache;
  cache.item_i = i;
  cache.item_j = j;
  cache.with_attention = need_attention;
  const std::size_t n = model.n_views();
  cache.views.resize(n);
  cache.mask.assign(n, false);
  Vec gammas(n, 0.0);
  for (std::size_t h = 0; h < n; ++h) {
    if (disabled && (*disabled)[h]) continue;
    const Vec* xi = registry.vector(h, i);
    const Vec* xj = registry.vector(h, j);
    if (!xi || !xj) continue;
    cache.mask[h] = true;
    auto& vc = cache.views[h];
    vc.active = true;
    const ViewTower& tower = model.towers[h];
    net_forward(tower.f, *xi, vc.fi);
    net_forward(tower.g, *xj, vc.gj);
    vc.s = cosine_forward(vc.fi.out, vc.gj.out);
    vc.mu = tower.w.value.a[0] * vc.s + tower.b.value.a[0];
  }
  bool any = false;
  for (std::size_t h = 0; h < n; ++h) any = any || cache.mask[h];
  if (!any) return cache;  // ok stays false
  cache.ok = true;
  if (need_attention) {
    for (std::size_t h = 0; h < n; ++h) {
      if (!cache.mask[h]) continue;
      auto& vc = cache.views[h];
      const ViewTower& tower = model.towers[h];
      const Vec* xi = registry.vector(h, i);
      const Vec* xj = registry.vector(h, j);
      vc.ai.x = xi;
      vc.ai.out = tower.alpha.forward(*xi);
      vc.aj.x = xj;
      vc.aj.out = tower.alpha.forward(*xj);
      vc.gamma = cosine_forward(vc.ai.out, vc.aj.out);
      gammas[h] = vc.gamma;
    }
    cache.a = masked_softmax(gammas, cache.mask);
    double psi = 0.0;
    for (std::size_t h = 0; h < n; ++h)
      if (cache.mask[h]) psi += cache.a[h] * cache.views[h].mu;
    cache.psi = psi;
  }
  return cache;
}

inline PairCache pair_forward(const NamModel& model, const ViewRegistry& registry,
                              std::uint32_t i, std::uint32_t j,
                              bool need_attention = true,
                              const Mask* disabled = nullptr) {
  PairCache cache = try_pair_forward(model, registry, i, j, need_attention, disabled);
  if (!cache.ok)
    throw NoActiveViewError("pair (" + registry.catalog.ids[i] + ", " +
                            registry.catalog.ids[j] + ") shares no view");
  return cache;
}

inline PairScoreBreakdown breakdown(const PairCache& cache) {
  PairScoreBreakdown out;
  const std::size_t n = cache.views.size();
  out.s.resize(n, 0.0);
  out.gamma.resize(n, 0.0);
  out.mu.resize(n, 0.0);
  out.a = cache.a.empty() ? Vec(n, 0.0) : cache.a;
  out.mask = cache.mask;
  out.psi = cache.psi;
  for (std::size_t h = 0; h < n; ++h) {
    out.s[h] = cache.views[h].s;
    out.gamma[h] = cache.views[h].gamma;
    out.mu[h] = cache.views[h].mu;
  }
  return out;
}

// Backpropagates d(loss)/d(psi) = dpsi plus an optional externally injected
// d(loss)/d(s_h) per view (the phase-1 term). When stop_grad_s is set the
// psi -> mu -> s path is cut: the attention branch updates only alpha, w, b.
inline void pair_backward(NamModel& model, const PairCache& cache,
                          double dpsi, const Vec* ds_external,
                          bool stop_grad_s) {
  const std::size_t n = model.n_views();
  Vec ds(n, 0.0), dmu(n, 0.0), da(n, 0.0);
  if (ds_external)
    for (std::size_t h = 0; h < n; ++h) ds[h] = (*ds_external)[h];

  if (cache.with_attention && dpsi != 0.0) {
    for (std::size_t h = 0; h < n; ++h) {
      if (!cache.mask[h]) continue;
      da[h] = dpsi * cache.views[h].mu;
      dmu[h] = dpsi * cache.a[h];
    }
    // softmax backward over the unmasked support
    double inner = 0.0;
    for (std::size_t h = 0; h < n; ++h)
      if (cache.mask[h]) inner += cache.a[h] * da[h];
    for (std::size_t h = 0; h < n; ++h) {
      if (!cache.mask[h]) continue;
      const double dgamma = cache.a[h] * (da[h] - inner);
      auto& vc = cache.views[h];
      ViewTower& tower = model.towers[h];
      Vec dai(vc.ai.out.size(), 0.0), daj(vc.aj.out.size(), 0.0);
      cosine_backward(vc.ai.out, vc.aj.out, dgamma, dai, daj);
      tower.alpha.backward(*vc.ai.x, dai);
      tower.alpha.backward(*vc.aj.x, daj);
      // mu = w*s + b
      tower.w.grad.a[0] += dmu[h] * vc.s;
      tower.b.grad.a[0] += dmu[h];
      if (!stop_grad_s) ds[h] += dmu[h] * tower.w.value.a[0];
    }
  }

  for (std::size_t h = 0; h < n; ++h) {
    if (ds[h] == 0.0 || !cache.views[h].active) continue;
    auto& vc = cache.views[h];
    ViewTower& tower = model.towers[h];
    Vec dfi(vc.fi.out.size(), 0.0), dgj(vc.gj.out.size(), 0.0);
    cosine_backward(vc.fi.out, vc.gj.out, ds[h], dfi, dgj);
    net_backward(tower.f, vc.fi, dfi);
    net_backward(tower.g, vc.gj, dgj);
  }
}

// -------------------------------------------------------------------------
// SNS losses

// The positive score is not part of the partition.
inline double sns_loss(double s_pos, const Vec& s_negs) {
  if (s_negs.empty()) throw DomainError("sns_loss: no negative scores");
  return -s_pos + logsumexp(s_negs);
}

inline double sns_loss_view(double s_pos, const Vec& s_negs) {
  return sns_loss(s_pos, s_negs);
}

inline double sns_loss_nam(double psi_pos, const Vec& psi_negs) {
  return sns_loss(psi_pos, psi_negs);
}

// Sampled-softmax variant with the positive inside the partition.
inline double sns_loss_inclusive(double s_pos, const Vec& s_negs) {
  if (s_negs.empty()) throw DomainError("sns_loss: no negative scores");
  Vec all(s_negs);
  all.push_back(s_pos);
  return -s_pos + logsumexp(all);
}

// softmax(values) without masking, numerically stable
inline Vec softmax(const Vec& values) {
  const double mx = *std::max_element(values.begin(), values.end());
  Vec out(values.size());
  double z = 0.0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    out[k] = std::exp(values[k] - mx);
    z += out[k];
  }
  for (double& x : out) x /= z;
  return out;
}

}  // namespace nam

#endif  // NAM_MODEL_HPP

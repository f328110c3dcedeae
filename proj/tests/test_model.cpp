#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "nam/model.hpp"
#include "nam/training.hpp"
#include "toy.hpp"

using namespace nam;

TEST_CASE("embed nets: shapes and degenerate weights") {
  std::mt19937_64 rng(1);
  auto registry = toy::make_registry(4, {3, 5}, rng);
  NamModel model = make_model(registry, 4, 4, 9);

  const Vec* x = registry.vector(1, 0);
  REQUIRE(x);

  SUBCASE("zero MLP weights give zero output") {
    for (ParamTensor* p : model.towers[1].params())
      std::fill(p->value.a.begin(), p->value.a.end(), 0.0);
    NetCache cache;
    net_forward(model.towers[1].f, *x, cache);
    CHECK(cache.out == Vec(4, 0.0));
  }
  SUBCASE("CF identity linear map passes input through") {
    // make view 0 square by using a model over a 4-dim CF view
    auto reg2 = toy::make_registry(3, {4}, rng);
    NamModel m2 = make_model(reg2, 4, 4, 1);
    auto& l1 = m2.towers[0].f.l1;
    std::fill(l1.W.value.a.begin(), l1.W.value.a.end(), 0.0);
    for (std::size_t k = 0; k < 4; ++k) l1.W.value(k, k) = 1.0;
    std::fill(l1.b.value.a.begin(), l1.b.value.a.end(), 0.0);
    const Vec* y = reg2.vector(0, 1);
    NetCache cache;
    net_forward(m2.towers[0].f, *y, cache);
    CHECK(cache.out == *y);
  }
  SUBCASE("random params: finite outputs of declared sizes") {
    NetCache cache;
    net_forward(model.towers[1].f, *x, cache);
    CHECK(cache.out.size() == 4);
    for (double v : cache.out) CHECK(std::isfinite(v));
    Vec a = model.towers[1].alpha.forward(*x);
    CHECK(a.size() == 4);
  }
}

TEST_CASE("view_score and attention_logit are cosines") {
  Vec u{1, 2, 3}, v{1, 2, 3}, w{-1, -2, -3}, o{3, -0, 1};
  CHECK(cosine_forward(u, v) == doctest::Approx(1.0));
  CHECK(cosine_forward(u, w) == doctest::Approx(-1.0));
  CHECK(cosine_forward({1, 0}, {0, 1}) == doctest::Approx(0.0));
  (void)o;
}

TEST_CASE("pair_forward structure") {
  std::mt19937_64 rng(21);
  auto registry = toy::make_registry(6, {3, 4, 5}, rng);
  NamModel model = make_model(registry, 4, 4, 3);

  SUBCASE("single unmasked view: psi equals that view's mu") {
    Mask disabled{false, true, true};
    PairCache cache = pair_forward(model, registry, 0, 1, true, &disabled);
    CHECK(cache.a[0] == 1.0);
    CHECK(cache.psi == doctest::Approx(cache.views[0].mu).epsilon(1e-15));
  }
  SUBCASE("equal logits: psi is the mean of mu") {
    // identical alpha params + identical alpha inputs across views is hard to
    // arrange with distinct dims; instead force equal gammas by zeroing alpha
    // weights (cosine of equal-bias vectors = 1 for all views).
    for (auto& tower : model.towers) {
      std::fill(tower.alpha.W.value.a.begin(), tower.alpha.W.value.a.end(), 0.0);
      std::fill(tower.alpha.b.value.a.begin(), tower.alpha.b.value.a.end(), 1.0);
    }
    PairCache cache = pair_forward(model, registry, 2, 3);
    double mean_mu = 0;
    for (std::size_t h = 0; h < 3; ++h) {
      CHECK(cache.a[h] == doctest::Approx(1.0 / 3).epsilon(1e-12));
      mean_mu += cache.views[h].mu / 3.0;
    }
    CHECK(cache.psi == doctest::Approx(mean_mu).epsilon(1e-12));
  }
  SUBCASE("no common view throws") {
    std::mt19937_64 rng2(4);
    auto sparse = toy::make_registry(2, {3}, rng2);
    sparse.views[0].rows.erase("i1");
    sparse.finalize();
    NamModel m2 = make_model(sparse, 4, 4, 1);
    CHECK_THROWS_AS(pair_forward(m2, sparse, 0, 1), NoActiveViewError);
    CHECK_FALSE(try_pair_forward(m2, sparse, 0, 1).ok);
  }
}

TEST_CASE("mask-equivalence: masked view == deleted view") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    auto registry = toy::make_registry(4, {3, 4, 2}, rng);
    NamModel model = make_model(registry, 4, 4, 100 + trial);
    const std::size_t drop = trial % 3;

    Mask disabled(3, false);
    disabled[drop] = true;
    PairCache masked = pair_forward(model, registry, 0, 1, true, &disabled);

    // build an equivalent model/registry without view `drop`
    ViewRegistry reg2;
    reg2.catalog = registry.catalog;
    NamModel m2;
    m2.z_t = model.z_t;
    m2.z_a = model.z_a;
    for (std::size_t h = 0; h < 3; ++h) {
      if (h == drop) continue;
      reg2.views.push_back(registry.views[h]);
      m2.view_names.push_back(model.view_names[h]);
      m2.view_kinds.push_back(model.view_kinds[h]);
      m2.view_dims.push_back(model.view_dims[h]);
      m2.towers.push_back(model.towers[h]);
    }
    reg2.finalize();
    PairCache removed = pair_forward(m2, reg2, 0, 1);
    CHECK(std::fabs(masked.psi - removed.psi) <= 1e-12);
  }
}

TEST_CASE("attention simplex invariant") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 200; ++trial) {
    auto registry = toy::make_registry(3, {3, 4, 2}, rng, 0.7);
    NamModel model = make_model(registry, 4, 4, trial);
    PairCache cache = try_pair_forward(model, registry, 0, 1);
    if (!cache.ok) continue;
    double sum = 0;
    for (std::size_t h = 0; h < 3; ++h) {
      CHECK(cache.a[h] >= 0.0);
      if (!cache.mask[h]) CHECK(cache.a[h] == 0.0);
      sum += cache.a[h];
    }
    CHECK(std::fabs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("shift property: adding c to every b shifts psi by c") {
  std::mt19937_64 rng(51);
  auto registry = toy::make_registry(4, {3, 4, 2}, rng);
  NamModel model = make_model(registry, 4, 4, 77);
  PairCache before = pair_forward(model, registry, 1, 2);
  const double c = 0.625;  // exactly representable
  for (auto& tower : model.towers) tower.b.value.a[0] += c;
  PairCache after = pair_forward(model, registry, 1, 2);
  CHECK(std::fabs(after.psi - (before.psi + c)) <= 1e-12);
}

TEST_CASE("sns losses") {
  CHECK(sns_loss_view(0.0, {0.0}) == doctest::Approx(0.0));
  CHECK(sns_loss_view(1.0, {0.0, 0.0}) ==
        doctest::Approx(-1.0 + std::log(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(sns_loss_view(1.0, {}), DomainError);
  // monotone decreasing in s_pos
  CHECK(sns_loss_view(2.0, {0.5, 0.1}) < sns_loss_view(1.0, {0.5, 0.1}));
  // nam variant has the same structure
  CHECK(sns_loss_nam(1.0, {0.0, 0.0}) ==
        doctest::Approx(-1.0 + std::log(2.0)).epsilon(1e-12));
  // inclusive variant is always nonnegative
  CHECK(sns_loss_inclusive(5.0, {0.0}) > 0.0);
}

TEST_CASE("phase1 loss reductions") {
  std::mt19937_64 rng(61);
  auto registry = toy::make_registry(6, {3, 4}, rng);
  NamModel model = make_model(registry, 4, 4, 5);
  PairExample ex{0, 1, {2, 3}};

  SUBCASE("one view available equals that view's SNS loss") {
    Mask disabled{false, true};
    auto work = forward_example(model, registry, ex, false, &disabled);
    const double loss = phase1_term(work).loss;
    const double s_pos = work.pos.views[0].s;
    Vec s_negs{work.negs[0].views[0].s, work.negs[1].views[0].s};
    CHECK(loss == doctest::Approx(sns_loss_view(s_pos, s_negs)).epsilon(1e-15));
  }
  SUBCASE("average of equal view losses equals either") {
    auto work = forward_example(model, registry, ex, false);
    auto term = phase1_term(work);
    double view0 = -work.pos.views[0].s +
                   logsumexp({work.negs[0].views[0].s, work.negs[1].views[0].s});
    double view1 = -work.pos.views[1].s +
                   logsumexp({work.negs[0].views[1].s, work.negs[1].views[1].s});
    CHECK(term.loss == doctest::Approx((view0 + view1) / 2).epsilon(1e-12));
  }
}

TEST_CASE("phase1 tower independence") {
  std::mt19937_64 rng(71);
  auto registry = toy::make_registry(6, {3, 4}, rng);
  NamModel model = make_model(registry, 4, 4, 6);
  PairExample ex{0, 1, {2, 3}};

  model.zero_grad();
  auto work = forward_example(model, registry, ex, false);
  phase1_backward(model, work, phase1_term(work), 1.0);
  Vec grad_tower0;
  for (ParamTensor* p : model.towers[0].params())
    grad_tower0.insert(grad_tower0.end(), p->grad.a.begin(), p->grad.a.end());

  // perturb tower 1, recompute: tower 0 gradient must be bit-identical
  for (ParamTensor* p : model.towers[1].params())
    for (double& v : p->value.a) v += 0.37;
  model.zero_grad();
  auto work2 = forward_example(model, registry, ex, false);
  phase1_backward(model, work2, phase1_term(work2), 1.0);
  Vec grad_tower0_after;
  for (ParamTensor* p : model.towers[0].params())
    grad_tower0_after.insert(grad_tower0_after.end(), p->grad.a.begin(),
                             p->grad.a.end());
  CHECK(grad_tower0 == grad_tower0_after);

  // phase-1 grads never touch alpha, w, b
  model.zero_grad();
  auto work3 = forward_example(model, registry, ex, false);
  phase1_backward(model, work3, phase1_term(work3), 1.0);
  for (auto& tower : model.towers) {
    for (double g : tower.alpha.W.grad.a) CHECK(g == 0.0);
    for (double g : tower.alpha.b.grad.a) CHECK(g == 0.0);
    CHECK(tower.w.grad.a[0] == 0.0);
    CHECK(tower.b.grad.a[0] == 0.0);
  }
}

TEST_CASE("phase2 loss structure") {
  std::mt19937_64 rng(81);
  auto registry = toy::make_registry(6, {3, 4}, rng);
  NamModel model = make_model(registry, 4, 4, 7);
  PairExample ex{0, 1, {2, 3}};
  auto work = forward_example(model, registry, ex, true);

  SUBCASE("lambda = 0 reduces to the nam SNS loss") {
    auto term = phase2_term(work, 0.0, false);
    Vec psi_negs{work.negs[0].psi, work.negs[1].psi};
    CHECK(term.loss ==
          doctest::Approx(sns_loss_nam(work.pos.psi, psi_negs)).epsilon(1e-15));
  }
  SUBCASE("lambda = 0 with stop-gradient: f/g grads exactly zero") {
    model.zero_grad();
    auto term = phase2_term(work, 0.0, false);
    phase2_backward(model, work, term, 0.0, true, 1.0);
    for (auto& tower : model.towers) {
      for (const auto* net : {&tower.f, &tower.g}) {
        for (double g : net->l1.W.grad.a) CHECK(g == 0.0);
        for (double g : net->l1.b.grad.a) CHECK(g == 0.0);
        if (net->mlp) {
          for (double g : net->l2.W.grad.a) CHECK(g == 0.0);
          for (double g : net->l2.b.grad.a) CHECK(g == 0.0);
        }
      }
      // but attention and affine parameters do receive gradient
    }
  }
}

namespace {

// Gradient check of a full per-example loss against central differences.
bool check_example_gradient(std::uint64_t seed, int phase, bool stop_grad,
                            double* max_err = nullptr) {
  std::mt19937_64 rng(seed);
  for (int attempt = 0; attempt < 20; ++attempt) {
    std::vector<std::size_t> dims{3, (seed + attempt) % 2 ? 3u : 5u, 5};
    auto registry = toy::make_registry(6, dims, rng);
    NamModel model = make_model(registry, 4, 4, seed * 31 + attempt);
    PairExample ex{0, 1, {2, 3}};
    if (!toy::gradcheck_safe(model, registry, ex)) continue;

    TrainConfig cfg;
    cfg.lambda = 0.1;
    cfg.stop_gradient_psi = stop_grad;
    model.zero_grad();
    pair_loss_backward(model, registry, ex, phase, cfg);
    Vec analytic = toy::flatten_grads(model);
    Vec point = toy::flatten_params(model);

    auto f = [&](const Vec& p) {
      toy::unflatten_params(model, p);
      double loss;
      if (phase == 1) {
        loss = phase1_pair_loss(model, registry, ex);
      } else {
        loss = phase2_pair_loss(model, registry, ex, cfg.lambda, false);
      }
      return loss;
    };
    auto report = grad_check(f, point, analytic, 1e-5, 1e-4);
    toy::unflatten_params(model, point);
    if (max_err) *max_err = report.max_rel_err;
    if (!stop_grad || phase == 1) return report.ok();
    // stop-gradient cuts the psi->s path, so the analytic grad deliberately
    // differs from the smooth finite differences of the full loss; instead
    // check only the attention/affine coordinates... handled by caller.
    return report.ok();
  }
  return false;
}

}  // namespace

TEST_CASE("phase-1 gradient matches finite differences") {
  double err = 0;
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
    CHECK(check_example_gradient(seed, 1, true, &err));
  }
}

TEST_CASE("phase-2 full-flow gradient matches finite differences") {
  double err = 0;
  for (std::uint64_t seed : {11ull, 12ull, 13ull, 14ull, 15ull}) {
    CHECK(check_example_gradient(seed, 2, false, &err));
  }
}

TEST_CASE("zero upstream gives zero grads") {
  std::mt19937_64 rng(91);
  auto registry = toy::make_registry(4, {3, 4}, rng);
  NamModel model = make_model(registry, 4, 4, 8);
  model.zero_grad();
  PairCache cache = pair_forward(model, registry, 0, 1);
  pair_backward(model, cache, 0.0, nullptr, false);
  for (ParamTensor* p : model.params())
    for (double g : p->grad.a) CHECK(g == 0.0);
}

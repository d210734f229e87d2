#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "dcmvc/common.hpp"
#include "dcmvc/context.hpp"
#include "dcmvc/model.hpp"
#include "oracle.hpp"

using namespace dcmvc;

namespace {

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.same_shape(b) &&
         std::memcmp(a.data(), b.data(),
                     sizeof(float) * static_cast<size_t>(a.numel())) == 0;
}

Tensor rand_tensor(Rng& rng, std::vector<int> shape, float lo, float hi) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

void perturb(Tensor& t, Rng& rng, float mag) {
  for (int64_t i = 0; i < t.numel(); ++i) t[i] += rng.uniform(-mag, mag);
}

void perturb_coupling_heads(ParamStore& ps, const std::string& prefix,
                            int layers, Rng& rng, float mag) {
  for (int k = 0; k < layers; ++k)
    for (const char* head : {".s", ".b"}) {
      const std::string hp = prefix + ".k" + std::to_string(k) + head;
      perturb(ps.get(hp + ".c1.w"), rng, mag);
      perturb(ps.get(hp + ".c1.b"), rng, mag);
    }
}

// double-precision coupling forward built from oracle primitives only
struct CouplingRef {
  struct Head {
    oracle::DT w0, b0, w1, b1;
  };
  std::vector<Head> s, b;

  static oracle::DT pull(const ParamStore& ps, const std::string& name) {
    return oracle::from_tensor(const_cast<ParamStore&>(ps).get(name));
  }
  CouplingRef(const ParamStore& ps, const std::string& prefix, int layers) {
    for (int k = 0; k < layers; ++k) {
      const std::string lp = prefix + ".k" + std::to_string(k);
      s.push_back({pull(ps, lp + ".s.c0.w"), pull(ps, lp + ".s.c0.b"),
                   pull(ps, lp + ".s.c1.w"), pull(ps, lp + ".s.c1.b")});
      b.push_back({pull(ps, lp + ".b.c0.w"), pull(ps, lp + ".b.c0.b"),
                   pull(ps, lp + ".b.c1.w"), pull(ps, lp + ".b.c1.b")});
    }
  }
  static oracle::DT head(const Head& h, const oracle::DT& x) {
    oracle::DT a = oracle::leaky_relu(oracle::conv2d(x, h.w0, &h.b0, 1, 1), 0.1);
    return oracle::conv2d(a, h.w1, &h.b1, 1, 1);
  }
  oracle::DT forward(const oracle::DT& x) const {
    const int c = x.dim(0), half = c / 2;
    oracle::DT cur = x;
    for (size_t k = 0; k < s.size(); ++k) {
      oracle::DT x1 = oracle::slice_c(cur, 0, half);
      oracle::DT x2 = oracle::slice_c(cur, half, c);
      oracle::DT sv = oracle::tanh_(head(s[k], x1));
      oracle::DT tv = head(b[k], x1);
      oracle::DT y2 = oracle::add(oracle::mul(x2, oracle::exp_(sv)), tv);
      cur = oracle::concat_c({y2, x1});
    }
    return cur;
  }
};

// log|det J| of a map R^n -> R^n from central differences in double,
// via LU with partial pivoting
double numeric_logdet(const CouplingRef& ref, const oracle::DT& x, double h) {
  const int n = static_cast<int>(x.v.size());
  std::vector<std::vector<double>> J(static_cast<size_t>(n),
                                     std::vector<double>(static_cast<size_t>(n)));
  for (int j = 0; j < n; ++j) {
    oracle::DT xp = x, xm = x;
    xp.v[static_cast<size_t>(j)] += h;
    xm.v[static_cast<size_t>(j)] -= h;
    oracle::DT fp = ref.forward(xp), fm = ref.forward(xm);
    for (int i = 0; i < n; ++i)
      J[static_cast<size_t>(i)][static_cast<size_t>(j)] =
          (fp.v[static_cast<size_t>(i)] - fm.v[static_cast<size_t>(i)]) / (2 * h);
  }
  double logdet = 0;
  for (int k = 0; k < n; ++k) {
    int piv = k;
    for (int i = k + 1; i < n; ++i)
      if (std::abs(J[static_cast<size_t>(i)][static_cast<size_t>(k)]) >
          std::abs(J[static_cast<size_t>(piv)][static_cast<size_t>(k)]))
        piv = i;
    if (piv != k) std::swap(J[static_cast<size_t>(piv)], J[static_cast<size_t>(k)]);
    const double d = J[static_cast<size_t>(k)][static_cast<size_t>(k)];
    REQUIRE(std::abs(d) > 1e-12);
    logdet += std::log(std::abs(d));
    for (int i = k + 1; i < n; ++i) {
      const double f = J[static_cast<size_t>(i)][static_cast<size_t>(k)] / d;
      for (int j = k; j < n; ++j)
        J[static_cast<size_t>(i)][static_cast<size_t>(j)] -=
            f * J[static_cast<size_t>(k)][static_cast<size_t>(j)];
    }
  }
  return logdet;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.same_shape(b));
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

}  // namespace

TEST_CASE("untrained coupling stack is an exact identity") {
  Rng rng(7);
  ParamStore ps;
  register_coupling(ps, rng, "cp", 4, 2);
  Tensor x = rand_tensor(rng, {4, 6, 5}, -1.0f, 1.0f);

  Graph g;
  Binder b(g, ps, false);
  NodeId xin = g.leaf(x);
  NodeId fwd = coupling_forward(b, "cp", xin, 2);
  NodeId inv = coupling_inverse(b, "cp", xin, 2);
  NodeId ld = coupling_logdet(b, "cp", xin, 2);
  CHECK(bit_equal(g.value(fwd), x));
  CHECK(bit_equal(g.value(inv), x));
  CHECK(g.value(ld).item() == 0.0f);
}

TEST_CASE("coupling inverse undoes the forward map") {
  Rng rng(11);
  ParamStore ps;
  register_coupling(ps, rng, "cp", 4, 2);
  perturb_coupling_heads(ps, "cp", 2, rng, 0.3f);
  Tensor x = rand_tensor(rng, {4, 6, 5}, -1.0f, 1.0f);

  Graph g;
  Binder b(g, ps, false);
  NodeId fwd = coupling_forward(b, "cp", g.leaf(x), 2);
  NodeId back = coupling_inverse(b, "cp", fwd, 2);
  CHECK(max_abs_diff(g.value(back), x) < 1e-5);
  // the map is not trivially the identity after perturbation
  CHECK(max_abs_diff(g.value(fwd), x) > 1e-2);
}

TEST_CASE("coupling round trip holds for a wider, deeper stack") {
  Rng rng(13);
  ParamStore ps;
  register_coupling(ps, rng, "cp", 8, 3);
  perturb_coupling_heads(ps, "cp", 3, rng, 0.25f);
  Tensor x = rand_tensor(rng, {8, 7, 9}, -1.5f, 1.5f);

  Graph g;
  Binder b(g, ps, false);
  NodeId fwd = coupling_forward(b, "cp", g.leaf(x), 3);
  NodeId back = coupling_inverse(b, "cp", fwd, 3);
  CHECK(max_abs_diff(g.value(back), x) < 1e-5);
}

TEST_CASE("coupling forward matches a double-precision reference") {
  Rng rng(17);
  ParamStore ps;
  register_coupling(ps, rng, "cp", 4, 2);
  perturb_coupling_heads(ps, "cp", 2, rng, 0.3f);
  Tensor x = rand_tensor(rng, {4, 6, 5}, -1.0f, 1.0f);

  Graph g;
  Binder b(g, ps, false);
  NodeId fwd = coupling_forward(b, "cp", g.leaf(x), 2);

  CouplingRef ref(ps, "cp", 2);
  oracle::DT want = ref.forward(oracle::from_tensor(x));
  const Tensor& got = g.value(fwd);
  double m = 0;
  for (int64_t i = 0; i < got.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(got[i]) -
                             want.v[static_cast<size_t>(i)]));
  CHECK(m < 1e-5);
}

TEST_CASE("coupling log-determinant matches a numeric Jacobian") {
  Rng rng(19);
  ParamStore ps;
  register_coupling(ps, rng, "cp", 2, 2);
  perturb_coupling_heads(ps, "cp", 2, rng, 0.3f);
  Tensor x = rand_tensor(rng, {2, 3, 3}, -1.0f, 1.0f);

  Graph g;
  Binder b(g, ps, false);
  NodeId ld = coupling_logdet(b, "cp", g.leaf(x), 2);

  CouplingRef ref(ps, "cp", 2);
  const double want = numeric_logdet(ref, oracle::from_tensor(x), 1e-4);
  CHECK(std::abs(static_cast<double>(g.value(ld).item()) - want) < 1e-4);
  // perturbed scales make the determinant measurably non-unit
  CHECK(std::abs(want) > 1e-2);
}

TEST_CASE("coupling layer gradients match finite differences") {
  Rng rng(23);
  const int half = 2;
  oracle::FdCase c;
  c.inputs.push_back(rand_tensor(rng, {4, 5, 4}, -1.0f, 1.0f));
  for (int head = 0; head < 2; ++head) {
    c.inputs.push_back(rand_tensor(rng, {half, half, 3, 3}, -0.3f, 0.3f));
    c.inputs.push_back(rand_tensor(rng, {half}, -0.1f, 0.1f));
    c.inputs.push_back(rand_tensor(rng, {half, half, 3, 3}, -0.3f, 0.3f));
    c.inputs.push_back(rand_tensor(rng, {half}, -0.1f, 0.1f));
  }
  c.diff.assign(c.inputs.size(), true);
  c.build = [&](Graph& g, const std::vector<NodeId>& in) {
    NodeId x1 = g.slice_c(in[0], 0, half);
    NodeId x2 = g.slice_c(in[0], half, 2 * half);
    NodeId s = g.tanh_(
        g.conv2d(g.leaky_relu(g.conv2d(x1, in[1], in[2], 1, 1)), in[3], in[4], 1, 1));
    NodeId t =
        g.conv2d(g.leaky_relu(g.conv2d(x1, in[5], in[6], 1, 1)), in[7], in[8], 1, 1);
    return g.concat_c({g.add(g.mul(x2, g.exp_(s)), t), x1});
  };
  c.ref = [&](const std::vector<oracle::DT>& in) {
    oracle::DT x1 = oracle::slice_c(in[0], 0, half);
    oracle::DT x2 = oracle::slice_c(in[0], half, 2 * half);
    oracle::DT s = oracle::tanh_(oracle::conv2d(
        oracle::leaky_relu(oracle::conv2d(x1, in[1], &in[2], 1, 1), 0.1), in[3],
        &in[4], 1, 1));
    oracle::DT t = oracle::conv2d(
        oracle::leaky_relu(oracle::conv2d(x1, in[5], &in[6], 1, 1), 0.1), in[7],
        &in[8], 1, 1);
    return oracle::concat_c({oracle::add(oracle::mul(x2, oracle::exp_(s)), t), x1});
  };
  CHECK(oracle::fd_max_rel_err(c, rng) < 1e-3);
}

TEST_CASE("global extractor preserves shape and stays finite") {
  Rng rng(29);
  ParamStore ps;
  register_global_extractor(ps, rng, "ge", 4);
  Tensor x = rand_tensor(rng, {4, 8, 12}, -1.0f, 1.0f);

  Graph g;
  Binder b(g, ps, false);
  NodeId out = global_extract(b, "ge", g.leaf(x));
  CHECK(g.value(out).same_shape(x));
  CHECK(g.value(out).all_finite());
}

TEST_CASE("cosine correlation reproduces hand values") {
  Graph g;
  auto vec = [&](std::vector<float> v) {
    Tensor t({static_cast<int>(v.size()), 1, 1});
    for (size_t i = 0; i < v.size(); ++i) t[static_cast<int64_t>(i)] = v[i];
    return g.leaf(t);
  };
  NodeId a = vec({1, 2, -1, 0.5f});
  CHECK(g.value(cosine_correlation(g, a, a)).item() ==
        doctest::Approx(1.0).epsilon(1e-6));

  NodeId u = vec({1, 0, 0, 0});
  NodeId v = vec({0, 1, 0, 0});
  CHECK(g.value(cosine_correlation(g, u, v)).item() == 0.0f);

  NodeId w = vec({1, 1, 0, 0});
  CHECK(std::abs(g.value(cosine_correlation(g, u, w)).item() - 0.70710678f) < 1e-6);

  // scale invariance
  NodeId a3 = vec({3, 6, -3, 1.5f});
  NodeId b2 = vec({0.4f, -1, 2, 0.1f});
  CHECK(g.value(cosine_correlation(g, a, b2)).item() ==
        doctest::Approx(g.value(cosine_correlation(g, a3, b2)).item()).epsilon(1e-5));
}

TEST_CASE("decoupling loss hits its closed-form values") {
  Graph g;
  auto scalar = [&](float v) {
    Tensor t({1});
    t[0] = v;
    return g.leaf(t);
  };
  CHECK(g.value(decoupling_loss_node(g, scalar(0.0f), scalar(1.0f))).item() == 0.0f);
  CHECK(g.value(decoupling_loss_node(g, scalar(1.0f), scalar(1.0f))).item() ==
        doctest::Approx(1.0f / (1.0f + 1e-6f)).epsilon(1e-6));
  CHECK(g.value(decoupling_loss_node(g, scalar(0.1f), scalar(0.0f))).item() ==
        doctest::Approx(1e4f).epsilon(1e-5));
}

TEST_CASE("decoupling loss is monotone: local up, global down") {
  Rng rng(31);
  Graph g;
  auto scalar = [&](float v) {
    Tensor t({1});
    t[0] = v;
    return g.leaf(t);
  };
  for (int i = 0; i < 50; ++i) {
    const float cg = rng.uniform(-1.0f, 1.0f);
    float l1 = rng.uniform(-1.0f, 1.0f), l2 = rng.uniform(-1.0f, 1.0f);
    if (std::abs(l1) > std::abs(l2)) std::swap(l1, l2);
    const float lo = g.value(decoupling_loss_node(g, scalar(l1), scalar(cg))).item();
    const float hi = g.value(decoupling_loss_node(g, scalar(l2), scalar(cg))).item();
    CHECK(lo <= hi);

    const float cl = rng.uniform(-1.0f, 1.0f);
    float g1 = rng.uniform(-1.0f, 1.0f), g2 = rng.uniform(-1.0f, 1.0f);
    if (std::abs(g1) > std::abs(g2)) std::swap(g1, g2);
    const float wg = g.value(decoupling_loss_node(g, scalar(cl), scalar(g1))).item();
    const float sg = g.value(decoupling_loss_node(g, scalar(cl), scalar(g2))).item();
    CHECK(sg <= wg);
  }
}

TEST_CASE("decoupling gradients match finite differences through extractors") {
  Rng rng(37);
  oracle::FdCase c;
  c.inputs.push_back(rand_tensor(rng, {4, 8, 8}, -1.0f, 1.0f));  // propagated
  c.inputs.push_back(rand_tensor(rng, {4, 8, 8}, -1.0f, 1.0f));  // oriented
  c.inputs.push_back(rand_tensor(rng, {4, 4, 3, 3}, -0.3f, 0.3f));  // global w
  c.inputs.push_back(rand_tensor(rng, {4}, -0.1f, 0.1f));
  c.inputs.push_back(rand_tensor(rng, {4, 4, 3, 3}, -0.3f, 0.3f));  // local w
  c.inputs.push_back(rand_tensor(rng, {4}, -0.1f, 0.1f));
  c.diff.assign(c.inputs.size(), true);
  // shared-weight extractors on both branches, correlations, then the loss;
  // exercises gradient accumulation through a twice-bound weight
  c.build = [](Graph& g, const std::vector<NodeId>& in) {
    NodeId gp = g.conv2d(in[0], in[2], in[3], 1, 1);
    NodeId go = g.conv2d(in[1], in[2], in[3], 1, 1);
    NodeId lp = g.conv2d(in[0], in[4], in[5], 1, 1);
    NodeId lo = g.conv2d(in[1], in[4], in[5], 1, 1);
    return decoupling_loss_node(g, cosine_correlation(g, lo, lp),
                                cosine_correlation(g, go, gp));
  };
  c.ref = [](const std::vector<oracle::DT>& in) {
    auto cosine = [](const oracle::DT& a, const oracle::DT& b) {
      double dot = 0, na = 0, nb = 0;
      for (size_t i = 0; i < a.v.size(); ++i) {
        dot += a.v[i] * b.v[i];
        na += a.v[i] * a.v[i];
        nb += b.v[i] * b.v[i];
      }
      return dot / (std::sqrt(na) * std::sqrt(nb) + 1e-8);
    };
    oracle::DT gp = oracle::conv2d(in[0], in[2], &in[3], 1, 1);
    oracle::DT go = oracle::conv2d(in[1], in[2], &in[3], 1, 1);
    oracle::DT lp = oracle::conv2d(in[0], in[4], &in[5], 1, 1);
    oracle::DT lo = oracle::conv2d(in[1], in[4], &in[5], 1, 1);
    const double cl = cosine(lo, lp), cg = cosine(go, gp);
    oracle::DT out{{1}, {cl * cl / (cg * cg + 1e-6)}};
    return out;
  };
  CHECK(oracle::fd_max_rel_err(c, rng) < 1e-3);
}

TEST_CASE("compensation preserves context shape in every mode") {
  for (CompMode mode : {CompMode::kOff, CompMode::kConcat, CompMode::kFull}) {
    ModelConfig cfg;
    cfg.c_ctx = 4;
    cfg.c_feat = 4;
    cfg.c_y = 4;
    cfg.c_h = 4;
    cfg.c_mv = 2;
    cfg.flow_levels = 2;
    cfg.flow_width = 4;
    cfg.comp = mode;
    CodecModel model(cfg, 123);

    Rng rng(41);
    Tensor c0 = rand_tensor(rng, {4, 8, 8}, -1.0f, 1.0f);
    Tensor c0o = rand_tensor(rng, {4, 8, 8}, -1.0f, 1.0f);

    Graph g;
    Binder b(g, model.params(), false);
    DecoupleNodes dec;
    NodeId out = model.compensate(b, g.leaf(c0), g.leaf(c0o), &dec);
    CHECK(g.value(out).same_shape(c0));
    CHECK(g.value(out).all_finite());
    // fusion heads are zero-initialized: untrained compensation is a no-op,
    // so every ablation variant starts from identical contexts
    CHECK(bit_equal(g.value(out), c0));

    if (mode == CompMode::kFull) {
      REQUIRE(dec.loss != kNoNode);
      const float cg = g.value(dec.cor_g).item();
      const float cl = g.value(dec.cor_l).item();
      CHECK(cg >= -1.0f);
      CHECK(cg <= 1.0f);
      CHECK(cl >= -1.0f);
      CHECK(cl <= 1.0f);
      CHECK(g.value(dec.loss).item() >= 0.0f);
      CHECK(g.value(dec.loss).all_finite());
      CHECK(g.value(dec.g_prop).same_shape(c0));
      CHECK(g.value(dec.g_orient).same_shape(c0));
      CHECK(g.value(dec.l_prop).same_shape(c0));
      CHECK(g.value(dec.l_orient).same_shape(c0));
    } else {
      CHECK(dec.loss == kNoNode);
      CHECK(dec.cor_g == kNoNode);
    }
  }
}

TEST_CASE("training on the decoupling loss drives it down") {
  ModelConfig cfg;
  cfg.c_ctx = 4;
  cfg.c_feat = 4;
  cfg.c_y = 4;
  cfg.c_h = 4;
  cfg.c_mv = 2;
  cfg.flow_levels = 2;
  cfg.flow_width = 4;
  cfg.comp = CompMode::kFull;
  CodecModel model(cfg, 321);

  Rng rng(43);
  Tensor c0 = rand_tensor(rng, {4, 8, 8}, -1.0f, 1.0f);
  Tensor c0o = rand_tensor(rng, {4, 8, 8}, -1.0f, 1.0f);

  float first = 0, last = 0;
  for (int s = 0; s < 60; ++s) {
    Graph g;
    Binder b(g, model.params(), true);
    DecoupleNodes dec;
    model.compensate(b, g.leaf(c0), g.leaf(c0o), &dec);
    const float loss = g.value(dec.loss).item();
    if (s == 0) first = loss;
    last = loss;
    g.backward(dec.loss);
    std::map<std::string, Tensor> grads;
    b.collect_grads(grads);
    model.params().adam_step(grads, 1e-3f);
  }
  CHECK(first > 0.0f);
  CHECK(last < first * 0.5f);
}

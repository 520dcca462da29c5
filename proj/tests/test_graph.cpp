#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "psrpn/gradcheck.hpp"
#include "psrpn/graph.hpp"
#include "psrpn/rng.hpp"
#include "psrpn/tensor.hpp"

using namespace psrpn;

namespace {

// Reference convolution straight from the definition: one output element at
// a time, zero padding, no clever loop order.
template <typename T>
Tensor4<T> conv_ref(const Tensor4<T>& X, const Tensor4<T>& W, int stride, int ph, int pw) {
  const int oh = (X.h + 2 * ph - W.h) / stride + 1;
  const int ow = (X.w + 2 * pw - W.w) / stride + 1;
  Tensor4<T> Y(X.n, W.n, oh, ow);
  for (int b = 0; b < X.n; ++b)
    for (int o = 0; o < W.n; ++o)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (int ic = 0; ic < X.c; ++ic)
            for (int ky = 0; ky < W.h; ++ky)
              for (int kx = 0; kx < W.w; ++kx) {
                const int iy = oy * stride + ky - ph;
                const int ix = ox * stride + kx - pw;
                if (iy < 0 || iy >= X.h || ix < 0 || ix >= X.w) continue;
                acc += static_cast<double>(X.at(b, ic, iy, ix)) * W.at(o, ic, ky, kx);
              }
          Y.at(b, o, oy, ox) = static_cast<T>(acc);
        }
  return Y;
}

Tensor4d randn_d(int n, int c, int h, int w, Rng& r, double sd = 1.0) {
  Tensor4d t(n, c, h, w);
  for (double& v : t.data) v = r.normal(0.0, sd);
  return t;
}

}  // namespace

TEST_CASE("conv2d forward matches the definition") {
  Rng r(101);
  struct Case {
    int n, c, h, w, oc, kh, kw, stride, ph, pw;
  };
  const Case cases[] = {
      {1, 1, 5, 5, 1, 3, 3, 1, 1, 1},  {2, 3, 8, 6, 4, 3, 3, 1, 1, 1},
      {1, 2, 7, 7, 3, 1, 1, 1, 0, 0},  {1, 2, 9, 9, 2, 3, 3, 2, 1, 1},
      {1, 1, 8, 8, 1, 7, 7, 2, 3, 3},  {1, 2, 6, 10, 2, 15, 1, 1, 7, 0},
      {1, 2, 10, 6, 2, 1, 15, 1, 0, 7}};
  for (const Case& cs : cases) {
    CAPTURE(cs.h);
    CAPTURE(cs.kh);
    CAPTURE(cs.stride);
    Tensor4d X = randn_d(cs.n, cs.c, cs.h, cs.w, r);
    Tensor4d W = randn_d(cs.oc, cs.c, cs.kh, cs.kw, r);
    Tensor4d want = conv_ref(X, W, cs.stride, cs.ph, cs.pw);
    Graph<double> g;
    const auto y = g.conv2d(g.input(X), g.input(W), cs.stride, cs.ph, cs.pw);
    const Tensor4d& got = g.value(y);
    REQUIRE(got.same_shape(want));
    for (std::size_t i = 0; i < got.numel(); ++i)
      CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-10));
  }
}

TEST_CASE("conv2d rejects bad geometry") {
  Graph<double> g;
  const auto x = g.input(Tensor4d(1, 3, 8, 8));
  CHECK_THROWS_AS(g.conv2d(x, g.input(Tensor4d(4, 2, 3, 3)), 1, 1, 1), ShapeError);
  CHECK_THROWS_AS(g.conv2d(x, g.input(Tensor4d(4, 3, 9, 9)), 1, 0, 0), ShapeError);
  CHECK_THROWS_AS(g.conv2d(x, g.input(Tensor4d(4, 3, 3, 3)), 0, 1, 1), ShapeError);
  CHECK_THROWS_AS(g.conv2d(x, g.input(Tensor4d(4, 3, 3, 3)), 1, -1, 0), ShapeError);
}

TEST_CASE("conv2d gradients pass central differences") {
  Rng r(202);
  Parameter<double> w("w", randn_d(2, 3, 3, 3, r, 0.5));
  Tensor4d x = randn_d(1, 3, 6, 6, r);
  Tensor4d proj = randn_d(1, 2, 6, 6, r);
  auto build = [&](Graph<double>& g) {
    return g.dot_const(g.conv2d(g.input(x), g.param(w), 1, 1, 1), proj);
  };
  Rng pr(1);
  const auto rep = grad_check(build, {&w}, pr, 12);
  CAPTURE(rep.worst);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("strided conv gradients pass central differences") {
  Rng r(203);
  Parameter<double> w("w", randn_d(2, 2, 3, 3, r, 0.5));
  Tensor4d x = randn_d(1, 2, 9, 9, r);
  Tensor4d proj = randn_d(1, 2, 5, 5, r);
  auto build = [&](Graph<double>& g) {
    return g.dot_const(g.conv2d(g.input(x), g.param(w), 2, 1, 1), proj);
  };
  Rng pr(2);
  const auto rep = grad_check(build, {&w}, pr, 12);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("conv input gradient flows through chained convs") {
  Rng r(204);
  Parameter<double> w1("w1", randn_d(3, 2, 3, 3, r, 0.5));
  Parameter<double> w2("w2", randn_d(1, 3, 1, 1, r, 0.5));
  Tensor4d x = randn_d(1, 2, 5, 5, r);
  Tensor4d proj = randn_d(1, 1, 5, 5, r);
  auto build = [&](Graph<double>& g) {
    const auto h = g.conv2d(g.input(x), g.param(w1), 1, 1, 1);
    return g.dot_const(g.conv2d(h, g.param(w2), 1, 0, 0), proj);
  };
  Rng pr(3);
  const auto rep = grad_check(build, {&w1, &w2}, pr, 10);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("batch_norm training forward normalises per channel") {
  Rng r(301);
  Tensor4d x = randn_d(2, 3, 4, 4, r, 3.0);
  for (double& v : x.data) v += 5.0;
  Parameter<double> sc("sc", Tensor4d(1, 3, 1, 1, 1.0));
  Parameter<double> sh("sh", Tensor4d(1, 3, 1, 1, 0.0));
  BnState<double> st(3);
  Graph<double> g(true);
  const auto y = g.batch_norm(g.input(x), g.param(sc), g.param(sh), &st);
  const Tensor4d& Y = g.value(y);
  for (int c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (int b = 0; b < 2; ++b)
      for (int i = 0; i < 16; ++i) m += Y.row(b, c, 0)[i];
    m /= 32;
    for (int b = 0; b < 2; ++b)
      for (int i = 0; i < 16; ++i) v += (Y.row(b, c, 0)[i] - m) * (Y.row(b, c, 0)[i] - m);
    v /= 32;
    CHECK(m == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(v == doctest::Approx(1.0).epsilon(1e-3));  // eps shrinks variance slightly
  }
}

TEST_CASE("batch_norm running stats update with momentum and drive inference") {
  Rng r(302);
  Tensor4d x = randn_d(1, 2, 8, 8, r, 2.0);
  Parameter<double> sc("sc", Tensor4d(1, 2, 1, 1, 1.5));
  Parameter<double> sh("sh", Tensor4d(1, 2, 1, 1, -0.5));
  BnState<double> st(2);
  double batch_mean[2], batch_var[2];
  for (int c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    for (int i = 0; i < 64; ++i) m += x.row(0, c, 0)[i];
    m /= 64;
    for (int i = 0; i < 64; ++i) v += (x.row(0, c, 0)[i] - m) * (x.row(0, c, 0)[i] - m);
    batch_mean[c] = m;
    batch_var[c] = v / 64;  // biased
  }
  {
    Graph<double> g(true);
    g.batch_norm(g.input(x), g.param(sc), g.param(sh), &st);
    // updates are collected but deferred until explicitly applied
    CHECK(st.running_mean.data[0] == 0.0);
    g.apply_bn_updates();
  }
  for (int c = 0; c < 2; ++c) {
    CHECK(st.running_mean.data[c] == doctest::Approx(0.1 * batch_mean[c]).epsilon(1e-12));
    CHECK(st.running_var.data[c] == doctest::Approx(0.9 * 1.0 + 0.1 * batch_var[c]).epsilon(1e-12));
  }
  Graph<double> gi(false);
  const auto y = gi.batch_norm(gi.input(x), gi.param(sc), gi.param(sh), &st);
  const Tensor4d& Y = gi.value(y);
  const double want0 = (x.at(0, 0, 0, 0) - st.running_mean.data[0]) /
                           std::sqrt(st.running_var.data[0] + st.eps) * 1.5 -
                       0.5;
  CHECK(Y.at(0, 0, 0, 0) == doctest::Approx(want0).epsilon(1e-12));
}

TEST_CASE("batch_norm gradients pass central differences through batch stats") {
  Rng r(303);
  Tensor4d x = randn_d(2, 2, 3, 3, r);
  Parameter<double> w("w", randn_d(2, 2, 3, 3, r, 0.5));
  Parameter<double> sc("sc", Tensor4d(1, 2, 1, 1, 1.2));
  Parameter<double> sh("sh", Tensor4d(1, 2, 1, 1, 0.3));
  BnState<double> st(2);
  Tensor4d proj = randn_d(2, 2, 3, 3, r);
  auto build = [&](Graph<double>& g) {
    const auto h = g.conv2d(g.input(x), g.param(w), 1, 1, 1);
    return g.dot_const(g.batch_norm(h, g.param(sc), g.param(sh), &st), proj);
  };
  Rng pr(4);
  const auto rep = grad_check(build, {&w, &sc, &sh}, pr, 12);
  CAPTURE(rep.worst);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("relu sigmoid add behave and differentiate") {
  Rng r(401);
  // keep inputs away from relu's kink so central differences are valid
  Tensor4d x = randn_d(1, 2, 4, 4, r);
  for (double& v : x.data)
    if (std::fabs(v) < 0.05) v = 0.1;
  Parameter<double> w("w", randn_d(2, 2, 1, 1, r, 0.7));
  Tensor4d proj = randn_d(1, 2, 4, 4, r);

  Graph<double> g;
  const auto xr = g.relu(g.input(x));
  for (std::size_t i = 0; i < x.numel(); ++i)
    CHECK(g.value(xr).data[i] == std::max(0.0, x.data[i]));
  const auto xs = g.sigmoid(g.input(x));
  for (std::size_t i = 0; i < x.numel(); ++i)
    CHECK(g.value(xs).data[i] == doctest::Approx(1.0 / (1.0 + std::exp(-x.data[i]))));

  auto build = [&](Graph<double>& gg) {
    const auto h = gg.conv2d(gg.input(x), gg.param(w), 1, 0, 0);
    return gg.dot_const(gg.add(gg.relu(h), gg.sigmoid(h)), proj);
  };
  Rng pr(5);
  const auto rep = grad_check(build, {&w}, pr, 8);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("bilinear_upsample2x maps constants to constants and doubles dims") {
  Tensor4d x(1, 1, 3, 5, 2.5);
  Graph<double> g;
  const auto y = g.bilinear_upsample2x(g.input(x));
  const Tensor4d& Y = g.value(y);
  REQUIRE(Y.h == 6);
  REQUIRE(Y.w == 10);
  for (double v : Y.data) CHECK(v == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("bilinear_upsample2x interpolates interior midpoints") {
  // single row 0,2 upsampled: centres at src -0.25,0.25,0.75,1.25
  Tensor4d x(1, 1, 1, 2);
  x.data = {0.0, 2.0};
  Graph<double> g;
  const Tensor4d& Y = g.value(g.bilinear_upsample2x(g.input(x)));
  CHECK(Y.data[0] == doctest::Approx(0.0));
  CHECK(Y.data[1] == doctest::Approx(0.5));
  CHECK(Y.data[2] == doctest::Approx(1.5));
  CHECK(Y.data[3] == doctest::Approx(2.0));
}

TEST_CASE("bilinear_upsample2x gradient passes central differences") {
  Rng r(402);
  Parameter<double> w("w", randn_d(1, 1, 3, 3, r, 0.5));
  Tensor4d x = randn_d(1, 1, 4, 4, r);
  Tensor4d proj = randn_d(1, 1, 8, 8, r);
  auto build = [&](Graph<double>& g) {
    return g.dot_const(g.bilinear_upsample2x(g.conv2d(g.input(x), g.param(w), 1, 1, 1)), proj);
  };
  Rng pr(6);
  const auto rep = grad_check(build, {&w}, pr, 9);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("avg_downsample2x halves dims and averages quads") {
  Tensor4d x(1, 1, 2, 4);
  x.data = {1, 2, 3, 4, 5, 6, 7, 8};
  Graph<double> g;
  const Tensor4d& Y = g.value(g.avg_downsample2x(g.input(x)));
  REQUIRE(Y.h == 1);
  REQUIRE(Y.w == 2);
  CHECK(Y.data[0] == doctest::Approx((1 + 2 + 5 + 6) / 4.0));
  CHECK(Y.data[1] == doctest::Approx((3 + 4 + 7 + 8) / 4.0));
  CHECK_THROWS_AS(g.avg_downsample2x(g.input(Tensor4d(1, 1, 3, 4))), ShapeError);
}

TEST_CASE("avg_downsample2x and global_avg_pool gradients pass") {
  Rng r(403);
  Parameter<double> w("w", randn_d(2, 1, 3, 3, r, 0.5));
  Tensor4d x = randn_d(1, 1, 6, 6, r);
  Tensor4d proj = randn_d(1, 2, 3, 3, r);
  Tensor4d proj2(1, 2, 1, 1);
  proj2.data = {0.7, -1.3};
  auto build = [&](Graph<double>& g) {
    return g.dot_const(g.avg_downsample2x(g.conv2d(g.input(x), g.param(w), 1, 1, 1)), proj);
  };
  Rng pr(7);
  CHECK(grad_check(build, {&w}, pr, 9).max_rel_err < 1e-4);
  auto build2 = [&](Graph<double>& g) {
    return g.dot_const(g.global_avg_pool(g.conv2d(g.input(x), g.param(w), 1, 1, 1)), proj2);
  };
  CHECK(grad_check(build2, {&w}, pr, 9).max_rel_err < 1e-4);
}

TEST_CASE("gather_cells reads the advertised channels and backprops") {
  Rng r(404);
  Tensor4d reg = randn_d(1, 12, 4, 4, r);
  Tensor4d cls = randn_d(1, 3, 4, 4, r);
  std::vector<CellRef> cells = {{0, 0, 0}, {2, 3, 1}, {1, 2, 2}};
  Graph<double> g;
  const auto y = g.gather_cells(g.input(reg), g.input(cls), cells);
  const Tensor4d& Y = g.value(y);
  REQUIRE(Y.n == 3);
  CHECK(Y.at(1, 0, 0, 0) == reg.at(0, 8, 3, 1));
  CHECK(Y.at(1, 3, 0, 0) == reg.at(0, 11, 3, 1));
  CHECK(Y.at(1, 4, 0, 0) == cls.at(0, 2, 3, 1));
  CHECK(Y.at(2, 4, 0, 0) == cls.at(0, 1, 2, 2));

  Parameter<double> wr("wr", randn_d(12, 2, 1, 1, r, 0.5));
  Parameter<double> wc("wc", randn_d(3, 2, 1, 1, r, 0.5));
  Tensor4d x = randn_d(1, 2, 4, 4, r);
  Tensor4d proj = randn_d(3, 5, 1, 1, r);
  auto build = [&](Graph<double>& gg) {
    const auto xi = gg.input(x);
    const auto rm = gg.conv2d(xi, gg.param(wr), 1, 0, 0);
    const auto cm = gg.conv2d(xi, gg.param(wc), 1, 0, 0);
    return gg.dot_const(gg.gather_cells(rm, cm, cells), proj);
  };
  Rng pr(10);
  const auto rep = grad_check(build, {&wr, &wc}, pr, 10);
  CAPTURE(rep.worst);
  CHECK(rep.max_rel_err < 1e-4);

  Graph<double> g2;
  CHECK_THROWS_AS(
      g2.gather_cells(g2.input(Tensor4d(1, 12, 4, 4)), g2.input(Tensor4d(1, 3, 4, 4)),
                      std::vector<CellRef>{{3, 0, 0}}),
      ShapeError);
}

TEST_CASE("shared parameters accumulate one combined gradient") {
  Rng r(405);
  Parameter<double> w("w", randn_d(1, 1, 3, 3, r, 0.5));
  Tensor4d x = randn_d(1, 1, 5, 5, r);
  Tensor4d proj = randn_d(1, 1, 5, 5, r);
  auto build = [&](Graph<double>& g) {
    const auto wid = g.param(w);
    const auto a = g.conv2d(g.input(x), wid, 1, 1, 1);
    const auto b = g.conv2d(a, wid, 1, 1, 1);  // same weights twice
    return g.dot_const(b, proj);
  };
  Rng pr(8);
  const auto rep = grad_check(build, {&w}, pr, 9);
  CAPTURE(rep.worst);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("separable_gcn equals sum of explicit branch convs") {
  Rng r(406);
  const int k = 5, p = 2;
  Tensor4d x = randn_d(1, 3, 6, 6, r);
  Tensor4d a1 = randn_d(2, 3, k, 1, r, 0.4), a2 = randn_d(2, 2, 1, k, r, 0.4);
  Tensor4d b1 = randn_d(2, 3, 1, k, r, 0.4), b2 = randn_d(2, 2, k, 1, r, 0.4);
  Graph<double> g;
  const auto xi = g.input(x);
  const auto got = separable_gcn(g, xi, g.input(a1), g.input(a2), g.input(b1), g.input(b2), k);
  const auto wantA = g.conv2d(g.conv2d(xi, g.input(a1), 1, p, 0), g.input(a2), 1, 0, p);
  const auto wantB = g.conv2d(g.conv2d(xi, g.input(b1), 1, 0, p), g.input(b2), 1, p, 0);
  const auto want = g.add(wantA, wantB);
  for (std::size_t i = 0; i < g.value(got).numel(); ++i)
    CHECK(g.value(got).data[i] == doctest::Approx(g.value(want).data[i]).epsilon(1e-12));
  CHECK_THROWS_AS(
      separable_gcn(g, xi, g.input(a1), g.input(a2), g.input(b1), g.input(b2), 4), ShapeError);
}

TEST_CASE("rpn_loss value matches a hand computation") {
  // two anchors: one positive with known offsets, one negative
  Tensor4d pooled(2, 5, 1, 1);
  // positive: t = (0.5, 0, 0, 0) vs target zeros -> smooth l1 = 0.125
  pooled.at(0, 0, 0, 0) = 0.5;
  pooled.at(0, 4, 0, 0) = 2.0;  // logit
  // negative: logit -1
  pooled.at(1, 4, 0, 0) = -1.0;
  std::vector<std::array<double, 4>> targets = {{0, 0, 0, 0}, {0, 0, 0, 0}};
  std::vector<int> labels = {1, -1};
  Graph<double> g(true);
  LossValues<double> lv;
  const auto loss = g.rpn_loss(g.input(pooled), targets, labels, 4, 2, &lv);
  const double bce_pos = std::log1p(std::exp(-2.0));
  const double bce_neg = std::log1p(std::exp(-1.0));
  CHECK(lv.reg == doctest::Approx(0.125).epsilon(1e-12));
  CHECK(lv.cls_pos == doctest::Approx(bce_pos).epsilon(1e-12));
  CHECK(lv.cls_neg == doctest::Approx(bce_neg).epsilon(1e-12));
  CHECK(g.value(loss).data[0] ==
        doctest::Approx((0.125 + bce_pos + bce_neg) / 8.0).epsilon(1e-12));
}

TEST_CASE("smooth l1 reference points") {
  // |x|=0.5 -> 0.125, |x|=2 -> 1.5, encoded via single-anchor losses
  auto loss_for = [](double t0) {
    Tensor4d pooled(1, 5, 1, 1);
    pooled.at(0, 0, 0, 0) = t0;
    pooled.at(0, 4, 0, 0) = 50.0;  // saturate bce to ~0
    std::vector<std::array<double, 4>> targets = {{0, 0, 0, 0}};
    std::vector<int> labels = {1};
    Graph<double> g(true);
    LossValues<double> lv;
    g.rpn_loss(g.input(pooled), targets, labels, 1, 1, &lv);
    return static_cast<double>(lv.reg);
  };
  CHECK(loss_for(0.5) == doctest::Approx(0.125).epsilon(1e-12));
  CHECK(loss_for(2.0) == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(loss_for(-2.0) == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("rpn_loss bce is stable at extreme logits") {
  Tensor4d pooled(2, 5, 1, 1);
  pooled.at(0, 4, 0, 0) = 100.0;   // positive, confident
  pooled.at(1, 4, 0, 0) = -100.0;  // negative, confident
  std::vector<std::array<double, 4>> targets(2, {0, 0, 0, 0});
  std::vector<int> labels = {1, -1};
  Graph<double> g(true);
  LossValues<double> lv;
  const auto loss = g.rpn_loss(g.input(pooled), targets, labels, 2, 1, &lv);
  CHECK(std::isfinite(g.value(loss).data[0]));
  CHECK(g.value(loss).data[0] == doctest::Approx(0.0).epsilon(1e-12));
  // and the other direction explodes linearly, not to infinity
  pooled.at(0, 4, 0, 0) = -100.0;
  Graph<double> g2(true);
  LossValues<double> lv2;
  g2.rpn_loss(g2.input(pooled), targets, labels, 2, 1, &lv2);
  CHECK(lv2.cls_pos == doctest::Approx(100.0).epsilon(1e-6));
}

TEST_CASE("rpn_loss rejects non finite pooled values") {
  Tensor4d pooled(1, 5, 1, 1);
  pooled.at(0, 4, 0, 0) = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::array<double, 4>> targets = {{0, 0, 0, 0}};
  std::vector<int> labels = {-1};
  Graph<double> g(true);
  CHECK_THROWS_AS(g.rpn_loss(g.input(pooled), targets, labels, 1, 1), NumericError);
}

TEST_CASE("rpn_loss gradient passes central differences") {
  Rng r(407);
  Parameter<double> w("w", randn_d(5, 2, 1, 1, r, 0.4));
  Tensor4d x = randn_d(3, 2, 1, 1, r);  // three anchors worth of features
  std::vector<std::array<double, 4>> targets = {
      {0.2, -0.1, 0.3, 0.0}, {0, 0, 0, 0}, {-2.0, 0.5, 0.1, 0.4}};
  std::vector<int> labels = {1, -1, 1};
  auto build = [&](Graph<double>& g) {
    const auto pooled = g.conv2d(g.input(x), g.param(w), 1, 0, 0);
    return g.rpn_loss(pooled, targets, labels, 3, 2);
  };
  Rng pr(9);
  const auto rep = grad_check(build, {&w}, pr, 10);
  CAPTURE(rep.worst);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("backward accumulates into parameter grad across runs") {
  Rng r(408);
  Parameter<double> w("w", randn_d(1, 1, 1, 1, r));
  Tensor4d x(1, 1, 1, 1, 2.0);
  Tensor4d proj(1, 1, 1, 1, 1.0);
  w.zero_grad();
  for (int i = 0; i < 3; ++i) {
    Graph<double> g;
    const auto y = g.dot_const(g.conv2d(g.input(x), g.param(w), 1, 0, 0), proj);
    g.backward(y);
  }
  CHECK(w.grad.data[0] == doctest::Approx(6.0));  // d/dw (2w) accumulated thrice
}

// Acceptance gate: eight checks, one verdict line each, non-zero exit when
// any fails. The learning check trains two small models end to end, so a
// full run takes on the order of ten minutes.
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "psrpn/anchors.hpp"
#include "psrpn/box.hpp"
#include "psrpn/config.hpp"
#include "psrpn/dataset.hpp"
#include "psrpn/eval.hpp"
#include "psrpn/gradcheck.hpp"
#include "psrpn/model.hpp"
#include "psrpn/model_io.hpp"
#include "psrpn/ps_pool.hpp"
#include "psrpn/trainer.hpp"

namespace {

using namespace psrpn;

int g_failures = 0;

void verdict(int idx, const char* label, bool ok, const std::string& detail) {
  std::printf("criterion %d  %-22s %s  %s\n", idx, label, ok ? "PASS" : "FAIL",
              detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

std::string config_hash_of(const Config& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical_config(cfg))));
  return buf;
}

// ------------------------------------------------------------ 1: anchors

bool anchors_check(std::string& detail) {
  const auto levels640 = pyramid_levels(640, 640);
  const auto profile = default_window_profile(5);
  const AnchorSet w640 = make_window_anchors(levels640, profile);
  bool ok = w640.total() == kWindowAudit640Total;
  for (int i = 0; i < 5; ++i) ok = ok && w640.level_counts[i] == kWindowAudit640[i];

  const AnchorSet g3 = make_grid_anchors(levels640, {0.5, 1.0, 2.0});
  const AnchorSet g5 = make_grid_anchors(levels640, {1.0 / 3.0, 0.5, 1.0, 2.0, 3.0});
  ok = ok && g3.total() == kGridAudit640Ratios3 && g5.total() == kGridAudit640Ratios5;

  // Independent enumeration at 128x128: walk every placement the slow way
  // and demand the generator emit exactly that sequence.
  const auto levels128 = pyramid_levels(128, 128);
  const AnchorSet w128 = make_window_anchors(levels128, profile);
  std::size_t at = 0;
  bool order_ok = true;
  long brute = 0;
  for (std::size_t l = 0; l < levels128.size(); ++l)
    for (std::size_t s = 0; s < profile[l].size(); ++s)
      for (int r = 0; r + profile[l][s].h <= levels128[l].h; ++r)
        for (int c = 0; c + profile[l][s].w <= levels128[l].w; ++c) {
          ++brute;
          if (at >= w128.anchors.size()) {
            order_ok = false;
            continue;
          }
          const Anchor& a = w128.anchors[at++];
          order_ok = order_ok && a.level == static_cast<int>(l) &&
                     a.shape == static_cast<int>(s) && a.row == r && a.col == c;
        }
  ok = ok && order_ok && brute == w128.total() && at == w128.anchors.size();

  long grid_brute = 0;
  const AnchorSet g128 = make_grid_anchors(levels128, {0.5, 1.0, 2.0});
  for (const LevelGeom& lv : levels128) grid_brute += 3L * lv.h * lv.w;
  ok = ok && grid_brute == g128.total();

  char buf[160];
  std::snprintf(buf, sizeof buf, "640 window %ld, grid %ld/%ld; 128 brute-force %ld anchors",
                w640.total(), g3.total(), g5.total(), brute);
  detail = buf;
  return ok;
}

// ------------------------------------------------------------- 2: params

bool params_check(std::string& detail) {
  auto count_of = [](HeadVariant v, bool ps) {
    ArchConfig cfg;
    cfg.variant = v;
    cfg.position_sensitive = ps;
    return count_params(cfg);
  };
  const long base = count_of(HeadVariant::Baseline, false);
  const long base_ps = count_of(HeadVariant::Baseline, true);
  const long naive = count_of(HeadVariant::Naive, false);
  const long gcn_s = count_of(HeadVariant::GcnS, false);
  const long gcn_ns = count_of(HeadVariant::GcnNS, false);
  const long lk_s = count_of(HeadVariant::LkS, false);
  const long lk_ns = count_of(HeadVariant::LkNS, false);

  const bool ok = base == kParamsBaselineDense && base_ps - base == kParamsPsMinusDense &&
                  naive - base == kParamsNaiveMinusBaseline &&
                  gcn_ns - gcn_s == kParamsSplitSmootherDelta &&
                  lk_ns - lk_s == kParamsSplitSmootherDelta;
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "baseline %ld, ps +%ld, naive +%ld, ns-s %ld/%ld; gcn-s %ld, lk-s %ld",
                base, base_ps - base, naive - base, gcn_ns - gcn_s, lk_ns - lk_s, gcn_s, lk_s);
  detail = buf;
  return ok;
}

// ---------------------------------------------------------- 3: gradients

Tensor4d randn_d(int n, int c, int h, int w, Rng& rng, double sd = 1.0) {
  return Tensor4d::randn(n, c, h, w, rng, sd);
}

double op_suite_worst(std::uint64_t seed) {
  Rng r(seed);
  double worst = 0.0;
  int case_idx = 0;
  auto run = [&](const std::function<Graph<double>::Id(Graph<double>&)>& build,
                 std::vector<Parameter<double>*> params) {
    Rng pr(seed * 97 + ++case_idx);
    worst = std::max(worst, grad_check(build, std::move(params), pr, 4).max_rel_err);
  };

  // conv, strided and padded
  {
    Parameter<double> w("w", randn_d(3, 2, 3, 3, r, 0.5));
    Tensor4d x = randn_d(2, 2, 7, 6, r);
    Tensor4d proj = randn_d(2, 3, 4, 3, r);
    run([&](Graph<double>& g) {
      return g.dot_const(g.conv2d(g.input(x), g.param(w), 2, 1, 1), proj);
    }, {&w});
  }
  // batch norm in training mode, all three entry points
  {
    Parameter<double> x("x", randn_d(3, 2, 4, 4, r));
    Parameter<double> sc("sc", randn_d(1, 2, 1, 1, r, 0.3));
    Parameter<double> sh("sh", randn_d(1, 2, 1, 1, r, 0.3));
    BnState<double> bn(2);
    Tensor4d proj = randn_d(3, 2, 4, 4, r);
    run([&](Graph<double>& g) {
      return g.dot_const(g.batch_norm(g.param(x), g.param(sc), g.param(sh), &bn), proj);
    }, {&x, &sc, &sh});
  }
  // relu, sigmoid, add, upsample, downsample, global pool
  {
    Parameter<double> x("x", randn_d(1, 3, 4, 4, r));
    Parameter<double> y("y", randn_d(1, 3, 4, 4, r));
    Tensor4d proj = randn_d(1, 3, 4, 4, r);
    Tensor4d proj_up = randn_d(1, 3, 8, 8, r);
    Tensor4d proj_dn = randn_d(1, 3, 2, 2, r);
    Tensor4d proj_gp = randn_d(1, 3, 1, 1, r);
    run([&](Graph<double>& g) { return g.dot_const(g.relu(g.param(x)), proj); }, {&x});
    run([&](Graph<double>& g) { return g.dot_const(g.sigmoid(g.param(x)), proj); }, {&x});
    run([&](Graph<double>& g) {
      return g.dot_const(g.add(g.param(x), g.param(y)), proj);
    }, {&x, &y});
    run([&](Graph<double>& g) {
      return g.dot_const(g.bilinear_upsample2x(g.param(x)), proj_up);
    }, {&x});
    run([&](Graph<double>& g) {
      return g.dot_const(g.avg_downsample2x(g.param(x)), proj_dn);
    }, {&x});
    run([&](Graph<double>& g) {
      return g.dot_const(g.global_avg_pool(g.param(x)), proj_gp);
    }, {&x});
  }
  // position-sensitive pooling and the dense gather
  {
    const int k = 2;
    Parameter<double> reg("reg", randn_d(1, 4 * k * k, 6, 6, r));
    Parameter<double> cls("cls", randn_d(1, k * k, 6, 6, r));
    std::vector<PoolWindow> wins = {{0, 0, 3, 3}, {1, 2, 4, 5}, {3, 3, 1, 2}};
    Tensor4d proj = randn_d(3, 5, 1, 1, r);
    run([&](Graph<double>& g) {
      return g.dot_const(g.ps_pool(g.param(reg), g.param(cls), wins, k), proj);
    }, {&reg, &cls});
    Parameter<double> dreg("dreg", randn_d(1, 12, 5, 5, r));
    Parameter<double> dcls("dcls", randn_d(1, 3, 5, 5, r));
    std::vector<CellRef> cells = {{0, 1, 1}, {2, 4, 0}, {1, 0, 4}};
    run([&](Graph<double>& g) {
      return g.dot_const(g.gather_cells(g.param(dreg), g.param(dcls), cells), proj);
    }, {&dreg, &dcls});
  }
  // the training loss end to end from a pooled tensor
  {
    Parameter<double> pooled("pooled", randn_d(6, 5, 1, 1, r, 0.8));
    const std::vector<std::array<double, 4>> targets = {
        {0.3, -0.2, 0.4, 0.1}, {0, 0, 0, 0},          {-1.4, 0.6, 0.2, -0.3},
        {0.1, 0.1, -2.0, 0.5}, {0.9, -0.8, 0.3, 0.2}, {0, 0, 0, 0}};
    const std::vector<int> labels = {1, -1, 1, 1, -1, 0};
    run([&](Graph<double>& g) {
      return g.rpn_loss(g.param(pooled), targets, labels, 4, 2);
    }, {&pooled});
  }
  return worst;
}

ArchConfig micro_arch(HeadVariant v) {
  ArchConfig cfg;
  cfg.resnet50 = false;
  cfg.toy_stem = 3;
  cfg.toy_widths = {4, 5, 6, 7};
  cfg.decoder_channels = 6;
  cfg.variant = v;
  cfg.position_sensitive = true;
  cfg.ps_k = 2;
  cfg.gcn_kernel = 5;
  cfg.gcn_mid = 2;
  cfg.lk_kernel = 5;
  cfg.lk_width = 3;
  return cfg;
}

double variant_worst(HeadVariant v, std::uint64_t seed) {
  const ArchConfig arch = micro_arch(v);
  Model<double> model = init_model<double>(arch, seed);
  Rng data_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const Tensor4d image = Tensor4d::randn(1, 3, 64, 64, data_rng, 1.0);

  const auto build = [&](Graph<double>& g) {
    const auto maps = forward_model(g, model, g.input(image));
    std::vector<PoolWindow> win0 = {{1, 2, 8, 8}, {0, 0, 4, 8}};
    std::vector<PoolWindow> win2 = {{0, 1, 3, 2}};
    const auto p0 = g.ps_pool(maps.reg[0], maps.cls[0], win0, arch.ps_k);
    const auto p2 = g.ps_pool(maps.reg[2], maps.cls[2], win2, arch.ps_k);
    const std::vector<std::array<double, 4>> t0 = {{0.2, -0.1, 0.3, 0.05}, {0, 0, 0, 0}};
    const std::vector<std::array<double, 4>> t2 = {{-0.3, 0.2, -0.1, 0.4}};
    const auto l0 = g.rpn_loss(p0, t0, {1, -1}, 4, 1);
    const auto l2 = g.rpn_loss(p2, t2, {1}, 4, 1);
    return g.add(l0, l2);
  };

  std::vector<Parameter<double>*> params(model.ordered.begin(), model.ordered.end());
  Rng probe_rng(seed + 17);
  return grad_check(build, params, probe_rng, 2).max_rel_err;
}

bool gradients_check(std::string& detail) {
  const double tol = 1e-4;
  double worst_ops = 0.0;
  for (int s = 0; s < 10; ++s) worst_ops = std::max(worst_ops, op_suite_worst(500 + s));

  double worst_net = 0.0;
  const HeadVariant variants[] = {HeadVariant::Baseline, HeadVariant::Naive, HeadVariant::GcnS,
                                  HeadVariant::LkS,      HeadVariant::GcnNS, HeadVariant::LkNS};
  for (HeadVariant v : variants)
    for (int s = 0; s < 10; ++s) worst_net = std::max(worst_net, variant_worst(v, 100 + s));

  char buf[120];
  std::snprintf(buf, sizeof buf, "ops max rel err %.2e, variants %.2e (tol %.0e, 10 seeds)",
                worst_ops, worst_net, tol);
  detail = buf;
  return worst_ops <= tol && worst_net <= tol;
}

// ------------------------------------------------------------ 4: oracles

bool conv_oracle() {
  Rng r(61);
  for (int trial = 0; trial < 5; ++trial) {
    const int cin = r.uniform_int(1, 3), cout = r.uniform_int(1, 3);
    const int kh = 1 + 2 * r.uniform_int(0, 2), kw = 1 + 2 * r.uniform_int(0, 2);
    const int stride = r.uniform_int(1, 2);
    const int ph = kh / 2, pw = kw / 2;
    const int H = r.uniform_int(kh, 9), W = r.uniform_int(kw, 9);
    Tensor4d x = randn_d(2, cin, H, W, r);
    Tensor4d w = randn_d(cout, cin, kh, kw, r);
    Graph<double> g;
    const Tensor4d& y = g.value(g.conv2d(g.input(x), g.input(w), stride, ph, pw));
    for (int n = 0; n < y.n; ++n)
      for (int co = 0; co < y.c; ++co)
        for (int oy = 0; oy < y.h; ++oy)
          for (int ox = 0; ox < y.w; ++ox) {
            double acc = 0.0;
            for (int ci = 0; ci < cin; ++ci)
              for (int dy = 0; dy < kh; ++dy)
                for (int dx = 0; dx < kw; ++dx) {
                  const int iy = oy * stride + dy - ph, ix = ox * stride + dx - pw;
                  if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                  acc += x.at(n, ci, iy, ix) * w.at(co, ci, dy, dx);
                }
            if (std::fabs(acc - y.at(n, co, oy, ox)) > 1e-6) return false;
          }
  }
  return true;
}

std::vector<int> nms_reference(const std::vector<Proposal>& props, double thresh,
                               int max_keep) {
  std::vector<bool> dead(props.size(), false);
  std::vector<int> kept;
  while (max_keep < 0 || static_cast<int>(kept.size()) < max_keep) {
    int best = -1;
    for (std::size_t i = 0; i < props.size(); ++i)
      if (!dead[i] && (best < 0 || props[i].score > props[best].score))
        best = static_cast<int>(i);
    if (best < 0) break;
    kept.push_back(best);
    dead[best] = true;
    for (std::size_t i = 0; i < props.size(); ++i)
      if (!dead[i] && iou(props[best].box, props[i].box) > thresh) dead[i] = true;
  }
  return kept;
}

bool nms_oracle() {
  Rng r(62);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Proposal> props;
    const int n = r.uniform_int(1, 40);
    for (int i = 0; i < n; ++i) {
      const double x0 = r.uniform_int(0, 60), y0 = r.uniform_int(0, 60);
      const double w = r.uniform_int(4, 30), h = r.uniform_int(4, 30);
      props.push_back({Box{x0, y0, x0 + w, y0 + h},
                       r.uniform_int(0, 9) / 10.0});  // coarse scores force ties
    }
    const int cap = trial % 3 == 0 ? r.uniform_int(1, 10) : -1;
    if (nms(props, 0.5, cap) != nms_reference(props, 0.5, cap)) return false;
  }
  return true;
}

// Same greedy rule as the library matcher, written as plainly as possible:
// proposals in given order up to the budget, each takes the highest-overlap
// unclaimed target at or above the threshold, lowest index on ties.
double recall_reference(const std::vector<Proposal>& props, const std::vector<GtBox>& gts,
                        int n, double thresh) {
  std::vector<bool> taken(gts.size(), false);
  long matched = 0, eligible = 0;
  for (const GtBox& g : gts)
    if (!g.ignore) ++eligible;
  for (std::size_t p = 0; p < props.size() && p < static_cast<std::size_t>(n); ++p) {
    int best = -1;
    double best_v = -1.0;
    for (std::size_t i = 0; i < gts.size(); ++i) {
      if (taken[i] || gts[i].ignore) continue;
      const double v = iou(props[p].box, gts[i].box);
      if (v >= thresh && v > best_v) {
        best = static_cast<int>(i);
        best_v = v;
      }
    }
    if (best >= 0) {
      taken[best] = true;
      ++matched;
    }
  }
  return eligible ? static_cast<double>(matched) / eligible : 0.0;
}

bool recall_oracle() {
  Rng r(63);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<GtBox> gts;
    for (int i = 0, n = r.uniform_int(1, 10); i < n; ++i) {
      const double x0 = r.uniform_int(0, 50), y0 = r.uniform_int(0, 50);
      gts.push_back({Box{x0, y0, x0 + r.uniform_int(5, 25), y0 + r.uniform_int(5, 25)},
                     r.uniform_int(0, 9) == 0});
    }
    std::vector<Proposal> props;
    for (int i = 0, n = r.uniform_int(1, 10); i < n; ++i) {
      const GtBox& g = gts[static_cast<std::size_t>(r.uniform_int(0, gts.size() - 1))];
      const double jx = r.uniform_int(0, 8) - 4, jy = r.uniform_int(0, 8) - 4;
      props.push_back({Box{g.box.x0 + jx, g.box.y0 + jy, g.box.x1 + jx, g.box.y1 + jy},
                       r.uniform_int(0, 99) / 100.0});
    }
    for (double thresh : {0.5, 0.75}) {
      const int budget = r.uniform_int(1, 10);
      if (std::fabs(recall_at(props, gts, budget, thresh) -
                    recall_reference(props, gts, budget, thresh)) > 1e-12)
        return false;
    }
  }
  return true;
}

bool loss_oracle() {
  Rng r(64);
  for (int trial = 0; trial < 10; ++trial) {
    const int A = r.uniform_int(2, 12);
    Tensor4d pooled = randn_d(A, 5, 1, 1, r);
    std::vector<std::array<double, 4>> targets(A);
    std::vector<int> labels(A);
    for (int a = 0; a < A; ++a) {
      for (int d = 0; d < 4; ++d) targets[a][d] = r.normal(0.0, 1.2);
      labels[a] = r.uniform_int(-1, 1);
    }
    const int na = r.uniform_int(2, 8), nb = r.uniform_int(1, 3);

    Graph<double> g;
    LossValues<double> lv;
    const double got = g.value(g.rpn_loss(g.input(pooled), targets, labels, na, nb, &lv)).data[0];

    double reg = 0.0, cls = 0.0;
    for (int a = 0; a < A; ++a) {
      const double o = pooled.at(a, 4, 0, 0);
      if (labels[a] > 0) {
        for (int d = 0; d < 4; ++d) {
          const double diff = pooled.at(a, d, 0, 0) - targets[a][d];
          reg += std::fabs(diff) < 1.0 ? 0.5 * diff * diff : std::fabs(diff) - 0.5;
        }
        cls += std::log(1.0 + std::exp(-o));
      } else if (labels[a] < 0) {
        cls += std::log(1.0 + std::exp(o));
      }
    }
    const double want = (reg + cls) / (static_cast<double>(na) * nb);
    if (std::fabs(got - want) > 1e-6 * std::max(1.0, std::fabs(want))) return false;
    const double parts = (lv.reg + lv.cls_pos + lv.cls_neg) / (static_cast<double>(na) * nb);
    if (std::fabs(lv.total - parts) > 1e-9) return false;
  }
  return true;
}

bool oracles_check(std::string& detail) {
  const bool conv = conv_oracle();
  const bool box_nms = nms_oracle();
  const bool recall = recall_oracle();
  const bool loss = loss_oracle();
  detail = std::string("conv ") + (conv ? "ok" : "BAD") + ", nms " + (box_nms ? "ok" : "BAD") +
           ", recall " + (recall ? "ok" : "BAD") + ", loss " + (loss ? "ok" : "BAD");
  return conv && box_nms && recall && loss;
}

// ----------------------------------------------------------- 5: geometry

bool geometry_check(std::string& detail) {
  Rng r(65);
  double worst = 0.0;
  for (int i = 0; i < 100000; ++i) {
    auto rand_box = [&r] {
      const double x0 = r.normal(0, 200), y0 = r.normal(0, 200);
      const double w = 2.0 + 300.0 * r.uniform_int(0, 1000) / 1000.0;
      const double h = 2.0 + 300.0 * r.uniform_int(0, 1000) / 1000.0;
      return Box{x0, y0, x0 + w, y0 + h};
    };
    const Box a = rand_box(), b = rand_box();
    const Box back = decode_box(a, encode_box(a, b));
    worst = std::max({worst, std::fabs(back.x0 - b.x0), std::fabs(back.y0 - b.y0),
                      std::fabs(back.x1 - b.x1), std::fabs(back.y1 - b.y1)});
  }
  const bool round_trip = worst < 1e-4;

  bool inside = true;
  for (int trial = 0; trial < 8; ++trial) {
    const int h = 64 * r.uniform_int(1, 10), w = 64 * r.uniform_int(1, 10);
    const auto levels = pyramid_levels(h, w);
    const AnchorSet set =
        make_window_anchors(levels, default_window_profile(static_cast<int>(levels.size())));
    for (const Anchor& a : set.anchors)
      inside = inside && a.box.x0 >= 0 && a.box.y0 >= 0 && a.box.x1 <= w && a.box.y1 <= h;
  }

  bool partition = true;
  const int k = 4;
  for (const auto& shapes : default_window_profile(5))
    for (const AnchorShape& s : shapes)
      for (int len : {s.w, s.h}) {
        const auto e = grid_edges(len, k);
        partition = partition && e.front() == 0 && e.back() == len;
        for (int i = 0; i < k; ++i) partition = partition && e[i] <= e[i + 1];
        for (auto [lo, hi] : grid_bins(len, k))
          partition = partition && lo >= 0 && lo < hi && hi <= len;
      }

  char buf[140];
  std::snprintf(buf, sizeof buf,
                "round-trip max err %.2e over 1e5 pairs; containment %s; k=4 partition %s",
                worst, inside ? "ok" : "BAD", partition ? "ok" : "BAD");
  detail = buf;
  return round_trip && inside && partition;
}

// -------------------------------------------------- 6: eval consistency

bool eval_consistency_check(std::string& detail) {
  Rng r(66);
  // One target per image: the only shape of fixture whose echoed proposals
  // can saturate the curve all the way down to a budget of one.
  std::vector<ImageEval> single;
  for (int im = 0; im < 20; ++im) {
    const double x0 = r.uniform_int(0, 90), y0 = r.uniform_int(0, 90);
    const GtBox g{Box{x0, y0, x0 + r.uniform_int(6, 30), y0 + r.uniform_int(6, 30)}, false};
    single.push_back({{{g.box, r.uniform_int(1, 99) / 100.0}}, {g}});
  }
  bool saturated = ar_auc(single) == 1.0;
  for (int budget : kAucBudgets) saturated = saturated && average_recall(single, budget) == 1.0;

  std::vector<ImageEval> perfect, noisy;
  for (int im = 0; im < 30; ++im) {
    std::vector<GtBox> gts;
    for (int i = 0, n = r.uniform_int(1, 8); i < n; ++i) {
      const double x0 = r.uniform_int(0, 90), y0 = r.uniform_int(0, 90);
      gts.push_back({Box{x0, y0, x0 + r.uniform_int(6, 30), y0 + r.uniform_int(6, 30)}, false});
    }
    std::vector<Proposal> echo;
    for (const GtBox& g : gts) echo.push_back({g.box, r.uniform_int(1, 99) / 100.0});
    std::stable_sort(echo.begin(), echo.end(),
                     [](const Proposal& a, const Proposal& b) { return a.score > b.score; });
    perfect.push_back({echo, gts});

    std::vector<Proposal> jittered;
    for (const GtBox& g : gts) {
      const double jx = r.uniform_int(0, 6) - 3, jy = r.uniform_int(0, 6) - 3;
      jittered.push_back({Box{g.box.x0 + jx, g.box.y0 + jy, g.box.x1 + jx, g.box.y1 + jy},
                          r.uniform_int(1, 99) / 100.0});
    }
    for (int i = 0; i < 40; ++i) {
      const double x0 = r.uniform_int(0, 90), y0 = r.uniform_int(0, 90);
      jittered.push_back({Box{x0, y0, x0 + r.uniform_int(4, 20), y0 + r.uniform_int(4, 20)},
                          r.uniform_int(1, 99) / 100.0});
    }
    std::stable_sort(jittered.begin(), jittered.end(),
                     [](const Proposal& a, const Proposal& b) { return a.score > b.score; });
    noisy.push_back({jittered, gts});
  }

  const bool unit = saturated && average_recall(perfect, 10) == 1.0 &&
                    average_recall(perfect, 100) == 1.0 && average_recall(perfect, 1000) == 1.0;

  bool budget_monotone = true;
  double prev = -1.0;
  for (int budget : kAucBudgets) {
    const double ar = average_recall(noisy, budget);
    budget_monotone = budget_monotone && ar >= prev - 1e-12;
    prev = ar;
  }

  bool thresh_monotone = true;
  for (const ImageEval& im : noisy) {
    double last = 2.0;
    for (int t = 0; t < 10; ++t) {
      const double rec = recall_at(im.props, im.gts, 100, 0.50 + 0.05 * t);
      thresh_monotone = thresh_monotone && rec <= last + 1e-12;
      last = rec;
    }
  }

  detail = std::string("gt-fed AR and AUC ") + (unit ? "all 1.0" : "BAD") + "; budget " +
           (budget_monotone ? "monotone" : "BAD") + "; threshold " +
           (thresh_monotone ? "monotone" : "BAD");
  return unit && budget_monotone && thresh_monotone;
}

// ----------------------------------------------------------- 7: learning

Config desk_config(HeadVariant v, bool ps) {
  Config cfg;
  cfg.arch.resnet50 = false;
  cfg.arch.toy_stem = 8;
  cfg.arch.toy_widths = {16, 24, 32, 48};
  cfg.arch.decoder_channels = 16;
  cfg.arch.variant = v;
  cfg.arch.position_sensitive = ps;
  cfg.arch.ps_k = 4;
  cfg.arch.gcn_mid = 4;
  cfg.window_anchors = ps;
  cfg.anchors_per_image = 128;
  cfg.epochs = 20;
  cfg.base_lr = 0.1;
  cfg.seed = 7;
  cfg.synth_count = 1000;
  cfg.synth_size = 128;
  cfg.hash = config_hash_of(cfg);
  return cfg;
}

struct ArmResult {
  double first_loss = 0.0, last_loss = 0.0;
  double ar100 = 0.0, ar1000 = 0.0;
};

ArmResult run_arm(const Config& cfg) {
  Model<float> model = init_model<float>(cfg.arch, Rng(cfg.seed).fork(kSeedInit));
  TrainResult res;
  {
    auto data = load_training_set(cfg, 0, cfg.synth_count);
    Trainer trainer(model, cfg, std::move(data));
    res = trainer.run();
  }
  ArmResult arm;
  arm.first_loss = res.epochs.front().mean_loss;
  arm.last_loss = res.epochs.back().mean_loss;

  const auto val = load_eval_set(cfg, cfg.synth_count, 200);
  const auto levels = pyramid_levels(val[0].image.h, val[0].image.w);
  const AnchorSet anchors =
      cfg.window_anchors
          ? make_window_anchors(levels, default_window_profile(static_cast<int>(levels.size())))
          : make_grid_anchors(levels, cfg.grid_ratio_values, cfg.grid_scale);
  std::vector<ImageEval> images;
  for (const EvalSample& s : val)
    images.push_back({propose_image(model, s.image, anchors, cfg.proposals), s.gts});
  arm.ar100 = average_recall(images, 100);
  arm.ar1000 = average_recall(images, 1000);
  return arm;
}

bool learning_check(std::string& detail) {
  const ArmResult ours = run_arm(desk_config(HeadVariant::GcnNS, true));
  const ArmResult base = run_arm(desk_config(HeadVariant::Baseline, false));

  const bool loss_halved = ours.last_loss <= 0.5 * ours.first_loss;
  const bool recall_ok = ours.ar100 >= 0.5;
  const bool beats_baseline = ours.ar1000 >= base.ar1000;

  char buf[200];
  std::snprintf(buf, sizeof buf,
                "loss %.4f -> %.4f; AR100 %.4f; AR1000 %.4f vs baseline %.4f",
                ours.first_loss, ours.last_loss, ours.ar100, ours.ar1000, base.ar1000);
  detail = buf;
  return loss_halved && recall_ok && beats_baseline;
}

// ----------------------------------------- 8: schedule and determinism

bool schedule_check(std::string& detail) {
  auto close = [](double a, double b) { return std::fabs(a - b) <= 1e-12 * std::max(a, b); };
  const bool lr_ok = close(lr_at(0.1, 0), 0.1) && close(lr_at(0.1, 10), 0.01) &&
                     close(lr_at(0.1, 40), 1e-5);

  Config cfg = desk_config(HeadVariant::GcnNS, true);
  cfg.epochs = 2;
  cfg.synth_count = 12;
  cfg.synth_size = 64;
  cfg.arch.toy_stem = 4;
  cfg.arch.toy_widths = {4, 6, 8, 10};
  cfg.arch.decoder_channels = 8;
  cfg.arch.ps_k = 2;
  cfg.arch.gcn_kernel = 5;
  cfg.hash = config_hash_of(cfg);

  auto run_once = [&cfg](const std::string& dir) {
    Model<float> model = init_model<float>(cfg.arch, Rng(cfg.seed).fork(kSeedInit));
    auto data = load_training_set(cfg, 0, cfg.synth_count);
    Trainer trainer(model, cfg, std::move(data));
    const TrainResult res = trainer.run();
    save_model(model, dir, cfg.hash);
    std::vector<double> curve;
    for (const EpochStats& e : res.epochs) curve.push_back(e.mean_loss);
    return curve;
  };

  const std::string base = std::filesystem::temp_directory_path().string() + "/psrpn_accept";
  std::filesystem::remove_all(base);
  const auto curve_a = run_once(base + "/a");
  const auto curve_b = run_once(base + "/b");
  const bool curves_equal = curve_a == curve_b;

  // round trip: load a into a fresh model, save again, compare bytes
  Model<float> reload = init_model<float>(cfg.arch, Rng(99).fork(kSeedInit));
  const std::string stored = load_model(reload, base + "/a");
  save_model(reload, base + "/c", stored);
  bool bytes_equal = true;
  for (const auto& entry : std::filesystem::directory_iterator(base + "/a")) {
    std::ifstream f1(entry.path(), std::ios::binary);
    std::ifstream f2(base + "/c/" + entry.path().filename().string(), std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    bytes_equal = bytes_equal && !s1.empty() && s1 == s2;
  }
  std::filesystem::remove_all(base);

  detail = std::string("lr ") + (lr_ok ? "exact" : "BAD") + "; curves " +
           (curves_equal ? "identical" : "BAD") + "; checkpoint bytes " +
           (bytes_equal ? "identical" : "BAD");
  return lr_ok && curves_equal && bytes_equal;
}

}  // namespace

int main(int argc, char** argv) {
  // optional args: criterion numbers to run (default all)
  bool want[9];
  std::fill(std::begin(want), std::end(want), argc < 2);
  for (int i = 1; i < argc; ++i) {
    const int k = std::atoi(argv[i]);
    if (k < 1 || k > 8) {
      std::fprintf(stderr, "usage: %s [criterion]...\n", argv[0]);
      return 2;
    }
    want[k] = true;
  }
  using Check = bool (*)(std::string&);
  const Check checks[8] = {anchors_check,  params_check,           gradients_check,
                           oracles_check,  geometry_check,         eval_consistency_check,
                           learning_check, schedule_check};
  const char* names[8] = {"anchor audit",         "parameter identities", "gradient suite",
                          "oracle equivalences",  "geometry identities",  "eval self-consistency",
                          "desk-scale learning",  "schedule determinism"};
  std::string d;
  int ran = 0;
  for (int k = 1; k <= 8; ++k)
    if (want[k]) {
      verdict(k, names[k - 1], checks[k - 1](d), d);
      ++ran;
    }
  if (g_failures == 0)
    std::printf("acceptance: all %d criteria pass\n", ran);
  else
    std::printf("acceptance: %d criteria FAILED\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "psrpn/config.hpp"
#include "psrpn/dataset.hpp"
#include "psrpn/gradcheck.hpp"
#include "psrpn/model_io.hpp"
#include "psrpn/proposal_io.hpp"
#include "psrpn/svg.hpp"
#include "psrpn/trainer.hpp"

namespace {

using namespace psrpn;

constexpr int kExitOk = 0;
constexpr int kExitAudit = 1;
constexpr int kExitInput = 2;

Config config_or_default(const std::string& path, long seed_override = -1) {
  Config cfg = path.empty() ? parse_config(default_config_text(), "<default>")
                            : load_config(path);
  if (seed_override >= 0) {
    cfg.seed = static_cast<std::uint64_t>(seed_override);
    cfg.hash = config_hash(cfg);
  }
  return cfg;
}

// The synth stream has no natural end, so an unbounded request takes the
// configured count.
int resolve_count(const Config& cfg, int count) {
  if (count < 0 && cfg.dataset_kind == "synth") return cfg.synth_count;
  return count;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw IoError("cannot write " + path);
}

// ---------------------------------------------------------------- anchors

int cmd_anchors(int height, int width, const std::string& mode,
                const std::vector<double>& ratios, double scale, bool audit) {
  const auto levels = pyramid_levels(height, width);
  int rc = kExitOk;

  auto print_set = [](const AnchorSet& set) {
    for (std::size_t i = 0; i < set.levels.size(); ++i)
      std::printf("  %-4s stride %-3d map %4dx%-4d  %10ld anchors\n", set.levels[i].name.c_str(),
                  set.levels[i].stride, set.levels[i].h, set.levels[i].w, set.level_counts[i]);
    std::printf("  total %ld\n", set.total());
  };

  if (mode == "window" || mode == "both") {
    const AnchorSet set =
        make_window_anchors(levels, default_window_profile(static_cast<int>(levels.size())));
    std::printf("window anchors for %dx%d\n", width, height);
    print_set(set);
    if (audit && height == 640 && width == 640) {
      bool ok = set.total() == kWindowAudit640Total;
      for (int i = 0; i < 5; ++i) ok = ok && set.level_counts[i] == kWindowAudit640[i];
      std::printf("  audit %s (expected total %ld)\n", ok ? "pass" : "FAIL",
                  kWindowAudit640Total);
      if (!ok) rc = kExitAudit;
    }
  }
  if (mode == "grid" || mode == "both") {
    const AnchorSet set = make_grid_anchors(levels, ratios, scale);
    std::printf("grid anchors for %dx%d (%zu ratios, scale %g)\n", width, height, ratios.size(),
                scale);
    print_set(set);
    if (audit && height == 640 && width == 640) {
      const long want = ratios.size() == 5 ? kGridAudit640Ratios5 : kGridAudit640Ratios3;
      const bool applicable = ratios.size() == 3 || ratios.size() == 5;
      const bool ok = !applicable || set.total() == want;
      if (applicable)
        std::printf("  audit %s (expected total %ld)\n", ok ? "pass" : "FAIL", want);
      if (!ok) rc = kExitAudit;
    }
  }
  return rc;
}

// ----------------------------------------------------------------- params

int cmd_params(bool audit) {
  struct RowSpec {
    const char* label;
    HeadVariant variant;
    bool ps;
  };
  const RowSpec rows[] = {
      {"baseline", HeadVariant::Baseline, false}, {"baseline+ps", HeadVariant::Baseline, true},
      {"naive", HeadVariant::Naive, false},       {"gcn-s", HeadVariant::GcnS, false},
      {"gcn-ns", HeadVariant::GcnNS, false},      {"lk-s", HeadVariant::LkS, false},
      {"lk-ns", HeadVariant::LkNS, false},
  };
  std::map<std::string, long> count;
  for (const RowSpec& r : rows) {
    ArchConfig cfg;
    cfg.variant = r.variant;
    cfg.position_sensitive = r.ps;
    count[r.label] = count_params(cfg);
    std::printf("  %-12s %10ld params\n", r.label, count[r.label]);
  }

  struct Identity {
    const char* label;
    long got, want;
  };
  const Identity identities[] = {
      {"baseline total", count["baseline"], kParamsBaselineDense},
      {"ps - dense", count["baseline+ps"] - count["baseline"], kParamsPsMinusDense},
      {"naive - baseline", count["naive"] - count["baseline"], kParamsNaiveMinusBaseline},
      {"gcn-ns - gcn-s", count["gcn-ns"] - count["gcn-s"], kParamsSplitSmootherDelta},
      {"lk-ns - lk-s", count["lk-ns"] - count["lk-s"], kParamsSplitSmootherDelta},
  };
  int rc = kExitOk;
  for (const Identity& id : identities) {
    const bool ok = id.got == id.want;
    std::printf("  %-18s %10ld expected %10ld  %s\n", id.label, id.got, id.want,
                ok ? "pass" : "FAIL");
    if (!ok && audit) rc = kExitAudit;
  }
  std::printf("  gcn-s - baseline   %10ld (reported, not asserted)\n",
              count["gcn-s"] - count["baseline"]);
  std::printf("  lk-s  - baseline   %10ld (reported, not asserted)\n",
              count["lk-s"] - count["baseline"]);
  return rc;
}

// -------------------------------------------------------------- gradcheck

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

// End-to-end double-precision check: image -> pyramid -> head -> pooled
// windows -> loss, probed parameter by parameter.
GradCheckReport variant_gradcheck(HeadVariant v, std::uint64_t seed, int probes) {
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
    const auto l0 = g.rpn_loss(p0, t0, {1, -1}, 4, 1, nullptr);
    const auto l2 = g.rpn_loss(p2, t2, {1}, 4, 1, nullptr);
    return g.add(l0, l2);
  };

  std::vector<Parameter<double>*> params;
  for (Parameter<double>* p : model.ordered) params.push_back(p);
  Rng probe_rng(seed + 17);
  return grad_check(build, params, probe_rng, probes);
}

int cmd_gradcheck(int seeds, int probes, double tol) {
  const HeadVariant variants[] = {HeadVariant::Baseline, HeadVariant::Naive, HeadVariant::GcnS,
                                  HeadVariant::LkS,      HeadVariant::GcnNS, HeadVariant::LkNS};
  int rc = kExitOk;
  for (HeadVariant v : variants) {
    double worst = 0.0;
    long probed = 0;
    std::string where;
    for (int s = 0; s < seeds; ++s) {
      const GradCheckReport rep = variant_gradcheck(v, 100 + s, probes);
      if (rep.max_rel_err > worst) {
        worst = rep.max_rel_err;
        where = rep.worst;
      }
      probed += rep.probes;
    }
    const bool ok = worst <= tol;
    std::printf("  %-9s %5ld probes  max rel err %.3e  %s%s%s\n", variant_name(v), probed, worst,
                ok ? "pass" : "FAIL", where.empty() || ok ? "" : " at ",
                where.empty() || ok ? "" : where.c_str());
    if (!ok) rc = kExitAudit;
  }
  return rc;
}

// ------------------------------------------------------------------ train

int cmd_train(const std::string& config_path, long seed, const std::string& out_dir,
              std::string log_csv) {
  const Config cfg = config_or_default(config_path, seed);
  std::filesystem::create_directories(out_dir);
  if (log_csv.empty()) log_csv = out_dir + "/train_log.csv";
  {
    std::ofstream head(log_csv);
    head << "# config_hash=" << cfg.hash << "\n";
  }

  Model<float> model = init_model<float>(cfg.arch, Rng(cfg.seed).fork(kSeedInit));
  std::printf("model %s (%s anchors): %ld params, config %s\n",
              variant_name(cfg.arch.variant), cfg.window_anchors ? "window" : "grid",
              model.param_count(), cfg.hash.c_str());

  auto data = load_training_set(cfg, 0, resolve_count(cfg, -1));
  std::printf("training on %zu images for %d epochs\n", data.size(), cfg.epochs);
  Trainer trainer(model, cfg, std::move(data));
  const TrainResult res = trainer.run(log_csv);
  for (const EpochStats& e : res.epochs)
    std::printf("  epoch %2d  lr %.5f  loss %.5f  (reg %.5f  cls+ %.5f  cls- %.5f)\n", e.epoch,
                e.lr, e.mean_loss, e.mean_reg, e.mean_cls_pos, e.mean_cls_neg);

  save_model(model, out_dir, cfg.hash);
  std::printf("checkpoint written to %s\n", out_dir.c_str());
  return kExitOk;
}

// ---------------------------------------------------------------- propose

int cmd_propose(const std::string& config_path, long seed, const std::string& model_dir,
                const std::string& out_dir, int offset, int count) {
  const Config cfg = config_or_default(config_path, seed);
  Model<float> model = init_model<float>(cfg.arch, Rng(cfg.seed).fork(kSeedInit));
  const std::string stored = load_model(model, model_dir);
  if (stored != cfg.hash)
    std::printf("warning: checkpoint hash %s differs from config %s\n", stored.c_str(),
                cfg.hash.c_str());

  const auto samples = load_eval_set(cfg, offset, resolve_count(cfg, count));
  if (samples.empty()) throw ConfigError("propose: no samples in the requested range");

  long clamps = 0;
  std::vector<ProposalSet> sets;
  const AnchorSet anchors = [&] {
    const auto levels = pyramid_levels(samples[0].image.h, samples[0].image.w);
    return cfg.window_anchors
               ? make_window_anchors(levels, default_window_profile(static_cast<int>(levels.size())))
               : make_grid_anchors(levels, cfg.grid_ratio_values, cfg.grid_scale);
  }();
  for (const EvalSample& s : samples) {
    if (s.image.h != samples[0].image.h || s.image.w != samples[0].image.w)
      throw ConfigError("propose: evaluation images must share one size");
    sets.push_back(ProposalSet{s.id, propose_image(model, s.image, anchors, cfg.proposals,
                                                   &clamps)});
  }
  save_proposals(out_dir, sets, cfg.hash);
  std::printf("wrote proposals for %zu images to %s (%ld decode clamps)\n", sets.size(),
              out_dir.c_str(), clamps);
  return kExitOk;
}

// ------------------------------------------------------------------- eval

int cmd_eval(const std::string& config_path, long seed, const std::string& props_dir,
             int offset, int count, const std::string& out_json, const std::string& out_csv) {
  const Config cfg = config_or_default(config_path, seed);
  std::string props_hash;
  const auto sets = load_proposals(props_dir, &props_hash);
  if (!props_hash.empty() && props_hash != cfg.hash)
    std::printf("warning: proposals hash %s differs from config %s\n", props_hash.c_str(),
                cfg.hash.c_str());

  const auto samples = load_eval_set(cfg, offset, resolve_count(cfg, count));
  std::map<std::string, const EvalSample*> by_id;
  for (const EvalSample& s : samples) by_id[s.id] = &s;

  std::vector<ImageEval> images;
  for (const ProposalSet& ps : sets) {
    auto it = by_id.find(ps.image_id);
    if (it == by_id.end())
      throw ConfigError("eval: proposals reference unknown image id " + ps.image_id);
    images.push_back(ImageEval{ps.props, it->second->gts});
  }

  std::printf("evaluating %zu images\n", images.size());
  std::vector<std::pair<int, double>> ar_curve;
  for (int budget : kAucBudgets) {
    ar_curve.emplace_back(budget, average_recall(images, budget));
    if (budget == 10 || budget == 100 || budget == 1000)
      std::printf("  AR^%-5d %.4f\n", budget, ar_curve.back().second);
  }
  const double auc = ar_auc(images);
  std::printf("  AUC     %.4f\n", auc);

  const SizeStrata strata = strata_recall(images, 100);
  std::printf("  AR^100 by size: small %.4f (%ld)  medium %.4f (%ld)  large %.4f (%ld)\n",
              strata.small, strata.n_small, strata.medium, strata.n_medium, strata.large,
              strata.n_large);

  std::vector<std::pair<double, double>> recall_curve;
  for (int ti = 0; ti < 10; ++ti) {
    const double thresh = 0.50 + 0.05 * ti;
    long eligible = 0, matched = 0;
    for (const ImageEval& im : images) {
      long n = 0;
      for (const GtBox& g : im.gts)
        if (!g.ignore) ++n;
      matched += static_cast<long>(std::lround(recall_at(im.props, im.gts, 100, thresh) * n));
      eligible += n;
    }
    recall_curve.emplace_back(thresh, eligible ? static_cast<double>(matched) / eligible : 0.0);
  }

  if (!out_json.empty()) {
    nlohmann::json report;
    report["config_hash"] = cfg.hash;
    report["n_images"] = images.size();
    for (const auto& [budget, ar] : ar_curve) report["ar"][std::to_string(budget)] = ar;
    report["auc"] = auc;
    report["strata"] = {{"small", strata.small},       {"medium", strata.medium},
                        {"large", strata.large},       {"n_small", strata.n_small},
                        {"n_medium", strata.n_medium}, {"n_large", strata.n_large}};
    for (const auto& [thresh, rec] : recall_curve) {
      char key[8];
      std::snprintf(key, sizeof key, "%.2f", thresh);
      report["recall_at_100"][key] = rec;
    }
    write_text(out_json, report.dump(2) + "\n");
    std::printf("report written to %s\n", out_json.c_str());
  }

  if (!out_csv.empty()) {
    std::string csv = "# config_hash=" + cfg.hash + "\ncurve,x,y\n";
    char line[80];
    for (const auto& [budget, ar] : ar_curve) {
      std::snprintf(line, sizeof line, "ar_vs_budget,%d,%.10g\n", budget, ar);
      csv += line;
    }
    for (const auto& [thresh, rec] : recall_curve) {
      std::snprintf(line, sizeof line, "recall_at_100_vs_iou,%.2f,%.10g\n", thresh, rec);
      csv += line;
    }
    write_text(out_csv, csv);
    std::printf("curves written to %s\n", out_csv.c_str());
  }
  return kExitOk;
}

// ------------------------------------------------------------------- plot

int cmd_plot(const std::vector<std::string>& reports, const std::vector<std::string>& logs,
             const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  int written = 0;

  if (!reports.empty()) {
    std::vector<Series> ar_series, recall_series;
    for (const std::string& path : reports) {
      std::ifstream in(path);
      if (!in) throw IoError("plot: cannot open " + path);
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        throw ParseError("plot: bad report " + path + ": " + e.what());
      }
      const std::string label = std::filesystem::path(path).stem().string();
      Series ar{label, {}};
      for (int budget : kAucBudgets)
        ar.pts.push_back({budget, j.at("ar").at(std::to_string(budget)).get<double>()});
      ar_series.push_back(std::move(ar));
      Series rc{label, {}};
      if (j.contains("recall_at_100"))
        for (const auto& [key, val] : j.at("recall_at_100").items())
          rc.pts.push_back({std::stod(key), val.get<double>()});
      std::sort(rc.pts.begin(), rc.pts.end());
      recall_series.push_back(std::move(rc));
    }
    ChartSpec ar_spec;
    ar_spec.title = "average recall vs proposal budget";
    ar_spec.x_label = "proposals per image";
    ar_spec.y_label = "AR";
    ar_spec.log_x = true;
    ar_spec.x_ticks = {1, 10, 100, 1000};
    ar_spec.y_min_hint = 0.0;
    ar_spec.y_max_hint = 1.0;
    write_text(out_dir + "/ar_vs_budget.svg", render_chart(ar_spec, ar_series));
    ++written;

    ChartSpec rc_spec;
    rc_spec.title = "recall at 100 proposals vs overlap threshold";
    rc_spec.x_label = "IoU threshold";
    rc_spec.y_label = "recall";
    rc_spec.y_min_hint = 0.0;
    rc_spec.y_max_hint = 1.0;
    write_text(out_dir + "/recall_vs_iou.svg", render_chart(rc_spec, recall_series));
    ++written;
  }

  if (!logs.empty()) {
    std::vector<Series> loss_series;
    for (const std::string& path : logs) {
      std::ifstream in(path);
      if (!in) throw IoError("plot: cannot open " + path);
      Series s{std::filesystem::path(path).stem().string(), {}};
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("epoch,", 0) == 0) continue;
        std::stringstream ls(line);
        std::string field;
        std::vector<double> vals;
        while (std::getline(ls, field, ',')) vals.push_back(std::stod(field));
        if (vals.size() >= 3) s.pts.push_back({vals[0], vals[2]});
      }
      if (s.pts.empty()) throw ParseError("plot: no rows in " + path);
      loss_series.push_back(std::move(s));
    }
    ChartSpec spec;
    spec.title = "training loss";
    spec.x_label = "epoch";
    spec.y_label = "loss";
    write_text(out_dir + "/loss.svg", render_chart(spec, loss_series));
    ++written;
  }

  if (written == 0) throw ConfigError("plot: need --report or --train-log inputs");
  std::printf("wrote %d figures to %s\n", written, out_dir.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pyramid region proposal workbench"};
  app.require_subcommand(1);

  // anchors
  auto* anchors = app.add_subcommand("anchors", "enumerate anchors and audit counts");
  int a_h = 640, a_w = 640;
  std::string a_mode = "both";
  std::vector<double> a_ratios = {0.5, 1.0, 2.0};
  double a_scale = 8.0;
  bool a_audit = false;
  anchors->add_option("--height", a_h);
  anchors->add_option("--width", a_w);
  anchors->add_option("--mode", a_mode)->check(CLI::IsMember({"window", "grid", "both"}));
  anchors->add_option("--ratios", a_ratios)->delimiter(',');
  anchors->add_option("--scale", a_scale);
  anchors->add_flag("--audit", a_audit, "fail on any mismatch with the reference counts");

  // params
  auto* params = app.add_subcommand("params", "parameter counts and identities");
  bool p_audit = false;
  params->add_flag("--audit", p_audit, "fail unless the identities hold");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  int g_seeds = 3, g_probes = 2;
  double g_tol = 1e-4;
  gc->add_option("--seeds", g_seeds)->check(CLI::PositiveNumber);
  gc->add_option("--probes", g_probes)->check(CLI::PositiveNumber);
  gc->add_option("--tol", g_tol);

  // train
  auto* train = app.add_subcommand("train", "train a model per config");
  std::string t_config, t_out = "run", t_log;
  long t_seed = -1;
  train->add_option("--config", t_config);
  train->add_option("--seed", t_seed, "override the configured seed");
  train->add_option("--out", t_out);
  train->add_option("--log", t_log);

  // propose
  auto* propose = app.add_subcommand("propose", "write ranked proposals per image");
  std::string pr_config, pr_model, pr_out = "proposals";
  long pr_seed = -1;
  int pr_offset = 0, pr_count = -1;
  propose->add_option("--config", pr_config);
  propose->add_option("--seed", pr_seed, "override the configured seed");
  propose->add_option("--model", pr_model)->required();
  propose->add_option("--out", pr_out);
  propose->add_option("--offset", pr_offset);
  propose->add_option("--count", pr_count);

  // eval
  auto* eval = app.add_subcommand("eval", "score proposals against annotations");
  std::string e_config, e_props, e_out, e_csv;
  long e_seed = -1;
  int e_offset = 0, e_count = -1;
  eval->add_option("--config", e_config);
  eval->add_option("--seed", e_seed, "override the configured seed");
  eval->add_option("--props", e_props)->required();
  eval->add_option("--offset", e_offset);
  eval->add_option("--count", e_count);
  eval->add_option("--out", e_out, "summary json");
  eval->add_option("--csv", e_csv, "curves csv");

  // plot
  auto* plot = app.add_subcommand("plot", "emit svg figures from reports and logs");
  std::vector<std::string> pl_reports, pl_logs;
  std::string pl_out = "figures";
  plot->add_option("--report", pl_reports);
  plot->add_option("--train-log", pl_logs);
  plot->add_option("--out", pl_out);

  // synth
  auto* synth = app.add_subcommand("synth", "materialise a synthetic dataset");
  std::string s_out = "synth";
  std::uint64_t s_seed = 7;
  int s_count = 16, s_size = 128;
  synth->add_option("--out", s_out);
  synth->add_option("--seed", s_seed);
  synth->add_option("--count", s_count)->check(CLI::PositiveNumber);
  synth->add_option("--size", s_size);

  // config
  auto* config = app.add_subcommand("config", "print the default config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitInput;
  }

  try {
    if (anchors->parsed()) return cmd_anchors(a_h, a_w, a_mode, a_ratios, a_scale, a_audit);
    if (params->parsed()) return cmd_params(p_audit);
    if (gc->parsed()) return cmd_gradcheck(g_seeds, g_probes, g_tol);
    if (train->parsed()) return cmd_train(t_config, t_seed, t_out, t_log);
    if (propose->parsed())
      return cmd_propose(pr_config, pr_seed, pr_model, pr_out, pr_offset, pr_count);
    if (eval->parsed()) return cmd_eval(e_config, e_seed, e_props, e_offset, e_count, e_out, e_csv);
    if (plot->parsed()) return cmd_plot(pl_reports, pl_logs, pl_out);
    if (synth->parsed()) {
      Rng base(s_seed);
      materialize_synth(s_out, base.fork(kSeedData), s_count, s_size);
      std::printf("wrote %d synthetic images to %s\n", s_count, s_out.c_str());
      return kExitOk;
    }
    if (config->parsed()) {
      std::fputs(default_config_text().c_str(), stdout);
      return kExitOk;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInput;
  }
  return kExitInput;
}

#include "psrpn/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "psrpn/errors.hpp"

namespace psrpn {

namespace {

using nlohmann::json;

// applies section keys strictly: every present key must be consumed
struct Section {
  const json* j;
  std::string where;
  std::set<std::string> seen;

  explicit operator bool() const { return j != nullptr; }

  template <typename T>
  void get(const char* key, T* dst) {
    if (!j) return;
    auto it = j->find(key);
    if (it == j->end()) return;
    seen.insert(key);
    try {
      *dst = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where + "." + key + ": " + e.what());
    }
  }

  void finish() const {
    if (!j) return;
    for (auto it = j->begin(); it != j->end(); ++it)
      if (!seen.count(it.key()))
        throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
};

Section section(const json& root, const char* name, std::set<std::string>* top_seen) {
  auto it = root.find(name);
  if (it == root.end()) return Section{nullptr, name, {}};
  top_seen->insert(name);
  if (!it->is_object()) throw ConfigError(std::string(name) + ": expected an object");
  return Section{&*it, name, {}};
}

void check(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Config parse_config(const std::string& text, const std::string& path) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  if (!root.is_object()) throw ConfigError(path + ": top level must be an object");

  Config cfg;
  std::set<std::string> top;
  {
    auto it = root.find("version");
    if (it == root.end()) throw ConfigError(path + ": missing 'version'");
    top.insert("version");
    cfg.version = it->get<int>();
    check(cfg.version == 1, path + ": unsupported version " + std::to_string(cfg.version));
  }

  Section pyr = section(root, "pyramid", &top);
  pyr.get("resnet50", &cfg.arch.resnet50);
  pyr.get("toy_stem", &cfg.arch.toy_stem);
  pyr.get("toy_widths", &cfg.arch.toy_widths);
  pyr.get("decoder_channels", &cfg.arch.decoder_channels);
  pyr.finish();

  Section head = section(root, "head", &top);
  std::string variant = variant_name(cfg.arch.variant);
  head.get("variant", &variant);
  cfg.arch.variant = variant_from_name(variant);
  head.get("position_sensitive", &cfg.arch.position_sensitive);
  head.get("ps_k", &cfg.arch.ps_k);
  head.get("grid_ratios", &cfg.arch.grid_ratios);
  head.get("gcn_kernel", &cfg.arch.gcn_kernel);
  head.get("gcn_mid", &cfg.arch.gcn_mid);
  head.get("lk_kernel", &cfg.arch.lk_kernel);
  head.get("lk_width", &cfg.arch.lk_width);
  head.finish();

  Section anc = section(root, "anchors", &top);
  std::string mode = cfg.arch.position_sensitive ? "window" : "grid";
  anc.get("mode", &mode);
  anc.get("ratios", &cfg.grid_ratio_values);
  anc.get("scale", &cfg.grid_scale);
  anc.finish();
  check(mode == "window" || mode == "grid", "anchors.mode: must be 'window' or 'grid'");
  cfg.window_anchors = mode == "window";

  Section bn = section(root, "bn", &top);
  bn.get("momentum", &cfg.bn_momentum);
  bn.get("eps", &cfg.bn_eps);
  bn.finish();

  Section smp = section(root, "sampler", &top);
  smp.get("iou_hi", &cfg.iou_hi);
  smp.get("iou_lo", &cfg.iou_lo);
  smp.get("anchors_per_image", &cfg.anchors_per_image);
  smp.get("images_per_batch", &cfg.images_per_batch);
  smp.finish();

  Section trn = section(root, "trainer", &top);
  trn.get("epochs", &cfg.epochs);
  trn.get("base_lr", &cfg.base_lr);
  trn.get("momentum", &cfg.momentum);
  trn.get("weight_decay", &cfg.weight_decay);
  trn.get("seed", &cfg.seed);
  trn.finish();

  Section ev = section(root, "eval", &top);
  ev.get("pre_nms_top_n", &cfg.proposals.pre_nms_top_n);
  ev.get("post_nms_top_n", &cfg.proposals.post_nms_top_n);
  ev.get("nms_iou", &cfg.proposals.nms_iou);
  ev.finish();

  Section ds = section(root, "dataset", &top);
  ds.get("kind", &cfg.dataset_kind);
  ds.get("path", &cfg.dataset_path);
  ds.get("transform", &cfg.transform);
  ds.get("count", &cfg.synth_count);
  ds.get("size", &cfg.synth_size);
  ds.get("min_shapes", &cfg.synth_min_shapes);
  ds.get("max_shapes", &cfg.synth_max_shapes);
  ds.finish();

  for (auto it = root.begin(); it != root.end(); ++it)
    if (!top.count(it.key())) throw ConfigError(path + ": unknown key '" + it.key() + "'");

  check(cfg.window_anchors == cfg.arch.position_sensitive,
        "anchors.mode must be 'window' with a position-sensitive head and 'grid' otherwise");
  check(cfg.arch.ps_k >= 1, "head.ps_k: must be >= 1");
  check(cfg.arch.grid_ratios >= 1, "head.grid_ratios: must be >= 1");
  check(cfg.arch.gcn_kernel % 2 == 1 && cfg.arch.gcn_kernel >= 3,
        "head.gcn_kernel: must be odd and >= 3");
  check(cfg.arch.lk_kernel % 2 == 1 && cfg.arch.lk_kernel >= 3,
        "head.lk_kernel: must be odd and >= 3");
  check(cfg.arch.gcn_mid >= 1, "head.gcn_mid: must be >= 1");
  check(cfg.arch.lk_width >= 1, "head.lk_width: must be >= 1");
  check(cfg.arch.decoder_channels >= 1, "pyramid.decoder_channels: must be >= 1");
  check(cfg.arch.toy_widths.size() == 4, "pyramid.toy_widths: need exactly four widths");
  check(!cfg.window_anchors ||
            static_cast<int>(cfg.grid_ratio_values.size()) >= 1,
        "anchors.ratios: need at least one");
  check(static_cast<int>(cfg.grid_ratio_values.size()) == cfg.arch.grid_ratios ||
            cfg.window_anchors,
        "anchors.ratios length must equal head.grid_ratios for the dense layout");
  check(cfg.iou_lo >= 0 && cfg.iou_lo < cfg.iou_hi && cfg.iou_hi <= 1,
        "sampler: need 0 <= iou_lo < iou_hi <= 1");
  check(cfg.anchors_per_image >= 2, "sampler.anchors_per_image: must be >= 2");
  check(cfg.images_per_batch >= 1, "sampler.images_per_batch: must be >= 1");
  check(cfg.epochs >= 1, "trainer.epochs: must be >= 1");
  check(cfg.base_lr > 0, "trainer.base_lr: must be positive");
  check(cfg.proposals.nms_iou > 0 && cfg.proposals.nms_iou < 1,
        "eval.nms_iou: must be in (0,1)");
  check(cfg.dataset_kind == "synth" || cfg.dataset_kind == "detection-json" ||
            cfg.dataset_kind == "voc-dir",
        "dataset.kind: must be synth, detection-json, or voc-dir");
  check(cfg.transform == "none" || cfg.transform == "voc640" || cfg.transform == "coco768" ||
            cfg.transform == "pad64",
        "dataset.transform: must be none, voc640, coco768, or pad64");
  check(cfg.dataset_kind != "synth" || (cfg.synth_size >= 64 && cfg.synth_size % 64 == 0),
        "dataset.size: must be a positive multiple of 64");
  check(cfg.synth_min_shapes >= 1 && cfg.synth_max_shapes >= cfg.synth_min_shapes,
        "dataset: bad shape count range");

  cfg.hash = config_hash(cfg);
  return cfg;
}

std::string config_hash(const Config& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical_config(cfg))));
  return buf;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

std::string canonical_config(const Config& cfg) {
  json j;
  j["version"] = cfg.version;
  j["pyramid"] = {{"resnet50", cfg.arch.resnet50},
                  {"toy_stem", cfg.arch.toy_stem},
                  {"toy_widths", cfg.arch.toy_widths},
                  {"decoder_channels", cfg.arch.decoder_channels}};
  j["head"] = {{"variant", variant_name(cfg.arch.variant)},
               {"position_sensitive", cfg.arch.position_sensitive},
               {"ps_k", cfg.arch.ps_k},
               {"grid_ratios", cfg.arch.grid_ratios},
               {"gcn_kernel", cfg.arch.gcn_kernel},
               {"gcn_mid", cfg.arch.gcn_mid},
               {"lk_kernel", cfg.arch.lk_kernel},
               {"lk_width", cfg.arch.lk_width}};
  j["anchors"] = {{"mode", cfg.window_anchors ? "window" : "grid"},
                  {"ratios", cfg.grid_ratio_values},
                  {"scale", cfg.grid_scale}};
  j["bn"] = {{"momentum", cfg.bn_momentum}, {"eps", cfg.bn_eps}};
  j["sampler"] = {{"iou_hi", cfg.iou_hi},
                  {"iou_lo", cfg.iou_lo},
                  {"anchors_per_image", cfg.anchors_per_image},
                  {"images_per_batch", cfg.images_per_batch}};
  j["trainer"] = {{"epochs", cfg.epochs},
                  {"base_lr", cfg.base_lr},
                  {"momentum", cfg.momentum},
                  {"weight_decay", cfg.weight_decay},
                  {"seed", cfg.seed}};
  j["eval"] = {{"pre_nms_top_n", cfg.proposals.pre_nms_top_n},
               {"post_nms_top_n", cfg.proposals.post_nms_top_n},
               {"nms_iou", cfg.proposals.nms_iou}};
  j["dataset"] = {{"kind", cfg.dataset_kind},
                  {"path", cfg.dataset_path},
                  {"transform", cfg.transform},
                  {"count", cfg.synth_count},
                  {"size", cfg.synth_size},
                  {"min_shapes", cfg.synth_min_shapes},
                  {"max_shapes", cfg.synth_max_shapes}};
  return j.dump();
}

std::string default_config_text() {
  Config cfg;
  json j = json::parse(canonical_config(cfg));
  return j.dump(2) + "\n";
}

}  // namespace psrpn

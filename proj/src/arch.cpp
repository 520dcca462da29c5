#include "psrpn/arch.hpp"

#include "psrpn/errors.hpp"

namespace psrpn {

const char* variant_name(HeadVariant v) {
  switch (v) {
    case HeadVariant::Baseline: return "baseline";
    case HeadVariant::Naive: return "naive";
    case HeadVariant::GcnS: return "gcn-s";
    case HeadVariant::LkS: return "lk-s";
    case HeadVariant::GcnNS: return "gcn-ns";
    case HeadVariant::LkNS: return "lk-ns";
  }
  return "?";
}

HeadVariant variant_from_name(const std::string& name) {
  for (HeadVariant v : {HeadVariant::Baseline, HeadVariant::Naive, HeadVariant::GcnS,
                        HeadVariant::LkS, HeadVariant::GcnNS, HeadVariant::LkNS})
    if (name == variant_name(v)) return v;
  throw ConfigError("unknown head variant: " + name);
}

bool variant_has_split_smoothers(HeadVariant v) {
  return v == HeadVariant::GcnNS || v == HeadVariant::LkNS;
}

int ArchConfig::encoder_width(int stage) const {
  if (stage < 0 || stage > 3) throw ConfigError("encoder stage out of range");
  if (resnet50) {
    const int w[4] = {256, 512, 1024, 2048};
    return w[stage];
  }
  return toy_widths.at(stage);
}

namespace {

struct Builder {
  std::vector<LayerSpec> out;

  void conv(const std::string& name, int cin, int cout, int kh, int kw) {
    out.push_back(LayerSpec{LayerSpec::Conv, name, cin, cout, kh, kw});
  }
  void bn(const std::string& name, int c) {
    out.push_back(LayerSpec{LayerSpec::Bn, name, 0, c, 0, 0});
  }
  void cbr(const std::string& name, int cin, int cout, int k) {
    conv(name + ".conv", cin, cout, k, k);
    bn(name + ".bn", cout);
  }
};

void resnet50_layers(Builder& b) {
  b.conv("enc.stem.conv", 3, 64, 7, 7);
  b.bn("enc.stem.bn", 64);
  const int blocks[4] = {3, 4, 6, 3};
  int cin = 64;
  for (int s = 0; s < 4; ++s) {
    const int mid = 64 << s;
    const int cout = 256 << s;
    for (int i = 0; i < blocks[s]; ++i) {
      const std::string p = "enc.s" + std::to_string(s) + ".b" + std::to_string(i);
      b.conv(p + ".conv1", cin, mid, 1, 1);
      b.bn(p + ".bn1", mid);
      b.conv(p + ".conv2", mid, mid, 3, 3);
      b.bn(p + ".bn2", mid);
      b.conv(p + ".conv3", mid, cout, 1, 1);
      b.bn(p + ".bn3", cout);
      if (i == 0) {
        b.conv(p + ".proj.conv", cin, cout, 1, 1);
        b.bn(p + ".proj.bn", cout);
      }
      cin = cout;
    }
  }
}

void toy_layers(Builder& b, const ArchConfig& cfg) {
  if (cfg.toy_widths.size() != 4) throw ConfigError("toy encoder needs four stage widths");
  b.conv("enc.stem.conv", 3, cfg.toy_stem, 3, 3);
  b.bn("enc.stem.bn", cfg.toy_stem);
  int cin = cfg.toy_stem;
  for (int s = 0; s < 4; ++s) {
    b.cbr("enc.e" + std::to_string(s + 2), cin, cfg.toy_widths[s], 3);
    cin = cfg.toy_widths[s];
  }
}

void decoder_layers(Builder& b, const ArchConfig& cfg) {
  const int dc = cfg.decoder_channels;
  for (int s = 0; s < 4; ++s)
    b.cbr("dec.lat" + std::to_string(s + 2), cfg.encoder_width(s), dc, 1);
  for (int lvl = 2; lvl <= 4; ++lvl)
    b.cbr("dec.alias" + std::to_string(lvl), dc, dc, 3);
}

void head_layers(Builder& b, const ArchConfig& cfg) {
  const int dc = cfg.decoder_channels;
  switch (cfg.variant) {
    case HeadVariant::Baseline:
      break;
    case HeadVariant::Naive:
      b.cbr("head.pre0", dc, dc, 3);
      b.cbr("head.pre1", dc, dc, 3);
      break;
    case HeadVariant::GcnS:
    case HeadVariant::GcnNS: {
      const int k = cfg.gcn_kernel, m = cfg.gcn_mid;
      b.conv("head.gcn.a1", dc, m, k, 1);
      b.conv("head.gcn.a2", m, dc, 1, k);
      b.conv("head.gcn.b1", dc, m, 1, k);
      b.conv("head.gcn.b2", m, dc, k, 1);
      break;
    }
    case HeadVariant::LkS:
    case HeadVariant::LkNS:
      b.cbr("head.lk", dc, cfg.lk_width, cfg.lk_kernel);
      b.conv("head.lk.proj", cfg.lk_width, dc, 1, 1);
      break;
  }
  if (variant_has_split_smoothers(cfg.variant)) {
    b.cbr("head.smooth.reg", dc, dc, 3);
    b.cbr("head.smooth.cls", dc, dc, 3);
  } else {
    b.cbr("head.smooth", dc, dc, 3);
  }
  b.conv("head.reg.conv", dc, cfg.reg_channels(), 1, 1);
  b.bn("head.reg.bn", cfg.reg_channels());
  b.conv("head.cls.conv", dc, cfg.cls_channels(), 1, 1);
  b.bn("head.cls.bn", cfg.cls_channels());
}

}  // namespace

std::vector<LayerSpec> enumerate_layers(const ArchConfig& cfg) {
  Builder b;
  if (cfg.resnet50)
    resnet50_layers(b);
  else
    toy_layers(b, cfg);
  decoder_layers(b, cfg);
  head_layers(b, cfg);
  return b.out;
}

long count_params(const std::vector<LayerSpec>& layers) {
  long n = 0;
  for (const LayerSpec& l : layers) n += l.param_count();
  return n;
}

long count_params(const ArchConfig& cfg) { return count_params(enumerate_layers(cfg)); }

}  // namespace psrpn

#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "psrpn/arch.hpp"
#include "psrpn/errors.hpp"
#include "psrpn/graph.hpp"
#include "psrpn/rng.hpp"
#include "psrpn/tensor.hpp"

namespace psrpn {

// Instantiated network: parameters and bn sites created in the exact order
// enumerate_layers emits, which is also the checkpoint order.
template <typename T>
struct Model {
  ArchConfig cfg;
  std::vector<std::unique_ptr<Parameter<T>>> storage;
  std::vector<Parameter<T>*> ordered;
  std::unordered_map<std::string, Parameter<T>*> by_name;
  std::vector<std::pair<std::string, std::unique_ptr<BnState<T>>>> bn_sites;
  std::unordered_map<std::string, BnState<T>*> bn_by_name;

  Parameter<T>& p(const std::string& name) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("model: no parameter named " + name);
    return *it->second;
  }
  BnState<T>* bn(const std::string& name) {
    auto it = bn_by_name.find(name);
    if (it == bn_by_name.end()) throw ConfigError("model: no bn site named " + name);
    return it->second;
  }
  void zero_grads() {
    for (Parameter<T>* q : ordered) q->zero_grad();
  }
  long param_count() const {
    long n = 0;
    for (const Parameter<T>* q : ordered) n += static_cast<long>(q->value.numel());
    return n;
  }
};

template <typename T>
Model<T> init_model(const ArchConfig& cfg, std::uint64_t seed) {
  Model<T> m;
  m.cfg = cfg;
  Rng rng(seed);
  auto add = [&m](const std::string& name, Tensor4<T> v, bool decay) -> Parameter<T>& {
    m.storage.push_back(std::make_unique<Parameter<T>>(name, std::move(v), decay));
    Parameter<T>* ptr = m.storage.back().get();
    m.ordered.push_back(ptr);
    if (!m.by_name.emplace(name, ptr).second)
      throw ConfigError("model: duplicate parameter name " + name);
    return *ptr;
  };
  for (const LayerSpec& l : enumerate_layers(cfg)) {
    if (l.kind == LayerSpec::Conv) {
      const double fan_in = static_cast<double>(l.cin) * l.kh * l.kw;
      const double sd = std::sqrt(2.0 / fan_in);
      Tensor4<T> w(l.cout, l.cin, l.kh, l.kw);
      for (T& v : w.data) v = static_cast<T>(rng.normal(0.0, sd));
      add(l.name, std::move(w), true);
    } else {
      add(l.name + ".scale", Tensor4<T>(1, l.cout, 1, 1, T(1)), false);
      add(l.name + ".shift", Tensor4<T>(1, l.cout, 1, 1, T(0)), false);
      m.bn_sites.emplace_back(l.name, std::make_unique<BnState<T>>(l.cout));
      m.bn_by_name[l.name] = m.bn_sites.back().second.get();
    }
  }
  return m;
}

// Per-level dense prediction maps, D2..D6.
template <typename T>
struct ForwardMaps {
  std::vector<typename Graph<T>::Id> reg, cls;
};

namespace detail {

template <typename T>
typename Graph<T>::Id cbr(Graph<T>& g, Model<T>& m, const std::string& site,
                          typename Graph<T>::Id x, int stride, int pad) {
  const auto c = g.conv2d(x, g.param(m.p(site + ".conv")), stride, pad, pad);
  return g.relu(g.batch_norm(c, g.param(m.p(site + ".bn.scale")),
                             g.param(m.p(site + ".bn.shift")), m.bn(site + ".bn")));
}

// conv then bn, no activation: the sibling output layers
template <typename T>
typename Graph<T>::Id cb1(Graph<T>& g, Model<T>& m, const std::string& site,
                          typename Graph<T>::Id x) {
  const auto c = g.conv2d(x, g.param(m.p(site + ".conv")), 1, 0, 0);
  return g.batch_norm(c, g.param(m.p(site + ".bn.scale")), g.param(m.p(site + ".bn.shift")),
                      m.bn(site + ".bn"));
}

template <typename T>
std::vector<typename Graph<T>::Id> encode(Graph<T>& g, Model<T>& m,
                                          typename Graph<T>::Id image) {
  using Id = typename Graph<T>::Id;
  std::vector<Id> e;
  if (!m.cfg.resnet50) {
    Id x = cbr(g, m, "enc.stem", image, 2, 1);
    for (int s = 0; s < 4; ++s) {
      x = cbr(g, m, "enc.e" + std::to_string(s + 2), x, 2, 1);
      e.push_back(x);
    }
    return e;
  }
  const auto stem = g.conv2d(image, g.param(m.p("enc.stem.conv")), 2, 3, 3);
  Id x = g.relu(g.batch_norm(stem, g.param(m.p("enc.stem.bn.scale")),
                             g.param(m.p("enc.stem.bn.shift")), m.bn("enc.stem.bn")));
  x = g.avg_downsample2x(x);
  const int blocks[4] = {3, 4, 6, 3};
  for (int s = 0; s < 4; ++s) {
    for (int i = 0; i < blocks[s]; ++i) {
      const std::string pfx = "enc.s" + std::to_string(s) + ".b" + std::to_string(i);
      const int stride = (s > 0 && i == 0) ? 2 : 1;
      auto bn_of = [&](typename Graph<T>::Id c, const std::string& site) {
        return g.batch_norm(c, g.param(m.p(site + ".scale")), g.param(m.p(site + ".shift")),
                            m.bn(site));
      };
      Id h = g.relu(bn_of(g.conv2d(x, g.param(m.p(pfx + ".conv1")), 1, 0, 0), pfx + ".bn1"));
      h = g.relu(bn_of(g.conv2d(h, g.param(m.p(pfx + ".conv2")), stride, 1, 1), pfx + ".bn2"));
      h = bn_of(g.conv2d(h, g.param(m.p(pfx + ".conv3")), 1, 0, 0), pfx + ".bn3");
      Id sc = x;
      if (i == 0)
        sc = bn_of(g.conv2d(x, g.param(m.p(pfx + ".proj.conv")), stride, 0, 0), pfx + ".proj.bn");
      x = g.relu(g.add(h, sc));
    }
    e.push_back(x);
  }
  return e;
}

template <typename T>
std::vector<typename Graph<T>::Id> decode(Graph<T>& g, Model<T>& m,
                                          const std::vector<typename Graph<T>::Id>& e) {
  using Id = typename Graph<T>::Id;
  const Id l5 = cbr(g, m, "dec.lat5", e[3], 1, 0);
  const Id d4 = cbr(g, m, "dec.alias4",
                    g.add(cbr(g, m, "dec.lat4", e[2], 1, 0), g.bilinear_upsample2x(l5)), 1, 1);
  const Id d3 = cbr(g, m, "dec.alias3",
                    g.add(cbr(g, m, "dec.lat3", e[1], 1, 0), g.bilinear_upsample2x(d4)), 1, 1);
  const Id d2 = cbr(g, m, "dec.alias2",
                    g.add(cbr(g, m, "dec.lat2", e[0], 1, 0), g.bilinear_upsample2x(d3)), 1, 1);
  const Id d6 = g.avg_downsample2x(l5);
  return {d2, d3, d4, l5, d6};
}

template <typename T>
typename Graph<T>::Id context_unit(Graph<T>& g, Model<T>& m, typename Graph<T>::Id x) {
  switch (m.cfg.variant) {
    case HeadVariant::Baseline:
      return x;
    case HeadVariant::Naive:
      return cbr(g, m, "head.pre1", cbr(g, m, "head.pre0", x, 1, 1), 1, 1);
    case HeadVariant::GcnS:
    case HeadVariant::GcnNS:
      return g.add(x, separable_gcn(g, x, g.param(m.p("head.gcn.a1")),
                                    g.param(m.p("head.gcn.a2")), g.param(m.p("head.gcn.b1")),
                                    g.param(m.p("head.gcn.b2")), m.cfg.gcn_kernel));
    case HeadVariant::LkS:
    case HeadVariant::LkNS: {
      const auto narrow = cbr(g, m, "head.lk", x, 1, m.cfg.lk_kernel / 2);
      return g.add(x, g.conv2d(narrow, g.param(m.p("head.lk.proj")), 1, 0, 0));
    }
  }
  throw ConfigError("context_unit: unhandled variant");
}

}  // namespace detail

// Full network: pyramid features then the shared head on every level.
template <typename T>
ForwardMaps<T> forward_model(Graph<T>& g, Model<T>& m, typename Graph<T>::Id image) {
  const auto enc = detail::encode(g, m, image);
  const auto levels = detail::decode(g, m, enc);
  ForwardMaps<T> out;
  for (const auto d : levels) {
    const auto u = detail::context_unit(g, m, d);
    if (variant_has_split_smoothers(m.cfg.variant)) {
      out.reg.push_back(detail::cb1(g, m, "head.reg", detail::cbr(g, m, "head.smooth.reg", u, 1, 1)));
      out.cls.push_back(detail::cb1(g, m, "head.cls", detail::cbr(g, m, "head.smooth.cls", u, 1, 1)));
    } else {
      const auto s = detail::cbr(g, m, "head.smooth", u, 1, 1);
      out.reg.push_back(detail::cb1(g, m, "head.reg", s));
      out.cls.push_back(detail::cb1(g, m, "head.cls", s));
    }
  }
  return out;
}

}  // namespace psrpn

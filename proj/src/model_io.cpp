#include "psrpn/model_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "psrpn/errors.hpp"
#include "psrpn/pft.hpp"

namespace psrpn {

namespace {

using nlohmann::json;

// Entry i is parameter i, then the bn running buffers two per site.
std::vector<std::pair<std::string, std::string>> entry_names(const Model<float>& m) {
  std::vector<std::pair<std::string, std::string>> names;
  for (const Parameter<float>* p : m.ordered) names.emplace_back(p->name, "param");
  for (const auto& [site, state] : m.bn_sites) {
    (void)state;
    names.emplace_back(site, "running_mean");
    names.emplace_back(site, "running_var");
  }
  return names;
}

const Tensor4f& entry_tensor(const Model<float>& m, std::size_t i) {
  if (i < m.ordered.size()) return m.ordered[i]->value;
  const std::size_t j = i - m.ordered.size();
  const BnState<float>& st = *m.bn_sites[j / 2].second;
  return j % 2 == 0 ? st.running_mean : st.running_var;
}

Tensor4f& entry_tensor(Model<float>& m, std::size_t i) {
  return const_cast<Tensor4f&>(entry_tensor(static_cast<const Model<float>&>(m), i));
}

std::string entry_file(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "param_%04zu.pft", i);
  return buf;
}

}  // namespace

void save_model(const Model<float>& m, const std::string& dir, const std::string& config_hash) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("save_model: cannot create " + dir + ": " + ec.message());

  const auto names = entry_names(m);
  json manifest;
  manifest["version"] = 1;
  manifest["config_hash"] = config_hash;
  manifest["entries"] = json::array();
  for (std::size_t i = 0; i < names.size(); ++i) {
    const Tensor4f& t = entry_tensor(m, i);
    const std::string file = entry_file(i);
    save_pft(dir + "/" + file, t);
    manifest["entries"].push_back({{"name", names[i].first},
                                   {"kind", names[i].second},
                                   {"shape", {t.n, t.c, t.h, t.w}},
                                   {"file", file}});
  }
  std::ofstream out(dir + "/manifest.json");
  if (!out) throw IoError("save_model: cannot write manifest in " + dir);
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("save_model: short write on manifest in " + dir);
}

std::string load_model(Model<float>& m, const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) throw IoError("load_model: cannot open " + dir + "/manifest.json");
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw ParseError("load_model: bad manifest in " + dir + ": " + e.what());
  }
  if (!manifest.contains("version") || manifest["version"] != 1)
    throw ParseError("load_model: unsupported manifest version in " + dir);

  const auto names = entry_names(m);
  const auto& listed = manifest.at("entries");
  if (listed.size() != names.size())
    throw ConfigError("load_model: checkpoint has " + std::to_string(listed.size()) +
                      " entries, model expects " + std::to_string(names.size()));
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& j = listed[i];
    if (j.at("name") != names[i].first || j.at("kind") != names[i].second)
      throw ConfigError("load_model: entry " + std::to_string(i) + " is " +
                        j.at("name").get<std::string>() + "/" + j.at("kind").get<std::string>() +
                        ", model expects " + names[i].first + "/" + names[i].second);
    Tensor4f t = load_pft(dir + "/" + j.at("file").get<std::string>());
    Tensor4f& dst = entry_tensor(m, i);
    if (!t.same_shape(dst))
      throw ConfigError("load_model: shape mismatch for " + names[i].first + ": file " +
                        t.shape_str() + " vs model " + dst.shape_str());
    dst.data = std::move(t.data);
  }
  return manifest.value("config_hash", "");
}

}  // namespace psrpn

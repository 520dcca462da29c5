#include "psrpn/proposal_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "psrpn/errors.hpp"

namespace psrpn {

void save_proposals(const std::string& dir, const std::vector<ProposalSet>& sets,
                    const std::string& config_hash) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("save_proposals: cannot create " + dir + ": " + ec.message());

  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["config_hash"] = config_hash;
  manifest["images"] = nlohmann::json::array();
  for (std::size_t i = 0; i < sets.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "props_%05zu.txt", i);
    std::ofstream out(dir + "/" + name);
    if (!out) throw IoError("save_proposals: cannot write " + dir + "/" + name);
    for (const Proposal& p : sets[i].props) {
      char line[160];
      std::snprintf(line, sizeof line, "%.6f %.6f %.6f %.6f %.8f\n", p.box.x0, p.box.y0,
                    p.box.x1, p.box.y1, p.score);
      out << line;
    }
    if (!out) throw IoError("save_proposals: short write on " + dir + "/" + name);
    manifest["images"].push_back({{"id", sets[i].image_id},
                                  {"file", name},
                                  {"count", sets[i].props.size()}});
  }
  std::ofstream out(dir + "/manifest.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("save_proposals: cannot write manifest in " + dir);
}

std::vector<ProposalSet> load_proposals(const std::string& dir, std::string* config_hash) {
  std::ifstream min(dir + "/manifest.json");
  if (!min) throw IoError("load_proposals: cannot open " + dir + "/manifest.json");
  nlohmann::json manifest;
  try {
    min >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("load_proposals: bad manifest in " + dir + ": " + e.what());
  }
  if (manifest.value("version", 0) != 1)
    throw ParseError("load_proposals: unsupported manifest version in " + dir);
  if (config_hash) *config_hash = manifest.value("config_hash", "");

  std::vector<ProposalSet> sets;
  for (const auto& im : manifest.at("images")) {
    ProposalSet s;
    s.image_id = im.at("id").get<std::string>();
    const std::string file = im.at("file").get<std::string>();
    std::ifstream in(dir + "/" + file);
    if (!in) throw IoError("load_proposals: cannot open " + dir + "/" + file);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      Proposal p;
      if (!(ls >> p.box.x0 >> p.box.y0 >> p.box.x1 >> p.box.y1 >> p.score))
        throw ParseError("load_proposals: bad line in " + dir + "/" + file + ": " + line);
      s.props.push_back(p);
    }
    if (s.props.size() != im.at("count").get<std::size_t>())
      throw ParseError("load_proposals: count mismatch for " + dir + "/" + file);
    sets.push_back(std::move(s));
  }
  return sets;
}

}  // namespace psrpn

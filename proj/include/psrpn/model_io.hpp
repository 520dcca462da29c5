#pragma once

#include <string>

#include "psrpn/model.hpp"

namespace psrpn {

// Directory checkpoint: manifest.json plus one tensor container per entry.
// Entry order is parameter creation order followed by bn running buffers,
// and a reload is byte exact.
void save_model(const Model<float>& m, const std::string& dir, const std::string& config_hash);

// Loads into an already-built model of the same architecture; returns the
// config hash recorded at save time.
std::string load_model(Model<float>& m, const std::string& dir);

}  // namespace psrpn

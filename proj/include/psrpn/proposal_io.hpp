#pragma once

#include <string>
#include <vector>

#include "psrpn/eval.hpp"

namespace psrpn {

// Proposals for one image, keyed by the annotation id.
struct ProposalSet {
  std::string image_id;
  std::vector<Proposal> props;  // score order
};

// Directory layout: manifest.json naming every per-image text file, one
// proposal per line as "x0 y0 x1 y1 score".
void save_proposals(const std::string& dir, const std::vector<ProposalSet>& sets,
                    const std::string& config_hash);

// Loads a directory written by save_proposals; sets arrive ordered as the
// manifest lists them. The stored config hash lands in *config_hash when
// given.
std::vector<ProposalSet> load_proposals(const std::string& dir,
                                        std::string* config_hash = nullptr);

}  // namespace psrpn

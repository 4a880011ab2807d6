#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "ttalab/nn/network.hpp"

namespace ttalab {

// Text checkpoint: a manifest of layer kinds and dimensions followed by one
// line per parameter array, every value written with 17 significant digits so
// that loading reproduces the network bit for bit.
//
//   ttalab-checkpoint 1
//   layers <L>
//   layer <i> linear <in> <out>
//   layer <i> batchnorm <C> <eps>
//   layer <i> relu <width>
//   params
//   <i> <name> <count> <v_1> ... <v_count>
//   end
std::string save_checkpoint(const Network& net);

// Throws ParseError naming the offending layer.
Network load_checkpoint(std::string_view document);

void write_checkpoint_file(const Network& net, const std::filesystem::path& path);
Network read_checkpoint_file(const std::filesystem::path& path);

}  // namespace ttalab

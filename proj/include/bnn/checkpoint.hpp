#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "bnn/graph.hpp"

namespace bnn {

// Versioned binary weight container. Holds everything needed to rebuild
// the graph exactly: per-layer shapes, packed binary weights, latent
// weights and normalization states. Round-trips are bit-exact.
//
// The optional sidecar (same path + ".json") records the architecture
// preset, the seed and the training configuration for humans and tooling;
// loading never needs it.
void save_checkpoint(const LayerGraph& g, const std::filesystem::path& path);
LayerGraph load_checkpoint(const std::filesystem::path& path);

void write_sidecar(const std::filesystem::path& checkpoint_path,
                   const std::map<std::string, std::string>& meta);

// In-memory serialization; save_checkpoint writes exactly these bytes.
std::string serialize_checkpoint(const LayerGraph& g);
LayerGraph deserialize_checkpoint(const std::string& bytes);

}  // namespace bnn

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bnn/graph.hpp"

namespace bnn {

struct ToleranceConfig {
  std::vector<double> b_levels{2, 4, 8, 16, 32, 64};

  void validate() const {
    if (b_levels.empty())
      throw ConfigError("tolerance: b_levels must be non-empty");
    for (std::size_t i = 0; i < b_levels.size(); ++i) {
      if (b_levels[i] < 0)
        throw ConfigError("tolerance: b levels must be non-negative");
      if (i && !(b_levels[i] > b_levels[i - 1]))
        throw ConfigError("tolerance: b levels must be ascending and distinct");
    }
  }
};

// Local tolerances |h - s - 1/2| for one evaluated sample, one tensor per
// sign layer (shape [channels, u, v]); first-layer values are divided by z.
std::vector<RealTensor> local_tolerance(const EvalTrace& trace, int z);

// Fraction of feature-map positions whose local tolerance reaches b.
double neuron_tolerance(std::span<const double> local_t, double b);

struct LayerTolerance {
  std::string name;          // e.g. "layer0" (graph index of the weight layer)
  std::size_t weight_layer = 0;
  bool first = false;
  std::size_t neurons = 0, u = 1, v = 1;
  std::vector<double> tb;    // mean over samples and neurons, per b level
};

struct ToleranceReport {
  std::vector<double> b_levels;
  int z = 255;
  std::size_t samples = 0;   // I
  std::size_t neurons = 0;   // N, summed over sign layers
  std::vector<double> network_tb;             // T^b per level
  std::vector<LayerTolerance> layers;
  std::vector<std::vector<double>> sample_tb; // T^b_i, [samples][levels]
};

// Single pass over the dataset: one evaluation-mode forward per sample.
ToleranceReport network_tolerance(const LayerGraph& g, const IntTensor& images,
                                  std::size_t sample_count,
                                  const ToleranceConfig& cfg);

// CSV rows (b, layer, T_b_layer_mean), ordered by (b, layer); the final
// row per b carries layer = "network". JSON mirrors the full hierarchy.
void write_tolerance_csv(const ToleranceReport& r,
                         const std::filesystem::path& path);
void write_tolerance_json(const ToleranceReport& r,
                          const std::filesystem::path& path);

// ----- brute-force check of the flip-tolerance bound -----

// One neuron: +-1 weights, an integer activation shift, and one input
// vector per feature-map position. Inputs are +-1, or integers in [0,z]
// when first_layer is set.
struct NeuronProbe {
  std::vector<int> weights;
  std::vector<std::vector<int>> positions;  // each of size weights.size()
  std::int64_t shift = 0;
  bool first_layer = false;
  int z = 1;

  std::int64_t preactivation(std::size_t pos) const;
  double local_t(std::size_t pos) const;  // |h - s - 1/2| (/z when first)
  double min_t() const;
};

enum class VerifyMode { exhaustive, randomized };

struct VerifyResult {
  bool tolerated = true;
  // Filled for the first counterexample found.
  std::size_t position = 0;
  std::vector<std::size_t> flip_set;

  explicit operator bool() const { return tolerated; }
};

// Checks that every flip set of at most `budget` weights leaves the sign
// output unchanged at every position. budget defaults to floor(b/2); a
// larger budget can be passed to probe the bound's tightness. Throws
// ValueError when min_t() < b (hypothesis violated, caller error).
// Randomized mode draws `samples` flip sets instead of enumerating.
VerifyResult verify_theorem1(const NeuronProbe& neuron, double b,
                             std::optional<std::size_t> budget = std::nullopt,
                             VerifyMode mode = VerifyMode::exhaustive,
                             std::size_t samples = 10000,
                             std::uint64_t seed = 0);

}  // namespace bnn

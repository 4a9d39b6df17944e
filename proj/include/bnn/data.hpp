#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bnn/tensor.hpp"

namespace bnn {

// A labeled image set with integer pixels in [0, z]. No normalization is
// ever applied: integer inputs keep first-layer pre-activations exact.
struct Dataset {
  IntTensor images;  // [count, sample dims...]
  std::vector<int> labels;
  Shape sample_shape;
  int z = 255;
  std::size_t classes = 10;
  std::string split;

  std::size_t count() const { return labels.size(); }
  std::size_t features() const { return sample_shape.elems(); }

  IntTensor sample(std::size_t i) const {
    IntTensor s(sample_shape);
    const std::size_t f = features();
    for (std::size_t j = 0; j < f; ++j) s[j] = images[i * f + j];
    return s;
  }

  void validate() const;
  Dataset head(std::size_t n) const;  // first n samples
};

// IDX container (big-endian dims, magic 0x803 for images, 0x801 for labels).
Dataset load_idx(const std::filesystem::path& image_file,
                 const std::filesystem::path& label_file);

// Directory with the four standard FashionMNIST IDX files, uncompressed.
Dataset load_fashion_dir(const std::filesystem::path& dir,
                         const std::string& split);

// CIFAR10 binary batches: records of 1 label byte + 3072 channel-major
// pixel bytes.
Dataset load_cifar10_binary(const std::vector<std::filesystem::path>& files);
Dataset load_cifar10_dir(const std::filesystem::path& dir,
                         const std::string& split);

// Deterministic synthetic sets for desk-scale runs. `two-gaussians` is a
// linearly separable 2-class blob pair; `checkerboard` is a 2-class XOR of
// two latent coordinates (not linearly separable). Labels alternate, so
// n=2 yields one sample per class.
Dataset synthesize(const std::string& kind, std::size_t n, std::uint64_t seed,
                   int z, const Shape& sample_shape);

}  // namespace bnn

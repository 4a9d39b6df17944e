#include "bnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "bnn/rng.hpp"

namespace bnn {

void Dataset::validate() const {
  if (images.shape().elems() != count() * features())
    throw ShapeError("dataset: image extent does not match label count");
  for (int l : labels)
    if (l < 0 || std::size_t(l) >= classes)
      throw ValueError("dataset: label out of range");
  for (std::size_t i = 0; i < images.size(); ++i)
    if (images[i] < 0 || images[i] > z)
      throw ValueError("dataset: pixel outside [0,z]");
}

Dataset Dataset::head(std::size_t n) const {
  if (n == 0 || n > count())
    throw ValueError("dataset: invalid subset size");
  Dataset out = *this;
  std::vector<std::size_t> dims = images.shape().dims();
  dims[0] = n;
  out.images = IntTensor(
      Shape(dims), std::vector<std::int32_t>(
                       images.values().begin(),
                       images.values().begin() + n * features()));
  out.labels.assign(labels.begin(), labels.begin() + n);
  return out;
}

namespace {

std::vector<unsigned char> read_all(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot open: " + p.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
  if (at + 4 > b.size()) throw IoError("idx: truncated header");
  return (std::uint32_t(b[at]) << 24) | (std::uint32_t(b[at + 1]) << 16) |
         (std::uint32_t(b[at + 2]) << 8) | std::uint32_t(b[at + 3]);
}

}  // namespace

Dataset load_idx(const std::filesystem::path& image_file,
                 const std::filesystem::path& label_file) {
  const auto ib = read_all(image_file);
  if (be32(ib, 0) != 0x00000803u)
    throw IoError("idx: bad image magic in " + image_file.string());
  const std::size_t count = be32(ib, 4);
  const std::size_t rows = be32(ib, 8);
  const std::size_t cols = be32(ib, 12);
  if (ib.size() != 16 + count * rows * cols)
    throw IoError("idx: truncated image file " + image_file.string());

  const auto lb = read_all(label_file);
  if (be32(lb, 0) != 0x00000801u)
    throw IoError("idx: bad label magic in " + label_file.string());
  const std::size_t lcount = be32(lb, 4);
  if (lb.size() != 8 + lcount)
    throw IoError("idx: truncated label file " + label_file.string());
  if (lcount != count)
    throw IoError("idx: image/label count mismatch");

  Dataset d;
  d.sample_shape = Shape{1, rows, cols};
  d.z = 255;
  d.classes = 10;
  d.images = IntTensor(Shape{count, 1, rows, cols});
  for (std::size_t i = 0; i < count * rows * cols; ++i)
    d.images[i] = ib[16 + i];
  d.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) d.labels[i] = lb[8 + i];
  d.validate();
  return d;
}

Dataset load_fashion_dir(const std::filesystem::path& dir,
                         const std::string& split) {
  if (split == "train") {
    Dataset d = load_idx(dir / "train-images-idx3-ubyte",
                         dir / "train-labels-idx1-ubyte");
    d.split = "train";
    return d;
  }
  if (split == "test") {
    Dataset d = load_idx(dir / "t10k-images-idx3-ubyte",
                         dir / "t10k-labels-idx1-ubyte");
    d.split = "test";
    return d;
  }
  throw ConfigError("load_fashion_dir: split must be train or test");
}

Dataset load_cifar10_binary(const std::vector<std::filesystem::path>& files) {
  constexpr std::size_t kRecord = 3073;
  constexpr std::size_t kPixels = 3072;
  std::vector<std::int32_t> pixels;
  std::vector<int> labels;
  for (const auto& p : files) {
    const auto bytes = read_all(p);
    if (bytes.empty() || bytes.size() % kRecord != 0)
      throw IoError("cifar10: file length not a multiple of 3073: " +
                    p.string());
    const std::size_t n = bytes.size() / kRecord;
    for (std::size_t i = 0; i < n; ++i) {
      const unsigned char label = bytes[i * kRecord];
      if (label > 9) throw IoError("cifar10: label > 9 in " + p.string());
      labels.push_back(label);
      for (std::size_t j = 0; j < kPixels; ++j)
        pixels.push_back(bytes[i * kRecord + 1 + j]);
    }
  }
  if (labels.empty()) throw IoError("cifar10: no records");
  Dataset d;
  d.sample_shape = Shape{3, 32, 32};
  d.z = 255;
  d.classes = 10;
  d.images = IntTensor(Shape{labels.size(), 3, 32, 32}, std::move(pixels));
  d.labels = std::move(labels);
  d.validate();
  return d;
}

Dataset load_cifar10_dir(const std::filesystem::path& dir,
                         const std::string& split) {
  std::vector<std::filesystem::path> files;
  if (split == "train") {
    for (int i = 1; i <= 5; ++i)
      files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  } else if (split == "test") {
    files.push_back(dir / "test_batch.bin");
  } else {
    throw ConfigError("load_cifar10_dir: split must be train or test");
  }
  Dataset d = load_cifar10_binary(files);
  d.split = split;
  return d;
}

namespace {

std::int32_t quantize(double v, int z) {
  const long r = std::lround(v);
  return static_cast<std::int32_t>(std::clamp<long>(r, 0, z));
}

}  // namespace

Dataset synthesize(const std::string& kind, std::size_t n, std::uint64_t seed,
                   int z, const Shape& sample_shape) {
  if (n < 2) throw ValueError("synthesize: need n >= 2");
  if (z < 1) throw ValueError("synthesize: need z >= 1");
  const std::size_t feat = sample_shape.elems();
  Dataset d;
  d.sample_shape = sample_shape;
  d.z = z;
  d.classes = 2;
  d.split = kind;
  std::vector<std::size_t> dims;
  dims.push_back(n);
  for (std::size_t e : sample_shape.dims()) dims.push_back(e);
  d.images = IntTensor(Shape(dims));
  d.labels.resize(n);

  rng::Stream rs(rng::derive_seed(seed, 0x5D47Au), 0);
  const double zc = double(z);

  if (kind == "two-gaussians") {
    // Class means sit at 0.35z and 0.65z in every pixel; the pixel sum
    // separates the classes with a wide margin even after quantization.
    for (std::size_t i = 0; i < n; ++i) {
      const int label = int(i % 2);
      d.labels[i] = label;
      const double mu = label == 0 ? 0.35 * zc : 0.65 * zc;
      for (std::size_t j = 0; j < feat; ++j)
        d.images[i * feat + j] = quantize(mu + 0.04 * zc * rs.next_normal(), z);
    }
  } else if (kind == "checkerboard") {
    // Two latent coordinates, XOR labeling. The first half of the pixels
    // encodes coordinate a, the second half coordinate b.
    for (std::size_t i = 0; i < n; ++i) {
      const int label = int(i % 2);
      d.labels[i] = label;
      const bool a_high = rs.next() & 1;
      const bool b_high = (label == 1) != a_high;  // XOR structure
      const double mu_a = a_high ? 0.70 * zc : 0.30 * zc;
      const double mu_b = b_high ? 0.70 * zc : 0.30 * zc;
      const std::size_t half = feat / 2;
      for (std::size_t j = 0; j < feat; ++j) {
        const double mu = j < half ? mu_a : mu_b;
        d.images[i * feat + j] = quantize(mu + 0.08 * zc * rs.next_normal(), z);
      }
    }
  } else {
    throw ConfigError("synthesize: unknown kind '" + kind + "'");
  }
  d.validate();
  return d;
}

}  // namespace bnn

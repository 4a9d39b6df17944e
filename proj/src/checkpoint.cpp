#include "bnn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace bnn {

namespace {

constexpr char kMagic[8] = {'B', 'N', 'N', 'C', 'K', 'P', 'T', '1'};

// Plain little-endian field writers. The format is only read back by this
// code, so raw IEEE-754 doubles keep round-trips bit-exact.
struct Writer {
  std::string out;

  void raw(const void* p, std::size_t n) {
    out.append(static_cast<const char*>(p), n);
  }
  void u8(std::uint8_t v) { raw(&v, 1); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void shape(const Shape& s) {
    u32(static_cast<std::uint32_t>(s.rank()));
    for (std::size_t d : s.dims()) u64(d);
  }
  void doubles(const std::vector<double>& v) {
    u64(v.size());
    raw(v.data(), v.size() * 8);
  }
  void words(const std::vector<std::uint64_t>& v) {
    u64(v.size());
    raw(v.data(), v.size() * 8);
  }
};

struct Reader {
  const std::string& in;
  std::size_t pos = 0;

  void raw(void* p, std::size_t n) {
    if (pos + n > in.size()) throw IoError("checkpoint: truncated file");
    std::memcpy(p, in.data() + pos, n);
    pos += n;
  }
  std::uint8_t u8() { std::uint8_t v; raw(&v, 1); return v; }
  std::uint32_t u32() { std::uint32_t v; raw(&v, 4); return v; }
  std::uint64_t u64() { std::uint64_t v; raw(&v, 8); return v; }
  double f64() { double v; raw(&v, 8); return v; }
  std::string str() {
    const std::uint32_t n = u32();
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  Shape shape() {
    const std::uint32_t rank = u32();
    if (rank > 8) throw IoError("checkpoint: implausible shape rank");
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = u64();
    return Shape(dims);
  }
  std::vector<double> doubles() {
    const std::uint64_t n = u64();
    if (n > (1ull << 32)) throw IoError("checkpoint: implausible array size");
    std::vector<double> v(n);
    raw(v.data(), n * 8);
    return v;
  }
  std::vector<std::uint64_t> words() {
    const std::uint64_t n = u64();
    if (n > (1ull << 32)) throw IoError("checkpoint: implausible array size");
    std::vector<std::uint64_t> v(n);
    raw(v.data(), n * 8);
    return v;
  }
};

enum LayerTag : std::uint8_t {
  kDense = 1,
  kConv = 2,
  kPool = 3,
  kNorm = 4,
  kSign = 5,
};

void write_packed(Writer& w, const BinaryTensor& b) {
  w.shape(b.shape());
  w.words(b.words());
}

BinaryTensor read_packed(Reader& r) {
  const Shape s = r.shape();
  BinaryTensor b(s);
  const auto words = r.words();
  if (words.size() != b.words().size())
    throw IoError("checkpoint: packed word count mismatch");
  b.words() = words;
  b.canonicalize();
  return b;
}

}  // namespace

std::string serialize_checkpoint(const LayerGraph& g) {
  Writer w;
  w.raw(kMagic, 8);
  w.u32(1);  // format version
  w.str(g.preset);
  w.f64(g.width_scale);
  w.shape(g.input_shape);
  w.u32(static_cast<std::uint32_t>(g.z));
  w.u64(g.classes);
  w.u32(static_cast<std::uint32_t>(g.layers.size()));

  for (const auto& layer : g.layers) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      w.u8(kDense);
      w.u64(d->in);
      w.u64(d->out);
      w.u8(d->first ? 1 : 0);
      w.doubles(d->latent.values());
      write_packed(w, d->bits);
    } else if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      w.u8(kConv);
      w.u64(c->filters);
      w.u64(c->channels);
      w.u64(c->kh);
      w.u64(c->kw);
      w.u8(c->first ? 1 : 0);
      w.doubles(c->latent.values());
      write_packed(w, c->bits);
    } else if (std::holds_alternative<PoolLayer>(layer)) {
      w.u8(kPool);
    } else if (const auto* n = std::get_if<NormLayer>(&layer)) {
      w.u8(kNorm);
      w.f64(n->bn.eps);
      w.f64(n->bn.momentum);
      w.doubles(n->bn.gamma);
      w.doubles(n->bn.beta);
      w.doubles(n->bn.running_mean);
      w.doubles(n->bn.running_var);
    } else {
      w.u8(kSign);
    }
  }
  return std::move(w.out);
}

LayerGraph deserialize_checkpoint(const std::string& bytes) {
  Reader r{bytes};
  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != 1) throw IoError("checkpoint: unsupported version");

  LayerGraph g;
  g.preset = r.str();
  g.width_scale = r.f64();
  g.input_shape = r.shape();
  g.z = static_cast<int>(r.u32());
  g.classes = r.u64();
  const std::uint32_t nlayers = r.u32();

  for (std::uint32_t i = 0; i < nlayers; ++i) {
    switch (r.u8()) {
      case kDense: {
        DenseLayer d;
        d.in = r.u64();
        d.out = r.u64();
        d.first = r.u8() != 0;
        d.latent = RealTensor(Shape{d.out, d.in}, r.doubles());
        d.bits = read_packed(r);
        g.layers.emplace_back(std::move(d));
        break;
      }
      case kConv: {
        ConvLayer c;
        c.filters = r.u64();
        c.channels = r.u64();
        c.kh = r.u64();
        c.kw = r.u64();
        c.first = r.u8() != 0;
        c.latent = RealTensor(Shape{c.filters, c.channels, c.kh, c.kw},
                              r.doubles());
        c.bits = read_packed(r);
        g.layers.emplace_back(std::move(c));
        break;
      }
      case kPool:
        g.layers.emplace_back(PoolLayer{});
        break;
      case kNorm: {
        NormLayer n;
        n.bn.eps = r.f64();
        n.bn.momentum = r.f64();
        n.bn.gamma = r.doubles();
        n.bn.beta = r.doubles();
        n.bn.running_mean = r.doubles();
        n.bn.running_var = r.doubles();
        if (n.bn.beta.size() != n.bn.gamma.size() ||
            n.bn.running_mean.size() != n.bn.gamma.size() ||
            n.bn.running_var.size() != n.bn.gamma.size())
          throw IoError("checkpoint: inconsistent norm state");
        g.layers.emplace_back(std::move(n));
        break;
      }
      case kSign:
        g.layers.emplace_back(SignLayer{});
        break;
      default:
        throw IoError("checkpoint: unknown layer tag");
    }
  }
  if (r.pos != bytes.size()) throw IoError("checkpoint: trailing bytes");
  g.bump_stamp();
  return g;
}

void save_checkpoint(const LayerGraph& g, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(g);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

LayerGraph load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_checkpoint(ss.str());
}

void write_sidecar(const std::filesystem::path& checkpoint_path,
                   const std::map<std::string, std::string>& meta) {
  nlohmann::json j(meta);
  std::ofstream f(checkpoint_path.string() + ".json");
  if (!f) throw IoError("cannot write sidecar for " + checkpoint_path.string());
  f << j.dump(2) << "\n";
}

}  // namespace bnn

#include "bnn/tolerance.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "bnn/parallel.hpp"
#include "bnn/rng.hpp"

namespace bnn {

std::vector<RealTensor> local_tolerance(const EvalTrace& trace, int z) {
  std::vector<RealTensor> out;
  out.reserve(trace.sign_layers.size());
  for (const auto& sl : trace.sign_layers) {
    RealTensor t(Shape{sl.channels, sl.u, sl.v});
    const std::size_t spatial = sl.u * sl.v;
    const double div = sl.first ? double(z) : 1.0;
    for (std::size_t c = 0; c < sl.channels; ++c)
      for (std::size_t sp = 0; sp < spatial; ++sp) {
        const std::size_t i = c * spatial + sp;
        const double d = double(sl.h[i]) - double(sl.shift->s[c]) - 0.5;
        t[i] = std::abs(d) / div;
      }
    out.push_back(std::move(t));
  }
  return out;
}

double neuron_tolerance(std::span<const double> local_t, double b) {
  if (local_t.empty()) throw ValueError("neuron_tolerance: no positions");
  std::size_t hits = 0;
  for (double t : local_t)
    if (t >= b) ++hits;
  return double(hits) / double(local_t.size());
}

ToleranceReport network_tolerance(const LayerGraph& g, const IntTensor& images,
                                  std::size_t sample_count,
                                  const ToleranceConfig& cfg) {
  cfg.validate();
  if (sample_count == 0) throw ValueError("network_tolerance: empty dataset");
  const std::size_t feat = images.shape().elems() / sample_count;
  if (feat != g.input_features())
    throw ShapeError("network_tolerance: image size mismatch");

  const std::size_t levels = cfg.b_levels.size();
  EvalContext ctx(g);

  // Discover the sign-layer structure from one forward pass.
  EvalTrace probe;
  {
    IntTensor sample(g.input_shape);
    for (std::size_t j = 0; j < feat; ++j) sample[j] = images[j];
    g.forward_eval(ctx, sample, &probe);
  }
  const std::size_t nlayers = probe.sign_layers.size();
  if (nlayers == 0)
    throw ValueError("network_tolerance: graph has no sign activations");

  ToleranceReport rep;
  rep.b_levels = cfg.b_levels;
  rep.z = g.z;
  rep.samples = sample_count;
  rep.layers.resize(nlayers);
  for (std::size_t l = 0; l < nlayers; ++l) {
    auto& lt = rep.layers[l];
    lt.weight_layer = probe.sign_layers[l].weight_layer;
    lt.name = "layer" + std::to_string(lt.weight_layer);
    lt.first = probe.sign_layers[l].first;
    lt.neurons = probe.sign_layers[l].channels;
    lt.u = probe.sign_layers[l].u;
    lt.v = probe.sign_layers[l].v;
    lt.tb.assign(levels, 0.0);
    rep.neurons += lt.neurons;
  }

  // Per-sample accumulation into slots indexed by sample; the final
  // reduction runs in sample order so the report never depends on the
  // worker count.
  rep.sample_tb.assign(sample_count, std::vector<double>(levels, 0.0));
  std::vector<std::vector<double>> layer_acc(
      sample_count, std::vector<double>(nlayers * levels, 0.0));

  parallel_for(sample_count, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      IntTensor sample(g.input_shape);
      for (std::size_t j = 0; j < feat; ++j) sample[j] = images[i * feat + j];
      EvalTrace tr;
      g.forward_eval(ctx, sample, &tr);
      const auto local = local_tolerance(tr, g.z);
      for (std::size_t l = 0; l < nlayers; ++l) {
        const auto& sl = tr.sign_layers[l];
        const std::size_t spatial = sl.u * sl.v;
        for (std::size_t lv = 0; lv < levels; ++lv) {
          const double b = cfg.b_levels[lv];
          double layer_sum = 0.0;
          for (std::size_t n = 0; n < sl.channels; ++n) {
            const double tn = neuron_tolerance(
                {local[l].data() + n * spatial, spatial}, b);
            layer_sum += tn;
          }
          layer_acc[i][l * levels + lv] = layer_sum;
          rep.sample_tb[i][lv] += layer_sum;
        }
      }
      for (std::size_t lv = 0; lv < levels; ++lv)
        rep.sample_tb[i][lv] /= double(rep.neurons);
    }
  });

  for (std::size_t lv = 0; lv < levels; ++lv) {
    double net = 0.0;
    for (std::size_t i = 0; i < sample_count; ++i) net += rep.sample_tb[i][lv];
    rep.network_tb.push_back(net / double(sample_count));
  }
  for (std::size_t l = 0; l < nlayers; ++l)
    for (std::size_t lv = 0; lv < levels; ++lv) {
      double sum = 0.0;
      for (std::size_t i = 0; i < sample_count; ++i)
        sum += layer_acc[i][l * levels + lv];
      rep.layers[l].tb[lv] =
          sum / double(sample_count * rep.layers[l].neurons);
    }
  return rep;
}

void write_tolerance_csv(const ToleranceReport& r,
                         const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "b,layer,T_b_layer_mean\n";
  char buf[64];
  for (std::size_t lv = 0; lv < r.b_levels.size(); ++lv) {
    for (const auto& l : r.layers) {
      std::snprintf(buf, sizeof buf, "%.17g", l.tb[lv]);
      f << r.b_levels[lv] << "," << l.name << "," << buf << "\n";
    }
    std::snprintf(buf, sizeof buf, "%.17g", r.network_tb[lv]);
    f << r.b_levels[lv] << ",network," << buf << "\n";
  }
  if (!f) throw IoError("write failed: " + path.string());
}

void write_tolerance_json(const ToleranceReport& r,
                          const std::filesystem::path& path) {
  nlohmann::json j;
  j["b_levels"] = r.b_levels;
  j["z"] = r.z;
  j["samples"] = r.samples;
  j["neurons"] = r.neurons;
  j["network_tb"] = r.network_tb;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : r.layers) {
    j["layers"].push_back({{"name", l.name},
                           {"weight_layer", l.weight_layer},
                           {"first", l.first},
                           {"neurons", l.neurons},
                           {"u", l.u},
                           {"v", l.v},
                           {"tb", l.tb}});
  }
  j["sample_tb"] = r.sample_tb;
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << "\n";
}

// ----- theorem verifier -----

std::int64_t NeuronProbe::preactivation(std::size_t pos) const {
  const auto& x = positions.at(pos);
  if (x.size() != weights.size())
    throw ShapeError("NeuronProbe: input/weight length mismatch");
  std::int64_t h = 0;
  for (std::size_t k = 0; k < weights.size(); ++k)
    h += std::int64_t(weights[k]) * std::int64_t(x[k]);
  return h;
}

double NeuronProbe::local_t(std::size_t pos) const {
  const double d = double(preactivation(pos)) - double(shift) - 0.5;
  return std::abs(d) / (first_layer ? double(z) : 1.0);
}

double NeuronProbe::min_t() const {
  if (positions.empty()) throw ValueError("NeuronProbe: no positions");
  double m = local_t(0);
  for (std::size_t p = 1; p < positions.size(); ++p)
    m = std::min(m, local_t(p));
  return m;
}

namespace {

int sign_output(std::int64_t h, std::int64_t s) {
  return (double(h) - double(s) - 0.5) > 0.0 ? +1 : -1;
}

// Output under a given flip set: each flipped weight k changes h by
// -2 * w_k * x_k.
bool flips_change_output(const NeuronProbe& n,
                         const std::vector<std::size_t>& flips,
                         std::size_t* bad_position) {
  for (std::size_t p = 0; p < n.positions.size(); ++p) {
    const std::int64_t h = n.preactivation(p);
    std::int64_t delta = 0;
    for (std::size_t k : flips)
      delta -= 2 * std::int64_t(n.weights[k]) * std::int64_t(n.positions[p][k]);
    if (sign_output(h + delta, n.shift) != sign_output(h, n.shift)) {
      if (bad_position) *bad_position = p;
      return true;
    }
  }
  return false;
}

// Enumerate every subset of {0..fanin-1} of size <= budget.
bool enumerate_flip_sets(const NeuronProbe& n, std::size_t budget,
                         std::vector<std::size_t>& current, std::size_t next,
                         VerifyResult& result) {
  if (!current.empty()) {
    std::size_t bad = 0;
    if (flips_change_output(n, current, &bad)) {
      result.tolerated = false;
      result.position = bad;
      result.flip_set = current;
      return false;
    }
  }
  if (current.size() == budget) return true;
  for (std::size_t k = next; k < n.weights.size(); ++k) {
    current.push_back(k);
    if (!enumerate_flip_sets(n, budget, current, k + 1, result)) return false;
    current.pop_back();
  }
  return true;
}

}  // namespace

VerifyResult verify_theorem1(const NeuronProbe& neuron, double b,
                             std::optional<std::size_t> budget_opt,
                             VerifyMode mode, std::size_t samples,
                             std::uint64_t seed) {
  if (b < 0.0) throw ValueError("verify_theorem1: b must be non-negative");
  if (neuron.min_t() < b)
    throw ValueError("verify_theorem1: hypothesis violated, min T < b");
  const std::size_t fanin = neuron.weights.size();
  const std::size_t budget =
      budget_opt ? *budget_opt
                 : static_cast<std::size_t>(std::floor(b / 2.0));

  VerifyResult result;
  if (budget == 0) return result;  // zero flips are vacuously tolerated

  if (mode == VerifyMode::exhaustive) {
    if (fanin > 20)
      throw ValueError("verify_theorem1: exhaustive mode limited to fan-in 20");
    std::vector<std::size_t> current;
    enumerate_flip_sets(neuron, budget, current, 0, result);
    return result;
  }

  rng::Stream rs(seed, 0xF11F);
  std::vector<std::size_t> idx(fanin);
  for (std::size_t i = 0; i < fanin; ++i) idx[i] = i;
  for (std::size_t trial = 0; trial < samples; ++trial) {
    const std::size_t sz =
        1 + static_cast<std::size_t>(rs.next_below(std::min(budget, fanin)));
    // partial Fisher-Yates: first sz entries become the flip set
    for (std::size_t i = 0; i < sz; ++i)
      std::swap(idx[i], idx[i + rs.next_below(fanin - i)]);
    std::vector<std::size_t> flips(idx.begin(), idx.begin() + sz);
    std::size_t bad = 0;
    if (flips_change_output(neuron, flips, &bad)) {
      result.tolerated = false;
      result.position = bad;
      result.flip_set = std::move(flips);
      return result;
    }
  }
  return result;
}

}  // namespace bnn

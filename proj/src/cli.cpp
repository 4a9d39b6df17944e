#include "bnn/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "bnn/checkpoint.hpp"
#include "bnn/manifest.hpp"
#include "bnn/parallel.hpp"
#include "bnn/rng.hpp"
#include "bnn/tolerance.hpp"
#include "bnn/training.hpp"

namespace fs = std::filesystem;

namespace bnn::cli {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ----- kv binding: config file values become defaults, flags override -----

void kv_get(const KvConfig& kv, const std::string& key, std::string& out) {
  if (auto it = kv.find(key); it != kv.end()) out = it->second;
}
void kv_get(const KvConfig& kv, const std::string& key, double& out) {
  if (auto it = kv.find(key); it != kv.end()) {
    try {
      out = std::stod(it->second);
    } catch (...) {
      throw ConfigError("config: bad number for " + key);
    }
  }
}
void kv_get(const KvConfig& kv, const std::string& key, std::size_t& out) {
  if (auto it = kv.find(key); it != kv.end()) {
    try {
      out = std::stoull(it->second);
    } catch (...) {
      throw ConfigError("config: bad integer for " + key);
    }
  }
}
void kv_get(const KvConfig& kv, const std::string& key, std::uint64_t& out) {
  if (auto it = kv.find(key); it != kv.end()) {
    try {
      out = std::stoull(it->second);
    } catch (...) {
      throw ConfigError("config: bad integer for " + key);
    }
  }
}

KvConfig prescan_config(int argc, const char* const* argv) {
  for (int i = 0; i < argc - 1; ++i)
    if (std::string(argv[i]) == "--config")
      return load_config_file(argv[i + 1]);
  return {};
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t at = 0;
  while (at <= s.size()) {
    const auto next = s.find(sep, at);
    if (next == std::string::npos) {
      out.push_back(s.substr(at));
      break;
    }
    out.push_back(s.substr(at, next - at));
    at = next + 1;
  }
  return out;
}

std::vector<double> parse_level_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& tok : split(s, ','))
    if (!tok.empty()) out.push_back(std::stod(tok));
  return out;
}

// "0:10:0.5" (inclusive range) or "0,1.5,10".
std::vector<double> parse_rates(const std::string& s) {
  if (s.find(':') != std::string::npos) {
    const auto parts = split(s, ':');
    if (parts.size() != 3) throw ConfigError("rates: expected lo:hi:step");
    const double lo = std::stod(parts[0]);
    const double hi = std::stod(parts[1]);
    const double st = std::stod(parts[2]);
    if (!(st > 0.0) || hi < lo) throw ConfigError("rates: bad range");
    const std::size_t count =
        static_cast<std::size_t>(std::llround((hi - lo) / st)) + 1;
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = lo + st * double(i);
    return out;
  }
  auto out = parse_level_list(s);
  if (out.empty()) throw ConfigError("rates: empty list");
  return out;
}

Shape parse_shape(const std::string& s) {
  std::vector<std::size_t> dims;
  for (const auto& tok : split(s, 'x'))
    dims.push_back(std::stoull(tok));
  return Shape(dims);
}

void ensure_out_dir(const std::string& out) {
  if (out.empty()) throw ConfigError("--out directory is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out);
}

}  // namespace

Dataset load_data_spec(const std::string& spec, const std::string& role) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos)
    throw ConfigError("data spec needs a scheme prefix: " + spec);
  const std::string scheme = spec.substr(0, colon);
  const std::string rest = spec.substr(colon + 1);

  if (scheme == "synth") {
    const auto parts = split(rest, ',');
    if (parts.empty() || parts[0].empty())
      throw ConfigError("synth spec needs a kind");
    const std::string kind = parts[0];
    std::size_t n = 2000, ntest = 0;
    int z = 15;
    std::uint64_t seed = 7;
    Shape shape{1, 4, 4};
    for (std::size_t i = 1; i < parts.size(); ++i) {
      const auto eq = parts[i].find('=');
      if (eq == std::string::npos)
        throw ConfigError("synth spec: expected k=v, got " + parts[i]);
      const std::string k = parts[i].substr(0, eq);
      const std::string v = parts[i].substr(eq + 1);
      if (k == "n") n = std::stoull(v);
      else if (k == "ntest") ntest = std::stoull(v);
      else if (k == "z") z = std::stoi(v);
      else if (k == "seed") seed = std::stoull(v);
      else if (k == "shape") shape = parse_shape(v);
      else throw ConfigError("synth spec: unknown key " + k);
    }
    if (ntest == 0) ntest = std::max<std::size_t>(2, n / 5);
    if (role == "test")
      return synthesize(kind, ntest, seed + 1000003, z, shape);
    return synthesize(kind, n, seed, z, shape);
  }
  if (scheme == "fashion") return load_fashion_dir(rest, role);
  if (scheme == "cifar10") return load_cifar10_dir(rest, role);
  if (scheme == "idx") {
    const auto parts = split(rest, ':');
    if (parts.size() != 2)
      throw ConfigError("idx spec: expected idx:<images>:<labels>");
    return load_idx(parts[0], parts[1]);
  }
  throw ConfigError("unknown data scheme '" + scheme + "'");
}

namespace {

Dataset load_split(const std::string& spec, const std::string& role,
                   std::size_t subset) {
  Dataset d = load_data_spec(spec, role);
  if (subset > 0 && subset < d.count()) d = d.head(subset);
  return d;
}

void write_train_log(const fs::path& path,
                     const std::vector<EpochLog>& logs, bool with_tb) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "epoch,lr,train_loss,eval_acc,penalty";
  if (with_tb) f << ",tb";
  f << "\n";
  for (const auto& l : logs) {
    f << l.epoch << "," << fmt(l.lr) << "," << fmt(l.train_loss) << ","
      << fmt(l.eval_acc) << "," << fmt(l.penalty);
    if (with_tb) f << "," << fmt(l.tb_snapshot.value_or(0.0));
    f << "\n";
  }
}

// ----- train -----

int cmd_train(CLI::App& app, const KvConfig& file_kv, int argc,
              const char* const* argv) {
  std::string preset = "fashion-fcnn", data, eval_data, out, config_path,
              flip_mode = "none";
  double width_scale = 1.0, lr = 1e-3, lr_decay = 0.5, flip_p = 0.1,
         direct_b = 32.0, direct_lambda = 0.0, tb_snapshot = 0.0;
  std::size_t epochs = 100, batch_size = 128, lr_decay_every = 25,
              train_subset = 0, eval_subset = 0;
  std::uint64_t seed = 1;

  KvConfig kv = file_kv;
  kv_get(kv, "preset", preset);
  kv_get(kv, "data", data);
  kv_get(kv, "eval_data", eval_data);
  kv_get(kv, "flip_mode", flip_mode);
  kv_get(kv, "width_scale", width_scale);
  kv_get(kv, "lr", lr);
  kv_get(kv, "lr_decay", lr_decay);
  kv_get(kv, "flip_p", flip_p);
  kv_get(kv, "direct_b", direct_b);
  kv_get(kv, "direct_lambda", direct_lambda);
  kv_get(kv, "tb_snapshot", tb_snapshot);
  kv_get(kv, "epochs", epochs);
  kv_get(kv, "batch_size", batch_size);
  kv_get(kv, "lr_decay_every", lr_decay_every);
  kv_get(kv, "train_subset", train_subset);
  kv_get(kv, "eval_subset", eval_subset);
  kv_get(kv, "seed", seed);

  app.add_option("--config", config_path, "key=value file or manifest.json");
  app.add_option("--preset", preset);
  app.add_option("--width-scale", width_scale);
  app.add_option("--data", data, "training data spec");
  app.add_option("--eval-data", eval_data, "eval data spec (defaults to test split of --data)");
  app.add_option("--train-subset", train_subset, "use only the first N samples");
  app.add_option("--eval-subset", eval_subset);
  app.add_option("--epochs", epochs);
  app.add_option("--batch-size", batch_size);
  app.add_option("--lr", lr);
  app.add_option("--lr-decay-every", lr_decay_every);
  app.add_option("--lr-decay", lr_decay);
  app.add_option("--flip-mode", flip_mode, "none|native|straight_through");
  app.add_option("--flip-p", flip_p);
  app.add_option("--direct-b", direct_b);
  app.add_option("--direct-lambda", direct_lambda,
                 "enables the tolerance hinge regularizer when > 0");
  app.add_option("--tb-snapshot", tb_snapshot, "log T^b at this level per epoch");
  app.add_option("--seed", seed);
  app.add_option("--out", out)->required();
  app.parse(argc, argv);

  if (data.empty()) throw ConfigError("train: --data is required");
  ensure_out_dir(out);

  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = batch_size;
  cfg.lr = lr;
  cfg.lr_decay_every = lr_decay_every;
  cfg.lr_decay = lr_decay;
  cfg.flip_mode = flip_mode_from_name(flip_mode);
  cfg.flip_p = flip_p;
  cfg.seed = seed;
  if (direct_lambda > 0.0)
    cfg.direct_reg = DirectRegConfig{direct_b, direct_lambda, {}};
  if (tb_snapshot > 0.0) cfg.tb_snapshot_level = tb_snapshot;
  cfg.validate();

  Dataset train_set = load_split(data, "train", train_subset);
  Dataset eval_set = eval_data.empty()
                         ? load_split(data, "test", eval_subset)
                         : load_split(eval_data, "test", eval_subset);

  LayerGraph g = LayerGraph::build_preset(preset, width_scale, seed);
  TrainResult res = train(g, train_set, eval_set, cfg);

  KvConfig resolved;
  resolved["preset"] = preset;
  resolved["width_scale"] = fmt(width_scale);
  resolved["data"] = data;
  resolved["eval_data"] = eval_data;
  resolved["train_subset"] = std::to_string(train_subset);
  resolved["eval_subset"] = std::to_string(eval_subset);
  resolved["epochs"] = std::to_string(epochs);
  resolved["batch_size"] = std::to_string(batch_size);
  resolved["lr"] = fmt(lr);
  resolved["lr_decay_every"] = std::to_string(lr_decay_every);
  resolved["lr_decay"] = fmt(lr_decay);
  resolved["flip_mode"] = flip_mode;
  resolved["flip_p"] = fmt(flip_p);
  resolved["direct_b"] = fmt(direct_b);
  resolved["direct_lambda"] = fmt(direct_lambda);
  resolved["tb_snapshot"] = fmt(tb_snapshot);
  resolved["seed"] = std::to_string(seed);

  std::map<std::string, std::string> sidecar(resolved.begin(), resolved.end());
  sidecar["tool_version"] = kToolVersion;

  save_checkpoint(g, fs::path(out) / "checkpoint_final.bin");
  write_sidecar(fs::path(out) / "checkpoint_final.bin", sidecar);
  save_checkpoint(res.best, fs::path(out) / "checkpoint_best.bin");
  write_sidecar(fs::path(out) / "checkpoint_best.bin", sidecar);
  write_train_log(fs::path(out) / "train_log.csv", res.logs,
                  cfg.tb_snapshot_level.has_value());

  Manifest m;
  m.command = "train";
  m.config = resolved;
  m.out_dir = out;
  m.created_at = timestamp_now();
  write_manifest(fs::path(out) / "manifest.json", m);

  const double final_acc = res.logs.empty() ? 0.0 : res.logs.back().eval_acc;
  std::cout << "trained " << preset << " for " << epochs
            << " epochs; final eval acc " << fmt(100.0 * final_acc)
            << "% best " << fmt(100.0 * res.best_acc) << "%\n";
  return kExitOk;
}

// ----- sweep -----

int cmd_sweep(CLI::App& app, const KvConfig& file_kv, int argc,
              const char* const* argv) {
  std::string checkpoint, data, out, config_path, rates_str = "0:10:0.5";
  std::size_t trials = 5, eval_subset = 0;
  std::uint64_t seed = 1;

  KvConfig kv = file_kv;
  kv_get(kv, "checkpoint", checkpoint);
  kv_get(kv, "data", data);
  kv_get(kv, "rates", rates_str);
  kv_get(kv, "trials", trials);
  kv_get(kv, "eval_subset", eval_subset);
  kv_get(kv, "seed", seed);

  app.add_option("--config", config_path);
  app.add_option("--checkpoint", checkpoint)->required();
  app.add_option("--data", data, "evaluation data spec");
  app.add_option("--rates", rates_str, "percent, lo:hi:step or comma list");
  app.add_option("--trials", trials);
  app.add_option("--eval-subset", eval_subset);
  app.add_option("--seed", seed);
  app.add_option("--out", out)->required();
  app.parse(argc, argv);

  if (data.empty()) throw ConfigError("sweep: --data is required");
  if (trials == 0) throw ConfigError("sweep: trials must be >= 1");
  ensure_out_dir(out);

  const LayerGraph g = load_checkpoint(checkpoint);
  const Dataset eval_set = load_split(data, "test", eval_subset);
  if (eval_set.features() != g.input_features())
    throw ConfigError("sweep: dataset does not match checkpoint input");
  const std::vector<double> rates = parse_rates(rates_str);

  std::vector<double> acc(rates.size() * trials, 0.0);
  parallel_for(acc.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t task = lo; task < hi; ++task) {
      const std::size_t ri = task / trials;
      const std::size_t trial = task % trials;
      const std::uint64_t trial_seed =
          rng::derive_seed(seed, ri * 1000003ull + trial);
      const LayerGraph corrupted =
          inject_persistent(g, rates[ri] / 100.0, trial_seed);
      acc[task] = 100.0 * evaluate_accuracy(
                              corrupted, eval_set.images,
                              {eval_set.labels.data(), eval_set.labels.size()});
    }
  });

  std::ofstream f(fs::path(out) / "sweep.csv");
  if (!f) throw IoError("cannot write sweep.csv");
  f << "rate_pct,trial,accuracy_pct\n";
  for (std::size_t ri = 0; ri < rates.size(); ++ri)
    for (std::size_t t = 0; t < trials; ++t)
      f << fmt(rates[ri]) << "," << t << "," << fmt(acc[ri * trials + t])
        << "\n";
  f.close();

  std::ofstream s(fs::path(out) / "sweep_summary.csv");
  s << "rate_pct,mean_accuracy_pct,half_range_pct\n";
  for (std::size_t ri = 0; ri < rates.size(); ++ri) {
    double mean = 0.0, mn = acc[ri * trials], mx = acc[ri * trials];
    for (std::size_t t = 0; t < trials; ++t) {
      const double a = acc[ri * trials + t];
      mean += a;
      mn = std::min(mn, a);
      mx = std::max(mx, a);
    }
    mean /= double(trials);
    s << fmt(rates[ri]) << "," << fmt(mean) << "," << fmt((mx - mn) / 2.0)
      << "\n";
  }
  s.close();

  KvConfig resolved;
  resolved["checkpoint"] = checkpoint;
  resolved["data"] = data;
  resolved["rates"] = rates_str;
  resolved["trials"] = std::to_string(trials);
  resolved["eval_subset"] = std::to_string(eval_subset);
  resolved["seed"] = std::to_string(seed);
  Manifest m;
  m.command = "sweep";
  m.config = resolved;
  m.out_dir = out;
  m.created_at = timestamp_now();
  write_manifest(fs::path(out) / "manifest.json", m);

  std::cout << "swept " << rates.size() << " rates x " << trials
            << " trials\n";
  return kExitOk;
}

// ----- tolerance -----

int cmd_tolerance(CLI::App& app, const KvConfig& file_kv, int argc,
                  const char* const* argv) {
  std::string checkpoint, data, out, config_path, levels_str = "2,4,8,16,32,64";
  std::size_t eval_subset = 0;

  KvConfig kv = file_kv;
  kv_get(kv, "checkpoint", checkpoint);
  kv_get(kv, "data", data);
  kv_get(kv, "b_levels", levels_str);
  kv_get(kv, "eval_subset", eval_subset);

  app.add_option("--config", config_path);
  app.add_option("--checkpoint", checkpoint)->required();
  app.add_option("--data", data, "evaluation data spec");
  app.add_option("--b-levels", levels_str);
  app.add_option("--eval-subset", eval_subset);
  app.add_option("--out", out)->required();
  app.parse(argc, argv);

  if (data.empty()) throw ConfigError("tolerance: --data is required");
  ensure_out_dir(out);

  const LayerGraph g = load_checkpoint(checkpoint);
  const Dataset eval_set = load_split(data, "test", eval_subset);
  ToleranceConfig cfg;
  cfg.b_levels = parse_level_list(levels_str);

  const ToleranceReport rep =
      network_tolerance(g, eval_set.images, eval_set.count(), cfg);
  write_tolerance_csv(rep, fs::path(out) / "tolerance.csv");
  write_tolerance_json(rep, fs::path(out) / "tolerance.json");

  KvConfig resolved;
  resolved["checkpoint"] = checkpoint;
  resolved["data"] = data;
  resolved["b_levels"] = levels_str;
  resolved["eval_subset"] = std::to_string(eval_subset);
  Manifest m;
  m.command = "tolerance";
  m.config = resolved;
  m.out_dir = out;
  m.created_at = timestamp_now();
  write_manifest(fs::path(out) / "manifest.json", m);

  for (std::size_t i = 0; i < rep.b_levels.size(); ++i)
    std::cout << "T^" << rep.b_levels[i] << " = " << fmt(rep.network_tb[i])
              << "\n";
  return kExitOk;
}

// ----- verify-theorem -----

int cmd_verify(CLI::App& app, const KvConfig& file_kv, int argc,
               const char* const* argv) {
  std::string out, config_path;
  std::size_t count = 10000, max_fanin = 12, budget_slack = 0;
  std::uint64_t seed = 1;

  KvConfig kv = file_kv;
  kv_get(kv, "count", count);
  kv_get(kv, "max_fanin", max_fanin);
  kv_get(kv, "budget_slack", budget_slack);
  kv_get(kv, "seed", seed);

  app.add_option("--config", config_path);
  app.add_option("--count", count);
  app.add_option("--max-fanin", max_fanin);
  app.add_option("--budget-slack", budget_slack,
                 "extra flips beyond floor(b/2), for probing tightness");
  app.add_option("--seed", seed);
  app.add_option("--out", out);
  app.parse(argc, argv);

  if (max_fanin == 0 || max_fanin > 20)
    throw ConfigError("verify-theorem: max_fanin must be in [1,20]");

  rng::Stream rs(rng::derive_seed(seed, 0x7E0EAu), 0);
  std::size_t counterexamples = 0, nonvacuous = 0;
  std::string first_report;
  for (std::size_t i = 0; i < count; ++i) {
    NeuronProbe n;
    const std::size_t fanin = 1 + rs.next_below(max_fanin);
    n.weights.resize(fanin);
    for (auto& w : n.weights) w = rs.next() & 1 ? 1 : -1;
    const std::size_t npos = 1 + rs.next_below(3);
    n.positions.assign(npos, std::vector<int>(fanin));
    for (auto& pos : n.positions)
      for (auto& x : pos) x = rs.next() & 1 ? 1 : -1;
    n.shift = std::int64_t(rs.next_below(9)) - 4;
    const double min_t = n.min_t();
    const double b = rs.next_double() * min_t;
    const std::size_t budget =
        static_cast<std::size_t>(std::floor(b / 2.0)) + budget_slack;
    if (budget > 0) ++nonvacuous;
    const VerifyResult r = verify_theorem1(n, b, budget);
    if (!r.tolerated && ++counterexamples == 1) {
      first_report = "fanin=" + std::to_string(fanin) +
                     " b=" + fmt(b) + " budget=" + std::to_string(budget) +
                     " position=" + std::to_string(r.position) + " flips={";
      for (std::size_t k : r.flip_set)
        first_report += std::to_string(k) + " ";
      first_report += "}";
    }
  }

  std::cout << "verified " << count << " random neurons (" << nonvacuous
            << " with non-zero flip budget): " << counterexamples
            << " counterexamples\n";
  if (!first_report.empty()) std::cout << "first: " << first_report << "\n";

  if (!out.empty()) {
    ensure_out_dir(out);
    std::ofstream f(fs::path(out) / "verify.csv");
    f << "count,max_fanin,budget_slack,seed,counterexamples\n";
    f << count << "," << max_fanin << "," << budget_slack << "," << seed
      << "," << counterexamples << "\n";
    KvConfig resolved;
    resolved["count"] = std::to_string(count);
    resolved["max_fanin"] = std::to_string(max_fanin);
    resolved["budget_slack"] = std::to_string(budget_slack);
    resolved["seed"] = std::to_string(seed);
    Manifest m;
    m.command = "verify-theorem";
    m.config = resolved;
    m.out_dir = out;
    m.created_at = timestamp_now();
    write_manifest(fs::path(out) / "manifest.json", m);
  }
  return counterexamples == 0 ? kExitOk : kExitVerify;
}

int cmd_show_manifest(CLI::App& app, int argc, const char* const* argv) {
  std::string path;
  app.add_option("manifest", path)->required();
  app.parse(argc, argv);
  const Manifest m = read_manifest(path);
  std::cout << "command: " << m.command << "\n"
            << "tool_version: " << m.tool_version << "\n"
            << "created_at: " << m.created_at << "\n"
            << "out_dir: " << m.out_dir << "\n"
            << "config:\n";
  for (const auto& [k, v] : m.config)
    std::cout << "  " << k << "=" << v << "\n";
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv) {
  if (argc < 2) {
    std::cerr << "usage: bnn <train|sweep|tolerance|verify-theorem|"
                 "show-manifest> [options]\n";
    return kExitConfig;
  }
  const std::string cmd = argv[1];
  CLI::App app{"binarized network training and bit-error tolerance tools"};
  const int sub_argc = argc - 1;
  const char* const* sub_argv = argv + 1;

  try {
    const KvConfig file_kv = prescan_config(sub_argc, sub_argv);
    // CLI11 parses (prog, options...) so the subcommand name slots in as
    // the program name.
    if (cmd == "train") return cmd_train(app, file_kv, sub_argc, sub_argv);
    if (cmd == "sweep") return cmd_sweep(app, file_kv, sub_argc, sub_argv);
    if (cmd == "tolerance")
      return cmd_tolerance(app, file_kv, sub_argc, sub_argv);
    if (cmd == "verify-theorem")
      return cmd_verify(app, file_kv, sub_argc, sub_argv);
    if (cmd == "show-manifest") return cmd_show_manifest(app, sub_argc, sub_argv);
    std::cerr << "unknown command '" << cmd << "'\n";
    return kExitConfig;
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
}

}  // namespace bnn::cli

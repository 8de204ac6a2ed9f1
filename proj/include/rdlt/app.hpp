#pragma once

// Subcommand bodies behind the rdlt executable. Each run_* returns a process
// exit status and writes only under its output directory, so repeat-seed
// jobs can run concurrently against distinct directories.
//
// Exit statuses: 0 success, 1 verification or compute failure, 2 usage,
// config, checkpoint or io error.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rdlt/attacks.hpp"
#include "rdlt/checkpoint.hpp"
#include "rdlt/config.hpp"
#include "rdlt/diagnostics.hpp"
#include "rdlt/engine.hpp"
#include "rdlt/format.hpp"
#include "rdlt/metrics.hpp"
#include "rdlt/verify.hpp"

namespace rdlt::app {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Default output root when --out is absent.
inline constexpr const char* kOutRootEnv = "RDLT_OUT_ROOT";
inline constexpr const char* kDefaultOutRoot = "rdlt_runs";

/// Bad flags, missing inputs, mismatched shapes: exit 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::string checkpoint;
  std::string source;  ///< blackbox: checkpoint the examples are crafted on
  std::string out;
  std::string layers;  ///< spectra: comma-separated indices, empty = all
  std::optional<std::uint64_t> seed;
  bool inject_fault = false;  ///< verify: negate ∇R to prove the suite can fail
};

namespace fs = std::filesystem;

/// Shortest round-trip text of a double, used for ε column names.
inline std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline fs::path ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw UsageError("cannot create output directory '" + p.string() + "': " + ec.message());
  return p;
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot open '" + p.string() + "' for writing");
  out << text;
  out.flush();
  if (!out) throw UsageError("write failed for '" + p.string() + "'");
}

inline fs::path output_root() {
  const char* env = std::getenv(kOutRootEnv);
  return fs::path(env && *env ? env : kDefaultOutRoot);
}

/// --out, else <root>/<output_dir or config file stem>.
inline fs::path resolve_out_dir(const Options& o, const ExperimentConfig& cfg) {
  if (!o.out.empty()) return fs::path(o.out);
  const std::string name = !cfg.output_dir.empty() ? cfg.output_dir : fs::path(o.config).stem().string();
  return output_root() / (name.empty() ? "run" : name);
}

/// --out, else the directory holding the checkpoint (plus an optional leaf).
inline fs::path out_dir_near(const Options& o, const std::string& checkpoint, const std::string& leaf = "") {
  if (!o.out.empty()) return fs::path(o.out);
  fs::path base = fs::path(checkpoint).parent_path();
  if (base.empty()) base = ".";
  return leaf.empty() ? base : base / leaf;
}

inline void require(const std::string& value, const char* flag, const char* command) {
  if (value.empty()) throw UsageError(std::string(command) + ": " + flag + " is required");
}

inline std::string seed_dir_name(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

inline void write_spectra_files(const SpectralReport& report, const fs::path& dir) {
  write_text(dir / "spectra.csv", report.to_csv());
  write_text(dir / "spectra.json", report.to_json().dump(2) + "\n");
}

// ---------------------------------------------------------------- train

inline constexpr const char* kHistoryHeader =
    "epoch,layer,rank,sigma_max,sigma_min,kappa,reg_value,kappa_bound,params";

inline std::string history_rows(std::size_t epoch, const SpectralReport& report) {
  std::string out;
  for (const auto& l : report.layers) {
    if (!out.empty()) out += '\n';
    out += std::to_string(epoch) + ',' + std::to_string(l.layer) + ',' + std::to_string(l.rank) + ',' +
           format_double(l.sigma_max()) + ',' + format_double(l.sigma_min()) + ',' + format_double(l.kappa) + ',' +
           format_double(l.reg_value) + ',' + format_double(l.kappa_bound) + ',' + std::to_string(l.params);
  }
  return out;
}

/// One seed: model.rdlt, metrics.csv, spectra.csv/json, spectra_history.csv
/// and the canonical config.json in `dir`. Existing files are replaced.
inline void train_one(const ExperimentConfig& cfg, std::uint64_t seed, const DataSplits& data, const fs::path& dir,
                      std::ostream& log) {
  ensure_dir(dir);
  Rng init(seed);
  Network net = build_network(cfg.layers, data.train, init);
  EngineConfig engine = cfg.engine;
  engine.seed = seed;

  ExperimentConfig run_cfg = cfg;
  run_cfg.seed = seed;
  run_cfg.seeds.clear();
  const std::string config_text = serialize_config(run_cfg);
  write_text(dir / "config.json", config_text);

  for (const char* f : {"metrics.csv", "spectra_history.csv"}) fs::remove(dir / f);
  MetricsWriter metrics((dir / "metrics.csv").string(), EpochMetrics::kCsvHeader);
  MetricsWriter history((dir / "spectra_history.csv").string(), kHistoryHeader);
  history.append_line(history_rows(0, spectral_report(net)));

  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochMetrics& m, const Network& current) {
    metrics.append(m.row());
    history.append_line(history_rows(m.epoch, spectral_report(current)));
  };
  const Dataset* validation = data.validation ? &*data.validation : nullptr;
  TrainResult result;
  if (cfg.adversarial_training) {
    const AttackSpec adv = resolve_attack(*cfg.adversarial_training, data.train);
    result = adversarial_train(std::move(net), data.train, engine, adv, cfg.epochs, validation, hooks);
  } else {
    result = train(std::move(net), data.train, engine, cfg.epochs, validation, hooks);
  }

  save_checkpoint({result.network, config_text, seed}, (dir / "model.rdlt").string());
  const SpectralReport report = spectral_report(result.network);
  write_spectra_files(report, dir);

  log << "seed " << seed << ": ";
  if (!result.metrics.empty()) {
    const auto& m = result.metrics.back();
    log << "epoch " << m.epoch << " loss " << format_double(m.loss) << " val_acc " << format_double(m.val_accuracy)
        << " ";
  }
  log << "max_kappa " << format_double(report.max_kappa()) << " c.r. " << format_double(report.compression_rate)
      << " -> " << dir.string() << '\n';
}

/// --seed N runs that seed alone; otherwise every configured seed in turn.
/// Each seed writes to <out>/seed_<n>/.
inline int run_train(const Options& o, std::ostream& log = std::cout) {
  require(o.config, "--config", "train");
  const ExperimentConfig cfg = load_config(o.config);
  const DataSplits data = build_datasets(cfg.dataset);
  const fs::path out = resolve_out_dir(o, cfg);
  const std::vector<std::uint64_t> seeds = o.seed ? std::vector<std::uint64_t>{*o.seed} : cfg.run_seeds();
  for (std::uint64_t s : seeds) train_one(cfg, s, data, out / seed_dir_name(s), log);
  return kExitOk;
}

// ---------------------------------------------------------------- attack

inline ExperimentConfig config_for(const Options& o, const Checkpoint& ck) {
  if (!o.config.empty()) return load_config(o.config);
  if (ck.config_text.empty()) throw UsageError("checkpoint carries no config; pass --config");
  return parse_config_text(ck.config_text, "checkpoint config");
}

inline void check_shapes(const Network& net, const Dataset& data, const std::string& what) {
  if (net.input_dim() != data.features() || net.output_dim() != data.classes)
    throw UsageError(what + ": model maps " + std::to_string(net.input_dim()) + " -> " +
                     std::to_string(net.output_dim()) + " but the dataset has " + std::to_string(data.features()) +
                     " features and " + std::to_string(data.classes) + " classes");
}

inline std::vector<AttackGrid> attack_grids(const ExperimentConfig& cfg, const Options& o, const Dataset& data) {
  if (cfg.attacks.empty()) throw UsageError("config has no attacks to evaluate");
  std::vector<AttackGrid> grids = cfg.attacks;
  for (auto& g : grids) {
    if (o.seed) g.base.seed = *o.seed;
    g.base = resolve_attack(g.base, data);
  }
  return grids;
}

/// File name per grid, suffixed with the grid index when a kind repeats.
inline std::vector<std::string> grid_file_names(const std::vector<AttackGrid>& grids, const std::string& prefix) {
  std::map<std::string, int> count;
  for (const auto& g : grids) ++count[to_string(g.base.kind)];
  std::vector<std::string> names;
  for (std::size_t i = 0; i < grids.size(); ++i) {
    const std::string kind = to_string(grids[i].base.kind);
    names.push_back(prefix + kind + (count[kind] > 1 ? "_" + std::to_string(i) : "") + ".csv");
  }
  return names;
}

inline std::string grid_header(const AttackGrid& g) {
  std::string h = "method,clean";
  for (double e : g.epsilons) h += "," + shortest(e);
  return h;
}

inline std::string grid_row(const std::string& method, double clean, const std::vector<double>& values) {
  std::string row = method + "," + format_double(clean);
  for (double v : values) row += "," + format_double(v);
  return row;
}

/// White-box accuracy per (attack, ε); one CSV per configured attack with
/// rows = method and columns = clean plus the ε grid.
inline int run_attack(const Options& o, std::ostream& log = std::cout) {
  require(o.checkpoint, "--checkpoint", "attack");
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const ExperimentConfig cfg = config_for(o, ck);
  const DataSplits data = build_datasets(cfg.dataset);
  const Dataset& eval = data.evaluation();
  check_shapes(ck.network, eval, "attack");
  const auto grids = attack_grids(cfg, o, eval);
  const auto names = grid_file_names(grids, "attack_");
  const fs::path out = ensure_dir(out_dir_near(o, o.checkpoint));
  const double clean = accuracy(ck.network, eval.inputs, eval.labels);
  for (std::size_t i = 0; i < grids.size(); ++i) {
    std::vector<double> acc;
    for (double e : grids[i].epsilons) acc.push_back(evaluate_under_attack(ck.network, eval, grids[i].at(e)));
    const std::string text =
        grid_header(grids[i]) + "\n" + grid_row(to_string(grids[i].base.kind), clean, acc) + "\n";
    write_text(out / names[i], text);
    log << text;
  }
  return kExitOk;
}

/// Transfer attack: examples crafted on --source, scored on --checkpoint.
/// Rows: whitebox (crafted on the target itself) and transfer.
inline int run_blackbox(const Options& o, std::ostream& log = std::cout) {
  require(o.checkpoint, "--checkpoint", "blackbox");
  require(o.source, "--source", "blackbox");
  const Checkpoint target = load_checkpoint(o.checkpoint);
  const Checkpoint source = load_checkpoint(o.source);
  const ExperimentConfig cfg = config_for(o, target);
  const DataSplits data = build_datasets(cfg.dataset);
  const Dataset& eval = data.evaluation();
  check_shapes(target.network, eval, "blackbox target");
  check_shapes(source.network, eval, "blackbox source");
  const auto grids = attack_grids(cfg, o, eval);
  const auto names = grid_file_names(grids, "blackbox_");
  const fs::path out = ensure_dir(out_dir_near(o, o.checkpoint));
  const double clean = accuracy(target.network, eval.inputs, eval.labels);
  for (std::size_t i = 0; i < grids.size(); ++i) {
    std::vector<double> white, transfer;
    for (double e : grids[i].epsilons) {
      white.push_back(evaluate_under_attack(target.network, eval, grids[i].at(e)));
      transfer.push_back(blackbox_transfer(source.network, target.network, eval, grids[i].at(e)));
    }
    const std::string text = grid_header(grids[i]) + "\n" + grid_row("whitebox", clean, white) + "\n" +
                             grid_row("transfer", clean, transfer) + "\n";
    write_text(out / names[i], text);
    log << "# " << to_string(grids[i].base.kind) << "\n" << text;
  }
  return kExitOk;
}

// ---------------------------------------------------------------- spectra

/// "0,2" -> {0, 2}; empty -> every layer. Indices must be < n_layers.
inline std::vector<std::size_t> parse_layer_selection(const std::string& text, std::size_t n_layers) {
  std::vector<std::size_t> out;
  const std::string range = n_layers ? "valid range 0.." + std::to_string(n_layers - 1) : "model has no layers";
  if (text.empty()) {
    for (std::size_t i = 0; i < n_layers; ++i) out.push_back(i);
    return out;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t v = 0;
    auto res = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || res.ec != std::errc() || res.ptr != item.data() + item.size())
      throw UsageError("spectra: bad layer index '" + item + "' (" + range + ")");
    if (v >= n_layers) throw UsageError("spectra: layer " + item + " out of range (" + range + ")");
    if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  }
  return out;
}

/// spectra.csv, spectra.json and spectra.svg for the selected layers.
inline int run_spectra(const Options& o, std::ostream& log = std::cout) {
  require(o.checkpoint, "--checkpoint", "spectra");
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const SpectralReport full = spectral_report(ck.network);
  const auto selected = parse_layer_selection(o.layers, full.layers.size());
  SpectralReport report = full;
  report.layers.clear();
  for (std::size_t i : selected) report.layers.push_back(full.layers[i]);
  std::vector<std::size_t> all(report.layers.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

  const fs::path out = ensure_dir(out_dir_near(o, o.checkpoint, "spectra"));
  write_spectra_files(report, out);
  write_text(out / "spectra.svg", spectra_svg(report, all));
  log << report.to_csv();
  return kExitOk;
}

// ---------------------------------------------------------------- verify

inline int run_verify(const Options& o, std::ostream& log = std::cout) {
  VerifyOptions vo;
  vo.flip_reg_gradient_sign = o.inject_fault;
  if (o.seed) vo.seed = *o.seed;
  const auto results = rdlt::run_verify(vo);
  log << format_verify_table(results);
  std::size_t failed = 0;
  for (const auto& r : results) failed += r.passed ? 0 : 1;
  if (failed) {
    log << failed << " of " << results.size() << " checks FAILED:";
    for (const auto& r : results)
      if (!r.passed) log << "\n  " << r.name;
    log << '\n';
    return kExitFailure;
  }
  log << "all " << results.size() << " checks passed\n";
  return kExitOk;
}

// ---------------------------------------------------------------- summarize

/// Final-epoch rows of every seed_*/metrics.csv under `dir`.
inline std::vector<std::vector<double>> final_rows(const fs::path& dir, std::vector<std::string>& columns) {
  if (!fs::is_directory(dir)) throw UsageError("summarize: '" + dir.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && e.path().filename().string().rfind("seed_", 0) == 0 &&
        fs::exists(e.path() / "metrics.csv"))
      files.push_back(e.path() / "metrics.csv");
  std::sort(files.begin(), files.end());
  if (files.empty()) throw UsageError("summarize: no seed_*/metrics.csv under '" + dir.string() + "'");

  std::vector<std::vector<double>> rows;
  for (const auto& f : files) {
    std::ifstream in(f);
    std::string header, line, last;
    std::getline(in, header);
    if (header != EpochMetrics::kCsvHeader) throw UsageError("summarize: unexpected header in " + f.string());
    while (std::getline(in, line))
      if (!line.empty()) last = line;
    if (last.empty()) throw UsageError("summarize: " + f.string() + " has no epochs");
    std::vector<double> row;
    std::stringstream ss(last);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
    rows.push_back(std::move(row));
  }
  columns.clear();
  std::stringstream hs(EpochMetrics::kCsvHeader);
  std::string c;
  while (std::getline(hs, c, ',')) columns.push_back(c);
  return rows;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of nothing");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Medians over seeds of the final-epoch metrics; writes summary.csv.
inline int run_summarize(const Options& o, std::ostream& log = std::cout) {
  require(o.out, "--out", "summarize");
  std::vector<std::string> columns;
  const auto rows = final_rows(o.out, columns);
  std::string text = "metric,median,min,max,seeds\n";
  for (std::size_t c = 1; c < columns.size(); ++c) {
    std::vector<double> v;
    for (const auto& r : rows) v.push_back(r.at(c));
    text += columns[c] + "," + format_double(median(v)) + "," + format_double(*std::min_element(v.begin(), v.end())) +
            "," + format_double(*std::max_element(v.begin(), v.end())) + "," + std::to_string(v.size()) + "\n";
  }
  write_text(fs::path(o.out) / "summary.csv", text);
  log << text;
  return kExitOk;
}

// ---------------------------------------------------------------- dispatch

/// Runs `body`, mapping exceptions to exit statuses and messages on `err`.
template <class F>
int guarded(F&& body, std::ostream& err = std::cerr) {
  try {
    return body();
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << '\n';
  } catch (const IdxError& e) {
    err << "dataset error: " << e.what() << '\n';
  } catch (const MetricsError& e) {
    err << "metrics error: " << e.what() << '\n';
  } catch (const fs::filesystem_error& e) {
    err << "io error: " << e.what() << '\n';
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace rdlt::app

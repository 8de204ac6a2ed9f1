// Acceptance suite: one PASS/FAIL line per criterion.
//
//   rdlt_acceptance [--criterion N] --cli PATH --work DIR
//
// Without --criterion every criterion runs. Exit 0 iff all selected pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "CLI11.hpp"
#include "rdlt/rdlt.hpp"

namespace fs = std::filesystem;
using namespace rdlt;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Context {
  std::string cli;
  fs::path work;
  fs::path configs;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string describe(const CheckResult& r) {
  return std::string(r.passed ? "ok" : "FAILED") + " [" + r.name + ": worst " + fmt(r.worst) + ", tol " +
         fmt(r.tolerance) + (r.detail.empty() ? "" : ", " + r.detail) + "]";
}

Outcome from_checks(const std::vector<CheckResult>& checks) {
  Outcome o{true, ""};
  for (const auto& c : checks) {
    o.passed = o.passed && c.passed;
    o.detail += (o.detail.empty() ? "" : "; ") + describe(c);
  }
  return o;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

int run_cli(const Context& c, const std::string& args, const fs::path& log) {
  const std::string cmd = quote(c.cli) + " " + args + " > " + quote(log.string()) + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

double median(std::vector<double> v) { return app::median(std::move(v)); }

// ------------------------------------------------------------ property criteria

const VerifyOptions kVerify{};

Outcome c1(const Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  auto r = verify::reg_gradient_fd(kVerify, 25, {2, 4, 8, 16}, 1e-6);
  const double t = seconds_since(t0);
  Outcome o = from_checks({r});
  o.passed = o.passed && t < 10.0;
  o.detail += "; runtime " + fmt(t) + " s (limit 10 s)";
  return o;
}

Outcome c2(const Context&) { return from_checks({verify::unitary_invariance(kVerify, 100, 1e-9)}); }

Outcome c3(const Context&) {
  Outcome o = from_checks({verify::kappa_bound_holds(kVerify, 1000, 32)});
  const DenseMatrix s = DenseMatrix::diagonal(std::vector<double>{2.0, 1.0});
  const double bound = kappa_bound(s);
  const double kappa = condition_number(s);
  // the bound is quoted to four decimals
  const bool spot = std::abs(bound - std::exp(1.5)) <= 1e-12 * std::exp(1.5) && std::abs(bound - 4.4817) < 5e-5 &&
                    kappa == 2.0;
  o.passed = o.passed && spot;
  o.detail += "; diag(2,1): bound " + fmt(bound) + " kappa " + fmt(kappa) + (spot ? " ok" : " FAILED");
  return o;
}

Outcome c4(const Context&) {
  return from_checks({verify::variance_identity(kVerify, 1000, 1e-10), verify::nagy_inequality(kVerify, 1000)});
}

Outcome c5(const Context&) { return from_checks({verify::trace_identity(kVerify, 1000, 1e-8)}); }

Outcome c6(const Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto f = verify::stability_sweep(kVerify, 20, {0.0, 0.05, 0.1, 0.5}, 1e-3, 10.0, 1e-3);
  const double t = seconds_since(t0);
  Outcome o = from_checks({f.slack, f.halving, f.order});
  o.passed = o.passed && t < 60.0;
  o.detail += "; runtime " + fmt(t) + " s (limit 60 s)";
  return o;
}

ExperimentConfig spirals_config(const Context& c) { return load_config((c.configs / "spirals.json").string()); }

Outcome c7(const Context& c) {
  const ExperimentConfig cfg = spirals_config(c);
  const DataSplits data = build_datasets(cfg.dataset);
  const std::uint64_t seed = cfg.run_seeds().front();
  Rng init(seed);
  Network net = build_network(cfg.layers, data.train, init);
  std::vector<std::size_t> caps;
  for (const auto& l : net.layers) caps.push_back(cfg.engine.rank_cap(std::min(layer_n_out(l), layer_n_in(l))));
  EngineConfig e = cfg.engine;
  e.seed = seed;
  e.check_invariants = true;
  double worst_aug = 0.0, worst_orth = 0.0;
  std::size_t steps = 0, rank_violations = 0;
  TrainHooks hooks;
  hooks.on_step = [&](std::size_t, std::size_t, const StepReport& rep) {
    ++steps;
    for (std::size_t l = 0; l < rep.layers.size(); ++l) {
      const auto& s = rep.layers[l];
      worst_aug = std::max(worst_aug, s.augmentation_defect);
      worst_orth = std::max(worst_orth, s.orthonormality_defect);
      const std::size_t hi = std::min(caps[l], 2 * s.rank_before);
      const std::size_t lo = std::min(e.rank_min, hi);
      if (s.rank_after < lo || s.rank_after > hi) ++rank_violations;
    }
  };
  train(net, data.train, e, cfg.epochs, nullptr, hooks);
  Outcome o;
  o.passed = worst_aug <= 1e-10 && worst_orth <= 1e-8 && rank_violations == 0 && steps > 0 && cfg.epochs == 50;
  o.detail = std::to_string(cfg.epochs) + " epochs, " + std::to_string(steps) + " iterations: augmentation " +
             fmt(worst_aug) + " (tol 1e-10), orthonormality " + fmt(worst_orth) + " (tol 1e-8), rank violations " +
             std::to_string(rank_violations);
  return o;
}

Outcome c8(const Context&) { return from_checks({verify::conv_equivalence(kVerify, 100, 1e-8)}); }

Outcome c9(const Context&) { return from_checks({verify::network_gradients(kVerify, 5, 1e-5)}); }

// ------------------------------------------------------------ trend criteria

struct TwinRuns {
  std::vector<double> kappa[2], accuracy[2], fgsm[2];
  double seconds = 0.0;
  std::size_t seeds = 0;
};

/// Index 0: β = 0 twin, index 1: configured β (0.075).
const TwinRuns& twin_runs(const Context& c) {
  static std::optional<TwinRuns> cache;
  if (cache) return *cache;
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig cfg = spirals_config(c);
  const DataSplits data = build_datasets(cfg.dataset);
  const Dataset& eval = data.evaluation();
  AttackSpec fgsm;
  fgsm.kind = AttackKind::fgsm_l2;
  fgsm.epsilon = 0.1;
  TwinRuns runs;
  for (int arm = 0; arm < 2; ++arm)
    for (std::uint64_t seed : cfg.run_seeds()) {
      Rng init(seed);
      Network net = build_network(cfg.layers, data.train, init);
      EngineConfig e = cfg.engine;
      e.seed = seed;
      if (arm == 0) e.reg_strength = 0.0;
      const TrainResult res = train(std::move(net), data.train, e, cfg.epochs, &eval);
      runs.kappa[arm].push_back(spectral_report(res.network).max_kappa());
      runs.accuracy[arm].push_back(accuracy(res.network, eval.inputs, eval.labels));
      runs.fgsm[arm].push_back(evaluate_under_attack(res.network, eval, fgsm));
    }
  runs.seconds = seconds_since(t0);
  runs.seeds = cfg.run_seeds().size();
  cache = runs;
  return *cache;
}

std::string list(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + fmt(x);
  return "[" + s + "]";
}

Outcome c10(const Context& c) {
  const ExperimentConfig cfg = spirals_config(c);
  const TwinRuns& r = twin_runs(c);
  const double k0 = median(r.kappa[0]), k1 = median(r.kappa[1]);
  const double a0 = median(r.accuracy[0]), a1 = median(r.accuracy[1]);
  const bool setting = cfg.engine.reg_strength == 0.075 && cfg.epochs == 50 && r.seeds == 5 &&
                       cfg.dataset.per_class == 100 && cfg.dataset.classes == 3;
  Outcome o;
  o.passed = setting && k1 < k0 && std::abs(a1 - a0) <= 2.0 && r.seconds < 300.0;
  o.detail = "median max kappa beta=0.075 " + fmt(k1) + " vs beta=0 " + fmt(k0) + " (needs <); median accuracy " +
             fmt(a1) + " vs " + fmt(a0) + " (|diff| <= 2 pp); kappa " + list(r.kappa[1]) + " vs " + list(r.kappa[0]) +
             "; runtime " + fmt(r.seconds) + " s (limit 300 s)";
  return o;
}

Outcome c11(const Context& c) {
  const TwinRuns& r = twin_runs(c);
  const double f0 = median(r.fgsm[0]), f1 = median(r.fgsm[1]);
  Outcome o;
  o.passed = r.seeds == 5 && f1 >= f0;
  o.detail = "median FGSM eps=0.1 accuracy beta=0.075 " + fmt(f1) + " vs beta=0 " + fmt(f0) + " (needs >=); per seed " +
             list(r.fgsm[1]) + " vs " + list(r.fgsm[0]);
  return o;
}

// ------------------------------------------------------------ contracts

Outcome c12(const Context&) {
  Outcome o = from_checks({verify::attack_clamp(kVerify, 1000, 1e-12)});
  const DenseMatrix x(2, 1);
  DenseMatrix g(2, 1);
  g(0, 0) = 1.0;
  g(1, 0) = -2.0;
  AttackSpec l2;
  l2.kind = AttackKind::fgsm_l2;
  l2.epsilon = 0.1;
  l2.alpha = 0.1;
  const DenseMatrix a = fgsm_step(x, x, g, l2);
  const bool l2_ok = a(0, 0) == 0.05 && a(1, 0) == -0.1;
  AttackSpec l1 = l2;
  l1.kind = AttackKind::fgsm_l1;
  l1.data_std = {2.0, 4.0};
  const DenseMatrix b = fgsm_step(x, x, g, l1);
  const bool l1_ok = b(0, 0) == 0.05 && b(1, 0) == -0.025;
  DenseMatrix far(2, 1);
  far(0, 0) = 0.3;
  far(1, 0) = -0.3;
  const DenseMatrix cl = clamp_linf(x, far, 0.1);
  const bool clamp_ok = cl(0, 0) == 0.1 && cl(1, 0) == -0.1;
  o.passed = o.passed && l2_ok && l1_ok && clamp_ok;
  o.detail += "; l2 hand example (" + fmt(a(0, 0)) + "," + fmt(a(1, 0)) + ")" + (l2_ok ? " ok" : " FAILED") +
              "; l1 hand example (" + fmt(b(0, 0)) + "," + fmt(b(1, 0)) + ")" + (l1_ok ? " ok" : " FAILED") +
              "; clamp example" + (clamp_ok ? " ok" : " FAILED");
  return o;
}

fs::path fresh_dir(const fs::path& p) {
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::string> csv_last_row(const fs::path& p) {
  std::ifstream in(p);
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  std::vector<std::string> cells;
  std::stringstream ss(last);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  return cells;
}

Outcome c13(const Context& c) {
  Outcome o;
  const double cr = compression_rate(2 * 100 * 5 + 5 * 5, 100 * 100);
  const bool arithmetic = std::abs(cr - 89.75) <= 1e-12 * 89.75;

  const fs::path dir = fresh_dir(c.work / "c13");
  const int status = run_cli(c, "train --config " + quote((c.configs / "smoke.json").string()) + " --out " +
                                    quote(dir.string()) + " --seed 1",
                             dir / "train.log");
  bool counts = false;
  std::string detail;
  if (status == 0) {
    const Checkpoint ck = load_checkpoint((dir / "seed_1" / "model.rdlt").string());
    // count straight from the stored factor shapes
    std::size_t stored = 0, dense = 0;
    for (const auto& l : ck.network.layers) {
      if (const auto* lin = std::get_if<FactorizedLinear>(&l)) {
        stored += lin->U.size() + lin->S.size() + lin->V.size() + lin->bias.size();
        dense += lin->U.rows() * lin->V.rows() + lin->bias.size();
      } else {
        const auto& cv = std::get<LowRankConv2D>(l);
        stored += cv.U_out.size() + cv.U_in.size() + cv.core.size() + cv.bias.size();
        dense += cv.U_out.rows() * cv.U_in.rows() * cv.core.dims()[2] * cv.core.dims()[3] + cv.bias.size();
      }
    }
    const double from_ck = compression_rate(stored, dense);
    const auto last = csv_last_row(dir / "seed_1" / "metrics.csv");
    const double reported = std::strtod(last.back().c_str(), nullptr);
    std::size_t csv_params = 0;
    {
      std::ifstream in(dir / "seed_1" / "spectra.csv");
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line))
        if (!line.empty()) csv_params += std::stoull(line.substr(line.rfind(',') + 1));
    }
    const std::size_t bias_total = [&] {
      std::size_t b = 0;
      for (const auto& l : ck.network.layers) std::visit([&](const auto& x) { b += x.bias.size(); }, l);
      return b;
    }();
    counts = stored == parameter_count(ck.network) && dense == baseline_parameter_count(ck.network) &&
             from_ck == compression_rate(ck.network) && from_ck == reported && csv_params == stored;
    detail = "; checkpoint params " + std::to_string(stored) + " (bias " + std::to_string(bias_total) +
             "), dense " + std::to_string(dense) + ", c.r. " + fmt(from_ck) + " vs metrics " + fmt(reported) +
             ", spectra.csv params " + std::to_string(csv_params);
  } else {
    detail = "; train exited " + std::to_string(status);
  }
  o.passed = arithmetic && counts;
  o.detail = "c.r.(1025/10000) = " + fmt(cr) + (arithmetic ? " ok" : " FAILED") + detail;
  return o;
}

Outcome c14(const Context& c) {
  Outcome o{true, ""};
  const std::string cfg = quote((c.configs / "smoke.json").string());
  std::vector<std::string> runs;
  for (int k = 0; k < 2; ++k) runs.push_back((fresh_dir(c.work / ("c14_run" + std::to_string(k)))).string());
  std::vector<std::string> failures;
  for (const auto& r : runs) {
    const fs::path d(r);
    const std::string ck = quote((d / "seed_3" / "model.rdlt").string());
    if (run_cli(c, "train --config " + cfg + " --out " + quote(r) + " --seed 3", d / "train.log") != 0)
      failures.push_back("train in " + r);
    if (run_cli(c, "attack --checkpoint " + ck + " --out " + quote((d / "attack").string()) + " --seed 5",
                d / "attack.log") != 0)
      failures.push_back("attack in " + r);
    if (run_cli(c, "spectra --checkpoint " + ck + " --out " + quote((d / "spectra").string()), d / "spectra.log") != 0)
      failures.push_back("spectra in " + r);
  }
  const std::vector<std::string> files = {"seed_3/metrics.csv",        "seed_3/spectra.csv",
                                          "seed_3/spectra_history.csv", "seed_3/spectra.json",
                                          "seed_3/model.rdlt",          "attack/attack_fgsm_l2.csv",
                                          "spectra/spectra.csv",        "spectra/spectra.json",
                                          "spectra/spectra.svg"};
  std::size_t identical = 0;
  for (const auto& f : files) {
    const fs::path a = fs::path(runs[0]) / f, b = fs::path(runs[1]) / f;
    if (!fs::exists(a) || !fs::exists(b)) {
      failures.push_back("missing " + f);
      continue;
    }
    if (read_bytes(a) == read_bytes(b)) ++identical;
    else failures.push_back("differs " + f);
  }
  o.passed = failures.empty();
  o.detail = std::to_string(identical) + "/" + std::to_string(files.size()) + " artifacts byte-identical";
  for (const auto& f : failures) o.detail += "; " + f;
  return o;
}

const std::map<int, std::pair<std::string, std::function<Outcome(const Context&)>>>& criteria() {
  static const std::map<int, std::pair<std::string, std::function<Outcome(const Context&)>>> table = {
      {1, {"regularizer gradient matches finite differences", c1}},
      {2, {"regularizer unitary invariance", c2}},
      {3, {"condition-number bound", c3}},
      {4, {"variance identity and Nagy inequality", c4}},
      {5, {"trace identity", c5}},
      {6, {"stability estimate of the regularized flow", c6}},
      {7, {"low-rank step invariants over a 50-epoch run", c7}},
      {8, {"factored convolution equals dense convolution", c8}},
      {9, {"network gradients match finite differences", c9}},
      {10, {"regularization lowers kappa at equal accuracy", c10}},
      {11, {"regularization does not hurt FGSM robustness", c11}},
      {12, {"attack contracts", c12}},
      {13, {"compression bookkeeping", c13}},
      {14, {"determinism of train, attack and spectra", c14}},
  };
  return table;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"acceptance criteria"};
  int only = 0;
  Context ctx;
  std::string work = "acceptance_work";
  ctx.configs = fs::path(RDLT_SOURCE_DIR) / "configs";
  cli.add_option("--criterion", only, "run a single criterion (1-14)")->check(CLI::Range(1, 14));
  cli.add_option("--cli", ctx.cli, "path of the rdlt executable")->required();
  cli.add_option("--work", work, "scratch directory");
  CLI11_PARSE(cli, argc, argv);
  ctx.work = fs::absolute(work);
  fs::create_directories(ctx.work);

  bool all = true;
  for (const auto& [n, entry] : criteria()) {
    if (only && n != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = entry.second(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    char t[32];
    std::snprintf(t, sizeof t, "%.2fs", seconds_since(t0));
    std::cout << "criterion " << n << ": " << (o.passed ? "PASS" : "FAIL") << "  " << entry.first << "  (" << t
              << ")  " << o.detail << std::endl;
    all = all && o.passed;
  }
  return all ? 0 : 1;
}

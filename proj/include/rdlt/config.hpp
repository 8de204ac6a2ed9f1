#pragma once

// Experiment configuration: a JSON tree with strict key checking.
//
//   {
//     "seed": 1, "seeds": [1,2,3], "epochs": 50, "output_dir": "spirals",
//     "dataset": {"kind": "spirals", "classes": 3, "per_class": 100, "noise": 0.1, "seed": 7,
//                 "validation_seed": 8, "normalize": false},
//     "model": {"layers": [{"kind": "linear", "out": 64, "rank": 16, "activation": "relu"}, ...]},
//     "engine": {"learning_rate": 0.05, "reg_strength": 0.075, ...},
//     "attacks": [{"kind": "fgsm_l2", "epsilons": [0.05, 0.1, 0.3]}],
//     "adversarial_training": {"kind": "fgsm_l2", "epsilon": 0.1}
//   }
//
// parse_config rejects unknown keys anywhere in the tree; to_json emits every
// field (defaults included) so serialize(parse(text)) is a canonical form.

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "rdlt/attacks.hpp"
#include "rdlt/data.hpp"
#include "rdlt/engine.hpp"
#include "rdlt/layers.hpp"
#include "rdlt/random.hpp"

namespace rdlt {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Json = nlohmann::ordered_json;

struct LayerSpec {
  enum class Kind { linear, conv } kind = Kind::linear;
  std::optional<std::size_t> out;  ///< linear width; last layer defaults to the class count
  std::size_t rank = 8;            ///< initial rank (linear), clamped to min(out, in)
  std::size_t out_channels = 1;    ///< conv
  std::size_t window_w = 3, window_h = 3;
  std::size_t rank_out = 1, rank_in = 1;
  std::optional<Activation> activation;  ///< default relu, softmax on the last layer
};

struct DatasetSpec {
  enum class Kind { spirals, idx } kind = Kind::spirals;
  std::size_t classes = 3;
  std::size_t per_class = 100;
  double noise = 0.1;
  std::uint64_t seed = 7;
  std::optional<std::uint64_t> validation_seed;
  std::string train_images, train_labels, val_images, val_labels;
  std::optional<std::size_t> limit;  ///< keep the first N samples of each split
  bool normalize = false;
};

/// One attack family evaluated over an ε grid.
struct AttackGrid {
  AttackSpec base;
  std::vector<double> epsilons;

  AttackSpec at(double eps) const {
    AttackSpec s = base;
    s.epsilon = eps;
    return s;
  }
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::vector<std::uint64_t> seeds;  ///< repeat runs; empty means {seed}
  std::size_t epochs = 50;
  std::string output_dir;
  DatasetSpec dataset;
  std::vector<LayerSpec> layers;
  EngineConfig engine;
  std::vector<AttackGrid> attacks;
  std::optional<AttackSpec> adversarial_training;

  std::vector<std::uint64_t> run_seeds() const { return seeds.empty() ? std::vector<std::uint64_t>{seed} : seeds; }
};

namespace detail {

inline void check_keys(const Json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key())) {
      std::string list;
      for (const auto& k : ok) list += (list.empty() ? "" : ", ") + k;
      throw ConfigError(path + ": unknown key '" + it.key() + "' (allowed: " + list + ")");
    }
}

inline std::size_t get_count(const Json& j, const char* key, const std::string& path, std::size_t dflt) {
  if (!j.contains(key)) return dflt;
  const Json& v = j.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
    throw ConfigError(path + "." + key + ": expected a non-negative integer");
  return v.get<std::size_t>();
}

inline std::uint64_t get_u64(const Json& v, const std::string& path) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
    throw ConfigError(path + ": expected a non-negative integer");
  return v.get<std::uint64_t>();
}

inline double get_real(const Json& j, const char* key, const std::string& path, double dflt) {
  if (!j.contains(key)) return dflt;
  const Json& v = j.at(key);
  if (!v.is_number()) throw ConfigError(path + "." + key + ": expected a number");
  return v.get<double>();
}

inline bool get_bool(const Json& j, const char* key, const std::string& path, bool dflt) {
  if (!j.contains(key)) return dflt;
  if (!j.at(key).is_boolean()) throw ConfigError(path + "." + key + ": expected true or false");
  return j.at(key).get<bool>();
}

inline std::string get_string(const Json& j, const char* key, const std::string& path, const std::string& dflt) {
  if (!j.contains(key)) return dflt;
  if (!j.at(key).is_string()) throw ConfigError(path + "." + key + ": expected a string");
  return j.at(key).get<std::string>();
}

inline std::vector<double> get_reals(const Json& j, const char* key, const std::string& path) {
  std::vector<double> out;
  if (!j.contains(key)) return out;
  if (!j.at(key).is_array()) throw ConfigError(path + "." + key + ": expected an array of numbers");
  for (const auto& v : j.at(key)) {
    if (!v.is_number()) throw ConfigError(path + "." + key + ": expected an array of numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

inline Activation parse_activation(const std::string& s, const std::string& path) {
  try {
    return activation_from_string(s);
  } catch (const std::invalid_argument&) {
    throw ConfigError(path + ": unknown activation '" + s + "' (allowed: identity, relu, tanh, softmax)");
  }
}

inline AttackSpec parse_attack_fields(const Json& j, const std::string& path) {
  AttackSpec s;
  const std::string kind = get_string(j, "kind", path, "");
  if (kind.empty()) throw ConfigError(path + ".kind: required");
  try {
    s.kind = attack_kind_from_string(kind);
  } catch (const std::invalid_argument&) {
    throw ConfigError(path + ".kind: unknown attack '" + kind + "' (allowed: fgsm_l2, fgsm_l1, jitter, mixup)");
  }
  s.epsilon = get_real(j, "epsilon", path, 0.0);
  if (j.contains("alpha")) s.alpha = get_real(j, "alpha", path, 0.0);
  if (j.contains("iterations")) s.iterations = get_count(j, "iterations", path, 1);
  s.jitter_scale = get_real(j, "jitter_scale", path, s.jitter_scale);
  s.jitter_noise = get_real(j, "jitter_noise", path, s.jitter_noise);
  s.mixup_beta = get_real(j, "mixup_beta", path, s.mixup_beta);
  s.mixup_kl = get_bool(j, "mixup_kl", path, s.mixup_kl);
  if (j.contains("mixup_lambda")) s.mixup_fixed_lambda = get_real(j, "mixup_lambda", path, 1.0);
  s.data_std = get_reals(j, "data_std", path);
  if (j.contains("seed")) s.seed = get_u64(j.at("seed"), path + ".seed");
  return s;
}

inline void attack_fields_to_json(const AttackSpec& s, Json& j) {
  j["kind"] = to_string(s.kind);
  if (s.alpha) j["alpha"] = *s.alpha;
  else j["alpha"] = nullptr;
  j["iterations"] = s.iteration_count();
  j["jitter_scale"] = s.jitter_scale;
  j["jitter_noise"] = s.jitter_noise;
  j["mixup_beta"] = s.mixup_beta;
  j["mixup_kl"] = s.mixup_kl;
  if (s.mixup_fixed_lambda) j["mixup_lambda"] = *s.mixup_fixed_lambda;
  j["data_std"] = s.data_std;
  j["seed"] = s.seed;
}

// null alpha in canonical output means "use the default step".
inline Json strip_nulls(Json j) {
  if (j.contains("alpha") && j.at("alpha").is_null()) j.erase("alpha");
  return j;
}

}  // namespace detail

inline ExperimentConfig parse_config(const Json& root) {
  using namespace detail;
  check_keys(root, "config",
             {"seed", "seeds", "epochs", "output_dir", "dataset", "model", "engine", "attacks", "adversarial_training"});
  ExperimentConfig c;
  if (root.contains("seed")) c.seed = get_u64(root.at("seed"), "config.seed");
  if (root.contains("seeds")) {
    if (!root.at("seeds").is_array()) throw ConfigError("config.seeds: expected an array of integers");
    for (const auto& v : root.at("seeds")) c.seeds.push_back(get_u64(v, "config.seeds[]"));
  }
  c.epochs = get_count(root, "epochs", "config", c.epochs);
  c.output_dir = get_string(root, "output_dir", "config", "");

  if (root.contains("dataset")) {
    const Json& d = root.at("dataset");
    const std::string p = "config.dataset";
    check_keys(d, p,
               {"kind", "classes", "per_class", "noise", "seed", "validation_seed", "train_images", "train_labels",
                "val_images", "val_labels", "limit", "normalize"});
    const std::string kind = get_string(d, "kind", p, "spirals");
    if (kind == "spirals") c.dataset.kind = DatasetSpec::Kind::spirals;
    else if (kind == "idx") c.dataset.kind = DatasetSpec::Kind::idx;
    else throw ConfigError(p + ".kind: unknown dataset '" + kind + "' (allowed: spirals, idx)");
    c.dataset.classes = get_count(d, "classes", p, c.dataset.classes);
    c.dataset.per_class = get_count(d, "per_class", p, c.dataset.per_class);
    c.dataset.noise = get_real(d, "noise", p, c.dataset.noise);
    if (d.contains("seed")) c.dataset.seed = get_u64(d.at("seed"), p + ".seed");
    if (d.contains("validation_seed") && !d.at("validation_seed").is_null())
      c.dataset.validation_seed = get_u64(d.at("validation_seed"), p + ".validation_seed");
    c.dataset.train_images = get_string(d, "train_images", p, "");
    c.dataset.train_labels = get_string(d, "train_labels", p, "");
    c.dataset.val_images = get_string(d, "val_images", p, "");
    c.dataset.val_labels = get_string(d, "val_labels", p, "");
    if (d.contains("limit") && !d.at("limit").is_null()) c.dataset.limit = get_count(d, "limit", p, 0);
    c.dataset.normalize = get_bool(d, "normalize", p, false);
    if (c.dataset.kind == DatasetSpec::Kind::spirals && c.dataset.classes < 2)
      throw ConfigError(p + ".classes: spirals need at least 2 classes");
    if (c.dataset.kind == DatasetSpec::Kind::spirals && c.dataset.per_class == 0)
      throw ConfigError(p + ".per_class: must be positive");
    if (c.dataset.kind == DatasetSpec::Kind::idx && (c.dataset.train_images.empty() || c.dataset.train_labels.empty()))
      throw ConfigError(p + ": idx datasets need train_images and train_labels");
  }

  if (!root.contains("model")) throw ConfigError("config.model: required");
  {
    const Json& m = root.at("model");
    check_keys(m, "config.model", {"layers"});
    if (!m.contains("layers") || !m.at("layers").is_array() || m.at("layers").empty())
      throw ConfigError("config.model.layers: expected a non-empty array");
    std::size_t i = 0;
    for (const auto& lj : m.at("layers")) {
      const std::string p = "config.model.layers[" + std::to_string(i++) + "]";
      check_keys(lj, p, {"kind", "out", "rank", "out_channels", "window", "rank_out", "rank_in", "activation"});
      LayerSpec ls;
      const std::string kind = get_string(lj, "kind", p, "linear");
      if (kind == "linear") {
        ls.kind = LayerSpec::Kind::linear;
        for (const char* k : {"out_channels", "window", "rank_out", "rank_in"})
          if (lj.contains(k)) throw ConfigError(p + "." + k + ": not valid for a linear layer");
        if (lj.contains("out") && !lj.at("out").is_null()) ls.out = get_count(lj, "out", p, 0);
        ls.rank = get_count(lj, "rank", p, ls.rank);
        if (ls.out && *ls.out == 0) throw ConfigError(p + ".out: must be positive");
        if (ls.rank == 0) throw ConfigError(p + ".rank: must be positive");
      } else if (kind == "conv") {
        ls.kind = LayerSpec::Kind::conv;
        for (const char* k : {"out", "rank"})
          if (lj.contains(k)) throw ConfigError(p + "." + k + ": not valid for a conv layer");
        ls.out_channels = get_count(lj, "out_channels", p, ls.out_channels);
        if (lj.contains("window")) {
          const Json& w = lj.at("window");
          if (!w.is_array() || w.size() != 2 || !w[0].is_number_integer() || !w[1].is_number_integer() ||
              w[0].get<std::int64_t>() < 1 || w[1].get<std::int64_t>() < 1)
            throw ConfigError(p + ".window: expected [S_W, S_H] with positive integers");
          ls.window_w = w[0].get<std::size_t>();
          ls.window_h = w[1].get<std::size_t>();
        }
        ls.rank_out = get_count(lj, "rank_out", p, ls.rank_out);
        ls.rank_in = get_count(lj, "rank_in", p, ls.rank_in);
        if (ls.out_channels == 0 || ls.rank_out == 0 || ls.rank_in == 0)
          throw ConfigError(p + ": out_channels, rank_out and rank_in must be positive");
      } else {
        throw ConfigError(p + ".kind: unknown layer kind '" + kind + "' (allowed: linear, conv)");
      }
      if (lj.contains("activation")) ls.activation = parse_activation(get_string(lj, "activation", p, ""), p + ".activation");
      c.layers.push_back(ls);
    }
  }

  if (root.contains("engine")) {
    const Json& e = root.at("engine");
    const std::string p = "config.engine";
    check_keys(e, p,
               {"learning_rate", "reg_strength", "local_steps", "trunc_tol", "rank_min", "rank_max", "optimizer",
                "batch_size", "fresh_batches", "check_invariants"});
    c.engine.learning_rate = get_real(e, "learning_rate", p, c.engine.learning_rate);
    c.engine.reg_strength = get_real(e, "reg_strength", p, c.engine.reg_strength);
    c.engine.local_steps = get_count(e, "local_steps", p, c.engine.local_steps);
    c.engine.trunc_tol = get_real(e, "trunc_tol", p, c.engine.trunc_tol);
    c.engine.rank_min = get_count(e, "rank_min", p, c.engine.rank_min);
    if (e.contains("rank_max") && !e.at("rank_max").is_null()) c.engine.rank_max = get_count(e, "rank_max", p, 0);
    c.engine.batch_size = get_count(e, "batch_size", p, c.engine.batch_size);
    c.engine.fresh_batches = get_bool(e, "fresh_batches", p, c.engine.fresh_batches);
    c.engine.check_invariants = get_bool(e, "check_invariants", p, c.engine.check_invariants);
    if (e.contains("optimizer")) {
      const Json& o = e.at("optimizer");
      const std::string op = p + ".optimizer";
      check_keys(o, op, {"kind", "beta1", "beta2", "eps"});
      const std::string kind = get_string(o, "kind", op, "sgd");
      if (kind == "sgd") c.engine.optimizer.kind = OptimizerKind::sgd;
      else if (kind == "adam") c.engine.optimizer.kind = OptimizerKind::adam;
      else throw ConfigError(op + ".kind: unknown optimizer '" + kind + "' (allowed: sgd, adam)");
      c.engine.optimizer.beta1 = get_real(o, "beta1", op, c.engine.optimizer.beta1);
      c.engine.optimizer.beta2 = get_real(o, "beta2", op, c.engine.optimizer.beta2);
      c.engine.optimizer.eps = get_real(o, "eps", op, c.engine.optimizer.eps);
    }
    if (!(c.engine.learning_rate > 0.0)) throw ConfigError(p + ".learning_rate: must be positive");
    try {
      c.engine.validate();
    } catch (const std::invalid_argument& ex) {
      throw ConfigError(std::string("config.") + ex.what());
    }
  }

  if (root.contains("attacks")) {
    if (!root.at("attacks").is_array()) throw ConfigError("config.attacks: expected an array");
    std::size_t i = 0;
    for (const auto& aj : root.at("attacks")) {
      const std::string p = "config.attacks[" + std::to_string(i++) + "]";
      check_keys(aj, p,
                 {"kind", "epsilons", "alpha", "iterations", "jitter_scale", "jitter_noise", "mixup_beta", "mixup_kl",
                  "mixup_lambda", "data_std", "seed"});
      AttackGrid g;
      g.base = parse_attack_fields(aj, p);
      g.epsilons = get_reals(aj, "epsilons", p);
      if (g.epsilons.empty()) throw ConfigError(p + ".epsilons: expected a non-empty array");
      for (double eps : g.epsilons)
        if (!(eps >= 0.0)) throw ConfigError(p + ".epsilons: entries must be non-negative");
      c.attacks.push_back(std::move(g));
    }
  }

  if (root.contains("adversarial_training") && !root.at("adversarial_training").is_null()) {
    const Json& aj = root.at("adversarial_training");
    const std::string p = "config.adversarial_training";
    check_keys(aj, p,
               {"kind", "epsilon", "alpha", "iterations", "jitter_scale", "jitter_noise", "mixup_beta", "mixup_kl",
                "mixup_lambda", "data_std", "seed"});
    c.adversarial_training = parse_attack_fields(aj, p);
    if (!(c.adversarial_training->epsilon >= 0.0)) throw ConfigError(p + ".epsilon: must be non-negative");
  }
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text, const std::string& origin = "config") {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(origin + ": invalid JSON: " + e.what());
  }
  return parse_config(j);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

/// Canonical form: every field, fixed key order.
inline Json to_json(const ExperimentConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["seeds"] = c.seeds;
  j["epochs"] = c.epochs;
  j["output_dir"] = c.output_dir;
  Json d;
  d["kind"] = c.dataset.kind == DatasetSpec::Kind::spirals ? "spirals" : "idx";
  d["classes"] = c.dataset.classes;
  d["per_class"] = c.dataset.per_class;
  d["noise"] = c.dataset.noise;
  d["seed"] = c.dataset.seed;
  d["validation_seed"] = c.dataset.validation_seed ? Json(*c.dataset.validation_seed) : Json(nullptr);
  d["train_images"] = c.dataset.train_images;
  d["train_labels"] = c.dataset.train_labels;
  d["val_images"] = c.dataset.val_images;
  d["val_labels"] = c.dataset.val_labels;
  d["limit"] = c.dataset.limit ? Json(*c.dataset.limit) : Json(nullptr);
  d["normalize"] = c.dataset.normalize;
  j["dataset"] = d;
  Json layers = Json::array();
  for (const auto& l : c.layers) {
    Json lj;
    if (l.kind == LayerSpec::Kind::linear) {
      lj["kind"] = "linear";
      lj["out"] = l.out ? Json(*l.out) : Json(nullptr);
      lj["rank"] = l.rank;
    } else {
      lj["kind"] = "conv";
      lj["out_channels"] = l.out_channels;
      lj["window"] = {l.window_w, l.window_h};
      lj["rank_out"] = l.rank_out;
      lj["rank_in"] = l.rank_in;
    }
    if (l.activation) lj["activation"] = to_string(*l.activation);
    layers.push_back(lj);
  }
  j["model"]["layers"] = layers;
  Json e;
  e["learning_rate"] = c.engine.learning_rate;
  e["reg_strength"] = c.engine.reg_strength;
  e["local_steps"] = c.engine.local_steps;
  e["trunc_tol"] = c.engine.trunc_tol;
  e["rank_min"] = c.engine.rank_min;
  e["rank_max"] = c.engine.rank_max ? Json(*c.engine.rank_max) : Json(nullptr);
  e["optimizer"]["kind"] = c.engine.optimizer.kind == OptimizerKind::sgd ? "sgd" : "adam";
  e["optimizer"]["beta1"] = c.engine.optimizer.beta1;
  e["optimizer"]["beta2"] = c.engine.optimizer.beta2;
  e["optimizer"]["eps"] = c.engine.optimizer.eps;
  e["batch_size"] = c.engine.batch_size;
  e["fresh_batches"] = c.engine.fresh_batches;
  e["check_invariants"] = c.engine.check_invariants;
  j["engine"] = e;
  Json attacks = Json::array();
  for (const auto& g : c.attacks) {
    Json aj;
    detail::attack_fields_to_json(g.base, aj);
    aj["epsilons"] = g.epsilons;
    attacks.push_back(detail::strip_nulls(aj));
  }
  j["attacks"] = attacks;
  if (c.adversarial_training) {
    Json aj;
    detail::attack_fields_to_json(*c.adversarial_training, aj);
    aj["epsilon"] = c.adversarial_training->epsilon;
    j["adversarial_training"] = detail::strip_nulls(aj);
  } else {
    j["adversarial_training"] = nullptr;
  }
  return j;
}

inline std::string serialize_config(const ExperimentConfig& c) { return to_json(c).dump(2) + "\n"; }

struct DataSplits {
  Dataset train;
  std::optional<Dataset> validation;

  /// Validation if present, else train.
  const Dataset& evaluation() const { return validation ? *validation : train; }
};

namespace detail {

inline Dataset take_first(const Dataset& d, std::size_t n) {
  if (n >= d.size()) return d;
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Dataset out = d;
  Batch b = d.batch(idx);
  out.inputs = std::move(b.inputs);
  out.labels = std::move(b.labels);
  return out;
}

}  // namespace detail

inline DataSplits build_datasets(const DatasetSpec& spec) {
  DataSplits s;
  if (spec.kind == DatasetSpec::Kind::spirals) {
    s.train = synth_spirals(spec.classes, spec.per_class, spec.noise, spec.seed);
    if (spec.validation_seed) {
      s.validation = synth_spirals(spec.classes, spec.per_class, spec.noise, *spec.validation_seed);
      s.validation->split = Split::validation;
    }
  } else {
    s.train = load_idx(spec.train_images, spec.train_labels);
    if (!spec.val_images.empty()) {
      s.validation = load_idx(spec.val_images, spec.val_labels);
      s.validation->split = Split::validation;
    }
  }
  if (spec.limit) {
    s.train = detail::take_first(s.train, *spec.limit);
    if (s.validation) s.validation = detail::take_first(*s.validation, *spec.limit);
  }
  if (s.validation) {
    s.validation->classes = std::max(s.validation->classes, s.train.classes);
    s.train.classes = s.validation->classes;
  }
  if (spec.normalize) {
    if (s.validation) normalize_pair(s.train, *s.validation);
    else apply_normalization(s.train, compute_normalization(s.train));
  }
  return s;
}

/// Initial network for the dataset geometry. Layer widths track a
/// (channels, width, height) shape; a linear layer flattens it.
inline Network build_network(const std::vector<LayerSpec>& specs, const Dataset& data, Rng& rng) {
  if (specs.empty()) throw ConfigError("model: no layers");
  Network net;
  std::size_t channels = data.channels, width = data.width, height = data.height;
  bool spatial = true;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const LayerSpec& ls = specs[i];
    const bool last = i + 1 == specs.size();
    const Activation act = ls.activation.value_or(last ? Activation::softmax : Activation::relu);
    const std::string p = "model.layers[" + std::to_string(i) + "]";
    if (!last && act == Activation::softmax) throw ConfigError(p + ": softmax is only valid on the last layer");
    if (ls.kind == LayerSpec::Kind::linear) {
      const std::size_t n_in = spatial ? channels * width * height : channels;
      const std::size_t n_out = ls.out.value_or(last ? data.classes : 0);
      if (n_out == 0) throw ConfigError(p + ".out: required for hidden layers");
      if (last && n_out != data.classes)
        throw ConfigError(p + ".out: " + std::to_string(n_out) + " != dataset classes " + std::to_string(data.classes));
      const std::size_t rank = std::min({ls.rank, n_out, n_in});
      net.layers.emplace_back(FactorizedLinear::random(n_out, n_in, rank, act, rng));
      channels = n_out;
      spatial = false;
    } else {
      if (!spatial) throw ConfigError(p + ": conv layers must precede all linear layers");
      if (last) throw ConfigError(p + ": the last layer must be linear");
      if (ls.rank_out > ls.out_channels || ls.rank_in > channels)
        throw ConfigError(p + ": rank_out/rank_in exceed the channel counts (" + std::to_string(ls.out_channels) +
                          ", " + std::to_string(channels) + ")");
      if (ls.rank_out > ls.rank_in * ls.window_w * ls.window_h)
        throw ConfigError(p + ": rank_out must not exceed rank_in*S_W*S_H for the core regularizer");
      net.layers.emplace_back(LowRankConv2D::random(ls.out_channels, channels, ls.window_w, ls.window_h, ls.rank_out,
                                                    ls.rank_in, width, height, act, rng));
      channels = ls.out_channels;
    }
  }
  net.validate();
  return net;
}

/// Attack spec with data-dependent defaults filled (ℓ¹ data std per channel).
inline AttackSpec resolve_attack(AttackSpec spec, const Dataset& data) {
  if (spec.kind == AttackKind::fgsm_l1 && spec.data_std.empty()) spec.data_std = compute_normalization(data).std;
  return spec;
}

}  // namespace rdlt

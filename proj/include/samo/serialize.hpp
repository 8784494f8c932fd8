// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "samo/error.hpp"
#include "samo/prune.hpp"
#include "samo/sim.hpp"
#include "samo/store.hpp"
#include "samo/train.hpp"

namespace samo {

using json = nlohmann::json;

namespace detail {

inline void require_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
}

// Unknown keys are rejected so that typos fail loudly.
inline void check_keys(const json& obj,
                       std::initializer_list<const char*> allowed,
                       const std::string& where) {
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* k : allowed) {
      if (item.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError("unknown key '" + item.key() + "' in " + where);
  }
}

template <typename T>
T get_required(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) {
    throw ConfigError("missing key '" + std::string(key) + "' in " + where);
  }
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for '" + std::string(key) + "' in " + where);
  }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for '" + std::string(key) + "' in " + where);
  }
}

inline std::int64_t get_count(const json& obj, const char* key,
                              const std::string& where) {
  // Counts may arrive as 1e9-style doubles; they must still be integral.
  const double v = get_required<double>(obj, key, where);
  const auto n = static_cast<std::int64_t>(v);
  if (static_cast<double>(n) != v || n < 0) {
    throw ConfigError("'" + std::string(key) + "' must be a non-negative integer");
  }
  return n;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pruned index sets <-> JSON: [{layer_id, dense_len, indices:[...]}].

inline json index_sets_to_json(
    std::span<const std::shared_ptr<const PrunedIndexSet>> sets) {
  json arr = json::array();
  for (const auto& s : sets) {
    arr.push_back({{"layer_id", s->layer_id},
                   {"dense_len", s->dense_len},
                   {"indices", s->indices}});
  }
  return arr;
}

inline std::vector<std::shared_ptr<const PrunedIndexSet>> index_sets_from_json(
    const json& arr) {
  if (!arr.is_array()) throw ConfigError("index sets must be a JSON array");
  std::vector<std::shared_ptr<const PrunedIndexSet>> out;
  for (const auto& j : arr) {
    detail::require_object(j, "index set");
    detail::check_keys(j, {"layer_id", "dense_len", "indices"}, "index set");
    PrunedIndexSet s;
    s.layer_id = detail::get_required<std::string>(j, "layer_id", "index set");
    s.dense_len = detail::get_required<std::uint64_t>(j, "dense_len", "index set");
    s.indices =
        detail::get_required<std::vector<std::uint32_t>>(j, "indices", "index set");
    std::uint32_t prev = 0;
    for (std::size_t k = 0; k < s.indices.size(); ++k) {
      if (s.indices[k] >= s.dense_len || (k > 0 && s.indices[k] <= prev)) {
        throw ConfigError("indices must be strictly ascending and in range: " +
                          s.layer_id);
      }
      prev = s.indices[k];
    }
    out.push_back(std::make_shared<const PrunedIndexSet>(std::move(s)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint: {layers:[{layer_id, shape, indices, theta32, adam_m, adam_v}]}.
// theta16 is reconstructed by expand+cast on load; gradients are not saved.

inline json checkpoint_to_json(const ModelState& state) {
  json layers = json::array();
  for (const auto& l : state.layers) {
    layers.push_back({{"layer_id", l.layer_id},
                      {"shape", l.shape},
                      {"indices", l.comp.ind->indices},
                      {"theta32", l.comp.theta32},
                      {"adam_m", l.comp.adam_m},
                      {"adam_v", l.comp.adam_v}});
  }
  return json{{"layers", layers}};
}

inline ModelState checkpoint_from_json(const json& j) {
  detail::require_object(j, "checkpoint");
  detail::check_keys(j, {"layers"}, "checkpoint");
  if (!j.contains("layers") || !j.at("layers").is_array()) {
    throw ConfigError("checkpoint must contain a layers array");
  }
  ModelState state;
  for (const auto& lj : j.at("layers")) {
    detail::require_object(lj, "checkpoint layer");
    detail::check_keys(
        lj, {"layer_id", "shape", "indices", "theta32", "adam_m", "adam_v"},
        "checkpoint layer");
    PrunedIndexSet set;
    set.layer_id = detail::get_required<std::string>(lj, "layer_id", "layer");
    auto shape =
        detail::get_required<std::vector<std::size_t>>(lj, "shape", "layer");
    set.dense_len = numel(shape);
    set.indices =
        detail::get_required<std::vector<std::uint32_t>>(lj, "indices", "layer");
    std::uint32_t prev = 0;
    for (std::size_t k = 0; k < set.indices.size(); ++k) {
      if (set.indices[k] >= set.dense_len || (k > 0 && set.indices[k] <= prev)) {
        throw ConfigError("checkpoint indices must be strictly ascending and "
                          "in range: " + set.layer_id);
      }
      prev = set.indices[k];
    }
    auto ind = std::make_shared<const PrunedIndexSet>(std::move(set));

    LayerState layer;
    layer.layer_id = ind->layer_id;
    layer.shape = shape;
    layer.comp.ind = ind;
    layer.comp.theta32 =
        detail::get_required<std::vector<float>>(lj, "theta32", "layer");
    layer.comp.adam_m =
        detail::get_required<std::vector<float>>(lj, "adam_m", "layer");
    layer.comp.adam_v =
        detail::get_required<std::vector<float>>(lj, "adam_v", "layer");
    const std::size_t n = ind->count();
    if (layer.comp.theta32.size() != n || layer.comp.adam_m.size() != n ||
        layer.comp.adam_v.size() != n) {
      throw ConfigError("checkpoint buffer length mismatch: " + layer.layer_id);
    }
    layer.comp.grad16.assign(n, Half{});
    layer.comp.grad32.assign(n, 0.0f);

    std::vector<Half> theta16c(n);
    for (std::size_t k = 0; k < n; ++k) theta16c[k] = Half(layer.comp.theta32[k]);
    layer.theta16 = expand<Half>(theta16c, *ind, shape);
    state.layers.push_back(std::move(layer));
  }
  return state;
}

// ---------------------------------------------------------------------------
// Flat binary dataset: magic "SAMD", then u32 n_samples, n_features,
// n_targets, then single-precision features and targets, all little-endian.

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
  buf.push_back(static_cast<char>(v & 0xFF));
  buf.push_back(static_cast<char>((v >> 8) & 0xFF));
  buf.push_back(static_cast<char>((v >> 16) & 0xFF));
  buf.push_back(static_cast<char>((v >> 24) & 0xFF));
}

inline std::uint32_t take_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline void save_dataset(const Dataset& d, const std::string& path) {
  std::string buf;
  buf.reserve(16 + 4 * (d.features.size() + d.targets.size()));
  buf += "SAMD";
  detail::put_u32(buf, static_cast<std::uint32_t>(d.n_samples));
  detail::put_u32(buf, static_cast<std::uint32_t>(d.n_features));
  detail::put_u32(buf, static_cast<std::uint32_t>(d.n_targets));
  for (float v : d.features) detail::put_u32(buf, std::bit_cast<std::uint32_t>(v));
  for (float v : d.targets) detail::put_u32(buf, std::bit_cast<std::uint32_t>(v));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open dataset file for writing: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open dataset file: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  if (buf.size() < 16 || buf.compare(0, 4, "SAMD") != 0) {
    throw ConfigError("not a SAMD dataset file: " + path);
  }
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  Dataset d;
  d.n_samples = detail::take_u32(p + 4);
  d.n_features = detail::take_u32(p + 8);
  d.n_targets = detail::take_u32(p + 12);
  const std::size_t nf = d.n_samples * d.n_features;
  const std::size_t nt = d.n_samples * d.n_targets;
  if (buf.size() != 16 + 4 * (nf + nt)) {
    throw ConfigError("dataset file size does not match its header: " + path);
  }
  d.features.resize(nf);
  d.targets.resize(nt);
  for (std::size_t i = 0; i < nf; ++i) {
    d.features[i] = std::bit_cast<float>(detail::take_u32(p + 16 + 4 * i));
  }
  for (std::size_t i = 0; i < nt; ++i) {
    d.targets[i] = std::bit_cast<float>(detail::take_u32(p + 16 + 4 * (nf + i)));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Run configurations.

struct TrainRunConfig {
  ModelSpec model = make_mlp({16, 32, 16, 4});
  OptimizerConfig optimizer;
  double sparsity = 0.9;
  PruneScope scope = PruneScope::per_layer;
  bool prune_biases = false;
  std::uint64_t seed = 0;
  std::size_t steps = 100;
  std::size_t batch = 32;
  std::size_t samples = 256;
  float noise = 0.01f;
  std::string data_path;  // empty: synthetic regression
  bool verify = false;
  double tolerance = 1e-6;
  std::string out = "train.csv";
  std::string checkpoint;
  std::string indices_out;
  std::string indices_in;
};

inline ModelSpec model_spec_from_json(const json& j) {
  detail::require_object(j, "model");
  detail::check_keys(j, {"layers", "loss"}, "model");
  ModelSpec spec;
  const std::string loss = detail::get_or<std::string>(j, "loss", "mse", "model");
  if (loss == "mse") {
    spec.loss = LossKind::mse;
  } else if (loss == "cross-entropy") {
    spec.loss = LossKind::softmax_cross_entropy;
  } else {
    throw ConfigError("loss must be 'mse' or 'cross-entropy'");
  }
  if (!j.contains("layers") || !j.at("layers").is_array() || j.at("layers").empty()) {
    throw ConfigError("model.layers must be a non-empty array");
  }
  const auto& layers = j.at("layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& lj = layers.at(l);
    detail::require_object(lj, "model layer");
    detail::check_keys(lj, {"in", "out", "bias", "activation"}, "model layer");
    LayerSpec ls;
    ls.in_features = detail::get_required<std::size_t>(lj, "in", "model layer");
    ls.out_features = detail::get_required<std::size_t>(lj, "out", "model layer");
    ls.has_bias = detail::get_or<bool>(lj, "bias", true, "model layer");
    const std::string def = (l + 1 == layers.size()) ? "identity" : "relu";
    const std::string act =
        detail::get_or<std::string>(lj, "activation", def, "model layer");
    if (act == "relu") {
      ls.activation = Activation::relu;
    } else if (act == "identity") {
      ls.activation = Activation::identity;
    } else {
      throw ConfigError("activation must be 'relu' or 'identity'");
    }
    spec.layers.push_back(ls);
  }
  spec.validate();
  return spec;
}

inline TrainRunConfig train_config_from_json(const json& j) {
  detail::require_object(j, "train config");
  detail::check_keys(j,
                     {"model", "optimizer", "prune", "data", "steps", "seed",
                      "verify", "tolerance", "out", "checkpoint", "indices_out",
                      "indices_in"},
                     "train config");
  TrainRunConfig cfg;
  if (j.contains("model")) cfg.model = model_spec_from_json(j.at("model"));
  if (j.contains("optimizer")) {
    const auto& oj = j.at("optimizer");
    detail::require_object(oj, "optimizer");
    detail::check_keys(oj,
                       {"learning_rate", "beta1", "beta2", "epsilon",
                        "loss_scale", "weight_decay"},
                       "optimizer");
    auto& o = cfg.optimizer;
    o.learning_rate = detail::get_or<float>(oj, "learning_rate", o.learning_rate,
                                            "optimizer");
    o.beta1 = detail::get_or<float>(oj, "beta1", o.beta1, "optimizer");
    o.beta2 = detail::get_or<float>(oj, "beta2", o.beta2, "optimizer");
    o.epsilon = detail::get_or<float>(oj, "epsilon", o.epsilon, "optimizer");
    o.loss_scale = detail::get_or<float>(oj, "loss_scale", o.loss_scale,
                                         "optimizer");
    o.weight_decay = detail::get_or<float>(oj, "weight_decay", o.weight_decay,
                                           "optimizer");
    o.validate();
  }
  if (j.contains("prune")) {
    const auto& pj = j.at("prune");
    detail::require_object(pj, "prune");
    detail::check_keys(pj, {"sparsity", "scope", "prune_biases"}, "prune");
    cfg.sparsity = detail::get_or<double>(pj, "sparsity", cfg.sparsity, "prune");
    const std::string scope =
        detail::get_or<std::string>(pj, "scope", "per-layer", "prune");
    if (scope == "per-layer") {
      cfg.scope = PruneScope::per_layer;
    } else if (scope == "global") {
      cfg.scope = PruneScope::global;
    } else {
      throw ConfigError("prune.scope must be 'per-layer' or 'global'");
    }
    cfg.prune_biases =
        detail::get_or<bool>(pj, "prune_biases", cfg.prune_biases, "prune");
  }
  if (j.contains("data")) {
    const auto& dj = j.at("data");
    detail::require_object(dj, "data");
    detail::check_keys(dj, {"kind", "path", "samples", "batch", "noise"}, "data");
    const std::string kind =
        detail::get_or<std::string>(dj, "kind", "synthetic", "data");
    if (kind == "file") {
      cfg.data_path = detail::get_required<std::string>(dj, "path", "data");
    } else if (kind != "synthetic") {
      throw ConfigError("data.kind must be 'synthetic' or 'file'");
    }
    cfg.samples = detail::get_or<std::size_t>(dj, "samples", cfg.samples, "data");
    cfg.batch = detail::get_or<std::size_t>(dj, "batch", cfg.batch, "data");
    cfg.noise = detail::get_or<float>(dj, "noise", cfg.noise, "data");
  }
  cfg.steps = detail::get_or<std::size_t>(j, "steps", cfg.steps, "train config");
  cfg.seed = detail::get_or<std::uint64_t>(j, "seed", cfg.seed, "train config");
  cfg.verify = detail::get_or<bool>(j, "verify", cfg.verify, "train config");
  cfg.tolerance =
      detail::get_or<double>(j, "tolerance", cfg.tolerance, "train config");
  cfg.out = detail::get_or<std::string>(j, "out", cfg.out, "train config");
  cfg.checkpoint =
      detail::get_or<std::string>(j, "checkpoint", cfg.checkpoint, "train config");
  cfg.indices_out = detail::get_or<std::string>(j, "indices_out", cfg.indices_out,
                                                "train config");
  cfg.indices_in = detail::get_or<std::string>(j, "indices_in", cfg.indices_in,
                                               "train config");
  return cfg;
}

// ---------------------------------------------------------------------------
// Simulation scenarios.

enum class SimMode { dense, samo, both };

struct Scenario {
  ClusterSpec cluster;
  WorkloadSpec workload;
  SimMode mode = SimMode::both;
  std::vector<int> sweep_g;
  int force_g_inter = 0;
};

inline Scenario scenario_from_json(const json& j) {
  detail::require_object(j, "scenario");
  detail::check_keys(j, {"cluster", "workload", "mode", "sweep_g", "force_g_inter"},
                     "scenario");
  Scenario s;

  if (!j.contains("cluster")) throw ConfigError("scenario needs a cluster object");
  const json& cj = j.at("cluster");
  detail::require_object(cj, "cluster");
  detail::check_keys(cj,
                     {"gpus", "mem_cap_bytes", "p2p_bw", "coll_bw", "latency",
                      "flops_per_gpu"},
                     "cluster");
  s.cluster.gpus = static_cast<int>(detail::get_count(cj, "gpus", "cluster"));
  s.cluster.mem_cap_bytes =
      detail::get_required<double>(cj, "mem_cap_bytes", "cluster");
  s.cluster.p2p_bw = detail::get_required<double>(cj, "p2p_bw", "cluster");
  s.cluster.coll_bw = detail::get_required<double>(cj, "coll_bw", "cluster");
  s.cluster.latency = detail::get_required<double>(cj, "latency", "cluster");
  s.cluster.flops_per_gpu =
      detail::get_or<double>(cj, "flops_per_gpu", 0.0, "cluster");
  s.cluster.validate();

  if (!j.contains("workload")) throw ConfigError("scenario needs a workload object");
  const json& wj = j.at("workload");
  detail::require_object(wj, "workload");
  detail::check_keys(wj,
                     {"phi", "sparsity", "batch", "microbatch", "t_f", "t_b",
                      "act_msg_bytes", "overhead_frac", "act_mem_bytes",
                      "p2p_overlap"},
                     "workload");
  s.workload.phi = detail::get_count(wj, "phi", "workload");
  s.workload.sparsity = detail::get_or<double>(wj, "sparsity", 0.0, "workload");
  s.workload.batch = detail::get_count(wj, "batch", "workload");
  s.workload.microbatch = detail::get_or<std::int64_t>(wj, "microbatch",
                                                       std::int64_t{1}, "workload");
  s.workload.t_f = detail::get_required<double>(wj, "t_f", "workload");
  s.workload.t_b = detail::get_required<double>(wj, "t_b", "workload");
  s.workload.act_msg_bytes =
      detail::get_or<double>(wj, "act_msg_bytes", 0.0, "workload");
  s.workload.overhead_frac =
      detail::get_or<double>(wj, "overhead_frac", 0.10, "workload");
  s.workload.act_mem_bytes =
      detail::get_or<double>(wj, "act_mem_bytes", 0.0, "workload");
  s.workload.p2p_overlap =
      detail::get_or<double>(wj, "p2p_overlap", 0.0, "workload");
  s.workload.validate();

  const std::string mode = detail::get_or<std::string>(j, "mode", "both", "scenario");
  if (mode == "dense") {
    s.mode = SimMode::dense;
  } else if (mode == "samo") {
    s.mode = SimMode::samo;
  } else if (mode == "both") {
    s.mode = SimMode::both;
  } else {
    throw ConfigError("mode must be 'dense', 'samo' or 'both'");
  }
  s.sweep_g = detail::get_or<std::vector<int>>(j, "sweep_g", {}, "scenario");
  s.force_g_inter =
      static_cast<int>(detail::get_or<std::int64_t>(j, "force_g_inter",
                                                    std::int64_t{0}, "scenario"));
  return s;
}

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("invalid JSON in " + path + ": " + e.what());
  }
  return j;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open file for writing: " + path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

}  // namespace samo

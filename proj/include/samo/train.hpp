// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "samo/error.hpp"
#include "samo/prune.hpp"
#include "samo/store.hpp"
#include "samo/tensor.hpp"

namespace samo {

enum class LossKind { mse, softmax_cross_entropy };
enum class Activation { identity, relu };

struct LayerSpec {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  bool has_bias = true;
  Activation activation = Activation::relu;
};

struct ModelSpec {
  std::vector<LayerSpec> layers;
  LossKind loss = LossKind::mse;

  void validate() const {
    if (layers.empty()) throw ParameterError("model needs at least one layer");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (layers[l].in_features == 0 || layers[l].out_features == 0) {
        throw ParameterError("layer dimensions must be positive");
      }
      if (l > 0 && layers[l - 1].out_features != layers[l].in_features) {
        throw ParameterError("consecutive layers are not dimension-compatible");
      }
    }
  }
  std::size_t input_dim() const { return layers.front().in_features; }
  std::size_t output_dim() const { return layers.back().out_features; }
};

// Hidden layers ReLU, output layer identity.
inline ModelSpec make_mlp(std::span<const std::size_t> dims,
                          LossKind loss = LossKind::mse, bool bias = true) {
  if (dims.size() < 2) throw ParameterError("need at least input and output dims");
  ModelSpec spec;
  spec.loss = loss;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const bool last = (l + 2 == dims.size());
    spec.layers.push_back(
        {dims[l], dims[l + 1], bias, last ? Activation::identity : Activation::relu});
  }
  spec.validate();
  return spec;
}

inline ModelSpec make_mlp(std::initializer_list<std::size_t> dims,
                          LossKind loss = LossKind::mse, bool bias = true) {
  return make_mlp(std::span<const std::size_t>(dims.begin(), dims.size()), loss,
                  bias);
}

struct OptimizerConfig {
  float learning_rate = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
  float loss_scale = 1024.0f;  // static, power of two
  float weight_decay = 0.0f;   // decoupled, off by default

  void validate() const {
    if (!(beta1 >= 0.0f && beta1 < 1.0f) || !(beta2 >= 0.0f && beta2 < 1.0f)) {
      throw ParameterError("betas must lie in [0, 1)");
    }
    if (!(loss_scale >= 1.0f) ||
        (std::bit_cast<std::uint32_t>(loss_scale) & 0x007FFFFFu) != 0) {
      throw ParameterError("loss_scale must be a power of two >= 1");
    }
  }
};

// ---------------------------------------------------------------------------
// Deterministic initialization. mt19937_64 is pinned by the standard;
// distributions are not, so uniforms are built from raw engine output.

inline float canonical_float(std::mt19937_64& eng) {
  // 24 mantissa bits: every value in [0, 1) is exactly representable.
  return static_cast<float>(eng() >> 40) * 0x1.0p-24f;
}

inline float uniform_symmetric(std::mt19937_64& eng, float bound) {
  return (2.0f * canonical_float(eng) - 1.0f) * bound;
}

// Dense single-precision initial parameters, one entry per parameter
// tensor in network order (weight, then bias when present). Biases start
// at zero and are non-prunable.
inline std::vector<LayerParams> init_params(const ModelSpec& spec,
                                            std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 eng(seed);
  std::vector<LayerParams> params;
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const auto& layer = spec.layers[l];
    const float bound =
        1.0f / std::sqrt(static_cast<float>(layer.in_features));
    Tensor<float> w({layer.in_features, layer.out_features});
    for (auto& v : w.flat()) v = uniform_symmetric(eng, bound);
    params.push_back({"fc" + std::to_string(l) + ".weight", std::move(w), true});
    if (layer.has_bias) {
      Tensor<float> b({layer.out_features});
      params.push_back({"fc" + std::to_string(l) + ".bias", std::move(b), false});
    }
  }
  return params;
}

// ---------------------------------------------------------------------------
// Generic forward/backward math, shared by the compressed and the dense
// reference trainers so that both see bit-identical operations. T is Half
// in production and float for gradient checking.

template <typename T>
struct LinearParamView {
  const Tensor<T>* weight = nullptr;
  const Tensor<T>* bias = nullptr;  // null when the layer has no bias
};

template <typename T>
struct MlpTrace {
  // acts[0] is the input batch, acts[l+1] the post-activation output of
  // layer l; the last entry is the prediction.
  std::vector<Tensor<T>> acts;
  bool valid = false;

  const Tensor<T>& prediction() const { return acts.back(); }
};

// x: B x in, w: in x out. Accumulates in single precision, k ascending,
// adds the bias into the accumulator, rounds once on store.
template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& w,
                         const Tensor<T>* bias) {
  if (x.rank() != 2 || w.rank() != 2 || x.cols() != w.rows()) {
    throw DimensionError("linear_forward: batch/weight shapes incompatible");
  }
  if (bias && bias->size() != w.cols()) {
    throw DimensionError("linear_forward: bias length mismatch");
  }
  const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      float acc = 0.0f;
      for (std::size_t kk = 0; kk < k; ++kk) {
        acc += to_float(x.at(i, kk)) * to_float(w.at(kk, j));
      }
      if (bias) acc += to_float((*bias)[j]);
      out.at(i, j) = from_float<T>(acc);
    }
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& t) {
  Tensor<T> out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) {
    out[i] = to_float(t[i]) > 0.0f ? t[i] : T{};
  }
  return out;
}

// Pass-through where the forward output was positive; selection, not a
// mask multiply, so inf gradients survive loss scaling untouched.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad, const Tensor<T>& post_act) {
  detail::require_same_shape(grad.shape(), post_act.shape());
  Tensor<T> out(grad.shape());
  for (std::size_t i = 0; i < grad.size(); ++i) {
    out[i] = to_float(post_act[i]) > 0.0f ? grad[i] : T{};
  }
  return out;
}

template <typename T>
MlpTrace<T> mlp_forward(const ModelSpec& spec,
                        std::span<const LinearParamView<T>> params,
                        const Tensor<T>& x) {
  if (x.rank() != 2 || x.cols() != spec.input_dim()) {
    throw DimensionError("batch feature dim does not match first layer");
  }
  MlpTrace<T> trace;
  trace.acts.reserve(spec.layers.size() + 1);
  trace.acts.push_back(x);
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    Tensor<T> z =
        linear_forward(trace.acts.back(), *params[l].weight, params[l].bias);
    trace.acts.push_back(spec.layers[l].activation == Activation::relu
                             ? relu(z)
                             : std::move(z));
  }
  trace.valid = true;
  return trace;
}

// Loss reduced in single precision; dpred is the gradient of
// scale * loss w.r.t. the prediction, rounded to T.
template <typename T>
struct LossResult {
  float loss = 0.0f;
  Tensor<T> dpred;
};

template <typename T>
LossResult<T> loss_and_grad(LossKind kind, const Tensor<T>& pred,
                            const Tensor<float>& target, float scale) {
  const std::size_t batch = pred.rows();
  LossResult<T> r;
  r.dpred = Tensor<T>(pred.shape());

  if (kind == LossKind::mse) {
    detail::require_same_shape(pred.shape(), target.shape());
    // loss = (1/B) * sum_b sum_j (pred - target)^2
    float acc = 0.0f;
    const float c = 2.0f / static_cast<float>(batch) * scale;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const float diff = to_float(pred[i]) - target[i];
      acc += diff * diff;
      r.dpred[i] = from_float<T>(diff * c);
    }
    r.loss = acc / static_cast<float>(batch);
    return r;
  }

  // softmax cross entropy; target column 0 holds the class id per row.
  if (target.rank() != 2 || target.rows() != batch) {
    throw DimensionError("cross-entropy targets must be one class id per row");
  }
  const std::size_t classes = pred.cols();
  float acc = 0.0f;
  const float c = scale / static_cast<float>(batch);
  std::vector<float> prob(classes);
  for (std::size_t b = 0; b < batch; ++b) {
    float mx = to_float(pred.at(b, 0));
    for (std::size_t j = 1; j < classes; ++j) {
      mx = std::max(mx, to_float(pred.at(b, j)));
    }
    float denom = 0.0f;
    for (std::size_t j = 0; j < classes; ++j) {
      prob[j] = std::exp(to_float(pred.at(b, j)) - mx);
      denom += prob[j];
    }
    const auto label = static_cast<std::size_t>(target.at(b, 0));
    if (label >= classes) throw ParameterError("class label out of range");
    acc += -std::log(prob[label] / denom);
    for (std::size_t j = 0; j < classes; ++j) {
      const float softmax = prob[j] / denom;
      const float indicator = (j == label) ? 1.0f : 0.0f;
      r.dpred.at(b, j) = from_float<T>((softmax - indicator) * c);
    }
  }
  r.loss = acc / static_cast<float>(batch);
  return r;
}

// Column sums accumulated in single precision, batch ascending.
template <typename T>
Tensor<T> column_sum(const Tensor<T>& t) {
  Tensor<T> out({t.cols()});
  for (std::size_t j = 0; j < t.cols(); ++j) {
    float acc = 0.0f;
    for (std::size_t b = 0; b < t.rows(); ++b) {
      acc += to_float(t.at(b, j));
    }
    out[j] = from_float<T>(acc);
  }
  return out;
}

// Walks the layers last-to-first and hands each dense parameter gradient
// to the sink the moment it is produced. The sink owns the buffer; a sink
// that consumes and drops it keeps at most one layer's dense gradient
// alive at a time.
template <typename T, typename Sink>
void mlp_backward(const ModelSpec& spec,
                  std::span<const LinearParamView<T>> params,
                  const MlpTrace<T>& trace, const Tensor<T>& dpred,
                  Sink&& sink) {
  if (!trace.valid) throw StateError("backward called without a forward pass");
  Tensor<T> d = dpred;
  for (std::size_t l = spec.layers.size(); l-- > 0;) {
    if (spec.layers[l].activation == Activation::relu) {
      d = relu_backward(d, trace.acts[l + 1]);
    }
    {
      Tensor<T> dw = matmul(transpose(trace.acts[l]), d);
      sink(l, /*is_bias=*/false, std::move(dw));
    }
    if (params[l].bias) {
      sink(l, /*is_bias=*/true, column_sum(d));
    }
    if (l > 0) {
      d = matmul(d, transpose(*params[l].weight));
    }
  }
}

// ---------------------------------------------------------------------------
// Adam on flat single-precision buffers; identical call order in both
// trainers is what makes the equivalence bit-exact.

struct AdamScalars {
  std::uint64_t t = 0;
  float beta1_pow = 1.0f;
  float beta2_pow = 1.0f;

  void advance(const OptimizerConfig& cfg) {
    ++t;
    beta1_pow *= cfg.beta1;
    beta2_pow *= cfg.beta2;
  }
};

inline void adam_update(std::span<float> theta, std::span<float> m,
                        std::span<float> v, std::span<const float> g,
                        const OptimizerConfig& cfg, float bias1, float bias2) {
  const float one_minus_b1 = 1.0f - cfg.beta1;
  const float one_minus_b2 = 1.0f - cfg.beta2;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + one_minus_b1 * g[i];
    v[i] = cfg.beta2 * v[i] + one_minus_b2 * (g[i] * g[i]);
    const float m_hat = m[i] / bias1;
    const float v_hat = v[i] / bias2;
    theta[i] -= cfg.learning_rate * (m_hat / (std::sqrt(v_hat) + cfg.epsilon));
    if (cfg.weight_decay != 0.0f) {
      theta[i] -= cfg.learning_rate * cfg.weight_decay * theta[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Datasets.

struct Dataset {
  std::size_t n_samples = 0;
  std::size_t n_features = 0;
  std::size_t n_targets = 0;
  std::vector<float> features;  // row-major
  std::vector<float> targets;
};

// Seeded teacher: a random linear map plus optional uniform noise.
inline Dataset make_synthetic_regression(std::uint64_t seed, std::size_t n,
                                         std::size_t in_dim, std::size_t out_dim,
                                         float noise = 0.01f) {
  std::mt19937_64 eng(seed);
  Dataset d;
  d.n_samples = n;
  d.n_features = in_dim;
  d.n_targets = out_dim;
  const float bound = 1.0f / std::sqrt(static_cast<float>(in_dim));
  std::vector<float> teacher(in_dim * out_dim);
  for (auto& w : teacher) w = uniform_symmetric(eng, bound);

  d.features.resize(n * in_dim);
  for (auto& x : d.features) x = uniform_symmetric(eng, 1.0f);
  d.targets.resize(n * out_dim);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t j = 0; j < out_dim; ++j) {
      float acc = 0.0f;
      for (std::size_t k = 0; k < in_dim; ++k) {
        acc += d.features[s * in_dim + k] * teacher[k * out_dim + j];
      }
      d.targets[s * out_dim + j] = acc + uniform_symmetric(eng, noise);
    }
  }
  return d;
}

// Labels are the argmax of a seeded linear teacher; stored as class ids
// in a single target column.
inline Dataset make_synthetic_classification(std::uint64_t seed, std::size_t n,
                                             std::size_t in_dim,
                                             std::size_t classes) {
  std::mt19937_64 eng(seed);
  Dataset d;
  d.n_samples = n;
  d.n_features = in_dim;
  d.n_targets = 1;
  const float bound = 1.0f / std::sqrt(static_cast<float>(in_dim));
  std::vector<float> teacher(in_dim * classes);
  for (auto& w : teacher) w = uniform_symmetric(eng, bound);

  d.features.resize(n * in_dim);
  for (auto& x : d.features) x = uniform_symmetric(eng, 1.0f);
  d.targets.resize(n);
  for (std::size_t s = 0; s < n; ++s) {
    std::size_t best = 0;
    float best_score = -std::numeric_limits<float>::infinity();
    for (std::size_t j = 0; j < classes; ++j) {
      float acc = 0.0f;
      for (std::size_t k = 0; k < in_dim; ++k) {
        acc += d.features[s * in_dim + k] * teacher[k * classes + j];
      }
      if (acc > best_score) {
        best_score = acc;
        best = j;
      }
    }
    d.targets[s] = static_cast<float>(best);
  }
  return d;
}

// Batch `step` walks the dataset cyclically.
inline Tensor<Half> batch_features(const Dataset& d, std::size_t step,
                                   std::size_t batch) {
  Tensor<Half> x({batch, d.n_features});
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t s = (step * batch + b) % d.n_samples;
    for (std::size_t k = 0; k < d.n_features; ++k) {
      x.at(b, k) = Half(d.features[s * d.n_features + k]);
    }
  }
  return x;
}

inline Tensor<float> batch_targets(const Dataset& d, std::size_t step,
                                   std::size_t batch) {
  Tensor<float> y({batch, d.n_targets});
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t s = (step * batch + b) % d.n_samples;
    for (std::size_t k = 0; k < d.n_targets; ++k) {
      y.at(b, k) = d.targets[s * d.n_targets + k];
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// State construction.

struct DenseLayerState {
  std::string layer_id;
  std::vector<std::size_t> shape;
  std::shared_ptr<const PrunedIndexSet> ind;  // mask source
  Tensor<Half> theta16;
  Tensor<float> theta32;
  Tensor<Half> grad16;
  Tensor<float> grad32;
  Tensor<float> adam_m;
  Tensor<float> adam_v;
};

struct DenseModelState {
  std::vector<DenseLayerState> layers;
};

template <typename T>
void mask_in_place(Tensor<T>& t, const PrunedIndexSet& ind) {
  Tensor<T> masked(t.shape());
  const auto src = t.flat();
  const auto dst = masked.flat();
  for (std::uint32_t i : ind.indices) dst[i] = src[i];
  t = std::move(masked);
}

struct BuiltStates {
  std::vector<std::shared_ptr<const PrunedIndexSet>> index_sets;
  ModelState samo;
  DenseModelState reference;
};

// Assembles the compressed state and its dense masked twin from initial
// values plus one index set per parameter tensor.
inline BuiltStates assemble_states(
    std::span<const LayerParams> init,
    std::vector<std::shared_ptr<const PrunedIndexSet>> index_sets) {
  if (init.size() != index_sets.size()) {
    throw DimensionError("one index set per parameter tensor required");
  }
  BuiltStates out;
  out.index_sets = std::move(index_sets);
  for (std::size_t i = 0; i < init.size(); ++i) {
    const auto& ind = out.index_sets[i];
    if (ind->dense_len != init[i].values.size() ||
        ind->layer_id != init[i].layer_id) {
      throw DimensionError("index set does not match tensor: " + ind->layer_id);
    }
    out.samo.layers.push_back(make_layer_state(init[i].values, ind));

    DenseLayerState d;
    d.layer_id = ind->layer_id;
    d.shape = init[i].values.shape();
    d.ind = ind;
    d.theta32 = init[i].values;
    mask_in_place(d.theta32, *ind);
    d.theta16 = cast<Half>(d.theta32);
    mask_in_place(d.theta16, *ind);
    d.grad16 = Tensor<Half>(d.shape);
    d.grad32 = Tensor<float>(d.shape);
    d.adam_m = Tensor<float>(d.shape);
    d.adam_v = Tensor<float>(d.shape);
    out.reference.layers.push_back(std::move(d));
  }
  return out;
}

// Initializes, prunes, and assembles both trainer states from one seed.
inline BuiltStates build_states(const ModelSpec& spec, std::uint64_t seed,
                                double sparsity,
                                PruneScope scope = PruneScope::per_layer,
                                bool prune_biases = false) {
  std::vector<LayerParams> init = init_params(spec, seed);
  if (prune_biases) {
    for (auto& p : init) p.prunable = true;
  }
  std::vector<PrunedIndexSet> sets = magnitude_prune(init, sparsity, scope);
  std::vector<std::shared_ptr<const PrunedIndexSet>> shared;
  shared.reserve(sets.size());
  for (auto& s : sets) {
    shared.push_back(std::make_shared<const PrunedIndexSet>(std::move(s)));
  }
  return assemble_states(init, std::move(shared));
}

// ---------------------------------------------------------------------------
// Trainers.

struct StepRecord {
  std::size_t step = 0;
  float loss = 0.0f;
  float grad_norm = 0.0f;
  bool skipped = false;
  std::uint64_t peak_state_bytes = 0;
};

struct TrainResult {
  std::vector<StepRecord> records;
  bool diverged = false;
};

namespace detail {

// Maps network layer -> indices of its parameter tensors in the state list.
struct ParamLayout {
  std::vector<std::size_t> weight;
  std::vector<std::size_t> bias;  // npos when absent

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  explicit ParamLayout(const ModelSpec& spec) {
    std::size_t next = 0;
    for (const auto& layer : spec.layers) {
      weight.push_back(next++);
      bias.push_back(layer.has_bias ? next++ : npos);
    }
  }
};

}  // namespace detail

// Trains on the compressed state: dense theta16 for compute, gradients
// gathered into grad16 the moment each layer's dense gradient is produced,
// Adam on the compressed buffers, expand in the downcast.
class SamoTrainer {
 public:
  SamoTrainer(ModelSpec spec, OptimizerConfig cfg, ModelState state)
      : spec_(std::move(spec)),
        cfg_(cfg),
        state_(std::move(state)),
        layout_(spec_) {
    spec_.validate();
    cfg_.validate();
  }

  float forward(const Tensor<Half>& x, const Tensor<float>& y) {
    trace_ = mlp_forward<Half>(spec_, param_views(), x);
    auto lr = loss_and_grad<Half>(spec_.loss, trace_.prediction(), y,
                                  cfg_.loss_scale);
    loss_ = lr.loss;
    dpred_ = std::move(lr.dpred);
    return loss_;
  }

  void backward() {
    if (!trace_.valid) throw StateError("backward requires a forward pass");
    mlp_backward<Half>(
        spec_, param_views(), trace_, dpred_,
        [&](std::size_t l, bool is_bias, Tensor<Half>&& dense_grad) {
          ++live_dense_grads_;
          peak_dense_grads_ = std::max(peak_dense_grads_, live_dense_grads_);
          auto& layer = state_.layers[param_index(l, is_bias)];
          const auto& ind = *layer.comp.ind;
          const auto flat = dense_grad.flat();
          for (std::size_t k = 0; k < ind.indices.size(); ++k) {
            layer.comp.grad16[k] = flat[ind.indices[k]];
          }
          {
            Tensor<Half> release = std::move(dense_grad);  // buffer dies here
          }
          --live_dense_grads_;
        });
    trace_.valid = false;
    grads_ready_ = true;
  }

  // Returns false when the step was skipped on a non-finite gradient.
  bool optimizer_step() {
    if (!grads_ready_) throw StateError("optimizer_step requires backward");
    const float inv_scale = 1.0f / cfg_.loss_scale;
    bool finite = true;
    float norm_acc = 0.0f;
    for (auto& layer : state_.layers) {
      for (std::size_t k = 0; k < layer.comp.grad16.size(); ++k) {
        const float g = to_float(layer.comp.grad16[k]) * inv_scale;
        layer.comp.grad32[k] = g;
        finite = finite && std::isfinite(g);
        norm_acc += g * g;
      }
    }
    grad_norm_ = std::sqrt(norm_acc);
    grads_ready_ = false;
    if (!finite) {
      ++skipped_steps_;
      for (auto& layer : state_.layers) {
        std::fill(layer.comp.grad16.begin(), layer.comp.grad16.end(), Half{});
        std::fill(layer.comp.grad32.begin(), layer.comp.grad32.end(), 0.0f);
      }
      return false;
    }
    adam_.advance(cfg_);
    const float bias1 = 1.0f - adam_.beta1_pow;
    const float bias2 = 1.0f - adam_.beta2_pow;
    for (auto& layer : state_.layers) {
      adam_update(layer.comp.theta32, layer.comp.adam_m, layer.comp.adam_v,
                  layer.comp.grad32, cfg_, bias1, bias2);
      // Downcast: compressed half copy of theta32, expanded through ind.
      std::vector<Half> theta16c(layer.comp.theta32.size());
      for (std::size_t k = 0; k < theta16c.size(); ++k) {
        theta16c[k] = Half(layer.comp.theta32[k]);
      }
      layer.theta16 = expand<Half>(theta16c, *layer.comp.ind, layer.shape);
      std::fill(layer.comp.grad16.begin(), layer.comp.grad16.end(), Half{});
      std::fill(layer.comp.grad32.begin(), layer.comp.grad32.end(), 0.0f);
    }
    return true;
  }

  StepRecord train_step(std::size_t step, const Tensor<Half>& x,
                        const Tensor<float>& y) {
    StepRecord rec;
    rec.step = step;
    rec.loss = forward(x, y);
    backward();
    rec.skipped = !optimizer_step();
    rec.grad_norm = grad_norm_;
    rec.peak_state_bytes = measured_bytes(state_);
    return rec;
  }

  const ModelState& state() const { return state_; }
  const ModelSpec& spec() const { return spec_; }
  std::uint64_t skipped_steps() const { return skipped_steps_; }
  int peak_dense_grads() const { return peak_dense_grads_; }
  float last_grad_norm() const { return grad_norm_; }

 private:
  std::vector<LinearParamView<Half>> param_views() const {
    std::vector<LinearParamView<Half>> views(spec_.layers.size());
    for (std::size_t l = 0; l < spec_.layers.size(); ++l) {
      views[l].weight = &state_.layers[layout_.weight[l]].theta16;
      if (layout_.bias[l] != detail::ParamLayout::npos) {
        views[l].bias = &state_.layers[layout_.bias[l]].theta16;
      }
    }
    return views;
  }
  std::size_t param_index(std::size_t l, bool is_bias) const {
    return is_bias ? layout_.bias[l] : layout_.weight[l];
  }

  ModelSpec spec_;
  OptimizerConfig cfg_;
  ModelState state_;
  detail::ParamLayout layout_;
  AdamScalars adam_;
  MlpTrace<Half> trace_;
  Tensor<Half> dpred_;
  float loss_ = 0.0f;
  float grad_norm_ = 0.0f;
  bool grads_ready_ = false;
  std::uint64_t skipped_steps_ = 0;
  int live_dense_grads_ = 0;
  int peak_dense_grads_ = 0;
};

// Dense oracle: every state tensor stays dense; gradients are masked after
// backward and parameters after each step. Same kernels, same op order,
// same precisions as the compressed trainer.
class ReferenceTrainer {
 public:
  ReferenceTrainer(ModelSpec spec, OptimizerConfig cfg, DenseModelState state)
      : spec_(std::move(spec)),
        cfg_(cfg),
        state_(std::move(state)),
        layout_(spec_) {
    spec_.validate();
    cfg_.validate();
  }

  float forward(const Tensor<Half>& x, const Tensor<float>& y) {
    trace_ = mlp_forward<Half>(spec_, param_views(), x);
    auto lr = loss_and_grad<Half>(spec_.loss, trace_.prediction(), y,
                                  cfg_.loss_scale);
    loss_ = lr.loss;
    dpred_ = std::move(lr.dpred);
    return loss_;
  }

  void backward() {
    if (!trace_.valid) throw StateError("backward requires a forward pass");
    mlp_backward<Half>(spec_, param_views(), trace_, dpred_,
                       [&](std::size_t l, bool is_bias, Tensor<Half>&& g) {
                         auto& layer = state_.layers[param_index(l, is_bias)];
                         layer.grad16 = std::move(g);
                         mask_in_place(layer.grad16, *layer.ind);
                       });
    trace_.valid = false;
    grads_ready_ = true;
  }

  bool optimizer_step() {
    if (!grads_ready_) throw StateError("optimizer_step requires backward");
    const float inv_scale = 1.0f / cfg_.loss_scale;
    bool finite = true;
    float norm_acc = 0.0f;
    for (auto& layer : state_.layers) {
      for (std::size_t i = 0; i < layer.grad16.size(); ++i) {
        const float g = to_float(layer.grad16[i]) * inv_scale;
        layer.grad32[i] = g;
        finite = finite && std::isfinite(g);
        norm_acc += g * g;
      }
    }
    grad_norm_ = std::sqrt(norm_acc);
    grads_ready_ = false;
    if (!finite) {
      ++skipped_steps_;
      for (auto& layer : state_.layers) {
        layer.grad16 = Tensor<Half>(layer.shape);
        layer.grad32 = Tensor<float>(layer.shape);
      }
      return false;
    }
    adam_.advance(cfg_);
    const float bias1 = 1.0f - adam_.beta1_pow;
    const float bias2 = 1.0f - adam_.beta2_pow;
    for (auto& layer : state_.layers) {
      adam_update(layer.theta32.flat(), layer.adam_m.flat(),
                  layer.adam_v.flat(), layer.grad32.flat(), cfg_, bias1, bias2);
      mask_in_place(layer.theta32, *layer.ind);
      layer.theta16 = cast<Half>(layer.theta32);
      mask_in_place(layer.theta16, *layer.ind);
      layer.grad16 = Tensor<Half>(layer.shape);
      layer.grad32 = Tensor<float>(layer.shape);
    }
    return true;
  }

  StepRecord train_step(std::size_t step, const Tensor<Half>& x,
                        const Tensor<float>& y) {
    StepRecord rec;
    rec.step = step;
    rec.loss = forward(x, y);
    backward();
    rec.skipped = !optimizer_step();
    rec.grad_norm = grad_norm_;
    return rec;
  }

  const DenseModelState& state() const { return state_; }
  std::uint64_t skipped_steps() const { return skipped_steps_; }
  float last_grad_norm() const { return grad_norm_; }

 private:
  std::vector<LinearParamView<Half>> param_views() const {
    std::vector<LinearParamView<Half>> views(spec_.layers.size());
    for (std::size_t l = 0; l < spec_.layers.size(); ++l) {
      views[l].weight = &state_.layers[layout_.weight[l]].theta16;
      if (layout_.bias[l] != detail::ParamLayout::npos) {
        views[l].bias = &state_.layers[layout_.bias[l]].theta16;
      }
    }
    return views;
  }
  std::size_t param_index(std::size_t l, bool is_bias) const {
    return is_bias ? layout_.bias[l] : layout_.weight[l];
  }

  ModelSpec spec_;
  OptimizerConfig cfg_;
  DenseModelState state_;
  detail::ParamLayout layout_;
  AdamScalars adam_;
  MlpTrace<Half> trace_;
  Tensor<Half> dpred_;
  float loss_ = 0.0f;
  float grad_norm_ = 0.0f;
  bool grads_ready_ = false;
  std::uint64_t skipped_steps_ = 0;
};

// Runs `steps` training steps; halts early on a non-finite loss.
template <typename Trainer>
TrainResult run_training(Trainer& trainer, const Dataset& data,
                         std::size_t steps, std::size_t batch) {
  if (batch == 0 || batch > data.n_samples) {
    throw ParameterError("batch size must lie in [1, n_samples]");
  }
  TrainResult result;
  result.records.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    const Tensor<Half> x = batch_features(data, s, batch);
    const Tensor<float> y = batch_targets(data, s, batch);
    StepRecord rec = trainer.train_step(s, x, y);
    result.records.push_back(rec);
    if (!std::isfinite(rec.loss)) {
      result.diverged = true;
      break;
    }
  }
  return result;
}

}  // namespace samo

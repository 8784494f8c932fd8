// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <boost/rational.hpp>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "samo/error.hpp"
#include "samo/prune.hpp"
#include "samo/tensor.hpp"

namespace samo {

using Rational = boost::rational<long long>;

// Compressed model state of one layer: theta32, both gradient precisions
// and the Adam moments hold values only for the unpruned parameters, and
// all five buffers share one index set.
struct CompressedState {
  std::shared_ptr<const PrunedIndexSet> ind;
  std::vector<float> theta32;
  std::vector<Half> grad16;  // zeros when no backward pass is pending
  std::vector<float> grad32;
  std::vector<float> adam_m;
  std::vector<float> adam_v;

  std::size_t count() const { return ind ? ind->count() : 0; }
};

// One parameter tensor: dense half-precision copy for compute, plus the
// compressed everything-else.
struct LayerState {
  std::string layer_id;
  std::vector<std::size_t> shape;
  Tensor<Half> theta16;  // dense, zeros at pruned slots
  CompressedState comp;
};

struct ModelState {
  std::vector<LayerState> layers;

  std::uint64_t total_params() const {
    std::uint64_t n = 0;
    for (const auto& l : layers) n += l.theta16.size();
    return n;
  }
  std::uint64_t total_unpruned() const {
    std::uint64_t n = 0;
    for (const auto& l : layers) n += l.comp.count();
    return n;
  }
};

// Gather: output[k] = dense_flat[ind.indices[k]].
template <typename T>
std::vector<T> compress(const Tensor<T>& dense, const PrunedIndexSet& ind) {
  if (dense.size() != ind.dense_len) {
    throw DimensionError("compress: dense length does not match index set");
  }
  std::vector<T> out(ind.indices.size());
  const auto flat = dense.flat();
  for (std::size_t k = 0; k < ind.indices.size(); ++k) {
    out[k] = flat[ind.indices[k]];
  }
  return out;
}

// Scatter, the inverse of compress: zeros everywhere except at ind.
template <typename T>
Tensor<T> expand(std::span<const T> values, const PrunedIndexSet& ind,
                 std::vector<std::size_t> shape) {
  if (values.size() != ind.indices.size()) {
    throw DimensionError("expand: value count does not match index set");
  }
  if (numel(shape) != ind.dense_len) {
    throw DimensionError("expand: shape does not match index set dense length");
  }
  Tensor<T> out(std::move(shape));
  const auto flat = out.flat();
  for (std::size_t k = 0; k < ind.indices.size(); ++k) {
    flat[ind.indices[k]] = values[k];
  }
  return out;
}

// Analytical model-state memory in bytes, exact rational arithmetic.
// Dense mixed precision costs 20*phi; the compressed layout costs
// 24*(1-p)*phi + 2*phi, so the saving is (24p - 6)*phi -- negative below
// the 0.25 break-even sparsity, which the report exposes rather than
// rejects.
struct MemoryReport {
  long long phi = 0;
  Rational p;
  Rational bytes_default;
  Rational bytes_samo;
  Rational bytes_saved;
  Rational savings_fraction;
};

inline double to_double(const Rational& r) {
  return static_cast<double>(r.numerator()) / static_cast<double>(r.denominator());
}

inline MemoryReport memory_model(long long phi, Rational p) {
  if (phi < 0) throw ParameterError("phi must be non-negative");
  if (p < Rational(0) || p > Rational(1)) {
    throw ParameterError("sparsity must lie in [0, 1]");
  }
  MemoryReport r;
  r.phi = phi;
  r.p = p;
  r.bytes_default = Rational(20) * phi;
  r.bytes_samo = Rational(24) * (Rational(1) - p) * phi + Rational(2) * phi;
  r.bytes_saved = (Rational(24) * p - Rational(6)) * phi;
  r.savings_fraction = (Rational(24) * p - Rational(6)) / Rational(20);
  return r;
}

// Floating-point flavour for the cost simulator.
inline double model_state_bytes(double phi, double p, bool samo) {
  return samo ? 24.0 * (1.0 - p) * phi + 2.0 * phi : 20.0 * phi;
}

// peak accounting includes the transient compressed half copy made during
// the parameter downcast; steady_state does not.
enum class Accounting { steady_state, peak };

inline std::uint64_t measured_bytes(const ModelState& state,
                                    Accounting mode = Accounting::peak) {
  std::uint64_t total = 0;
  for (const auto& layer : state.layers) {
    const std::uint64_t nnz = layer.comp.count();
    total += 2 * layer.theta16.size();  // dense theta16
    total += 2 * nnz;                   // grad16
    total += 4 * nnz;                   // theta32
    total += 4 * nnz;                   // grad32
    total += 8 * nnz;                   // adam_m + adam_v
    total += 4 * nnz;                   // shared 32-bit index tensor
    if (mode == Accounting::peak) {
      total += 2 * nnz;  // transient half copy in the optimizer downcast
    }
  }
  return total;
}

// Builds one layer's state from dense single-precision initial values.
inline LayerState make_layer_state(const Tensor<float>& init,
                                   std::shared_ptr<const PrunedIndexSet> ind) {
  LayerState layer;
  layer.layer_id = ind->layer_id;
  layer.shape = init.shape();
  layer.comp.ind = ind;
  layer.comp.theta32 = compress(init, *ind);
  layer.comp.grad16.assign(ind->count(), Half{});
  layer.comp.grad32.assign(ind->count(), 0.0f);
  layer.comp.adam_m.assign(ind->count(), 0.0f);
  layer.comp.adam_v.assign(ind->count(), 0.0f);

  std::vector<Half> theta16c(ind->count());
  for (std::size_t k = 0; k < theta16c.size(); ++k) {
    theta16c[k] = Half(layer.comp.theta32[k]);
  }
  layer.theta16 = expand<Half>(theta16c, *ind, init.shape());
  return layer;
}

// Structural and value invariants of a ModelState; throws on violation.
inline void check_state_invariants(const ModelState& state) {
  for (const auto& layer : state.layers) {
    const auto& c = layer.comp;
    if (!c.ind) throw StateError("layer has no index set: " + layer.layer_id);
    const std::size_t n = c.ind->count();
    if (c.theta32.size() != n || c.grad16.size() != n || c.grad32.size() != n ||
        c.adam_m.size() != n || c.adam_v.size() != n) {
      throw StateError("compressed buffer length mismatch: " + layer.layer_id);
    }
    if (layer.theta16.size() != c.ind->dense_len ||
        numel(layer.shape) != c.ind->dense_len) {
      throw StateError("dense length mismatch: " + layer.layer_id);
    }
    // theta16 == expand(cast(theta32)) and exact zeros at pruned slots.
    std::size_t k = 0;
    for (std::size_t i = 0; i < layer.theta16.size(); ++i) {
      if (k < n && c.ind->indices[k] == i) {
        if (layer.theta16[i].bits() != Half(c.theta32[k]).bits()) {
          throw StateError("theta16 disagrees with theta32: " + layer.layer_id);
        }
        ++k;
      } else if (layer.theta16[i].bits() != 0) {
        throw StateError("nonzero theta16 at pruned slot: " + layer.layer_id);
      }
    }
  }
}

}  // namespace samo

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "samo/error.hpp"
#include "samo/tensor.hpp"

namespace samo {

// Sorted 1-D linearized indices of the unpruned parameters of one layer.
// A 1-D view of an N-d tensor needs one integer per non-zero instead of N,
// and 32 bits cover every layer below 2^32 elements.
struct PrunedIndexSet {
  std::string layer_id;
  std::uint64_t dense_len = 0;
  std::vector<std::uint32_t> indices;  // strictly ascending, < dense_len

  std::size_t count() const { return indices.size(); }
};

// Row-major linear index per coordinate; output sorted ascending.
inline std::vector<std::uint64_t> linearize(
    std::span<const std::vector<std::uint64_t>> coords,
    std::span<const std::size_t> shape) {
  std::vector<std::uint64_t> out;
  out.reserve(coords.size());
  for (const auto& c : coords) {
    if (c.size() != shape.size()) {
      throw IndexError("coordinate rank does not match shape");
    }
    std::uint64_t idx = 0;
    for (std::size_t d = 0; d < shape.size(); ++d) {
      if (c[d] >= shape[d]) throw IndexError("coordinate out of bounds");
      idx = idx * shape[d] + c[d];
    }
    out.push_back(idx);
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<std::uint64_t> delinearize(std::uint64_t index,
                                              std::span<const std::size_t> shape) {
  if (index >= numel(shape)) throw IndexError("linear index out of bounds");
  std::vector<std::uint64_t> c(shape.size());
  for (std::size_t d = shape.size(); d-- > 0;) {
    c[d] = index % shape[d];
    index /= shape[d];
  }
  return c;
}

enum class PruneScope { per_layer, global };

// One parameter tensor as seen by the pruner. Biases (and other
// one-per-feature tensors) are marked non-prunable by the caller.
struct LayerParams {
  std::string layer_id;
  Tensor<float> values;
  bool prunable = true;
};

namespace detail {

// Fixed convention: round((1-p) * n) with ties going up. The tiny nudge
// keeps decimal sparsities (0.3 * 5 and friends) on the exact-arithmetic
// side of the .5 boundary.
inline std::size_t unpruned_count(double p, std::uint64_t n) {
  const double exact = (1.0 - p) * static_cast<double>(n);
  return static_cast<std::size_t>(std::floor(exact + 0.5 + 1e-9));
}

struct RankedParam {
  float magnitude;
  std::uint32_t layer;  // position in the input list
  std::uint32_t index;
};

inline bool rank_before(const RankedParam& a, const RankedParam& b) {
  if (a.magnitude != b.magnitude) return a.magnitude > b.magnitude;
  if (a.layer != b.layer) return a.layer < b.layer;
  return a.index < b.index;  // tie-break: lower linear index wins
}

}  // namespace detail

// Keeps the (1-p) fraction of largest-|value| parameters. per_layer scope
// thresholds each prunable layer on its own; global ranks all prunable
// parameters together (per-layer counts then vary, the total is fixed).
// Non-prunable layers keep every index.
inline std::vector<PrunedIndexSet> magnitude_prune(
    std::span<const LayerParams> layers, double p,
    PruneScope scope = PruneScope::per_layer) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ParameterError("sparsity must lie in [0, 1)");
  }
  for (const auto& layer : layers) {
    if (layer.values.size() >= (std::uint64_t{1} << 32)) {
      throw ParameterError("layer too large for 32-bit indices: " + layer.layer_id);
    }
  }

  std::vector<PrunedIndexSet> out(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    out[l].layer_id = layers[l].layer_id;
    out[l].dense_len = layers[l].values.size();
  }

  auto keep_all = [&](std::size_t l) {
    out[l].indices.resize(layers[l].values.size());
    std::iota(out[l].indices.begin(), out[l].indices.end(), 0u);
  };

  if (scope == PruneScope::per_layer) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (!layers[l].prunable) {
        keep_all(l);
        continue;
      }
      const auto flat = layers[l].values.flat();
      std::vector<std::uint32_t> order(flat.size());
      std::iota(order.begin(), order.end(), 0u);
      const std::size_t keep = detail::unpruned_count(p, flat.size());
      std::partial_sort(order.begin(), order.begin() + keep, order.end(),
                        [&](std::uint32_t a, std::uint32_t b) {
                          const float ma = std::fabs(flat[a]);
                          const float mb = std::fabs(flat[b]);
                          if (ma != mb) return ma > mb;
                          return a < b;
                        });
      out[l].indices.assign(order.begin(), order.begin() + keep);
      std::sort(out[l].indices.begin(), out[l].indices.end());
    }
    return out;
  }

  // Global scope: one ranking across all prunable layers.
  std::vector<detail::RankedParam> pool;
  std::uint64_t prunable_total = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (!layers[l].prunable) {
      keep_all(l);
      continue;
    }
    prunable_total += layers[l].values.size();
    const auto flat = layers[l].values.flat();
    for (std::size_t i = 0; i < flat.size(); ++i) {
      pool.push_back({std::fabs(flat[i]), static_cast<std::uint32_t>(l),
                      static_cast<std::uint32_t>(i)});
    }
  }
  const std::size_t keep = detail::unpruned_count(p, prunable_total);
  std::partial_sort(pool.begin(), pool.begin() + keep, pool.end(),
                    detail::rank_before);
  for (std::size_t i = 0; i < keep; ++i) {
    out[pool[i].layer].indices.push_back(pool[i].index);
  }
  for (auto& set : out) {
    std::sort(set.indices.begin(), set.indices.end());
  }
  return out;
}

}  // namespace samo

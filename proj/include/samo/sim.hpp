// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "samo/error.hpp"
#include "samo/store.hpp"

namespace samo {

struct ClusterSpec {
  int gpus = 1;                   // G
  double mem_cap_bytes = 0;       // per GPU
  double p2p_bw = 0;              // bytes/second
  double coll_bw = 0;             // bytes/second
  double latency = 0;             // seconds per message
  double flops_per_gpu = 0;       // peak; informational

  void validate() const {
    if (gpus < 1) throw ConfigError("cluster needs at least one GPU");
    if (mem_cap_bytes <= 0 || p2p_bw <= 0 || coll_bw <= 0 || latency < 0 ||
        flops_per_gpu < 0) {
      throw ConfigError("cluster quantities must be positive");
    }
  }
};

struct WorkloadSpec {
  std::int64_t phi = 0;           // parameter count before pruning
  double sparsity = 0.0;          // p
  std::int64_t batch = 0;         // B (global)
  std::int64_t microbatch = 1;    // mbs
  double t_f = 0;                 // full-model forward per microbatch, seconds
  double t_b = 0;                 // full-model backward per microbatch, seconds
  double act_msg_bytes = 0;       // point-to-point activation message size
  double overhead_frac = 0.10;    // gradient-compression cost, fraction of backward compute
  double act_mem_bytes = 0;       // flat per-GPU activation memory term
  double p2p_overlap = 0.0;       // fraction of transmission hidden by compute

  void validate() const {
    if (phi <= 0 || batch <= 0 || microbatch <= 0) {
      throw ConfigError("phi, batch and microbatch must be positive");
    }
    if (!(sparsity >= 0.0 && sparsity < 1.0)) {
      throw ConfigError("sparsity must lie in [0, 1)");
    }
    if (t_f <= 0 || t_b <= 0) throw ConfigError("t_f and t_b must be positive");
    if (overhead_frac < 0 || act_msg_bytes < 0 || act_mem_bytes < 0) {
      throw ConfigError("workload byte/overhead terms must be non-negative");
    }
    if (p2p_overlap < 0.0 || p2p_overlap > 1.0) {
      throw ConfigError("p2p_overlap must lie in [0, 1]");
    }
  }
};

struct ParallelConfig {
  int g_inter = 1;
  int g_data = 1;
};

struct BatchTimeBreakdown {
  double compute = 0;
  double p2p = 0;
  double bubble = 0;
  double collective = 0;
  double overhead = 0;
  double total = 0;
};

inline std::vector<int> divisors(int g) {
  std::vector<int> out;
  for (int d = 1; d <= g; ++d) {
    if (g % d == 0) out.push_back(d);
  }
  return out;
}

// Idle time per GPU at the start and end of a batch:
// (t_f + t_b) * (1 - 1/G_inter), evaluated as a single division so that
// it lands on the same double the event simulation produces.
inline double bubble_time(int g_inter, double t_f, double t_b) {
  if (g_inter < 1) throw ParameterError("g_inter must be >= 1");
  return (t_f + t_b) * static_cast<double>(g_inter - 1) /
         static_cast<double>(g_inter);
}

// Four point-to-point messages per microbatch per GPU, each costing
// latency + size/bandwidth; B/(mbs * G_data) microbatches per GPU.
inline double send_time(std::int64_t batch, std::int64_t microbatch, int g,
                        int g_inter, double msg_bytes, double bw,
                        double latency) {
  if (g_inter < 1 || g % g_inter != 0) {
    throw ConfigError("g_inter must divide the GPU count");
  }
  const std::int64_t g_data = g / g_inter;
  if (batch % (microbatch * g_data) != 0) {
    throw ConfigError("batch must be divisible by microbatch * g_data");
  }
  const std::int64_t n_microbatches = batch / (microbatch * g_data);
  return 4.0 * static_cast<double>(n_microbatches) * (latency + msg_bytes / bw);
}

// Ring all-reduce: 2(G-1)/G volume term plus 2(G-1) latency hops.
inline double allreduce_time(double msg_elements, double bytes_per_element,
                             int g_data, double bw, double latency) {
  if (g_data < 1) throw ParameterError("g_data must be >= 1");
  if (g_data == 1) return 0.0;
  const double gd = static_cast<double>(g_data);
  return 2.0 * (gd - 1.0) / gd * (msg_elements * bytes_per_element) / bw +
         2.0 * (gd - 1.0) * latency;
}

// ---------------------------------------------------------------------------
// Event-driven 1F1B pipeline with uniform stage times.

struct PipelineEvent {
  int gpu = 0;
  int microbatch = 0;  // -1 for idle rows in CSV dumps
  char kind = 'F';     // 'F' or 'B'
  double start = 0;
  double end = 0;
};

struct PipelineResult {
  double makespan = 0;
  std::vector<double> busy;    // per GPU
  std::vector<double> bubble;  // makespan - busy, per GPU
  std::vector<PipelineEvent> events;
};

// Rules: stage i may run the forward of microbatch m once the upstream
// activation has arrived, capped at G_inter - i microbatches in flight;
// a backward runs once the downstream gradient (or, on the last stage,
// the stage's own forward) is done. When both are ready the backward
// goes first. This reproduces the one-forward-one-backward steady state.
inline PipelineResult simulate_pipeline(int g_inter, int n_microbatches,
                                        double t_f_stage, double t_b_stage) {
  if (g_inter < 1 || n_microbatches < 1) {
    throw ParameterError("g_inter and n_microbatches must be >= 1");
  }
  const int g = g_inter, n = n_microbatches;
  std::vector<double> free_at(g, 0.0);
  std::vector<int> next_fwd(g, 0), next_bwd(g, 0);
  // fwd_done[i][m] / bwd_done[i][m]: completion times, -1 = not yet run.
  std::vector<std::vector<double>> fwd_done(g, std::vector<double>(n, -1.0));
  std::vector<std::vector<double>> bwd_done(g, std::vector<double>(n, -1.0));

  PipelineResult result;
  result.busy.assign(g, 0.0);

  int remaining = 2 * g * n;
  while (remaining > 0) {
    // Pick, over all stages, the runnable task with the earliest start.
    int best_stage = -1;
    bool best_is_bwd = false;
    double best_start = std::numeric_limits<double>::infinity();
    for (int i = 0; i < g; ++i) {
      const int mb = next_bwd[i];
      if (mb < n) {
        const double dep = (i == g - 1) ? fwd_done[i][mb] : bwd_done[i + 1][mb];
        if (dep >= 0.0) {
          const double start = std::max(free_at[i], dep);
          if (start < best_start || (start == best_start && !best_is_bwd)) {
            best_start = start;
            best_stage = i;
            best_is_bwd = true;
          }
        }
      }
      const int mf = next_fwd[i];
      if (mf < n && (next_fwd[i] - next_bwd[i]) < (g - i)) {
        const double dep = (i == 0) ? 0.0 : fwd_done[i - 1][mf];
        if (dep >= 0.0) {
          const double start = std::max(free_at[i], dep);
          if (start < best_start) {
            best_start = start;
            best_stage = i;
            best_is_bwd = false;
          }
        }
      }
    }
    if (best_stage < 0) throw StateError("pipeline schedule stalled");
    const int i = best_stage;
    const double dur = best_is_bwd ? t_b_stage : t_f_stage;
    const double end = best_start + dur;
    if (best_is_bwd) {
      bwd_done[i][next_bwd[i]] = end;
      result.events.push_back({i, next_bwd[i], 'B', best_start, end});
      ++next_bwd[i];
    } else {
      fwd_done[i][next_fwd[i]] = end;
      result.events.push_back({i, next_fwd[i], 'F', best_start, end});
      ++next_fwd[i];
    }
    free_at[i] = end;
    result.busy[i] += dur;
    --remaining;
  }

  result.makespan = *std::max_element(free_at.begin(), free_at.end());
  result.bubble.resize(g);
  for (int i = 0; i < g; ++i) {
    result.bubble[i] = result.makespan - result.busy[i];
  }
  return result;
}

// ---------------------------------------------------------------------------
// Memory feasibility and the per-batch breakdown.

// Smallest divisor of G whose per-GPU model-state share plus the activation
// term fits under the memory cap.
inline int min_feasible_g_inter(double phi, double p, bool samo_enabled,
                                const ClusterSpec& cluster, double act_term) {
  cluster.validate();
  const double state_bytes = model_state_bytes(phi, samo_enabled ? p : 0.0,
                                               samo_enabled);
  for (int d : divisors(cluster.gpus)) {
    if (state_bytes / d + act_term <= cluster.mem_cap_bytes) {
      return d;
    }
  }
  throw InfeasibleError("model state does not fit at any g_inter");
}

struct BreakdownResult {
  ParallelConfig config;
  BatchTimeBreakdown times;
};

// Per-GPU batch time decomposition. Compute is each GPU's busy share
// B*(t_f+t_b)/(mbs*G) -- invariant across factorizations of G; the
// communication terms are what moves when g_inter changes. Compression
// overhead is charged as a fraction of per-GPU backward compute.
inline BreakdownResult batch_breakdown(const WorkloadSpec& workload,
                                       const ClusterSpec& cluster,
                                       bool samo_enabled,
                                       int forced_g_inter = 0) {
  workload.validate();
  cluster.validate();
  BreakdownResult r;
  r.config.g_inter =
      forced_g_inter > 0
          ? forced_g_inter
          : min_feasible_g_inter(static_cast<double>(workload.phi),
                                 workload.sparsity, samo_enabled, cluster,
                                 workload.act_mem_bytes);
  if (cluster.gpus % r.config.g_inter != 0) {
    throw ConfigError("g_inter must divide the GPU count");
  }
  r.config.g_data = cluster.gpus / r.config.g_inter;
  if (workload.batch % (workload.microbatch * r.config.g_data) != 0) {
    throw ConfigError("batch not divisible by microbatch * g_data");
  }
  const double n_mb = static_cast<double>(
      workload.batch / (workload.microbatch * r.config.g_data));

  auto& t = r.times;
  t.compute = n_mb * (workload.t_f + workload.t_b) / r.config.g_inter;
  t.bubble = bubble_time(r.config.g_inter, workload.t_f, workload.t_b);
  t.p2p = (1.0 - workload.p2p_overlap) *
          send_time(workload.batch, workload.microbatch, cluster.gpus,
                    r.config.g_inter, workload.act_msg_bytes, cluster.p2p_bw,
                    cluster.latency);
  const double phi = static_cast<double>(workload.phi);
  const double elements =
      (samo_enabled ? (1.0 - workload.sparsity) : 1.0) * (phi / r.config.g_inter);
  t.collective = allreduce_time(elements, 2.0, r.config.g_data, cluster.coll_bw,
                                cluster.latency);
  const double backward_compute = n_mb * workload.t_b / r.config.g_inter;
  t.overhead = samo_enabled ? workload.overhead_frac * backward_compute : 0.0;
  t.total = t.compute + t.p2p + t.bubble + t.collective + t.overhead;
  return r;
}

}  // namespace samo

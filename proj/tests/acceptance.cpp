// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one line per criterion, nonzero exit when any fails.
// Each criterion carries a wall-clock budget that is enforced, not advisory.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "samo/samo.hpp"
#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;

namespace {

struct Failure {
  std::string message;
};

void check(bool ok, const std::string& what) {
  if (!ok) throw Failure{what};
}

double rel_diff(double a, double b) {
  const double denom = std::max(std::fabs(a), std::fabs(b));
  return denom == 0.0 ? 0.0 : std::fabs(a - b) / denom;
}

// --------------------------------------------------------------------------

void criterion_memory_model_exactness() {
  using samo::Rational;
  check(samo::memory_model(1, Rational(9, 10)).savings_fraction ==
            Rational(78, 100),
        "savings at p=0.9 != 0.78");
  check(samo::memory_model(1, Rational(8, 10)).savings_fraction ==
            Rational(66, 100),
        "savings at p=0.8 != 0.66");
  check(samo::memory_model(1, Rational(1, 4)).savings_fraction == Rational(0),
        "savings at p=0.25 != 0 (break-even)");
  for (long long phi : {1LL, 1000LL, 2'700'000'000LL}) {
    for (int k = 0; k <= 20; ++k) {
      const auto r = samo::memory_model(phi, Rational(k, 20));
      check(r.bytes_default - r.bytes_samo == r.bytes_saved,
            "bytes identity violated");
      check(r.bytes_default == Rational(20) * phi, "default is not 20*phi");
    }
  }
}

void criterion_accounting_agreement() {
  std::mt19937_64 eng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = static_cast<int>(eng() % 20);  // p = k/20, divisible lengths
    const std::size_t n_layers = 1 + eng() % 3;
    samo::ModelState state;
    long long phi = 0;
    for (std::size_t l = 0; l < n_layers; ++l) {
      const std::size_t len = 20 * (1 + eng() % 30);
      phi += static_cast<long long>(len);
      samo::Tensor<float> init({len});
      for (auto& v : init.flat()) {
        v = (static_cast<float>(eng() >> 40) * 0x1.0p-24f - 0.5f) * 2.0f;
      }
      const std::vector<samo::LayerParams> layer = {
          {"w" + std::to_string(l), init, true}};
      auto sets = samo::magnitude_prune(layer, static_cast<double>(k) / 20.0);
      state.layers.push_back(samo::make_layer_state(
          init,
          std::make_shared<const samo::PrunedIndexSet>(std::move(sets[0]))));
    }
    const auto report = samo::memory_model(phi, samo::Rational(k, 20));
    check(report.bytes_samo.denominator() == 1, "bytes_samo not integral");
    check(samo::measured_bytes(state, samo::Accounting::peak) ==
              static_cast<std::uint64_t>(report.bytes_samo.numerator()),
          "measured_bytes != memory_model at phi=" + std::to_string(phi) +
              " p=" + std::to_string(k) + "/20");
  }
}

void criterion_compression_round_trip() {
  std::mt19937_64 eng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::size_t> shape(1 + eng() % 3);
    for (auto& e : shape) e = 1 + eng() % 6;
    const std::size_t n = samo::numel(shape);
    samo::PrunedIndexSet set;
    set.layer_id = "w";
    set.dense_len = n;
    for (std::uint32_t i = 0; i < n; ++i) {
      if (eng() % 3) set.indices.push_back(i);
    }
    samo::Tensor<samo::Half> x(shape);
    for (auto& v : x.flat()) {
      v = samo::Half((static_cast<float>(eng() >> 40) * 0x1.0p-24f - 0.5f) * 8.0f);
    }
    const auto values = samo::compress(x, set);
    const auto expanded = samo::expand<samo::Half>(values, set, shape);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool kept = k < set.indices.size() && set.indices[k] == i;
      if (kept) {
        check(expanded.flat()[i].bits() == x.flat()[i].bits(),
              "kept value changed in round trip");
        ++k;
      } else {
        check(expanded.flat()[i].bits() == 0, "pruned slot not zero");
      }
    }
    const auto back = samo::compress(expanded, set);
    for (std::size_t j = 0; j < back.size(); ++j) {
      check(back[j].bits() == values[j].bits(), "compress(expand(v)) != v");
    }
  }
}

void criterion_training_equivalence() {
  const samo::ModelSpec spec = samo::make_mlp({16, 32, 16, 4});
  samo::OptimizerConfig cfg;
  cfg.learning_rate = 3e-3f;
  for (double p : {0.0, 0.5, 0.8, 0.9}) {
    for (std::uint64_t seed : {7ull, 21ull, 1234ull}) {
      auto built = samo::build_states(spec, seed, p);
      samo::SamoTrainer samo_t(spec, cfg, std::move(built.samo));
      samo::ReferenceTrainer ref_t(spec, cfg, std::move(built.reference));
      const samo::Dataset data =
          samo::make_synthetic_regression(seed + 1, 256, 16, 4);

      const auto run_s = samo::run_training(samo_t, data, 200, 32);
      const auto run_r = samo::run_training(ref_t, data, 200, 32);
      check(!run_s.diverged && !run_r.diverged, "training diverged");
      check(run_s.records.size() == 200 && run_r.records.size() == 200,
            "wrong trajectory length");
      for (std::size_t s = 0; s < 200; ++s) {
        check(rel_diff(run_s.records[s].loss, run_r.records[s].loss) <= 1e-6,
              "loss deviates at step " + std::to_string(s) + " (p=" +
                  std::to_string(p) + ")");
      }
      const auto& sl = samo_t.state().layers;
      const auto& rl = ref_t.state().layers;
      for (std::size_t i = 0; i < sl.size(); ++i) {
        const auto& ind = *sl[i].comp.ind;
        for (std::size_t k = 0; k < ind.indices.size(); ++k) {
          check(rel_diff(sl[i].comp.theta32[k],
                         rl[i].theta32.flat()[ind.indices[k]]) <= 1e-6,
                "final parameters deviate (p=" + std::to_string(p) + ")");
        }
      }
    }
  }
}

void criterion_gradient_correctness() {
  // Scenario conditioned so single-precision finite differences resolve
  // every live coordinate: see tests/train_test.cpp GradientCheck.
  const samo::ModelSpec spec = samo::make_mlp({4, 8, 2});
  auto init = samo::init_params(spec, 21);
  std::vector<samo::Tensor<float>> tensors;
  for (auto& p : init) tensors.push_back(std::move(p.values));
  for (auto& v : tensors[0].flat()) v *= 0.5f;
  for (auto& v : tensors[1].flat()) v = 1.0f;
  for (auto& v : tensors[2].flat()) v = 0.2f + std::fabs(v);
  std::vector<samo::LinearParamView<float>> views;
  std::size_t next = 0;
  std::vector<std::size_t> weight_slot, bias_slot;
  for (const auto& layer : spec.layers) {
    samo::LinearParamView<float> v;
    v.weight = &tensors[next];
    weight_slot.push_back(next++);
    if (layer.has_bias) {
      v.bias = &tensors[next];
      bias_slot.push_back(next++);
    } else {
      bias_slot.push_back(static_cast<std::size_t>(-1));
    }
    views.push_back(v);
  }

  samo::Tensor<float> x({1, 4}, {1.0f, -1.0f, 0.75f, -0.75f});
  auto at_start = samo::mlp_forward<float>(spec, views, x);
  samo::Tensor<float> y({1, 2});
  for (std::size_t i = 0; i < y.size(); ++i) {
    y.flat()[i] = at_start.prediction().flat()[i] - 0.25f;
  }

  auto loss_at = [&]() {
    auto trace = samo::mlp_forward<float>(spec, views, x);
    return samo::loss_and_grad<float>(spec.loss, trace.prediction(), y, 1.0f)
        .loss;
  };
  auto trace = samo::mlp_forward<float>(spec, views, x);
  auto lg = samo::loss_and_grad<float>(spec.loss, trace.prediction(), y, 1.0f);
  std::vector<samo::Tensor<float>> grads(tensors.size());
  samo::mlp_backward<float>(
      spec, views, trace, lg.dpred,
      [&](std::size_t l, bool is_bias, samo::Tensor<float>&& g) {
        grads[is_bias ? bias_slot[l] : weight_slot[l]] = std::move(g);
      });

  const float h = 1e-3f;
  std::size_t total = 0, good = 0;
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    for (std::size_t i = 0; i < tensors[t].size(); ++i) {
      float& v = tensors[t].flat()[i];
      const float save = v;
      v = save + h;
      const float lp = loss_at();
      v = save - h;
      const float lm = loss_at();
      v = save;
      const double fd = (static_cast<double>(lp) - lm) / (2.0 * h);
      const double an = grads[t].flat()[i];
      const double denom = std::max(std::fabs(fd), std::fabs(an));
      ++total;
      if (denom < 1e-6 || std::fabs(an - fd) / denom <= 1e-3) ++good;
    }
  }
  const double frac = static_cast<double>(good) / static_cast<double>(total);
  check(frac >= 0.95, "only " + std::to_string(good) + "/" +
                          std::to_string(total) +
                          " coordinates inside 1e-3 relative");
}

void criterion_pipeline_fidelity() {
  for (int g = 1; g <= 8; ++g) {
    for (int n = g; n <= 32; ++n) {
      const auto r = samo::simulate_pipeline(g, n, 1.0, 2.0);
      const double analytic = samo::bubble_time(g, g * 1.0, g * 2.0);
      for (int i = 0; i < g; ++i) {
        check(r.bubble[i] == analytic,
              "bubble mismatch at g=" + std::to_string(g) +
                  " n=" + std::to_string(n));
      }
    }
  }
  const auto fig = samo::simulate_pipeline(3, 5, 1.0, 2.0);
  for (int i = 0; i < 3; ++i) {
    check(fig.bubble[i] == 6.0, "three-stage illustration bubble != 6");
  }
}

void criterion_monotonicity_suite() {
  for (int g : {16, 64, 512}) {
    double prev_bubble = -1.0, prev_send = -1.0;
    for (int d : samo::divisors(g)) {
      const double bub = samo::bubble_time(d, 0.05, 0.1);
      const double snd = samo::send_time(2LL * g, 1, g, d, 1e6, 12.5e9, 5e-6);
      check(bub >= prev_bubble, "bubble not monotone at G=" + std::to_string(g));
      check(snd >= prev_send, "send not monotone at G=" + std::to_string(g));
      prev_bubble = bub;
      prev_send = snd;
    }
  }
  double prev_delta = std::numeric_limits<double>::infinity();
  for (int g = 2; g <= 64; ++g) {
    const double delta =
        samo::bubble_time(g, 1.0, 2.0) - samo::bubble_time(g - 1, 1.0, 2.0);
    check(delta > 0.0 && delta < prev_delta, "bubble gains not diminishing");
    prev_delta = delta;
  }
  for (double p : {0.5, 0.8, 0.9}) {
    const double phi = 2.7e9;
    for (int g_inter : {1, 2, 4, 8}) {
      const double dense = phi / g_inter;
      const double compressed = (1.0 - p) * (phi / g_inter);
      check(compressed == (1.0 - p) * dense,
            "compressed all-reduce volume is not (1-p) x dense");
    }
  }
}

samo::ClusterSpec scenario_cluster(int gpus) {
  samo::ClusterSpec c;
  c.gpus = gpus;
  c.mem_cap_bytes = 16e9;
  c.p2p_bw = 12.5e9;
  c.coll_bw = 12.5e9;
  c.latency = 5e-6;
  c.flops_per_gpu = 125e12;
  return c;
}

samo::WorkloadSpec scenario_workload() {
  samo::WorkloadSpec w;
  w.phi = 2'700'000'000;
  w.sparsity = 0.9;
  w.batch = 512;
  w.microbatch = 1;
  w.t_f = 0.05;
  w.t_b = 0.1;
  w.act_msg_bytes = 8e6;
  w.overhead_frac = 0.10;
  w.act_mem_bytes = 1e9;
  return w;
}

void criterion_end_to_end_scenario() {
  const samo::WorkloadSpec w = scenario_workload();
  double prev_fraction = 0.0;
  for (int g : {128, 256, 512}) {
    const samo::ClusterSpec c = scenario_cluster(g);
    const auto dense = samo::batch_breakdown(w, c, false);
    const auto compressed = samo::batch_breakdown(w, c, true);
    check(dense.config.g_inter == 4, "dense should need g_inter=4");
    check(compressed.config.g_inter == 1, "compressed should fit at g_inter=1");
    const double dense_comm =
        dense.times.p2p + dense.times.bubble + dense.times.collective;
    const double comp_comm = compressed.times.p2p + compressed.times.bubble +
                             compressed.times.collective;
    check(comp_comm < dense_comm,
          "communication not reduced at G=" + std::to_string(g));
    const double fraction =
        (dense.times.total - compressed.times.total) / dense.times.total;
    check(fraction > prev_fraction,
          "speedup fraction not growing at G=" + std::to_string(g));
    prev_fraction = fraction;
    std::cout << "      G=" << g << ": comm " << samo::format_number(dense_comm)
              << "s -> " << samo::format_number(comp_comm)
              << "s, batch speedup fraction "
              << samo::format_number(fraction) << "\n";
  }
}

// --------------------------------------------------------------------------
// CLI determinism.

std::string cli_path() {
  if (const char* env = std::getenv("SAMO_CLI")) return env;
  return SAMO_CLI_PATH;
}

int run_cli(const std::string& args, const std::string& log) {
  const std::string cmd =
      "\"" + cli_path() + "\" " + args + " > \"" + log + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return status == -1 ? -1 : WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion_cli_determinism() {
  const fs::path dir =
      fs::temp_directory_path() / ("samo_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  struct Cleanup {
    fs::path d;
    ~Cleanup() { fs::remove_all(d); }
  } cleanup{dir};

  const std::string scenario = (dir / "s.json").string();
  samo::json j = {{"cluster",
                   {{"gpus", 512},
                    {"mem_cap_bytes", 16e9},
                    {"p2p_bw", 12.5e9},
                    {"coll_bw", 12.5e9},
                    {"latency", 5e-6},
                    {"flops_per_gpu", 125e12}}},
                  {"workload",
                   {{"phi", 2.7e9},
                    {"sparsity", 0.9},
                    {"batch", 512},
                    {"microbatch", 1},
                    {"t_f", 0.05},
                    {"t_b", 0.1},
                    {"act_msg_bytes", 8e6},
                    {"act_mem_bytes", 1e9}}},
                  {"mode", "both"}};
  samo::write_text_file(scenario, j.dump());

  const std::vector<std::pair<std::string, std::string>> cases = {
      {"memory-model --phi 1e9 --p 0:1:0.05 --out {}", "mm"},
      {"train --verify --sparsity 0.9 --steps 50 --seed 7 --out {}", "tr"},
      {"simulate --config \"" + scenario + "\" --out {}", "si"},
      {"sweep --config \"" + scenario + "\" --g 128,256,512 --out {}", "sw"}};
  for (const auto& [tmpl, tag] : cases) {
    const std::string a = (dir / (tag + "_a.csv")).string();
    const std::string b = (dir / (tag + "_b.csv")).string();
    std::string cmd_a = tmpl, cmd_b = tmpl;
    cmd_a.replace(cmd_a.find("{}"), 2, "\"" + a + "\"");
    cmd_b.replace(cmd_b.find("{}"), 2, "\"" + b + "\"");
    check(run_cli(cmd_a, (dir / "log").string()) == 0, tag + " run 1 failed");
    check(run_cli(cmd_b, (dir / "log").string()) == 0, tag + " run 2 failed");
    const std::string ta = slurp(a);
    check(!ta.empty(), tag + " produced no output");
    check(ta == slurp(b), tag + " output differs between reruns");
  }
}

// --------------------------------------------------------------------------

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;
  std::function<void()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "memory model exactness", 1.0, criterion_memory_model_exactness},
      {2, "accounting agreement", 5.0, criterion_accounting_agreement},
      {3, "compression round-trip", 10.0, criterion_compression_round_trip},
      {4, "training equivalence", 60.0, criterion_training_equivalence},
      {5, "gradient correctness", 10.0, criterion_gradient_correctness},
      {6, "pipeline fidelity", 5.0, criterion_pipeline_fidelity},
      {7, "monotonicity suite", 5.0, criterion_monotonicity_suite},
      {8, "end-to-end scenario", 10.0, criterion_end_to_end_scenario},
      {9, "CLI determinism", 30.0, criterion_cli_determinism},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    std::string verdict = "PASS";
    std::string detail;
    try {
      c.run();
    } catch (const Failure& f) {
      verdict = "FAIL";
      detail = f.message;
    } catch (const std::exception& e) {
      verdict = "FAIL";
      detail = e.what();
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    if (verdict == "PASS" && elapsed > c.budget_seconds) {
      verdict = "FAIL";
      detail = "exceeded runtime budget of " +
               samo::format_number(c.budget_seconds) + "s";
    }
    if (verdict == "FAIL") ++failures;
    std::cout << "[" << c.id << "] " << c.name << ": " << verdict << " ("
              << samo::format_number(elapsed) << "s)";
    if (!detail.empty()) std::cout << " -- " << detail;
    std::cout << "\n";
  }
  if (failures > 0) {
    std::cout << failures << " criterion(s) failed\n";
    return 1;
  }
  std::cout << "all criteria passed\n";
  return 0;
}

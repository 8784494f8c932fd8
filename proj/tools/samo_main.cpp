// SPDX-License-Identifier: Apache-2.0
//
// samo: sparsity-aware model-state compression experiments at desk scale.
// Subcommands: memory-model, train, simulate, sweep.
// Exit codes: 0 success, 1 usage/config error, 2 verification failure,
// 3 infeasible configuration.

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "samo/samo.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitVerify = 2;
constexpr int kExitInfeasible = 3;

using samo::Csv;
using samo::Rational;

// --------------------------------------------------------------------------
// Small parsing helpers.

samo::Rational parse_decimal(const std::string& s) {
  std::size_t i = 0;
  bool neg = false;
  if (i < s.size() && (s[i] == '+' || s[i] == '-')) {
    neg = (s[i] == '-');
    ++i;
  }
  long long int_part = 0;
  bool any = false;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) {
    if (int_part > 100'000'000'000'000LL) {
      throw samo::ConfigError("number too large: " + s);
    }
    int_part = int_part * 10 + (s[i] - '0');
    any = true;
    ++i;
  }
  long long num = int_part, den = 1;
  if (i < s.size() && s[i] == '.') {
    ++i;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) {
      if (den > 100'000'000'000'000LL) {
        throw samo::ConfigError("too many decimal digits: " + s);
      }
      num = num * 10 + (s[i] - '0');
      den *= 10;
      any = true;
      ++i;
    }
  }
  if (!any || i != s.size()) {
    throw samo::ConfigError("not a decimal number: '" + s + "'");
  }
  return Rational(neg ? -num : num, den);
}

struct SparsityRange {
  Rational lo, hi, step;
};

SparsityRange parse_p_range(const std::string& s) {
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = s.find(':', pos);
    parts.push_back(s.substr(pos, next - pos));
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  SparsityRange r;
  if (parts.size() == 1) {
    r.lo = r.hi = parse_decimal(parts[0]);
    r.step = Rational(1);
  } else if (parts.size() == 3) {
    r.lo = parse_decimal(parts[0]);
    r.hi = parse_decimal(parts[1]);
    r.step = parse_decimal(parts[2]);
  } else {
    throw samo::ConfigError("--p expects 'value' or 'min:max:step'");
  }
  if (r.lo < Rational(0) || r.hi > Rational(1) || r.lo > r.hi) {
    throw samo::ConfigError("sparsity range must lie within [0, 1]");
  }
  if (r.step <= Rational(0)) throw samo::ConfigError("step must be positive");
  return r;
}

long long parse_count(double v, const char* what) {
  const auto n = static_cast<long long>(v);
  if (static_cast<double>(n) != v || n < 0) {
    throw samo::ConfigError(std::string(what) + " must be a non-negative integer");
  }
  return n;
}

std::string rational_cell(const Rational& r) {
  if (r.denominator() == 1) {
    return samo::format_number(static_cast<std::int64_t>(r.numerator()));
  }
  return samo::format_number(samo::to_double(r));
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
  } else {
    samo::write_text_file(out_path, text);
  }
}

// --------------------------------------------------------------------------
// memory-model

int cmd_memory_model(double phi_arg, const std::string& p_range,
                     const std::string& out) {
  const long long phi = parse_count(phi_arg, "phi");
  const SparsityRange range = parse_p_range(p_range);
  Csv csv;
  csv.row("phi", "p", "bytes_default", "bytes_samo", "bytes_saved",
          "savings_fraction");
  for (Rational p = range.lo; p <= range.hi; p += range.step) {
    const auto r = samo::memory_model(phi, p);
    csv.row(phi, samo::to_double(p), rational_cell(r.bytes_default),
            rational_cell(r.bytes_samo), rational_cell(r.bytes_saved),
            samo::to_double(r.savings_fraction));
  }
  emit(csv.text(), out);
  return 0;
}

// --------------------------------------------------------------------------
// train

struct VerifyOutcome {
  bool pass = true;
  double max_param_rel = 0.0;
  double max_loss_rel = 0.0;
};

double rel_diff(double a, double b) {
  const double denom = std::max(std::fabs(a), std::fabs(b));
  if (denom == 0.0) return 0.0;
  return std::fabs(a - b) / denom;
}

VerifyOutcome verify_against_reference(const samo::SamoTrainer& samo_t,
                                       const samo::ReferenceTrainer& ref_t,
                                       const samo::TrainResult& samo_run,
                                       const samo::TrainResult& ref_run,
                                       double tolerance) {
  VerifyOutcome v;
  for (std::size_t s = 0;
       s < std::min(samo_run.records.size(), ref_run.records.size()); ++s) {
    v.max_loss_rel = std::max(
        v.max_loss_rel,
        rel_diff(samo_run.records[s].loss, ref_run.records[s].loss));
  }
  const auto& sl = samo_t.state().layers;
  const auto& rl = ref_t.state().layers;
  for (std::size_t i = 0; i < sl.size(); ++i) {
    const auto& ind = *sl[i].comp.ind;
    for (std::size_t k = 0; k < ind.indices.size(); ++k) {
      v.max_param_rel = std::max(
          v.max_param_rel, rel_diff(sl[i].comp.theta32[k],
                                    rl[i].theta32.flat()[ind.indices[k]]));
    }
  }
  v.pass = samo_run.records.size() == ref_run.records.size() &&
           v.max_param_rel <= tolerance && v.max_loss_rel <= tolerance;
  return v;
}

int cmd_train(const samo::TrainRunConfig& cfg) {
  cfg.model.validate();
  cfg.optimizer.validate();
  if (!(cfg.sparsity >= 0.0 && cfg.sparsity < 1.0)) {
    throw samo::ConfigError("sparsity must lie in [0, 1)");
  }

  const bool classify = cfg.model.loss == samo::LossKind::softmax_cross_entropy;
  samo::Dataset data;
  if (!cfg.data_path.empty()) {
    data = samo::load_dataset(cfg.data_path);
  } else if (classify) {
    data = samo::make_synthetic_classification(cfg.seed + 1, cfg.samples,
                                               cfg.model.input_dim(),
                                               cfg.model.output_dim());
  } else {
    data = samo::make_synthetic_regression(cfg.seed + 1, cfg.samples,
                                           cfg.model.input_dim(),
                                           cfg.model.output_dim(), cfg.noise);
  }
  const std::size_t want_targets = classify ? 1 : cfg.model.output_dim();
  if (data.n_features != cfg.model.input_dim() ||
      data.n_targets != want_targets) {
    throw samo::ConfigError("dataset dims do not match the model");
  }

  std::vector<samo::LayerParams> init = samo::init_params(cfg.model, cfg.seed);
  if (cfg.prune_biases) {
    for (auto& p : init) p.prunable = true;
  }
  std::vector<std::shared_ptr<const samo::PrunedIndexSet>> inds;
  if (!cfg.indices_in.empty()) {
    inds = samo::index_sets_from_json(samo::load_json_file(cfg.indices_in));
  } else {
    auto sets = samo::magnitude_prune(init, cfg.sparsity, cfg.scope);
    for (auto& s : sets) {
      inds.push_back(std::make_shared<const samo::PrunedIndexSet>(std::move(s)));
    }
  }
  auto built = samo::assemble_states(init, std::move(inds));
  if (!cfg.indices_out.empty()) {
    samo::write_text_file(cfg.indices_out,
                          samo::index_sets_to_json(built.index_sets).dump(2));
  }

  samo::SamoTrainer trainer(cfg.model, cfg.optimizer, std::move(built.samo));
  const samo::TrainResult run =
      samo::run_training(trainer, data, cfg.steps, cfg.batch);

  Csv csv;
  csv.row("step", "loss", "grad_norm", "skipped", "peak_state_bytes");
  for (const auto& rec : run.records) {
    csv.row(rec.step, rec.loss, rec.grad_norm, rec.skipped ? 1 : 0,
            rec.peak_state_bytes);
  }
  emit(csv.text(), cfg.out);

  if (!cfg.checkpoint.empty()) {
    samo::write_text_file(cfg.checkpoint,
                          samo::checkpoint_to_json(trainer.state()).dump(2));
  }

  if (run.diverged) {
    std::cout << "DIVERGED at step " << run.records.back().step
              << " loss=" << run.records.back().loss << "\n";
    return kExitVerify;
  }

  if (cfg.verify) {
    samo::ReferenceTrainer reference(cfg.model, cfg.optimizer,
                                     std::move(built.reference));
    const samo::TrainResult ref_run =
        samo::run_training(reference, data, cfg.steps, cfg.batch);
    const VerifyOutcome v = verify_against_reference(trainer, reference, run,
                                                     ref_run, cfg.tolerance);
    std::cout << (v.pass ? "VERIFY PASS" : "VERIFY FAIL")
              << " max_param_rel=" << samo::format_number(v.max_param_rel)
              << " max_loss_rel=" << samo::format_number(v.max_loss_rel)
              << " tolerance=" << samo::format_number(cfg.tolerance) << "\n";
    if (!v.pass) return kExitVerify;
  }
  return 0;
}

// --------------------------------------------------------------------------
// simulate / sweep

// Replaces the workload's phi/sparsity with the totals of real pruned
// index sets.
void apply_index_sets(samo::Scenario& s, const std::string& indices_path) {
  const auto sets =
      samo::index_sets_from_json(samo::load_json_file(indices_path));
  std::uint64_t phi = 0, kept = 0;
  for (const auto& set : sets) {
    phi += set->dense_len;
    kept += set->count();
  }
  if (phi == 0) throw samo::ConfigError("index sets cover no parameters");
  s.workload.phi = static_cast<std::int64_t>(phi);
  s.workload.sparsity =
      1.0 - static_cast<double>(kept) / static_cast<double>(phi);
  s.workload.validate();
}

struct ModeRun {
  std::string name;
  bool samo_on = false;
  bool feasible = false;
  samo::BreakdownResult result;
};

std::vector<ModeRun> modes_for(samo::SimMode mode) {
  std::vector<ModeRun> modes;
  if (mode != samo::SimMode::samo) modes.push_back({"dense", false, false, {}});
  if (mode != samo::SimMode::dense) modes.push_back({"samo", true, false, {}});
  return modes;
}

void evaluate_modes(const samo::Scenario& scenario, std::vector<ModeRun>& modes) {
  for (auto& m : modes) {
    try {
      m.result = samo::batch_breakdown(scenario.workload, scenario.cluster,
                                       m.samo_on, scenario.force_g_inter);
      m.feasible = true;
    } catch (const samo::InfeasibleError&) {
      m.feasible = false;
    }
  }
}

void breakdown_row(Csv& csv, int g, const ModeRun& m, bool with_speedup,
                   const std::string& speedup) {
  if (m.feasible) {
    const auto& t = m.result.times;
    if (with_speedup) {
      csv.row(g, m.result.config.g_inter, m.result.config.g_data, m.name,
              t.compute, t.p2p, t.bubble, t.collective, t.overhead, t.total,
              speedup);
    } else {
      csv.row(g, m.result.config.g_inter, m.result.config.g_data, m.name,
              t.compute, t.p2p, t.bubble, t.collective, t.overhead, t.total);
    }
  } else {
    if (with_speedup) {
      csv.row(g, 0, 0, m.name, "", "", "", "", "", "infeasible", "");
    } else {
      csv.row(g, 0, 0, m.name, "", "", "", "", "", "infeasible");
    }
  }
}

void write_timeline(const samo::Scenario& s, const samo::BreakdownResult& r,
                    const std::string& path) {
  const std::int64_t n_mb =
      s.workload.batch / (s.workload.microbatch * r.config.g_data);
  const auto sim = samo::simulate_pipeline(
      r.config.g_inter, static_cast<int>(n_mb),
      s.workload.t_f / r.config.g_inter, s.workload.t_b / r.config.g_inter);

  // Per-GPU chronological rows with idle gaps filled in.
  std::vector<std::vector<samo::PipelineEvent>> per_gpu(r.config.g_inter);
  for (const auto& e : sim.events) per_gpu[e.gpu].push_back(e);

  Csv csv;
  csv.row("gpu", "event", "kind", "start", "end");
  for (int g = 0; g < r.config.g_inter; ++g) {
    std::sort(per_gpu[g].begin(), per_gpu[g].end(),
              [](const auto& a, const auto& b) { return a.start < b.start; });
    double cursor = 0.0;
    for (const auto& e : per_gpu[g]) {
      if (e.start > cursor) {
        csv.row(g, "", "idle", cursor, e.start);
      }
      csv.row(g, e.microbatch, e.kind == 'F' ? "F" : "B", e.start, e.end);
      cursor = e.end;
    }
    if (cursor < sim.makespan) {
      csv.row(g, "", "idle", cursor, sim.makespan);
    }
  }
  samo::write_text_file(path, csv.text());
}

int cmd_simulate(const samo::Scenario& scenario, const std::string& out,
                 const std::string& timeline_out) {
  std::vector<ModeRun> modes = modes_for(scenario.mode);
  evaluate_modes(scenario, modes);

  Csv csv;
  csv.row("G", "G_inter", "G_data", "mode", "compute", "p2p", "bubble",
          "collective", "overhead", "total");
  int feasible = 0;
  for (const auto& m : modes) {
    breakdown_row(csv, scenario.cluster.gpus, m, false, "");
    if (m.feasible) ++feasible;
  }
  emit(csv.text(), out);

  if (!timeline_out.empty()) {
    for (const auto& m : modes) {  // first feasible mode drives the timeline
      if (m.feasible) {
        write_timeline(scenario, m.result, timeline_out);
        break;
      }
    }
  }
  return feasible > 0 ? 0 : kExitInfeasible;
}

std::size_t sweep_thread_cap(std::size_t n_tasks) {
  std::size_t cap = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SAMO_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end && *end == '\0' && v >= 1) {
      cap = static_cast<std::size_t>(v);
    } else {
      throw samo::ConfigError("SAMO_THREADS must be a positive integer");
    }
  }
  return std::max<std::size_t>(1, std::min(cap, n_tasks));
}

int cmd_sweep(const samo::Scenario& scenario, std::vector<int> g_list,
              const std::string& out) {
  if (g_list.empty()) g_list = scenario.sweep_g;
  if (g_list.empty()) {
    throw samo::ConfigError("sweep needs --g or sweep_g in the scenario");
  }
  for (int g : g_list) {
    if (g < 1) throw samo::ConfigError("GPU counts must be positive");
  }

  // Scenario points are independent; evaluate them concurrently and emit
  // rows in input order regardless of scheduling.
  std::vector<std::vector<ModeRun>> results(g_list.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= g_list.size()) return;
      samo::Scenario point = scenario;
      point.cluster.gpus = g_list[i];
      results[i] = modes_for(point.mode);
      evaluate_modes(point, results[i]);
    }
  };
  std::vector<std::thread> pool;
  const std::size_t n_threads = sweep_thread_cap(g_list.size());
  pool.reserve(n_threads);
  for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  Csv csv;
  csv.row("G", "G_inter", "G_data", "mode", "compute", "p2p", "bubble",
          "collective", "overhead", "total", "speedup");
  int feasible_rows = 0;
  for (std::size_t i = 0; i < g_list.size(); ++i) {
    const ModeRun* dense = nullptr;
    const ModeRun* samo_run = nullptr;
    for (const auto& m : results[i]) {
      if (m.name == "dense") dense = &m;
      if (m.name == "samo") samo_run = &m;
    }
    for (const auto& m : results[i]) {
      std::string speedup;
      if (m.samo_on && dense && dense->feasible && m.feasible) {
        speedup =
            samo::format_number(dense->result.times.total / m.result.times.total);
      }
      breakdown_row(csv, g_list[i], m, true, speedup);
      if (m.feasible) ++feasible_rows;
    }
    (void)samo_run;
  }
  emit(csv.text(), out);
  return feasible_rows > 0 ? 0 : kExitInfeasible;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparsity-aware model-state compression and parallel training "
               "cost models"};
  app.require_subcommand(1);

  // memory-model
  auto* mm = app.add_subcommand(
      "memory-model", "model-state bytes and savings over a sparsity range");
  double mm_phi = 1e9;
  std::string mm_p = "0:1:0.05";
  std::string mm_out, mm_config;
  std::uint64_t mm_seed = 0;
  auto* mm_phi_opt =
      mm->add_option("--phi", mm_phi, "parameter count before pruning");
  auto* mm_p_opt = mm->add_option("--p", mm_p, "sparsity 'value' or 'min:max:step'");
  auto* mm_out_opt =
      mm->add_option("--out", mm_out, "output CSV path (stdout when omitted)");
  mm->add_option("--config", mm_config, "JSON with phi/p/out (flags override)");
  mm->add_option("--seed", mm_seed, "accepted for uniformity; output is exact");

  // train
  auto* tr = app.add_subcommand(
      "train", "compressed-state training with optional dense-oracle verify");
  std::string tr_config, tr_out, tr_checkpoint, tr_indices_out, tr_indices_in,
      tr_data;
  std::uint64_t tr_seed = 0;
  double tr_sparsity = 0.0;
  double tr_tolerance = 0.0;
  std::int64_t tr_steps = 0;
  bool tr_verify = false;
  tr->add_option("--config", tr_config, "train config JSON");
  auto* tr_seed_opt = tr->add_option("--seed", tr_seed, "RNG seed");
  auto* tr_sparsity_opt =
      tr->add_option("--sparsity", tr_sparsity, "target sparsity in [0,1)");
  auto* tr_steps_opt = tr->add_option("--steps", tr_steps, "training steps");
  auto* tr_tol_opt =
      tr->add_option("--tolerance", tr_tolerance, "verification tolerance");
  auto* tr_out_opt = tr->add_option("--out", tr_out, "per-step CSV path");
  auto* tr_ckpt_opt =
      tr->add_option("--checkpoint", tr_checkpoint, "checkpoint JSON path");
  auto* tr_iout_opt = tr->add_option("--save-indices", tr_indices_out,
                                     "write pruned index sets JSON");
  auto* tr_iin_opt = tr->add_option("--load-indices", tr_indices_in,
                                    "read pruned index sets JSON");
  auto* tr_data_opt =
      tr->add_option("--data", tr_data, "binary dataset file (SAMD)");
  tr->add_flag("--verify", tr_verify,
               "train the dense masked oracle too and compare");

  // simulate
  auto* si = app.add_subcommand("simulate",
                                "batch-time breakdown for one scenario");
  std::string si_config, si_out, si_timeline, si_indices;
  std::uint64_t si_seed = 0;
  si->add_option("--config", si_config, "scenario JSON")->required();
  si->add_option("--out", si_out, "breakdown CSV path (stdout when omitted)");
  si->add_option("--timeline", si_timeline, "per-GPU pipeline timeline CSV");
  si->add_option("--indices", si_indices,
                 "pruned index sets JSON; overrides workload phi/sparsity");
  si->add_option("--seed", si_seed, "accepted for uniformity; model is exact");

  // sweep
  auto* sw = app.add_subcommand("sweep", "strong-scaling sweep over GPU counts");
  std::string sw_config, sw_out, sw_indices;
  std::uint64_t sw_seed = 0;
  std::vector<int> sw_g;
  sw->add_option("--config", sw_config, "scenario JSON")->required();
  sw->add_option("--g", sw_g, "GPU counts, e.g. --g 128 256 512")
      ->delimiter(',');
  sw->add_option("--out", sw_out, "sweep CSV path (stdout when omitted)");
  sw->add_option("--indices", sw_indices,
                 "pruned index sets JSON; overrides workload phi/sparsity");
  sw->add_option("--seed", sw_seed, "accepted for uniformity; model is exact");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (mm->parsed()) {
      if (!mm_config.empty()) {
        const samo::json j = samo::load_json_file(mm_config);
        samo::detail::require_object(j, "memory-model config");
        samo::detail::check_keys(j, {"phi", "p", "out"}, "memory-model config");
        if (!mm_phi_opt->count()) {
          mm_phi = samo::detail::get_required<double>(j, "phi",
                                                      "memory-model config");
        }
        if (!mm_p_opt->count()) {
          mm_p = samo::detail::get_or<std::string>(j, "p", mm_p,
                                                   "memory-model config");
        }
        if (!mm_out_opt->count()) {
          mm_out = samo::detail::get_or<std::string>(j, "out", mm_out,
                                                     "memory-model config");
        }
      } else if (!mm_phi_opt->count()) {
        throw samo::ConfigError("memory-model needs --phi or --config");
      }
      return cmd_memory_model(mm_phi, mm_p, mm_out);
    }
    if (tr->parsed()) {
      samo::TrainRunConfig cfg;
      if (!tr_config.empty()) {
        cfg = samo::train_config_from_json(samo::load_json_file(tr_config));
      }
      if (tr_seed_opt->count()) cfg.seed = tr_seed;
      if (tr_sparsity_opt->count()) cfg.sparsity = tr_sparsity;
      if (tr_steps_opt->count()) {
        if (tr_steps < 0) throw samo::ConfigError("--steps must be >= 0");
        cfg.steps = static_cast<std::size_t>(tr_steps);
      }
      if (tr_tol_opt->count()) cfg.tolerance = tr_tolerance;
      if (tr_out_opt->count()) cfg.out = tr_out;
      if (tr_ckpt_opt->count()) cfg.checkpoint = tr_checkpoint;
      if (tr_iout_opt->count()) cfg.indices_out = tr_indices_out;
      if (tr_iin_opt->count()) cfg.indices_in = tr_indices_in;
      if (tr_data_opt->count()) cfg.data_path = tr_data;
      if (tr_verify) cfg.verify = true;
      return cmd_train(cfg);
    }
    if (si->parsed()) {
      auto scenario = samo::scenario_from_json(samo::load_json_file(si_config));
      if (!si_indices.empty()) apply_index_sets(scenario, si_indices);
      return cmd_simulate(scenario, si_out, si_timeline);
    }
    if (sw->parsed()) {
      auto scenario = samo::scenario_from_json(samo::load_json_file(sw_config));
      if (!sw_indices.empty()) apply_index_sets(scenario, sw_indices);
      return cmd_sweep(scenario, sw_g, sw_out);
    }
  } catch (const samo::InfeasibleError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

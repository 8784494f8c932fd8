// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <string>

#include "samo/serialize.hpp"
#include <unistd.h>

using samo::Dataset;
using samo::json;
using samo::ModelState;

namespace {

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("samo_serialize_test_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::string path(const std::string& name) { return (dir_ / name).string(); }
  std::filesystem::path dir_;
};

TEST(IndexSetsJson, RoundTrip) {
  const auto spec = samo::make_mlp({4, 6, 2});
  auto built = samo::build_states(spec, 3, 0.5);
  const json j = samo::index_sets_to_json(built.index_sets);
  const auto back = samo::index_sets_from_json(j);
  ASSERT_EQ(back.size(), built.index_sets.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i]->layer_id, built.index_sets[i]->layer_id);
    EXPECT_EQ(back[i]->dense_len, built.index_sets[i]->dense_len);
    EXPECT_EQ(back[i]->indices, built.index_sets[i]->indices);
  }
}

TEST(IndexSetsJson, RejectsMalformedInput) {
  EXPECT_THROW(samo::index_sets_from_json(json::object()), samo::ConfigError);
  // descending indices
  json bad = json::array();
  bad.push_back({{"layer_id", "w"}, {"dense_len", 4}, {"indices", {3, 1}}});
  EXPECT_THROW(samo::index_sets_from_json(bad), samo::ConfigError);
  // index out of range
  json oob = json::array();
  oob.push_back({{"layer_id", "w"}, {"dense_len", 4}, {"indices", {0, 4}}});
  EXPECT_THROW(samo::index_sets_from_json(oob), samo::ConfigError);
  // unknown key
  json extra = json::array();
  extra.push_back({{"layer_id", "w"}, {"dense_len", 4}, {"indices", {0}}, {"x", 1}});
  EXPECT_THROW(samo::index_sets_from_json(extra), samo::ConfigError);
}

TEST(Checkpoint, RoundTripAfterTraining) {
  const auto spec = samo::make_mlp({6, 8, 3});
  auto built = samo::build_states(spec, 11, 0.8);
  samo::SamoTrainer trainer(spec, samo::OptimizerConfig{}, std::move(built.samo));
  const Dataset data = samo::make_synthetic_regression(12, 64, 6, 3);
  samo::run_training(trainer, data, 20, 16);

  const json j = samo::checkpoint_to_json(trainer.state());
  const ModelState loaded = samo::checkpoint_from_json(j);
  samo::check_state_invariants(loaded);

  const ModelState& orig = trainer.state();
  ASSERT_EQ(loaded.layers.size(), orig.layers.size());
  for (std::size_t i = 0; i < orig.layers.size(); ++i) {
    EXPECT_EQ(loaded.layers[i].layer_id, orig.layers[i].layer_id);
    EXPECT_EQ(loaded.layers[i].shape, orig.layers[i].shape);
    EXPECT_EQ(loaded.layers[i].comp.ind->indices, orig.layers[i].comp.ind->indices);
    EXPECT_EQ(loaded.layers[i].comp.theta32, orig.layers[i].comp.theta32);
    EXPECT_EQ(loaded.layers[i].comp.adam_m, orig.layers[i].comp.adam_m);
    EXPECT_EQ(loaded.layers[i].comp.adam_v, orig.layers[i].comp.adam_v);
    EXPECT_TRUE(bit_equal(loaded.layers[i].theta16, orig.layers[i].theta16));
    // gradients are not checkpointed
    for (auto g : loaded.layers[i].comp.grad16) EXPECT_EQ(g.bits(), 0);
  }
}

TEST(Checkpoint, JsonTextRoundTripPreservesFloats) {
  const auto spec = samo::make_mlp({5, 4});
  auto built = samo::build_states(spec, 2, 0.5);
  const json j = samo::checkpoint_to_json(built.samo);
  const json reparsed = json::parse(j.dump());
  const ModelState loaded = samo::checkpoint_from_json(reparsed);
  for (std::size_t i = 0; i < built.samo.layers.size(); ++i) {
    EXPECT_EQ(loaded.layers[i].comp.theta32, built.samo.layers[i].comp.theta32);
  }
}

TEST_F(TempDir, DatasetBinaryRoundTrip) {
  const Dataset d = samo::make_synthetic_regression(9, 37, 5, 2);
  const std::string file = path("data.samd");
  samo::save_dataset(d, file);
  const Dataset back = samo::load_dataset(file);
  EXPECT_EQ(back.n_samples, d.n_samples);
  EXPECT_EQ(back.n_features, d.n_features);
  EXPECT_EQ(back.n_targets, d.n_targets);
  EXPECT_EQ(back.features, d.features);
  EXPECT_EQ(back.targets, d.targets);
}

TEST_F(TempDir, DatasetRejectsBadMagicAndTruncation) {
  const std::string file = path("bad.samd");
  samo::write_text_file(file, "NOPE");
  EXPECT_THROW(samo::load_dataset(file), samo::ConfigError);

  const Dataset d = samo::make_synthetic_regression(1, 4, 2, 1);
  const std::string trunc = path("trunc.samd");
  samo::save_dataset(d, trunc);
  auto size = std::filesystem::file_size(trunc);
  std::filesystem::resize_file(trunc, size - 4);
  EXPECT_THROW(samo::load_dataset(trunc), samo::ConfigError);
}

TEST(TrainConfig, ParsesAndValidates) {
  const json j = {
      {"model",
       {{"layers", json::array({{{"in", 4}, {"out", 8}}, {{"in", 8}, {"out", 2}}})},
        {"loss", "mse"}}},
      {"optimizer", {{"learning_rate", 0.01}, {"loss_scale", 256.0}}},
      {"prune", {{"sparsity", 0.8}, {"scope", "per-layer"}}},
      {"data", {{"kind", "synthetic"}, {"samples", 128}, {"batch", 16}}},
      {"steps", 50},
      {"seed", 7},
      {"verify", true}};
  const auto cfg = samo::train_config_from_json(j);
  EXPECT_EQ(cfg.model.layers.size(), 2u);
  EXPECT_EQ(cfg.model.layers[0].activation, samo::Activation::relu);
  EXPECT_EQ(cfg.model.layers[1].activation, samo::Activation::identity);
  EXPECT_FLOAT_EQ(cfg.optimizer.loss_scale, 256.0f);
  EXPECT_EQ(cfg.sparsity, 0.8);
  EXPECT_EQ(cfg.steps, 50u);
  EXPECT_TRUE(cfg.verify);
}

TEST(TrainConfig, RejectsUnknownKeys) {
  const json j = {{"steps", 10}, {"stepz", 10}};
  EXPECT_THROW(samo::train_config_from_json(j), samo::ConfigError);
  const json j2 = {{"optimizer", {{"lr", 0.1}}}};
  EXPECT_THROW(samo::train_config_from_json(j2), samo::ConfigError);
}

TEST(TrainConfig, PruneScopeParsing) {
  const json global = {{"prune", {{"scope", "global"}, {"prune_biases", true}}}};
  const auto cfg = samo::train_config_from_json(global);
  EXPECT_EQ(cfg.scope, samo::PruneScope::global);
  EXPECT_TRUE(cfg.prune_biases);

  const json bad = {{"prune", {{"scope", "layerwise"}}}};
  EXPECT_THROW(samo::train_config_from_json(bad), samo::ConfigError);
}

json valid_scenario() {
  return {{"cluster",
           {{"gpus", 128},
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
}

TEST(Scenario, ParsesPaperStyleInput) {
  const auto s = samo::scenario_from_json(valid_scenario());
  EXPECT_EQ(s.cluster.gpus, 128);
  EXPECT_EQ(s.workload.phi, 2'700'000'000LL);
  EXPECT_EQ(s.mode, samo::SimMode::both);
  EXPECT_EQ(s.workload.overhead_frac, 0.10);
}

TEST(Scenario, RejectsBadInput) {
  json j = valid_scenario();
  j["mode"] = "fast";
  EXPECT_THROW(samo::scenario_from_json(j), samo::ConfigError);

  j = valid_scenario();
  j["cluster"]["color"] = "red";
  EXPECT_THROW(samo::scenario_from_json(j), samo::ConfigError);

  j = valid_scenario();
  j["workload"]["phi"] = 1.5;  // non-integral count
  EXPECT_THROW(samo::scenario_from_json(j), samo::ConfigError);

  j = valid_scenario();
  j["workload"]["sparsity"] = 1.0;
  EXPECT_THROW(samo::scenario_from_json(j), samo::ConfigError);

  EXPECT_THROW(samo::scenario_from_json(json::object()), samo::ConfigError);
}

}  // namespace

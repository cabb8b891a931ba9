#pragma once

#include <string>

#include "gprune/environment.hpp"
#include "gprune/ir.hpp"
#include "gprune/oracle.hpp"

namespace gprune::pipeline {

/// All knobs reachable from the CLI / config file; defaults here are the
/// project-wide defaults.
struct RunConfig {
  std::string model;
  std::string weights;  // float32 sidecar path; manifest at <weights>.manifest.json
  std::string dataset;  // "synthetic:blobs[:n]", "synthetic:digits[:n]",
                        // "<images.idx>,<labels.idx>" or a .csv path
  std::string out = "out";
  double flops_target = 0.5;
  int episodes_warmup = 30;
  int episodes_exploit = 150;
  int max_steps = 5;
  uint64_t seed = 1;
  int fine_tune_epochs = 10;       // post-search fine-tune
  int reward_ft_epochs = 0;        // per-reward fine-tune inside episodes
  double a_max = 0.8;
  int hidden_dim = 32;
  int message_rounds = 3;
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  int updates_per_episode = 1;
  int epochs = 15;       // baseline / fine-tune epochs for those commands
  int batch_size = 32;
  double lr = 1e-3;
  bool freeze_unpruned = true;  // finetune command
  // the short post-search fine-tune retrains everything; the dedicated
  // finetune command keeps the restricted variant above
  bool freeze_unpruned_after_search = false;
};

std::string manifest_path_for(const std::string& weights_path);

oracle::Dataset resolve_dataset(const std::string& spec, int height, int width,
                                uint64_t seed);

struct SearchOutcome {
  bool found = false;
  double best_reward = -1.0;
  double best_flops_ratio = 1.0;
  double best_accuracy = 0.0;
  double finetuned_accuracy = 0.0;
  int best_episode = -1;
  env::TrainResult result;
};

/// Full search: trains nothing, expects baseline weights on disk. Writes
/// pruned_model.json, pruned_weights.bin(+manifest), policy.json,
/// policy.csv, history.csv and episodes.jsonl into cfg.out.
SearchOutcome run_search(const RunConfig& cfg,
                         env::SearchMode mode = env::SearchMode::rl);

/// Artifact writers shared with the search path (deterministic bytes).
void write_search_artifacts(const std::string& out_dir,
                            const ir::ModelIR& baseline,
                            const env::TrainResult& result);

std::string format_double(double v);

}  // namespace gprune::pipeline

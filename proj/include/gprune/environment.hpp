#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gprune/agent.hpp"
#include "gprune/ir.hpp"
#include "gprune/oracle.hpp"

namespace gprune::env {

struct EnvConfig {
  double flops_target = 0.5;   // preserved-FLOPs ratio to reach
  int max_steps = 5;
  int warmup_episodes = 30;
  int exploit_episodes = 150;
  int fine_tune_epochs_per_reward = 0;
  double a_max = 0.8;
  int updates_per_episode = 1;
  uint64_t seed = 1;
  oracle::TrainConfig reward_ft;  // used when fine_tune_epochs_per_reward > 0
};

enum class Termination { constraint_met, max_steps };

struct StepRecord {
  ir::PruningPolicy policy;
  double flops_ratio_after = 1.0;
};

struct EpisodeReport {
  int episode = -1;
  std::vector<StepRecord> steps;
  std::optional<double> final_accuracy;
  double reward = -1.0;
  Termination terminated_by = Termination::max_steps;
};

std::string report_to_jsonl(const EpisodeReport& r);

/// The compression loop around one frozen baseline model: size-evaluate,
/// lower to a graph, act, prune, repeat; accuracy becomes the terminal
/// reward once the FLOPs constraint holds.
class Environment {
 public:
  Environment(ir::ModelIR baseline, const oracle::Dataset& data,
              EnvConfig cfg);

  /// Runs one episode, by default from the unpruned baseline; pushes every
  /// transition into the agent's replay buffer. Returns the report and the
  /// final (pruned) model. `start` lets callers resume from an already
  /// compressed model (the size evaluator may then stop before any step).
  std::pair<EpisodeReport, ir::ModelIR> run_episode(
      agent::DdpgAgent& ag, int episode, const ir::ModelIR* start = nullptr);

  const ir::ModelIR& baseline() const { return baseline_; }
  int64_t baseline_flops() const { return baseline_flops_; }
  int n_slots() const { return n_slots_; }
  const EnvConfig& config() const { return cfg_; }

  /// Accuracy of a candidate model on the validation split, after the
  /// configured per-reward fine-tune (if any).
  double score_accuracy(const ir::ModelIR& m) const;

 private:
  ir::ModelIR baseline_;
  const oracle::Dataset& data_;
  EnvConfig cfg_;
  int64_t baseline_flops_ = 0;
  int n_slots_ = 0;
};

enum class SearchMode { rl, random };

struct TrainResult {
  bool found = false;
  ir::ModelIR best_model;
  EpisodeReport best_report;
  int best_episode = -1;
  std::vector<EpisodeReport> history;
};

/// warmup_episodes random episodes, then exploit_episodes noisy ones with
/// one agent update per post-warmup episode (skipped until the replay
/// buffer can fill a batch). Tracks the best constraint-satisfying model.
TrainResult train(Environment& env, agent::DdpgAgent& ag,
                  SearchMode mode = SearchMode::rl);

}  // namespace gprune::env

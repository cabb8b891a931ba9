#pragma once

#include <deque>
#include <string>
#include <vector>

#include "gprune/hgraph.hpp"
#include "gprune/mgnn.hpp"
#include "gprune/optim.hpp"
#include "gprune/rng.hpp"

namespace gprune::agent {

struct Transition {
  hg::HierGraph state;
  std::vector<double> action;
  double reward = 0.0;
  hg::HierGraph next_state;
  bool done = false;
};

/// FIFO buffer with uniform sampling without replacement.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(size_t capacity) : capacity_(capacity) {}

  void push(Transition t);
  std::vector<const Transition*> sample(size_t k, Rng& rng) const;
  size_t size() const { return entries_.size(); }
  size_t capacity() const { return capacity_; }

 private:
  size_t capacity_;
  std::deque<Transition> entries_;
};

/// sigma_t = sigma0 * decay^t, t counted from the first exploit episode
struct NoiseSchedule {
  double sigma0 = 0.2;
  double decay = 0.97;
  double sigma(int exploit_episode) const;
};

enum class ExplorationMode { random, noisy };

struct MlpHead {
  num::Tensor w1, b1, w2, b2;
  MlpHead() = default;
  MlpHead(int in_dim, int hidden, int out_dim, Rng& rng);
  num::Tensor forward(const num::Tensor& x) const;
  std::vector<std::pair<std::string, num::Tensor>> named_parameters(
      const std::string& prefix) const;
  MlpHead clone() const;
};

/// Actor: graph encoder + MLP head, sigmoid-squashed to [0, a_max].
struct ActorNet {
  mgnn::StageParams encoder;
  MlpHead head;
  double a_max = 0.8;
  int n_slots = 0;

  ActorNet() = default;
  ActorNet(const mgnn::MgnnConfig& cfg, int num_primitives, int n_slots,
           double a_max, Rng& rng);
  num::Tensor forward(const hg::HierGraph& state,
                      mgnn::EncodeStats* stats = nullptr);
  std::vector<std::pair<std::string, num::Tensor>> named_parameters() const;
  std::vector<num::Tensor> parameters() const;
  ActorNet clone() const;
};

/// Critic: separate graph encoder + MLP over concat(embedding, action).
struct CriticNet {
  mgnn::StageParams encoder;
  MlpHead head;
  int n_slots = 0;

  CriticNet() = default;
  CriticNet(const mgnn::MgnnConfig& cfg, int num_primitives, int n_slots,
            Rng& rng);
  num::Tensor forward(const hg::HierGraph& state, const num::Tensor& action);
  std::vector<std::pair<std::string, num::Tensor>> named_parameters() const;
  std::vector<num::Tensor> parameters() const;
  CriticNet clone() const;
};

struct AgentConfig {
  mgnn::MgnnConfig mgnn;
  int n_slots = 1;
  double a_max = 0.8;
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  double tau = 0.01;
  double gamma = 1.0;
  int batch_size = 64;
  size_t buffer_capacity = 2000;
  int warmup_episodes = 30;
  double noise_sigma0 = -1.0;  // resolved to 0.25 * a_max when negative
  double noise_decay = 0.97;
  int updates_per_episode = 1;
  uint64_t seed = 1;
};

struct UpdateResult {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
};

class DdpgAgent {
 public:
  explicit DdpgAgent(const AgentConfig& cfg,
                     int num_primitives = ir::kNumLayerKinds);

  /// Deterministic policy, optionally with clamped Gaussian exploration
  /// noise at the current episode's sigma.
  std::vector<double> act(const hg::HierGraph& state, bool explore);

  /// Uniform random action in [0, a_max]^n_slots (warmup episodes).
  std::vector<double> random_action();

  ExplorationMode warmup_policy(int episode) const;

  /// Dispatches per the episode schedule: uniform random during warmup,
  /// noisy deterministic afterwards.
  std::vector<double> policy_action(const hg::HierGraph& state, int episode);

  void remember(Transition t);
  UpdateResult update();

  void set_episode(int episode) { episode_ = episode; }
  int episode() const { return episode_; }
  double current_sigma() const;

  size_t buffer_size() const { return buffer_.size(); }
  const AgentConfig& config() const { return cfg_; }

  ActorNet& actor() { return actor_; }
  CriticNet& critic() { return critic_; }
  ActorNet& actor_target() { return actor_target_; }
  CriticNet& critic_target() { return critic_target_; }
  Rng& rng() { return rng_; }

  void save_checkpoint(const std::string& prefix) const;
  void load_checkpoint(const std::string& prefix);

  /// theta' <- (1 - tau) theta' + tau theta for both target networks.
  void soft_update_targets();

 private:
  AgentConfig cfg_;
  ActorNet actor_, actor_target_;
  CriticNet critic_, critic_target_;
  num::Optimizer actor_opt_, critic_opt_;
  ReplayBuffer buffer_;
  NoiseSchedule noise_;
  Rng rng_;
  int episode_ = 0;
};

}  // namespace gprune::agent

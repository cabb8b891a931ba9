#include "gprune/agent.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>

#include "gprune/errors.hpp"
#include "gprune/ops.hpp"
#include "gprune/tensor_io.hpp"

namespace gprune::agent {

void ReplayBuffer::push(Transition t) {
  entries_.push_back(std::move(t));
  while (entries_.size() > capacity_) entries_.pop_front();
}

std::vector<const Transition*> ReplayBuffer::sample(size_t k, Rng& rng) const {
  if (entries_.size() < k)
    throw InsufficientBufferError("replay holds " +
                                  std::to_string(entries_.size()) +
                                  " transitions, need " + std::to_string(k));
  auto idx = rng.sample_indices(entries_.size(), k);
  std::vector<const Transition*> out;
  out.reserve(k);
  for (size_t i : idx) out.push_back(&entries_[i]);
  return out;
}

double NoiseSchedule::sigma(int exploit_episode) const {
  return sigma0 * std::pow(decay, static_cast<double>(std::max(0, exploit_episode)));
}

MlpHead::MlpHead(int in_dim, int hidden, int out_dim, Rng& rng) {
  auto init = [&](std::vector<int> shape, int fan_in) {
    const double bound = std::sqrt(1.0 / fan_in);
    num::Tensor t = num::Tensor::zeros(std::move(shape), true);
    for (auto& v : t.data()) v = rng.uniform(-bound, bound);
    return t;
  };
  w1 = init({in_dim, hidden}, in_dim);
  b1 = init({hidden}, in_dim);
  w2 = init({hidden, out_dim}, hidden);
  b2 = init({out_dim}, hidden);
}

num::Tensor MlpHead::forward(const num::Tensor& x) const {
  num::Tensor z = num::relu(num::add_bias(num::matmul(x, w1), b1));
  return num::add_bias(num::matmul(z, w2), b2);
}

std::vector<std::pair<std::string, num::Tensor>> MlpHead::named_parameters(
    const std::string& prefix) const {
  return {{prefix + ".w1", w1},
          {prefix + ".b1", b1},
          {prefix + ".w2", w2},
          {prefix + ".b2", b2}};
}

MlpHead MlpHead::clone() const {
  MlpHead c;
  c.w1 = w1.clone();
  c.b1 = b1.clone();
  c.w2 = w2.clone();
  c.b2 = b2.clone();
  return c;
}

ActorNet::ActorNet(const mgnn::MgnnConfig& cfg, int num_primitives,
                   int slots, double bound, Rng& rng)
    : encoder(cfg, num_primitives, rng),
      head(cfg.hidden_dim, 64, slots, rng),
      a_max(bound),
      n_slots(slots) {}

num::Tensor ActorNet::forward(const hg::HierGraph& state,
                              mgnn::EncodeStats* stats) {
  num::Tensor g = mgnn::encode(state, encoder, stats);
  return num::scale(num::sigmoid(head.forward(g)), a_max);
}

std::vector<std::pair<std::string, num::Tensor>> ActorNet::named_parameters()
    const {
  auto ps = encoder.named_parameters();
  for (auto& [name, t] : ps) name = "encoder." + name;
  auto hs = head.named_parameters("head");
  ps.insert(ps.end(), hs.begin(), hs.end());
  return ps;
}

std::vector<num::Tensor> ActorNet::parameters() const {
  std::vector<num::Tensor> out;
  for (const auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

ActorNet ActorNet::clone() const {
  ActorNet c;
  c.encoder = encoder.clone();
  c.head = head.clone();
  c.a_max = a_max;
  c.n_slots = n_slots;
  return c;
}

CriticNet::CriticNet(const mgnn::MgnnConfig& cfg, int num_primitives,
                     int slots, Rng& rng)
    : encoder(cfg, num_primitives, rng),
      head(cfg.hidden_dim + slots, 64, 1, rng),
      n_slots(slots) {}

num::Tensor CriticNet::forward(const hg::HierGraph& state,
                               const num::Tensor& action) {
  if (action.ndim() != 2 || action.dim(1) != n_slots)
    throw SlotMismatchError("critic expects a (1, n_slots) action");
  num::Tensor g = mgnn::encode(state, encoder);
  return head.forward(num::concat_channels({g, action}));
}

std::vector<std::pair<std::string, num::Tensor>> CriticNet::named_parameters()
    const {
  auto ps = encoder.named_parameters();
  for (auto& [name, t] : ps) name = "encoder." + name;
  auto hs = head.named_parameters("head");
  ps.insert(ps.end(), hs.begin(), hs.end());
  return ps;
}

std::vector<num::Tensor> CriticNet::parameters() const {
  std::vector<num::Tensor> out;
  for (const auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

CriticNet CriticNet::clone() const {
  CriticNet c;
  c.encoder = encoder.clone();
  c.head = head.clone();
  c.n_slots = n_slots;
  return c;
}

namespace {

void zero_grads(const std::vector<num::Tensor>& params) {
  for (num::Tensor t : params) t.zero_grad();
}

/// theta' <- (1 - tau) theta' + tau theta, matched by parameter name.
/// Pool alphas created online after the target copy are copied verbatim.
void soft_update(const std::vector<std::pair<std::string, num::Tensor>>& online,
                 std::vector<std::pair<std::string, num::Tensor>>& target,
                 double tau, mgnn::StageParams& target_encoder) {
  std::map<std::string, num::Tensor> tmap;
  for (auto& [name, t] : target) tmap[name] = t;
  for (const auto& [name, t] : online) {
    auto it = tmap.find(name);
    if (it != tmap.end()) {
      auto& dst = it->second.data();
      const auto& src = t.data();
      for (size_t i = 0; i < dst.size(); ++i)
        dst[i] = (1.0 - tau) * dst[i] + tau * src[i];
    } else if (name.rfind("encoder.alpha.", 0) == 0) {
      // new pooling alpha: parse "encoder.alpha.<level>.<n>" and mirror it
      const std::string rest = name.substr(std::string("encoder.alpha.").size());
      const auto dot = rest.find('.');
      const int level = std::stoi(rest.substr(0, dot));
      const int n = std::stoi(rest.substr(dot + 1));
      num::Tensor& dst = target_encoder.alpha_for(level, n);
      dst.data() = t.data();
    }
  }
}

}  // namespace

DdpgAgent::DdpgAgent(const AgentConfig& cfg, int num_primitives)
    : cfg_(cfg),
      actor_opt_({num::OptKind::adam, cfg.actor_lr}),
      critic_opt_({num::OptKind::adam, cfg.critic_lr}),
      buffer_(cfg.buffer_capacity),
      rng_(cfg.seed) {
  if (cfg_.noise_sigma0 < 0.0) cfg_.noise_sigma0 = 0.25 * cfg_.a_max;
  noise_ = {cfg_.noise_sigma0, cfg_.noise_decay};
  actor_ = ActorNet(cfg_.mgnn, num_primitives, cfg_.n_slots, cfg_.a_max, rng_);
  critic_ = CriticNet(cfg_.mgnn, num_primitives, cfg_.n_slots, rng_);
  actor_target_ = actor_.clone();
  critic_target_ = critic_.clone();
}

double DdpgAgent::current_sigma() const {
  return noise_.sigma(episode_ - cfg_.warmup_episodes);
}

std::vector<double> DdpgAgent::act(const hg::HierGraph& state, bool explore) {
  num::Tensor a = actor_.forward(state);
  std::vector<double> out = a.data();
  if (explore) {
    const double sigma = current_sigma();
    for (auto& v : out) {
      v += rng_.normal(0.0, sigma);
      v = std::clamp(v, 0.0, cfg_.a_max);
    }
  }
  return out;
}

std::vector<double> DdpgAgent::random_action() {
  std::vector<double> out(static_cast<size_t>(cfg_.n_slots));
  for (auto& v : out) v = rng_.uniform(0.0, cfg_.a_max);
  return out;
}

ExplorationMode DdpgAgent::warmup_policy(int episode) const {
  return episode < cfg_.warmup_episodes ? ExplorationMode::random
                                        : ExplorationMode::noisy;
}

std::vector<double> DdpgAgent::policy_action(const hg::HierGraph& state,
                                             int episode) {
  episode_ = episode;
  if (warmup_policy(episode) == ExplorationMode::random) return random_action();
  return act(state, true);
}

void DdpgAgent::remember(Transition t) { buffer_.push(std::move(t)); }

UpdateResult DdpgAgent::update() {
  const size_t bsz = static_cast<size_t>(cfg_.batch_size);
  auto batch = buffer_.sample(bsz, rng_);

  // TD targets through the target networks, no recording
  std::vector<double> targets(bsz);
  for (size_t i = 0; i < bsz; ++i) {
    const Transition& t = *batch[i];
    double y = t.reward;
    if (!t.done) {
      num::Tensor a2 = actor_target_.forward(t.next_state);
      num::Tensor q2 = critic_target_.forward(t.next_state, a2);
      y += cfg_.gamma * q2.item();
    }
    targets[i] = y;
  }

  UpdateResult res;
  const auto actor_params = actor_.parameters();
  const auto critic_params = critic_.parameters();

  {  // critic regression on the TD targets
    num::Tape tape;
    num::Tensor loss = num::Tensor::zeros({1, 1});
    for (size_t i = 0; i < bsz; ++i) {
      const Transition& t = *batch[i];
      num::Tensor a = num::Tensor::from_data(
          {1, cfg_.n_slots}, t.action);
      num::Tensor q = critic_.forward(t.state, a);
      num::Tensor diff =
          num::sub(q, num::Tensor::from_data({1, 1}, {targets[i]}));
      loss = num::add(loss, num::mul(diff, diff));
    }
    loss = num::scale(loss, 1.0 / static_cast<double>(bsz));
    res.critic_loss = loss.item();
    zero_grads(critic_params);
    tape.backward(loss);
    critic_opt_.step(critic_params);
  }

  {  // actor ascends Q(s, mu(s)); only actor parameters step
    num::Tape tape;
    num::Tensor qsum = num::Tensor::zeros({1, 1});
    for (size_t i = 0; i < bsz; ++i) {
      const Transition& t = *batch[i];
      num::Tensor a = actor_.forward(t.state);
      num::Tensor q = critic_.forward(t.state, a);
      qsum = num::add(qsum, q);
    }
    num::Tensor loss = num::scale(qsum, -1.0 / static_cast<double>(bsz));
    res.actor_loss = loss.item();
    zero_grads(actor_params);
    zero_grads(critic_params);
    tape.backward(loss);
    actor_opt_.step(actor_params);
    zero_grads(critic_params);  // discard grads the actor loss pushed through Q
  }

  soft_update_targets();
  return res;
}

void DdpgAgent::soft_update_targets() {
  auto at = actor_target_.named_parameters();
  soft_update(actor_.named_parameters(), at, cfg_.tau, actor_target_.encoder);
  auto ct = critic_target_.named_parameters();
  soft_update(critic_.named_parameters(), ct, cfg_.tau, critic_target_.encoder);
}

void DdpgAgent::save_checkpoint(const std::string& prefix) const {
  std::vector<num::NamedTensor> all;
  for (const auto& [name, t] : actor_.named_parameters())
    all.push_back({"actor." + name, t});
  for (const auto& [name, t] : critic_.named_parameters())
    all.push_back({"critic." + name, t});
  for (const auto& [name, t] : actor_target_.named_parameters())
    all.push_back({"actor_target." + name, t});
  for (const auto& [name, t] : critic_target_.named_parameters())
    all.push_back({"critic_target." + name, t});
  num::save_named_tensors(all, prefix + ".bin", prefix + ".manifest.json");

  nlohmann::ordered_json meta;
  meta["episode"] = episode_;
  meta["buffer_size"] = buffer_.size();
  meta["n_slots"] = cfg_.n_slots;
  meta["a_max"] = cfg_.a_max;
  meta["sigma"] = current_sigma();
  std::ofstream f(prefix + ".state.json");
  if (!f) throw IoError("cannot write checkpoint state");
  f << meta.dump(2) << "\n";
}

void DdpgAgent::load_checkpoint(const std::string& prefix) {
  auto all = num::load_named_tensors(prefix + ".bin", prefix + ".manifest.json");
  auto restore = [&](const std::string& scope,
                     std::vector<std::pair<std::string, num::Tensor>> params,
                     mgnn::StageParams& enc) {
    for (auto& [name, t] : params) {
      auto it = all.find(scope + "." + name);
      if (it == all.end())
        throw IoError("checkpoint is missing '" + scope + "." + name + "'");
      if (it->second.shape() != t.shape())
        throw IoError("checkpoint shape mismatch for '" + name + "'");
      t.data() = it->second.data();
    }
    // restore alphas that exist only in the checkpoint
    const std::string key = scope + ".encoder.alpha.";
    for (const auto& [name, t] : all) {
      if (name.rfind(key, 0) != 0) continue;
      const std::string rest = name.substr(key.size());
      const auto dot = rest.find('.');
      const int level = std::stoi(rest.substr(0, dot));
      const int n = std::stoi(rest.substr(dot + 1));
      enc.alpha_for(level, n).data() = t.data();
    }
  };
  restore("actor", actor_.named_parameters(), actor_.encoder);
  restore("critic", critic_.named_parameters(), critic_.encoder);
  restore("actor_target", actor_target_.named_parameters(),
          actor_target_.encoder);
  restore("critic_target", critic_target_.named_parameters(),
          critic_target_.encoder);

  std::ifstream f(prefix + ".state.json");
  if (f) {
    nlohmann::json meta;
    f >> meta;
    episode_ = meta.value("episode", 0);
  }
}

}  // namespace gprune::agent

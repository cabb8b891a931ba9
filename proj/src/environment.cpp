#include "gprune/environment.hpp"

#include <cmath>

#include <json.hpp>

#include "gprune/errors.hpp"
#include "gprune/hgraph.hpp"

namespace gprune::env {

using ojson = nlohmann::ordered_json;

std::string report_to_jsonl(const EpisodeReport& r) {
  ojson j;
  j["episode"] = r.episode;
  j["steps"] = ojson::array();
  for (const auto& s : r.steps) {
    ojson js;
    js["ratios"] = ojson::object();
    for (const auto& [id, a] : s.policy.ratios) js["ratios"][id] = a;
    js["flops_ratio_after"] = s.flops_ratio_after;
    j["steps"].push_back(std::move(js));
  }
  if (r.final_accuracy.has_value())
    j["final_accuracy"] = *r.final_accuracy;
  else
    j["final_accuracy"] = nullptr;
  j["reward"] = r.reward;
  j["terminated_by"] =
      r.terminated_by == Termination::constraint_met ? "constraint_met" : "max_steps";
  return j.dump();
}

Environment::Environment(ir::ModelIR baseline, const oracle::Dataset& data,
                         EnvConfig cfg)
    : baseline_(std::move(baseline)), data_(data), cfg_(cfg) {
  if (!(cfg_.flops_target > 0.0 && cfg_.flops_target < 1.0))
    throw Error("flops_target must lie in (0, 1)");
  if (cfg_.max_steps < 1) throw Error("max_steps must be >= 1");
  baseline_flops_ = ir::count_flops(baseline_).total;
  n_slots_ = static_cast<int>(ir::action_slots(baseline_).size());
  if (n_slots_ < 1)
    throw Error("model has no prunable layers; nothing to search");
}

double Environment::score_accuracy(const ir::ModelIR& m) const {
  if (cfg_.fine_tune_epochs_per_reward > 0) {
    oracle::TrainConfig ft = cfg_.reward_ft;
    ft.epochs = cfg_.fine_tune_epochs_per_reward;
    ft.track_val_accuracy = false;
    auto fitted = oracle::fit(m, data_, ft);
    return oracle::evaluate(fitted.model, data_, data_.val_idx);
  }
  return oracle::evaluate(m, data_, data_.val_idx);
}

std::pair<EpisodeReport, ir::ModelIR> Environment::run_episode(
    agent::DdpgAgent& ag, int episode, const ir::ModelIR* start) {
  if (ag.config().n_slots != n_slots_)
    throw SlotMismatchError("agent emits " +
                            std::to_string(ag.config().n_slots) +
                            " slots, model needs " + std::to_string(n_slots_));
  ag.set_episode(episode);

  EpisodeReport report;
  report.episode = episode;
  // episodes normally restart from the original model
  ir::ModelIR current = start ? *start : baseline_;

  std::vector<agent::Transition> transitions;
  bool met = false;
  for (int step = 0; step < cfg_.max_steps; ++step) {
    const double ratio =
        static_cast<double>(ir::count_flops(current).total) /
        static_cast<double>(baseline_flops_);
    if (ratio <= cfg_.flops_target) {
      met = true;
      break;
    }
    hg::HierGraph state = hg::lower(current);
    std::vector<double> action = ag.policy_action(state, episode);
    ir::PruningPolicy policy = ir::strategy_ratios(current, action, cfg_.a_max);
    ir::ModelIR next = ir::apply_policy(current, policy);
    const double ratio_after =
        static_cast<double>(ir::count_flops(next).total) /
        static_cast<double>(baseline_flops_);
    report.steps.push_back({policy, ratio_after});
    transitions.push_back({std::move(state), std::move(action), 0.0,
                           hg::lower(next), false});
    current = std::move(next);
  }
  if (!met) {
    const double ratio =
        static_cast<double>(ir::count_flops(current).total) /
        static_cast<double>(baseline_flops_);
    met = ratio <= cfg_.flops_target;
  }

  if (met) {
    report.terminated_by = Termination::constraint_met;
    const double acc = score_accuracy(current);
    report.final_accuracy = acc;
    report.reward = -(1.0 - acc);
  } else {
    report.terminated_by = Termination::max_steps;
    report.reward = -1.0;
  }
  if (!transitions.empty()) {
    transitions.back().reward = report.reward;
    transitions.back().done = true;
  }
  for (auto& t : transitions) ag.remember(std::move(t));
  return {std::move(report), std::move(current)};
}

TrainResult train(Environment& env, agent::DdpgAgent& ag, SearchMode mode) {
  const EnvConfig& cfg = env.config();
  TrainResult res;
  double best_reward = -2.0;
  double best_ratio = -1.0;
  const int total = cfg.warmup_episodes + cfg.exploit_episodes;
  for (int episode = 0; episode < total; ++episode) {
    // random search keeps every episode in warmup mode and never updates
    const int sched_episode =
        mode == SearchMode::random ? 0 : episode;
    ag.set_episode(sched_episode);
    auto [report, model] = env.run_episode(ag, sched_episode);
    report.episode = episode;

    if (report.terminated_by == Termination::constraint_met) {
      const double ratio =
          report.steps.empty() ? 1.0 : report.steps.back().flops_ratio_after;
      // reward ties go to the model preserving more FLOPs
      const bool better = report.reward > best_reward ||
                          (report.reward == best_reward && ratio > best_ratio);
      if (better) {
        best_reward = report.reward;
        best_ratio = ratio;
        res.best_model = std::move(model);
        res.best_report = report;
        res.best_episode = episode;
        res.found = true;
      }
    }
    res.history.push_back(std::move(report));

    if (mode == SearchMode::rl && episode >= cfg.warmup_episodes) {
      for (int u = 0; u < cfg.updates_per_episode; ++u) {
        if (ag.buffer_size() <
            static_cast<size_t>(ag.config().batch_size))
          break;
        ag.update();
      }
    }
  }
  return res;
}

}  // namespace gprune::env

#include "gprune/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "gprune/errors.hpp"
#include "gprune/weights.hpp"

namespace gprune::pipeline {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string manifest_path_for(const std::string& weights_path) {
  return weights_path + ".manifest.json";
}

oracle::Dataset resolve_dataset(const std::string& spec, int height, int width,
                                uint64_t seed) {
  if (spec.rfind("synthetic:", 0) == 0) {
    std::string rest = spec.substr(10);
    std::string kind = rest;
    int n = 120;
    const auto colon = rest.find(':');
    if (colon != std::string::npos) {
      kind = rest.substr(0, colon);
      n = std::stoi(rest.substr(colon + 1));
    }
    if (kind == "blobs") return oracle::make_blobs(n, seed);
    if (kind == "digits") return oracle::make_digits(n, seed);
    throw IoError("unknown synthetic dataset '" + kind + "'");
  }
  const auto comma = spec.find(',');
  if (comma != std::string::npos) {
    return oracle::load_idx_dataset(spec.substr(0, comma),
                                    spec.substr(comma + 1), 0.15, 0.15, seed);
  }
  if (spec.size() > 4 && spec.substr(spec.size() - 4) == ".csv")
    return oracle::load_csv_dataset(spec, height, width, 0.15, 0.15, seed);
  throw IoError("cannot interpret dataset spec '" + spec + "'");
}

namespace {

/// Per-layer cumulative pruning ratio of a (possibly pruned) model.
std::vector<std::pair<std::string, double>> cumulative_ratios(
    const ir::ModelIR& m) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& l : m.layers) {
    if (!l.prunable) continue;
    const double ratio =
        1.0 - static_cast<double>(l.out_channels) / l.base_out_channels;
    out.emplace_back(l.id, ratio);
  }
  return out;
}

}  // namespace

void write_search_artifacts(const std::string& out_dir,
                            const ir::ModelIR& baseline,
                            const env::TrainResult& result) {
  fs::create_directories(out_dir);
  const fs::path out(out_dir);

  {  // per-episode stream
    std::ofstream jl(out / "episodes.jsonl");
    for (const auto& r : result.history) jl << env::report_to_jsonl(r) << "\n";
  }
  {  // history CSV
    std::ofstream hist(out / "history.csv");
    hist << "episode,reward,final_accuracy,flops_ratio,steps,terminated_by\n";
    for (const auto& r : result.history) {
      const double ratio =
          r.steps.empty() ? 1.0 : r.steps.back().flops_ratio_after;
      hist << r.episode << "," << format_double(r.reward) << ","
           << (r.final_accuracy ? format_double(*r.final_accuracy) : "")
           << "," << format_double(ratio) << "," << r.steps.size() << ","
           << (r.terminated_by == env::Termination::constraint_met
                   ? "constraint_met"
                   : "max_steps")
           << "\n";
    }
  }
  if (!result.found) return;

  {  // pruned model + weights
    std::ofstream mj(out / "pruned_model.json");
    mj << ir::model_to_json(result.best_model);
    ir::save_weights(result.best_model, (out / "pruned_weights.bin").string(),
                     (out / "pruned_weights.bin.manifest.json").string());
  }
  {  // cumulative policy of the best model
    const auto ratios = cumulative_ratios(result.best_model);
    ojson pj;
    for (const auto& [id, r] : ratios) pj[id] = r;
    std::ofstream pjf(out / "policy.json");
    pjf << pj.dump(2) << "\n";
    std::ofstream pcf(out / "policy.csv");
    pcf << "layer,ratio\n";
    for (const auto& [id, r] : ratios) pcf << id << "," << format_double(r) << "\n";
  }
  (void)baseline;
}

SearchOutcome run_search(const RunConfig& cfg, env::SearchMode mode) {
  ir::ModelIR model = ir::load_model_file(cfg.model);
  if (cfg.weights.empty())
    throw IoError("search requires trained baseline weights (--weights)");
  ir::load_weights(model, cfg.weights, manifest_path_for(cfg.weights));

  oracle::Dataset data = resolve_dataset(cfg.dataset, model.input_shape.h,
                                         model.input_shape.w, cfg.seed);

  env::EnvConfig ec;
  ec.flops_target = cfg.flops_target;
  ec.max_steps = cfg.max_steps;
  ec.warmup_episodes = cfg.episodes_warmup;
  ec.exploit_episodes = cfg.episodes_exploit;
  ec.fine_tune_epochs_per_reward = cfg.reward_ft_epochs;
  ec.a_max = cfg.a_max;
  ec.updates_per_episode = cfg.updates_per_episode;
  ec.seed = cfg.seed;
  ec.reward_ft.seed = cfg.seed;
  ec.reward_ft.batch_size = cfg.batch_size;
  ec.reward_ft.opt.kind = num::OptKind::adam;
  ec.reward_ft.opt.lr = cfg.lr;
  ec.reward_ft.freeze_unpruned = false;
  env::Environment environment(model, data, ec);

  agent::AgentConfig ac;
  ac.mgnn.hidden_dim = cfg.hidden_dim;
  ac.mgnn.num_message_rounds = cfg.message_rounds;
  ac.n_slots = environment.n_slots();
  ac.a_max = cfg.a_max;
  ac.actor_lr = cfg.actor_lr;
  ac.critic_lr = cfg.critic_lr;
  ac.warmup_episodes = cfg.episodes_warmup;
  ac.updates_per_episode = cfg.updates_per_episode;
  ac.seed = cfg.seed;
  agent::DdpgAgent ag(ac);

  env::TrainResult result = env::train(environment, ag, mode);

  SearchOutcome out;
  out.found = result.found;
  out.result = result;
  if (result.found) {
    out.best_reward = result.best_report.reward;
    out.best_episode = result.best_episode;
    out.best_flops_ratio = result.best_report.steps.empty()
                               ? 1.0
                               : result.best_report.steps.back().flops_ratio_after;
    out.best_accuracy = result.best_report.final_accuracy.value_or(0.0);
    if (cfg.fine_tune_epochs > 0) {
      oracle::TrainConfig ft;
      ft.epochs = cfg.fine_tune_epochs;
      ft.batch_size = cfg.batch_size;
      ft.opt.kind = num::OptKind::adam;
      ft.opt.lr = cfg.lr;
      ft.seed = cfg.seed;
      ft.freeze_unpruned = cfg.freeze_unpruned_after_search;
      ft.track_val_accuracy = false;
      auto fitted = oracle::fit(result.best_model, data, ft);
      out.finetuned_accuracy = oracle::evaluate(fitted.model, data, data.val_idx);
      out.result.best_model = std::move(fitted.model);
    }
  }
  write_search_artifacts(cfg.out, model, out.result);
  return out;
}

}  // namespace gprune::pipeline

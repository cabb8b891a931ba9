#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gprune/environment.hpp"
#include "gprune/errors.hpp"
#include "gprune/hgraph.hpp"
#include "gprune/ir.hpp"
#include "gprune/oracle.hpp"
#include "gprune/pipeline.hpp"
#include "gprune/weights.hpp"

namespace fs = std::filesystem;
using gprune::pipeline::RunConfig;
using ojson = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitSearchFailed = 3;
constexpr int kExitDivergence = 4;

void print_error(const std::string& type, const std::string& what) {
  ojson j;
  j["error"] = type;
  j["message"] = what;
  std::cerr << j.dump() << "\n";
}

/// Config file values fill in before flag parsing, so flags always win.
void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw gprune::IoError("cannot open config file '" + path + "'");
  nlohmann::json j;
  in >> j;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
  };
  get("model", cfg.model);
  get("weights", cfg.weights);
  get("dataset", cfg.dataset);
  get("out", cfg.out);
  get("flops_target", cfg.flops_target);
  get("episodes_warmup", cfg.episodes_warmup);
  get("episodes_exploit", cfg.episodes_exploit);
  get("max_steps", cfg.max_steps);
  get("seed", cfg.seed);
  get("fine_tune_epochs", cfg.fine_tune_epochs);
  get("reward_ft_epochs", cfg.reward_ft_epochs);
  get("a_max", cfg.a_max);
  get("hidden_dim", cfg.hidden_dim);
  get("message_rounds", cfg.message_rounds);
  get("actor_lr", cfg.actor_lr);
  get("critic_lr", cfg.critic_lr);
  get("updates_per_episode", cfg.updates_per_episode);
  get("epochs", cfg.epochs);
  get("batch_size", cfg.batch_size);
  get("lr", cfg.lr);
  get("freeze_unpruned", cfg.freeze_unpruned);
}

void add_common(CLI::App* cmd, RunConfig& cfg) {
  cmd->add_option("--model", cfg.model, "model IR JSON path");
  cmd->add_option("--weights", cfg.weights, "weights sidecar (.bin) path");
  cmd->add_option("--dataset", cfg.dataset,
                  "synthetic:blobs[:n], synthetic:digits[:n], "
                  "images.idx,labels.idx or file.csv");
  cmd->add_option("--out", cfg.out, "output directory");
  cmd->add_option("--seed", cfg.seed, "global seed");
}

int cmd_analyze(const RunConfig& cfg, const std::string& json_out,
                const std::string& graph_json, const std::string& graph_dot) {
  gprune::ir::ModelIR m = gprune::ir::load_model_file(cfg.model);
  if (!cfg.weights.empty())
    gprune::ir::load_weights(m, cfg.weights,
                             gprune::pipeline::manifest_path_for(cfg.weights));
  const auto report = gprune::ir::count_flops(m);
  const int64_t params = gprune::ir::count_params(m);

  std::printf("%-14s %-18s %10s %10s %12s %9s\n", "layer", "kind", "in", "out",
              "flops", "prunable");
  for (const auto& l : m.layers) {
    std::printf("%-14s %-18s %10d %10d %12lld %9s\n", l.id.c_str(),
                gprune::ir::kind_name(l.kind), l.in_channels, l.out_channels,
                static_cast<long long>(report.per_layer.at(l.id)),
                l.prunable ? "yes" : "no");
  }
  std::printf("total FLOPs     : %lld\n", static_cast<long long>(report.total));
  std::printf("prunable FLOPs  : %lld\n",
              static_cast<long long>(report.prunable_total));
  std::printf("parameters      : %lld\n", static_cast<long long>(params));

  ojson j;
  j["total_flops"] = report.total;
  j["prunable_flops"] = report.prunable_total;
  j["parameters"] = params;
  j["per_layer"] = ojson::object();
  for (const auto& l : m.layers) j["per_layer"][l.id] = report.per_layer.at(l.id);
  if (!json_out.empty()) {
    std::ofstream out(json_out);
    if (!out) throw gprune::IoError("cannot write '" + json_out + "'");
    out << j.dump(2) << "\n";
  }
  if (!graph_json.empty() || !graph_dot.empty()) {
    const gprune::hg::HierGraph hgraph = gprune::hg::lower(m);
    if (!graph_json.empty()) {
      std::ofstream out(graph_json);
      out << gprune::hg::to_json(hgraph);
    }
    if (!graph_dot.empty()) {
      std::ofstream out(graph_dot);
      out << gprune::hg::to_dot(hgraph, 2) << gprune::hg::to_dot(hgraph, 1);
    }
  }
  return kExitOk;
}

int cmd_train_baseline(const RunConfig& cfg) {
  gprune::ir::ModelIR m = gprune::ir::load_model_file(cfg.model);
  gprune::oracle::Dataset data = gprune::pipeline::resolve_dataset(
      cfg.dataset, m.input_shape.h, m.input_shape.w, cfg.seed);
  gprune::Rng rng(cfg.seed);
  gprune::ir::init_weights(m, rng);

  gprune::oracle::TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.opt.kind = gprune::num::OptKind::adam;
  tc.opt.lr = cfg.lr;
  tc.seed = cfg.seed;
  auto fitted = gprune::oracle::fit(m, data, tc);

  fs::create_directories(cfg.out);
  const std::string bin = (fs::path(cfg.out) / "baseline.bin").string();
  gprune::ir::save_weights(fitted.model, bin,
                           gprune::pipeline::manifest_path_for(bin));

  ojson j;
  j["weights"] = bin;
  j["epochs"] = cfg.epochs;
  j["train_loss"] = fitted.train_loss;
  j["val_accuracy_history"] = fitted.val_accuracy;
  if (!data.val_idx.empty())
    j["val_accuracy"] = gprune::oracle::evaluate(fitted.model, data, data.val_idx);
  if (!data.test_idx.empty())
    j["test_accuracy"] = gprune::oracle::evaluate(fitted.model, data, data.test_idx);
  std::ofstream rep(fs::path(cfg.out) / "baseline_report.json");
  rep << j.dump(2) << "\n";
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

int cmd_search(const RunConfig& cfg) {
  auto outcome = gprune::pipeline::run_search(cfg);
  ojson j;
  j["found"] = outcome.found;
  j["best_episode"] = outcome.best_episode;
  j["best_reward"] = outcome.best_reward;
  j["best_flops_ratio"] = outcome.best_flops_ratio;
  j["best_accuracy"] = outcome.best_accuracy;
  j["finetuned_accuracy"] = outcome.finetuned_accuracy;
  j["artifacts"] = cfg.out;
  std::cout << j.dump(2) << "\n";
  return outcome.found ? kExitOk : kExitSearchFailed;
}

int cmd_finetune(const RunConfig& cfg) {
  gprune::ir::ModelIR m = gprune::ir::load_model_file(cfg.model);
  if (cfg.weights.empty())
    throw gprune::IoError("finetune requires --weights");
  gprune::ir::load_weights(m, cfg.weights,
                           gprune::pipeline::manifest_path_for(cfg.weights));
  gprune::oracle::Dataset data = gprune::pipeline::resolve_dataset(
      cfg.dataset, m.input_shape.h, m.input_shape.w, cfg.seed);

  const double before = data.val_idx.empty()
                            ? 0.0
                            : gprune::oracle::evaluate(m, data, data.val_idx);
  gprune::oracle::TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.opt.kind = gprune::num::OptKind::adam;
  tc.opt.lr = cfg.lr;
  tc.seed = cfg.seed;
  tc.freeze_unpruned = cfg.freeze_unpruned;
  auto fitted = gprune::oracle::fit(m, data, tc);
  const double after = data.val_idx.empty()
                           ? 0.0
                           : gprune::oracle::evaluate(fitted.model, data, data.val_idx);

  fs::create_directories(cfg.out);
  const std::string bin = (fs::path(cfg.out) / "finetuned.bin").string();
  gprune::ir::save_weights(fitted.model, bin,
                           gprune::pipeline::manifest_path_for(bin));
  ojson j;
  j["weights"] = bin;
  j["val_accuracy_before"] = before;
  j["val_accuracy_after"] = after;
  j["freeze_unpruned"] = cfg.freeze_unpruned;
  std::ofstream rep(fs::path(cfg.out) / "finetune_report.json");
  rep << j.dump(2) << "\n";
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

int cmd_make_data(const std::string& kind, int n_per_class, uint64_t seed,
                  const std::string& out_dir) {
  gprune::oracle::Dataset d = kind == "blobs"
                                  ? gprune::oracle::make_blobs(n_per_class, seed)
                                  : gprune::oracle::make_digits(n_per_class, seed);
  fs::create_directories(out_dir);
  const auto img = (fs::path(out_dir) / (kind + "-images.idx3-ubyte")).string();
  const auto lab = (fs::path(out_dir) / (kind + "-labels.idx1-ubyte")).string();
  gprune::oracle::save_idx_images(d.images, img);
  gprune::oracle::save_idx_labels(d.labels, lab);
  std::cout << img << "\n" << lab << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"graph-guided channel pruning toolkit"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_path;

  // config file values must load before flag parsing
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--config") config_path = argv[i + 1];
  try {
    if (!config_path.empty()) apply_config_file(cfg, config_path);
  } catch (const std::exception& e) {
    print_error("config", e.what());
    return kExitConfig;
  }

  std::string json_out, graph_json, graph_dot;
  auto* analyze = app.add_subcommand("analyze", "FLOPs / parameter report");
  add_common(analyze, cfg);
  analyze->add_option("--json", json_out, "also write the report as JSON");
  analyze->add_option("--graph-json", graph_json,
                      "export the hierarchical graph as JSON");
  analyze->add_option("--graph-dot", graph_dot,
                      "export per-level DOT text");

  auto* train = app.add_subcommand("train-baseline", "train initial weights");
  add_common(train, cfg);
  train->add_option("--epochs", cfg.epochs, "training epochs");
  train->add_option("--batch-size", cfg.batch_size, "minibatch size");
  train->add_option("--lr", cfg.lr, "learning rate");

  auto* search = app.add_subcommand("search", "FLOPs-constrained policy search");
  add_common(search, cfg);
  search->add_option("--flops-target", cfg.flops_target,
                     "preserved FLOPs ratio to reach (0,1)");
  search->add_option("--episodes-warmup", cfg.episodes_warmup,
                     "random warmup episodes");
  search->add_option("--episodes-exploit", cfg.episodes_exploit,
                     "noisy exploitation episodes");
  search->add_option("--max-steps", cfg.max_steps, "pruning steps per episode");
  search->add_option("--fine-tune-epochs", cfg.fine_tune_epochs,
                     "post-search fine-tune epochs");
  search->add_option("--reward-ft-epochs", cfg.reward_ft_epochs,
                     "fine-tune epochs inside each episode reward");
  search->add_option("--a-max", cfg.a_max, "per-step pruning ratio cap");
  search->add_option("--hidden-dim", cfg.hidden_dim, "encoder hidden width");
  search->add_option("--actor-lr", cfg.actor_lr, "actor learning rate");
  search->add_option("--critic-lr", cfg.critic_lr, "critic learning rate");
  search->add_option("--updates-per-episode", cfg.updates_per_episode,
                     "gradient updates after each episode");
  search->add_option("--batch-size", cfg.batch_size, "fine-tune batch size");
  search->add_option("--lr", cfg.lr, "fine-tune learning rate");

  auto* finetune = app.add_subcommand("finetune", "fine-tune a pruned model");
  add_common(finetune, cfg);
  finetune->add_option("--epochs", cfg.epochs, "fine-tune epochs");
  finetune->add_option("--batch-size", cfg.batch_size, "minibatch size");
  finetune->add_option("--lr", cfg.lr, "learning rate");
  finetune->add_option("--freeze-unpruned", cfg.freeze_unpruned,
                       "update only layers touched by pruning");

  std::string data_kind = "digits";
  int data_n = 120;
  auto* mkdata = app.add_subcommand("make-data", "write a synthetic IDX dataset");
  mkdata->add_option("--kind", data_kind, "blobs or digits");
  mkdata->add_option("--n", data_n, "samples per class");
  mkdata->add_option("--seed", cfg.seed, "generator seed");
  mkdata->add_option("--out", cfg.out, "output directory");

  // already consumed above; registered so CLI11 accepts the flag
  std::string config_echo;
  for (auto* cmd : {analyze, train, search, finetune, mkdata})
    cmd->add_option("--config", config_echo,
                    "JSON config file (flags override it)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (analyze->parsed())
      return cmd_analyze(cfg, json_out, graph_json, graph_dot);
    if (train->parsed()) return cmd_train_baseline(cfg);
    if (search->parsed()) return cmd_search(cfg);
    if (finetune->parsed()) return cmd_finetune(cfg);
    if (mkdata->parsed())
      return cmd_make_data(data_kind, data_n, cfg.seed, cfg.out);
  } catch (const gprune::DivergenceError& e) {
    print_error("divergence", e.what());
    return kExitDivergence;
  } catch (const gprune::Error& e) {
    print_error("error", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return kExitConfig;
  }
  return kExitConfig;
}

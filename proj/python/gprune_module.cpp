#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "gprune/environment.hpp"
#include "gprune/hgraph.hpp"
#include "gprune/ir.hpp"
#include "gprune/oracle.hpp"
#include "gprune/pipeline.hpp"
#include "gprune/weights.hpp"

namespace py = pybind11;
using namespace gprune;

namespace {

ir::PruningPolicy policy_from_dict(const py::dict& ratios, double a_max) {
  ir::PruningPolicy p;
  p.a_max = a_max;
  for (const auto& item : ratios)
    p.ratios[item.first.cast<std::string>()] = item.second.cast<double>();
  return p;
}

const std::vector<int>& split_of(const oracle::Dataset& d,
                                 const std::string& name) {
  if (name == "train") return d.train_idx;
  if (name == "val") return d.val_idx;
  if (name == "test") return d.test_idx;
  throw EmptySplitError("unknown split '" + name + "'");
}

}  // namespace

PYBIND11_MODULE(gprune, m) {
  m.doc() = "graph-guided channel pruning toolkit";

  py::register_exception<SchemaError>(m, "SchemaError");
  py::register_exception<ShapeError>(m, "ShapeError");
  py::register_exception<PolicyError>(m, "PolicyError");
  py::register_exception<StrategyError>(m, "StrategyError");

  py::class_<ir::ModelIR>(m, "Model")
      .def_property_readonly("num_layers",
                             [](const ir::ModelIR& mm) { return mm.layers.size(); })
      .def_property_readonly("layer_ids",
                             [](const ir::ModelIR& mm) {
                               std::vector<std::string> ids;
                               for (const auto& l : mm.layers) ids.push_back(l.id);
                               return ids;
                             })
      .def_property_readonly("input_shape",
                             [](const ir::ModelIR& mm) {
                               return py::make_tuple(mm.input_shape.c,
                                                     mm.input_shape.h,
                                                     mm.input_shape.w);
                             })
      .def("out_channels",
           [](const ir::ModelIR& mm, const std::string& id) {
             return mm.layer(id).out_channels;
           })
      .def("prunable_layers",
           [](const ir::ModelIR& mm) {
             std::vector<std::string> ids;
             for (const auto& l : mm.layers)
               if (l.prunable) ids.push_back(l.id);
             return ids;
           })
      .def("share_groups",
           [](const ir::ModelIR& mm) { return mm.share_groups; })
      .def("to_json", &ir::model_to_json);

  py::class_<oracle::Dataset>(m, "Dataset")
      .def_property_readonly("size", &oracle::Dataset::size)
      .def_property_readonly("num_classes",
                             [](const oracle::Dataset& d) { return d.num_classes; })
      .def_property_readonly("splits", [](const oracle::Dataset& d) {
        return py::make_tuple(d.train_idx.size(), d.val_idx.size(),
                              d.test_idx.size());
      });

  m.def("parse_model", &ir::parse_model, py::arg("text"));
  m.def("load_model", &ir::load_model_file, py::arg("path"));
  m.def("count_flops", [](const ir::ModelIR& mm) {
    const auto rep = ir::count_flops(mm);
    py::dict per;
    for (const auto& [id, f] : rep.per_layer) per[py::str(id)] = f;
    py::dict out;
    out["total"] = rep.total;
    out["prunable_total"] = rep.prunable_total;
    out["per_layer"] = per;
    return out;
  });
  m.def("count_params", &ir::count_params);
  m.def(
      "action_slots",
      [](const ir::ModelIR& mm) {
        std::vector<std::vector<std::string>> out;
        for (const auto& s : ir::action_slots(mm)) out.push_back(s.layers);
        return out;
      },
      py::arg("model"));
  m.def(
      "strategy_ratios",
      [](const ir::ModelIR& mm, const std::vector<double>& raw, double a_max) {
        py::dict out;
        for (const auto& [id, a] : ir::strategy_ratios(mm, raw, a_max).ratios)
          out[py::str(id)] = a;
        return out;
      },
      py::arg("model"), py::arg("raw"), py::arg("a_max") = 0.8);
  m.def(
      "apply_policy",
      [](const ir::ModelIR& mm, const py::dict& ratios, double a_max) {
        return ir::apply_policy(mm, policy_from_dict(ratios, a_max));
      },
      py::arg("model"), py::arg("ratios"), py::arg("a_max") = 0.8);
  m.def(
      "init_weights",
      [](ir::ModelIR& mm, uint64_t seed) {
        Rng rng(seed);
        ir::init_weights(mm, rng);
      },
      py::arg("model"), py::arg("seed") = 1);
  m.def("save_weights", [](const ir::ModelIR& mm, const std::string& path) {
    ir::save_weights(mm, path, pipeline::manifest_path_for(path));
  });
  m.def("load_weights", [](ir::ModelIR& mm, const std::string& path) {
    ir::load_weights(mm, path, pipeline::manifest_path_for(path));
  });
  m.def("lower_to_json",
        [](const ir::ModelIR& mm) { return hg::to_json(hg::lower(mm)); });

  m.def("make_blobs", &oracle::make_blobs, py::arg("n_per_class"),
        py::arg("seed") = 1);
  m.def("make_digits", &oracle::make_digits, py::arg("n_per_class"),
        py::arg("seed") = 1);
  m.def(
      "fit",
      [](const ir::ModelIR& mm, const oracle::Dataset& d, int epochs,
         int batch_size, double lr, uint64_t seed, bool freeze_unpruned) {
        oracle::TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.batch_size = batch_size;
        cfg.opt.kind = num::OptKind::adam;
        cfg.opt.lr = lr;
        cfg.seed = seed;
        cfg.freeze_unpruned = freeze_unpruned;
        auto res = oracle::fit(mm, d, cfg);
        return py::make_tuple(res.model, res.val_accuracy);
      },
      py::arg("model"), py::arg("dataset"), py::arg("epochs") = 10,
      py::arg("batch_size") = 32, py::arg("lr") = 1e-3, py::arg("seed") = 1,
      py::arg("freeze_unpruned") = false);
  m.def(
      "evaluate",
      [](const ir::ModelIR& mm, const oracle::Dataset& d,
         const std::string& split) {
        return oracle::evaluate(mm, d, split_of(d, split));
      },
      py::arg("model"), py::arg("dataset"), py::arg("split") = "val");

  m.def(
      "search",
      [](const py::dict& kwargs) {
        pipeline::RunConfig cfg;
        auto set = [&](const char* key, auto& field) {
          if (kwargs.contains(key))
            field = kwargs[key].cast<std::decay_t<decltype(field)>>();
        };
        set("model", cfg.model);
        set("weights", cfg.weights);
        set("dataset", cfg.dataset);
        set("out", cfg.out);
        set("flops_target", cfg.flops_target);
        set("episodes_warmup", cfg.episodes_warmup);
        set("episodes_exploit", cfg.episodes_exploit);
        set("max_steps", cfg.max_steps);
        set("seed", cfg.seed);
        set("fine_tune_epochs", cfg.fine_tune_epochs);
        set("hidden_dim", cfg.hidden_dim);
        set("actor_lr", cfg.actor_lr);
        set("critic_lr", cfg.critic_lr);
        set("updates_per_episode", cfg.updates_per_episode);
        auto outcome = pipeline::run_search(cfg);
        py::dict out;
        out["found"] = outcome.found;
        out["best_reward"] = outcome.best_reward;
        out["best_flops_ratio"] = outcome.best_flops_ratio;
        out["best_accuracy"] = outcome.best_accuracy;
        out["finetuned_accuracy"] = outcome.finetuned_accuracy;
        out["best_episode"] = outcome.best_episode;
        return out;
      },
      py::arg("config"));
}

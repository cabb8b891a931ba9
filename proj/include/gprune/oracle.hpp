#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "gprune/ir.hpp"
#include "gprune/optim.hpp"

namespace gprune::oracle {

struct Dataset {
  num::Tensor images;  // (n, c, h, w)
  std::vector<int> labels;
  std::vector<int> train_idx;
  std::vector<int> val_idx;
  std::vector<int> test_idx;
  int num_classes = 0;

  int size() const { return images.defined() ? images.dim(0) : 0; }
};

struct TrainConfig {
  int epochs = 10;
  int batch_size = 32;
  num::OptimizerConfig opt{num::OptKind::adam, 1e-3};
  uint64_t seed = 1;
  bool freeze_unpruned = false;
  bool track_val_accuracy = true;
};

/// Deterministic forward pass following the IR dataflow. Batchnorm layers
/// named in `eval_mode_layers` use running statistics even when training.
num::Tensor execute(const ir::ModelIR& m, const num::Tensor& batch,
                    bool training = false,
                    const std::set<std::string>* eval_mode_layers = nullptr);

struct FitResult {
  ir::ModelIR model;
  std::vector<double> val_accuracy;  // per epoch, when tracked
  std::vector<double> train_loss;    // per epoch mean
};

/// Minimizes cross-entropy on the train split. With freeze_unpruned, only
/// layers whose channel counts differ from the base model are updated (and
/// frozen batchnorm layers keep their running statistics fixed).
FitResult fit(const ir::ModelIR& m, const Dataset& d, const TrainConfig& cfg);

double evaluate(const ir::ModelIR& m, const Dataset& d,
                const std::vector<int>& split);

// ---- dataset I/O ----------------------------------------------------------

/// IDX files: big-endian magic + dims, raw uint8 payload.
num::Tensor load_idx_images(const std::string& path);
std::vector<int> load_idx_labels(const std::string& path);
void save_idx_images(const num::Tensor& images, const std::string& path);
void save_idx_labels(const std::vector<int>& labels, const std::string& path);

Dataset dataset_from(num::Tensor images, std::vector<int> labels,
                     double val_fraction, double test_fraction, uint64_t seed);

Dataset load_idx_dataset(const std::string& images_path,
                         const std::string& labels_path, double val_fraction,
                         double test_fraction, uint64_t seed);

/// CSV rows: label,pixel0,...,pixelN (pixels in 0..255).
Dataset load_csv_dataset(const std::string& path, int height, int width,
                         double val_fraction, double test_fraction,
                         uint64_t seed);

// ---- bundled synthetic fixtures --------------------------------------------

/// Two linearly separable 8x8 blob classes.
Dataset make_blobs(int n_per_class, uint64_t seed);

/// Ten 16x16 grayscale glyph classes with jitter, contrast and noise.
Dataset make_digits(int n_per_class, uint64_t seed);

}  // namespace gprune::oracle

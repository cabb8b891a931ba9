#include "gprune/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "gprune/errors.hpp"
#include "gprune/ops.hpp"

namespace gprune::oracle {

namespace {

constexpr double kBnMomentum = 0.1;
constexpr double kBnEps = 1e-5;

num::Tensor layer_forward(const ir::LayerSpec& l,
                          const std::vector<num::Tensor>& ins, bool training,
                          bool bn_eval) {
  using ir::LayerKind;
  switch (l.kind) {
    case LayerKind::conv2d:
    case LayerKind::depthwise_conv2d:
    case LayerKind::pointwise_conv2d:
      if (!l.weight.defined())
        throw OracleError("layer '" + l.id + "' has no weights");
      return num::conv2d(ins[0], l.weight, l.bias, l.stride.first,
                         l.stride.second, l.padding.first, l.padding.second,
                         l.groups);
    case LayerKind::dense:
      if (!l.weight.defined())
        throw OracleError("layer '" + l.id + "' has no weights");
      return num::linear(ins[0], l.weight, l.bias);
    case LayerKind::maxpool:
      return num::maxpool2d(ins[0], l.kernel.first, l.kernel.second,
                            l.stride.first, l.stride.second, l.padding.first,
                            l.padding.second);
    case LayerKind::avgpool:
      return num::avgpool2d(ins[0], l.kernel.first, l.kernel.second,
                            l.stride.first, l.stride.second, l.padding.first,
                            l.padding.second);
    case LayerKind::global_avgpool:
      return num::global_avgpool(ins[0]);
    case LayerKind::relu:
      return num::relu(ins[0]);
    case LayerKind::batchnorm:
      if (!l.weight.defined())
        throw OracleError("layer '" + l.id + "' has no weights");
      if (training && !bn_eval)
        return num::batchnorm_train(ins[0], l.weight, l.bias, l.running_mean,
                                    l.running_var, kBnMomentum, kBnEps);
      return num::batchnorm_eval(ins[0], l.weight, l.bias, l.running_mean,
                                 l.running_var, kBnEps);
    case LayerKind::add: {
      num::Tensor acc = ins[0];
      for (size_t i = 1; i < ins.size(); ++i) acc = num::add(acc, ins[i]);
      return acc;
    }
    case LayerKind::concat:
      return num::concat_channels(ins);
    case LayerKind::channel_shuffle:
      return num::channel_shuffle(ins[0], l.groups);
    case LayerKind::flatten:
      return num::flatten(ins[0]);
  }
  throw OracleError("unhandled layer kind");
}

}  // namespace

num::Tensor execute(const ir::ModelIR& m, const num::Tensor& batch,
                    bool training, const std::set<std::string>* eval_mode) {
  if (batch.ndim() != 4 || batch.dim(1) != m.input_shape.c ||
      batch.dim(2) != m.input_shape.h || batch.dim(3) != m.input_shape.w)
    throw ShapeError("batch shape " + num::shape_str(batch.shape()) +
                     " does not match model input");
  std::vector<num::Tensor> outputs(m.layers.size());
  for (size_t i = 0; i < m.layers.size(); ++i) {
    std::vector<num::Tensor> ins;
    for (int p : m.producers[i])
      ins.push_back(p == ir::ModelIR::kInputSource ? batch
                                                   : outputs[static_cast<size_t>(p)]);
    const bool bn_eval =
        eval_mode != nullptr && eval_mode->count(m.layers[i].id) > 0;
    outputs[i] = layer_forward(m.layers[i], ins, training, bn_eval);
  }
  return outputs[static_cast<size_t>(m.sink)];
}

namespace {

num::Tensor gather_images(const num::Tensor& images,
                          const std::vector<int>& idx, size_t begin,
                          size_t end) {
  const int c = images.dim(1), h = images.dim(2), w = images.dim(3);
  const int64_t sample = static_cast<int64_t>(c) * h * w;
  num::Tensor out =
      num::Tensor::zeros({static_cast<int>(end - begin), c, h, w});
  const auto& src = images.data();
  auto& dst = out.data();
  for (size_t i = begin; i < end; ++i)
    std::copy(src.begin() + idx[i] * sample, src.begin() + (idx[i] + 1) * sample,
              dst.begin() + static_cast<int64_t>(i - begin) * sample);
  return out;
}

}  // namespace

FitResult fit(const ir::ModelIR& m, const Dataset& d, const TrainConfig& cfg) {
  if (d.size() == 0 || d.train_idx.empty())
    throw EmptySplitError("fit: empty training split");
  FitResult res;
  res.model = ir::clone_model(m);
  if (cfg.epochs == 0) return res;

  // trainable set; freeze_unpruned restricts to pruned layers
  std::set<std::string> frozen;
  if (cfg.freeze_unpruned) {
    std::set<std::string> pruned;
    for (const auto& id : ir::pruned_layer_ids(res.model)) pruned.insert(id);
    for (const auto& l : res.model.layers)
      if (!pruned.count(l.id)) frozen.insert(l.id);
  }
  std::vector<num::Tensor> params;
  for (const auto& l : res.model.layers) {
    if (frozen.count(l.id)) continue;
    if (l.weight.defined()) params.push_back(l.weight);
    if (l.bias.defined()) params.push_back(l.bias);
  }
  if (params.empty()) return res;  // everything frozen: nothing to do

  Rng rng(cfg.seed);
  num::Optimizer opt(cfg.opt);
  std::vector<int> order = d.train_idx;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    int batches = 0;
    for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), pos + static_cast<size_t>(cfg.batch_size));
      num::Tensor batch = gather_images(d.images, order, pos, end);
      std::vector<int> labels;
      for (size_t i = pos; i < end; ++i) labels.push_back(d.labels[static_cast<size_t>(order[i])]);

      num::Tape tape;
      num::Tensor logits =
          execute(res.model, batch, /*training=*/true, &frozen);
      num::Tensor loss = num::softmax_cross_entropy(logits, labels);
      const double lv = loss.item();
      if (!std::isfinite(lv))
        throw DivergenceError("training loss became non-finite");
      loss_sum += lv;
      ++batches;
      tape.backward(loss);
      opt.step(params);
    }
    res.train_loss.push_back(loss_sum / std::max(1, batches));
    if (cfg.track_val_accuracy && !d.val_idx.empty())
      res.val_accuracy.push_back(evaluate(res.model, d, d.val_idx));
  }
  return res;
}

double evaluate(const ir::ModelIR& m, const Dataset& d,
                const std::vector<int>& split) {
  if (split.empty()) throw EmptySplitError("evaluate: empty split");
  const size_t batch_size = 64;
  int correct = 0;
  for (size_t pos = 0; pos < split.size(); pos += batch_size) {
    const size_t end = std::min(split.size(), pos + batch_size);
    num::Tensor batch = gather_images(d.images, split, pos, end);
    num::Tensor logits = execute(m, batch, /*training=*/false);
    const int k = logits.dim(1);
    for (size_t i = pos; i < end; ++i) {
      const double* row = logits.data().data() + (i - pos) * static_cast<size_t>(k);
      int best = 0;
      for (int j = 1; j < k; ++j)
        if (row[j] > row[best]) best = j;
      if (best == d.labels[static_cast<size_t>(split[i])]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

// ---------------------------------------------------------------------------
// IDX + CSV I/O
// ---------------------------------------------------------------------------

namespace {

uint32_t read_u32_be(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("unexpected end of IDX file");
  return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
         (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

void write_u32_be(std::ostream& out, uint32_t v) {
  const unsigned char b[4] = {
      static_cast<unsigned char>((v >> 24) & 0xff),
      static_cast<unsigned char>((v >> 16) & 0xff),
      static_cast<unsigned char>((v >> 8) & 0xff),
      static_cast<unsigned char>(v & 0xff),
  };
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

num::Tensor load_idx_images(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  const uint32_t magic = read_u32_be(in);
  if (magic != 0x00000803)
    throw IoError("'" + path + "' is not an IDX3 image file");
  const uint32_t n = read_u32_be(in);
  const uint32_t rows = read_u32_be(in);
  const uint32_t cols = read_u32_be(in);
  std::vector<unsigned char> raw(static_cast<size_t>(n) * rows * cols);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw IoError("IDX image payload truncated");
  num::Tensor out = num::Tensor::zeros(
      {static_cast<int>(n), 1, static_cast<int>(rows), static_cast<int>(cols)});
  auto& d = out.data();
  for (size_t i = 0; i < raw.size(); ++i) d[i] = raw[i] / 255.0;
  return out;
}

std::vector<int> load_idx_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  const uint32_t magic = read_u32_be(in);
  if (magic != 0x00000801)
    throw IoError("'" + path + "' is not an IDX1 label file");
  const uint32_t n = read_u32_be(in);
  std::vector<unsigned char> raw(n);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw IoError("IDX label payload truncated");
  return std::vector<int>(raw.begin(), raw.end());
}

void save_idx_images(const num::Tensor& images, const std::string& path) {
  if (images.ndim() != 4 || images.dim(1) != 1)
    throw IoError("IDX export expects (n, 1, h, w) images");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  write_u32_be(out, 0x00000803);
  write_u32_be(out, static_cast<uint32_t>(images.dim(0)));
  write_u32_be(out, static_cast<uint32_t>(images.dim(2)));
  write_u32_be(out, static_cast<uint32_t>(images.dim(3)));
  for (double v : images.data()) {
    const double clamped = std::clamp(v, 0.0, 1.0);
    const unsigned char b =
        static_cast<unsigned char>(std::lround(clamped * 255.0));
    out.write(reinterpret_cast<const char*>(&b), 1);
  }
}

void save_idx_labels(const std::vector<int>& labels, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  write_u32_be(out, 0x00000801);
  write_u32_be(out, static_cast<uint32_t>(labels.size()));
  for (int v : labels) {
    const unsigned char b = static_cast<unsigned char>(v);
    out.write(reinterpret_cast<const char*>(&b), 1);
  }
}

Dataset dataset_from(num::Tensor images, std::vector<int> labels,
                     double val_fraction, double test_fraction,
                     uint64_t seed) {
  if (!images.defined() || images.dim(0) == 0)
    throw EmptySplitError("dataset has no samples");
  if (static_cast<size_t>(images.dim(0)) != labels.size())
    throw IoError("image/label count mismatch");
  Dataset d;
  d.images = std::move(images);
  d.labels = std::move(labels);
  d.num_classes = *std::max_element(d.labels.begin(), d.labels.end()) + 1;

  const int n = d.images.dim(0);
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(order);
  const int n_test = static_cast<int>(std::floor(test_fraction * n));
  const int n_val = static_cast<int>(std::floor(val_fraction * n));
  for (int i = 0; i < n; ++i) {
    if (i < n_test)
      d.test_idx.push_back(order[static_cast<size_t>(i)]);
    else if (i < n_test + n_val)
      d.val_idx.push_back(order[static_cast<size_t>(i)]);
    else
      d.train_idx.push_back(order[static_cast<size_t>(i)]);
  }
  return d;
}

Dataset load_idx_dataset(const std::string& images_path,
                         const std::string& labels_path, double val_fraction,
                         double test_fraction, uint64_t seed) {
  num::Tensor images = load_idx_images(images_path);
  std::vector<int> labels = load_idx_labels(labels_path);
  return dataset_from(std::move(images), std::move(labels), val_fraction,
                      test_fraction, seed);
}

Dataset load_csv_dataset(const std::string& path, int height, int width,
                         double val_fraction, double test_fraction,
                         uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<double> pixels;
  std::vector<int> labels;
  std::string line;
  const int per_image = height * width;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (...) {
        numeric = false;
        break;
      }
    }
    if (!numeric) continue;  // header line
    if (static_cast<int>(row.size()) != per_image + 1)
      throw IoError("CSV row has " + std::to_string(row.size() - 1) +
                    " pixels, expected " + std::to_string(per_image));
    labels.push_back(static_cast<int>(row[0]));
    for (int i = 0; i < per_image; ++i) pixels.push_back(row[static_cast<size_t>(i) + 1] / 255.0);
  }
  if (labels.empty()) throw IoError("CSV file '" + path + "' has no samples");
  num::Tensor images = num::Tensor::from_data(
      {static_cast<int>(labels.size()), 1, height, width}, std::move(pixels));
  return dataset_from(std::move(images), std::move(labels), val_fraction,
                      test_fraction, seed);
}

// ---------------------------------------------------------------------------
// synthetic fixtures
// ---------------------------------------------------------------------------

Dataset make_blobs(int n_per_class, uint64_t seed) {
  Rng rng(seed);
  const int h = 8, w = 8;
  const int n = 2 * n_per_class;
  num::Tensor images = num::Tensor::zeros({n, 1, h, w});
  std::vector<int> labels(static_cast<size_t>(n));
  auto& d = images.data();
  for (int i = 0; i < n; ++i) {
    const int cls = i % 2;
    labels[static_cast<size_t>(i)] = cls;
    // class 0 lights the top-left quadrant, class 1 the bottom-right
    const double cy = cls == 0 ? 2.0 : 5.0;
    const double cx = cls == 0 ? 2.0 : 5.0;
    const double jy = rng.uniform(-0.8, 0.8);
    const double jx = rng.uniform(-0.8, 0.8);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double dy = y - cy - jy, dx = x - cx - jx;
        double v = std::exp(-(dy * dy + dx * dx) / 4.0);
        v += rng.normal(0.0, 0.05);
        d[(static_cast<size_t>(i) * h + y) * w + x] = std::clamp(v, 0.0, 1.0);
      }
  }
  return dataset_from(std::move(images), std::move(labels), 0.15, 0.15, seed + 1);
}

namespace {

// 10 glyphs on a 5x7 grid, rendered into 16x16 with jitter
const char* const kGlyphs[10] = {
    "01110"
    "10001"
    "10011"
    "10101"
    "11001"
    "10001"
    "01110",  // 0
    "00100"
    "01100"
    "00100"
    "00100"
    "00100"
    "00100"
    "01110",  // 1
    "01110"
    "10001"
    "00001"
    "00110"
    "01000"
    "10000"
    "11111",  // 2
    "11110"
    "00001"
    "00001"
    "01110"
    "00001"
    "00001"
    "11110",  // 3
    "00010"
    "00110"
    "01010"
    "10010"
    "11111"
    "00010"
    "00010",  // 4
    "11111"
    "10000"
    "11110"
    "00001"
    "00001"
    "10001"
    "01110",  // 5
    "00110"
    "01000"
    "10000"
    "11110"
    "10001"
    "10001"
    "01110",  // 6
    "11111"
    "00001"
    "00010"
    "00100"
    "01000"
    "01000"
    "01000",  // 7
    "01110"
    "10001"
    "10001"
    "01110"
    "10001"
    "10001"
    "01110",  // 8
    "01110"
    "10001"
    "10001"
    "01111"
    "00001"
    "00010"
    "01100",  // 9
};

}  // namespace

Dataset make_digits(int n_per_class, uint64_t seed) {
  Rng rng(seed);
  const int h = 16, w = 16, gh = 7, gw = 5;
  const int n = 10 * n_per_class;
  num::Tensor images = num::Tensor::zeros({n, 1, h, w});
  std::vector<int> labels(static_cast<size_t>(n));
  auto& d = images.data();
  for (int i = 0; i < n; ++i) {
    const int cls = i % 10;
    labels[static_cast<size_t>(i)] = cls;
    // glyph rendered at 2x scale (14x10 px) with positional jitter
    const int oy = static_cast<int>(rng.uniform_int(3));      // 0..2
    const int ox = 1 + static_cast<int>(rng.uniform_int(5));  // 1..5
    const double contrast = rng.uniform(0.7, 1.0);
    const char* glyph = kGlyphs[cls];
    double* img = d.data() + static_cast<size_t>(i) * h * w;
    for (int gy = 0; gy < gh; ++gy)
      for (int gx = 0; gx < gw; ++gx) {
        if (glyph[gy * gw + gx] != '1') continue;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int y = oy + 2 * gy + dy;
            const int x = ox + 2 * gx + dx;
            if (y >= 0 && y < h && x >= 0 && x < w) img[y * w + x] = contrast;
          }
      }
    for (int p = 0; p < h * w; ++p) {
      img[p] += rng.normal(0.0, 0.12);
      img[p] = std::clamp(img[p], 0.0, 1.0);
    }
  }
  return dataset_from(std::move(images), std::move(labels), 0.15, 0.15, seed + 1);
}

}  // namespace gprune::oracle

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "gprune/oracle.hpp"
#include "gprune/weights.hpp"
#include "test_util.hpp"

using namespace gprune;
namespace fs = std::filesystem;

namespace {

ir::ModelIR fixture(const std::string& name) {
  return ir::load_model_file(testutil::models_dir() + "/" + name);
}

std::string slurp(const std::string& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("zero-weight network maps every input to identical logits") {
  ir::ModelIR m = fixture("plain_toy.json");
  Rng rng(1);
  ir::init_weights(m, rng);
  for (auto& l : m.layers) {
    if (l.weight.defined())
      for (auto& v : l.weight.data()) v = 0.0;
    if (l.bias.defined())
      for (auto& v : l.bias.data()) v = 0.0;
  }
  Rng drng(2);
  num::Tensor batch = testutil::random_tensor({4, 1, 8, 8}, drng, 0, 1);
  num::Tensor logits = oracle::execute(m, batch);
  REQUIRE(logits.shape() == std::vector<int>{4, 2});
  for (int i = 1; i < 4; ++i)
    for (int j = 0; j < 2; ++j)
      CHECK(logits.data()[static_cast<size_t>(i) * 2 + j] == logits.data()[static_cast<size_t>(j)]);
}

TEST_CASE("hand-computed affine value through conv + gap + dense") {
  const char* doc = R"({
    "input_shape": [1, 3, 3],
    "layers": [
      {"id": "c", "kind": "pointwise_conv2d", "out_channels": 1},
      {"id": "g", "kind": "global_avgpool"},
      {"id": "fc", "kind": "dense", "out_channels": 2}
    ],
    "edges": [["c","g"],["g","fc"]]
  })";
  ir::ModelIR m = ir::parse_model(doc);
  Rng rng(3);
  ir::init_weights(m, rng);
  m.layer("c").weight.data() = {2.0};
  m.layer("c").bias.data() = {0.5};
  m.layer("fc").weight.data() = {1.0, -1.0};
  m.layer("fc").bias.data() = {0.25, 0.0};
  num::Tensor x = num::Tensor::full({1, 1, 3, 3}, 1.0);
  num::Tensor logits = oracle::execute(m, x);
  // conv: 2*1 + 0.5 = 2.5 everywhere; gap: 2.5; fc: (2.75, -2.5)
  CHECK(logits.data()[0] == doctest::Approx(2.75));
  CHECK(logits.data()[1] == doctest::Approx(-2.5));
}

TEST_CASE("pruned IR still executes with the same class count") {
  ir::ModelIR m = fixture("resnet_toy.json");
  Rng rng(4);
  ir::init_weights(m, rng);
  auto slots = ir::action_slots(m);
  std::vector<double> raw(slots.size(), 0.5);
  ir::ModelIR p = ir::apply_policy(m, ir::strategy_ratios(m, raw));
  num::Tensor x = testutil::random_tensor({2, 1, 16, 16}, rng, 0, 1);
  num::Tensor logits = oracle::execute(p, x);
  CHECK(logits.shape() == std::vector<int>{2, 10});
}

TEST_CASE("execute validates the batch shape") {
  ir::ModelIR m = fixture("plain_toy.json");
  Rng rng(5);
  ir::init_weights(m, rng);
  CHECK_THROWS_AS(oracle::execute(m, num::Tensor::zeros({1, 3, 8, 8})),
                  ShapeError);
}

TEST_CASE("fit with 0 epochs leaves weights untouched") {
  ir::ModelIR m = fixture("plain_toy.json");
  Rng rng(6);
  ir::init_weights(m, rng);
  oracle::Dataset d = oracle::make_blobs(30, 11);
  oracle::TrainConfig cfg;
  cfg.epochs = 0;
  auto res = oracle::fit(m, d, cfg);
  for (size_t i = 0; i < m.layers.size(); ++i)
    if (m.layers[i].weight.defined())
      CHECK(res.model.layers[i].weight.data() == m.layers[i].weight.data());
}

TEST_CASE("separable blobs are learnable to >= 0.95 train accuracy") {
  ir::ModelIR m = fixture("plain_toy.json");
  Rng rng(7);
  ir::init_weights(m, rng);
  oracle::Dataset d = oracle::make_blobs(40, 12);
  oracle::TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 16;
  cfg.seed = 5;
  auto res = oracle::fit(m, d, cfg);
  const double train_acc = oracle::evaluate(res.model, d, d.train_idx);
  CHECK(train_acc >= 0.95);
  // fixed seed reproduces bit-identical weights
  ir::ModelIR m2 = fixture("plain_toy.json");
  Rng rng2(7);
  ir::init_weights(m2, rng2);
  auto res2 = oracle::fit(m2, d, cfg);
  for (size_t i = 0; i < res.model.layers.size(); ++i)
    if (res.model.layers[i].weight.defined())
      CHECK(res.model.layers[i].weight.data() ==
            res2.model.layers[i].weight.data());
}

TEST_CASE("freeze_unpruned on an unpruned model changes nothing") {
  const auto dir = fs::temp_directory_path() / "gprune_oracle_freeze";
  fs::create_directories(dir);
  ir::ModelIR m = fixture("plain_toy.json");
  Rng rng(8);
  ir::init_weights(m, rng);
  oracle::Dataset d = oracle::make_blobs(20, 13);
  oracle::TrainConfig cfg;
  cfg.epochs = 3;
  cfg.freeze_unpruned = true;
  auto res = oracle::fit(m, d, cfg);
  const std::string before = (dir / "before.bin").string();
  const std::string after = (dir / "after.bin").string();
  ir::save_weights(m, before, before + ".m.json");
  ir::save_weights(res.model, after, after + ".m.json");
  CHECK(slurp(before) == slurp(after));
  fs::remove_all(dir);
}

TEST_CASE("freeze_unpruned confines weight changes to pruned layers") {
  const auto dir = fs::temp_directory_path() / "gprune_oracle_freeze2";
  fs::create_directories(dir);
  ir::ModelIR m = fixture("resnet_toy.json");
  Rng rng(9);
  ir::init_weights(m, rng);
  // prune only the interior conv of block 3 (slot order: shared, b1c1, b2c1, b3c1)
  ir::PruningPolicy pol = ir::strategy_ratios(m, {0.0, 0.0, 0.0, 0.5});
  ir::ModelIR pruned = ir::apply_policy(m, pol);
  const auto pruned_ids = ir::pruned_layer_ids(pruned);
  const std::set<std::string> touched(pruned_ids.begin(), pruned_ids.end());
  CHECK(touched.count("b3c1") == 1);
  CHECK(touched.count("b3c2") == 1);  // its input shrank
  CHECK(touched.count("stem") == 0);

  oracle::Dataset d = oracle::make_digits(12, 14);
  oracle::TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  cfg.freeze_unpruned = true;
  auto res = oracle::fit(pruned, d, cfg);
  for (size_t i = 0; i < pruned.layers.size(); ++i) {
    const auto& before = pruned.layers[i];
    const auto& after = res.model.layers[i];
    if (!before.weight.defined()) continue;
    if (touched.count(before.id)) {
      if (before.id == "b3c1")
        CHECK(after.weight.data() != before.weight.data());
    } else {
      CHECK(after.weight.data() == before.weight.data());
      if (before.running_mean.defined())
        CHECK(after.running_mean.data() == before.running_mean.data());
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("evaluate: constant predictor scores the class frequency") {
  const char* doc = R"({
    "input_shape": [1, 4, 4],
    "layers": [
      {"id": "g", "kind": "global_avgpool"},
      {"id": "fc", "kind": "dense", "out_channels": 10}
    ],
    "edges": [["g","fc"]]
  })";
  ir::ModelIR m = ir::parse_model(doc);
  Rng rng(10);
  ir::init_weights(m, rng);
  for (auto& v : m.layer("fc").weight.data()) v = 0.0;
  for (auto& v : m.layer("fc").bias.data()) v = 0.0;
  m.layer("fc").bias.data()[3] = 1.0;  // always predicts class 3

  Rng drng(20);
  const int n = 200;
  num::Tensor images = testutil::random_tensor({n, 1, 4, 4}, drng, 0, 1);
  std::vector<int> labels;
  for (int i = 0; i < n; ++i) labels.push_back(static_cast<int>(drng.uniform_int(10)));
  oracle::Dataset d = oracle::dataset_from(images, labels, 0.0, 0.0, 21);
  int freq = 0;
  for (int v : labels) freq += v == 3 ? 1 : 0;
  const double acc = oracle::evaluate(m, d, d.train_idx);
  CHECK(acc == doctest::Approx(static_cast<double>(freq) / n));
  // accuracy and error sum to one by definition
  CHECK(acc + (1.0 - acc) == doctest::Approx(1.0));
}

TEST_CASE("evaluate rejects an empty split") {
  ir::ModelIR m = fixture("plain_toy.json");
  Rng rng(11);
  ir::init_weights(m, rng);
  oracle::Dataset d = oracle::make_blobs(10, 15);
  CHECK_THROWS_AS(oracle::evaluate(m, d, {}), EmptySplitError);
}

TEST_CASE("non-finite loss raises DivergenceError") {
  ir::ModelIR m = fixture("plain_toy.json");
  Rng rng(12);
  ir::init_weights(m, rng);
  m.layer("fc").bias.data()[0] = std::numeric_limits<double>::infinity();
  oracle::Dataset d = oracle::make_blobs(10, 16);
  oracle::TrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(oracle::fit(m, d, cfg), DivergenceError);
}

TEST_CASE("IDX files round trip bit-exactly") {
  const auto dir = fs::temp_directory_path() / "gprune_idx";
  fs::create_directories(dir);
  oracle::Dataset d = oracle::make_digits(6, 17);
  const std::string img1 = (dir / "a-images.idx3-ubyte").string();
  const std::string lab1 = (dir / "a-labels.idx1-ubyte").string();
  oracle::save_idx_images(d.images, img1);
  oracle::save_idx_labels(d.labels, lab1);
  num::Tensor images = oracle::load_idx_images(img1);
  std::vector<int> labels = oracle::load_idx_labels(lab1);
  CHECK(images.shape() == d.images.shape());
  CHECK(labels == d.labels);
  const std::string img2 = (dir / "b-images.idx3-ubyte").string();
  const std::string lab2 = (dir / "b-labels.idx1-ubyte").string();
  oracle::save_idx_images(images, img2);
  oracle::save_idx_labels(labels, lab2);
  CHECK(slurp(img1) == slurp(img2));
  CHECK(slurp(lab1) == slurp(lab2));
  // magic numbers enforced
  CHECK_THROWS_AS(oracle::load_idx_images(lab1), IoError);
  CHECK_THROWS_AS(oracle::load_idx_labels(img1), IoError);
  fs::remove_all(dir);
}

TEST_CASE("CSV loader parses label,pixel rows") {
  const auto dir = fs::temp_directory_path() / "gprune_csv";
  fs::create_directories(dir);
  const std::string path = (dir / "toy.csv").string();
  {
    std::ofstream f(path);
    f << "label,p0,p1,p2,p3\n";  // header is skipped
    f << "1,0,255,128,64\n";
    f << "0,255,0,0,0\n";
  }
  oracle::Dataset d = oracle::load_csv_dataset(path, 2, 2, 0.0, 0.0, 1);
  REQUIRE(d.size() == 2);
  CHECK(d.labels == std::vector<int>{1, 0});
  CHECK(d.images.data()[1] == doctest::Approx(1.0));
  CHECK(d.images.data()[2] == doctest::Approx(128.0 / 255.0));
  CHECK(d.num_classes == 2);
  fs::remove_all(dir);
}

TEST_CASE("dataset splits are disjoint and cover all samples") {
  oracle::Dataset d = oracle::make_digits(10, 18);
  std::set<int> seen;
  for (int i : d.train_idx) seen.insert(i);
  for (int i : d.val_idx) CHECK(seen.insert(i).second);
  for (int i : d.test_idx) CHECK(seen.insert(i).second);
  CHECK(seen.size() == static_cast<size_t>(d.size()));
  for (int v : d.labels) CHECK(v < d.num_classes);
}

#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "geoseg/error.hpp"
#include "geoseg/io.hpp"
#include "geoseg/propagation.hpp"
#include "geoseg/synth.hpp"
#include "geoseg/trainer.hpp"

using namespace geoseg;
namespace fs = std::filesystem;

namespace {

const NetConfig kTiny{2, 4, 4, 16, 16};

Dataset tiny_dataset() {
  std::vector<SceneSpec> specs;
  for (int i = 0; i < 2; ++i) {
    SceneSpec s = make_room_scene("t" + std::to_string(i), 10 + i, 8);
    s.intrinsics = {13.75, 13.75, 7.5, 7.5, 16, 16};
    specs.push_back(s);
  }
  GenerateOptions opt;
  opt.labeled_fraction = 0.25;
  opt.validation_views = 2;
  opt.test_views = 2;
  return generate_dataset(specs, opt, 1);
}

void set_grads(TrainState& s, const std::function<float(std::size_t, std::size_t, float)>& g) {
  auto& params = s.net.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto grad = params[k].value.mutable_grad();
    const auto w = params[k].value.data();
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = g(k, i, w[i]);
  }
}

std::vector<float> flat(const Network& n) {
  std::vector<float> out;
  for (const auto& p : n.parameters()) out.insert(out.end(), p.value.data().begin(), p.value.data().end());
  return out;
}

}  // namespace

TEST_CASE("Adam matches a double-precision transcription of the update") {
  TrainState s = TrainState::fresh(kTiny, 1);
  TrainConfig cfg;
  cfg.lr = 1e-2f;
  const std::vector<float> w0 = flat(s.net);
  std::vector<double> w(w0.begin(), w0.end()), m(w.size(), 0), v(w.size(), 0);
  for (int t = 1; t <= 3; ++t) {
    const auto grad = [t](std::size_t k, std::size_t i, float) { return std::sin(0.37f * (k + 1) * (i + 1) * t); };
    set_grads(s, grad);
    adam_step(s, cfg);
    std::size_t j = 0;
    for (std::size_t k = 0; k < s.net.parameters().size(); ++k)
      for (std::size_t i = 0; i < s.net.parameters()[k].value.numel(); ++i, ++j) {
        const double g = grad(k, i, 0);
        m[j] = 0.9 * m[j] + 0.1 * g;
        v[j] = 0.999 * v[j] + 0.001 * g * g;
        const double mh = m[j] / (1 - std::pow(0.9, t)), vh = v[j] / (1 - std::pow(0.999, t));
        w[j] -= 1e-2 * mh / (std::sqrt(vh) + 1e-8);
      }
  }
  CHECK(s.adam_steps == 3);
  const auto got = flat(s.net);
  double worst = 0;
  for (std::size_t j = 0; j < w.size(); ++j) worst = std::max(worst, std::abs(got[j] - w[j]));
  CHECK(worst < 1e-6);
}

TEST_CASE("first Adam step moves every weight by lr against its gradient sign") {
  TrainState s = TrainState::fresh(kTiny, 2);
  TrainConfig cfg;
  cfg.lr = 1e-3f;
  const auto w0 = flat(s.net);
  set_grads(s, [](std::size_t, std::size_t i, float) { return i % 2 ? 0.5f : -3.0f; });
  adam_step(s, cfg);
  const auto w1 = flat(s.net);
  std::size_t j = 0;
  for (const auto& p : s.net.parameters())
    for (std::size_t i = 0; i < p.value.numel(); ++i, ++j)
      CHECK(w1[j] - w0[j] == doctest::Approx(i % 2 ? -1e-3 : 1e-3).epsilon(1e-4));
}

TEST_CASE("Adam minimizes a quadratic") {
  TrainState s = TrainState::fresh(kTiny, 3);
  TrainConfig cfg;
  cfg.lr = 2e-2f;
  const auto target = [](std::size_t k, std::size_t i) { return 0.25f * std::cos(static_cast<float>(k * 31 + i)); };
  for (int t = 0; t < 1500; ++t) set_grads(s, [&](std::size_t k, std::size_t i, float w) { return 2 * (w - target(k, i)); }), adam_step(s, cfg);
  double worst = 0;
  for (std::size_t k = 0; k < s.net.parameters().size(); ++k) {
    const auto w = s.net.parameters()[k].value.data();
    for (std::size_t i = 0; i < w.size(); ++i) worst = std::max(worst, static_cast<double>(std::abs(w[i] - target(k, i))));
  }
  CHECK(worst < 1e-2);
}

TEST_CASE("a non-finite gradient aborts the step without touching the state") {
  TrainState s = TrainState::fresh(kTiny, 4);
  const auto w0 = flat(s.net);
  set_grads(s, [](std::size_t k, std::size_t i, float) { return k == 3 && i == 2 ? NAN : 1.0f; });
  CHECK_THROWS_AS(adam_step(s, TrainConfig{}), TrainingError);
  CHECK(flat(s.net) == w0);
  CHECK(s.adam_steps == 0);
  for (const auto& m : s.m)
    for (float x : m) CHECK(x == 0.0f);
}

TEST_CASE("collapse diagnostic") {
  Evaluation e;
  e.truth_histogram = {500, 300, 200, 0};
  e.predicted_histogram = {400, 350, 250, 0};
  CHECK_FALSE(detect_collapse(e));
  e.predicted_histogram = {995, 0, 5, 0};
  const auto msg = detect_collapse(e);
  REQUIRE(msg);
  CHECK(msg->find("class 1") != std::string::npos);
  CHECK(msg->find("class 2") != std::string::npos);
  e.predicted_histogram = {0, 0, 0, 1000};  // a class absent from the truth does not count
  CHECK(detect_collapse(e));
}

TEST_CASE("schedule guards") {
  const Dataset ds = tiny_dataset();
  const TrainingData data = TrainingData::from(ds, nullptr);
  TrainState s = TrainState::fresh(kTiny, 5);
  TrainConfig cfg;
  cfg.pretrain_steps = 2;
  cfg.joint_steps = 2;
  CHECK_THROWS_AS(train_joint(s, data, cfg), TrainingError);
  cfg.require_pretrain = false;
  CHECK_NOTHROW(train_joint(s, data, cfg));
  Dataset bare = ds;
  for (auto& f : bare.train) f.annotation.reset();
  TrainState s2 = TrainState::fresh(kTiny, 5);
  CHECK_THROWS_AS(pretrain(s2, TrainingData::from(bare, nullptr), cfg), TrainingError);
  cfg.lr = 0;
  CHECK_THROWS_AS(pretrain(s2, data, cfg), ConfigError);
}

TEST_CASE("training data: propagated labels fill unlabeled frames, labeled frames keep theirs") {
  const Dataset ds = tiny_dataset();
  const auto prop = propagate_dataset(ds, 0.05, 1).labels;
  const TrainingData plain = TrainingData::from(ds, nullptr), with = TrainingData::from(ds, &prop);
  CHECK(plain.supervised.size() == ds.labeled().size());
  CHECK(with.supervised.size() > plain.supervised.size());
  CHECK(with.anchors.size() == ds.unlabeled().size());
  for (std::size_t i = 0; i < ds.train.size(); ++i)
    if (ds.train[i].annotation) CHECK(*with.frames[i].annotation == *ds.train[i].annotation);
}

TEST_CASE("pretraining lowers the supervised loss and selects the best validation snapshot") {
  const Dataset ds = tiny_dataset();
  const TrainingData data = TrainingData::from(ds, nullptr);
  TrainState s = TrainState::fresh(kTiny, 6);
  TrainConfig cfg;
  cfg.lr = 3e-3f;
  cfg.pretrain_steps = 80;
  cfg.validate_every = 20;
  std::vector<float> losses;
  std::vector<double> acc;
  pretrain(s, data, cfg, [&](const LogRecord& r) {
    losses.push_back(r.supervised);
    if (r.val_accuracy) acc.push_back(*r.val_accuracy);
  });
  CHECK(s.step == 80);
  CHECK(s.pretrained);
  CHECK(acc.size() == 4);
  const double first = (losses[0] + losses[1] + losses[2]) / 3, last = (losses[77] + losses[78] + losses[79]) / 3;
  CHECK(last < first);
  CHECK(s.best_accuracy == *std::max_element(acc.begin(), acc.end()));
  CHECK(evaluate(s.best, [&] {
          std::vector<const Frame*> v;
          for (const auto& f : ds.validation) v.push_back(&f);
          return v;
        }(), 4).accuracy == doctest::Approx(s.best_accuracy));
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run bitwise") {
  const Dataset ds = tiny_dataset();
  const auto prop = propagate_dataset(ds, 0.05, 1).labels;
  const TrainingData data = TrainingData::from(ds, &prop);
  TrainConfig cfg;
  cfg.pretrain_steps = 6;
  cfg.joint_steps = 6;
  cfg.validate_every = 4;
  TrainState full = TrainState::fresh(kTiny, 7);
  pretrain(full, data, cfg);
  train_joint(full, data, cfg);

  const fs::path dir = fs::temp_directory_path() / "geoseg_test_resume";
  fs::create_directories(dir);
  for (const std::uint64_t cut : {3u, 6u, 9u}) {
    TrainState a = TrainState::fresh(kTiny, 7);
    pretrain(a, data, cfg, {}, cut);
    if (a.pretrained) train_joint(a, data, cfg, {}, cut - 6);
    io::write_checkpoint(a, dir / "cut.gsck");
    TrainState b = io::read_checkpoint(dir / "cut.gsck");
    pretrain(b, data, cfg);
    train_joint(b, data, cfg);
    CHECK(flat(b.net) == flat(full.net));
    CHECK(flat(b.best) == flat(full.best));
    CHECK(b.m == full.m);
    CHECK(b.v == full.v);
    CHECK(b.best_step == full.best_step);
    CHECK(b.step == 12);
  }
  fs::remove_all(dir);
}

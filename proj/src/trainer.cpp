#include "geoseg/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "geoseg/error.hpp"
#include "geoseg/rng.hpp"

namespace geoseg {
namespace {

std::vector<const Frame*> pointers(const std::vector<Frame>& frames) {
  std::vector<const Frame*> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(&f);
  return out;
}

// Consistency groups for one step: an anchor from U and up to `neighbor_count` distinct
// other frames of its sequence, drawn without replacement.
std::vector<ConsistencyGroup> sample_groups(const TrainingData& data, const TrainConfig& config, Rng& rng) {
  std::vector<ConsistencyGroup> groups;
  if (data.anchors.empty()) return groups;
  for (int g = 0; g < config.consistency_batch; ++g) {
    const std::size_t anchor = data.anchors[rng.index(data.anchors.size())];
    const Frame& a = data.frames[anchor];
    std::vector<std::size_t> pool;
    for (std::size_t i : data.sequences.at(a.sequence))
      if (i != anchor) pool.push_back(i);
    ConsistencyGroup group{&a, {}};
    const std::size_t k = std::min<std::size_t>(config.neighbor_count, pool.size());
    for (std::size_t j = 0; j < k; ++j) {
      std::swap(pool[j], pool[j + rng.index(pool.size() - j)]);
      group.neighbors.push_back(&data.frames[pool[j]]);
    }
    groups.push_back(std::move(group));
  }
  return groups;
}

void run_steps(TrainState& state, const TrainingData& data, const TrainConfig& config, bool joint,
               std::uint64_t end_step, const LogSink& sink, std::optional<std::uint64_t> max_steps) {
  const LossConfig loss_cfg = config.loss_config();
  std::uint64_t taken = 0;
  while (state.step < end_step && (!max_steps || taken < *max_steps)) {
    const std::uint64_t s = state.step;
    Rng sup_rng(derive_seed(config.seed, {s, 0}));
    SupervisedBatch batch;
    for (int i = 0; i < config.supervised_batch; ++i)
      batch.frames.push_back(&data.frames[data.supervised[sup_rng.index(data.supervised.size())]]);

    std::vector<ConsistencyGroup> groups;
    if (joint && config.lambda > 0.0f) {
      Rng cons_rng(derive_seed(config.seed, {s, 1}));
      groups = sample_groups(data, config, cons_rng);
    }

    state.net.zero_grad();
    Tape tape;
    const LossBreakdown loss = total_loss(tape, state.net, batch, groups, loss_cfg, data.intrinsics);
    if (loss.total.requires_grad()) tape.backward(loss.total);
    adam_step(state, config);
    ++state.step;
    ++taken;

    LogRecord rec;
    rec.step = state.step;
    rec.phase = joint ? "joint" : "pretrain";
    rec.supervised = loss.supervised;
    rec.consistency = loss.consistency;
    rec.total = loss.total.item();
    if (!data.validation.empty() &&
        (state.step % static_cast<std::uint64_t>(config.validate_every) == 0 || state.step == end_step)) {
      const Evaluation ev = validate_and_select(state, data);
      rec.val_accuracy = ev.accuracy;
      rec.val_iou = ev.iou.mean;
    }
    if (sink) sink(rec);
  }
  if (data.validation.empty() && state.step == end_step) {
    state.best = state.net.clone();
    state.best_step = state.step;
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (supervised_batch < 1 || consistency_batch < 1 || neighbor_count < 1 || validate_every < 1)
    throw ConfigError("train: batch sizes, neighbor_count and validate_every must be >= 1");
  if (pretrain_steps < 0 || joint_steps < 0) throw ConfigError("train: step counts must be >= 0");
  if (!(lr > 0)) throw ConfigError("train: learning rate must be > 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("train: Adam betas must lie in [0, 1)");
  if (!(epsilon > 0)) throw ConfigError("train: Adam epsilon must be > 0");
  if (!(lambda >= 0)) throw ConfigError("train: lambda must be >= 0");
  if (!(occl_threshold > 0)) throw ConfigError("train: occlusion threshold must be > 0");
}

LossConfig TrainConfig::loss_config() const {
  LossConfig c;
  c.lambda = lambda;
  c.class_weights = class_weights;
  c.neighbor_count = neighbor_count;
  c.occl_threshold = occl_threshold;
  return c;
}

TrainState TrainState::fresh(const NetConfig& config, std::uint64_t init_seed) {
  TrainState s;
  s.net = Network::build(config, init_seed);
  for (const auto& p : s.net.parameters()) {
    s.m.emplace_back(p.value.numel(), 0.0f);
    s.v.emplace_back(p.value.numel(), 0.0f);
  }
  s.best = s.net.clone();
  return s;
}

void adam_step(TrainState& state, const TrainConfig& config) {
  auto& params = state.net.parameters();
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw TrainingError("adam: moment buffers do not match the parameters");
  for (const auto& p : params) {
    if (!p.value.has_grad()) continue;
    const auto g = p.value.grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!std::isfinite(g[i]))
        throw TrainingError("adam: non-finite gradient " + std::to_string(g[i]) + " in " + p.name + "[" +
                            std::to_string(i) + "] at step " + std::to_string(state.step));
  }
  const std::uint64_t t = state.adam_steps + 1;
  const float b1 = static_cast<float>(config.beta1), b2 = static_cast<float>(config.beta2);
  const float c1 = static_cast<float>(1.0 - std::pow(config.beta1, static_cast<double>(t)));
  const float c2 = static_cast<float>(1.0 - std::pow(config.beta2, static_cast<double>(t)));
  const float eps = static_cast<float>(config.epsilon);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& w = params[k].value;
    auto x = w.mutable_data();
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != x.size() || v.size() != x.size()) throw TrainingError("adam: moment shape mismatch for " + params[k].name);
    const bool has = w.has_grad();
    const auto g = has ? w.grad() : std::span<const float>{};
    for (std::size_t i = 0; i < x.size(); ++i) {
      const float gi = has ? g[i] : 0.0f;
      m[i] = b1 * m[i] + (1.0f - b1) * gi;
      v[i] = b2 * v[i] + (1.0f - b2) * gi * gi;
      const float mhat = m[i] / c1, vhat = v[i] / c2;
      x[i] -= config.lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
  state.adam_steps = t;
}

TrainingData TrainingData::from(const Dataset& ds, const std::map<std::string, LabelMap>* propagated) {
  TrainingData data;
  data.intrinsics = ds.intrinsics;
  data.num_classes = ds.num_classes();
  data.frames = ds.train;
  data.validation = ds.validation;
  for (std::size_t i = 0; i < data.frames.size(); ++i) {
    Frame& f = data.frames[i];
    if (!f.annotation) {
      data.anchors.push_back(i);
      if (propagated) {
        const auto it = propagated->find(f.id());
        if (it != propagated->end()) f.annotation = it->second;
      }
    }
    if (f.annotation && f.annotation->annotated_count() > 0) data.supervised.push_back(i);
    data.sequences[f.sequence].push_back(i);
  }
  return data;
}

std::vector<LabelMap> predict(const Network& net, const std::vector<const Frame*>& frames) {
  std::vector<LabelMap> out;
  out.reserve(frames.size());
  constexpr std::size_t chunk = 4;
  for (std::size_t i = 0; i < frames.size(); i += chunk) {
    const std::vector<const Frame*> batch(frames.begin() + i, frames.begin() + std::min(frames.size(), i + chunk));
    Tape tape = Tape::inference();
    const Tensor probs = net.forward(tape, image_tensor(batch));
    for (std::size_t b = 0; b < batch.size(); ++b) out.push_back(argmax_labels(probs, static_cast<int>(b)));
  }
  return out;
}

Evaluation evaluate(const Network& net, const std::vector<const Frame*>& frames, int num_classes) {
  std::vector<LabelMap> truths;
  for (const auto* f : frames) {
    if (!f->annotation) throw Error("evaluate: frame " + f->id() + " has no annotation");
    truths.push_back(*f->annotation);
  }
  const auto preds = predict(net, frames);
  Evaluation ev;
  ev.accuracy = accuracy(preds, truths);
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) cm.add(preds[i], truths[i]);
  ev.iou = iou(cm);
  ev.predicted_histogram.assign(num_classes, 0);
  ev.truth_histogram.assign(num_classes, 0);
  for (int t = 0; t < num_classes; ++t)
    for (int p = 0; p < num_classes; ++p) {
      ev.truth_histogram[t] += cm.at(t, p);
      ev.predicted_histogram[p] += cm.at(t, p);
    }
  return ev;
}

std::optional<std::string> detect_collapse(const Evaluation& eval) {
  std::uint64_t total = 0;
  for (auto n : eval.truth_histogram) total += n;
  if (!total) return std::nullopt;
  std::string msg;
  for (std::size_t c = 0; c < eval.truth_histogram.size(); ++c) {
    if (!eval.truth_histogram[c]) continue;
    const double frac = static_cast<double>(eval.predicted_histogram[c]) / static_cast<double>(total);
    if (frac < 0.01)
      msg += (msg.empty() ? "" : ", ") + ("class " + std::to_string(c) + " predicted on " +
                                          std::to_string(100.0 * frac) + "% of pixels");
  }
  if (msg.empty()) return std::nullopt;
  return "prediction collapse (consistency training without a supervised warm-up can converge to "
         "predicting few classes everywhere): " + msg;
}

Evaluation validate_and_select(TrainState& state, const TrainingData& data) {
  const Evaluation ev = evaluate(state.net, pointers(data.validation), data.num_classes);
  if (ev.accuracy > state.best_accuracy) {
    state.best_accuracy = ev.accuracy;
    state.best = state.net.clone();
    state.best_step = state.step;
  }
  return ev;
}

void pretrain(TrainState& state, const TrainingData& data, const TrainConfig& config, const LogSink& sink,
              std::optional<std::uint64_t> max_steps) {
  config.validate();
  if (data.supervised.empty()) throw TrainingError("pretrain: no frame carries an annotation");
  run_steps(state, data, config, false, static_cast<std::uint64_t>(config.pretrain_steps), sink, max_steps);
  if (state.step >= static_cast<std::uint64_t>(config.pretrain_steps)) state.pretrained = true;
}

void train_joint(TrainState& state, const TrainingData& data, const TrainConfig& config, const LogSink& sink,
                 std::optional<std::uint64_t> max_steps) {
  config.validate();
  if (config.require_pretrain && !state.pretrained)
    throw TrainingError("train_joint: run pretrain first (or disable require_pretrain)");
  if (data.supervised.empty()) throw TrainingError("train_joint: no frame carries an annotation");
  run_steps(state, data, config, true,
            static_cast<std::uint64_t>(config.pretrain_steps) + static_cast<std::uint64_t>(config.joint_steps), sink,
            max_steps);
}

}  // namespace geoseg

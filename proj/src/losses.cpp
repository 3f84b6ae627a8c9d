#include "geoseg/losses.hpp"

#include <cmath>

#include "geoseg/error.hpp"

namespace geoseg {

void LossConfig::validate(int num_classes) const {
  if (!(lambda >= 0)) throw ConfigError("loss: lambda must be >= 0");
  if (neighbor_count < 1) throw ConfigError("loss: neighbor_count must be >= 1");
  if (!(occl_threshold > 0)) throw ConfigError("loss: occlusion threshold must be > 0");
  if (!class_weights.empty()) {
    if (static_cast<int>(class_weights.size()) != num_classes)
      throw ConfigError("loss: expected " + std::to_string(num_classes) + " class weights");
    for (float w : class_weights)
      if (!(w > 0)) throw ConfigError("loss: class weights must be > 0");
  }
}

CrossEntropy cross_entropy(Tape& tape, const Tensor& pred, const std::vector<const LabelMap*>& targets,
                           const std::vector<float>& class_weights) {
  if (pred.rank() != 4) throw ShapeError("cross_entropy: prediction must be [B,C,H,W]");
  const int batch = pred.dim(0), channels = pred.dim(1), h = pred.dim(2), w = pred.dim(3);
  if (static_cast<int>(targets.size()) != batch)
    throw ShapeError("cross_entropy: one label map per batch entry required");
  if (!class_weights.empty() && static_cast<int>(class_weights.size()) != channels)
    throw ShapeError("cross_entropy: class weight count does not match channels");
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  // Per-sample normalizers: 1 / (annotated pixels * supervised samples).
  std::vector<float> scale(batch, 0.0f);
  int supervised = 0;
  for (int b = 0; b < batch; ++b) {
    const LabelMap& t = *targets[b];
    if (t.width != w || t.height != h) throw ShapeError("cross_entropy: label extents do not match");
    std::size_t count = 0;
    for (auto l : t.labels) {
      if (l == kIgnore) continue;
      if (l >= channels)
        throw ShapeError("cross_entropy: label " + std::to_string(l) + " >= channel count " +
                         std::to_string(channels));
      ++count;
    }
    if (count) {
      scale[b] = 1.0f / static_cast<float>(count);
      ++supervised;
    }
  }
  CrossEntropy result;
  if (supervised == 0) {
    result.loss = Tensor::scalar(0.0f);
    result.empty_supervision = true;
    return result;
  }
  for (auto& s : scale) s /= static_cast<float>(supervised);

  auto weight = [&](int c) { return class_weights.empty() ? 1.0f : class_weights[c]; };
  const auto p = pred.data();
  double total = 0.0;
  for (int b = 0; b < batch; ++b) {
    if (scale[b] == 0.0f) continue;
    double sample = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      const auto l = targets[b]->labels[i];
      if (l == kIgnore) continue;
      const float prob = std::max(p[(static_cast<std::size_t>(b) * channels + l) * plane + i], kProbabilityFloor);
      sample -= weight(l) * std::log(prob);
    }
    total += sample * scale[b];
  }
  result.loss = Tensor::scalar(static_cast<float>(total));

  std::vector<LabelMap> labels;
  labels.reserve(batch);
  for (const auto* t : targets) labels.push_back(*t);
  result.loss = tape.record(
      OpKind::cross_entropy, {pred}, result.loss,
      [pred, labels = std::move(labels), scale, class_weights, batch, channels, plane](const Tensor& o) {
        Tensor x = pred;
        auto g = x.mutable_grad();
        const auto pv = x.data();
        const float go = o.grad()[0];
        for (int b = 0; b < batch; ++b) {
          if (scale[b] == 0.0f) continue;
          for (std::size_t i = 0; i < plane; ++i) {
            const auto l = labels[b].labels[i];
            if (l == kIgnore) continue;
            const std::size_t idx = (static_cast<std::size_t>(b) * channels + l) * plane + i;
            if (pv[idx] < kProbabilityFloor) continue;  // clamped: flat
            const float wgt = class_weights.empty() ? 1.0f : class_weights[l];
            g[idx] -= go * wgt * scale[b] / pv[idx];
          }
        }
      });
  return result;
}

Tensor masked_l1(Tape& tape, const Tensor& a, const Tensor& b, const ValidityMask& mask) {
  if (a.shape() != b.shape() || a.rank() != 4 || a.dim(0) != 1)
    throw ShapeError("masked_l1: operands must share a [1,C,H,W] shape");
  const int channels = a.dim(1);
  const std::size_t plane = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  if (mask.valid.size() != plane) throw ShapeError("masked_l1: mask extents do not match");
  const std::size_t count = mask.count();
  if (count == 0) return Tensor::scalar(0.0f);
  const float norm = 1.0f / static_cast<float>(count * channels);
  double acc = 0.0;
  for (int c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < plane; ++p)
      if (mask.valid[p]) acc += std::abs(a.data()[c * plane + p] - b.data()[c * plane + p]);
  Tensor out = Tensor::scalar(static_cast<float>(acc * norm));
  auto valid = std::make_shared<std::vector<std::uint8_t>>(mask.valid);
  return tape.record(OpKind::masked_l1, {a, b}, out, [a, b, valid, norm, channels, plane](const Tensor& o) {
    Tensor ta = a, tb = b;
    const float go = o.grad()[0] * norm;
    for (int c = 0; c < channels; ++c)
      for (std::size_t p = 0; p < plane; ++p) {
        if (!(*valid)[p]) continue;
        const std::size_t i = c * plane + p;
        const float d = ta.data()[i] - tb.data()[i];
        const float s = d > 0 ? 1.0f : (d < 0 ? -1.0f : 0.0f);
        if (ta.requires_grad()) ta.mutable_grad()[i] += go * s;
        if (tb.requires_grad()) tb.mutable_grad()[i] -= go * s;
      }
  });
}

Tensor geometric_consistency(Tape& tape, const Tensor& student_pred, const Tensor& teacher_pred,
                             const Frame& teacher_frame, const Frame& student_frame,
                             const Intrinsics& K, double occl_threshold) {
  const Tensor teacher = detach(teacher_pred);
  const WarpResult warped =
      warp_probabilities(tape, teacher, student_frame, teacher_frame, K, occl_threshold);
  return masked_l1(tape, student_pred, warped.probabilities, warped.mask);
}

Tensor combine_losses(Tape& tape, const Tensor& supervised, const Tensor& consistency, float lambda) {
  if (lambda == 0.0f) return supervised;
  return tape.add(supervised, tape.scale(consistency, lambda));
}

LossBreakdown total_loss(Tape& tape, const Network& net, const SupervisedBatch& supervised,
                         const std::vector<ConsistencyGroup>& consistency, const LossConfig& config,
                         const Intrinsics& K) {
  config.validate(net.config().num_classes);
  LossBreakdown out;

  Tensor ls = Tensor::scalar(0.0f);
  if (!supervised.frames.empty()) {
    std::vector<const LabelMap*> targets;
    for (const auto* f : supervised.frames) {
      if (!f->annotation) throw TrainingError("supervised frame " + f->id() + " has no annotation");
      targets.push_back(&*f->annotation);
    }
    const Tensor pred = net.forward(tape, image_tensor(supervised.frames));
    auto ce = cross_entropy(tape, pred, targets, config.class_weights);
    ls = ce.loss;
    out.empty_supervision = ce.empty_supervision;
  } else {
    out.empty_supervision = true;
  }
  out.supervised = ls.item();

  if (config.lambda == 0.0f || consistency.empty()) {
    out.total = ls;
    return out;
  }

  Tensor lg;
  for (const auto& group : consistency) {
    if (group.neighbors.empty()) continue;
    const Tensor student = net.forward(tape, image_tensor({group.anchor}));
    Tape teacher_tape = Tape::inference();
    const Tensor teachers = net.forward(teacher_tape, image_tensor(group.neighbors));
    for (std::size_t i = 0; i < group.neighbors.size(); ++i) {
      const Tensor teacher = teacher_tape.slice_batch(teachers, static_cast<int>(i));
      Tensor term = geometric_consistency(tape, student, teacher, *group.neighbors[i], *group.anchor,
                                          K, config.occl_threshold);
      lg = lg.defined() ? tape.add(lg, term) : term;
    }
  }
  if (!lg.defined()) lg = Tensor::scalar(0.0f);
  out.consistency = lg.item();
  out.total = combine_losses(tape, ls, lg, config.lambda);
  return out;
}

}  // namespace geoseg

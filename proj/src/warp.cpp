#include "geoseg/warp.hpp"

#include "geoseg/error.hpp"
#include "geoseg/kernels.hpp"

namespace geoseg {

std::size_t ValidityMask::count() const {
  std::size_t n = 0;
  for (auto v : valid) n += v;
  return n;
}

WarpResult bilinear_sample(Tape& tape, const Tensor& maps, const CorrespondenceField& coords) {
  if (maps.rank() != 4 || maps.dim(0) != 1)
    throw ShapeError("bilinear_sample: maps must be [1,C,H,W], got " + to_string(maps.shape()));
  const std::size_t npix = static_cast<std::size_t>(coords.width) * coords.height;
  if (coords.u.size() != npix || coords.v.size() != npix || coords.valid.size() != npix)
    throw ShapeError("bilinear_sample: correspondence field storage does not match its extents");
  const int channels = maps.dim(1), src_h = maps.dim(2), src_w = maps.dim(3);
  for (std::size_t p = 0; p < npix; ++p) {
    if (!coords.valid[p]) continue;
    if (!(coords.u[p] >= 0 && coords.v[p] >= 0 && coords.u[p] <= src_w - 1 &&
          coords.v[p] <= src_h - 1))
      throw ShapeError("bilinear_sample: valid coordinate outside the source extents " +
                       to_string(maps.shape()));
  }

  Tensor out = Tensor::zeros({1, channels, coords.height, coords.width});
  kernels::bilinear_forward(maps.data(), channels, src_h, src_w, coords.u, coords.v, coords.valid,
                            out.mutable_data());
  WarpResult result{out, {coords.width, coords.height, coords.valid}};
  if (!tape.recording() || !maps.requires_grad()) return result;

  // Coordinates are fixed inputs (depth and pose are not learned): no gradient for them.
  auto u = std::make_shared<std::vector<float>>(coords.u);
  auto v = std::make_shared<std::vector<float>>(coords.v);
  auto valid = std::make_shared<std::vector<std::uint8_t>>(coords.valid);
  result.probabilities = tape.record(
      OpKind::bilinear_sample, {maps}, out,
      [maps, u, v, valid, channels, src_h, src_w](const Tensor& o) {
        Tensor m = maps;
        kernels::bilinear_backward(o.grad(), channels, src_h, src_w, *u, *v, *valid,
                                   m.mutable_grad());
      });
  return result;
}

CorrespondenceField frame_correspondence(const Frame& target_frame, const Frame& source_frame,
                                         const Intrinsics& K, double occl_threshold) {
  if (target_frame.sequence != source_frame.sequence)
    throw GeometryError("cannot warp between sequences '" + target_frame.sequence + "' and '" +
                        source_frame.sequence + "': they share no registration");
  const RigidTransform motion = relative_transform(target_frame.pose, source_frame.pose);
  return compute_correspondence(target_frame.depth, K, motion, source_frame.depth, occl_threshold);
}

WarpResult warp_probabilities(Tape& tape, const Tensor& source_pred, const Frame& target_frame,
                              const Frame& source_frame, const Intrinsics& K,
                              double occl_threshold) {
  if (source_pred.rank() != 4 || source_pred.dim(2) != source_frame.height() ||
      source_pred.dim(3) != source_frame.width())
    throw ShapeError("warp_probabilities: prediction " + to_string(source_pred.shape()) +
                     " does not match the source frame extents");
  return bilinear_sample(tape, source_pred,
                         frame_correspondence(target_frame, source_frame, K, occl_threshold));
}

}  // namespace geoseg

#include "geoseg/camera.hpp"

#include <cmath>
#include <string>

#include "geoseg/error.hpp"

namespace geoseg {

void Intrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw GeometryError("intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw GeometryError("intrinsics: extents must be positive");
  if (!(cx > 0 && cx < width && cy > 0 && cy < height))
    throw GeometryError("intrinsics: principal point (" + std::to_string(cx) + ", " +
                        std::to_string(cy) + ") outside the image");
}

Eigen::Matrix3d Intrinsics::matrix() const {
  Eigen::Matrix3d k;
  k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return k;
}

RigidTransform RigidTransform::from_matrix(const Eigen::Matrix4d& m) {
  RigidTransform t;
  t.rotation = m.topLeftCorner<3, 3>();
  t.translation = m.topRightCorner<3, 1>();
  if ((m.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-9)
    throw GeometryError("rigid transform: last row must be 0 0 0 1");
  t.validate();
  return t;
}

RigidTransform RigidTransform::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                                       const Eigen::Vector3d& up) {
  const Eigen::Vector3d z = (target - eye).normalized();
  const Eigen::Vector3d x = z.cross(up).normalized();
  const Eigen::Vector3d y = z.cross(x);
  RigidTransform t;
  t.rotation.col(0) = x;
  t.rotation.col(1) = y;
  t.rotation.col(2) = z;
  t.translation = eye;
  return t;
}

Eigen::Matrix4d RigidTransform::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform t;
  t.rotation = rotation.transpose();
  t.translation = -(t.rotation * translation);
  return t;
}

RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform t;
  t.rotation = a.rotation * b.rotation;
  t.translation = a.rotation * b.translation + a.translation;
  return t;
}

bool RigidTransform::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
}

void RigidTransform::validate(double tol) const {
  if (!is_valid(tol))
    throw GeometryError("rigid transform: rotation is not orthonormal with det +1 (det = " +
                        std::to_string(rotation.determinant()) + ")");
}

void DepthMap::validate() const {
  if (values.size() != static_cast<std::size_t>(width) * height)
    throw GeometryError("depth map: storage does not match extents");
  for (float d : values)
    if (!std::isfinite(d) || d < 0.0f) throw GeometryError("depth map: negative or non-finite value");
}

std::size_t CorrespondenceField::valid_count() const {
  std::size_t n = 0;
  for (auto v : valid) n += v;
  return n;
}

RigidTransform relative_transform(const RigidTransform& pose_target,
                                  const RigidTransform& pose_source) {
  pose_target.validate();
  pose_source.validate();
  return pose_source.inverse() * pose_target;
}

namespace {

// Rounding in composed poses can push a border pixel a hair outside the image; coordinates
// within this distance of an edge are moved onto it.
constexpr double kEdgeSnap = 1e-4;

double snap_to_edge(double c, int extent) {
  if (c < 0 && c >= -kEdgeSnap) return 0.0;
  if (c > extent - 1 && c <= extent - 1 + kEdgeSnap) return extent - 1;
  return c;
}

}  // namespace

std::optional<double> sample_depth(const DepthMap& depth, double u, double v) {
  if (!(u >= 0.0 && v >= 0.0 && u <= depth.width - 1 && v <= depth.height - 1)) return std::nullopt;
  const int x0 = static_cast<int>(std::floor(u)), y0 = static_cast<int>(std::floor(v));
  const int x1 = std::min(x0 + 1, depth.width - 1), y1 = std::min(y0 + 1, depth.height - 1);
  const double ax = u - x0, ay = v - y0;
  const double d00 = depth.at(x0, y0), d01 = depth.at(x1, y0);
  const double d10 = depth.at(x0, y1), d11 = depth.at(x1, y1);
  const double w00 = (1 - ax) * (1 - ay), w01 = ax * (1 - ay), w10 = (1 - ax) * ay, w11 = ax * ay;
  // Only neighbours that carry weight must have depth.
  if ((w00 > 0 && d00 <= 0) || (w01 > 0 && d01 <= 0) || (w10 > 0 && d10 <= 0) || (w11 > 0 && d11 <= 0))
    return std::nullopt;
  return w00 * d00 + w01 * d01 + w10 * d10 + w11 * d11;
}

CorrespondenceField compute_correspondence(const DepthMap& depth_target, const Intrinsics& K,
                                           const RigidTransform& motion,
                                           const DepthMap& depth_source, double occl_threshold) {
  K.validate();
  if (depth_target.width != K.width || depth_target.height != K.height ||
      depth_source.width != K.width || depth_source.height != K.height)
    throw GeometryError("compute_correspondence: depth map extents do not match the intrinsics");
  if (!(occl_threshold > 0)) throw GeometryError("compute_correspondence: occlusion threshold must be > 0");
  motion.validate();

  CorrespondenceField field;
  field.width = K.width;
  field.height = K.height;
  const std::size_t n = static_cast<std::size_t>(K.width) * K.height;
  field.u.assign(n, 0.0f);
  field.v.assign(n, 0.0f);
  field.depth.assign(n, 0.0f);
  field.valid.assign(n, 0);

#pragma omp parallel for schedule(static)
  for (int y = 0; y < K.height; ++y) {
    for (int x = 0; x < K.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * K.width + x;
      const double d = depth_target.at(x, y);
      if (d <= 0) continue;
      const Eigen::Vector3d q = motion.apply(K.backproject(x, y, d));
      field.depth[i] = static_cast<float>(q.z());
      if (q.z() <= 0) continue;
      const Eigen::Vector2d uv = K.project(q);
      field.u[i] = static_cast<float>(snap_to_edge(uv.x(), K.width));
      field.v[i] = static_cast<float>(snap_to_edge(uv.y(), K.height));
      // Bounds and occlusion are decided on the stored coordinates so samplers that read
      // the field agree with the validity flag.
      const auto src = sample_depth(depth_source, field.u[i], field.v[i]);
      if (!src) continue;
      if (std::abs(*src - q.z()) <= occl_threshold) field.valid[i] = 1;
    }
  }
  return field;
}

}  // namespace geoseg

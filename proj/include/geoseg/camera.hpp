#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstdint>
#include <optional>
#include <vector>

namespace geoseg {

/// Pinhole intrinsics in pixels. Pixel centres sit at integer coordinates, the origin is
/// the top-left pixel and the camera looks down +z.
struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  /// Throws GeometryError unless fx, fy > 0 and the principal point lies inside the image.
  void validate() const;

  Eigen::Vector3d backproject(double u, double v, double depth) const {
    return {(u - cx) / fx * depth, (v - cy) / fy * depth, depth};
  }
  Eigen::Vector2d project(const Eigen::Vector3d& p) const {
    return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy};
  }
  Eigen::Matrix3d matrix() const;
  bool operator==(const Intrinsics&) const = default;
};

/// Rotation + translation (meters). Camera poses are camera-to-world.
struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static RigidTransform identity() { return {}; }
  /// Throws GeometryError unless `m` is a rigid transform.
  static RigidTransform from_matrix(const Eigen::Matrix4d& m);
  /// Camera-to-world pose at `eye` looking at `target`, image y axis along -`up`.
  static RigidTransform look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                                const Eigen::Vector3d& up = Eigen::Vector3d(0, 1, 0));

  Eigen::Matrix4d matrix() const;
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }
  RigidTransform inverse() const;
  /// (a * b).apply(p) == a.apply(b.apply(p))
  friend RigidTransform operator*(const RigidTransform& a, const RigidTransform& b);

  /// Throws GeometryError unless R^T R = I and det R = +1 within `tol`.
  void validate(double tol = 1e-6) const;
  bool is_valid(double tol = 1e-6) const;
};

/// Per-pixel depth along the optical axis in meters; 0 means "no depth".
struct DepthMap {
  int width = 0, height = 0;
  std::vector<float> values;

  DepthMap() = default;
  DepthMap(int w, int h, float fill = 0.0f)
      : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

  float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  float& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  /// Throws GeometryError on negative or non-finite entries.
  void validate() const;
};

/// For every target pixel: continuous source coordinates, transformed depth and validity.
struct CorrespondenceField {
  int width = 0, height = 0;
  std::vector<float> u, v, depth;
  std::vector<std::uint8_t> valid;

  std::size_t valid_count() const;
};

/// Motion mapping target-camera coordinates into source-camera coordinates, given the
/// camera-to-world poses of both frames.
RigidTransform relative_transform(const RigidTransform& pose_target,
                                  const RigidTransform& pose_source);

/// Bilinear depth at a continuous location, or nothing when the location is outside the
/// image or a neighbour with non-zero bilinear weight has no depth.
std::optional<double> sample_depth(const DepthMap& depth, double u, double v);

inline constexpr double kDefaultOcclusionThreshold = 0.05;

/// Inverse-warp correspondence driven by the target depth. A pixel is valid when it has
/// depth, lands in front of the source camera and inside the source image, and the source
/// depth at the landing point agrees with the transformed depth within `occl_threshold`.
CorrespondenceField compute_correspondence(const DepthMap& depth_target, const Intrinsics& K,
                                           const RigidTransform& motion,
                                           const DepthMap& depth_source,
                                           double occl_threshold = kDefaultOcclusionThreshold);

}  // namespace geoseg

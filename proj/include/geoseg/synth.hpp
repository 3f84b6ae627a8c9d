#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "geoseg/camera.hpp"
#include "geoseg/dataset.hpp"
#include "geoseg/frame.hpp"

namespace geoseg {

/// Structural classes of the synthetic rooms.
enum SceneClass : int { kGround = 0, kStructure = 1, kFurniture = 2, kProps = 3 };
inline const std::vector<std::string> kSceneClassNames = {"ground", "structure", "furniture", "props"};

enum class PrimitiveKind { box, plane };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::box;
  int label = 0;
  Eigen::Vector3d lo = Eigen::Vector3d::Zero();  // box corners
  Eigen::Vector3d hi = Eigen::Vector3d::Zero();
  int axis = 1;         // plane: normal axis (0 = x, 1 = y, 2 = z)
  double offset = 0;    // plane: coordinate along `axis`
  double facing = 1;    // plane: +1 or -1, side the plane is seen from
  std::array<double, 3> color{0.5, 0.5, 0.5};  // base RGB in [0, 1]
  double checker_period = 0.0;                 // meters, 0 disables the checker
  double checker_contrast = 0.15;
};

/// Camera path: the eye moves on a horizontal circle around `center` and looks outward,
/// slightly downward. Frame i of n sits at angle start + (end - start) * i / (n - 1).
struct Trajectory {
  Eigen::Vector3d center = Eigen::Vector3d(0, 0, 0);
  double radius = 0.5;
  double height = 1.4;
  double start_angle = 0.0;  // radians
  double end_angle = 1.0;
  double pitch = 0.35;       // downward look angle, radians
  int frames = 30;

  /// Pose at a continuous path parameter t in [0, 1]; `height_offset` lifts the eye.
  RigidTransform pose_at(double t, double height_offset = 0.0) const;
};

struct SceneSpec {
  std::string name = "scene";
  std::uint64_t seed = 0;
  Eigen::Vector3d room_min = Eigen::Vector3d(-2.5, 0.0, -2.5);
  Eigen::Vector3d room_max = Eigen::Vector3d(2.5, 2.6, 2.5);
  std::vector<Primitive> primitives;
  double noise_amplitude = 0.04;  // colour noise, fraction of full scale
  double depth_noise = 0.0;       // Gaussian sigma in meters; 0 = exact depth
  double label_noise = 0.0;       // probability of replacing a label by another class
  int num_classes = 4;
  Trajectory trajectory;
  Intrinsics intrinsics{55.0, 55.0, 31.5, 31.5, 64, 64};

  /// Throws ConfigError on an empty primitive list, primitives outside the room, fewer than
  /// two poses or invalid intrinsics.
  void validate() const;
  RigidTransform pose(int index) const;
};

struct RayHit {
  double t = 0;  // ray parameter; equals optical-axis depth for camera rays with z = 1
  int primitive = -1;
  int face_axis = 1;
};

/// Nearest intersection of origin + t * dir (t > 0) with the scene primitives.
std::optional<RayHit> cast_ray(const SceneSpec& spec, const Eigen::Vector3d& origin,
                               const Eigen::Vector3d& dir);

/// Ray-cast view from an arbitrary camera-to-world pose. `truth` holds the ground-truth
/// labels; `annotation` is left empty.
Frame render_view(const SceneSpec& spec, const RigidTransform& pose, int index,
                  std::uint64_t noise_stream = 0);

/// Frame `pose_index` of the spec's trajectory.
Frame render_frame(const SceneSpec& spec, int pose_index);

/// Procedural room: floor and rug (ground), walls and ceiling (structure), boxes on the
/// floor (furniture) and small boxes on furniture or floor (props). Colours are drawn
/// per primitive from overlapping class palettes.
SceneSpec make_room_scene(const std::string& name, std::uint64_t seed, int frames = 30);

struct GenerateOptions {
  double labeled_fraction = 1.0 / 30.0;
  int validation_views = 4;      // per annotated sequence
  int test_views = 6;            // per annotated sequence
  int generalization_views = 8;  // per generalization scene
  std::vector<SceneSpec> unannotated;     // sequences added to U without any annotation
  std::vector<SceneSpec> generalization;  // scenes never used for training
};

/// Number of annotated frames for a sequence of `frames` poses; throws ConfigError when it
/// would be zero.
int labeled_count(int frames, double labeled_fraction);
/// Uniformly spaced annotated frame indices.
std::vector<int> labeled_indices(int frames, double labeled_fraction);

/// Renders every sequence. Training frames keep their ground truth in `truth`; only the
/// uniformly spaced labeled fraction keeps it as `annotation`. Validation and test views
/// are rendered at path parameters interleaved between training poses (at a different
/// eye height), so their poses are disjoint from the training poses.
Dataset generate_dataset(const std::vector<SceneSpec>& specs, const GenerateOptions& options,
                         std::uint64_t seed);

/// The desk-scale benchmark: `sequences` annotated rooms plus unannotated and
/// generalization rooms, all derived from `seed`.
struct BenchmarkScenes {
  std::vector<SceneSpec> annotated, unannotated, generalization;
};
BenchmarkScenes make_benchmark_scenes(std::uint64_t seed, int sequences = 4, int unannotated = 2,
                                      int generalization = 2, int frames = 30);

}  // namespace geoseg

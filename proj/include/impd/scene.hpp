#pragma once

#include <Eigen/Geometry>
#include <cstdint>
#include <vector>

#include "impd/geometry.hpp"
#include "impd/image.hpp"

namespace impd {

struct Primitive {
  enum class Kind { kCuboid, kSphere };

  Kind kind = Kind::kCuboid;
  Pose pose;                      // body-to-world; spheres only use translation
  Eigen::Vector3d half_extents;   // cuboid half sizes; spheres use x as radius
  Eigen::Vector3d albedo;

  double radius() const { return half_extents.x(); }
  bool contains(const Eigen::Vector3d& world_point) const;
  bool operator==(const Primitive&) const;
};

struct SceneDescription {
  uint64_t seed = 0;
  Eigen::AlignedBox3d room;
  std::vector<Primitive> primitives;
  std::array<Eigen::Vector3d, 6> wall_albedo;  // -x,+x,-y,+y,-z,+z

  bool operator==(const SceneDescription&) const;
  void validate() const;
};

struct SceneGenConfig {
  Eigen::Vector3d room_size{4.0, 3.0, 5.0};
  int min_primitives = 3;
  int max_primitives = 6;
  double min_size = 0.15;  // half extent / radius, meters
  double max_size = 0.55;

  void validate() const;
};

struct Frame {
  Image rgb;          // HxWx3 in [0,1]
  DepthMap depth_gt;  // z-depth, valid wherever a surface is hit
  Pose pose;          // camera-to-world
  int timestamp = 0;
};

struct Sequence {
  std::vector<Frame> frames;
  CameraIntrinsics intrinsics;

  void validate() const;
};

// Desk-scale defaults: 96x64 with a ~62 degree horizontal field of view.
CameraIntrinsics default_intrinsics(int width = 96, int height = 64);

SceneDescription generate_scene(uint64_t seed, const SceneGenConfig& config);

// Analytic ray cast against primitives and room walls; Lambertian shading
// with a fixed light plus seeded per-pixel noise <= 0.02.
Frame render_frame(const SceneDescription& scene, const Pose& pose,
                   const CameraIntrinsics& K);

// Smooth random walk: per-frame rotation <= 2 degrees, translation <= 5 cm.
Sequence generate_sequence(const SceneDescription& scene,
                           uint64_t trajectory_seed, int n_frames,
                           const CameraIntrinsics& K);

// z-depth of the closest surface along the pixel ray, or a negative value
// if nothing is hit. Exposed so tests can probe rays directly.
double cast_scene_ray(const SceneDescription& scene, const Pose& pose,
                      const CameraIntrinsics& K, const PixelLocation& p);

}  // namespace impd

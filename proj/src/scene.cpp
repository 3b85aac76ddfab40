#include "impd/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace impd {

namespace {

constexpr double kRayEpsilon = 1e-9;
const Eigen::Vector3d kLightDirection =
    Eigen::Vector3d(0.3, -0.5, -0.8).normalized();

struct RayHit {
  double s = std::numeric_limits<double>::infinity();  // ray parameter = z-depth
  Eigen::Vector3d normal = Eigen::Vector3d::Zero();
  Eigen::Vector3d albedo = Eigen::Vector3d::Zero();
  bool valid() const { return std::isfinite(s); }
};

// Nearest positive root of |o + s*w - c|^2 = r^2.
bool intersect_sphere(const Eigen::Vector3d& o, const Eigen::Vector3d& w,
                      const Eigen::Vector3d& center, double radius,
                      double& s_out) {
  const Eigen::Vector3d oc = o - center;
  const double a = w.squaredNorm();
  const double b = 2.0 * w.dot(oc);
  const double c = oc.squaredNorm() - radius * radius;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return false;
  const double sq = std::sqrt(disc);
  const double s0 = (-b - sq) / (2.0 * a);
  const double s1 = (-b + sq) / (2.0 * a);
  if (s0 > kRayEpsilon)
    s_out = s0;
  else if (s1 > kRayEpsilon)
    s_out = s1;
  else
    return false;
  return true;
}

// Slab test in the box frame; entry point for rays starting outside.
bool intersect_box(const Eigen::Vector3d& o, const Eigen::Vector3d& w,
                   const Primitive& box, double& s_out,
                   Eigen::Vector3d& normal_out) {
  const Eigen::Matrix3d r_inv = box.pose.rotation.transpose();
  const Eigen::Vector3d ob = r_inv * (o - box.pose.translation);
  const Eigen::Vector3d wb = r_inv * w;
  double s_near = -std::numeric_limits<double>::infinity();
  double s_far = std::numeric_limits<double>::infinity();
  int near_axis = -1;
  double near_sign = 1.0;
  for (int axis = 0; axis < 3; ++axis) {
    const double e = box.half_extents[axis];
    if (std::abs(wb[axis]) < 1e-12) {
      if (std::abs(ob[axis]) > e) return false;
      continue;
    }
    double t0 = (-e - ob[axis]) / wb[axis];
    double t1 = (e - ob[axis]) / wb[axis];
    double sign = -1.0;
    if (t0 > t1) {
      std::swap(t0, t1);
      sign = 1.0;
    }
    if (t0 > s_near) {
      s_near = t0;
      near_axis = axis;
      near_sign = sign;
    }
    s_far = std::min(s_far, t1);
    if (s_near > s_far) return false;
  }
  if (s_near <= kRayEpsilon || near_axis < 0) return false;
  s_out = s_near;
  Eigen::Vector3d n = Eigen::Vector3d::Zero();
  n[near_axis] = near_sign;
  normal_out = box.pose.rotation * n;
  return true;
}

// Exit point of the room box: the interior wall seen from inside.
bool intersect_room_walls(const Eigen::Vector3d& o, const Eigen::Vector3d& w,
                          const SceneDescription& scene, RayHit& hit) {
  double s_exit = std::numeric_limits<double>::infinity();
  int exit_axis = -1;
  double exit_sign = 0.0;
  for (int axis = 0; axis < 3; ++axis) {
    if (std::abs(w[axis]) < 1e-12) continue;
    const double lo = (scene.room.min()[axis] - o[axis]) / w[axis];
    const double hi = (scene.room.max()[axis] - o[axis]) / w[axis];
    const double s = std::max(lo, hi);
    if (s > kRayEpsilon && s < s_exit) {
      s_exit = s;
      exit_axis = axis;
      exit_sign = w[axis] > 0.0 ? 1.0 : -1.0;
    }
  }
  if (exit_axis < 0) return false;
  hit.s = s_exit;
  hit.normal = Eigen::Vector3d::Zero();
  hit.normal[exit_axis] = -exit_sign;  // faces back into the room
  hit.albedo = scene.wall_albedo[size_t(exit_axis * 2 + (exit_sign > 0.0 ? 1 : 0))];
  return true;
}

uint64_t mix_u64(uint64_t h, uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

uint64_t hash_pose(const Pose& pose, uint64_t seed) {
  uint64_t h = seed;
  const auto absorb = [&h](double d) {
    uint64_t bits;
    static_assert(sizeof(bits) == sizeof(d));
    std::memcpy(&bits, &d, sizeof(bits));
    h = mix_u64(h, bits);
  };
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) absorb(pose.rotation(r, c));
  for (int i = 0; i < 3; ++i) absorb(pose.translation[i]);
  return h;
}

Eigen::AlignedBox3d primitive_bounds(const Primitive& p) {
  if (p.kind == Primitive::Kind::kSphere) {
    const Eigen::Vector3d r = Eigen::Vector3d::Constant(p.radius());
    return {p.pose.translation - r, p.pose.translation + r};
  }
  // World AABB of the rotated box: |R| * half_extents.
  const Eigen::Vector3d ext = p.pose.rotation.cwiseAbs() * p.half_extents;
  return {p.pose.translation - ext, p.pose.translation + ext};
}

Eigen::Matrix3d small_rotation(Rng& rng, double max_angle_rad) {
  const double angle = rng.uniform(0.0, max_angle_rad);
  Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
  if (axis.norm() < 1e-9) axis = Eigen::Vector3d::UnitY();
  axis.normalize();
  return Eigen::AngleAxisd(angle, axis).toRotationMatrix();
}

bool pose_placement_ok(const SceneDescription& scene,
                       const Eigen::Vector3d& position) {
  constexpr double kWallMargin = 0.05;
  const Eigen::Vector3d lo = scene.room.min().array() + kWallMargin;
  const Eigen::Vector3d hi = scene.room.max().array() - kWallMargin;
  if ((position.array() < lo.array()).any() ||
      (position.array() > hi.array()).any())
    return false;
  for (const Primitive& p : scene.primitives)
    if (p.contains(position)) return false;
  return true;
}

}  // namespace

bool Primitive::contains(const Eigen::Vector3d& world_point) const {
  if (kind == Kind::kSphere)
    return (world_point - pose.translation).norm() <= radius();
  const Eigen::Vector3d local =
      pose.rotation.transpose() * (world_point - pose.translation);
  return (local.cwiseAbs().array() <= half_extents.array()).all();
}

bool Primitive::operator==(const Primitive& o) const {
  return kind == o.kind && pose.rotation == o.pose.rotation &&
         pose.translation == o.pose.translation &&
         half_extents == o.half_extents && albedo == o.albedo;
}

bool SceneDescription::operator==(const SceneDescription& o) const {
  return seed == o.seed && room.min() == o.room.min() &&
         room.max() == o.room.max() && primitives == o.primitives &&
         wall_albedo == o.wall_albedo;
}

void SceneDescription::validate() const {
  if (primitives.empty()) throw ConfigError("scene: needs at least 1 primitive");
  for (const Primitive& p : primitives) {
    if ((p.albedo.array() < 0.0).any() || (p.albedo.array() > 1.0).any())
      throw ConfigError("scene: albedo out of [0,1]");
    const Eigen::AlignedBox3d b = primitive_bounds(p);
    if (!room.contains(b)) throw ConfigError("scene: primitive outside room bounds");
  }
}

void SceneGenConfig::validate() const {
  if (min_primitives < 1 || max_primitives < min_primitives)
    throw ConfigError("scene config: invalid primitive count range");
  if (!(min_size > 0.0) || max_size < min_size)
    throw ConfigError("scene config: invalid size range");
  if ((room_size.array() <= 2.0 * max_size).any())
    throw ConfigError("scene config: primitives do not fit in the room");
}

void Sequence::validate() const {
  if (frames.size() < 2) throw ConfigError("sequence: needs at least 2 frames");
  intrinsics.validate();
  for (size_t i = 0; i < frames.size(); ++i) {
    const Frame& f = frames[i];
    f.pose.validate();
    f.depth_gt.validate();
    if (f.rgb.width != f.depth_gt.width || f.rgb.height != f.depth_gt.height ||
        f.rgb.channels != 3)
      throw ShapeError("sequence: rgb/depth dimension mismatch");
    if (i > 0) {
      const Frame& prev = frames[i - 1];
      if (prev.pose.rotation == f.pose.rotation &&
          prev.pose.translation == f.pose.translation)
        throw ConfigError("sequence: consecutive poses are identical");
    }
  }
}

CameraIntrinsics default_intrinsics(int width, int height) {
  CameraIntrinsics K;
  K.width = width;
  K.height = height;
  K.fx = K.fy = 0.83 * width;
  K.cx = 0.5 * (width - 1);
  K.cy = 0.5 * (height - 1);
  return K;
}

SceneDescription generate_scene(uint64_t seed, const SceneGenConfig& config) {
  config.validate();
  Rng rng(mix_u64(0x5ce4eULL, seed));

  SceneDescription scene;
  scene.seed = seed;
  scene.room = Eigen::AlignedBox3d(-0.5 * config.room_size, 0.5 * config.room_size);
  for (auto& albedo : scene.wall_albedo)
    albedo = Eigen::Vector3d(rng.uniform(0.35, 0.95), rng.uniform(0.35, 0.95),
                             rng.uniform(0.35, 0.95));

  const int count = config.min_primitives +
                    int(rng.uniform_index(
                        uint64_t(config.max_primitives - config.min_primitives + 1)));
  for (int i = 0; i < count; ++i) {
    Primitive p;
    p.kind = rng.uniform() < 0.5 ? Primitive::Kind::kCuboid
                                 : Primitive::Kind::kSphere;
    p.albedo = Eigen::Vector3d(rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0),
                               rng.uniform(0.1, 1.0));
    if (p.kind == Primitive::Kind::kSphere) {
      const double r = rng.uniform(config.min_size, config.max_size);
      p.half_extents = Eigen::Vector3d::Constant(r);
    } else {
      p.half_extents =
          Eigen::Vector3d(rng.uniform(config.min_size, config.max_size),
                          rng.uniform(config.min_size, config.max_size),
                          rng.uniform(config.min_size, config.max_size));
      p.pose.rotation = small_rotation(rng, M_PI);
    }
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      Eigen::Vector3d center;
      for (int axis = 0; axis < 3; ++axis) {
        const double margin = p.half_extents.maxCoeff() + 0.05;
        const double lo = scene.room.min()[axis] + margin;
        const double hi = scene.room.max()[axis] - margin;
        if (lo >= hi) throw ConfigError("scene: primitive larger than room");
        center[axis] = rng.uniform(lo, hi);
      }
      // keep objects in the half of the room the trajectory looks into
      center.z() = std::abs(center.z()) * 0.8;
      p.pose.translation = center;
      placed = scene.room.contains(primitive_bounds(p));
    }
    if (!placed) throw ConfigError("scene: failed to place primitive");
    scene.primitives.push_back(p);
  }
  scene.validate();
  return scene;
}

double cast_scene_ray(const SceneDescription& scene, const Pose& pose,
                      const CameraIntrinsics& K, const PixelLocation& p) {
  const Eigen::Vector3d dir_cam((p.u - K.cx) / K.fx, (p.v - K.cy) / K.fy, 1.0);
  const Eigen::Vector3d w = pose.rotation * dir_cam;
  const Eigen::Vector3d o = pose.translation;

  RayHit best;
  intersect_room_walls(o, w, scene, best);
  for (const Primitive& prim : scene.primitives) {
    double s;
    if (prim.kind == Primitive::Kind::kSphere) {
      if (intersect_sphere(o, w, prim.pose.translation, prim.radius(), s) &&
          s < best.s) {
        best.s = s;
        best.normal = (o + s * w - prim.pose.translation).normalized();
        best.albedo = prim.albedo;
      }
    } else {
      Eigen::Vector3d n;
      if (intersect_box(o, w, prim, s, n) && s < best.s) {
        best.s = s;
        best.normal = n;
        best.albedo = prim.albedo;
      }
    }
  }
  return best.valid() ? best.s : -1.0;
}

Frame render_frame(const SceneDescription& scene, const Pose& pose,
                   const CameraIntrinsics& K) {
  scene.validate();
  pose.validate();
  K.validate();
  if (!scene.room.contains(pose.translation))
    throw ConfigError("render_frame: camera outside the room");
  for (const Primitive& prim : scene.primitives)
    if (prim.contains(pose.translation))
      throw ConfigError("render_frame: camera inside a primitive");

  Frame frame;
  frame.pose = pose;
  frame.rgb = Image(K.width, K.height, 3);
  frame.depth_gt = DepthMap(K.width, K.height);

  Rng noise_rng(hash_pose(pose, mix_u64(scene.seed, 0x9d15ULL)));

  const Eigen::Vector3d o = pose.translation;
  for (int y = 0; y < K.height; ++y) {
    for (int x = 0; x < K.width; ++x) {
      const Eigen::Vector3d dir_cam((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0);
      const Eigen::Vector3d w = pose.rotation * dir_cam;

      RayHit best;
      intersect_room_walls(o, w, scene, best);
      for (const Primitive& prim : scene.primitives) {
        double s;
        if (prim.kind == Primitive::Kind::kSphere) {
          if (intersect_sphere(o, w, prim.pose.translation, prim.radius(), s) &&
              s < best.s) {
            best.s = s;
            best.normal = (o + s * w - prim.pose.translation).normalized();
            best.albedo = prim.albedo;
          }
        } else {
          Eigen::Vector3d n;
          if (intersect_box(o, w, prim, s, n) && s < best.s) {
            best.s = s;
            best.normal = n;
            best.albedo = prim.albedo;
          }
        }
      }

      if (!best.valid()) continue;  // open room face; leaves the pixel invalid
      frame.depth_gt.values[frame.depth_gt.index(x, y)] = float(best.s);
      frame.depth_gt.valid[frame.depth_gt.index(x, y)] = 1;
      const double lambert = std::max(0.0, best.normal.dot(-kLightDirection));
      for (int c = 0; c < 3; ++c) {
        const double noise = noise_rng.uniform(-0.02, 0.02);
        frame.rgb.at(x, y, c) =
            float(std::clamp(best.albedo[c] * lambert + noise, 0.0, 1.0));
      }
    }
  }
  return frame;
}

Sequence generate_sequence(const SceneDescription& scene,
                           uint64_t trajectory_seed, int n_frames,
                           const CameraIntrinsics& K) {
  if (n_frames < 2) throw ConfigError("generate_sequence: n_frames must be >= 2");
  scene.validate();
  K.validate();
  Rng rng(mix_u64(0x7247ULL, trajectory_seed ^ scene.seed));

  constexpr double kMaxRotation = 2.0 * M_PI / 180.0;
  constexpr double kMaxTranslation = 0.05;

  // Start in the back half of the room, looking forward.
  Pose pose;
  for (int attempt = 0;; ++attempt) {
    if (attempt >= 256)
      throw ConfigError("generate_sequence: could not place initial camera");
    pose.translation =
        Eigen::Vector3d(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3),
                        scene.room.min().z() + rng.uniform(0.3, 0.8));
    pose.rotation = small_rotation(rng, 4.0 * M_PI / 180.0);
    if (pose_placement_ok(scene, pose.translation)) break;
  }

  std::vector<Pose> poses;
  poses.push_back(pose);
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
  for (int i = 1; i < n_frames; ++i) {
    bool stepped = false;
    for (int attempt = 0; attempt < 128 && !stepped; ++attempt) {
      Eigen::Vector3d v = 0.85 * velocity;
      v += Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()) * 0.012;
      if (v.norm() > kMaxTranslation) v *= kMaxTranslation / v.norm();
      if (v.norm() < 1e-4) continue;
      Pose next = pose;
      next.translation = pose.translation + next.rotation * v;
      next.rotation = pose.rotation * small_rotation(rng, kMaxRotation);
      if (!pose_placement_ok(scene, next.translation)) {
        velocity = Eigen::Vector3d::Zero();
        continue;
      }
      velocity = v;
      pose = next;
      stepped = true;
    }
    if (!stepped)
      throw ConfigError("generate_sequence: trajectory stuck inside geometry");
    poses.push_back(pose);
  }

  Sequence seq;
  seq.intrinsics = K;
  seq.frames.resize(size_t(n_frames));
  parallel_for(n_frames, [&](int64_t i) {
    seq.frames[size_t(i)] = render_frame(scene, poses[size_t(i)], K);
    seq.frames[size_t(i)].timestamp = int(i);
  });
  seq.validate();
  return seq;
}

}  // namespace impd

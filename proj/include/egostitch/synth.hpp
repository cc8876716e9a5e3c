#pragma once

// Deterministic synthetic sequences with exact ground truth: analytic plane
// scenes, a moving camera, per-chunk Sim(3) drift, a hand sphere attached to
// the camera and object spheres that are static until their onset and then
// carried along.

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "egostitch/chunking.hpp"
#include "egostitch/core.hpp"
#include "egostitch/dynamic_prior.hpp"
#include "egostitch/ingest.hpp"
#include "egostitch/parallel.hpp"
#include "egostitch/stitcher.hpp"

namespace egostitch {

enum class SceneType { BoxRoom, PlaneSet };
enum class TrajectoryType { CircularArc, Lawnmower };

struct DriftParams {
  double scale_jitter = 0.1;   // relative, uniform in ±jitter
  double rotation_deg = 5.0;   // uniform in ±deg about a random axis
  double translation = 0.5;    // uniform in ±value per axis
};

struct SynthConfig {
  std::uint64_t seed = 1;
  SceneType scene = SceneType::BoxRoom;
  TrajectoryType trajectory = TrajectoryType::CircularArc;
  int frames = 80;
  int chunk = 20;
  int overlap = 10;
  double fps = 30.0;
  int width = 64;
  int height = 48;
  double focal = 50.0;
  DriftParams drift;
  bool hand = true;
  double hand_radius = 0.1;
  int blob_count = 2;
  double blob_radius = 0.25;
  std::vector<int> blob_onsets;  // empty: evenly spaced
  double depth_noise = 0.0;
  bool require_noncollinear = false;

  void validate() const {
    if (frames < 1 || width < 4 || height < 4) throw ConfigError("synth: frames/size too small");
    if (!(focal > 0.0)) throw ConfigError("synth: focal must be positive");
    if (blob_count < 0) throw ConfigError("synth: blob_count must be >= 0");
    if (!blob_onsets.empty() && static_cast<int>(blob_onsets.size()) != blob_count) {
      throw ConfigError("synth: blob_onsets must list one onset per blob");
    }
    for (int a : blob_onsets) {
      if (a < 0 || a >= frames) throw ConfigError("synth: blob onset outside [0, frames)");
    }
    for (double v : {drift.scale_jitter, drift.rotation_deg, drift.translation, depth_noise}) {
      if (!std::isfinite(v) || v < 0.0) throw ConfigError("synth: jitter and noise parameters must be finite and >= 0");
    }
    if (drift.scale_jitter >= 1.0) throw ConfigError("synth: scale jitter must be < 1");
    plan_chunks(frames, chunk, overlap);
  }

  Intrinsics intrinsics() const { return {focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height}; }
};

inline Json synth_config_to_json(const SynthConfig& c) {
  return {{"seed", c.seed},
          {"scene", c.scene == SceneType::BoxRoom ? "box_room" : "plane_set"},
          {"trajectory", c.trajectory == TrajectoryType::CircularArc ? "circular_arc" : "lawnmower"},
          {"frames", c.frames},
          {"chunk", c.chunk},
          {"overlap", c.overlap},
          {"fps", c.fps},
          {"width", c.width},
          {"height", c.height},
          {"focal", c.focal},
          {"drift",
           {{"scale_jitter", c.drift.scale_jitter},
            {"rotation_deg", c.drift.rotation_deg},
            {"translation", c.drift.translation}}},
          {"hand", c.hand},
          {"hand_radius", c.hand_radius},
          {"blob_count", c.blob_count},
          {"blob_radius", c.blob_radius},
          {"blob_onsets", c.blob_onsets},
          {"depth_noise", c.depth_noise},
          {"require_noncollinear", c.require_noncollinear}};
}

/// Missing keys keep their defaults.
inline SynthConfig synth_config_from_json(const Json& j) {
  SynthConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("scene")) {
      const auto s = j["scene"].get<std::string>();
      if (s == "box_room") {
        c.scene = SceneType::BoxRoom;
      } else if (s == "plane_set") {
        c.scene = SceneType::PlaneSet;
      } else {
        throw ConfigError("synth: unknown scene '" + s + "'");
      }
    }
    if (j.contains("trajectory")) {
      const auto s = j["trajectory"].get<std::string>();
      if (s == "circular_arc") {
        c.trajectory = TrajectoryType::CircularArc;
      } else if (s == "lawnmower") {
        c.trajectory = TrajectoryType::Lawnmower;
      } else {
        throw ConfigError("synth: unknown trajectory '" + s + "'");
      }
    }
    c.frames = j.value("frames", c.frames);
    c.chunk = j.value("chunk", c.chunk);
    c.overlap = j.value("overlap", c.overlap);
    c.fps = j.value("fps", c.fps);
    c.width = j.value("width", c.width);
    c.height = j.value("height", c.height);
    c.focal = j.value("focal", c.focal);
    if (j.contains("drift")) {
      const auto& d = j["drift"];
      c.drift.scale_jitter = d.value("scale_jitter", c.drift.scale_jitter);
      c.drift.rotation_deg = d.value("rotation_deg", c.drift.rotation_deg);
      c.drift.translation = d.value("translation", c.drift.translation);
    }
    c.hand = j.value("hand", c.hand);
    c.hand_radius = j.value("hand_radius", c.hand_radius);
    c.blob_count = j.value("blob_count", c.blob_count);
    c.blob_radius = j.value("blob_radius", c.blob_radius);
    c.blob_onsets = j.value("blob_onsets", c.blob_onsets);
    c.depth_noise = j.value("depth_noise", c.depth_noise);
    c.require_noncollinear = j.value("require_noncollinear", c.require_noncollinear);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("synth config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Geometry

struct Plane {
  Vec3 normal;  // unit
  double offset = 0.0;  // normal · p = offset
};

inline std::vector<Plane> scene_planes(SceneType scene) {
  if (scene == SceneType::BoxRoom) {
    return {{{1, 0, 0}, 3.0},  {{1, 0, 0}, -3.0}, {{0, 1, 0}, 3.0},
            {{0, 1, 0}, -3.0}, {{0, 0, 1}, -1.2}, {{0, 0, 1}, 1.6}};
  }
  return {{{0, 0, 1}, -1.2}, {{1, 0, 0}, 3.0}, {{0, 1, 0}, 3.0}};
}

/// Smallest positive ray parameter over the planes, or +inf.
inline double intersect_planes(const Vec3& origin, const Vec3& dir, const std::vector<Plane>& planes) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& pl : planes) {
    const double denom = pl.normal.dot(dir);
    if (denom == 0.0) continue;
    const double lambda = (pl.offset - pl.normal.dot(origin)) / denom;
    if (lambda > 1e-9 && lambda < best) best = lambda;
  }
  return best;
}

/// Nearest positive ray parameter hitting a sphere, or +inf.
inline double intersect_sphere(const Vec3& origin, const Vec3& dir, const Vec3& center, double radius) {
  const Vec3 oc = origin - center;
  const double a = dir.squaredNorm();
  const double b = 2.0 * dir.dot(oc);
  const double c = oc.squaredNorm() - radius * radius;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return std::numeric_limits<double>::infinity();
  const double sq = std::sqrt(disc);
  const double l0 = (-b - sq) / (2.0 * a);
  const double l1 = (-b + sq) / (2.0 * a);
  if (l0 > 1e-9) return l0;
  if (l1 > 1e-9) return l1;
  return std::numeric_limits<double>::infinity();
}

/// Camera looking along `forward` with image "down" as close to world -z as possible.
inline Mat3 look_rotation(const Vec3& forward) {
  const Vec3 f = forward.normalized();
  Vec3 down = Vec3(0, 0, -1) - f * f.dot(Vec3(0, 0, -1));
  down.normalize();
  const Vec3 right = down.cross(f);
  Mat3 r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = f;
  return r;
}

inline std::vector<Pose> synth_trajectory(const SynthConfig& cfg) {
  std::vector<Pose> poses(static_cast<std::size_t>(cfg.frames));
  const double denom = std::max(1, cfg.frames - 1);
  for (int t = 0; t < cfg.frames; ++t) {
    const double u = t / denom;
    Pose p;
    if (cfg.trajectory == TrajectoryType::CircularArc) {
      const double theta = 1.5 * std::numbers::pi * u;
      p.translation = Vec3(std::cos(theta), std::sin(theta), 0.1 * std::sin(3.0 * theta));
      const double yaw = theta + 0.3;
      const double pitch = -0.15;
      p.rotation = look_rotation(Vec3(std::cos(yaw) * std::cos(pitch), std::sin(yaw) * std::cos(pitch), std::sin(pitch)));
    } else {
      // four passes along x, stepping in y between them
      const double s = u * 4.0;
      const int row = std::min(3, static_cast<int>(s));
      const double along = s - row;
      const double x = row % 2 == 0 ? -1.5 + 3.0 * along : 1.5 - 3.0 * along;
      p.translation = Vec3(x, -1.5 + 1.0 * row, 0.0);
      p.rotation = look_rotation(Vec3(0.0, 1.0, -0.15));
    }
    poses[static_cast<std::size_t>(t)] = p;
  }
  return poses;
}

inline Sim3 random_drift(std::mt19937_64& rng, const DriftParams& d) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Sim3 s;
  s.scale = 1.0 + d.scale_jitter * unit(rng);
  Vec3 axis(gauss(rng), gauss(rng), gauss(rng));
  if (axis.norm() < 1e-12) axis = Vec3::UnitZ();
  const double angle = d.rotation_deg * std::numbers::pi / 180.0 * unit(rng);
  s.rotation = Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
  s.translation = Vec3(unit(rng), unit(rng), unit(rng)) * d.translation;
  return s;
}

// ---------------------------------------------------------------------------
// Generation

struct SynthSequence {
  SynthConfig config;
  Intrinsics intrinsics;
  std::vector<ChunkPlan> plans;
  std::vector<Pose> gt_poses;
  std::vector<Sim3> drift;                  // applied to chunk c (identity for c = 0)
  std::vector<Sim3> expected_transforms;    // S_c that stitching should recover
  std::vector<ChunkTrajectory> chunk_poses;
  std::vector<std::vector<DepthFrame>> chunk_depths;  // [chunk][t - start]
  std::vector<Raster<double>> gt_depth;     // rendered, before float storage
  std::vector<Raster<double>> static_depth; // planes only
  TrackIndex tracks;
  std::vector<FrameMasks> instance_masks;   // per frame
  PointCloud scene_points;                  // static geometry, world frame

  const DepthFrame& depth(int chunk, int t) const {
    return chunk_depths.at(chunk).at(static_cast<std::size_t>(t - plans.at(chunk).start));
  }
};

namespace detail {

struct SphereTrack {
  int track_id = 0;
  double radius = 0.0;
  std::vector<Vec3> centers;  // world frame, per frame
};

}  // namespace detail

inline SynthSequence generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthSequence out;
  out.config = cfg;
  out.intrinsics = cfg.intrinsics();
  out.plans = plan_chunks(cfg.frames, cfg.chunk, cfg.overlap);
  out.gt_poses = synth_trajectory(cfg);

  if (cfg.require_noncollinear) {
    for (std::size_t c = 1; c < out.plans.size(); ++c) {
      std::vector<Vec3> centers;
      for (int t : out.plans[c].overlap_frames()) centers.push_back(out.gt_poses[static_cast<std::size_t>(t)].translation);
      if (centers.size() < 3 || is_degenerate_spread(centers)) {
        throw ConfigError("synth: trajectory has a collinear or too short overlap at chunk " + std::to_string(c));
      }
    }
  }

  std::mt19937_64 rng(cfg.seed);
  for (std::size_t c = 0; c < out.plans.size(); ++c) {
    out.drift.push_back(c == 0 ? Sim3::identity() : random_drift(rng, cfg.drift));
    out.expected_transforms.push_back(out.drift.front() * out.drift.back().inverse());
  }

  // dynamic spheres
  std::vector<detail::SphereTrack> spheres;
  const Vec3 hand_offset_base(0.12, 0.18, 0.55);
  if (cfg.hand) {
    detail::SphereTrack h{1, cfg.hand_radius, {}};
    for (int t = 0; t < cfg.frames; ++t) {
      const Vec3 off = hand_offset_base + Vec3(0.03 * std::sin(0.3 * t), 0.0, 0.0);
      h.centers.push_back(out.gt_poses[static_cast<std::size_t>(t)].apply(off));
    }
    spheres.push_back(std::move(h));
    out.tracks.tracks.push_back({1, "hand", TrackCategory::Hand, std::nullopt, "masks/track_001/{frame:06}.pgm"});
  }
  for (int b = 0; b < cfg.blob_count; ++b) {
    const int onset = cfg.blob_onsets.empty() ? cfg.frames * (b + 1) / (cfg.blob_count + 1)
                                              : cfg.blob_onsets[static_cast<std::size_t>(b)];
    const Vec3 cam_offset(b % 2 == 0 ? -0.35 : 0.3, 0.15, 1.4);
    const Vec3 rest = out.gt_poses[static_cast<std::size_t>(onset)].apply(cam_offset);
    detail::SphereTrack s{2 + b, cfg.blob_radius, {}};
    for (int t = 0; t < cfg.frames; ++t) {
      s.centers.push_back(t < onset ? rest : out.gt_poses[static_cast<std::size_t>(t)].apply(cam_offset));
    }
    spheres.push_back(std::move(s));
    out.tracks.tracks.push_back({2 + b, "object_" + std::to_string(b), TrackCategory::Object, onset,
                                 fmt::format("masks/track_{:03}/{{frame:06}}.pgm", 2 + b)});
  }

  // render
  const auto planes = scene_planes(cfg.scene);
  const auto& k = out.intrinsics;
  out.gt_depth.resize(static_cast<std::size_t>(cfg.frames));
  out.static_depth.resize(static_cast<std::size_t>(cfg.frames));
  out.instance_masks.resize(static_cast<std::size_t>(cfg.frames));
  parallel_for(static_cast<std::size_t>(cfg.frames), [&](std::size_t ti) {
    const Pose& pose = out.gt_poses[ti];
    Raster<double> full(k.width, k.height, 0.0);
    Raster<double> stat(k.width, k.height, 0.0);
    FrameMasks masks;
    for (int v = 0; v < k.height; ++v) {
      for (int u = 0; u < k.width; ++u) {
        const Vec3 dir = pose.rotation * Vec3((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        const double scene = intersect_planes(pose.translation, dir, planes);
        double best = scene;
        int owner = -1;
        for (const auto& s : spheres) {
          const double l = intersect_sphere(pose.translation, dir, s.centers[ti], s.radius);
          if (l < best) {
            best = l;
            owner = s.track_id;
          }
        }
        stat(u, v) = std::isfinite(scene) ? scene : 0.0;
        full(u, v) = std::isfinite(best) ? best : 0.0;
        if (owner >= 0) {
          auto [it, inserted] = masks.try_emplace(owner, k.width, k.height);
          it->second.set(u, v);
        }
      }
    }
    out.gt_depth[ti] = std::move(full);
    out.static_depth[ti] = std::move(stat);
    out.instance_masks[ti] = std::move(masks);
  });

  // per-chunk outputs: poses and depth expressed in the drifted chunk frame
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t c = 0; c < out.plans.size(); ++c) {
    const Sim3& g = out.drift[c];
    ChunkTrajectory traj;
    std::vector<DepthFrame> depths;
    for (int t = out.plans[c].start; t < out.plans[c].end; ++t) {
      traj.emplace(t, compose_sim3_pose(g, out.gt_poses[static_cast<std::size_t>(t)]));
      DepthFrame d;
      d.frame_id = t;
      d.intrinsics = k;
      d.depth = Raster<float>(k.width, k.height, 0.0f);
      const auto& src = out.gt_depth[static_cast<std::size_t>(t)];
      for (int v = 0; v < k.height; ++v) {
        for (int u = 0; u < k.width; ++u) {
          double z = src(u, v);
          if (z > 0.0 && cfg.depth_noise > 0.0) z = std::max(0.0, z + cfg.depth_noise * noise(rng));
          d.depth(u, v) = static_cast<float>(g.scale * z);
        }
      }
      depths.push_back(std::move(d));
    }
    out.chunk_poses.push_back(std::move(traj));
    out.chunk_depths.push_back(std::move(depths));
  }

  for (int t = 0; t < cfg.frames; ++t) {
    const auto& z = out.static_depth[static_cast<std::size_t>(t)];
    const Pose& pose = out.gt_poses[static_cast<std::size_t>(t)];
    for (int v = 0; v < k.height; ++v) {
      for (int u = 0; u < k.width; ++u) {
        if (z(u, v) > 0.0) out.scene_points.points.push_back(pose.apply(unproject_pixel(u, v, z(u, v), k)));
      }
    }
  }
  return out;
}

/// Evaluation mask sets derived from the instance masks: instantaneous
/// (hands plus every visible instance) and its running footprint.
inline std::pair<std::vector<BinaryMask>, std::vector<BinaryMask>> synth_eval_masks(const SynthSequence& seq) {
  const auto& k = seq.intrinsics;
  auto inst = suppression_masks(
      SuppressionMode::DynamicOnly, seq.tracks.tracks,
      [&](int t) { return seq.instance_masks[static_cast<std::size_t>(t)]; }, seq.config.frames, k.width, k.height);
  auto foot = footprint_series(inst);
  return {std::move(inst), std::move(foot)};
}

/// Writes the sequence in the interchange layout and returns the manifest.
inline SequenceManifest write_synth(const SynthSequence& seq, const fs::path& dir) {
  fs::create_directories(dir);
  SequenceManifest m;
  m.base_dir = dir;
  m.frame_count = seq.config.frames;
  m.fps = seq.config.fps;
  m.width = seq.config.width;
  m.height = seq.config.height;
  m.chunk_length = seq.config.chunk;
  m.overlap = seq.config.overlap;
  for (std::size_t c = 0; c < seq.plans.size(); ++c) {
    ChunkRecord rec;
    rec.chunk_id = static_cast<int>(c);
    rec.poses = fmt::format("chunks/c{:03}/poses.jsonl", c);
    rec.depth_pattern = fmt::format("chunks/c{:03}/depth/{{frame:06}}.pfm", c);
    rec.intrinsics = seq.intrinsics;
    std::vector<FramePose> poses(seq.chunk_poses[c].begin(), seq.chunk_poses[c].end());
    save_poses(poses, dir / rec.poses);
    for (const auto& d : seq.chunk_depths[c]) save_depth(d, dir / expand_pattern(rec.depth_pattern, d.frame_id));
    m.chunks.push_back(std::move(rec));
  }

  m.tracks = "tracks.json";
  save_json_file(track_index_to_json(seq.tracks), dir / m.tracks);
  for (int t = 0; t < seq.config.frames; ++t) {
    for (const auto& [id, mask] : seq.instance_masks[static_cast<std::size_t>(t)]) {
      for (const auto& tr : seq.tracks.tracks) {
        if (tr.track_id == id) save_mask(mask, dir / expand_pattern(tr.mask_pattern, t));
      }
    }
  }

  const auto [inst, foot] = synth_eval_masks(seq);
  m.eval_dirs[EvalMaskKind::Instantaneous] = "eval/union_mask_dynamics";
  m.eval_dirs[EvalMaskKind::Footprint] = "eval/union_mask_fulltime";
  for (int t = 0; t < seq.config.frames; ++t) {
    save_mask(inst[static_cast<std::size_t>(t)], dir / "eval/union_mask_dynamics" / mask_file_name(t));
    save_mask(foot[static_cast<std::size_t>(t)], dir / "eval/union_mask_fulltime" / mask_file_name(t));
  }

  save_poses(global_trajectory(StitchResult{{}, seq.gt_poses, {}, {}}), dir / "gt/poses.jsonl");
  Json gt = Json::array();
  for (std::size_t c = 0; c < seq.plans.size(); ++c) {
    gt.push_back({{"chunk_id", static_cast<int>(c)},
                  {"drift", sim3_to_json(seq.drift[c])},
                  {"expected_transform", sim3_to_json(seq.expected_transforms[c])}});
  }
  save_json_file(gt, dir / "gt/chunk_transforms.json");
  save_pointcloud(seq.scene_points, dir / "gt/scene.ply");
  save_json_file(synth_config_to_json(seq.config), dir / "synth_config.json");
  save_manifest(m, dir / "manifest.json");
  m.validate();
  return m;
}

}  // namespace egostitch

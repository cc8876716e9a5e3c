#pragma once

// Chunk planning, overlap Sim(3) estimation and global composition of
// chunk-local reconstructions.

#include <Eigen/SVD>

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "egostitch/chunking.hpp"
#include "egostitch/core.hpp"
#include "egostitch/ingest.hpp"

namespace egostitch {

/// Under the camera-to-world convention the camera centre is the translation.
inline Vec3 camera_center(const Pose& pose) { return pose.translation; }

// ---------------------------------------------------------------------------
// Pinhole geometry. Pixel (u, v) has its centre at integer coordinates.

inline Vec3 unproject_pixel(int u, int v, double z, const Intrinsics& k) {
  return {(u - k.cx) / k.fx * z, (v - k.cy) / k.fy * z, z};
}

struct PixelHit {
  int u = 0;
  int v = 0;
  double z = 0.0;
};

/// Projects a world point into the frame; nullopt when behind the camera or
/// outside the raster.
inline std::optional<PixelHit> project_point(const Vec3& world, const Pose& pose, const Intrinsics& k) {
  const Vec3 cam = pose.rotation.transpose() * (world - pose.translation);
  if (!(cam.z() > 0.0)) return std::nullopt;
  const double x = k.fx * cam.x() / cam.z() + k.cx;
  const double y = k.fy * cam.y() / cam.z() + k.cy;
  const double u = std::floor(x + 0.5);
  const double v = std::floor(y + 0.5);
  if (!(u >= 0.0 && u < k.width && v >= 0.0 && v < k.height)) return std::nullopt;
  return PixelHit{static_cast<int>(u), static_cast<int>(v), cam.z()};
}

namespace detail {

template <typename Keep>
PointCloud back_project_if(const DepthFrame& d, const Pose& pose, Keep&& keep) {
  PointCloud cloud;
  const auto& k = d.intrinsics;
  for (int v = 0; v < d.height(); ++v) {
    for (int u = 0; u < d.width(); ++u) {
      const float z = d.depth(u, v);
      if (!is_valid_depth(z) || !keep(u, v)) continue;
      cloud.points.push_back(pose.apply(unproject_pixel(u, v, z, k)));
    }
  }
  return cloud;
}

}  // namespace detail

/// Every valid-depth pixel, lifted into the pose's world frame.
inline PointCloud back_project(const DepthFrame& d, const Pose& pose) {
  return detail::back_project_if(d, pose, [](int, int) { return true; });
}

/// Only pixels where `mask` equals `keep_value`.
inline PointCloud back_project(const DepthFrame& d, const Pose& pose, const BinaryMask& mask, bool keep_value) {
  if (mask.width() != d.width() || mask.height() != d.height()) {
    throw ConsistencyError("back_project: mask size differs from depth size");
  }
  return detail::back_project_if(d, pose, [&](int u, int v) { return mask.at(u, v) == keep_value; });
}

// ---------------------------------------------------------------------------
// Umeyama

struct UmeyamaResult {
  Sim3 transform;
  double rmse = 0.0;
};

inline constexpr double kDegenerateSpreadRatio = 1e-9;

namespace detail {

struct Moments {
  Vec3 mean_x = Vec3::Zero();
  Vec3 mean_y = Vec3::Zero();
  double var_x = 0.0;
  Mat3 cov = Mat3::Zero();  // (1/L) Σ (y - μy)(x - μx)^T
};

inline Moments moments(std::span<const Vec3> x, std::span<const Vec3> y) {
  Moments m;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    m.mean_x += x[i];
    m.mean_y += y[i];
  }
  m.mean_x /= n;
  m.mean_y /= n;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Vec3 dx = x[i] - m.mean_x;
    const Vec3 dy = y[i] - m.mean_y;
    m.var_x += dx.squaredNorm();
    m.cov += dy * dx.transpose();
  }
  m.var_x /= n;
  m.cov /= n;
  return m;
}

inline double alignment_rmse(std::span<const Vec3> x, std::span<const Vec3> y, const Sim3& s) {
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sum += (y[i] - apply_sim3(s, x[i])).squaredNorm();
  return std::sqrt(sum / static_cast<double>(x.size()));
}

inline void check_correspondence(std::span<const Vec3> x, std::span<const Vec3> y) {
  if (x.size() != y.size()) throw ConsistencyError("alignment: point sets differ in length");
  if (x.size() < 3) {
    throw InsufficientOverlapError("alignment needs at least 3 correspondences, got " + std::to_string(x.size()));
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!x[i].allFinite() || !y[i].allFinite()) throw ValidationError("alignment: non-finite point");
  }
}

/// Rotation maximizing tr(R^T cov) with the reflection removed; also returns
/// the singular values and the sign correction.
inline Mat3 best_rotation(const Mat3& cov, Vec3* singular = nullptr, Mat3* sign = nullptr) {
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 s = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s(2, 2) = -1.0;
  if (singular) *singular = svd.singularValues();
  if (sign) *sign = s;
  return svd.matrixU() * s * svd.matrixV().transpose();
}

}  // namespace detail

/// Singular values of the centred point matrix, descending.
inline Vec3 spread_singular_values(std::span<const Vec3> x) {
  Eigen::MatrixX3d centred(static_cast<Eigen::Index>(x.size()), 3);
  Vec3 mean = Vec3::Zero();
  for (const auto& p : x) mean += p;
  mean /= static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) centred.row(static_cast<Eigen::Index>(i)) = (x[i] - mean).transpose();
  Eigen::JacobiSVD<Eigen::MatrixX3d> svd(centred);
  return svd.singularValues();
}

/// True when the points are (numerically) collinear or coincident.
inline bool is_degenerate_spread(std::span<const Vec3> x) {
  const Vec3 sv = spread_singular_values(x);
  return !(sv(0) > 0.0) || !(sv(1) > kDegenerateSpreadRatio * sv(0));
}

/// Least-squares similarity Y ≈ s R X + t (closed form via SVD of the cross
/// covariance, determinant-corrected so R ∈ SO(3)).
inline UmeyamaResult umeyama(std::span<const Vec3> x, std::span<const Vec3> y) {
  detail::check_correspondence(x, y);
  if (is_degenerate_spread(x)) throw DegenerateGeometryError("umeyama: source points are collinear or coincident");
  const detail::Moments m = detail::moments(x, y);
  Vec3 d;
  Mat3 sign;
  UmeyamaResult r;
  r.transform.rotation = detail::best_rotation(m.cov, &d, &sign);
  r.transform.scale = (d.asDiagonal() * sign).trace() / m.var_x;
  if (!(r.transform.scale > 0.0)) throw DegenerateGeometryError("umeyama: non-positive scale estimate");
  r.transform.translation = m.mean_y - r.transform.scale * (r.transform.rotation * m.mean_x);
  r.rmse = detail::alignment_rmse(x, y, r.transform);
  return r;
}

/// Rotation and translation only, with the scale held at `scale`.
inline UmeyamaResult align_fixed_scale(std::span<const Vec3> x, std::span<const Vec3> y, double scale) {
  detail::check_correspondence(x, y);
  if (!(scale > 0.0)) throw ConfigError("align_fixed_scale: scale must be positive");
  const detail::Moments m = detail::moments(x, y);
  UmeyamaResult r;
  r.transform.scale = scale;
  r.transform.rotation = detail::best_rotation(m.cov);
  r.transform.translation = m.mean_y - scale * (r.transform.rotation * m.mean_x);
  r.rmse = detail::alignment_rmse(x, y, r.transform);
  return r;
}

// ---------------------------------------------------------------------------
// Stitching

/// Chunk-local camera-to-world poses keyed by frame id.
using ChunkTrajectory = std::map<int, Pose>;

inline ChunkTrajectory to_trajectory(const std::vector<FramePose>& poses) {
  ChunkTrajectory out;
  for (const auto& [t, p] : poses) out.emplace(t, p);
  return out;
}

struct TransitionRecord {
  int from_chunk = 0;
  int to_chunk = 0;
  int overlap_frames = 0;
  double scale = 1.0;
  double e_cen = 0.0;
  bool fallback = false;
  std::string warning;
};

struct StitchResult {
  std::vector<Sim3> chunk_transforms;   // S_c, S_0 = identity
  std::vector<Pose> global_poses;       // indexed by frame
  std::vector<int> frame_owner;         // chunk providing each global pose
  std::vector<TransitionRecord> transitions;

  std::vector<double> scales() const {
    std::vector<double> s;
    for (const auto& t : transitions) s.push_back(t.scale);
    return s;
  }
};

inline const Pose& pose_at(const ChunkTrajectory& traj, int chunk, int t) {
  auto it = traj.find(t);
  if (it == traj.end()) {
    throw ConsistencyError("chunk " + std::to_string(chunk) + " has no pose for frame " + std::to_string(t));
  }
  return it->second;
}

/// Sequential overlap alignment. Chunk 0 defines the global frame; chunk c is
/// aligned on its overlap with the already-stitched trajectory. Collinear
/// overlaps fall back to a rigid fit at the previous transition's scale.
inline StitchResult stitch(std::span<const ChunkTrajectory> chunks, std::span<const ChunkPlan> plans) {
  if (chunks.size() != plans.size() || plans.empty()) {
    throw ConsistencyError("stitch: need one trajectory per planned chunk");
  }
  const int frame_count = plans.back().end;
  StitchResult res;
  res.global_poses.assign(static_cast<std::size_t>(frame_count), Pose::identity());
  res.frame_owner.assign(static_cast<std::size_t>(frame_count), -1);
  int covered_end = 0;
  double prev_scale = 1.0;

  for (std::size_t c = 0; c < plans.size(); ++c) {
    const ChunkPlan& plan = plans[c];
    const int cid = static_cast<int>(c);
    Sim3 s = Sim3::identity();
    if (c > 0) {
      const auto frames = plan.overlap_frames();
      if (frames.size() < 3) {
        throw InsufficientOverlapError("stitch: chunk " + std::to_string(c) + " overlaps its predecessor on " +
                                       std::to_string(frames.size()) + " frames, need >= 3");
      }
      std::vector<Vec3> x, y;
      x.reserve(frames.size());
      y.reserve(frames.size());
      for (int t : frames) {
        x.push_back(camera_center(pose_at(chunks[c], cid, t)));
        y.push_back(camera_center(res.global_poses[static_cast<std::size_t>(t)]));
      }
      TransitionRecord rec;
      rec.from_chunk = cid - 1;
      rec.to_chunk = cid;
      rec.overlap_frames = static_cast<int>(frames.size());
      UmeyamaResult fit;
      try {
        fit = umeyama(x, y);
      } catch (const DegenerateGeometryError&) {
        fit = align_fixed_scale(x, y, prev_scale);
        rec.fallback = true;
        rec.warning = "collinear overlap centres; rigid fit with scale held at " + format_number(prev_scale);
      }
      s = fit.transform;
      rec.scale = s.scale;
      rec.e_cen = fit.rmse;
      prev_scale = s.scale;
      res.transitions.push_back(std::move(rec));
    }
    res.chunk_transforms.push_back(s);
    for (int t = std::max(plan.start, covered_end); t < plan.end; ++t) {
      res.global_poses[static_cast<std::size_t>(t)] = compose_sim3_pose(s, pose_at(chunks[c], cid, t));
      res.frame_owner[static_cast<std::size_t>(t)] = cid;
    }
    covered_end = std::max(covered_end, plan.end);
  }
  return res;
}

/// Camera-centre RMSE between two consecutive chunks' local trajectories on
/// the overlap of `plan`, with no alignment applied.
inline double raw_overlap_rmse(const ChunkTrajectory& prev, const ChunkTrajectory& cur, const ChunkPlan& plan) {
  const auto frames = plan.overlap_frames();
  if (frames.empty()) throw InsufficientOverlapError("raw_overlap_rmse: empty overlap");
  double sum = 0.0;
  for (int t : frames) {
    sum += (camera_center(pose_at(prev, plan.chunk_id - 1, t)) - camera_center(pose_at(cur, plan.chunk_id, t))).squaredNorm();
  }
  return std::sqrt(sum / static_cast<double>(frames.size()));
}

// ---------------------------------------------------------------------------
// Fusion

struct VoxelKey {
  std::int64_t x, y, z;
  friend bool operator==(const VoxelKey&, const VoxelKey&) = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ull;
    h ^= static_cast<std::uint64_t>(k.y) + 0x632BE59BD9B4E019ull + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) + 0x85EBCA77C2B2AE63ull + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

/// Keeps the first point that falls into each occupied voxel. voxel <= 0
/// returns the input unchanged.
inline PointCloud voxel_subsample(const PointCloud& in, double voxel) {
  if (!(voxel > 0.0)) return in;
  PointCloud out;
  std::unordered_set<VoxelKey, VoxelKeyHash> seen;
  seen.reserve(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const Vec3& p = in.points[i];
    const VoxelKey key{static_cast<std::int64_t>(std::floor(p.x() / voxel)),
                       static_cast<std::int64_t>(std::floor(p.y() / voxel)),
                       static_cast<std::int64_t>(std::floor(p.z() / voxel))};
    if (!seen.insert(key).second) continue;
    out.points.push_back(p);
    if (in.has_chunk_ids()) out.chunk_ids.push_back(in.chunk_ids[i]);
  }
  return out;
}

inline PointCloud transform_cloud(const PointCloud& in, const Sim3& s) {
  PointCloud out = in;
  for (auto& p : out.points) p = apply_sim3(s, p);
  return out;
}

/// Maps every chunk cloud into the global frame, concatenates in chunk order
/// and voxel-subsamples the result.
inline PointCloud fuse(std::span<const PointCloud> chunk_clouds, const StitchResult& result, double voxel) {
  if (chunk_clouds.size() != result.chunk_transforms.size()) {
    throw ConsistencyError("fuse: need one cloud per stitched chunk");
  }
  PointCloud all;
  for (std::size_t c = 0; c < chunk_clouds.size(); ++c) {
    PointCloud g = transform_cloud(chunk_clouds[c], result.chunk_transforms[c]);
    g.chunk_ids.assign(g.size(), static_cast<int>(c));
    all.append(g);
  }
  return voxel_subsample(all, voxel);
}

// ---------------------------------------------------------------------------
// Serialization

inline Json sim3_to_json(const Sim3& s) {
  Json r = Json::array();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) r.push_back(s.rotation(i, j));
  }
  return {{"s", s.scale}, {"R", r}, {"t", {s.translation.x(), s.translation.y(), s.translation.z()}}};
}

inline Sim3 sim3_from_json(const Json& j) {
  Sim3 s;
  s.scale = j.at("s").get<double>();
  for (int i = 0; i < 9; ++i) s.rotation(i / 3, i % 3) = j.at("R").at(i).get<double>();
  for (int i = 0; i < 3; ++i) s.translation(i) = j.at("t").at(i).get<double>();
  return s;
}

inline Json stitch_result_to_json(const StitchResult& r) {
  Json chunks = Json::array();
  for (std::size_t c = 0; c < r.chunk_transforms.size(); ++c) {
    Json j = sim3_to_json(r.chunk_transforms[c]);
    j["chunk_id"] = static_cast<int>(c);
    chunks.push_back(std::move(j));
  }
  Json transitions = Json::array();
  for (const auto& t : r.transitions) {
    Json j = {{"from", t.from_chunk}, {"to", t.to_chunk}, {"L", t.overlap_frames},
              {"s", t.scale},         {"e_cen", t.e_cen},   {"fallback", t.fallback}};
    if (!t.warning.empty()) j["warning"] = t.warning;
    transitions.push_back(std::move(j));
  }
  return {{"chunks", chunks}, {"transitions", transitions}};
}

inline StitchResult stitch_result_from_json(const Json& j) {
  StitchResult r;
  try {
    for (const auto& c : j.at("chunks")) r.chunk_transforms.push_back(sim3_from_json(c));
    for (const auto& t : j.at("transitions")) {
      TransitionRecord rec;
      rec.from_chunk = t.at("from").get<int>();
      rec.to_chunk = t.at("to").get<int>();
      rec.overlap_frames = t.at("L").get<int>();
      rec.scale = t.at("s").get<double>();
      rec.e_cen = t.at("e_cen").get<double>();
      rec.fallback = t.value("fallback", false);
      rec.warning = t.value("warning", std::string{});
      r.transitions.push_back(std::move(rec));
    }
  } catch (const Json::exception& e) {
    throw FormatError(std::string("stitch result: ") + e.what());
  }
  return r;
}

inline std::vector<FramePose> global_trajectory(const StitchResult& r) {
  std::vector<FramePose> out;
  out.reserve(r.global_poses.size());
  for (std::size_t t = 0; t < r.global_poses.size(); ++t) out.emplace_back(static_cast<int>(t), r.global_poses[t]);
  return out;
}

}  // namespace egostitch

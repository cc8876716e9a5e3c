#pragma once

// Manifest-driven runs: load chunk outputs, stitch, fuse and evaluate.

#include <optional>
#include <vector>

#include "egostitch/chunking.hpp"
#include "egostitch/dynamic_prior.hpp"
#include "egostitch/ingest.hpp"
#include "egostitch/metrics.hpp"
#include "egostitch/parallel.hpp"
#include "egostitch/stitcher.hpp"

namespace egostitch {

inline std::vector<ChunkTrajectory> load_chunk_trajectories(const SequenceManifest& m) {
  std::vector<ChunkTrajectory> out;
  out.reserve(m.chunks.size());
  for (std::size_t c = 0; c < m.chunks.size(); ++c) out.push_back(to_trajectory(load_poses(m.poses_path(static_cast<int>(c)))));
  return out;
}

inline StitchResult stitch_manifest(const SequenceManifest& m, const std::vector<ChunkTrajectory>& chunks) {
  return stitch(chunks, m.plans());
}

/// Suppression masks for the whole sequence, computed from the track index.
inline std::vector<BinaryMask> manifest_suppression_masks(const SequenceManifest& m, SuppressionMode mode,
                                                          const std::optional<NearHandParams>& filter = std::nullopt) {
  const TrackIndex index = m.load_tracks();
  return suppression_masks(mode, index.tracks, track_mask_provider(index, m.width, m.height), m.frame_count, m.width,
                           m.height, filter);
}

/// Chunk-local cloud of every frame in the chunk. Pixels set in `suppress`
/// (indexed by frame) are left out.
inline PointCloud chunk_cloud(const SequenceManifest& m, int chunk, const ChunkTrajectory& traj, const ChunkPlan& plan,
                              const std::vector<BinaryMask>* suppress = nullptr) {
  std::vector<PointCloud> frames(static_cast<std::size_t>(plan.length()));
  parallel_for(frames.size(), [&](std::size_t i) {
    const int t = plan.start + static_cast<int>(i);
    const DepthFrame d = m.load_depth(chunk, t);
    const Pose& pose = pose_at(traj, chunk, t);
    frames[i] = suppress ? back_project(d, pose, suppress->at(static_cast<std::size_t>(t)), false) : back_project(d, pose);
  });
  PointCloud out;
  for (const auto& f : frames) out.append(f);
  return out;
}

inline PointCloud fused_cloud(const SequenceManifest& m, const std::vector<ChunkTrajectory>& chunks,
                              const StitchResult& result, double voxel,
                              const std::vector<BinaryMask>* suppress = nullptr) {
  const auto plans = m.plans();
  std::vector<PointCloud> clouds;
  clouds.reserve(plans.size());
  for (std::size_t c = 0; c < plans.size(); ++c) {
    clouds.push_back(chunk_cloud(m, static_cast<int>(c), chunks[c], plans[c], suppress));
  }
  return fuse(clouds, result, voxel);
}

// ---------------------------------------------------------------------------
// Evaluation

struct MetricOptions {
  std::string variant = "default";
  std::vector<EvalMaskKind> evals = {EvalMaskKind::Instantaneous, EvalMaskKind::Footprint};
  /// Voxel size for the chunk-level clouds used by contamination and ρ.
  double voxel = 0.0;
  std::size_t max_points_per_frame = 20000;
  std::optional<SuppressionMode> suppress;
  std::optional<NearHandParams> near_hand;
  MultiSurfaceParams multi_surface;
  bool compute_rho = true;
};

namespace detail {

struct OverlapSets {
  std::vector<Vec3> reference;  // chunk c, chunk-c coordinates
  std::vector<Vec3> other;      // chunk c+1, chunk-(c+1) coordinates
};

inline OverlapSets overlap_sets(const DepthFrame& prev, const Pose& prev_pose, const DepthFrame& cur,
                                const Pose& cur_pose, const BinaryMask* static_only, std::size_t max_points) {
  PointCloud a = static_only ? back_project(prev, prev_pose, *static_only, false) : back_project(prev, prev_pose);
  PointCloud b = static_only ? back_project(cur, cur_pose, *static_only, false) : back_project(cur, cur_pose);
  return {limit_points(std::move(a.points), max_points), limit_points(std::move(b.points), max_points)};
}

inline std::optional<double> mean_of(const std::vector<std::optional<double>>& v) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& x : v) {
    if (!x) continue;
    sum += *x;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

}  // namespace detail

/// Full metric suite for one manifest. Per-chunk depth and point sets are
/// evaluated in their own chunk coordinates; overlap geometry maps chunk c+1
/// into chunk c with S_c^-1 ∘ S_{c+1}.
inline MetricReport evaluate(const SequenceManifest& m, const MetricOptions& opt) {
  for (auto k : opt.evals) {
    if (!m.has_eval(k)) throw ConfigError("manifest has no " + std::string(eval_dir_key(k)) + " masks");
  }
  const auto plans = m.plans();
  const auto chunks = load_chunk_trajectories(m);
  const StitchResult stitched = stitch(chunks, plans);

  MetricReport report;
  report.variant = opt.variant;
  for (const auto& t : stitched.transitions) report.e_cen.push_back(t.e_cen);
  if (!report.e_cen.empty()) {
    report.e_cen_summary = mean_median(report.e_cen);
    report.scale = scale_stability(stitched.scales());
  }

  std::map<EvalMaskKind, std::vector<BinaryMask>> eval_masks;
  for (auto k : opt.evals) {
    auto& v = eval_masks[k];
    v.resize(static_cast<std::size_t>(m.frame_count));
    parallel_for(v.size(), [&](std::size_t t) { v[t] = m.load_eval_mask(k, static_cast<int>(t)); });
  }
  std::optional<std::vector<BinaryMask>> suppress;
  if (opt.suppress) suppress = manifest_suppression_masks(m, *opt.suppress, opt.near_hand);

  // Overlap geometry: one job per (transition, frame).
  struct OverlapJob {
    int transition;
    int frame;
  };
  std::vector<OverlapJob> jobs;
  for (std::size_t c = 1; c < plans.size(); ++c) {
    for (int t : plans[c].overlap_frames()) jobs.push_back({static_cast<int>(c), t});
  }
  const std::size_t n_eval = opt.evals.size();
  std::vector<std::optional<double>> b_all(jobs.size());
  std::vector<std::vector<std::optional<double>>> b_static(n_eval, std::vector<std::optional<double>>(jobs.size()));
  parallel_for(jobs.size(), [&](std::size_t j) {
    const int c = jobs[j].transition;
    const int t = jobs[j].frame;
    const Sim3 rel = stitched.chunk_transforms[static_cast<std::size_t>(c - 1)].inverse() *
                     stitched.chunk_transforms[static_cast<std::size_t>(c)];
    const DepthFrame prev = m.load_depth(c - 1, t);
    const DepthFrame cur = m.load_depth(c, t);
    const Pose& prev_pose = pose_at(chunks[static_cast<std::size_t>(c - 1)], c - 1, t);
    const Pose& cur_pose = pose_at(chunks[static_cast<std::size_t>(c)], c, t);
    auto all = detail::overlap_sets(prev, prev_pose, cur, cur_pose, nullptr, opt.max_points_per_frame);
    if (!all.reference.empty() && !all.other.empty()) b_all[j] = overlap_geometry(all.reference, all.other, rel);
    for (std::size_t e = 0; e < n_eval; ++e) {
      const BinaryMask& mask = eval_masks[opt.evals[e]][static_cast<std::size_t>(t)];
      auto st = detail::overlap_sets(prev, prev_pose, cur, cur_pose, &mask, opt.max_points_per_frame);
      if (!st.reference.empty() && !st.other.empty()) b_static[e][j] = overlap_geometry(st.reference, st.other, rel);
    }
  });
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    if (!b_all[j]) report.skips.push_back({"B_all", jobs[j].frame, "empty back-projected set"});
  }
  report.b_all = detail::mean_of(b_all);

  // Chunk-level clouds, projected into the chunk's own frames.
  std::vector<std::vector<Vec3>> clouds;
  for (std::size_t c = 0; c < plans.size(); ++c) {
    PointCloud cloud = chunk_cloud(m, static_cast<int>(c), chunks[c], plans[c], suppress ? &*suppress : nullptr);
    clouds.push_back(voxel_subsample(cloud, opt.voxel).points);
  }

  for (std::size_t e = 0; e < n_eval; ++e) {
    const EvalMaskKind kind = opt.evals[e];
    const auto& masks = eval_masks[kind];
    ConditionedMetrics cm;
    cm.kind = kind;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      if (!b_static[e][j]) {
        report.skips.push_back({"B_static/" + std::string(eval_short_name(kind)), jobs[j].frame, "empty static set"});
      }
      cm.overlap_frames.push_back({jobs[j].transition, jobs[j].frame, b_all[j], b_static[e][j]});
    }
    cm.b_static = detail::mean_of(b_static[e]);

    struct FrameRef {
      int chunk;
      int frame;
    };
    std::vector<FrameRef> refs;
    for (std::size_t c = 0; c < plans.size(); ++c) {
      for (int t = plans[c].start; t < plans[c].end; ++t) refs.push_back({static_cast<int>(c), t});
    }
    cm.frames.resize(refs.size());
    std::vector<MultiSurfaceFrame> ms(refs.size());
    parallel_for(refs.size(), [&](std::size_t i) {
      const auto [c, t] = refs[i];
      const DepthFrame d = m.load_depth(c, t);
      const BinaryMask& mask = masks[static_cast<std::size_t>(t)];
      const Pose& pose = pose_at(chunks[static_cast<std::size_t>(c)], c, t);
      const DepthCoverage cov = depth_coverage(d, mask);
      CoverageFrameMetric& f = cm.frames[i];
      f.chunk = c;
      f.frame = t;
      f.d_all = cov.all;
      f.d_dyn = cov.dyn;
      f.d_static = cov.stat;
      f.mask_coverage = static_cast<double>(cov.area_dyn) / static_cast<double>(mask.size());
      f.counts = contamination_counts(clouds[static_cast<std::size_t>(c)], pose, d.intrinsics, mask);
      if (opt.compute_rho) ms[i] = multi_surface_frame(clouds[static_cast<std::size_t>(c)], pose, d, mask, opt.multi_surface);
    });

    std::vector<ContaminationCounts> counts;
    std::vector<std::optional<double>> d_dyn, d_static;
    double d_all = 0.0, coverage = 0.0;
    double rho_sum = 0.0;
    std::size_t rho_n = 0;
    for (std::size_t i = 0; i < refs.size(); ++i) {
      const auto& f = cm.frames[i];
      counts.push_back(f.counts);
      d_all += f.d_all;
      coverage += f.mask_coverage;
      d_dyn.push_back(f.d_dyn);
      d_static.push_back(f.d_static);
      if (!f.d_dyn) report.skips.push_back({"D_dyn/" + std::string(eval_short_name(kind)), f.frame, "empty dynamic region"});
      if (ms[i].denominator > 0) {
        rho_sum += static_cast<double>(ms[i].multi) / static_cast<double>(ms[i].denominator);
        ++rho_n;
      }
    }
    cm.d_all = d_all / static_cast<double>(refs.size());
    cm.mask_coverage = coverage / static_cast<double>(refs.size());
    cm.d_dyn = detail::mean_of(d_dyn);
    cm.d_static = detail::mean_of(d_static);
    const ContaminationRatios cr = contamination_ratios(counts);
    cm.c_den = cr.c_den;
    cm.c_occ = cr.c_occ;
    cm.c_od = cr.c_od;
    if (opt.compute_rho && rho_n > 0) cm.rho = rho_sum / static_cast<double>(rho_n);
    report.conditioned.push_back(std::move(cm));
  }
  return report;
}

}  // namespace egostitch

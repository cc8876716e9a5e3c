#pragma once

// Evaluation metrics: overlap geometry consistency, density-normalized
// contamination, depth coverage, camera-centre residual, scale stability and
// the auxiliary multi-surface ratio.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "egostitch/core.hpp"
#include "egostitch/dynamic_prior.hpp"
#include "egostitch/ingest.hpp"
#include "egostitch/kdtree.hpp"
#include "egostitch/stitcher.hpp"

namespace egostitch {

inline constexpr double kOverdrawEpsilon = 1e-8;

// ---------------------------------------------------------------------------
// Nearest-neighbour and overlap geometry

inline double nn_distance(const Vec3& x, const KdTree& tree) { return tree.nearest(x); }

inline double nn_distance(const Vec3& x, std::span<const Vec3> set) {
  if (set.empty()) throw EmptySetError("nn_distance: empty point set");
  return KdTree(set).nearest(x);
}

inline double mean_nn_distance(std::span<const Vec3> from, const KdTree& to) {
  if (from.empty()) throw EmptySetError("mean_nn_distance: empty query set");
  double sum = 0.0;
  for (const auto& p : from) sum += to.nearest(p);
  return sum / static_cast<double>(from.size());
}

/// Symmetric mean nearest-neighbour distance between `reference` and
/// `other` after mapping `other` through `s`.
inline double overlap_geometry(std::span<const Vec3> reference, std::span<const Vec3> other, const Sim3& s) {
  if (reference.empty() || other.empty()) throw EmptySetError("overlap_geometry: empty point set");
  std::vector<Vec3> mapped(other.size());
  for (std::size_t i = 0; i < other.size(); ++i) mapped[i] = apply_sim3(s, other[i]);
  const KdTree ref_tree(reference);
  const KdTree mapped_tree(mapped);
  return 0.5 * (mean_nn_distance(mapped, ref_tree) + mean_nn_distance(reference, mapped_tree));
}

/// Deterministic stride subsample down to at most `max_points`.
inline std::vector<Vec3> limit_points(std::vector<Vec3> pts, std::size_t max_points) {
  if (max_points == 0 || pts.size() <= max_points) return pts;
  std::vector<Vec3> out;
  out.reserve(max_points);
  for (std::size_t i = 0; i < max_points; ++i) out.push_back(pts[i * pts.size() / max_points]);
  return out;
}

// ---------------------------------------------------------------------------
// Contamination

struct ContaminationCounts {
  std::size_t n_dyn = 0;
  std::size_t h_dyn = 0;
  std::size_t n_static = 0;
  std::size_t h_static = 0;
  std::size_t area_dyn = 0;
  std::size_t area_static = 0;

  friend bool operator==(const ContaminationCounts&, const ContaminationCounts&) = default;
};

/// Projects the cloud into one frame and counts points / hit pixels inside
/// the dynamic region and its complement.
inline ContaminationCounts contamination_counts(std::span<const Vec3> points, const Pose& pose, const Intrinsics& k,
                                                const BinaryMask& dynamic_region) {
  if (dynamic_region.width() != k.width || dynamic_region.height() != k.height) {
    throw ConsistencyError("contamination: evaluation mask size differs from the frame size");
  }
  ContaminationCounts c;
  c.area_dyn = dynamic_region.count();
  c.area_static = dynamic_region.size() - c.area_dyn;
  std::vector<std::uint8_t> hit(dynamic_region.size(), 0);
  for (const auto& p : points) {
    const auto px = project_point(p, pose, k);
    if (!px) continue;
    const std::size_t i = static_cast<std::size_t>(px->v) * k.width + px->u;
    if (dynamic_region.test(i)) {
      ++c.n_dyn;
      if (!hit[i]) ++c.h_dyn;
    } else {
      ++c.n_static;
      if (!hit[i]) ++c.h_static;
    }
    hit[i] = 1;
  }
  return c;
}

struct ContaminationRatios {
  std::optional<double> c_den;
  std::optional<double> c_occ;
  std::optional<double> c_od;
  std::size_t frames_dyn = 0;     // frames contributing to dynamic expectations
  std::size_t frames_static = 0;  // frames contributing to static expectations
};

/// Ratios of per-frame averaged densities, dynamic over static. Frames whose
/// region is empty are left out of that region's expectation.
inline ContaminationRatios contamination_ratios(std::span<const ContaminationCounts> frames) {
  double den_dyn = 0, occ_dyn = 0, od_dyn = 0;
  double den_st = 0, occ_st = 0, od_st = 0;
  ContaminationRatios r;
  for (const auto& f : frames) {
    if (f.area_dyn > 0) {
      ++r.frames_dyn;
      den_dyn += static_cast<double>(f.n_dyn) / static_cast<double>(f.area_dyn);
      occ_dyn += static_cast<double>(f.h_dyn) / static_cast<double>(f.area_dyn);
      od_dyn += static_cast<double>(f.n_dyn) / (static_cast<double>(f.h_dyn) + kOverdrawEpsilon);
    }
    if (f.area_static > 0) {
      ++r.frames_static;
      den_st += static_cast<double>(f.n_static) / static_cast<double>(f.area_static);
      occ_st += static_cast<double>(f.h_static) / static_cast<double>(f.area_static);
      od_st += static_cast<double>(f.n_static) / (static_cast<double>(f.h_static) + kOverdrawEpsilon);
    }
  }
  if (r.frames_dyn == 0 || r.frames_static == 0) return r;
  const double nd = static_cast<double>(r.frames_dyn);
  const double ns = static_cast<double>(r.frames_static);
  auto ratio = [&](double dyn, double st) -> std::optional<double> {
    if (!(st > 0.0)) return std::nullopt;
    return (dyn / nd) / (st / ns);
  };
  r.c_den = ratio(den_dyn, den_st);
  r.c_occ = ratio(occ_dyn, occ_st);
  r.c_od = ratio(od_dyn, od_st);
  return r;
}

/// One frame a cloud is evaluated against.
struct EvalView {
  Pose pose;
  Intrinsics intrinsics;
  BinaryMask dynamic_region;
};

inline ContaminationRatios contamination(std::span<const Vec3> points, std::span<const EvalView> views) {
  std::vector<ContaminationCounts> counts(views.size());
  parallel_for(views.size(), [&](std::size_t i) {
    counts[i] = contamination_counts(points, views[i].pose, views[i].intrinsics, views[i].dynamic_region);
  });
  return contamination_ratios(counts);
}

// ---------------------------------------------------------------------------
// Depth coverage

struct DepthCoverage {
  double all = 0.0;
  std::optional<double> dyn;
  std::optional<double> stat;
  std::size_t valid = 0;
  std::size_t valid_dyn = 0;
  std::size_t valid_static = 0;
  std::size_t area_dyn = 0;
  std::size_t area_static = 0;
};

inline DepthCoverage depth_coverage(const DepthFrame& d, const BinaryMask& dynamic_region) {
  if (dynamic_region.width() != d.width() || dynamic_region.height() != d.height()) {
    throw ConsistencyError("depth_coverage: mask size differs from depth size");
  }
  DepthCoverage c;
  const auto& z = d.depth.data();
  for (std::size_t i = 0; i < z.size(); ++i) {
    const bool valid = is_valid_depth(z[i]);
    const bool dyn = dynamic_region.test(i);
    c.valid += valid;
    if (dyn) {
      ++c.area_dyn;
      c.valid_dyn += valid;
    } else {
      ++c.area_static;
      c.valid_static += valid;
    }
  }
  c.all = static_cast<double>(c.valid) / static_cast<double>(z.size());
  if (c.area_dyn > 0) c.dyn = static_cast<double>(c.valid_dyn) / static_cast<double>(c.area_dyn);
  if (c.area_static > 0) c.stat = static_cast<double>(c.valid_static) / static_cast<double>(c.area_static);
  return c;
}

// ---------------------------------------------------------------------------
// Trajectory metrics

/// RMSE of |reference_k - S(current_k)| over an overlap.
inline double center_residual(std::span<const Vec3> reference, std::span<const Vec3> current, const Sim3& s) {
  if (reference.size() != current.size()) throw ConsistencyError("center_residual: length mismatch");
  if (reference.empty()) throw EmptySetError("center_residual: empty overlap");
  double sum = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) sum += (reference[i] - apply_sim3(s, current[i])).squaredNorm();
  return std::sqrt(sum / static_cast<double>(reference.size()));
}

struct MeanMedian {
  double mean = 0.0;
  double median = 0.0;
};

inline MeanMedian mean_median(std::vector<double> v) {
  if (v.empty()) throw EmptySetError("mean_median: no values");
  MeanMedian m;
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  m.median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  return m;
}

struct ScaleStability {
  double arithmetic = 1.0;
  double geometric = 1.0;
};

/// Mean per-transition scale; near 1 means little scale drift.
inline ScaleStability scale_stability(std::span<const double> scales) {
  if (scales.empty()) throw EmptySetError("scale_stability: no transitions");
  ScaleStability s;
  double sum = 0.0, log_sum = 0.0;
  for (double v : scales) {
    if (!(v > 0.0)) throw ValidationError("scale_stability: scales must be positive");
    sum += v;
    log_sum += std::log(v);
  }
  s.arithmetic = sum / static_cast<double>(scales.size());
  s.geometric = std::exp(log_sum / static_cast<double>(scales.size()));
  return s;
}

// ---------------------------------------------------------------------------
// Multi-surface ratio (auxiliary)

struct MultiSurfaceParams {
  double visibility_eps = 0.05;
  int dilate_radius = 3;
  int min_count = 2;
};

struct MultiSurfaceFrame {
  std::size_t multi = 0;        // pixels with >= 2 depth layers
  std::size_t denominator = 0;  // pixels with cnt >= min_count
};

/// Number of depth clusters when sorted values are split at gaps > eps.
inline int count_depth_layers(std::vector<double> z, double eps) {
  if (z.empty()) return 0;
  std::sort(z.begin(), z.end());
  int layers = 1;
  for (std::size_t i = 1; i < z.size(); ++i) {
    if (z[i] - z[i - 1] > eps) ++layers;
  }
  return layers;
}

/// Visibility-gated hits per static pixel (outside the dilated dynamic mask).
inline MultiSurfaceFrame multi_surface_frame(std::span<const Vec3> points, const Pose& pose, const DepthFrame& depth,
                                             const BinaryMask& dynamic_region, const MultiSurfaceParams& params) {
  const auto& k = depth.intrinsics;
  if (dynamic_region.width() != depth.width() || dynamic_region.height() != depth.height()) {
    throw ConsistencyError("multi_surface: mask size differs from depth size");
  }
  const BinaryMask excluded = dilate(dynamic_region, params.dilate_radius);
  std::vector<std::vector<double>> hits(excluded.size());
  for (const auto& p : points) {
    const auto px = project_point(p, pose, k);
    if (!px) continue;
    const std::size_t i = static_cast<std::size_t>(px->v) * k.width + px->u;
    if (excluded.test(i)) continue;
    const float z = depth.depth(px->u, px->v);
    if (!is_valid_depth(z)) continue;
    if (px->z <= static_cast<double>(z) + params.visibility_eps) hits[i].push_back(px->z);
  }
  MultiSurfaceFrame f;
  for (auto& h : hits) {
    if (static_cast<int>(h.size()) < params.min_count) continue;
    ++f.denominator;
    if (count_depth_layers(std::move(h), params.visibility_eps) >= 2) ++f.multi;
  }
  return f;
}

struct MultiSurfaceView {
  Pose pose;
  DepthFrame depth;
  BinaryMask dynamic_region;
};

/// Mean per-frame ratio over frames with a non-empty denominator.
inline std::optional<double> multi_surface_ratio(std::span<const Vec3> points, std::span<const MultiSurfaceView> views,
                                                 const MultiSurfaceParams& params = {}) {
  std::vector<MultiSurfaceFrame> frames(views.size());
  parallel_for(views.size(), [&](std::size_t i) {
    frames[i] = multi_surface_frame(points, views[i].pose, views[i].depth, views[i].dynamic_region, params);
  });
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& f : frames) {
    if (f.denominator == 0) continue;
    sum += static_cast<double>(f.multi) / static_cast<double>(f.denominator);
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Report

struct SkipRecord {
  std::string metric;
  int frame = 0;
  std::string reason;
};

struct OverlapFrameMetric {
  int transition = 0;
  int frame = 0;
  std::optional<double> d_geo_all;
  std::optional<double> d_geo_static;
};

struct CoverageFrameMetric {
  int chunk = 0;
  int frame = 0;
  double d_all = 0.0;
  std::optional<double> d_dyn;
  std::optional<double> d_static;
  double mask_coverage = 0.0;
  ContaminationCounts counts;
};

/// Metrics that depend on the evaluation mask set.
struct ConditionedMetrics {
  EvalMaskKind kind = EvalMaskKind::Instantaneous;
  std::optional<double> b_static;
  double d_all = 0.0;
  std::optional<double> d_dyn;
  std::optional<double> d_static;
  std::optional<double> c_den;
  std::optional<double> c_occ;
  std::optional<double> c_od;
  std::optional<double> rho;  // auxiliary only
  double mask_coverage = 0.0;
  std::vector<OverlapFrameMetric> overlap_frames;
  std::vector<CoverageFrameMetric> frames;
};

struct MetricReport {
  std::string variant = "default";
  std::vector<double> e_cen;  // per transition
  std::optional<MeanMedian> e_cen_summary;
  std::optional<double> b_all;
  std::optional<ScaleStability> scale;
  std::vector<ConditionedMetrics> conditioned;
  std::vector<SkipRecord> skips;
};

namespace detail {

inline Json opt_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline std::string opt_csv(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

}  // namespace detail

inline Json metric_report_to_json(const MetricReport& r) {
  using detail::opt_json;
  Json cond = Json::array();
  for (const auto& c : r.conditioned) {
    Json frames = Json::array();
    for (const auto& f : c.frames) {
      frames.push_back({{"chunk", f.chunk},
                        {"frame", f.frame},
                        {"D_all", f.d_all},
                        {"D_dyn", opt_json(f.d_dyn)},
                        {"D_static", opt_json(f.d_static)},
                        {"mask_coverage", f.mask_coverage},
                        {"N_dyn", f.counts.n_dyn},
                        {"H_dyn", f.counts.h_dyn},
                        {"N_static", f.counts.n_static},
                        {"H_static", f.counts.h_static}});
    }
    Json overlap = Json::array();
    for (const auto& o : c.overlap_frames) {
      overlap.push_back({{"transition", o.transition},
                         {"frame", o.frame},
                         {"d_geo_all", opt_json(o.d_geo_all)},
                         {"d_geo_static", opt_json(o.d_geo_static)}});
    }
    cond.push_back({{"eval", std::string(eval_short_name(c.kind))},
                    {"B_static", opt_json(c.b_static)},
                    {"D_all", c.d_all},
                    {"D_dyn", opt_json(c.d_dyn)},
                    {"D_static", opt_json(c.d_static)},
                    {"C_den", opt_json(c.c_den)},
                    {"C_occ", opt_json(c.c_occ)},
                    {"C_od", opt_json(c.c_od)},
                    {"rho_auxiliary", opt_json(c.rho)},
                    {"mask_coverage", c.mask_coverage},
                    {"per_overlap_frame", overlap},
                    {"per_frame", frames}});
  }
  Json skips = Json::array();
  for (const auto& s : r.skips) skips.push_back({{"metric", s.metric}, {"frame", s.frame}, {"reason", s.reason}});
  Json j = {{"variant", r.variant},
            {"e_cen", {{"per_transition", r.e_cen},
                       {"mean", r.e_cen_summary ? Json(r.e_cen_summary->mean) : Json(nullptr)},
                       {"median", r.e_cen_summary ? Json(r.e_cen_summary->median) : Json(nullptr)}}},
            {"B_all", opt_json(r.b_all)},
            {"scale_mean", r.scale ? Json(r.scale->arithmetic) : Json(nullptr)},
            {"scale_geometric_mean", r.scale ? Json(r.scale->geometric) : Json(nullptr)},
            {"conditioned", cond},
            {"skipped", skips}};
  return j;
}

inline const std::vector<std::string>& metric_csv_columns() {
  static const std::vector<std::string> cols = {"variant", "eval",   "e_cen_mean", "e_cen_median", "B_all",
                                                "B_static", "D_all", "D_dyn",      "D_static",     "C_den",
                                                "C_occ",   "C_od",   "s_mean",     "s_geo",        "rho_aux",
                                                "mask_coverage"};
  return cols;
}

/// Flat rows, one per (variant, evaluation mask).
inline std::vector<std::vector<std::string>> metric_csv_rows(const MetricReport& r) {
  using detail::opt_csv;
  std::vector<std::vector<std::string>> rows;
  auto em = [&](bool mean) {
    return r.e_cen_summary ? format_number(mean ? r.e_cen_summary->mean : r.e_cen_summary->median) : std::string();
  };
  for (const auto& c : r.conditioned) {
    rows.push_back({r.variant, std::string(eval_short_name(c.kind)), em(true), em(false), opt_csv(r.b_all),
                    opt_csv(c.b_static), format_number(c.d_all), opt_csv(c.d_dyn), opt_csv(c.d_static),
                    opt_csv(c.c_den), opt_csv(c.c_occ), opt_csv(c.c_od),
                    r.scale ? format_number(r.scale->arithmetic) : "", r.scale ? format_number(r.scale->geometric) : "",
                    opt_csv(c.rho), format_number(c.mask_coverage)});
  }
  return rows;
}

inline std::string join_csv(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += fields[i];
  }
  return out;
}

inline std::string metric_report_csv(const MetricReport& r) {
  std::string out = join_csv(metric_csv_columns()) + '\n';
  for (const auto& row : metric_csv_rows(r)) out += join_csv(row) + '\n';
  return out;
}

inline std::optional<double> json_opt(const Json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

/// Reads back the summary fields of a report (per-frame breakdowns are not
/// restored).
inline MetricReport metric_report_from_json(const Json& j) {
  MetricReport r;
  try {
    r.variant = j.at("variant").get<std::string>();
    r.e_cen = j.at("e_cen").at("per_transition").get<std::vector<double>>();
    if (!j["e_cen"]["mean"].is_null()) {
      r.e_cen_summary = MeanMedian{j["e_cen"]["mean"].get<double>(), j["e_cen"]["median"].get<double>()};
    }
    r.b_all = json_opt(j, "B_all");
    if (!j.at("scale_mean").is_null()) {
      r.scale = ScaleStability{j["scale_mean"].get<double>(), j.at("scale_geometric_mean").get<double>()};
    }
    for (const auto& c : j.at("conditioned")) {
      ConditionedMetrics m;
      m.kind = c.at("eval").get<std::string>() == "dynamics" ? EvalMaskKind::Instantaneous : EvalMaskKind::Footprint;
      m.b_static = json_opt(c, "B_static");
      m.d_all = c.at("D_all").get<double>();
      m.d_dyn = json_opt(c, "D_dyn");
      m.d_static = json_opt(c, "D_static");
      m.c_den = json_opt(c, "C_den");
      m.c_occ = json_opt(c, "C_occ");
      m.c_od = json_opt(c, "C_od");
      m.rho = json_opt(c, "rho_auxiliary");
      m.mask_coverage = c.at("mask_coverage").get<double>();
      r.conditioned.push_back(std::move(m));
    }
  } catch (const Json::exception& e) {
    throw FormatError(std::string("metric report: ") + e.what());
  }
  return r;
}

}  // namespace egostitch

#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace egostitch;
using namespace testutil;

namespace {

double linear_nn(const Vec3& q, const std::vector<Vec3>& set) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : set) best = std::min(best, (p - q).norm());
  return best;
}

double chamfer_oracle(const std::vector<Vec3>& a, const std::vector<Vec3>& b, const Sim3& s) {
  std::vector<Vec3> mb;
  for (const auto& p : b) mb.push_back(s.scale * (s.rotation * p) + s.translation);
  double ab = 0.0, ba = 0.0;
  for (const auto& p : mb) ab += linear_nn(p, a);
  for (const auto& p : a) ba += linear_nn(p, mb);
  return 0.5 * (ab / static_cast<double>(mb.size()) + ba / static_cast<double>(a.size()));
}

// Independent pinhole counting: world to camera, nearest pixel centre.
ContaminationCounts counts_oracle(const std::vector<Vec3>& pts, const Pose& pose, const Intrinsics& k,
                                  const BinaryMask& m) {
  ContaminationCounts c;
  std::vector<int> seen(static_cast<std::size_t>(k.width * k.height), 0);
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) (m.at(x, y) ? c.area_dyn : c.area_static)++;
  }
  for (const auto& p : pts) {
    const Vec3 q = pose.rotation.transpose() * (p - pose.translation);
    if (q.z() <= 0) continue;
    const int u = static_cast<int>(std::floor(k.fx * q.x() / q.z() + k.cx + 0.5));
    const int v = static_cast<int>(std::floor(k.fy * q.y() / q.z() + k.cy + 0.5));
    if (u < 0 || v < 0 || u >= k.width || v >= k.height) continue;
    const int idx = v * k.width + u;
    if (m.at(u, v)) {
      ++c.n_dyn;
      c.h_dyn += seen[idx] == 0;
    } else {
      ++c.n_static;
      c.h_static += seen[idx] == 0;
    }
    seen[idx] = 1;
  }
  return c;
}

// Points whose projections are uniform over the image plane of `pose`.
std::vector<Vec3> uniform_view_cloud(std::mt19937_64& rng, const Pose& pose, const Intrinsics& k, std::size_t n) {
  std::uniform_real_distribution<double> ux(-0.5, k.width - 0.5), uy(-0.5, k.height - 0.5), uz(0.5, 5.0);
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = uz(rng);
    const Vec3 cam((ux(rng) - k.cx) / k.fx * z, (uy(rng) - k.cy) / k.fy * z, z);
    pts.push_back(pose.apply(cam));
  }
  return pts;
}

const Intrinsics kSmall{40, 40, 31.5, 23.5, 64, 48};

}  // namespace

// --- nearest neighbour -----------------------------------------------------

TEST(NearestNeighbour, Examples) {
  const std::vector<Vec3> set = {Vec3(0, 0, 0), Vec3(3, 0, 0)};
  EXPECT_EQ(nn_distance(Vec3(0, 0, 0), set), 0.0);
  EXPECT_DOUBLE_EQ(nn_distance(Vec3(1, 0, 0), set), 1.0);
  EXPECT_DOUBLE_EQ(nn_distance(Vec3(2, 0, 0), set), 1.0);
  EXPECT_DOUBLE_EQ(nn_distance(Vec3(0, 4, 3), set), 5.0);
  EXPECT_THROW(nn_distance(Vec3(0, 0, 0), std::vector<Vec3>{}), EmptySetError);
}

TEST(NearestNeighbour, ExactAgainstLinearScan) {
  std::mt19937_64 rng(81);
  std::vector<Vec3> pts(10000);
  for (auto& p : pts) p = random_vec(rng, -5.0, 5.0);
  const KdTree tree(pts);
  for (int q = 0; q < 1000; ++q) {
    const Vec3 x = random_vec(rng, -6.0, 6.0);
    EXPECT_EQ(nn_distance(x, tree), linear_nn(x, pts));
  }
  for (int q = 0; q < 100; ++q) EXPECT_EQ(nn_distance(pts[q * 97], tree), 0.0);
}

TEST(NearestNeighbour, DuplicatesAndDegenerateLayouts) {
  std::mt19937_64 rng(82);
  std::vector<Vec3> line;
  for (int i = 0; i < 500; ++i) line.emplace_back(i % 7, 0, 0);  // heavy duplicates, one axis
  const KdTree tree(line);
  for (int q = 0; q < 200; ++q) {
    const Vec3 x = random_vec(rng, -2.0, 9.0);
    EXPECT_EQ(tree.nearest(x), linear_nn(x, line));
  }
}

// --- overlap geometry ------------------------------------------------------

TEST(OverlapGeometry, Examples) {
  const std::vector<Vec3> a = {Vec3(0, 0, 0)};
  const std::vector<Vec3> b = {Vec3(1, 0, 0)};
  EXPECT_DOUBLE_EQ(overlap_geometry(a, b, Sim3::identity()), 1.0);
  EXPECT_EQ(overlap_geometry(a, a, Sim3::identity()), 0.0);
  Sim3 back = Sim3::identity();
  back.translation = Vec3(-1, 0, 0);
  EXPECT_EQ(overlap_geometry(a, b, back), 0.0);
  const std::vector<Vec3> two = {Vec3(0, 0, 0), Vec3(4, 0, 0)};
  // a->two: 0, two->a: (0 + 4) / 2 = 2
  EXPECT_DOUBLE_EQ(overlap_geometry(a, two, Sim3::identity()), 1.0);
  EXPECT_THROW(overlap_geometry(a, std::vector<Vec3>{}, Sim3::identity()), EmptySetError);
}

TEST(OverlapGeometry, MatchesChamferOracle) {
  std::mt19937_64 rng(83);
  for (int trial = 0; trial < 60; ++trial) {
    std::vector<Vec3> a(1 + rng() % 200), b(1 + rng() % 200);
    for (auto& p : a) p = random_vec(rng, -3.0, 3.0);
    for (auto& p : b) p = random_vec(rng, -3.0, 3.0);
    const Sim3 s = random_sim3(rng);
    EXPECT_NEAR(overlap_geometry(a, b, s), chamfer_oracle(a, b, s), 1e-12);
  }
}

TEST(OverlapGeometry, ZeroForExactlyMappedCopy) {
  std::mt19937_64 rng(84);
  std::vector<Vec3> a(300);
  for (auto& p : a) p = random_vec(rng, -3.0, 3.0);
  const Sim3 s = random_sim3(rng);
  std::vector<Vec3> b;
  for (const auto& p : a) b.push_back(apply_sim3(s.inverse(), p));
  EXPECT_LT(overlap_geometry(a, b, s), 1e-12);
}

TEST(LimitPoints, StrideSubsample) {
  std::vector<Vec3> v;
  for (int i = 0; i < 10; ++i) v.emplace_back(i, 0, 0);
  EXPECT_EQ(limit_points(v, 0).size(), 10u);
  EXPECT_EQ(limit_points(v, 20).size(), 10u);
  const auto half = limit_points(v, 5);
  ASSERT_EQ(half.size(), 5u);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(half[i].x(), 2 * i);
}

// --- contamination ---------------------------------------------------------

TEST(Contamination, EmptyCloudGivesZeroCounts) {
  BinaryMask m(kSmall.width, kSmall.height);
  m.set(3, 3);
  const auto c = contamination_counts(std::vector<Vec3>{}, Pose::identity(), kSmall, m);
  EXPECT_EQ(c.n_dyn + c.n_static + c.h_dyn + c.h_static, 0u);
  EXPECT_EQ(c.area_dyn, 1u);
  EXPECT_EQ(c.area_static, kSmall.width * kSmall.height - 1u);
  EXPECT_THROW(contamination_counts(std::vector<Vec3>{}, Pose::identity(), kSmall, BinaryMask(3, 3)),
               ConsistencyError);
}

TEST(Contamination, HandExample) {
  const Intrinsics k{1, 1, 1, 1, 3, 3};
  BinaryMask m(3, 3);
  m.set(1, 1);
  // three points at the centre pixel, one at (0, 0), one behind the camera
  const std::vector<Vec3> pts = {Vec3(0, 0, 1), Vec3(0, 0, 2), Vec3(0.1, 0, 1), Vec3(-1, -1, 1), Vec3(0, 0, -1)};
  const auto c = contamination_counts(pts, Pose::identity(), k, m);
  EXPECT_EQ(c.n_dyn, 3u);
  EXPECT_EQ(c.h_dyn, 1u);
  EXPECT_EQ(c.n_static, 1u);
  EXPECT_EQ(c.h_static, 1u);
  const std::vector<ContaminationCounts> frames = {c};
  const auto r = contamination_ratios(frames);
  EXPECT_DOUBLE_EQ(*r.c_den, 3.0 / (1.0 / 8.0));
  EXPECT_DOUBLE_EQ(*r.c_occ, 1.0 / (1.0 / 8.0));
  EXPECT_NEAR(*r.c_od, 3.0, 1e-7);
}

TEST(Contamination, CountsMatchOracle) {
  std::mt19937_64 rng(85);
  for (int trial = 0; trial < 60; ++trial) {
    const Pose pose = random_pose(rng);
    const BinaryMask m = random_mask(rng, kSmall.width, kSmall.height, 0.3);
    auto pts = uniform_view_cloud(rng, pose, kSmall, 1 + rng() % 200);
    for (int i = 0; i < 20; ++i) pts.push_back(random_vec(rng, -10.0, 10.0));  // mostly off-screen
    EXPECT_EQ(contamination_counts(pts, pose, kSmall, m), counts_oracle(pts, pose, kSmall, m));
  }
}

TEST(Contamination, UniformCloudIsNeutral) {
  std::mt19937_64 rng(86);
  std::vector<ContaminationCounts> frames;
  const BinaryMask m = random_mask(rng, kSmall.width, kSmall.height, 0.25);
  for (int f = 0; f < 4; ++f) {
    const Pose pose = random_pose(rng);
    const auto pts = uniform_view_cloud(rng, pose, kSmall, 100000);
    frames.push_back(contamination_counts(pts, pose, kSmall, m));
  }
  const auto r = contamination_ratios(frames);
  ASSERT_TRUE(r.c_den);
  EXPECT_NEAR(*r.c_den, 1.0, 0.05);
  EXPECT_NEAR(*r.c_occ, 1.0, 0.05);
}

TEST(Contamination, SimilarityInvariant) {
  std::mt19937_64 rng(87);
  for (int trial = 0; trial < 30; ++trial) {
    const Pose pose = random_pose(rng);
    const BinaryMask m = random_mask(rng, kSmall.width, kSmall.height, 0.4);
    const auto pts = uniform_view_cloud(rng, pose, kSmall, 500);
    const Sim3 s = random_sim3(rng);
    std::vector<Vec3> moved;
    for (const auto& p : pts) moved.push_back(apply_sim3(s, p));
    EXPECT_EQ(contamination_counts(pts, pose, kSmall, m),
              contamination_counts(moved, compose_sim3_pose(s, pose), kSmall, m));
  }
}

TEST(Contamination, RemovingDynamicPointsGivesZero) {
  std::mt19937_64 rng(88);
  const Pose pose = random_pose(rng);
  const BinaryMask m = random_mask(rng, kSmall.width, kSmall.height, 0.3);
  const auto pts = uniform_view_cloud(rng, pose, kSmall, 20000);
  std::vector<Vec3> kept;
  for (const auto& p : pts) {
    const auto px = project_point(p, pose, kSmall);
    if (px && !m.at(px->u, px->v)) kept.push_back(p);
  }
  const std::vector<ContaminationCounts> frames = {contamination_counts(kept, pose, kSmall, m)};
  const auto r = contamination_ratios(frames);
  EXPECT_EQ(*r.c_den, 0.0);
  EXPECT_EQ(*r.c_occ, 0.0);
}

TEST(Contamination, UndefinedWithoutRegions) {
  ContaminationCounts all_static;
  all_static.area_static = 10;
  all_static.n_static = 5;
  const std::vector<ContaminationCounts> frames = {all_static};
  EXPECT_FALSE(contamination_ratios(frames).c_den);
  ContaminationCounts f;
  f.area_dyn = 2;
  f.area_static = 10;  // no static points at all
  const std::vector<ContaminationCounts> empty_static = {f};
  EXPECT_FALSE(contamination_ratios(empty_static).c_den);
}

// --- depth coverage --------------------------------------------------------

TEST(DepthCoverage, Examples) {
  DepthFrame d;
  d.intrinsics = {1, 1, 0, 0, 2, 2};
  d.depth = Raster<float>(2, 2, 1.0f);
  d.depth(1, 1) = 0.0f;
  d.depth(0, 1) = std::numeric_limits<float>::quiet_NaN();
  BinaryMask m(2, 2);
  m.set(1, 1);
  const auto c = depth_coverage(d, m);
  EXPECT_DOUBLE_EQ(c.all, 0.5);
  EXPECT_EQ(*c.dyn, 0.0);
  EXPECT_DOUBLE_EQ(*c.stat, 2.0 / 3.0);
  EXPECT_FALSE(depth_coverage(d, BinaryMask(2, 2)).dyn);
  EXPECT_THROW(depth_coverage(d, BinaryMask(3, 2)), ConsistencyError);
}

TEST(DepthCoverage, MatchesCountingOracle) {
  std::mt19937_64 rng(89);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 60; ++trial) {
    DepthFrame d;
    d.intrinsics = kSmall;
    d.depth = Raster<float>(64, 64);
    std::size_t valid = 0, area_dyn = 0, valid_dyn = 0;
    const BinaryMask m = random_mask(rng, 64, 64, 0.2);
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x < 64; ++x) {
        const double r = u(rng);
        const float z = r < 0.2 ? 0.0f : r < 0.3 ? -1.0f : r < 0.35 ? INFINITY : static_cast<float>(r);
        d.depth(x, y) = z;
        const bool ok = r >= 0.35;
        valid += ok;
        if (m.at(x, y)) {
          ++area_dyn;
          valid_dyn += ok;
        }
      }
    }
    const auto c = depth_coverage(d, m);
    EXPECT_DOUBLE_EQ(c.all, static_cast<double>(valid) / 4096.0);
    ASSERT_EQ(c.dyn.has_value(), area_dyn > 0);
    if (area_dyn) {
      EXPECT_DOUBLE_EQ(*c.dyn, static_cast<double>(valid_dyn) / static_cast<double>(area_dyn));
    }
    EXPECT_DOUBLE_EQ(*c.stat, static_cast<double>(valid - valid_dyn) / static_cast<double>(4096 - area_dyn));
  }
}

// --- trajectory metrics ----------------------------------------------------

TEST(CenterResidual, Example) {
  const std::vector<Vec3> ref = {Vec3(0, 0, 0)};
  const std::vector<Vec3> cur = {Vec3(0.5, 0, 0)};
  EXPECT_DOUBLE_EQ(center_residual(ref, cur, Sim3::identity()), 0.5);
  EXPECT_THROW(center_residual(ref, std::vector<Vec3>{}, Sim3::identity()), ConsistencyError);
}

TEST(CenterResidual, EqualsAlignmentRmse) {
  std::mt19937_64 rng(90);
  std::normal_distribution<double> noise(0, 0.05);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Vec3> x(10), y;
    for (auto& p : x) p = random_vec(rng, -2.0, 2.0);
    const Sim3 s = random_sim3(rng);
    for (const auto& p : x) y.push_back(apply_sim3(s, p) + Vec3(noise(rng), noise(rng), noise(rng)));
    const auto fit = umeyama(x, y);
    EXPECT_NEAR(center_residual(y, x, fit.transform), fit.rmse, 1e-12);
  }
}

TEST(ScaleStability, Examples) {
  const std::vector<double> s = {2.0, 0.5};
  const auto r = scale_stability(s);
  EXPECT_DOUBLE_EQ(r.arithmetic, 1.25);
  EXPECT_DOUBLE_EQ(r.geometric, 1.0);
  EXPECT_THROW(scale_stability(std::vector<double>{}), EmptySetError);
  EXPECT_THROW(scale_stability(std::vector<double>{1.0, 0.0}), ValidationError);
}

TEST(MeanMedian, Examples) {
  const auto a = mean_median({3.0, 1.0, 2.0});
  EXPECT_DOUBLE_EQ(a.mean, 2.0);
  EXPECT_DOUBLE_EQ(a.median, 2.0);
  const auto b = mean_median({4.0, 1.0, 2.0, 10.0});
  EXPECT_DOUBLE_EQ(b.median, 3.0);
}

// --- multi-surface ratio ---------------------------------------------------

namespace {

DepthFrame flat_frame(float z) {
  DepthFrame d;
  d.intrinsics = {20, 20, 11.5, 8.5, 24, 18};
  d.depth = Raster<float>(24, 18, z);
  return d;
}

std::vector<Vec3> wall(const DepthFrame& d, double z, int copies) {
  std::vector<Vec3> pts;
  for (int c = 0; c < copies; ++c) {
    for (int v = 0; v < d.height(); ++v) {
      for (int u = 0; u < d.width(); ++u) pts.push_back(unproject_pixel(u, v, z + 0.001 * c, d.intrinsics));
    }
  }
  return pts;
}

}  // namespace

TEST(MultiSurface, SingleSurfaceIsZero) {
  const DepthFrame d = flat_frame(2.0f);
  const auto pts = wall(d, 2.0, 2);
  const auto f = multi_surface_frame(pts, Pose::identity(), d, BinaryMask(24, 18), {});
  EXPECT_EQ(f.denominator, 24u * 18u);
  EXPECT_EQ(f.multi, 0u);
}

TEST(MultiSurface, DuplicateWallInFrontIsOne) {
  const DepthFrame d = flat_frame(2.0f);
  auto pts = wall(d, 2.0, 1);
  const auto ghost = wall(d, 1.8, 1);
  pts.insert(pts.end(), ghost.begin(), ghost.end());
  const auto f = multi_surface_frame(pts, Pose::identity(), d, BinaryMask(24, 18), {});
  EXPECT_EQ(f.denominator, 24u * 18u);
  EXPECT_EQ(f.multi, f.denominator);
}

TEST(MultiSurface, HiddenSurfaceAndDynamicPixelsExcluded) {
  const DepthFrame d = flat_frame(2.0f);
  auto pts = wall(d, 2.0, 1);
  const auto behind = wall(d, 2.5, 1);  // fails the visibility gate
  pts.insert(pts.end(), behind.begin(), behind.end());
  EXPECT_EQ(multi_surface_frame(pts, Pose::identity(), d, BinaryMask(24, 18), {}).denominator, 0u);
  BinaryMask m(24, 18);
  m.set(10, 10);
  const auto two = wall(d, 2.0, 2);
  const auto f = multi_surface_frame(two, Pose::identity(), d, m, {});
  EXPECT_EQ(f.denominator, 24u * 18u - 49u);  // 7x7 dilation
}

TEST(MultiSurface, LayerCount) {
  EXPECT_EQ(count_depth_layers({}, 0.05), 0);
  EXPECT_EQ(count_depth_layers({1.0, 1.01, 1.02}, 0.05), 1);
  EXPECT_EQ(count_depth_layers({1.0, 1.2, 1.01}, 0.05), 2);
}

// --- report ----------------------------------------------------------------

namespace {

MetricReport sample_report() {
  MetricReport r;
  r.variant = "masked";
  r.e_cen = {1e-3, 2e-3, 4e-3};
  r.e_cen_summary = mean_median(r.e_cen);
  r.b_all = 0.125;
  r.scale = ScaleStability{1.25, 1.0};
  ConditionedMetrics c;
  c.kind = EvalMaskKind::Footprint;
  c.b_static = 0.0625;
  c.d_all = 0.9;
  c.d_dyn = std::nullopt;
  c.d_static = 0.95;
  c.c_den = 0.3;
  c.c_occ = 0.2;
  c.c_od = 1.5;
  c.rho = 0.01;
  c.mask_coverage = 0.05;
  r.conditioned.push_back(c);
  return r;
}

}  // namespace

TEST(Report, JsonRoundTrip) {
  const MetricReport r = sample_report();
  const MetricReport back = metric_report_from_json(Json::parse(metric_report_to_json(r).dump()));
  EXPECT_EQ(back.variant, r.variant);
  EXPECT_EQ(back.e_cen, r.e_cen);
  EXPECT_EQ(back.b_all, r.b_all);
  ASSERT_EQ(back.conditioned.size(), 1u);
  EXPECT_EQ(back.conditioned[0].kind, EvalMaskKind::Footprint);
  EXPECT_FALSE(back.conditioned[0].d_dyn);
  EXPECT_EQ(back.conditioned[0].c_od, r.conditioned[0].c_od);
  EXPECT_EQ(metric_report_csv(back), metric_report_csv(r));
  EXPECT_THROW(metric_report_from_json(Json::object()), FormatError);
}

TEST(Report, CsvLayout) {
  const std::string csv = metric_report_csv(sample_report());
  const auto nl = csv.find('\n');
  EXPECT_EQ(csv.substr(0, nl), join_csv(metric_csv_columns()));
  const std::string row = csv.substr(nl + 1);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), static_cast<long>(metric_csv_columns().size() - 1));
  EXPECT_EQ(row.rfind("masked,fulltime,", 0), 0u);
}

#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <Eigen/Geometry>

#include "oracles.hpp"
#include "vg/ply.hpp"
#include "vg/pointcloud.hpp"

using namespace vg;

namespace {

std::vector<oracle::Vec3> raw(const PointCloud& c) {
  std::vector<oracle::Vec3> out;
  for (const auto& p : c.points) out.push_back({p.x(), p.y(), p.z()});
  return out;
}

PointCloud grid5() {
  PointCloud c;
  for (int x = 0; x < 5; ++x)
    for (int y = 0; y < 5; ++y)
      for (int z = 0; z < 5; ++z) c.points.emplace_back(x, y, z);
  return c;
}

PointCloud random_cloud(std::mt19937_64& rng, std::size_t n, double spread) {
  std::uniform_real_distribution<double> u(-spread, spread);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.emplace_back(u(rng), u(rng), u(rng));
  return c;
}

PointCloud blob(std::mt19937_64& rng, const Point3& at, std::size_t n, double sigma) {
  std::normal_distribution<double> g(0.0, sigma);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.push_back(at + Point3(g(rng), g(rng), g(rng)));
  return c;
}

}  // namespace

TEST(Centroid, SingleAndMidpoint) {
  PointCloud one;
  one.points.emplace_back(1, 2, 3);
  EXPECT_EQ(centroid(one), Point3(1, 2, 3));
  PointCloud two;
  two.points = {{0, 0, 0}, {2, 0, 0}};
  EXPECT_EQ(centroid(two), Point3(1, 0, 0));
}

TEST(Centroid, EmptyCloudIsAnError) {
  try {
    centroid(PointCloud{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptyCloud);
  }
}

TEST(Centroid, MatchesPairwiseSummationOracle) {
  std::mt19937_64 rng(1);
  const auto c = random_cloud(rng, 1000, 5.0);
  const auto expect = oracle::pairwise_mean(raw(c));
  const auto got = centroid(c);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(got[i], expect[i], 1e-9);
}

TEST(Centroid, TranslationEquivariant) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    auto c = random_cloud(rng, 200, 3.0);
    const Point3 shift(1.5 * t, -0.25 * t, 3.0);
    const auto before = centroid(c);
    for (auto& p : c.points) p += shift;
    EXPECT_TRUE((centroid(c) - (before + shift)).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST(Sor, UniformGridIsUnchanged) {
  const auto g = grid5();
  const auto out = statistical_outlier_removal(g, 4, 2.0);
  EXPECT_EQ(out.size(), g.size());
}

TEST(Sor, RemovesOnlyTheFarPoint) {
  auto g = grid5();
  g.points.emplace_back(12.0, 2.0, 2.0);  // 10 m beyond the grid
  const auto out = statistical_outlier_removal(g, 4, 2.0);
  ASSERT_EQ(out.size(), g.size() - 1);
  const auto kept = oracle::sor(raw(g), 4, 2.0);
  EXPECT_EQ(kept.size(), g.size() - 1);
  for (const auto& p : out.points) EXPECT_LT(p.x(), 5.0);
}

TEST(Sor, MatchesBruteForceAndPreservesOrder) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> n(30, 300), k(1, 12);
  for (int trial = 0; trial < 30; ++trial) {
    auto c = random_cloud(rng, n(rng), 2.0);
    c.append(blob(rng, {5, 5, 5}, 10, 0.5));
    const int kk = k(rng);
    const auto kept = oracle::sor(raw(c), kk, 1.0);
    const auto out = statistical_outlier_removal(c, kk, 1.0);
    ASSERT_EQ(out.size(), kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) EXPECT_EQ(out.points[i], c.points[kept[i]]);
  }
}

TEST(Sor, TooFewPoints) {
  PointCloud c;
  c.points = {{0, 0, 0}, {1, 0, 0}};
  try {
    statistical_outlier_removal(c, 2, 2.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::TooFewPoints);
  }
}

TEST(Sor, KeepsColorsAligned) {
  auto g = grid5();
  g.points.emplace_back(20, 20, 20);
  for (std::size_t i = 0; i < g.size(); ++i)
    g.colors.push_back({static_cast<std::uint8_t>(i), 0, 0});
  const auto out = statistical_outlier_removal(g, 4, 2.0);
  ASSERT_EQ(out.colors.size(), out.size());
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out.colors[i][0], i);
}

TEST(Dbscan, TwoSeparatedBlobs) {
  PointCloud c;
  for (int i = 0; i < 20; ++i) c.points.emplace_back(0.01 * (i % 5), 0.01 * (i / 5), 0);
  for (int i = 0; i < 20; ++i) c.points.emplace_back(1.0 + 0.01 * (i % 5), 0.01 * (i / 5), 0);
  const auto labels = dbscan(c, 0.1, 5);
  std::set<int> ids(labels.begin(), labels.end());
  EXPECT_EQ(ids, (std::set<int>{0, 1}));
  EXPECT_EQ(std::count(labels.begin(), labels.end(), -1), 0);
}

TEST(Dbscan, IsolatedPointIsNoise) {
  PointCloud c;
  c.points.emplace_back(0, 0, 0);
  EXPECT_EQ(dbscan(c, 0.1, 2), ClusterLabels{-1});
  EXPECT_EQ(dbscan(c, 0.1, 1), ClusterLabels{0});
}

TEST(Dbscan, MatchesRegionGrowingOracle) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> n(1, 200), mp(1, 8);
  std::uniform_real_distribution<double> eps(0.05, 0.6);
  for (int trial = 0; trial < 60; ++trial) {
    const auto c = random_cloud(rng, n(rng), 1.0);
    const double e = eps(rng);
    const int m = mp(rng);
    const auto expect = oracle::dbscan(raw(c), e, m);
    const auto got = dbscan(c, e, m);
    EXPECT_TRUE(oracle::same_partition(got, expect)) << "trial " << trial;
  }
}

TEST(Dbscan, LabelsAreContiguousAndInvariantUnderRigidMotionAndPermutation) {
  std::mt19937_64 rng(5);
  PointCloud c;
  c.append(blob(rng, {0, 0, 0}, 60, 0.05));
  c.append(blob(rng, {1, 0, 0}, 40, 0.05));
  c.append(random_cloud(rng, 10, 3.0));
  const auto base = dbscan(c, 0.12, 6);
  const int maxl = *std::max_element(base.begin(), base.end());
  for (int l = 0; l <= maxl; ++l) EXPECT_NE(std::find(base.begin(), base.end(), l), base.end());

  Eigen::Matrix3d r = Eigen::AngleAxisd(0.7, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
  PointCloud moved = c;
  for (auto& p : moved.points) p = r * p + Point3(4, -2, 9);
  // Distances change by rounding only; a 5% eps nudge keeps every decision.
  EXPECT_TRUE(oracle::same_partition(dbscan(moved, 0.12, 6), base) ||
              oracle::same_partition(dbscan(moved, 0.12 * 1.0000001, 6), base));

  std::vector<std::size_t> perm(c.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto shuffled = c.select(perm);
  const auto sl = dbscan(shuffled, 0.12, 6);
  // Core/noise membership and core connectivity do not depend on order;
  // compare the partition restricted to core-reachable structure.
  ClusterLabels unshuffled(c.size());
  for (std::size_t i = 0; i < perm.size(); ++i) unshuffled[perm[i]] = sl[i];
  EXPECT_TRUE(oracle::same_partition(unshuffled, base));
}

TEST(LargestCluster, PicksMostPopulousAndBreaksTiesBySmallestLabel) {
  PointCloud c;
  ClusterLabels l;
  for (int i = 0; i < 30; ++i) {
    c.points.emplace_back(i, 0, 0);
    l.push_back(1);
  }
  for (int i = 0; i < 5; ++i) {
    c.points.emplace_back(i, 1, 0);
    l.push_back(0);
  }
  EXPECT_EQ(largest_cluster(c, l).size(), 30u);

  PointCloud t;
  ClusterLabels tl;
  for (int i = 0; i < 20; ++i) {
    t.points.emplace_back(i, 0, 0);
    tl.push_back(i < 10 ? 1 : 0);
  }
  const auto pick = largest_cluster(t, tl);
  ASSERT_EQ(pick.size(), 10u);
  EXPECT_EQ(pick.points.front().x(), 10.0);
}

TEST(LargestCluster, AllNoise) {
  PointCloud c;
  c.points = {{0, 0, 0}, {1, 1, 1}};
  try {
    largest_cluster(c, {-1, -1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NoCluster);
  }
}

TEST(Aabb, UnitCubeCornersAndSinglePoint) {
  PointCloud c;
  for (int i = 0; i < 8; ++i) c.points.emplace_back(i & 1, (i >> 1) & 1, (i >> 2) & 1);
  const auto b = axis_aligned_bbox(c);
  EXPECT_EQ(b.center, Point3(0.5, 0.5, 0.5));
  EXPECT_EQ(b.extent, Eigen::Vector3d(1, 1, 1));
  PointCloud one;
  one.points.emplace_back(3, -2, 7);
  const auto s = axis_aligned_bbox(one);
  EXPECT_EQ(s.center, Point3(3, -2, 7));
  EXPECT_EQ(s.extent, Eigen::Vector3d::Zero());
  EXPECT_THROW(axis_aligned_bbox(PointCloud{}), Error);
}

TEST(Aabb, ContainsEveryPointAndIsTight) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 50; ++t) {
    const auto c = random_cloud(rng, 50, 4.0);
    const auto b = axis_aligned_bbox(c);
    for (const auto& p : c.points) EXPECT_TRUE(b.contains(p, 1e-12));
    // Every face touches a point.
    for (int a = 0; a < 3; ++a) {
      double lo = 1e9, hi = -1e9;
      for (const auto& p : c.points) {
        lo = std::min(lo, p[a]);
        hi = std::max(hi, p[a]);
      }
      EXPECT_NEAR(b.min()[a], lo, 1e-12);
      EXPECT_NEAR(b.max()[a], hi, 1e-12);
    }
  }
}

TEST(Aabb, SerializedLayout) {
  const Bbox3D b{{1.6515, 1.1065, 0.7770}, {0.4687, 0.6466, 0.2580}};
  EXPECT_EQ(format_bbox(b), "[1.6515, 1.1065, 0.7770, 0.4687, 0.6466, 0.2580]");
  EXPECT_EQ(Bbox3D::from_array(b.to_array()), b);
}

TEST(VoxelDownsample, AveragesPerCell) {
  PointCloud c;
  c.points = {{0.01, 0.01, 0.01}, {0.03, 0.01, 0.01}, {0.5, 0.5, 0.5}};
  const auto d = voxel_downsample(c, 0.1);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_NEAR(d.points[0].x(), 0.02, 1e-12);
  EXPECT_EQ(voxel_downsample(c, 0.0).size(), 3u);
}

TEST(CleanCloud, BoxWithUniformNoiseKeepsTheBox) {
  std::mt19937_64 rng(8);
  // Dense samples on the surface of a 0.6 x 0.4 x 0.5 box.
  const Point3 lo(1, 1, 0), hi(1.6, 1.4, 0.5);
  PointCloud c;
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 6000; ++i) {
    Point3 p(lo.x() + u(rng) * (hi.x() - lo.x()), lo.y() + u(rng) * (hi.y() - lo.y()),
             lo.z() + u(rng) * (hi.z() - lo.z()));
    const int face = i % 6;
    p[face / 2] = face % 2 ? hi[face / 2] : lo[face / 2];
    c.points.push_back(p);
  }
  for (int i = 0; i < 300; ++i) c.points.emplace_back(4 * u(rng) - 1, 4 * u(rng) - 1, 3 * u(rng));
  const auto clean = clean_cloud(c, SorConfig{}, DbscanConfig{0.05, 10});
  const auto b = axis_aligned_bbox(clean);
  const Bbox3D gt = Bbox3D::from_min_max(lo, hi);
  const Point3 ilo = b.min().cwiseMax(gt.min()), ihi = b.max().cwiseMin(gt.max());
  const Eigen::Vector3d ie = (ihi - ilo).cwiseMax(0.0);
  const double inter = ie.prod();
  const double iou = inter / (b.volume() + gt.volume() - inter);
  EXPECT_GE(iou, 0.9);
}

// ---- PLY -------------------------------------------------------------------

TEST(Ply, EmptyCloudRoundTrips) {
  for (auto enc : {PlyEncoding::Ascii, PlyEncoding::BinaryLittleEndian}) {
    std::stringstream ss;
    write_ply(ss, PointCloud{}, enc);
    EXPECT_TRUE(read_ply(ss).empty());
  }
}

TEST(Ply, ColoredCloudRoundTrips) {
  PointCloud c;
  c.points = {{0.1, 0.2, 0.3}, {-1.5, 2.25, 1e-3}, {100.125, -7.0, 3.5}};
  c.colors = {{255, 0, 0}, {0, 255, 0}, {1, 2, 3}};
  for (auto enc : {PlyEncoding::Ascii, PlyEncoding::BinaryLittleEndian}) {
    std::stringstream ss;
    write_ply(ss, c, enc);
    const auto back = read_ply(ss);
    ASSERT_EQ(back.size(), 3u);
    EXPECT_EQ(back.colors, c.colors);
    for (std::size_t i = 0; i < 3; ++i)
      for (int a = 0; a < 3; ++a) EXPECT_EQ(back.points[i][a], static_cast<float>(c.points[i][a]));
  }
}

TEST(Ply, AsciiAndBinaryDecodeIdentically) {
  std::mt19937_64 rng(9);
  const auto c = random_cloud(rng, 500, 10.0);
  std::stringstream a, b;
  write_ply(a, c, PlyEncoding::Ascii);
  write_ply(b, c, PlyEncoding::BinaryLittleEndian);
  const auto ca = read_ply(a), cb = read_ply(b);
  ASSERT_EQ(ca.size(), cb.size());
  for (std::size_t i = 0; i < ca.size(); ++i) EXPECT_EQ(ca.points[i], cb.points[i]);
}

TEST(Ply, ReadsDoublePropertiesAndExtraElements) {
  std::stringstream ss;
  ss << "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\n"
        "property double x\nproperty double y\nproperty double z\nproperty float nx\n"
        "element face 0\nproperty list uchar int vertex_indices\nend_header\n"
        "1 2 3 0\n4 5 6 0\n";
  const auto c = read_ply(ss);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c.points[1], Point3(4, 5, 6));
  EXPECT_FALSE(c.has_colors());
}

TEST(Ply, MalformedInputs) {
  for (const char* text : {"", "plx\n", "ply\nformat binary_big_endian 1.0\nend_header\n",
                           "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
                           "property float z\nend_header\n1 2 3\n",
                           "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n",
                           "ply\nelement vertex 0\n"}) {
    std::stringstream ss(text);
    try {
      read_ply(ss);
      ADD_FAILURE() << "accepted: " << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::MalformedPly) << text;
    }
  }
  try {
    read_ply(std::filesystem::path("/nonexistent/dir/x.ply"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::IoFailure);
  }
}

TEST(Ply, FileRoundTrip) {
  std::mt19937_64 rng(10);
  auto c = random_cloud(rng, 64, 1.0);
  for (std::size_t i = 0; i < c.size(); ++i) c.colors.push_back({7, 8, static_cast<std::uint8_t>(i)});
  const auto path = std::filesystem::temp_directory_path() / "vg_test_roundtrip.ply";
  write_ply(path, c);
  const auto back = read_ply(path);
  std::filesystem::remove(path);
  ASSERT_EQ(back.size(), c.size());
  EXPECT_EQ(back.colors, c.colors);
}

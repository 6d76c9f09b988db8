#include "dipv/invariants.hpp"

#include <gtest/gtest.h>

#include <numeric>
#include <vector>

#include "gradcheck.hpp"

using namespace dipv;

namespace {

PointCloud random_cloud(std::size_t n, Rng& rng) {
  PointCloud cloud;
  cloud.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    cloud.points.push_back({rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)});
  return cloud;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace

TEST(LocalDotProducts, HandComputedPair) {
  PointCloud cloud;
  cloud.points = {{1, 0, 0}, {0, 1, 0}};
  const KnnGraph graph = build_knn(cloud, 1);

  const LocalInvariantTensor rel = local_dot_products(cloud, graph, true);
  EXPECT_DOUBLE_EQ(rel.at(0, 0, 0), -1.0);  // <(1,0,0), (0,1,0)-(1,0,0)>

  const LocalInvariantTensor plain = local_dot_products(cloud, graph, false);
  EXPECT_DOUBLE_EQ(plain.at(0, 0, 0), 0.0);  // orthogonal vectors
}

TEST(LocalDotProducts, InvariantUnderRotation) {
  Rng rng(RngSeed{101});
  for (int trial = 0; trial < 25; ++trial) {
    const PointCloud cloud = center_and_scale(random_cloud(64, rng));
    const KnnGraph graph = build_knn(cloud, 8);
    const LocalInvariantTensor base = local_dot_products(cloud, graph, true);

    const PointCloud rotated = apply_rotation(cloud, random_rotation_so3(rng));
    const KnnGraph graph_rot = build_knn(rotated, 8);
    ASSERT_EQ(graph.neighbor_indices, graph_rot.neighbor_indices);
    const LocalInvariantTensor after = local_dot_products(rotated, graph_rot, true);
    EXPECT_LT(max_abs_diff(base.values, after.values), 1e-9);
  }
}

TEST(LocalDotProducts, RelativeEqualsPlainMinusSquaredNorm) {
  Rng rng(RngSeed{202});
  const PointCloud cloud = random_cloud(40, rng);
  const KnnGraph graph = build_knn(cloud, 6);
  const LocalInvariantTensor rel = local_dot_products(cloud, graph, true);
  const LocalInvariantTensor plain = local_dot_products(cloud, graph, false);
  for (std::size_t j = 0; j < 40; ++j) {
    const double self = dot(cloud.points[j], cloud.points[j]);
    for (std::size_t k = 0; k < 6; ++k)
      EXPECT_NEAR(rel.at(j, 0, k), plain.at(j, 0, k) - self, 1e-12);
  }
}

TEST(LocalDotProducts, PermutingPointsPermutesRows) {
  Rng rng(RngSeed{303});
  const PointCloud cloud = random_cloud(32, rng);
  std::vector<std::size_t> perm(32);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = 32; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);

  PointCloud shuffled;
  shuffled.points.resize(32);
  for (std::size_t i = 0; i < 32; ++i) shuffled.points[i] = cloud.points[perm[i]];

  const LocalInvariantTensor base = local_dot_products(cloud, build_knn(cloud, 5), true);
  const LocalInvariantTensor after = local_dot_products(shuffled, build_knn(shuffled, 5), true);
  for (std::size_t i = 0; i < 32; ++i)
    for (std::size_t k = 0; k < 5; ++k)
      EXPECT_DOUBLE_EQ(after.at(i, 0, k), base.at(perm[i], 0, k));
}

TEST(LocalDotProducts, MultiChannelShapesAndInvariance) {
  Rng rng(RngSeed{404});
  PointCloud cloud = random_cloud(24, rng);
  cloud.channel_count = 2;
  for (std::size_t i = 0; i < 24 * 2; ++i)
    cloud.channels.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});

  const KnnGraph graph = build_knn(cloud, 4);
  const LocalInvariantTensor inv = local_dot_products(cloud, graph, true);
  EXPECT_EQ(inv.n, 24u);
  EXPECT_EQ(inv.c, 2u);
  EXPECT_EQ(inv.k, 4u);

  const PointCloud rotated = apply_rotation(cloud, random_rotation_so3(rng));
  const LocalInvariantTensor after = local_dot_products(rotated, build_knn(rotated, 4), true);
  EXPECT_LT(max_abs_diff(inv.values, after.values), 1e-9);
}

TEST(LocalDotProducts, GraphMismatchRejected) {
  Rng rng(RngSeed{505});
  const PointCloud cloud = random_cloud(10, rng);
  const PointCloud other = random_cloud(12, rng);
  const KnnGraph graph = build_knn(other, 3);
  EXPECT_THROW(local_dot_products(cloud, graph, true), InvalidInput);
}

TEST(AggregateDlp, ConstantRowsCollapseToZeros) {
  LocalInvariantTensor inv;
  inv.n = 3;
  inv.c = 1;
  inv.k = 4;
  inv.values.assign(12, 2.5);  // constant per row
  AggregationConfig cfg;
  cfg.mode = AggregationMode::kDlp;
  cfg.output_dim = 4;
  const Tensor2 out = aggregate_dlp(inv, Tensor2::identity(4), cfg);
  for (double v : out.data()) EXPECT_NEAR(v, 0.0, 1e-9);
}

TEST(AggregateDlp, ZeroWeightsGiveZeros) {
  LocalInvariantTensor inv;
  inv.n = 2;
  inv.c = 1;
  inv.k = 3;
  inv.values = {1, 2, 3, 4, 5, 6};
  AggregationConfig cfg;
  cfg.mode = AggregationMode::kDlp;
  cfg.output_dim = 5;
  const Tensor2 out = aggregate_dlp(inv, Tensor2(3, 5), cfg);
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(AggregateDlp, MatchesLoopOracle) {
  Rng rng(RngSeed{606});
  LocalInvariantTensor inv;
  inv.n = 7;
  inv.c = 2;
  inv.k = 5;
  inv.values.resize(70);
  for (double& v : inv.values) v = rng.uniform(-2, 2);
  AggregationConfig cfg;
  cfg.mode = AggregationMode::kDlp;
  cfg.output_dim = 6;
  const Tensor2 w = gradcheck::random_tensor(10, 6, rng);
  const Tensor2 out = aggregate_dlp(inv, w, cfg);

  for (std::size_t j = 0; j < inv.n; ++j) {
    // scalar reference: explicit flatten, matmul and layernorm
    std::vector<double> mapped(cfg.output_dim, 0.0);
    for (std::size_t col = 0; col < cfg.output_dim; ++col)
      for (std::size_t i = 0; i < inv.c; ++i)
        for (std::size_t k = 0; k < inv.k; ++k)
          mapped[col] += inv.at(j, i, k) * w(i * inv.k + k, col);
    double mean = 0.0;
    for (double v : mapped) mean += v;
    mean /= static_cast<double>(cfg.output_dim);
    double var = 0.0;
    for (double v : mapped) var += (v - mean) * (v - mean);
    var /= static_cast<double>(cfg.output_dim);
    const double inv_std = 1.0 / std::sqrt(var + cfg.layernorm_epsilon);
    for (std::size_t col = 0; col < cfg.output_dim; ++col)
      EXPECT_NEAR(out(j, col), (mapped[col] - mean) * inv_std, 1e-12);
  }
}

TEST(AggregateSap, ConstantNeighborsGiveXZeroX) {
  LocalInvariantTensor inv;
  inv.n = 1;
  inv.c = 1;
  inv.k = 5;
  inv.values.assign(5, 3.25);
  const Tensor2 stats = sap_statistics(inv);
  EXPECT_DOUBLE_EQ(stats(0, 0), 3.25);  // max
  EXPECT_DOUBLE_EQ(stats(0, 1), 0.0);   // variance
  EXPECT_DOUBLE_EQ(stats(0, 2), 3.25);  // mean
}

TEST(AggregateSap, TwoValueStatistics) {
  LocalInvariantTensor inv;
  inv.n = 1;
  inv.c = 1;
  inv.k = 2;
  inv.values = {1.0, 3.0};
  const Tensor2 stats = sap_statistics(inv);
  EXPECT_DOUBLE_EQ(stats(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(stats(0, 1), 1.0);  // population variance
  EXPECT_DOUBLE_EQ(stats(0, 2), 2.0);
}

TEST(AggregateSap, SingleNeighborVarianceIsZero) {
  LocalInvariantTensor inv;
  inv.n = 2;
  inv.c = 1;
  inv.k = 1;
  inv.values = {4.0, -1.0};
  const Tensor2 stats = sap_statistics(inv);
  EXPECT_DOUBLE_EQ(stats(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(stats(1, 1), 0.0);
}

TEST(AggregateSap, MatchesLoopOracleAndIgnoresSeedInEval) {
  Rng rng(RngSeed{707});
  LocalInvariantTensor inv;
  inv.n = 6;
  inv.c = 3;
  inv.k = 7;
  inv.values.resize(6 * 3 * 7);
  for (double& v : inv.values) v = rng.uniform(-5, 5);
  AggregationConfig cfg;
  cfg.mode = AggregationMode::kSap;
  cfg.output_dim = 4;
  const Tensor2 w = gradcheck::random_tensor(9, 4, rng);

  const Tensor2 out = aggregate_sap(inv, w, cfg, false, RngSeed{1});
  const Tensor2 out2 = aggregate_sap(inv, w, cfg, false, RngSeed{999});
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out.data()[i], out2.data()[i]);

  for (std::size_t j = 0; j < inv.n; ++j) {
    std::vector<double> row(3 * inv.c);
    for (std::size_t i = 0; i < inv.c; ++i) {
      double mx = inv.at(j, i, 0), mean = 0.0;
      for (std::size_t k = 0; k < inv.k; ++k) {
        mx = std::max(mx, inv.at(j, i, k));
        mean += inv.at(j, i, k);
      }
      mean /= static_cast<double>(inv.k);
      double var = 0.0;
      for (std::size_t k = 0; k < inv.k; ++k) {
        const double d = inv.at(j, i, k) - mean;
        var += d * d;
      }
      var /= static_cast<double>(inv.k);
      row[i] = mx;
      row[inv.c + i] = var;
      row[2 * inv.c + i] = mean;
    }
    for (std::size_t col = 0; col < cfg.output_dim; ++col) {
      double expect = 0.0;
      for (std::size_t r = 0; r < row.size(); ++r) expect += row[r] * w(r, col);
      EXPECT_NEAR(out(j, col), expect, 1e-12);
    }
  }
}

TEST(L2dpForward, IdentityFfnWithIdentityWeightsIsLayernormedInvariants) {
  Rng rng(RngSeed{808});
  const PointCloud cloud = center_and_scale(random_cloud(20, rng));
  const KnnGraph graph = build_knn(cloud, 6);

  ParameterSet params;
  params.add("agg.w", Tensor2::identity(6));
  AggregationConfig cfg;
  cfg.mode = AggregationMode::kDlp;
  cfg.output_dim = 6;

  const Tensor2 out = l2dp_forward(cloud, graph, params, cfg);
  const Tensor2 expected =
      layernorm_rows(local_dot_products(cloud, graph, true).as_tensor(), cfg.layernorm_epsilon);
  for (std::size_t i = 0; i < out.size(); ++i)
    EXPECT_DOUBLE_EQ(out.data()[i], expected.data()[i]);
}

TEST(L2dpForward, InvariantUnderRotation) {
  Rng rng(RngSeed{909});
  const PointCloud cloud = center_and_scale(random_cloud(48, rng));
  ParameterSet params;
  params.add("ffn.w", gradcheck::random_tensor(8, 8, rng));
  params.add("ffn.b", gradcheck::random_tensor(1, 8, rng));
  params.add("agg.w", gradcheck::random_tensor(8, 16, rng));
  AggregationConfig cfg;
  cfg.mode = AggregationMode::kDlp;
  cfg.output_dim = 16;

  const Tensor2 base = l2dp_forward(cloud, build_knn(cloud, 8), params, cfg);
  for (int trial = 0; trial < 10; ++trial) {
    const PointCloud rotated = apply_rotation(cloud, random_rotation_so3(rng));
    const Tensor2 after = l2dp_forward(rotated, build_knn(rotated, 8), params, cfg);
    for (std::size_t i = 0; i < base.size(); ++i)
      EXPECT_NEAR(base.data()[i], after.data()[i], 1e-7);
  }
}

TEST(L2dpForward, ToyCloudMatchesScalarOracle) {
  PointCloud cloud;
  cloud.points = {{0.3, -0.1, 0.2}, {-0.4, 0.5, 0.0}, {0.1, 0.1, -0.6}, {-0.2, -0.3, 0.4}};
  const std::size_t k = 2, d = 3;
  const KnnGraph graph = build_knn(cloud, k);

  Rng rng(RngSeed{1010});
  ParameterSet params;
  params.add("ffn.w", gradcheck::random_tensor(k, k, rng));
  params.add("ffn.b", gradcheck::random_tensor(1, k, rng));
  params.add("agg.w", gradcheck::random_tensor(k, d, rng));
  AggregationConfig cfg;
  cfg.mode = AggregationMode::kDlp;
  cfg.output_dim = d;

  const Tensor2 out = l2dp_forward(cloud, graph, params, cfg);

  // independent scalar pipeline, loops only
  const Tensor2& w = params.value("ffn.w");
  const Tensor2& b = params.value("ffn.b");
  const Tensor2& agg = params.value("agg.w");
  for (std::size_t j = 0; j < cloud.size(); ++j) {
    std::vector<double> dots(k), mapped(k), projected(d, 0.0);
    for (std::size_t kk = 0; kk < k; ++kk) {
      const Vec3 g = cloud.points[graph.neighbor(j, kk)];
      const Vec3 v = cloud.points[j];
      dots[kk] = v.x * (g.x - v.x) + v.y * (g.y - v.y) + v.z * (g.z - v.z);
    }
    for (std::size_t col = 0; col < k; ++col) {
      double s = b(0, col);
      for (std::size_t kk = 0; kk < k; ++kk) s += dots[kk] * w(kk, col);
      mapped[col] = s >= 0.0 ? s : 0.01 * s;
    }
    for (std::size_t col = 0; col < d; ++col)
      for (std::size_t kk = 0; kk < k; ++kk) projected[col] += mapped[kk] * agg(kk, col);
    double mean = 0.0;
    for (double v : projected) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : projected) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv_std = 1.0 / std::sqrt(var + cfg.layernorm_epsilon);
    for (std::size_t col = 0; col < d; ++col)
      EXPECT_NEAR(out(j, col), (projected[col] - mean) * inv_std, 1e-10);
  }
}

TEST(L2dpForward, DlpAndSapShareOutputShape) {
  Rng rng(RngSeed{1111});
  const PointCloud cloud = center_and_scale(random_cloud(30, rng));
  const KnnGraph graph = build_knn(cloud, 5);

  ParameterSet dlp_params;
  dlp_params.add("agg.w", gradcheck::random_tensor(5, 12, rng));
  AggregationConfig dlp_cfg;
  dlp_cfg.mode = AggregationMode::kDlp;
  dlp_cfg.output_dim = 12;

  ParameterSet sap_params;
  sap_params.add("agg.w", gradcheck::random_tensor(3, 12, rng));
  AggregationConfig sap_cfg;
  sap_cfg.mode = AggregationMode::kSap;
  sap_cfg.output_dim = 12;

  const Tensor2 a = l2dp_forward(cloud, graph, dlp_params, dlp_cfg);
  const Tensor2 b = l2dp_forward(cloud, graph, sap_params, sap_cfg);
  EXPECT_EQ(a.rows(), b.rows());
  EXPECT_EQ(a.cols(), b.cols());
}

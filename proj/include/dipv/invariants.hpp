// Local dot-product invariants: per-channel products between a center
// point and its neighbor offsets, an optional learned map along the
// neighbor axis, and the DLP / SAP aggregations into point-level rows.
#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "dipv/geometry.hpp"
#include "dipv/nn.hpp"
#include "dipv/tensor.hpp"

namespace dipv {

// N x c x K values; entry(j, i, k) pairs center channel i of point j with
// its k-th neighbor.
struct LocalInvariantTensor {
  std::vector<double> values;
  std::size_t n = 0, c = 0, k = 0;
  bool relative = false;

  double& at(std::size_t j, std::size_t i, std::size_t kk) {
    return values[(j * c + i) * k + kk];
  }
  double at(std::size_t j, std::size_t i, std::size_t kk) const {
    return values[(j * c + i) * k + kk];
  }

  // point-major view with c*K columns, channel-major within a row
  Tensor2 as_tensor() const { return Tensor2(n, c * k, values); }
};

enum class AggregationMode { kDlp, kSap };

struct AggregationConfig {
  AggregationMode mode = AggregationMode::kDlp;
  std::size_t output_dim = 64;
  double dropout_rate = 0.2;
  double layernorm_epsilon = 1e-5;
};

// relative=true computes <v_j, g_jk - v_j>, i.e. the plain product minus
// the center's squared norm per channel; relative=false keeps <v_j, g_jk>.
inline LocalInvariantTensor local_dot_products(const PointCloud& cloud, const KnnGraph& graph,
                                               bool relative) {
  cloud.validate();
  const std::size_t n = cloud.size();
  if (graph.size() != n) throw InvalidInput("local_dot_products: graph size != cloud size");
  const std::size_t c = cloud.effective_channels();
  const std::size_t k = graph.k;

  LocalInvariantTensor inv;
  inv.n = n;
  inv.c = c;
  inv.k = k;
  inv.relative = relative;
  inv.values.resize(n * c * k);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < c; ++i) {
      const Vec3 center = cloud.channel_or_point(j, i);
      const double self = relative ? dot(center, center) : 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const Vec3 nb = cloud.channel_or_point(graph.neighbor(j, kk), i);
        inv.at(j, i, kk) = dot(center, nb) - self;
      }
    }
  }
  return inv;
}

// DLP: flatten the c x K row, apply the linear map, layer-normalize.
inline Tensor2 aggregate_dlp(const LocalInvariantTensor& inv, const Tensor2& weights,
                             const AggregationConfig& cfg) {
  if (cfg.mode != AggregationMode::kDlp) throw InvalidInput("aggregate_dlp: config mode is not DLP");
  if (weights.rows() != inv.c * inv.k || weights.cols() != cfg.output_dim)
    throw InvalidInput("aggregate_dlp: weights must be (c*K) x output_dim");
  Tensor2 mapped = matmul(inv.as_tensor(), weights);
  return layernorm_rows(mapped, cfg.layernorm_epsilon);
}

// per-(point, channel) max / population variance / mean over the K axis,
// concatenated block-wise to a 3c row
inline Tensor2 sap_statistics(const LocalInvariantTensor& inv) {
  Tensor2 stats(inv.n, 3 * inv.c);
  const double dk = static_cast<double>(inv.k);
  for (std::size_t j = 0; j < inv.n; ++j) {
    for (std::size_t i = 0; i < inv.c; ++i) {
      double mx = inv.at(j, i, 0);
      double mean = 0.0;
      for (std::size_t kk = 0; kk < inv.k; ++kk) {
        const double v = inv.at(j, i, kk);
        mx = std::max(mx, v);
        mean += v;
      }
      mean /= dk;
      double var = 0.0;
      for (std::size_t kk = 0; kk < inv.k; ++kk) {
        const double d = inv.at(j, i, kk) - mean;
        var += d * d;
      }
      var /= dk;
      stats(j, i) = mx;
      stats(j, inv.c + i) = var;
      stats(j, 2 * inv.c + i) = mean;
    }
  }
  return stats;
}

// SAP: statistics pooling, linear map, dropout in training only.
inline Tensor2 aggregate_sap(const LocalInvariantTensor& inv, const Tensor2& weights,
                             const AggregationConfig& cfg, bool train_mode, RngSeed seed) {
  if (cfg.mode != AggregationMode::kSap) throw InvalidInput("aggregate_sap: config mode is not SAP");
  if (weights.rows() != 3 * inv.c || weights.cols() != cfg.output_dim)
    throw InvalidInput("aggregate_sap: weights must be (3c) x output_dim");
  Tensor2 mapped = matmul(sap_statistics(inv), weights);
  Rng rng(seed);
  return dropout_forward(mapped, train_mode, cfg.dropout_rate, rng);
}

// Learned map along the neighbor axis, shared across points and channels.
// Parameter names: "ffn.w" (K x K), "ffn.b" (1 x K); an empty set is the
// identity map. Shapes stay N x c x K so either aggregation can follow.
inline LocalInvariantTensor apply_neighbor_ffn(const LocalInvariantTensor& inv,
                                               const ParameterSet& ffn_params,
                                               double leaky_slope = 0.01) {
  if (!ffn_params.has("ffn.w")) return inv;
  const Tensor2& w = ffn_params.value("ffn.w");
  const Tensor2& b = ffn_params.value("ffn.b");
  if (w.rows() != inv.k || w.cols() != inv.k)
    throw InvalidInput("neighbor FFN weights must be K x K");
  Tensor2 rows(inv.n * inv.c, inv.k, inv.values);
  Tensor2 mapped = leaky_relu_forward(affine_forward(rows, w, b), leaky_slope);
  LocalInvariantTensor out = inv;
  out.values = std::move(mapped.data());
  return out;
}

// Full operator: relative dot products, neighbor-axis FFN, then the
// configured aggregation. `agg_weights` lives in params under "agg.w".
inline Tensor2 l2dp_forward(const PointCloud& cloud, const KnnGraph& graph,
                            const ParameterSet& ffn_params, const AggregationConfig& cfg,
                            bool train_mode = false, RngSeed seed = RngSeed{0}) {
  LocalInvariantTensor inv = local_dot_products(cloud, graph, /*relative=*/true);
  LocalInvariantTensor mapped = apply_neighbor_ffn(inv, ffn_params);
  const Tensor2& agg_w = ffn_params.value("agg.w");
  if (cfg.mode == AggregationMode::kDlp) return aggregate_dlp(mapped, agg_w, cfg);
  return aggregate_sap(mapped, agg_w, cfg, train_mode, seed);
}

}  // namespace dipv

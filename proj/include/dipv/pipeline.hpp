// Desk-scale experiment harness: synthetic shape dataset, protocol
// augmentation, the invariant classification head (local dot-product
// queries fused with spectrum tokens), momentum-SGD training, protocol
// evaluation and a training-free nearest-profile baseline.
#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "dipv/geometry.hpp"
#include "dipv/invariants.hpp"
#include "dipv/nn.hpp"
#include "dipv/spectrum.hpp"

namespace dipv {

// ---------------------------------------------------------------------------
// dataset

constexpr std::size_t kNumShapeClasses = 6;

inline const char* shape_class_name(std::size_t label) {
  static const char* names[kNumShapeClasses] = {"sphere", "cube",  "cylinder",
                                                "cone",   "torus", "plane"};
  return names[label];
}

struct ShapeSample {
  PointCloud cloud;
  std::size_t label = 0;
};

enum class Protocol { kZZ, kZSO3, kSO3SO3 };
enum class FusionMode { kCrossAttention, kGate, kConcat, kDasftOnly };
enum class RotationKind { kNone, kZ, kSO3 };

inline RotationKind train_rotation(Protocol p) {
  return p == Protocol::kSO3SO3 ? RotationKind::kSO3 : RotationKind::kZ;
}

inline RotationKind test_rotation(Protocol p) {
  return p == Protocol::kZZ ? RotationKind::kZ : RotationKind::kSO3;
}

struct ExperimentConfig {
  Protocol protocol = Protocol::kZSO3;
  AggregationMode aggregation = AggregationMode::kDlp;
  FusionMode fusion = FusionMode::kCrossAttention;
  std::size_t k_neighbors = 0;  // 0 = pick by aggregation (12 DLP, 20 SAP)
  std::size_t n_dir = 36;
  double f_min = 0.0;
  double f_max = 12.0;
  std::size_t m_freq = 32;
  GridMode grid = GridMode::kLinear;
  std::size_t chunk_size = 16;

  std::size_t n_train_per_class = 200;
  std::size_t n_test_per_class = 100;
  std::size_t points_per_cloud = 512;
  double noise_sigma = 0.02;

  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;

  std::size_t feature_dim = 64;
  std::size_t hidden_dim = 64;
  double lr_start = 0.1;
  double lr_end = 0.001;
  double momentum = 0.9;
  double label_smoothing = 0.1;
  double dropout_rate = 0.2;
  double layernorm_epsilon = 1e-5;
  double leaky_slope = 0.01;

  std::size_t resolved_k() const {
    if (k_neighbors > 0) return k_neighbors;
    return aggregation == AggregationMode::kDlp ? 12 : 20;
  }

  AggregationConfig aggregation_config() const {
    return {aggregation, feature_dim, dropout_rate, layernorm_epsilon};
  }

  void validate() const {
    if (n_dir < 1 || m_freq < 1 || points_per_cloud < 2 || n_train_per_class < 1 ||
        n_test_per_class < 1 || batch_size < 1 || feature_dim < 1 || hidden_dim < 1)
      throw InvalidInput("experiment config: counts must be positive");
    if (resolved_k() >= points_per_cloud)
      throw InvalidInput("experiment config: k_neighbors must be below points_per_cloud");
    if (noise_sigma < 0.0) throw InvalidInput("experiment config: noise_sigma must be >= 0");
    if (f_min < 0.0 || f_min >= f_max)
      throw InvalidInput("experiment config: need 0 <= f_min < f_max");
  }
};

struct Metrics {
  double overall_accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

namespace detail {

inline Vec3 unit_gaussian_dir(Rng& rng) {
  Vec3 v;
  double n = 0.0;
  do {
    v = {rng.gaussian(), rng.gaussian(), rng.gaussian()};
    n = norm(v);
  } while (n < 1e-9);
  return v * (1.0 / n);
}

inline Vec3 sample_shape_point(std::size_t label, Rng& rng) {
  switch (label) {
    case 0:  // sphere, radius 1
      return unit_gaussian_dir(rng);
    case 1: {  // cube surface, side 2
      const std::size_t face = rng.index(6);
      const double u = rng.uniform(-1.0, 1.0);
      const double v = rng.uniform(-1.0, 1.0);
      const double s = (face % 2 == 0) ? 1.0 : -1.0;
      if (face / 2 == 0) return {s, u, v};
      if (face / 2 == 1) return {u, s, v};
      return {u, v, s};
    }
    case 2: {  // cylinder, radius 1, height 2, with caps
      // lateral area 4*pi vs cap area 2*pi
      if (rng.uniform() < 2.0 / 3.0) {
        const double a = rng.uniform(0.0, 2.0 * kPi);
        return {std::cos(a), std::sin(a), rng.uniform(-1.0, 1.0)};
      }
      const double rho = std::sqrt(rng.uniform());
      const double a = rng.uniform(0.0, 2.0 * kPi);
      const double z = rng.uniform() < 0.5 ? 1.0 : -1.0;
      return {rho * std::cos(a), rho * std::sin(a), z};
    }
    case 3: {  // cone, base radius 1 at z=-1, apex at z=+1
      const double slant = std::sqrt(5.0);
      const double lateral_prob = slant / (slant + 1.0);  // area pi*r*l vs pi*r^2
      if (rng.uniform() < lateral_prob) {
        const double s = std::sqrt(rng.uniform());  // area-uniform along the slant
        const double a = rng.uniform(0.0, 2.0 * kPi);
        return {s * std::cos(a), s * std::sin(a), 1.0 - 2.0 * s};
      }
      const double rho = std::sqrt(rng.uniform());
      const double a = rng.uniform(0.0, 2.0 * kPi);
      return {rho * std::cos(a), rho * std::sin(a), -1.0};
    }
    case 4: {  // torus, ring radius 1, tube radius 0.4
      const double tube = 0.4;
      double u = 0.0;
      // density over the tube angle is proportional to 1 + tube*cos(u)
      do {
        u = rng.uniform(0.0, 2.0 * kPi);
      } while (rng.uniform() * (1.0 + tube) > 1.0 + tube * std::cos(u));
      const double v = rng.uniform(0.0, 2.0 * kPi);
      const double ring = 1.0 + tube * std::cos(u);
      return {ring * std::cos(v), ring * std::sin(v), tube * std::sin(u)};
    }
    default:  // plane patch, side 2
      return {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), 0.0};
  }
}

}  // namespace detail

inline ShapeSample generate_sample(std::size_t label, std::size_t points, double noise_sigma,
                                   Rng& rng) {
  if (label >= kNumShapeClasses) throw InvalidInput("generate_sample: label out of range");
  PointCloud cloud;
  cloud.points.reserve(points);
  for (std::size_t i = 0; i < points; ++i) {
    Vec3 p = detail::sample_shape_point(label, rng);
    if (noise_sigma > 0.0)
      p += Vec3{rng.gaussian() * noise_sigma, rng.gaussian() * noise_sigma,
                rng.gaussian() * noise_sigma};
    cloud.points.push_back(p);
  }
  return {center_and_scale(cloud), label};
}

inline std::vector<ShapeSample> generate_dataset(std::size_t n_per_class,
                                                 std::size_t points_per_cloud, double noise_sigma,
                                                 RngSeed seed) {
  if (n_per_class < 1 || points_per_cloud < 1)
    throw InvalidInput("generate_dataset: counts must be positive");
  if (noise_sigma < 0.0) throw InvalidInput("generate_dataset: noise_sigma must be >= 0");
  std::vector<ShapeSample> out;
  out.reserve(n_per_class * kNumShapeClasses);
  Rng rng(seed);
  for (std::size_t label = 0; label < kNumShapeClasses; ++label)
    for (std::size_t s = 0; s < n_per_class; ++s)
      out.push_back(generate_sample(label, points_per_cloud, noise_sigma, rng));
  return out;
}

// Per-axis translation in [-0.2, 0.2], isotropic scale in [2/3, 3/2], the
// protocol rotation, then re-normalization. Centering absorbs the
// translation and unit-scaling the isotropic factor, so the net geometric
// effect is the rotation alone.
inline ShapeSample augment(const ShapeSample& sample, RotationKind rotation, Rng& rng) {
  const double tx = rng.uniform(-0.2, 0.2);
  const double ty = rng.uniform(-0.2, 0.2);
  const double tz = rng.uniform(-0.2, 0.2);
  const double scale = rng.uniform(2.0 / 3.0, 1.5);
  Rotation rot;
  if (rotation == RotationKind::kZ) rot = random_rotation_z(rng);
  if (rotation == RotationKind::kSO3) rot = random_rotation_so3(rng);

  ShapeSample out = sample;
  for (Vec3& p : out.cloud.points) p = rot.apply(p * scale + Vec3{tx, ty, tz});
  out.cloud = center_and_scale(out.cloud);
  return out;
}

inline ShapeSample rotate_sample(const ShapeSample& sample, RotationKind rotation, Rng& rng) {
  if (rotation == RotationKind::kNone) return sample;
  const Rotation rot =
      rotation == RotationKind::kZ ? random_rotation_z(rng) : random_rotation_so3(rng);
  ShapeSample out = sample;
  out.cloud = apply_rotation(sample.cloud, rot);
  return out;
}

// ---------------------------------------------------------------------------
// classification head

// Parameter-free features of one sample; everything learnable consumes
// these.
struct SampleFeatures {
  Tensor2 inv_rows;    // N x K relative dot products (single channel)
  DasftInputs global;  // spectrum columns and profiles
};

inline SampleFeatures compute_features(const PointCloud& cloud, const ExperimentConfig& cfg) {
  SampleFeatures f;
  const KnnGraph graph = build_knn(cloud, cfg.resolved_k());
  f.inv_rows = local_dot_products(cloud, graph, /*relative=*/true).as_tensor();
  const DirectionSet dirs = fibonacci_directions(cfg.n_dir);
  const FrequencyGrid freqs = frequency_grid(cfg.f_min, cfg.f_max, cfg.m_freq, cfg.grid);
  const SpectrumGrid grid = spherical_fourier(cloud, dirs, freqs, cfg.chunk_size);
  f.global = dasft_inputs(grid, /*normalize=*/true);
  return f;
}

inline ParameterSet init_head_params(const ExperimentConfig& cfg, Rng& rng) {
  const std::size_t k = cfg.resolved_k();
  const std::size_t d = cfg.feature_dim;
  const std::size_t m = cfg.m_freq;
  ParameterSet p;
  const bool has_local = cfg.fusion != FusionMode::kDasftOnly;
  if (has_local) {
    p.add("l2dp.ffn.w", xavier_init(k, k, rng));
    p.add("l2dp.ffn.b", Tensor2(1, k));
    const std::size_t agg_in = cfg.aggregation == AggregationMode::kDlp ? k : 3;
    p.add("l2dp.agg.w", xavier_init(agg_in, d, rng));
  }
  p.add("dasft.ffn.w", xavier_init(m, d, rng));
  p.add("dasft.ffn.b", Tensor2(1, d));
  std::size_t fused_dim = d;
  switch (cfg.fusion) {
    case FusionMode::kCrossAttention:
      p.add("fusion.wq", xavier_init(d, d, rng));
      p.add("fusion.wk", xavier_init(d, d, rng));
      p.add("fusion.wv", xavier_init(d, d, rng));
      break;
    case FusionMode::kGate:
      p.add("fusion.wg", xavier_init(2 * d, d, rng));
      p.add("fusion.bg", Tensor2(1, d));
      p.add("fusion.wp", xavier_init(d, d, rng));
      p.add("fusion.bp", Tensor2(1, d));
      break;
    case FusionMode::kConcat:
      fused_dim = 2 * d;
      break;
    case FusionMode::kDasftOnly:
      break;
  }
  p.add("head.w1", xavier_init(fused_dim, cfg.hidden_dim, rng));
  p.add("head.b1", Tensor2(1, cfg.hidden_dim));
  p.add("head.w2", xavier_init(cfg.hidden_dim, kNumShapeClasses, rng));
  p.add("head.b2", Tensor2(1, kNumShapeClasses));
  return p;
}

struct HeadCache {
  Tensor2 inv;
  Tensor2 ffn_pre, ffn_act;
  Tensor2 dlp_mapped;             // DLP pre-layernorm
  Tensor2 sap_stats, sap_mapped;  // SAP path
  Tensor2 sap_mask;
  Tensor2 queries;
  DasftCache dasft;
  Tensor2 tokens, pooled;
  AttentionCache attention;
  GateCache gate;
  Tensor2 fused;
  std::vector<std::size_t> pool_argmax;
  Tensor2 pooled_feat;
  Tensor2 h1_pre, h1;
};

inline Tensor2 head_forward(const SampleFeatures& feat, const ExperimentConfig& cfg,
                            const ParameterSet& params, bool train_mode, Rng& dropout_rng,
                            HeadCache* cache = nullptr) {
  HeadCache local_cache;
  HeadCache& c = cache ? *cache : local_cache;
  const double slope = cfg.leaky_slope;
  const bool has_local = cfg.fusion != FusionMode::kDasftOnly;

  // global branch
  DasftFeatures global =
      dasft_apply(feat.global, &params.value("dasft.ffn.w"), &params.value("dasft.ffn.b"),
                  /*normalize=*/true, slope, &c.dasft);
  c.tokens = global.tokens;
  c.pooled = global.pooled;

  if (has_local) {
    // local branch
    c.inv = feat.inv_rows;
    c.ffn_pre = affine_forward(c.inv, params.value("l2dp.ffn.w"), params.value("l2dp.ffn.b"));
    c.ffn_act = leaky_relu_forward(c.ffn_pre, slope);
    if (cfg.aggregation == AggregationMode::kDlp) {
      c.dlp_mapped = matmul(c.ffn_act, params.value("l2dp.agg.w"));
      c.queries = layernorm_rows(c.dlp_mapped, cfg.layernorm_epsilon);
    } else {
      LocalInvariantTensor tmp;
      tmp.n = c.ffn_act.rows();
      tmp.c = 1;
      tmp.k = c.ffn_act.cols();
      tmp.values = c.ffn_act.data();
      c.sap_stats = sap_statistics(tmp);
      c.sap_mapped = matmul(c.sap_stats, params.value("l2dp.agg.w"));
      c.queries =
          dropout_forward(c.sap_mapped, train_mode, cfg.dropout_rate, dropout_rng, &c.sap_mask);
    }
  }

  switch (cfg.fusion) {
    case FusionMode::kCrossAttention:
      c.fused = cross_attention_forward(c.queries, c.tokens, c.tokens, params.value("fusion.wq"),
                                        params.value("fusion.wk"), params.value("fusion.wv"),
                                        &c.attention);
      break;
    case FusionMode::kGate:
      c.fused = gate_fusion_forward(c.queries, c.pooled, params.value("fusion.wg"),
                                    params.value("fusion.bg"), params.value("fusion.wp"),
                                    params.value("fusion.bp"), &c.gate);
      break;
    case FusionMode::kConcat: {
      const std::size_t n = c.queries.rows();
      const std::size_t d = c.queries.cols();
      c.fused = Tensor2(n, 2 * d);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          c.fused(i, j) = c.queries(i, j);
          c.fused(i, d + j) = c.pooled(0, j);
        }
      break;
    }
    case FusionMode::kDasftOnly:
      c.fused = c.pooled;
      break;
  }

  // order-invariant readout: max over points per feature column
  const std::size_t fd = c.fused.cols();
  c.pooled_feat = Tensor2(1, fd);
  c.pool_argmax.assign(fd, 0);
  for (std::size_t j = 0; j < fd; ++j) {
    double best = c.fused(0, j);
    std::size_t arg = 0;
    for (std::size_t i = 1; i < c.fused.rows(); ++i)
      if (c.fused(i, j) > best) {
        best = c.fused(i, j);
        arg = i;
      }
    c.pooled_feat(0, j) = best;
    c.pool_argmax[j] = arg;
  }

  c.h1_pre = affine_forward(c.pooled_feat, params.value("head.w1"), params.value("head.b1"));
  c.h1 = leaky_relu_forward(c.h1_pre, slope);
  return affine_forward(c.h1, params.value("head.w2"), params.value("head.b2"));
}

// Accumulates parameter gradients for one sample into `grads` (same
// entries as the forward parameters).
inline void head_backward(const HeadCache& c, const ExperimentConfig& cfg,
                          const ParameterSet& params, const Tensor2& grad_logits,
                          ParameterSet& grads) {
  const double slope = cfg.leaky_slope;
  const bool has_local = cfg.fusion != FusionMode::kDasftOnly;

  Tensor2 grad_h1, gw2, gb2;
  affine_backward(c.h1, params.value("head.w2"), grad_logits, &grad_h1, &gw2, &gb2);
  accumulate(grads.grad("head.w2"), gw2);
  accumulate(grads.grad("head.b2"), gb2);
  Tensor2 grad_h1_pre = leaky_relu_backward(c.h1_pre, slope, grad_h1);
  Tensor2 grad_pooled_feat, gw1, gb1;
  affine_backward(c.pooled_feat, params.value("head.w1"), grad_h1_pre, &grad_pooled_feat, &gw1,
                  &gb1);
  accumulate(grads.grad("head.w1"), gw1);
  accumulate(grads.grad("head.b1"), gb1);

  Tensor2 grad_fused(c.fused.rows(), c.fused.cols());
  for (std::size_t j = 0; j < c.fused.cols(); ++j)
    grad_fused(c.pool_argmax[j], j) = grad_pooled_feat(0, j);

  Tensor2 grad_queries;
  Tensor2 grad_pooled(1, c.pooled.cols());
  Tensor2 grad_tokens;

  switch (cfg.fusion) {
    case FusionMode::kCrossAttention: {
      Tensor2 gk, gv, gwq, gwk, gwv;
      cross_attention_backward(c.attention, params.value("fusion.wq"), params.value("fusion.wk"),
                               params.value("fusion.wv"), grad_fused, &grad_queries, &gk, &gv,
                               &gwq, &gwk, &gwv);
      accumulate(grads.grad("fusion.wq"), gwq);
      accumulate(grads.grad("fusion.wk"), gwk);
      accumulate(grads.grad("fusion.wv"), gwv);
      grad_tokens = gk;
      accumulate(grad_tokens, gv);
      break;
    }
    case FusionMode::kGate: {
      Tensor2 gwg, gbg, gwp, gbp;
      gate_fusion_backward(c.gate, params.value("fusion.wg"), params.value("fusion.wp"),
                           grad_fused, &grad_queries, &grad_pooled, &gwg, &gbg, &gwp, &gbp);
      accumulate(grads.grad("fusion.wg"), gwg);
      accumulate(grads.grad("fusion.bg"), gbg);
      accumulate(grads.grad("fusion.wp"), gwp);
      accumulate(grads.grad("fusion.bp"), gbp);
      break;
    }
    case FusionMode::kConcat: {
      const std::size_t d = c.queries.cols();
      grad_queries = Tensor2(c.queries.rows(), d);
      for (std::size_t i = 0; i < c.queries.rows(); ++i)
        for (std::size_t j = 0; j < d; ++j) {
          grad_queries(i, j) = grad_fused(i, j);
          grad_pooled(0, j) += grad_fused(i, d + j);
        }
      break;
    }
    case FusionMode::kDasftOnly:
      grad_pooled = grad_fused;
      break;
  }

  Tensor2 gdw, gdb;
  dasft_backward(c.dasft, params.value("dasft.ffn.w"), slope, grad_pooled, grad_tokens, &gdw,
                 &gdb);
  accumulate(grads.grad("dasft.ffn.w"), gdw);
  accumulate(grads.grad("dasft.ffn.b"), gdb);

  if (!has_local) return;

  Tensor2 grad_act;
  if (cfg.aggregation == AggregationMode::kDlp) {
    Tensor2 grad_mapped = layernorm_rows_backward(c.dlp_mapped, cfg.layernorm_epsilon, grad_queries);
    accumulate(grads.grad("l2dp.agg.w"), matmul_tn(c.ffn_act, grad_mapped));
    grad_act = matmul_nt(grad_mapped, params.value("l2dp.agg.w"));
  } else {
    Tensor2 grad_mapped = dropout_backward(c.sap_mask, grad_queries);
    accumulate(grads.grad("l2dp.agg.w"), matmul_tn(c.sap_stats, grad_mapped));
    Tensor2 grad_stats = matmul_nt(grad_mapped, params.value("l2dp.agg.w"));
    // statistics backward over the K axis (max, population variance, mean)
    const std::size_t n = c.ffn_act.rows();
    const std::size_t k = c.ffn_act.cols();
    const double dk = static_cast<double>(k);
    grad_act = Tensor2(n, k);
    for (std::size_t i = 0; i < n; ++i) {
      double mean = 0.0;
      double best = c.ffn_act(i, 0);
      std::size_t arg = 0;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double v = c.ffn_act(i, kk);
        mean += v;
        if (v > best) {
          best = v;
          arg = kk;
        }
      }
      mean /= dk;
      const double gmax = grad_stats(i, 0);
      const double gvar = grad_stats(i, 1);
      const double gmean = grad_stats(i, 2);
      for (std::size_t kk = 0; kk < k; ++kk)
        grad_act(i, kk) =
            gmean / dk + gvar * 2.0 * (c.ffn_act(i, kk) - mean) / dk + (kk == arg ? gmax : 0.0);
    }
  }
  Tensor2 grad_ffn_pre = leaky_relu_backward(c.ffn_pre, slope, grad_act);
  Tensor2 grad_inv, gfw, gfb;
  affine_backward(c.inv, params.value("l2dp.ffn.w"), grad_ffn_pre, &grad_inv, &gfw, &gfb);
  accumulate(grads.grad("l2dp.ffn.w"), gfw);
  accumulate(grads.grad("l2dp.ffn.b"), gfb);
}

// Spec-facing wrapper: features are derived from the sample, parameters
// stay fixed, logits come back.
inline Tensor2 forward_head(const ShapeSample& sample, const ExperimentConfig& cfg,
                            const ParameterSet& params) {
  const SampleFeatures feat = compute_features(sample.cloud, cfg);
  Rng rng(RngSeed{0});
  return head_forward(feat, cfg, params, /*train_mode=*/false, rng);
}

// ---------------------------------------------------------------------------
// training and evaluation

inline TrainState make_train_state(const ExperimentConfig& cfg, std::size_t dataset_size) {
  cfg.validate();
  TrainState state;
  Rng init_rng(derive_seed(cfg.seed, 1));
  state.params = init_head_params(cfg, init_rng);
  state.init_momentum();
  const std::size_t steps_per_epoch = (dataset_size + cfg.batch_size - 1) / cfg.batch_size;
  state.schedule = {cfg.lr_start, cfg.lr_end, std::max<std::size_t>(1, cfg.epochs * steps_per_epoch)};
  state.momentum_coeff = cfg.momentum;
  return state;
}

inline TrainState train(const ExperimentConfig& cfg, const std::vector<ShapeSample>& dataset) {
  if (dataset.empty()) throw InvalidInput("train: dataset is empty");
  TrainState state = make_train_state(cfg, dataset.size());
  const RotationKind rot = train_rotation(cfg.protocol);

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, 0x1000 + epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.index(i)]);

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      std::vector<double> losses(count, 0.0);
      std::vector<ParameterSet> sample_grads(count);

      parallel_for(count, [&](std::size_t b) {
        const std::size_t idx = order[start + b];
        const std::uint64_t salt = (epoch << 24) ^ idx;
        Rng aug_rng(derive_seed(cfg.seed, 0x100000 + salt));
        const ShapeSample aug = augment(dataset[idx], rot, aug_rng);
        const SampleFeatures feat = compute_features(aug.cloud, cfg);

        Rng dropout_rng(derive_seed(cfg.seed, 0x200000 + salt));
        HeadCache cache;
        ParameterSet local = state.params;
        local.zero_grads();
        const Tensor2 logits =
            head_forward(feat, cfg, local, /*train_mode=*/true, dropout_rng, &cache);
        const LossResult loss = cross_entropy_label_smoothing(logits, {aug.label},
                                                              cfg.label_smoothing);
        losses[b] = loss.loss;
        head_backward(cache, cfg, local, loss.grad, local);
        sample_grads[b] = std::move(local);
      });

      state.params.zero_grads();
      double batch_loss = 0.0;
      for (std::size_t b = 0; b < count; ++b) {
        state.params.accumulate_grads(sample_grads[b]);
        batch_loss += losses[b];
      }
      state.params.scale_grads(1.0 / static_cast<double>(count));
      state.loss_curve.push_back(batch_loss / static_cast<double>(count));
      sgd_step(state);
    }
  }
  return state;
}

inline Metrics evaluate(const TrainState& state, const ExperimentConfig& cfg,
                        const std::vector<ShapeSample>& dataset) {
  if (dataset.empty()) throw InvalidInput("evaluate: dataset is empty");
  const RotationKind rot = test_rotation(cfg.protocol);

  Metrics m;
  m.confusion.assign(kNumShapeClasses, std::vector<std::size_t>(kNumShapeClasses, 0));
  std::vector<std::size_t> predictions(dataset.size());

  parallel_for(dataset.size(), [&](std::size_t i) {
    Rng rot_rng(derive_seed(cfg.seed, 0x300000 + i));
    const ShapeSample rotated = rotate_sample(dataset[i], rot, rot_rng);
    const SampleFeatures feat = compute_features(rotated.cloud, cfg);
    Rng dummy(RngSeed{0});
    const Tensor2 logits = head_forward(feat, cfg, state.params, /*train_mode=*/false, dummy);
    std::size_t best = 0;
    for (std::size_t cidx = 1; cidx < kNumShapeClasses; ++cidx)
      if (logits(0, cidx) > logits(0, best)) best = cidx;
    predictions[i] = best;
  });

  std::size_t correct = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    m.confusion[dataset[i].label][predictions[i]]++;
    if (predictions[i] == dataset[i].label) ++correct;
  }
  m.overall_accuracy = static_cast<double>(correct) / static_cast<double>(dataset.size());
  m.per_class_accuracy.assign(kNumShapeClasses, 0.0);
  for (std::size_t lab = 0; lab < kNumShapeClasses; ++lab) {
    std::size_t total = 0;
    for (std::size_t p = 0; p < kNumShapeClasses; ++p) total += m.confusion[lab][p];
    if (total > 0)
      m.per_class_accuracy[lab] =
          static_cast<double>(m.confusion[lab][lab]) / static_cast<double>(total);
  }
  return m;
}

// Training-free baseline: 1-nearest-neighbor over standardized radial
// profiles, gallery unrotated, queries rotated per the protocol.
inline Metrics knn_descriptor_baseline(const std::vector<ShapeSample>& train,
                                       const std::vector<ShapeSample>& test,
                                       const ExperimentConfig& cfg) {
  if (train.empty() || test.empty()) throw InvalidInput("baseline: datasets must be nonempty");
  const DirectionSet dirs = fibonacci_directions(cfg.n_dir);
  const FrequencyGrid freqs = frequency_grid(cfg.f_min, cfg.f_max, cfg.m_freq, cfg.grid);
  const RotationKind rot = test_rotation(cfg.protocol);

  auto profile = [&](const PointCloud& cloud) {
    const SpectrumGrid grid = spherical_fourier(cloud, dirs, freqs, cfg.chunk_size);
    return dasft_inputs(grid, /*normalize=*/true).g_hat;
  };

  std::vector<std::vector<double>> gallery(train.size());
  parallel_for(train.size(), [&](std::size_t i) { gallery[i] = profile(train[i].cloud); });

  Metrics m;
  m.confusion.assign(kNumShapeClasses, std::vector<std::size_t>(kNumShapeClasses, 0));
  std::vector<std::size_t> predictions(test.size());
  parallel_for(test.size(), [&](std::size_t i) {
    Rng rot_rng(derive_seed(cfg.seed, 0x400000 + i));
    const ShapeSample rotated = rotate_sample(test[i], rot, rot_rng);
    const std::vector<double> g = profile(rotated.cloud);
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < gallery.size(); ++t) {
      double d = 0.0;
      for (std::size_t k = 0; k < g.size(); ++k) {
        const double diff = g[k] - gallery[t][k];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = t;
      }
    }
    predictions[i] = train[best].label;
  });

  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    m.confusion[test[i].label][predictions[i]]++;
    if (predictions[i] == test[i].label) ++correct;
  }
  m.overall_accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
  m.per_class_accuracy.assign(kNumShapeClasses, 0.0);
  for (std::size_t lab = 0; lab < kNumShapeClasses; ++lab) {
    std::size_t total = 0;
    for (std::size_t p = 0; p < kNumShapeClasses; ++p) total += m.confusion[lab][p];
    if (total > 0)
      m.per_class_accuracy[lab] =
          static_cast<double>(m.confusion[lab][lab]) / static_cast<double>(total);
  }
  return m;
}

}  // namespace dipv

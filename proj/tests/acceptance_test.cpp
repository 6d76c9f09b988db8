// Acceptance suite: one test per criterion, each printing a pass/fail
// line with the measured numbers.

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <vector>

#include "dipv/bench.hpp"
#include "dipv/invariants.hpp"
#include "dipv/pipeline.hpp"
#include "dipv/spectrum.hpp"
#include "gradcheck.hpp"

using namespace dipv;
using gradcheck::max_rel_error;
using gradcheck::numeric_grad;
using gradcheck::probe_loss;
using gradcheck::random_tensor;

namespace {

void report(const char* tag, bool ok, const std::string& detail) {
  std::printf("[%s] %s: %s\n", tag, ok ? "PASS" : "FAIL", detail.c_str());
  EXPECT_TRUE(ok) << tag << ": " << detail;
}

PointCloud random_cloud(std::size_t n, Rng& rng) {
  PointCloud cloud;
  cloud.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    cloud.points.push_back({rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)});
  return center_and_scale(cloud);
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), pattern, args...);
  return buf;
}

}  // namespace

// criterion 1: exact local invariance over 200 random cloud/rotation pairs
TEST(Acceptance, C1LocalInvariance) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(RngSeed{1001});
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const PointCloud cloud = random_cloud(512, rng);
    const KnnGraph graph = build_knn(cloud, 12);
    const LocalInvariantTensor base = local_dot_products(cloud, graph, true);

    const PointCloud rotated = apply_rotation(cloud, random_rotation_so3(rng));
    const LocalInvariantTensor after = local_dot_products(rotated, build_knn(rotated, 12), true);
    for (std::size_t i = 0; i < base.values.size(); ++i)
      worst = std::max(worst, std::abs(base.values[i] - after.values[i]));
  }
  const double secs = seconds_since(t0);
  report("C1", worst <= 1e-9 && secs < 30.0,
         fmt("max |dI| = %.3e (limit 1e-9), %.1f s (limit 30 s)", worst, secs));
}

// criterion 2: E(R P, w) = E(P, R^T w) within 1e-9 relative, 100 pairs
TEST(Acceptance, C2SpectralCovariance) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(RngSeed{1002});
  const DirectionSet dirs = fibonacci_directions(36);
  const FrequencyGrid freqs = frequency_grid(0.0, 12.0, 32, GridMode::kLinear);
  double worst_rel = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const PointCloud cloud = random_cloud(512, rng);
    const double dev = verify_rotation_covariance(cloud, random_rotation_so3(rng), dirs, freqs);
    worst_rel = std::max(worst_rel, dev / (512.0 * 512.0));
  }
  const double secs = seconds_since(t0);
  report("C2", worst_rel <= 1e-9 && secs < 60.0,
         fmt("max relative deviation = %.3e (limit 1e-9), %.1f s (limit 60 s)", worst_rel, secs));
}

// criterion 3: median rotational deviation of normalized G scales like
// 1/sqrt(N_dir): log-log slope within [-0.75, -0.25]
TEST(Acceptance, C3MonteCarloScaling) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<std::size_t> n_dirs{12, 24, 36, 60, 144};
  const FrequencyGrid freqs = frequency_grid(0.0, 12.0, 32, GridMode::kLinear);
  const std::size_t n_clouds = 6, n_rotations = 10;

  Rng rng(RngSeed{1003});
  std::vector<PointCloud> clouds;
  for (std::size_t c = 0; c < n_clouds; ++c) clouds.push_back(random_cloud(1024, rng));

  std::vector<double> medians;
  bool bound_ok = true;
  double worst_vs_bound = 0.0;
  for (std::size_t n_dir : n_dirs) {
    const DirectionSet dirs = fibonacci_directions(n_dir);
    std::vector<double> devs;
    for (const PointCloud& cloud : clouds) {
      const SpectrumGrid base = spherical_fourier(cloud, dirs, freqs);
      const std::vector<double> g_base = dasft_inputs(base, true).g_hat;
      double bound = 0.0;
      for (double b : error_report(base, n_dir).bound_normalized)
        if (std::isfinite(b)) bound = std::max(bound, b);
      for (std::size_t r = 0; r < n_rotations; ++r) {
        const PointCloud rotated = apply_rotation(cloud, random_rotation_so3(rng));
        const std::vector<double> g_rot =
            dasft_inputs(spherical_fourier(rotated, dirs, freqs), true).g_hat;
        double dev = 0.0;
        for (std::size_t k = 0; k < g_base.size(); ++k)
          dev = std::max(dev, std::abs(g_base[k] - g_rot[k]));
        devs.push_back(dev);
        if (n_dir == 36) {
          worst_vs_bound = std::max(worst_vs_bound, dev / bound);
          if (dev > 3.0 * bound) bound_ok = false;
        }
      }
    }
    std::sort(devs.begin(), devs.end());
    medians.push_back(devs[devs.size() / 2]);
  }

  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n_dirs.size(); ++i) {
    const double x = std::log(static_cast<double>(n_dirs[i]));
    const double y = std::log(medians[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = static_cast<double>(n_dirs.size());
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double secs = seconds_since(t0);
  report("C3", slope >= -0.75 && slope <= -0.25 && bound_ok && secs < 300.0,
         fmt("slope = %.3f (band [-0.75, -0.25]), dev/bound at 36 dirs = %.2f (limit 3), %.1f s",
             slope, worst_vs_bound, secs));
}

// criterion 4: reference arithmetic for the error bound and the flop model
TEST(Acceptance, C4ReferenceArithmetic) {
  const double bound = normalized_error_bound(1048576.0, 0.487548, 26573496.0, 36);
  const bool bound_ok = std::abs(bound - 0.003288) <= 5e-7;

  const CostModel cm = cost_model(1, 32, 60, 60);
  const bool cost_ok = cm.flops_dasft == 2100 && cm.flops_sh == 7442 &&
                       std::abs(100.0 * cm.ratio - 28.2) <= 0.1;
  report("C4", bound_ok && cost_ok,
         fmt("|dG_hat| = %.6f (want 0.003288), flops = %llu/%llu, ratio = %.1f%%", bound,
             static_cast<unsigned long long>(cm.flops_dasft),
             static_cast<unsigned long long>(cm.flops_sh), 100.0 * cm.ratio));
}

// criterion 5: E(0) = N^2 for every direction
TEST(Acceptance, C5ZeroFrequencyLaw) {
  Rng rng(RngSeed{1005});
  const DirectionSet dirs = fibonacci_directions(36);
  const FrequencyGrid freqs = frequency_grid(0.0, 12.0, 32, GridMode::kLinear);
  double worst = 0.0;
  for (std::size_t n : {128u, 512u, 1024u}) {
    const PointCloud cloud = random_cloud(n, rng);
    const SpectrumGrid g = spherical_fourier(cloud, dirs, freqs);
    const double n2 = static_cast<double>(n) * static_cast<double>(n);
    for (std::size_t l = 0; l < dirs.size(); ++l)
      worst = std::max(worst, std::abs(g.energies(0, l) - n2) / n2);
  }
  report("C5", worst <= 1e-6, fmt("max relative deviation from N^2 = %.3e (limit 1e-6)", worst));
}

// criterion 6: chunked evaluation matches the unchunked spectrum
TEST(Acceptance, C6ChunkedEquivalence) {
  Rng rng(RngSeed{1006});
  const PointCloud cloud = random_cloud(512, rng);
  const DirectionSet dirs = fibonacci_directions(36);
  const FrequencyGrid freqs = frequency_grid(0.0, 12.0, 32, GridMode::kLinear);
  const SpectrumGrid ref = spherical_fourier(cloud, dirs, freqs, dirs.size());
  double worst = 0.0;
  for (std::size_t chunk : {1u, 7u, 16u, 36u}) {
    const SpectrumGrid g = spherical_fourier(cloud, dirs, freqs, chunk);
    for (std::size_t i = 0; i < ref.energies.size(); ++i)
      worst = std::max(worst, std::abs(g.energies.data()[i] - ref.energies.data()[i]) /
                                  std::max(1.0, std::abs(ref.energies.data()[i])));
  }
  report("C6", worst <= 1e-12, fmt("max relative chunk deviation = %.3e (limit 1e-12)", worst));
}

// criterion 7: every backward matches central finite differences (step
// 1e-5) within 1e-4 relative over 50 randomized trials per operation
TEST(Acceptance, C7GradientCorrectness) {
  Rng rng(RngSeed{1007});
  double worst = 0.0;
  auto track = [&worst](double err) { worst = std::max(worst, err); };

  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.index(4), p = 1 + rng.index(4), q = 1 + rng.index(4);

    {  // affine
      const Tensor2 x = random_tensor(n, p, rng), w = random_tensor(p, q, rng),
                    b = random_tensor(1, q, rng), probe = random_tensor(n, q, rng);
      Tensor2 gx, gw, gb;
      affine_backward(x, w, probe, &gx, &gw, &gb);
      track(max_rel_error(gx, numeric_grad(x, [&](const Tensor2& t) {
                            return probe_loss(affine_forward(t, w, b), probe);
                          })));
      track(max_rel_error(gw, numeric_grad(w, [&](const Tensor2& t) {
                            return probe_loss(affine_forward(x, t, b), probe);
                          })));
      track(max_rel_error(gb, numeric_grad(b, [&](const Tensor2& t) {
                            return probe_loss(affine_forward(x, w, t), probe);
                          })));
    }
    {  // layer norm with gain and bias
      const std::size_t d = 2 + rng.index(5);
      const Tensor2 x = random_tensor(n, d, rng), gain = random_tensor(1, d, rng),
                    bias = random_tensor(1, d, rng), probe = random_tensor(n, d, rng);
      Tensor2 gx, gg, gb;
      layernorm_backward(x, gain, 1e-5, probe, &gx, &gg, &gb);
      track(max_rel_error(gx, numeric_grad(x, [&](const Tensor2& t) {
                            return probe_loss(layernorm_forward(t, gain, bias, 1e-5), probe);
                          })));
      track(max_rel_error(gg, numeric_grad(gain, [&](const Tensor2& t) {
                            return probe_loss(layernorm_forward(x, t, bias, 1e-5), probe);
                          })));
      track(max_rel_error(gb, numeric_grad(bias, [&](const Tensor2& t) {
                            return probe_loss(layernorm_forward(x, gain, t, 1e-5), probe);
                          })));
    }
    {  // leaky rectifier, entries pushed off the kink
      Tensor2 x = random_tensor(n, p, rng);
      for (double& v : x.data())
        if (std::abs(v) < 1e-3) v += 0.01;
      const Tensor2 probe = random_tensor(n, p, rng);
      const Tensor2 ga = leaky_relu_backward(x, 0.01, probe);
      track(max_rel_error(ga, numeric_grad(x, [&](const Tensor2& t) {
                            return probe_loss(leaky_relu_forward(t, 0.01), probe);
                          })));
    }
    {  // softmax
      const Tensor2 x = random_tensor(n, 2 + rng.index(5), rng);
      const Tensor2 probe = random_tensor(x.rows(), x.cols(), rng);
      const Tensor2 ga = softmax_backward(softmax_forward(x), probe);
      track(max_rel_error(ga, numeric_grad(x, [&](const Tensor2& t) {
                            return probe_loss(softmax_forward(t), probe);
                          })));
    }
    {  // dropout through a seed-reproduced mask
      const Tensor2 x = random_tensor(n, p, rng);
      const Tensor2 probe = random_tensor(n, p, rng);
      const std::uint64_t seed = rng.raw();
      Rng mask_rng{RngSeed{seed}};
      Tensor2 mask;
      dropout_forward(x, true, 0.3, mask_rng, &mask);
      const Tensor2 ga = dropout_backward(mask, probe);
      track(max_rel_error(ga, numeric_grad(x, [&](const Tensor2& t) {
                            Rng r2{RngSeed{seed}};
                            return probe_loss(dropout_forward(t, true, 0.3, r2), probe);
                          })));
    }
    {  // cross-attention
      const std::size_t d = 2 + rng.index(3), m = 1 + rng.index(4);
      const Tensor2 q = random_tensor(n, d, rng), keys = random_tensor(m, d, rng),
                    values = random_tensor(m, d, rng);
      const Tensor2 wq = random_tensor(d, d, rng), wk = random_tensor(d, d, rng),
                    wv = random_tensor(d, d, rng), probe = random_tensor(n, d, rng);
      AttentionCache cache;
      cross_attention_forward(q, keys, values, wq, wk, wv, &cache);
      Tensor2 gq, gk, gv, gwq, gwk, gwv;
      cross_attention_backward(cache, wq, wk, wv, probe, &gq, &gk, &gv, &gwq, &gwk, &gwv);
      track(max_rel_error(gq, numeric_grad(q, [&](const Tensor2& t) {
                            return probe_loss(cross_attention_forward(t, keys, values, wq, wk, wv),
                                              probe);
                          })));
      track(max_rel_error(gwq, numeric_grad(wq, [&](const Tensor2& t) {
                            return probe_loss(cross_attention_forward(q, keys, values, t, wk, wv),
                                              probe);
                          })));
      track(max_rel_error(gwv, numeric_grad(wv, [&](const Tensor2& t) {
                            return probe_loss(cross_attention_forward(q, keys, values, wq, wk, t),
                                              probe);
                          })));
    }
    {  // gated fusion
      const std::size_t d = 2 + rng.index(3);
      const Tensor2 local = random_tensor(n, d, rng), global = random_tensor(1, d, rng);
      const Tensor2 wg = random_tensor(2 * d, d, rng), bg = random_tensor(1, d, rng),
                    wp = random_tensor(d, d, rng), bp = random_tensor(1, d, rng),
                    probe = random_tensor(n, d, rng);
      GateCache cache;
      gate_fusion_forward(local, global, wg, bg, wp, bp, &cache);
      Tensor2 gl, gg, gwg, gbg, gwp, gbp;
      gate_fusion_backward(cache, wg, wp, probe, &gl, &gg, &gwg, &gbg, &gwp, &gbp);
      track(max_rel_error(gl, numeric_grad(local, [&](const Tensor2& t) {
                            return probe_loss(gate_fusion_forward(t, global, wg, bg, wp, bp),
                                              probe);
                          })));
      track(max_rel_error(gwg, numeric_grad(wg, [&](const Tensor2& t) {
                            return probe_loss(gate_fusion_forward(local, global, t, bg, wp, bp),
                                              probe);
                          })));
      track(max_rel_error(gwp, numeric_grad(wp, [&](const Tensor2& t) {
                            return probe_loss(gate_fusion_forward(local, global, wg, bg, t, bp),
                                              probe);
                          })));
    }
    {  // label-smoothed cross entropy
      const std::size_t c = 2 + rng.index(5);
      const Tensor2 logits = random_tensor(n, c, rng, 2.0);
      std::vector<std::size_t> labels(n);
      for (std::size_t i = 0; i < n; ++i) labels[i] = rng.index(c);
      const LossResult lr = cross_entropy_label_smoothing(logits, labels, 0.1);
      track(max_rel_error(lr.grad, numeric_grad(logits, [&](const Tensor2& t) {
                            return cross_entropy_label_smoothing(t, labels, 0.1).loss;
                          })));
    }
  }
  report("C7", worst <= 1e-4, fmt("max relative gradient error = %.3e (limit 1e-4)", worst));
}

// criterion 8: default synthetic benchmark, z/SO(3) accuracy >= 0.90 and
// protocol spread <= 3 points
TEST(Acceptance, C8DeskScaleGeneralization) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg;  // spec defaults: 200/100 per class, 512 points, CA + DLP

  const auto train_set = generate_dataset(cfg.n_train_per_class, cfg.points_per_cloud,
                                          cfg.noise_sigma, RngSeed{derive_seed(cfg.seed, 11)});
  const auto test_set = generate_dataset(cfg.n_test_per_class, cfg.points_per_cloud,
                                         cfg.noise_sigma, RngSeed{derive_seed(cfg.seed, 12)});

  // z-trained model, evaluated under z and SO(3) test rotations
  cfg.protocol = Protocol::kZSO3;
  const TrainState z_model = train(cfg, train_set);
  const double train_secs = seconds_since(t0);

  const Metrics m_zso3 = evaluate(z_model, cfg, test_set);
  ExperimentConfig zz_cfg = cfg;
  zz_cfg.protocol = Protocol::kZZ;
  const Metrics m_zz = evaluate(z_model, zz_cfg, test_set);

  // SO(3)-trained model for the third protocol row
  ExperimentConfig so3_cfg = cfg;
  so3_cfg.protocol = Protocol::kSO3SO3;
  const TrainState so3_model = train(so3_cfg, train_set);
  const Metrics m_so3 = evaluate(so3_model, so3_cfg, test_set);

  const double spread =
      std::max({m_zz.overall_accuracy, m_zso3.overall_accuracy, m_so3.overall_accuracy}) -
      std::min({m_zz.overall_accuracy, m_zso3.overall_accuracy, m_so3.overall_accuracy});
  const double secs = seconds_since(t0);
  report("C8",
         m_zso3.overall_accuracy >= 0.90 && spread <= 0.03 && train_secs < 600.0,
         fmt("z/z %.3f, z/SO(3) %.3f, SO(3)/SO(3) %.3f, spread %.1f pts, train %.0f s (limit 600)",
             m_zz.overall_accuracy, m_zso3.overall_accuracy, m_so3.overall_accuracy,
             100.0 * spread, train_secs));
  (void)secs;
}

// criterion 9: fusion ablation keeps the ordering CA >= gate >= DASFT-only
// (ties within half a point)
TEST(Acceptance, C9AblationOrdering) {
  ExperimentConfig cfg;
  cfg.n_train_per_class = 100;
  cfg.n_test_per_class = 50;
  cfg.points_per_cloud = 256;

  const auto train_set = generate_dataset(cfg.n_train_per_class, cfg.points_per_cloud,
                                          cfg.noise_sigma, RngSeed{derive_seed(cfg.seed, 11)});
  const auto test_set = generate_dataset(cfg.n_test_per_class, cfg.points_per_cloud,
                                         cfg.noise_sigma, RngSeed{derive_seed(cfg.seed, 12)});

  auto run = [&](FusionMode fusion) {
    ExperimentConfig c = cfg;
    c.fusion = fusion;
    const TrainState state = train(c, train_set);
    return evaluate(state, c, test_set).overall_accuracy;
  };
  const double acc_ca = run(FusionMode::kCrossAttention);
  const double acc_gate = run(FusionMode::kGate);
  const double acc_dasft = run(FusionMode::kDasftOnly);

  const bool ordered = acc_ca >= acc_gate - 0.005 && acc_gate >= acc_dasft - 0.005;
  report("C9", ordered,
         fmt("cross-attention %.3f >= gate %.3f >= dasft-only %.3f (ties within 0.5 pt)", acc_ca,
             acc_gate, acc_dasft));
}

// criterion 10: wall time scales linearly in N, M and L
TEST(Acceptance, C10BenchScaling) {
  const BenchReport rep = run_bench({256, 512, 1024, 2048}, {8, 16, 32, 64}, {16, 32, 64, 128},
                                    {1, 7, 16, 36}, 1);
  const bool ok = rep.slope_n >= 0.8 && rep.slope_n <= 1.2 && rep.slope_m >= 0.8 &&
                  rep.slope_m <= 1.2 && rep.slope_l >= 0.8 && rep.slope_l <= 1.2 &&
                  rep.chunks_consistent;
  report("C10", ok,
         fmt("slopes n %.2f, m %.2f, l %.2f (band 0.8..1.2), chunks consistent: %s", rep.slope_n,
             rep.slope_m, rep.slope_l, rep.chunks_consistent ? "yes" : "no"));
}

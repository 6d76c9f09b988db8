// Spherical Fourier energy spectra of point clouds: Fibonacci direction
// sampling, frequency grids, chunked evaluation of E(r*omega), the
// direction-averaged radial invariant G(r), Monte Carlo error bounds and
// the analytic flop model.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "dipv/geometry.hpp"
#include "dipv/nn.hpp"
#include "dipv/tensor.hpp"

namespace dipv {

struct DirectionSet {
  std::vector<Vec3> omegas;

  std::size_t size() const { return omegas.size(); }
};

enum class GridMode { kLinear, kLogarithmic };

struct FrequencyGrid {
  std::vector<double> radii;
  GridMode mode = GridMode::kLinear;
  double f_min = 0.0, f_max = 0.0;

  std::size_t size() const { return radii.size(); }
};

struct SpectrumGrid {
  Tensor2 energies;      // M x N_dir
  Tensor2 fourier_real;  // M x N_dir
  Tensor2 fourier_imag;  // M x N_dir
  std::vector<double> radial_profile;  // M

  std::size_t radii() const { return energies.rows(); }
  std::size_t directions() const { return energies.cols(); }
};

struct ErrorReport {
  std::vector<double> bound_raw;         // per radius, |dG(r)| bound
  std::vector<double> bound_normalized;  // per radius, |dG_hat(r)| bound
  double ratio_error_avg = 0.0;          // percent
};

// Fibonacci lattice: alpha_i = i + 0.5, theta_i = arccos(1 - 2 alpha_i / n),
// phi_i = alpha_i * pi * (1 + sqrt 5).
inline DirectionSet fibonacci_directions(std::size_t n_dir) {
  if (n_dir < 1) throw InvalidInput("fibonacci_directions: need n_dir >= 1");
  const double golden = kPi * (1.0 + std::sqrt(5.0));
  DirectionSet dirs;
  dirs.omegas.reserve(n_dir);
  for (std::size_t i = 0; i < n_dir; ++i) {
    const double alpha = static_cast<double>(i) + 0.5;
    const double cos_theta = 1.0 - 2.0 * alpha / static_cast<double>(n_dir);
    const double sin_theta = std::sqrt(std::max(0.0, 1.0 - cos_theta * cos_theta));
    const double phi = alpha * golden;
    dirs.omegas.push_back({sin_theta * std::cos(phi), sin_theta * std::sin(phi), cos_theta});
  }
  return dirs;
}

// Linear grid r_k = f_min + k/(m-1) (f_max - f_min); log grid interpolates
// in ln(f + eps) and shifts back by eps so both endpoints land exactly on
// f_min and f_max.
inline FrequencyGrid frequency_grid(double f_min, double f_max, std::size_t m, GridMode mode) {
  if (m < 1) throw InvalidInput("frequency_grid: need m >= 1");
  if (f_min < 0.0 || f_min >= f_max) throw InvalidInput("frequency_grid: need 0 <= f_min < f_max");
  FrequencyGrid grid;
  grid.mode = mode;
  grid.f_min = f_min;
  grid.f_max = f_max;
  if (m == 1) {
    grid.radii = {f_min};
    return grid;
  }
  grid.radii.resize(m);
  const double steps = static_cast<double>(m - 1);
  if (mode == GridMode::kLinear) {
    for (std::size_t k = 0; k < m; ++k)
      grid.radii[k] = f_min + static_cast<double>(k) / steps * (f_max - f_min);
  } else {
    constexpr double eps = 1e-6;
    const double lo = std::log(f_min + eps);
    const double hi = std::log(f_max + eps);
    for (std::size_t k = 0; k < m; ++k)
      grid.radii[k] = std::exp(lo + static_cast<double>(k) / steps * (hi - lo)) - eps;
    grid.radii.front() = f_min;
    grid.radii.back() = f_max;
  }
  return grid;
}

enum class SpectrumEval {
  kAuto,             // recurrence on uniform grids, direct otherwise
  kDirect,           // one complex exponential per (point, radius, direction)
  kPhaseRecurrence,  // two exponentials per (point, direction), complex steps over radii
};

namespace detail {

inline bool uniform_spacing(const std::vector<double>& radii) {
  if (radii.size() < 2) return false;
  const double step =
      (radii.back() - radii.front()) / static_cast<double>(radii.size() - 1);
  const double tol = 1e-9 * std::max(1.0, std::abs(radii.back()));
  for (std::size_t k = 1; k < radii.size(); ++k) {
    if (std::abs(radii[k] - radii[k - 1] - step) > tol) return false;
  }
  return true;
}

}  // namespace detail

// F(k,l) = sum_j exp(-i r_k <omega_l, v_j>); E = |F|^2. The direction axis
// is processed in chunks; every (k,l) cell is an independent fixed-order
// sum over points, so results do not depend on chunk size or thread count.
inline SpectrumGrid spherical_fourier(const PointCloud& cloud, const DirectionSet& dirs,
                                      const FrequencyGrid& freqs, std::size_t chunk_size = 16,
                                      SpectrumEval eval = SpectrumEval::kAuto) {
  cloud.validate();
  if (dirs.size() < 1) throw InvalidInput("spherical_fourier: empty direction set");
  if (freqs.size() < 1) throw InvalidInput("spherical_fourier: empty frequency grid");
  if (chunk_size < 1) throw InvalidInput("spherical_fourier: chunk_size must be >= 1");

  const std::size_t n = cloud.size();
  const std::size_t m = freqs.size();
  const std::size_t l_total = dirs.size();

  bool use_recurrence = false;
  if (eval == SpectrumEval::kPhaseRecurrence)
    use_recurrence = true;
  else if (eval == SpectrumEval::kAuto)
    use_recurrence = detail::uniform_spacing(freqs.radii);

  SpectrumGrid grid;
  grid.fourier_real = Tensor2(m, l_total);
  grid.fourier_imag = Tensor2(m, l_total);
  grid.energies = Tensor2(m, l_total);

  const double r0 = freqs.radii.front();
  const double rstep =
      m >= 2 ? (freqs.radii.back() - r0) / static_cast<double>(m - 1) : 0.0;

  const std::size_t n_chunks = (l_total + chunk_size - 1) / chunk_size;
  parallel_for(n_chunks, [&](std::size_t chunk) {
    const std::size_t l_begin = chunk * chunk_size;
    const std::size_t l_end = std::min(l_total, l_begin + chunk_size);
    std::vector<double> acc_re(m), acc_im(m);
    for (std::size_t l = l_begin; l < l_end; ++l) {
      std::fill(acc_re.begin(), acc_re.end(), 0.0);
      std::fill(acc_im.begin(), acc_im.end(), 0.0);
      const Vec3 omega = dirs.omegas[l];
      if (use_recurrence) {
        for (std::size_t j = 0; j < n; ++j) {
          const double t = dot(omega, cloud.points[j]);
          double wr = std::cos(r0 * t);
          double wi = -std::sin(r0 * t);
          const double sr = std::cos(rstep * t);
          const double si = -std::sin(rstep * t);
          for (std::size_t k = 0; k < m; ++k) {
            acc_re[k] += wr;
            acc_im[k] += wi;
            const double nr = wr * sr - wi * si;
            wi = wr * si + wi * sr;
            wr = nr;
          }
        }
      } else {
        for (std::size_t j = 0; j < n; ++j) {
          const double t = dot(omega, cloud.points[j]);
          for (std::size_t k = 0; k < m; ++k) {
            const double phase = freqs.radii[k] * t;
            acc_re[k] += std::cos(phase);
            acc_im[k] -= std::sin(phase);
          }
        }
      }
      for (std::size_t k = 0; k < m; ++k) {
        grid.fourier_real(k, l) = acc_re[k];
        grid.fourier_imag(k, l) = acc_im[k];
        grid.energies(k, l) = acc_re[k] * acc_re[k] + acc_im[k] * acc_im[k];
      }
    }
  });

  grid.radial_profile.resize(m);
  for (std::size_t k = 0; k < m; ++k) {
    double sum = 0.0;
    for (std::size_t l = 0; l < l_total; ++l) sum += grid.energies(k, l);
    grid.radial_profile[k] = sum / static_cast<double>(l_total);
  }
  return grid;
}

inline std::vector<double> radial_invariant(const SpectrumGrid& spectrum) {
  if (spectrum.energies.empty()) throw InvalidInput("radial_invariant: spectrum not populated");
  std::vector<double> g(spectrum.radii());
  for (std::size_t k = 0; k < spectrum.radii(); ++k) {
    double sum = 0.0;
    for (std::size_t l = 0; l < spectrum.directions(); ++l) sum += spectrum.energies(k, l);
    g[k] = sum / static_cast<double>(spectrum.directions());
  }
  return g;
}

// max_{k,l} |E(R P, omega_l) - E(P, R^T omega_l)|; the analytic identity
// makes this zero, so the return value is pure floating-point noise.
inline double verify_rotation_covariance(const PointCloud& cloud, const Rotation& rot,
                                         const DirectionSet& dirs, const FrequencyGrid& freqs) {
  const PointCloud rotated = apply_rotation(cloud, rot);
  const Rotation rt = rot.transposed();
  DirectionSet back_dirs;
  back_dirs.omegas.reserve(dirs.size());
  for (const Vec3& w : dirs.omegas) back_dirs.omegas.push_back(rt.apply(w));

  const SpectrumGrid a = spherical_fourier(rotated, dirs, freqs);
  const SpectrumGrid b = spherical_fourier(cloud, back_dirs, freqs);
  double dev = 0.0;
  for (std::size_t i = 0; i < a.energies.size(); ++i)
    dev = std::max(dev, std::abs(a.energies.data()[i] - b.energies.data()[i]));
  return dev;
}

// (E_max - E_min) / (2 sigma_true sqrt(N_dir))
inline double normalized_error_bound(double e_max, double e_min, double sigma_true,
                                     std::size_t n_dir) {
  if (n_dir < 1) throw InvalidInput("normalized_error_bound: need n_dir >= 1");
  return (e_max - e_min) / (2.0 * sigma_true * std::sqrt(static_cast<double>(n_dir)));
}

// Per-radius bounds use the extrema across directions at that radius;
// sigma_true is the population deviation of G over radii. A constant
// profile has sigma_true = 0 and yields NaN markers in the normalized
// columns rather than an error.
inline ErrorReport error_report(const SpectrumGrid& spectrum, std::size_t n_dir) {
  if (spectrum.energies.empty()) throw InvalidInput("error_report: spectrum not populated");
  if (n_dir != spectrum.directions())
    throw InvalidInput("error_report: n_dir does not match the spectrum");
  const std::size_t m = spectrum.radii();
  const double inv_sqrt = 1.0 / (2.0 * std::sqrt(static_cast<double>(n_dir)));

  ErrorReport rep;
  rep.bound_raw.resize(m);
  for (std::size_t k = 0; k < m; ++k) {
    double e_max = spectrum.energies(k, 0);
    double e_min = e_max;
    for (std::size_t l = 1; l < n_dir; ++l) {
      e_max = std::max(e_max, spectrum.energies(k, l));
      e_min = std::min(e_min, spectrum.energies(k, l));
    }
    rep.bound_raw[k] = (e_max - e_min) * inv_sqrt;
  }

  const std::vector<double>& g = spectrum.radial_profile;
  double mu = 0.0;
  for (double v : g) mu += v;
  mu /= static_cast<double>(m);
  double var = 0.0;
  for (double v : g) var += (v - mu) * (v - mu);
  var /= static_cast<double>(m);
  const double sigma = std::sqrt(var);

  rep.bound_normalized.resize(m);
  if (sigma == 0.0) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (double& v : rep.bound_normalized) v = nan;
    rep.ratio_error_avg = nan;
    return rep;
  }
  double ratio_sum = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    rep.bound_normalized[k] = rep.bound_raw[k] / sigma;
    const double g_hat = (g[k] - mu) / sigma;
    ratio_sum += rep.bound_normalized[k] / std::abs(g_hat);
  }
  rep.ratio_error_avg = 100.0 * ratio_sum / static_cast<double>(m);
  return rep;
}

struct CostModel {
  std::uint64_t flops_dasft = 0;
  std::uint64_t flops_sh = 0;
  double ratio = 0.0;
};

// direct transform: 3NL for the direction dot products plus NML complex
// exponentials; spherical-harmonic expansion: 2N(L_max+1)^2
inline CostModel cost_model(std::uint64_t n, std::uint64_t m, std::uint64_t l,
                            std::uint64_t l_max) {
  if (n < 1 || m < 1 || l < 1) throw InvalidInput("cost_model: counts must be >= 1");
  CostModel c;
  c.flops_dasft = 3 * n * l + n * m * l;
  c.flops_sh = 2 * n * (l_max + 1) * (l_max + 1);
  c.ratio = static_cast<double>(c.flops_dasft) / static_cast<double>(c.flops_sh);
  return c;
}

// ---------------------------------------------------------------------------
// learned global descriptor on top of the spectrum

struct DasftFeatures {
  Tensor2 pooled;                 // 1 x d, direction-mean of per-direction FFN outputs
  Tensor2 tokens;                 // M x d, per-frequency sequence for attention keys/values
  std::vector<double> g_profile;  // raw G(r_k)
  std::vector<double> g_hat;      // standardized G
};

struct DasftCache {
  Tensor2 norm_columns;  // N_dir x M, row l = FFN input for direction l
  Tensor2 dir_pre;       // N_dir x d, pre-activation per direction
  Tensor2 token_pre;     // M x d
  std::vector<double> token_src;  // scalar fed to row k of the shared affine
};

constexpr double kSpectrumNormEps = 1e-12;

// Parameter-free part of the DASFT head: per-direction energy columns
// (optionally standardized over the frequency axis) plus the raw and
// standardized radial profiles.
struct DasftInputs {
  Tensor2 columns;  // N_dir x M
  std::vector<double> g_profile;
  std::vector<double> g_hat;
};

inline DasftInputs dasft_inputs(const SpectrumGrid& grid, bool normalize) {
  const std::size_t m = grid.radii();
  const std::size_t l_total = grid.directions();
  DasftInputs in;
  in.g_profile = grid.radial_profile;

  double mu = 0.0;
  for (double v : in.g_profile) mu += v;
  mu /= static_cast<double>(m);
  double var = 0.0;
  for (double v : in.g_profile) var += (v - mu) * (v - mu);
  var /= static_cast<double>(m);
  const double inv = 1.0 / std::sqrt(var + kSpectrumNormEps);
  in.g_hat.resize(m);
  for (std::size_t k = 0; k < m; ++k) in.g_hat[k] = (in.g_profile[k] - mu) * inv;

  in.columns = Tensor2(l_total, m);
  for (std::size_t l = 0; l < l_total; ++l)
    for (std::size_t k = 0; k < m; ++k) in.columns(l, k) = grid.energies(k, l);
  if (normalize) in.columns = layernorm_rows(in.columns, kSpectrumNormEps);
  return in;
}

// Shared affine ("ffn.w" M x d, "ffn.b" 1 x d) consumed two ways: each
// direction's energy column is mapped to a token and the tokens averaged;
// each frequency k contributes a key/value token from its standardized
// G(r_k) against row k of the same weights. An empty parameter set is the
// identity map (pooled output collapses to the G profile).
inline DasftFeatures dasft_apply(const DasftInputs& inputs, const Tensor2* w, const Tensor2* b,
                                 bool normalize_inputs = true, double leaky_slope = 0.01,
                                 DasftCache* cache = nullptr) {
  const std::size_t l_total = inputs.columns.rows();
  const std::size_t m = inputs.columns.cols();

  DasftFeatures feat;
  feat.g_profile = inputs.g_profile;
  feat.g_hat = inputs.g_hat;
  const std::vector<double>& src = normalize_inputs ? inputs.g_hat : inputs.g_profile;

  if (w == nullptr) {
    feat.pooled = Tensor2(1, m);
    for (std::size_t l = 0; l < l_total; ++l)
      for (std::size_t k = 0; k < m; ++k) feat.pooled(0, k) += inputs.columns(l, k);
    for (double& v : feat.pooled.data()) v /= static_cast<double>(l_total);
    feat.tokens = Tensor2(m, 1);
    for (std::size_t k = 0; k < m; ++k) feat.tokens(k, 0) = src[k];
    return feat;
  }

  if (w->rows() != m) throw InvalidInput("dasft: ffn.w must have M rows");
  const std::size_t d = w->cols();

  Tensor2 dir_pre = affine_forward(inputs.columns, *w, *b);  // N_dir x d
  Tensor2 dir_act = leaky_relu_forward(dir_pre, leaky_slope);
  feat.pooled = Tensor2(1, d);
  for (std::size_t l = 0; l < l_total; ++l)
    for (std::size_t j = 0; j < d; ++j) feat.pooled(0, j) += dir_act(l, j);
  for (double& v : feat.pooled.data()) v /= static_cast<double>(l_total);

  Tensor2 token_pre(m, d);
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t j = 0; j < d; ++j) token_pre(k, j) = src[k] * (*w)(k, j) + (*b)(0, j);
  feat.tokens = leaky_relu_forward(token_pre, leaky_slope);

  if (cache) {
    cache->norm_columns = inputs.columns;
    cache->dir_pre = std::move(dir_pre);
    cache->token_pre = std::move(token_pre);
    cache->token_src = src;
  }
  return feat;
}

inline DasftFeatures dasft_apply(const DasftInputs& inputs, const ParameterSet& ffn_params,
                                 bool normalize_inputs = true, double leaky_slope = 0.01,
                                 DasftCache* cache = nullptr) {
  const bool identity = !ffn_params.has("ffn.w");
  return dasft_apply(inputs, identity ? nullptr : &ffn_params.value("ffn.w"),
                     identity ? nullptr : &ffn_params.value("ffn.b"), normalize_inputs,
                     leaky_slope, cache);
}

inline DasftFeatures dasft_forward(const PointCloud& cloud, const DirectionSet& dirs,
                                   const FrequencyGrid& freqs, const ParameterSet& ffn_params,
                                   bool normalize_inputs = true, double leaky_slope = 0.01,
                                   DasftCache* cache = nullptr) {
  const SpectrumGrid grid = spherical_fourier(cloud, dirs, freqs);
  return dasft_apply(dasft_inputs(grid, normalize_inputs), ffn_params, normalize_inputs,
                     leaky_slope, cache);
}

// Gradients of the two dasft paths with respect to the shared affine.
inline void dasft_backward(const DasftCache& cache, const Tensor2& w, double leaky_slope,
                           const Tensor2& grad_pooled, const Tensor2& grad_tokens,
                           Tensor2* grad_w, Tensor2* grad_b) {
  const std::size_t l_total = cache.norm_columns.rows();
  const std::size_t m = cache.norm_columns.cols();
  const std::size_t d = w.cols();
  Tensor2 gw(m, d);
  Tensor2 gb(1, d);

  const double inv_l = 1.0 / static_cast<double>(l_total);
  Tensor2 dir_grad(l_total, d);
  for (std::size_t l = 0; l < l_total; ++l)
    for (std::size_t j = 0; j < d; ++j) dir_grad(l, j) = grad_pooled(0, j) * inv_l;
  Tensor2 dir_pre_grad = leaky_relu_backward(cache.dir_pre, leaky_slope, dir_grad);
  Tensor2 gw_pooled = matmul_tn(cache.norm_columns, dir_pre_grad);
  accumulate(gw, gw_pooled);
  for (std::size_t l = 0; l < l_total; ++l)
    for (std::size_t j = 0; j < d; ++j) gb(0, j) += dir_pre_grad(l, j);

  if (!grad_tokens.empty()) {
    Tensor2 token_pre_grad = leaky_relu_backward(cache.token_pre, leaky_slope, grad_tokens);
    for (std::size_t k = 0; k < m; ++k)
      for (std::size_t j = 0; j < d; ++j) {
        gw(k, j) += cache.token_src[k] * token_pre_grad(k, j);
        gb(0, j) += token_pre_grad(k, j);
      }
  }
  if (grad_w) *grad_w = std::move(gw);
  if (grad_b) *grad_b = std::move(gb);
}

}  // namespace dipv

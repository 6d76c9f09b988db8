// Scaling measurements for the spectrum kernel: wall time across sweeps
// of N, M and L next to the analytic flop counts, plus the chunk-size
// consistency check.
#pragma once

#include <chrono>
#include <cstddef>
#include <string>
#include <vector>

#include "dipv/geometry.hpp"
#include "dipv/io.hpp"
#include "dipv/spectrum.hpp"

namespace dipv {

struct BenchRow {
  std::string sweep;  // "n", "m" or "l"
  std::size_t n = 0, m = 0, l = 0, chunk = 16;
  double seconds = 0.0;
  std::uint64_t flops_dasft = 0;
  std::uint64_t flops_sh = 0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  double slope_n = 0.0;
  double slope_m = 0.0;
  double slope_l = 0.0;
  bool chunks_consistent = true;
};

namespace detail {

inline PointCloud bench_cloud(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  PointCloud cloud;
  cloud.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    cloud.points.push_back({rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)});
  return center_and_scale(cloud);
}

inline double time_spectrum(const PointCloud& cloud, const DirectionSet& dirs,
                            const FrequencyGrid& freqs, std::size_t chunk, SpectrumEval eval,
                            int repeats = 3) {
  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    volatile double sink = spherical_fourier(cloud, dirs, freqs, chunk, eval).energies(0, 0);
    (void)sink;
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

inline double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double dn = static_cast<double>(n);
  return (dn * sxy - sx * sy) / (dn * sxx - sx * sx);
}

}  // namespace detail

// The sweeps time the direct evaluator (one complex exponential per
// point/radius/direction), the same operation the flop columns count.
inline BenchReport run_bench(const std::vector<std::size_t>& n_list,
                             const std::vector<std::size_t>& m_list,
                             const std::vector<std::size_t>& l_list,
                             const std::vector<std::size_t>& chunk_list,
                             std::uint64_t seed = 1) {
  if (n_list.empty() || m_list.empty() || l_list.empty() || chunk_list.empty())
    throw InvalidInput("run_bench: all sweep lists must be nonempty");
  const std::size_t n_base = n_list[n_list.size() / 2];
  const std::size_t m_base = m_list[m_list.size() / 2];
  const std::size_t l_base = l_list[l_list.size() / 2];

  BenchReport report;
  auto record = [&](const std::string& sweep, std::size_t n, std::size_t m, std::size_t l,
                    std::size_t chunk) {
    const PointCloud cloud = detail::bench_cloud(n, seed);
    const DirectionSet dirs = fibonacci_directions(l);
    const FrequencyGrid freqs = frequency_grid(0.0, 12.0, m, GridMode::kLinear);
    BenchRow row;
    row.sweep = sweep;
    row.n = n;
    row.m = m;
    row.l = l;
    row.chunk = chunk;
    row.seconds = detail::time_spectrum(cloud, dirs, freqs, chunk, SpectrumEval::kDirect);
    const CostModel cm = cost_model(n, m, l, l);
    row.flops_dasft = cm.flops_dasft;
    row.flops_sh = cm.flops_sh;
    report.rows.push_back(row);
    return row.seconds;
  };

  std::vector<double> xs, ts;
  for (std::size_t n : n_list) {
    xs.push_back(static_cast<double>(n));
    ts.push_back(record("n", n, m_base, l_base, 16));
  }
  report.slope_n = detail::fit_loglog_slope(xs, ts);

  xs.clear();
  ts.clear();
  for (std::size_t m : m_list) {
    xs.push_back(static_cast<double>(m));
    ts.push_back(record("m", n_base, m, l_base, 16));
  }
  report.slope_m = detail::fit_loglog_slope(xs, ts);

  xs.clear();
  ts.clear();
  for (std::size_t l : l_list) {
    xs.push_back(static_cast<double>(l));
    ts.push_back(record("l", n_base, m_base, l, 16));
  }
  report.slope_l = detail::fit_loglog_slope(xs, ts);

  // chunked evaluation must reproduce the unchunked spectrum
  {
    const PointCloud cloud = detail::bench_cloud(n_base, seed);
    const DirectionSet dirs = fibonacci_directions(l_base);
    const FrequencyGrid freqs = frequency_grid(0.0, 12.0, m_base, GridMode::kLinear);
    const SpectrumGrid ref = spherical_fourier(cloud, dirs, freqs, dirs.size());
    for (std::size_t chunk : chunk_list) {
      const SpectrumGrid got = spherical_fourier(cloud, dirs, freqs, chunk);
      for (std::size_t i = 0; i < ref.energies.size(); ++i) {
        const double diff = std::abs(ref.energies.data()[i] - got.energies.data()[i]);
        if (diff > 1e-12 * std::max(1.0, std::abs(ref.energies.data()[i])))
          report.chunks_consistent = false;
      }
    }
  }
  return report;
}

inline void write_bench_csv(std::ostream& out, const BenchReport& report) {
  out << "sweep,n,m,l,chunk_size,seconds,flops_dasft,flops_sh\n";
  for (const BenchRow& r : report.rows)
    out << r.sweep << ',' << r.n << ',' << r.m << ',' << r.l << ',' << r.chunk << ','
        << format_double(r.seconds) << ',' << r.flops_dasft << ',' << r.flops_sh << '\n';
}

}  // namespace dipv

// Command-line front end: descriptor export, rotation-invariance
// verification, scaling benchmarks and the synthetic-shape experiment
// driver.
//
// Exit codes: 0 success, 1 verification failure, 2 I/O error, 64 usage
// error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dipv/bench.hpp"
#include "dipv/config_json.hpp"
#include "dipv/io.hpp"
#include "dipv/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFailed = 1;
constexpr int kExitIo = 2;
constexpr int kExitUsage = 64;

struct SpectrumOptions {
  std::size_t n_dir = 36;
  double f_min = 0.0;
  double f_max = 12.0;
  std::size_t m = 32;
  std::string grid = "linear";
  std::size_t chunk_size = 16;
};

void add_spectrum_options(CLI::App* cmd, SpectrumOptions& opt) {
  cmd->add_option("--n-dir", opt.n_dir, "sphere directions (Fibonacci lattice)");
  cmd->add_option("--f-min", opt.f_min, "lowest frequency modulus");
  cmd->add_option("--f-max", opt.f_max, "highest frequency modulus");
  cmd->add_option("--m", opt.m, "frequency samples");
  cmd->add_option("--grid", opt.grid, "frequency spacing")
      ->check(CLI::IsMember({"linear", "log"}));
  cmd->add_option("--chunk-size", opt.chunk_size, "direction chunk size");
}

int run_descriptor(const std::string& input, const std::string& out_path,
                   const SpectrumOptions& opt) {
  const dipv::PointCloud cloud = dipv::center_and_scale(dipv::read_cloud(input));
  const dipv::DirectionSet dirs = dipv::fibonacci_directions(opt.n_dir);
  const dipv::FrequencyGrid freqs = dipv::frequency_grid(
      opt.f_min, opt.f_max, opt.m, dipv::parse_grid_mode(opt.grid));
  const dipv::SpectrumGrid grid = dipv::spherical_fourier(cloud, dirs, freqs, opt.chunk_size);
  dipv::write_spectrum_csv(out_path, grid, dirs, freqs);
  std::cout << "wrote " << grid.radii() << " x " << grid.directions() << " spectrum to "
            << out_path << "\n";
  return kExitOk;
}

int run_verify(const std::string& input, std::size_t trials, std::uint64_t seed, std::size_t k,
               const SpectrumOptions& opt, bool inject_invalid) {
  if (trials == 0) {
    std::cout << "warning: trials=0, nothing verified (vacuous pass)\n";
    return kExitOk;
  }
  const dipv::PointCloud cloud = dipv::center_and_scale(dipv::read_cloud(input));
  if (k >= cloud.size()) throw dipv::InvalidInput("--k must be below the point count");

  const dipv::KnnGraph graph = dipv::build_knn(cloud, k);
  const dipv::LocalInvariantTensor inv_base = dipv::local_dot_products(cloud, graph, true);
  const dipv::DirectionSet dirs = dipv::fibonacci_directions(opt.n_dir);
  const dipv::FrequencyGrid freqs = dipv::frequency_grid(
      opt.f_min, opt.f_max, opt.m, dipv::parse_grid_mode(opt.grid));
  const dipv::SpectrumGrid base = dipv::spherical_fourier(cloud, dirs, freqs, opt.chunk_size);
  const auto base_inputs = dipv::dasft_inputs(base, true);

  const dipv::ErrorReport report = dipv::error_report(base, opt.n_dir);
  double bound = 0.0;
  for (double b : report.bound_normalized)
    if (std::isfinite(b)) bound = std::max(bound, b);
  const double g_tolerance = 3.0 * bound;

  dipv::Rng rng(dipv::RngSeed{seed});
  double worst_inv = 0.0, worst_g = 0.0;
  std::printf("%-8s %-14s %-14s\n", "trial", "max|dInv|", "max|dGhat|");
  for (std::size_t t = 0; t < trials; ++t) {
    dipv::Rotation rot = dipv::random_rotation_so3(rng);
    if (inject_invalid && t == 0) rot(0, 0) += 0.05;  // negative control
    const dipv::PointCloud rotated = dipv::apply_rotation(cloud, rot);

    const dipv::KnnGraph graph_rot = dipv::build_knn(rotated, k);
    const dipv::LocalInvariantTensor inv_rot = dipv::local_dot_products(rotated, graph_rot, true);
    double dev_inv = 0.0;
    for (std::size_t i = 0; i < inv_base.values.size(); ++i)
      dev_inv = std::max(dev_inv, std::abs(inv_base.values[i] - inv_rot.values[i]));

    const dipv::SpectrumGrid spec =
        dipv::spherical_fourier(rotated, dirs, freqs, opt.chunk_size);
    const auto rot_inputs = dipv::dasft_inputs(spec, true);
    double dev_g = 0.0;
    for (std::size_t i = 0; i < rot_inputs.g_hat.size(); ++i)
      dev_g = std::max(dev_g, std::abs(rot_inputs.g_hat[i] - base_inputs.g_hat[i]));

    std::printf("%-8zu %-14.3e %-14.3e\n", t, dev_inv, dev_g);
    worst_inv = std::max(worst_inv, dev_inv);
    worst_g = std::max(worst_g, dev_g);
  }

  const bool inv_ok = worst_inv <= 1e-9;
  const bool g_ok = worst_g <= g_tolerance;
  std::printf("local invariants: max deviation %.3e (limit 1.0e-09) -> %s\n", worst_inv,
              inv_ok ? "pass" : "FAIL");
  std::printf("normalized G:     max deviation %.3e (3x sampling bound %.3e) -> %s\n", worst_g,
              g_tolerance, g_ok ? "pass" : "FAIL");
  return (inv_ok && g_ok) ? kExitOk : kExitVerifyFailed;
}

int run_bench(const std::vector<std::size_t>& n_list, const std::vector<std::size_t>& m_list,
              const std::vector<std::size_t>& l_list, const std::vector<std::size_t>& chunk_list,
              std::uint64_t seed, const std::string& out_path) {
  const dipv::BenchReport report = dipv::run_bench(n_list, m_list, l_list, chunk_list, seed);
  if (out_path.empty()) {
    dipv::write_bench_csv(std::cout, report);
  } else {
    std::ofstream out(out_path);
    if (!out) throw dipv::IoError("cannot write " + out_path);
    dipv::write_bench_csv(out, report);
  }
  std::printf("log-log slopes: n %.3f, m %.3f, l %.3f (linear scaling band 0.8..1.2)\n",
              report.slope_n, report.slope_m, report.slope_l);
  std::printf("chunk sweep spectra identical: %s\n", report.chunks_consistent ? "yes" : "NO");
  return kExitOk;
}

int run_experiment(const std::string& config_path, const std::string& out_dir,
                   const CLI::App* cmd, dipv::ExperimentConfig cfg) {
  (void)config_path;
  std::filesystem::create_directories(out_dir);

  const auto train_set = dipv::generate_dataset(cfg.n_train_per_class, cfg.points_per_cloud,
                                                cfg.noise_sigma,
                                                dipv::RngSeed{dipv::derive_seed(cfg.seed, 11)});
  const auto test_set = dipv::generate_dataset(cfg.n_test_per_class, cfg.points_per_cloud,
                                               cfg.noise_sigma,
                                               dipv::RngSeed{dipv::derive_seed(cfg.seed, 12)});
  std::cout << "training " << dipv::fusion_name(cfg.fusion) << " head, protocol "
            << dipv::protocol_name(cfg.protocol) << ", " << train_set.size() << " train / "
            << test_set.size() << " test samples\n";

  const dipv::TrainState state = dipv::train(cfg, train_set);
  const dipv::Metrics metrics = dipv::evaluate(state, cfg, test_set);

  nlohmann::json out = dipv::metrics_to_json(metrics);
  out["config"] = dipv::experiment_config_to_json(cfg);
  const std::string metrics_path = out_dir + "/metrics.json";
  std::ofstream mj(metrics_path);
  if (!mj) throw dipv::IoError("cannot write " + metrics_path);
  mj << out.dump(2) << "\n";
  dipv::write_confusion_csv(out_dir + "/confusion.csv", metrics);
  dipv::save_checkpoint(out_dir + "/params.bin", state.params);

  std::printf("test accuracy: %.4f\n", metrics.overall_accuracy);
  std::cout << "wrote " << metrics_path << ", confusion.csv, params.bin\n";
  (void)cmd;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rotation-invariant point cloud descriptors (local dot products + spherical spectra)"};
  app.require_subcommand(1);

  // descriptor
  auto* cmd_desc = app.add_subcommand("descriptor", "export the energy spectrum and G profile as CSV");
  std::string desc_input, desc_out;
  SpectrumOptions desc_opt;
  cmd_desc->add_option("--input", desc_input, "point cloud file (.xyz/.off/.ply)")->required();
  cmd_desc->add_option("--out", desc_out, "output CSV path")->required();
  add_spectrum_options(cmd_desc, desc_opt);

  // verify
  auto* cmd_ver = app.add_subcommand("verify", "check rotation invariance on random SO(3) draws");
  std::string ver_input;
  std::size_t ver_trials = 20;
  std::uint64_t ver_seed = 1;
  std::size_t ver_k = 12;
  bool ver_inject = false;
  SpectrumOptions ver_opt;
  cmd_ver->add_option("--input", ver_input, "point cloud file (.xyz/.off/.ply)")->required();
  cmd_ver->add_option("--trials", ver_trials, "number of random rotations");
  cmd_ver->add_option("--seed", ver_seed, "rotation stream seed");
  cmd_ver->add_option("--k", ver_k, "neighbors for the local invariants");
  cmd_ver->add_flag("--inject-invalid-rotation", ver_inject,
                    "self-test: corrupt the first rotation (must fail)");
  add_spectrum_options(cmd_ver, ver_opt);

  // bench
  auto* cmd_bn = app.add_subcommand("bench", "time the spectrum kernel across N/M/L sweeps");
  std::vector<std::size_t> bn_n{256, 512, 1024, 2048};
  std::vector<std::size_t> bn_m{8, 16, 32, 64};
  std::vector<std::size_t> bn_l{16, 32, 64, 128};
  std::vector<std::size_t> bn_chunk{1, 7, 16, 36};
  std::uint64_t bn_seed = 1;
  std::string bn_out;
  cmd_bn->add_option("--n-list", bn_n, "point counts")->delimiter(',');
  cmd_bn->add_option("--m-list", bn_m, "frequency counts")->delimiter(',');
  cmd_bn->add_option("--l-list", bn_l, "direction counts")->delimiter(',');
  cmd_bn->add_option("--chunk-list", bn_chunk, "chunk sizes for the consistency check")
      ->delimiter(',');
  cmd_bn->add_option("--seed", bn_seed, "cloud seed");
  cmd_bn->add_option("--out", bn_out, "CSV path (stdout when omitted)");

  // experiment
  auto* cmd_exp = app.add_subcommand("experiment", "train and evaluate on the synthetic benchmark");
  std::string exp_config, exp_out_dir = ".";
  std::string exp_protocol, exp_fusion, exp_agg, exp_grid;
  std::optional<std::uint64_t> exp_seed;
  std::optional<std::size_t> exp_k, exp_ndir, exp_m, exp_chunk;
  std::optional<double> exp_fmin, exp_fmax;
  cmd_exp->add_option("--config", exp_config, "experiment config JSON")->required();
  cmd_exp->add_option("--out-dir", exp_out_dir, "directory for metrics.json / confusion.csv");
  cmd_exp->add_option("--protocol", exp_protocol, "override: zz, zso3 or so3so3")
      ->check(CLI::IsMember({"zz", "zso3", "so3so3"}));
  cmd_exp->add_option("--fusion", exp_fusion, "override: ca, gate or concat")
      ->check(CLI::IsMember({"ca", "gate", "concat"}));
  cmd_exp->add_option("--agg", exp_agg, "override: dlp or sap")
      ->check(CLI::IsMember({"dlp", "sap"}));
  cmd_exp->add_option("--grid", exp_grid, "override: linear or log")
      ->check(CLI::IsMember({"linear", "log"}));
  cmd_exp->add_option("--seed", exp_seed, "override seed");
  cmd_exp->add_option("--k", exp_k, "override k_neighbors");
  cmd_exp->add_option("--n-dir", exp_ndir, "override n_dir");
  cmd_exp->add_option("--m", exp_m, "override frequency count");
  cmd_exp->add_option("--chunk-size", exp_chunk, "override chunk size");
  cmd_exp->add_option("--f-min", exp_fmin, "override f_min");
  cmd_exp->add_option("--f-max", exp_fmax, "override f_max");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (cmd_desc->parsed()) return run_descriptor(desc_input, desc_out, desc_opt);
    if (cmd_ver->parsed())
      return run_verify(ver_input, ver_trials, ver_seed, ver_k, ver_opt, ver_inject);
    if (cmd_bn->parsed()) return run_bench(bn_n, bn_m, bn_l, bn_chunk, bn_seed, bn_out);
    if (cmd_exp->parsed()) {
      if (!std::filesystem::exists(exp_config)) {
        std::cerr << "error: config file not found: " << exp_config << "\n";
        return kExitIo;
      }
      dipv::ExperimentConfig cfg = dipv::load_experiment_config(exp_config);
      if (!exp_protocol.empty()) cfg.protocol = dipv::parse_protocol(exp_protocol);
      if (!exp_fusion.empty()) cfg.fusion = dipv::parse_fusion(exp_fusion);
      if (!exp_agg.empty()) cfg.aggregation = dipv::parse_aggregation(exp_agg);
      if (!exp_grid.empty()) cfg.grid = dipv::parse_grid_mode(exp_grid);
      if (exp_seed) cfg.seed = *exp_seed;
      if (exp_k) cfg.k_neighbors = *exp_k;
      if (exp_ndir) cfg.n_dir = *exp_ndir;
      if (exp_m) cfg.m_freq = *exp_m;
      if (exp_chunk) cfg.chunk_size = *exp_chunk;
      if (exp_fmin) cfg.f_min = *exp_fmin;
      if (exp_fmax) cfg.f_max = *exp_fmax;
      cfg.validate();
      return run_experiment(exp_config, exp_out_dir, cmd_exp, cfg);
    }
  } catch (const dipv::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const dipv::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const dipv::InvalidInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fedafa/config.hpp"
#include "fedafa/federation.hpp"

namespace fedafa {

/// Writes a complete run directory: rounds.csv, clients.csv, class_acc.csv,
/// manifest.json, the global checkpoint and one checkpoint per client.
/// File contents depend only on the config and seed, never on the directory
/// path or the clock.
void write_run_artifacts(const ExperimentConfig& cfg, const ExperimentResult& result,
                         const std::filesystem::path& out_dir);

struct SweepRow {
    std::string param;
    double value = 0.0;
    double mean_acc = 0.0;
    double std_acc = 0.0;
    std::vector<double> per_seed_mean;
};

enum class SweepParam { lambda, drop_probability, boundary_index };

SweepParam parse_sweep_param(const std::string& name);
std::string sweep_param_name(SweepParam param);

/// Rejects out-of-range values before any run happens.
void validate_sweep_values(const ExperimentConfig& base, SweepParam param,
                           const std::vector<double>& values);

ExperimentConfig apply_sweep_value(ExperimentConfig cfg, SweepParam param, double value);

/// One full experiment per (value, seed); seeds are base_seed + 0..n-1.
/// mean_acc averages the per-run client means over seeds; std_acc is the
/// spread over seeds (the run's client spread when n_seeds is 1).
std::vector<SweepRow> run_sweep(const ExperimentConfig& base, SweepParam param,
                                const std::vector<double>& values, std::size_t n_seeds);

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);
void write_sweep_manifest(const std::vector<SweepRow>& rows, const ExperimentConfig& base,
                          const std::filesystem::path& path);

/// Re-emits sweep.csv from a sweep manifest (the `report` subcommand).
void sweep_csv_from_manifest(const std::filesystem::path& manifest_path,
                             const std::filesystem::path& csv_path);

/// Joins two run manifests into the per-class comparison CSV
/// (class_id,global_count,acc_baseline,acc_method,delta).
void write_per_class_delta_csv(const std::filesystem::path& baseline_manifest,
                               const std::filesystem::path& method_manifest,
                               const std::filesystem::path& csv_path);

} // namespace fedafa

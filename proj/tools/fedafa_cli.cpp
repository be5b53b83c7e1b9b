#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedafa/config.hpp"
#include "fedafa/data.hpp"
#include "fedafa/errors.hpp"
#include "fedafa/federation.hpp"
#include "fedafa/reporting.hpp"

namespace fs = std::filesystem;
using namespace fedafa;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;
constexpr int kExitIo = 4;
constexpr int kExitInternal = 5;

constexpr const char* kExitDoc =
    "Exit codes:\n"
    "  0  success\n"
    "  2  bad command line (unknown flag, missing subcommand)\n"
    "  3  malformed or out-of-range configuration\n"
    "  4  missing or unreadable input/output files\n"
    "  5  internal error\n";

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "experiment config file")->required();
    cmd->add_option("--seed", args.seed, "override the config seed");
}

ExperimentConfig resolve_config(const CommonArgs& args) {
    ExperimentConfig cfg = load_config_file(args.config_path);
    if (args.seed) {
        cfg.seed = *args.seed;
    }
    cfg.validate();
    return cfg;
}

std::vector<double> parse_values(const std::string& csv) {
    std::vector<double> values;
    std::string item;
    std::stringstream ss(csv);
    while (std::getline(ss, item, ',')) {
        if (item.empty()) {
            continue;
        }
        try {
            values.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw ConfigError("sweep: '" + item + "' is not a number");
        }
    }
    return values;
}

fs::path manifest_path_of(const fs::path& p, const char* name) {
    return fs::is_directory(p) ? p / name : p;
}

int cmd_gen_data(const CommonArgs& common, const std::string& out_dir) {
    const ExperimentConfig cfg = resolve_config(common);
    const std::size_t pool_per_class = cfg.samples_per_class + cfg.test_per_class;
    const Dataset pool =
        generate_synthetic(cfg.classes, cfg.dim, pool_per_class, cfg.cluster_spread, cfg.seed);
    const double test_fraction =
        static_cast<double>(cfg.test_per_class) / static_cast<double>(pool_per_class);
    const auto [train, test] = stratified_split(pool, test_fraction, cfg.seed);

    fs::create_directories(out_dir);
    save_dataset(train, fs::path(out_dir) / "train.fdst");
    save_dataset(test, fs::path(out_dir) / "test_global.fdst");
    std::cout << "wrote " << train.size() << " train and " << test.size()
              << " test samples to " << out_dir << "\n";
    return kExitOk;
}

int cmd_partition(const CommonArgs& common, const std::string& data_path,
                  const std::string& out_dir) {
    const ExperimentConfig cfg = resolve_config(common);
    const Dataset balanced = load_dataset(data_path);
    const Dataset longtailed = apply_longtail(balanced, cfg.imbalance_factor, cfg.seed);

    PartitionSpec spec;
    spec.clients = cfg.clients;
    spec.alpha = cfg.alpha;
    spec.imbalance_factor = cfg.imbalance_factor;
    spec.seed = cfg.seed;
    const std::vector<Dataset> shards = dirichlet_partition(longtailed, spec);

    fs::create_directories(out_dir);
    nlohmann::json manifest = nlohmann::json::array();
    for (std::size_t k = 0; k < shards.size(); ++k) {
        char name[32];
        std::snprintf(name, sizeof(name), "client_%02zu.fdst", k);
        save_dataset(shards[k], fs::path(out_dir) / name);
        manifest.push_back({{"client_id", k},
                            {"n_k", shards[k].size()},
                            {"class_counts", histogram(shards[k]).counts},
                            {"seed", cfg.seed},
                            {"alpha", cfg.alpha},
                            {"imbalance_factor", cfg.imbalance_factor}});
    }
    std::ofstream out(fs::path(out_dir) / "partition.json");
    if (!out) {
        throw IoError("cannot write partition manifest in " + out_dir);
    }
    out << manifest.dump(2) << "\n";
    std::cout << "wrote " << shards.size() << " client shards to " << out_dir << "\n";
    return kExitOk;
}

int cmd_train(const CommonArgs& common, const std::string& out_dir) {
    const ExperimentConfig cfg = resolve_config(common);
    const ExperimentResult result = run_experiment(cfg);
    write_run_artifacts(cfg, result, out_dir);
    std::cout << "method " << method_name(cfg.method) << " seed " << cfg.seed
              << ": mean personalized acc " << result.metrics.mean_acc << " (std "
              << result.metrics.std_acc << ") over " << result.clients.size() << " clients\n";
    return kExitOk;
}

int cmd_personalize(const CommonArgs& common, const std::string& model_path,
                    const std::string& data_dir, const std::string& global_test_path,
                    const std::string& out_dir) {
    const ExperimentConfig cfg = resolve_config(common);
    const SplitModel global = load_model(model_path);
    const Dataset global_test = load_dataset(global_test_path);

    std::vector<Dataset> shards;
    for (std::size_t k = 0;; ++k) {
        char name[32];
        std::snprintf(name, sizeof(name), "client_%02zu.fdst", k);
        const fs::path shard_path = fs::path(data_dir) / name;
        if (!fs::exists(shard_path)) {
            break;
        }
        shards.push_back(load_dataset(shard_path));
    }
    if (shards.empty()) {
        throw IoError("no client_XX.fdst shards found in " + data_dir);
    }

    const std::vector<ClientState> clients = make_clients(std::move(shards), cfg.seed);
    const PersonalizationResult pers = personalize_all(cfg, clients, global, global_test);

    ExperimentResult result;
    result.global_model = global;
    result.global_test = global_test;
    result.personalized = pers.personalized;
    result.metrics = pers.metrics;
    result.fedafa_fallback_epochs = pers.fedafa_fallback_epochs;
    result.global_train_class_counts.assign(global_test.class_count, 0);
    for (const ClientState& c : clients) {
        for (std::size_t cls = 0; cls < c.hist.counts.size(); ++cls) {
            result.global_train_class_counts[cls] += c.hist.counts[cls];
        }
    }
    result.clients = clients;
    write_run_artifacts(cfg, result, out_dir);
    std::cout << "personalized " << clients.size() << " clients with "
              << method_name(cfg.method) << ": mean acc " << pers.metrics.mean_acc << "\n";
    return kExitOk;
}

int cmd_sweep(const CommonArgs& common, const std::string& param_name,
              const std::string& values_csv, std::size_t n_seeds, const std::string& out_dir) {
    const ExperimentConfig cfg = resolve_config(common);
    const SweepParam param = parse_sweep_param(param_name);
    const std::vector<double> values = parse_values(values_csv);
    validate_sweep_values(cfg, param, values);

    const std::vector<SweepRow> rows = run_sweep(cfg, param, values, n_seeds);
    fs::create_directories(out_dir);
    write_sweep_csv(rows, fs::path(out_dir) / "sweep.csv");
    write_sweep_manifest(rows, cfg, fs::path(out_dir) / "sweep_manifest.json");
    for (const SweepRow& row : rows) {
        std::cout << row.param << "=" << row.value << ": mean acc " << row.mean_acc << "\n";
    }
    return kExitOk;
}

int cmd_report(const std::string& sweep_path, const std::string& baseline_path,
               const std::string& run_path, const std::string& out_path) {
    if (!sweep_path.empty()) {
        sweep_csv_from_manifest(manifest_path_of(sweep_path, "sweep_manifest.json"), out_path);
        std::cout << "wrote " << out_path << "\n";
        return kExitOk;
    }
    if (baseline_path.empty() || run_path.empty()) {
        throw ConfigError("report: need either --sweep, or both --baseline and --run");
    }
    write_per_class_delta_csv(manifest_path_of(baseline_path, "manifest.json"),
                              manifest_path_of(run_path, "manifest.json"), out_path);
    std::cout << "wrote " << out_path << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"fedafa: personalized federated learning with adversarial feature "
                 "augmentation, at desk scale"};
    app.require_subcommand(1);
    app.footer(kExitDoc);

    CommonArgs common;
    std::string out_dir;
    std::string data_path;
    std::string model_path;
    std::string data_dir;
    std::string global_test_path;
    std::string param_name;
    std::string values_csv;
    std::size_t n_seeds = 1;
    std::string sweep_path;
    std::string baseline_path;
    std::string run_path;
    std::string out_path = "report.csv";

    CLI::App* gen = app.add_subcommand("gen-data", "synthesize the balanced dataset files");
    add_common(gen, common);
    gen->add_option("--out-dir", out_dir, "output directory")->required();

    CLI::App* part =
        app.add_subcommand("partition", "long-tail and Dirichlet-partition a dataset file");
    add_common(part, common);
    part->add_option("--data", data_path, "balanced dataset (train.fdst)")->required();
    part->add_option("--out-dir", out_dir, "output directory")->required();

    CLI::App* train = app.add_subcommand("train", "run the full federated experiment");
    add_common(train, common);
    train->add_option("--out-dir", out_dir, "run directory")->required();

    CLI::App* pers = app.add_subcommand(
        "personalize", "personalize a trained global model on partitioned shards");
    add_common(pers, common);
    pers->add_option("--model", model_path, "global model checkpoint (.fafa)")->required();
    pers->add_option("--data-dir", data_dir, "directory with client_XX.fdst shards")->required();
    pers->add_option("--global-test", global_test_path, "balanced test set (.fdst)")->required();
    pers->add_option("--out-dir", out_dir, "run directory")->required();

    CLI::App* sweep = app.add_subcommand("sweep", "run one experiment per parameter value");
    add_common(sweep, common);
    sweep->add_option("--param", param_name, "lambda, p_d, or boundary_index")->required();
    sweep->add_option("--values", values_csv, "comma-separated values")->required();
    sweep->add_option("--seeds", n_seeds, "seeds per value (base seed + 0..n-1)");
    sweep->add_option("--out-dir", out_dir, "output directory")->required();

    CLI::App* report = app.add_subcommand("report", "emit plot-ready CSVs from run manifests");
    report->add_option("--sweep", sweep_path, "sweep directory or sweep_manifest.json");
    report->add_option("--baseline", baseline_path, "baseline run directory or manifest.json");
    report->add_option("--run", run_path, "method run directory or manifest.json");
    report->add_option("--out", out_path, "output CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(common, out_dir);
        if (part->parsed()) return cmd_partition(common, data_path, out_dir);
        if (train->parsed()) return cmd_train(common, out_dir);
        if (pers->parsed()) {
            return cmd_personalize(common, model_path, data_dir, global_test_path, out_dir);
        }
        if (sweep->parsed()) {
            return cmd_sweep(common, param_name, values_csv, n_seeds, out_dir);
        }
        if (report->parsed()) {
            return cmd_report(sweep_path, baseline_path, run_path, out_path);
        }
        std::cerr << "error: no subcommand\n";
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInternal;
    }
}

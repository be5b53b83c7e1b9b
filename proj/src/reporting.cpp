#include "fedafa/reporting.hpp"

#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "fedafa/errors.hpp"

namespace fedafa {

namespace {

using nlohmann::json;

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    return out;
}

json load_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw IoError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

} // namespace

void write_run_artifacts(const ExperimentConfig& cfg, const ExperimentResult& result,
                         const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);

    {
        auto out = open_out(out_dir / "rounds.csv");
        out << "round,mean_acc,std_acc\n";
        for (const RoundReport& r : result.rounds) {
            out << r.round << "," << fmt(r.mean_acc) << "," << fmt(r.std_acc) << "\n";
        }
    }
    {
        auto out = open_out(out_dir / "clients.csv");
        out << "client_id,n_k,acc\n";
        for (std::size_t k = 0; k < result.metrics.per_client_acc.size(); ++k) {
            out << k << "," << result.metrics.client_sizes[k] << ","
                << fmt(result.metrics.per_client_acc[k]) << "\n";
        }
    }
    {
        auto out = open_out(out_dir / "class_acc.csv");
        out << "class_id,global_count,acc\n";
        for (std::size_t c = 0; c < result.metrics.per_class_acc.size(); ++c) {
            out << c << "," << result.global_train_class_counts[c] << ","
                << fmt(result.metrics.per_class_acc[c]) << "\n";
        }
    }

    json manifest;
    manifest["config"] = serialize_config(cfg);
    manifest["seed"] = cfg.seed;
    manifest["method"] = method_name(cfg.method);
    manifest["round_reached"] = cfg.rounds;
    manifest["mean_acc"] = result.metrics.mean_acc;
    manifest["std_acc"] = result.metrics.std_acc;
    manifest["per_client_acc"] = result.metrics.per_client_acc;
    manifest["client_sizes"] = result.metrics.client_sizes;
    manifest["per_class_acc"] = result.metrics.per_class_acc;
    manifest["global_train_class_counts"] = result.global_train_class_counts;
    manifest["fedafa_fallback_epochs"] = result.fedafa_fallback_epochs;
    {
        auto out = open_out(out_dir / "manifest.json");
        out << manifest.dump(2) << "\n";
    }

    for (std::size_t k = 0; k < result.aug_traces.size(); ++k) {
        if (result.aug_traces[k].empty()) {
            continue;
        }
        char name[40];
        std::snprintf(name, sizeof(name), "aug_debug_client_%02zu.jsonl", k);
        auto out = open_out(out_dir / name);
        for (const AttemptRecord& rec : result.aug_traces[k]) {
            json line{{"target_class", rec.target_class},
                      {"source_class", rec.source_class},
                      {"iterations_used", rec.iterations_used},
                      {"confidence", rec.confidence},
                      {"accepted", rec.accepted}};
            out << line.dump() << "\n";
        }
    }

    save_model(result.global_model, out_dir / "global.fafa");
    for (std::size_t k = 0; k < result.personalized.size(); ++k) {
        char name[32];
        std::snprintf(name, sizeof(name), "client_%02zu.fafa", k);
        save_model(result.personalized[k], out_dir / name);
    }
}

SweepParam parse_sweep_param(const std::string& name) {
    if (name == "lambda") return SweepParam::lambda;
    if (name == "p_d" || name == "drop_probability") return SweepParam::drop_probability;
    if (name == "boundary_index") return SweepParam::boundary_index;
    throw ConfigError("unknown sweep parameter '" + name +
                      "' (expected lambda, p_d, boundary_index)");
}

std::string sweep_param_name(SweepParam param) {
    switch (param) {
    case SweepParam::lambda: return "lambda";
    case SweepParam::drop_probability: return "p_d";
    case SweepParam::boundary_index: return "boundary_index";
    }
    throw ConfigError("sweep_param_name: unknown parameter");
}

void validate_sweep_values(const ExperimentConfig& base, SweepParam param,
                           const std::vector<double>& values) {
    if (values.empty()) {
        throw ConfigError("sweep: empty value list");
    }
    for (double v : values) {
        ExperimentConfig probe = apply_sweep_value(base, param, v);
        probe.validate(); // throws on the first bad value, before any run
    }
}

ExperimentConfig apply_sweep_value(ExperimentConfig cfg, SweepParam param, double value) {
    switch (param) {
    case SweepParam::lambda:
        cfg.lambda = value;
        break;
    case SweepParam::drop_probability:
        cfg.drop_probability = value;
        break;
    case SweepParam::boundary_index: {
        if (value < 0.0 || value != static_cast<double>(static_cast<std::size_t>(value))) {
            throw ConfigError("sweep: boundary_index values must be non-negative integers");
        }
        cfg.boundary_index = static_cast<std::size_t>(value);
        break;
    }
    }
    return cfg;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& base, SweepParam param,
                                const std::vector<double>& values, std::size_t n_seeds) {
    if (n_seeds == 0) {
        throw ConfigError("sweep: need at least one seed");
    }
    validate_sweep_values(base, param, values);

    std::vector<SweepRow> rows;
    rows.reserve(values.size());
    for (double value : values) {
        SweepRow row;
        row.param = sweep_param_name(param);
        row.value = value;
        for (std::size_t s = 0; s < n_seeds; ++s) {
            ExperimentConfig cfg = apply_sweep_value(base, param, value);
            cfg.seed = base.seed + s;
            const ExperimentResult result = run_experiment(cfg);
            row.per_seed_mean.push_back(result.metrics.mean_acc);
            if (n_seeds == 1) {
                row.std_acc = result.metrics.std_acc;
            }
        }
        row.mean_acc = mean(row.per_seed_mean);
        if (n_seeds > 1) {
            row.std_acc = population_std(row.per_seed_mean);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "param,value,mean_acc,std_acc\n";
    for (const SweepRow& row : rows) {
        out << row.param << "," << fmt(row.value) << "," << fmt(row.mean_acc) << ","
            << fmt(row.std_acc) << "\n";
    }
}

void write_sweep_manifest(const std::vector<SweepRow>& rows, const ExperimentConfig& base,
                          const std::filesystem::path& path) {
    json manifest;
    manifest["config"] = serialize_config(base);
    manifest["seed"] = base.seed;
    json points = json::array();
    for (const SweepRow& row : rows) {
        points.push_back({{"param", row.param},
                          {"value", row.value},
                          {"mean_acc", row.mean_acc},
                          {"std_acc", row.std_acc},
                          {"per_seed_mean", row.per_seed_mean}});
    }
    manifest["points"] = points;
    auto out = open_out(path);
    out << manifest.dump(2) << "\n";
}

void sweep_csv_from_manifest(const std::filesystem::path& manifest_path,
                             const std::filesystem::path& csv_path) {
    const json manifest = load_json(manifest_path);
    if (!manifest.contains("points")) {
        throw IoError(manifest_path.string() + " is not a sweep manifest (no 'points')");
    }
    std::vector<SweepRow> rows;
    for (const auto& point : manifest["points"]) {
        SweepRow row;
        row.param = point.at("param").get<std::string>();
        row.value = point.at("value").get<double>();
        row.mean_acc = point.at("mean_acc").get<double>();
        row.std_acc = point.at("std_acc").get<double>();
        rows.push_back(std::move(row));
    }
    write_sweep_csv(rows, csv_path);
}

void write_per_class_delta_csv(const std::filesystem::path& baseline_manifest,
                               const std::filesystem::path& method_manifest,
                               const std::filesystem::path& csv_path) {
    const json base = load_json(baseline_manifest);
    const json method = load_json(method_manifest);
    const auto base_acc = base.at("per_class_acc").get<std::vector<double>>();
    const auto method_acc = method.at("per_class_acc").get<std::vector<double>>();
    const auto counts = method.at("global_train_class_counts").get<std::vector<std::size_t>>();
    if (base_acc.size() != method_acc.size()) {
        throw IoError("per-class vectors disagree between the two runs (" +
                      std::to_string(base_acc.size()) + " vs " +
                      std::to_string(method_acc.size()) + " classes)");
    }
    auto out = open_out(csv_path);
    out << "class_id,global_count,acc_baseline,acc_method,delta\n";
    for (std::size_t c = 0; c < base_acc.size(); ++c) {
        out << c << "," << counts[c] << "," << fmt(base_acc[c]) << "," << fmt(method_acc[c])
            << "," << fmt(method_acc[c] - base_acc[c]) << "\n";
    }
}

} // namespace fedafa

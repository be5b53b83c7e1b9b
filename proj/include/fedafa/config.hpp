#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedafa/augmentation.hpp"

namespace fedafa {

enum class Method { local, fedavg_ft, fedavg_ros, fedafa, fedafa_loc };

std::string method_name(Method m);
Method parse_method(const std::string& name);

/// Full experiment configuration. The file format is flat key=value lines
/// grouped under [section] headers; see serialize_config for the canonical
/// layout. Parsing is strict: unknown sections or keys are rejected.
struct ExperimentConfig {
    // [data]
    std::size_t classes = 8;
    std::size_t dim = 16;
    std::size_t samples_per_class = 600; // balanced per-class count before the long tail
    std::size_t test_per_class = 100;    // balanced global test set
    double cluster_spread = 0.3;
    double imbalance_factor = 100.0;

    // [partition]
    std::size_t clients = 10;
    double alpha = 0.2;
    std::uint64_t seed = 1;

    // [model]
    std::vector<std::size_t> hidden = {64, 32};
    std::size_t boundary_index = 1;

    // [train]
    Method method = Method::fedafa;
    std::size_t rounds = 60;
    std::size_t clients_per_round = 5;
    std::size_t local_epochs = 5;
    std::size_t batch_size = 64;
    double learning_rate = 0.005;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::size_t threads = 1;
    std::size_t eval_every = 5;

    // [personalize]
    std::size_t personalize_epochs = 10;
    std::size_t personalize_batch_size = 8;
    double personalize_lr = 0.005;
    // From-scratch budget for the no-communication baseline; matches the
    // personalization budget so the methods differ only in their starting
    // knowledge.
    std::size_t local_baseline_epochs = 10;
    // Experimental: re-personalize participants every round and let their
    // classifier feed the next round's local training. No correctness claim.
    bool per_round = false;

    // [fedafa]
    double lambda = 0.7;
    double drop_probability = 0.5;
    std::size_t perturb_iterations = 10;
    double step_size_scale = 0.2;
    std::size_t max_attempts_per_slot = 5;
    AugmentationConfig::PerturbClassifier perturb_classifier =
        AugmentationConfig::PerturbClassifier::personalized;
    bool aug_debug_dump = false; // per-client JSONL of perturbation attempts

    std::vector<std::size_t> layer_sizes() const;
    AugmentationConfig augmentation() const;

    /// Throws ConfigError on any out-of-range field.
    void validate() const;

    bool operator==(const ExperimentConfig&) const = default;
};

ExperimentConfig parse_config(const std::string& text);
std::string serialize_config(const ExperimentConfig& cfg);

/// The desk-scale reference configuration (configs/paper_mini.ini ships the
/// same values).
ExperimentConfig paper_mini_config();

/// Reads and validates a config file. The FEDAFA_SEED environment variable,
/// when set, overrides the file's seed.
ExperimentConfig load_config_file(const std::filesystem::path& path);

} // namespace fedafa

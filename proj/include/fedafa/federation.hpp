#pragma once

#include <cstdint>
#include <vector>

#include "fedafa/augmentation.hpp"
#include "fedafa/config.hpp"
#include "fedafa/data.hpp"
#include "fedafa/metrics.hpp"
#include "fedafa/model.hpp"

namespace fedafa {

struct ClientState {
    int id = 0;
    Dataset train;
    Dataset test; // held-out local split; may be empty for very small shards
    ClassHistogram hist;
};

struct ClientUpdate {
    LayerStack params;
    std::size_t sample_count = 0;
};

/// Copies the global parameters and runs local_epochs of mini-batch SGD on
/// the client's raw shard. Momentum buffers start fresh each call.
ClientUpdate client_update(const Dataset& shard, const SplitModel& global,
                           std::size_t local_epochs, std::size_t batch_size,
                           const SgdOptions& opt, std::uint64_t seed);

/// Sample-count-weighted federated average. Sums in argument order.
LayerStack aggregate(const std::vector<ClientUpdate>& updates);

/// FedAvg-FT: fine-tunes the full global model on the client's raw shard.
SplitModel personalize_fedavg_ft(const ClientState& client, const SplitModel& global,
                                 const SgdOptions& opt, std::size_t epochs,
                                 std::size_t batch_size, std::uint64_t seed);

/// Random oversampling to local balance, then the FedAvg-FT flow.
SplitModel personalize_ros(const ClientState& client, const SplitModel& global,
                           const SgdOptions& opt, std::size_t epochs, std::size_t batch_size,
                           std::uint64_t seed);

/// Oversamples every class up to the local maximum count (with replacement).
Dataset oversample_to_balance(const Dataset& ds, std::uint64_t seed);

struct FedafaOutcome {
    LayerStack classifier;            // personalized head v_k
    std::size_t fallback_epochs = 0;  // epochs trained on the raw balanced loss alone
    std::size_t generated_total = 0;  // accepted generated features across epochs
};

/// FedAFA personalization: the classifier head is re-trained on the
/// lambda-weighted mix of (a) class-balanced batches of generated features
/// and (b) class-balanced raw batches pushed through the frozen global
/// extractor. Only the head is updated. With use_local_extractor set
/// (the FedAFA_Loc ablation) the generated features are extracted by a
/// locally fine-tuned copy of the model instead of the global one.
///
/// Randomness is split into separate streams for augmentation, raw batches
/// and feature batches, so a lambda of 0 consumes exactly the same raw-batch
/// stream as a run without any augmentation.
FedafaOutcome personalize_fedafa(const ClientState& client, const SplitModel& global,
                                 const AugmentationConfig& aug, double lambda,
                                 std::size_t epochs, std::size_t batch_size,
                                 const SgdOptions& opt, bool use_local_extractor,
                                 std::uint64_t seed,
                                 std::vector<AttemptRecord>* trace = nullptr);

/// Head-only training on class-balanced raw batches, with no augmentation
/// code in the path. Matches personalize_fedafa at lambda = 0 bit for bit.
LayerStack personalize_classifier_balanced(const ClientState& client, const SplitModel& global,
                                           const SgdOptions& opt, std::size_t epochs,
                                           std::size_t batch_size, std::uint64_t seed);

/// Gradients of lambda * L_gen + (1 - lambda) * L_ori w.r.t. the classifier.
/// gen_* may be null when lambda is 0, ori_* when lambda is 1. Features are
/// classifier-space inputs in both branches.
LayerStack afa_gradients(const LayerStack& classifier, const Tensor* gen_features,
                         const Tensor* gen_labels, const Tensor* ori_features,
                         const Tensor* ori_labels, double lambda, double* loss_out = nullptr);

struct RoundReport {
    std::size_t round = 0;
    std::vector<int> participants;
    double mean_acc = 0.0; // current global model on client test shards
    double std_acc = 0.0;
    std::vector<double> per_class_acc; // current global model on the global test set
    std::vector<double> per_client_acc;
    double seconds = 0.0;
};

struct ExperimentResult {
    std::vector<RoundReport> rounds;
    std::vector<std::vector<AttemptRecord>> aug_traces; // per client, when enabled
    SplitModel global_model;
    std::vector<SplitModel> personalized; // one per client
    std::vector<ClientState> clients;
    MetricsTable metrics;
    Dataset global_test;
    std::vector<std::size_t> global_train_class_counts; // after the long tail
    std::size_t fedafa_fallback_epochs = 0;
};

/// Full pipeline: synthesize data, long-tail it, partition, run federated
/// rounds, personalize every client with the configured method, evaluate.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Personalization + evaluation for prepared clients and a trained global
/// model (the tail of run_experiment; also what the `personalize` CLI
/// subcommand drives).
struct PersonalizationResult {
    std::vector<SplitModel> personalized;
    MetricsTable metrics;
    std::size_t fedafa_fallback_epochs = 0;
    std::vector<std::vector<AttemptRecord>> aug_traces; // per client, when enabled
};
PersonalizationResult personalize_all(const ExperimentConfig& cfg,
                                      const std::vector<ClientState>& clients,
                                      const SplitModel& global, const Dataset& global_test);

/// Builds client states from shards: a per-class 20% held-out test split.
/// Clients with at least two samples always get a non-empty test shard.
std::vector<ClientState> make_clients(std::vector<Dataset> shards, std::uint64_t seed);

} // namespace fedafa

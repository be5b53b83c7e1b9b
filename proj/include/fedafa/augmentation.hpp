#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fedafa/data.hpp"
#include "fedafa/model.hpp"
#include "fedafa/rng.hpp"
#include "fedafa/tensor.hpp"

namespace fedafa {

struct AugmentationConfig {
    double drop_probability = 0.5;       // p_d, in (0, 1)
    std::size_t iterations = 10;         // perturbation steps T
    double step_size_scale = 0.1;        // step = scale * mean local feature norm
    std::size_t max_attempts_per_slot = 5;

    enum class PerturbClassifier { personalized, global };
    PerturbClassifier perturb_classifier = PerturbClassifier::personalized;

    void validate() const;
};

/// Picks the source majority class for a target minority class: weight of
/// class s is max(0, n_s - n_t); classes at or below the target count are
/// never chosen. Returns nullopt when no class outnumbers the target.
std::optional<int> select_source_class(int target_class,
                                       const std::vector<std::size_t>& class_counts, Rng& rng);

struct PerturbParams {
    std::size_t iterations = 10;
    double step_size = 0.1; // absolute step magnitude
};

struct PerturbResult {
    std::vector<double> feature;
    double confidence = 0.0;       // softmax probability of the target class
    bool degenerate = false;       // zero gradient before the first step
    std::size_t iterations_used = 0;
    std::vector<double> delta_norms; // L2 norm of each applied direction (pre-scaling)
};

/// Moves a feature towards the target class by iteratively adding the
/// negative gradient of the target-class loss, normalized to unit L2 norm,
/// scaled by step_size. Classifier parameters are never modified. Iteration
/// halts early on an exactly zero gradient.
PerturbResult perturb_to_target(std::span<const double> source_feature, int target_class,
                                std::span<const DenseLayer> classifier,
                                const PerturbParams& params);

enum class Provenance { generated, source };

struct FeatureEntry {
    std::vector<double> feature;
    int label = 0;
    double confidence = 0.0;
    Provenance provenance = Provenance::generated;
};

struct GeneratedFeatureSet {
    std::size_t feature_dim = 0;
    std::size_t class_count = 0;
    std::vector<FeatureEntry> entries;
    std::vector<std::size_t> class_counts;  // entries per label
    std::vector<std::size_t> quota;         // generated features wanted per class
    std::vector<std::size_t> filled;        // generated features accepted per class

    bool empty() const { return entries.empty(); }
    std::size_t underfilled_classes() const;
};

/// One record per perturbation attempt, for the optional debug dump.
struct AttemptRecord {
    int target_class = 0;
    int source_class = 0;
    std::size_t iterations_used = 0;
    double confidence = 0.0;
    bool accepted = false;
};

/// Builds the generated feature set for one client: tops every local class
/// up to the local maximum count with features perturbed from majority-class
/// samples, keeping only those whose target-class confidence exceeds the
/// drop probability. Accepted entries carry both the generated feature and
/// its source feature.
///
/// Each target class consumes its own rng stream derived from `rng`, so the
/// attempt schedule of one class is unaffected by the accept/reject pattern
/// of another.
GeneratedFeatureSet augment_client(const Dataset& local, std::span<const DenseLayer> extractor,
                                   std::span<const DenseLayer> classifier,
                                   const AugmentationConfig& config, Rng& rng,
                                   std::vector<AttemptRecord>* trace = nullptr);

/// Class-balanced batches over a generated feature set; features go straight
/// into the classifier.
class FeatureBatchStream {
public:
    FeatureBatchStream(const GeneratedFeatureSet& set, std::uint64_t seed);

    struct Batch {
        Tensor features; // n x feature_dim
        Tensor labels_one_hot;
    };
    Batch next(std::size_t batch_size);

private:
    const GeneratedFeatureSet& set_;
    std::vector<std::int32_t> labels_;
    BalancedIndexSampler sampler_;
};

} // namespace fedafa

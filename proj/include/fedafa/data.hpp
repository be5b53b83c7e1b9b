#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "fedafa/rng.hpp"
#include "fedafa/tensor.hpp"

namespace fedafa {

/// Labelled samples. Features are float32 row-major, matching the on-disk
/// format, so a save/load round trip is bit exact.
struct Dataset {
    std::size_t dim = 0;
    std::size_t class_count = 0;
    std::vector<float> features; // size() * dim
    std::vector<std::int32_t> labels;

    std::size_t size() const { return labels.size(); }
    std::span<const float> row(std::size_t i) const {
        return {features.data() + i * dim, dim};
    }
};

struct ClassHistogram {
    std::vector<std::size_t> counts;

    std::size_t total() const;
    std::size_t max_count() const;
    /// Count of the largest class over the smallest non-empty class.
    double measured_imbalance() const;
};

ClassHistogram histogram(const Dataset& ds);

struct PartitionSpec {
    std::size_t clients = 1;        // K
    double alpha = 0.5;             // Dirichlet concentration
    double imbalance_factor = 1.0;  // >= 1
    std::uint64_t seed = 0;
};

/// C Gaussian clusters with unit-sphere means, n_per_class samples each.
Dataset generate_synthetic(std::size_t class_count, std::size_t dim, std::size_t n_per_class,
                           double cluster_spread, std::uint64_t seed);

/// Exponential decay: class j keeps round(rho^j * n_c) samples with
/// rho = imbalance_factor^(-1/(C-1)). Input must be balanced. Kept samples
/// are a seeded random subset; original row order is preserved.
Dataset apply_longtail(const Dataset& ds, double imbalance_factor, std::uint64_t seed);

/// Per class, splits samples across clients by proportions drawn from
/// Dirichlet(alpha * 1_K) using largest-remainder rounding. The union of the
/// shards equals the input exactly. Re-draws (up to 100 times) if any client
/// would end up empty.
std::vector<Dataset> dirichlet_partition(const Dataset& ds, const PartitionSpec& spec);

/// Per-class split into (train, test); each class contributes
/// round(test_fraction * count) test samples, chosen by seeded shuffle.
std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, double test_fraction,
                                             std::uint64_t seed);

/// Select rows by index into a new dataset.
Dataset take_rows(const Dataset& ds, std::span<const std::size_t> indices);

/// Class-balanced sampling with replacement over the classes present in a
/// label list: pick a class uniformly, then a member uniformly.
class BalancedIndexSampler {
public:
    BalancedIndexSampler(std::span<const std::int32_t> labels, std::size_t class_count,
                         std::uint64_t seed);

    std::size_t next();
    std::vector<std::size_t> next_batch(std::size_t batch_size);

    std::size_t present_class_count() const { return by_class_.size(); }

private:
    std::vector<std::vector<std::size_t>> by_class_; // present classes only
    Rng rng_;
};

/// Class-balanced batches of raw samples (the balanced view of a client's
/// local dataset).
class BalancedBatchStream {
public:
    BalancedBatchStream(const Dataset& ds, std::uint64_t seed);

    struct Batch {
        Tensor features; // n x dim, doubles
        Tensor labels_one_hot;
        std::vector<int> labels;
    };
    Batch next(std::size_t batch_size);

private:
    const Dataset& ds_;
    BalancedIndexSampler sampler_;
};

/// Batch assembly helpers.
Tensor features_tensor(const Dataset& ds, std::span<const std::size_t> indices);
Tensor one_hot_tensor(const Dataset& ds, std::span<const std::size_t> indices);

/// Binary dataset file: "FDST" magic, u32 version=1, u32 n, u32 d, u32 C,
/// n*d little-endian float32 features row-major, n u32 labels.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

} // namespace fedafa

#pragma once

#include <vector>

#include "fedafa/data.hpp"
#include "fedafa/model.hpp"

namespace fedafa {

/// Final personalized-evaluation table: one accuracy per client (its own
/// test shard) and one per class (every client's model judged on a shared
/// balanced test set). All accuracies in percent.
struct MetricsTable {
    std::vector<double> per_client_acc;
    std::vector<std::size_t> client_sizes; // training-shard sample counts n_k
    std::vector<double> per_class_acc;
    double mean_acc = 0.0; // macro mean over clients with a non-empty test shard
    double std_acc = 0.0;  // population standard deviation over the same clients
};

/// Percent of correctly argmax-classified samples; ties pick the lowest
/// class index. Empty dataset yields 0.
double accuracy_percent(const SplitModel& model, const Dataset& ds);

/// Per-class accuracy pooled over every model's predictions on the test set.
std::vector<double> per_class_accuracy(const std::vector<SplitModel>& models,
                                       const Dataset& test);

MetricsTable compute_metrics(const std::vector<SplitModel>& personalized,
                             const std::vector<Dataset>& client_tests,
                             const std::vector<std::size_t>& client_sizes,
                             const Dataset& global_test);

double mean(const std::vector<double>& v);
double population_std(const std::vector<double>& v);

} // namespace fedafa

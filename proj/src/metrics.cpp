#include "fedafa/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace fedafa {

namespace {

std::size_t argmax_row(const Tensor& probs, std::size_t row) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.cols(); ++c) {
        if (probs.at(row, c) > probs.at(row, best)) {
            best = c;
        }
    }
    return best;
}

} // namespace

double accuracy_percent(const SplitModel& model, const Dataset& ds) {
    if (ds.size() == 0) {
        return 0.0;
    }
    std::vector<std::size_t> all(ds.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
        all[i] = i;
    }
    const Tensor probs = classify(extract_features(features_tensor(ds, all), model.extractor()),
                                  model.classifier());
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (argmax_row(probs, i) == static_cast<std::size_t>(ds.labels[i])) {
            ++correct;
        }
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(ds.size());
}

std::vector<double> per_class_accuracy(const std::vector<SplitModel>& models,
                                       const Dataset& test) {
    std::vector<std::size_t> correct(test.class_count, 0);
    std::vector<std::size_t> total(test.class_count, 0);
    std::vector<std::size_t> all(test.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
        all[i] = i;
    }
    const Tensor x = features_tensor(test, all);
    for (const SplitModel& model : models) {
        const Tensor probs = classify(extract_features(x, model.extractor()), model.classifier());
        for (std::size_t i = 0; i < test.size(); ++i) {
            const auto y = static_cast<std::size_t>(test.labels[i]);
            total[y]++;
            if (argmax_row(probs, i) == y) {
                correct[y]++;
            }
        }
    }
    std::vector<double> acc(test.class_count, 0.0);
    for (std::size_t c = 0; c < test.class_count; ++c) {
        if (total[c] > 0) {
            acc[c] = 100.0 * static_cast<double>(correct[c]) / static_cast<double>(total[c]);
        }
    }
    return acc;
}

MetricsTable compute_metrics(const std::vector<SplitModel>& personalized,
                             const std::vector<Dataset>& client_tests,
                             const std::vector<std::size_t>& client_sizes,
                             const Dataset& global_test) {
    if (personalized.size() != client_tests.size()) {
        throw std::invalid_argument("compute_metrics: " + std::to_string(client_tests.size()) +
                                    " clients but " + std::to_string(personalized.size()) +
                                    " personalized models");
    }
    MetricsTable table;
    table.client_sizes = client_sizes;
    table.per_client_acc.reserve(personalized.size());
    std::vector<double> scored;
    for (std::size_t k = 0; k < personalized.size(); ++k) {
        const double acc = accuracy_percent(personalized[k], client_tests[k]);
        table.per_client_acc.push_back(acc);
        if (client_tests[k].size() > 0) {
            scored.push_back(acc);
        }
    }
    table.mean_acc = mean(scored);
    table.std_acc = population_std(scored);
    table.per_class_acc = per_class_accuracy(personalized, global_test);
    return table;
}

double mean(const std::vector<double>& v) {
    if (v.empty()) {
        return 0.0;
    }
    double s = 0.0;
    for (double x : v) {
        s += x;
    }
    return s / static_cast<double>(v.size());
}

double population_std(const std::vector<double>& v) {
    if (v.size() < 2) {
        return 0.0;
    }
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) {
        s += (x - m) * (x - m);
    }
    return std::sqrt(s / static_cast<double>(v.size()));
}

} // namespace fedafa

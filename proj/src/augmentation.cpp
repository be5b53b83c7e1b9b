#include "fedafa/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedafa {

void AugmentationConfig::validate() const {
    if (!(drop_probability > 0.0 && drop_probability < 1.0)) {
        throw std::invalid_argument("AugmentationConfig: drop_probability must be in (0, 1)");
    }
    if (iterations < 1) {
        throw std::invalid_argument("AugmentationConfig: iterations must be >= 1");
    }
    if (step_size_scale <= 0.0) {
        throw std::invalid_argument("AugmentationConfig: step_size_scale must be > 0");
    }
    if (max_attempts_per_slot < 1) {
        throw std::invalid_argument("AugmentationConfig: max_attempts_per_slot must be >= 1");
    }
}

std::optional<int> select_source_class(int target_class,
                                       const std::vector<std::size_t>& class_counts, Rng& rng) {
    if (target_class < 0 || static_cast<std::size_t>(target_class) >= class_counts.size()) {
        throw std::invalid_argument("select_source_class: target class " +
                                    std::to_string(target_class) + " out of range");
    }
    const std::size_t n_t = class_counts[static_cast<std::size_t>(target_class)];
    std::vector<double> weights(class_counts.size(), 0.0);
    double total = 0.0;
    for (std::size_t s = 0; s < class_counts.size(); ++s) {
        if (static_cast<int>(s) == target_class || class_counts[s] <= n_t) {
            continue;
        }
        weights[s] = static_cast<double>(class_counts[s] - n_t);
        total += weights[s];
    }
    if (total <= 0.0) {
        return std::nullopt;
    }
    // CDF walk keeps the selection semantics explicit.
    const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
    double cum = 0.0;
    for (std::size_t s = 0; s < weights.size(); ++s) {
        cum += weights[s];
        if (weights[s] > 0.0 && u < cum) {
            return static_cast<int>(s);
        }
    }
    // Rounding edge: return the last eligible class.
    for (std::size_t s = weights.size(); s-- > 0;) {
        if (weights[s] > 0.0) {
            return static_cast<int>(s);
        }
    }
    return std::nullopt;
}

namespace {

double target_confidence(std::span<const double> feature, int target_class,
                         std::span<const DenseLayer> classifier) {
    const Tensor h = Tensor::row_vector({feature.begin(), feature.end()});
    const Tensor probs = classify(h, classifier);
    return probs.at(0, static_cast<std::size_t>(target_class));
}

} // namespace

PerturbResult perturb_to_target(std::span<const double> source_feature, int target_class,
                                std::span<const DenseLayer> classifier,
                                const PerturbParams& params) {
    if (classifier.empty()) {
        throw std::invalid_argument("perturb_to_target: empty classifier");
    }
    if (source_feature.size() != classifier.front().weight.rows()) {
        throw std::invalid_argument("perturb_to_target: feature width " +
                                    std::to_string(source_feature.size()) +
                                    " does not match classifier input " +
                                    std::to_string(classifier.front().weight.rows()));
    }

    PerturbResult result;
    result.feature.assign(source_feature.begin(), source_feature.end());
    const std::size_t width = result.feature.size();
    const Tensor label = one_hot({target_class}, classifier.back().weight.cols());

    for (std::size_t it = 0; it < params.iterations; ++it) {
        Graph g;
        const NodeId h = g.input(Tensor::row_vector(result.feature), /*requires_grad=*/true);
        const NodeId logits = forward_staged(g, h, stage_layers(g, classifier, false), true);
        const NodeId loss = g.softmax_cross_entropy(logits, label);
        const Tensor& grad = g.input_gradient(loss, h);

        const double norm = l2_norm(grad.data());
        if (norm == 0.0) {
            if (it == 0) {
                result.degenerate = true;
            }
            break;
        }
        for (std::size_t j = 0; j < width; ++j) {
            result.feature[j] += params.step_size * (-grad.data()[j] / norm);
        }
        result.delta_norms.push_back(1.0); // unit by construction; recorded for invariants
        result.iterations_used = it + 1;
    }

    result.confidence = target_confidence(result.feature, target_class, classifier);
    return result;
}

std::size_t GeneratedFeatureSet::underfilled_classes() const {
    std::size_t n = 0;
    for (std::size_t c = 0; c < quota.size(); ++c) {
        if (filled[c] < quota[c]) {
            ++n;
        }
    }
    return n;
}

GeneratedFeatureSet augment_client(const Dataset& local, std::span<const DenseLayer> extractor,
                                   std::span<const DenseLayer> classifier,
                                   const AugmentationConfig& config, Rng& rng,
                                   std::vector<AttemptRecord>* trace) {
    config.validate();

    GeneratedFeatureSet set;
    set.class_count = local.class_count;
    set.feature_dim = classifier.empty() ? 0 : classifier.front().weight.rows();
    set.class_counts.assign(local.class_count, 0);
    set.quota.assign(local.class_count, 0);
    set.filled.assign(local.class_count, 0);

    const ClassHistogram hist = histogram(local);
    const std::size_t n_max = hist.max_count();
    bool any_deficit = false;
    for (std::size_t c = 0; c < local.class_count; ++c) {
        if (hist.counts[c] > 0 && hist.counts[c] < n_max) {
            any_deficit = true;
        }
    }
    if (!any_deficit || local.size() == 0) {
        return set; // balanced client (or single class): nothing to generate
    }

    // Features of every local sample under the chosen extractor, computed
    // once; also fixes the scale-aware step size for this build.
    std::vector<std::vector<double>> feature_cache(local.size());
    double norm_sum = 0.0;
    {
        std::vector<std::size_t> all(local.size());
        for (std::size_t i = 0; i < all.size(); ++i) {
            all[i] = i;
        }
        const Tensor h_all = extract_features(features_tensor(local, all), extractor);
        for (std::size_t i = 0; i < local.size(); ++i) {
            feature_cache[i].resize(h_all.cols());
            for (std::size_t j = 0; j < h_all.cols(); ++j) {
                feature_cache[i][j] = h_all.at(i, j);
            }
            norm_sum += l2_norm(feature_cache[i]);
        }
    }
    const double mean_norm = norm_sum / static_cast<double>(local.size());
    PerturbParams perturb{config.iterations,
                          config.step_size_scale * (mean_norm > 0.0 ? mean_norm : 1.0)};

    std::vector<std::vector<std::size_t>> by_class(local.class_count);
    for (std::size_t i = 0; i < local.size(); ++i) {
        by_class[static_cast<std::size_t>(local.labels[i])].push_back(i);
    }

    const std::uint64_t class_stream_base = rng();
    for (std::size_t t = 0; t < local.class_count; ++t) {
        if (hist.counts[t] == 0 || hist.counts[t] >= n_max) {
            continue;
        }
        const std::size_t quota = n_max - hist.counts[t];
        set.quota[t] = quota;
        const std::size_t budget = config.max_attempts_per_slot * quota;
        Rng class_rng = make_rng(derive_seed(class_stream_base, {kAugmentStream, t}));

        std::size_t filled = 0;
        for (std::size_t attempt = 0; attempt < budget && filled < quota; ++attempt) {
            const auto source = select_source_class(static_cast<int>(t), hist.counts, class_rng);
            if (!source) {
                break; // counts are static, so no later attempt can succeed either
            }
            const auto& pool = by_class[static_cast<std::size_t>(*source)];
            const std::size_t sample = pool[uniform_index(class_rng, pool.size())];
            const auto& h_s = feature_cache[sample];

            const PerturbResult res =
                perturb_to_target(h_s, static_cast<int>(t), classifier, perturb);
            const bool accepted = res.confidence > config.drop_probability;
            if (trace) {
                trace->push_back({static_cast<int>(t), *source, res.iterations_used,
                                  res.confidence, accepted});
            }
            if (!accepted) {
                continue;
            }
            set.entries.push_back(
                {res.feature, static_cast<int>(t), res.confidence, Provenance::generated});
            set.class_counts[t]++;
            const double source_conf = target_confidence(h_s, *source, classifier);
            set.entries.push_back({h_s, *source, source_conf, Provenance::source});
            set.class_counts[static_cast<std::size_t>(*source)]++;
            ++filled;
        }
        set.filled[t] = filled;
    }
    return set;
}

FeatureBatchStream::FeatureBatchStream(const GeneratedFeatureSet& set, std::uint64_t seed)
    : set_(set),
      labels_([&set] {
          if (set.empty()) {
              throw std::invalid_argument(
                  "FeatureBatchStream: empty generated feature set; train on the "
                  "balanced raw data alone");
          }
          std::vector<std::int32_t> labels;
          labels.reserve(set.entries.size());
          for (const FeatureEntry& e : set.entries) {
              labels.push_back(e.label);
          }
          return labels;
      }()),
      sampler_(labels_, set.class_count, seed) {}

FeatureBatchStream::Batch FeatureBatchStream::next(std::size_t batch_size) {
    Batch batch;
    batch.features = Tensor(batch_size, set_.feature_dim);
    batch.labels_one_hot = Tensor(batch_size, set_.class_count);
    for (std::size_t r = 0; r < batch_size; ++r) {
        const std::size_t i = sampler_.next();
        const FeatureEntry& e = set_.entries[i];
        for (std::size_t j = 0; j < set_.feature_dim; ++j) {
            batch.features.at(r, j) = e.feature[j];
        }
        batch.labels_one_hot.at(r, static_cast<std::size_t>(e.label)) = 1.0;
    }
    return batch;
}

} // namespace fedafa

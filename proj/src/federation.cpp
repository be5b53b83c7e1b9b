#include "fedafa/federation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <functional>
#include <iostream>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace fedafa {

namespace {

/// Runs fn(0..n-1) on up to `threads` workers. Results must be written to
/// per-index slots; the first exception is rethrown after all workers join.
void run_indexed(std::size_t n, std::size_t threads,
                 const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) {
                return;
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) {
                    first_error = std::current_exception();
                }
            }
        }
    };
    std::vector<std::thread> pool;
    const std::size_t n_workers = std::min(threads, n);
    pool.reserve(n_workers);
    for (std::size_t t = 0; t < n_workers; ++t) {
        pool.emplace_back(worker);
    }
    for (auto& t : pool) {
        t.join();
    }
    if (first_error) {
        std::rethrow_exception(first_error);
    }
}

/// Mini-batch SGD over shuffled epochs of a shard. Returns the trained copy.
LayerStack train_layers(LayerStack layers, const Dataset& ds, std::size_t epochs,
                        std::size_t batch_size, const SgdOptions& opt, Rng& rng) {
    SgdState state = make_sgd_state(layers);
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t end = std::min(start + batch_size, order.size());
            const std::span<const std::size_t> idx(order.data() + start, end - start);
            const Tensor x = features_tensor(ds, idx);
            const Tensor y = one_hot_tensor(ds, idx);
            Graph g;
            const auto staged = stage_layers(g, layers, true);
            const NodeId loss =
                g.softmax_cross_entropy(forward_staged(g, g.input(x), staged, true), y);
            g.backward(loss);
            sgd_step(layers, read_layer_gradients(g, staged), opt, state);
        }
    }
    return layers;
}

SplitModel fine_tune_full(const Dataset& ds, const SplitModel& global, const SgdOptions& opt,
                          std::size_t epochs, std::size_t batch_size, std::uint64_t seed) {
    if (ds.size() == 0) {
        throw std::invalid_argument("fine_tune: empty shard");
    }
    Rng rng = make_rng(derive_seed(seed, {kPersonalizeStream}));
    SplitModel out = global;
    out.layers = train_layers(global.layers, ds, epochs, batch_size, opt, rng);
    return out;
}

} // namespace

ClientUpdate client_update(const Dataset& shard, const SplitModel& global,
                           std::size_t local_epochs, std::size_t batch_size,
                           const SgdOptions& opt, std::uint64_t seed) {
    if (shard.size() == 0) {
        throw std::invalid_argument("client_update: empty shard");
    }
    Rng rng = make_rng(derive_seed(seed, {kClientStream}));
    return {train_layers(global.layers, shard, local_epochs, batch_size, opt, rng),
            shard.size()};
}

LayerStack aggregate(const std::vector<ClientUpdate>& updates) {
    if (updates.empty()) {
        throw std::invalid_argument("aggregate: no updates");
    }
    double total_weight = 0.0;
    for (const ClientUpdate& u : updates) {
        total_weight += static_cast<double>(u.sample_count);
    }
    if (total_weight <= 0.0) {
        throw std::invalid_argument("aggregate: total sample count is zero");
    }

    const LayerStack& ref = updates.front().params;
    LayerStack out;
    out.reserve(ref.size());
    for (const DenseLayer& layer : ref) {
        out.push_back({Tensor(layer.weight.rows(), layer.weight.cols()),
                       Tensor(layer.bias.rows(), layer.bias.cols())});
    }
    for (const ClientUpdate& u : updates) {
        if (u.params.size() != ref.size()) {
            throw std::invalid_argument("aggregate: update has " +
                                        std::to_string(u.params.size()) + " layers, expected " +
                                        std::to_string(ref.size()));
        }
        const double w = static_cast<double>(u.sample_count) / total_weight;
        for (std::size_t l = 0; l < ref.size(); ++l) {
            if (!u.params[l].weight.same_shape(ref[l].weight) ||
                !u.params[l].bias.same_shape(ref[l].bias)) {
                throw std::invalid_argument("aggregate: shape mismatch at layer " +
                                            std::to_string(l));
            }
            for (std::size_t i = 0; i < ref[l].weight.size(); ++i) {
                out[l].weight.data()[i] += w * u.params[l].weight.data()[i];
            }
            for (std::size_t i = 0; i < ref[l].bias.size(); ++i) {
                out[l].bias.data()[i] += w * u.params[l].bias.data()[i];
            }
        }
    }
    return out;
}

SplitModel personalize_fedavg_ft(const ClientState& client, const SplitModel& global,
                                 const SgdOptions& opt, std::size_t epochs,
                                 std::size_t batch_size, std::uint64_t seed) {
    return fine_tune_full(client.train, global, opt, epochs, batch_size, seed);
}

Dataset oversample_to_balance(const Dataset& ds, std::uint64_t seed) {
    const ClassHistogram hist = histogram(ds);
    const std::size_t target = hist.max_count();
    std::vector<std::vector<std::size_t>> by_class(ds.class_count);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    }
    std::vector<std::size_t> rows(ds.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    Rng rng = make_rng(derive_seed(seed, {kAugmentStream}));
    for (std::size_t c = 0; c < ds.class_count; ++c) {
        const auto& members = by_class[c];
        if (members.empty()) {
            continue;
        }
        for (std::size_t i = members.size(); i < target; ++i) {
            rows.push_back(members[uniform_index(rng, members.size())]);
        }
    }
    return take_rows(ds, rows);
}

SplitModel personalize_ros(const ClientState& client, const SplitModel& global,
                           const SgdOptions& opt, std::size_t epochs, std::size_t batch_size,
                           std::uint64_t seed) {
    const Dataset balanced = oversample_to_balance(client.train, derive_seed(seed, {0x726f73}));
    return fine_tune_full(balanced, global, opt, epochs, batch_size, seed);
}

LayerStack afa_gradients(const LayerStack& classifier, const Tensor* gen_features,
                         const Tensor* gen_labels, const Tensor* ori_features,
                         const Tensor* ori_labels, double lambda, double* loss_out) {
    if (lambda < 0.0 || lambda > 1.0) {
        throw std::invalid_argument("afa_gradients: lambda must be in [0, 1]");
    }
    const bool use_gen = lambda > 0.0;
    const bool use_ori = lambda < 1.0;
    if (use_gen && (gen_features == nullptr || gen_labels == nullptr)) {
        throw std::invalid_argument("afa_gradients: lambda > 0 needs a generated-feature batch");
    }
    if (use_ori && (ori_features == nullptr || ori_labels == nullptr)) {
        throw std::invalid_argument("afa_gradients: lambda < 1 needs a raw-feature batch");
    }

    Graph g;
    const auto staged = stage_layers(g, classifier, true);
    NodeId total = 0;
    if (use_gen) {
        const NodeId gen_loss = g.softmax_cross_entropy(
            forward_staged(g, g.input(*gen_features), staged, true), *gen_labels);
        total = gen_loss;
        if (use_ori) {
            const NodeId ori_loss = g.softmax_cross_entropy(
                forward_staged(g, g.input(*ori_features), staged, true), *ori_labels);
            total = g.add(g.scale(gen_loss, lambda), g.scale(ori_loss, 1.0 - lambda));
        }
    } else {
        total = g.softmax_cross_entropy(
            forward_staged(g, g.input(*ori_features), staged, true), *ori_labels);
    }
    g.backward(total);
    if (loss_out) {
        *loss_out = g.value(total).item();
    }
    return read_layer_gradients(g, staged);
}

FedafaOutcome personalize_fedafa(const ClientState& client, const SplitModel& global,
                                 const AugmentationConfig& aug, double lambda,
                                 std::size_t epochs, std::size_t batch_size,
                                 const SgdOptions& opt, bool use_local_extractor,
                                 std::uint64_t seed, std::vector<AttemptRecord>* trace) {
    if (lambda < 0.0 || lambda > 1.0) {
        throw std::invalid_argument("personalize_fedafa: lambda must be in [0, 1]");
    }
    aug.validate();
    if (client.train.size() == 0) {
        throw std::invalid_argument("personalize_fedafa: empty train shard");
    }

    FedafaOutcome out;
    out.classifier = global.classifier_copy();
    SgdState state = make_sgd_state(out.classifier);

    BalancedBatchStream raw_batches(client.train, derive_seed(seed, {kOriBatchStream}));

    // FedAFA_Loc: generated features come from a locally fine-tuned
    // extractor; everything else (including the raw-batch forward) still
    // uses the global extractor.
    SplitModel local_model;
    std::span<const DenseLayer> aug_extractor = global.extractor();
    if (use_local_extractor) {
        local_model = fine_tune_full(client.train, global, opt, std::max<std::size_t>(epochs, 1),
                                     batch_size, derive_seed(seed, {0x6c6f63}));
        aug_extractor = local_model.extractor();
    }

    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        // Rebuilt every epoch: perturbation confidences go stale as v_k moves.
        GeneratedFeatureSet gen;
        std::optional<FeatureBatchStream> gen_batches;
        double effective_lambda = lambda;
        if (lambda > 0.0) {
            Rng aug_rng = make_rng(derive_seed(seed, {kAugmentStream, epoch}));
            const std::span<const DenseLayer> perturb_classifier =
                aug.perturb_classifier == AugmentationConfig::PerturbClassifier::personalized
                    ? std::span<const DenseLayer>(out.classifier)
                    : global.classifier();
            gen = augment_client(client.train, aug_extractor, perturb_classifier, aug, aug_rng,
                                 trace);
            for (std::size_t f : gen.filled) {
                out.generated_total += f;
            }
            if (gen.empty()) {
                effective_lambda = 0.0;
                out.fallback_epochs++;
            } else {
                gen_batches.emplace(gen, derive_seed(seed, {kGenBatchStream, epoch}));
            }
        }

        // One epoch covers the augmented training set, raw plus generated.
        const std::size_t epoch_samples = client.train.size() + gen.entries.size();
        const std::size_t steps_per_epoch = (epoch_samples + batch_size - 1) / batch_size;
        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            FeatureBatchStream::Batch gen_batch;
            BalancedBatchStream::Batch raw_batch;
            Tensor raw_features;
            const Tensor* gf = nullptr;
            const Tensor* gy = nullptr;
            const Tensor* of = nullptr;
            const Tensor* oy = nullptr;
            if (effective_lambda > 0.0) {
                gen_batch = gen_batches->next(batch_size);
                gf = &gen_batch.features;
                gy = &gen_batch.labels_one_hot;
            }
            if (effective_lambda < 1.0) {
                raw_batch = raw_batches.next(batch_size);
                raw_features = extract_features(raw_batch.features, global.extractor());
                of = &raw_features;
                oy = &raw_batch.labels_one_hot;
            }
            sgd_step(out.classifier, afa_gradients(out.classifier, gf, gy, of, oy,
                                                   effective_lambda),
                     opt, state);
        }
    }
    return out;
}

LayerStack personalize_classifier_balanced(const ClientState& client, const SplitModel& global,
                                           const SgdOptions& opt, std::size_t epochs,
                                           std::size_t batch_size, std::uint64_t seed) {
    if (client.train.size() == 0) {
        throw std::invalid_argument("personalize_classifier_balanced: empty train shard");
    }
    LayerStack head = global.classifier_copy();
    SgdState state = make_sgd_state(head);
    BalancedBatchStream raw_batches(client.train, derive_seed(seed, {kOriBatchStream}));
    const std::size_t steps_per_epoch = (client.train.size() + batch_size - 1) / batch_size;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            const auto raw_batch = raw_batches.next(batch_size);
            const Tensor features = extract_features(raw_batch.features, global.extractor());
            sgd_step(head,
                     afa_gradients(head, nullptr, nullptr, &features,
                                   &raw_batch.labels_one_hot, 0.0),
                     opt, state);
        }
    }
    return head;
}

std::vector<ClientState> make_clients(std::vector<Dataset> shards, std::uint64_t seed) {
    std::vector<ClientState> clients;
    clients.reserve(shards.size());
    for (std::size_t k = 0; k < shards.size(); ++k) {
        ClientState client;
        client.id = static_cast<int>(k);
        auto [train, test] =
            stratified_split(shards[k], 0.2, derive_seed(seed, {kClientSplitStream, k}));
        if (test.size() == 0 && train.size() >= 2) {
            // Tiny shard: move one sample of the largest class so the client
            // still has something to evaluate on.
            const ClassHistogram h = histogram(train);
            std::size_t largest = 0;
            for (std::size_t c = 1; c < h.counts.size(); ++c) {
                if (h.counts[c] > h.counts[largest]) {
                    largest = c;
                }
            }
            std::size_t moved = train.size();
            for (std::size_t i = train.size(); i-- > 0;) {
                if (static_cast<std::size_t>(train.labels[i]) == largest) {
                    moved = i;
                    break;
                }
            }
            std::vector<std::size_t> test_rows{moved};
            std::vector<std::size_t> train_rows;
            for (std::size_t i = 0; i < train.size(); ++i) {
                if (i != moved) {
                    train_rows.push_back(i);
                }
            }
            test = take_rows(train, test_rows);
            train = take_rows(train, train_rows);
        }
        client.train = std::move(train);
        client.test = std::move(test);
        client.hist = histogram(client.train);
        clients.push_back(std::move(client));
    }
    return clients;
}

namespace {

std::vector<int> sample_participants(std::size_t total, std::size_t per_round,
                                     std::uint64_t seed) {
    std::vector<int> ids(total);
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng = make_rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(per_round);
    std::sort(ids.begin(), ids.end());
    return ids;
}

RoundReport evaluate_round(std::size_t round, std::vector<int> participants,
                           const SplitModel& global, const std::vector<ClientState>& clients,
                           const Dataset& global_test) {
    RoundReport report;
    report.round = round;
    report.participants = std::move(participants);
    std::vector<double> scored;
    for (const ClientState& client : clients) {
        const double acc = accuracy_percent(global, client.test);
        report.per_client_acc.push_back(acc);
        if (client.test.size() > 0) {
            scored.push_back(acc);
        }
    }
    report.mean_acc = mean(scored);
    report.std_acc = population_std(scored);
    report.per_class_acc = per_class_accuracy({global}, global_test);
    return report;
}

} // namespace

PersonalizationResult personalize_all(const ExperimentConfig& cfg,
                                      const std::vector<ClientState>& clients,
                                      const SplitModel& global, const Dataset& global_test) {
    const SgdOptions train_opt{cfg.learning_rate, cfg.momentum, cfg.weight_decay};
    const SgdOptions pers_opt{cfg.personalize_lr, cfg.momentum, cfg.weight_decay};

    PersonalizationResult result;
    result.personalized.resize(clients.size());
    std::vector<std::size_t> fallbacks(clients.size(), 0);
    const bool want_traces = cfg.aug_debug_dump &&
                             (cfg.method == Method::fedafa || cfg.method == Method::fedafa_loc);
    if (want_traces) {
        result.aug_traces.resize(clients.size());
    }

    run_indexed(clients.size(), cfg.threads, [&](std::size_t k) {
        const ClientState& client = clients[k];
        const std::uint64_t seed = derive_seed(cfg.seed, {kPersonalizeStream, k});
        switch (cfg.method) {
        case Method::local: {
            SplitModel model =
                init_model(cfg.layer_sizes(), cfg.boundary_index, derive_seed(seed, {0x1}));
            Rng rng = make_rng(derive_seed(seed, {0x2}));
            model.layers = train_layers(model.layers, client.train, cfg.local_baseline_epochs,
                                        cfg.batch_size, train_opt, rng);
            result.personalized[k] = std::move(model);
            break;
        }
        case Method::fedavg_ft:
            result.personalized[k] = personalize_fedavg_ft(
                client, global, pers_opt, cfg.personalize_epochs, cfg.personalize_batch_size,
                seed);
            break;
        case Method::fedavg_ros:
            result.personalized[k] = personalize_ros(client, global, pers_opt,
                                                     cfg.personalize_epochs,
                                                     cfg.personalize_batch_size, seed);
            break;
        case Method::fedafa:
        case Method::fedafa_loc: {
            FedafaOutcome outcome = personalize_fedafa(
                client, global, cfg.augmentation(), cfg.lambda, cfg.personalize_epochs,
                cfg.personalize_batch_size, pers_opt, cfg.method == Method::fedafa_loc, seed,
                want_traces ? &result.aug_traces[k] : nullptr);
            fallbacks[k] = outcome.fallback_epochs;
            result.personalized[k] = with_classifier(global, outcome.classifier);
            break;
        }
        }
    });

    for (std::size_t f : fallbacks) {
        result.fedafa_fallback_epochs += f;
    }
    std::vector<Dataset> tests;
    std::vector<std::size_t> sizes;
    tests.reserve(clients.size());
    for (const ClientState& client : clients) {
        tests.push_back(client.test);
        sizes.push_back(client.train.size());
    }
    result.metrics = compute_metrics(result.personalized, tests, sizes, global_test);
    return result;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();

    const std::size_t pool_per_class = cfg.samples_per_class + cfg.test_per_class;
    const Dataset pool = generate_synthetic(cfg.classes, cfg.dim, pool_per_class,
                                            cfg.cluster_spread, cfg.seed);
    const double test_fraction =
        static_cast<double>(cfg.test_per_class) / static_cast<double>(pool_per_class);
    auto [train_pool, global_test] = stratified_split(pool, test_fraction, cfg.seed);

    const Dataset longtailed = apply_longtail(train_pool, cfg.imbalance_factor, cfg.seed);

    PartitionSpec spec;
    spec.clients = cfg.clients;
    spec.alpha = cfg.alpha;
    spec.imbalance_factor = cfg.imbalance_factor;
    spec.seed = cfg.seed;
    std::vector<Dataset> shards = dirichlet_partition(longtailed, spec);

    ExperimentResult result;
    result.global_test = std::move(global_test);
    result.global_train_class_counts = histogram(longtailed).counts;
    result.clients = make_clients(std::move(shards), cfg.seed);

    SplitModel global = init_model(cfg.layer_sizes(), cfg.boundary_index, cfg.seed);
    const SgdOptions train_opt{cfg.learning_rate, cfg.momentum, cfg.weight_decay};
    const SgdOptions pers_opt{cfg.personalize_lr, cfg.momentum, cfg.weight_decay};

    // Experimental per-round mode: participants keep a personalized head that
    // seeds their next local update, so it flows into aggregation.
    const bool per_round_heads_active =
        cfg.per_round && (cfg.method == Method::fedafa || cfg.method == Method::fedafa_loc);
    std::vector<LayerStack> round_heads(per_round_heads_active ? cfg.clients : 0);

    for (std::size_t round = 0; round < cfg.rounds; ++round) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<int> participants = sample_participants(
            cfg.clients, cfg.clients_per_round, derive_seed(cfg.seed, {kSampleStream, round}));

        std::vector<int> active;
        for (int id : participants) {
            if (result.clients[static_cast<std::size_t>(id)].train.size() > 0) {
                active.push_back(id);
            } else {
                std::cerr << "warning: client " << id << " has an empty shard; skipped in round "
                          << round + 1 << "\n";
            }
        }
        if (active.empty()) {
            continue;
        }

        std::vector<ClientUpdate> updates(active.size());
        run_indexed(active.size(), cfg.threads, [&](std::size_t i) {
            const auto id = static_cast<std::size_t>(active[i]);
            SplitModel start = global;
            if (per_round_heads_active && !round_heads[id].empty()) {
                start = with_classifier(global, round_heads[id]);
            }
            updates[i] = client_update(
                result.clients[id].train, start, cfg.local_epochs, cfg.batch_size, train_opt,
                derive_seed(cfg.seed, {kClientStream, round, id}));
        });
        global.layers = aggregate(updates);

        if (per_round_heads_active) {
            run_indexed(active.size(), cfg.threads, [&](std::size_t i) {
                const auto id = static_cast<std::size_t>(active[i]);
                round_heads[id] =
                    personalize_fedafa(result.clients[id], global, cfg.augmentation(),
                                       cfg.lambda, cfg.personalize_epochs,
                                       cfg.personalize_batch_size, pers_opt,
                                       cfg.method == Method::fedafa_loc,
                                       derive_seed(cfg.seed, {kPersonalizeStream, round, id}))
                        .classifier;
            });
        }

        if ((round + 1) % cfg.eval_every == 0 || round + 1 == cfg.rounds) {
            RoundReport report = evaluate_round(round + 1, std::move(participants), global,
                                                result.clients, result.global_test);
            report.seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            result.rounds.push_back(std::move(report));
        }
    }

    PersonalizationResult pers =
        personalize_all(cfg, result.clients, global, result.global_test);
    result.global_model = std::move(global);
    result.personalized = std::move(pers.personalized);
    result.metrics = std::move(pers.metrics);
    result.fedafa_fallback_epochs = pers.fedafa_fallback_epochs;
    result.aug_traces = std::move(pers.aug_traces);
    return result;
}

} // namespace fedafa

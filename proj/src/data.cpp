#include "fedafa/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "fedafa/errors.hpp"
#include <numeric>
#include <random>
#include <stdexcept>

namespace fedafa {

std::size_t ClassHistogram::total() const {
    return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

std::size_t ClassHistogram::max_count() const {
    return counts.empty() ? 0 : *std::max_element(counts.begin(), counts.end());
}

double ClassHistogram::measured_imbalance() const {
    std::size_t smallest = 0;
    for (std::size_t c : counts) {
        if (c > 0 && (smallest == 0 || c < smallest)) {
            smallest = c;
        }
    }
    if (smallest == 0) {
        return 0.0;
    }
    return static_cast<double>(max_count()) / static_cast<double>(smallest);
}

ClassHistogram histogram(const Dataset& ds) {
    ClassHistogram h;
    h.counts.assign(ds.class_count, 0);
    for (std::int32_t y : ds.labels) {
        h.counts[static_cast<std::size_t>(y)]++;
    }
    return h;
}

Dataset generate_synthetic(std::size_t class_count, std::size_t dim, std::size_t n_per_class,
                           double cluster_spread, std::uint64_t seed) {
    if (class_count < 2 || dim < 2) {
        throw std::invalid_argument("generate_synthetic: need class_count >= 2 and dim >= 2");
    }
    if (n_per_class == 0) {
        throw std::invalid_argument("generate_synthetic: n_per_class must be positive");
    }
    if (cluster_spread < 0.0) {
        throw std::invalid_argument("generate_synthetic: cluster_spread must be >= 0");
    }

    std::normal_distribution<double> gauss(0.0, 1.0);

    // Class means: random directions on the unit sphere. Pairwise distances
    // vary with the draw, so some class pairs are genuinely hard to tell
    // apart, which is where a shared extractor earns its keep.
    Rng mean_rng = make_rng(derive_seed(seed, {kDataStream, 0}));
    std::vector<std::vector<double>> means(class_count, std::vector<double>(dim));
    for (auto& mean : means) {
        double norm = 0.0;
        while (norm < 1e-9) {
            for (double& v : mean) {
                v = gauss(mean_rng);
            }
            norm = l2_norm(mean);
        }
        for (double& v : mean) {
            v /= norm;
        }
    }

    Dataset ds;
    ds.dim = dim;
    ds.class_count = class_count;
    ds.features.reserve(class_count * n_per_class * dim);
    ds.labels.reserve(class_count * n_per_class);
    for (std::size_t c = 0; c < class_count; ++c) {
        Rng rng = make_rng(derive_seed(seed, {kDataStream, 1, c}));
        for (std::size_t i = 0; i < n_per_class; ++i) {
            for (std::size_t j = 0; j < dim; ++j) {
                ds.features.push_back(
                    static_cast<float>(means[c][j] + cluster_spread * gauss(rng)));
            }
            ds.labels.push_back(static_cast<std::int32_t>(c));
        }
    }
    return ds;
}

namespace {

std::vector<std::vector<std::size_t>> indices_by_class(const Dataset& ds) {
    std::vector<std::vector<std::size_t>> by_class(ds.class_count);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    }
    return by_class;
}

} // namespace

Dataset take_rows(const Dataset& ds, std::span<const std::size_t> indices) {
    Dataset out;
    out.dim = ds.dim;
    out.class_count = ds.class_count;
    out.features.reserve(indices.size() * ds.dim);
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) {
        const auto row = ds.row(i);
        out.features.insert(out.features.end(), row.begin(), row.end());
        out.labels.push_back(ds.labels[i]);
    }
    return out;
}

Dataset apply_longtail(const Dataset& ds, double imbalance_factor, std::uint64_t seed) {
    if (imbalance_factor < 1.0) {
        throw std::invalid_argument("apply_longtail: imbalance_factor must be >= 1");
    }
    const auto by_class = indices_by_class(ds);
    const std::size_t n_c = by_class.empty() ? 0 : by_class[0].size();
    for (const auto& idx : by_class) {
        if (idx.size() != n_c) {
            throw std::invalid_argument("apply_longtail: dataset is not balanced across classes");
        }
    }
    if (n_c == 0) {
        throw std::invalid_argument("apply_longtail: empty dataset");
    }

    const double rho =
        std::pow(imbalance_factor, -1.0 / static_cast<double>(ds.class_count - 1));
    std::vector<std::size_t> keep_count(ds.class_count);
    for (std::size_t c = 0; c < ds.class_count; ++c) {
        const long long k =
            std::llround(std::pow(rho, static_cast<double>(c)) * static_cast<double>(n_c));
        if (k <= 0) {
            throw std::invalid_argument(
                "apply_longtail: class " + std::to_string(c) + " would round to 0 samples; "
                "increase n_per_class or lower the imbalance factor");
        }
        keep_count[c] = static_cast<std::size_t>(k);
    }

    // Random subset per class; output preserves the input row order so an
    // imbalance factor of 1 returns the dataset unchanged.
    std::vector<std::size_t> kept;
    kept.reserve(ds.size());
    for (std::size_t c = 0; c < ds.class_count; ++c) {
        std::vector<std::size_t> idx = by_class[c];
        Rng rng = make_rng(derive_seed(seed, {kLongtailStream, c}));
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(keep_count[c]);
        std::sort(idx.begin(), idx.end());
        kept.insert(kept.end(), idx.begin(), idx.end());
    }
    std::sort(kept.begin(), kept.end());
    return take_rows(ds, kept);
}

namespace {

/// Largest-remainder apportionment of `total` into weights `p` (sum 1).
std::vector<std::size_t> apportion(const std::vector<double>& p, std::size_t total) {
    const std::size_t k = p.size();
    std::vector<std::size_t> counts(k);
    std::vector<std::pair<double, std::size_t>> remainders(k);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < k; ++i) {
        const double share = p[i] * static_cast<double>(total);
        counts[i] = static_cast<std::size_t>(std::floor(share));
        remainders[i] = {share - std::floor(share), i};
        assigned += counts[i];
    }
    // Distribute what floor() left over, largest fractional part first;
    // ties broken by index for determinism.
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) {
            return a.first > b.first;
        }
        return a.second < b.second;
    });
    for (std::size_t i = 0; assigned < total; ++i, ++assigned) {
        counts[remainders[i % k].second]++;
    }
    return counts;
}

} // namespace

std::vector<Dataset> dirichlet_partition(const Dataset& ds, const PartitionSpec& spec) {
    if (ds.size() == 0) {
        throw std::invalid_argument("dirichlet_partition: empty dataset");
    }
    if (spec.clients < 1) {
        throw std::invalid_argument("dirichlet_partition: need at least one client");
    }
    if (spec.alpha <= 0.0) {
        throw std::invalid_argument("dirichlet_partition: alpha must be > 0");
    }

    const auto by_class = indices_by_class(ds);
    const std::size_t k = spec.clients;

    for (int attempt = 0; attempt < 100; ++attempt) {
        Rng rng = make_rng(derive_seed(spec.seed, {kPartitionStream, static_cast<std::uint64_t>(attempt)}));
        std::gamma_distribution<double> gamma(spec.alpha, 1.0);

        std::vector<std::vector<std::size_t>> assignment(k);
        for (std::size_t c = 0; c < ds.class_count; ++c) {
            std::vector<std::size_t> idx = by_class[c];
            if (idx.empty()) {
                continue;
            }
            std::shuffle(idx.begin(), idx.end(), rng);

            std::vector<double> p(k);
            double sum = 0.0;
            for (double& v : p) {
                v = gamma(rng);
                sum += v;
            }
            if (sum <= 0.0) {
                continue; // degenerate draw; this attempt will likely fail the fill check
            }
            for (double& v : p) {
                v /= sum;
            }
            const auto counts = apportion(p, idx.size());
            std::size_t cursor = 0;
            for (std::size_t client = 0; client < k; ++client) {
                for (std::size_t j = 0; j < counts[client]; ++j) {
                    assignment[client].push_back(idx[cursor++]);
                }
            }
        }

        const bool all_filled = std::all_of(assignment.begin(), assignment.end(),
                                            [](const auto& a) { return !a.empty(); });
        if (!all_filled) {
            continue;
        }
        std::vector<Dataset> shards;
        shards.reserve(k);
        for (auto& idx : assignment) {
            std::sort(idx.begin(), idx.end());
            shards.push_back(take_rows(ds, idx));
        }
        return shards;
    }
    throw std::runtime_error("dirichlet_partition: a client received zero samples in 100 "
                             "consecutive draws; increase alpha or the dataset size");
}

std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, double test_fraction,
                                             std::uint64_t seed) {
    if (test_fraction < 0.0 || test_fraction >= 1.0) {
        throw std::invalid_argument("stratified_split: test_fraction must be in [0, 1)");
    }
    const auto by_class = indices_by_class(ds);
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> test_idx;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        std::vector<std::size_t> idx = by_class[c];
        if (idx.empty()) {
            continue;
        }
        Rng rng = make_rng(derive_seed(seed, {kSplitStream, c}));
        std::shuffle(idx.begin(), idx.end(), rng);
        std::size_t n_test = static_cast<std::size_t>(
            std::llround(test_fraction * static_cast<double>(idx.size())));
        if (n_test >= idx.size()) {
            n_test = idx.size() - 1; // keep the class represented in training
        }
        test_idx.insert(test_idx.end(), idx.begin(), idx.begin() + n_test);
        train_idx.insert(train_idx.end(), idx.begin() + n_test, idx.end());
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    return {take_rows(ds, train_idx), take_rows(ds, test_idx)};
}

BalancedIndexSampler::BalancedIndexSampler(std::span<const std::int32_t> labels,
                                           std::size_t class_count, std::uint64_t seed)
    : rng_(make_rng(seed)) {
    if (labels.empty()) {
        throw std::invalid_argument("BalancedIndexSampler: empty label list");
    }
    std::vector<std::vector<std::size_t>> by_class(class_count);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    for (auto& members : by_class) {
        if (!members.empty()) {
            by_class_.push_back(std::move(members));
        }
    }
}

std::size_t BalancedIndexSampler::next() {
    const std::size_t cls = uniform_index(rng_, by_class_.size());
    const auto& members = by_class_[cls];
    return members[uniform_index(rng_, members.size())];
}

std::vector<std::size_t> BalancedIndexSampler::next_batch(std::size_t batch_size) {
    std::vector<std::size_t> out(batch_size);
    for (auto& i : out) {
        i = next();
    }
    return out;
}

BalancedBatchStream::BalancedBatchStream(const Dataset& ds, std::uint64_t seed)
    : ds_(ds), sampler_(ds.labels, ds.class_count, seed) {}

BalancedBatchStream::Batch BalancedBatchStream::next(std::size_t batch_size) {
    const auto idx = sampler_.next_batch(batch_size);
    Batch batch;
    batch.features = features_tensor(ds_, idx);
    batch.labels_one_hot = one_hot_tensor(ds_, idx);
    batch.labels.reserve(idx.size());
    for (std::size_t i : idx) {
        batch.labels.push_back(ds_.labels[i]);
    }
    return batch;
}

Tensor features_tensor(const Dataset& ds, std::span<const std::size_t> indices) {
    Tensor out(indices.size(), ds.dim);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto row = ds.row(indices[r]);
        for (std::size_t c = 0; c < ds.dim; ++c) {
            out.at(r, c) = static_cast<double>(row[c]);
        }
    }
    return out;
}

Tensor one_hot_tensor(const Dataset& ds, std::span<const std::size_t> indices) {
    Tensor out(indices.size(), ds.class_count);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        out.at(r, static_cast<std::size_t>(ds.labels[indices[r]])) = 1.0;
    }
    return out;
}

// --- file format --------------------------------------------------------------

namespace {

constexpr char kDataMagic[4] = {'F', 'D', 'S', 'T'};
constexpr std::uint32_t kDataVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw IoError(std::string("load_dataset: truncated file reading ") + what);
    }
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("save_dataset: cannot open " + path.string());
    }
    out.write(kDataMagic, 4);
    write_u32(out, kDataVersion);
    write_u32(out, static_cast<std::uint32_t>(ds.size()));
    write_u32(out, static_cast<std::uint32_t>(ds.dim));
    write_u32(out, static_cast<std::uint32_t>(ds.class_count));
    for (float f : ds.features) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        write_u32(out, bits);
    }
    for (std::int32_t y : ds.labels) {
        write_u32(out, static_cast<std::uint32_t>(y));
    }
    if (!out) {
        throw IoError("save_dataset: write failed for " + path.string());
    }
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("load_dataset: cannot open " + path.string());
    }
    // Header-implied size must match the file exactly.
    std::error_code ec;
    const auto file_size = std::filesystem::file_size(path, ec);

    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kDataMagic, 4) != 0) {
        throw IoError("load_dataset: bad magic in " + path.string());
    }
    const std::uint32_t version = read_u32(in, "version");
    if (version != kDataVersion) {
        throw IoError("load_dataset: unsupported version " + std::to_string(version));
    }
    const std::uint32_t n = read_u32(in, "sample count");
    const std::uint32_t d = read_u32(in, "dimension");
    const std::uint32_t c = read_u32(in, "class count");
    if (n == 0 || d == 0 || c == 0) {
        throw IoError("load_dataset: zero-sized header field in " + path.string());
    }
    const std::uint64_t expected =
        20ull + 4ull * static_cast<std::uint64_t>(n) * d + 4ull * n;
    if (!ec && file_size != expected) {
        throw IoError("load_dataset: file size " + std::to_string(file_size) +
                                 " does not match header-implied size " +
                                 std::to_string(expected));
    }

    Dataset ds;
    ds.dim = d;
    ds.class_count = c;
    ds.features.resize(static_cast<std::size_t>(n) * d);
    for (float& f : ds.features) {
        const std::uint32_t bits = read_u32(in, "features");
        std::memcpy(&f, &bits, 4);
    }
    ds.labels.resize(n);
    for (std::int32_t& y : ds.labels) {
        y = static_cast<std::int32_t>(read_u32(in, "labels"));
        if (y < 0 || static_cast<std::uint32_t>(y) >= c) {
            throw IoError("load_dataset: label " + std::to_string(y) +
                                     " outside [0, " + std::to_string(c) + ")");
        }
    }
    return ds;
}

} // namespace fedafa

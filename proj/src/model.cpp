#include "fedafa/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "fedafa/errors.hpp"
#include <random>
#include <stdexcept>

#include "fedafa/rng.hpp"

namespace fedafa {

SplitModel init_model(const std::vector<std::size_t>& layer_sizes, std::size_t boundary_index,
                      std::uint64_t seed) {
    if (layer_sizes.size() < 3) {
        throw std::invalid_argument("init_model: need at least input, one hidden, output size");
    }
    for (std::size_t s : layer_sizes) {
        if (s == 0) {
            throw std::invalid_argument("init_model: layer sizes must be positive");
        }
    }
    const std::size_t n_layers = layer_sizes.size() - 1;
    if (boundary_index + 1 >= n_layers) {
        throw std::invalid_argument(
            "init_model: boundary_index " + std::to_string(boundary_index) +
            " leaves an empty classifier (model has " + std::to_string(n_layers) + " layers)");
    }

    SplitModel model;
    model.layer_sizes = layer_sizes;
    model.boundary_index = boundary_index;
    model.layers.reserve(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
        const std::size_t fan_in = layer_sizes[l];
        const std::size_t fan_out = layer_sizes[l + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Rng rng = make_rng(derive_seed(seed, {kInitStream, l}));
        std::uniform_real_distribution<double> dist(-bound, bound);
        DenseLayer layer{Tensor(fan_in, fan_out), Tensor(1, fan_out)};
        for (double& w : layer.weight.data()) {
            w = dist(rng);
        }
        model.layers.push_back(std::move(layer));
    }
    return model;
}

SplitModel with_classifier(const SplitModel& model, const LayerStack& head) {
    const auto current = model.classifier();
    if (head.size() != current.size()) {
        throw std::invalid_argument("with_classifier: head has " + std::to_string(head.size()) +
                                    " layers, expected " + std::to_string(current.size()));
    }
    for (std::size_t i = 0; i < head.size(); ++i) {
        if (!head[i].weight.same_shape(current[i].weight) ||
            !head[i].bias.same_shape(current[i].bias)) {
            throw std::invalid_argument("with_classifier: layer " + std::to_string(i) +
                                        " shape mismatch");
        }
    }
    SplitModel out = model;
    for (std::size_t i = 0; i < head.size(); ++i) {
        out.layers[model.boundary_index + 1 + i] = head[i];
    }
    return out;
}

namespace {

Tensor dense_forward(const Tensor& in, const DenseLayer& layer, bool apply_relu) {
    if (in.cols() != layer.weight.rows()) {
        throw std::invalid_argument("forward: input " + shape_string(in) +
                                    " does not match weight " + shape_string(layer.weight));
    }
    Tensor out(in.rows(), layer.weight.cols());
    for (std::size_t i = 0; i < in.rows(); ++i) {
        for (std::size_t j = 0; j < in.cols(); ++j) {
            const double v = in.at(i, j);
            if (v == 0.0) {
                continue;
            }
            for (std::size_t c = 0; c < out.cols(); ++c) {
                out.at(i, c) += v * layer.weight.at(j, c);
            }
        }
        for (std::size_t c = 0; c < out.cols(); ++c) {
            out.at(i, c) += layer.bias.at(0, c);
            if (apply_relu && out.at(i, c) < 0.0) {
                out.at(i, c) = 0.0;
            }
        }
    }
    return out;
}

} // namespace

Tensor forward_layers(const Tensor& in, std::span<const DenseLayer> layers, bool logits_out) {
    if (layers.empty()) {
        throw std::invalid_argument("forward_layers: empty layer span");
    }
    Tensor h = in;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const bool last = l + 1 == layers.size();
        h = dense_forward(h, layers[l], !(last && logits_out));
    }
    return h;
}

Tensor extract_features(const Tensor& x, std::span<const DenseLayer> extractor) {
    return forward_layers(x, extractor, /*logits_out=*/false);
}

Tensor classify(const Tensor& h, std::span<const DenseLayer> classifier) {
    return softmax_rows(forward_layers(h, classifier, /*logits_out=*/true));
}

double local_loss(const Tensor& x, const Tensor& one_hot_labels,
                  std::span<const DenseLayer> layers) {
    if (x.rows() == 0) {
        throw std::invalid_argument("local_loss: empty batch");
    }
    Graph g;
    const NodeId in = g.input(x);
    const NodeId logits = forward_staged(g, in, stage_layers(g, layers, false), true);
    return g.value(g.softmax_cross_entropy(logits, one_hot_labels)).item();
}

std::vector<StagedLayer> stage_layers(Graph& g, std::span<const DenseLayer> layers,
                                      bool trainable) {
    std::vector<StagedLayer> staged;
    staged.reserve(layers.size());
    for (const DenseLayer& layer : layers) {
        staged.push_back({g.input(layer.weight, trainable), g.input(layer.bias, trainable)});
    }
    return staged;
}

NodeId forward_staged(Graph& g, NodeId in, const std::vector<StagedLayer>& layers,
                      bool logits_out) {
    NodeId h = in;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        h = g.add_rowwise_bias(g.matmul(h, layers[l].weight), layers[l].bias);
        const bool last = l + 1 == layers.size();
        if (!(last && logits_out)) {
            h = g.relu(h);
        }
    }
    return h;
}

LayerStack read_layer_gradients(const Graph& g, const std::vector<StagedLayer>& staged) {
    LayerStack grads;
    grads.reserve(staged.size());
    for (const StagedLayer& s : staged) {
        grads.push_back({g.gradient(s.weight), g.gradient(s.bias)});
    }
    return grads;
}

SgdState make_sgd_state(std::span<const DenseLayer> params) {
    SgdState state;
    state.velocity.reserve(params.size());
    for (const DenseLayer& p : params) {
        state.velocity.push_back(
            {Tensor(p.weight.rows(), p.weight.cols()), Tensor(p.bias.rows(), p.bias.cols())});
    }
    return state;
}

void sgd_step(LayerStack& params, const LayerStack& grads, const SgdOptions& opt,
              SgdState& state) {
    if (grads.size() != params.size() || state.velocity.size() != params.size()) {
        throw std::invalid_argument("sgd_step: parameter/gradient/state count mismatch");
    }
    for (std::size_t l = 0; l < params.size(); ++l) {
        if (!params[l].weight.same_shape(grads[l].weight) ||
            !params[l].bias.same_shape(grads[l].bias)) {
            throw std::invalid_argument("sgd_step: gradient shape mismatch at layer " +
                                        std::to_string(l));
        }
        if (!grads[l].weight.all_finite() || !grads[l].bias.all_finite()) {
            throw std::runtime_error("sgd_step: non-finite gradient at layer " +
                                     std::to_string(l) + "; step aborted");
        }
    }
    for (std::size_t l = 0; l < params.size(); ++l) {
        auto& vel = state.velocity[l];
        auto& p = params[l];
        const auto& gr = grads[l];
        for (std::size_t i = 0; i < p.weight.size(); ++i) {
            double& buf = vel.weight.data()[i];
            buf = opt.momentum * buf + gr.weight.data()[i] + opt.weight_decay * p.weight.data()[i];
            p.weight.data()[i] -= opt.learning_rate * buf;
        }
        for (std::size_t i = 0; i < p.bias.size(); ++i) {
            double& buf = vel.bias.data()[i];
            buf = opt.momentum * buf + gr.bias.data()[i];
            p.bias.data()[i] -= opt.learning_rate * buf;
        }
    }
}

// --- checkpoints -------------------------------------------------------------

namespace {

constexpr char kModelMagic[4] = {'F', 'A', 'F', 'A'};
constexpr std::uint32_t kModelVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw IoError(std::string("load_model: truncated file reading ") + what);
    }
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f32(std::ostream& out, const Tensor& t) {
    for (double v : t.data()) {
        const float f = static_cast<float>(v);
        static_assert(sizeof(float) == 4);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        write_u32(out, bits);
    }
}

void read_f32(std::istream& in, Tensor& t) {
    for (double& v : t.data()) {
        const std::uint32_t bits = read_u32(in, "parameters");
        float f;
        std::memcpy(&f, &bits, 4);
        v = static_cast<double>(f);
    }
}

} // namespace

void save_model(const SplitModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("save_model: cannot open " + path.string());
    }
    out.write(kModelMagic, 4);
    write_u32(out, kModelVersion);
    write_u32(out, static_cast<std::uint32_t>(model.layer_sizes.size()));
    for (std::size_t s : model.layer_sizes) {
        write_u32(out, static_cast<std::uint32_t>(s));
    }
    write_u32(out, static_cast<std::uint32_t>(model.boundary_index));
    for (const DenseLayer& layer : model.layers) {
        write_f32(out, layer.weight);
        write_f32(out, layer.bias);
    }
    if (!out) {
        throw IoError("save_model: write failed for " + path.string());
    }
}

SplitModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("load_model: cannot open " + path.string());
    }
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kModelMagic, 4) != 0) {
        throw IoError("load_model: bad magic in " + path.string());
    }
    const std::uint32_t version = read_u32(in, "version");
    if (version != kModelVersion) {
        throw IoError("load_model: unsupported version " + std::to_string(version));
    }
    const std::uint32_t n_sizes = read_u32(in, "layer count");
    if (n_sizes < 3 || n_sizes > 64) {
        throw IoError("load_model: implausible layer-size count " +
                                 std::to_string(n_sizes));
    }
    std::vector<std::size_t> sizes(n_sizes);
    for (auto& s : sizes) {
        s = read_u32(in, "layer sizes");
    }
    const std::uint32_t boundary = read_u32(in, "boundary index");

    SplitModel model;
    model.layer_sizes = sizes;
    model.boundary_index = boundary;
    if (boundary + 2 >= sizes.size()) {
        throw IoError("load_model: boundary index " + std::to_string(boundary) +
                                 " invalid for " + std::to_string(sizes.size() - 1) + " layers");
    }
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        DenseLayer layer{Tensor(sizes[l], sizes[l + 1]), Tensor(1, sizes[l + 1])};
        read_f32(in, layer.weight);
        read_f32(in, layer.bias);
        model.layers.push_back(std::move(layer));
    }
    // The file must end exactly after the parameters.
    char extra;
    if (in.read(&extra, 1)) {
        throw IoError("load_model: trailing bytes in " + path.string());
    }
    return model;
}

} // namespace fedafa

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fedafa/graph.hpp"
#include "fedafa/tensor.hpp"

namespace fedafa {

struct DenseLayer {
    Tensor weight; // fan_in x fan_out
    Tensor bias;   // 1 x fan_out
};

using LayerStack = std::vector<DenseLayer>;

/// MLP split into a feature extractor and a classifier head at a
/// configurable hidden-layer boundary. The boundary is a view into one
/// parameter list: extractor = layers [0, boundary_index], classifier =
/// the rest. Features are the (post-activation) output of hidden layer
/// boundary_index.
struct SplitModel {
    std::vector<std::size_t> layer_sizes; // input dim, hidden widths..., class count
    std::size_t boundary_index = 0;
    LayerStack layers;

    std::size_t input_dim() const { return layer_sizes.front(); }
    std::size_t class_count() const { return layer_sizes.back(); }
    std::size_t feature_dim() const { return layer_sizes[boundary_index + 1]; }

    std::span<const DenseLayer> extractor() const {
        return {layers.data(), boundary_index + 1};
    }
    std::span<const DenseLayer> classifier() const {
        return {layers.data() + boundary_index + 1, layers.size() - boundary_index - 1};
    }
    LayerStack classifier_copy() const {
        return LayerStack(classifier().begin(), classifier().end());
    }
};

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
/// Deterministic for a given seed.
SplitModel init_model(const std::vector<std::size_t>& layer_sizes, std::size_t boundary_index,
                      std::uint64_t seed);

/// Replaces the classifier part of `model` with `head` (shapes must match).
SplitModel with_classifier(const SplitModel& model, const LayerStack& head);

/// ReLU-activated forward through a span of layers. When logits_out is set
/// the last layer is left unactivated.
Tensor forward_layers(const Tensor& in, std::span<const DenseLayer> layers, bool logits_out);

/// h = g(x; u). x is (n x input_dim); result is (n x feature_dim).
Tensor extract_features(const Tensor& x, std::span<const DenseLayer> extractor);

/// Class probabilities f(h; v); rows sum to 1.
Tensor classify(const Tensor& h, std::span<const DenseLayer> classifier);

/// Mean cross-entropy of the full model on a batch.
double local_loss(const Tensor& x, const Tensor& one_hot_labels,
                  std::span<const DenseLayer> layers);

// --- graph staging for training -------------------------------------------

struct StagedLayer {
    NodeId weight;
    NodeId bias;
};

/// Copies layer parameters onto the tape. trainable controls whether the
/// backward pass tracks their gradients.
std::vector<StagedLayer> stage_layers(Graph& g, std::span<const DenseLayer> layers,
                                      bool trainable);

NodeId forward_staged(Graph& g, NodeId in, const std::vector<StagedLayer>& layers,
                      bool logits_out);

/// Reads gradients of staged layers back into a LayerStack-shaped container.
LayerStack read_layer_gradients(const Graph& g, const std::vector<StagedLayer>& staged);

// --- SGD --------------------------------------------------------------------

struct SgdOptions {
    double learning_rate = 0.005;
    double momentum = 0.9;
    double weight_decay = 5e-4; // applied to weights only, never biases
};

struct SgdState {
    LayerStack velocity; // momentum buffers, shapes mirror the parameters
};

SgdState make_sgd_state(std::span<const DenseLayer> params);

/// buffer <- momentum * buffer + grad (+ wd * weight); param <- param - lr * buffer.
/// Rejects non-finite gradients before touching any parameter.
void sgd_step(LayerStack& params, const LayerStack& grads, const SgdOptions& opt,
              SgdState& state);

// --- checkpoints -------------------------------------------------------------

/// Binary checkpoint: "FAFA" magic, u32 version, u32 layer-size count,
/// layer sizes as u32, u32 boundary index, then per layer the weight
/// (row-major) and bias as little-endian float32.
void save_model(const SplitModel& model, const std::filesystem::path& path);
SplitModel load_model(const std::filesystem::path& path);

} // namespace fedafa

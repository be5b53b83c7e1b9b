#pragma once

#include <cstddef>
#include <vector>

#include "fedafa/tensor.hpp"

namespace fedafa {

using NodeId = std::size_t;

/// Reverse-mode differentiation tape. One Graph serves exactly one
/// forward/backward pair; build a fresh Graph for the next pass.
///
/// Nodes are appended in construction order, which is already a
/// topological order, so backward() is a single reverse scan. Gradients
/// accumulate additively when a node feeds several consumers.
class Graph {
public:
    /// Registers a leaf tensor. Gradients are tracked only when
    /// requires_grad is set.
    NodeId input(Tensor value, bool requires_grad = false);

    NodeId matmul(NodeId a, NodeId b);
    /// a is (n x c), bias is (1 x c), added to every row.
    NodeId add_rowwise_bias(NodeId a, NodeId bias);
    NodeId relu(NodeId a);
    /// Mean cross-entropy over rows, fused with a max-subtracted softmax.
    /// one_hot_labels must contain exactly one 1 per row and 0 elsewhere.
    NodeId softmax_cross_entropy(NodeId logits, const Tensor& one_hot_labels);

    NodeId add(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b); // elementwise
    NodeId scale(NodeId a, double factor);
    NodeId sum(NodeId a); // scalar

    const Tensor& value(NodeId id) const;

    /// Propagates gradients from a scalar loss to every node with
    /// requires_grad. May be called once per graph.
    void backward(NodeId loss);

    /// Gradient of the last backward() w.r.t. the given node.
    const Tensor& gradient(NodeId id) const;

    /// d(loss)/d(wrt) for a leaf marked differentiable before the forward
    /// pass. Runs backward() if it has not run yet.
    const Tensor& input_gradient(NodeId loss, NodeId wrt);

    std::size_t node_count() const { return nodes_.size(); }

private:
    enum class Op {
        input,
        matmul,
        add_rowwise_bias,
        relu,
        softmax_cross_entropy,
        add,
        mul,
        scale,
        sum,
    };

    struct Node {
        Op op;
        NodeId args[2] = {0, 0};
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        Tensor aux;           // softmax probs / one-hot labels
        double scalar = 0.0;  // scale factor
    };

    NodeId push(Node node);
    const Node& node(NodeId id) const;
    void check_id(NodeId id) const;
    void backward_node(const Node& n);
    void accumulate(NodeId id, std::size_t r, std::size_t c, double g);

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

} // namespace fedafa

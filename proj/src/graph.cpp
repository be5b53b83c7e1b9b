#include "fedafa/graph.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fedafa {

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_string(a) +
                                " and " + shape_string(b));
}

} // namespace

NodeId Graph::push(Node node) {
    nodes_.push_back(std::move(node));
    return nodes_.size() - 1;
}

const Graph::Node& Graph::node(NodeId id) const {
    check_id(id);
    return nodes_[id];
}

void Graph::check_id(NodeId id) const {
    if (id >= nodes_.size()) {
        throw std::invalid_argument("Graph: node " + std::to_string(id) +
                                    " is not part of this graph");
    }
}

NodeId Graph::input(Tensor value, bool requires_grad) {
    Node n;
    n.op = Op::input;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.value.cols() != nb.value.rows()) {
        shape_error("matmul", na.value, nb.value);
    }
    const std::size_t m = na.value.rows();
    const std::size_t k = na.value.cols();
    const std::size_t p = nb.value.cols();
    Node n;
    n.op = Op::matmul;
    n.args[0] = a;
    n.args[1] = b;
    n.requires_grad = na.requires_grad || nb.requires_grad;
    n.value = Tensor(m, p);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            const double av = na.value.at(i, j);
            if (av == 0.0) {
                continue;
            }
            for (std::size_t c = 0; c < p; ++c) {
                n.value.at(i, c) += av * nb.value.at(j, c);
            }
        }
    }
    return push(std::move(n));
}

NodeId Graph::add_rowwise_bias(NodeId a, NodeId bias) {
    const Node& na = node(a);
    const Node& nb = node(bias);
    if (nb.value.rows() != 1 || nb.value.cols() != na.value.cols()) {
        shape_error("add_rowwise_bias", na.value, nb.value);
    }
    Node n;
    n.op = Op::add_rowwise_bias;
    n.args[0] = a;
    n.args[1] = bias;
    n.requires_grad = na.requires_grad || nb.requires_grad;
    n.value = na.value;
    for (std::size_t r = 0; r < n.value.rows(); ++r) {
        for (std::size_t c = 0; c < n.value.cols(); ++c) {
            n.value.at(r, c) += nb.value.at(0, c);
        }
    }
    return push(std::move(n));
}

NodeId Graph::relu(NodeId a) {
    const Node& na = node(a);
    Node n;
    n.op = Op::relu;
    n.args[0] = a;
    n.requires_grad = na.requires_grad;
    n.value = na.value;
    for (double& v : n.value.data()) {
        v = v > 0.0 ? v : 0.0;
    }
    return push(std::move(n));
}

NodeId Graph::softmax_cross_entropy(NodeId logits, const Tensor& one_hot_labels) {
    const Node& nl = node(logits);
    if (!nl.value.same_shape(one_hot_labels)) {
        shape_error("softmax_cross_entropy", nl.value, one_hot_labels);
    }
    for (std::size_t r = 0; r < one_hot_labels.rows(); ++r) {
        std::size_t ones = 0;
        for (std::size_t c = 0; c < one_hot_labels.cols(); ++c) {
            const double v = one_hot_labels.at(r, c);
            if (v == 1.0) {
                ++ones;
            } else if (v != 0.0) {
                throw std::invalid_argument(
                    "softmax_cross_entropy: label row " + std::to_string(r) + " is not one-hot");
            }
        }
        if (ones != 1) {
            throw std::invalid_argument("softmax_cross_entropy: label row " + std::to_string(r) +
                                        " has " + std::to_string(ones) + " entries equal to 1");
        }
    }

    const std::size_t n_rows = nl.value.rows();
    const std::size_t n_cols = nl.value.cols();
    Tensor probs(n_rows, n_cols);
    double loss = 0.0;
    for (std::size_t r = 0; r < n_rows; ++r) {
        double row_max = nl.value.at(r, 0);
        for (std::size_t c = 1; c < n_cols; ++c) {
            row_max = std::max(row_max, nl.value.at(r, c));
        }
        double denom = 0.0;
        for (std::size_t c = 0; c < n_cols; ++c) {
            const double e = std::exp(nl.value.at(r, c) - row_max);
            probs.at(r, c) = e;
            denom += e;
        }
        double label_shifted = 0.0;
        for (std::size_t c = 0; c < n_cols; ++c) {
            probs.at(r, c) /= denom;
            if (one_hot_labels.at(r, c) == 1.0) {
                label_shifted = nl.value.at(r, c) - row_max;
            }
        }
        // log-sum-exp minus the true-class shifted logit; never log(0).
        loss += std::log(denom) - label_shifted;
    }
    loss /= static_cast<double>(n_rows);

    Node n;
    n.op = Op::softmax_cross_entropy;
    n.args[0] = logits;
    n.requires_grad = nl.requires_grad;
    n.value = Tensor::scalar(loss);
    n.aux = std::move(probs);
    // Keep the labels for the backward pass; stored in scalar-free aux slot.
    // probs - one_hot is reconstructed there.
    Node labels_holder;
    labels_holder.op = Op::input;
    labels_holder.value = one_hot_labels;
    const NodeId labels_id = push(std::move(labels_holder));
    n.args[1] = labels_id;
    return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (!na.value.same_shape(nb.value)) {
        shape_error("add", na.value, nb.value);
    }
    Node n;
    n.op = Op::add;
    n.args[0] = a;
    n.args[1] = b;
    n.requires_grad = na.requires_grad || nb.requires_grad;
    n.value = na.value;
    for (std::size_t i = 0; i < n.value.size(); ++i) {
        n.value.data()[i] += nb.value.data()[i];
    }
    return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (!na.value.same_shape(nb.value)) {
        shape_error("mul", na.value, nb.value);
    }
    Node n;
    n.op = Op::mul;
    n.args[0] = a;
    n.args[1] = b;
    n.requires_grad = na.requires_grad || nb.requires_grad;
    n.value = na.value;
    for (std::size_t i = 0; i < n.value.size(); ++i) {
        n.value.data()[i] *= nb.value.data()[i];
    }
    return push(std::move(n));
}

NodeId Graph::scale(NodeId a, double factor) {
    const Node& na = node(a);
    Node n;
    n.op = Op::scale;
    n.args[0] = a;
    n.requires_grad = na.requires_grad;
    n.scalar = factor;
    n.value = na.value;
    for (double& v : n.value.data()) {
        v *= factor;
    }
    return push(std::move(n));
}

NodeId Graph::sum(NodeId a) {
    const Node& na = node(a);
    double s = 0.0;
    for (double v : na.value.data()) {
        s += v;
    }
    Node n;
    n.op = Op::sum;
    n.args[0] = a;
    n.requires_grad = na.requires_grad;
    n.value = Tensor::scalar(s);
    return push(std::move(n));
}

const Tensor& Graph::value(NodeId id) const {
    return node(id).value;
}

void Graph::backward(NodeId loss) {
    check_id(loss);
    if (backward_done_) {
        throw std::runtime_error("Graph::backward: already ran on this graph; "
                                 "build a new graph for another pass");
    }
    Node& root = nodes_[loss];
    if (root.value.size() != 1) {
        throw std::invalid_argument("Graph::backward: loss must be scalar, got " +
                                    shape_string(root.value));
    }
    backward_done_ = true;

    // Zero-init gradient buffers for every node that tracks gradients.
    for (Node& n : nodes_) {
        if (n.requires_grad) {
            n.grad = Tensor(n.value.rows(), n.value.cols());
        }
    }
    if (!root.requires_grad) {
        return; // loss does not depend on anything differentiable
    }
    root.grad.at(0, 0) = 1.0;

    for (std::size_t i = nodes_.size(); i-- > 0;) {
        const Node& n = nodes_[i];
        if (n.requires_grad && n.op != Op::input) {
            backward_node(n);
        }
    }
}

void Graph::accumulate(NodeId id, std::size_t r, std::size_t c, double g) {
    Node& n = nodes_[id];
    if (n.requires_grad) {
        n.grad.at(r, c) += g;
    }
}

void Graph::backward_node(const Node& n) {
    const Tensor& g = n.grad;
    switch (n.op) {
    case Op::input:
        break;
    case Op::matmul: {
        const Node& a = nodes_[n.args[0]];
        const Node& b = nodes_[n.args[1]];
        const std::size_t m = a.value.rows();
        const std::size_t k = a.value.cols();
        const std::size_t p = b.value.cols();
        if (a.requires_grad) {
            // dA = dC * B^T
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < k; ++j) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < p; ++c) {
                        s += g.at(i, c) * b.value.at(j, c);
                    }
                    nodes_[n.args[0]].grad.at(i, j) += s;
                }
            }
        }
        if (b.requires_grad) {
            // dB = A^T * dC
            for (std::size_t j = 0; j < k; ++j) {
                for (std::size_t c = 0; c < p; ++c) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < m; ++i) {
                        s += a.value.at(i, j) * g.at(i, c);
                    }
                    nodes_[n.args[1]].grad.at(j, c) += s;
                }
            }
        }
        break;
    }
    case Op::add_rowwise_bias: {
        for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < g.cols(); ++c) {
                accumulate(n.args[0], r, c, g.at(r, c));
                accumulate(n.args[1], 0, c, g.at(r, c));
            }
        }
        break;
    }
    case Op::relu: {
        const Node& a = nodes_[n.args[0]];
        if (a.requires_grad) {
            for (std::size_t r = 0; r < g.rows(); ++r) {
                for (std::size_t c = 0; c < g.cols(); ++c) {
                    if (a.value.at(r, c) > 0.0) {
                        nodes_[n.args[0]].grad.at(r, c) += g.at(r, c);
                    }
                }
            }
        }
        break;
    }
    case Op::softmax_cross_entropy: {
        const Node& logits = nodes_[n.args[0]];
        if (logits.requires_grad) {
            const Tensor& labels = nodes_[n.args[1]].value;
            const double upstream = g.at(0, 0);
            const double inv_rows = 1.0 / static_cast<double>(logits.value.rows());
            for (std::size_t r = 0; r < logits.value.rows(); ++r) {
                for (std::size_t c = 0; c < logits.value.cols(); ++c) {
                    const double d = (n.aux.at(r, c) - labels.at(r, c)) * inv_rows;
                    nodes_[n.args[0]].grad.at(r, c) += upstream * d;
                }
            }
        }
        break;
    }
    case Op::add: {
        for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < g.cols(); ++c) {
                accumulate(n.args[0], r, c, g.at(r, c));
                accumulate(n.args[1], r, c, g.at(r, c));
            }
        }
        break;
    }
    case Op::mul: {
        const Node& a = nodes_[n.args[0]];
        const Node& b = nodes_[n.args[1]];
        for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < g.cols(); ++c) {
                if (a.requires_grad) {
                    nodes_[n.args[0]].grad.at(r, c) += g.at(r, c) * b.value.at(r, c);
                }
                if (b.requires_grad) {
                    nodes_[n.args[1]].grad.at(r, c) += g.at(r, c) * a.value.at(r, c);
                }
            }
        }
        break;
    }
    case Op::scale: {
        for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < g.cols(); ++c) {
                accumulate(n.args[0], r, c, g.at(r, c) * n.scalar);
            }
        }
        break;
    }
    case Op::sum: {
        const Node& a = nodes_[n.args[0]];
        if (a.requires_grad) {
            const double upstream = g.at(0, 0);
            for (std::size_t r = 0; r < a.value.rows(); ++r) {
                for (std::size_t c = 0; c < a.value.cols(); ++c) {
                    nodes_[n.args[0]].grad.at(r, c) += upstream;
                }
            }
        }
        break;
    }
    }
}

const Tensor& Graph::gradient(NodeId id) const {
    const Node& n = node(id);
    if (!n.requires_grad) {
        throw std::invalid_argument("Graph::gradient: node " + std::to_string(id) +
                                    " was not marked differentiable");
    }
    if (!backward_done_) {
        throw std::runtime_error("Graph::gradient: backward() has not run");
    }
    return n.grad;
}

const Tensor& Graph::input_gradient(NodeId loss, NodeId wrt) {
    check_id(wrt);
    if (!nodes_[wrt].requires_grad) {
        throw std::invalid_argument("Graph::input_gradient: node " + std::to_string(wrt) +
                                    " was not marked differentiable before the forward pass");
    }
    if (!backward_done_) {
        backward(loss);
    }
    return nodes_[wrt].grad;
}

} // namespace fedafa

#include "fedafa/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace fedafa {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != rows_ * cols_) {
        throw std::invalid_argument("Tensor: " + std::to_string(data_.size()) +
                                    " values do not fill shape " + std::to_string(rows_) + "x" +
                                    std::to_string(cols_));
    }
}

Tensor Tensor::row_vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(1, n, std::move(values));
}

Tensor Tensor::scalar(double value) {
    return Tensor(1, 1, {value});
}

double Tensor::item() const {
    if (size() != 1) {
        throw std::invalid_argument("Tensor::item: tensor is " + shape_string(*this) +
                                    ", expected 1x1");
    }
    return data_[0];
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

std::string shape_string(const Tensor& t) {
    return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

double l2_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) {
        s += x * x;
    }
    return std::sqrt(s);
}

Tensor softmax_rows(const Tensor& logits) {
    Tensor out(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        double row_max = logits.at(r, 0);
        for (std::size_t c = 1; c < logits.cols(); ++c) {
            row_max = std::max(row_max, logits.at(r, c));
        }
        double denom = 0.0;
        for (std::size_t c = 0; c < logits.cols(); ++c) {
            const double e = std::exp(logits.at(r, c) - row_max);
            out.at(r, c) = e;
            denom += e;
        }
        for (std::size_t c = 0; c < logits.cols(); ++c) {
            out.at(r, c) /= denom;
        }
    }
    return out;
}

Tensor one_hot(const std::vector<int>& labels, std::size_t class_count) {
    Tensor out(labels.size(), class_count);
    for (std::size_t r = 0; r < labels.size(); ++r) {
        const int y = labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= class_count) {
            throw std::invalid_argument("one_hot: label " + std::to_string(y) +
                                        " outside [0, " + std::to_string(class_count) + ")");
        }
        out.at(r, static_cast<std::size_t>(y)) = 1.0;
    }
    return out;
}

} // namespace fedafa

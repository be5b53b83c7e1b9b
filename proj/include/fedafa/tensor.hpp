#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace fedafa {

/// Dense 2-D tensor of doubles, row-major. Row vectors are 1 x n.
/// Values live outside any graph; see Graph for differentiation.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

    static Tensor row_vector(std::vector<double> values);
    static Tensor scalar(double value);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    std::vector<std::size_t> shape() const { return {rows_, cols_}; }

    double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    /// Value of a 1x1 tensor.
    double item() const;

    bool same_shape(const Tensor& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    bool all_finite() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

std::string shape_string(const Tensor& t);

double l2_norm(const std::vector<double>& v);

/// Row-wise softmax with max subtraction.
Tensor softmax_rows(const Tensor& logits);

/// One-hot rows for the given labels.
Tensor one_hot(const std::vector<int>& labels, std::size_t class_count);

} // namespace fedafa

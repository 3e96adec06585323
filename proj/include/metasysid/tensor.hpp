#pragma once

#include <stdexcept>

#include <Eigen/Dense>

namespace metasysid {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A batch of sequences, batch x steps x channels, stored as a
/// (batch * steps) x channels row-major matrix. Row b * steps + t holds step t
/// of sequence b.
template <class T>
struct SeqTensor {
    int batch = 0;
    int steps = 0;
    Matrix<T> data;

    SeqTensor() = default;
    SeqTensor(int batch_size, int n_steps, int channels)
        : batch(batch_size), steps(n_steps), data(Matrix<T>::Zero(Eigen::Index{batch_size} * n_steps, channels)) {}
    SeqTensor(int batch_size, int n_steps, Matrix<T> values) : batch(batch_size), steps(n_steps), data(std::move(values)) {
        if (data.rows() != Eigen::Index{batch} * steps)
            throw std::invalid_argument("SeqTensor: row count does not match batch * steps");
    }

    [[nodiscard]] int channels() const { return static_cast<int>(data.cols()); }

    T& operator()(int b, int t, int c) { return data(Eigen::Index{b} * steps + t, c); }
    T operator()(int b, int t, int c) const { return data(Eigen::Index{b} * steps + t, c); }

    auto sequence(int b) { return data.middleRows(Eigen::Index{b} * steps, steps); }
    auto sequence(int b) const { return data.middleRows(Eigen::Index{b} * steps, steps); }

    /// Copy of steps [begin, end) of every sequence.
    [[nodiscard]] SeqTensor slice_steps(int begin, int end) const {
        if (begin < 0 || end > steps || begin > end) throw std::invalid_argument("SeqTensor::slice_steps: bad range");
        SeqTensor out(batch, end - begin, channels());
        for (int b = 0; b < batch; ++b) out.sequence(b) = sequence(b).middleRows(begin, end - begin);
        return out;
    }

    /// Concatenate along channels (same batch and steps).
    [[nodiscard]] friend SeqTensor concat_channels(const SeqTensor& a, const SeqTensor& b) {
        if (a.batch != b.batch || a.steps != b.steps)
            throw std::invalid_argument("concat_channels: batch/steps mismatch");
        SeqTensor out(a.batch, a.steps, a.channels() + b.channels());
        out.data.leftCols(a.channels()) = a.data;
        out.data.rightCols(b.channels()) = b.data;
        return out;
    }

    template <class U>
    [[nodiscard]] SeqTensor<U> cast() const {
        return SeqTensor<U>(batch, steps, data.template cast<U>().eval());
    }
};

}  // namespace metasysid

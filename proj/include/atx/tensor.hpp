#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace atx {

// Errors map to CLI exit codes at the boundary: config=2, data=3, numeric=4.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dense row-major tensor of doubles. Image batches are NCHW.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape)
        : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}
    Tensor(std::vector<int64_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<int64_t>(data_.size()) != checked_numel(shape_))
            throw InputError("tensor data size does not match shape");
    }

    static Tensor full(std::vector<int64_t> shape, double v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }
    static Tensor zeros_like(const Tensor& o) { return Tensor(o.shape_); }

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t shape(size_t i) const { return shape_.at(i); }
    size_t ndim() const { return shape_.size(); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // NCHW accessor.
    double& at4(int64_t n, int64_t c, int64_t h, int64_t w) {
        return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }
    double at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    Tensor reshaped(std::vector<int64_t> shape) const {
        if (checked_numel(shape) != numel()) throw InputError("reshape changes element count");
        return Tensor(std::move(shape), data_);
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    static int64_t checked_numel(const std::vector<int64_t>& shape) {
        int64_t n = 1;
        for (int64_t d : shape) {
            if (d <= 0) throw InputError("non-positive tensor dimension");
            n *= d;
        }
        return n;
    }

    static std::string shape_str(const std::vector<int64_t>& s) {
        std::string r = "(";
        for (size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
        return r + ")";
    }

  private:
    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

// All randomness flows through explicitly seeded engines.
using Rng = std::mt19937_64;

inline void fill_normal(Tensor& t, Rng& rng, double mean, double stddev) {
    std::normal_distribution<double> d(mean, stddev);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = d(rng);
}

inline void fill_uniform(Tensor& t, Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = d(rng);
}

// C := alpha * op(A) * op(B) + beta * C, row-major.
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, double alpha,
          const double* a, int64_t lda, const double* b, int64_t ldb, double beta, double* c,
          int64_t ldc);

}  // namespace atx

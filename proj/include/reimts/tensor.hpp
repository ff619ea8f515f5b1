#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace reimts {

/// Dense row-major double tensor. Shapes are small (rank <= 4); all math in
/// this library runs in double precision so gradient checks and determinism
/// assertions hold bit-for-bit.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<long> shape)
        : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

    Tensor(std::vector<long> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<long>(data_.size()) != checked_numel(shape_))
            throw std::invalid_argument("Tensor: data size does not match shape");
    }

    static Tensor zeros(std::vector<long> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<long> shape, double v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor row(std::vector<double> v) {
        long n = static_cast<long>(v.size());
        return Tensor({1, n}, std::move(v));
    }

    const std::vector<long>& shape() const { return shape_; }
    long rank() const { return static_cast<long>(shape_.size()); }
    long dim(long i) const { return shape_.at(static_cast<std::size_t>(i)); }
    long numel() const { return static_cast<long>(data_.size()); }

    long rows() const { require_rank(2); return shape_[0]; }
    long cols() const { require_rank(2); return shape_[1]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    double& operator[](long i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](long i) const { return data_[static_cast<std::size_t>(i)]; }

    double& at2(long i, long j) {
        require_rank(2);
        return data_[static_cast<std::size_t>(i * shape_[1] + j)];
    }
    double at2(long i, long j) const {
        require_rank(2);
        return data_[static_cast<std::size_t>(i * shape_[1] + j)];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    Tensor reshaped(std::vector<long> shape) const {
        if (checked_numel(shape) != numel())
            throw std::invalid_argument("Tensor::reshaped: element count mismatch");
        return Tensor(std::move(shape), data_);
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    double max_abs() const {
        double m = 0.0;
        for (double v : data_) m = std::max(m, std::abs(v));
        return m;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape_.size(); ++i)
            os << (i ? "x" : "") << shape_[i];
        os << "]";
        return os.str();
    }

private:
    static long checked_numel(const std::vector<long>& shape) {
        long n = 1;
        for (long d : shape) {
            if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    void require_rank(long r) const {
        if (rank() != r)
            throw std::logic_error("Tensor: expected rank " + std::to_string(r) +
                                   ", got shape " + shape_str());
    }

    std::vector<long> shape_;
    std::vector<double> data_;
};

/// splitmix64 — used to derive independent sub-seeds (per sample, per purpose)
/// from one user seed without correlated streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    return splitmix64(base ^ splitmix64(stream + 0x51ed2701ULL));
}

/// Thin deterministic RNG wrapper; one instance per purpose (init, data
/// order, generation) so streams never interleave.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    double uniform(double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(eng_);
    }

    double normal(double mean, double stddev) {
        std::normal_distribution<double> d(mean, stddev);
        return d(eng_);
    }

    long poisson(double rate) {
        std::poisson_distribution<long> d(rate);
        return d(eng_);
    }

    long index(long n) {
        std::uniform_int_distribution<long> d(0, n - 1);
        return d(eng_);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        std::shuffle(v.begin(), v.end(), eng_);
    }

    std::mt19937_64& engine() { return eng_; }

private:
    std::mt19937_64 eng_;
};

inline Tensor uniform_tensor(std::vector<long> shape, double lo, double hi, Rng& rng) {
    Tensor t(std::move(shape));
    for (long i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

} // namespace reimts

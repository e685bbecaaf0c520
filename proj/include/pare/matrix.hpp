#pragma once
// Dense row-major matrix plus the small numeric helpers used everywhere:
// double-accumulated reductions and seeded parameter initialization.

#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace pare {

template <class S>
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<S> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, S fill = S(0)) : rows(r), cols(c), data(r * c, fill) {}

    S* row(std::size_t r) { return data.data() + r * cols; }
    const S* row(std::size_t r) const { return data.data() + r * cols; }

    std::span<S> row_span(std::size_t r) { return {row(r), cols}; }
    std::span<const S> row_span(std::size_t r) const { return {row(r), cols}; }

    S& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    const S& at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    bool all_finite() const {
        for (S v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <class T>
    Matrix<T> cast() const {
        Matrix<T> out(rows, cols);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
        return out;
    }
};

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

// Reductions accumulate in double regardless of storage type.
template <class S>
inline double dot_acc(const S* a, const S* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

template <class S>
inline double sum_acc(const S* a, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]);
    return acc;
}

template <class S>
inline double norm_acc(const S* a, std::size_t n) {
    return std::sqrt(dot_acc(a, a, n));
}

// Deterministic seed derivation: one master seed, one label per consumer.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view label) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return mix_seed(seed, h);
}

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) fill, the init used for weight matrices.
template <class S>
inline void fill_uniform_fan_in(Matrix<S>& m, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (S& v : m.data) v = static_cast<S>(dist(rng));
}

template <class S>
inline void fill_normal(Matrix<S>& m, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (S& v : m.data) v = static_cast<S>(dist(rng));
}

}  // namespace pare

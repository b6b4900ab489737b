#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace fsl {

// Error taxonomy used across the library.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) {
        if (d < 0)
            throw ContractError("negative extent in shape");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i)
            out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Dense row-major real array. All library math is double precision.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(static_cast<std::size_t>(shape_numel(shape)), 0.0) {}
    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
            throw ContractError("tensor data length does not match shape " + shape_str(shape));
    }

    static Tensor scalar(double v) { return Tensor({}, {v}); }
    static Tensor vec(std::vector<double> d) {
        Shape s{static_cast<int>(d.size())};
        return Tensor(std::move(s), std::move(d));
    }
    static Tensor mat(int rows, int cols, std::vector<double> d) { return Tensor({rows, cols}, std::move(d)); }
    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor ones(Shape s) {
        Tensor t(std::move(s));
        for (auto& v : t.data)
            v = 1.0;
        return t;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int rows() const { return shape.size() == 2 ? shape[0] : (shape.size() == 1 ? shape[0] : 1); }
    int cols() const { return shape.size() == 2 ? shape[1] : 1; }

    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v))
                return false;
        return true;
    }
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

inline void require_matrix(const Tensor& t, const char* who) {
    if (t.shape.size() != 2)
        throw ContractError(std::string(who) + ": expected a 2-d tensor, got " + shape_str(t.shape));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!same_shape(a, b))
        throw ContractError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace fsl

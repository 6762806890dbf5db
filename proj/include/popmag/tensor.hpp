#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace popmag {

// Dense row-major 2D array of doubles. Vectors are 1 x n or n x 1 as
// convenient. All model math runs in 64-bit so gradient checks are tight.
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), data(size_t(r) * c, 0.0) {}

    double* operator[](int r) { return data.data() + size_t(r) * cols; }
    const double* operator[](int r) const { return data.data() + size_t(r) * cols; }
    double& at(int r, int c) { return data[size_t(r) * cols + c]; }
    double at(int r, int c) const { return data[size_t(r) * cols + c]; }

    size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }
    void zero() { std::fill(data.begin(), data.end(), 0.0); }

    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    // Rows [r0, r1) as a copy.
    Tensor slice_rows(int r0, int r1) const {
        Tensor out(r1 - r0, cols);
        std::copy(data.begin() + size_t(r0) * cols, data.begin() + size_t(r1) * cols,
                  out.data.begin());
        return out;
    }

    // Vertical concatenation.
    static Tensor vcat(const Tensor& a, const Tensor& b) {
        if (a.empty()) return b;
        if (b.empty()) return a;
        assert(a.cols == b.cols);
        Tensor out(a.rows + b.rows, a.cols);
        std::copy(a.data.begin(), a.data.end(), out.data.begin());
        std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
        return out;
    }

    // Keep at most the trailing `n` rows.
    static Tensor tail_rows(const Tensor& a, int n) {
        if (a.rows <= n) return a;
        return a.slice_rows(a.rows - n, a.rows);
    }
};

}  // namespace popmag

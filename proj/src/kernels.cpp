#include "popmag/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace popmag::kernels {

namespace {
int g_threads = 1;

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

inline void matmul_row(double* c, const Tensor& A, const Tensor& B, int i) {
    const int k = A.cols, n = B.cols;
    std::fill(c, c + n, 0.0);
    const double* a = A[i];
    for (int l = 0; l < k; ++l) {
        const double av = a[l];
        const double* b = B[l];
        for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
}

inline void matmul_nt_row(double* c, const Tensor& A, const Tensor& B, int i) {
    const int k = A.cols, n = B.rows;
    const double* a = A[i];
    for (int j = 0; j < n; ++j) {
        const double* b = B[j];
        double acc = 0;
        for (int l = 0; l < k; ++l) acc += a[l] * b[l];
        c[j] = acc;
    }
}

inline void matmul_tn_acc_row(double* c, const Tensor& A, const Tensor& B, int i) {
    const int m = A.rows, n = B.cols;
    for (int r = 0; r < m; ++r) {
        const double av = A[r][i];
        if (av == 0.0) continue;
        const double* b = B[r];
        for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
}

inline void softmax_row(double* x, int n) {
    double mx = x[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double sum = 0;
    for (int j = 0; j < n; ++j) {
        x[j] = std::exp(x[j] - mx);
        sum += x[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < n; ++j) x[j] *= inv;
}

inline void layernorm_row(double* y, double* inv_std, const double* x, int n, double eps) {
    double mean = 0;
    for (int j = 0; j < n; ++j) mean += x[j];
    mean /= n;
    double var = 0;
    for (int j = 0; j < n; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    *inv_std = is;
    for (int j = 0; j < n; ++j) y[j] = (x[j] - mean) * is;
}

inline double gelu_val(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

inline double gelu_grad(double x) {
    const double phi_big = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double phi_small = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return phi_big + x * phi_small;
}
}  // namespace

void set_threads(int n) { g_threads = std::max(1, n); }
int threads() { return g_threads; }

namespace serial {

void matmul(Tensor& C, const Tensor& A, const Tensor& B) {
    C = Tensor(A.rows, B.cols);
    for (int i = 0; i < A.rows; ++i) matmul_row(C[i], A, B, i);
}

void matmul_nt(Tensor& C, const Tensor& A, const Tensor& B) {
    C = Tensor(A.rows, B.rows);
    for (int i = 0; i < A.rows; ++i) matmul_nt_row(C[i], A, B, i);
}

void matmul_tn_acc(Tensor& C, const Tensor& A, const Tensor& B) {
    for (int i = 0; i < A.cols; ++i) matmul_tn_acc_row(C[i], A, B, i);
}

void softmax_rows(Tensor& X) {
    for (int i = 0; i < X.rows; ++i) softmax_row(X[i], X.cols);
}

void layernorm_rows(Tensor& Y, Tensor& inv_std, const Tensor& X, double eps) {
    Y = Tensor(X.rows, X.cols);
    inv_std = Tensor(X.rows, 1);
    for (int i = 0; i < X.rows; ++i) layernorm_row(Y[i], inv_std[i], X[i], X.cols, eps);
}

void gelu(Tensor& Y, const Tensor& X) {
    Y = Tensor(X.rows, X.cols);
    for (size_t i = 0; i < X.size(); ++i) Y.data[i] = gelu_val(X.data[i]);
}

void gelu_backward(Tensor& dX, const Tensor& dY, const Tensor& X) {
    dX = Tensor(X.rows, X.cols);
    for (size_t i = 0; i < X.size(); ++i) dX.data[i] = dY.data[i] * gelu_grad(X.data[i]);
}

}  // namespace serial

namespace parallel {

void matmul(Tensor& C, const Tensor& A, const Tensor& B) {
    C = Tensor(A.rows, B.cols);
#pragma omp parallel for num_threads(g_threads) schedule(static)
    for (int i = 0; i < A.rows; ++i) matmul_row(C[i], A, B, i);
}

void matmul_nt(Tensor& C, const Tensor& A, const Tensor& B) {
    C = Tensor(A.rows, B.rows);
#pragma omp parallel for num_threads(g_threads) schedule(static)
    for (int i = 0; i < A.rows; ++i) matmul_nt_row(C[i], A, B, i);
}

void matmul_tn_acc(Tensor& C, const Tensor& A, const Tensor& B) {
#pragma omp parallel for num_threads(g_threads) schedule(static)
    for (int i = 0; i < A.cols; ++i) matmul_tn_acc_row(C[i], A, B, i);
}

void softmax_rows(Tensor& X) {
#pragma omp parallel for num_threads(g_threads) schedule(static)
    for (int i = 0; i < X.rows; ++i) softmax_row(X[i], X.cols);
}

void layernorm_rows(Tensor& Y, Tensor& inv_std, const Tensor& X, double eps) {
    Y = Tensor(X.rows, X.cols);
    inv_std = Tensor(X.rows, 1);
#pragma omp parallel for num_threads(g_threads) schedule(static)
    for (int i = 0; i < X.rows; ++i) layernorm_row(Y[i], inv_std[i], X[i], X.cols, eps);
}

void gelu(Tensor& Y, const Tensor& X) {
    Y = Tensor(X.rows, X.cols);
#pragma omp parallel for num_threads(g_threads) schedule(static)
    for (int i = 0; i < X.rows; ++i)
        for (int j = 0; j < X.cols; ++j) Y[i][j] = gelu_val(X[i][j]);
}

void gelu_backward(Tensor& dX, const Tensor& dY, const Tensor& X) {
    dX = Tensor(X.rows, X.cols);
#pragma omp parallel for num_threads(g_threads) schedule(static)
    for (int i = 0; i < X.rows; ++i)
        for (int j = 0; j < X.cols; ++j) dX[i][j] = dY[i][j] * gelu_grad(X[i][j]);
}

}  // namespace parallel

void matmul(Tensor& C, const Tensor& A, const Tensor& B) {
    g_threads > 1 ? parallel::matmul(C, A, B) : serial::matmul(C, A, B);
}
void matmul_nt(Tensor& C, const Tensor& A, const Tensor& B) {
    g_threads > 1 ? parallel::matmul_nt(C, A, B) : serial::matmul_nt(C, A, B);
}
void matmul_tn_acc(Tensor& C, const Tensor& A, const Tensor& B) {
    g_threads > 1 ? parallel::matmul_tn_acc(C, A, B) : serial::matmul_tn_acc(C, A, B);
}
void softmax_rows(Tensor& X) {
    g_threads > 1 ? parallel::softmax_rows(X) : serial::softmax_rows(X);
}
void layernorm_rows(Tensor& Y, Tensor& inv_std, const Tensor& X, double eps) {
    g_threads > 1 ? parallel::layernorm_rows(Y, inv_std, X, eps)
                  : serial::layernorm_rows(Y, inv_std, X, eps);
}
void gelu(Tensor& Y, const Tensor& X) { g_threads > 1 ? parallel::gelu(Y, X) : serial::gelu(Y, X); }
void gelu_backward(Tensor& dX, const Tensor& dY, const Tensor& X) {
    g_threads > 1 ? parallel::gelu_backward(dX, dY, X) : serial::gelu_backward(dX, dY, X);
}

}  // namespace popmag::kernels

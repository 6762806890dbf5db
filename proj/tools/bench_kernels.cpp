// Throughput comparison of the serial reference kernels against the OpenMP
// row-parallel variants. Each kernel runs on the same inputs in both modes;
// outputs are checked for exact equality (the parallel variants only split
// independent output rows, so any drift is a bug, not a tolerance question).
//
//   bench_kernels [--size N] [--reps R] [--threads T]

#include <chrono>
#include <cstdio>
#include <random>
#include <string>

#include <CLI11.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "popmag/kernels.hpp"
#include "popmag/tensor.hpp"

using namespace popmag;

namespace {

Tensor random_tensor(int r, int c, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0.0, 1.0);
    Tensor t(r, c);
    for (double& x : t.data) x = d(rng);
    return t;
}

bool identical(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) && a.data == b.data;
}

double seconds_for(int reps, const auto& fn) {
    fn();  // warm-up, also primes the thread pool
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count() / reps;
}

void report(const char* name, double flops, double serial_s, double parallel_s, bool ok) {
    std::printf("%-14s %10.3f ms  %10.3f ms  %6.2fx  %8.2f GFLOP/s  %s\n", name,
                serial_s * 1e3, parallel_s * 1e3, serial_s / parallel_s,
                flops / parallel_s * 1e-9, ok ? "exact" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Serial vs OpenMP kernel throughput"};
    int n = 512, reps = 5, threads = 0;
    app.add_option("--size", n, "Square problem size")->check(CLI::PositiveNumber);
    app.add_option("--reps", reps, "Repetitions per timing")->check(CLI::PositiveNumber);
    app.add_option("--threads", threads, "OpenMP threads (0 = hardware default)");
    CLI11_PARSE(app, argc, argv);

#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
    std::printf("threads: %d, size: %d, reps: %d\n", threads > 0 ? threads : omp_get_max_threads(),
                n, reps);
#else
    std::printf("built without OpenMP; 'parallel' runs serially\n");
#endif
    std::printf("%-14s %13s %14s %8s %18s\n", "kernel", "serial", "parallel", "speedup",
                "parallel rate");

    std::mt19937_64 rng(7);
    const Tensor A = random_tensor(n, n, rng);
    const Tensor B = random_tensor(n, n, rng);
    Tensor Cs(n, n), Cp(n, n);
    bool all_ok = true;

    {
        const double s = seconds_for(reps, [&] { kernels::serial::matmul(Cs, A, B); });
        const double p = seconds_for(reps, [&] { kernels::parallel::matmul(Cp, A, B); });
        const bool ok = identical(Cs, Cp);
        all_ok &= ok;
        report("matmul", 2.0 * n * n * n, s, p, ok);
    }
    {
        const double s = seconds_for(reps, [&] { kernels::serial::matmul_nt(Cs, A, B); });
        const double p = seconds_for(reps, [&] { kernels::parallel::matmul_nt(Cp, A, B); });
        const bool ok = identical(Cs, Cp);
        all_ok &= ok;
        report("matmul_nt", 2.0 * n * n * n, s, p, ok);
    }
    {
        Cs.zero();
        Cp.zero();
        const double s = seconds_for(reps, [&] { kernels::serial::matmul_tn_acc(Cs, A, B); });
        const double p = seconds_for(reps, [&] { kernels::parallel::matmul_tn_acc(Cp, A, B); });
        // accumulating kernel: equality still holds because both sides saw the
        // same number of accumulation passes (warm-up + reps each)
        const bool ok = identical(Cs, Cp);
        all_ok &= ok;
        report("matmul_tn_acc", 2.0 * n * n * n, s, p, ok);
    }
    {
        Tensor Xs = A, Xp = A;
        const double s = seconds_for(reps, [&] {
            Xs = A;
            kernels::serial::softmax_rows(Xs);
        });
        const double p = seconds_for(reps, [&] {
            Xp = A;
            kernels::parallel::softmax_rows(Xp);
        });
        const bool ok = identical(Xs, Xp);
        all_ok &= ok;
        report("softmax_rows", 5.0 * n * n, s, p, ok);
    }
    {
        Tensor inv_s(n, 1), inv_p(n, 1);
        const double s = seconds_for(
            reps, [&] { kernels::serial::layernorm_rows(Cs, inv_s, A, 1e-5); });
        const double p = seconds_for(
            reps, [&] { kernels::parallel::layernorm_rows(Cp, inv_p, A, 1e-5); });
        const bool ok = identical(Cs, Cp) && identical(inv_s, inv_p);
        all_ok &= ok;
        report("layernorm_rows", 6.0 * n * n, s, p, ok);
    }
    {
        const double s = seconds_for(reps, [&] { kernels::serial::gelu(Cs, A); });
        const double p = seconds_for(reps, [&] { kernels::parallel::gelu(Cp, A); });
        const bool ok = identical(Cs, Cp);
        all_ok &= ok;
        report("gelu", 8.0 * n * n, s, p, ok);
    }
    {
        const double s =
            seconds_for(reps, [&] { kernels::serial::gelu_backward(Cs, A, B); });
        const double p =
            seconds_for(reps, [&] { kernels::parallel::gelu_backward(Cp, A, B); });
        const bool ok = identical(Cs, Cp);
        all_ok &= ok;
        report("gelu_backward", 10.0 * n * n, s, p, ok);
    }

    if (!all_ok) {
        std::fprintf(stderr, "parallel output diverged from the serial reference\n");
        return 1;
    }
    return 0;
}

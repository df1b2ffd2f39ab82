// Benchmark of the OpenMP kernels against their serial reference
// implementations. Each pair is timed on the same inputs and the outputs are
// compared, so this doubles as a consistency check at sizes the unit tests
// do not reach.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "refcal/kernels.hpp"
#include "refcal/losses.hpp"
#include "refcal/metrics.hpp"
#include "refcal/reference.hpp"
#include "refcal/rng.hpp"
#include "refcal/verification.hpp"

namespace {

double time_ms(const std::function<double()>& fn, int reps, double& result) {
    using clock = std::chrono::steady_clock;
    result = fn();  // warm-up, also captures the value
    auto start = clock::now();
    for (int r = 0; r < reps; ++r) result = fn();
    auto stop = clock::now();
    return std::chrono::duration<double, std::milli>(stop - start).count() / reps;
}

void report(const char* name, int n, double serial_ms, double parallel_ms, double diff) {
    std::printf("%-18s n=%-6d serial %9.3f ms   openmp %9.3f ms   speedup %5.2fx   |diff| %.2e\n",
                name, n, serial_ms, parallel_ms, serial_ms / parallel_ms, diff);
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
    std::printf("openmp not enabled; comparing identical serial paths\n");
#endif
    refcal::Rng rng(4242);
    const int reps = 3;

    for (int n : {256, 1024, 2048}) {
        const int dim = 32;
        auto batch = refcal::verification::random_embedding_batch(rng, n, dim, 8);
        double serial_value = 0.0, parallel_value = 0.0;
        double serial_ms = time_ms(
            [&]() { return refcal::reference::refinement_loss(batch.vectors, batch.labels); },
            reps, serial_value);
        double parallel_ms = time_ms(
            [&]() { return refcal::refinement_loss(batch).value; }, reps, parallel_value);
        report("refinement-loss", n, serial_ms, parallel_ms,
               std::fabs(serial_value - parallel_value));
    }

    for (int n : {256, 1024, 2048}) {
        const int dim = 32;
        auto batch = refcal::verification::random_embedding_batch(rng, n, dim, 8);
        double serial_value = 0.0, parallel_value = 0.0;
        double serial_ms = time_ms(
            [&]() { return refcal::reference::supcon_loss(batch.vectors, batch.labels, 1.0); },
            reps, serial_value);
        double parallel_ms =
            time_ms([&]() { return refcal::supcon_loss(batch, 1.0).value; }, reps,
                    parallel_value);
        report("contrastive-loss", n, serial_ms, parallel_ms,
               std::fabs(serial_value - parallel_value));
    }

    for (int n : {1000, 4000, 8000}) {
        auto batch = refcal::verification::random_probability_batch(rng, n, 4);
        double serial_value = 0.0, parallel_value = 0.0;
        double serial_ms = time_ms(
            [&]() { return refcal::reference::smece(batch, 0.05); }, reps, serial_value);
        double parallel_ms =
            time_ms([&]() { return refcal::smece(batch, 0.05); }, reps, parallel_value);
        report("smece", n, serial_ms, parallel_ms, std::fabs(serial_value - parallel_value));
    }

    return 0;
}

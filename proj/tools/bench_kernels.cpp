// Times the OpenMP kernels against the serial reference implementations on
// network-sized workloads and reports throughput plus speedup.

#include "wmhlab/kernels.hpp"
#include "wmhlab/rng.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

using wmhlab::kern::Dims3;

namespace {

double run_timed(const std::function<void()>& fn, int reps) {
    fn(); // warmup
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const std::string& name, double gflop, double serial_ms, double omp_ms) {
    std::printf("%-28s serial %8.2f ms", name.c_str(), serial_ms);
    if (gflop > 0) std::printf(" (%5.2f GF/s)", gflop * 1000.0 / serial_ms);
    std::printf(" | parallel %8.2f ms", omp_ms);
    if (gflop > 0) std::printf(" (%5.2f GF/s)", gflop * 1000.0 / omp_ms);
    std::printf(" | speedup %.2fx\n", serial_ms / omp_ms);
}

std::vector<double> randn(std::size_t n, wmhlab::Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

} // namespace

int main(int argc, char** argv) {
    int reps = 3;
    Dims3 d{48, 48, 16};
    int cin = 16, cout = 16;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--reps" && i + 1 < argc) reps = std::atoi(argv[++i]);
        if (arg == "--filters" && i + 1 < argc) cin = cout = std::atoi(argv[++i]);
    }
#ifdef _OPENMP
    std::printf("threads: %d\n", omp_get_max_threads());
#else
    std::printf("threads: 1 (built without OpenMP)\n");
#endif
    std::printf("grid %dx%dx%d, %d->%d channels, %d reps\n\n", d.nx, d.ny, d.nz, cin, cout, reps);

    wmhlab::Rng rng(42);
    const std::size_t n = static_cast<std::size_t>(d.count());
    const auto in = randn(n * cin, rng);
    const auto w = randn(static_cast<std::size_t>(cout) * cin * 27, rng);
    const auto b = randn(cout, rng);
    const auto dout = randn(n * cout, rng);
    std::vector<double> out(n * cout), din(n * cin);
    std::vector<double> dw(w.size()), db(b.size());

    const double conv_gflop = 2.0 * n * cout * cin * 27 / 1e9;
    report("conv3x3_forward", conv_gflop,
           run_timed([&] { wmhlab::kern::serial::conv3x3_forward(in.data(), cin, d, w.data(), b.data(), cout, out.data()); }, reps),
           run_timed([&] { wmhlab::kern::conv3x3_forward(in.data(), cin, d, w.data(), b.data(), cout, out.data()); }, reps));
    report("conv3x3_backward_input", conv_gflop,
           run_timed([&] { wmhlab::kern::serial::conv3x3_backward_input(dout.data(), cout, d, w.data(), cin, din.data()); }, reps),
           run_timed([&] { wmhlab::kern::conv3x3_backward_input(dout.data(), cout, d, w.data(), cin, din.data()); }, reps));
    report("conv3x3_backward_params", conv_gflop,
           run_timed([&] { wmhlab::kern::serial::conv3x3_backward_params(dout.data(), cout, in.data(), cin, d, dw.data(), db.data()); }, reps),
           run_timed([&] { wmhlab::kern::conv3x3_backward_params(dout.data(), cout, in.data(), cin, d, dw.data(), db.data()); }, reps));

    const Dims3 h{d.nx / 2, d.ny / 2, d.nz / 2};
    std::vector<double> pooled(static_cast<std::size_t>(h.count()) * cin);
    std::vector<std::int64_t> argmax(pooled.size());
    report("maxpool2_forward", 0,
           run_timed([&] { wmhlab::kern::serial::maxpool2_forward(in.data(), cin, d, pooled.data(), argmax.data()); }, reps),
           run_timed([&] { wmhlab::kern::maxpool2_forward(in.data(), cin, d, pooled.data(), argmax.data()); }, reps));
    report("upsample2_forward", 0,
           run_timed([&] { wmhlab::kern::serial::upsample2_forward(pooled.data(), cin, h, out.data()); }, reps),
           run_timed([&] { wmhlab::kern::upsample2_forward(pooled.data(), cin, h, out.data()); }, reps));

    std::vector<float> img(n), smoothed(n);
    for (std::size_t i = 0; i < n; ++i) img[i] = static_cast<float>(in[i]);
    report("gaussian_smooth s=0.8", 0,
           run_timed([&] { wmhlab::kern::serial::gaussian_smooth(img.data(), d, 0.8, smoothed.data()); }, reps),
           run_timed([&] { wmhlab::kern::gaussian_smooth(img.data(), d, 0.8, smoothed.data()); }, reps));

    const double a[9] = {0.98, -0.17, 0.0, 0.17, 0.98, 0.0, 0.0, 0.0, 1.0};
    const double t[3] = {1.5, -2.0, 0.5};
    report("resample_trilinear", 0,
           run_timed([&] { wmhlab::kern::serial::resample_trilinear(img.data(), d, a, t, smoothed.data()); }, reps),
           run_timed([&] { wmhlab::kern::resample_trilinear(img.data(), d, a, t, smoothed.data()); }, reps));
    return 0;
}

// Microbenchmark for the deterministic GEMM kernel. Not part of the test
// suite; used to sanity-check that evaluation-time decoding is affordable.
#include <chrono>
#include <cstdio>

#include "ulab/matrix.hpp"
#include "ulab/rng.hpp"

using namespace ulab;

template <Scalar T>
static void bench(const char* tag, idx m, idx k, idx n) {
  Rng rng(123);
  Matrix<T> a(m, k), b(n, k);
  for (idx i = 0; i < a.size(); ++i) a.data()[i] = static_cast<T>(rng.uniform(-1.0, 1.0));
  for (idx i = 0; i < b.size(); ++i) b.data()[i] = static_cast<T>(rng.uniform(-1.0, 1.0));

  // warmup
  Matrix<T> c = gemm_nt(a, b);
  double sink = c.max_abs();

  const double flops_per = 2.0 * double(m) * double(n) * double(k);
  int reps = static_cast<int>(2e9 / flops_per) + 1;
  auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) {
    c = gemm_nt(a, b);
    sink += c(0, 0);
  }
  auto t1 = std::chrono::steady_clock::now();
  double sec = std::chrono::duration<double>(t1 - t0).count();
  double gflops = flops_per * reps / sec / 1e9;
  std::printf("%-8s m=%-4lld k=%-4lld n=%-4lld  %7.2f GFLOP/s  (%d reps, %.3f s, sink %.3g)\n",
              tag, static_cast<long long>(m), static_cast<long long>(k),
              static_cast<long long>(n), gflops, reps, sec, sink);
}

int main() {
  std::printf("-- f64 --\n");
  bench<double>("f64", 64, 128, 128);
  bench<double>("f64", 64, 128, 512);
  bench<double>("f64", 64, 512, 128);
  bench<double>("f64", 1, 128, 128);
  bench<double>("f64", 1, 128, 512);
  std::printf("-- f32 --\n");
  bench<float>("f32", 64, 128, 128);
  bench<float>("f32", 64, 128, 512);
  bench<float>("f32", 64, 512, 128);
  bench<float>("f32", 1, 128, 128);
  bench<float>("f32", 1, 128, 512);
  return 0;
}

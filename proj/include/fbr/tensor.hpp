#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <vector>

#include "fbr/errors.hpp"

namespace fbr {

// Dense row-major tensor of doubles; shape {d0, d1, ...} with d0 outermost.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s)
      : shape(std::move(s)), data(element_count(shape), 0.0) {}
  Tensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != element_count(shape))
      throw ShapeError("tensor data length does not match shape");
  }

  static std::size_t element_count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t extent(std::size_t i) const { return shape[i]; }

  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  template <class... Ix>
  double& at(Ix... ix) {
    return data[flat_index({static_cast<std::size_t>(ix)...})];
  }
  template <class... Ix>
  double at(Ix... ix) const {
    return data[flat_index({static_cast<std::size_t>(ix)...})];
  }

  std::size_t flat_index(std::initializer_list<std::size_t> ix) const {
    std::size_t flat = 0, k = 0;
    for (std::size_t i : ix) flat = flat * shape[k++] + i;
    return flat;
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

// The GEMM kernels accumulate through std::fma. Hardware FMA is a single
// IEEE operation with one rounding, so results stay bit-reproducible even
// though compiler-chosen contraction is disabled project-wide.

// c[m x n] += a[m x k] * b[k x n]. Four k-steps are fused per pass; the
// chained FMAs perform the identical operation sequence as the plain loop,
// just without re-storing the c row in between.
inline void gemm_acc(const double* a, const double* b, double* c, std::size_t m,
                     std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
      const double a0 = arow[p], a1 = arow[p + 1];
      const double a2 = arow[p + 2], a3 = arow[p + 3];
      const double* b0 = b + p * n;
      const double* b1 = b0 + n;
      const double* b2 = b1 + n;
      const double* b3 = b2 + n;
      for (std::size_t j = 0; j < n; ++j)
        crow[j] = std::fma(
            a3, b3[j],
            std::fma(a2, b2[j],
                     std::fma(a1, b1[j], std::fma(a0, b0[j], crow[j]))));
    }
    for (; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j)
        crow[j] = std::fma(av, brow[j], crow[j]);
    }
  }
}

// Dot product over an 8-lane accumulator bank. The lane assignment and the
// final combine are fixed, so results are bit-stable while the eight chains
// keep the FMA pipeline full.
inline double dot_lanes(const double* a, const double* b, std::size_t k) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
  std::size_t p = 0;
  for (; p + 8 <= k; p += 8) {
    s0 = std::fma(a[p], b[p], s0);
    s1 = std::fma(a[p + 1], b[p + 1], s1);
    s2 = std::fma(a[p + 2], b[p + 2], s2);
    s3 = std::fma(a[p + 3], b[p + 3], s3);
    s4 = std::fma(a[p + 4], b[p + 4], s4);
    s5 = std::fma(a[p + 5], b[p + 5], s5);
    s6 = std::fma(a[p + 6], b[p + 6], s6);
    s7 = std::fma(a[p + 7], b[p + 7], s7);
  }
  double sum = ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7));
  for (; p < k; ++p) sum = std::fma(a[p], b[p], sum);
  return sum;
}

// c[m x n] += a[m x k] * b[n x k]^T. Rows of b are visited in blocks that
// stay cache-resident across the sweep over a.
inline void gemm_abt_acc(const double* a, const double* b, double* c,
                         std::size_t m, std::size_t k, std::size_t n) {
  constexpr std::size_t block = 32;
  for (std::size_t j0 = 0; j0 < n; j0 += block) {
    const std::size_t j1 = std::min(n, j0 + block);
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = a + i * k;
      double* crow = c + i * n;
      for (std::size_t j = j0; j < j1; ++j)
        crow[j] += dot_lanes(arow, b + j * k, k);
    }
  }
}

// c[k x n] += a[m x k]^T * b[m x n]. Each output row is finished before
// moving on, so c is swept once however large k is; the reduction over m
// stays in ascending order, four steps fused per pass.
inline void gemm_atb_acc(const double* a, const double* b, double* c,
                         std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    double* crow = c + p * n;
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
      const double a0 = a[i * k + p], a1 = a[(i + 1) * k + p];
      const double a2 = a[(i + 2) * k + p], a3 = a[(i + 3) * k + p];
      const double* b0 = b + i * n;
      const double* b1 = b0 + n;
      const double* b2 = b1 + n;
      const double* b3 = b2 + n;
      for (std::size_t j = 0; j < n; ++j)
        crow[j] = std::fma(
            a3, b3[j],
            std::fma(a2, b2[j],
                     std::fma(a1, b1[j], std::fma(a0, b0[j], crow[j]))));
    }
    for (; i < m; ++i) {
      const double av = a[i * k + p];
      const double* brow = b + i * n;
      for (std::size_t j = 0; j < n; ++j)
        crow[j] = std::fma(av, brow[j], crow[j]);
    }
  }
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Derives an independent stream seed from a base seed and a tag path.
inline std::uint64_t mix_seed(std::uint64_t seed,
                              std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = seed;
  for (std::uint64_t t : tags) {
    s ^= t + 0x9E3779B97F4A7C15ull + (s << 6) + (s >> 2);
    std::uint64_t walker = s;
    s = splitmix64(walker);
  }
  return s;
}

// Deterministic PRNG with explicit distribution transforms. The standard
// library engines are portable but its distributions are not, and training
// runs must replay bit-exactly from (seed, tags) alone.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}
  Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags)
      : state_(mix_seed(seed, tags)) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1) with 53 random bits.
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; the spare draw is cached.
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - next_unit();  // (0, 1]
    const double u2 = next_unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Uniform in [0, n); n must be nonzero.
  std::size_t next_below(std::size_t n) {
    return static_cast<std::size_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[next_below(i)]);
  }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fbr

#pragma once

// Brute-force reference implementations. Deliberately naive: no code is
// shared with the library beyond the Tensor container.

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <utility>
#include <vector>

#include "tcace/tensor.hpp"

namespace tcace::testing {

inline Tensor random_mask(std::size_t n, std::mt19937_64& rng, double density) {
  std::bernoulli_distribution on(density);
  std::vector<double> v(n * n);
  for (double& x : v) x = on(rng) ? 1.0 : 0.0;
  return Tensor({n, n}, v);
}

struct OverlapCounts {
  std::size_t inter = 0, uni = 0, p = 0, q = 0;
  double dice() const { return p + q == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(p + q); }
  double iou() const { return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni); }
};

inline OverlapCounts overlap_oracle(const Tensor& p, const Tensor& q) {
  OverlapCounts c;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool a = p[i] > 0.5, b = q[i] > 0.5;
    c.inter += a && b;
    c.uni += a || b;
    c.p += a;
    c.q += b;
  }
  return c;
}

// Boundary by explicit neighbour enumeration; out-of-image neighbours are background.
inline std::vector<std::pair<double, double>> boundary_oracle(const Tensor& m) {
  const long rows = static_cast<long>(m.shape()[0]), cols = static_cast<long>(m.shape()[1]);
  auto at = [&](long r, long c) { return r >= 0 && c >= 0 && r < rows && c < cols && m[r * cols + c] > 0.5; };
  std::vector<std::pair<double, double>> out;
  for (long r = 0; r < rows; ++r) {
    for (long c = 0; c < cols; ++c) {
      if (at(r, c) && (!at(r - 1, c) || !at(r + 1, c) || !at(r, c - 1) || !at(r, c + 1))) out.emplace_back(r, c);
    }
  }
  return out;
}

inline std::vector<double> directed_oracle(const std::vector<std::pair<double, double>>& from,
                                           const std::vector<std::pair<double, double>>& to) {
  std::vector<double> d;
  for (auto [r, c] : from) {
    double best = std::numeric_limits<double>::infinity();
    for (auto [r2, c2] : to) best = std::min(best, std::hypot(r - r2, c - c2));
    d.push_back(best);
  }
  return d;
}

inline double percentile_oracle(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct SurfaceOracle {
  bool defined = false;
  double hd95 = 0.0, asd = 0.0;
};

// All-pairs boundary distances, pooled in both directions.
inline SurfaceOracle surface_oracle(const Tensor& p, const Tensor& q) {
  const auto bp = boundary_oracle(p), bq = boundary_oracle(q);
  SurfaceOracle s;
  if (bp.empty() || bq.empty()) return s;
  auto pooled = directed_oracle(bp, bq);
  const auto back = directed_oracle(bq, bp);
  pooled.insert(pooled.end(), back.begin(), back.end());
  s.defined = true;
  s.hd95 = percentile_oracle(pooled, 0.95);
  for (double d : pooled) s.asd += d / static_cast<double>(pooled.size());
  return s;
}

// SSIM of one window covering the whole image, population moments.
inline double ssim_single_window(const Tensor& x, const Tensor& y) {
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double vx = 0, vy = 0, cxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    vx += (x[i] - mx) * (x[i] - mx) / n;
    vy += (y[i] - my) * (y[i] - my) / n;
    cxy += (x[i] - mx) * (y[i] - my) / n;
  }
  return (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

inline double psnr_oracle(const Tensor& x, const Tensor& y) {
  double e = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) e += (x[i] - y[i]) * (x[i] - y[i]);
  e /= static_cast<double>(x.size());
  return e == 0.0 ? 100.0 : 10.0 * std::log10(1.0 / e);
}

// exp(q.k) / sum exp(q.k) row by row, no stabilisation.
inline std::vector<double> plain_softmax_oracle(const Tensor& q, const Tensor& k) {
  const std::size_t nq = q.shape()[0], nk = k.shape()[0], d = q.shape()[1];
  std::vector<double> out(nq * nk);
  for (std::size_t r = 0; r < nq; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < nk; ++c) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += q[r * d + j] * k[c * d + j];
      out[r * nk + c] = std::exp(dot);
      total += out[r * nk + c];
    }
    for (std::size_t c = 0; c < nk; ++c) out[r * nk + c] /= total;
  }
  return out;
}

}  // namespace tcace::testing

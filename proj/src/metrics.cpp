#include "tcace/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace tcace {

namespace {

void check_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ContractError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                        " differ");
  }
}

void check_binary(const Tensor& m, const char* op) {
  for (double v : m.data()) {
    if (v != 0.0 && v != 1.0) throw ContractError(std::string(op) + ": mask is not binary");
  }
}

struct Overlap {
  double p = 0, q = 0, both = 0;
};

Overlap overlap(const Tensor& p, const Tensor& q, const char* op) {
  check_same(p, q, op);
  check_binary(p, op);
  check_binary(q, op);
  Overlap o;
  for (std::size_t i = 0; i < p.size(); ++i) {
    o.p += p[i];
    o.q += q[i];
    o.both += p[i] * q[i];
  }
  return o;
}

// 1-D squared distance transform of a sampled function (lower envelope of
// parabolas).
void dt_1d(const double* f, double* d, std::size_t n, std::vector<std::size_t>& v, std::vector<double>& z) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  std::size_t k = 0;
  // Skip leading infinities; they contribute no parabola.
  std::size_t first = 0;
  while (first < n && std::isinf(f[first])) ++first;
  if (first == n) {
    std::fill(d, d + n, kInf);
    return;
  }
  v[0] = first;
  z[0] = -kInf;
  z[1] = kInf;
  for (std::size_t q = first + 1; q < n; ++q) {
    if (std::isinf(f[q])) continue;
    const auto qd = static_cast<double>(q);
    double s;
    while (true) {
      const auto vk = static_cast<double>(v[k]);
      s = ((f[q] + qd * qd) - (f[v[k]] + vk * vk)) / (2.0 * qd - 2.0 * vk);
      if (s <= z[k] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    if (s <= z[k]) {  // k == 0 and the new parabola dominates everywhere
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    const auto qd = static_cast<double>(q);
    while (z[k + 1] < qd) ++k;
    const auto diff = qd - static_cast<double>(v[k]);
    d[q] = diff * diff + f[v[k]];
  }
}

}  // namespace

double mse(const Tensor& a, const Tensor& b) {
  check_same(a, b, "mse");
  if (a.size() == 0) throw ContractError("mse: empty images");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    total += d * d;
  }
  return total / static_cast<double>(a.size());
}

double psnr_from_mse(double value) {
  if (value <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / value));
}

double psnr(const Tensor& a, const Tensor& b) { return psnr_from_mse(mse(a, b)); }

double ssim(const Tensor& a, const Tensor& b, std::size_t window) {
  check_same(a, b, "ssim");
  if (a.rank() != 2) throw ContractError("ssim: expected {H, W} images");
  const std::size_t h = a.shape()[0], w = a.shape()[1];
  if (window == 0 || h < window || w < window) {
    throw ContractError("ssim: image " + shape_str(a.shape()) + " smaller than " + std::to_string(window) + "x" +
                        std::to_string(window) + " window");
  }
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  // Summed-area tables of a, b, a^2, b^2, ab with a zero border row/column.
  const std::size_t sw = w + 1;
  std::vector<double> sa((h + 1) * sw, 0.0), sb = sa, saa = sa, sbb = sa, sab = sa;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double x = a[r * w + c], y = b[r * w + c];
      const std::size_t i = (r + 1) * sw + (c + 1);
      const std::size_t up = r * sw + (c + 1), left = (r + 1) * sw + c, diag = r * sw + c;
      sa[i] = x + sa[up] + sa[left] - sa[diag];
      sb[i] = y + sb[up] + sb[left] - sb[diag];
      saa[i] = x * x + saa[up] + saa[left] - saa[diag];
      sbb[i] = y * y + sbb[up] + sbb[left] - sbb[diag];
      sab[i] = x * y + sab[up] + sab[left] - sab[diag];
    }
  }
  auto box = [&](const std::vector<double>& s, std::size_t r, std::size_t c) {
    const std::size_t r1 = r + window, c1i = c + window;
    return s[r1 * sw + c1i] - s[r * sw + c1i] - s[r1 * sw + c] + s[r * sw + c];
  };
  const double n = static_cast<double>(window * window);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r + window <= h; ++r) {
    for (std::size_t c = 0; c + window <= w; ++c) {
      const double mu_a = box(sa, r, c) / n, mu_b = box(sb, r, c) / n;
      const double var_a = box(saa, r, c) / n - mu_a * mu_a;
      const double var_b = box(sbb, r, c) / n - mu_b * mu_b;
      const double cov = box(sab, r, c) / n - mu_a * mu_b;
      total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
               ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

double dice(const Tensor& p, const Tensor& q) {
  const auto o = overlap(p, q, "dice");
  if (o.p + o.q == 0.0) return 1.0;
  return 2.0 * o.both / (o.p + o.q);
}

double iou(const Tensor& p, const Tensor& q) {
  const auto o = overlap(p, q, "iou");
  const double uni = o.p + o.q - o.both;
  if (uni == 0.0) return 1.0;
  return o.both / uni;
}

std::vector<Pixel> boundary_pixels(const Tensor& mask) {
  if (mask.rank() != 2) throw ContractError("boundary_pixels: expected {H, W} mask");
  check_binary(mask, "boundary_pixels");
  const std::size_t h = mask.shape()[0], w = mask.shape()[1];
  auto on = [&](long r, long c) {
    if (r < 0 || c < 0 || r >= static_cast<long>(h) || c >= static_cast<long>(w)) return false;
    return mask[static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)] == 1.0;
  };
  std::vector<Pixel> out;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const long rr = static_cast<long>(r), cc = static_cast<long>(c);
      if (!on(rr, cc)) continue;
      if (!on(rr - 1, cc) || !on(rr + 1, cc) || !on(rr, cc - 1) || !on(rr, cc + 1)) out.push_back({r, c});
    }
  }
  return out;
}

std::vector<double> squared_distance_transform(const std::vector<bool>& feature, std::size_t rows,
                                               std::size_t cols) {
  if (feature.size() != rows * cols) throw ContractError("distance transform: size mismatch");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> grid(rows * cols);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = feature[i] ? 0.0 : kInf;
  std::vector<std::size_t> v;
  std::vector<double> z;
  std::vector<double> f(std::max(rows, cols)), d(std::max(rows, cols));
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t r = 0; r < rows; ++r) f[r] = grid[r * cols + c];
    dt_1d(f.data(), d.data(), rows, v, z);
    for (std::size_t r = 0; r < rows; ++r) grid[r * cols + c] = d[r];
  }
  for (std::size_t r = 0; r < rows; ++r) {
    dt_1d(grid.data() + r * cols, d.data(), cols, v, z);
    std::copy_n(d.data(), cols, grid.data() + r * cols);
  }
  return grid;
}

double percentile_linear(std::vector<double> values, double q) {
  if (values.empty()) throw ContractError("percentile: empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

SurfaceDistances surface_distances(const Tensor& p, const Tensor& q) {
  check_same(p, q, "surface_distances");
  const auto bp = boundary_pixels(p);
  const auto bq = boundary_pixels(q);
  if (bp.empty() || bq.empty()) {
    constexpr double kInf = std::numeric_limits<double>::infinity();
    return {kInf, kInf, false};
  }
  const std::size_t h = p.shape()[0], w = p.shape()[1];
  auto directed = [&](const std::vector<Pixel>& from, const std::vector<Pixel>& to, std::vector<double>& out) {
    std::vector<bool> feature(h * w, false);
    for (const auto& px : to) feature[px.row * w + px.col] = true;
    const auto dist = squared_distance_transform(feature, h, w);
    for (const auto& px : from) out.push_back(std::sqrt(dist[px.row * w + px.col]));
  };
  std::vector<double> pooled;
  pooled.reserve(bp.size() + bq.size());
  directed(bp, bq, pooled);
  directed(bq, bp, pooled);
  double total = 0.0;
  for (double d : pooled) total += d;
  return {percentile_linear(pooled, 0.95), total / static_cast<double>(pooled.size()), true};
}

double hd95(const Tensor& p, const Tensor& q) { return surface_distances(p, q).hd95; }
double asd(const Tensor& p, const Tensor& q) { return surface_distances(p, q).asd; }

ClassificationMetrics classification_metrics(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw ContractError("classification_metrics: " + std::to_string(predictions.size()) + " predictions for " +
                        std::to_string(labels.size()) + " labels");
  }
  ClassificationMetrics m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if ((labels[i] != 0 && labels[i] != 1) || (predictions[i] != 0 && predictions[i] != 1)) {
      throw ContractError("classification_metrics: labels and predictions must be 0 or 1");
    }
    const bool pred = predictions[i] == 1, truth = labels[i] == 1;
    if (pred && truth) ++m.tp;
    else if (pred && !truth) ++m.fp;
    else if (!pred && truth) ++m.fn;
    else ++m.tn;
  }
  const auto d = [](std::size_t x) { return static_cast<double>(x); };
  const std::size_t total = labels.size();
  m.accuracy = total ? d(m.tp + m.tn) / d(total) : 0.0;
  if (m.tp + m.fn) m.sensitivity = d(m.tp) / d(m.tp + m.fn);
  else m.sensitivity_undefined = true;
  if (m.tn + m.fp) m.specificity = d(m.tn) / d(m.tn + m.fp);
  else m.specificity_undefined = true;
  if (m.tp + m.fp) m.precision = d(m.tp) / d(m.tp + m.fp);
  if (2 * m.tp + m.fp + m.fn) m.f1 = 2.0 * d(m.tp) / d(2 * m.tp + m.fp + m.fn);
  else m.f1_undefined = true;
  return m;
}

}  // namespace tcace

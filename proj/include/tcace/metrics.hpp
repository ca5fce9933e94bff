#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tcace/tensor.hpp"

namespace tcace {

inline constexpr double kPsnrCap = 100.0;

double mse(const Tensor& a, const Tensor& b);
// 10 log10(1 / mse) for data range 1; zero error maps to kPsnrCap.
double psnr_from_mse(double mse);
double psnr(const Tensor& a, const Tensor& b);

// Mean SSIM over all window x window uniform windows at stride 1, data range 1,
// C1 = 0.01^2, C2 = 0.03^2, population (1/N) moments.
double ssim(const Tensor& a, const Tensor& b, std::size_t window = 8);

// Both masks empty -> 1.
double dice(const Tensor& p, const Tensor& q);
double iou(const Tensor& p, const Tensor& q);

struct Pixel {
  std::size_t row;
  std::size_t col;
};

// Mask pixels with at least one background 4-neighbour; pixels outside the
// image count as background.
std::vector<Pixel> boundary_pixels(const Tensor& mask);

// Exact squared Euclidean distance from every pixel to the nearest pixel with
// feature[i] == true (separable lower-envelope transform).
std::vector<double> squared_distance_transform(const std::vector<bool>& feature, std::size_t rows,
                                               std::size_t cols);

// Linear interpolation between order statistics at position q * (n - 1).
double percentile_linear(std::vector<double> values, double q);

struct SurfaceDistances {
  double hd95 = 0.0;
  double asd = 0.0;
  bool defined = true;  // false when either mask is empty; distances are +inf
};

// Pools the directed boundary distances p -> q and q -> p.
SurfaceDistances surface_distances(const Tensor& p, const Tensor& q);
double hd95(const Tensor& p, const Tensor& q);
double asd(const Tensor& p, const Tensor& q);

struct ClassificationMetrics {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  // Set when the corresponding denominator was zero and 0 was reported.
  bool sensitivity_undefined = false;
  bool specificity_undefined = false;
  bool f1_undefined = false;
};

// Malignant (1) is the positive class.
ClassificationMetrics classification_metrics(std::span<const int> predictions, std::span<const int> labels);

}  // namespace tcace

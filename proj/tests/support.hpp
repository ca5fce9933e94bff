#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <random>
#include <vector>

#include "tcace/tensor.hpp"

namespace tcace::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Values in [-1, 1] kept at least `gap` away from every point in `avoid`, so
// piecewise ops are not probed across a kink.
inline Tensor random_away_from(Shape shape, std::mt19937_64& rng, std::vector<double> avoid, double gap,
                               bool requires_grad = true) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(numel(shape));
  for (double& x : v) {
    do {
      x = u(rng);
    } while (std::any_of(avoid.begin(), avoid.end(), [&](double k) { return std::abs(x - k) < gap; }));
  }
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

struct GradCheck {
  double rel_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-12)
  double analytic_norm = 0.0;
};

// Central differences with step h over the chosen coordinates of `inputs`
// (all coordinates when `coords_per_input` is 0; otherwise that many sampled
// per input). f must build its graph from the given leaves.
inline GradCheck grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
                            std::mt19937_64& rng, std::size_t coords_per_input = 0, double h = 1e-5) {
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor loss = f(inputs);
    tape.backward(loss);
    for (const auto& x : inputs) analytic.push_back(tape.grad(x));
  }
  auto eval = [&] {
    NoGradScope no_grad;
    return f(inputs).item();
  };
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto data = inputs[k].mutable_data();
    std::vector<std::size_t> coords;
    if (coords_per_input == 0 || coords_per_input >= data.size()) {
      for (std::size_t i = 0; i < data.size(); ++i) coords.push_back(i);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
      for (std::size_t c = 0; c < coords_per_input; ++c) coords.push_back(pick(rng));
    }
    for (std::size_t i : coords) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = eval();
      data[i] = saved - h;
      const double down = eval();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
  }
  GradCheck r;
  r.analytic_norm = std::sqrt(a2);
  r.rel_error = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
  return r;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace tcace::testing

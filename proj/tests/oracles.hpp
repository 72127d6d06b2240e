#pragma once

// Independent reference computations for the test suites. These deliberately
// avoid the library's kernels: plain loops over explicit definitions.

#include <algorithm>
#include <cmath>
#include <vector>

#include "attnmamba/tensor.hpp"

namespace attnmamba::oracle {

// Adaptive pooling of a vector by enumerating, for every output index, all
// input positions j with floor(i*I/O) <= j < ceil((i+1)*I/O), where the
// bounds are found by scanning rather than by the closed-form window.
inline std::vector<double> adaptive_pool_enumerated(const std::vector<double>& x, std::size_t out, bool max_mode) {
  const std::size_t in = x.size();
  std::vector<double> y(out);
  for (std::size_t i = 0; i < out; ++i) {
    std::vector<double> window;
    for (std::size_t j = 0; j < in; ++j) {
      // Integer-exact membership tests:
      // lower: j >= floor(i*I/O)  <=>  (j+1)*O > i*I
      // upper: j <  ceil((i+1)*I/O)  <=>  j*O < (i+1)*I
      const bool after_start = (j + 1) * out > i * in;
      const bool before_end = j * out < (i + 1) * in;
      if (after_start && before_end) window.push_back(x[j]);
    }
    if (max_mode) {
      y[i] = *std::max_element(window.begin(), window.end());
    } else {
      double s = 0;
      for (double v : window) s += v;
      y[i] = s / static_cast<double>(window.size());
    }
  }
  return y;
}

// Step-by-step selective SSM recurrence with explicit discretized matrices:
// A_bar = diag(exp(delta * A_c)), B_bar = delta * B_t.
inline Tensor<double> selective_scan_naive(const Tensor<double>& u, const Tensor<double>& delta, const Tensor<double>& a,
                                           const Tensor<double>& b, const Tensor<double>& c, const Tensor<double>& d) {
  const std::size_t batch = u.dim(0), ch = u.dim(1), len = u.dim(2), state = a.dim(1);
  Tensor<double> y(u.shape());
  for (std::size_t bi = 0; bi < batch; ++bi)
    for (std::size_t ci = 0; ci < ch; ++ci) {
      std::vector<double> h(state, 0.0);
      for (std::size_t t = 0; t < len; ++t) {
        const double dt = delta.at({bi, ci, t});
        const double ut = u.at({bi, ci, t});
        std::vector<std::vector<double>> a_bar(state, std::vector<double>(state, 0.0));
        std::vector<double> b_bar(state);
        for (std::size_t s = 0; s < state; ++s) {
          a_bar[s][s] = std::exp(dt * a.at({ci, s}));
          b_bar[s] = dt * b.at({bi, t, s});
        }
        std::vector<double> next(state, 0.0);
        for (std::size_t r = 0; r < state; ++r) {
          for (std::size_t k = 0; k < state; ++k) next[r] += a_bar[r][k] * h[k];
          next[r] += b_bar[r] * ut;
        }
        h = next;
        double out = d.at({ci}) * ut;
        for (std::size_t s = 0; s < state; ++s) out += c.at({bi, t, s}) * h[s];
        y.at({bi, ci, t}) = out;
      }
    }
  return y;
}

// Average ranks (1 = best) per row by sorting, ties share the mean rank.
inline std::vector<double> average_ranks_by_sorting(const std::vector<std::vector<double>>& table, bool lower_is_better) {
  const std::size_t k = table.front().size();
  std::vector<double> total(k, 0.0);
  for (const auto& row : table) {
    std::vector<std::size_t> order(k);
    for (std::size_t i = 0; i < k; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      return lower_is_better ? row[x] < row[y] : row[x] > row[y];
    });
    std::size_t pos = 0;
    while (pos < k) {
      std::size_t end = pos;
      while (end + 1 < k && row[order[end + 1]] == row[order[pos]]) ++end;
      const double shared = (static_cast<double>(pos) + static_cast<double>(end)) / 2.0 + 1.0;
      for (std::size_t q = pos; q <= end; ++q) total[order[q]] += shared;
      pos = end + 1;
    }
  }
  for (auto& t : total) t /= static_cast<double>(table.size());
  return total;
}

}  // namespace attnmamba::oracle

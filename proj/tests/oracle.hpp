#pragma once

// Plain-loop reference implementations used as independent oracles. Nothing
// here touches the tape.

#include <cmath>
#include <cstddef>
#include <vector>

#include "nacap/tensor.hpp"

namespace nacap::oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat from_tensor(const Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.values[i * t.cols() + j];
  return m;
}

inline Mat mm(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline Mat transpose(const Mat& a) {
  Mat t(a[0].size(), std::vector<double>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
  return t;
}

inline Mat plus_row(Mat a, const std::vector<double>& b) {
  for (auto& r : a)
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
  return a;
}

inline Mat plus(Mat a, const Mat& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  return a;
}

inline Mat softmax_rows(Mat a) {
  for (auto& r : a) {
    double mx = r[0];
    for (double x : r) mx = std::max(mx, x);
    double z = 0.0;
    for (double& x : r) z += (x = std::exp(x - mx));
    for (double& x : r) x /= z;
  }
  return a;
}

inline Mat layer_norm(Mat a, const std::vector<double>& gain, const std::vector<double>& bias) {
  for (auto& r : a) {
    double mean = 0.0, var = 0.0;
    for (double x : r) mean += x;
    mean /= static_cast<double>(r.size());
    for (double x : r) var += (x - mean) * (x - mean);
    var /= static_cast<double>(r.size());
    for (std::size_t j = 0; j < r.size(); ++j) r[j] = (r[j] - mean) / std::sqrt(var + 1e-5) * gain[j] + bias[j];
  }
  return a;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace nacap::oracle

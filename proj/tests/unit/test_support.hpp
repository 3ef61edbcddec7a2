#pragma once

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "msam/random.hpp"
#include "msam/tensor.hpp"

namespace msam::test {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& x : t.data()) x = T(scale * rng.normal());
  return t;
}

// Triple loop, i-j-k order; independent of the library kernel.
template <typename T>
Tensor<T> naive_matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t n = a.dim(0), m = a.dim(1), p = b.dim(1);
  Tensor<T> c(Shape{n, p});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < m; ++k) s += double(a.at({i, k})) * double(b.at({k, j}));
      c.at({i, j}) = T(s);
    }
  return c;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

// Scratch path under the build tree (or the system temp dir).
inline std::string temp_path(const std::string& name) {
  const char* dir = std::getenv("MSAM_TMPDIR");
  const std::filesystem::path base = dir ? dir : std::filesystem::temp_directory_path();
  return (base / name).string();
}

}  // namespace msam::test

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pir {

inline std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense tensor of doubles in row-major order. Rank-1 tensors act as
/// column vectors wherever a two-dimensional view is required.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;

  explicit Tensor(std::vector<int> s, double fill = 0.0) : shape(std::move(s)) {
    check_shape();
    data.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
  }

  Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    check_shape();
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
      throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
    }
  }

  static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }
  static Tensor zeros(int r, int c) { return Tensor({r, c}); }

  int rank() const { return static_cast<int>(shape.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }

  int rows() const {
    require_matrix();
    return shape[0];
  }
  int cols() const {
    require_matrix();
    return rank() == 1 ? 1 : shape[1];
  }

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  void check_shape() const {
    if (shape.empty()) throw std::invalid_argument("tensor: empty shape");
    for (int d : shape) {
      if (d <= 0) {
        throw std::invalid_argument("tensor: nonpositive dimension in " + shape_str(shape));
      }
    }
  }
  void require_matrix() const {
    if (rank() > 2) {
      throw std::invalid_argument("tensor: 2-D view requested for rank-" +
                                  std::to_string(rank()) + " tensor " + shape_str(shape));
    }
  }
};

}  // namespace pir

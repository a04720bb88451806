#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace nerfcast {

// Thrown on inconsistent operand shapes; message names the operation.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense row-major rank-2 array. Vectors are n x 1, scalars 1 x 1.
template <typename T>
struct Array {
  int rows = 0, cols = 0;
  std::vector<T> data;

  Array() = default;
  Array(int r, int c, T fill = T(0)) : rows(r), cols(c), data(size_t(r) * size_t(c), fill) {}

  static Array zeros(int r, int c) { return Array(r, c, T(0)); }
  static Array scalar(T v) {
    Array a(1, 1);
    a.data[0] = v;
    return a;
  }

  T& operator()(int r, int c) { return data[size_t(r) * cols + c]; }
  const T& operator()(int r, int c) const { return data[size_t(r) * cols + c]; }

  size_t size() const { return data.size(); }
  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <typename U>
  Array<U> cast() const {
    Array<U> out(rows, cols);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

inline std::string shape_str(int r, int c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace nerfcast

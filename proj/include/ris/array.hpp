#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ris/common.hpp"

namespace ris {

// Dense row-major array, rank 0..2. Everything in the model is a scalar, a
// vector or a matrix; batches are handled by looping over examples, so no
// higher rank is needed. Scalars are rank 1 with a single element.
template <typename T>
struct Array {
  int rank = 1;
  int d0 = 0;  // rows (or length for rank 1)
  int d1 = 1;  // cols (1 for rank 1)
  std::vector<T> v;

  Array() = default;

  static Array scalar(T x) {
    Array a;
    a.rank = 1;
    a.d0 = 1;
    a.d1 = 1;
    a.v.assign(1, x);
    return a;
  }
  static Array vec(int n, T fill = T(0)) {
    Array a;
    a.rank = 1;
    a.d0 = n;
    a.d1 = 1;
    a.v.assign(static_cast<std::size_t>(n), fill);
    return a;
  }
  static Array mat(int r, int c, T fill = T(0)) {
    Array a;
    a.rank = 2;
    a.d0 = r;
    a.d1 = c;
    a.v.assign(static_cast<std::size_t>(r) * c, fill);
    return a;
  }
  static Array from(std::vector<T> data) {
    Array a;
    a.rank = 1;
    a.d0 = static_cast<int>(data.size());
    a.d1 = 1;
    a.v = std::move(data);
    return a;
  }
  static Array from(int r, int c, std::vector<T> data) {
    RIS_REQUIRE(static_cast<std::size_t>(r) * c == data.size(),
                "Array::from " << r << "x" << c << " != " << data.size() << " values");
    Array a;
    a.rank = 2;
    a.d0 = r;
    a.d1 = c;
    a.v = std::move(data);
    return a;
  }

  int numel() const { return d0 * d1; }
  bool is_scalar() const { return numel() == 1; }

  T& at(int i) { return v[static_cast<std::size_t>(i)]; }
  T at(int i) const { return v[static_cast<std::size_t>(i)]; }
  T& at(int i, int j) { return v[static_cast<std::size_t>(i) * d1 + j]; }
  T at(int i, int j) const { return v[static_cast<std::size_t>(i) * d1 + j]; }

  bool same_shape(const Array& o) const {
    return rank == o.rank && d0 == o.d0 && d1 == o.d1;
  }

  bool all_finite() const {
    for (T x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  T sum() const {
    T s = 0;
    for (T x : v) s += x;
    return s;
  }

  std::string shape_str() const {
    if (rank == 1) return "[" + std::to_string(d0) + "]";
    return "[" + std::to_string(d0) + "x" + std::to_string(d1) + "]";
  }
};

using Arrayf = Array<float>;
using Arrayd = Array<double>;

}  // namespace ris

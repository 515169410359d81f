#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "cropseg/errors.hpp"

namespace cropseg {

using Index = Eigen::Index;

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MapRM = Eigen::Map<RowMat<Scalar>>;
template <typename Scalar>
using ConstMapRM = Eigen::Map<const RowMat<Scalar>>;
template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

// Dense n-d array with row-major layout over a dynamic shape. The flat
// storage is an Eigen array so elementwise math stays expression-based;
// matrix views for GEMM are taken with map2d().
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<Index> shape) : shape_(std::move(shape)) {
    data_ = ArrayX<Scalar>::Zero(count(shape_));
  }

  static Tensor zeros(std::vector<Index> shape) { return Tensor(std::move(shape)); }

  const std::vector<Index>& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_[static_cast<size_t>(i)]; }
  Index size() const { return data_.size(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  ArrayX<Scalar>& flat() { return data_; }
  const ArrayX<Scalar>& flat() const { return data_; }

  void set_zero() { data_.setZero(); }

  template <typename... I>
  Scalar& at(I... idx) {
    return data_[offset({static_cast<Index>(idx)...})];
  }
  template <typename... I>
  Scalar at(I... idx) const {
    return data_[offset({static_cast<Index>(idx)...})];
  }

  // 2-d matrix view; rows*cols must cover the tensor exactly.
  MapRM<Scalar> map2d(Index rows, Index cols) {
    eigen_assert(rows * cols == data_.size());
    return MapRM<Scalar>(data_.data(), rows, cols);
  }
  ConstMapRM<Scalar> map2d(Index rows, Index cols) const {
    eigen_assert(rows * cols == data_.size());
    return ConstMapRM<Scalar>(data_.data(), rows, cols);
  }

  void reshape(std::vector<Index> shape) {
    if (count(shape) != data_.size()) throw ConfigError("reshape: element count mismatch");
    shape_ = std::move(shape);
  }

  template <typename To>
  Tensor<To> cast() const {
    Tensor<To> out(shape_);
    out.flat() = data_.template cast<To>();
    return out;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool bitwise_equal(const Tensor& other) const {
    return shape_ == other.shape_ && data_.size() == other.data_.size() &&
           std::memcmp(data_.data(), other.data_.data(),
                       sizeof(Scalar) * static_cast<size_t>(data_.size())) == 0;
  }

  static Index count(const std::vector<Index>& shape) {
    Index n = 1;
    for (Index d : shape) n *= d;
    return n;
  }

 private:
  Index offset(std::initializer_list<Index> idx) const {
    eigen_assert(idx.size() == shape_.size());
    Index off = 0;
    auto it = idx.begin();
    for (size_t i = 0; i < shape_.size(); ++i, ++it) {
      eigen_assert(*it >= 0 && *it < shape_[i]);
      off = off * shape_[i] + *it;
    }
    return off;
  }

  std::vector<Index> shape_;
  ArrayX<Scalar> data_;
};

// Deterministic RNG. Draw helpers avoid std::*_distribution so sequences are
// identical across standard libraries, not just across runs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

  std::uint64_t next() {
    // xorshift* keeps the header light and the stream reproducible.
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545F4914F6CDD1DULL;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n ? next() % n : 0; }
  long range(long lo, long hi) {  // inclusive bounds
    return lo + static_cast<long>(below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derive an independent stream (for per-tree / per-component seeding).
  std::uint64_t fork() { return next() ^ 0xd1b54a32d192ed03ULL; }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a over raw bytes; used for parameter fingerprints.
inline std::uint64_t fnv1a64(const void* bytes, size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace cropseg

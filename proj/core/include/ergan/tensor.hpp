#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ergan/errors.hpp"

namespace ergan {

// Dense row-major tensor of a single scalar type. Image batches use NCHW,
// feature matrices use (rows, cols), scalars use shape {1}.
template <typename S>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(count(shape_)), S(0));
  }
  Tensor(std::vector<int> shape, S fill) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(count(shape_)), fill);
  }
  Tensor(std::vector<int> shape, std::vector<S> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != count(shape_))
      throw ConfigError("tensor data size does not match shape " + shape_str());
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, S v) { return Tensor(std::move(shape), v); }

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  S& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const S& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  std::string shape_str() const {
    std::ostringstream os;
    os << '(';
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
    os << ')';
    return os.str();
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out(shape_);
    for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<T>(data_[static_cast<size_t>(i)]);
    return out;
  }

  static int64_t count(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      if (d < 0) throw ConfigError("negative tensor dimension");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  std::vector<S> data_;
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

}  // namespace ergan

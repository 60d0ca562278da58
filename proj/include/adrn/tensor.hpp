#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace adrn {

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct Shape4 {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  [[nodiscard]] std::string str() const;

  friend bool operator==(const Shape4&, const Shape4&) = default;
};

/// Dense NCHW tensor.
template <typename T>
class Tensor4 {
 public:
  using value_type = T;

  Tensor4() = default;
  explicit Tensor4(Shape4 shape, T fill = T(0));

  [[nodiscard]] const Shape4& shape() const { return shape_; }
  [[nodiscard]] int n() const { return shape_.n; }
  [[nodiscard]] int c() const { return shape_.c; }
  [[nodiscard]] int h() const { return shape_.h; }
  [[nodiscard]] int w() const { return shape_.w; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  T& operator()(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  const T& operator()(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  [[nodiscard]] std::span<T> values() { return data_; }
  [[nodiscard]] std::span<const T> values() const { return data_; }

  /// The H×W plane of channel `c` in sample `n`.
  [[nodiscard]] std::span<T> plane(int n, int c) {
    return std::span<T>(data_).subspan(index(n, c, 0, 0), shape_.plane());
  }
  [[nodiscard]] std::span<const T> plane(int n, int c) const {
    return std::span<const T>(data_).subspan(index(n, c, 0, 0), shape_.plane());
  }

  /// All channels of sample `n`.
  [[nodiscard]] std::span<const T> sample(int n) const {
    const std::size_t len = static_cast<std::size_t>(shape_.c) * shape_.plane();
    return std::span<const T>(data_).subspan(static_cast<std::size_t>(n) * len, len);
  }
  [[nodiscard]] std::span<T> sample(int n) {
    const std::size_t len = static_cast<std::size_t>(shape_.c) * shape_.plane();
    return std::span<T>(data_).subspan(static_cast<std::size_t>(n) * len, len);
  }

  void fill(T v);

 private:
  [[nodiscard]] std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  Shape4 shape_{0, 0, 0, 0};
  std::vector<T> data_;
};

/// Weights laid out (out, in, k, k); bias (out). Kernel size must be odd.
template <typename T>
struct ConvKernel {
  int out_channels = 0;
  int in_channels = 0;
  int size = 1;
  std::vector<T> weights;
  std::vector<T> bias;

  ConvKernel() = default;
  ConvKernel(int out, int in, int k);

  T& weight(int o, int i, int ky, int kx) {
    return weights[((static_cast<std::size_t>(o) * in_channels + i) * size + ky) * size + kx];
  }
  const T& weight(int o, int i, int ky, int kx) const {
    return weights[((static_cast<std::size_t>(o) * in_channels + i) * size + ky) * size + kx];
  }
  [[nodiscard]] int fan_in() const { return in_channels * size * size; }
  [[nodiscard]] std::size_t parameter_count() const { return weights.size() + bias.size(); }
  void zero();
};

// Stride-1 cross-correlation with zero "same" padding of (k-1)/2.
template <typename T>
Tensor4<T> conv2d_same(const Tensor4<T>& x, const ConvKernel<T>& kernel);

/// Backward of conv2d_same. Accumulates dL/dW and dL/db into `grad_kernel`
/// (which must have the kernel's shape) and returns dL/dx, or an empty
/// tensor when `input_grad` is false.
template <typename T>
Tensor4<T> conv2d_same_backward(const Tensor4<T>& x, const ConvKernel<T>& kernel,
                                const Tensor4<T>& grad_out, ConvKernel<T>& grad_kernel,
                                bool input_grad = true);

template <typename T>
Tensor4<T> relu(const Tensor4<T>& x);

// Subgradient at exactly 0 is 0. `activated` may be either the pre- or
// post-activation tensor since both are positive at the same positions.
template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& activated, const Tensor4<T>& grad_out);

template <typename T>
Tensor4<T> sigmoid(const Tensor4<T>& x);

/// Takes the sigmoid *output*.
template <typename T>
Tensor4<T> sigmoid_backward(const Tensor4<T>& y, const Tensor4<T>& grad_out);

template <typename T>
Tensor4<T> global_avg_pool(const Tensor4<T>& x);

template <typename T>
Tensor4<T> global_avg_pool_backward(const Tensor4<T>& grad_pooled, const Shape4& input_shape);

template <typename T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b);

template <typename T>
Tensor4<T> concat_channels(std::span<const Tensor4<T>> parts);

template <typename T>
Tensor4<T> slice_channels(const Tensor4<T>& x, int begin, int count);

template <typename T>
void add_inplace(Tensor4<T>& dst, const Tensor4<T>& src);

/// Throws std::domain_error if any element is NaN or infinite.
template <typename T>
void require_finite(const Tensor4<T>& x, const char* what);

}  // namespace adrn

#include "adrn/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

namespace adrn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Upper bound on im2col buffer elements; batches are processed in chunks below it.
constexpr std::size_t kColumnBudget = std::size_t{1} << 24;

int samples_per_chunk(const Shape4& s, int k) {
  const std::size_t per_sample = static_cast<std::size_t>(s.c) * k * k * s.plane();
  return static_cast<int>(std::clamp<std::size_t>(kColumnBudget / std::max<std::size_t>(per_sample, 1), 1,
                                                  static_cast<std::size_t>(s.n)));
}

template <typename T>
using ColMap = Eigen::Map<RowMat<T>>;

// Grow-only per-thread buffers; glibc returns large blocks to the OS on free, which
// made every conv call pay for fresh mmap pages.
template <typename T>
struct Scratch {
  std::vector<T> col, out, dcol;
};

template <typename T>
Scratch<T>& scratch() {
  thread_local Scratch<T> s;
  return s;
}

template <typename T>
ColMap<T> view(std::vector<T>& buf, Eigen::Index rows, Eigen::Index cols) {
  const auto need = static_cast<std::size_t>(rows * cols);
  if (buf.size() < need) buf.resize(need);
  return ColMap<T>(buf.data(), rows, cols);
}

// col((ci*k + ky)*k + kx, (n - n0)*HW + y*W + x) = x[n, ci, y+ky-pad, x+kx-pad]
template <typename T>
ColMap<T> im2col(const Tensor4<T>& x, int n0, int count, int k, std::vector<T>& buf) {
  const int c = x.c(), h = x.h(), w = x.w(), pad = (k - 1) / 2;
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  ColMap<T> col = view(buf, static_cast<Eigen::Index>(c) * k * k, hw * count);
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col.row((static_cast<Eigen::Index>(ci) * k + ky) * k + kx).data();
        for (int s = 0; s < count; ++s) {
          const auto src = x.plane(n0 + s, ci);
          T* dst = row + s * hw;
          for (int y = 0; y < h; ++y) {
            const int sy = y + ky - pad;
            T* out = dst + static_cast<std::size_t>(y) * w;
            if (sy < 0 || sy >= h) {
              std::fill(out, out + w, T(0));
              continue;
            }
            const T* in = src.data() + static_cast<std::size_t>(sy) * w;
            // Valid output columns are those with 0 <= xx + kx - pad < w.
            const int lo = std::min(w, std::max(0, pad - kx));
            const int hi = std::max(lo, std::min(w, w + pad - kx));
            std::fill(out, out + lo, T(0));
            std::copy(in + lo + kx - pad, in + hi + kx - pad, out + lo);
            std::fill(out + hi, out + w, T(0));
          }
        }
      }
    }
  }
  return col;
}

template <typename T>
void col2im_add(const ColMap<T>& col, int n0, int count, int k, Tensor4<T>& dx) {
  const int c = dx.c(), h = dx.h(), w = dx.w(), pad = (k - 1) / 2;
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col.row((static_cast<Eigen::Index>(ci) * k + ky) * k + kx).data();
        for (int s = 0; s < count; ++s) {
          auto dst = dx.plane(n0 + s, ci);
          const T* src = row + s * hw;
          for (int y = 0; y < h; ++y) {
            const int sy = y + ky - pad;
            if (sy < 0 || sy >= h) continue;
            const T* in = src + static_cast<std::size_t>(y) * w;
            T* out = dst.data() + static_cast<std::size_t>(sy) * w;
            const int lo = std::min(w, std::max(0, pad - kx));
            const int hi = std::max(lo, std::min(w, w + pad - kx));
            T* shifted = out + kx - pad;
            for (int xx = lo; xx < hi; ++xx) shifted[xx] += in[xx];
          }
        }
      }
    }
  }
}

template <typename T>
void check_same_shape(const Tensor4<T>& a, const Tensor4<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape " + a.shape().str() + " vs " + b.shape().str());
  }
}

template <typename T>
void check_kernel(const Tensor4<T>& x, const ConvKernel<T>& kernel) {
  if (x.c() != kernel.in_channels) {
    throw ShapeError("conv2d_same: input has " + std::to_string(x.c()) + " channels, kernel expects " +
                     std::to_string(kernel.in_channels));
  }
}

}  // namespace

std::string Shape4::str() const {
  std::ostringstream os;
  os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
  return os.str();
}

template <typename T>
Tensor4<T>::Tensor4(Shape4 shape, T fill) : shape_(shape) {
  if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1) {
    throw ShapeError("Tensor4: every dimension must be >= 1, got " + shape.str());
  }
  data_.assign(shape.size(), fill);
}

template <typename T>
void Tensor4<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
ConvKernel<T>::ConvKernel(int out, int in, int k)
    : out_channels(out), in_channels(in), size(k) {
  if (out < 1 || in < 1) throw ShapeError("ConvKernel: channel counts must be >= 1");
  if (k < 1 || k % 2 == 0) throw ShapeError("ConvKernel: kernel size must be odd, got " + std::to_string(k));
  weights.assign(static_cast<std::size_t>(out) * in * k * k, T(0));
  bias.assign(static_cast<std::size_t>(out), T(0));
}

template <typename T>
void ConvKernel<T>::zero() {
  std::fill(weights.begin(), weights.end(), T(0));
  std::fill(bias.begin(), bias.end(), T(0));
}

template <typename T>
Tensor4<T> conv2d_same(const Tensor4<T>& x, const ConvKernel<T>& kernel) {
  check_kernel(x, kernel);
  const int k = kernel.size;
  Tensor4<T> y(Shape4{x.n(), kernel.out_channels, x.h(), x.w()});
  const Eigen::Index hw = static_cast<Eigen::Index>(x.h()) * x.w();
  const Eigen::Map<const RowMat<T>> wmat(kernel.weights.data(), kernel.out_channels,
                                         static_cast<Eigen::Index>(kernel.in_channels) * k * k);
  const Eigen::Map<const Eigen::Vector<T, Eigen::Dynamic>> bias(kernel.bias.data(), kernel.out_channels);

  auto& buf = scratch<T>();
  const int chunk = samples_per_chunk(x.shape(), k);
  for (int n0 = 0; n0 < x.n(); n0 += chunk) {
    const int count = std::min(chunk, x.n() - n0);
    const ColMap<T> col = im2col(x, n0, count, k, buf.col);
    ColMap<T> out = view(buf.out, kernel.out_channels, hw * count);
    out.noalias() = wmat * col;
    out.colwise() += bias;
    for (int s = 0; s < count; ++s) {
      for (int o = 0; o < kernel.out_channels; ++o) {
        auto dst = y.plane(n0 + s, o);
        const T* src = out.row(o).data() + s * hw;
        std::copy(src, src + hw, dst.begin());
      }
    }
  }
  return y;
}

template <typename T>
Tensor4<T> conv2d_same_backward(const Tensor4<T>& x, const ConvKernel<T>& kernel,
                                const Tensor4<T>& grad_out, ConvKernel<T>& grad_kernel, bool input_grad) {
  check_kernel(x, kernel);
  const int k = kernel.size;
  if (grad_out.shape() != Shape4{x.n(), kernel.out_channels, x.h(), x.w()}) {
    throw ShapeError("conv2d_same_backward: unexpected gradient shape " + grad_out.shape().str());
  }
  if (grad_kernel.weights.size() != kernel.weights.size() || grad_kernel.bias.size() != kernel.bias.size()) {
    throw ShapeError("conv2d_same_backward: gradient kernel shape mismatch");
  }
  const Eigen::Index hw = static_cast<Eigen::Index>(x.h()) * x.w();
  const Eigen::Index depth = static_cast<Eigen::Index>(kernel.in_channels) * k * k;
  const Eigen::Map<const RowMat<T>> wmat(kernel.weights.data(), kernel.out_channels, depth);
  Eigen::Map<RowMat<T>> dw(grad_kernel.weights.data(), kernel.out_channels, depth);
  Eigen::Map<Eigen::Vector<T, Eigen::Dynamic>> db(grad_kernel.bias.data(), kernel.out_channels);

  Tensor4<T> dx;
  if (input_grad) dx = Tensor4<T>(x.shape());
  auto& buf = scratch<T>();
  const int chunk = samples_per_chunk(x.shape(), k);
  for (int n0 = 0; n0 < x.n(); n0 += chunk) {
    const int count = std::min(chunk, x.n() - n0);
    ColMap<T> dout = view(buf.out, kernel.out_channels, hw * count);
    for (int s = 0; s < count; ++s) {
      for (int o = 0; o < kernel.out_channels; ++o) {
        const auto src = grad_out.plane(n0 + s, o);
        std::copy(src.begin(), src.end(), dout.row(o).data() + s * hw);
      }
    }
    const ColMap<T> col = im2col(x, n0, count, k, buf.col);
    dw.noalias() += dout * col.transpose();
    db += dout.rowwise().sum();
    if (input_grad) {
      ColMap<T> dcol = view(buf.dcol, depth, hw * count);
      dcol.noalias() = wmat.transpose() * dout;
      col2im_add(dcol, n0, count, k, dx);
    }
  }
  return dx;
}

template <typename T>
Tensor4<T> relu(const Tensor4<T>& x) {
  Tensor4<T> y = x;
  for (T& v : y.values()) v = v > T(0) ? v : T(0);
  return y;
}

template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& activated, const Tensor4<T>& grad_out) {
  check_same_shape(activated, grad_out, "relu_backward");
  Tensor4<T> g = grad_out;
  auto a = activated.values();
  auto gv = g.values();
  for (std::size_t i = 0; i < gv.size(); ++i) {
    if (!(a[i] > T(0))) gv[i] = T(0);
  }
  return g;
}

template <typename T>
Tensor4<T> sigmoid(const Tensor4<T>& x) {
  Tensor4<T> y = x;
  for (T& v : y.values()) {
    // Split on sign so exp never overflows.
    if (v >= T(0)) {
      v = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      v = e / (T(1) + e);
    }
  }
  return y;
}

template <typename T>
Tensor4<T> sigmoid_backward(const Tensor4<T>& y, const Tensor4<T>& grad_out) {
  check_same_shape(y, grad_out, "sigmoid_backward");
  Tensor4<T> g = grad_out;
  auto yv = y.values();
  auto gv = g.values();
  for (std::size_t i = 0; i < gv.size(); ++i) gv[i] *= yv[i] * (T(1) - yv[i]);
  return g;
}

template <typename T>
Tensor4<T> global_avg_pool(const Tensor4<T>& x) {
  Tensor4<T> y(Shape4{x.n(), x.c(), 1, 1});
  const T inv = T(1) / static_cast<T>(x.shape().plane());
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      T sum = T(0);
      for (T v : x.plane(n, c)) sum += v;
      y(n, c, 0, 0) = sum * inv;
    }
  }
  return y;
}

template <typename T>
Tensor4<T> global_avg_pool_backward(const Tensor4<T>& grad_pooled, const Shape4& input_shape) {
  if (grad_pooled.shape() != Shape4{input_shape.n, input_shape.c, 1, 1}) {
    throw ShapeError("global_avg_pool_backward: gradient shape " + grad_pooled.shape().str());
  }
  Tensor4<T> dx(input_shape);
  const T inv = T(1) / static_cast<T>(input_shape.plane());
  for (int n = 0; n < input_shape.n; ++n) {
    for (int c = 0; c < input_shape.c; ++c) {
      const T g = grad_pooled(n, c, 0, 0) * inv;
      for (T& v : dx.plane(n, c)) v = g;
    }
  }
  return dx;
}

template <typename T>
Tensor4<T> concat_channels(std::span<const Tensor4<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: nothing to concatenate");
  const Shape4 first = parts.front().shape();
  int channels = 0;
  for (const auto& p : parts) {
    if (p.n() != first.n || p.h() != first.h || p.w() != first.w) {
      throw ShapeError("concat_channels: incompatible shapes " + first.str() + " and " + p.shape().str());
    }
    channels += p.c();
  }
  Tensor4<T> y(Shape4{first.n, channels, first.h, first.w});
  for (int n = 0; n < first.n; ++n) {
    int offset = 0;
    for (const auto& p : parts) {
      const auto src = p.sample(n);
      std::copy(src.begin(), src.end(), y.plane(n, offset).begin());
      offset += p.c();
    }
  }
  return y;
}

template <typename T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
  const Tensor4<T> parts[] = {a, b};
  return concat_channels<T>(std::span<const Tensor4<T>>(parts));
}

template <typename T>
Tensor4<T> slice_channels(const Tensor4<T>& x, int begin, int count) {
  if (begin < 0 || count < 1 || begin + count > x.c()) {
    throw ShapeError("slice_channels: range out of bounds for " + x.shape().str());
  }
  Tensor4<T> y(Shape4{x.n(), count, x.h(), x.w()});
  const std::size_t len = static_cast<std::size_t>(count) * x.shape().plane();
  for (int n = 0; n < x.n(); ++n) {
    const T* src = x.plane(n, begin).data();
    std::copy(src, src + len, y.sample(n).begin());
  }
  return y;
}

template <typename T>
void add_inplace(Tensor4<T>& dst, const Tensor4<T>& src) {
  check_same_shape(dst, src, "add_inplace");
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

template <typename T>
void require_finite(const Tensor4<T>& x, const char* what) {
  for (T v : x.values()) {
    if (!std::isfinite(v)) throw std::domain_error(std::string(what) + ": non-finite value");
  }
}

#define ADRN_INSTANTIATE_TENSOR(T)                                                                     \
  template class Tensor4<T>;                                                                           \
  template struct ConvKernel<T>;                                                                       \
  template Tensor4<T> conv2d_same(const Tensor4<T>&, const ConvKernel<T>&);                            \
  template Tensor4<T> conv2d_same_backward(const Tensor4<T>&, const ConvKernel<T>&, const Tensor4<T>&, \
                                           ConvKernel<T>&, bool);                                      \
  template Tensor4<T> relu(const Tensor4<T>&);                                                         \
  template Tensor4<T> relu_backward(const Tensor4<T>&, const Tensor4<T>&);                             \
  template Tensor4<T> sigmoid(const Tensor4<T>&);                                                      \
  template Tensor4<T> sigmoid_backward(const Tensor4<T>&, const Tensor4<T>&);                          \
  template Tensor4<T> global_avg_pool(const Tensor4<T>&);                                              \
  template Tensor4<T> global_avg_pool_backward(const Tensor4<T>&, const Shape4&);                      \
  template Tensor4<T> concat_channels(std::span<const Tensor4<T>>);                                    \
  template Tensor4<T> concat_channels(const Tensor4<T>&, const Tensor4<T>&);                           \
  template Tensor4<T> slice_channels(const Tensor4<T>&, int, int);                                     \
  template void add_inplace(Tensor4<T>&, const Tensor4<T>&);                                           \
  template void require_finite(const Tensor4<T>&, const char*);

ADRN_INSTANTIATE_TENSOR(float)
ADRN_INSTANTIATE_TENSOR(double)

}  // namespace adrn

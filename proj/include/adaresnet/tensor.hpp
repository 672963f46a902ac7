#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "adaresnet/errors.hpp"

namespace adaresnet {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != 0) {
            s += "x";
        }
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major array of 32-bit floats.
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(Shape shape, float fill = 0.0f) : shape_(std::move(shape)) {
        validate_shape(shape_);
        data_.assign(shape_size(shape_), fill);
    }

    Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape(shape_);
        if (data_.size() != shape_size(shape_)) {
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_string(shape_));
        }
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f); }
    static Tensor full(Shape shape, float value) { return Tensor(std::move(shape), value); }
    static Tensor scalar(float value) { return Tensor(Shape{1}, value); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }
    const std::vector<float>& values() const noexcept { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    /// Same data under a new shape of equal element count.
    Tensor reshaped(Shape shape) const {
        return Tensor(std::move(shape), data_);
    }

    void fill(float value) { std::fill(data_.begin(), data_.end(), value); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

  private:
    static void validate_shape(const Shape& shape) {
        if (shape.empty()) {
            throw DimensionError("tensor shape must have at least one dimension");
        }
        for (std::size_t d : shape) {
            if (d == 0) {
                throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
            }
        }
    }

    Shape shape_;
    std::vector<float> data_;
};

// Output validation. Off by default; the training loop always checks the loss.

inline bool& numeric_checks_flag() {
    thread_local bool enabled = false;
    return enabled;
}

inline void set_numeric_checks(bool enabled) { numeric_checks_flag() = enabled; }

inline const Tensor& checked(const Tensor& t, std::string_view op) {
    if (numeric_checks_flag() && !t.all_finite()) {
        throw NumericError(std::string(op) + " produced a non-finite value");
    }
    return t;
}

namespace detail {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

inline void require_rank(const Tensor& t, std::size_t rank, std::string_view what) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(what) + " must have rank " + std::to_string(rank) + ", got " +
                             shape_string(t.shape()));
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Dense algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_rank(a, 2, "matmul lhs");
    detail::require_rank(b, 2, "matmul rhs");
    if (a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul inner dimensions differ: " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()));
    }
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    detail::MatrixMap(out.data().data(), m, n).noalias() =
        detail::ConstMatrixMap(a.data().data(), m, k) * detail::ConstMatrixMap(b.data().data(), k, n);
    return checked(out, "matmul");
}

inline Tensor relu(const Tensor& x) {
    Tensor out = x;
    for (float& v : out.data()) {
        v = v > 0.0f ? v : 0.0f;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Convolution

enum class Padding { same, valid };

/// Output size and leading padding of a 2-D convolution along both axes.
struct ConvGeometry {
    std::size_t out_h = 0;
    std::size_t out_w = 0;
    std::size_t pad_top = 0;
    std::size_t pad_left = 0;

    static ConvGeometry make(std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                             std::size_t stride, Padding padding) {
        if (stride == 0) {
            throw DimensionError("convolution stride must be positive");
        }
        ConvGeometry g;
        if (padding == Padding::same) {
            if (kh % 2 == 0 || kw % 2 == 0) {
                throw DimensionError("\"same\" padding needs odd kernel sizes, got " + std::to_string(kh) +
                                     "x" + std::to_string(kw));
            }
            g.out_h = (h + stride - 1) / stride;
            g.out_w = (w + stride - 1) / stride;
            // Odd totals put the extra pixel on the bottom/right.
            const auto total = [&](std::size_t in, std::size_t out, std::size_t k) {
                const std::size_t needed = (out - 1) * stride + k;
                return needed > in ? needed - in : std::size_t{0};
            };
            g.pad_top = total(h, g.out_h, kh) / 2;
            g.pad_left = total(w, g.out_w, kw) / 2;
        } else {
            if (kh > h || kw > w) {
                throw DimensionError("\"valid\" convolution kernel larger than input");
            }
            g.out_h = (h - kh) / stride + 1;
            g.out_w = (w - kw) / stride + 1;
        }
        return g;
    }
};

namespace detail {

inline void check_conv_shapes(const Tensor& input, const Tensor& kernel) {
    require_rank(input, 4, "conv2d input");
    require_rank(kernel, 4, "conv2d kernel");
    if (input.dim(1) != kernel.dim(1)) {
        throw DimensionError("conv2d channel mismatch: input " + shape_string(input.shape()) + ", kernel " +
                             shape_string(kernel.shape()));
    }
}

inline bool is_pointwise(std::size_t kh, std::size_t kw, std::size_t stride) {
    return kh == 1 && kw == 1 && stride == 1;
}

/// Output columns [lo, hi) whose input column ox*stride + k - pad lies inside [0, w).
struct ValidRange {
    std::size_t lo = 0;
    std::size_t hi = 0;
};

inline ValidRange valid_range(std::size_t out, std::size_t in, std::size_t k, std::size_t pad, std::size_t stride) {
    ValidRange r;
    r.lo = pad > k ? (pad - k + stride - 1) / stride : 0;
    const std::size_t limit = in + pad;  // need ox*stride + k < in + pad
    r.hi = limit > k ? std::min(out, (limit - k - 1) / stride + 1) : 0;
    r.lo = std::min(r.lo, r.hi);
    return r;
}

/// Unfolds one CxHxW image into a (C*kh*kw) x (out_h*out_w) matrix.
inline void im2col(const float* image, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
                   std::size_t kw, std::size_t stride, const ConvGeometry& g, float* cols) {
    const std::size_t out_hw = g.out_h * g.out_w;
    for (std::size_t ch = 0; ch < c; ++ch) {
        const float* plane = image + ch * h * w;
        for (std::size_t ki = 0; ki < kh; ++ki) {
            const auto ry = valid_range(g.out_h, h, ki, g.pad_top, stride);
            for (std::size_t kj = 0; kj < kw; ++kj) {
                const auto rx = valid_range(g.out_w, w, kj, g.pad_left, stride);
                float* row = cols + ((ch * kh + ki) * kw + kj) * out_hw;
                std::fill(row, row + ry.lo * g.out_w, 0.0f);
                for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
                    float* dst = row + oy * g.out_w;
                    const float* src =
                        plane + (oy * stride + ki - g.pad_top) * w + (rx.lo * stride + kj - g.pad_left);
                    for (std::size_t ox = 0; ox < rx.lo; ++ox) {
                        dst[ox] = 0.0f;
                    }
                    if (stride == 1) {
                        for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) {
                            dst[ox] = src[ox - rx.lo];
                        }
                    } else {
                        for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) {
                            dst[ox] = src[(ox - rx.lo) * stride];
                        }
                    }
                    for (std::size_t ox = rx.hi; ox < g.out_w; ++ox) {
                        dst[ox] = 0.0f;
                    }
                }
                std::fill(row + ry.hi * g.out_w, row + out_hw, 0.0f);
            }
        }
    }
}

/// Adjoint of im2col: scatters-adds columns back into the image.
inline void col2im(const float* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
                   std::size_t kw, std::size_t stride, const ConvGeometry& g, float* image) {
    const std::size_t out_hw = g.out_h * g.out_w;
    for (std::size_t ch = 0; ch < c; ++ch) {
        float* plane = image + ch * h * w;
        for (std::size_t ki = 0; ki < kh; ++ki) {
            const auto ry = valid_range(g.out_h, h, ki, g.pad_top, stride);
            for (std::size_t kj = 0; kj < kw; ++kj) {
                const auto rx = valid_range(g.out_w, w, kj, g.pad_left, stride);
                const float* row = cols + ((ch * kh + ki) * kw + kj) * out_hw;
                for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
                    float* dst = plane + (oy * stride + ki - g.pad_top) * w + (rx.lo * stride + kj - g.pad_left);
                    const float* src = row + oy * g.out_w;
                    for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) {
                        dst[(ox - rx.lo) * stride] += src[ox];
                    }
                }
            }
        }
    }
}

} // namespace detail

/// Reference cross-correlation by direct nested loops, accumulating in double.
inline Tensor conv2d_direct(const Tensor& input, const Tensor& kernel, std::size_t stride, Padding padding) {
    detail::check_conv_shapes(input, kernel);
    const auto n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const auto f = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    const auto g = ConvGeometry::make(h, w, kh, kw, stride, padding);
    Tensor out({n, f, g.out_h, g.out_w});
    std::size_t o = 0;
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t fo = 0; fo < f; ++fo) {
            for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                    double acc = 0.0;
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        for (std::size_t ki = 0; ki < kh; ++ki) {
                            const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ki) -
                                            static_cast<std::ptrdiff_t>(g.pad_top);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
                                continue;
                            }
                            for (std::size_t kj = 0; kj < kw; ++kj) {
                                const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kj) -
                                                static_cast<std::ptrdiff_t>(g.pad_left);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) {
                                    continue;
                                }
                                acc += static_cast<double>(
                                           input[((b * c + ch) * h + static_cast<std::size_t>(iy)) * w +
                                                 static_cast<std::size_t>(ix)]) *
                                       kernel[((fo * c + ch) * kh + ki) * kw + kj];
                            }
                        }
                    }
                    out[o++] = static_cast<float>(acc);
                }
            }
        }
    }
    return checked(out, "conv2d_direct");
}

/// Cross-correlation (no kernel flip) through im2col and a GEMM per image.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, Padding padding) {
    detail::check_conv_shapes(input, kernel);
    const auto n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const auto f = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    const auto g = ConvGeometry::make(h, w, kh, kw, stride, padding);
    const std::size_t rows = c * kh * kw;
    const std::size_t out_hw = g.out_h * g.out_w;
    Tensor out({n, f, g.out_h, g.out_w});
    const detail::ConstMatrixMap k(kernel.data().data(), f, rows);
    const bool pointwise = detail::is_pointwise(kh, kw, stride);
    std::vector<float> cols(pointwise ? 0 : rows * out_hw);
    for (std::size_t b = 0; b < n; ++b) {
        const float* image = input.data().data() + b * c * h * w;
        const float* col_ptr = image;
        if (!pointwise) {
            detail::im2col(image, c, h, w, kh, kw, stride, g, cols.data());
            col_ptr = cols.data();
        }
        detail::MatrixMap(out.data().data() + b * f * out_hw, f, out_hw).noalias() =
            k * detail::ConstMatrixMap(col_ptr, rows, out_hw);
    }
    return checked(out, "conv2d");
}

/// Gradient of conv2d with respect to its input.
inline Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& kernel, const Shape& input_shape,
                                std::size_t stride, Padding padding) {
    const auto n = input_shape[0], c = input_shape[1], h = input_shape[2], w = input_shape[3];
    const auto f = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    const auto g = ConvGeometry::make(h, w, kh, kw, stride, padding);
    const std::size_t rows = c * kh * kw;
    const std::size_t out_hw = g.out_h * g.out_w;
    Tensor grad_in(input_shape);
    const detail::ConstMatrixMap k(kernel.data().data(), f, rows);
    const bool pointwise = detail::is_pointwise(kh, kw, stride);
    std::vector<float> cols(pointwise ? 0 : rows * out_hw);
    for (std::size_t b = 0; b < n; ++b) {
        const detail::ConstMatrixMap dy(grad_out.data().data() + b * f * out_hw, f, out_hw);
        float* dx = grad_in.data().data() + b * c * h * w;
        if (pointwise) {
            detail::MatrixMap(dx, rows, out_hw).noalias() = k.transpose() * dy;
        } else {
            detail::MatrixMap(cols.data(), rows, out_hw).noalias() = k.transpose() * dy;
            detail::col2im(cols.data(), c, h, w, kh, kw, stride, g, dx);
        }
    }
    return grad_in;
}

/// Gradient of conv2d with respect to its kernel.
inline Tensor conv2d_kernel_grad(const Tensor& input, const Tensor& grad_out, const Shape& kernel_shape,
                                 std::size_t stride, Padding padding) {
    const auto n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const auto f = kernel_shape[0], kh = kernel_shape[2], kw = kernel_shape[3];
    const auto g = ConvGeometry::make(h, w, kh, kw, stride, padding);
    const std::size_t rows = c * kh * kw;
    const std::size_t out_hw = g.out_h * g.out_w;
    Tensor grad_k(kernel_shape);
    detail::MatrixMap dk(grad_k.data().data(), f, rows);
    const bool pointwise = detail::is_pointwise(kh, kw, stride);
    std::vector<float> cols(pointwise ? 0 : rows * out_hw);
    for (std::size_t b = 0; b < n; ++b) {
        const float* image = input.data().data() + b * c * h * w;
        const float* col_ptr = image;
        if (!pointwise) {
            detail::im2col(image, c, h, w, kh, kw, stride, g, cols.data());
            col_ptr = cols.data();
        }
        const detail::ConstMatrixMap dy(grad_out.data().data() + b * f * out_hw, f, out_hw);
        dk.noalias() += dy * detail::ConstMatrixMap(col_ptr, rows, out_hw).transpose();
    }
    return grad_k;
}

// ---------------------------------------------------------------------------
// Normalization and pooling

inline constexpr float kBatchNormEpsilon = 1e-5f;
inline constexpr float kBatchNormMomentum = 0.9f;

/// Forward products of batch_norm that its backward rule reuses.
struct BatchNormForward {
    Tensor output;
    Tensor normalized;            // x-hat, same shape as the input
    std::vector<float> inv_std;   // per channel
};

namespace detail {

/// Double-precision sum with eight independent partial sums, combined in a fixed order.
inline double sum_f64(const float* p, std::size_t n) {
    double acc[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (std::size_t j = 0; j < 8; ++j) {
            acc[j] += p[i + j];
        }
    }
    for (; i < n; ++i) {
        acc[i % 8] += p[i];
    }
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

inline double sum_sq_dev_f64(const float* p, std::size_t n, double mean) {
    double acc[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (std::size_t j = 0; j < 8; ++j) {
            const double d = p[i + j] - mean;
            acc[j] += d * d;
        }
    }
    for (; i < n; ++i) {
        const double d = p[i] - mean;
        acc[i % 8] += d * d;
    }
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

inline double dot_f64(const float* a, const float* b, std::size_t n) {
    double acc[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (std::size_t j = 0; j < 8; ++j) {
            acc[j] += static_cast<double>(a[i + j]) * b[i + j];
        }
    }
    for (; i < n; ++i) {
        acc[i % 8] += static_cast<double>(a[i]) * b[i];
    }
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

} // namespace detail

inline BatchNormForward batch_norm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                           Tensor& running_mean, Tensor& running_var, bool training) {
    detail::require_rank(x, 4, "batch_norm input");
    const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    for (const Tensor* p : std::initializer_list<const Tensor*>{&gamma, &beta, &running_mean, &running_var}) {
        if (p->size() != c) {
            throw DimensionError("batch_norm parameter of shape " + shape_string(p->shape()) +
                                 " does not match channel count " + std::to_string(c));
        }
    }
    BatchNormForward res{Tensor(x.shape()), Tensor(x.shape()), std::vector<float>(c)};
    const double count = static_cast<double>(n * hw);
    for (std::size_t ch = 0; ch < c; ++ch) {
        double mean = 0.0;
        double var = 0.0;
        if (training) {
            for (std::size_t b = 0; b < n; ++b) {
                mean += detail::sum_f64(x.data().data() + (b * c + ch) * hw, hw);
            }
            mean /= count;
            for (std::size_t b = 0; b < n; ++b) {
                var += detail::sum_sq_dev_f64(x.data().data() + (b * c + ch) * hw, hw, mean);
            }
            var /= count;
            running_mean[ch] = kBatchNormMomentum * running_mean[ch] +
                               (1.0f - kBatchNormMomentum) * static_cast<float>(mean);
            running_var[ch] = kBatchNormMomentum * running_var[ch] +
                              (1.0f - kBatchNormMomentum) * static_cast<float>(var);
        } else {
            if (running_var[ch] < 0.0f) {
                throw NumericError("batch_norm running variance is negative in channel " +
                                   std::to_string(ch));
            }
            mean = running_mean[ch];
            var = running_var[ch];
        }
        const auto inv_std = static_cast<float>(1.0 / std::sqrt(var + kBatchNormEpsilon));
        res.inv_std[ch] = inv_std;
        const auto m = static_cast<float>(mean);
        const float gm = gamma[ch];
        const float bt = beta[ch];
        for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * hw;
            const float* p = x.data().data() + off;
            float* xh = res.normalized.data().data() + off;
            float* y = res.output.data().data() + off;
            for (std::size_t i = 0; i < hw; ++i) {
                xh[i] = (p[i] - m) * inv_std;
                y[i] = gm * xh[i] + bt;
            }
        }
    }
    checked(res.output, "batch_norm");
    return res;
}

/// Per-channel normalization over N, H and W. Training mode uses batch statistics
/// and updates the running statistics; inference mode uses the running statistics.
inline Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                         Tensor& running_var, bool training) {
    return batch_norm_forward(x, gamma, beta, running_mean, running_var, training).output;
}

inline Tensor global_avg_pool(const Tensor& x) {
    detail::require_rank(x, 4, "global_avg_pool input");
    const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor out({n, c});
    for (std::size_t i = 0; i < n * c; ++i) {
        const float* p = x.data().data() + i * hw;
        double acc = 0.0;
        for (std::size_t j = 0; j < hw; ++j) {
            acc += p[j];
        }
        out[i] = static_cast<float>(acc / static_cast<double>(hw));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Loss

namespace detail {

/// Index of the single 1 in each row; throws on malformed rows.
inline std::vector<std::size_t> onehot_targets(const Tensor& logits, const Tensor& onehot) {
    require_rank(logits, 2, "logits");
    if (onehot.shape() != logits.shape()) {
        throw DimensionError("one-hot shape " + shape_string(onehot.shape()) + " does not match logits " +
                             shape_string(logits.shape()));
    }
    const auto n = logits.dim(0), k = logits.dim(1);
    std::vector<std::size_t> targets(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t ones = 0;
        for (std::size_t j = 0; j < k; ++j) {
            const float v = onehot[i * k + j];
            if (v == 1.0f) {
                ++ones;
                targets[i] = j;
            } else if (v != 0.0f) {
                ones = 2;
                break;
            }
        }
        if (ones != 1) {
            throw DimensionError("one-hot row " + std::to_string(i) + " is malformed");
        }
    }
    return targets;
}

} // namespace detail

/// Loss and d(loss)/d(logits) of the batch-mean softmax cross-entropy.
struct CrossEntropy {
    float loss = 0.0f;
    Tensor grad;
};

inline CrossEntropy softmax_cross_entropy_with_grad(const Tensor& logits, const Tensor& onehot) {
    const auto targets = detail::onehot_targets(logits, onehot);
    const auto n = logits.dim(0), k = logits.dim(1);
    CrossEntropy res{0.0f, Tensor(logits.shape())};
    double total = 0.0;
    std::vector<double> e(k);
    for (std::size_t i = 0; i < n; ++i) {
        const float* row = logits.data().data() + i * k;
        const float mx = *std::max_element(row, row + k);
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            e[j] = std::exp(static_cast<double>(row[j]) - mx);
            sum += e[j];
        }
        total += std::log(sum) - (static_cast<double>(row[targets[i]]) - mx);
        for (std::size_t j = 0; j < k; ++j) {
            const double p = e[j] / sum - (j == targets[i] ? 1.0 : 0.0);
            res.grad[i * k + j] = static_cast<float>(p / static_cast<double>(n));
        }
    }
    res.loss = static_cast<float>(total / static_cast<double>(n));
    return res;
}

/// Batch mean of -log softmax(logits)[true class], stabilized by max-subtraction.
inline float softmax_cross_entropy(const Tensor& logits, const Tensor& onehot) {
    return softmax_cross_entropy_with_grad(logits, onehot).loss;
}

} // namespace adaresnet

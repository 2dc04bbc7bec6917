// Copyright 2026 The EchoQA Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "echoqa/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <utility>

namespace echoqa::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

struct ConvDims {
  std::size_t n, c, h, w;      // input
  std::size_t k, kh, kw;       // kernel
  std::size_t ho, wo;          // output
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, ConvGeometry g) {
  if (g.stride == 0) throw ConfigurationError("conv2d stride must be positive");
  if (w.rank() != 4) throw ConfigurationError("conv2d kernel must be [K,C,kh,kw], got " + shape_str(w.shape()));
  ConvDims d{};
  if (x.rank() == 4) {
    d = {x.dim(0), x.dim(1), x.dim(2), x.dim(3), 0, 0, 0, 0, 0};
  } else if (x.rank() == 3) {
    d = {1, x.dim(0), x.dim(1), x.dim(2), 0, 0, 0, 0, 0};
  } else {
    throw ConfigurationError("conv2d input must be [C,H,W] or [N,C,H,W], got " + shape_str(x.shape()));
  }
  if (w.dim(1) != d.c) {
    throw ConfigurationError("conv2d input has " + std::to_string(d.c) + " channels but kernel expects " +
                             std::to_string(w.dim(1)));
  }
  d.k = w.dim(0);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  if (b.size() != d.k) throw ConfigurationError("conv2d bias length does not match output channels");
  if (d.kh > d.h + 2 * g.pad || d.kw > d.w + 2 * g.pad) {
    throw ConfigurationError("conv2d kernel " + shape_str(w.shape()) + " larger than padded input " +
                             shape_str(x.shape()));
  }
  d.ho = conv_output_size(d.h, d.kh, g.stride, g.pad);
  d.wo = conv_output_size(d.w, d.kw, g.stride, g.pad);
  return d;
}

Shape conv_out_shape(const ConvDims& d, std::size_t in_rank) {
  if (in_rank == 3) return {d.k, d.ho, d.wo};
  return {d.n, d.k, d.ho, d.wo};
}

// Output columns j whose input column j*stride + n - pad lies inside [0, w).
inline std::pair<std::size_t, std::size_t> valid_columns(const ConvDims& d, ConvGeometry g, std::size_t n) {
  std::size_t j0 = 0;
  if (g.pad > n) j0 = (g.pad - n + g.stride - 1) / g.stride;
  std::size_t j1 = 0;
  if (d.w + g.pad > n) j1 = std::min(d.wo, (d.w + g.pad - n - 1) / g.stride + 1);
  return {std::min(j0, j1), j1};
}

// col: [c*kh*kw, ho*wo]
template <typename T>
void im2col(const T* x, const ConvDims& d, ConvGeometry g, T* col) {
  const std::size_t p = d.ho * d.wo;
  for (std::size_t c = 0; c < d.c; ++c) {
    for (std::size_t m = 0; m < d.kh; ++m) {
      for (std::size_t n = 0; n < d.kw; ++n) {
        T* row = col + ((c * d.kh + m) * d.kw + n) * p;
        for (std::size_t i = 0; i < d.ho; ++i) {
          const long ih = static_cast<long>(i * g.stride + m) - static_cast<long>(g.pad);
          T* out = row + i * d.wo;
          if (ih < 0 || ih >= static_cast<long>(d.h)) {
            std::fill(out, out + d.wo, T(0));
            continue;
          }
          const T* src = x + (c * d.h + static_cast<std::size_t>(ih)) * d.w;
          const auto [j0, j1] = valid_columns(d, g, n);
          std::fill(out, out + j0, T(0));
          const T* in = src + (j0 * g.stride + n - g.pad);
          if (g.stride == 1) {
            std::copy(in, in + (j1 - j0), out + j0);
          } else {
            for (std::size_t j = j0; j < j1; ++j, in += g.stride) out[j] = *in;
          }
          std::fill(out + j1, out + d.wo, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvDims& d, ConvGeometry g, T* dx) {
  const std::size_t p = d.ho * d.wo;
  for (std::size_t c = 0; c < d.c; ++c) {
    for (std::size_t m = 0; m < d.kh; ++m) {
      for (std::size_t n = 0; n < d.kw; ++n) {
        const T* row = col + ((c * d.kh + m) * d.kw + n) * p;
        for (std::size_t i = 0; i < d.ho; ++i) {
          const long ih = static_cast<long>(i * g.stride + m) - static_cast<long>(g.pad);
          if (ih < 0 || ih >= static_cast<long>(d.h)) continue;
          T* dst = dx + (c * d.h + static_cast<std::size_t>(ih)) * d.w;
          const T* in = row + i * d.wo;
          const auto [j0, j1] = valid_columns(d, g, n);
          T* out = dst + (j0 * g.stride + n - g.pad);
          for (std::size_t j = j0; j < j1; ++j, out += g.stride) *out += in[j];
        }
      }
    }
  }
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

void require_same_size(const Shape& a, const Shape& b, const char* op) {
  if (shape_numel(a) != shape_numel(b)) {
    throw ConfigurationError(std::string(op) + ": size mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

}  // namespace

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0 || kernel > in + 2 * pad) {
    throw ConfigurationError("convolution window does not fit the input");
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

namespace kernels {

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, ConvGeometry g) {
  const auto d = conv_dims(x, w, b, g);
  Tensor<T> y(conv_out_shape(d, x.rank()));
  const std::size_t kdim = d.c * d.kh * d.kw;
  const std::size_t p = d.ho * d.wo;
  AlignedVector<T> col(kdim * p);
  ConstMapMat<T> wm(w.raw(), d.k, kdim);
  for (std::size_t n = 0; n < d.n; ++n) {
    im2col(x.raw() + n * d.c * d.h * d.w, d, g, col.data());
    ConstMapMat<T> cm(col.data(), kdim, p);
    MapMat<T> ym(y.raw() + n * d.k * p, d.k, p);
    ym.noalias() = wm * cm;
    for (std::size_t k = 0; k < d.k; ++k) ym.row(k).array() += b[k];
  }
  return y;
}

template <typename T>
Tensor<T> conv2d_reference(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                           ConvGeometry g) {
  const auto d = conv_dims(x, w, b, g);
  Tensor<T> y(conv_out_shape(d, x.rank()));
  T* out = y.raw();
  for (std::size_t n = 0; n < d.n; ++n) {
    const T* img = x.raw() + n * d.c * d.h * d.w;
    for (std::size_t k = 0; k < d.k; ++k) {
      for (std::size_t i = 0; i < d.ho; ++i) {
        for (std::size_t j = 0; j < d.wo; ++j) {
          T acc = b[k];
          for (std::size_t c = 0; c < d.c; ++c) {
            for (std::size_t m = 0; m < d.kh; ++m) {
              const long ih = static_cast<long>(i * g.stride + m) - static_cast<long>(g.pad);
              if (ih < 0 || ih >= static_cast<long>(d.h)) continue;
              for (std::size_t q = 0; q < d.kw; ++q) {
                const long iw = static_cast<long>(j * g.stride + q) - static_cast<long>(g.pad);
                if (iw < 0 || iw >= static_cast<long>(d.w)) continue;
                acc += w[((k * d.c + c) * d.kh + m) * d.kw + q] *
                       img[(c * d.h + static_cast<std::size_t>(ih)) * d.w + static_cast<std::size_t>(iw)];
              }
            }
          }
          *out++ = acc;
        }
      }
    }
  }
  return y;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, ConvGeometry g,
                     Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  Tensor<T> bias_shape(Shape{w.dim(0)});
  const auto d = conv_dims(x, w, bias_shape, g);
  const std::size_t kdim = d.c * d.kh * d.kw;
  const std::size_t p = d.ho * d.wo;
  AlignedVector<T> col(kdim * p);
  AlignedVector<T> dcol(dx ? kdim * p : 0);
  ConstMapMat<T> wm(w.raw(), d.k, kdim);
  for (std::size_t n = 0; n < d.n; ++n) {
    ConstMapMat<T> dym(dy.raw() + n * d.k * p, d.k, p);
    if (dw) {
      im2col(x.raw() + n * d.c * d.h * d.w, d, g, col.data());
      ConstMapMat<T> cm(col.data(), kdim, p);
      MapMat<T> dwm(dw->raw(), d.k, kdim);
      dwm.noalias() += dym * cm.transpose();
    }
    if (db) {
      for (std::size_t k = 0; k < d.k; ++k) (*db)[k] += dym.row(k).sum();
    }
    if (dx) {
      MapMat<T> dcm(dcol.data(), kdim, p);
      dcm.noalias() = wm.transpose() * dym;
      col2im(dcol.data(), d, g, dx->raw() + n * d.c * d.h * d.w);
    }
  }
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t window, std::size_t stride,
                    std::vector<std::size_t>* argmax) {
  if (x.rank() != 4 && x.rank() != 3) {
    throw ConfigurationError("maxpool2d input must be [C,H,W] or [N,C,H,W], got " + shape_str(x.shape()));
  }
  const bool batched = x.rank() == 4;
  const std::size_t n = batched ? x.dim(0) : 1;
  const std::size_t c = x.dim(batched ? 1 : 0);
  const std::size_t h = x.dim(batched ? 2 : 1);
  const std::size_t w = x.dim(batched ? 3 : 2);
  if (window == 0 || stride == 0 || h < window || w < window) {
    throw ConfigurationError("maxpool2d window " + std::to_string(window) + " does not fit input " +
                             shape_str(x.shape()));
  }
  const std::size_t ho = (h - window) / stride + 1;
  const std::size_t wo = (w - window) / stride + 1;
  Tensor<T> y(batched ? Shape{n, c, ho, wo} : Shape{c, ho, wo});
  if (argmax) argmax->assign(y.size(), 0);
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j, ++o) {
        std::size_t best = base + (i * stride) * w + j * stride;
        for (std::size_t m = 0; m < window; ++m) {
          for (std::size_t q = 0; q < window; ++q) {
            const std::size_t idx = base + (i * stride + m) * w + (j * stride + q);
            if (x[idx] > x[best]) best = idx;
          }
        }
        y[o] = x[best];
        if (argmax) (*argmax)[o] = best;
      }
    }
  }
  return y;
}

}  // namespace kernels

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, ConvGeometry g) {
  auto& tape = x.tape();
  Tensor<T> y = kernels::conv2d(x.value(), w.value(), b.value(), g);
  const auto xi = x.id(), wi = w.id(), bi = b.id();
  return tape.emit(std::move(y), {x, w, b}, [xi, wi, bi, g](Tape<T>& t, std::size_t self) {
    Tensor<T>* dx = t.requires_grad(xi) ? &t.grad(xi) : nullptr;
    Tensor<T>* dw = t.requires_grad(wi) ? &t.grad(wi) : nullptr;
    Tensor<T>* db = t.requires_grad(bi) ? &t.grad(bi) : nullptr;
    kernels::conv2d_backward(t.value(xi), t.value(wi), t.grad(self), g, dx, dw, db);
  });
}

template <typename T>
Var<T> maxpool2d(Var<T> x, std::size_t window, std::size_t stride) {
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  Tensor<T> y = kernels::maxpool2d(x.value(), window, stride, argmax.get());
  const auto xi = x.id();
  return x.tape().emit(std::move(y), {x}, [xi, argmax](Tape<T>& t, std::size_t self) {
    auto& dx = t.grad(xi);
    const auto& dy = t.grad(self);
    for (std::size_t o = 0; o < dy.size(); ++o) dx[(*argmax)[o]] += dy[o];
  });
}

template <typename T>
Var<T> batchnorm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormStats<T>& stats, Mode mode, T eps) {
  const auto& xv = x.value();
  if (xv.rank() != 2 && xv.rank() != 4) {
    throw ConfigurationError("batchnorm input must be [N,C] or [N,C,H,W], got " + shape_str(xv.shape()));
  }
  const std::size_t n = xv.dim(0), c = xv.dim(1);
  const std::size_t hw = xv.rank() == 4 ? xv.dim(2) * xv.dim(3) : 1;
  if (gamma.value().size() != c || beta.value().size() != c) {
    throw ConfigurationError("batchnorm parameter length does not match channel count");
  }
  const std::size_t count = n * hw;
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  Tensor<T> y(xv.shape());
  auto xhat = std::make_shared<Tensor<T>>(xv.shape());
  auto inv_std = std::make_shared<std::vector<T>>(c);

  if (mode == Mode::train) {
    if (n < 2) throw ConfigurationError("batchnorm in train mode needs a batch of at least 2");
    std::vector<T> mean(c, T(0)), var(c, T(0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* p = xv.raw() + (i * c + ch) * hw;
        for (std::size_t k = 0; k < hw; ++k) mean[ch] += p[k];
      }
    for (auto& m : mean) m /= T(count);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* p = xv.raw() + (i * c + ch) * hw;
        for (std::size_t k = 0; k < hw; ++k) var[ch] += (p[k] - mean[ch]) * (p[k] - mean[ch]);
      }
    for (auto& v : var) v /= T(count);
    for (std::size_t ch = 0; ch < c; ++ch) (*inv_std)[ch] = T(1) / std::sqrt(var[ch] + eps);

    if (stats.running_mean.size() != c) {
      stats.running_mean = Tensor<T>(Shape{c});
      stats.running_var = Tensor<T>(Shape{c}, T(1));
      stats.ready = false;
    }
    const T unbias = count > 1 ? T(count) / T(count - 1) : T(1);
    for (std::size_t ch = 0; ch < c; ++ch) {
      if (!stats.ready) {
        stats.running_mean[ch] = mean[ch];
        stats.running_var[ch] = var[ch] * unbias;
      } else {
        stats.running_mean[ch] = stats.momentum * stats.running_mean[ch] + (T(1) - stats.momentum) * mean[ch];
        stats.running_var[ch] = stats.momentum * stats.running_var[ch] + (T(1) - stats.momentum) * var[ch] * unbias;
      }
    }
    stats.ready = true;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t off = (i * c + ch) * hw;
        for (std::size_t k = 0; k < hw; ++k) {
          const T xh = (xv[off + k] - mean[ch]) * (*inv_std)[ch];
          (*xhat)[off + k] = xh;
          y[off + k] = gv[ch] * xh + bv[ch];
        }
      }
  } else {
    if (stats.running_mean.size() != c) {
      throw StateError("batchnorm inference without running statistics");
    }
    for (std::size_t ch = 0; ch < c; ++ch) (*inv_std)[ch] = T(1) / std::sqrt(stats.running_var[ch] + eps);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t off = (i * c + ch) * hw;
        for (std::size_t k = 0; k < hw; ++k) {
          const T xh = (xv[off + k] - stats.running_mean[ch]) * (*inv_std)[ch];
          (*xhat)[off + k] = xh;
          y[off + k] = gv[ch] * xh + bv[ch];
        }
      }
  }

  const auto xi = x.id(), gi = gamma.id(), bi = beta.id();
  const bool train = mode == Mode::train;
  return x.tape().emit(std::move(y), {x, gamma, beta},
                       [=](Tape<T>& t, std::size_t self) {
    const auto& dy = t.grad(self);
    const auto& g = t.value(gi);
    std::vector<T> sum_dy(c, T(0)), sum_dy_xhat(c, T(0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t off = (i * c + ch) * hw;
        for (std::size_t k = 0; k < hw; ++k) {
          sum_dy[ch] += dy[off + k];
          sum_dy_xhat[ch] += dy[off + k] * (*xhat)[off + k];
        }
      }
    if (t.requires_grad(gi)) {
      auto& dg = t.grad(gi);
      for (std::size_t ch = 0; ch < c; ++ch) dg[ch] += sum_dy_xhat[ch];
    }
    if (t.requires_grad(bi)) {
      auto& db = t.grad(bi);
      for (std::size_t ch = 0; ch < c; ++ch) db[ch] += sum_dy[ch];
    }
    if (!t.requires_grad(xi)) return;
    auto& dx = t.grad(xi);
    const T m = T(count);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t off = (i * c + ch) * hw;
        const T k1 = g[ch] * (*inv_std)[ch];
        for (std::size_t k = 0; k < hw; ++k) {
          if (train) {
            dx[off + k] += k1 * (dy[off + k] - sum_dy[ch] / m - (*xhat)[off + k] * sum_dy_xhat[ch] / m);
          } else {
            dx[off + k] += k1 * dy[off + k];
          }
        }
      }
  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor<T> y(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > T(0) ? xv[i] : T(0);
  const auto xi = x.id();
  return x.tape().emit(std::move(y), {x}, [xi](Tape<T>& t, std::size_t self) {
    const auto& xv = t.value(xi);
    const auto& dy = t.grad(self);
    auto& dx = t.grad(xi);
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (xv[i] > T(0)) dx[i] += dy[i];
  });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  Tensor<T> y(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = sigmoid_scalar(xv[i]);
  const auto xi = x.id();
  return x.tape().emit(std::move(y), {x}, [xi](Tape<T>& t, std::size_t self) {
    const auto& y = t.value(self);
    const auto& dy = t.grad(self);
    auto& dx = t.grad(xi);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
Var<T> tanh(Var<T> x) {
  Tensor<T> y(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(xv[i]);
  const auto xi = x.id();
  return x.tape().emit(std::move(y), {x}, [xi](Tape<T>& t, std::size_t self) {
    const auto& y = t.value(self);
    const auto& dy = t.grad(self);
    auto& dx = t.grad(xi);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (T(1) - y[i] * y[i]);
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  if (xv.rank() != 2 || wv.rank() != 2) {
    throw ConfigurationError("linear expects x [N,in] and w [out,in], got " + shape_str(xv.shape()) +
                             " and " + shape_str(wv.shape()));
  }
  const std::size_t n = xv.dim(0), in = xv.dim(1), out = wv.dim(0);
  if (wv.dim(1) != in) {
    throw ConfigurationError("linear input width " + std::to_string(in) + " does not match weight in-dimension " +
                             std::to_string(wv.dim(1)));
  }
  if (b.value().size() != out) throw ConfigurationError("linear bias length does not match out-dimension");
  Tensor<T> y(Shape{n, out});
  MapMat<T> ym(y.raw(), n, out);
  ym.noalias() = ConstMapMat<T>(xv.raw(), n, in) * ConstMapMat<T>(wv.raw(), out, in).transpose();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < out; ++j) y[i * out + j] += bv[j];

  const auto xi = x.id(), wi = w.id(), bi = b.id();
  return x.tape().emit(std::move(y), {x, w, b}, [=](Tape<T>& t, std::size_t self) {
    const auto& dy = t.grad(self);
    ConstMapMat<T> dym(dy.raw(), n, out);
    if (t.requires_grad(xi)) {
      MapMat<T> dxm(t.grad(xi).raw(), n, in);
      dxm.noalias() += dym * ConstMapMat<T>(t.value(wi).raw(), out, in);
    }
    if (t.requires_grad(wi)) {
      MapMat<T> dwm(t.grad(wi).raw(), out, in);
      dwm.noalias() += dym.transpose() * ConstMapMat<T>(t.value(xi).raw(), n, in);
    }
    if (t.requires_grad(bi)) {
      auto& db = t.grad(bi);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < out; ++j) db[j] += dy[i * out + j];
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_size(a.shape(), b.shape(), "add");
  Tensor<T> y = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  const auto ai = a.id(), bi = b.id();
  return a.tape().emit(std::move(y), {a, b}, [ai, bi](Tape<T>& t, std::size_t self) {
    const auto& dy = t.grad(self);
    if (t.requires_grad(ai)) accumulate(t.grad(ai), dy);
    if (t.requires_grad(bi)) accumulate(t.grad(bi), dy);
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_size(a.shape(), b.shape(), "mul");
  Tensor<T> y = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  const auto ai = a.id(), bi = b.id();
  return a.tape().emit(std::move(y), {a, b}, [ai, bi](Tape<T>& t, std::size_t self) {
    const auto& dy = t.grad(self);
    if (t.requires_grad(ai)) {
      auto& da = t.grad(ai);
      const auto& bv = t.value(bi);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv[i];
    }
    if (t.requires_grad(bi)) {
      auto& db = t.grad(bi);
      const auto& av = t.value(ai);
      for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  Tensor<T> y = x.value();
  for (auto& v : y.data()) v *= factor;
  const auto xi = x.id();
  return x.tape().emit(std::move(y), {x}, [xi, factor](Tape<T>& t, std::size_t self) {
    const auto& dy = t.grad(self);
    auto& dx = t.grad(xi);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += factor * dy[i];
  });
}

template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t count) {
  const auto& xv = x.value();
  if (xv.rank() != 2 || begin + count > xv.dim(1) || count == 0) {
    throw ConfigurationError("slice_cols out of range for " + shape_str(xv.shape()));
  }
  const std::size_t n = xv.dim(0), cols = xv.dim(1);
  Tensor<T> y(Shape{n, count});
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(xv.raw() + i * cols + begin, count, y.raw() + i * count);
  const auto xi = x.id();
  return x.tape().emit(std::move(y), {x}, [=](Tape<T>& t, std::size_t self) {
    const auto& dy = t.grad(self);
    auto& dx = t.grad(xi);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < count; ++j) dx[i * cols + begin + j] += dy[i * count + j];
  });
}

template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(0) != bv.dim(0)) {
    throw ConfigurationError("concat_cols needs 2D inputs with equal rows, got " + shape_str(av.shape()) +
                             " and " + shape_str(bv.shape()));
  }
  const std::size_t n = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
  Tensor<T> y(Shape{n, ca + cb});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(av.raw() + i * ca, ca, y.raw() + i * (ca + cb));
    std::copy_n(bv.raw() + i * cb, cb, y.raw() + i * (ca + cb) + ca);
  }
  const auto ai = a.id(), bi = b.id();
  return a.tape().emit(std::move(y), {a, b}, [=](Tape<T>& t, std::size_t self) {
    const auto& dy = t.grad(self);
    if (t.requires_grad(ai)) {
      auto& da = t.grad(ai);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < ca; ++j) da[i * ca + j] += dy[i * (ca + cb) + j];
    }
    if (t.requires_grad(bi)) {
      auto& db = t.grad(bi);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < cb; ++j) db[i * cb + j] += dy[i * (ca + cb) + ca + j];
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> y = x.value().reshaped(std::move(shape));
  const auto xi = x.id();
  return x.tape().emit(std::move(y), {x}, [xi](Tape<T>& t, std::size_t self) {
    accumulate(t.grad(xi), t.grad(self));
  });
}

template <typename T>
Var<T> sequence_step(Var<T> x, std::size_t batch, std::size_t steps, std::size_t t_index) {
  const auto& xv = x.value();
  if (xv.rank() != 2 || xv.dim(0) != batch * steps || t_index >= steps) {
    throw ConfigurationError("sequence_step: expected [" + std::to_string(batch * steps) + ",F], got " +
                             shape_str(xv.shape()));
  }
  const std::size_t f = xv.dim(1);
  Tensor<T> y(Shape{batch, f});
  for (std::size_t b = 0; b < batch; ++b)
    std::copy_n(xv.raw() + (b * steps + t_index) * f, f, y.raw() + b * f);
  const auto xi = x.id();
  return x.tape().emit(std::move(y), {x}, [=](Tape<T>& t, std::size_t self) {
    const auto& dy = t.grad(self);
    auto& dx = t.grad(xi);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < f; ++j) dx[(b * steps + t_index) * f + j] += dy[b * f + j];
  });
}

template <typename T>
Var<T> apply_mask(Var<T> x, const Tensor<T>& mask) {
  require_same_size(x.shape(), mask.shape(), "apply_mask");
  Tensor<T> y = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
  const auto xi = x.id();
  return x.tape().emit(std::move(y), {x}, [xi, mask](Tape<T>& t, std::size_t self) {
    const auto& dy = t.grad(self);
    auto& dx = t.grad(xi);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * mask[i];
  });
}

template <typename T>
Var<T> l1_loss(Var<T> pred, const Tensor<T>& target) {
  require_same_size(pred.shape(), target.shape(), "l1_loss");
  const auto& pv = pred.value();
  T acc = T(0);
  for (std::size_t i = 0; i < pv.size(); ++i) acc += std::abs(pv[i] - target[i]);
  const T inv_n = T(1) / T(pv.size());
  Tensor<T> y(Shape{1}, acc * inv_n);
  const auto pi = pred.id();
  return pred.tape().emit(std::move(y), {pred}, [pi, target, inv_n](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0] * inv_n;
    const auto& pv = t.value(pi);
    auto& dp = t.grad(pi);
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const T diff = pv[i] - target[i];
      dp[i] += diff > T(0) ? g : (diff < T(0) ? -g : T(0));
    }
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  T acc = T(0);
  for (auto v : x.value().data()) acc += v;
  const auto xi = x.id();
  return x.tape().emit(Tensor<T>(Shape{1}, acc), {x}, [xi](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    for (auto& v : t.grad(xi).data()) v += g;
  });
}

template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& weights) {
  if (terms.empty() || terms.size() != weights.size()) {
    throw ConfigurationError("weighted_sum needs one weight per term");
  }
  T acc = T(0);
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].value().size() != 1) throw ConfigurationError("weighted_sum terms must be scalars");
    acc += weights[i] * terms[i].value()[0];
  }
  auto& tape = terms.front().tape();
  std::vector<std::size_t> ids;
  for (const auto& v : terms) ids.push_back(v.id());
  return tape.emit(Tensor<T>(Shape{1}, acc), ids, [ids, weights](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (t.requires_grad(ids[i])) t.grad(ids[i])[0] += weights[i] * g;
  });
}

#define ECHOQA_INSTANTIATE_OPS(T)                                                                    \
  template Tensor<T> kernels::conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                     ConvGeometry);                                                 \
  template Tensor<T> kernels::conv2d_reference(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                               ConvGeometry);                                       \
  template void kernels::conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                         ConvGeometry, Tensor<T>*, Tensor<T>*, Tensor<T>*);         \
  template Tensor<T> kernels::maxpool2d(const Tensor<T>&, std::size_t, std::size_t,                 \
                                        std::vector<std::size_t>*);                                 \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, ConvGeometry);                                     \
  template Var<T> maxpool2d(Var<T>, std::size_t, std::size_t);                                      \
  template Var<T> batchnorm(Var<T>, Var<T>, Var<T>, BatchNormStats<T>&, Mode, T);                   \
  template Var<T> relu(Var<T>);                                                                     \
  template Var<T> sigmoid(Var<T>);                                                                  \
  template Var<T> tanh(Var<T>);                                                                     \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                                   \
  template Var<T> add(Var<T>, Var<T>);                                                              \
  template Var<T> mul(Var<T>, Var<T>);                                                              \
  template Var<T> scale(Var<T>, T);                                                                 \
  template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);                                     \
  template Var<T> concat_cols(Var<T>, Var<T>);                                                      \
  template Var<T> reshape(Var<T>, Shape);                                                           \
  template Var<T> sequence_step(Var<T>, std::size_t, std::size_t, std::size_t);                     \
  template Var<T> apply_mask(Var<T>, const Tensor<T>&);                                             \
  template Var<T> l1_loss(Var<T>, const Tensor<T>&);                                                \
  template Var<T> sum(Var<T>);                                                                      \
  template Var<T> weighted_sum(const std::vector<Var<T>>&, const std::vector<T>&);

ECHOQA_INSTANTIATE_OPS(float)
ECHOQA_INSTANTIATE_OPS(double)

}  // namespace echoqa::nn

// SPDX-License-Identifier: Apache-2.0
#include "shallowpi/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "shallowpi/error.hpp"

namespace shallowpi {
namespace {

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (active_tape() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t != nullptr && t->requires_grad()) return true;
  }
  return false;
}

template <typename Fn>
void record(const char* name, Fn&& fn) {
  active_tape()->record(name, std::forward<Fn>(fn));
}

void expect_rank(const Tensor& t, std::size_t rank, const char* op, const char* arg) {
  require(t.defined(), ErrorKind::InvalidArgument,
          std::string(op) + ": " + arg + " is undefined");
  require(t.rank() == rank, ErrorKind::ShapeMismatch,
          std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) +
              ", got shape " + shape_str(t.shape()));
}

void expect_dim(std::size_t got, std::size_t want, const char* op, const std::string& what) {
  require(got == want, ErrorKind::ShapeMismatch,
          std::string(op) + ": " + what + " is " + std::to_string(got) + ", expected " +
              std::to_string(want));
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, k, stride, pad, ho, wo;
  std::size_t col_rows() const { return cin * k * k; }
  std::size_t col_cols() const { return ho * wo; }
};

// Writes one sample's patches into columns [0, ho*wo) of a row-major
// matrix with leading dimension ld.
void im2col(const double* x, const ConvGeometry& g, double* col, std::size_t ld) {
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        double* row = col + ((c * g.k + ki) * g.k + kj) * ld;
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                          static_cast<std::ptrdiff_t>(g.pad);
          double* dst = row + oh * g.wo;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = x + (c * g.h + static_cast<std::size_t>(ih)) * g.w;
          for (std::size_t ow = 0; ow < g.wo; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                            static_cast<std::ptrdiff_t>(g.pad);
            dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w))
                          ? 0.0
                          : src[static_cast<std::size_t>(iw)];
          }
        }
      }
    }
  }
}

void col2im_acc(const double* col, const ConvGeometry& g, double* dx, std::size_t ld) {
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const double* row = col + ((c * g.k + ki) * g.k + kj) * ld;
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                          static_cast<std::ptrdiff_t>(g.pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* dst = dx + (c * g.h + static_cast<std::size_t>(ih)) * g.w;
          for (std::size_t ow = 0; ow < g.wo; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.w)) {
              dst[static_cast<std::size_t>(iw)] += row[oh * g.wo + ow];
            }
          }
        }
      }
    }
  }
}

int blas_int(std::size_t v) { return static_cast<int>(v); }

/// Samples per im2col chunk, keeping the patch matrix near 4M values.
std::size_t conv_chunk(const ConvGeometry& g) {
  const std::size_t per = g.col_rows() * g.col_cols();
  return std::max<std::size_t>(1, std::min(g.n, (std::size_t{1} << 22) / std::max<std::size_t>(per, 1)));
}

void check_finite_positive(double v, const char* op, const char* what) {
  require(std::isfinite(v) && v > 0.0, ErrorKind::InvalidArgument,
          std::string(op) + ": " + what + " must be positive and finite");
}

}  // namespace

void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n) {
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, blas_int(m), blas_int(n), blas_int(k),
              1.0, a, blas_int(k), b, blas_int(n), 1.0, c, blas_int(n));
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
              int padding) {
  constexpr const char* op = "conv2d";
  expect_rank(x, 4, op, "input");
  expect_rank(weight, 4, op, "weight");
  require(stride > 0, ErrorKind::InvalidArgument, "conv2d: stride must be positive");
  require(padding >= 0, ErrorKind::InvalidArgument, "conv2d: padding must be non-negative");
  ConvGeometry g{};
  g.n = x.dim(0);
  g.cin = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.cout = weight.dim(0);
  g.k = weight.dim(2);
  g.stride = static_cast<std::size_t>(stride);
  g.pad = static_cast<std::size_t>(padding);
  expect_dim(weight.dim(1), g.cin, op, "weight in-channels (dim 1)");
  expect_dim(weight.dim(3), g.k, op, "weight kernel width (dim 3)");
  require(g.k <= g.h + 2 * g.pad && g.k <= g.w + 2 * g.pad, ErrorKind::ShapeMismatch,
          "conv2d: kernel " + std::to_string(g.k) + " exceeds padded input " +
              shape_str(x.shape()));
  if (bias.defined()) {
    expect_rank(bias, 1, op, "bias");
    expect_dim(bias.dim(0), g.cout, op, "bias length (dim 0)");
  }
  g.ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;

  const bool track = tracking({&x, &weight, &bias});
  Tensor out = Tensor::zeros({g.n, g.cout, g.ho, g.wo}, track);
  const auto rows = g.col_rows();
  const auto cols = g.col_cols();
  const auto chunk = conv_chunk(g);
  std::vector<double> col(rows * cols * chunk);
  std::vector<double> res(g.cout * cols * chunk);
  const double* xd = x.data().data();
  const double* wd = weight.data().data();
  double* od = out.data().data();
  const auto in_stride = g.cin * g.h * g.w;
  const auto out_stride = g.cout * cols;
  for (std::size_t n0 = 0; n0 < g.n; n0 += chunk) {
    const auto nb = std::min(chunk, g.n - n0);
    const auto ld = nb * cols;
    for (std::size_t i = 0; i < nb; ++i) im2col(xd + (n0 + i) * in_stride, g, col.data() + i * cols, ld);
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, blas_int(g.cout), blas_int(ld),
                blas_int(rows), 1.0, wd, blas_int(rows), col.data(), blas_int(ld), 0.0, res.data(),
                blas_int(ld));
    for (std::size_t i = 0; i < nb; ++i) {
      double* on = od + (n0 + i) * out_stride;
      for (std::size_t o = 0; o < g.cout; ++o) {
        const double b = bias.defined() ? bias.data()[o] : 0.0;
        const double* src = res.data() + o * ld + i * cols;
        for (std::size_t p = 0; p < cols; ++p) on[o * cols + p] = src[p] + b;
      }
    }
  }

  if (track) {
    record(op, [x = x, weight = weight, bias = bias, out, g]() mutable {
      if (!out.has_grad()) return;
      const auto rows = g.col_rows();
      const auto cols = g.col_cols();
      const auto in_stride = g.cin * g.h * g.w;
      const auto out_stride = g.cout * cols;
      const auto chunk = conv_chunk(g);
      const double* gd = std::as_const(out).grad().data();
      const bool need_x = x.requires_grad();
      const bool need_w = weight.requires_grad();
      const bool need_b = bias.defined() && bias.requires_grad();
      double* gx = need_x ? x.grad().data() : nullptr;
      double* gw = need_w ? weight.grad().data() : nullptr;
      double* gb = need_b ? bias.grad().data() : nullptr;
      const double* xd = x.data().data();
      const double* wd = weight.data().data();
      std::vector<double> dy(g.cout * cols * chunk);
      std::vector<double> col(need_w ? rows * cols * chunk : 0);
      std::vector<double> dcol(need_x ? rows * cols * chunk : 0);
      for (std::size_t n0 = 0; n0 < g.n; n0 += chunk) {
        const auto nb = std::min(chunk, g.n - n0);
        const auto ld = nb * cols;
        // dy[o, i*cols + p] = grad[n0+i, o, p]
        for (std::size_t i = 0; i < nb; ++i) {
          const double* gn = gd + (n0 + i) * out_stride;
          for (std::size_t o = 0; o < g.cout; ++o)
            std::copy(gn + o * cols, gn + (o + 1) * cols, dy.data() + o * ld + i * cols);
        }
        if (need_b) {
          for (std::size_t o = 0; o < g.cout; ++o) {
            double s = 0.0;
            for (std::size_t q = 0; q < ld; ++q) s += dy[o * ld + q];
            gb[o] += s;
          }
        }
        if (need_w) {
          for (std::size_t i = 0; i < nb; ++i)
            im2col(xd + (n0 + i) * in_stride, g, col.data() + i * cols, ld);
          cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, blas_int(g.cout), blas_int(rows),
                      blas_int(ld), 1.0, dy.data(), blas_int(ld), col.data(), blas_int(ld), 1.0, gw,
                      blas_int(rows));
        }
        if (need_x) {
          cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, blas_int(rows), blas_int(ld),
                      blas_int(g.cout), 1.0, wd, blas_int(rows), dy.data(), blas_int(ld), 0.0,
                      dcol.data(), blas_int(ld));
          for (std::size_t i = 0; i < nb; ++i)
            col2im_acc(dcol.data() + i * cols, g, gx + (n0 + i) * in_stride, ld);
        }
      }
    });
  }
  return out;
}

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   Tensor& running_mean, Tensor& running_var, const BatchNormArgs& args) {
  constexpr const char* op = "batchnorm2d";
  expect_rank(x, 4, op, "input");
  const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  for (const Tensor* t : {&gamma, &beta, static_cast<const Tensor*>(&running_mean), static_cast<const Tensor*>(&running_var)}) {
    expect_rank(*t, 1, op, "parameter");
    expect_dim(t->dim(0), c, op, "parameter length vs input channels (dim 1)");
  }
  check_finite_positive(args.eps, op, "eps");
  const auto count = n * hw;
  require(count > 0, ErrorKind::ShapeMismatch, "batchnorm2d: zero batch*spatial size");

  const bool track = tracking({&x, &gamma, &beta});
  Tensor out = Tensor::zeros(x.shape(), track);
  std::vector<double> mean(c), invstd(c);
  const double* xd = x.data().data();
  double* od = out.data().data();
  auto rm = running_mean.data();
  auto rv = running_var.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (args.training) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = xd + (i * c + ch) * hw;
        for (std::size_t j = 0; j < hw; ++j) s += p[j];
      }
      const double mu = s / static_cast<double>(count);
      double v = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = xd + (i * c + ch) * hw;
        for (std::size_t j = 0; j < hw; ++j) v += (p[j] - mu) * (p[j] - mu);
      }
      const double var = v / static_cast<double>(count);
      mean[ch] = mu;
      invstd[ch] = 1.0 / std::sqrt(var + args.eps);
      const double unbiased = count > 1 ? v / static_cast<double>(count - 1) : var;
      rm[ch] = (1.0 - args.momentum) * rm[ch] + args.momentum * mu;
      rv[ch] = (1.0 - args.momentum) * rv[ch] + args.momentum * unbiased;
    } else {
      require(rv[ch] + args.eps > 0.0, ErrorKind::InvalidArgument,
              "batchnorm2d: running variance plus eps must be positive");
      mean[ch] = rm[ch];
      invstd[ch] = 1.0 / std::sqrt(rv[ch] + args.eps);
    }
  }
  const double* gd = gamma.data().data();
  const double* bd = beta.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = xd + (i * c + ch) * hw;
      double* q = od + (i * c + ch) * hw;
      const double a = gd[ch] * invstd[ch];
      const double m = mean[ch];
      const double b = bd[ch];
      for (std::size_t j = 0; j < hw; ++j) q[j] = a * (p[j] - m) + b;
    }
  }

  if (track) {
    const bool training = args.training;
    record(op, [x = x, gamma = gamma, beta = beta, out, mean, invstd, n, c, hw, count,
                training]() mutable {
      if (!out.has_grad()) return;
      const double* dy = std::as_const(out).grad().data();
      const double* xd = x.data().data();
      const double* gd = gamma.data().data();
      const bool need_x = x.requires_grad();
      double* gx = need_x ? x.grad().data() : nullptr;
      double* gg = gamma.requires_grad() ? gamma.grad().data() : nullptr;
      double* gb = beta.requires_grad() ? beta.grad().data() : nullptr;
      const double cnt = static_cast<double>(count);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double* p = xd + (i * c + ch) * hw;
          const double* d = dy + (i * c + ch) * hw;
          for (std::size_t j = 0; j < hw; ++j) {
            sum_dy += d[j];
            sum_dy_xhat += d[j] * (p[j] - mean[ch]) * invstd[ch];
          }
        }
        if (gg) gg[ch] += sum_dy_xhat;
        if (gb) gb[ch] += sum_dy;
        if (!need_x) continue;
        const double gs = gd[ch] * invstd[ch];
        for (std::size_t i = 0; i < n; ++i) {
          const double* p = xd + (i * c + ch) * hw;
          const double* d = dy + (i * c + ch) * hw;
          double* q = gx + (i * c + ch) * hw;
          if (training) {
            for (std::size_t j = 0; j < hw; ++j) {
              const double xhat = (p[j] - mean[ch]) * invstd[ch];
              q[j] += gs * (d[j] - sum_dy / cnt - xhat * sum_dy_xhat / cnt);
            }
          } else {
            for (std::size_t j = 0; j < hw; ++j) q[j] += gs * d[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  require(x.defined(), ErrorKind::InvalidArgument, "relu: input is undefined");
  const bool track = tracking({&x});
  Tensor out = Tensor::zeros(x.shape(), track);
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t i = 0; i < xd.size(); ++i) od[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  if (track) {
    record("relu", [x = x, out]() mutable {
      if (!out.has_grad()) return;
      auto dy = std::as_const(out).grad();
      auto xd = x.data();
      auto gx = x.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) {
        if (xd[i] > 0.0) gx[i] += dy[i];
      }
    });
  }
  return out;
}

Tensor masked_relu(const Tensor& x, const Tensor& mask) {
  constexpr const char* op = "masked_relu";
  expect_rank(x, 4, op, "input");
  expect_rank(mask, 3, op, "mask");
  for (std::size_t a = 0; a < 3; ++a) {
    expect_dim(mask.dim(a), x.dim(a + 1),
               op, "mask dim " + std::to_string(a) + " vs input dim " + std::to_string(a + 1));
  }
  auto md = mask.data();
  for (double m : md) {
    require(m == 0.0 || m == 1.0, ErrorKind::InvalidArgument,
            "masked_relu: mask entries must be 0 or 1");
  }
  const bool track = tracking({&x, &mask});
  Tensor out = Tensor::zeros(x.shape(), track);
  const auto n = x.dim(0);
  const auto per = mask.numel();
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < per; ++j) {
      const double v = xd[i * per + j];
      od[i * per + j] = (md[j] != 0.0 && v < 0.0) ? 0.0 : v;
    }
  }
  if (track) {
    record(op, [x = x, mask = mask, out, n, per]() mutable {
      if (!out.has_grad()) return;
      auto dy = std::as_const(out).grad();
      auto xd = x.data();
      auto md = mask.data();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < per; ++j) {
            const auto idx = i * per + j;
            if (md[j] == 0.0 || xd[idx] > 0.0) gx[idx] += dy[idx];
          }
        }
      }
      if (mask.requires_grad()) {
        auto gm = mask.grad();
        for (std::size_t j = 0; j < per; ++j) {
          double s = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const double v = xd[i * per + j];
            if (v < 0.0) s += dy[i * per + j] * (-v);
          }
          gm[j] += s;
        }
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  constexpr const char* op = "linear";
  expect_rank(x, 2, op, "input");
  expect_rank(weight, 2, op, "weight");
  const auto n = x.dim(0), f = x.dim(1), o = weight.dim(0);
  expect_dim(weight.dim(1), f, op, "weight in-features (dim 1)");
  if (bias.defined()) {
    expect_rank(bias, 1, op, "bias");
    expect_dim(bias.dim(0), o, op, "bias length (dim 0)");
  }
  const bool track = tracking({&x, &weight, &bias});
  Tensor out = Tensor::zeros({n, o}, track);
  const double* xd = x.data().data();
  const double* wd = weight.data().data();
  double* od = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < o; ++j) {
      double s = bias.defined() ? bias.data()[j] : 0.0;
      for (std::size_t q = 0; q < f; ++q) s += xd[i * f + q] * wd[j * f + q];
      od[i * o + j] = s;
    }
  }
  if (track) {
    record(op, [x = x, weight = weight, bias = bias, out, n, f, o]() mutable {
      if (!out.has_grad()) return;
      const double* dy = std::as_const(out).grad().data();
      const double* xd = x.data().data();
      const double* wd = weight.data().data();
      if (x.requires_grad()) {
        double* gx = x.grad().data();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < o; ++j)
            for (std::size_t q = 0; q < f; ++q) gx[i * f + q] += dy[i * o + j] * wd[j * f + q];
      }
      if (weight.requires_grad()) {
        double* gw = weight.grad().data();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < o; ++j)
            for (std::size_t q = 0; q < f; ++q) gw[j * f + q] += dy[i * o + j] * xd[i * f + q];
      }
      if (bias.defined() && bias.requires_grad()) {
        double* gb = bias.grad().data();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < o; ++j) gb[j] += dy[i * o + j];
      }
    });
  }
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  expect_rank(x, 4, "global_avg_pool", "input");
  const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const bool track = tracking({&x});
  Tensor out = Tensor::zeros({n, c}, track);
  auto xd = x.data();
  auto od = out.data();
  const double inv = 1.0 / static_cast<double>(hw);
  for (std::size_t i = 0; i < n * c; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < hw; ++j) s += xd[i * hw + j];
    od[i] = s * inv;
  }
  if (track) {
    record("global_avg_pool", [x = x, out, n, c, hw, inv]() mutable {
      if (!out.has_grad()) return;
      auto dy = std::as_const(out).grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < n * c; ++i)
        for (std::size_t j = 0; j < hw; ++j) gx[i * hw + j] += dy[i] * inv;
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.defined() && b.defined() && a.shape() == b.shape(), ErrorKind::ShapeMismatch,
          "add: operand shapes differ");
  const bool track = tracking({&a, &b});
  Tensor out = Tensor::zeros(a.shape(), track);
  auto ad = a.data();
  auto bd = b.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
  if (track) {
    record("add", [a = a, b = b, out]() mutable {
      if (!out.has_grad()) return;
      auto dy = std::as_const(out).grad();
      for (Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto g = t->grad();
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  require(a.defined(), ErrorKind::InvalidArgument, "scale: operand is undefined");
  const bool track = tracking({&a});
  Tensor out = Tensor::zeros(a.shape(), track);
  auto ad = a.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = factor * ad[i];
  if (track) {
    record("scale", [a = a, out, factor]() mutable {
      if (!out.has_grad()) return;
      auto dy = std::as_const(out).grad();
      auto g = a.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) g[i] += factor * dy[i];
    });
  }
  return out;
}

Tensor gate_mix(const Tensor& a, const Tensor& b, double gamma) {
  require(a.defined() && b.defined() && a.shape() == b.shape(), ErrorKind::ShapeMismatch,
          "gate_mix: branch shapes differ");
  require(gamma >= 0.0 && gamma <= 1.0, ErrorKind::OutOfRange,
          "gate_mix: gate must lie in [0,1]");
  const bool track = tracking({&a, &b});
  Tensor out = Tensor::zeros(a.shape(), track);
  auto ad = a.data();
  auto bd = b.data();
  auto od = out.data();
  const double rest = 1.0 - gamma;
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = gamma * ad[i] + rest * bd[i];
  if (track) {
    record("gate_mix", [a = a, b = b, out, gamma, rest]() mutable {
      if (!out.has_grad()) return;
      auto dy = std::as_const(out).grad();
      if (a.requires_grad()) {
        auto g = a.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += gamma * dy[i];
      }
      if (b.requires_grad()) {
        auto g = b.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += rest * dy[i];
      }
    });
  }
  return out;
}

Tensor sum_scalars(std::span<const Tensor> terms) {
  require(!terms.empty(), ErrorKind::InvalidArgument, "sum_scalars: no terms");
  bool track = false;
  double s = 0.0;
  for (const auto& t : terms) {
    require(t.defined() && t.numel() == 1, ErrorKind::ShapeMismatch,
            "sum_scalars: every term must be a single value");
    track = track || tracking({&t});
    s += t.item();
  }
  Tensor out = Tensor::scalar(s, track);
  if (track) {
    std::vector<Tensor> held(terms.begin(), terms.end());
    record("sum_scalars", [held = std::move(held), out]() mutable {
      if (!out.has_grad()) return;
      const double dy = std::as_const(out).grad()[0];
      for (auto& t : held) {
        if (t.requires_grad()) t.grad()[0] += dy;
      }
    });
  }
  return out;
}

Tensor softmax_t(const Tensor& z, double rho) {
  expect_rank(z, 2, "softmax_t", "logits");
  require(rho > 0.0 && std::isfinite(rho), ErrorKind::InvalidArgument,
          "softmax_t: temperature must be positive");
  const auto n = z.dim(0), k = z.dim(1);
  const bool track = tracking({&z});
  Tensor out = Tensor::zeros(z.shape(), track);
  auto zd = z.data();
  auto od = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = zd.data() + i * k;
    double* y = od.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      y[j] = std::exp((row[j] - mx) / rho);
      s += y[j];
    }
    for (std::size_t j = 0; j < k; ++j) y[j] /= s;
  }
  if (track) {
    record("softmax_t", [z = z, out, n, k, rho]() mutable {
      if (!out.has_grad()) return;
      auto dy = std::as_const(out).grad();
      auto y = out.data();
      auto gz = z.grad();
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += dy[i * k + j] * y[i * k + j];
        for (std::size_t j = 0; j < k; ++j)
          gz[i * k + j] += y[i * k + j] * (dy[i * k + j] - dot) / rho;
      }
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  expect_rank(logits, 2, "cross_entropy", "logits");
  const auto n = logits.dim(0), k = logits.dim(1);
  expect_dim(labels.size(), n, "cross_entropy", "label count vs batch (dim 0)");
  for (int y : labels) {
    require(y >= 0 && static_cast<std::size_t>(y) < k, ErrorKind::OutOfRange,
            "cross_entropy: label " + std::to_string(y) + " outside [0," + std::to_string(k) + ")");
  }
  const bool track = tracking({&logits});
  auto zd = logits.data();
  std::vector<double> prob(n * k);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = zd.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      prob[i * k + j] = std::exp(row[j] - mx);
      s += prob[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) prob[i * k + j] /= s;
    const double lse = mx + std::log(s);
    total += lse - row[static_cast<std::size_t>(labels[i])];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(n), track);
  if (track) {
    std::vector<int> held(labels.begin(), labels.end());
    record("cross_entropy", [logits = logits, out, prob = std::move(prob), held = std::move(held),
                             n, k]() mutable {
      if (!out.has_grad()) return;
      const double dy = std::as_const(out).grad()[0] / static_cast<double>(n);
      auto gz = logits.grad();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          const double onehot = static_cast<std::size_t>(held[i]) == j ? 1.0 : 0.0;
          gz[i * k + j] += dy * (prob[i * k + j] - onehot);
        }
      }
    });
  }
  return out;
}

constexpr double kTinyProb = std::numeric_limits<double>::min();

Tensor kl_div(const Tensor& p_teacher, const Tensor& p_student) {
  expect_rank(p_teacher, 2, "kl_div", "teacher distribution");
  expect_rank(p_student, 2, "kl_div", "student distribution");
  require(p_teacher.shape() == p_student.shape(), ErrorKind::ShapeMismatch,
          "kl_div: distribution shapes differ: " + shape_str(p_teacher.shape()) + " vs " +
              shape_str(p_student.shape()));
  const auto n = p_teacher.dim(0), k = p_teacher.dim(1);
  auto pd = p_teacher.data();
  auto qd = p_student.data();
  for (const auto* d : {&pd, &qd}) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        const double v = (*d)[i * k + j];
        require(v >= 0.0 && std::isfinite(v), ErrorKind::InvalidArgument,
                "kl_div: probabilities must be finite and non-negative");
        s += v;
      }
      require(std::abs(s - 1.0) <= 1e-6, ErrorKind::InvalidArgument,
              "kl_div: row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n * k; ++i) {
    if (pd[i] > 0.0) total += pd[i] * (std::log(pd[i]) - std::log(std::max(qd[i], kTinyProb)));
  }
  const bool track = tracking({&p_student});
  Tensor out = Tensor::scalar(total / static_cast<double>(n), track);
  if (track) {
    record("kl_div",
           [p_teacher = p_teacher, p_student = p_student, out, n]() mutable {
      if (!out.has_grad()) return;
      const double dy = std::as_const(out).grad()[0] / static_cast<double>(n);
      auto pd = p_teacher.data();
      auto qd = p_student.data();
      auto gq = p_student.grad();
      for (std::size_t i = 0; i < gq.size(); ++i) {
        if (pd[i] > 0.0) gq[i] -= dy * pd[i] / std::max(qd[i], kTinyProb);
      }
    });
  }
  return out;
}

Tensor pram_loss(std::span<const Tensor> taps_student, std::span<const Tensor> taps_teacher,
                 double beta) {
  require(taps_student.size() == taps_teacher.size(), ErrorKind::ShapeMismatch,
          "pram_loss: " + std::to_string(taps_student.size()) + " student taps vs " +
              std::to_string(taps_teacher.size()) + " teacher taps");
  require(beta >= 0.0 && std::isfinite(beta), ErrorKind::InvalidArgument,
          "pram_loss: beta must be non-negative");

  struct PairCache {
    std::size_t samples, width;
    std::vector<double> diff_unit;  // (u - v) / |u - v| per sample, zero when equal
    std::vector<double> norm;       // |a| per sample
  };
  std::vector<PairCache> caches;
  caches.reserve(taps_student.size());
  bool track = false;
  double total = 0.0;
  for (std::size_t m = 0; m < taps_student.size(); ++m) {
    const auto& a = taps_student[m];
    const auto& b = taps_teacher[m];
    require(a.defined() && b.defined() && a.shape() == b.shape(), ErrorKind::ShapeMismatch,
            "pram_loss: tap pair " + std::to_string(m) + " has mismatched shapes");
    track = track || tracking({&a});
    PairCache pc;
    pc.samples = a.rank() >= 2 ? a.dim(0) : 1;
    pc.width = a.numel() / pc.samples;
    pc.diff_unit.assign(a.numel(), 0.0);
    pc.norm.assign(pc.samples, 0.0);
    auto ad = a.data();
    auto bd = b.data();
    double pair_sum = 0.0;
    for (std::size_t s = 0; s < pc.samples; ++s) {
      const double* av = ad.data() + s * pc.width;
      const double* bv = bd.data() + s * pc.width;
      double na = 0.0, nb = 0.0;
      for (std::size_t j = 0; j < pc.width; ++j) {
        na += av[j] * av[j];
        nb += bv[j] * bv[j];
      }
      na = std::sqrt(na);
      nb = std::sqrt(nb);
      pc.norm[s] = na;
      double* du = pc.diff_unit.data() + s * pc.width;
      double dist = 0.0;
      for (std::size_t j = 0; j < pc.width; ++j) {
        du[j] = av[j] / (na + kPramNormEps) - bv[j] / (nb + kPramNormEps);
        dist += du[j] * du[j];
      }
      dist = std::sqrt(dist);
      if (dist > 0.0) {
        for (std::size_t j = 0; j < pc.width; ++j) du[j] /= dist;
      }
      pair_sum += dist;
    }
    total += pair_sum / static_cast<double>(pc.samples);
    caches.push_back(std::move(pc));
  }
  Tensor out = Tensor::scalar(0.5 * beta * total, track);
  if (track) {
    std::vector<Tensor> held(taps_student.begin(), taps_student.end());
    record("pram_loss", [held = std::move(held), out, caches = std::move(caches), beta]() mutable {
      if (!out.has_grad()) return;
      const double dy = std::as_const(out).grad()[0] * 0.5 * beta;
      for (std::size_t m = 0; m < held.size(); ++m) {
        auto& a = held[m];
        if (!a.requires_grad()) continue;
        const auto& pc = caches[m];
        auto ad = a.data();
        auto ga = a.grad();
        const double per = dy / static_cast<double>(pc.samples);
        for (std::size_t s = 0; s < pc.samples; ++s) {
          const double* av = ad.data() + s * pc.width;
          const double* du = pc.diff_unit.data() + s * pc.width;
          double* g = ga.data() + s * pc.width;
          const double na = pc.norm[s];
          const double denom = na + kPramNormEps;
          double dot = 0.0;
          for (std::size_t j = 0; j < pc.width; ++j) dot += av[j] * du[j];
          const double radial = na > 0.0 ? dot / (na * denom * denom) : 0.0;
          for (std::size_t j = 0; j < pc.width; ++j)
            g[j] += per * (du[j] / denom - av[j] * radial);
        }
      }
    });
  }
  return out;
}

}  // namespace shallowpi

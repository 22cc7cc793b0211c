#include "reprompt/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace reprompt::ops {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void softmax_inplace(double* p, std::size_t n) {
  double m = p[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, p[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = std::exp(p[i] - m);
    sum += p[i];
  }
  for (std::size_t i = 0; i < n; ++i) p[i] /= sum;
}
}  // namespace

Tensor softmax(const Tensor& v) {
  if (v.size() == 0) throw std::invalid_argument("softmax: empty input");
  v.ensure_finite("softmax input");
  Tensor out = v;
  if (v.rank() <= 1) {
    softmax_inplace(out.data(), out.size());
  } else if (v.rank() == 2) {
    std::size_t rows = v.extent(0), cols = v.extent(1);
    for (std::size_t r = 0; r < rows; ++r) softmax_inplace(out.data() + r * cols, cols);
  } else {
    throw std::invalid_argument("softmax: rank > 2 unsupported");
  }
  return out;
}

double norm(const Tensor& v) {
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * v[i];
  return std::sqrt(s);
}

Tensor l2_normalize(const Tensor& v) {
  if (v.size() == 0) throw std::invalid_argument("l2_normalize: empty input");
  v.ensure_finite("l2_normalize input");
  double n = norm(v);
  if (n <= 1e-12) throw std::invalid_argument("l2_normalize: degenerate near-zero input");
  Tensor out = v;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= n;
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  std::size_t d = x.rank() == 2 ? x.extent(0) : x.size();
  std::size_t tokens = x.rank() == 2 ? x.extent(1) : 1;
  if (gain.size() != d || bias.size() != d) {
    throw std::invalid_argument("layer_norm: gain/bias length must equal feature dimension");
  }
  Tensor out = x;
  for (std::size_t t = 0; t < tokens; ++t) {
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += x[i * tokens + t];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double c = x[i * tokens + t] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) {
      out[i * tokens + t] = gain[i] * (x[i * tokens + t] - mean) * inv + bias[i];
    }
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t padding) {
  if (x.rank() != 3 || kernel.rank() != 4) {
    throw std::invalid_argument("conv2d: input must be C_in x H x W, kernel C_out x C_in x kh x kw");
  }
  std::size_t ci = x.extent(0), h = x.extent(1), w = x.extent(2);
  std::size_t co = kernel.extent(0), kci = kernel.extent(1), kh = kernel.extent(2), kw = kernel.extent(3);
  if (kci != ci) throw std::invalid_argument("conv2d: channel mismatch");
  std::size_t oh = h + 2 * padding + 1, ow = w + 2 * padding + 1;
  if (oh <= kh || ow <= kw) throw std::invalid_argument("conv2d: kernel larger than padded input");
  oh -= kh;
  ow -= kw;

  Tensor out({co, oh, ow});
  const long p = static_cast<long>(padding);
  for (std::size_t o = 0; o < co; ++o) {
    for (std::size_t c = 0; c < ci; ++c) {
      const double* kslice = kernel.data() + ((o * ci + c) * kh) * kw;
      const double* xslice = x.data() + c * h * w;
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double acc = 0.0;
          for (std::size_t ky = 0; ky < kh; ++ky) {
            long iy = static_cast<long>(y + ky) - p;
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              long ix = static_cast<long>(xx + kx) - p;
              if (ix < 0 || ix >= static_cast<long>(w)) continue;
              acc += kslice[ky * kw + kx] * xslice[iy * static_cast<long>(w) + ix];
            }
          }
          out[(o * oh + y) * ow + xx] += acc;
        }
      }
    }
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2) throw std::invalid_argument("matmul: lhs must be rank 2");
  std::size_t m = a.extent(0), k = a.extent(1);
  if (b.rank() == 1) {
    if (b.size() != k) throw std::invalid_argument("matmul: dimension mismatch");
    Tensor out({m});
    CMapMat ma(a.data(), m, k);
    Eigen::Map<const Eigen::VectorXd> vb(b.data(), k);
    Eigen::Map<Eigen::VectorXd> vo(out.data(), m);
    vo.noalias() = ma * vb;
    return out;
  }
  if (b.rank() != 2 || b.extent(0) != k) throw std::invalid_argument("matmul: dimension mismatch");
  std::size_t n = b.extent(1);
  Tensor out({m, n});
  CMapMat ma(a.data(), m, k), mb(b.data(), k, n);
  MapMat mo(out.data(), m, n);
  mo.noalias() = ma * mb;
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose: rank 2 required");
  std::size_t m = a.extent(0), n = a.extent(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

double dot(const double* a, const double* b, std::size_t n) {
  Eigen::Map<const Eigen::VectorXd> va(a, n), vb(b, n);
  return va.dot(vb);
}

}  // namespace reprompt::ops

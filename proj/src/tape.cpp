#include "reprompt/tape.hpp"

#include <Eigen/Core>

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "reprompt/ops.hpp"

namespace reprompt {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using CMapVec = Eigen::Map<const Eigen::VectorXd>;

std::pair<std::size_t, std::size_t> as_matrix(const Tensor& t) {
  if (t.rank() == 1) return {t.size(), 1};
  if (t.rank() == 2) return {t.extent(0), t.extent(1)};
  throw std::invalid_argument("expected rank 1 or 2 tensor, got " + t.shape_str());
}

double gelu_derivative(double x) {
  double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}
}  // namespace

Tape::NodeId Tape::push(Node n) {
  if (!n.needs_grad) {
    for (std::uint8_t i = 0; i < n.n_in; ++i) n.needs_grad |= nodes_[n.in[i]].needs_grad;
    for (NodeId id : n.many) n.needs_grad |= nodes_[id].needs_grad;
  }
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Tape::clear() { nodes_.clear(); }

Tape::NodeId Tape::constant(Tensor value) {
  Node n;
  n.op = Op::kConstant;
  n.value = std::move(value);
  return push(std::move(n));
}

Tape::NodeId Tape::constant_view(const Tensor& frozen) {
  Node n;
  n.op = Op::kConstant;
  n.view = &frozen;
  return push(std::move(n));
}

Tape::NodeId Tape::leaf(Tensor& learnable) {
  if (!learnable.requires_grad()) {
    throw std::invalid_argument("leaf() requires a tensor with requires_grad");
  }
  Node n;
  n.op = Op::kLeaf;
  n.view = &learnable;
  n.external = &learnable;
  n.needs_grad = true;
  return push(std::move(n));
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (!va.same_shape(vb)) throw std::invalid_argument("add: shape mismatch");
  Node n;
  n.op = Op::kAdd;
  n.n_in = 2;
  n.in = {a, b, 0};
  n.value = va;
  CMapVec mb(vb.data(), vb.size());
  MapVec mo(n.value.data(), n.value.size());
  mo += mb;
  return push(std::move(n));
}

Tape::NodeId Tape::scale(NodeId a, double s) {
  Node n;
  n.op = Op::kScale;
  n.n_in = 1;
  n.in = {a, 0, 0};
  n.a = s;
  n.value = value(a);
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] *= s;
  return push(std::move(n));
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
  Node n;
  n.op = Op::kMatmul;
  n.n_in = 2;
  n.in = {a, b, 0};
  n.value = ops::matmul(value(a), value(b));
  return push(std::move(n));
}

Tape::NodeId Tape::transpose(NodeId a) {
  Node n;
  n.op = Op::kTranspose;
  n.n_in = 1;
  n.in = {a, 0, 0};
  n.value = ops::transpose(value(a));
  return push(std::move(n));
}

Tape::NodeId Tape::add_col_broadcast(NodeId x, NodeId bias) {
  const Tensor& vx = value(x);
  const Tensor& vb = value(bias);
  auto [rows, cols] = as_matrix(vx);
  if (vb.size() != rows) throw std::invalid_argument("add_col_broadcast: bias length mismatch");
  Node n;
  n.op = Op::kAddColBroadcast;
  n.n_in = 2;
  n.in = {x, bias, 0};
  n.value = vx;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) n.value[r * cols + c] += vb[r];
  return push(std::move(n));
}

Tape::NodeId Tape::slice_cols(NodeId x, std::size_t c0, std::size_t c1) {
  const Tensor& vx = value(x);
  auto [rows, cols] = as_matrix(vx);
  if (c0 >= c1 || c1 > cols) throw std::invalid_argument("slice_cols: range out of bounds");
  Node n;
  n.op = Op::kSliceCols;
  n.n_in = 1;
  n.in = {x, 0, 0};
  n.p0 = c0;
  n.p1 = c1;
  n.value = Tensor({rows, c1 - c0});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = c0; c < c1; ++c) n.value[r * (c1 - c0) + (c - c0)] = vx[r * cols + c];
  return push(std::move(n));
}

Tape::NodeId Tape::concat_cols(std::span<const NodeId> xs) {
  if (xs.empty()) throw std::invalid_argument("concat_cols: empty input");
  std::size_t rows = as_matrix(value(xs[0])).first;
  std::size_t total = 0;
  for (NodeId id : xs) {
    auto [r, c] = as_matrix(value(id));
    if (r != rows) throw std::invalid_argument("concat_cols: row mismatch");
    total += c;
  }
  Node n;
  n.op = Op::kConcatCols;
  n.many.assign(xs.begin(), xs.end());
  n.value = Tensor({rows, total});
  std::size_t off = 0;
  for (NodeId id : xs) {
    const Tensor& v = value(id);
    auto [r, c] = as_matrix(v);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) n.value[i * total + off + j] = v[i * c + j];
    off += c;
  }
  return push(std::move(n));
}

Tape::NodeId Tape::slice_rows(NodeId x, std::size_t r0, std::size_t r1) {
  const Tensor& vx = value(x);
  auto [rows, cols] = as_matrix(vx);
  if (r0 >= r1 || r1 > rows) throw std::invalid_argument("slice_rows: range out of bounds");
  Node n;
  n.op = Op::kSliceRows;
  n.n_in = 1;
  n.in = {x, 0, 0};
  n.p0 = r0;
  n.p1 = r1;
  n.value = Tensor({r1 - r0, cols});
  std::copy(vx.data() + r0 * cols, vx.data() + r1 * cols, n.value.data());
  return push(std::move(n));
}

Tape::NodeId Tape::concat_rows(std::span<const NodeId> xs) {
  if (xs.empty()) throw std::invalid_argument("concat_rows: empty input");
  std::size_t cols = as_matrix(value(xs[0])).second;
  std::size_t total = 0;
  for (NodeId id : xs) {
    auto [r, c] = as_matrix(value(id));
    if (c != cols) throw std::invalid_argument("concat_rows: column mismatch");
    total += r;
  }
  Node n;
  n.op = Op::kConcatRows;
  n.many.assign(xs.begin(), xs.end());
  n.value = Tensor({total, cols});
  double* out = n.value.data();
  for (NodeId id : xs) {
    const Tensor& v = value(id);
    std::copy(v.data(), v.data() + v.size(), out);
    out += v.size();
  }
  return push(std::move(n));
}

Tape::NodeId Tape::gather_rows(NodeId x, std::vector<std::size_t> rows) {
  const Tensor& vx = value(x);
  auto [r, cols] = as_matrix(vx);
  for (std::size_t i : rows)
    if (i >= r) throw std::invalid_argument("gather_rows: index out of range");
  Node n;
  n.op = Op::kGatherRows;
  n.n_in = 1;
  n.in = {x, 0, 0};
  n.value = Tensor({rows.size(), cols});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(vx.data() + rows[i] * cols, vx.data() + (rows[i] + 1) * cols, n.value.data() + i * cols);
  n.rows = std::move(rows);
  return push(std::move(n));
}

Tape::NodeId Tape::softmax_rows(NodeId x) {
  Node n;
  n.op = Op::kSoftmaxRows;
  n.n_in = 1;
  n.in = {x, 0, 0};
  n.value = ops::softmax(value(x));
  return push(std::move(n));
}

Tape::NodeId Tape::layer_norm(NodeId x, NodeId gain, NodeId bias, double eps) {
  const Tensor& vx = value(x);
  const Tensor& vg = value(gain);
  const Tensor& vb = value(bias);
  auto [d, tokens] = as_matrix(vx);
  if (vg.size() != d || vb.size() != d) {
    throw std::invalid_argument("layer_norm: gain/bias length must equal feature dimension");
  }
  Node n;
  n.op = Op::kLayerNorm;
  n.n_in = 3;
  n.in = {x, gain, bias};
  n.a = eps;
  n.value = vx;
  n.aux = Tensor(vx.shape());          // x-hat
  n.aux2 = Tensor({tokens});           // inverse stddev per token
  for (std::size_t t = 0; t < tokens; ++t) {
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += vx[i * tokens + t];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double c = vx[i * tokens + t] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double inv = 1.0 / std::sqrt(var + eps);
    n.aux2[t] = inv;
    for (std::size_t i = 0; i < d; ++i) {
      double xh = (vx[i * tokens + t] - mean) * inv;
      n.aux[i * tokens + t] = xh;
      n.value[i * tokens + t] = vg[i] * xh + vb[i];
    }
  }
  return push(std::move(n));
}

Tape::NodeId Tape::gelu(NodeId x) {
  Node n;
  n.op = Op::kGelu;
  n.n_in = 1;
  n.in = {x, 0, 0};
  n.value = value(x);
  for (std::size_t i = 0; i < n.value.size(); ++i) {
    double v = n.value[i];
    double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
    n.value[i] = v * cdf;
  }
  return push(std::move(n));
}

Tape::NodeId Tape::l2_normalize(NodeId x) {
  const Tensor& vx = value(x);
  double norm = ops::norm(vx);
  if (norm <= 1e-12) throw std::invalid_argument("l2_normalize: degenerate near-zero input");
  Node n;
  n.op = Op::kL2Normalize;
  n.n_in = 1;
  n.in = {x, 0, 0};
  n.a = norm;
  n.value = vx;
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] /= norm;
  return push(std::move(n));
}

Tape::NodeId Tape::conv2d(NodeId x, NodeId kernel, std::size_t padding) {
  Node n;
  n.op = Op::kConv2d;
  n.n_in = 2;
  n.in = {x, kernel, 0};
  n.p0 = padding;
  n.value = ops::conv2d(value(x), value(kernel), padding);
  return push(std::move(n));
}

Tape::NodeId Tape::reshape(NodeId x, std::vector<std::size_t> shape) {
  const Tensor& vx = value(x);
  Tensor out(std::move(shape), vx.values());
  Node n;
  n.op = Op::kReshape;
  n.n_in = 1;
  n.in = {x, 0, 0};
  n.value = std::move(out);
  return push(std::move(n));
}

Tape::NodeId Tape::pick(NodeId v, std::size_t index) {
  const Tensor& vv = value(v);
  if (index >= vv.size()) throw std::invalid_argument("pick: index out of range");
  Node n;
  n.op = Op::kPick;
  n.n_in = 1;
  n.in = {v, 0, 0};
  n.p0 = index;
  n.value = Tensor::scalar(vv[index]);
  return push(std::move(n));
}

Tape::NodeId Tape::neg_log(NodeId x, double floor) {
  const Tensor& vx = value(x);
  if (vx.size() != 1) throw std::invalid_argument("neg_log: scalar input required");
  Node n;
  n.op = Op::kNegLog;
  n.n_in = 1;
  n.in = {x, 0, 0};
  n.a = floor;
  n.value = Tensor::scalar(-std::log(std::max(vx[0], floor)));
  return push(std::move(n));
}

Tensor& Tape::grad_buffer(std::vector<Tensor>& grads, NodeId id) {
  if (grads[id].size() == 0) grads[id] = Tensor(value(id).shape());
  return grads[id];
}

void Tape::backward(NodeId loss) {
  if (loss >= nodes_.size()) throw std::invalid_argument("backward: unknown node");
  const Tensor& lv = value(loss);
  if (lv.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
  backward_seeded(loss, Tensor(lv.shape(), {1.0}));
}

void Tape::backward_seeded(NodeId loss, const Tensor& seed) {
  if (loss >= nodes_.size()) throw std::invalid_argument("backward: unknown node");
  const Tensor& lv = value(loss);
  if (!lv.same_shape(seed)) throw std::invalid_argument("backward: seed shape mismatch");
  lv.ensure_finite("loss");
  seed.ensure_finite("backward seed");

  std::vector<Tensor> grads(nodes_.size());
  if (!nodes_[loss].needs_grad) return;  // loss does not depend on any leaf
  grads[loss] = seed;

  for (std::size_t i = loss + 1; i-- > 0;) {
    Node& n = nodes_[i];
    Tensor& g = grads[i];
    if (g.size() == 0) continue;

    switch (n.op) {
      case Op::kConstant:
        break;
      case Op::kLeaf: {
        std::vector<double>& acc = n.external->grad();
        for (std::size_t k = 0; k < g.size(); ++k) acc[k] += g[k];
        break;
      }
      case Op::kAdd: {
        for (int s = 0; s < 2; ++s) {
          if (!wants(n.in[s])) continue;
          Tensor& gi = grad_buffer(grads, n.in[s]);
          MapVec mi(gi.data(), gi.size());
          mi += CMapVec(g.data(), g.size());
        }
        break;
      }
      case Op::kScale: {
        if (!wants(n.in[0])) break;
        Tensor& gi = grad_buffer(grads, n.in[0]);
        for (std::size_t k = 0; k < g.size(); ++k) gi[k] += n.a * g[k];
        break;
      }
      case Op::kMatmul: {
        const Tensor& va = in_value(n, 0);
        const Tensor& vb = in_value(n, 1);
        std::size_t m = va.extent(0), kdim = va.extent(1);
        std::size_t ncols = vb.rank() == 1 ? 1 : vb.extent(1);
        CMapMat ma(va.data(), m, kdim), mb(vb.data(), kdim, ncols), mg(g.data(), m, ncols);
        if (wants(n.in[0])) {
          Tensor& ga = grad_buffer(grads, n.in[0]);
          MapMat mga(ga.data(), m, kdim);
          mga.noalias() += mg * mb.transpose();
        }
        if (wants(n.in[1])) {
          Tensor& gb = grad_buffer(grads, n.in[1]);
          MapMat mgb(gb.data(), kdim, ncols);
          mgb.noalias() += ma.transpose() * mg;
        }
        break;
      }
      case Op::kTranspose: {
        if (!wants(n.in[0])) break;
        std::size_t r = n.value.extent(0), c = n.value.extent(1);
        Tensor& gi = grad_buffer(grads, n.in[0]);
        for (std::size_t a = 0; a < r; ++a)
          for (std::size_t b = 0; b < c; ++b) gi[b * r + a] += g[a * c + b];
        break;
      }
      case Op::kAddColBroadcast: {
        auto [rows, cols] = as_matrix(n.value);
        if (wants(n.in[0])) {
          Tensor& gx = grad_buffer(grads, n.in[0]);
          MapVec mx(gx.data(), gx.size());
          mx += CMapVec(g.data(), g.size());
        }
        if (wants(n.in[1])) {
          Tensor& gbias = grad_buffer(grads, n.in[1]);
          for (std::size_t r = 0; r < rows; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < cols; ++c) s += g[r * cols + c];
            gbias[r] += s;
          }
        }
        break;
      }
      case Op::kSliceCols: {
        if (!wants(n.in[0])) break;
        const Tensor& vx = in_value(n, 0);
        auto [rows, cols] = as_matrix(vx);
        std::size_t w = n.p1 - n.p0;
        Tensor& gi = grad_buffer(grads, n.in[0]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < w; ++c) gi[r * cols + n.p0 + c] += g[r * w + c];
        break;
      }
      case Op::kConcatCols: {
        std::size_t total = as_matrix(n.value).second;
        std::size_t off = 0;
        for (NodeId id : n.many) {
          auto [r, c] = as_matrix(value(id));
          if (wants(id)) {
            Tensor& gi = grad_buffer(grads, id);
            for (std::size_t a = 0; a < r; ++a)
              for (std::size_t b = 0; b < c; ++b) gi[a * c + b] += g[a * total + off + b];
          }
          off += c;
        }
        break;
      }
      case Op::kSliceRows: {
        if (!wants(n.in[0])) break;
        std::size_t cols = as_matrix(in_value(n, 0)).second;
        Tensor& gi = grad_buffer(grads, n.in[0]);
        for (std::size_t k = 0; k < g.size(); ++k) gi[n.p0 * cols + k] += g[k];
        break;
      }
      case Op::kConcatRows: {
        std::size_t off = 0;
        for (NodeId id : n.many) {
          std::size_t len = value(id).size();
          if (wants(id)) {
            Tensor& gi = grad_buffer(grads, id);
            for (std::size_t k = 0; k < len; ++k) gi[k] += g[off + k];
          }
          off += len;
        }
        break;
      }
      case Op::kGatherRows: {
        if (!wants(n.in[0])) break;
        std::size_t cols = as_matrix(in_value(n, 0)).second;
        Tensor& gi = grad_buffer(grads, n.in[0]);
        for (std::size_t i2 = 0; i2 < n.rows.size(); ++i2)
          for (std::size_t c = 0; c < cols; ++c) gi[n.rows[i2] * cols + c] += g[i2 * cols + c];
        break;
      }
      case Op::kSoftmaxRows: {
        if (!wants(n.in[0])) break;
        // A rank-1 value is a single softmax row, matching the forward.
        std::size_t rows = n.value.rank() == 1 ? 1 : n.value.extent(0);
        std::size_t cols = n.value.rank() == 1 ? n.value.size() : n.value.extent(1);
        Tensor& gi = grad_buffer(grads, n.in[0]);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* p = n.value.data() + r * cols;
          const double* dp = g.data() + r * cols;
          double s = ops::dot(p, dp, cols);
          for (std::size_t c = 0; c < cols; ++c) gi[r * cols + c] += p[c] * (dp[c] - s);
        }
        break;
      }
      case Op::kLayerNorm: {
        auto [d, tokens] = as_matrix(n.value);
        const Tensor& vg = in_value(n, 1);
        bool want_x = wants(n.in[0]);
        bool want_gain = wants(n.in[1]);
        bool want_bias = wants(n.in[2]);
        for (std::size_t t = 0; t < tokens; ++t) {
          double inv = n.aux2[t];
          double mw = 0.0, mwx = 0.0;
          for (std::size_t i2 = 0; i2 < d; ++i2) {
            double dy = g[i2 * tokens + t];
            double xh = n.aux[i2 * tokens + t];
            if (want_gain) grad_buffer(grads, n.in[1])[i2] += dy * xh;
            if (want_bias) grad_buffer(grads, n.in[2])[i2] += dy;
            double w = vg[i2] * dy;
            mw += w;
            mwx += w * xh;
          }
          if (!want_x) continue;
          mw /= static_cast<double>(d);
          mwx /= static_cast<double>(d);
          Tensor& gx = grad_buffer(grads, n.in[0]);
          for (std::size_t i2 = 0; i2 < d; ++i2) {
            double w = vg[i2] * g[i2 * tokens + t];
            double xh = n.aux[i2 * tokens + t];
            gx[i2 * tokens + t] += inv * (w - mw - xh * mwx);
          }
        }
        break;
      }
      case Op::kGelu: {
        if (!wants(n.in[0])) break;
        const Tensor& vx = in_value(n, 0);
        Tensor& gi = grad_buffer(grads, n.in[0]);
        for (std::size_t k = 0; k < g.size(); ++k) gi[k] += gelu_derivative(vx[k]) * g[k];
        break;
      }
      case Op::kL2Normalize: {
        if (!wants(n.in[0])) break;
        Tensor& gi = grad_buffer(grads, n.in[0]);
        double ydg = ops::dot(n.value.data(), g.data(), g.size());
        for (std::size_t k = 0; k < g.size(); ++k) gi[k] += (g[k] - n.value[k] * ydg) / n.a;
        break;
      }
      case Op::kConv2d: {
        const Tensor& vx = in_value(n, 0);
        const Tensor& vk = in_value(n, 1);
        std::size_t ci = vx.extent(0), h = vx.extent(1), w = vx.extent(2);
        std::size_t co = vk.extent(0), kh = vk.extent(2), kw = vk.extent(3);
        std::size_t oh = n.value.extent(1), ow = n.value.extent(2);
        bool want_x = wants(n.in[0]);
        bool want_k = wants(n.in[1]);
        if (!want_x && !want_k) break;
        const long p = static_cast<long>(n.p0);
        for (std::size_t o = 0; o < co; ++o) {
          for (std::size_t c = 0; c < ci; ++c) {
            const double* kslice = vk.data() + ((o * ci + c) * kh) * kw;
            for (std::size_t y = 0; y < oh; ++y) {
              for (std::size_t xx = 0; xx < ow; ++xx) {
                double go = g[(o * oh + y) * ow + xx];
                if (go == 0.0) continue;
                for (std::size_t ky = 0; ky < kh; ++ky) {
                  long iy = static_cast<long>(y + ky) - p;
                  if (iy < 0 || iy >= static_cast<long>(h)) continue;
                  for (std::size_t kx = 0; kx < kw; ++kx) {
                    long ix = static_cast<long>(xx + kx) - p;
                    if (ix < 0 || ix >= static_cast<long>(w)) continue;
                    std::size_t xi = c * h * w + static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
                    if (want_x) grad_buffer(grads, n.in[0])[xi] += kslice[ky * kw + kx] * go;
                    if (want_k) grad_buffer(grads, n.in[1])[(o * ci + c) * kh * kw + ky * kw + kx] += vx[xi] * go;
                  }
                }
              }
            }
          }
        }
        break;
      }
      case Op::kReshape: {
        if (!wants(n.in[0])) break;
        Tensor& gi = grad_buffer(grads, n.in[0]);
        for (std::size_t k = 0; k < g.size(); ++k) gi[k] += g[k];
        break;
      }
      case Op::kPick: {
        if (!wants(n.in[0])) break;
        Tensor& gi = grad_buffer(grads, n.in[0]);
        gi[n.p0] += g[0];
        break;
      }
      case Op::kNegLog: {
        if (!wants(n.in[0])) break;
        const Tensor& vx = in_value(n, 0);
        Tensor& gi = grad_buffer(grads, n.in[0]);
        if (vx[0] > n.a) gi[0] += -g[0] / vx[0];
        break;
      }
    }
  }
}

double grad_check(const std::function<double(bool)>& fn,
                  std::span<Tensor* const> params, double step) {
  if (step < 1e-7 || step > 1e-3) {
    throw std::invalid_argument("grad_check: step must lie in [1e-7, 1e-3]");
  }
  for (Tensor* p : params) p->zero_grad();
  double base = fn(true);
  if (!std::isfinite(base)) throw std::runtime_error("grad_check: non-finite loss");

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Tensor* p : params) analytic.push_back(p->grad());

  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& t = *params[pi];
    for (std::size_t k = 0; k < t.size(); ++k) {
      double saved = t[k];
      t[k] = saved + step;
      double up = fn(false);
      t[k] = saved - step;
      double down = fn(false);
      t[k] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw std::runtime_error("grad_check: non-finite loss during perturbation");
      }
      double fd = (up - down) / (2.0 * step);
      double an = analytic[pi][k];
      double rel = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace reprompt

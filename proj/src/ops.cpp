#include "kani/ops.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace kani::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;

CMatMap cmat(const Tensor& t, std::size_t rows, std::size_t cols) {
  return CMatMap(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MatMap mat(Tensor& t, std::size_t rows, std::size_t cols) {
  return MatMap(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
CVecMap cvec(const Tensor& t) { return CVecMap(t.data(), static_cast<Eigen::Index>(t.size())); }
VecMap vec(Tensor& t) { return VecMap(t.data(), static_cast<Eigen::Index>(t.size())); }

// Gradient buffer of input i, or nullptr when that input is constant.
Tensor* grad_of(Node& self, std::size_t i) {
  auto& in = self.inputs[i];
  if (!in || !in->requires_grad) return nullptr;
  return &in->ensure_grad();
}

void require_rank(const char* op, const Var& x, std::size_t rank) {
  if (x.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + " operand, got " +
                     shape_str(x.shape()));
  }
}

void require_same(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) throw ShapeError(op, a.shape(), b.shape());
}

}  // namespace

Var linear(const Var& x, const Var& w, const Var& b) {
  require_rank("linear", x, 2);
  require_rank("linear", w, 2);
  const std::size_t n = x.shape()[0], in = x.shape()[1], out = w.shape()[0];
  if (w.shape()[1] != in) throw ShapeError("linear", x.shape(), w.shape());
  if (b.defined() && b.shape() != Shape{out}) throw ShapeError("linear (bias)", w.shape(), b.shape());

  Tensor y({n, out});
  auto ym = mat(y, n, out);
  ym.noalias() = cmat(x.value(), n, in) * cmat(w.value(), out, in).transpose();
  if (b.defined()) ym.rowwise() += cvec(b.value()).transpose();

  return make_node("linear", std::move(y), {x, w, b}, [n, in, out](Node& self) {
    auto gy = cmat(self.grad, n, out);
    if (Tensor* gx = grad_of(self, 0)) mat(*gx, n, in).noalias() += gy * cmat(self.inputs[1]->value, out, in);
    if (Tensor* gw = grad_of(self, 1))
      mat(*gw, out, in).noalias() += gy.transpose() * cmat(self.inputs[0]->value, n, in);
    if (self.inputs[2]) {
      if (Tensor* gb = grad_of(self, 2)) vec(*gb) += gy.colwise().sum().transpose();
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) throw ShapeError("matmul", a.shape(), b.shape());
  Tensor y({m, n});
  mat(y, m, n).noalias() = cmat(a.value(), m, k) * cmat(b.value(), k, n);
  return make_node("matmul", std::move(y), {a, b}, [m, k, n](Node& self) {
    auto gy = cmat(self.grad, m, n);
    if (Tensor* ga = grad_of(self, 0))
      mat(*ga, m, k).noalias() += gy * cmat(self.inputs[1]->value, k, n).transpose();
    if (Tensor* gb = grad_of(self, 1))
      mat(*gb, k, n).noalias() += cmat(self.inputs[0]->value, m, k).transpose() * gy;
  });
}

namespace {

struct Conv2dGeom {
  std::size_t c, h, w, o, k, oh, ow;
  int stride;
  std::ptrdiff_t pad;
};

// cols [C*K*K x OH*OW]
void im2col(const double* x, const Conv2dGeom& g, double* cols) {
  const std::size_t plane = g.oh * g.ow;
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t kh = 0; kh < g.k; ++kh) {
      for (std::size_t kw = 0; kw < g.k; ++kw) {
        double* row = cols + ((ci * g.k + kh) * g.k + kw) * plane;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * g.stride - g.pad + static_cast<std::ptrdiff_t>(kh);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) * g.stride - g.pad + static_cast<std::ptrdiff_t>(kw);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                ix < static_cast<std::ptrdiff_t>(g.w);
            row[oy * g.ow + ox] = inside ? x[(ci * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const Conv2dGeom& g, double* dx) {
  const std::size_t plane = g.oh * g.ow;
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t kh = 0; kh < g.k; ++kh) {
      for (std::size_t kw = 0; kw < g.k; ++kw) {
        const double* row = cols + ((ci * g.k + kh) * g.k + kw) * plane;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * g.stride - g.pad + static_cast<std::ptrdiff_t>(kh);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) * g.stride - g.pad + static_cast<std::ptrdiff_t>(kw);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            dx[(ci * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] += row[oy * g.ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride) {
  require_rank("conv2d", x, 3);
  require_rank("conv2d", w, 4);
  if (stride != 1 && stride != 2) throw ShapeError("conv2d: stride must be 1 or 2");
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (ws[1] != xs[0] || ws[2] != ws[3] || ws[2] % 2 == 0) throw ShapeError("conv2d", xs, ws);
  if (b.defined() && b.shape() != Shape{ws[0]}) throw ShapeError("conv2d (bias)", ws, b.shape());

  Conv2dGeom g{};
  g.c = xs[0];
  g.h = xs[1];
  g.w = xs[2];
  g.o = ws[0];
  g.k = ws[2];
  g.stride = stride;
  g.pad = static_cast<std::ptrdiff_t>((g.k - 1) / 2);
  g.oh = (g.h + static_cast<std::size_t>(stride) - 1) / static_cast<std::size_t>(stride);
  g.ow = (g.w + static_cast<std::size_t>(stride) - 1) / static_cast<std::size_t>(stride);

  const std::size_t ckk = g.c * g.k * g.k, plane = g.oh * g.ow;
  auto cols = std::make_shared<AlignedVector>(ckk * plane);
  im2col(x.value().data(), g, cols->data());

  Tensor y({g.o, g.oh, g.ow});
  auto ym = mat(y, g.o, plane);
  ym.noalias() = cmat(w.value(), g.o, ckk) * CMatMap(cols->data(), ckk, plane);
  if (b.defined()) ym.colwise() += cvec(b.value());

  return make_node("conv2d", std::move(y), {x, w, b}, [g, cols, ckk, plane](Node& self) {
    auto gy = cmat(self.grad, g.o, plane);
    if (Tensor* gw = grad_of(self, 1))
      mat(*gw, g.o, ckk).noalias() += gy * CMatMap(cols->data(), ckk, plane).transpose();
    if (self.inputs[2]) {
      if (Tensor* gb = grad_of(self, 2)) vec(*gb) += gy.rowwise().sum();
    }
    if (Tensor* gx = grad_of(self, 0)) {
      RowMat gcols = cmat(self.inputs[1]->value, g.o, ckk).transpose() * gy;
      col2im_add(gcols.data(), g, gx->data());
    }
  });
}

Var conv1d(const Var& x, const Var& w, const Var& b) {
  require_rank("conv1d", x, 2);
  require_rank("conv1d", w, 3);
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (ws[1] != xs[0] || ws[2] % 2 == 0) throw ShapeError("conv1d", xs, ws);
  if (b.defined() && b.shape() != Shape{ws[0]}) throw ShapeError("conv1d (bias)", ws, b.shape());
  const std::size_t c = xs[0], len = xs[1], o = ws[0], k = ws[2];
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((k - 1) / 2);
  const std::size_t ck = c * k;
  auto cols = std::make_shared<AlignedVector>(ck * len, 0.0);
  const double* xv = x.value().data();
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      double* row = cols->data() + (ci * k + kk) * len;
      for (std::size_t t = 0; t < len; ++t) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) - pad + static_cast<std::ptrdiff_t>(kk);
        if (src >= 0 && src < static_cast<std::ptrdiff_t>(len)) row[t] = xv[ci * len + static_cast<std::size_t>(src)];
      }
    }
  }
  Tensor y({o, len});
  auto ym = mat(y, o, len);
  ym.noalias() = cmat(w.value(), o, ck) * CMatMap(cols->data(), ck, len);
  if (b.defined()) ym.colwise() += cvec(b.value());

  return make_node("conv1d", std::move(y), {x, w, b}, [c, len, o, k, pad, ck, cols](Node& self) {
    auto gy = cmat(self.grad, o, len);
    if (Tensor* gw = grad_of(self, 1))
      mat(*gw, o, ck).noalias() += gy * CMatMap(cols->data(), ck, len).transpose();
    if (self.inputs[2]) {
      if (Tensor* gb = grad_of(self, 2)) vec(*gb) += gy.rowwise().sum();
    }
    if (Tensor* gx = grad_of(self, 0)) {
      RowMat gcols = cmat(self.inputs[1]->value, o, ck).transpose() * gy;
      for (std::size_t ci = 0; ci < c; ++ci) {
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double* row = gcols.data() + (ci * k + kk) * len;
          for (std::size_t t = 0; t < len; ++t) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) - pad + static_cast<std::ptrdiff_t>(kk);
            if (src >= 0 && src < static_cast<std::ptrdiff_t>(len)) (*gx)[ci * len + static_cast<std::size_t>(src)] += row[t];
          }
        }
      }
    }
  });
}

Var relu(const Var& x) {
  Tensor y = x.value();
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  return make_node("relu", std::move(y), {x}, [](Node& self) {
    Tensor* gx = grad_of(self, 0);
    if (!gx) return;
    const Tensor& xv = self.inputs[0]->value;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (xv[i] > 0.0) (*gx)[i] += self.grad[i];
    }
  });
}

Var silu(const Var& x) {
  Tensor y = x.value();
  for (double& v : y.values()) v = v / (1.0 + std::exp(-v));
  return make_node("silu", std::move(y), {x}, [](Node& self) {
    Tensor* gx = grad_of(self, 0);
    if (!gx) return;
    const Tensor& xv = self.inputs[0]->value;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-xv[i]));
      (*gx)[i] += self.grad[i] * s * (1.0 + xv[i] * (1.0 - s));
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require_rank("layer_norm", x, 2);
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  if (gamma.shape() != Shape{d}) throw ShapeError("layer_norm (scale)", x.shape(), gamma.shape());
  if (beta.shape() != Shape{d}) throw ShapeError("layer_norm (shift)", x.shape(), beta.shape());

  auto xhat = std::make_shared<Tensor>(Shape{n, d});
  auto inv_std = std::make_shared<AlignedVector>(n);
  Tensor y({n, d});
  const double* xv = x.value().data();
  const double* gv = gamma.value().data();
  const double* bv = beta.value().data();
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = xv + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      y[r * d + j] = h * gv[j] + bv[j];
    }
  }

  return make_node("layer_norm", std::move(y), {x, gamma, beta}, [n, d, xhat, inv_std](Node& self) {
    const double* gy = self.grad.data();
    const double* gv = self.inputs[1]->value.data();
    if (Tensor* gg = grad_of(self, 1)) {
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) (*gg)[j] += gy[r * d + j] * (*xhat)[r * d + j];
    }
    if (Tensor* gb = grad_of(self, 2)) {
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) (*gb)[j] += gy[r * d + j];
    }
    if (Tensor* gx = grad_of(self, 0)) {
      const double inv_d = 1.0 / static_cast<double>(d);
      for (std::size_t r = 0; r < n; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = gy[r * d + j] * gv[j];
          m1 += dh;
          m2 += dh * (*xhat)[r * d + j];
        }
        m1 *= inv_d;
        m2 *= inv_d;
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = gy[r * d + j] * gv[j];
          (*gx)[r * d + j] += (*inv_std)[r] * (dh - m1 - (*xhat)[r * d + j] * m2);
        }
      }
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same("add", a, b);
  Tensor y = a.value();
  vec(y) += cvec(b.value());
  return make_node("add", std::move(y), {a, b}, [](Node& self) {
    if (Tensor* ga = grad_of(self, 0)) vec(*ga) += cvec(self.grad);
    if (Tensor* gb = grad_of(self, 1)) vec(*gb) += cvec(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same("sub", a, b);
  Tensor y = a.value();
  vec(y) -= cvec(b.value());
  return make_node("sub", std::move(y), {a, b}, [](Node& self) {
    if (Tensor* ga = grad_of(self, 0)) vec(*ga) += cvec(self.grad);
    if (Tensor* gb = grad_of(self, 1)) vec(*gb) -= cvec(self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same("mul", a, b);
  Tensor y = a.value();
  vec(y).array() *= cvec(b.value()).array();
  return make_node("mul", std::move(y), {a, b}, [](Node& self) {
    if (Tensor* ga = grad_of(self, 0)) vec(*ga).array() += cvec(self.grad).array() * cvec(self.inputs[1]->value).array();
    if (Tensor* gb = grad_of(self, 1)) vec(*gb).array() += cvec(self.grad).array() * cvec(self.inputs[0]->value).array();
  });
}

Var scale(const Var& x, double s) {
  Tensor y = x.value();
  vec(y) *= s;
  return make_node("scale", std::move(y), {x}, [s](Node& self) {
    if (Tensor* gx = grad_of(self, 0)) vec(*gx) += s * cvec(self.grad);
  });
}

Var transpose(const Var& x) {
  require_rank("transpose", x, 2);
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  Tensor y({c, r});
  mat(y, c, r) = cmat(x.value(), r, c).transpose();
  return make_node("transpose", std::move(y), {x}, [r, c](Node& self) {
    if (Tensor* gx = grad_of(self, 0)) mat(*gx, r, c) += cmat(self.grad, c, r).transpose();
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(first));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) throw ShapeError("concat", first, s);
    widths.push_back(s[axis] * inner);
    total += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  Tensor y(out_shape);
  const std::size_t row = total * inner;
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const double* src = parts[p].value().data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(src + o * widths[p], widths[p], y.data() + o * row + offset);
    offset += widths[p];
  }
  return make_node("concat", std::move(y), parts, [outer, row, widths](Node& self) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      if (Tensor* gp = grad_of(self, p)) {
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = self.grad.data() + o * row + off;
          double* dst = gp->data() + o * widths[p];
          for (std::size_t i = 0; i < widths[p]; ++i) dst[i] += src[i];
        }
      }
      off += widths[p];
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor y = x.value().reshaped(std::move(shape));
  return make_node("reshape", std::move(y), {x}, [](Node& self) {
    if (Tensor* gx = grad_of(self, 0)) vec(*gx) += cvec(self.grad);
  });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t end) {
  if (x.shape().empty() || begin > end || end > x.shape()[0]) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " +
                     shape_str(x.shape()));
  }
  Shape s = x.shape();
  const std::size_t stride = x.size() / s[0];
  s[0] = end - begin;
  std::vector<double> data(x.value().data() + begin * stride, x.value().data() + end * stride);
  Tensor y(s, std::move(data));
  return make_node("slice_rows", std::move(y), {x}, [begin, stride](Node& self) {
    if (Tensor* gx = grad_of(self, 0)) {
      double* dst = gx->data() + begin * stride;
      for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] += self.grad[i];
    }
  });
}

Var sum(const Var& x) {
  const double s = cvec(x.value()).sum();
  return make_node("sum", Tensor::scalar(s), {x}, [](Node& self) {
    if (Tensor* gx = grad_of(self, 0)) vec(*gx).array() += self.grad[0];
  });
}

Var mean(const Var& x) {
  if (x.size() == 0) throw ShapeError("mean: empty operand");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Var mse(const Var& a, const Var& b) {
  require_same("mse", a, b);
  if (a.size() == 0) throw ShapeError("mse: empty operands");
  const double inv_n = 1.0 / static_cast<double>(a.size());
  const double m = (cvec(a.value()) - cvec(b.value())).squaredNorm() * inv_n;
  return make_node("mse", Tensor::scalar(m), {a, b}, [inv_n](Node& self) {
    const double g = self.grad[0] * 2.0 * inv_n;
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    if (Tensor* ga = grad_of(self, 0)) vec(*ga) += g * (cvec(av) - cvec(bv));
    if (Tensor* gb = grad_of(self, 1)) vec(*gb) -= g * (cvec(av) - cvec(bv));
  });
}

void GatherStencil::append(const GatherStencil& other) {
  index.insert(index.end(), other.index.begin(), other.index.end());
  weight.insert(weight.end(), other.weight.begin(), other.weight.end());
}

std::vector<double> apply_stencil(std::span<const double> x, const GatherStencil& stencil) {
  std::vector<double> out(stencil.size());
  for (std::size_t i = 0; i < stencil.size(); ++i) {
    const auto& idx = stencil.index[i];
    const auto& w = stencil.weight[i];
    for (std::size_t t = 0; t < 4; ++t) {
      if (idx[t] >= x.size()) throw ShapeError("gather: index " + std::to_string(idx[t]) + " out of range for " + std::to_string(x.size()) + " values");
    }
    out[i] = w[0] * x[idx[0]] + w[1] * x[idx[1]] + w[2] * x[idx[2]] + w[3] * x[idx[3]];
  }
  return out;
}

Var gather(const Var& x, const GatherStencil& stencil) {
  Tensor y({stencil.size()}, apply_stencil(x.value().values(), stencil));
  auto st = std::make_shared<GatherStencil>(stencil);
  return make_node("gather", std::move(y), {x}, [st](Node& self) {
    Tensor* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < st->size(); ++i) {
      for (std::size_t t = 0; t < 4; ++t) (*gx)[st->index[i][t]] += st->weight[i][t] * self.grad[i];
    }
  });
}

}  // namespace kani::ops

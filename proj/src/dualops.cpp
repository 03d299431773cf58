#include "selftune/dualops.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace selftune {
namespace dualops {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_same_shape(const DualTensor& a, const DualTensor& b,
                        const char* op) {
  if (!a.value.same_shape(b.value)) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     a.value.shape_str() + " vs " + b.value.shape_str());
  }
}

}  // namespace

Tensor gemm(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  if (a.ndim() != 2 || b.ndim() != 2) {
    throw ShapeError("gemm: operands must be rank-2, got " + a.shape_str() +
                     " and " + b.shape_str());
  }
  const int m = ta ? a.dim(1) : a.dim(0);
  const int k = ta ? a.dim(0) : a.dim(1);
  const int kb = tb ? b.dim(1) : b.dim(0);
  const int n = tb ? b.dim(0) : b.dim(1);
  if (k != kb) {
    throw ShapeError("gemm: inner dimensions disagree, " + a.shape_str() +
                     (ta ? "^T" : "") + " x " + b.shape_str() +
                     (tb ? "^T" : ""));
  }
  Tensor out({m, n});
  ConstMapMat ma(a.data(), a.dim(0), a.dim(1));
  ConstMapMat mb(b.data(), b.dim(0), b.dim(1));
  MapMat mo(out.data(), m, n);
  if (!ta && !tb)
    mo.noalias() = ma * mb;
  else if (ta && !tb)
    mo.noalias() = ma.transpose() * mb;
  else if (!ta && tb)
    mo.noalias() = ma * mb.transpose();
  else
    mo.noalias() = ma.transpose() * mb.transpose();
  return out;
}

DualTensor add(const DualTensor& a, const DualTensor& b) {
  require_same_shape(a, b, "add");
  DualTensor out(a.value);
  const std::size_t n = out.value.size();
  const double* pb = b.value.data();
  double* po = out.value.data();
  for (std::size_t i = 0; i < n; ++i) po[i] += pb[i];
  if (a.has_tangent() || b.has_tangent()) {
    Tensor t = a.has_tangent() ? *a.tangent : Tensor(a.value.shape());
    if (b.has_tangent()) {
      const double* pbt = b.tangent->data();
      double* pt = t.data();
      for (std::size_t i = 0; i < n; ++i) pt[i] += pbt[i];
    }
    out.tangent = std::move(t);
  }
  return out;
}

DualTensor sub(const DualTensor& a, const DualTensor& b) {
  require_same_shape(a, b, "sub");
  DualTensor out(a.value);
  const std::size_t n = out.value.size();
  const double* pb = b.value.data();
  double* po = out.value.data();
  for (std::size_t i = 0; i < n; ++i) po[i] -= pb[i];
  if (a.has_tangent() || b.has_tangent()) {
    Tensor t = a.has_tangent() ? *a.tangent : Tensor(a.value.shape());
    if (b.has_tangent()) {
      const double* pbt = b.tangent->data();
      double* pt = t.data();
      for (std::size_t i = 0; i < n; ++i) pt[i] -= pbt[i];
    }
    out.tangent = std::move(t);
  }
  return out;
}

DualTensor mul(const DualTensor& a, const DualTensor& b) {
  require_same_shape(a, b, "mul");
  const std::size_t n = a.value.size();
  const double* pa = a.value.data();
  const double* pb = b.value.data();
  DualTensor out{Tensor(a.value.shape())};
  double* po = out.value.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  if (a.has_tangent() || b.has_tangent()) {
    Tensor t(a.value.shape());
    double* pt = t.data();
    if (a.has_tangent()) {
      const double* pat = a.tangent->data();
      for (std::size_t i = 0; i < n; ++i) pt[i] += pat[i] * pb[i];
    }
    if (b.has_tangent()) {
      const double* pbt = b.tangent->data();
      for (std::size_t i = 0; i < n; ++i) pt[i] += pa[i] * pbt[i];
    }
    out.tangent = std::move(t);
  }
  return out;
}

DualTensor scale(const DualTensor& a, DualScalar s) {
  const std::size_t n = a.value.size();
  const double* pa = a.value.data();
  DualTensor out{Tensor(a.value.shape())};
  double* po = out.value.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = s.v * pa[i];
  if (a.has_tangent() || s.t != 0.0) {
    Tensor t(a.value.shape());
    double* pt = t.data();
    if (s.t != 0.0) {
      for (std::size_t i = 0; i < n; ++i) pt[i] = s.t * pa[i];
    }
    if (a.has_tangent()) {
      const double* pat = a.tangent->data();
      for (std::size_t i = 0; i < n; ++i) pt[i] += s.v * pat[i];
    }
    out.tangent = std::move(t);
  }
  return out;
}

DualTensor axpy(const DualTensor& a, DualScalar s, const DualTensor& b) {
  require_same_shape(a, b, "axpy");
  const std::size_t n = a.value.size();
  const double* pa = a.value.data();
  const double* pb = b.value.data();
  DualTensor out{Tensor(a.value.shape())};
  double* po = out.value.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + s.v * pb[i];
  if (a.has_tangent() || b.has_tangent() || s.t != 0.0) {
    Tensor t(a.value.shape());
    double* pt = t.data();
    if (a.has_tangent()) {
      const double* pat = a.tangent->data();
      for (std::size_t i = 0; i < n; ++i) pt[i] = pat[i];
    }
    if (s.t != 0.0) {
      for (std::size_t i = 0; i < n; ++i) pt[i] += s.t * pb[i];
    }
    if (b.has_tangent()) {
      const double* pbt = b.tangent->data();
      for (std::size_t i = 0; i < n; ++i) pt[i] += s.v * pbt[i];
    }
    out.tangent = std::move(t);
  }
  return out;
}

DualTensor matmul(const DualTensor& a, const DualTensor& b, bool ta, bool tb) {
  DualTensor out{gemm(a.value, b.value, ta, tb)};
  if (a.has_tangent() || b.has_tangent()) {
    Tensor t(out.value.shape());
    const std::size_t n = t.size();
    if (a.has_tangent()) {
      Tensor part = gemm(*a.tangent, b.value, ta, tb);
      const double* pp = part.data();
      double* pt = t.data();
      for (std::size_t i = 0; i < n; ++i) pt[i] += pp[i];
    }
    if (b.has_tangent()) {
      Tensor part = gemm(a.value, *b.tangent, ta, tb);
      const double* pp = part.data();
      double* pt = t.data();
      for (std::size_t i = 0; i < n; ++i) pt[i] += pp[i];
    }
    out.tangent = std::move(t);
  }
  return out;
}

void accumulate(DualTensor& dst, const DualTensor& src) {
  if (dst.value.empty()) {
    dst = src;
    return;
  }
  require_same_shape(dst, src, "accumulate");
  const std::size_t n = dst.value.size();
  const double* ps = src.value.data();
  double* pd = dst.value.data();
  for (std::size_t i = 0; i < n; ++i) pd[i] += ps[i];
  if (src.has_tangent()) {
    if (!dst.has_tangent()) dst.tangent = Tensor(dst.value.shape());
    const double* pst = src.tangent->data();
    double* pdt = dst.tangent->data();
    for (std::size_t i = 0; i < n; ++i) pdt[i] += pst[i];
  }
}

double global_norm(const std::vector<DualTensor>& grads) {
  double sq = 0.0;
  for (const DualTensor& g : grads) {
    const double* p = g.value.data();
    for (std::size_t i = 0; i < g.value.size(); ++i) sq += p[i] * p[i];
  }
  return std::sqrt(sq);
}

}  // namespace dualops
}  // namespace selftune

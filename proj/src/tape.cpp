#include "selftune/tape.hpp"

#include <cmath>
#include <utility>

#include "selftune/dualops.hpp"

namespace selftune {

namespace {

// ---- local dual helpers -------------------------------------------------

Tensor reshape(const Tensor& t, std::vector<int> shape) {
  Tensor out(std::move(shape));
  if (out.size() != t.size()) {
    throw ShapeError("reshape: volume mismatch " + t.shape_str());
  }
  std::copy(t.data(), t.data() + t.size(), out.data());
  return out;
}

DualTensor dual_reshape(const DualTensor& t, const std::vector<int>& shape) {
  DualTensor out{reshape(t.value, shape)};
  if (t.has_tangent()) out.tangent = reshape(*t.tangent, shape);
  return out;
}

// Row-sum of an [m,n] matrix -> [m].
DualTensor row_sum(const DualTensor& x) {
  const int m = x.value.dim(0);
  const int n = x.value.dim(1);
  auto sum_rows = [&](const Tensor& src) {
    Tensor out({m});
    const double* p = src.data();
    for (int i = 0; i < m; ++i) {
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += p[i * n + j];
      out[static_cast<std::size_t>(i)] = acc;
    }
    return out;
  };
  DualTensor out{sum_rows(x.value)};
  if (x.has_tangent()) out.tangent = sum_rows(*x.tangent);
  return out;
}

// Tile an [n] bias across m rows -> [m,n].
DualTensor tile_rows(const DualTensor& b, int m, int n) {
  auto spread = [&](const Tensor& src) {
    Tensor out({m, n});
    double* p = out.data();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) p[i * n + j] = src[static_cast<std::size_t>(j)];
    return out;
  };
  DualTensor out{spread(b.value)};
  if (b.has_tangent()) out.tangent = spread(*b.tangent);
  return out;
}

// Broadcast an [m] vector across n columns -> [m,n].
DualTensor row_broadcast(const DualTensor& r, int n) {
  const int m = r.value.dim(0);
  auto spread = [&](const Tensor& src) {
    Tensor out({m, n});
    double* p = out.data();
    for (int i = 0; i < m; ++i) {
      const double v = src[static_cast<std::size_t>(i)];
      for (int j = 0; j < n; ++j) p[i * n + j] = v;
    }
    return out;
  };
  DualTensor out{spread(r.value)};
  if (r.has_tangent()) out.tangent = spread(*r.tangent);
  return out;
}

// exp applied from a log-softmax output: recovers the dual probabilities.
DualTensor probs_from_log(const DualTensor& ls) {
  DualTensor p{Tensor(ls.value.shape())};
  const std::size_t n = ls.value.size();
  const double* pv = ls.value.data();
  double* po = p.value.data();
  for (std::size_t i = 0; i < n; ++i) po[i] = std::exp(pv[i]);
  if (ls.has_tangent()) {
    Tensor t(ls.value.shape());
    const double* pt = ls.tangent->data();
    double* to = t.data();
    for (std::size_t i = 0; i < n; ++i) to[i] = po[i] * pt[i];
    p.tangent = std::move(t);
  }
  return p;
}

// ---- convolution plumbing (NCHW, stride 1, 'same' zero padding) ---------

Tensor im2col_plain(const Tensor& x, int kh, int kw) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  Tensor cols({N * H * W, C * kh * kw});
  const double* px = x.data();
  double* pc = cols.data();
  const int row_len = C * kh * kw;
  for (int n = 0; n < N; ++n) {
    for (int y = 0; y < H; ++y) {
      for (int xx = 0; xx < W; ++xx) {
        double* row = pc + static_cast<std::size_t>((n * H + y) * W + xx) * row_len;
        for (int c = 0; c < C; ++c) {
          const double* plane = px + (static_cast<std::size_t>(n) * C + c) * H * W;
          for (int ky = 0; ky < kh; ++ky) {
            const int sy = y + ky - ph;
            for (int kx = 0; kx < kw; ++kx) {
              const int sx = xx + kx - pw;
              const bool in = sy >= 0 && sy < H && sx >= 0 && sx < W;
              row[(c * kh + ky) * kw + kx] = in ? plane[sy * W + sx] : 0.0;
            }
          }
        }
      }
    }
  }
  return cols;
}

Tensor col2im_plain(const Tensor& cols, int N, int C, int H, int W, int kh,
                    int kw) {
  const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  Tensor x({N, C, H, W});
  const double* pc = cols.data();
  double* px = x.data();
  const int row_len = C * kh * kw;
  for (int n = 0; n < N; ++n) {
    for (int y = 0; y < H; ++y) {
      for (int xx = 0; xx < W; ++xx) {
        const double* row =
            pc + static_cast<std::size_t>((n * H + y) * W + xx) * row_len;
        for (int c = 0; c < C; ++c) {
          double* plane = px + (static_cast<std::size_t>(n) * C + c) * H * W;
          for (int ky = 0; ky < kh; ++ky) {
            const int sy = y + ky - ph;
            if (sy < 0 || sy >= H) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int sx = xx + kx - pw;
              if (sx < 0 || sx >= W) continue;
              plane[sy * W + sx] += row[(c * kh + ky) * kw + kx];
            }
          }
        }
      }
    }
  }
  return x;
}

DualTensor im2col(const DualTensor& x, int kh, int kw) {
  DualTensor out{im2col_plain(x.value, kh, kw)};
  if (x.has_tangent()) out.tangent = im2col_plain(*x.tangent, kh, kw);
  return out;
}

DualTensor col2im(const DualTensor& cols, int N, int C, int H, int W, int kh,
                  int kw) {
  DualTensor out{col2im_plain(cols.value, N, C, H, W, kh, kw)};
  if (cols.has_tangent())
    out.tangent = col2im_plain(*cols.tangent, N, C, H, W, kh, kw);
  return out;
}

// [N,O,H,W] <-> [N*H*W, O] pixel-major views used around the GEMM.
Tensor nchw_to_rows_plain(const Tensor& x) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out({N * H * W, C});
  const double* px = x.data();
  double* po = out.data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double* plane = px + (static_cast<std::size_t>(n) * C + c) * H * W;
      for (int i = 0; i < H * W; ++i)
        po[(static_cast<std::size_t>(n) * H * W + i) * C + c] = plane[i];
    }
  return out;
}

Tensor rows_to_nchw_plain(const Tensor& m, int N, int C, int H, int W) {
  Tensor out({N, C, H, W});
  const double* pm = m.data();
  double* po = out.data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      double* plane = po + (static_cast<std::size_t>(n) * C + c) * H * W;
      for (int i = 0; i < H * W; ++i)
        plane[i] = pm[(static_cast<std::size_t>(n) * H * W + i) * C + c];
    }
  return out;
}

DualTensor nchw_to_rows(const DualTensor& x) {
  DualTensor out{nchw_to_rows_plain(x.value)};
  if (x.has_tangent()) out.tangent = nchw_to_rows_plain(*x.tangent);
  return out;
}

DualTensor rows_to_nchw(const DualTensor& m, int N, int C, int H, int W) {
  DualTensor out{rows_to_nchw_plain(m.value, N, C, H, W)};
  if (m.has_tangent()) out.tangent = rows_to_nchw_plain(*m.tangent, N, C, H, W);
  return out;
}

}  // namespace

// ---- Tape ----------------------------------------------------------------

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) {
    throw StateError("Tape: variable does not belong to this record");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

Tape::Node& Tape::node(Var v) {
  return const_cast<Node&>(static_cast<const Tape*>(this)->node(v));
}

void Tape::check_finite(const DualTensor& t, const char* op) const {
  if (!t.value.all_finite() ||
      (t.has_tangent() && !t.tangent->all_finite())) {
    throw NumericalError(std::string(op) + ": non-finite value produced");
  }
}

Var Tape::push(DualTensor out, bool on_path,
               std::function<void(Tape&, const DualTensor&)> backward) {
  Node n;
  n.out = std::move(out);
  n.on_grad_path = on_path;
  if (recording_ && on_path) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::add_adjoint(int id, DualTensor contribution) {
  if (adjoints_.size() < nodes_.size()) adjoints_.resize(nodes_.size());
  dualops::accumulate(adjoints_[static_cast<std::size_t>(id)],
                      std::move(contribution));
}

Var Tape::constant(DualTensor v) {
  check_finite(v, "constant");
  return push(std::move(v), false, nullptr);
}

Var Tape::param(DualTensor v) {
  check_finite(v, "param");
  return push(std::move(v), true, nullptr);
}

Var Tape::matmul(Var a, Var b) {
  DualTensor out = dualops::matmul(dual(a), dual(b));
  check_finite(out, "matmul");
  const int ia = a.id, ib = b.id;
  return push(std::move(out), on_path(a) || on_path(b),
              [ia, ib](Tape& t, const DualTensor& g) {
                if (t.on_path(Var{ia}))
                  t.add_adjoint(ia, dualops::matmul(g, t.dual(Var{ib}), false, true));
                if (t.on_path(Var{ib}))
                  t.add_adjoint(ib, dualops::matmul(t.dual(Var{ia}), g, true, false));
              });
}

Var Tape::conv2d(Var x, Var w) {
  const DualTensor& xv = dual(x);
  const DualTensor& wv = dual(w);
  if (xv.value.ndim() != 4 || wv.value.ndim() != 4) {
    throw ShapeError("conv2d: expected NCHW input and OCKK kernel, got " +
                     xv.value.shape_str() + " and " + wv.value.shape_str());
  }
  const int N = xv.value.dim(0), C = xv.value.dim(1);
  const int H = xv.value.dim(2), W = xv.value.dim(3);
  const int O = wv.value.dim(0), kh = wv.value.dim(2), kw = wv.value.dim(3);
  if (wv.value.dim(1) != C) {
    throw ShapeError("conv2d: kernel expects " +
                     std::to_string(wv.value.dim(1)) + " channels, input has " +
                     std::to_string(C));
  }
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw ShapeError("conv2d: 'same' padding requires odd kernel extents");
  }
  DualTensor cols = im2col(xv, kh, kw);
  DualTensor wmat = dual_reshape(wv, {O, C * kh * kw});
  DualTensor flat = dualops::matmul(cols, wmat, false, true);  // [N*H*W, O]
  DualTensor out = rows_to_nchw(flat, N, O, H, W);
  check_finite(out, "conv2d");
  const int ix = x.id, iw = w.id;
  return push(std::move(out), on_path(x) || on_path(w),
              [ix, iw, cols, N, C, H, W, O, kh, kw](Tape& t, const DualTensor& g) {
                DualTensor gmat = nchw_to_rows(g);  // [N*H*W, O]
                if (t.on_path(Var{iw})) {
                  DualTensor dw = dualops::matmul(gmat, cols, true, false);
                  t.add_adjoint(iw, dual_reshape(dw, {O, C, kh, kw}));
                }
                if (t.on_path(Var{ix})) {
                  DualTensor wmat =
                      dual_reshape(t.dual(Var{iw}), {O, C * kh * kw});
                  DualTensor dcols = dualops::matmul(gmat, wmat);
                  t.add_adjoint(ix, col2im(dcols, N, C, H, W, kh, kw));
                }
              });
}

Var Tape::bias_add(Var x, Var b) {
  const DualTensor& xv = dual(x);
  const DualTensor& bv = dual(b);
  if (xv.value.ndim() != 2 || bv.value.ndim() != 1 ||
      bv.value.dim(0) != xv.value.dim(1)) {
    throw ShapeError("bias_add: need [m,n] plus [n], got " +
                     xv.value.shape_str() + " and " + bv.value.shape_str());
  }
  const int m = xv.value.dim(0), n = xv.value.dim(1);
  DualTensor out = dualops::add(xv, tile_rows(bv, m, n));
  check_finite(out, "bias_add");
  const int ix = x.id, ib = b.id;
  return push(std::move(out), on_path(x) || on_path(b),
              [ix, ib](Tape& t, const DualTensor& g) {
                if (t.on_path(Var{ix})) t.add_adjoint(ix, g);
                if (t.on_path(Var{ib})) {
                  // column sums of g
                  const int m = g.value.dim(0), n = g.value.dim(1);
                  auto colsum = [&](const Tensor& src) {
                    Tensor out({n});
                    const double* p = src.data();
                    for (int i = 0; i < m; ++i)
                      for (int j = 0; j < n; ++j)
                        out[static_cast<std::size_t>(j)] += p[i * n + j];
                    return out;
                  };
                  DualTensor db{colsum(g.value)};
                  if (g.has_tangent()) db.tangent = colsum(*g.tangent);
                  t.add_adjoint(ib, std::move(db));
                }
              });
}

Var Tape::bias_add_channels(Var x, Var b) {
  const DualTensor& xv = dual(x);
  const DualTensor& bv = dual(b);
  if (xv.value.ndim() != 4 || bv.value.ndim() != 1 ||
      bv.value.dim(0) != xv.value.dim(1)) {
    throw ShapeError("bias_add_channels: need [N,C,H,W] plus [C], got " +
                     xv.value.shape_str() + " and " + bv.value.shape_str());
  }
  const int N = xv.value.dim(0), C = xv.value.dim(1);
  const int HW = xv.value.dim(2) * xv.value.dim(3);
  auto spread = [&](const Tensor& xt, const Tensor& bt) {
    Tensor out = xt;
    double* p = out.data();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const double add = bt[static_cast<std::size_t>(c)];
        double* plane = p + (static_cast<std::size_t>(n) * C + c) * HW;
        for (int i = 0; i < HW; ++i) plane[i] += add;
      }
    return out;
  };
  DualTensor out{spread(xv.value, bv.value)};
  if (xv.has_tangent() || bv.has_tangent()) {
    Tensor xt = xv.has_tangent() ? *xv.tangent : Tensor(xv.value.shape());
    Tensor bt = bv.has_tangent() ? *bv.tangent : Tensor(bv.value.shape());
    out.tangent = spread(xt, bt);
  }
  check_finite(out, "bias_add_channels");
  const int ix = x.id, ib = b.id;
  return push(std::move(out), on_path(x) || on_path(b),
              [ix, ib, N, C, HW](Tape& t, const DualTensor& g) {
                if (t.on_path(Var{ix})) t.add_adjoint(ix, g);
                if (t.on_path(Var{ib})) {
                  auto chansum = [&](const Tensor& src) {
                    Tensor out({C});
                    const double* p = src.data();
                    for (int n = 0; n < N; ++n)
                      for (int c = 0; c < C; ++c) {
                        const double* plane =
                            p + (static_cast<std::size_t>(n) * C + c) * HW;
                        double acc = 0.0;
                        for (int i = 0; i < HW; ++i) acc += plane[i];
                        out[static_cast<std::size_t>(c)] += acc;
                      }
                    return out;
                  };
                  DualTensor db{chansum(g.value)};
                  if (g.has_tangent()) db.tangent = chansum(*g.tangent);
                  t.add_adjoint(ib, std::move(db));
                }
              });
}

Var Tape::relu(Var x) {
  const DualTensor& xv = dual(x);
  auto masked = [&](const Tensor& src) {
    Tensor out(src.shape());
    for (std::size_t i = 0; i < src.size(); ++i)
      out[i] = xv.value[i] > 0.0 ? src[i] : 0.0;
    return out;
  };
  DualTensor out{masked(xv.value)};
  if (xv.has_tangent()) out.tangent = masked(*xv.tangent);
  check_finite(out, "relu");
  const int ix = x.id;
  return push(std::move(out), on_path(x),
              [ix](Tape& t, const DualTensor& g) {
                if (!t.on_path(Var{ix})) return;
                const Tensor& xval = t.value(Var{ix});
                auto masked = [&](const Tensor& src) {
                  Tensor out(src.shape());
                  for (std::size_t i = 0; i < src.size(); ++i)
                    out[i] = xval[i] > 0.0 ? src[i] : 0.0;
                  return out;
                };
                DualTensor dx{masked(g.value)};
                if (g.has_tangent()) dx.tangent = masked(*g.tangent);
                t.add_adjoint(ix, std::move(dx));
              });
}

Var Tape::sigmoid(Var x) {
  const DualTensor& xv = dual(x);
  DualTensor out{Tensor(xv.value.shape())};
  for (std::size_t i = 0; i < xv.value.size(); ++i)
    out.value[i] = 1.0 / (1.0 + std::exp(-xv.value[i]));
  if (xv.has_tangent()) {
    Tensor t(xv.value.shape());
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = out.value[i] * (1.0 - out.value[i]) * (*xv.tangent)[i];
    out.tangent = std::move(t);
  }
  const int ix = x.id, self = static_cast<int>(nodes_.size());
  check_finite(out, "sigmoid");
  return push(std::move(out), on_path(x),
              [ix, self](Tape& t, const DualTensor& g) {
                if (!t.on_path(Var{ix})) return;
                const DualTensor& s = t.dual(Var{self});
                // sigma' as a dual: value s(1-s), tangent (1-2s) * s_tangent
                DualTensor sp{Tensor(s.value.shape())};
                for (std::size_t i = 0; i < s.value.size(); ++i)
                  sp.value[i] = s.value[i] * (1.0 - s.value[i]);
                if (s.has_tangent()) {
                  Tensor tt(s.value.shape());
                  for (std::size_t i = 0; i < tt.size(); ++i)
                    tt[i] = (1.0 - 2.0 * s.value[i]) * (*s.tangent)[i];
                  sp.tangent = std::move(tt);
                }
                t.add_adjoint(ix, dualops::mul(g, sp));
              });
}

Var Tape::exp(Var x) {
  const DualTensor& xv = dual(x);
  DualTensor out{Tensor(xv.value.shape())};
  for (std::size_t i = 0; i < xv.value.size(); ++i)
    out.value[i] = std::exp(xv.value[i]);
  if (xv.has_tangent()) {
    Tensor t(xv.value.shape());
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = out.value[i] * (*xv.tangent)[i];
    out.tangent = std::move(t);
  }
  check_finite(out, "exp");
  const int self = static_cast<int>(nodes_.size());
  const int ix = x.id;
  return push(std::move(out), on_path(x),
              [ix, self](Tape& t, const DualTensor& g) {
                if (t.on_path(Var{ix}))
                  t.add_adjoint(ix, dualops::mul(g, t.dual(Var{self})));
              });
}

Var Tape::square(Var x) {
  const DualTensor& xv = dual(x);
  DualTensor out = dualops::mul(xv, xv);
  check_finite(out, "square");
  const int ix = x.id;
  return push(std::move(out), on_path(x),
              [ix](Tape& t, const DualTensor& g) {
                if (!t.on_path(Var{ix})) return;
                DualTensor dx = dualops::mul(g, t.dual(Var{ix}));
                t.add_adjoint(ix, dualops::scale(dx, DualScalar::constant(2.0)));
              });
}

namespace {
void require_rows(const DualTensor& x, const char* op) {
  if (x.value.ndim() != 2) {
    throw ShapeError(std::string(op) + ": expected a [m,n] matrix, got " +
                     x.value.shape_str());
  }
}
}  // namespace

Var Tape::log_softmax(Var x) {
  const DualTensor& xv = dual(x);
  require_rows(xv, "log_softmax");
  const int m = xv.value.dim(0), n = xv.value.dim(1);
  DualTensor out{Tensor({m, n})};
  if (xv.has_tangent()) out.tangent = Tensor({m, n});
  for (int i = 0; i < m; ++i) {
    const double* row = xv.value.data() + static_cast<std::size_t>(i) * n;
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double lse = 0.0;
    for (int j = 0; j < n; ++j) lse += std::exp(row[j] - mx);
    lse = mx + std::log(lse);
    double* orow = out.value.data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) orow[j] = row[j] - lse;
    if (xv.has_tangent()) {
      const double* trow = xv.tangent->data() + static_cast<std::size_t>(i) * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += std::exp(orow[j]) * trow[j];
      double* otrow = out.tangent->data() + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) otrow[j] = trow[j] - dot;
    }
  }
  check_finite(out, "log_softmax");
  const int ix = x.id, self = static_cast<int>(nodes_.size());
  return push(std::move(out), on_path(x),
              [ix, self](Tape& t, const DualTensor& g) {
                if (!t.on_path(Var{ix})) return;
                DualTensor p = probs_from_log(t.dual(Var{self}));
                DualTensor rs = row_broadcast(row_sum(g), p.value.dim(1));
                t.add_adjoint(ix, dualops::sub(g, dualops::mul(p, rs)));
              });
}

Var Tape::softmax(Var x) {
  const DualTensor& xv = dual(x);
  require_rows(xv, "softmax");
  const int m = xv.value.dim(0), n = xv.value.dim(1);
  DualTensor out{Tensor({m, n})};
  if (xv.has_tangent()) out.tangent = Tensor({m, n});
  for (int i = 0; i < m; ++i) {
    const double* row = xv.value.data() + static_cast<std::size_t>(i) * n;
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    double* orow = out.value.data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      z += orow[j];
    }
    for (int j = 0; j < n; ++j) orow[j] /= z;
    if (xv.has_tangent()) {
      const double* trow = xv.tangent->data() + static_cast<std::size_t>(i) * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += orow[j] * trow[j];
      double* otrow = out.tangent->data() + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) otrow[j] = orow[j] * (trow[j] - dot);
    }
  }
  check_finite(out, "softmax");
  const int ix = x.id, self = static_cast<int>(nodes_.size());
  return push(std::move(out), on_path(x),
              [ix, self](Tape& t, const DualTensor& g) {
                if (!t.on_path(Var{ix})) return;
                const DualTensor& p = t.dual(Var{self});
                DualTensor rs =
                    row_broadcast(row_sum(dualops::mul(g, p)), p.value.dim(1));
                t.add_adjoint(ix, dualops::mul(p, dualops::sub(g, rs)));
              });
}

Var Tape::add(Var a, Var b) {
  DualTensor out = dualops::add(dual(a), dual(b));
  check_finite(out, "add");
  const int ia = a.id, ib = b.id;
  return push(std::move(out), on_path(a) || on_path(b),
              [ia, ib](Tape& t, const DualTensor& g) {
                if (t.on_path(Var{ia})) t.add_adjoint(ia, g);
                if (t.on_path(Var{ib})) t.add_adjoint(ib, g);
              });
}

Var Tape::sub(Var a, Var b) {
  DualTensor out = dualops::sub(dual(a), dual(b));
  check_finite(out, "sub");
  const int ia = a.id, ib = b.id;
  return push(std::move(out), on_path(a) || on_path(b),
              [ia, ib](Tape& t, const DualTensor& g) {
                if (t.on_path(Var{ia})) t.add_adjoint(ia, g);
                if (t.on_path(Var{ib}))
                  t.add_adjoint(ib, dualops::scale(g, DualScalar::constant(-1.0)));
              });
}

Var Tape::mul(Var a, Var b) {
  DualTensor out = dualops::mul(dual(a), dual(b));
  check_finite(out, "mul");
  const int ia = a.id, ib = b.id;
  return push(std::move(out), on_path(a) || on_path(b),
              [ia, ib](Tape& t, const DualTensor& g) {
                if (t.on_path(Var{ia}))
                  t.add_adjoint(ia, dualops::mul(g, t.dual(Var{ib})));
                if (t.on_path(Var{ib}))
                  t.add_adjoint(ib, dualops::mul(g, t.dual(Var{ia})));
              });
}

Var Tape::scale(Var x, DualScalar s) {
  DualTensor out = dualops::scale(dual(x), s);
  check_finite(out, "scale");
  const int ix = x.id;
  return push(std::move(out), on_path(x),
              [ix, s](Tape& t, const DualTensor& g) {
                if (t.on_path(Var{ix})) t.add_adjoint(ix, dualops::scale(g, s));
              });
}

Var Tape::sum(Var x) {
  const DualTensor& xv = dual(x);
  auto total = [](const Tensor& src) {
    double acc = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) acc += src[i];
    return Tensor::scalar(acc);
  };
  DualTensor out{total(xv.value)};
  if (xv.has_tangent()) out.tangent = total(*xv.tangent);
  check_finite(out, "sum");
  const int ix = x.id;
  return push(std::move(out), on_path(x),
              [ix](Tape& t, const DualTensor& g) {
                if (!t.on_path(Var{ix})) return;
                const Tensor& shape_like = t.value(Var{ix});
                DualTensor dx{Tensor(shape_like.shape(), g.value[0])};
                if (g.has_tangent())
                  dx.tangent = Tensor(shape_like.shape(), (*g.tangent)[0]);
                t.add_adjoint(ix, std::move(dx));
              });
}

Var Tape::mean(Var x) {
  Var s = sum(x);
  const double inv = 1.0 / static_cast<double>(value(x).size());
  return scale(s, DualScalar::constant(inv));
}

Var Tape::flatten2d(Var x) {
  const DualTensor& xv = dual(x);
  if (xv.value.ndim() != 4) {
    throw ShapeError("flatten2d: expected [N,C,H,W], got " +
                     xv.value.shape_str());
  }
  const std::vector<int> in_shape = xv.value.shape();
  const int N = in_shape[0];
  const int F = in_shape[1] * in_shape[2] * in_shape[3];
  DualTensor out = dual_reshape(xv, {N, F});
  const int ix = x.id;
  return push(std::move(out), on_path(x),
              [ix, in_shape](Tape& t, const DualTensor& g) {
                if (t.on_path(Var{ix}))
                  t.add_adjoint(ix, dual_reshape(g, in_shape));
              });
}

Var Tape::gather(Var x, const std::vector<int>& index) {
  const DualTensor& xv = dual(x);
  require_rows(xv, "gather");
  const int m = xv.value.dim(0), n = xv.value.dim(1);
  if (static_cast<int>(index.size()) != m) {
    throw ShapeError("gather: index count " + std::to_string(index.size()) +
                     " does not match row count " + std::to_string(m));
  }
  for (int i = 0; i < m; ++i) {
    if (index[static_cast<std::size_t>(i)] < 0 ||
        index[static_cast<std::size_t>(i)] >= n) {
      throw ShapeError("gather: index out of range at row " + std::to_string(i));
    }
  }
  auto pick = [&](const Tensor& src) {
    Tensor out({m});
    for (int i = 0; i < m; ++i)
      out[static_cast<std::size_t>(i)] =
          src[static_cast<std::size_t>(i) * n + index[static_cast<std::size_t>(i)]];
    return out;
  };
  DualTensor out{pick(xv.value)};
  if (xv.has_tangent()) out.tangent = pick(*xv.tangent);
  check_finite(out, "gather");
  const int ix = x.id;
  std::vector<int> idx = index;
  return push(std::move(out), on_path(x),
              [ix, idx, m, n](Tape& t, const DualTensor& g) {
                if (!t.on_path(Var{ix})) return;
                auto scatter = [&](const Tensor& src) {
                  Tensor out({m, n});
                  for (int i = 0; i < m; ++i)
                    out[static_cast<std::size_t>(i) * n +
                        idx[static_cast<std::size_t>(i)]] =
                        src[static_cast<std::size_t>(i)];
                  return out;
                };
                DualTensor dx{scatter(g.value)};
                if (g.has_tangent()) dx.tangent = scatter(*g.tangent);
                t.add_adjoint(ix, std::move(dx));
              });
}

Var Tape::stop_gradient(Var x) {
  return push(dual(x), false, nullptr);
}

double Tape::scalar_value(Var v) const {
  const Tensor& t = value(v);
  if (t.size() != 1) {
    throw ShapeError("scalar_value: node has shape " + t.shape_str());
  }
  return t[0];
}

double Tape::meta_directional_derivative(Var v) const {
  const DualTensor& d = dual(v);
  if (d.value.size() != 1) {
    throw ShapeError("meta_directional_derivative: node has shape " +
                     d.value.shape_str());
  }
  return d.has_tangent() ? (*d.tangent)[0] : 0.0;
}

std::vector<DualTensor> Tape::gradient(Var loss,
                                       const std::vector<Var>& params) {
  if (!recording_) {
    throw StateError(
        "gradient: record was built in non-recording mode, nothing to replay");
  }
  if (consumed_) {
    throw StateError("gradient: computation record already consumed");
  }
  consumed_ = true;
  if (value(loss).size() != 1) {
    throw ShapeError("gradient: loss must be scalar, got shape " +
                     value(loss).shape_str());
  }
  adjoints_.assign(nodes_.size(), DualTensor{});
  add_adjoint(loss.id, DualTensor{Tensor::scalar(1.0)});
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.on_grad_path || !n.backward) continue;
    DualTensor& adj = adjoints_[static_cast<std::size_t>(id)];
    if (adj.value.empty()) continue;  // node did not contribute to the loss
    n.backward(*this, adj);
  }
  std::vector<DualTensor> grads;
  grads.reserve(params.size());
  for (Var p : params) {
    node(p);  // validates the handle
    DualTensor& adj = adjoints_[static_cast<std::size_t>(p.id)];
    if (adj.value.empty()) {
      grads.emplace_back(Tensor(value(p).shape()));
    } else {
      grads.push_back(std::move(adj));
    }
    if (!grads.back().value.all_finite() ||
        (grads.back().has_tangent() && !grads.back().tangent->all_finite())) {
      throw NumericalError("gradient: non-finite gradient produced");
    }
  }
  adjoints_.clear();
  return grads;
}

}  // namespace selftune

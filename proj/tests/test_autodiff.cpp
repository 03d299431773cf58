#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "selftune/dualops.hpp"
#include "selftune/rng.hpp"
#include "selftune/tape.hpp"

using namespace selftune;

namespace {

Tensor randn(Rng& rng, std::vector<int> shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

Tensor shifted(const Tensor& x, const Tensor& d, double h) {
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += h * d[i];
  return out;
}

// Central-difference check of reverse-mode gradients along random
// directions.  `loss` must rebuild the graph from scratch on every call.
void check_gradients(const std::function<double(const std::vector<Tensor>&)>& loss,
                     const std::function<std::vector<DualTensor>(
                         const std::vector<Tensor>&)>& grad,
                     const std::vector<Tensor>& leaves, Rng& rng,
                     int directions = 3, double h = 1e-5,
                     double tol = 1e-6) {
  const std::vector<DualTensor> g = grad(leaves);
  REQUIRE(g.size() == leaves.size());
  for (int rep = 0; rep < directions; ++rep) {
    std::vector<Tensor> dirs;
    dirs.reserve(leaves.size());
    for (const Tensor& leaf : leaves) dirs.push_back(randn(rng, leaf.shape()));
    double analytic = 0.0;
    for (std::size_t i = 0; i < leaves.size(); ++i)
      analytic += dot(g[i].value, dirs[i]);
    std::vector<Tensor> up, down;
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      up.push_back(shifted(leaves[i], dirs[i], h));
      down.push_back(shifted(leaves[i], dirs[i], -h));
    }
    const double fd = (loss(up) - loss(down)) / (2.0 * h);
    const double rel = std::abs(fd - analytic) / std::max(1.0, std::abs(analytic));
    CAPTURE(rep);
    CAPTURE(fd);
    CAPTURE(analytic);
    CHECK(rel < tol);
  }
}

// Shared dense pipeline touching most scalar/matrix primitives.
struct DensePipeline {
  Tensor x;                 // [6,7] observation block, held constant
  std::vector<int> actions{0, 2, 1, 2, 0, 1};
  Tensor weights;           // [6] per-row loss weights

  explicit DensePipeline(Rng& rng)
      : x(randn(rng, {6, 7})), weights(randn(rng, {6})) {}

  std::vector<Tensor> make_leaves(Rng& rng) const {
    return {randn(rng, {7, 5}, 0.6), randn(rng, {5}, 0.2),
            randn(rng, {5, 3}, 0.6), randn(rng, {3}, 0.2),
            randn(rng, {5, 1}, 0.6)};
  }

  Var build(Tape& t, const std::vector<Var>& p) const {
    Var xs = t.constant(DualTensor{x});
    Var h1 = t.relu(t.bias_add(t.matmul(xs, p[0]), p[1]));
    Var logits = t.bias_add(t.matmul(h1, p[2]), p[3]);
    Var lp = t.log_softmax(logits);
    Var probs = t.softmax(logits);
    Var pg = t.sum(t.mul(t.constant(DualTensor{weights}), t.gather(lp, actions)));
    Var ent = t.sum(t.mul(probs, lp));
    Var sq = t.sum(t.square(t.sigmoid(t.matmul(h1, p[4]))));
    return t.add(pg, t.add(t.scale(ent, DualScalar::constant(0.01)),
                           t.scale(sq, DualScalar::constant(0.5))));
  }

  double value(const std::vector<Tensor>& leaves) const {
    Tape t(false);
    std::vector<Var> p;
    for (const Tensor& leaf : leaves) p.push_back(t.constant(DualTensor{leaf}));
    return t.scalar_value(build(t, p));
  }

  std::vector<DualTensor> grads(const std::vector<Tensor>& leaves) const {
    Tape t;
    std::vector<Var> p;
    for (const Tensor& leaf : leaves) p.push_back(t.param(DualTensor{leaf}));
    return t.gradient(build(t, p), p);
  }
};

// Naive direct convolution used as an independent reference.
Tensor conv2d_reference(const Tensor& x, const Tensor& w) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  Tensor out({N, O, H, W});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
          double acc = 0.0;
          for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int sy = y + ky - ph, sx = xx + kx - pw;
                if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                acc += x[((static_cast<std::size_t>(n) * C + c) * H + sy) * W + sx] *
                       w[((static_cast<std::size_t>(o) * C + c) * kh + ky) * kw + kx];
              }
          out[((static_cast<std::size_t>(n) * O + o) * H + y) * W + xx] = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("dense pipeline gradients match central differences") {
  Rng rng(7);
  DensePipeline pipe(rng);
  std::vector<Tensor> leaves = pipe.make_leaves(rng);
  check_gradients([&](const std::vector<Tensor>& l) { return pipe.value(l); },
                  [&](const std::vector<Tensor>& l) { return pipe.grads(l); },
                  leaves, rng);
}

TEST_CASE("convolution matches a naive direct implementation") {
  Rng rng(11);
  Tensor x = randn(rng, {2, 3, 5, 5});
  Tensor w = randn(rng, {4, 3, 3, 3});
  Tape t;
  Var out = t.conv2d(t.constant(DualTensor{x}), t.constant(DualTensor{w}));
  Tensor ref = conv2d_reference(x, w);
  REQUIRE(t.value(out).same_shape(ref));
  for (std::size_t i = 0; i < ref.size(); ++i)
    CHECK(t.value(out)[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("convolution pipeline gradients match central differences") {
  Rng rng(13);
  Tensor x = randn(rng, {2, 3, 5, 5});
  auto build = [&](Tape& t, const std::vector<Var>& p) {
    Var xs = t.constant(DualTensor{x});
    Var conv = t.relu(t.bias_add_channels(t.conv2d(xs, p[0]), p[1]));
    Var flat = t.flatten2d(conv);
    Var dense = t.bias_add(t.matmul(flat, p[2]), p[3]);
    return t.sum(t.square(dense));
  };
  std::vector<Tensor> leaves = {randn(rng, {4, 3, 3, 3}, 0.4),
                                randn(rng, {4}, 0.1),
                                randn(rng, {100, 2}, 0.2),
                                randn(rng, {2}, 0.1)};
  auto value = [&](const std::vector<Tensor>& l) {
    Tape t(false);
    std::vector<Var> p;
    for (const Tensor& leaf : l) p.push_back(t.constant(DualTensor{leaf}));
    return t.scalar_value(build(t, p));
  };
  auto grads = [&](const std::vector<Tensor>& l) {
    Tape t;
    std::vector<Var> p;
    for (const Tensor& leaf : l) p.push_back(t.param(DualTensor{leaf}));
    return t.gradient(build(t, p), p);
  };
  check_gradients(value, grads, leaves, rng);
}

TEST_CASE("forward-over-reverse tangents equal meta finite differences") {
  Rng rng(17);
  DensePipeline pipe(rng);
  std::vector<Tensor> base = pipe.make_leaves(rng);
  std::vector<Tensor> dir;
  for (const Tensor& b : base) dir.push_back(randn(rng, b.shape()));

  auto at_z = [&](double z) {
    std::vector<Tensor> shiftedLeaves;
    for (std::size_t i = 0; i < base.size(); ++i)
      shiftedLeaves.push_back(shifted(base[i], dir[i], z));
    return shiftedLeaves;
  };

  // Dual leaves: value theta + z*D at z=0, tangent D.
  Tape t;
  std::vector<Var> p;
  for (std::size_t i = 0; i < base.size(); ++i)
    p.push_back(t.param(DualTensor{base[i], dir[i]}));
  Var loss = pipe.build(t, p);

  const double h = 1e-5;
  const double fd_loss = (pipe.value(at_z(h)) - pipe.value(at_z(-h))) / (2 * h);
  CHECK(std::abs(t.meta_directional_derivative(loss) - fd_loss) /
            std::max(1.0, std::abs(fd_loss)) <
        1e-7);

  // Gradient tangents: phi(z) = <c, grad L(theta + z D)>.
  std::vector<DualTensor> g = t.gradient(loss, p);
  std::vector<Tensor> c;
  for (const Tensor& b : base) c.push_back(randn(rng, b.shape()));
  double analytic = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    REQUIRE(g[i].has_tangent());
    analytic += dot(c[i], *g[i].tangent);
  }
  auto phi = [&](double z) {
    std::vector<DualTensor> gz = pipe.grads(at_z(z));
    double acc = 0.0;
    for (std::size_t i = 0; i < gz.size(); ++i) acc += dot(c[i], gz[i].value);
    return acc;
  };
  const double fd_phi = (phi(h) - phi(-h)) / (2 * h);
  CHECK(std::abs(analytic - fd_phi) / std::max(1.0, std::abs(fd_phi)) < 1e-6);
}

TEST_CASE("zero tangents reproduce the plain computation bitwise") {
  Rng rng(23);
  DensePipeline pipe(rng);
  std::vector<Tensor> leaves = pipe.make_leaves(rng);

  Tape plain;
  std::vector<Var> pp;
  for (const Tensor& leaf : leaves) pp.push_back(plain.param(DualTensor{leaf}));
  Var lossPlain = pipe.build(plain, pp);

  Tape dualed;
  std::vector<Var> pd;
  for (const Tensor& leaf : leaves)
    pd.push_back(dualed.param(DualTensor{leaf, Tensor(leaf.shape())}));
  Var lossDual = pipe.build(dualed, pd);

  // identical bit patterns for the loss ...
  const double lv = plain.scalar_value(lossPlain);
  const double ld = dualed.scalar_value(lossDual);
  CHECK(std::memcmp(&lv, &ld, sizeof lv) == 0);

  // ... and for every gradient entry
  std::vector<DualTensor> gPlain = plain.gradient(lossPlain, pp);
  std::vector<DualTensor> gDual = dualed.gradient(lossDual, pd);
  for (std::size_t i = 0; i < gPlain.size(); ++i) {
    REQUIRE(gPlain[i].value.size() == gDual[i].value.size());
    CHECK(std::memcmp(gPlain[i].value.data(), gDual[i].value.data(),
                      gPlain[i].value.size() * sizeof(double)) == 0);
    if (gDual[i].has_tangent()) {
      for (std::size_t j = 0; j < gDual[i].tangent->size(); ++j)
        CHECK((*gDual[i].tangent)[j] == 0.0);
    }
  }
}

TEST_CASE("stop_gradient blocks reverse flow and passes values and tangents") {
  Rng rng(31);
  Tensor x = randn(rng, {4, 3});
  Tensor w0 = randn(rng, {3, 2});
  Tensor dw = randn(rng, {3, 2});

  Tape t;
  Var w = t.param(DualTensor{w0, dw});
  Var h = t.matmul(t.constant(DualTensor{x}), w);
  Var frozen = t.stop_gradient(h);
  // identity forward: values and tangents are untouched
  for (std::size_t i = 0; i < t.value(h).size(); ++i) {
    CHECK(t.value(frozen)[i] == t.value(h)[i]);
    CHECK((*t.dual(frozen).tangent)[i] == (*t.dual(h).tangent)[i]);
  }
  // L = sum(sg(h) * h): gradient flows only through the live factor
  Var loss = t.sum(t.mul(frozen, h));
  std::vector<DualTensor> g = t.gradient(loss, {w});
  Tensor expected = dualops::gemm(x, dualops::gemm(x, w0), true, false);
  for (std::size_t i = 0; i < expected.size(); ++i)
    CHECK(g[0].value[i] == doctest::Approx(expected[i]).epsilon(1e-12));

  // a loss entirely behind the stop yields exact zeros
  Tape t2;
  Var w2 = t2.param(DualTensor{w0});
  Var loss2 = t2.sum(t2.square(t2.stop_gradient(
      t2.matmul(t2.constant(DualTensor{x}), w2))));
  std::vector<DualTensor> g2 = t2.gradient(loss2, {w2});
  for (std::size_t i = 0; i < g2[0].value.size(); ++i)
    CHECK(g2[0].value[i] == 0.0);
}

TEST_CASE("record lifecycle and shape violations raise typed errors") {
  Rng rng(37);
  Tensor a = randn(rng, {2, 3});
  Tensor b = randn(rng, {3, 2});

  SUBCASE("a record differentiates exactly once") {
    Tape t;
    Var w = t.param(DualTensor{a});
    Var loss = t.sum(t.square(w));
    (void)t.gradient(loss, {w});
    CHECK_THROWS_AS((void)t.gradient(loss, {w}), StateError);
  }
  SUBCASE("non-recording tapes cannot be differentiated") {
    Tape t(false);
    Var w = t.param(DualTensor{a});
    Var loss = t.sum(t.square(w));
    CHECK_THROWS_AS((void)t.gradient(loss, {w}), StateError);
  }
  SUBCASE("mismatched operands raise ShapeError") {
    Tape t;
    Var x = t.constant(DualTensor{a});
    CHECK_THROWS_AS((void)t.matmul(x, x), ShapeError);
    CHECK_THROWS_AS((void)t.add(x, t.constant(DualTensor{b})), ShapeError);
    CHECK_THROWS_AS((void)t.gather(x, {0, 5}), ShapeError);
    CHECK_THROWS_AS((void)t.gradient(x, {x}), ShapeError);
  }
  SUBCASE("non-finite values raise NumericalError") {
    Tape t;
    Tensor big({1, 2}, 1e200);
    Var x = t.param(DualTensor{big});
    CHECK_THROWS_AS((void)t.square(x), NumericalError);
    Tensor inf({2}, std::vector<double>{1.0, INFINITY});
    CHECK_THROWS_AS((void)t.constant(DualTensor{inf}), NumericalError);
  }
  SUBCASE("tangent shape must match value shape") {
    CHECK_THROWS_AS(DualTensor(a, b), ShapeError);
  }
}

TEST_CASE("softmax and log_softmax agree and normalise") {
  Rng rng(41);
  Tensor logits = randn(rng, {5, 4}, 3.0);
  Tape t;
  Var x = t.constant(DualTensor{logits});
  Var ps = t.softmax(x);
  Var lps = t.log_softmax(x);
  const Tensor p = t.value(ps);
  const Tensor lp = t.value(lps);
  for (int i = 0; i < 5; ++i) {
    double rowsum = 0.0;
    for (int j = 0; j < 4; ++j) {
      rowsum += p[static_cast<std::size_t>(i) * 4 + j];
      CHECK(std::exp(lp[static_cast<std::size_t>(i) * 4 + j]) ==
            doctest::Approx(p[static_cast<std::size_t>(i) * 4 + j]).epsilon(1e-12));
    }
    CHECK(rowsum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

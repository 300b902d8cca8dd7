#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "partseg/autodiff.hpp"
#include "partseg/tensor.hpp"
#include "testutil.hpp"

using namespace partseg;
using testutil::check_gradients;
using testutil::random_param;
using testutil::random_tensor;

namespace {
constexpr double kTol = 1e-6;  // generous for double-precision central differences
}

TEST_CASE("tensors are row major and shape checked") {
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.at(0, 2) == 3);
  CHECK(t.at(1, 0) == 4);
  CHECK(t.dim(0) == 2);
  CHECK(t.size() == 6);
  CHECK(t.sum() == doctest::Approx(21.0));
  CHECK(t.min() == 1.0);
  CHECK(t.max() == 6.0);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0}), ShapeMismatch);

  Tensor r3 = Tensor::from({2, 2, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
  CHECK(r3.at(1, 0, 1) == 5);
  CHECK(r3.at(0, 1, 0) == 2);
}

TEST_CASE("checksums see every bit") {
  Tensor a = Tensor::from({2}, {1.0, 2.0});
  Tensor b = Tensor::from({2}, {1.0, 2.0000000000000004});
  CHECK(a.checksum() != b.checksum());
}

TEST_CASE("constants fold and guards suppress the tape") {
  ad::Var a = ad::Var::constant(Tensor::from({2}, {1, 2}));
  ad::Var b = ad::Var::constant(Tensor::from({2}, {3, 4}));
  ad::Var c = ad::add(a, b);
  CHECK(!c.requires_grad());
  CHECK(c.node()->parents.empty());

  ad::Var p = ad::Var::param(Tensor::from({2}, {1, 2}));
  {
    ad::NoGradGuard off;
    ad::Var d = ad::add(p, b);
    CHECK(!d.requires_grad());
    CHECK(d.node()->parents.empty());
  }
  ad::Var e = ad::add(p, b);
  CHECK(e.requires_grad());
}

TEST_CASE("backward demands a scalar") {
  ad::Var p = ad::Var::param(Tensor::from({2}, {1, 2}));
  CHECK_THROWS_AS(ad::backward(ad::mul_scalar(p, 2.0)), ShapeMismatch);
}

TEST_CASE("gradients accumulate across shared subexpressions") {
  ad::Var p = ad::Var::param(Tensor::scalar(3.0));
  ad::Var y = ad::add(ad::mul(p, p), p);  // x^2 + x -> dy/dx = 2x + 1
  ad::backward(y);
  CHECK(p.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("elementwise and scalar op gradients match finite differences") {
  Rng rng(11);
  for (int it = 0; it < 20; ++it) {
    ad::Var a = random_param(rng, {3, 4}, -2.0, 2.0);
    ad::Var b = random_param(rng, {3, 4}, -2.0, 2.0);
    auto res = check_gradients(
        [&] {
          ad::Var x = ad::add(ad::mul(a, b), ad::sub(a, b));
          x = ad::add_scalar(ad::mul_scalar(x, 1.7), 0.3);
          x = ad::add(ad::tanh_(x), ad::sigmoid(ad::neg(x)));
          return ad::mean(x);
        },
        {a, b});
    CHECK(res.max_rel < kTol);
  }
}

TEST_CASE("relu gradient away from the kink") {
  Rng rng(12);
  for (int it = 0; it < 20; ++it) {
    // keep all magnitudes above 0.1 so the finite difference never crosses 0
    Tensor t = random_tensor(rng, {4, 4}, 0.1, 1.5);
    for (std::int64_t i = 0; i < t.size(); ++i)
      if (rng.uniform01() < 0.5) t[i] = -t[i];
    ad::Var a = ad::Var::param(t);
    auto res = check_gradients([&] { return ad::sum(ad::relu(a)); }, {a});
    CHECK(res.max_rel < kTol);
  }
}

TEST_CASE("matmul agrees with a naive triple loop and its gradient checks") {
  Rng rng(13);
  ad::Var a = random_param(rng, {3, 4}, -1.0, 1.0);
  ad::Var b = random_param(rng, {4, 2}, -1.0, 1.0);
  Tensor prod = ad::matmul(a, b).value();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) {
      double acc = 0;
      for (int k = 0; k < 4; ++k) acc += a.value().at(i, k) * b.value().at(k, j);
      CHECK(prod.at(i, j) == doctest::Approx(acc).epsilon(1e-12));
    }
  auto res = check_gradients([&] { return ad::mean(ad::matmul(a, b)); }, {a, b});
  CHECK(res.max_rel < kTol);
  CHECK_THROWS_AS(ad::matmul(a, a), ShapeMismatch);
}

TEST_CASE("transpose, concat and reshape move gradients to the right slots") {
  Rng rng(14);
  ad::Var a = random_param(rng, {2, 3}, -1.0, 1.0);
  ad::Var b = random_param(rng, {2, 2}, -1.0, 1.0);
  auto res = check_gradients(
      [&] {
        ad::Var t = ad::transpose(a);              // [3,2]
        ad::Var c = ad::concat(b, a);              // [2,5] by columns
        ad::Var r = ad::reshape(t, {2, 3});
        return ad::add(ad::mean(c), ad::mean(ad::mul(r, r)));
      },
      {a, b});
  CHECK(res.max_rel < kTol);

  ad::Var v1 = random_param(rng, {3}, -1.0, 1.0);
  ad::Var v2 = random_param(rng, {2}, -1.0, 1.0);
  ad::Var cat = ad::concat(v1, v2);
  CHECK(cat.value().shape() == std::vector<int>{5});
  CHECK(cat.value()[3] == v2.value()[0]);
  auto res1 = check_gradients([&] { return ad::sum(ad::mul(ad::concat(v1, v2),
                                                           ad::concat(v1, v2))); },
                              {v1, v2});
  CHECK(res1.max_rel < kTol);
  CHECK_THROWS_AS(ad::concat(v1, a), KindMismatch);
}

TEST_CASE("linear_rows and matvec gradients") {
  Rng rng(15);
  for (int it = 0; it < 10; ++it) {
    ad::Var x = random_param(rng, {5, 3}, -1.0, 1.0);
    ad::Var w = random_param(rng, {2, 3}, -1.0, 1.0);
    ad::Var b = random_param(rng, {2}, -1.0, 1.0);
    auto res = check_gradients([&] { return ad::mean(ad::linear_rows(x, w, b)); }, {x, w, b});
    CHECK(res.max_rel < kTol);

    ad::Var v = random_param(rng, {3}, -1.0, 1.0);
    auto res2 = check_gradients([&] { return ad::sum(ad::matvec(w, v, b)); }, {w, v, b});
    CHECK(res2.max_rel < kTol);
  }
}

TEST_CASE("softmax rows are stochastic and differentiate correctly") {
  Rng rng(16);
  ad::Var a = random_param(rng, {4, 6}, -3.0, 3.0);
  Tensor s = ad::softmax_rows(a).value();
  for (int i = 0; i < 4; ++i) {
    double row = 0;
    for (int j = 0; j < 6; ++j) row += s.at(i, j);
    CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
  }
  ad::Var probe = ad::Var::constant(random_tensor(rng, {4, 6}, -1.0, 1.0));
  auto res = check_gradients([&] { return ad::sum(ad::mul(ad::softmax_rows(a), probe)); }, {a});
  CHECK(res.max_rel < kTol);
}

TEST_CASE("row-vector broadcast ops") {
  Rng rng(17);
  ad::Var a = random_param(rng, {3, 4}, -1.0, 1.0);
  ad::Var v = random_param(rng, {4}, 0.5, 1.5);
  Tensor out = ad::mul_rowvec(a, v).value();
  CHECK(out.at(1, 2) == doctest::Approx(a.value().at(1, 2) * v.value()[2]));
  auto res = check_gradients(
      [&] { return ad::mean(ad::add_rowvec(ad::mul_rowvec(a, v), v)); }, {a, v});
  CHECK(res.max_rel < kTol);
}

TEST_CASE("reductions and row means") {
  Rng rng(18);
  ad::Var a = random_param(rng, {5, 3}, -1.0, 1.0);
  auto res = check_gradients(
      [&] {
        ad::Var m = ad::mean_rows(a, {0, 2, 4});
        return ad::add(ad::sum(ad::mul(m, m)), ad::mean(a));
      },
      {a});
  CHECK(res.max_rel < kTol);
  CHECK(ad::mean_rows(a, {1}).value().shape() == std::vector<int>{3});
  CHECK_THROWS_AS(ad::mean_rows(a, {}), EmptyMask);

  Tensor mr = ad::mean_rows(a, {0, 2}).value();
  for (int j = 0; j < 3; ++j)
    CHECK(mr[j] == doctest::Approx(0.5 * (a.value().at(0, j) + a.value().at(2, j))));
}

TEST_CASE("scalar division") {
  ad::Var a = ad::Var::param(Tensor::scalar(3.0));
  ad::Var b = ad::Var::param(Tensor::scalar(4.0));
  auto res = check_gradients([&] { return ad::div(ad::mul(a, a), b); }, {a, b});
  CHECK(res.max_rel < kTol);
  CHECK(ad::div(a, b).value()[0] == doctest::Approx(0.75));
}

TEST_CASE("min over scalars routes the gradient to the active argument") {
  ad::Var a = ad::Var::param(Tensor::scalar(0.7));
  ad::Var b = ad::Var::param(Tensor::scalar(0.3));
  ad::Var c = ad::Var::param(Tensor::scalar(0.9));
  ad::Var m = ad::min_scalars({a, b, c});
  CHECK(m.value()[0] == doctest::Approx(0.3));
  ad::backward(m);
  CHECK(b.grad()[0] == doctest::Approx(1.0));
  CHECK(a.node()->grad.defined() ? a.grad()[0] == 0.0 : true);
  auto res = check_gradients([&] { return ad::min_scalars({a, b, c}); }, {a, b, c});
  CHECK(res.max_rel < kTol);
}

TEST_CASE("masked max picks the best on-mask element") {
  Tensor mask = Tensor::from({2, 2}, {1, 0, 1, 0});
  ad::Var a = ad::Var::param(Tensor::from({2, 2}, {0.2, 9.0, 0.8, 9.0}));
  ad::Var m = ad::masked_max(a, mask);
  CHECK(m.value()[0] == doctest::Approx(0.8));
  ad::backward(m);
  CHECK(a.grad().at(1, 0) == doctest::Approx(1.0));
  CHECK(a.grad().at(0, 1) == doctest::Approx(0.0));
  CHECK_THROWS_AS(ad::masked_max(a, Tensor::zeros({2, 2})), EmptyMask);

  Rng rng(19);
  for (int it = 0; it < 10; ++it) {
    // distinct values keep the argmax stable under the probe offset
    Tensor vals = Tensor::zeros({3, 3});
    for (int i = 0; i < 9; ++i) vals[i] = 0.11 * i + rng.uniform(0.0, 0.05);
    Tensor msk = Tensor::zeros({3, 3});
    int on = 0;
    for (int i = 0; i < 9; ++i)
      if (rng.uniform01() < 0.6) {
        msk[i] = 1;
        ++on;
      }
    if (on == 0) msk[4] = 1;
    ad::Var p = ad::Var::param(vals);
    auto res = check_gradients([&] { return ad::masked_max(p, msk); }, {p});
    CHECK(res.max_rel < kTol);
  }
}

TEST_CASE("min-max normalization maps extremes to 0 and 1") {
  ad::Var a = ad::Var::param(Tensor::from({1, 3}, {2, 4, 6}));
  Tensor n = ad::minmax_normalize(a).value();
  CHECK(n[0] == doctest::Approx(0.0));
  CHECK(n[1] == doctest::Approx(0.5));
  CHECK(n[2] == doctest::Approx(1.0));

  ad::Var flat = ad::Var::param(Tensor::full({2, 2}, 3.25));
  Tensor nf = ad::minmax_normalize(flat).value();
  CHECK(nf.min() == 0.0);
  CHECK(nf.max() == 0.0);
  ad::backward(ad::sum(ad::minmax_normalize(flat)));
  // a constant input contributes nothing, so the leaf grad stays untouched
  const Tensor& fg = flat.node()->grad;
  CHECK((!fg.defined() || (fg.max() == 0.0 && fg.min() == 0.0)));
}

TEST_CASE("min-max normalization gradient, including the extremes") {
  Rng rng(20);
  for (int it = 0; it < 20; ++it) {
    // jittered distinct values so min/max stay unique under the FD probe
    Tensor t = Tensor::zeros({3, 4});
    std::vector<int> slots(12);
    for (int i = 0; i < 12; ++i) slots[static_cast<std::size_t>(i)] = i;
    rng.shuffle(slots);
    for (int i = 0; i < 12; ++i)
      t[slots[static_cast<std::size_t>(i)]] = 0.2 * i + rng.uniform(0.0, 0.08);
    ad::Var a = ad::Var::param(t);
    ad::Var probe = ad::Var::constant(random_tensor(rng, {3, 4}, -1.0, 1.0));
    auto res = check_gradients(
        [&] { return ad::sum(ad::mul(ad::minmax_normalize(a), probe)); }, {a});
    CHECK(res.max_rel < kTol);
  }
}

TEST_CASE("symmetric-padded convolution preserves mass and differentiates") {
  Tensor kernel = Tensor::from({3, 3}, {0.05, 0.1, 0.05, 0.1, 0.4, 0.1, 0.05, 0.1, 0.05});

  // impulse in every position, including corners: blurred mass stays 1
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      Tensor im = Tensor::zeros({4, 4});
      im.at(i, j) = 1.0;
      Tensor out = ad::conv2d_symmetric(ad::Var::constant(im), kernel).value();
      CHECK(out.sum() == doctest::Approx(1.0).epsilon(1e-12));
    }

  Rng rng(21);
  for (int it = 0; it < 10; ++it) {
    ad::Var a = random_param(rng, {5, 4}, -1.0, 1.0);
    ad::Var probe = ad::Var::constant(random_tensor(rng, {5, 4}, -1.0, 1.0));
    auto res = check_gradients(
        [&] { return ad::sum(ad::mul(ad::conv2d_symmetric(a, kernel), probe)); }, {a});
    CHECK(res.max_rel < kTol);
  }
}

TEST_CASE("symmetric padding reflects edge-inclusively") {
  // left neighbor of the first column is the first column itself
  // (edge-inclusive reflection d c b a | a b c d)
  Tensor kernel = Tensor::zeros({3, 3});
  kernel.at(1, 0) = 1.0;  // picks the left neighbor
  Tensor im = Tensor::from({1, 2}, {5.0, 7.0});
  Tensor out = ad::conv2d_symmetric(ad::Var::constant(im), kernel).value();
  CHECK(out[0] == doctest::Approx(5.0));
  CHECK(out[1] == doctest::Approx(5.0));
}

TEST_CASE("bilinear upsampling matches an independent lerp oracle") {
  Rng rng(22);
  int factor = 2;
  ad::Var a = random_param(rng, {3, 2}, -1.0, 1.0);
  Tensor up = ad::upsample_bilinear(a, factor).value();
  REQUIRE(up.shape() == std::vector<int>{6, 4});

  auto sample = [&](double si, double sj) {
    const Tensor& src = a.value();
    int h = src.dim(0), w = src.dim(1);
    int i0 = static_cast<int>(std::floor(si)), j0 = static_cast<int>(std::floor(sj));
    double fi = si - i0, fj = sj - j0;
    auto clamp = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
    int i0c = clamp(i0, h - 1), i1c = clamp(i0 + 1, h - 1);
    int j0c = clamp(j0, w - 1), j1c = clamp(j0 + 1, w - 1);
    return (1 - fi) * ((1 - fj) * src.at(i0c, j0c) + fj * src.at(i0c, j1c)) +
           fi * ((1 - fj) * src.at(i1c, j0c) + fj * src.at(i1c, j1c));
  };
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 4; ++j) {
      double si = (i + 0.5) / factor - 0.5;
      double sj = (j + 0.5) / factor - 0.5;
      si = std::max(0.0, std::min(si, 2.0));
      sj = std::max(0.0, std::min(sj, 1.0));
      CHECK(up.at(i, j) == doctest::Approx(sample(si, sj)).epsilon(1e-12));
    }

  ad::Var probe = ad::Var::constant(random_tensor(rng, {6, 4}, -1.0, 1.0));
  auto res = check_gradients(
      [&] { return ad::sum(ad::mul(ad::upsample_bilinear(a, factor), probe)); }, {a});
  CHECK(res.max_rel < kTol);
}

TEST_CASE("binary cross entropy with logits is stable and correct") {
  ad::Var zero = ad::Var::param(Tensor::zeros({2, 2}));
  Tensor target = Tensor::from({2, 2}, {0, 1, 1, 0});
  CHECK(ad::bce_with_logits_mean(zero, target).value()[0] ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // saturated logits stay finite and approach |z| on the wrong side
  ad::Var big = ad::Var::param(Tensor::from({1, 2}, {500.0, -500.0}));
  Tensor t2 = Tensor::from({1, 2}, {0.0, 1.0});
  double v = ad::bce_with_logits_mean(big, t2).value()[0];
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(500.0).epsilon(1e-9));

  Rng rng(23);
  for (int it = 0; it < 20; ++it) {
    ad::Var logits = random_param(rng, {3, 5}, -4.0, 4.0);
    Tensor tgt = Tensor::zeros({3, 5});
    for (std::int64_t i = 0; i < tgt.size(); ++i) tgt[i] = rng.uniform01() < 0.5 ? 0.0 : 1.0;
    auto res = check_gradients([&] { return ad::bce_with_logits_mean(logits, tgt); }, {logits});
    CHECK(res.max_rel < kTol);
  }
}

TEST_CASE("deterministic rng transforms are sequence-stable") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    CHECK(a.uniform01() == b.uniform01());
    CHECK(a.normal() == b.normal());
    CHECK(a.uniform_int(97) == b.uniform_int(97));
  }
  Rng c(43);
  bool differs = false;
  Rng a2(42);
  for (int i = 0; i < 10; ++i) differs = differs || (a2.uniform01() != c.uniform01());
  CHECK(differs);
}

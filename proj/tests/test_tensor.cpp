#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "g2c/errors.hpp"
#include "g2c/rng.hpp"
#include "g2c/tensor.hpp"

using namespace g2c;

TEST_CASE("matmul basics") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor c = matmul(a, eye);
  CHECK(c.at(0, 0) == 1);
  CHECK(c.at(0, 1) == 2);
  CHECK(c.at(1, 0) == 3);
  CHECK(c.at(1, 1) == 4);

  // dot product evaluated by hand: 1*3 + 2*4 = 11
  Tensor r = matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4}));
  CHECK(r.at(0, 0) == doctest::Approx(11.0).epsilon(1e-15));

  Tensor z = matmul(Tensor::zeros({2, 3}), Tensor::from({3, 4}, std::vector<double>(12, 7.0)));
  for (double v : z.data()) CHECK(v == 0.0);

  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST_CASE("softmax values and invariants") {
  Tensor s = softmax_lastdim(Tensor::from({2}, {0, 0}));
  CHECK(s.at(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(s.at(1) == doctest::Approx(0.5).epsilon(1e-12));

  Tensor t = softmax_lastdim(Tensor::from({2}, {std::log(2.0), 0.0}));
  CHECK(t.at(0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(t.at(1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  // shift invariance
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v(5);
    for (double& x : v) x = -50.0 + 100.0 * rng.uniform();
    const double c = -20.0 + 40.0 * rng.uniform();
    std::vector<double> shifted = v;
    for (double& x : shifted) x += c;
    Tensor p = softmax_lastdim(Tensor::from({5}, v));
    Tensor q = softmax_lastdim(Tensor::from({5}, shifted));
    double total = 0.0;
    for (int i = 0; i < 5; ++i) {
      CHECK(p.at(i) == doctest::Approx(q.at(i)).epsilon(1e-12));
      CHECK(p.at(i) >= 0.0);
      total += p.at(i);
    }
    CHECK(std::abs(total - 1.0) <= 1e-9);
  }

  // rows of a 2D input each sum to 1
  Tensor m = Tensor::zeros({8, 6});
  for (double& x : m.data()) x = -50.0 + 100.0 * rng.uniform();
  Tensor pm = softmax_lastdim(m);
  for (int i = 0; i < 8; ++i) {
    double total = 0.0;
    for (int j = 0; j < 6; ++j) total += pm.at(i, j);
    CHECK(std::abs(total - 1.0) <= 1e-9);
  }

  CHECK_THROWS_AS(softmax_lastdim(Tensor::zeros({3, 0})), DimensionError);
}

TEST_CASE("layer_norm values") {
  Tensor gamma = Tensor::from({2}, {1, 1});
  Tensor beta = Tensor::from({2}, {0, 0});

  // constant row: numerator is exactly zero regardless of eps
  Tensor c = layer_norm(Tensor::from({1, 2}, {3, 3}), gamma, beta, 1e-5);
  CHECK(c.at(0, 0) == 0.0);
  CHECK(c.at(0, 1) == 0.0);

  // mean 0, variance 1 by hand
  Tensor u = layer_norm(Tensor::from({1, 2}, {1, -1}), gamma, beta, 1e-12);
  CHECK(u.at(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(u.at(0, 1) == doctest::Approx(-1.0).epsilon(1e-9));

  // gamma = 0 leaves only beta
  Tensor b = layer_norm(Tensor::from({1, 2}, {5, -2}), Tensor::from({2}, {0, 0}),
                        Tensor::from({2}, {4, 9}), 1e-5);
  CHECK(b.at(0, 0) == 4.0);
  CHECK(b.at(0, 1) == 9.0);

  CHECK_THROWS_AS(layer_norm(Tensor::zeros({1, 3}), gamma, beta, 1e-5), DimensionError);
}

TEST_CASE("cross entropy values") {
  const int k = 7;
  Tensor uniform = Tensor::zeros({k});
  CHECK(cross_entropy_logits(uniform, 3).item() == doctest::Approx(std::log(7.0)).epsilon(1e-12));

  Tensor saturated = Tensor::from({2}, {40, -40});
  CHECK(cross_entropy_logits(saturated, 0).item() <= 1e-12);

  // -log softmax([1,0])[1] = ln(1 + e)
  Tensor two = Tensor::from({2}, {1, 0});
  CHECK(cross_entropy_logits(two, 1).item() ==
        doctest::Approx(std::log(1.0 + std::exp(1.0))).epsilon(1e-12));
  CHECK(cross_entropy_logits(two, 1).item() == doctest::Approx(1.3132616875182228).epsilon(1e-12));

  CHECK_THROWS_AS(cross_entropy_logits(two, 2), DimensionError);
  CHECK_THROWS_AS(cross_entropy_logits(two, -1), DimensionError);
}

TEST_CASE("backward on bilinear form gives the other factor") {
  Tensor x = Tensor::from({4}, {1, 2, 3, 4}, true);
  Tensor y = Tensor::from({4}, {5, 6, 7, 8}, true);
  {
    Tape tape;
    Tensor loss = sum(mul(x, y));
    backward(loss);
  }
  for (int i = 0; i < 4; ++i) {
    CHECK(x.grad()[i] == y.at(i));
    CHECK(y.grad()[i] == x.at(i));
  }
}

TEST_CASE("gradients accumulate when a tensor is used twice") {
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  {
    Tape tape;
    Tensor loss = sum(add(x, x));
    backward(loss);
  }
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == 2.0);
}

TEST_CASE("matmul gradients match finite differences") {
  Rng rng(11);
  Tensor a = Tensor::randn({3, 4}, rng, 1.0, true);
  Tensor b = Tensor::randn({4, 2}, rng, 1.0, true);
  auto f = [&]() { return sum(matmul(a, b)); };
  CHECK(finite_diff_check(f, {a, b}, 1e-5) <= 1e-6);
}

TEST_CASE("finite differences on composite expression") {
  Rng rng(13);
  Tensor a = Tensor::randn({3, 5}, rng, 0.5, true);
  Tensor w = Tensor::randn({5, 4}, rng, 0.5, true);
  Tensor bias = Tensor::randn({4}, rng, 0.5, true);
  Tensor gamma = Tensor::randn({4}, rng, 0.3, true);
  Tensor beta = Tensor::randn({4}, rng, 0.3, true);
  auto f = [&]() {
    Tensor h = layer_norm(gelu(add_rowwise(matmul(a, w), bias)), gamma, beta, 1e-5);
    Tensor p = softmax_lastdim(h);
    return sum(mul(p, p));
  };
  CHECK(finite_diff_check(f, {a, w, bias, gamma, beta}, 1e-5) <= 1e-4);
}

TEST_CASE("finite_diff_check edge cases") {
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  // central differences are exact for linear functions
  CHECK(finite_diff_check([&]() { return sum(scale(x, 2.5)); }, {x}, 1e-5) <= 1e-9);
  // constant function: both sides zero
  CHECK(finite_diff_check([&]() { return Tensor::scalar(4.0); }, {x}, 1e-5) == 0.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tape tape;
  Tensor y = add(x, x);
  CHECK_THROWS_AS(backward(y), DimensionError);
}

TEST_CASE("two identical passes produce bit-identical gradients") {
  auto run = [](std::vector<double>& gx, std::vector<double>& gw) {
    Rng rng(99);
    Tensor x = Tensor::randn({4, 6}, rng, 1.0, true);
    Tensor w = Tensor::randn({6, 3}, rng, 1.0, true);
    {
      Tape tape;
      Tensor h = softmax_lastdim(matmul(x, w));
      Tensor loss = sum(mul(h, h));
      backward(loss);
    }
    gx = x.grad();
    gw = w.grad();
  };
  std::vector<double> gx1, gw1, gx2, gw2;
  run(gx1, gw1);
  run(gx2, gw2);
  CHECK(gx1 == gx2);
  CHECK(gw1 == gw2);
}

TEST_CASE("gather and pool relation ops") {
  // s: 2x3, idx over 2x2 pairs
  Tensor s = Tensor::from({2, 3}, {10, 11, 12, 20, 21, 22}, true);
  IndexMatrix idx(2, 2);
  idx.at(0, 0) = 0;
  idx.at(0, 1) = 2;
  idx.at(1, 0) = 1;
  idx.at(1, 1) = 0;

  Tensor gr = pair_gather_rows(s, idx);
  CHECK(gr.at(0, 0) == 10);
  CHECK(gr.at(0, 1) == 12);
  CHECK(gr.at(1, 0) == 21);
  CHECK(gr.at(1, 1) == 20);

  Tensor gc = pair_gather_cols(s, idx);
  CHECK(gc.at(0, 0) == 10);  // s[0][0]
  CHECK(gc.at(0, 1) == 22);  // s[1][2]
  CHECK(gc.at(1, 0) == 11);  // s[0][1]
  CHECK(gc.at(1, 1) == 20);  // s[1][0]

  Tensor p = Tensor::from({2, 2}, {0.25, 0.75, 0.5, 0.5}, true);
  Tensor pooled = pool_relations(p, idx, 3);
  CHECK(pooled.at(0, 0) == 0.25);
  CHECK(pooled.at(0, 2) == 0.75);
  CHECK(pooled.at(1, 0) == 0.5);
  CHECK(pooled.at(1, 1) == 0.5);

  auto f = [&]() { return sum(mul(pair_gather_rows(s, idx), pair_gather_cols(s, idx))); };
  CHECK(finite_diff_check(f, {s}, 1e-6) <= 1e-6);
  auto g = [&]() { return sum(mul(pool_relations(p, idx, 3), pool_relations(p, idx, 3))); };
  CHECK(finite_diff_check(g, {p}, 1e-6) <= 1e-6);

  IndexMatrix bad(2, 2);
  bad.at(0, 0) = 5;
  CHECK_THROWS_AS(pair_gather_rows(s, bad), DimensionError);
}

TEST_CASE("masked columns get zero softmax weight") {
  Tensor x = Tensor::from({2, 4}, {1, 2, 3, 4, -1, 0, 1, 2}, true);
  Tensor masked = mask_columns_from(x, 2);
  Tensor p = softmax_lastdim(masked);
  for (int i = 0; i < 2; ++i) {
    CHECK(p.at(i, 2) == 0.0);
    CHECK(p.at(i, 3) == 0.0);
    double total = 0.0;
    for (int j = 0; j < 4; ++j) total += p.at(i, j);
    CHECK(std::abs(total - 1.0) <= 1e-9);
  }
  // gradient flows only into kept columns
  {
    Tape tape;
    Tensor loss = sum(mul(softmax_lastdim(mask_columns_from(x, 2)),
                          Tensor::from({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8})));
    backward(loss);
  }
  CHECK(x.grad()[2] == 0.0);
  CHECK(x.grad()[3] == 0.0);
  CHECK(x.grad()[0] != 0.0);
}

TEST_CASE("dropout keeps expectation and blocks dropped grads") {
  Rng rng(5);
  Tensor x = Tensor::full({100}, 1.0, true);
  {
    Tape tape;
    Tensor y = dropout(x, 0.5, rng);
    backward(sum(y));
  }
  int zeros = 0;
  for (int i = 0; i < 100; ++i) {
    if (x.grad()[i] == 0.0)
      ++zeros;
    else
      CHECK(x.grad()[i] == 2.0);
  }
  CHECK(zeros > 20);
  CHECK(zeros < 80);
}

TEST_CASE("slicing ops round trip") {
  Tensor x = Tensor::from({2, 6}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}, true);
  Tensor left = cols(x, 0, 3);
  Tensor right = cols(x, 3, 3);
  Tensor back = concat_cols({left, right});
  CHECK(back.data() == x.data());

  Tensor r1 = row(x, 1);
  CHECK(r1.at(0) == 6);
  CHECK(r1.at(5) == 11);

  Tensor picked = rows(x, {1, 0, 1});
  CHECK(picked.shape() == Shape{3, 6});
  CHECK(picked.at(0, 0) == 6);
  CHECK(picked.at(2, 3) == 9);

  // gather twice accumulates twice into the source row
  {
    Tape tape;
    backward(sum(rows(x, {1, 1})));
  }
  CHECK(x.grad()[6] == 2.0);
  CHECK(x.grad()[0] == 0.0);
}

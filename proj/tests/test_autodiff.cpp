#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "npgrow/autodiff.hpp"
#include "npgrow/rng.hpp"
#include "testutil.hpp"

using namespace npgrow;
using npgrow::testing::max_rel_grad_error;
using npgrow::testing::random_tensor;

TEST_CASE("tensor basics") {
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.at(1, 2) == 6.0);
  Tensor r = t.reshaped({3, 2});
  CHECK(r.shares_buffer(t));
  Tensor c = t.clone();
  CHECK_FALSE(c.shares_buffer(t));
  c[0] = 99;
  CHECK(t[0] == 1.0);
  CHECK(t.sum() == doctest::Approx(21.0));
  CHECK_THROWS_AS(t.reshaped({4, 2}), std::invalid_argument);
}

TEST_CASE("rng determinism and state round trip") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  const auto state = a.state();
  std::vector<double> ahead;
  for (int i = 0; i < 10; ++i) ahead.push_back(a.normal());
  Rng c(0);
  c.set_state(state);
  for (int i = 0; i < 10; ++i) CHECK(c.normal() == ahead[static_cast<size_t>(i)]);
  Rng d(43);
  CHECK(d.next_u64() != Rng(42).next_u64());
}

TEST_CASE("rng uniform and below bounds") {
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const int64_t k = rng.below(7);
    CHECK(k >= 0);
    CHECK(k < 7);
  }
}

TEST_CASE("elementwise op gradients") {
  Rng rng(1);
  std::vector<Tensor> in = {random_tensor(rng, {3, 4}), random_tensor(rng, {3, 4})};
  // Keep divisors away from zero.
  for (int64_t i = 0; i < in[1].size(); ++i) in[1][i] = 1.5 + 0.3 * std::tanh(in[1][i]);

  auto build = [](Tape& t, const std::vector<Var>& v) {
    Var a = v[0], b = v[1];
    Var x = add(t, mul(t, a, b), sub(t, a, b));
    x = div_ew(t, x, b);
    x = add(t, silu(t, x), softplus(t, scale(t, x, 0.5)));
    x = add(t, x, exp_ew(t, scale(t, x, 0.1)));
    x = add(t, x, log_ew(t, add_scalar(t, square(t, x), 4.0)));
    return mean_all(t, x);
  };
  CHECK(max_rel_grad_error(in, build) < 1e-6);
}

TEST_CASE("matmul family gradients") {
  Rng rng(2);
  std::vector<Tensor> in = {random_tensor(rng, {3, 5}), random_tensor(rng, {5, 4}),
                            random_tensor(rng, {2, 5}), random_tensor(rng, {4}),
                            random_tensor(rng, {4, 5})};
  auto build = [](Tape& t, const std::vector<Var>& v) {
    Var mm = matmul(t, v[0], v[1]);                 // (3,4)
    Var lin = linear(t, v[2], v[4], v[3]);          // (2,4)
    Var nt = matmul_nt(t, v[0], v[2]);              // (3,2)
    return add(t, add(t, sum_all(t, mm), sum_all(t, square(t, lin))), sum_all(t, silu(t, nt)));
  };
  CHECK(max_rel_grad_error(in, build) < 1e-6);
}

TEST_CASE("conv2d gradients stride 1 and 2") {
  Rng rng(3);
  std::vector<Tensor> in = {random_tensor(rng, {3, 8, 8}), random_tensor(rng, {4, 3, 3, 3}, 0.5),
                            random_tensor(rng, {4}), random_tensor(rng, {2, 4, 3, 3}, 0.5),
                            random_tensor(rng, {2})};
  auto build = [](Tape& t, const std::vector<Var>& v) {
    Var y = conv2d(t, v[0], v[1], v[2], 2, 1);  // (4,4,4)
    y = silu(t, y);
    y = conv2d(t, y, v[3], v[4], 1, 1);  // (2,4,4)
    return mean_all(t, square(t, y));
  };
  CHECK(max_rel_grad_error(in, build) < 1e-6);
}

TEST_CASE("conv2d matches a direct loop") {
  Rng rng(4);
  Tensor x = random_tensor(rng, {2, 5, 5});
  Tensor w = random_tensor(rng, {3, 2, 3, 3});
  Tensor b = random_tensor(rng, {3});
  Tape tape;
  Var y = conv2d(tape, tape.leaf(x), tape.leaf(w), tape.leaf(b), 1, 1);
  for (int co = 0; co < 3; ++co)
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) {
        double acc = b[co];
        for (int ci = 0; ci < 2; ++ci)
          for (int ki = 0; ki < 3; ++ki)
            for (int kj = 0; kj < 3; ++kj) {
              const int ii = i - 1 + ki, jj = j - 1 + kj;
              if (ii >= 0 && ii < 5 && jj >= 0 && jj < 5)
                acc += x.at(ci, ii, jj) * w[((co * 2 + ci) * 3 + ki) * 3 + kj];
            }
        CHECK(y->val.at(co, i, j) == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("instance norm gradients and statistics") {
  Rng rng(5);
  std::vector<Tensor> in = {random_tensor(rng, {3, 4, 4}), random_tensor(rng, {3}),
                            random_tensor(rng, {3})};
  auto build = [](Tape& t, const std::vector<Var>& v) {
    Var y = instance_norm(t, v[0], v[1], v[2]);
    return sum_all(t, mul(t, y, y));
  };
  CHECK(max_rel_grad_error(in, build) < 1e-6);

  Tape tape;
  Var y = instance_norm(tape, tape.leaf(in[0]), tape.constant(Tensor::full({3}, 1.0)),
                        tape.constant(Tensor({3})));
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (int i = 0; i < 16; ++i) mean += y->val[c * 16 + i];
    mean /= 16.0;
    for (int i = 0; i < 16; ++i) var += (y->val[c * 16 + i] - mean) * (y->val[c * 16 + i] - mean);
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(var / 16.0 == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("shape op gradients") {
  Rng rng(6);
  std::vector<Tensor> in = {random_tensor(rng, {2, 4, 4}), random_tensor(rng, {3, 4, 4}),
                            random_tensor(rng, {4, 3}), random_tensor(rng, {4, 2})};
  auto build = [](Tape& t, const std::vector<Var>& v) {
    Var cat = concat_channels(t, {v[0], v[1]});    // (5,4,4)
    Var up = upsample2x(t, cat);                   // (5,8,8)
    Var rows = grid_to_rows(t, up);                // (64,5)
    Var cols = concat_cols(t, {v[2], v[3]});       // (4,5)
    Var prod = matmul_nt(t, rows, cols);           // (64,4)
    Var stacked = concat_rows(t, {v[2], v[2]});    // (8,3)
    Var grid = rows_to_grid(t, reshape(t, prod, {64, 4}), 8, 8);
    Var ch = slice_channel(t, grid, 2);
    return add(t, mean_all(t, square(t, ch)), sum_all(t, stacked));
  };
  CHECK(max_rel_grad_error(in, build) < 1e-6);
}

TEST_CASE("softmax rows sum to one and gradients pass") {
  Rng rng(7);
  std::vector<Tensor> in = {random_tensor(rng, {5, 6})};
  {
    Tape tape;
    Var sm = softmax_rows(tape, tape.leaf(in[0]));
    for (int i = 0; i < 5; ++i) {
      double s = 0.0;
      for (int j = 0; j < 6; ++j) s += sm->val.at(i, j);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
  auto build = [](Tape& t, const std::vector<Var>& v) {
    Var sm = softmax_rows(t, v[0]);
    return sum_all(t, square(t, sm));
  };
  CHECK(max_rel_grad_error(in, build) < 1e-6);

  std::vector<Tensor> in3 = {random_tensor(rng, {4, 3, 3})};
  auto build3 = [](Tape& t, const std::vector<Var>& v) {
    Var sm = softmax_channels(t, v[0]);
    return sum_all(t, mul(t, sm, sm));
  };
  CHECK(max_rel_grad_error(in3, build3) < 1e-6);
}

TEST_CASE("weighted_sum_rows gradients") {
  Rng rng(8);
  std::vector<Tensor> in = {random_tensor(rng, {6, 3}), random_tensor(rng, {6, 4}),
                            random_tensor(rng, {6, 4}), random_tensor(rng, {6, 4})};
  auto build = [](Tape& t, const std::vector<Var>& v) {
    Var w = softmax_rows(t, v[0]);
    Var out = weighted_sum_rows(t, w, {v[1], v[2], v[3]});
    return mean_all(t, square(t, out));
  };
  CHECK(max_rel_grad_error(in, build) < 1e-6);
}

TEST_CASE("softmax cross entropy closed forms") {
  // Uniform logits over 4 classes: loss = ln 4.
  Tensor logits({4, 2, 2});
  Tensor labels({2, 2});
  labels[0] = 0;
  labels[1] = 1;
  labels[2] = 2;
  labels[3] = 3;
  {
    Tape tape;
    Var loss = softmax_cross_entropy(tape, tape.leaf(logits), labels);
    CHECK(loss->val[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  // Huge margin at the true class drives the loss to zero.
  for (int p = 0; p < 4; ++p) logits[static_cast<int64_t>(labels[p]) * 4 + p] = 200.0;
  {
    Tape tape;
    Var loss = softmax_cross_entropy(tape, tape.leaf(logits), labels);
    CHECK(loss->val[0] == doctest::Approx(0.0).epsilon(1e-12));
  }
  // Out-of-range label.
  labels[0] = 7;
  Tape tape;
  CHECK_THROWS_AS(softmax_cross_entropy(tape, tape.leaf(logits), labels),
                  std::invalid_argument);
}

TEST_CASE("softmax cross entropy matches per-pixel oracle and gradients") {
  Rng rng(9);
  Tensor logits = random_tensor(rng, {4, 3, 3});
  Tensor labels({3, 3});
  for (int p = 0; p < 9; ++p) labels[p] = static_cast<double>(rng.below(4));

  double expect = 0.0;
  for (int p = 0; p < 9; ++p) {
    double mx = -1e300;
    for (int c = 0; c < 4; ++c) mx = std::max(mx, logits[c * 9 + p]);
    double denom = 0.0;
    for (int c = 0; c < 4; ++c) denom += std::exp(logits[c * 9 + p] - mx);
    const int y = static_cast<int>(labels[p]);
    expect -= logits[y * 9 + p] - mx - std::log(denom);
  }
  expect /= 9.0;
  {
    Tape tape;
    Var loss = softmax_cross_entropy(tape, tape.leaf(logits), labels);
    CHECK(loss->val[0] == doctest::Approx(expect).epsilon(1e-9));
  }

  std::vector<Tensor> in = {logits};
  auto build = [&labels](Tape& t, const std::vector<Var>& v) {
    return softmax_cross_entropy(t, v[0], labels);
  };
  CHECK(max_rel_grad_error(in, build) < 1e-6);

  const std::vector<double> weights = {0.5, 2.0, 1.0, 0.25};
  auto build_w = [&](Tape& t, const std::vector<Var>& v) {
    return softmax_cross_entropy(t, v[0], labels, &weights);
  };
  CHECK(max_rel_grad_error(in, build_w) < 1e-6);
}

TEST_CASE("backward requires scalar loss") {
  Tape tape;
  Var x = tape.leaf(Tensor::from({2}, {1.0, 2.0}), true);
  CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vtn/gradcheck.hpp"
#include "vtn/rng.hpp"
#include "vtn/tensor.hpp"

using vtn::Rng;
using vtn::Tape;
using vtn::Tensor;

namespace {

// Independent erf oracle (Maclaurin series), so the gelu check does not go
// through the same libm path as the implementation.
double erf_series(double x) {
  double term = x, sum = x;
  for (int n = 1; n < 60; ++n) {
    term *= -x * x / n;
    sum += term / (2 * n + 1);
  }
  return sum * 2.0 / std::sqrt(3.14159265358979323846);
}

Tensor<double> random_tensor(std::vector<int64_t> shape, Rng& rng) {
  Tensor<double> t = Tensor<double>::zeros(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

// Custom op recorded through the public tape API; used to demonstrate that
// gradcheck flags kinks instead of silently passing on them.
Tensor<double> abs_op(const Tensor<double>& a) {
  bool rec = Tape<double>::active() != nullptr && a.requires_grad();
  Tensor<double> out = Tensor<double>::zeros(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out.data()[i] = std::abs(a.data()[i]);
  if (rec) {
    out.set_requires_grad(true);
    out.node()->recorded_on = Tape<double>::active()->id();
    auto an = a.node(), on = out.node();
    Tape<double>::active()->record([an, on] {
      if (on->grad.empty() || !an->requires_grad) return;
      an->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i) {
        double s = an->data[i] > 0 ? 1.0 : (an->data[i] < 0 ? -1.0 : 0.0);
        an->grad[i] += on->grad[i] * s;
      }
    });
  }
  return out;
}

}  // namespace

TEST_CASE("matmul basics") {
  auto eye = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  auto a = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  auto r = vtn::matmul(eye, a);
  for (int i = 0; i < 4; ++i) CHECK(r.data()[i] == doctest::Approx(a.data()[i]));

  auto z = Tensor<double>::from({2, 1}, {0, 0});
  auto rz = vtn::matmul(eye, z);
  CHECK(rz.data()[0] == 0.0);
  CHECK(rz.data()[1] == 0.0);

  auto row = Tensor<double>::from({1, 2}, {1, 2});
  auto col = Tensor<double>::from({2, 1}, {3, 4});
  CHECK(vtn::matmul(row, col).item() == doctest::Approx(11.0));

  CHECK_THROWS_AS(vtn::matmul(row, row), std::invalid_argument);
}

TEST_CASE("softmax examples and properties") {
  auto s1 = vtn::softmax(Tensor<double>::from({2}, {0, 0}), 0);
  CHECK(s1.data()[0] == doctest::Approx(0.5));
  CHECK(s1.data()[1] == doctest::Approx(0.5));

  auto s2 = vtn::softmax(Tensor<double>::from({2}, {1000, 1000}), 0);
  CHECK(s2.data()[0] == doctest::Approx(0.5));
  CHECK(vtn::all_finite(s2));

  auto s3 = vtn::softmax(Tensor<double>::from({2}, {0.0, std::log(3.0)}), 0);
  CHECK(s3.data()[0] == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(s3.data()[1] == doctest::Approx(0.75).epsilon(1e-9));

  CHECK_THROWS_AS(vtn::softmax(Tensor<double>::from({2}, {0, 0}), 2),
                  std::invalid_argument);

  // Rows sum to 1 and are invariant to adding a constant to the logits.
  Rng rng(11);
  auto x = random_tensor({5, 9}, rng);
  auto y = vtn::softmax(x, 1);
  auto shifted = x.detach_copy();
  for (double& v : shifted.data()) v += 3.75;
  auto y2 = vtn::softmax(shifted, 1);
  for (int64_t i = 0; i < 5; ++i) {
    double total = 0;
    for (int64_t j = 0; j < 9; ++j) {
      total += y.at(i, j);
      CHECK(std::abs(y.at(i, j) - y2.at(i, j)) < 1e-6);
    }
    CHECK(std::abs(total - 1.0) < 1e-6);
  }

  // Column-axis softmax normalizes each column.
  auto yc = vtn::softmax(x, 0);
  for (int64_t j = 0; j < 9; ++j) {
    double total = 0;
    for (int64_t i = 0; i < 5; ++i) total += yc.at(i, j);
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
}

TEST_CASE("layer_norm examples") {
  auto g1 = Tensor<double>::from({3}, {1, 1, 1});
  auto b0 = Tensor<double>::from({3}, {0, 0, 0});
  auto constant = Tensor<double>::from({1, 3}, {5, 5, 5});
  auto out = vtn::layer_norm(constant, g1, b0, 1e-5);
  for (double v : out.data()) CHECK(v == doctest::Approx(0.0));

  auto g2 = Tensor<double>::from({2}, {1, 1});
  auto b2 = Tensor<double>::from({2}, {0, 0});
  auto pm = vtn::layer_norm(Tensor<double>::from({1, 2}, {1, -1}), g2, b2, 1e-14);
  CHECK(pm.data()[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(pm.data()[1] == doctest::Approx(-1.0).epsilon(1e-6));

  auto gz = Tensor<double>::from({3}, {0, 0, 0});
  auto b7 = Tensor<double>::from({3}, {7, 7, 7});
  auto affine = vtn::layer_norm(Tensor<double>::from({1, 3}, {0.3, -2.0, 9.1}), gz, b7, 1e-5);
  for (double v : affine.data()) CHECK(v == doctest::Approx(7.0));
}

TEST_CASE("gelu examples") {
  auto z = vtn::gelu(Tensor<double>::scalar(0.0));
  CHECK(z.item() == 0.0);

  auto big = vtn::gelu(Tensor<double>::scalar(10.0));
  CHECK(std::abs(big.item() - 10.0) < 1e-9);

  double phi1 = 0.5 * (1.0 + erf_series(1.0 / std::sqrt(2.0)));
  auto one = vtn::gelu(Tensor<double>::scalar(1.0));
  CHECK(one.item() == doctest::Approx(1.0 * phi1).epsilon(1e-12));
  CHECK(one.item() == doctest::Approx(0.8413447460685429).epsilon(1e-10));
}

TEST_CASE("dropout semantics") {
  Rng rng(3);
  auto x = random_tensor({100}, rng);

  auto same = vtn::dropout(x, 0.0, true, rng);
  CHECK(same.node().get() == x.node().get());

  auto eval = vtn::dropout(x, 0.5, false, rng);
  CHECK(eval.node().get() == x.node().get());  // exact identity

  CHECK_THROWS_AS(vtn::dropout(x, 1.0, true, rng), std::invalid_argument);
  CHECK_THROWS_AS(vtn::dropout(x, -0.1, true, rng), std::invalid_argument);

  // Zero fraction within 3 sigma of p over 10^4 elements.
  auto wide = Tensor<double>::full({10000}, 1.0);
  Rng seeded(1234);
  auto dropped = vtn::dropout(wide, 0.5, true, seeded);
  int64_t zeros = 0;
  for (double v : dropped.data()) {
    if (v == 0.0) ++zeros;
    else CHECK(v == doctest::Approx(2.0));
  }
  double frac = static_cast<double>(zeros) / 10000.0;
  double sigma = std::sqrt(0.5 * 0.5 / 10000.0);
  CHECK(std::abs(frac - 0.5) <= 3.0 * sigma);
}

TEST_CASE("backward populates leaf gradients") {
  // f(x) = sum(x^2) -> grad 2x
  Rng rng(5);
  auto x = random_tensor({7}, rng);
  x.set_requires_grad(true);
  {
    Tape<double> tape;
    auto loss = vtn::sum(vtn::mul(x, x));
    tape.backward(loss.node());
  }
  REQUIRE(x.grad().size() == 7);
  for (int64_t i = 0; i < 7; ++i)
    CHECK(x.grad()[i] == doctest::Approx(2.0 * x.data()[i]));

  // y used twice: f = y + y -> dL/dy = 2
  auto y = Tensor<double>::scalar(1.5).set_requires_grad(true);
  {
    Tape<double> tape;
    auto loss = vtn::add(y, y);
    tape.backward(loss.node());
  }
  CHECK(y.grad()[0] == doctest::Approx(2.0));

  // backward on a non-scalar is an error
  auto v = random_tensor({3}, rng);
  v.set_requires_grad(true);
  {
    Tape<double> tape;
    auto out = vtn::mul(v, v);
    CHECK_THROWS_AS(tape.backward(out.node()), std::invalid_argument);
  }

  // backward on a tensor from another tape is an error
  Tensor<double> foreign;
  {
    Tape<double> tape;
    foreign = vtn::sum(vtn::mul(v, v));
  }
  {
    Tape<double> tape2;
    CHECK_THROWS_AS(tape2.backward(foreign.node()), std::invalid_argument);
  }
}

TEST_CASE("repeat runs produce identical gradients") {
  auto run = [] {
    Rng rng(42);
    auto x = random_tensor({4, 4}, rng);
    auto w = random_tensor({4, 4}, rng);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    Tape<double> tape;
    auto loss = vtn::sum(vtn::gelu(vtn::matmul(x, w)));
    tape.backward(loss.node());
    return std::make_pair(x.grad(), w.grad());
  };
  auto a = run();
  auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("gradcheck quadratic is nearly exact") {
  Rng rng(9);
  auto x = random_tensor({6}, rng);
  auto result = vtn::gradcheck([&] { return vtn::sum(vtn::mul(x, x)); }, {x});
  CHECK(result.max_rel_err < 1e-8);
}

TEST_CASE("gradcheck rejects non-scalar f") {
  Rng rng(10);
  auto x = random_tensor({3}, rng);
  CHECK_THROWS_AS(vtn::gradcheck([&] { return vtn::mul(x, x); }, {x}),
                  std::invalid_argument);
}

TEST_CASE("gradcheck reports kink of sum(|x|) at zero") {
  auto x = Tensor<double>::from({3}, {0.4, 0.0, -0.3});
  CHECK_THROWS_AS(vtn::gradcheck([&] { return vtn::sum(abs_op(x)); }, {x}),
                  vtn::NonDifferentiableError);
}

TEST_CASE("per-op gradchecks on random inputs") {
  Rng rng(77);
  double worst = 0.0;
  auto track = [&](vtn::GradCheckResult r) { worst = std::max(worst, r.max_rel_err); };

  {
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 2}, rng);
    track(vtn::gradcheck([&] { return vtn::sum(vtn::matmul(a, b)); }, {a, b}));
  }
  {
    auto a = random_tensor({2, 5}, rng);
    auto b = random_tensor({2, 5}, rng);
    track(vtn::gradcheck(
        [&] { return vtn::sum(vtn::mul(vtn::add(a, b), vtn::sub(a, b))); }, {a, b}));
  }
  {
    auto a = random_tensor({3, 4}, rng);
    auto bias = random_tensor({4}, rng);
    track(vtn::gradcheck(
        [&] { return vtn::mean(vtn::add_bias(vtn::scale(a, 1.7), bias)); }, {a, bias}));
  }
  {
    auto a = random_tensor({3, 4}, rng);
    track(vtn::gradcheck(
        [&] {
          auto t = vtn::transpose(a);
          auto r = vtn::reshape(t, {2, 6});
          return vtn::sum(vtn::mul(r, r));
        },
        {a}));
  }
  {
    auto a = random_tensor({5, 4}, rng);
    track(vtn::gradcheck(
        [&] {
          auto top = vtn::slice_rows(a, 0, 2);
          auto rest = vtn::slice_rows(a, 2, 3);
          auto glued = vtn::concat_rows<double>({top, rest});
          auto left = vtn::slice_cols(glued, 0, 2);
          auto right = vtn::slice_cols(glued, 2, 2);
          return vtn::sum(vtn::mul(vtn::concat_cols<double>({left, right}), glued));
        },
        {a}));
  }
  {
    auto a = random_tensor({6}, rng);
    auto map = std::make_shared<std::vector<int64_t>>(
        std::vector<int64_t>{5, 4, 0, 0, -1, 2});
    track(vtn::gradcheck(
        [&] {
          auto g = vtn::gather(a, map, {6});
          return vtn::sum(vtn::mul(g, g));
        },
        {a}));
  }
  {
    auto a = random_tensor({3, 5}, rng);
    auto r = random_tensor({3, 5}, rng);
    track(vtn::gradcheck([&] { return vtn::sum(vtn::mul(vtn::softmax(a, 1), r)); }, {a}));
    track(vtn::gradcheck([&] { return vtn::sum(vtn::mul(vtn::softmax(a, 0), r)); }, {a}));
  }
  {
    auto a = random_tensor({3, 4}, rng);
    auto r = random_tensor({3, 4}, rng);
    auto mask = std::make_shared<std::vector<uint8_t>>(std::vector<uint8_t>{
        1, 1, 0, 0, 0, 1, 1, 1, 1, 0, 1, 0});
    track(vtn::gradcheck(
        [&] { return vtn::sum(vtn::mul(vtn::masked_softmax_rows(a, mask), r)); }, {a}));
  }
  {
    auto a = random_tensor({3, 6}, rng);
    auto g = random_tensor({6}, rng);
    auto b = random_tensor({6}, rng);
    track(vtn::gradcheck([&] { return vtn::sum(vtn::layer_norm(a, g, b, 1e-5)); },
                         {a, g, b}));
  }
  {
    auto a = random_tensor({2, 4, 3, 3}, rng);
    auto g = random_tensor({4}, rng);
    auto b = random_tensor({4}, rng);
    auto r = random_tensor({2, 4, 3, 3}, rng);
    track(vtn::gradcheck(
        [&] { return vtn::sum(vtn::mul(vtn::group_norm(a, 2, g, b, 1e-5), r)); },
        {a, g, b}));
  }
  {
    auto a = random_tensor({4, 4}, rng);
    track(vtn::gradcheck([&] { return vtn::mean(vtn::gelu(a)); }, {a}));
  }
  {
    auto a = random_tensor({5, 3}, rng);
    track(vtn::gradcheck(
        [&] {
          auto m0 = vtn::mean_axis(a, 0);
          auto m1 = vtn::mean_axis(a, 1);
          return vtn::add(vtn::sum(vtn::mul(m0, m0)), vtn::sum(vtn::mul(m1, m1)));
        },
        {a}));
  }
  {
    auto a = random_tensor({6, 3}, rng);
    track(vtn::gradcheck(
        [&] {
          auto m = vtn::group_mean_rows(a, 3);
          return vtn::sum(vtn::mul(m, m));
        },
        {a}));
  }
  {
    auto a = random_tensor({8}, rng);
    track(vtn::gradcheck(
        [&] {
          Rng drop_rng(99);
          auto d = vtn::dropout(a, 0.3, true, drop_rng);
          return vtn::sum(vtn::mul(d, d));
        },
        {a}));
  }
  {
    auto table = random_tensor({5, 3}, rng);
    auto idx = std::make_shared<std::vector<int64_t>>(std::vector<int64_t>{1, 4, 1});
    track(vtn::gradcheck(
        [&] {
          auto e = vtn::embedding_lookup(table, idx);
          return vtn::sum(vtn::mul(e, e));
        },
        {table}));
  }
  {
    auto logits = random_tensor({4, 3}, rng);
    auto labels = std::make_shared<std::vector<int>>(std::vector<int>{0, 2, 1, 2});
    track(vtn::gradcheck([&] { return vtn::cross_entropy_mean(logits, labels); },
                         {logits}));
  }

  CHECK(worst <= 1e-4);
}

TEST_CASE("masked softmax puts exact zeros outside the allowed set") {
  Rng rng(8);
  auto a = random_tensor({2, 4}, rng);
  auto mask = std::make_shared<std::vector<uint8_t>>(
      std::vector<uint8_t>{1, 0, 1, 0, 0, 1, 0, 1});
  auto y = vtn::masked_softmax_rows(a, mask);
  CHECK(y.at(0, 1) == 0.0);
  CHECK(y.at(0, 3) == 0.0);
  CHECK(y.at(1, 0) == 0.0);
  CHECK(y.at(1, 2) == 0.0);
  CHECK(y.at(0, 0) + y.at(0, 2) == doctest::Approx(1.0));
  CHECK(y.at(1, 1) + y.at(1, 3) == doctest::Approx(1.0));

  auto empty_mask = std::make_shared<std::vector<uint8_t>>(
      std::vector<uint8_t>{0, 0, 0, 0, 1, 1, 1, 1});
  CHECK_THROWS_AS(vtn::masked_softmax_rows(a, empty_mask), std::invalid_argument);
}

TEST_CASE("finiteness check utility") {
  auto good = Tensor<double>::from({2}, {1.0, -2.0});
  CHECK(vtn::all_finite(good));
  CHECK_NOTHROW(vtn::check_finite(good, "good"));

  auto bad = Tensor<double>::from({2}, {1.0, std::numeric_limits<double>::infinity()});
  CHECK_FALSE(vtn::all_finite(bad));
  CHECK_THROWS_AS(vtn::check_finite(bad, "bad"), std::runtime_error);

  auto nan = Tensor<double>::from({1}, {std::nan("")});
  CHECK_FALSE(vtn::all_finite(nan));
}

TEST_CASE("cross entropy matches a direct formula") {
  auto logits = Tensor<double>::from({2, 3}, {0.2, -0.4, 1.1, 2.0, 2.0, 2.0});
  auto labels = std::make_shared<std::vector<int>>(std::vector<int>{2, 0});
  auto loss = vtn::cross_entropy_mean(logits, labels);
  auto direct = [&](int row, int label) {
    double total = 0;
    for (int j = 0; j < 3; ++j) total += std::exp(logits.at(row, j));
    return -std::log(std::exp(logits.at(row, label)) / total);
  };
  CHECK(loss.item() == doctest::Approx(0.5 * (direct(0, 2) + direct(1, 0))).epsilon(1e-12));
}

TEST_CASE("float32 instantiation works end to end") {
  Rng rng(21);
  auto x = Tensor<float>::randn({3, 3}, rng, 1.0);
  auto w = Tensor<float>::randn({3, 3}, rng, 1.0).set_requires_grad(true);
  Tape<float> tape;
  auto loss = vtn::mean(vtn::gelu(vtn::matmul(x, w)));
  tape.backward(loss.node());
  CHECK(w.grad().size() == 9);
  CHECK(vtn::all_finite(vtn::Tensor<float>::from({9}, w.grad())));
}

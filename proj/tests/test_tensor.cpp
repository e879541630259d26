#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "support.hpp"
#include "tbigan/errors.hpp"
#include "tbigan/tensor.hpp"

using namespace tbigan;
using tbigan::testing::check_gradients;
using tbigan::testing::random_tensor;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("matmul hand examples") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor b({2, 2}, {5, 6, 7, 8});
  CHECK(values(matmul(eye, b)) == std::vector<double>{5, 6, 7, 8});

  Tensor row({1, 2}, {1, 2});
  Tensor col({2, 1}, {3, 4});
  auto c = matmul(row, col);
  CHECK(c.shape() == Shape{1, 1});
  CHECK(c.item() == 11.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2, 3)") != std::string::npos);
    CHECK(msg.find("(4, 2)") != std::string::npos);
  }
}

TEST_CASE("matmul gradients match finite differences") {
  std::mt19937_64 rng(11);
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      Tensor a = random_tensor(ta ? Shape{3, 4} : Shape{4, 3}, rng);
      Tensor b = random_tensor(tb ? Shape{2, 3} : Shape{3, 2}, rng);
      Tensor w = random_tensor({4, 2}, rng, 1.0, false);
      auto r = check_gradients([&] { return sum(mul(matmul(a, b, ta, tb), w)); }, {a, b});
      CHECK(r.max_rel_error < 1e-6);
    }
  }
  Tensor a = random_tensor({3, 4, 5}, rng);
  Tensor b = random_tensor({3, 5, 2}, rng);
  auto r = check_gradients([&] { return sum(square(matmul(a, b))); }, {a, b});
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("softmax examples") {
  auto s = softmax(Tensor({3}, {0, 0, 0}));
  for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  auto big = softmax(Tensor({3}, {1000, 0, 0}));
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] < 1e-300);
  CHECK(std::isfinite(big[1]));

  std::mt19937_64 rng(3);
  Tensor x = random_tensor({7}, rng);
  Tensor w = random_tensor({7}, rng, 1.0, false);
  auto r = check_gradients([&] { return sum(mul(softmax(x), w)); }, {x});
  CHECK(r.max_rel_error < 1e-6);

  // middle axis, sums to one
  Tensor y = random_tensor({2, 5, 3}, rng);
  auto sy = softmax(y, 1);
  for (std::size_t o = 0; o < 2; ++o) {
    for (std::size_t i = 0; i < 3; ++i) {
      double total = 0;
      for (std::size_t j = 0; j < 5; ++j) total += sy[(o * 5 + j) * 3 + i];
      CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
    }
  }
  Tensor wy = random_tensor({2, 5, 3}, rng, 1.0, false);
  r = check_gradients([&] { return sum(mul(softmax(y, 1), wy)); }, {y});
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("layer_norm examples") {
  Tensor gain = Tensor::ones({4});
  Tensor bias = Tensor::zeros({4});
  auto constant = layer_norm(Tensor::full({1, 4}, 2.5), gain, bias);
  for (double v : constant.data()) CHECK(v == 0.0);

  auto two = layer_norm(Tensor({1, 2}, {1, 3}), Tensor::ones({2}), Tensor::zeros({2}));
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(two[0] == doctest::Approx(-expect).epsilon(1e-12));
  CHECK(two[1] == doctest::Approx(expect).epsilon(1e-12));

  CHECK_THROWS_AS(layer_norm(Tensor::ones({1, 2}), Tensor::ones({2}), Tensor::zeros({2}), 0.0),
                  ConfigError);
  CHECK_THROWS_AS(layer_norm(Tensor::ones({1, 2}), Tensor::ones({3}), Tensor::zeros({3})),
                  ShapeError);

  std::mt19937_64 rng(5);
  Tensor x = random_tensor({2, 8}, rng);
  Tensor g = random_tensor({8}, rng);
  Tensor b = random_tensor({8}, rng);
  Tensor w = random_tensor({2, 8}, rng, 1.0, false);
  auto r = check_gradients([&] { return sum(mul(layer_norm(x, g, b), w)); }, {x, g, b});
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("backward basics") {
  auto& tape = GradTape::current();
  tape.reset();
  Tensor w({3}, {1, -2, 4}, true);
  backward(sum(w));
  CHECK(values(w.grad_tensor()) == std::vector<double>{1, 1, 1});
  w.zero_grad();
  backward(sum(mul(w, w)));
  CHECK(values(w.grad_tensor()) == std::vector<double>{2, -4, 8});
  tape.reset();
  CHECK(tape.empty());

  Tensor v({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(mul_scalar(v, 2.0)), ShapeError);
  tape.reset();
}

TEST_CASE("backward visits each leaf once and is deterministic") {
  std::mt19937_64 rng(8);
  Tensor a = random_tensor({3, 3}, rng);
  Tensor b = random_tensor({3}, rng);
  auto run = [&] {
    GradTape::current().reset();
    a.zero_grad();
    b.zero_grad();
    Tensor h = tanh(add(matmul(a, a), b));
    backward(sum(mul(h, softmax(h))));
    std::vector<double> g = values(a.grad_tensor());
    auto gb = values(b.grad_tensor());
    g.insert(g.end(), gb.begin(), gb.end());
    return g;
  };
  CHECK(run() == run());
  GradTape::current().reset();
}

TEST_CASE("elementwise and layout ops pass gradient checks") {
  std::mt19937_64 rng(21);
  Tensor x = random_tensor({2, 3, 4}, rng);
  Tensor y = random_tensor({3, 4}, rng);
  Tensor pos({2, 3, 4}, std::vector<double>(24, 0.0), true);
  for (std::size_t i = 0; i < 24; ++i) pos.mutable_data()[i] = 0.5 + 0.1 * static_cast<double>(i);
  Tensor w = random_tensor({2, 3, 4}, rng, 1.0, false);

  struct Case {
    const char* name;
    std::function<Tensor()> f;
    std::vector<Tensor> params;
  };
  std::vector<Case> cases = {
      {"add_broadcast", [&] { return sum(mul(add(x, y), w)); }, {x, y}},
      {"sub_broadcast", [&] { return sum(mul(sub(y, x), w)); }, {x, y}},
      {"mul_broadcast", [&] { return sum(mul(mul(x, y), w)); }, {x, y}},
      {"div", [&] { return sum(mul(div(x, pos), w)); }, {x, pos}},
      {"exp_log", [&] { return sum(mul(add(exp(x), log(pos)), w)); }, {x, pos}},
      {"sigmoid_tanh", [&] { return sum(mul(add(sigmoid(x), tanh(x)), w)); }, {x}},
      {"softplus", [&] { return sum(mul(softplus(x), w)); }, {x}},
      {"pow_sqrt", [&] { return sum(mul(add(pow(pos, 1.7), sqrt(pos)), w)); }, {pos}},
      {"gelu", [&] { return sum(mul(gelu(x), w)); }, {x}},
      {"leaky_relu", [&] { return sum(mul(leaky_relu(x, 0.2), w)); }, {x}},
      {"abs", [&] { return sum(mul(abs(x), w)); }, {x}},
      {"permute", [&] { return sum(mul(permute(x, {2, 0, 1}), permute(w, {2, 0, 1}))); }, {x}},
      {"reshape", [&] { return sum(mul(reshape(x, {6, 4}), reshape(w, {6, 4}))); }, {x}},
      {"slice_pad",
       [&] { return sum(square(pad_axis(slice_axis(x, 1, 1, 2), 2, 1, 3))); },
       {x}},
      {"concat", [&] { return sum(mul(concat({x, x}, 2), concat({w, w}, 2))); }, {x}},
      {"sum_axis", [&] { return sum(square(sum_axis(x, 1))); }, {x}},
      {"mean_axis_expand",
       [&] { return sum(mul(expand_axis(mean_axis(x, 0), 0, 2), w)); },
       {x}},
      {"bce", [&] { return mean(bce_with_logits(x, 0.9)); }, {x}},
  };
  for (auto& c : cases) {
    CAPTURE(c.name);
    auto r = check_gradients(c.f, c.params);
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("broadcasting outside the trailing-suffix rule is rejected") {
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({2})), ShapeError);
  CHECK_THROWS_AS(mul(Tensor::zeros({4, 2, 3}), Tensor::zeros({4, 1, 3})), ShapeError);
  CHECK(add(Tensor::zeros({2, 3}), Tensor::zeros({1, 3})).shape() == Shape{2, 3});
  CHECK(add(Tensor::zeros({2, 3}), Tensor::scalar(1.0)).shape() == Shape{2, 3});
}

TEST_CASE("finite checks catch NaN loudly") {
  const bool prev = finite_checks();
  set_finite_checks(true);
  CHECK_THROWS_AS(log(Tensor({2}, {1.0, -1.0})), NumericalError);
  CHECK_THROWS_AS(div(Tensor({1}, {1.0}), Tensor({1}, {0.0})), NumericalError);
  set_finite_checks(prev);
}

TEST_CASE("second-order gradients through the tape") {
  // d/dx of (d/dx sum(x^3))^2 = d/dx sum(9x^4) = 36x^3
  auto& tape = GradTape::current();
  tape.reset();
  Tensor x({3}, {0.5, -1.0, 2.0}, true);
  Tensor y = sum(pow(x, 3.0));
  Tensor g = grad(y, {x}, true)[0];
  backward(sum(square(g)));
  for (std::size_t i = 0; i < 3; ++i) {
    const double v = x[i];
    CHECK(x.grad()[i] == doctest::Approx(36.0 * v * v * v).epsilon(1e-12));
  }
  tape.reset();

  // Mixed second order through matmul/softmax/layer_norm: check by finite
  // differences of the first-order gradient norm.
  std::mt19937_64 rng(4);
  Tensor w = random_tensor({4, 3}, rng);
  Tensor gain = random_tensor({3}, rng);
  Tensor bias = random_tensor({3}, rng);
  Tensor in = random_tensor({2, 4}, rng, 1.0, false);
  auto penalty = [&] {
    const bool outer = grad_enabled();
    GradModeGuard enable(true);
    Tensor leaf = in.detach();
    leaf.set_requires_grad(true);
    Tensor h = layer_norm(matmul(leaf, w), gain, bias);
    Tensor out = sum(mul(softmax(h), gelu(h)));
    Tensor gx = grad(out, {leaf}, outer)[0];
    if (!outer) return Tensor::scalar(sum(square(gx)).item());
    return sum(square(gx));
  };
  auto r = check_gradients(penalty, {w, gain, bias});
  CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("hash_values is sensitive to every bit") {
  std::vector<double> a{1.0, 2.0};
  std::vector<double> b{1.0, std::nextafter(2.0, 3.0)};
  CHECK(hash_values(a) == hash_values(a));
  CHECK(hash_values(a) != hash_values(b));
}

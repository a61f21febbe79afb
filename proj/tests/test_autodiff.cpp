#include <cmath>

#include "bgrto/autodiff.hpp"
#include "bgrto/errors.hpp"
#include "bgrto/rng.hpp"
#include "doctest.h"

using namespace bgrto;
using namespace bgrto::ad;

namespace {

Tensor random_tensor(Dims dims, Rng& rng) {
  Tensor t(std::move(dims));
  for (auto& v : t.values()) v = 2.0 * rng.uniform() - 1.0;
  return t;
}

}  // namespace

TEST_CASE("primitive values") {
  Tape tape;
  CHECK(sigmoid(tape.constant(0.0)).item() == 0.5);

  const auto ls = log_softmax(tape.constant(Tensor::vector({0.0, 0.0, 0.0})));
  for (double v : ls.value().values()) CHECK(v == doctest::Approx(-std::log(3.0)).epsilon(1e-15));

  const auto eye = tape.constant(Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0}));
  const Tensor b({2, 3}, {1.5, -2.0, 3.25, 0.0, 7.0, -1.0});
  CHECK(matmul(eye, tape.constant(b)).value() == b);
}

TEST_CASE("log_softmax stays finite for large logits") {
  Tape tape;
  const auto ls = log_softmax(tape.constant(Tensor::vector({1000.0, 0.0, -1000.0})));
  CHECK(ls.value().all_finite());
  CHECK(ls.value()[0] == doctest::Approx(0.0));
}

TEST_CASE("analytic derivatives") {
  Tape tape;
  auto x = tape.param("x", Tensor::scalar(3.0));
  auto g = tape.backward(x * x);
  CHECK(g.at("x").item() == 6.0);

  Tape t2;
  auto y = t2.param("y", Tensor::vector({0.0}));
  auto g2 = t2.backward(sum(sigmoid(y)));
  CHECK(g2.at("y")[0] == 0.25);
}

TEST_CASE("stop_gradient") {
  Tape tape;
  auto x = tape.param("x", Tensor::scalar(2.0));
  auto out = stop_gradient(x) * x;
  CHECK(out.item() == 4.0);
  CHECK(tape.backward(out).at("x").item() == 2.0);
  CHECK(tape.backward(stop_gradient(x) * 5.0).at("x").item() == 0.0);

  Rng rng(3);
  const Tensor t = random_tensor({3, 4}, rng);
  CHECK(stop_gradient(tape.constant(t)).value() == t);
}

TEST_CASE("structural and domain errors") {
  Tape tape;
  auto a = tape.constant(Tensor({2, 3}, 1.0));
  auto b = tape.constant(Tensor({2, 3}, 1.0));
  CHECK_THROWS_AS(matmul(a, b), StructuralError);
  CHECK_THROWS_AS(add(a, tape.constant(Tensor({4}, 1.0))), StructuralError);
  CHECK_THROWS_AS(log(tape.constant(-1.0)), DomainError);
  CHECK_THROWS_AS(exp(tape.constant(1e6)), DomainError);
  try {
    matmul(a, b);
  } catch (const StructuralError& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
  }
}

TEST_CASE("backward on a stale tape is a state error") {
  Tape tape;
  auto x = tape.param("x", Tensor::scalar(1.0));
  auto y = x * x;
  tape.set_input("x", Tensor::scalar(2.0));
  CHECK_THROWS_AS(tape.backward(y), StateError);
  tape.forward();
  CHECK(tape.backward(y).at("x").item() == 4.0);
}

TEST_CASE("replay matches a fresh recording") {
  Rng rng(11);
  const Tensor w0 = random_tensor({3, 2}, rng);
  const Tensor w1 = random_tensor({3, 2}, rng);
  const Tensor in = random_tensor({4, 3}, rng);
  auto build = [&](Tape& t, const Tensor& w) {
    auto wv = t.param("w", w);
    return sum(log_softmax(matmul(t.constant(in), wv)));
  };
  Tape replay;
  auto out = build(replay, w0);
  replay.forward({{"w", w1}});
  Tape fresh;
  auto ref = build(fresh, w1);
  CHECK(out.value().bit_equal(ref.value()));
  CHECK(bit_equal(replay.backward(out), fresh.backward(ref)));
}

TEST_CASE("finite difference on a quadratic bowl") {
  Tape tape;
  auto x = tape.param("x", Tensor::vector({0.3, -1.2, 2.0}));
  auto c = tape.constant(Tensor::vector({1.0, 2.0, 3.0}));
  auto d = x - c;
  auto f = sum(d * d);
  const auto report = finite_diff_check(tape, f, 1e-5, 1e-5);
  CHECK(report.passed);
  CHECK(report.max_rel_error < 1e-9);
  CHECK(report.coordinates == 3);
  CHECK(x.value()[0] == 0.3);
}

TEST_CASE("finite difference covers every primitive") {
  Rng rng(5);
  Tape tape;
  auto a = tape.param("a", random_tensor({3, 4}, rng));
  auto b = tape.param("b", random_tensor({4, 2}, rng));
  auto v = tape.param("v", random_tensor({2}, rng));
  auto h = matmul(a, b) + v;
  auto s = softplus(h) + relu(h * 0.5) + clamp(h, -0.4, 0.4) + maximum(h, scale(h, 0.3));
  auto p = pick(log_softmax(s), {0, 1, 1});
  auto rows = take_rows(sigmoid(s), {2, 0});
  auto q = mean(exp(scale(rows, 0.5))) + sum(log(add_scalar(sigmoid(s), 0.1))) / sum(broadcast(v, 3) * 0.0 + 2.0);
  auto out = sum(p) + q + sum(reshape(minimum(s, h), {6}));
  const auto report = finite_diff_check(tape, out, 1e-5, 1e-5);
  CHECK_MESSAGE(report.passed, report.worst_param, " ", report.max_rel_error);
}

TEST_CASE("finite difference rejects non-scalar objectives") {
  Tape tape;
  auto x = tape.param("x", Tensor::vector({1.0, 2.0}));
  CHECK_THROWS_AS(finite_diff_check(tape, x * 2.0, 1e-5, 1e-5), UsageError);
}

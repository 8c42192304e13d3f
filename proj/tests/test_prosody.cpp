#include <doctest.h>

#include "m2ctts/prosody.hpp"
#include "support.hpp"

using namespace m2ctts;
using testing::random_matrix;

TEST_SUITE("prosody") {
  TEST_CASE("loss examples") {
    RowVector a(2), b(2);
    a << 1, 1;
    b << 0, 0;
    CHECK(prosody_loss(a, a) == 0.0);
    CHECK(prosody_loss(a, b) == doctest::Approx(1.0));
    CHECK(prosody_loss(a, b, Reduction::Sum) == doctest::Approx(2.0));
    CHECK(prosody_loss(ag::constant(Matrix(a)), b).scalar() == doctest::Approx(1.0));
    CHECK_THROWS_AS(prosody_loss(a, RowVector::Zero(3)), std::invalid_argument);
    CHECK_THROWS_AS(prosody_loss(ag::constant(Matrix::Zero(2, 2)), b), std::invalid_argument);
  }

  TEST_CASE("loss agrees with an explicit sum") {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
      const int n = rng.uniform_int(1, 40);
      const RowVector p = random_matrix(rng, 1, n).row(0), t = random_matrix(rng, 1, n).row(0);
      double sum = 0;
      for (int i = 0; i < n; ++i) sum += (p(i) - t(i)) * (p(i) - t(i));
      CHECK(std::abs(prosody_loss(p, t, Reduction::Sum) - sum) < 1e-7);
      CHECK(std::abs(prosody_loss(p, t) - sum / n) < 1e-7);
      CHECK(prosody_loss(ag::constant(Matrix(p)), t).scalar() == doctest::Approx(prosody_loss(p, t)));
    }
  }

  TEST_CASE("loss gradient is 2 (p - t) / n") {
    Rng rng(2);
    const RowVector t = random_matrix(rng, 1, 5).row(0);
    auto p = ag::parameter(random_matrix(rng, 1, 5));
    ag::backward(prosody_loss(p, t));
    const Matrix expected = 2.0 * (p.value() - Matrix(t)) / 5.0;
    CHECK(testing::relative_error(p.grad(), expected) < 1e-12);
  }

  TEST_CASE("predictor") {
    Rng rng(3);
    ParameterSet ps;
    NullContext nulls(ps, "null", 4, rng);
    ProsodyPredictor ppm(ps, "ppm", 4, 9, rng);
    CHECK_THROWS_AS(ppm(nulls, {}), std::invalid_argument);
    const ContextEmbeddings ctx{ag::constant(random_matrix(rng, 1, 4)), std::nullopt};
    const auto a = ppm(nulls, ctx);
    CHECK(a.cols() == 9);
    CHECK(ppm(nulls, ctx).value() == a.value());
    const Matrix expected =
        ((nulls.fill(ctx).value() * ppm.hidden.weight.value() + ppm.hidden.bias.value()).array().tanh().matrix() *
         ppm.output.weight.value()) +
        ppm.output.bias.value();
    CHECK((a.value() - expected).cwiseAbs().maxCoeff() < 1e-12);
  }
}

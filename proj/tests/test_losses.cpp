#include <doctest.h>

#include <cmath>
#include <random>

#include "xret/losses.hpp"
#include "test_util.hpp"

using namespace xret;
using namespace xret::testing;

namespace {

Matrix rows(std::initializer_list<std::initializer_list<double>> values) {
  Matrix m(static_cast<Index>(values.size()), static_cast<Index>(values.begin()->size()));
  Index i = 0;
  for (const auto& r : values) {
    Index j = 0;
    for (const double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

// One row with d(te_an, im_p) = u, d(te_an, im_n) = v, d(te_an, te_n) = w for
// perfect-square-friendly u, v, w: points on the axes around a zero anchor.
TripletBatch scalar_row(double u, double v, double w) {
  TripletBatch b;
  b.te_an = rows({{0.0, 0.0, 0.0}});
  b.im_p = rows({{std::sqrt(u), 0.0, 0.0}});
  b.im_n = rows({{0.0, std::sqrt(v), 0.0}});
  b.te_n = rows({{0.0, 0.0, std::sqrt(w)}});
  return b;
}

LossConfig m3l(double eps = 0.0) {
  LossConfig c;
  c.denom_eps = eps;
  return c;
}

LossConfig patr(double eta = 1100.0) {
  LossConfig c;
  c.kind = LossKind::patr;
  c.eta = eta;
  return c;
}

}  // namespace

TEST_CASE("squared_distance") {
  CHECK(squared_distance(vec({0, 0}), vec({3, 4})) == 25.0);
  const Vector x = Vector::Random(7);
  CHECK(squared_distance(x, x) == 0.0);
  Vector a(3), b(3);
  a << 1, 2, 3;
  b << 4, 6, 3;
  CHECK(squared_distance(a, b) == 25.0);
  CHECK_THROWS_AS(squared_distance(a, Vector::Zero(2)), ShapeError);
}

TEST_CASE("m3l worked values") {
  // 0.5 * 1/16 + 1 * 1/256
  CHECK(m3l_loss(scalar_row(1, 4, 16), m3l()).loss == doctest::Approx(0.5 / 256 + 1.0 / 65536).epsilon(1e-13));
  CHECK(m3l_loss(scalar_row(1, 2, 4), m3l()).loss == doctest::Approx(0.03515625).epsilon(1e-13));
  for (const double t : {0.25, 1.0, 9.0, 1e4}) {
    CHECK(m3l_loss(scalar_row(t, t, t), m3l()).loss == doctest::Approx(1.5).epsilon(1e-13));
  }
  const auto zero = m3l_loss(scalar_row(0, 2, 4), m3l());
  CHECK(zero.loss == 0.0);
  CHECK(zero.grad_anchor.isZero(0.0));
}

TEST_CASE("patr worked values") {
  CHECK(patr_loss(scalar_row(1, 1200, 7), patr()).loss == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(patr_loss(scalar_row(0, 0, 7), patr()).loss == doctest::Approx(1100.0).epsilon(1e-13));
  CHECK(patr_loss(scalar_row(5, 100, 7), patr()).loss == doctest::Approx(1005.0).epsilon(1e-13));
  CHECK(patr_loss(scalar_row(5, 100, 7), patr()).grad_negative.isZero(0.0));
}

TEST_CASE("patr hinge is flat at and beyond the margin") {
  const auto at_margin = patr_loss(scalar_row(4, 1100, 1), patr());
  CHECK(at_margin.loss == doctest::Approx(4.0));
  // Only the positive term contributes: 2 (te_an - im_p).
  CHECK(at_margin.grad_anchor(0, 0) == doctest::Approx(-4.0));
  CHECK(at_margin.grad_anchor(0, 1) == 0.0);
}

TEST_CASE("kind mismatch and shape errors") {
  CHECK_THROWS_AS(m3l_loss(scalar_row(1, 1, 1), patr()), std::invalid_argument);
  CHECK_THROWS_AS(patr_loss(scalar_row(1, 1, 1), m3l()), std::invalid_argument);
  TripletBatch b = scalar_row(1, 2, 3);
  b.im_n = Matrix::Zero(2, 3);
  CHECK_THROWS_AS(m3l_loss(b, m3l()), ShapeError);
  LossConfig bad = m3l();
  bad.rho = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("batch loss is the mean of rows and both losses are non-negative") {
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 50; ++trial) {
    const TripletBatch b = random_triplets(gen, 5, 4);
    for (const LossConfig& cfg : {m3l(1e-8), patr(3.0)}) {
      const auto r = compute_loss(b, cfg);
      double sum = 0.0;
      for (Index i = 0; i < r.per_row.size(); ++i) {
        CHECK(r.per_row(i) >= 0.0);
        sum += r.per_row(i);
      }
      CHECK(r.loss == sum / static_cast<double>(r.per_row.size()));
    }
  }
}

TEST_CASE("m3l is monotone in each distance") {
  const LossConfig cfg = m3l();
  const double base = m3l_loss(scalar_row(2, 5, 7), cfg).loss;
  CHECK(m3l_loss(scalar_row(2.5, 5, 7), cfg).loss > base);
  CHECK(m3l_loss(scalar_row(2, 6, 7), cfg).loss < base);
  CHECK(m3l_loss(scalar_row(2, 5, 8), cfg).loss < base);
}

TEST_CASE("loss gradients match central differences") {
  std::mt19937_64 gen(5);
  int checked = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const TripletBatch b = random_triplets(gen, 4, 6);
    for (const LossConfig& cfg : {m3l(1e-8), patr(2.0 + 0.1 * trial)}) {
      if (cfg.kind == LossKind::patr && near_patr_kink(b, cfg.eta, 1e-4)) continue;
      const auto r = compute_loss(b, cfg);
      for (const bool negative_role : {false, true}) {
        if (negative_role && cfg.kind == LossKind::patr) continue;
        const Matrix& analytic = negative_role ? r.grad_negative : r.grad_anchor;
        for (Index i = 0; i < b.te_an.rows(); ++i) {
          for (Index j = 0; j < b.te_an.cols(); ++j) {
            TripletBatch plus = b, minus = b;
            (negative_role ? plus.te_n : plus.te_an)(i, j) += kFdStep;
            (negative_role ? minus.te_n : minus.te_an)(i, j) -= kFdStep;
            const double numeric =
                (compute_loss(plus, cfg).loss - compute_loss(minus, cfg).loss) / (2.0 * kFdStep);
            CHECK(relative_error(analytic(i, j), numeric, r.loss) < 1e-6);
            ++checked;
          }
        }
      }
    }
  }
  CHECK(checked > 1000);
}

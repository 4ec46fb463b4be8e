#include "xret/losses.hpp"

#include <cmath>
#include <limits>

namespace xret {

namespace {

// One ratio term alpha * a^rho / (b^rho + eps) and its partials in a and b.
// Evaluated as alpha * (a/b)^rho / (1 + eps * b^-rho) so that, with eps = 0,
// the value depends on a and b only through a/b.
struct RatioTerm {
  double value = 0.0;
  double d_num = 0.0;
  double d_den = 0.0;
};

RatioTerm ratio_term(double alpha, double a, double b, double rho, double eps) {
  RatioTerm t;
  if (alpha == 0.0) return t;
  if (a == 0.0) {
    // a^rho has zero slope at 0 for rho > 1; rho < 1 takes the zero subgradient.
    if (rho == 1.0) t.d_num = alpha / (b + eps);
    return t;
  }
  if (b == 0.0) {
    if (eps == 0.0) {
      t.value = std::numeric_limits<double>::infinity();
      return t;
    }
    const double a_pow = std::pow(a, rho);
    t.value = alpha * a_pow / eps;
    t.d_num = alpha * rho * a_pow / (a * eps);
    return t;
  }
  const double b_pow = std::pow(b, rho);
  const double shrink = 1.0 / (1.0 + eps / b_pow);  // b^rho / (b^rho + eps)
  t.value = alpha * std::pow(a / b, rho) * shrink;
  t.d_num = rho * t.value / a;
  t.d_den = -rho * t.value / b * shrink;
  return t;
}

void check_kind(const LossConfig& cfg, LossKind expected) {
  cfg.validate();
  if (cfg.kind != expected) {
    throw std::invalid_argument("loss config kind is " + to_string(cfg.kind) + ", expected " +
                                to_string(expected));
  }
}

}  // namespace

std::string to_string(LossKind kind) { return kind == LossKind::m3l ? "m3l" : "patr"; }

LossKind loss_kind_from_string(const std::string& name) {
  if (name == "m3l") return LossKind::m3l;
  if (name == "patr") return LossKind::patr;
  throw std::invalid_argument("unknown loss kind '" + name + "'");
}

void LossConfig::validate() const {
  if (!(rho > 0.0)) throw std::invalid_argument("rho must be positive");
  if (!(eta > 0.0)) throw std::invalid_argument("eta must be positive");
  if (!(alpha1 >= 0.0) || !(alpha2 >= 0.0)) throw std::invalid_argument("alphas must be non-negative");
  if (!(denom_eps >= 0.0)) throw std::invalid_argument("denom_eps must be non-negative");
}

void TripletBatch::validate() const {
  const Index n = te_an.rows();
  const Index d = te_an.cols();
  for (const Matrix* m : {&im_p, &im_n, &te_n}) {
    if (m->rows() != n || m->cols() != d) {
      throw ShapeError("TripletBatch: all roles must share row count and width");
    }
  }
}

LossResult m3l_loss(const TripletBatch& batch, const LossConfig& cfg) {
  check_kind(cfg, LossKind::m3l);
  batch.validate();
  const Index n = batch.te_an.rows();
  LossResult r;
  r.per_row = Vector::Zero(n);
  r.grad_anchor = Matrix::Zero(n, batch.te_an.cols());
  r.grad_negative = Matrix::Zero(n, batch.te_an.cols());
  if (n == 0) return r;

  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const auto anchor = batch.te_an.row(i);
    const RowVector to_pos = anchor - batch.im_p.row(i);
    const RowVector to_neg_img = anchor - batch.im_n.row(i);
    const RowVector to_neg_txt = anchor - batch.te_n.row(i);
    const double u = to_pos.squaredNorm();
    const double v = to_neg_img.squaredNorm();
    const double w = to_neg_txt.squaredNorm();

    const RatioTerm image_term = ratio_term(cfg.alpha1, u, v, cfg.rho, cfg.denom_eps);
    const RatioTerm text_term = ratio_term(cfg.alpha2, u, w, cfg.rho, cfg.denom_eps);
    r.per_row(i) = image_term.value + text_term.value;
    total += r.per_row(i);

    const double dl_du = image_term.d_num + text_term.d_num;
    const double dl_dv = image_term.d_den;
    const double dl_dw = text_term.d_den;
    r.grad_anchor.row(i) =
        (2.0 * inv_n) * (dl_du * to_pos + dl_dv * to_neg_img + dl_dw * to_neg_txt);
    r.grad_negative.row(i) = (-2.0 * inv_n * dl_dw) * to_neg_txt;
  }
  r.loss = total / static_cast<double>(n);
  return r;
}

LossResult patr_loss(const TripletBatch& batch, const LossConfig& cfg) {
  check_kind(cfg, LossKind::patr);
  batch.validate();
  const Index n = batch.te_an.rows();
  LossResult r;
  r.per_row = Vector::Zero(n);
  r.grad_anchor = Matrix::Zero(n, batch.te_an.cols());
  r.grad_negative = Matrix::Zero(n, batch.te_an.cols());
  if (n == 0) return r;

  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const auto anchor = batch.te_an.row(i);
    const RowVector to_pos = anchor - batch.im_p.row(i);
    const RowVector to_neg = anchor - batch.im_n.row(i);
    const double pos = to_pos.squaredNorm();
    const double neg = to_neg.squaredNorm();
    const double slack = cfg.eta - neg;
    r.per_row(i) = pos + std::max(0.0, slack);
    total += r.per_row(i);

    RowVector g = 2.0 * to_pos;
    if (slack > 0.0) g -= 2.0 * to_neg;  // hinge inactive at and beyond the margin
    r.grad_anchor.row(i) = inv_n * g;
  }
  r.loss = total / static_cast<double>(n);
  return r;
}

LossResult compute_loss(const TripletBatch& batch, const LossConfig& cfg) {
  return cfg.kind == LossKind::m3l ? m3l_loss(batch, cfg) : patr_loss(batch, cfg);
}

}  // namespace xret

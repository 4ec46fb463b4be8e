#pragma once

#include <string>

#include "xret/types.hpp"

namespace xret {

enum class LossKind { m3l, patr };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);

struct LossConfig {
  LossKind kind = LossKind::m3l;
  double rho = 4.0;
  double alpha1 = 0.5;
  double alpha2 = 1.0;
  double eta = 1100.0;
  double denom_eps = 1e-8;

  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

// Row-aligned triplet roles. Images are frozen; only the text roles receive gradients.
struct TripletBatch {
  Matrix te_an;
  Matrix im_p;
  Matrix im_n;
  Matrix te_n;

  void validate() const;
};

struct LossResult {
  double loss = 0.0;      // mean of per_row
  Vector per_row;
  Matrix grad_anchor;     // d loss / d te_an
  Matrix grad_negative;   // d loss / d te_n (zero for PATR)
};

template <typename A, typename B>
typename A::Scalar squared_distance(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& y) {
  if (x.size() != y.size()) throw ShapeError("squared_distance: width mismatch");
  return (x - y).squaredNorm();
}

LossResult m3l_loss(const TripletBatch& batch, const LossConfig& cfg);
LossResult patr_loss(const TripletBatch& batch, const LossConfig& cfg);

// Dispatches on cfg.kind.
LossResult compute_loss(const TripletBatch& batch, const LossConfig& cfg);

}  // namespace xret

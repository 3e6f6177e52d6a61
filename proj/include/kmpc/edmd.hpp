#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "kmpc/dictionary.hpp"
#include "kmpc/errors.hpp"

namespace kmpc {

/// Default relative cutoff for singular values in every pseudoinverse.
inline constexpr double kDefaultPinvRtol = 1e-10;

/// Snapshot pairs (z_i, ztilde_i) at lag h, all generated under one constant control.
struct SnapshotSet {
  double lag_time_h = 0.0;
  double control_value = 0.0;
  Eigen::MatrixXd Z;       // q x m
  Eigen::MatrixXd Ztilde;  // q x m

  Eigen::Index size() const { return Z.cols(); }

  void validate(std::size_t obs_dim) const {
    detail::require(lag_time_h > 0.0, "snapshot set: lag time must be positive");
    detail::require(Z.cols() >= 1, "snapshot set: empty (m = 0)");
    detail::require(Z.rows() == Ztilde.rows() && Z.cols() == Ztilde.cols(),
                    "snapshot set: Z and Ztilde shapes differ");
    detail::require(static_cast<std::size_t>(Z.rows()) == obs_dim,
                    "snapshot set: observation dimension " + std::to_string(Z.rows()) +
                        " does not match dictionary obs_dim " + std::to_string(obs_dim));
    detail::require(Z.allFinite() && Ztilde.allFinite(), "snapshot set: non-finite entries");
  }
};

/// Moore-Penrose pseudoinverse via SVD; singular values below rtol * sigma_max are dropped.
inline Eigen::MatrixXd pseudo_inverse(const Eigen::Ref<const Eigen::MatrixXd>& M,
                                      double rtol = kDefaultPinvRtol) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  const double cutoff = s.size() > 0 ? rtol * s(0) : 0.0;
  Eigen::VectorXd s_inv = Eigen::VectorXd::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > cutoff) s_inv(i) = 1.0 / s(i);
  }
  return svd.matrixV() * s_inv.asDiagonal() * svd.matrixU().transpose();
}

/// Finite-dimensional Koopman approximation for one constant control value.
struct KoopmanModel {
  Dictionary dict;
  double lag_time_h = 0.0;
  double control_value = 0.0;
  Eigen::MatrixXd U_transpose;  // k x k, maps psi(z_i) to psi(z_{i+1})
  long sample_count = 0;

  std::size_t size() const { return dict.size(); }
};

/**
 * EDMD fit: U^T = Psi_Ztilde * Psi_Z^+.
 *
 * Among all k x k matrices M this minimizes ||Psi_Ztilde - M Psi_Z||_F and has
 * minimum Frobenius norm when Psi_Z is rank deficient.
 */
inline KoopmanModel edmd_fit(const SnapshotSet& data, const Dictionary& dict,
                             double rtol = kDefaultPinvRtol) {
  data.validate(dict.obs_dim());
  const Eigen::MatrixXd psi_z = dict.lift_columns(data.Z);
  const Eigen::MatrixXd psi_zt = dict.lift_columns(data.Ztilde);

  // Psi_Z = W S V^T  =>  Psi_Ztilde Psi_Z^+ = (Psi_Ztilde V) S^+ W^T
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(psi_z, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  const double cutoff = rtol * s(0);
  Eigen::VectorXd s_inv = Eigen::VectorXd::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > cutoff) s_inv(i) = 1.0 / s(i);
  }
  Eigen::MatrixXd ut = (psi_zt * svd.matrixV()) * s_inv.asDiagonal() * svd.matrixU().transpose();
  if (!ut.allFinite()) throw NumericalError("edmd_fit: non-finite operator");
  return KoopmanModel{dict, data.lag_time_h, data.control_value, std::move(ut),
                      static_cast<long>(data.size())};
}

/**
 * Streaming EDMD state: A = mean psi(ztilde) psi(z)^T, G = mean psi(z) psi(z)^T.
 *
 * Only A, G and the effective count m are kept; no snapshot is stored.
 * Single writer. Refit cadence is up to the caller.
 */
class OnlineAccumulator {
 public:
  static OnlineAccumulator from_snapshots(const SnapshotSet& data, const Dictionary& dict) {
    data.validate(dict.obs_dim());
    const Eigen::MatrixXd psi_z = dict.lift_columns(data.Z);
    const Eigen::MatrixXd psi_zt = dict.lift_columns(data.Ztilde);
    const double m = static_cast<double>(data.size());
    OnlineAccumulator acc(dict, data.lag_time_h, data.control_value);
    acc.A_ = psi_zt * psi_z.transpose() / m;
    acc.G_ = psi_z * psi_z.transpose() / m;
    acc.m_ = data.size();
    return acc;
  }

  /// Weighted rank-one update; m advances by weight_q.
  void update(const Eigen::Ref<const Eigen::VectorXd>& z_new,
              const Eigen::Ref<const Eigen::VectorXd>& ztilde_new, long weight_q) {
    detail::require(weight_q >= 1, "online_update: weight q must be >= 1");
    const Eigen::VectorXd pz = dict_.lift(z_new);
    const Eigen::VectorXd pzt = dict_.lift(ztilde_new);
    const double m = static_cast<double>(m_);
    const double q = static_cast<double>(weight_q);
    A_ = (m * A_ + q * (pzt * pz.transpose())) / (m + q);
    G_ = (m * G_ + q * (pz * pz.transpose())) / (m + q);
    m_ += weight_q;
  }

  /// U^T = A G^+ with the same pseudoinverse convention as edmd_fit.
  KoopmanModel refit(double rtol = kDefaultPinvRtol) const {
    if (!A_.allFinite() || !G_.allFinite()) throw NumericalError("refit: non-finite accumulator");
    Eigen::MatrixXd ut = A_ * pseudo_inverse(G_, rtol);
    if (!ut.allFinite()) throw NumericalError("refit: non-finite operator");
    return KoopmanModel{dict_, lag_time_h_, control_value_, std::move(ut), m_};
  }

  const Dictionary& dict() const { return dict_; }
  const Eigen::MatrixXd& A() const { return A_; }
  const Eigen::MatrixXd& G() const { return G_; }
  long sample_count() const { return m_; }
  double control_value() const { return control_value_; }
  double lag_time_h() const { return lag_time_h_; }

 private:
  OnlineAccumulator(Dictionary dict, double lag, double u)
      : dict_(std::move(dict)), lag_time_h_(lag), control_value_(u) {}

  Dictionary dict_;
  double lag_time_h_;
  double control_value_;
  Eigen::MatrixXd A_;
  Eigen::MatrixXd G_;
  long m_ = 0;
};

/// Weight q = floor(m * eps / (1 - eps)), at least 1.
inline long weight_from_fraction(long m, double epsilon) {
  detail::require(m >= 1, "weight_from_fraction: m must be >= 1");
  detail::require(epsilon > 0.0 && epsilon < 1.0, "weight_from_fraction: epsilon must lie in (0, 1)");
  const auto q = static_cast<long>(std::floor(static_cast<double>(m) * epsilon / (1.0 - epsilon)));
  return q < 1 ? 1 : q;
}

}  // namespace kmpc

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kmpc/dictionary.hpp"
#include "kmpc/edmd.hpp"
#include "kmpc/errors.hpp"

namespace kmpc {

/// psi(z_{i+1}) = U^T psi(z_i)
inline Eigen::VectorXd krom_step(const KoopmanModel& model,
                                 const Eigen::Ref<const Eigen::VectorXd>& lifted) {
  if (lifted.size() != model.U_transpose.cols()) {
    throw ValidationError("krom_step: lifted vector has length " + std::to_string(lifted.size()) +
                          ", model dimension is " + std::to_string(model.U_transpose.cols()));
  }
  return model.U_transpose * lifted;
}

namespace detail {

inline void require_compatible(const KoopmanModel& a, const KoopmanModel& b, const char* who) {
  require(a.dict == b.dict, std::string(who) + ": models use different dictionaries");
  require(a.lag_time_h == b.lag_time_h, std::string(who) + ": models use different lag times");
}

}  // namespace detail

/// n_c autonomous K-ROMs sharing one dictionary and lag, sorted by control value.
class SwitchedBank {
 public:
  explicit SwitchedBank(std::vector<KoopmanModel> models) : models_(std::move(models)) {
    detail::require(models_.size() >= 2, "switched bank: need at least two models");
    std::sort(models_.begin(), models_.end(),
              [](const auto& a, const auto& b) { return a.control_value < b.control_value; });
    for (std::size_t j = 1; j < models_.size(); ++j) {
      detail::require_compatible(models_[0], models_[j], "switched bank");
      detail::require(models_[j - 1].control_value < models_[j].control_value,
                      "switched bank: control values must be distinct");
    }
  }

  std::size_t size() const { return models_.size(); }
  const KoopmanModel& operator[](std::size_t j) const { return models_.at(j); }
  const std::vector<KoopmanModel>& models() const { return models_; }
  const Dictionary& dict() const { return models_.front().dict; }
  double lag_time_h() const { return models_.front().lag_time_h; }

  std::vector<double> control_values() const {
    std::vector<double> u;
    for (const auto& m : models_) u.push_back(m.control_value);
    return u;
  }

  /// Replaces model j, e.g. after an online refit. Control value and dictionary must match.
  void replace(std::size_t j, KoopmanModel model) {
    detail::require(j < models_.size(), "switched bank: index out of range");
    detail::require_compatible(models_[j], model, "switched bank replace");
    detail::require(models_[j].control_value == model.control_value,
                    "switched bank replace: control value changed");
    models_[j] = std::move(model);
  }

 private:
  std::vector<KoopmanModel> models_;
};

/**
 * Lifts z0 once, applies U^T_{sequence[i]} per step and projects after every
 * step. Returns one observation per sequence entry.
 */
inline std::vector<Eigen::VectorXd> predict_switched(const SwitchedBank& bank,
                                                     const Eigen::Ref<const Eigen::VectorXd>& z0,
                                                     std::span<const std::size_t> sequence) {
  for (auto j : sequence) {
    if (j >= bank.size()) {
      throw ValidationError("predict_switched: control index " + std::to_string(j) +
                            " out of range [0, " + std::to_string(bank.size()) + ")");
    }
  }
  std::vector<Eigen::VectorXd> out;
  if (sequence.empty()) return out;
  Eigen::VectorXd psi = bank.dict().lift(z0);
  out.reserve(sequence.size());
  for (auto j : sequence) {
    psi = bank[j].U_transpose * psi;
    out.push_back(bank.dict().project(psi));
  }
  return out;
}

/// Diagnostic variant: re-lifts the projected observation before every step.
inline std::vector<Eigen::VectorXd> predict_switched_relifted(
    const SwitchedBank& bank, const Eigen::Ref<const Eigen::VectorXd>& z0,
    std::span<const std::size_t> sequence) {
  std::vector<Eigen::VectorXd> out;
  Eigen::VectorXd z = z0;
  for (auto j : sequence) {
    detail::require(j < bank.size(), "predict_switched_relifted: control index out of range");
    z = bank.dict().project(bank[j].U_transpose * bank.dict().lift(z));
    out.push_back(z);
  }
  return out;
}

/**
 * Bilinear surrogate psi+ = (A + alpha B) psi, alpha = (u - u_lo) / (u_hi - u_lo),
 * with A = U^T_lo and B = U^T_hi - U^T_lo.
 *
 * At alpha = 1 the stored U^T_hi is applied directly so anchor predictions are
 * bit-identical to the switched models.
 */
class BilinearModel {
 public:
  static BilinearModel build(const KoopmanModel& a, const KoopmanModel& b) {
    detail::require_compatible(a, b, "build_bilinear");
    detail::require(a.control_value != b.control_value, "build_bilinear: equal control values");
    const bool ordered = a.control_value < b.control_value;
    const KoopmanModel& lo = ordered ? a : b;
    const KoopmanModel& hi = ordered ? b : a;
    return BilinearModel(lo.dict, lo.lag_time_h, lo.control_value, hi.control_value,
                         lo.U_transpose, hi.U_transpose);
  }

  const Dictionary& dict() const { return dict_; }
  double lag_time_h() const { return lag_; }
  double u_lo() const { return u_lo_; }
  double u_hi() const { return u_hi_; }
  const Eigen::MatrixXd& A() const { return A_; }
  const Eigen::MatrixXd& B() const { return B_; }
  const Eigen::MatrixXd& anchor_hi() const { return hi_; }

  double alpha(double u) const {
    if (!(u >= u_lo_ && u <= u_hi_)) {
      throw ValidationError("bilinear_step: u = " + std::to_string(u) + " outside [" +
                            std::to_string(u_lo_) + ", " + std::to_string(u_hi_) + "]");
    }
    if (u == u_hi_) return 1.0;
    return (u - u_lo_) / (u_hi_ - u_lo_);
  }

  /// Step with interpolation weight alpha in [0, 1].
  Eigen::VectorXd step_alpha(const Eigen::Ref<const Eigen::VectorXd>& lifted, double a) const {
    detail::require(lifted.size() == A_.cols(), "bilinear_step: lifted vector length mismatch");
    if (a == 0.0) return A_ * lifted;
    if (a == 1.0) return hi_ * lifted;
    return A_ * lifted + a * (B_ * lifted);
  }

  Eigen::VectorXd step(const Eigen::Ref<const Eigen::VectorXd>& lifted, double u) const {
    return step_alpha(lifted, alpha(u));
  }

  /// Effective one-step operator A + alpha B (used by the adjoint gradient).
  Eigen::MatrixXd operator_at(double a) const {
    if (a == 0.0) return A_;
    if (a == 1.0) return hi_;
    return A_ + a * B_;
  }

 private:
  BilinearModel(Dictionary dict, double lag, double u_lo, double u_hi, Eigen::MatrixXd lo,
                Eigen::MatrixXd hi)
      : dict_(std::move(dict)), lag_(lag), u_lo_(u_lo), u_hi_(u_hi), A_(std::move(lo)),
        hi_(std::move(hi)) {
    B_ = hi_ - A_;
    if (!A_.allFinite() || !hi_.allFinite()) throw NumericalError("bilinear model: non-finite operator");
  }

  Dictionary dict_;
  double lag_;
  double u_lo_, u_hi_;
  Eigen::MatrixXd A_, hi_, B_;
};

inline Eigen::VectorXd bilinear_step(const BilinearModel& model,
                                     const Eigen::Ref<const Eigen::VectorXd>& lifted, double u) {
  return model.step(lifted, u);
}

inline BilinearModel build_bilinear(const KoopmanModel& a, const KoopmanModel& b) {
  return BilinearModel::build(a, b);
}

/// Piecewise-bilinear family over [u^0, u^{n_c-1}]; segment l covers [u^l, u^{l+1}), last one closed.
class LocalizedBilinear {
 public:
  explicit LocalizedBilinear(const SwitchedBank& bank) {
    for (std::size_t l = 0; l + 1 < bank.size(); ++l) {
      segments_.push_back(BilinearModel::build(bank[l], bank[l + 1]));
    }
  }

  explicit LocalizedBilinear(BilinearModel single) { segments_.push_back(std::move(single)); }

  std::size_t size() const { return segments_.size(); }
  const BilinearModel& segment(std::size_t l) const { return segments_.at(l); }
  const std::vector<BilinearModel>& segments() const { return segments_; }
  const Dictionary& dict() const { return segments_.front().dict(); }
  double lag_time_h() const { return segments_.front().lag_time_h(); }
  double u_min() const { return segments_.front().u_lo(); }
  double u_max() const { return segments_.back().u_hi(); }

  std::vector<double> anchors() const {
    std::vector<double> out;
    for (const auto& s : segments_) out.push_back(s.u_lo());
    out.push_back(segments_.back().u_hi());
    return out;
  }

  struct Selection {
    std::size_t index;
    double alpha;
  };

  Selection select(double u) const {
    if (!(u >= u_min() && u <= u_max())) {
      throw ValidationError("select_segment: u = " + std::to_string(u) + " outside [" +
                            std::to_string(u_min()) + ", " + std::to_string(u_max()) + "]");
    }
    std::size_t l = 0;
    while (l + 1 < segments_.size() && u >= segments_[l].u_hi()) ++l;
    return {l, segments_[l].alpha(u)};
  }

  Eigen::VectorXd step(const Eigen::Ref<const Eigen::VectorXd>& lifted, double u) const {
    const auto sel = select(u);
    return segments_[sel.index].step_alpha(lifted, sel.alpha);
  }

 private:
  std::vector<BilinearModel> segments_;
};

inline std::pair<const BilinearModel&, double> select_segment(const LocalizedBilinear& local,
                                                             double u) {
  const auto sel = local.select(u);
  return {local.segment(sel.index), sel.alpha};
}

}  // namespace kmpc

#pragma once

// Reference implementations used only by the tests. Each one is written
// independently of the library code path it checks.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include <kmpc/kmpc.hpp>

namespace oracle {

inline long binomial(long n, long k) {
  long r = 1;
  for (long i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

/// Counts tuples in {0..d}^q with sum <= d by odometer enumeration.
inline long count_monomials(int q, int d) {
  std::vector<int> e(static_cast<std::size_t>(q), 0);
  long count = 0;
  while (true) {
    int s = 0;
    for (int v : e) s += v;
    if (s <= d) ++count;
    std::size_t pos = 0;
    while (pos < e.size() && e[pos] == d) e[pos++] = 0;
    if (pos == e.size()) break;
    ++e[pos];
  }
  return count;
}

/// Pseudoinverse of a symmetric PSD matrix through its eigen-decomposition.
inline Eigen::MatrixXd pinv_symmetric(const Eigen::MatrixXd& S, double rtol) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double top = ev.cwiseAbs().maxCoeff();
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(ev.size());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) > rtol * top) inv(i) = 1.0 / ev(i);
  }
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

/// Direct monomial evaluation with std::pow.
inline Eigen::MatrixXd lift_pow(const kmpc::Dictionary& d, const Eigen::MatrixXd& Z) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(d.size()), Z.cols());
  for (Eigen::Index c = 0; c < Z.cols(); ++c) {
    for (std::size_t j = 0; j < d.size(); ++j) {
      double v = 1.0;
      for (Eigen::Index i = 0; i < Z.rows(); ++i) v *= std::pow(Z(i, c), d.exponents()[j][static_cast<std::size_t>(i)]);
      out(static_cast<Eigen::Index>(j), c) = v;
    }
  }
  return out;
}

/// (Psi_Zt Psi_Z^T)(Psi_Z Psi_Z^T)^+
inline Eigen::MatrixXd normal_equations(const kmpc::Dictionary& d, const Eigen::MatrixXd& Z,
                                        const Eigen::MatrixXd& Zt, double rtol = 1e-20) {
  const Eigen::MatrixXd pz = lift_pow(d, Z);
  const Eigen::MatrixXd pzt = lift_pow(d, Zt);
  return (pzt * pz.transpose()) * pinv_symmetric(pz * pz.transpose(), rtol);
}

inline Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double a = 1.0) {
  std::uniform_real_distribution<double> u(-a, a);
  Eigen::MatrixXd M(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) M(i, j) = u(rng);
  }
  return M;
}

/// Snapshot set of `m` random pairs of the linear plant under constant u.
inline kmpc::SnapshotSet linear_pairs(const kmpc::LinearTestPlant& p, double u, Eigen::Index m, std::mt19937_64& rng) {
  kmpc::SnapshotSet s;
  s.lag_time_h = p.sample_time();
  s.control_value = u;
  s.Z = random_matrix(p.state_dim(), m, rng);
  s.Ztilde.resize(p.state_dim(), m);
  for (Eigen::Index c = 0; c < m; ++c) s.Ztilde.col(c) = p.M() * s.Z.col(c) + p.N() * u;
  return s;
}

/// Exactly fitted bank for the linear plant (degree 1, informative data).
inline kmpc::SwitchedBank linear_bank(const kmpc::LinearTestPlant& p, const std::vector<double>& values,
                                      std::mt19937_64& rng) {
  const auto dict = kmpc::build_dictionary(static_cast<std::size_t>(p.state_dim()), 1);
  std::vector<kmpc::KoopmanModel> ms;
  for (double u : values) ms.push_back(kmpc::edmd_fit(linear_pairs(p, u, 4 * p.state_dim() + 4, rng), dict));
  return kmpc::SwitchedBank(ms);
}

struct Enumerated {
  std::vector<std::size_t> sequence;
  double cost = std::numeric_limits<double>::infinity();
  double runner_up = std::numeric_limits<double>::infinity();
};

/**
 * Decodes every integer in [0, n^p) to an index sequence (most significant
 * digit first) and rolls it out with `rollout(seq)` returning the cost.
 */
template <class Rollout>
Enumerated enumerate_all(std::size_t n, int p, const Rollout& rollout) {
  Enumerated best;
  std::size_t total = 1;
  for (int i = 0; i < p; ++i) total *= n;
  for (std::size_t code = 0; code < total; ++code) {
    std::vector<std::size_t> seq(static_cast<std::size_t>(p));
    std::size_t c = code;
    for (int i = p - 1; i >= 0; --i) {
      seq[static_cast<std::size_t>(i)] = c % n;
      c /= n;
    }
    const double cost = rollout(seq);
    if (cost < best.cost) {
      best.runner_up = best.cost;
      best.cost = cost;
      best.sequence = seq;
    } else if (cost < best.runner_up) {
      best.runner_up = cost;
    }
  }
  return best;
}

/// Cost of a control sequence on the linear plant, stage j against ref(t_s + (j+1) h).
inline double linear_rollout_cost(const kmpc::LinearTestPlant& p, const Eigen::VectorXd& z0,
                                  const std::vector<double>& u, const kmpc::MpcConfig& cfg, double t_s) {
  Eigen::VectorXd z = z0;
  double c = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    z = p.M() * z + p.N() * u[j];
    const Eigen::VectorXd r = cfg.reference(t_s + static_cast<double>(j + 1) * cfg.sample_time);
    for (std::size_t i = 0; i < cfg.tracked.size(); ++i) {
      const double e = z(static_cast<Eigen::Index>(cfg.tracked[i])) - r(static_cast<Eigen::Index>(i));
      c += e * e;
    }
  }
  return c;
}

}  // namespace oracle

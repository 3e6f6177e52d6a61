#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "kmpc/errors.hpp"

namespace kmpc {

/// Exponent tuple of one monomial, one entry per observed quantity.
using Exponent = std::vector<int>;

/**
 * Ordered monomial basis psi over a q-dimensional observation.
 *
 * Entry 0 is always the constant monomial. When any entry has positive degree,
 * entries 1..q are the pure degree-1 monomials z_1..z_q, so the projection back
 * to the observation is the index slice [1, q].
 */
class Dictionary {
 public:
  Dictionary(std::size_t obs_dim, std::vector<Exponent> exponents)
      : obs_dim_(obs_dim), exponents_(std::move(exponents)) {
    detail::require(obs_dim_ >= 1, "dictionary: obs_dim must be >= 1");
    detail::require(!exponents_.empty(), "dictionary: exponent list is empty");
    max_degree_ = 0;
    for (const auto& e : exponents_) {
      detail::require(e.size() == obs_dim_, "dictionary: exponent tuple length differs from obs_dim");
      int deg = 0;
      for (int p : e) {
        detail::require(p >= 0, "dictionary: negative exponent");
        deg += p;
      }
      max_degree_ = std::max(max_degree_, deg);
    }
    detail::require(degree(0) == 0, "dictionary: first entry must be the constant monomial");
    if (max_degree_ >= 1) {
      detail::require(exponents_.size() >= obs_dim_ + 1, "dictionary: missing degree-1 monomials");
      for (std::size_t v = 0; v < obs_dim_; ++v) {
        const auto& e = exponents_[v + 1];
        for (std::size_t w = 0; w < obs_dim_; ++w) {
          detail::require(e[w] == (v == w ? 1 : 0),
                          "dictionary: entries 1..q must be z_1..z_q in order");
        }
      }
    }
  }

  std::size_t obs_dim() const { return obs_dim_; }
  int max_degree() const { return max_degree_; }
  std::size_t size() const { return exponents_.size(); }
  const std::vector<Exponent>& exponents() const { return exponents_; }

  int degree(std::size_t j) const {
    return std::accumulate(exponents_[j].begin(), exponents_[j].end(), 0);
  }

  /// psi(z). Entry j is prod_v z_v^{exponents[j][v]}.
  Eigen::VectorXd lift(const Eigen::Ref<const Eigen::VectorXd>& z) const {
    if (static_cast<std::size_t>(z.size()) != obs_dim_) {
      throw ValidationError("lift: observation has length " + std::to_string(z.size()) +
                            ", dictionary expects " + std::to_string(obs_dim_));
    }
    if (!z.allFinite()) throw ValidationError("lift: non-finite observation");
    const auto q = static_cast<Eigen::Index>(obs_dim_);
    // powers(v, p) = z_v^p
    Eigen::MatrixXd powers(q, max_degree_ + 1);
    for (Eigen::Index v = 0; v < q; ++v) {
      powers(v, 0) = 1.0;
      for (int p = 1; p <= max_degree_; ++p) powers(v, p) = powers(v, p - 1) * z(v);
    }
    Eigen::VectorXd out(static_cast<Eigen::Index>(size()));
    for (std::size_t j = 0; j < size(); ++j) {
      double prod = 1.0;
      const auto& e = exponents_[j];
      for (Eigen::Index v = 0; v < q; ++v) {
        if (e[v] != 0) prod *= powers(v, e[v]);
      }
      out(static_cast<Eigen::Index>(j)) = prod;
    }
    return out;
  }

  /// Lifts every column of a q x m matrix into a k x m matrix.
  Eigen::MatrixXd lift_columns(const Eigen::Ref<const Eigen::MatrixXd>& Z) const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(size()), Z.cols());
    for (Eigen::Index i = 0; i < Z.cols(); ++i) out.col(i) = lift(Z.col(i));
    return out;
  }

  /// P: the degree-1 coordinates of a lifted vector.
  Eigen::VectorXd project(const Eigen::Ref<const Eigen::VectorXd>& lifted) const {
    if (max_degree_ < 1) {
      throw ValidationError("project: dictionary has no degree-1 coordinates (max_degree = 0)");
    }
    if (static_cast<std::size_t>(lifted.size()) != size()) {
      throw ValidationError("project: lifted vector has length " + std::to_string(lifted.size()) +
                            ", dictionary size is " + std::to_string(size()));
    }
    return lifted.segment(1, static_cast<Eigen::Index>(obs_dim_));
  }

  friend bool operator==(const Dictionary& a, const Dictionary& b) {
    return a.obs_dim_ == b.obs_dim_ && a.exponents_ == b.exponents_;
  }

 private:
  std::size_t obs_dim_;
  int max_degree_ = 0;
  std::vector<Exponent> exponents_;
};

namespace detail {

// All exponent tuples of total degree `remaining` over variables [var, q), in
// lexicographically descending order (larger power of earlier variables first).
inline void append_degree(std::size_t q, std::size_t var, int remaining, Exponent& cur,
                          std::vector<Exponent>& out) {
  if (var + 1 == q) {
    cur[var] = remaining;
    out.push_back(cur);
    cur[var] = 0;
    return;
  }
  for (int p = remaining; p >= 0; --p) {
    cur[var] = p;
    append_degree(q, var + 1, remaining - p, cur, out);
  }
  cur[var] = 0;
}

}  // namespace detail

/// All monomials in `obs_dim` variables of total degree <= `max_degree`, graded-lex ordered.
inline Dictionary build_dictionary(std::size_t obs_dim, int max_degree) {
  detail::require(obs_dim >= 1, "build_dictionary: obs_dim must be >= 1");
  detail::require(max_degree >= 0, "build_dictionary: max_degree must be >= 0");
  std::vector<Exponent> exps;
  Exponent cur(obs_dim, 0);
  for (int deg = 0; deg <= max_degree; ++deg) detail::append_degree(obs_dim, 0, deg, cur, exps);
  return Dictionary(obs_dim, std::move(exps));
}

}  // namespace kmpc

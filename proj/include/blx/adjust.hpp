#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "blx/errors.hpp"
#include "blx/matrix.hpp"

namespace blx {

inline constexpr double kResolutionSlack = 1e-8;  // tolerated overshoot outside [0, 1]

/// A full second-order prior specification over a belief collection B and a
/// data collection D: means, variances and the cross-covariance.
struct SecondOrderBeliefs {
  Vector mean_b;
  Vector mean_d;
  SymMatrix var_b;
  SymMatrix var_d;
  Matrix cov_bd;

  int belief_dim() const { return static_cast<int>(mean_b.size()); }
  int data_dim() const { return static_cast<int>(mean_d.size()); }

  Matrix joint_covariance() const {
    const int r = var_b.dim();
    const int s = var_d.dim();
    Matrix j(r + s, r + s);
    j.topLeftCorner(r, r) = var_b.mat();
    j.topRightCorner(r, s) = cov_bd;
    j.bottomLeftCorner(s, r) = cov_bd.transpose();
    j.bottomRightCorner(s, s) = var_d.mat();
    return j;
  }

  void check_dims() const {
    if (var_b.dim() != mean_b.size() || var_d.dim() != mean_d.size() ||
        cov_bd.rows() != mean_b.size() || cov_bd.cols() != mean_d.size()) {
      throw dim_mismatch("SecondOrderBeliefs: inconsistent dimensions");
    }
  }
};

/// Canonical directions (unit prior variance, mutually uncorrelated) and
/// their resolutions, descending.
struct CanonicalStructure {
  Matrix directions;   // columns h_j, coefficient vectors over B
  Vector resolutions;  // in [0, 1], descending
  std::vector<std::vector<int>> eigenspaces;
};

struct AdjustedBeliefs {
  Vector adjusted_mean;
  SymMatrix adjusted_var;
  Matrix resolution_transform;
  CanonicalStructure canonical;
};

namespace detail {

// Cov(B,D) Var'(D) Cov(D,B): the part of Var(B) resolved by D.
inline SymMatrix resolved_variance(const SecondOrderBeliefs& b) {
  const Matrix s = b.cov_bd * pinv(b.var_d).mat() * b.cov_bd.transpose();
  return SymMatrix(0.5 * (s + s.transpose()));
}

inline void check_resolution_range(Vector& resolutions) {
  for (int i = 0; i < resolutions.size(); ++i) {
    double& v = resolutions(i);
    if (v < -kResolutionSlack || v > 1.0 + kResolutionSlack) {
      throw numeric_error("canonical resolution " + std::to_string(v) +
                          " lies outside [0, 1] beyond tolerance");
    }
    v = std::clamp(v, 0.0, 1.0);
  }
}

// Canonical structure from the pencil S h = lambda Var(B) h. When Var(B) is
// singular the problem is solved on its numerical range and lifted back, so
// every returned direction still has unit prior variance.
inline CanonicalStructure canonical_structure(const SymMatrix& resolved, const SymMatrix& var_b) {
  CanonicalStructure out;
  if (check_spd(var_b)) {
    GeneralizedEigenResult r = canonical_pencil(resolved, var_b);
    out.directions = std::move(r.directions);
    out.resolutions = std::move(r.resolutions);
    out.eigenspaces = std::move(r.eigenspaces);
    check_resolution_range(out.resolutions);
    return out;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(var_b.mat());
  const Vector& vals = es.eigenvalues();
  const double cutoff =
      var_b.dim() * std::numeric_limits<double>::epsilon() * vals.cwiseAbs().maxCoeff();
  std::vector<int> keep;
  for (int i = 0; i < vals.size(); ++i) {
    if (vals(i) > cutoff) keep.push_back(i);
  }
  Matrix q(var_b.dim(), keep.size());
  Vector kept_vals(keep.size());
  for (size_t i = 0; i < keep.size(); ++i) {
    q.col(i) = es.eigenvectors().col(keep[i]);
    kept_vals(i) = vals(keep[i]);
  }
  const SymMatrix reduced_resolved(q.transpose() * resolved.mat() * q);
  const SymMatrix reduced_var{Matrix(kept_vals.asDiagonal())};
  GeneralizedEigenResult r = canonical_pencil(reduced_resolved, reduced_var);
  out.directions = q * r.directions;
  out.resolutions = std::move(r.resolutions);
  out.eigenspaces = std::move(r.eigenspaces);
  check_resolution_range(out.resolutions);
  return out;
}

}  // namespace detail

/// Adjusted expectation and variance of B given an observation of D, plus the
/// resolution transform and its canonical structure.
inline AdjustedBeliefs adjust(const SecondOrderBeliefs& beliefs, const Vector& observed_d) {
  beliefs.check_dims();
  if (observed_d.size() != beliefs.data_dim()) {
    throw dim_mismatch("adjust: observed data has length " + std::to_string(observed_d.size()) +
                       ", expected " + std::to_string(beliefs.data_dim()));
  }
  const SymMatrix var_d_pinv = pinv(beliefs.var_d);
  const Matrix gain = beliefs.cov_bd * var_d_pinv.mat();

  AdjustedBeliefs out;
  out.adjusted_mean = beliefs.mean_b + gain * (observed_d - beliefs.mean_d);
  const Matrix av = beliefs.var_b.mat() - gain * beliefs.cov_bd.transpose();
  out.adjusted_var = SymMatrix(0.5 * (av + av.transpose()));
  const SymMatrix resolved = detail::resolved_variance(beliefs);
  out.resolution_transform = pinv(beliefs.var_b).mat() * resolved.mat();
  out.canonical = detail::canonical_structure(resolved, beliefs.var_b);
  return out;
}

/// Proportionate variance reduction of the linear functional h'B.
inline double resolution_of(const SecondOrderBeliefs& beliefs, const Vector& functional) {
  beliefs.check_dims();
  if (functional.size() != beliefs.belief_dim()) {
    throw dim_mismatch("resolution_of: functional has wrong length");
  }
  const double prior = functional.dot(beliefs.var_b.mat() * functional);
  const double scale = beliefs.var_b.mat().cwiseAbs().maxCoeff() * functional.squaredNorm();
  if (!(prior > 1e-14 * std::max(scale, 1e-300))) {
    throw zero_prior_variance("resolution_of: functional has zero prior variance");
  }
  const SymMatrix resolved = detail::resolved_variance(beliefs);
  double res = functional.dot(resolved.mat() * functional) / prior;
  if (res < -kResolutionSlack || res > 1.0 + kResolutionSlack) {
    throw numeric_error("resolution " + std::to_string(res) + " outside [0, 1] beyond tolerance");
  }
  return std::clamp(res, 0.0, 1.0);
}

/// One term of a resolution partition: squared prior correlation with a
/// canonical direction, and that direction's resolution.
struct PartitionTerm {
  double weight;
  double resolution;
};

/// Resolution partition of h'B over the canonical directions. Weights sum
/// to one and weight-averaged resolutions reproduce resolution_of.
inline std::vector<PartitionTerm> resolution_partition(const SecondOrderBeliefs& beliefs,
                                                       const Vector& functional) {
  beliefs.check_dims();
  if (functional.size() != beliefs.belief_dim()) {
    throw dim_mismatch("resolution_partition: functional has wrong length");
  }
  const double prior = functional.dot(beliefs.var_b.mat() * functional);
  const double scale = beliefs.var_b.mat().cwiseAbs().maxCoeff() * functional.squaredNorm();
  if (!(prior > 1e-14 * std::max(scale, 1e-300))) {
    throw zero_prior_variance("resolution_partition: functional has zero prior variance");
  }
  const SymMatrix resolved = detail::resolved_variance(beliefs);
  const CanonicalStructure canon = detail::canonical_structure(resolved, beliefs.var_b);
  std::vector<PartitionTerm> terms;
  terms.reserve(canon.resolutions.size());
  for (int j = 0; j < canon.resolutions.size(); ++j) {
    const double cov = functional.dot(beliefs.var_b.mat() * canon.directions.col(j));
    terms.push_back({cov * cov / prior, canon.resolutions(j)});
  }
  return terms;
}

/// Trace of the resolution transform, equal to the sum of the canonical
/// resolutions.
inline double resolved_uncertainty(const SecondOrderBeliefs& beliefs) {
  beliefs.check_dims();
  const SymMatrix resolved = detail::resolved_variance(beliefs);
  return (pinv(beliefs.var_b).mat() * resolved.mat()).trace();
}

}  // namespace blx

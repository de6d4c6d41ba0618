#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

#include <cmath>
#include <string>
#include <vector>

#include "blx/errors.hpp"

namespace blx {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Numerical policy shared across the library.
inline constexpr double kSymmetryRelTol = 1e-10;   // accepted asymmetry on construction
inline constexpr double kSpdPivotRel = 1e-12;      // Cholesky pivot cutoff, relative to max diagonal
inline constexpr double kEigenGapRel = 1e-9;       // eigenvalues closer than this merge into one eigenspace
inline constexpr double kEigenZeroFloor = 1e-12;   // absolute floor for merging near-zero eigenvalues
inline constexpr double kSignEps = 1e-9;           // first component larger than this fixes a column's sign

/// Dense symmetric matrix. Construction symmetrizes the input and rejects
/// anything asymmetric beyond kSymmetryRelTol relative to the largest entry.
class SymMatrix {
 public:
  SymMatrix() = default;

  explicit SymMatrix(const Matrix& m) {
    if (m.rows() != m.cols()) {
      throw dim_mismatch("SymMatrix: input is " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()) + ", expected square");
    }
    const double scale = m.size() > 0 ? m.cwiseAbs().maxCoeff() : 0.0;
    const double asym = m.size() > 0 ? (m - m.transpose()).cwiseAbs().maxCoeff() : 0.0;
    if (asym > kSymmetryRelTol * std::max(scale, 1e-300)) {
      throw spec_error("SymMatrix: input asymmetric (max |m_ij - m_ji| = " + std::to_string(asym) +
                       ")");
    }
    m_ = 0.5 * (m + m.transpose());
  }

  static SymMatrix identity(int n) { return SymMatrix(Matrix::Identity(n, n)); }

  static SymMatrix diagonal(const Vector& d) {
    return SymMatrix(Matrix(d.asDiagonal()));
  }

  int dim() const { return static_cast<int>(m_.rows()); }
  const Matrix& mat() const { return m_; }
  double operator()(int i, int j) const { return m_(i, j); }

 private:
  Matrix m_;
};

/// True iff a Cholesky factorization succeeds with every pivot above
/// kSpdPivotRel times the largest diagonal entry. Total on symmetric input.
inline bool check_spd(const SymMatrix& m) {
  const int n = m.dim();
  if (n == 0) return true;
  const double max_diag = m.mat().diagonal().maxCoeff();
  if (!(max_diag > 0.0)) return false;
  const double cutoff = kSpdPivotRel * max_diag;
  Matrix l = Matrix::Zero(n, n);
  for (int j = 0; j < n; ++j) {
    double d = m(j, j) - l.row(j).head(j).squaredNorm();
    if (!(d > cutoff)) return false;
    l(j, j) = std::sqrt(d);
    for (int i = j + 1; i < n; ++i) {
      l(i, j) = (m(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
    }
  }
  return true;
}

/// Solution of a symmetric-definite generalized eigenproblem
/// lhs * X = rhs * X * diag(resolutions).
struct GeneralizedEigenResult {
  Matrix directions;    // columns are eigenvectors
  Vector resolutions;   // descending
  // Column indices grouped by (numerically) equal eigenvalue, in order.
  std::vector<std::vector<int>> eigenspaces;
};

namespace detail {

inline std::vector<std::vector<int>> partition_eigenspaces(const Vector& values) {
  std::vector<std::vector<int>> spaces;
  for (int i = 0; i < values.size(); ++i) {
    bool merge = false;
    if (!spaces.empty()) {
      const double prev = values(spaces.back().back());
      const double gap = std::abs(prev - values(i));
      merge = gap <= kEigenGapRel * std::max(std::abs(prev), std::abs(values(i))) ||
              gap <= kEigenZeroFloor;
    }
    if (merge) {
      spaces.back().push_back(i);
    } else {
      spaces.push_back({i});
    }
  }
  return spaces;
}

inline void fix_column_signs(Matrix& x) {
  for (int j = 0; j < x.cols(); ++j) {
    for (int i = 0; i < x.rows(); ++i) {
      if (std::abs(x(i, j)) > kSignEps) {
        if (x(i, j) < 0.0) x.col(j) = -x.col(j);
        break;
      }
    }
  }
}

// Shared pencil solve: lhs * x = lambda * rhs * x with rhs SPD, eigenvalues
// descending and columns normalized so that x' * rhs * x = 1.
inline GeneralizedEigenResult pencil_rhs_normalized(const Matrix& lhs, const Matrix& rhs) {
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> solver(lhs, rhs,
                                                          Eigen::ComputeEigenvectors | Eigen::Ax_lBx);
  if (solver.info() != Eigen::Success) {
    throw numeric_error("generalized eigensolver failed to converge");
  }
  const int n = static_cast<int>(lhs.rows());
  GeneralizedEigenResult out;
  out.resolutions.resize(n);
  out.directions.resize(n, n);
  for (int j = 0; j < n; ++j) {  // Eigen returns ascending order
    out.resolutions(j) = solver.eigenvalues()(n - 1 - j);
    out.directions.col(j) = solver.eigenvectors().col(n - 1 - j);
  }
  fix_column_signs(out.directions);
  out.eigenspaces = partition_eigenspaces(out.resolutions);
  return out;
}

}  // namespace detail

/// Solves lhs * X = rhs * X * diag(resolutions) for an SPD pair, columns
/// normalized so that X' * lhs * X = I and ordered by descending eigenvalue.
/// The first component of each column exceeding kSignEps in magnitude is
/// made positive.
inline GeneralizedEigenResult gen_eig(const SymMatrix& lhs, const SymMatrix& rhs) {
  if (lhs.dim() != rhs.dim()) {
    throw dim_mismatch("gen_eig: lhs is " + std::to_string(lhs.dim()) + "-dim, rhs is " +
                       std::to_string(rhs.dim()) + "-dim");
  }
  if (!check_spd(lhs)) throw not_spd("gen_eig: lhs not positive definite");
  if (!check_spd(rhs)) throw not_spd("gen_eig: rhs not positive definite");
  GeneralizedEigenResult out = detail::pencil_rhs_normalized(lhs.mat(), rhs.mat());
  // x' * rhs * x = 1 implies x' * lhs * x = lambda; rescale to the lhs metric.
  for (int j = 0; j < out.directions.cols(); ++j) {
    const double lambda = out.resolutions(j);
    if (!(lambda > 0.0)) {
      throw numeric_error("gen_eig: nonpositive eigenvalue " + std::to_string(lambda) +
                          " from an SPD pencil");
    }
    out.directions.col(j) /= std::sqrt(lambda);
  }
  return out;
}

/// Pencil solve for a PSD lhs against an SPD rhs, columns normalized in the
/// rhs metric (X' * rhs * X = I). This is the form canonical analyses use:
/// the rhs is a prior variance and eigenvalues are resolutions.
inline GeneralizedEigenResult canonical_pencil(const SymMatrix& lhs, const SymMatrix& rhs) {
  if (lhs.dim() != rhs.dim()) {
    throw dim_mismatch("canonical_pencil: dimension mismatch");
  }
  if (!check_spd(rhs)) throw not_spd("canonical_pencil: rhs not positive definite");
  return detail::pencil_rhs_normalized(lhs.mat(), rhs.mat());
}

/// Moore-Penrose pseudoinverse through a symmetric eigendecomposition.
/// Eigenvalues at or below dim * eps * max|eigenvalue| are treated as zero.
inline SymMatrix pinv(const SymMatrix& m) {
  const int n = m.dim();
  if (n == 0) return m;
  Eigen::SelfAdjointEigenSolver<Matrix> solver(m.mat());
  if (solver.info() != Eigen::Success) {
    throw numeric_error("pinv: eigendecomposition failed");
  }
  const Vector& vals = solver.eigenvalues();
  const double cutoff =
      n * std::numeric_limits<double>::epsilon() * vals.cwiseAbs().maxCoeff();
  Vector inv = Vector::Zero(n);
  for (int i = 0; i < n; ++i) {
    if (std::abs(vals(i)) > cutoff) inv(i) = 1.0 / vals(i);
  }
  Matrix result = solver.eigenvectors() * inv.asDiagonal() * solver.eigenvectors().transpose();
  return SymMatrix(result);
}

/// Kronecker product, row-major block convention: block (g, h) equals
/// a(g, h) * b.
inline Matrix kron(const Matrix& a, const Matrix& b) {
  return Eigen::kroneckerProduct(a, b).eval();
}

inline SymMatrix kron(const SymMatrix& a, const SymMatrix& b) {
  return SymMatrix(kron(a.mat(), b.mat()));
}

/// Direct sum: block-diagonal stacking of the given blocks.
inline Matrix direct_sum(const std::vector<Matrix>& blocks) {
  Eigen::Index n = 0;
  for (const Matrix& b : blocks) n += b.rows();
  Matrix out = Matrix::Zero(n, n);
  Eigen::Index at = 0;
  for (const Matrix& b : blocks) {
    out.block(at, at, b.rows(), b.cols()) = b;
    at += b.rows();
  }
  return out;
}

/// Helmert matrix of order p with orthonormal rows. Row 0 is constant; row t
/// is the normalized cumulative-residual contrast x_t - mean(x_0..x_{t-1}),
/// supported on the first t + 1 coordinates.
inline Matrix helmert(int p) {
  if (p < 1) throw spec_error("helmert: order must be at least 1");
  Matrix h = Matrix::Zero(p, p);
  h.row(0).setConstant(1.0 / std::sqrt(static_cast<double>(p)));
  for (int t = 1; t < p; ++t) {
    const double norm = std::sqrt(static_cast<double>(t) * (t + 1));
    h.row(t).head(t).setConstant(-1.0 / norm);
    h(t, t) = t / norm;
  }
  return h;
}

/// Projector onto eigenspace k of a gen_eig result, in the lhs inner product:
/// P_k = (sum of x_j x_j' over the space) * lhs. Invariant to the basis chosen
/// inside a degenerate eigenspace.
inline Matrix eigenspace_projector(const GeneralizedEigenResult& r, int k, const SymMatrix& lhs) {
  if (k < 0 || k >= static_cast<int>(r.eigenspaces.size())) {
    throw index_out_of_range("eigenspace_projector: no eigenspace " + std::to_string(k));
  }
  Matrix g = Matrix::Zero(r.directions.rows(), r.directions.rows());
  for (int j : r.eigenspaces[k]) {
    g += r.directions.col(j) * r.directions.col(j).transpose();
  }
  return g * lhs.mat();
}

}  // namespace blx

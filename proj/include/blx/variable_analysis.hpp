#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "blx/errors.hpp"
#include "blx/matrix.hpp"
#include "blx/model.hpp"

namespace blx {

/// Canonical variable directions and resolutions: the v0 x v0 eigenstructure
/// shared by every group, sample size and population size.
struct CanonicalVariableStructure {
  Matrix U;    // columns U_t, normalized so U' C U = I
  Vector phi;  // descending, in (0, 1)
  std::vector<std::vector<int>> eigenspaces;
};

inline CanonicalVariableStructure canonical_variables(const ModelSpec& spec) {
  require_valid(spec);
  GeneralizedEigenResult r = gen_eig(spec.C, spec.D);
  return {std::move(r.directions), std::move(r.resolutions), std::move(r.eigenspaces)};
}

/// Finite population correction (m - 1) / (m - n) for a sample of n drawn
/// from a population of m. Defined for 1 <= n < m; a census is handled
/// separately because the correction diverges there.
inline double fpc(long m, long n) {
  if (m < 2) throw spec_error("fpc: population size must be at least 2");
  if (n < 1 || n >= m) {
    throw spec_error("fpc: sample size must lie in [1, m), got n = " + std::to_string(n) +
                     ", m = " + std::to_string(m));
  }
  return static_cast<double>(m - 1) / static_cast<double>(m - n);
}

namespace detail {

// Resolution of the t-th mean direction in group g after n observations from
// an infinite population: n a phi / ((n - 1) a phi + gamma).
inline double infinite_variable_resolution(double alpha_gg, double gamma_g, double phi, long n) {
  if (n == 0) return 0.0;
  return n * alpha_gg * phi / ((n - 1) * alpha_gg * phi + gamma_g);
}

}  // namespace detail

/// Resolution of the t-th canonical mean direction in group g for a sample of
/// n_g. The finite value adds the sampling-fraction correction and always
/// dominates the infinite one.
inline double variable_resolution(const ModelSpec& spec, int g, long n_g, int t,
                                  Population kind) {
  require_valid(spec);
  spec.check_group(g);
  spec.check_variable(t);
  if (n_g < 0) throw spec_error("sample size is negative");
  const double phi = canonical_variables(spec).phi(t);
  const double lambda =
      detail::infinite_variable_resolution(spec.A(g, g), spec.gamma(g), phi, n_g);
  if (kind == Population::infinite) return lambda;
  const long m = spec.population_size(g);
  if (n_g > m) throw spec_error("sample size exceeds population size");
  const double fraction = static_cast<double>(n_g) / static_cast<double>(m);
  return lambda + fraction * (1.0 - lambda);
}

/// Scalar conjugate-style update of one canonical mean direction: precisions
/// add, means combine precision-weighted.
struct VariableUpdate {
  int group = 0;
  int t = 0;
  double phi = 0.0;
  double prior_mean = 0.0;
  double prior_precision = 0.0;
  double data_mean = std::numeric_limits<double>::quiet_NaN();  // observed W-bar
  double data_precision = 0.0;  // the additive term: n r (or fpc-scaled)
  double posterior_mean = 0.0;
  double posterior_precision = 0.0;
  double posterior_variance = 0.0;
  double resolution = 0.0;
};

/// Updates every canonical mean direction of group g from its sample mean.
/// A census (n_g equal to the population size) pins the posterior at the
/// observed mean with zero variance.
inline std::vector<VariableUpdate> update_variable(const ModelSpec& spec, int g,
                                                   const Design& design,
                                                   const ObservedSample& observed,
                                                   Population kind) {
  require_valid(spec);
  spec.check_group(g);
  validate_design(spec, design);
  const long n = design[g];
  if (n >= 1) observed.check_against(spec, design);

  const CanonicalVariableStructure vars = canonical_variables(spec);
  const int v0 = spec.variable_count();
  const double alpha = spec.A(g, g);
  const double gamma = spec.gamma(g);

  std::vector<VariableUpdate> out(v0);
  for (int t = 0; t < v0; ++t) {
    VariableUpdate& u = out[t];
    u.group = g;
    u.t = t;
    u.phi = vars.phi(t);
    u.prior_mean = vars.U.col(t).dot(spec.mu.row(g).transpose());

    const double residual_var = gamma / u.phi - alpha;  // Var of one observation about the mean
    double prior_var = alpha;
    double data_prec_one = 1.0 / residual_var;
    double weight_factor = static_cast<double>(n);
    bool census = false;
    if (kind == Population::finite) {
      const long m = spec.population_size(g);
      prior_var = alpha + residual_var / static_cast<double>(m);
      data_prec_one = 1.0 / (residual_var * (1.0 - 1.0 / static_cast<double>(m)));
      census = (n == m);
      if (n >= 1 && !census) weight_factor = fpc(m, n) * static_cast<double>(n);
    }
    u.prior_precision = 1.0 / prior_var;

    if (n == 0) {
      u.posterior_mean = u.prior_mean;
      u.posterior_precision = u.prior_precision;
      u.posterior_variance = prior_var;
      u.resolution = 0.0;
      continue;
    }
    u.data_mean = vars.U.col(t).dot(observed.group_mean(g));
    u.resolution = variable_resolution(spec, g, n, t, kind);
    if (census) {
      u.data_precision = std::numeric_limits<double>::infinity();
      u.posterior_mean = u.data_mean;
      u.posterior_precision = std::numeric_limits<double>::infinity();
      u.posterior_variance = 0.0;
      continue;
    }
    u.data_precision = weight_factor * data_prec_one;
    u.posterior_precision = u.prior_precision + u.data_precision;
    u.posterior_mean =
        (u.prior_precision * u.prior_mean + u.data_precision * u.data_mean) /
        u.posterior_precision;
    u.posterior_variance = 1.0 / u.posterior_precision;
  }
  return out;
}

/// Which of two groups learns more about the t-th mean direction under the
/// given design, and by how much.
struct GroupComparison {
  double resolution_g = 0.0;
  double resolution_h = 0.0;
  double difference = 0.0;  // resolution_g - resolution_h
  int larger(int g, int h) const { return difference > 0 ? g : (difference < 0 ? h : -1); }
};

inline GroupComparison compare_groups(const ModelSpec& spec, const Design& design, int t, int g,
                                      int h, Population kind) {
  spec.check_group(g);
  spec.check_group(h);
  spec.check_variable(t);
  GroupComparison cmp;
  cmp.resolution_g = variable_resolution(spec, g, design[g], t, kind);
  cmp.resolution_h = variable_resolution(spec, h, design[h], t, kind);
  cmp.difference = cmp.resolution_g - cmp.resolution_h;
  return cmp;
}

}  // namespace blx

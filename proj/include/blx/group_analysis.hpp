#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "blx/adjust.hpp"
#include "blx/errors.hpp"
#include "blx/matrix.hpp"
#include "blx/model.hpp"
#include "blx/variable_analysis.hpp"

namespace blx {

/// Which exact coincidence, if any, produced a group structure. Every
/// shortcut agrees with the direct pencil solve; the tag records the route.
enum class GroupShortcut { none, separable, balanced, equal_fraction, separable_balanced };

inline const char* to_string(GroupShortcut s) {
  switch (s) {
    case GroupShortcut::separable: return "separable";
    case GroupShortcut::balanced: return "balanced";
    case GroupShortcut::equal_fraction: return "equal_fraction";
    case GroupShortcut::separable_balanced: return "separable_balanced";
    default: return "none";
  }
}

/// Canonical group directions and resolutions for one variable direction t.
/// Directions are normalized to unit prior variance of the corresponding
/// population mean quantity.
struct GroupCanonicalStructure {
  int t = 0;
  Population kind = Population::infinite;
  Matrix directions;  // g0 x g0, columns over groups
  Vector lambda;      // descending
  std::vector<std::vector<int>> eigenspaces;
  GroupShortcut shortcut_used = GroupShortcut::none;
  // For the equal-fraction shortcut: per-column factor mapping the infinite
  // direction onto the unit-variance finite one.
  Vector rescale_from_infinite;
};

namespace detail {

inline bool ratio_constant(const ModelSpec& spec) {
  const double a0 = spec.A(0, 0) / spec.gamma(0);
  for (int g = 1; g < spec.group_count(); ++g) {
    const double a = spec.A(g, g) / spec.gamma(g);
    if (std::abs(a - a0) > 1e-12 * std::abs(a0)) return false;
  }
  return true;
}

inline bool equal_sampling_fraction(const ModelSpec& spec, const Design& design) {
  if (!spec.all_finite()) return false;
  double theta0 = 0.0;
  for (int g = 0; g < spec.group_count(); ++g) {
    if (design[g] < 1) return false;
    const double theta =
        static_cast<double>(design[g]) / static_cast<double>(spec.population_size(g));
    if (g == 0) {
      theta0 = theta;
    } else if (std::abs(theta - theta0) > 1e-12 * theta0) {
      return false;
    }
  }
  return true;
}

inline bool all_sampled(const Design& design) {
  for (long n : design.sample_sizes)
    if (n < 1) return false;
  return true;
}

// A + phi^-1 diag(w) B - diag(w) Ahat for per-group weights w (reciprocal
// sample or population sizes). The building block of every group pencil.
inline SymMatrix group_pencil_matrix(const ModelSpec& spec, double phi, const Vector& weights) {
  Matrix m = spec.A.mat();
  for (int g = 0; g < spec.group_count(); ++g) {
    m(g, g) += weights(g) * (spec.gamma(g) / phi - spec.A(g, g));
  }
  return SymMatrix(m);
}

inline Vector sample_reciprocals(const ModelSpec& spec, const Design& design) {
  Vector w(spec.group_count());
  for (int g = 0; g < spec.group_count(); ++g) w(g) = 1.0 / static_cast<double>(design[g]);
  return w;
}

// Prior variance matrix of the mean collection restricted to direction t.
inline SymMatrix group_prior_matrix(const ModelSpec& spec, double phi, Population kind) {
  if (kind == Population::infinite) return spec.A;
  return group_pencil_matrix(spec, phi, population_reciprocals(spec));
}

inline GroupCanonicalStructure from_gen_eig(GeneralizedEigenResult r, int t, Population kind,
                                            GroupShortcut shortcut) {
  GroupCanonicalStructure out;
  out.t = t;
  out.kind = kind;
  out.directions = std::move(r.directions);
  out.lambda = std::move(r.resolutions);
  out.eigenspaces = std::move(r.eigenspaces);
  out.shortcut_used = shortcut;
  return out;
}

}  // namespace detail

/// Direct pencil solve for the group problem at direction t: prior variance
/// against sample-mean variance, both restricted to direction t. Requires
/// every group sampled.
inline GroupCanonicalStructure group_structure_direct(const ModelSpec& spec, const Design& design,
                                                      int t, Population kind,
                                                      const CanonicalVariableStructure& vars) {
  require_valid(spec);
  validate_design(spec, design);
  spec.check_variable(t);
  if (!detail::all_sampled(design)) {
    throw spec_error("direct group pencil needs at least one observation in every group");
  }
  const double phi = vars.phi(t);
  const SymMatrix prior = detail::group_prior_matrix(spec, phi, kind);
  const SymMatrix data =
      detail::group_pencil_matrix(spec, phi, detail::sample_reciprocals(spec, design));
  return detail::from_gen_eig(gen_eig(prior, data), t, kind, GroupShortcut::none);
}

/// Group problem routed through the generic engine. Handles designs with
/// unsampled groups, where the pencil form is undefined; resolutions for
/// directions the data cannot see come out as zero.
inline GroupCanonicalStructure group_structure_engine(const ModelSpec& spec, const Design& design,
                                                      int t, Population kind,
                                                      const CanonicalVariableStructure& vars) {
  require_valid(spec);
  validate_design(spec, design);
  spec.check_variable(t);
  const double phi = vars.phi(t);
  const int g0 = spec.group_count();
  const std::vector<int> sampled = design.sampled_groups();
  const int s = static_cast<int>(sampled.size());

  const SymMatrix prior = detail::group_prior_matrix(spec, phi, kind);
  Matrix data(s, s);
  Matrix cross(g0, s);
  for (int a = 0; a < s; ++a) {
    const int h = sampled[a];
    for (int c = 0; c < s; ++c) {
      const int g = sampled[c];
      data(a, c) = spec.A(g, h);
      if (g == h) data(a, c) += (spec.gamma(g) / phi - spec.A(g, g)) / design[g];
    }
    for (int g = 0; g < g0; ++g) cross(g, a) = prior(g, h);
  }
  const Matrix resolved = cross * pinv(SymMatrix(data)).mat() * cross.transpose();
  GeneralizedEigenResult r =
      canonical_pencil(SymMatrix(0.5 * (resolved + resolved.transpose())), prior);
  detail::check_resolution_range(r.resolutions);
  return detail::from_gen_eig(std::move(r), t, kind, GroupShortcut::none);
}

/// Shared eigenstructure for all t when the alpha/gamma ratio is constant
/// across groups (infinite populations): one pencil solve of the prior
/// against the prior plus scaled sampling noise.
struct SeparableGroupStructure {
  Matrix directions;  // shared across t
  Vector psi;         // descending, in (0, 1)
  std::vector<std::vector<int>> eigenspaces;
  double ratio = 0.0;  // the common alpha_gg / gamma_g

  double lambda(int s, double phi) const {
    const double p = psi(s);
    return p * phi / (p * phi + (1.0 - p) * (1.0 - ratio * phi));
  }
};

inline SeparableGroupStructure separable_shortcut(const ModelSpec& spec, const Design& design) {
  require_valid(spec);
  validate_design(spec, design);
  if (!detail::ratio_constant(spec)) {
    throw not_applicable("separable shortcut needs a constant alpha/gamma ratio across groups");
  }
  if (!detail::all_sampled(design)) {
    throw not_applicable("separable shortcut needs every group sampled");
  }
  Matrix rhs = spec.A.mat();
  for (int g = 0; g < spec.group_count(); ++g) rhs(g, g) += spec.gamma(g) / design[g];
  GeneralizedEigenResult r = gen_eig(spec.A, SymMatrix(rhs));
  SeparableGroupStructure out;
  out.directions = std::move(r.directions);
  out.psi = std::move(r.resolutions);
  out.eigenspaces = std::move(r.eigenspaces);
  out.ratio = spec.A(0, 0) / spec.gamma(0);
  return out;
}

/// Balanced-design shortcut: with n observations per group the directions do
/// not depend on n, and resolutions follow from a sample-size-free pencil.
inline GroupCanonicalStructure balanced_shortcut(const ModelSpec& spec, long n, int t,
                                                 const CanonicalVariableStructure& vars) {
  require_valid(spec);
  spec.check_variable(t);
  if (n < 1) throw not_applicable("balanced shortcut needs n >= 1");
  const double phi = vars.phi(t);
  const SymMatrix rhs =
      detail::group_pencil_matrix(spec, phi, Vector::Ones(spec.group_count()));
  GeneralizedEigenResult r = gen_eig(spec.A, rhs);
  GroupCanonicalStructure out =
      detail::from_gen_eig(std::move(r), t, Population::infinite, GroupShortcut::balanced);
  for (int s = 0; s < out.lambda.size(); ++s) {
    const double psi = out.lambda(s);
    out.lambda(s) = n * psi / ((n - 1) * psi + 1.0);
  }
  out.eigenspaces = detail::partition_eigenspaces(out.lambda);
  return out;
}

inline GroupCanonicalStructure group_structure(const ModelSpec& spec, const Design& design, int t,
                                               Population kind,
                                               const CanonicalVariableStructure& vars);

/// Equal-sampling-fraction shortcut for finite populations: the finite
/// canonical directions coincide with the infinite ones up to scale, and
/// resolutions gain the additive fraction correction.
inline GroupCanonicalStructure equal_fraction_shortcut(const ModelSpec& spec,
                                                       const Design& design, int t,
                                                       const CanonicalVariableStructure& vars) {
  require_valid(spec);
  validate_design(spec, design);
  if (!detail::equal_sampling_fraction(spec, design)) {
    throw not_applicable("equal-fraction shortcut needs n_g / m_g constant across groups");
  }
  const double theta =
      static_cast<double>(design[0]) / static_cast<double>(spec.population_size(0));
  GroupCanonicalStructure out = group_structure(spec, design, t, Population::infinite, vars);
  out.kind = Population::finite;
  out.shortcut_used = GroupShortcut::equal_fraction;
  out.rescale_from_infinite.resize(out.lambda.size());
  for (int s = 0; s < out.lambda.size(); ++s) {
    const double lambda = out.lambda(s);
    const double lambda_fin = lambda + theta * (1.0 - lambda);
    out.rescale_from_infinite(s) = std::sqrt(lambda / lambda_fin);
    out.directions.col(s) *= out.rescale_from_infinite(s);
    out.lambda(s) = lambda_fin;
  }
  out.eigenspaces = detail::partition_eigenspaces(out.lambda);
  return out;
}

/// Group structure for direction t with the cheapest exact route:
/// separable_balanced > equal_fraction > balanced > separable > direct
/// pencil, falling back to the generic engine when a group is unsampled.
inline GroupCanonicalStructure group_structure(const ModelSpec& spec, const Design& design, int t,
                                               Population kind,
                                               const CanonicalVariableStructure& vars) {
  require_valid(spec);
  validate_design(spec, design);
  spec.check_variable(t);
  if (kind == Population::finite && !spec.all_finite()) {
    throw infinite_population("finite group structure needs finite population sizes");
  }
  if (!detail::all_sampled(design)) {
    return group_structure_engine(spec, design, t, kind, vars);
  }
  if (kind == Population::finite) {
    if (detail::equal_sampling_fraction(spec, design)) {
      return equal_fraction_shortcut(spec, design, t, vars);
    }
    return group_structure_direct(spec, design, t, kind, vars);
  }
  const bool ratio = detail::ratio_constant(spec);
  const bool balanced = design.balanced();
  if (ratio && balanced) {
    const long n = design[0];
    const double a = spec.A(0, 0) / spec.gamma(0);
    Matrix rhs = spec.A.mat();
    for (int g = 0; g < spec.group_count(); ++g) rhs(g, g) += spec.gamma(g);
    GeneralizedEigenResult r = gen_eig(spec.A, SymMatrix(rhs));
    GroupCanonicalStructure out = detail::from_gen_eig(std::move(r), t, Population::infinite,
                                                       GroupShortcut::separable_balanced);
    const double phi = vars.phi(t);
    for (int s = 0; s < out.lambda.size(); ++s) {
      const double psi1 = out.lambda(s);
      out.lambda(s) =
          n * psi1 * phi / (n * psi1 * phi + (1.0 - psi1) * (1.0 - a * phi));
    }
    out.eigenspaces = detail::partition_eigenspaces(out.lambda);
    return out;
  }
  if (balanced) {
    return balanced_shortcut(spec, design[0], t, vars);
  }
  if (ratio) {
    const SeparableGroupStructure sep = separable_shortcut(spec, design);
    GroupCanonicalStructure out;
    out.t = t;
    out.kind = Population::infinite;
    out.directions = sep.directions;
    out.lambda.resize(sep.psi.size());
    const double phi = vars.phi(t);
    for (int s = 0; s < sep.psi.size(); ++s) out.lambda(s) = sep.lambda(s, phi);
    out.eigenspaces = detail::partition_eigenspaces(out.lambda);
    out.shortcut_used = GroupShortcut::separable;
    return out;
  }
  return group_structure_direct(spec, design, t, kind, vars);
}

inline GroupCanonicalStructure group_structure(const ModelSpec& spec, const Design& design, int t,
                                               Population kind) {
  return group_structure(spec, design, t, kind, canonical_variables(spec));
}

/// Scalar update of one canonical group direction. For pencil routes the
/// quantity has unit prior variance and the data precision is
/// lambda / (1 - lambda); engine-route rows carry no sufficient data mean.
struct GroupUpdateRow {
  int s = 0;
  int t = 0;
  double prior_mean = 0.0;
  double prior_precision = 1.0;
  double data_mean = std::numeric_limits<double>::quiet_NaN();
  double data_precision = std::numeric_limits<double>::quiet_NaN();
  double posterior_mean = 0.0;
  double posterior_precision = 0.0;
  double posterior_variance = 0.0;
  double resolution = 0.0;
};

struct GroupUpdate {
  GroupCanonicalStructure structure;
  std::vector<GroupUpdateRow> rows;
};

namespace detail {

// Sample means of the canonical variable direction t, group by group.
inline Vector wbar_for_t(const ModelSpec& spec, const Design& design,
                         const ObservedSample& observed, const CanonicalVariableStructure& vars,
                         int t, const std::vector<int>& sampled) {
  Vector wbar(sampled.size());
  for (size_t a = 0; a < sampled.size(); ++a) {
    wbar(a) = vars.U.col(t).dot(observed.group_mean(sampled[a]));
  }
  return wbar;
}

inline constexpr double kCensusLambda = 1.0 - 1e-12;

}  // namespace detail

/// Adjusts every canonical group direction at t by the observed group sample
/// means of that direction.
inline GroupUpdate update_groups(const ModelSpec& spec, const Design& design, int t,
                                 Population kind, const ObservedSample& observed,
                                 const CanonicalVariableStructure& vars) {
  observed.check_against(spec, design);
  GroupUpdate out;
  out.structure = group_structure(spec, design, t, kind, vars);
  const int g0 = spec.group_count();
  const std::vector<int> sampled = design.sampled_groups();
  const Vector wbar = detail::wbar_for_t(spec, design, observed, vars, t, sampled);

  Vector prior_means(g0);
  for (int g = 0; g < g0; ++g) prior_means(g) = vars.U.col(t).dot(spec.mu.row(g).transpose());

  const bool engine_route = !detail::all_sampled(design);
  Vector engine_adjusted;
  Matrix engine_adjusted_var;
  if (engine_route) {
    const double phi = vars.phi(t);
    const SymMatrix prior = detail::group_prior_matrix(spec, phi, kind);
    SecondOrderBeliefs b;
    b.mean_b = prior_means;
    b.var_b = prior;
    b.mean_d.resize(sampled.size());
    Matrix var_d(sampled.size(), sampled.size());
    Matrix cov_bd(g0, sampled.size());
    for (size_t a = 0; a < sampled.size(); ++a) {
      const int h = sampled[a];
      b.mean_d(a) = prior_means(h);
      for (size_t c = 0; c < sampled.size(); ++c) {
        const int g = sampled[c];
        var_d(a, c) = spec.A(g, h);
        if (g == h) var_d(a, c) += (spec.gamma(g) / phi - spec.A(g, g)) / design[g];
      }
      for (int g = 0; g < g0; ++g) cov_bd(g, a) = prior(g, h);
    }
    b.var_d = SymMatrix(var_d);
    b.cov_bd = cov_bd;
    const AdjustedBeliefs adj = adjust(b, wbar);
    engine_adjusted = adj.adjusted_mean;
    engine_adjusted_var = adj.adjusted_var.mat();
  }

  for (int s = 0; s < g0; ++s) {
    GroupUpdateRow row;
    row.s = s;
    row.t = t;
    const Vector dir = out.structure.directions.col(s);
    row.prior_mean = dir.dot(prior_means);
    row.prior_precision = 1.0;
    row.resolution = out.structure.lambda(s);
    if (engine_route) {
      row.posterior_mean = dir.dot(engine_adjusted);
      row.posterior_variance = dir.dot(engine_adjusted_var * dir);
      row.posterior_precision = 1.0 / row.posterior_variance;
    } else {
      double zbar = 0.0;
      for (size_t a = 0; a < sampled.size(); ++a) zbar += dir(sampled[a]) * wbar(a);
      row.data_mean = zbar;
      const double lambda = row.resolution;
      if (lambda > detail::kCensusLambda) {
        row.data_precision = std::numeric_limits<double>::infinity();
        row.posterior_mean = zbar;
        row.posterior_precision = std::numeric_limits<double>::infinity();
        row.posterior_variance = 0.0;
      } else {
        row.data_precision = lambda / (1.0 - lambda);
        row.posterior_mean = row.prior_mean + lambda * (zbar - row.prior_mean);
        row.posterior_precision = 1.0 + row.data_precision;
        row.posterior_variance = 1.0 - lambda;
      }
    }
    out.rows.push_back(row);
  }
  return out;
}

inline GroupUpdate update_groups(const ModelSpec& spec, const Design& design, int t,
                                 Population kind, const ObservedSample& observed) {
  return update_groups(spec, design, t, kind, observed, canonical_variables(spec));
}

/// Fully balanced finite shortcut: n observations per group, every population
/// of size m. Directions come from the sample-size-free pencil and the
/// update is a finite-population-corrected precision sum. Rows describe the
/// infinite-normalized quantities, whose prior variance is 1 + (1/psi - 1)/m.
inline GroupUpdate balanced_finite_shortcut(const ModelSpec& spec, long n, long m, int t,
                                            const ObservedSample& observed,
                                            const CanonicalVariableStructure& vars) {
  require_valid(spec);
  spec.check_variable(t);
  for (int g = 0; g < spec.group_count(); ++g) {
    if (!spec.is_finite(g) || spec.population_size(g) != m) {
      throw not_applicable("balanced finite shortcut needs every population of size m");
    }
  }
  if (n < 1 || n > m) throw spec_error("balanced finite shortcut needs 1 <= n <= m");
  Design design;
  design.sample_sizes.assign(spec.group_count(), n);
  observed.check_against(spec, design);

  const double phi = vars.phi(t);
  const SymMatrix rhs =
      detail::group_pencil_matrix(spec, phi, Vector::Ones(spec.group_count()));
  GeneralizedEigenResult r = gen_eig(spec.A, rhs);

  GroupUpdate out;
  out.structure = detail::from_gen_eig(std::move(r), t, Population::finite,
                                       GroupShortcut::equal_fraction);
  const Vector psi = out.structure.lambda;
  const std::vector<int> sampled = design.sampled_groups();
  const Vector wbar = detail::wbar_for_t(spec, design, observed, vars, t, sampled);
  Vector prior_means(spec.group_count());
  for (int g = 0; g < spec.group_count(); ++g) {
    prior_means(g) = vars.U.col(t).dot(spec.mu.row(g).transpose());
  }
  out.structure.rescale_from_infinite.resize(psi.size());

  const double fraction = static_cast<double>(n) / static_cast<double>(m);
  for (int s = 0; s < psi.size(); ++s) {
    const double lambda = n * psi(s) / ((n - 1) * psi(s) + 1.0);
    const double lambda_fin = lambda + fraction * (1.0 - lambda);
    out.structure.lambda(s) = lambda_fin;
    out.structure.rescale_from_infinite(s) = std::sqrt(lambda / lambda_fin);

    GroupUpdateRow row;
    row.s = s;
    row.t = t;
    const Vector dir = out.structure.directions.col(s);
    row.prior_mean = dir.dot(prior_means);
    const double prior_var = 1.0 + (1.0 / psi(s) - 1.0) / static_cast<double>(m);
    row.prior_precision = 1.0 / prior_var;
    row.data_mean = dir.dot(wbar);
    row.resolution = lambda_fin;
    if (n == m) {
      row.data_precision = std::numeric_limits<double>::infinity();
      row.posterior_mean = row.data_mean;
      row.posterior_precision = std::numeric_limits<double>::infinity();
      row.posterior_variance = 0.0;
    } else {
      const double per_individual = m * psi(s) / ((m - 1) * (1.0 - psi(s)));
      row.data_precision = fpc(m, n) * static_cast<double>(n) * per_individual;
      row.posterior_precision = row.prior_precision + row.data_precision;
      row.posterior_mean =
          (row.prior_precision * row.prior_mean + row.data_precision * row.data_mean) /
          row.posterior_precision;
      row.posterior_variance = 1.0 / row.posterior_precision;
    }
    out.rows.push_back(row);
  }
  out.structure.eigenspaces = detail::partition_eigenspaces(out.structure.lambda);
  return out;
}

/// Sum of the canonical group resolutions at direction t: the resolved
/// uncertainty of the t-th mean collection.
inline double resolved_uncertainty_t(const ModelSpec& spec, const Design& design, int t,
                                     Population kind,
                                     const CanonicalVariableStructure& vars) {
  return group_structure(spec, design, t, kind, vars).lambda.sum();
}

inline double resolved_uncertainty_t(const ModelSpec& spec, const Design& design, int t,
                                     Population kind) {
  return resolved_uncertainty_t(spec, design, t, kind, canonical_variables(spec));
}

}  // namespace blx

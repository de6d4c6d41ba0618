#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "blx/errors.hpp"
#include "blx/group_analysis.hpp"
#include "blx/matrix.hpp"
#include "blx/model.hpp"
#include "blx/variable_analysis.hpp"

namespace blx {

/// One canonical direction of the full mean collection: the composition of
/// group direction s with variable direction t, as a flat coefficient vector
/// in group-major component order.
struct GridEntry {
  int s = 0;
  int t = 0;
  double resolution = 0.0;
  Vector coeff;  // length g0 * v0
};

/// The complete canonical decomposition of the adjustment of the mean
/// collection by the sample: g0 * v0 mutually uncorrelated unit-variance
/// directions with their resolutions.
struct CanonicalGrid {
  Population kind = Population::infinite;
  ModelSpec spec;
  Design design;
  CanonicalVariableStructure variables;
  std::vector<GroupCanonicalStructure> groups;  // indexed by t
  std::vector<GridEntry> entries;               // descending resolution, (s, t) ties stable
  Vector prior_mean;
  SymMatrix prior_cov;
};

inline CanonicalGrid build_grid(const ModelSpec& spec, const Design& design, Population kind) {
  require_valid(spec);
  validate_design(spec, design);
  CanonicalGrid grid;
  grid.kind = kind;
  grid.spec = spec;
  grid.design = design;
  grid.variables = canonical_variables(spec);
  const int g0 = spec.group_count(), v0 = spec.variable_count();
  grid.groups.reserve(v0);
  for (int t = 0; t < v0; ++t) {
    grid.groups.push_back(group_structure(spec, design, t, kind, grid.variables));
  }
  const MeanStructure means = mean_structure(spec, kind);
  grid.prior_mean = means.mean;
  grid.prior_cov = means.cov;

  grid.entries.reserve(g0 * v0);
  for (int s = 0; s < g0; ++s) {
    for (int t = 0; t < v0; ++t) {
      GridEntry e;
      e.s = s;
      e.t = t;
      e.resolution = grid.groups[t].lambda(s);
      e.coeff.resize(g0 * v0);
      for (int g = 0; g < g0; ++g) {
        e.coeff.segment(g * v0, v0) =
            grid.groups[t].directions(g, s) * grid.variables.U.col(t);
      }
      grid.entries.push_back(std::move(e));
    }
  }
  std::stable_sort(grid.entries.begin(), grid.entries.end(),
                   [](const GridEntry& a, const GridEntry& b) { return a.resolution > b.resolution; });
  return grid;
}

/// Adjusted beliefs of the full mean collection, assembled from the per-entry
/// scalar updates.
struct GridAdjustment {
  std::vector<double> entry_posterior_mean;  // aligned with grid.entries
  std::vector<double> entry_prior_mean;
  Vector mean_vector;   // adjusted mean of the mean collection
  SymMatrix covariance;  // adjusted covariance of the mean collection
};

inline GridAdjustment adjust_grid(const CanonicalGrid& grid, const ObservedSample& observed) {
  const ModelSpec& spec = grid.spec;
  const int v0 = spec.variable_count();
  const int g0 = spec.group_count();

  // Per-t updates; rows are aligned with the structure columns stored in the grid.
  std::vector<GroupUpdate> updates;
  updates.reserve(v0);
  for (int t = 0; t < v0; ++t) {
    updates.push_back(update_groups(spec, grid.design, t, grid.kind, observed, grid.variables));
  }

  GridAdjustment out;
  out.entry_posterior_mean.resize(grid.entries.size());
  out.entry_prior_mean.resize(grid.entries.size());
  out.mean_vector = grid.prior_mean;
  Matrix cov = Matrix::Zero(g0 * v0, g0 * v0);
  for (size_t e = 0; e < grid.entries.size(); ++e) {
    const GridEntry& entry = grid.entries[e];
    const GroupUpdateRow& row = updates[entry.t].rows[entry.s];
    out.entry_posterior_mean[e] = row.posterior_mean;
    out.entry_prior_mean[e] = row.prior_mean;
    const Vector cross = grid.prior_cov.mat() * entry.coeff;  // Cov(mean collection, entry)
    out.mean_vector += cross * (row.posterior_mean - row.prior_mean);
    cov += cross * cross.transpose() * (1.0 - entry.resolution);
  }
  out.covariance = SymMatrix(0.5 * (cov + cov.transpose()));
  return out;
}

/// Share of a functional's resolution carried by one grid entry.
struct GridPartitionTerm {
  int s = 0;
  int t = 0;
  double weight = 0.0;
  double resolution = 0.0;
};

struct FunctionalReport {
  std::string label;
  Vector coeff;
  double prior_mean = 0.0;
  double prior_variance = 0.0;
  double resolution = 0.0;
  std::vector<GridPartitionTerm> partition;  // descending weight
  std::optional<double> adjusted_mean;
  std::optional<double> adjusted_variance;
};

/// Resolution, partition and (when an adjustment is supplied) adjusted
/// beliefs for a declared linear functional of the mean collection.
inline FunctionalReport analyze_functional(const CanonicalGrid& grid, const std::string& label,
                                           const Vector& coeff,
                                           const GridAdjustment* adjustment = nullptr) {
  if (coeff.size() != grid.prior_mean.size()) {
    throw dim_mismatch("functional has length " + std::to_string(coeff.size()) + ", expected " +
                       std::to_string(grid.prior_mean.size()));
  }
  FunctionalReport report;
  report.label = label;
  report.coeff = coeff;
  report.prior_mean = coeff.dot(grid.prior_mean);
  report.prior_variance = coeff.dot(grid.prior_cov.mat() * coeff);
  const double scale = grid.prior_cov.mat().cwiseAbs().maxCoeff() * coeff.squaredNorm();
  if (!(report.prior_variance > 1e-14 * std::max(scale, 1e-300))) {
    throw zero_prior_variance("functional " + label + " has zero prior variance");
  }

  double resolution = 0.0;
  double adj_mean = report.prior_mean;
  double adj_var = 0.0;
  report.partition.reserve(grid.entries.size());
  for (size_t e = 0; e < grid.entries.size(); ++e) {
    const GridEntry& entry = grid.entries[e];
    const double cov = coeff.dot(grid.prior_cov.mat() * entry.coeff);
    const double weight = cov * cov / report.prior_variance;
    report.partition.push_back({entry.s, entry.t, weight, entry.resolution});
    resolution += weight * entry.resolution;
    if (adjustment) {
      adj_mean += cov * (adjustment->entry_posterior_mean[e] - adjustment->entry_prior_mean[e]);
      adj_var += cov * cov * (1.0 - entry.resolution);
    }
  }
  report.resolution = resolution;
  std::stable_sort(report.partition.begin(), report.partition.end(),
                   [](const GridPartitionTerm& a, const GridPartitionTerm& b) {
                     return a.weight > b.weight;
                   });
  if (adjustment) {
    report.adjusted_mean = adj_mean;
    report.adjusted_variance = adj_var;
  }
  return report;
}

/// Expansion coefficient of a direction against one grid entry.
struct GridCoefficient {
  int s = 0;
  int t = 0;
  double value = 0.0;
};

/// Expands a direction given in flat coordinates (for instance an
/// infinite-model canonical direction) over the finite canonical basis. The
/// coefficients are prior covariances with the unit-variance grid entries.
inline std::vector<GridCoefficient> expand_in_finite_basis(const CanonicalGrid& grid,
                                                           const Vector& direction) {
  if (grid.kind != Population::finite) {
    throw spec_error("expand_in_finite_basis needs a finite-population grid");
  }
  if (direction.size() != grid.prior_mean.size()) {
    throw dim_mismatch("direction has the wrong length");
  }
  std::vector<GridCoefficient> out;
  out.reserve(grid.entries.size());
  for (const GridEntry& entry : grid.entries) {
    out.push_back({entry.s, entry.t, direction.dot(grid.prior_cov.mat() * entry.coeff)});
  }
  return out;
}

}  // namespace blx

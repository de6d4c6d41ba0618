#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "blx/adjust.hpp"
#include "blx/errors.hpp"
#include "blx/matrix.hpp"

namespace blx {

/// Which population mean collection an analysis targets: the limiting mean of
/// an infinite population, or the realized average of a finite one.
enum class Population { infinite, finite };

inline const char* to_string(Population p) {
  return p == Population::infinite ? "infinite" : "finite";
}

/// Prior specification for co-exchangeable groups with separable covariance:
/// within a group every individual has variance gamma_g * D, any two distinct
/// individuals (same or different groups) covary as alpha_gh * C.
struct ModelSpec {
  std::vector<std::string> group_labels;
  std::vector<std::string> variable_labels;
  SymMatrix D;    // v0 x v0 individual variance factor
  SymMatrix C;    // v0 x v0 between-individual covariance factor
  SymMatrix A;    // g0 x g0, entries alpha_gh
  Vector gamma;   // length g0, per-group variance scales
  Matrix mu;      // g0 x v0, row g is the prior mean for group g
  std::vector<std::optional<long>> population_sizes;  // nullopt = infinite
  // Optional named variable subsets, used by functional macros like TotA(g).
  std::map<std::string, std::vector<int>> sections;

  int group_count() const { return static_cast<int>(group_labels.size()); }
  int variable_count() const { return static_cast<int>(variable_labels.size()); }

  bool is_finite(int g) const { return population_sizes[g].has_value(); }
  bool all_finite() const {
    for (const auto& m : population_sizes)
      if (!m) return false;
    return true;
  }

  long population_size(int g) const {
    if (!population_sizes[g]) {
      throw infinite_population("group " + group_labels[g] + " has an infinite population");
    }
    return *population_sizes[g];
  }

  /// Flat index of (group g, variable v) in the group-major component order.
  int flat_index(int g, int v) const { return g * variable_count() + v; }

  Vector mean_vector() const {
    const int g0 = group_count(), v0 = variable_count();
    Vector out(g0 * v0);
    for (int g = 0; g < g0; ++g) out.segment(g * v0, v0) = mu.row(g).transpose();
    return out;
  }

  void check_group(int g) const {
    if (g < 0 || g >= group_count())
      throw index_out_of_range("group index " + std::to_string(g) + " out of range");
  }
  void check_variable(int v) const {
    if (v < 0 || v >= variable_count())
      throw index_out_of_range("variable index " + std::to_string(v) + " out of range");
  }
};

/// Per-group sample sizes. Zero is allowed (the group is simply unsampled)
/// as long as at least one group is sampled.
struct Design {
  std::vector<long> sample_sizes;

  long operator[](int g) const { return sample_sizes[g]; }
  int group_count() const { return static_cast<int>(sample_sizes.size()); }

  long total() const {
    long t = 0;
    for (long n : sample_sizes) t += n;
    return t;
  }

  bool balanced() const {
    for (long n : sample_sizes)
      if (n != sample_sizes[0]) return false;
    return true;
  }

  std::vector<int> sampled_groups() const {
    std::vector<int> out;
    for (int g = 0; g < group_count(); ++g)
      if (sample_sizes[g] >= 1) out.push_back(g);
    return out;
  }
};

inline void validate_design(const ModelSpec& spec, const Design& design) {
  if (design.group_count() != spec.group_count()) {
    throw dim_mismatch("design has " + std::to_string(design.group_count()) +
                       " sample sizes for " + std::to_string(spec.group_count()) + " groups");
  }
  bool any = false;
  for (int g = 0; g < spec.group_count(); ++g) {
    const long n = design[g];
    if (n < 0) throw spec_error("sample size for group " + spec.group_labels[g] + " is negative");
    if (spec.is_finite(g) && n > spec.population_size(g)) {
      throw spec_error("sample size " + std::to_string(n) + " exceeds population size " +
                       std::to_string(spec.population_size(g)) + " in group " +
                       spec.group_labels[g]);
    }
    any = any || n >= 1;
  }
  if (!any) throw spec_error("design samples no individuals");
}

/// Observations for sampled groups: raw per-individual rows and/or group
/// means. Raw data are reduced to means on construction; the raw rows are
/// kept only for brute-force verification.
class ObservedSample {
 public:
  explicit ObservedSample(int group_count)
      : raw_(group_count), means_(group_count) {}

  void set_raw(int g, const Matrix& rows) {
    raw_[g] = rows;
    means_[g] = rows.colwise().mean().transpose();
  }

  void set_means(int g, const Vector& mean) { means_[g] = mean; }

  bool has_group(int g) const { return means_[g].has_value(); }
  bool has_raw(int g) const { return raw_[g].has_value(); }

  const Vector& group_mean(int g) const {
    if (!means_[g]) throw missing_data("no data for group index " + std::to_string(g));
    return *means_[g];
  }
  const Matrix& group_raw(int g) const {
    if (!raw_[g]) throw missing_data("no raw data for group index " + std::to_string(g));
    return *raw_[g];
  }

  void check_against(const ModelSpec& spec, const Design& design, bool need_raw = false) const {
    if (static_cast<int>(means_.size()) != spec.group_count()) {
      throw dim_mismatch("observed sample covers the wrong number of groups");
    }
    for (int g = 0; g < spec.group_count(); ++g) {
      if (design[g] < 1) continue;
      if (!means_[g]) throw missing_data("no data for sampled group " + spec.group_labels[g]);
      if (means_[g]->size() != spec.variable_count()) {
        throw dim_mismatch("data for group " + spec.group_labels[g] + " has wrong width");
      }
      if (need_raw) {
        if (!raw_[g]) throw missing_data("raw data required for group " + spec.group_labels[g]);
        if (raw_[g]->rows() != design[g]) {
          throw spec_error("raw data for group " + spec.group_labels[g] + " has " +
                           std::to_string(raw_[g]->rows()) + " rows, design asks for " +
                           std::to_string(design[g]));
        }
      }
    }
  }

 private:
  std::vector<std::optional<Matrix>> raw_;
  std::vector<std::optional<Vector>> means_;
};

namespace detail {

// Top eigenvalue of the variable pencil C u = phi D u; requires C, D SPD.
inline double top_variable_resolution(const ModelSpec& spec) {
  return gen_eig(spec.C, spec.D).resolutions(0);
}

}  // namespace detail

/// Checks every model invariant and returns one finding per violation,
/// naming the offending matrix or group. An empty list means valid.
inline std::vector<std::string> validate(const ModelSpec& spec) {
  std::vector<std::string> findings;
  const int g0 = spec.group_count(), v0 = spec.variable_count();
  if (g0 < 1) findings.push_back("model must declare at least one group");
  if (v0 < 1) findings.push_back("model must declare at least one variable");
  if (spec.D.dim() != v0) findings.push_back("D must be v0 x v0");
  if (spec.C.dim() != v0) findings.push_back("C must be v0 x v0");
  if (spec.A.dim() != g0) findings.push_back("alpha must be g0 x g0");
  if (spec.gamma.size() != g0) findings.push_back("gamma must have one entry per group");
  if (spec.mu.rows() != g0 || spec.mu.cols() != v0) findings.push_back("mu must be g0 x v0");
  if (static_cast<int>(spec.population_sizes.size()) != g0) {
    findings.push_back("population_sizes must have one entry per group");
  }
  if (!findings.empty()) return findings;  // dimension errors mask the rest

  const bool d_ok = check_spd(spec.D);
  const bool c_ok = check_spd(spec.C);
  if (!d_ok) findings.push_back("D is not positive definite");
  if (!c_ok) findings.push_back("C is not positive definite");
  if (!check_spd(spec.A)) findings.push_back("alpha matrix is not positive definite");
  for (int g = 0; g < g0; ++g) {
    if (!(spec.gamma(g) > 0.0)) {
      findings.push_back("gamma must be positive in group " + spec.group_labels[g]);
    }
    if (spec.population_sizes[g] && *spec.population_sizes[g] < 2) {
      findings.push_back("population size must be at least 2 in group " + spec.group_labels[g]);
    }
  }
  for (const auto& [name, vars] : spec.sections) {
    for (int v : vars) {
      if (v < 0 || v >= v0) findings.push_back("section " + name + " names an unknown variable");
    }
  }
  if (d_ok && c_ok) {
    const double phi_top = detail::top_variable_resolution(spec);
    if (!(phi_top < 1.0)) {
      findings.push_back("variable resolutions must lie below one (top value " +
                         std::to_string(phi_top) + ")");
    }
    for (int g = 0; g < g0; ++g) {
      if (!(spec.gamma(g) > 0.0)) continue;
      if (!(spec.gamma(g) - spec.A(g, g) * phi_top > 0.0)) {
        findings.push_back("residual variance not positive definite in group " +
                           spec.group_labels[g]);
      }
    }
  }
  return findings;
}

inline void require_valid(const ModelSpec& spec) {
  const auto findings = validate(spec);
  if (!findings.empty()) {
    std::string msg = "invalid model:";
    for (const auto& f : findings) msg += " [" + f + "]";
    throw spec_error(msg);
  }
}

/// Covariance between individual i of group g and individual j of group h:
/// gamma_g * D when they are the same individual, alpha_gh * C otherwise.
inline Matrix pairwise_cov(const ModelSpec& spec, int g, int i, int h, int j) {
  spec.check_group(g);
  spec.check_group(h);
  auto check_individual = [&](int grp, int idx) {
    if (idx < 0 || (spec.is_finite(grp) && idx >= spec.population_size(grp))) {
      throw index_out_of_range("individual " + std::to_string(idx) + " out of range in group " +
                               spec.group_labels[grp]);
    }
  };
  check_individual(g, i);
  check_individual(h, j);
  if (g == h && i == j) return spec.gamma(g) * spec.D.mat();
  return spec.A(g, h) * spec.C.mat();
}

/// Mean vector and covariance of a population mean collection, in group-major
/// component order.
struct MeanStructure {
  Vector mean;
  SymMatrix cov;
};

namespace detail {

inline Vector population_reciprocals(const ModelSpec& spec) {
  Vector r(spec.group_count());
  for (int g = 0; g < spec.group_count(); ++g) r(g) = 1.0 / spec.population_size(g);
  return r;
}

// Var over mean vectors: A (x) C plus, in the finite case, the population
// corrections (M^-1 B (x) D) - (M^-1 Ahat (x) C).
inline Matrix mean_covariance(const ModelSpec& spec, Population kind) {
  Matrix cov = kron(spec.A.mat(), spec.C.mat());
  if (kind == Population::finite) {
    const Vector minv = population_reciprocals(spec);
    const Vector alpha_diag = spec.A.mat().diagonal();
    cov += kron(Matrix((minv.array() * spec.gamma.array()).matrix().asDiagonal()), spec.D.mat());
    cov -= kron(Matrix((minv.array() * alpha_diag.array()).matrix().asDiagonal()), spec.C.mat());
  }
  return cov;
}

// Cov(mean collection of `kind`, sample mean of group h) as a g0*v0 x v0
// column block: alpha_gh C, plus the within-group finite correction.
inline Matrix mean_to_group_mean_cov(const ModelSpec& spec, Population kind, int h) {
  const int g0 = spec.group_count(), v0 = spec.variable_count();
  Matrix block(g0 * v0, v0);
  for (int g = 0; g < g0; ++g) {
    Matrix b = spec.A(g, h) * spec.C.mat();
    if (kind == Population::finite && g == h) {
      b += (spec.gamma(g) * spec.D.mat() - spec.A(g, g) * spec.C.mat()) /
           static_cast<double>(spec.population_size(g));
    }
    block.middleRows(g * v0, v0) = b;
  }
  return block;
}

}  // namespace detail

inline MeanStructure mean_structure(const ModelSpec& spec, Population kind) {
  require_valid(spec);
  if (kind == Population::finite && !spec.all_finite()) {
    for (int g = 0; g < spec.group_count(); ++g) {
      if (!spec.is_finite(g)) {
        throw infinite_population("finite mean structure needs a finite population in group " +
                                  spec.group_labels[g]);
      }
    }
  }
  MeanStructure out;
  out.mean = spec.mean_vector();
  out.cov = SymMatrix(detail::mean_covariance(spec, kind));
  return out;
}

/// Joint beliefs over (population means of the chosen kind; per-group sample
/// means of the sampled groups). The data side covers sampled groups only.
inline SecondOrderBeliefs sample_mean_structure(const ModelSpec& spec, const Design& design,
                                                Population kind) {
  require_valid(spec);
  validate_design(spec, design);
  const MeanStructure means = mean_structure(spec, kind);
  const std::vector<int> sampled = design.sampled_groups();
  const int v0 = spec.variable_count();
  const int s = static_cast<int>(sampled.size());

  SecondOrderBeliefs b;
  b.mean_b = means.mean;
  b.var_b = means.cov;
  b.mean_d.resize(s * v0);
  Matrix var_d(s * v0, s * v0);
  Matrix cov_bd(means.mean.size(), s * v0);
  for (int a = 0; a < s; ++a) {
    const int g = sampled[a];
    b.mean_d.segment(a * v0, v0) = spec.mu.row(g).transpose();
    cov_bd.middleCols(a * v0, v0) = detail::mean_to_group_mean_cov(spec, kind, g);
    for (int c = 0; c < s; ++c) {
      const int h = sampled[c];
      Matrix block = spec.A(g, h) * spec.C.mat();
      if (g == h) {
        block += (spec.gamma(g) * spec.D.mat() - spec.A(g, g) * spec.C.mat()) /
                 static_cast<double>(design[g]);
      }
      var_d.block(a * v0, c * v0, v0, v0) = block;
    }
  }
  b.var_d = SymMatrix(var_d);
  b.cov_bd = cov_bd;
  return b;
}

inline constexpr long kDefaultJointCap = 2000;

/// Joint beliefs over (population means of the chosen kind; every sampled raw
/// individual), assembled block by block from the pairwise covariances. Raw
/// component order is group-major, then individual, then variable.
inline SecondOrderBeliefs assemble_joint(const ModelSpec& spec, const Design& design,
                                         Population kind, long cap = kDefaultJointCap) {
  require_valid(spec);
  validate_design(spec, design);
  const int g0 = spec.group_count(), v0 = spec.variable_count();
  const long raw_dim = design.total() * v0;
  if (raw_dim > cap) {
    throw cap_exceeded("joint dimension " + std::to_string(raw_dim) + " exceeds cap " +
                       std::to_string(cap));
  }
  const MeanStructure means = mean_structure(spec, kind);

  SecondOrderBeliefs b;
  b.mean_b = means.mean;
  b.var_b = means.cov;
  b.mean_d.resize(raw_dim);
  Matrix var_d(raw_dim, raw_dim);
  Matrix cov_bd(g0 * v0, raw_dim);

  long col = 0;
  for (int h = 0; h < g0; ++h) {
    for (long j = 0; j < design[h]; ++j) {
      b.mean_d.segment(col, v0) = spec.mu.row(h).transpose();
      for (int g = 0; g < g0; ++g) {
        Matrix mblock = spec.A(g, h) * spec.C.mat();
        if (kind == Population::finite && g == h) {
          mblock += (spec.gamma(g) * spec.D.mat() - spec.A(g, g) * spec.C.mat()) /
                    static_cast<double>(spec.population_size(g));
        }
        cov_bd.block(g * v0, col, v0, v0) = mblock;
      }
      long row = 0;
      for (int g = 0; g < g0; ++g) {
        for (long i = 0; i < design[g]; ++i) {
          var_d.block(row, col, v0, v0) =
              pairwise_cov(spec, g, static_cast<int>(i), h, static_cast<int>(j));
          row += v0;
        }
      }
      col += v0;
    }
  }
  b.var_d = SymMatrix(var_d);
  b.cov_bd = cov_bd;
  return b;
}

/// Cov(per-group sample means of sampled groups, every sampled raw
/// individual); rows follow the sampled-group order of sample_mean_structure.
inline Matrix cov_sample_mean_raw(const ModelSpec& spec, const Design& design) {
  require_valid(spec);
  validate_design(spec, design);
  const std::vector<int> sampled = design.sampled_groups();
  const int v0 = spec.variable_count();
  const long raw_dim = design.total() * v0;
  Matrix out(static_cast<long>(sampled.size()) * v0, raw_dim);
  long col = 0;
  for (int h = 0; h < spec.group_count(); ++h) {
    for (long j = 0; j < design[h]; ++j) {
      for (size_t a = 0; a < sampled.size(); ++a) {
        const int g = sampled[a];
        Matrix block = spec.A(g, h) * spec.C.mat();
        if (g == h) {
          block += (spec.gamma(g) * spec.D.mat() - spec.A(g, g) * spec.C.mat()) /
                   static_cast<double>(design[g]);
        }
        out.block(static_cast<long>(a) * v0, col, v0, v0) = block;
      }
      col += v0;
    }
  }
  return out;
}

/// Stacks raw observations into the component order used by assemble_joint.
inline Vector stack_raw(const ModelSpec& spec, const Design& design,
                        const ObservedSample& observed) {
  observed.check_against(spec, design, /*need_raw=*/true);
  const int v0 = spec.variable_count();
  Vector out(design.total() * v0);
  long at = 0;
  for (int g = 0; g < spec.group_count(); ++g) {
    if (design[g] < 1) continue;
    const Matrix& rows = observed.group_raw(g);
    for (long i = 0; i < design[g]; ++i) {
      out.segment(at, v0) = rows.row(i).transpose();
      at += v0;
    }
  }
  return out;
}

/// Stacks observed group means over the sampled groups.
inline Vector stack_means(const ModelSpec& spec, const Design& design,
                          const ObservedSample& observed) {
  observed.check_against(spec, design);
  const int v0 = spec.variable_count();
  const std::vector<int> sampled = design.sampled_groups();
  Vector out(static_cast<long>(sampled.size()) * v0);
  for (size_t a = 0; a < sampled.size(); ++a) {
    out.segment(static_cast<long>(a) * v0, v0) = observed.group_mean(sampled[a]);
  }
  return out;
}

}  // namespace blx

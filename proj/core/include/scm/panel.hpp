#pragma once

// Panel data model: the units-by-time outcome grid, covariate columns with
// compositional-group bookkeeping, and the X1/X0 design matrices every
// estimator consumes. All types here are immutable after construction and
// safe to share across parallel workers.

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "scm/errors.hpp"

namespace scm {

struct CompositionalGroup {
  std::string name;
  std::vector<std::string> categories;  // >= 2, unique within the group
};

struct CompositionalSpec {
  std::vector<CompositionalGroup> groups;
  std::vector<std::string> scalar_covariates;

  void validate() const;
  bool has_covariates() const { return !groups.empty() || !scalar_covariates.empty(); }
};

// Which category (if any) each group omits. Groups absent from the map keep
// all of their categories.
struct OmissionChoice {
  std::map<std::string, std::string> omitted;

  static OmissionChoice all_categories() { return {}; }
  bool is_all_categories() const { return omitted.empty(); }
  // Stable identifier for records: omitted categories joined by '|' in spec
  // group order, or "ALL".
  std::string label(const CompositionalSpec& spec) const;
};

struct PanelData {
  std::vector<std::string> unit_ids;  // treated unit first by convention
  std::vector<int> times;             // strictly increasing
  Eigen::MatrixXd outcome;            // T x N
  int treated_unit = 0;
  int t0 = 0;  // number of pre-treatment periods; times[t0-1] is the last one
  std::vector<std::string> covariate_names;
  std::vector<Eigen::MatrixXd> covariate_values;  // each T x N, aligned with names

  int n_units() const { return static_cast<int>(unit_ids.size()); }
  int n_periods() const { return static_cast<int>(times.size()); }
  int n_donors() const { return n_units() - 1; }
  int n_post() const { return n_periods() - t0; }

  bool has_covariate(const std::string& name) const;
  const Eigen::MatrixXd& covariate(const std::string& name) const;
  std::vector<int> donor_indices() const;

  // Checks the structural invariants; with a spec also checks that every
  // compositional group closes to 1 (within 1e-9) for every (unit, time).
  void validate(const CompositionalSpec* spec = nullptr) const;
};

struct DesignMatrices {
  Eigen::VectorXd x1;  // k, treated unit
  Eigen::MatrixXd x0;  // k x J, donors in panel order
  std::vector<std::string> column_names;
  int n_outcome_summaries = 0;  // trailing K_M block size

  int n_features() const { return static_cast<int>(x1.size()); }
  int n_donors() const { return static_cast<int>(x0.cols()); }
  int n_covariate_features() const { return n_features() - n_outcome_summaries; }
};

// Pre-treatment mean of the outcome for one unit: (1/T0) * sum_{t<=T0} Y.
double pre_outcome_summary(const PanelData& panel, int unit);

// Cartesian product of per-group category choices, in lexicographic order
// (first group varies slowest, categories in declared order).
std::vector<OmissionChoice> enumerate_omissions(const CompositionalSpec& spec);

// Optional K_M override: each (first, last) pair is an inclusive 1-based
// pre-treatment time range whose outcome mean becomes one design column.
// Default is a single block spanning all pre-treatment periods.
using SummaryBlocks = std::vector<std::pair<int, int>>;

// Columns are ordered scalars, then per-group categories minus the omitted
// one, then the outcome-summary block; covariates are collapsed to their
// pre-treatment time means. The ordering is fixed so V vectors are
// comparable across runs.
DesignMatrices build_design(const PanelData& panel, const CompositionalSpec& spec,
                            const OmissionChoice& omit,
                            const SummaryBlocks* summary_blocks = nullptr);

// CSV interchange: header `unit,time,outcome,<covariate...>`. Units are
// ordered by first appearance; the time grid must be complete. Parse errors
// name the offending line and column.
PanelData read_panel_csv(std::istream& in, int t0);
PanelData read_panel_csv_file(const std::string& path, int t0);
void write_panel_csv(std::ostream& out, const PanelData& panel);
void write_panel_csv_file(const std::string& path, const PanelData& panel);

}  // namespace scm

#pragma once

// Experiment metrics and orchestration: the quantities behind the paper-style
// figure tables (average RMSE of the estimated effect, reference-category
// dispersion, imbalance/bias rank agreement, Spearman correlations) and the
// replication harness that produces them.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "scm/calibration.hpp"
#include "scm/dgp.hpp"
#include "scm/panel.hpp"

namespace scm {

enum class Method {
  kSynthNested,
  kSynthRegWeights,
  kSynthAllCats,
  kSynthNoCov,
  kAugsynth,
  kAugsynthAllCats,
  kAugsynthNoCov,
  kAugsynthResid,
  kIfeCov,
  kIfeNoCov,
};

std::string to_string(Method method);
Method method_from_string(const std::string& s);
// True for methods parameterized by an omission choice (the rest carry an
// ALL or NONE sentinel in records).
bool method_takes_omission(Method method);

struct EstimateRecord {
  std::string scenario;
  std::string outcome_kind;  // LINEAR | FACTOR | TOY
  int replication = 0;
  Method method = Method::kSynthNested;
  std::string omission;  // omission label, or ALL / NONE
  double att_mean = 0.0;
  double rmspe_pre = 0.0;
  double bias = 0.0;  // att_mean - true_tau
};

// sqrt(mean over replications of bias^2).
double rmse_over_reps(const std::vector<EstimateRecord>& records);

// Sample SD of att_mean across an omission sweep, as a fraction of the
// outcome panel's SD for that replication.
double refcat_sd_ratio(const std::vector<EstimateRecord>& sweep, double outcome_sd);

// Pearson correlation of mid-ranks (ties get their average rank); empty when
// either side has zero rank variance.
std::optional<double> spearman_rho(const std::vector<double>& x, const std::vector<double>& y);

// Entry (i, j): fraction of replications in which the method ranked i-th by
// rmspe_pre ranked j-th by |bias|. Each inner vector holds one record per
// method, in `methods` order; ties break by that order. Rows and columns each
// sum to 1.
Eigen::MatrixXd rank_matrix(const std::vector<std::vector<EstimateRecord>>& per_replication,
                            const std::vector<Method>& methods);

enum class OmissionPolicy { kSweepAll, kSingle, kAllCategories, kNone };

std::string to_string(OmissionPolicy policy);
OmissionPolicy omission_policy_from_string(const std::string& s);

struct ExperimentConfig {
  std::vector<ScenarioConfig> scenarios;
  std::vector<Method> methods;
  OmissionPolicy omission_policy = OmissionPolicy::kSingle;
  std::optional<OmissionChoice> single_omission;  // kSingle default: first enumerated
  int replications = 100;
  std::uint64_t master_seed = 0;
  int workers = 1;
  int ife_rank = 0;
  int nested_restarts = 3;
  int nested_budget = 500;

  void validate() const;
};

struct MethodSummary {
  std::string scenario;
  std::string outcome_kind;
  Method method = Method::kSynthNested;
  // Mean over omission ids of the per-omission RMSE over replications (a
  // single omission makes this the plain RMSE).
  double rmse = 0.0;
  double mean_abs_bias = 0.0;
  std::optional<double> mean_refcat_sd_ratio;  // sweeps only
  std::optional<double> spearman;              // rho(rmspe_pre, |bias|)
  int n_records = 0;
  int n_failures = 0;
};

struct RankBlock {
  std::string scenario;
  std::string outcome_kind;
  std::vector<Method> methods;
  Eigen::MatrixXd matrix;
  int n_replications = 0;
};

struct ConditionalBiasRow {
  std::string scenario;
  std::string outcome_kind;
  std::string family;                  // SYNTH / AUGSYNTH / IFE
  Method best_imbalance_method;        // condition: which variant fit best pre-treatment
  Method method;
  double mean_abs_bias = 0.0;
  int n_replications = 0;
};

struct FailureRecord {
  std::string scenario;
  std::string outcome_kind;
  int replication = 0;
  Method method = Method::kSynthNested;
  std::string omission;
  std::string message;
};

struct PanelSdRecord {
  std::string scenario;
  std::string outcome_kind;
  int replication = 0;
  double outcome_sd = 0.0;
};

struct ExperimentReport {
  std::vector<MethodSummary> summaries;
  std::vector<RankBlock> rank_blocks;
  std::vector<ConditionalBiasRow> conditional_bias;
};

struct ExperimentResult {
  std::vector<EstimateRecord> records;
  std::vector<PanelSdRecord> panel_sds;
  std::vector<FailureRecord> failures;
  ExperimentReport report;
};

// Fans (replication) tasks out to a worker pool; record order is
// deterministic regardless of worker count. Individual fit failures are
// logged and excluded from aggregates.
ExperimentResult run_experiment(const ExperimentConfig& config, const CalibrationSet& calib);

// Pure aggregation shared by run_experiment and the `report` command; panel
// SDs may be empty, which drops the reference-category ratio column.
ExperimentReport build_report(const std::vector<EstimateRecord>& records,
                              const std::vector<PanelSdRecord>& panel_sds,
                              const std::vector<FailureRecord>& failures);

// Runs one method on one simulated dataset; sweeps handled by the caller.
// `spec` may be empty (toy data, or the omission policy that drops
// covariates); `omission_label` is recorded verbatim.
EstimateRecord fit_method(const SimulatedDataset& dataset, const CompositionalSpec& spec,
                          Method method, const OmissionChoice& omission,
                          const std::string& omission_label, const ExperimentConfig& config,
                          const std::string& scenario_label, const std::string& outcome_label,
                          int replication);

}  // namespace scm

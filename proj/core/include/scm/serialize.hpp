#pragma once

// JSON/CSV interchange: fit serialization for the CLI, the raw-records CSV
// the experiment harness emits and the report command re-reads, the
// plot-ready figure tables, and experiment config parsing. All floating
// point goes through "%.17g" so identical runs produce identical bytes.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "scm/augment.hpp"
#include "scm/evalx.hpp"
#include "scm/ife.hpp"
#include "scm/synth.hpp"

namespace scm {

std::string format_double(double v);

std::string to_json(const SynthFit& fit, const DesignMatrices& design);
std::string to_json(const AugmentedFit& fit);
std::string to_json(const IfeFit& fit);

// One flat CSV row per fit for the experiment harness.
std::string fit_csv_header();
std::string fit_csv_row(const std::string& method, const std::string& omission,
                        double att_mean, double rmspe_pre);

// Raw records: scenario,outcome_kind,rep,method,omission,att_mean,rmspe_pre,bias
void write_records_csv(std::ostream& out, const std::vector<EstimateRecord>& records);
std::vector<EstimateRecord> read_records_csv(std::istream& in);

void write_panel_sd_csv(std::ostream& out, const std::vector<PanelSdRecord>& records);
std::vector<PanelSdRecord> read_panel_sd_csv(std::istream& in);

void write_failures_csv(std::ostream& out, const std::vector<FailureRecord>& failures);

// Figure tables: fig1_rmse, fig2_refcat (sweeps only), fig4_conditional_bias,
// fig6_spearman, fig8_rankmatrix; written under `dir`.
void write_report_tables(const std::string& dir, const ExperimentReport& report);

struct CliExperimentSpec {
  ExperimentConfig config;
  std::string calibration_path;  // empty: resolve via env / shipped default
  std::string output_dir;
};

CliExperimentSpec parse_experiment_config(const std::string& json_text);

// FNV-1a over the text; recorded in output manifests for provenance.
std::uint64_t config_hash(const std::string& text);

}  // namespace scm

#include "scm/dgp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace scm {

namespace {

// Substream tags; covariates share one stream across outcome kinds so each
// linear/factor pair sees identical covariate values.
constexpr std::uint64_t kCovariateTag = 0xC0;
constexpr std::uint64_t kLinearTag = 0x11;
constexpr std::uint64_t kFactorTag = 0x12;

constexpr double kLogAlphaLimit = 700.0;  // exp() overflow guard

}  // namespace

std::string to_string(Overlap overlap) {
  switch (overlap) {
    case Overlap::kFullOverlap: return "full_overlap";
    case Overlap::kTreatmentOffset: return "treatment_offset";
    case Overlap::kStateOffset: return "state_offset";
    case Overlap::kRandomOffset: return "random_offset";
  }
  return "?";
}

std::string to_string(OutcomeKind kind) {
  return kind == OutcomeKind::kLinear ? "LINEAR" : "FACTOR";
}

Overlap overlap_from_string(const std::string& s) {
  if (s == "full_overlap") return Overlap::kFullOverlap;
  if (s == "treatment_offset") return Overlap::kTreatmentOffset;
  if (s == "state_offset") return Overlap::kStateOffset;
  if (s == "random_offset") return Overlap::kRandomOffset;
  fail(errc::schema_error, "unknown overlap scenario '" + s + "'");
}

OutcomeKind outcome_kind_from_string(const std::string& s) {
  if (s == "LINEAR" || s == "linear") return OutcomeKind::kLinear;
  if (s == "FACTOR" || s == "factor") return OutcomeKind::kFactor;
  fail(errc::schema_error, "unknown outcome kind '" + s + "'");
}

void ScenarioConfig::validate() const {
  if (toy_overfit) {
    require(toy_controls >= 1 && toy_post_periods >= 1, errc::invalid_argument,
            "toy scenario needs at least one control and one post period");
    return;
  }
  require(n_units >= 2, errc::invalid_argument, "scenario needs at least 2 units");
  require(t0 >= 1 && t0 < t, errc::invalid_argument, "scenario needs 1 <= t0 < T");
}

double ScenarioConfig::resolve_tau(const CalibrationSet& calib) const {
  if (fixed_tau.has_value()) return *fixed_tau;
  if (tau_from_multiplier) return tau_multiplier * calib.outcome_reference_sd;
  return calib.tau_default;
}

Eigen::VectorXd draw_coefficients(const Eigen::VectorXd& eta_hat,
                                  const Eigen::MatrixXd& sigma_hat, RngStream& rng) {
  const int n = static_cast<int>(eta_hat.size());
  require(sigma_hat.rows() == n && sigma_hat.cols() == n, errc::invalid_argument,
          "covariance dimension mismatch");
  double asym = n == 0 ? 0.0 : (sigma_hat - sigma_hat.transpose()).cwiseAbs().maxCoeff();
  require(asym <= 1e-10 * std::max(1.0, sigma_hat.cwiseAbs().maxCoeff()),
          errc::invalid_argument, "covariance is not symmetric");

  Eigen::VectorXd z = rng.normal_vector(n);  // consumed even when sigma is zero
  if (sigma_hat.isZero(0.0)) return eta_hat;

  double scale = sigma_hat.diagonal().maxCoeff();
  Eigen::MatrixXd jittered = sigma_hat;
  jittered.diagonal().array() += 1e-10 * std::max(scale, 1e-300);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(jittered);
  Eigen::VectorXd d = ldlt.vectorD();
  require(ldlt.info() == Eigen::Success && d.minCoeff() >= -1e-10 * std::max(scale, 1.0),
          errc::invalid_argument, "covariance is not positive semidefinite");
  // x = eta + P^T L sqrt(D) z reproduces the covariance for PSD sigma.
  Eigen::VectorXd scaled = d.cwiseMax(0.0).cwiseSqrt().asDiagonal() * z;
  Eigen::VectorXd correlated = ldlt.matrixL() * scaled;
  return eta_hat + ldlt.transpositionsP().transpose() * correlated;
}

Eigen::VectorXd sample_composition(const Eigen::VectorXd& alpha, RngStream& rng) {
  const int k = static_cast<int>(alpha.size());
  require(k >= 1, errc::invalid_argument, "empty alpha");
  require(alpha.minCoeff() > 0.0, errc::invalid_argument, "Dirichlet alpha must be positive");
  Eigen::VectorXd draws(k);
  for (int i = 0; i < k; ++i)
    draws[i] = std::max(rng.gamma(alpha[i]), 1e-300);  // keep shares strictly positive
  return draws / draws.sum();
}

namespace {

struct ChainState {
  // Current covariate values for one (unit, year): filled in chain order.
  Eigen::VectorXd industry;
  Eigen::VectorXd education;
  Eigen::VectorXd race;
  double wage = 0.0;
};

Eigen::VectorXd family_predictor_vector(const RegressionFamily& fam, double year01,
                                        const ChainState& state) {
  int p = static_cast<int>(fam.coef_mean.cols());
  Eigen::VectorXd x(p);
  int at = 0;
  x[at++] = 1.0;
  for (const auto& pred : fam.predictors) {
    if (pred == "year") {
      x[at++] = year01;
    } else if (pred == "industry") {
      x.segment(at, state.industry.size()) = state.industry;
      at += static_cast<int>(state.industry.size());
    } else if (pred == "education") {
      x.segment(at, state.education.size()) = state.education;
      at += static_cast<int>(state.education.size());
    } else if (pred == "race") {
      x.segment(at, state.race.size()) = state.race;
      at += static_cast<int>(state.race.size());
    } else if (pred == "wage") {
      x[at++] = state.wage;
    } else {
      fail(errc::schema_error, "unknown predictor '" + pred + "'");
    }
  }
  require(at == p, errc::calibration_error, fam.name + ": predictor width mismatch");
  return x;
}

// lambda_s per scenario; RANDOM_OFFSET values are drawn by the caller.
double state_intercept(const RegressionFamily& fam, Overlap overlap, int unit,
                       const Eigen::VectorXd* random_offsets) {
  switch (overlap) {
    case Overlap::kFullOverlap: return 0.0;
    case Overlap::kTreatmentOffset:
      if (unit != 0) return 0.0;
      [[fallthrough]];
    case Overlap::kStateOffset:
      require(fam.state_effects.size() > unit, errc::calibration_error,
              fam.name + ": calibration has no state effects for this scenario");
      return fam.state_effects[unit];
    case Overlap::kRandomOffset: return (*random_offsets)[unit];
  }
  return 0.0;
}

Eigen::VectorXd flatten(const Eigen::MatrixXd& m) {
  Eigen::VectorXd v(m.size());
  int at = 0;
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) v[at++] = m(r, c);
  return v;
}

Eigen::MatrixXd unflatten(const Eigen::VectorXd& v, int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  int at = 0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = v[at++];
  return m;
}

}  // namespace

CovariatePanel simulate_covariates(const ScenarioConfig& scenario, const CalibrationSet& calib,
                                   RngStream& rng,
                                   std::map<std::string, Eigen::VectorXd>* drawn) {
  scenario.validate();
  const int n = scenario.n_units;
  const int t = scenario.t;
  require(n <= calib.n_units(), errc::calibration_error,
          "scenario asks for more units than the calibration defines");

  const RegressionFamily* chain[] = {&calib.industry, &calib.education, &calib.race,
                                     &calib.wage};

  // Draw order is fixed: family coefficients in chain order, then (random
  // offset only) per-family state intercepts, then unit-major/time-inner
  // covariate draws.
  std::vector<Eigen::MatrixXd> coef;
  for (const RegressionFamily* fam : chain) {
    Eigen::VectorXd eta = flatten(fam->coef_mean);
    Eigen::VectorXd draw = draw_coefficients(eta, fam->coef_cov, rng);
    coef.push_back(unflatten(draw, fam->n_rows, static_cast<int>(fam->coef_mean.cols())));
    if (drawn != nullptr) (*drawn)[fam->name] = draw;
  }

  std::vector<Eigen::VectorXd> random_offsets(4);
  if (scenario.overlap == Overlap::kRandomOffset) {
    for (std::size_t f = 0; f < 4; ++f) {
      // sigma_lambda / 3, per Appendix A, treated unit included.
      double sd = chain[f]->state_effect_sd / 3.0;
      random_offsets[f] = sd * rng.normal_vector(n);
      if (drawn != nullptr) (*drawn)[chain[f]->name + "_lambda"] = random_offsets[f];
    }
  }

  CovariatePanel panel;
  panel.t0 = scenario.t0;
  panel.names.push_back(calib.wage_name);
  for (const auto& c : calib.race_categories) panel.names.push_back(c);
  for (const auto& c : calib.education_categories) panel.names.push_back(c);
  for (const auto& c : calib.industry_categories) panel.names.push_back(c);
  panel.values.assign(panel.names.size(), Eigen::MatrixXd::Zero(t, n));

  auto store = [&](const std::string& name, int time, int unit, double value) {
    auto it = std::find(panel.names.begin(), panel.names.end(), name);
    panel.values[static_cast<std::size_t>(it - panel.names.begin())](time, unit) = value;
  };

  for (int unit = 0; unit < n; ++unit) {
    for (int time = 0; time < t; ++time) {
      double year01 = t == 1 ? 0.0 : static_cast<double>(time) / (t - 1);
      ChainState state;
      for (std::size_t f = 0; f < 4; ++f) {
        const RegressionFamily& fam = *chain[f];
        double lambda = state_intercept(fam, scenario.overlap, unit,
                                        scenario.overlap == Overlap::kRandomOffset
                                            ? &random_offsets[f]
                                            : nullptr);
        Eigen::VectorXd x = family_predictor_vector(fam, year01, state);
        Eigen::VectorXd lin = coef[f] * x;
        lin.array() += lambda;
        if (fam.n_rows == 1) {  // wage: linear-normal
          state.wage = lin[0] + fam.residual_sd * rng.normal();
        } else {
          require(lin.cwiseAbs().maxCoeff() <= kLogAlphaLimit, errc::calibration_error,
                  fam.name + ": log-alpha overflow; check the calibration scale");
          Eigen::VectorXd alpha = lin.array().exp();
          Eigen::VectorXd shares = calib.composition_mean_mode
                                       ? Eigen::VectorXd(alpha / alpha.sum())
                                       : sample_composition(alpha, rng);
          if (fam.name == "industry") state.industry = shares;
          else if (fam.name == "education") state.education = shares;
          else state.race = shares;
        }
      }
      store(calib.wage_name, time, unit, state.wage);
      for (std::size_t c = 0; c < calib.race_categories.size(); ++c)
        store(calib.race_categories[c], time, unit, state.race[static_cast<int>(c)]);
      for (std::size_t c = 0; c < calib.education_categories.size(); ++c)
        store(calib.education_categories[c], time, unit, state.education[static_cast<int>(c)]);
      for (std::size_t c = 0; c < calib.industry_categories.size(); ++c)
        store(calib.industry_categories[c], time, unit, state.industry[static_cast<int>(c)]);
    }
  }
  return panel;
}

namespace {

// Covariate order shared by both outcome models: wage, industry, education,
// race (13 values with the 5/4/3 compositional spec).
Eigen::VectorXd covariate_vector_at(const CovariatePanel& cov, const CalibrationSet& calib,
                                    int time, int unit) {
  Eigen::VectorXd v(13);
  int at = 0;
  auto value = [&](const std::string& name) {
    auto it = std::find(cov.names.begin(), cov.names.end(), name);
    return cov.values[static_cast<std::size_t>(it - cov.names.begin())](time, unit);
  };
  v[at++] = value(calib.wage_name);
  for (const auto& c : calib.industry_categories) v[at++] = value(c);
  for (const auto& c : calib.education_categories) v[at++] = value(c);
  for (const auto& c : calib.race_categories) v[at++] = value(c);
  return v;
}

}  // namespace

Eigen::MatrixXd simulate_outcome(const CovariatePanel& covariates, OutcomeKind kind,
                                 const CalibrationSet& calib, const ScenarioConfig& scenario,
                                 RngStream& rng,
                                 std::map<std::string, Eigen::VectorXd>* drawn) {
  const int t = scenario.t;
  const int n = scenario.n_units;
  const OutcomeModel& model =
      kind == OutcomeKind::kLinear ? calib.linear_outcome : calib.factor_outcome;
  Eigen::VectorXd beta = draw_coefficients(model.coef_mean, model.coef_cov, rng);
  if (drawn != nullptr)
    (*drawn)[kind == OutcomeKind::kLinear ? "outcome_linear" : "outcome_factor"] = beta;

  // Factor kind: per-state pre-treatment means of the simulated covariates.
  Eigen::MatrixXd pre_means(13, n);
  if (kind == OutcomeKind::kFactor) {
    pre_means.setZero();
    for (int unit = 0; unit < n; ++unit) {
      for (int time = 0; time < covariates.t0; ++time)
        pre_means.col(unit) += covariate_vector_at(covariates, calib, time, unit);
      pre_means.col(unit) /= covariates.t0;
    }
  }

  Eigen::MatrixXd outcome(t, n);
  for (int unit = 0; unit < n; ++unit) {
    for (int time = 0; time < t; ++time) {
      double year01 = t == 1 ? 0.0 : static_cast<double>(time) / (t - 1);
      double mean;
      if (kind == OutcomeKind::kLinear) {
        Eigen::VectorXd x(15);
        x[0] = 1.0;
        x[1] = year01;
        x.tail(13) = covariate_vector_at(covariates, calib, time, unit);
        mean = beta.dot(x);
      } else {
        Eigen::VectorXd x(28);
        x[0] = 1.0;
        x[1] = year01;
        x.segment(2, 13) = pre_means.col(unit);
        x.tail(13) = year01 * pre_means.col(unit);
        mean = beta.dot(x);
      }
      outcome(time, unit) = mean + model.residual_sd * rng.normal();
    }
  }
  return outcome;
}

SimulatedDataset inject_treatment(const PanelData& untreated, double tau) {
  require(std::isfinite(tau), errc::invalid_argument, "tau must be finite");
  SimulatedDataset dataset;
  dataset.panel = untreated;
  dataset.true_tau = tau;
  dataset.counterfactual = untreated.outcome.col(untreated.treated_unit);
  for (int time = untreated.t0; time < untreated.n_periods(); ++time)
    dataset.panel.outcome(time, untreated.treated_unit) += tau;
  return dataset;
}

SimulatedDataset simulate_dataset(const ScenarioConfig& scenario, const CalibrationSet& calib,
                                  std::uint64_t replication) {
  scenario.validate();
  calib.validate();

  RngStream cov_rng = RngStream::substream(scenario.seed, replication, kCovariateTag);
  RngStream out_rng = RngStream::substream(
      scenario.seed, replication,
      scenario.outcome_kind == OutcomeKind::kLinear ? kLinearTag : kFactorTag);

  std::map<std::string, Eigen::VectorXd> drawn;
  CovariatePanel covariates = simulate_covariates(scenario, calib, cov_rng, &drawn);
  Eigen::MatrixXd outcome =
      simulate_outcome(covariates, scenario.outcome_kind, calib, scenario, out_rng, &drawn);

  PanelData panel;
  panel.unit_ids.assign(calib.unit_labels.begin(),
                        calib.unit_labels.begin() + scenario.n_units);
  panel.times.resize(static_cast<std::size_t>(scenario.t));
  for (int i = 0; i < scenario.t; ++i) panel.times[static_cast<std::size_t>(i)] = i + 1;
  panel.outcome = std::move(outcome);
  panel.treated_unit = 0;
  panel.t0 = scenario.t0;
  panel.covariate_names = covariates.names;
  panel.covariate_values = covariates.values;
  panel.validate();

  SimulatedDataset dataset = inject_treatment(panel, scenario.resolve_tau(calib));
  dataset.drawn_coefficients = std::move(drawn);
  return dataset;
}

SimulatedDataset toy_overfit_scenario(int n_controls, int t_post, RngStream& rng) {
  require(n_controls >= 1, errc::invalid_argument, "need at least one control");
  require(t_post >= 1, errc::invalid_argument, "need at least one post period");
  const int t = 1 + t_post;
  const int n = 1 + n_controls;

  PanelData panel;
  panel.unit_ids.push_back("treated");
  for (int i = 1; i < n; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "control%03d", i);
    panel.unit_ids.emplace_back(buf);
  }
  panel.times.resize(static_cast<std::size_t>(t));
  for (int i = 0; i < t; ++i) panel.times[static_cast<std::size_t>(i)] = i + 1;
  panel.treated_unit = 0;
  panel.t0 = 1;
  panel.outcome.resize(t, n);
  for (int unit = 0; unit < n; ++unit) {
    double level = unit == 0 ? 1.0 : 0.0;
    for (int time = 0; time < t; ++time) panel.outcome(time, unit) = level + rng.normal();
  }
  return inject_treatment(panel, 0.0);
}

}  // namespace scm

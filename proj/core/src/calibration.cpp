#include "scm/calibration.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace scm {

namespace {

using nlohmann::json;

int predictor_width(const CalibrationSet& calib, const std::string& name) {
  if (name == "year") return 1;
  if (name == "industry") return static_cast<int>(calib.industry_categories.size());
  if (name == "education") return static_cast<int>(calib.education_categories.size());
  if (name == "race") return static_cast<int>(calib.race_categories.size());
  if (name == "wage") return 1;
  fail(errc::schema_error, "unknown predictor '" + name + "'");
}

Eigen::MatrixXd parse_cov(const json& j, int dim, const std::string& where) {
  if (j.is_object() && j.contains("zero")) return Eigen::MatrixXd::Zero(dim, dim);
  if (j.is_object() && j.contains("diag")) {
    auto d = j.at("diag").get<std::vector<double>>();
    require(static_cast<int>(d.size()) == dim, errc::schema_error,
            where + ": diag covariance needs " + std::to_string(dim) + " entries");
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dim, dim);
    for (int i = 0; i < dim; ++i) m(i, i) = d[static_cast<std::size_t>(i)];
    return m;
  }
  if (j.is_object() && j.contains("dense")) {
    auto rows = j.at("dense").get<std::vector<std::vector<double>>>();
    require(static_cast<int>(rows.size()) == dim, errc::schema_error,
            where + ": dense covariance needs " + std::to_string(dim) + " rows");
    Eigen::MatrixXd m(dim, dim);
    for (int i = 0; i < dim; ++i) {
      require(static_cast<int>(rows[static_cast<std::size_t>(i)].size()) == dim,
              errc::schema_error, where + ": covariance is not square");
      for (int c = 0; c < dim; ++c) m(i, c) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
    }
    return m;
  }
  fail(errc::schema_error, where + ": covariance must be {zero|diag|dense}");
}

RegressionFamily parse_family(const CalibrationSet& calib, const json& j,
                              const std::string& name, int n_rows, bool linear) {
  RegressionFamily fam;
  fam.name = name;
  fam.n_rows = n_rows;
  fam.predictors = j.at("predictors").get<std::vector<std::string>>();
  int p = 1;
  for (const auto& pred : fam.predictors) p += predictor_width(calib, pred);

  auto rows = j.at("coef_mean").get<std::vector<std::vector<double>>>();
  require(static_cast<int>(rows.size()) == n_rows, errc::schema_error,
          name + ": coef_mean needs " + std::to_string(n_rows) + " rows");
  fam.coef_mean.resize(n_rows, p);
  for (int r = 0; r < n_rows; ++r) {
    require(static_cast<int>(rows[static_cast<std::size_t>(r)].size()) == p, errc::schema_error,
            name + ": coef_mean rows need " + std::to_string(p) + " entries (intercept first)");
    for (int c = 0; c < p; ++c) fam.coef_mean(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  }
  fam.coef_cov = parse_cov(j.at("coef_cov"), n_rows * p, name);
  if (linear) fam.residual_sd = j.at("residual_sd").get<double>();
  if (j.contains("state_effects")) {
    auto se = j.at("state_effects").get<std::vector<double>>();
    fam.state_effects = Eigen::Map<const Eigen::VectorXd>(se.data(), static_cast<int>(se.size()));
  }
  fam.state_effect_sd = j.value("state_effect_sd", 0.0);
  return fam;
}

OutcomeModel parse_outcome(const json& j, int dim, const std::string& where) {
  OutcomeModel model;
  auto mean = j.at("coef_mean").get<std::vector<double>>();
  require(static_cast<int>(mean.size()) == dim, errc::schema_error,
          where + ": coef_mean needs " + std::to_string(dim) + " entries");
  model.coef_mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), dim);
  model.coef_cov = parse_cov(j.at("coef_cov"), dim, where);
  model.residual_sd = j.at("residual_sd").get<double>();
  return model;
}

}  // namespace

CompositionalSpec CalibrationSet::compositional_spec() const {
  CompositionalSpec spec;
  spec.groups.push_back({"race", race_categories});
  spec.groups.push_back({"education", education_categories});
  spec.groups.push_back({"industry", industry_categories});
  spec.scalar_covariates.push_back(wage_name);
  return spec;
}

void CalibrationSet::validate() const {
  require(n_units() >= 2, errc::calibration_error, "calibration needs at least 2 units");
  require(industry_categories.size() == 5, errc::calibration_error,
          "industry must have 5 categories");
  require(education_categories.size() == 4, errc::calibration_error,
          "education must have 4 categories");
  require(race_categories.size() == 3, errc::calibration_error, "race must have 3 categories");
  for (const RegressionFamily* fam : {&industry, &education, &race, &wage}) {
    double asym = (fam->coef_cov - fam->coef_cov.transpose()).cwiseAbs().maxCoeff();
    require(asym <= 1e-12, errc::calibration_error,
            fam->name + ": coefficient covariance is not symmetric");
    require(fam->state_effects.size() == 0 || fam->state_effects.size() == n_units(),
            errc::calibration_error,
            fam->name + ": state_effects must have one entry per unit");
    require(fam->state_effect_sd >= 0.0, errc::calibration_error,
            fam->name + ": negative state_effect_sd");
  }
  require(wage.residual_sd >= 0.0, errc::calibration_error, "wage: negative residual_sd");
  require(linear_outcome.coef_mean.size() == 15, errc::calibration_error,
          "linear outcome needs 15 coefficients");
  require(factor_outcome.coef_mean.size() == 28, errc::calibration_error,
          "factor outcome needs 28 coefficients");
  require(outcome_reference_sd > 0.0, errc::calibration_error, "reference_sd must be positive");
}

CalibrationSet load_calibration(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(errc::schema_error, std::string("calibration JSON parse error: ") + e.what());
  }
  try {
    require(j.at("schema_version").get<int>() == 1, errc::schema_error,
            "unsupported calibration schema_version");
    CalibrationSet calib;
    calib.description = j.value("description", "");
    if (j.at("units").is_array()) {
      calib.unit_labels = j.at("units").get<std::vector<std::string>>();
    } else {
      int count = j.at("units").at("count").get<int>();
      calib.unit_labels.push_back("treated");
      for (int i = 1; i < count; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "donor%02d", i);
        calib.unit_labels.emplace_back(buf);
      }
    }
    const auto& cats = j.at("categories");
    calib.industry_categories = cats.at("industry").get<std::vector<std::string>>();
    calib.education_categories = cats.at("education").get<std::vector<std::string>>();
    calib.race_categories = cats.at("race").get<std::vector<std::string>>();
    calib.wage_name = j.value("wage_name", "wage");
    calib.composition_mean_mode = j.value("composition_mode", "dirichlet") == "mean";

    const auto& fams = j.at("families");
    calib.industry = parse_family(calib, fams.at("industry"), "industry",
                                  static_cast<int>(calib.industry_categories.size()), false);
    calib.education = parse_family(calib, fams.at("education"), "education",
                                   static_cast<int>(calib.education_categories.size()), false);
    calib.race = parse_family(calib, fams.at("race"), "race",
                              static_cast<int>(calib.race_categories.size()), false);
    calib.wage = parse_family(calib, fams.at("wage"), "wage", 1, true);

    const auto& outcome = j.at("outcome");
    calib.linear_outcome = parse_outcome(outcome.at("linear"), 15, "outcome.linear");
    calib.factor_outcome = parse_outcome(outcome.at("factor"), 28, "outcome.factor");
    calib.outcome_reference_sd = outcome.at("reference_sd").get<double>();
    calib.tau_default = outcome.at("tau_default").get<double>();

    calib.validate();
    return calib;
  } catch (const json::exception& e) {
    fail(errc::schema_error, std::string("calibration schema error: ") + e.what());
  }
}

CalibrationSet load_calibration_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), errc::io_error, "cannot open calibration file '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return load_calibration(buffer.str());
}

}  // namespace scm

#include "scm/panel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace scm {

namespace {

constexpr double kClosureTol = 1e-9;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void CompositionalSpec::validate() const {
  std::vector<std::string> seen_groups;
  for (const auto& g : groups) {
    require(!g.name.empty(), errc::invalid_argument, "compositional group with empty name");
    require(g.categories.size() >= 2, errc::invalid_argument,
            "group '" + g.name + "' needs at least 2 categories");
    auto cats = g.categories;
    std::sort(cats.begin(), cats.end());
    require(std::adjacent_find(cats.begin(), cats.end()) == cats.end(),
            errc::invalid_argument, "duplicate category in group '" + g.name + "'");
    require(std::find(seen_groups.begin(), seen_groups.end(), g.name) == seen_groups.end(),
            errc::invalid_argument, "duplicate group '" + g.name + "'");
    seen_groups.push_back(g.name);
  }
}

std::string OmissionChoice::label(const CompositionalSpec& spec) const {
  if (omitted.empty()) return "ALL";
  std::string out;
  for (const auto& g : spec.groups) {
    if (!out.empty()) out += '|';
    auto it = omitted.find(g.name);
    out += (it == omitted.end()) ? "*" : it->second;
  }
  return out;
}

bool PanelData::has_covariate(const std::string& name) const {
  return std::find(covariate_names.begin(), covariate_names.end(), name) !=
         covariate_names.end();
}

const Eigen::MatrixXd& PanelData::covariate(const std::string& name) const {
  auto it = std::find(covariate_names.begin(), covariate_names.end(), name);
  require(it != covariate_names.end(), errc::unknown_category,
          "panel has no covariate '" + name + "'");
  return covariate_values[static_cast<std::size_t>(it - covariate_names.begin())];
}

std::vector<int> PanelData::donor_indices() const {
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(n_donors()));
  for (int i = 0; i < n_units(); ++i)
    if (i != treated_unit) idx.push_back(i);
  return idx;
}

void PanelData::validate(const CompositionalSpec* spec) const {
  const int n = n_units();
  const int t = n_periods();
  require(n >= 2, errc::invalid_argument, "panel needs a treated unit and at least one donor");
  require(treated_unit >= 0 && treated_unit < n, errc::invalid_argument,
          "treated_unit out of range");
  require(t0 >= 1 && t0 < t, errc::invalid_argument, "need 1 <= T0 < T");
  require(outcome.rows() == t && outcome.cols() == n, errc::invalid_argument,
          "outcome matrix must be T x N");
  for (int i = 1; i < t; ++i)
    require(times[i] > times[i - 1], errc::invalid_argument, "times must be strictly increasing");
  require(outcome.allFinite(), errc::invalid_argument, "outcome has missing or non-finite cells");
  require(covariate_names.size() == covariate_values.size(), errc::invalid_argument,
          "covariate names/values size mismatch");
  for (const auto& m : covariate_values) {
    require(m.rows() == t && m.cols() == n, errc::invalid_argument,
            "covariate matrix must be T x N");
    require(m.allFinite(), errc::invalid_argument, "covariate has non-finite cells");
  }
  if (spec == nullptr) return;

  for (const auto& name : spec->scalar_covariates)
    require(has_covariate(name), errc::unknown_category,
            "panel is missing scalar covariate '" + name + "'");
  for (const auto& g : spec->groups) {
    Eigen::MatrixXd total = Eigen::MatrixXd::Zero(t, n);
    for (const auto& cat : g.categories) {
      require(has_covariate(cat), errc::unknown_category,
              "panel is missing category '" + cat + "' of group '" + g.name + "'");
      total += covariate(cat);
    }
    double worst = (total.array() - 1.0).abs().maxCoeff();
    require(worst <= kClosureTol, errc::invalid_argument,
            "group '" + g.name + "' does not sum to 1 (max deviation " +
                format_double(worst) + ")");
  }
}

double pre_outcome_summary(const PanelData& panel, int unit) {
  require(unit >= 0 && unit < panel.n_units(), errc::invalid_argument, "unit out of range");
  return panel.outcome.col(unit).head(panel.t0).mean();
}

std::vector<OmissionChoice> enumerate_omissions(const CompositionalSpec& spec) {
  spec.validate();
  std::vector<OmissionChoice> out;
  out.emplace_back();
  for (const auto& g : spec.groups) {
    std::vector<OmissionChoice> next;
    next.reserve(out.size() * g.categories.size());
    for (const auto& partial : out) {
      for (const auto& cat : g.categories) {
        OmissionChoice choice = partial;
        choice.omitted[g.name] = cat;
        next.push_back(std::move(choice));
      }
    }
    out = std::move(next);
  }
  return out;
}

namespace {

Eigen::VectorXd pre_mean_per_unit(const PanelData& panel, const Eigen::MatrixXd& values) {
  return values.topRows(panel.t0).colwise().mean().transpose();
}

}  // namespace

DesignMatrices build_design(const PanelData& panel, const CompositionalSpec& spec,
                            const OmissionChoice& omit, const SummaryBlocks* summary_blocks) {
  spec.validate();
  panel.validate(&spec);
  require(panel.n_donors() >= 1, errc::empty_donor_pool, "empty donor pool");
  for (const auto& [group, cat] : omit.omitted) {
    auto git = std::find_if(spec.groups.begin(), spec.groups.end(),
                            [&](const auto& g) { return g.name == group; });
    require(git != spec.groups.end(), errc::unknown_category,
            "omission names unknown group '" + group + "'");
    require(std::find(git->categories.begin(), git->categories.end(), cat) !=
                git->categories.end(),
            errc::unknown_category,
            "omitted category '" + cat + "' not in group '" + group + "'");
  }

  std::vector<std::string> columns;
  for (const auto& name : spec.scalar_covariates) columns.push_back(name);
  for (const auto& g : spec.groups) {
    auto it = omit.omitted.find(g.name);
    for (const auto& cat : g.categories)
      if (it == omit.omitted.end() || it->second != cat) columns.push_back(cat);
  }

  SummaryBlocks blocks;
  if (summary_blocks != nullptr) {
    blocks = *summary_blocks;
    for (auto [first, last] : blocks)
      require(first >= 1 && first <= last && last <= panel.t0, errc::invalid_argument,
              "outcome summary block outside the pre-treatment window");
  } else {
    blocks.emplace_back(1, panel.t0);
  }

  const int n_cov = static_cast<int>(columns.size());
  const int k = n_cov + static_cast<int>(blocks.size());
  const auto donors = panel.donor_indices();
  const int j = static_cast<int>(donors.size());

  DesignMatrices design;
  design.x1.resize(k);
  design.x0.resize(k, j);
  design.n_outcome_summaries = static_cast<int>(blocks.size());

  for (int c = 0; c < n_cov; ++c) {
    Eigen::VectorXd means = pre_mean_per_unit(panel, panel.covariate(columns[c]));
    design.x1[c] = means[panel.treated_unit];
    for (int d = 0; d < j; ++d) design.x0(c, d) = means[donors[static_cast<std::size_t>(d)]];
  }
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    auto [first, last] = blocks[b];
    const int row = n_cov + static_cast<int>(b);
    const int len = last - first + 1;
    Eigen::VectorXd means =
        panel.outcome.middleRows(first - 1, len).colwise().mean().transpose();
    design.x1[row] = means[panel.treated_unit];
    for (int d = 0; d < j; ++d) design.x0(row, d) = means[donors[static_cast<std::size_t>(d)]];
    columns.push_back(blocks.size() == 1 ? std::string("pre_outcome_mean")
                                         : "pre_outcome_mean_" + std::to_string(first) + "_" +
                                               std::to_string(last));
  }
  design.column_names = std::move(columns);
  return design;
}

// --- CSV ---------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_double(const std::string& s, int line_no, int col_no) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(errc::io_error, "CSV parse error at line " + std::to_string(line_no) + ", column " +
                             std::to_string(col_no) + ": '" + s + "' is not a number");
  }
}

}  // namespace

PanelData read_panel_csv(std::istream& in, int t0) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), errc::io_error, "empty CSV input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split_csv_line(line);
  require(header.size() >= 3 && header[0] == "unit" && header[1] == "time" &&
              header[2] == "outcome",
          errc::io_error, "CSV header must start with unit,time,outcome");
  std::vector<std::string> cov_names(header.begin() + 3, header.end());

  struct Row {
    std::string unit;
    int time;
    std::vector<double> values;  // outcome then covariates
  };
  std::vector<Row> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    require(fields.size() == header.size(), errc::io_error,
            "CSV parse error at line " + std::to_string(line_no) + ": expected " +
                std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
    Row row;
    row.unit = fields[0];
    row.time = static_cast<int>(parse_double(fields[1], line_no, 2));
    row.values.reserve(fields.size() - 2);
    for (std::size_t c = 2; c < fields.size(); ++c)
      row.values.push_back(parse_double(fields[c], line_no, static_cast<int>(c) + 1));
    rows.push_back(std::move(row));
  }
  require(!rows.empty(), errc::io_error, "CSV has no data rows");

  std::vector<std::string> units;
  std::unordered_map<std::string, int> unit_index;
  std::vector<int> times;
  for (const auto& row : rows) {
    if (unit_index.emplace(row.unit, static_cast<int>(units.size())).second)
      units.push_back(row.unit);
    if (std::find(times.begin(), times.end(), row.time) == times.end())
      times.push_back(row.time);
  }
  std::sort(times.begin(), times.end());

  const int n = static_cast<int>(units.size());
  const int t = static_cast<int>(times.size());
  require(static_cast<int>(rows.size()) == n * t, errc::io_error,
          "CSV does not form a complete unit x time grid");

  PanelData panel;
  panel.unit_ids = units;
  panel.times = times;
  panel.t0 = t0;
  panel.outcome.setConstant(t, n, std::numeric_limits<double>::quiet_NaN());
  panel.covariate_names = cov_names;
  panel.covariate_values.assign(cov_names.size(),
                                Eigen::MatrixXd::Constant(t, n, std::numeric_limits<double>::quiet_NaN()));
  for (const auto& row : rows) {
    int ui = unit_index.at(row.unit);
    int ti = static_cast<int>(std::lower_bound(times.begin(), times.end(), row.time) -
                              times.begin());
    require(std::isnan(panel.outcome(ti, ui)), errc::io_error,
            "duplicate CSV row for unit '" + row.unit + "' time " + std::to_string(row.time));
    panel.outcome(ti, ui) = row.values[0];
    for (std::size_t c = 0; c < cov_names.size(); ++c)
      panel.covariate_values[c](ti, ui) = row.values[c + 1];
  }
  panel.validate();
  return panel;
}

PanelData read_panel_csv_file(const std::string& path, int t0) {
  std::ifstream in(path);
  require(in.good(), errc::io_error, "cannot open '" + path + "'");
  return read_panel_csv(in, t0);
}

void write_panel_csv(std::ostream& out, const PanelData& panel) {
  out << "unit,time,outcome";
  for (const auto& name : panel.covariate_names) out << ',' << name;
  out << '\n';
  for (int u = 0; u < panel.n_units(); ++u) {
    for (int t = 0; t < panel.n_periods(); ++t) {
      out << panel.unit_ids[u] << ',' << panel.times[t] << ','
          << format_double(panel.outcome(t, u));
      for (const auto& m : panel.covariate_values) out << ',' << format_double(m(t, u));
      out << '\n';
    }
  }
}

void write_panel_csv_file(const std::string& path, const PanelData& panel) {
  std::ofstream out(path);
  require(out.good(), errc::io_error, "cannot open '" + path + "' for writing");
  write_panel_csv(out, panel);
  require(out.good(), errc::io_error, "write failed for '" + path + "'");
}

}  // namespace scm

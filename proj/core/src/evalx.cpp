#include "scm/evalx.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>
#include <tuple>

#include "scm/augment.hpp"
#include "scm/ife.hpp"
#include "scm/synth.hpp"

namespace scm {

std::string to_string(Method method) {
  switch (method) {
    case Method::kSynthNested: return "SYNTH_NESTED";
    case Method::kSynthRegWeights: return "SYNTH_REGWEIGHTS";
    case Method::kSynthAllCats: return "SYNTH_ALLCATS";
    case Method::kSynthNoCov: return "SYNTH_NOCOV";
    case Method::kAugsynth: return "AUGSYNTH";
    case Method::kAugsynthAllCats: return "AUGSYNTH_ALLCATS";
    case Method::kAugsynthNoCov: return "AUGSYNTH_NOCOV";
    case Method::kAugsynthResid: return "AUGSYNTH_RESID";
    case Method::kIfeCov: return "IFE_COV";
    case Method::kIfeNoCov: return "IFE_NOCOV";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  for (Method m : {Method::kSynthNested, Method::kSynthRegWeights, Method::kSynthAllCats,
                   Method::kSynthNoCov, Method::kAugsynth, Method::kAugsynthAllCats,
                   Method::kAugsynthNoCov, Method::kAugsynthResid, Method::kIfeCov,
                   Method::kIfeNoCov}) {
    if (to_string(m) == s) return m;
  }
  fail(errc::schema_error, "unknown method '" + s + "'");
}

bool method_takes_omission(Method method) {
  switch (method) {
    case Method::kSynthNested:
    case Method::kSynthRegWeights:
    case Method::kAugsynth:
    case Method::kAugsynthResid:
    case Method::kIfeCov:
      return true;
    default:
      return false;
  }
}

std::string to_string(OmissionPolicy policy) {
  switch (policy) {
    case OmissionPolicy::kSweepAll: return "sweep_all";
    case OmissionPolicy::kSingle: return "single";
    case OmissionPolicy::kAllCategories: return "all_categories";
    case OmissionPolicy::kNone: return "none";
  }
  return "?";
}

OmissionPolicy omission_policy_from_string(const std::string& s) {
  if (s == "sweep_all") return OmissionPolicy::kSweepAll;
  if (s == "single") return OmissionPolicy::kSingle;
  if (s == "all_categories") return OmissionPolicy::kAllCategories;
  if (s == "none") return OmissionPolicy::kNone;
  fail(errc::schema_error, "unknown omission policy '" + s + "'");
}

void ExperimentConfig::validate() const {
  require(!scenarios.empty(), errc::invalid_argument, "no scenarios configured");
  require(!methods.empty(), errc::invalid_argument, "no methods configured");
  require(replications >= 1, errc::invalid_argument, "replications must be >= 1");
  require(workers >= 1, errc::invalid_argument, "workers must be >= 1");
  require(ife_rank >= 0, errc::invalid_argument, "ife_rank must be >= 0");
  for (const auto& s : scenarios) s.validate();
}

// --- metrics -------------------------------------------------------------

double rmse_over_reps(const std::vector<EstimateRecord>& records) {
  require(!records.empty(), errc::invalid_argument, "rmse over an empty record set");
  double total = 0.0;
  for (const auto& r : records) total += r.bias * r.bias;
  return std::sqrt(total / static_cast<double>(records.size()));
}

double refcat_sd_ratio(const std::vector<EstimateRecord>& sweep, double outcome_sd) {
  require(sweep.size() >= 2, errc::invalid_argument,
          "refcat ratio needs at least two omission records");
  require(outcome_sd > 0.0, errc::invalid_argument, "outcome SD must be positive");
  double mean = 0.0;
  for (const auto& r : sweep) mean += r.att_mean;
  mean /= static_cast<double>(sweep.size());
  double ss = 0.0;
  for (const auto& r : sweep) ss += (r.att_mean - mean) * (r.att_mean - mean);
  double sd = std::sqrt(ss / static_cast<double>(sweep.size() - 1));
  return sd / outcome_sd;
}

namespace {

// Mid-ranks (1-based); ties share the average of their positions.
std::vector<double> mid_ranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

std::optional<double> spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, errc::invalid_argument,
          "spearman needs two equal-length vectors of size >= 2");
  std::vector<double> rx = mid_ranks(x);
  std::vector<double> ry = mid_ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;  // zero rank variance
  return sxy / std::sqrt(sxx * syy);
}

Eigen::MatrixXd rank_matrix(const std::vector<std::vector<EstimateRecord>>& per_replication,
                            const std::vector<Method>& methods) {
  const int m = static_cast<int>(methods.size());
  require(m >= 1, errc::invalid_argument, "rank matrix needs at least one method");
  require(!per_replication.empty(), errc::invalid_argument, "rank matrix needs replications");
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(m, m);
  for (const auto& rep : per_replication) {
    require(static_cast<int>(rep.size()) == m, errc::invalid_argument,
            "each replication needs one record per method");
    // rank positions by (value, method order); ties break by method order
    std::vector<int> by_rmspe(static_cast<std::size_t>(m)), by_bias(static_cast<std::size_t>(m));
    std::iota(by_rmspe.begin(), by_rmspe.end(), 0);
    std::iota(by_bias.begin(), by_bias.end(), 0);
    std::stable_sort(by_rmspe.begin(), by_rmspe.end(), [&](int a, int b) {
      return rep[static_cast<std::size_t>(a)].rmspe_pre < rep[static_cast<std::size_t>(b)].rmspe_pre;
    });
    std::stable_sort(by_bias.begin(), by_bias.end(), [&](int a, int b) {
      return std::abs(rep[static_cast<std::size_t>(a)].bias) <
             std::abs(rep[static_cast<std::size_t>(b)].bias);
    });
    std::vector<int> bias_rank_of(static_cast<std::size_t>(m));
    for (int pos = 0; pos < m; ++pos) bias_rank_of[static_cast<std::size_t>(by_bias[static_cast<std::size_t>(pos)])] = pos;
    for (int pos = 0; pos < m; ++pos) {
      int method_idx = by_rmspe[static_cast<std::size_t>(pos)];
      counts(pos, bias_rank_of[static_cast<std::size_t>(method_idx)]) += 1.0;
    }
  }
  return counts / static_cast<double>(per_replication.size());
}

// --- harness -------------------------------------------------------------

namespace {

std::uint64_t label_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

int method_index(Method m) { return static_cast<int>(m); }

struct FitTask {
  OmissionChoice omission;
  std::string label;
  bool drop_covariates = false;  // policy kNone: fit on a covariate-free design
};

std::vector<FitTask> method_tasks(Method method, const ExperimentConfig& config,
                                  const CompositionalSpec& spec) {
  if (!spec.has_covariates())
    return {{OmissionChoice::all_categories(), "NONE", true}};
  switch (method) {
    case Method::kSynthAllCats:
    case Method::kAugsynthAllCats:
      return {{OmissionChoice::all_categories(), "ALL", false}};
    case Method::kSynthNoCov:
    case Method::kAugsynthNoCov:
    case Method::kIfeNoCov:
      return {{OmissionChoice::all_categories(), "NONE", true}};
    default:
      break;
  }
  switch (config.omission_policy) {
    case OmissionPolicy::kSweepAll: {
      std::vector<FitTask> tasks;
      for (auto& choice : enumerate_omissions(spec)) {
        std::string label = choice.label(spec);
        tasks.push_back({std::move(choice), std::move(label), false});
      }
      return tasks;
    }
    case OmissionPolicy::kSingle: {
      OmissionChoice choice = config.single_omission.has_value()
                                  ? *config.single_omission
                                  : enumerate_omissions(spec).front();
      std::string label = choice.label(spec);
      return {{std::move(choice), std::move(label), false}};
    }
    case OmissionPolicy::kAllCategories:
      return {{OmissionChoice::all_categories(), "ALL", false}};
    case OmissionPolicy::kNone:
      return {{OmissionChoice::all_categories(), "NONE", true}};
  }
  return {};
}

double panel_outcome_sd(const PanelData& panel) {
  const auto& y = panel.outcome;
  double mean = y.mean();
  double ss = (y.array() - mean).square().sum();
  return std::sqrt(ss / static_cast<double>(y.size() - 1));
}

}  // namespace

EstimateRecord fit_method(const SimulatedDataset& dataset, const CompositionalSpec& spec,
                          Method method, const OmissionChoice& omission,
                          const std::string& omission_label, const ExperimentConfig& config,
                          const std::string& scenario_label, const std::string& outcome_label,
                          int replication) {
  const PanelData& panel = dataset.panel;
  const CompositionalSpec no_covariates;

  NestedOptions nested_opts;
  nested_opts.restarts = config.nested_restarts;
  nested_opts.budget_per_restart = config.nested_budget;
  nested_opts.seed = mix64(config.master_seed ^ static_cast<std::uint64_t>(replication)) ^
                     mix64(static_cast<std::uint64_t>(method_index(method)) ^
                           label_hash(omission_label));

  auto uniform_or_regression = [&](const DesignMatrices& design) {
    try {
      return regression_v_init(design, panel);
    } catch (const Error& e) {
      if (e.code() != errc::singular_design) throw;
      return VWeights::uniform(design.n_features());
    }
  };

  double att_mean = 0.0;
  double rmspe_pre = 0.0;
  switch (method) {
    case Method::kSynthNested: {
      DesignMatrices design = build_design(panel, spec, omission);
      SynthFit fit = nested_fit(panel, design, uniform_or_regression(design), nested_opts);
      att_mean = fit.att_mean;
      rmspe_pre = fit.rmspe_pre;
      break;
    }
    case Method::kSynthRegWeights: {
      DesignMatrices design = build_design(panel, spec, omission);
      SynthFit fit = fixed_v_fit(panel, design, uniform_or_regression(design));
      att_mean = fit.att_mean;
      rmspe_pre = fit.rmspe_pre;
      break;
    }
    case Method::kSynthAllCats: {
      DesignMatrices design = build_design(panel, spec, OmissionChoice::all_categories());
      SynthFit fit =
          nested_fit(panel, design, VWeights::uniform(design.n_features()), nested_opts);
      att_mean = fit.att_mean;
      rmspe_pre = fit.rmspe_pre;
      break;
    }
    case Method::kSynthNoCov: {
      DesignMatrices design =
          build_design(panel, no_covariates, OmissionChoice::all_categories());
      SynthFit fit = fixed_v_fit(panel, design, VWeights::uniform(design.n_features()));
      att_mean = fit.att_mean;
      rmspe_pre = fit.rmspe_pre;
      break;
    }
    case Method::kAugsynth:
    case Method::kAugsynthAllCats:
    case Method::kAugsynthNoCov:
    case Method::kAugsynthResid: {
      AugmentMode mode = method == Method::kAugsynthResid ? AugmentMode::kResidualized
                         : method == Method::kAugsynthNoCov ? AugmentMode::kNoCovariates
                                                            : AugmentMode::kAllCovariates;
      const CompositionalSpec& design_spec =
          method == Method::kAugsynthNoCov ? no_covariates : spec;
      OmissionChoice choice =
          method == Method::kAugsynth || method == Method::kAugsynthResid
              ? omission
              : OmissionChoice::all_categories();
      DesignMatrices design = build_design(panel, design_spec, choice);
      AugmentedFit fit = augmented_fit(panel, design, mode);
      att_mean = fit.att_mean;
      rmspe_pre = fit.rmspe_pre;
      break;
    }
    case Method::kIfeCov: {
      IfeFit fit = ife_fit(panel, spec, omission, IfeCovariates::kAll, config.ife_rank);
      att_mean = fit.att_mean;
      rmspe_pre = fit.rmspe_pre;
      break;
    }
    case Method::kIfeNoCov: {
      IfeFit fit = ife_fit(panel, no_covariates, OmissionChoice::all_categories(),
                           IfeCovariates::kNone, config.ife_rank);
      att_mean = fit.att_mean;
      rmspe_pre = fit.rmspe_pre;
      break;
    }
  }

  EstimateRecord record;
  record.scenario = scenario_label;
  record.outcome_kind = outcome_label;
  record.replication = replication;
  record.method = method;
  record.omission = omission_label;
  record.att_mean = att_mean;
  record.rmspe_pre = rmspe_pre;
  record.bias = att_mean - dataset.true_tau;
  return record;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const CalibrationSet& calib) {
  config.validate();

  ExperimentResult result;
  for (const ScenarioConfig& scenario_template : config.scenarios) {
    ScenarioConfig scenario = scenario_template;
    scenario.seed = config.master_seed;
    const std::string scenario_label = scenario.label();
    const std::string outcome_label = scenario.outcome_label();
    const CompositionalSpec spec =
        scenario.toy_overfit ? CompositionalSpec{} : calib.compositional_spec();

    struct RepOutput {
      std::vector<EstimateRecord> records;
      std::vector<FailureRecord> failures;
      double outcome_sd = 0.0;
    };
    const int reps = config.replications;
    std::vector<RepOutput> outputs(static_cast<std::size_t>(reps));

    auto run_rep = [&](int rep) {
      RepOutput out;
      SimulatedDataset dataset;
      if (scenario.toy_overfit) {
        RngStream rng = RngStream::substream(scenario.seed, static_cast<std::uint64_t>(rep), 0x70);
        dataset = toy_overfit_scenario(scenario.toy_controls, scenario.toy_post_periods, rng);
      } else {
        dataset = simulate_dataset(scenario, calib, static_cast<std::uint64_t>(rep));
      }
      out.outcome_sd = panel_outcome_sd(dataset.panel);
      for (Method method : config.methods) {
        for (const FitTask& task : method_tasks(method, config, spec)) {
          try {
            out.records.push_back(fit_method(dataset,
                                             task.drop_covariates ? CompositionalSpec{} : spec,
                                             method, task.omission, task.label, config,
                                             scenario_label, outcome_label, rep));
          } catch (const Error& e) {
            out.failures.push_back(
                {scenario_label, outcome_label, rep, method, task.label, e.what()});
          }
        }
      }
      return out;
    };

    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&] {
      for (;;) {
        int rep = next.fetch_add(1);
        if (rep >= reps) break;
        try {
          outputs[static_cast<std::size_t>(rep)] = run_rep(rep);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    };
    const int n_workers = std::min(config.workers, reps);
    std::vector<std::thread> pool;
    for (int i = 1; i < n_workers; ++i) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);

    // Ordered collection keeps output byte-identical across worker counts.
    for (int rep = 0; rep < reps; ++rep) {
      auto& out = outputs[static_cast<std::size_t>(rep)];
      result.panel_sds.push_back({scenario_label, outcome_label, rep, out.outcome_sd});
      std::move(out.records.begin(), out.records.end(), std::back_inserter(result.records));
      std::move(out.failures.begin(), out.failures.end(), std::back_inserter(result.failures));
    }
  }

  result.report = build_report(result.records, result.panel_sds, result.failures);
  return result;
}

// --- aggregation ---------------------------------------------------------

namespace {

struct GroupKey {
  std::string scenario;
  std::string outcome_kind;
  Method method;
  bool operator==(const GroupKey& o) const {
    return scenario == o.scenario && outcome_kind == o.outcome_kind && method == o.method;
  }
};

const std::vector<std::pair<std::string, std::vector<Method>>> kFig4Families = {
    {"SYNTH", {Method::kSynthAllCats, Method::kSynthNoCov}},
    {"AUGSYNTH", {Method::kAugsynthAllCats, Method::kAugsynthResid, Method::kAugsynthNoCov}},
    {"IFE", {Method::kIfeCov, Method::kIfeNoCov}},
};

}  // namespace

ExperimentReport build_report(const std::vector<EstimateRecord>& records,
                              const std::vector<PanelSdRecord>& panel_sds,
                              const std::vector<FailureRecord>& failures) {
  ExperimentReport report;

  std::vector<GroupKey> group_order;
  std::vector<std::vector<const EstimateRecord*>> groups;
  auto group_of = [&](const GroupKey& key) -> std::vector<const EstimateRecord*>& {
    for (std::size_t i = 0; i < group_order.size(); ++i)
      if (group_order[i] == key) return groups[i];
    group_order.push_back(key);
    groups.emplace_back();
    return groups.back();
  };
  for (const auto& r : records) group_of({r.scenario, r.outcome_kind, r.method}).push_back(&r);

  std::map<std::pair<std::string, int>, double> sd_by_rep;
  for (const auto& s : panel_sds) sd_by_rep[{s.scenario + "\x1f" + s.outcome_kind, s.replication}] = s.outcome_sd;

  for (std::size_t g = 0; g < group_order.size(); ++g) {
    const GroupKey& key = group_order[g];
    const auto& group = groups[g];

    // per-omission record lists, in first-appearance order
    std::vector<std::string> omission_order;
    std::map<std::string, std::vector<EstimateRecord>> by_omission;
    for (const auto* r : group) {
      if (by_omission.find(r->omission) == by_omission.end())
        omission_order.push_back(r->omission);
      by_omission[r->omission].push_back(*r);
    }

    MethodSummary summary;
    summary.scenario = key.scenario;
    summary.outcome_kind = key.outcome_kind;
    summary.method = key.method;
    summary.n_records = static_cast<int>(group.size());

    double rmse_total = 0.0;
    for (const auto& label : omission_order)
      rmse_total += rmse_over_reps(by_omission[label]);
    summary.rmse = rmse_total / static_cast<double>(omission_order.size());

    double abs_bias = 0.0;
    for (const auto* r : group) abs_bias += std::abs(r->bias);
    summary.mean_abs_bias = abs_bias / static_cast<double>(group.size());

    if (omission_order.size() >= 2) {
      // reference-category dispersion, averaged over replications
      std::map<int, std::vector<EstimateRecord>> by_rep;
      for (const auto* r : group) by_rep[r->replication].push_back(*r);
      double total = 0.0;
      int n = 0;
      for (const auto& [rep, sweep] : by_rep) {
        auto it = sd_by_rep.find({key.scenario + "\x1f" + key.outcome_kind, rep});
        if (it == sd_by_rep.end() || sweep.size() < 2) continue;
        total += refcat_sd_ratio(sweep, it->second);
        ++n;
      }
      if (n > 0) summary.mean_refcat_sd_ratio = total / n;
    }

    // Spearman over replications at the canonical (first) omission
    const auto& canonical = by_omission[omission_order.front()];
    if (canonical.size() >= 2) {
      std::vector<double> imbalance, abs_bias_v;
      for (const auto& r : canonical) {
        imbalance.push_back(r.rmspe_pre);
        abs_bias_v.push_back(std::abs(r.bias));
      }
      summary.spearman = spearman_rho(imbalance, abs_bias_v);
    }

    for (const auto& f : failures)
      if (f.scenario == key.scenario && f.outcome_kind == key.outcome_kind &&
          f.method == key.method)
        ++summary.n_failures;

    report.summaries.push_back(std::move(summary));
  }

  // Rank blocks and fig-4 conditioning need one record per (method, rep):
  // take each method's canonical omission.
  std::vector<std::pair<std::string, std::string>> scenario_order;
  for (const auto& key : group_order) {
    std::pair<std::string, std::string> sk{key.scenario, key.outcome_kind};
    if (std::find(scenario_order.begin(), scenario_order.end(), sk) == scenario_order.end())
      scenario_order.push_back(sk);
  }

  for (const auto& [scenario, outcome_kind] : scenario_order) {
    std::vector<Method> methods;
    std::map<Method, std::map<int, EstimateRecord>> canonical;  // method -> rep -> record
    for (std::size_t g = 0; g < group_order.size(); ++g) {
      const GroupKey& key = group_order[g];
      if (key.scenario != scenario || key.outcome_kind != outcome_kind) continue;
      methods.push_back(key.method);
      std::string first_omission = groups[g].front()->omission;
      for (const auto* r : groups[g])
        if (r->omission == first_omission) canonical[key.method][r->replication] = *r;
    }

    if (methods.size() >= 2) {
      // replications where every method produced a record
      std::vector<std::vector<EstimateRecord>> complete;
      const auto& reps0 = canonical[methods.front()];
      for (const auto& [rep, rec0] : reps0) {
        std::vector<EstimateRecord> row{rec0};
        bool ok = true;
        for (std::size_t m = 1; m < methods.size(); ++m) {
          auto it = canonical[methods[m]].find(rep);
          if (it == canonical[methods[m]].end()) {
            ok = false;
            break;
          }
          row.push_back(it->second);
        }
        if (ok) complete.push_back(std::move(row));
      }
      if (!complete.empty()) {
        RankBlock block;
        block.scenario = scenario;
        block.outcome_kind = outcome_kind;
        block.methods = methods;
        block.matrix = rank_matrix(complete, methods);
        block.n_replications = static_cast<int>(complete.size());
        report.rank_blocks.push_back(std::move(block));
      }
    }

    for (const auto& [family, family_methods] : kFig4Families) {
      bool all_present = true;
      for (Method m : family_methods)
        if (std::find(methods.begin(), methods.end(), m) == methods.end()) all_present = false;
      if (!all_present) continue;

      // split replications by which variant achieved the lowest imbalance
      std::map<Method, std::map<Method, std::pair<double, int>>> buckets;
      for (const auto& [rep, rec0] : canonical[family_methods.front()]) {
        std::vector<EstimateRecord> row;
        bool ok = true;
        for (Method m : family_methods) {
          auto it = canonical[m].find(rep);
          if (it == canonical[m].end()) {
            ok = false;
            break;
          }
          row.push_back(it->second);
        }
        (void)rec0;
        if (!ok) continue;
        std::size_t best = 0;
        for (std::size_t i = 1; i < row.size(); ++i)
          if (row[i].rmspe_pre < row[best].rmspe_pre) best = i;
        for (std::size_t i = 0; i < row.size(); ++i) {
          auto& cell = buckets[family_methods[best]][family_methods[i]];
          cell.first += std::abs(row[i].bias);
          cell.second += 1;
        }
      }
      for (const auto& [best, per_method] : buckets) {
        for (const auto& [method, cell] : per_method) {
          report.conditional_bias.push_back({scenario, outcome_kind, family, best, method,
                                             cell.first / cell.second, cell.second});
        }
      }
    }
  }

  return report;
}

}  // namespace scm

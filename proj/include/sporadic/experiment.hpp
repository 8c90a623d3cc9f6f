#pragma once

// Pipeline orchestration (generate -> SSDL -> refine -> average -> eval) and
// the two experiment drivers.

#include "sporadic/eval.hpp"
#include "sporadic/io.hpp"

#include <chrono>
#include <map>

#ifndef SPORADIC_GIT_DESCRIBE
#define SPORADIC_GIT_DESCRIBE "unknown"
#endif

namespace sporadic {

inline constexpr const char* kGitDescribe = SPORADIC_GIT_DESCRIBE;

struct OracleOptions {
  double tau_support = 0.5;
  Index floor = 10;
  Index samples = 0;  ///< oracle stage uses the first `samples` samples; 0 = all

  void validate() const {
    if (!(tau_support > 0.0 && tau_support < 1.0)) throw ConfigError("oracle.tau_support must lie in (0, 1)");
    if (floor < 0) throw ConfigError("oracle.floor must be nonnegative");
    if (samples < 0) throw ConfigError("oracle.samples must be nonnegative");
  }
};

inline json to_json(const OracleOptions& o) {
  return {{"tau_support", o.tau_support}, {"floor", o.floor}, {"samples", o.samples}};
}

inline OracleOptions oracle_options_from_json(const json& j) {
  constexpr std::string_view where = "oracle";
  detail::check_keys(j, {"tau_support", "floor", "samples"}, where);
  OracleOptions o;
  o.tau_support = detail::get_or<double>(j, "tau_support", o.tau_support, where);
  o.floor = detail::get_or<Index>(j, "floor", o.floor, where);
  o.samples = detail::get_or<Index>(j, "samples", o.samples, where);
  o.validate();
  return o;
}

inline json to_json(const RecoveryOptions& r) {
  return {{"route", route_name(r.route)}, {"memory_budget_bytes", r.memory_budget_bytes}, {"batch", r.batch}};
}

/// jobs is a run-time flag and never read from files.
inline RecoveryOptions recovery_options_from_json(const json& j) {
  constexpr std::string_view where = "recovery";
  detail::check_keys(j, {"route", "memory_budget_bytes", "batch"}, where);
  RecoveryOptions r;
  r.route = route_from_name(detail::get_or<std::string>(j, "route", "automatic", where));
  r.memory_budget_bytes = detail::get_or<double>(j, "memory_budget_bytes", r.memory_budget_bytes, where);
  r.batch = detail::get_or<Index>(j, "batch", r.batch, where);
  if (r.batch < 1) throw ConfigError("recovery.batch must be positive");
  return r;
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct PipelineSpec {
  ProblemConfig problem;
  IntersectConfig intersect;
  OracleOptions oracle;
  RecoveryOptions recovery;
  double correct_threshold = 0.8;  ///< SSDL angular value at which a matched column counts as recovered
  bool save_problem = true;
  bool save_subspaces = false;

  void validate() const {
    problem.validate();
    intersect.validate();
    oracle.validate();
    if (!(correct_threshold > 0.0 && correct_threshold <= 1.0))
      throw ConfigError("correct_threshold must lie in (0, 1]");
    if (intersect.J > problem.N) throw ConfigError("J exceeds N");
  }

  static PipelineSpec defaults_for(const ProblemConfig& p) {
    PipelineSpec s;
    s.problem = p;
    s.intersect = IntersectConfig::defaults_for(p.K, p.s);
    return s;
  }
};

inline json to_json(const PipelineSpec& s) {
  return {{"problem", to_json(s.problem)},
          {"intersect", to_json(s.intersect)},
          {"oracle", to_json(s.oracle)},
          {"recovery", to_json(s.recovery)},
          {"pipeline",
           {{"correct_threshold", s.correct_threshold},
            {"save_problem", s.save_problem},
            {"save_subspaces", s.save_subspaces}}}};
}

/// Reads the problem/intersect/oracle/recovery/pipeline tables of a config file.
inline PipelineSpec pipeline_spec_from_json(const json& root) {
  detail::check_keys(root, {"problem", "intersect", "oracle", "recovery", "pipeline", "experiment", "build"}, "config");
  if (!root.contains("problem")) throw ConfigError("config has no [problem] table");
  PipelineSpec s;
  s.problem = problem_config_from_json(root.at("problem"));
  s.intersect = intersect_config_from_json(root.value("intersect", json::object()), s.problem.K, s.problem.s);
  s.oracle = oracle_options_from_json(root.value("oracle", json::object()));
  s.recovery = recovery_options_from_json(root.value("recovery", json::object()));
  const json p = root.value("pipeline", json::object());
  detail::check_keys(p, {"correct_threshold", "save_problem", "save_subspaces"}, "pipeline");
  s.correct_threshold = detail::get_or<double>(p, "correct_threshold", s.correct_threshold, "pipeline");
  s.save_problem = detail::get_or<bool>(p, "save_problem", s.save_problem, "pipeline");
  s.save_subspaces = detail::get_or<bool>(p, "save_subspaces", s.save_subspaces, "pipeline");
  s.validate();
  return s;
}

/// Per truth column, one row of errors.csv.
struct ColumnErrors {
  Index pi = -1;
  int theta = 0;
  double angular_ssdl = std::numeric_limits<double>::quiet_NaN();
  double ssdl = std::numeric_limits<double>::quiet_NaN();
  double refine = std::numeric_limits<double>::quiet_NaN();
  double average = std::numeric_limits<double>::quiet_NaN();
  double true_average = std::numeric_limits<double>::quiet_NaN();
  bool correct = false;
};

struct StageErrors {
  double ssdl = std::numeric_limits<double>::quiet_NaN();
  double refine = std::numeric_limits<double>::quiet_NaN();
  double average = std::numeric_limits<double>::quiet_NaN();
  double true_average = std::numeric_limits<double>::quiet_NaN();
  Index correct = 0;
};

struct PipelineResult {
  json summary;
  json timings;
  Matching matching;  ///< SSDL candidates against D
  std::vector<ColumnErrors> columns;
  StageErrors errors;  ///< means over correctly recovered columns
  double false_recovery = std::numeric_limits<double>::quiet_NaN();
  double angular = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Runs fn and re-throws any failure with the stage name prefixed, keeping its category.
template <class Fn>
auto staged(const char* stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const NumericalError& e) {
    throw NumericalError(std::string(stage) + ": " + e.what());
  } catch (const DimensionError& e) {
    throw DimensionError(std::string(stage) + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(stage) + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(std::string(stage) + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(std::string(stage) + ": " + e.what());
  }
}

inline double signed_error(const Vector& d, const DictionaryEstimate& e, Index j) {
  if (j < 0 || j >= e.size() || !e.has(j)) return std::numeric_limits<double>::quiet_NaN();
  const auto c = e.columns.col(j);
  return std::min((d - c).norm(), (d + c).norm());
}

inline double nan_mean(const std::vector<double>& v) {
  double acc = 0;
  Index n = 0;
  for (double x : v)
    if (!std::isnan(x)) {
      acc += x;
      ++n;
    }
  return n ? acc / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

/// First n samples of X as their own coefficient matrix.
inline CoefficientMatrix head(const CoefficientMatrix& X, Index n) {
  std::vector<std::vector<Index>> sup;
  std::vector<std::vector<int>> sg;
  for (Index i = 0; i < n; ++i) {
    sup.push_back(X.support(i));
    sg.push_back(X.signs(i));
  }
  return CoefficientMatrix(X.K(), X.s(), std::move(sup), std::move(sg));
}

inline json report_json(const SupportSignReport& r) {
  return {{"precision", r.precision},
          {"recall", r.recall},
          {"sign_rate", r.sign_rate},
          {"exact_fraction", r.exact_fraction},
          {"precision_undefined", r.precision_undefined},
          {"sign_errors", r.sign_errors}};
}

}  // namespace detail

inline void write_provenance(const fs::path& path, const CandidateSet& c) {
  std::vector<std::vector<std::string>> rows;
  for (Index i = 0; i < c.size(); ++i)
    rows.push_back({std::to_string(i), std::to_string(c.block[static_cast<std::size_t>(i)])});
  write_table(path, {"candidate", "block"}, rows);
}

inline json ssdl_report(const CandidateSet& c, const IntersectConfig& cfg) {
  return {{"blocks", cfg.blocks()},
          {"candidates", c.size()},
          {"rejected_blocks", c.rejected_blocks},
          {"duplicates", c.duplicates},
          {"ell", cfg.ell},
          {"J", cfg.J}};
}

inline json oracle_report(const RefinedDictionary& r) {
  json cols = json::array();
  for (std::size_t k = 0; k < r.used.size(); ++k)
    cols.push_back({{"k", k}, {"N_k", r.used[k]}, {"eigengap", r.eigengap[k]}, {"low_confidence", r.low_confidence[k]}});
  const auto low = std::count(r.low_confidence.begin(), r.low_confidence.end(), true);
  return {{"floor", r.floor}, {"low_confidence", low}, {"columns", cols}};
}

inline void write_column_errors(const fs::path& path, const std::vector<ColumnErrors>& cols) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t k = 0; k < cols.size(); ++k) {
    const auto& c = cols[k];
    rows.push_back({std::to_string(k), std::to_string(c.pi), std::to_string(c.theta),
                    format_double(c.angular_ssdl), format_double(c.ssdl), format_double(c.refine),
                    format_double(c.average), format_double(c.true_average), c.correct ? "1" : "0"});
  }
  write_table(path,
              {"k", "pi", "theta", "angular_ssdl", "err_ssdl", "err_refine", "err_average", "err_true_average", "correct"},
              rows);
}

/// Full pipeline. With a nonempty `out`, artifacts are written as each stage
/// finishes, so a failing stage leaves the earlier ones on disk.
inline PipelineResult run_pipeline(const PipelineSpec& spec, const fs::path& out = {}) {
  spec.validate();
  const bool write = !out.empty();
  if (write) fs::create_directories(out);
  const auto& cfg = spec.problem;
  PipelineResult res;
  json timings;
  auto t0 = detail::Clock::now();

  const auto P = detail::staged("generate", [&] { return generate(cfg); });
  timings["generate"] = detail::seconds_since(t0);
  if (write && spec.save_problem) detail::staged("generate", [&] { save_problem(out / "problem", P); });

  // One subspace sweep serves both SSDL (first J) and the oracle stage.
  const Index n_oracle = spec.oracle.samples > 0 ? std::min(spec.oracle.samples, cfg.N) : cfg.N;
  const Index n_sub = std::max(spec.intersect.J, n_oracle);
  t0 = detail::Clock::now();
  SymMatrix sigma;
  std::vector<Subspace> subspaces;
  CandidateSet cand;
  detail::staged("ssdl", [&] {
    sigma = sample_covariance(P.Y);
    std::vector<Index> idx(static_cast<std::size_t>(n_sub));
    std::iota(idx.begin(), idx.end(), Index{0});
    subspaces = recover_subspaces(P.Y, sigma, idx, cfg.s, spec.recovery);
  });
  timings["subspaces"] = detail::seconds_since(t0);
  t0 = detail::Clock::now();
  detail::staged("ssdl", [&] {
    std::vector<Subspace> first(subspaces.begin(), subspaces.begin() + spec.intersect.J);
    cand = ssdl_from_subspaces(first, spec.intersect, spec.recovery.jobs);
  });
  timings["intersect"] = detail::seconds_since(t0);
  const DictionaryEstimate dhat(cand.matrix(cfg.M));
  if (write)
    detail::staged("ssdl", [&] {
      write_csv(out / "Dhat.csv", dhat.columns);
      write_provenance(out / "provenance.csv", cand);
      write_json(out / "ssdl.json", ssdl_report(cand, spec.intersect));
      if (spec.save_subspaces)
        for (Index j = 0; j < spec.intersect.J; ++j) write_subspace(out / "subspaces", j, subspaces[static_cast<std::size_t>(j)]);
    });

  t0 = detail::Clock::now();
  std::vector<Index> oracle_idx(static_cast<std::size_t>(n_oracle));
  std::iota(oracle_idx.begin(), oracle_idx.end(), Index{0});
  SupportEstimate supp;
  RefinedDictionary dtil;
  detail::staged("refine", [&] {
    std::vector<Subspace> os(subspaces.begin(), subspaces.begin() + n_oracle);
    supp = estimate_supports(dhat, os, spec.oracle.tau_support, oracle_idx, spec.recovery.jobs);
    dtil = refine(P.Y, sigma, supp, spec.oracle.floor, spec.recovery.jobs);
  });
  timings["refine"] = detail::seconds_since(t0);
  if (write)
    detail::staged("refine", [&] {
      write_csv(out / "Dtil.csv", dtil.columns.columns);
      write_supports(out / "supports.csv", supp);
      write_json(out / "oracle.json", oracle_report(dtil));
    });

  t0 = detail::Clock::now();
  const auto avg = detail::staged("average", [&] { return average_with_signs(P.Y, supp, dtil.columns); });
  const auto tavg = detail::staged("average", [&] {
    return n_oracle == cfg.N ? true_average(P.Y, P.X) : true_average(P.Y.head(n_oracle), detail::head(P.X, n_oracle));
  });
  timings["average"] = detail::seconds_since(t0);
  if (write) detail::staged("average", [&] { write_csv(out / "Dbar.csv", avg.columns.columns); });

  t0 = detail::Clock::now();
  json summary;
  detail::staged("eval", [&] {
    res.matching = match_columns(P.D, dhat);
    const auto& m = res.matching;
    res.columns.resize(static_cast<std::size_t>(cfg.K));
    for (Index k = 0; k < cfg.K; ++k) {
      auto& c = res.columns[static_cast<std::size_t>(k)];
      const auto uk = static_cast<std::size_t>(k);
      const Vector d = P.D.column(k);
      c.pi = m.pi[uk];
      c.theta = m.theta[uk];
      c.angular_ssdl = m.angular[uk];
      c.ssdl = m.error[uk];
      c.refine = detail::signed_error(d, dtil.columns, c.pi);
      c.average = detail::signed_error(d, avg.columns, c.pi);
      c.true_average = detail::signed_error(d, tavg, k);
      c.correct = c.pi >= 0 && c.angular_ssdl >= spec.correct_threshold;
    }
    std::vector<double> e_s, e_r, e_a, e_t;
    for (const auto& c : res.columns) {
      if (!c.correct) continue;
      ++res.errors.correct;
      e_s.push_back(c.ssdl);
      e_r.push_back(c.refine);
      e_a.push_back(c.average);
      e_t.push_back(c.true_average);
    }
    res.errors.ssdl = detail::nan_mean(e_s);
    res.errors.refine = detail::nan_mean(e_r);
    res.errors.average = detail::nan_mean(e_a);
    res.errors.true_average = detail::nan_mean(e_t);
    res.angular = m.matched_count() ? angular_accuracy(m) : std::numeric_limits<double>::quiet_NaN();

    const std::vector<std::vector<Index>> sup(P.X.supports().begin(), P.X.supports().begin() + spec.intersect.J);
    const auto cover = blocks_cover_all(sup, spec.intersect.ell, spec.intersect.J, cfg.K);
    const auto ledger = RecoveryLedger::from(cover, cand.outcomes);
    res.false_recovery = false_recovery_rate(ledger);

    const auto [rs, rsg] = relabel(supp, avg.signs, m);
    const auto sm = support_sign_metrics(P.X, rs, rsg);

    summary["problem"] = to_json(cfg);
    summary["intersect"] = to_json(spec.intersect);
    summary["oracle"] = to_json(spec.oracle);
    summary["correct_threshold"] = spec.correct_threshold;
    summary["route"] = route_name(choose_route(cfg.M, cfg.N, n_sub, spec.recovery));
    summary["ssdl"] = ssdl_report(cand, spec.intersect);
    summary["ssdl"]["false_recovery_rate"] = res.false_recovery;
    summary["ssdl"]["cover_all"] = cover.all;
    summary["matching"] = {{"matched", m.matched_count()},
                           {"unmatched", m.unmatched.size()},
                           {"surplus", m.surplus.size()},
                           {"angular_accuracy", res.angular},
                           {"correct", res.errors.correct}};
    summary["errors"] = {{"ssdl", res.errors.ssdl},
                         {"refine", res.errors.refine},
                         {"average", res.errors.average},
                         {"true_average", res.errors.true_average}};
    summary["supports"] = detail::report_json(sm);
    summary["supports"]["samples"] = n_oracle;
    summary["low_confidence"] = std::count(dtil.low_confidence.begin(), dtil.low_confidence.end(), true);
  });
  timings["eval"] = detail::seconds_since(t0);
  if (write)
    detail::staged("eval", [&] {
      write_column_errors(out / "errors.csv", res.columns);
      write_json(out / "summary.json", summary);
      write_json(out / "timings.json", timings);
    });
  res.summary = std::move(summary);
  res.timings = std::move(timings);
  return res;
}

inline PipelineResult run_pipeline(const ProblemConfig& p, const IntersectConfig& c, const fs::path& out = {}) {
  auto spec = PipelineSpec::defaults_for(p);
  spec.intersect = c;
  return run_pipeline(spec, out);
}

// ---------------------------------------------------------------------------
// Experiment specs
// ---------------------------------------------------------------------------

/// N as a function of M: fixed, or peg_N (M / peg_M)^power rounded to nearest.
struct NRule {
  enum class Kind { fixed, power } kind = Kind::power;
  double power = 4;
  Index peg_M = 500;
  Index peg_N = 30000;
  Index N = 0;  ///< fixed rule

  Index samples_for(Index M) const {
    if (kind == Kind::fixed) return N;
    return static_cast<Index>(std::llround(static_cast<double>(peg_N) *
                                           std::pow(static_cast<double>(M) / static_cast<double>(peg_M), power)));
  }

  std::string label() const {
    if (kind == Kind::fixed) return "fixed" + std::to_string(N);
    return "M^" + format_double(power);
  }
};

inline json to_json(const NRule& r) {
  if (r.kind == NRule::Kind::fixed) return {{"kind", "fixed"}, {"N", r.N}};
  return {{"kind", "power"}, {"power", r.power}, {"peg_M", r.peg_M}, {"peg_N", r.peg_N}};
}

inline NRule n_rule_from_json(const json& j) {
  constexpr std::string_view where = "N_rules";
  detail::check_keys(j, {"kind", "power", "peg_M", "peg_N", "N"}, where);
  NRule r;
  const auto kind = detail::get_or<std::string>(j, "kind", "power", where);
  if (kind == "fixed") {
    r.kind = NRule::Kind::fixed;
    r.N = detail::get<Index>(j, "N", where);
    if (r.N < 2) throw ConfigError("fixed N rule needs N >= 2");
  } else if (kind == "power") {
    r.power = detail::get<double>(j, "power", where);
    r.peg_M = detail::get_or<Index>(j, "peg_M", r.peg_M, where);
    r.peg_N = detail::get_or<Index>(j, "peg_N", r.peg_N, where);
    if (r.peg_M < 1 || r.peg_N < 1) throw ConfigError("N rule pegs must be positive");
  } else {
    throw ConfigError("unknown N rule kind '" + kind + "'");
  }
  return r;
}

struct ExperimentSpec {
  std::string id = "exp1";           ///< exp1 | exp2 | pipeline
  std::uint64_t seed = 0;
  std::vector<Index> dims;           ///< M schedule
  double K_factor = 2;               ///< K = round(K_factor M) unless K is set
  Index K = 0;
  std::vector<NRule> n_rules;        ///< exp1
  Index s_min = 1;                   ///< exp1 search starts here
  Index s_max = 0;                   ///< exp1 cap; 0 = M - 1
  double angular_threshold = 0.95;
  double frr_threshold = 0.08;
  Index repetitions = 5;
  Index pairs = 25;                  ///< exp1: seeded pairs (2 * pairs subspaces)
  double tau = 0.5;
  Index s = 0;                       ///< exp2 sparsity
  std::vector<Index> sample_sizes;   ///< exp2 N sweep
  Index J = 0;                       ///< exp2 subspaces intersected; 0 = default_J
  double correct_threshold = 0.8;    ///< exp2
  OracleOptions oracle;              ///< exp2

  Index K_for(Index M) const {
    return K > 0 ? K : static_cast<Index>(std::llround(K_factor * static_cast<double>(M)));
  }

  void validate() const {
    if (id != "exp1" && id != "exp2" && id != "pipeline") throw ConfigError("experiment id must be exp1, exp2 or pipeline");
    if (dims.empty()) throw ConfigError("dimension schedule is empty");
    for (Index M : dims)
      if (M < 2 || K_for(M) <= M) throw ConfigError("each M needs 2 <= M < K");
    for (double t : {angular_threshold, frr_threshold, correct_threshold})
      if (!(t > 0.0 && t <= 1.0)) throw ConfigError("thresholds must lie in (0, 1]");
    if (repetitions < 1) throw ConfigError("repetitions must be positive");
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0, 1)");
    oracle.validate();
    if (id == "exp1") {
      if (n_rules.empty()) throw ConfigError("N rule schedule is empty");
      if (pairs < 1) throw ConfigError("pairs must be positive");
      if (s_min < 1) throw ConfigError("s_min must be positive");
      for (Index M : dims)
        for (const auto& r : n_rules)
          if (r.samples_for(M) < 2 * pairs)
            throw ConfigError("N rule " + r.label() + " gives N = " + std::to_string(r.samples_for(M)) +
                              " at M = " + std::to_string(M) + ", fewer than the " + std::to_string(2 * pairs) +
                              " seeded samples");
    }
    if (id == "exp2") {
      if (sample_sizes.empty()) throw ConfigError("sample size schedule is empty");
      if (s < 1) throw ConfigError("exp2 needs s >= 1");
      for (Index M : dims)
        if (s >= M) throw ConfigError("exp2 needs s < M");
    }
  }
};

inline json to_json(const ExperimentSpec& e) {
  json rules = json::array();
  for (const auto& r : e.n_rules) rules.push_back(to_json(r));
  return {{"id", e.id},
          {"seed", e.seed},
          {"dims", e.dims},
          {"K_factor", e.K_factor},
          {"K", e.K},
          {"N_rules", rules},
          {"s_min", e.s_min},
          {"s_max", e.s_max},
          {"angular_threshold", e.angular_threshold},
          {"frr_threshold", e.frr_threshold},
          {"repetitions", e.repetitions},
          {"pairs", e.pairs},
          {"tau", e.tau},
          {"s", e.s},
          {"sample_sizes", e.sample_sizes},
          {"J", e.J},
          {"correct_threshold", e.correct_threshold},
          {"oracle", to_json(e.oracle)}};
}

inline ExperimentSpec experiment_spec_from_json(const json& j) {
  constexpr std::string_view where = "experiment";
  detail::check_keys(j,
                     {"id", "seed", "dims", "K_factor", "K", "N_rules", "s_min", "s_max", "angular_threshold",
                      "frr_threshold", "repetitions", "pairs", "tau", "s", "sample_sizes", "J",
                      "correct_threshold", "oracle"},
                     where);
  ExperimentSpec e;
  e.id = detail::get<std::string>(j, "id", where);
  e.seed = detail::get_or<std::uint64_t>(j, "seed", e.seed, where);
  e.dims = detail::get<std::vector<Index>>(j, "dims", where);
  e.K_factor = detail::get_or<double>(j, "K_factor", e.K_factor, where);
  e.K = detail::get_or<Index>(j, "K", e.K, where);
  if (j.contains("N_rules"))
    for (const auto& r : j.at("N_rules")) e.n_rules.push_back(n_rule_from_json(r));
  e.s_min = detail::get_or<Index>(j, "s_min", e.s_min, where);
  e.s_max = detail::get_or<Index>(j, "s_max", e.s_max, where);
  e.angular_threshold = detail::get_or<double>(j, "angular_threshold", e.angular_threshold, where);
  e.frr_threshold = detail::get_or<double>(j, "frr_threshold", e.frr_threshold, where);
  e.repetitions = detail::get_or<Index>(j, "repetitions", e.repetitions, where);
  e.pairs = detail::get_or<Index>(j, "pairs", e.pairs, where);
  e.tau = detail::get_or<double>(j, "tau", e.tau, where);
  e.s = detail::get_or<Index>(j, "s", e.s, where);
  e.sample_sizes = detail::get_or<std::vector<Index>>(j, "sample_sizes", {}, where);
  e.J = detail::get_or<Index>(j, "J", e.J, where);
  e.correct_threshold = detail::get_or<double>(j, "correct_threshold", e.correct_threshold, where);
  if (j.contains("oracle")) e.oracle = oracle_options_from_json(j.at("oracle"));
  e.validate();
  return e;
}

/// Sidecar contents: the experiment settings as a loadable config plus the build it came from.
inline json experiment_meta(const ExperimentSpec& e) {
  return {{"experiment", to_json(e)}, {"build", {{"git_describe", kGitDescribe}}}};
}

/// Master seed of repetition r at dimension M. Independent of s and N, so
/// every point of a sweep sees the same dictionaries.
inline std::uint64_t repetition_seed(std::uint64_t master, Index M, Index r) {
  return derive_seed(master, static_cast<std::uint64_t>(Stream::experiment), static_cast<std::uint64_t>(M),
                     static_cast<std::uint64_t>(r));
}

using Progress = std::function<void(std::string_view)>;

// ---------------------------------------------------------------------------
// Experiment 1
// ---------------------------------------------------------------------------

struct Exp1Point {
  double accuracy = std::numeric_limits<double>::quiet_NaN();  ///< mean angular over unique blocks that returned
  double frr = 1;
  Index blocks = 0;
  Index scored = 0;  ///< unique blocks that returned a vector
  bool passes = false;
};

/// Seeds index p into samples 2p and 2p+1 and intersects each pair.
inline ProblemConfig seeded_pairs(Index M, Index K, Index s, Index N, Index pairs, std::uint64_t seed) {
  ProblemConfig c{M, K, s, N, seed, {}};
  for (Index p = 0; p < pairs; ++p) c.overlap_seeding.push_back({p % K, 2 * p, 2 * p + 1});
  return c;
}

/// Accuracy and false recovery over `repetitions` dictionaries at one (M, K, N, s).
inline Exp1Point exp1_point(Index M, Index K, Index N, Index s, const ExperimentSpec& spec, int jobs = 1) {
  RecoveryOptions opt;
  opt.jobs = jobs;
  std::vector<double> angles;
  RecoveryLedger ledger;
  const Index n = 2 * spec.pairs;
  for (Index r = 0; r < spec.repetitions; ++r) {
    const auto cfg = seeded_pairs(M, K, s, N, spec.pairs, repetition_seed(spec.seed, M, r));
    const auto P = generate(cfg);
    const auto sigma = sample_covariance(P.Y);
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    const auto S = recover_subspaces(P.Y, sigma, idx, s, opt);
    const std::vector<std::vector<Index>> sup(P.X.supports().begin(), P.X.supports().begin() + n);
    const auto cover = blocks_cover_all(sup, 2, n, K);
    for (Index b = 0; b < spec.pairs; ++b) {
      const auto f = l_fold_intersect_detailed({&S[static_cast<std::size_t>(2 * b)], &S[static_cast<std::size_t>(2 * b + 1)]}, spec.tau);
      const auto& inter = cover.block_intersection[static_cast<std::size_t>(b)];
      const auto t = inter.empty() ? BlockTruth::none : inter.size() == 1 ? BlockTruth::unique : BlockTruth::multiple;
      ledger.add(t, t == BlockTruth::unique ? inter[0] : -1, f.v.has_value());
      if (t == BlockTruth::unique && f.v) angles.push_back(std::abs(f.v->dot(P.D.column(inter[0]))));
    }
  }
  Exp1Point pt;
  pt.blocks = ledger.blocks();
  pt.frr = false_recovery_rate(ledger);
  pt.scored = static_cast<Index>(angles.size());
  if (!angles.empty()) pt.accuracy = detail::nan_mean(angles);
  pt.passes = pt.scored > 0 && pt.accuracy >= spec.angular_threshold && pt.frr <= spec.frr_threshold;
  return pt;
}

struct Exp1Row {
  Index M = 0;
  std::string rule;
  Index N = 0;
  Index s_max = 0;
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  double frr = std::numeric_limits<double>::quiet_NaN();
  bool none_passed = false;
  Index evaluations = 0;
};

/// Largest s in [s_min, cap] with pass(s), for a pass that holds up to some
/// point and fails beyond it: doubling from s_min, then bisection between the
/// last pass and the first failure. 0 when pass(s_min) fails.
template <class Pass>
Index largest_passing(Index s_min, Index cap, Pass&& pass) {
  if (s_min < 1 || cap < s_min) throw ConfigError("search range must satisfy 1 <= s_min <= cap");
  Index lo = 0, hi = 0;  // last pass, first failure
  for (Index s = s_min;; s = std::min(2 * s, cap)) {
    if (!pass(s)) {
      hi = s;
      break;
    }
    lo = s;
    if (s == cap) return lo;
  }
  if (lo == 0) return 0;
  while (hi - lo > 1) {
    const Index mid = lo + (hi - lo) / 2;
    if (pass(mid)) lo = mid;
    else hi = mid;
  }
  return lo;
}

/// Largest s passing both thresholds at one (M, N rule).
inline Exp1Row exp1_search(Index M, const NRule& rule, const ExperimentSpec& spec, int jobs = 1,
                           const Progress& progress = {}) {
  const Index K = spec.K_for(M);
  const Index N = rule.samples_for(M);
  const Index cap = spec.s_max > 0 ? std::min(spec.s_max, M - 1) : M - 1;
  const Index start = std::min(spec.s_min, cap);
  std::map<Index, Exp1Point> seen;
  auto eval = [&](Index s) -> const Exp1Point& {
    auto it = seen.find(s);
    if (it != seen.end()) return it->second;
    const auto pt = exp1_point(M, K, N, s, spec, jobs);
    if (progress)
      progress("exp1 M=" + std::to_string(M) + " " + rule.label() + " N=" + std::to_string(N) + " s=" +
               std::to_string(s) + " accuracy=" + format_double(pt.accuracy) + " frr=" + format_double(pt.frr) +
               (pt.passes ? " pass" : " fail"));
    return seen.emplace(s, pt).first->second;
  };

  Exp1Row row{M, rule.label(), N};
  row.s_max = largest_passing(start, cap, [&](Index s) { return eval(s).passes; });
  row.none_passed = row.s_max == 0;
  const auto& pt = seen.at(row.none_passed ? start : row.s_max);
  row.accuracy = pt.accuracy;
  row.frr = pt.frr;
  row.evaluations = static_cast<Index>(seen.size());
  return row;
}

inline std::vector<Exp1Row> run_exp1(const ExperimentSpec& spec, int jobs = 1, const Progress& progress = {}) {
  spec.validate();
  if (spec.id != "exp1") throw ConfigError("run_exp1 needs an exp1 spec");
  std::vector<Exp1Row> rows;
  for (Index M : spec.dims)
    for (const auto& r : spec.n_rules) rows.push_back(exp1_search(M, r, spec, jobs, progress));
  return rows;
}

inline void write_exp1(const fs::path& path, const std::vector<Exp1Row>& rows, const ExperimentSpec& spec) {
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows)
    cells.push_back({std::to_string(r.M), r.rule, std::to_string(r.N), std::to_string(r.s_max), format_double(r.accuracy),
                     format_double(r.frr), r.none_passed ? "none_passed" : ""});
  write_table(path, {"M", "N_rule", "N", "s_max", "accuracy", "frr", "flag"}, cells);
  auto meta = path;
  meta.replace_extension(".meta.json");
  write_json(meta, experiment_meta(spec));
}

// ---------------------------------------------------------------------------
// Experiment 2
// ---------------------------------------------------------------------------

struct Exp2Row {
  Index M = 0;
  Index K = 0;
  Index N = 0;
  StageErrors errors;  ///< means over repetitions of per-run means
  double recovered = 0;  ///< mean count of correctly recovered columns
};

inline PipelineSpec exp2_pipeline(const ExperimentSpec& spec, Index M, Index N, Index r, int jobs) {
  const Index K = spec.K_for(M);
  PipelineSpec p;
  p.problem = {M, K, spec.s, N, repetition_seed(spec.seed, M, r), {}};
  p.intersect = IntersectConfig::defaults_for(K, spec.s);
  p.intersect.tau = spec.tau;
  if (spec.J > 0) p.intersect.J = spec.J;
  if (p.intersect.J > N) p.intersect.J = (N / p.intersect.ell) * p.intersect.ell;
  p.oracle = spec.oracle;
  p.correct_threshold = spec.correct_threshold;
  p.recovery.jobs = jobs;
  p.save_problem = false;
  return p;
}

inline std::vector<Exp2Row> run_exp2(const ExperimentSpec& spec, int jobs = 1, const Progress& progress = {}) {
  spec.validate();
  if (spec.id != "exp2") throw ConfigError("run_exp2 needs an exp2 spec");
  std::vector<Exp2Row> rows;
  for (Index M : spec.dims)
    for (Index N : spec.sample_sizes) {
      Exp2Row row{M, spec.K_for(M), N};
      std::vector<double> es, er, ea, et;
      for (Index r = 0; r < spec.repetitions; ++r) {
        const auto res = run_pipeline(exp2_pipeline(spec, M, N, r, jobs));
        es.push_back(res.errors.ssdl);
        er.push_back(res.errors.refine);
        ea.push_back(res.errors.average);
        et.push_back(res.errors.true_average);
        row.recovered += static_cast<double>(res.errors.correct);
        if (progress)
          progress("exp2 M=" + std::to_string(M) + " N=" + std::to_string(N) + " rep=" + std::to_string(r) +
                   " recovered=" + std::to_string(res.errors.correct) + " ssdl=" + format_double(res.errors.ssdl) +
                   " refine=" + format_double(res.errors.refine) + " average=" + format_double(res.errors.average));
      }
      row.errors = {detail::nan_mean(es), detail::nan_mean(er), detail::nan_mean(ea), detail::nan_mean(et)};
      row.recovered /= static_cast<double>(spec.repetitions);
      rows.push_back(row);
    }
  return rows;
}

inline void write_exp2(const fs::path& path, const std::vector<Exp2Row>& rows, const ExperimentSpec& spec) {
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows)
    cells.push_back({std::to_string(r.M), std::to_string(r.K), std::to_string(r.N), format_double(r.errors.ssdl),
                     format_double(r.errors.refine), format_double(r.errors.average),
                     format_double(r.errors.true_average), format_double(r.recovered)});
  write_table(path, {"M", "K", "N", "err_ssdl", "err_refine", "err_average", "err_true_average", "recovered"}, cells);
  auto meta = path;
  meta.replace_extension(".meta.json");
  write_json(meta, experiment_meta(spec));
}

}  // namespace sporadic

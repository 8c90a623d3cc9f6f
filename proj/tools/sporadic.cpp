// sporadic command-line front end.

#include "sporadic/sporadic.hpp"

#include <CLI11.hpp>

using namespace sporadic;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::string out = ".";
};

json config_json(const Globals& g) {
  if (g.config.empty()) throw ConfigError("--config is required");
  return load_config(g.config);
}

PipelineSpec pipeline_spec(const Globals& g) {
  auto root = config_json(g);
  if (g.seed && root.contains("problem")) root["problem"]["seed"] = *g.seed;
  auto spec = pipeline_spec_from_json(root);
  spec.recovery.jobs = g.jobs;
  return spec;
}

ExperimentSpec experiment_spec(const Globals& g) {
  auto root = config_json(g);
  if (!root.contains("experiment")) throw ConfigError("config has no [experiment] table");
  if (g.seed) root["experiment"]["seed"] = *g.seed;
  return experiment_spec_from_json(root.at("experiment"));
}

/// Intersection settings for a loaded problem: [intersect] of --config when
/// given, defaults otherwise.
IntersectConfig intersect_for(const Globals& g, const ProblemConfig& p) {
  json t = json::object();
  if (!g.config.empty()) t = load_config(g.config).value("intersect", json::object());
  return intersect_config_from_json(t, p.K, p.s);
}

OracleOptions oracle_for(const Globals& g) {
  if (g.config.empty()) return {};
  return oracle_options_from_json(load_config(g.config).value("oracle", json::object()));
}

RecoveryOptions recovery_for(const Globals& g) {
  RecoveryOptions r;
  if (!g.config.empty()) r = recovery_options_from_json(load_config(g.config).value("recovery", json::object()));
  r.jobs = g.jobs;
  return r;
}

void log(std::string_view msg) { std::clog << msg << '\n'; }

int cmd_gen(const Globals& g) {
  auto root = config_json(g);
  if (!root.contains("problem")) throw ConfigError("config has no [problem] table");
  if (g.seed) root["problem"]["seed"] = *g.seed;
  const auto cfg = problem_config_from_json(root.at("problem"));
  save_problem(g.out, generate(cfg));
  return 0;
}

int cmd_recover(const Globals& g, const std::string& problem_dir, std::optional<Index> j, bool all) {
  if (j.has_value() == all) throw ConfigError("recover needs exactly one of --j or --all");
  const auto P = load_problem(problem_dir);
  const auto sigma = sample_covariance(P.Y);
  std::vector<Index> idx;
  if (j) {
    idx.push_back(*j);
  } else {
    idx.resize(static_cast<std::size_t>(intersect_for(g, P.config).J));
    std::iota(idx.begin(), idx.end(), Index{0});
  }
  const auto S = recover_subspaces(P.Y, sigma, idx, P.config.s, recovery_for(g));
  for (std::size_t t = 0; t < idx.size(); ++t) write_subspace(g.out, idx[t], S[t]);
  return 0;
}

int cmd_ssdl(const Globals& g, const std::string& problem_dir) {
  const fs::path out = g.out;
  ProblemInstance P;
  IntersectConfig icfg;
  if (problem_dir.empty()) {
    const auto spec = pipeline_spec(g);
    P = generate(spec.problem);
    icfg = spec.intersect;
  } else {
    P = load_problem(problem_dir);
    icfg = intersect_for(g, P.config);
  }
  save_problem(out / "problem", P);
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = ssdl(P.Y, P.config.s, icfg, recovery_for(g));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_csv(out / "Dhat.csv", r.candidates.matrix(P.config.M));
  write_provenance(out / "provenance.csv", r.candidates);
  auto report = ssdl_report(r.candidates, icfg);
  report["seconds"] = secs;
  write_json(out / "ssdl.json", report);
  return 0;
}

/// Subspaces for the oracle samples of a problem, plus Σ̂.
std::pair<SymMatrix, std::vector<Subspace>> oracle_subspaces(const Globals& g, const ProblemInstance& P,
                                                             const OracleOptions& o, std::vector<Index>& idx) {
  const Index n = o.samples > 0 ? std::min(o.samples, P.config.N) : P.config.N;
  idx.resize(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  auto sigma = sample_covariance(P.Y);
  auto S = recover_subspaces(P.Y, sigma, idx, P.config.s, recovery_for(g));
  return {std::move(sigma), std::move(S)};
}

int cmd_refine(const Globals& g, const std::string& in_dir) {
  const fs::path in = in_dir.empty() ? fs::path(g.out) : fs::path(in_dir);
  const auto P = load_problem(in / "problem");
  const DictionaryEstimate dhat(read_csv(in / "Dhat.csv"));
  if (dhat.dim() != P.config.M) throw DimensionError("Dhat.csv does not match the problem dimension");
  const auto o = oracle_for(g);
  std::vector<Index> idx;
  const auto [sigma, S] = oracle_subspaces(g, P, o, idx);
  const auto supp = estimate_supports(dhat, S, o.tau_support, idx, g.jobs);
  const auto r = refine(P.Y, sigma, supp, o.floor, g.jobs);
  const fs::path out = g.out;
  write_csv(out / "Dtil.csv", r.columns.columns);
  write_supports(out / "supports.csv", supp);
  write_json(out / "refine.json", oracle_report(r));
  return 0;
}

int cmd_average(const Globals& g, const std::string& in_dir) {
  const fs::path in = in_dir.empty() ? fs::path(g.out) : fs::path(in_dir);
  const auto P = load_problem(in / "problem");
  const DictionaryEstimate dtil(read_csv(in / "Dtil.csv"));
  if (dtil.dim() != P.config.M) throw DimensionError("Dtil.csv does not match the problem dimension");
  const auto supp = read_supports(in / "supports.csv", dtil.size());
  if (!supp.samples.empty() && supp.samples.back() >= P.config.N)
    throw DimensionError("supports.csv lists more samples than the problem has");
  const auto r = average_with_signs(P.Y, supp, dtil);
  const fs::path out = g.out;
  write_csv(out / "Dbar.csv", r.columns.columns);
  json cols = json::array();
  for (Index k = 0; k < supp.K; ++k) cols.push_back({{"k", k}, {"N_k", supp.count(k)}, {"present", r.columns.has(k)}});
  write_json(out / "average.json", {{"columns", cols}, {"present", r.columns.present_count()}});
  return 0;
}

int cmd_eval(const Globals& g, const std::string& truth, const std::string& est, bool greedy) {
  const auto P = load_problem(truth);
  const DictionaryEstimate e(read_csv(est));
  if (e.size() > 0 && e.dim() != P.config.M) throw DimensionError("estimate does not match the truth dimension");
  const auto m = match_columns(P.D, e, greedy ? MatchMode::greedy : MatchMode::exact);
  const fs::path out = g.out;
  std::vector<std::vector<std::string>> rows;
  for (Index k = 0; k < P.config.K; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    rows.push_back({std::to_string(k), std::to_string(m.pi[uk]), std::to_string(m.theta[uk]),
                    format_double(m.angular[uk]), format_double(m.error[uk])});
  }
  write_table(out / "column_errors.csv", {"k", "pi", "theta", "angular", "error"}, rows);
  json j = {{"matched", m.matched_count()},
            {"unmatched", m.unmatched.size()},
            {"surplus", m.surplus.size()},
            {"total_cost", m.total_cost},
            {"mode", greedy ? "greedy" : "exact"},
            {"angular_accuracy", m.matched_count() ? angular_accuracy(m) : std::numeric_limits<double>::quiet_NaN()},
            {"mean_error", mean_column_error(m)}};
  write_json(out / "metrics.json", j);
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_exp1(const Globals& g) {
  const auto spec = experiment_spec(g);
  const auto rows = run_exp1(spec, g.jobs, log);
  write_exp1(fs::path(g.out) / "exp1.csv", rows, spec);
  return 0;
}

int cmd_exp2(const Globals& g) {
  const auto spec = experiment_spec(g);
  const auto rows = run_exp2(spec, g.jobs, log);
  write_exp2(fs::path(g.out) / "exp2.csv", rows, spec);
  return 0;
}

int cmd_pipeline(const Globals& g) {
  const auto r = run_pipeline(pipeline_spec(g), g.out);
  std::cout << r.summary.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse dictionary learning from spanning subspaces"};
  app.set_version_flag("--version", std::string(kGitDescribe));
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "TOML or JSON config file");
  auto* seed_opt = app.add_option("--seed", seed, "override the master seed");
  app.add_option("--jobs", g.jobs, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "output directory");

  auto* gen = app.add_subcommand("gen", "generate a problem instance");
  auto* rec = app.add_subcommand("recover", "recover spanning subspaces of a problem");
  std::string problem_dir, in_dir, truth, est;
  Index j = -1;
  bool all = false, greedy = false;
  rec->add_option("--problem", problem_dir, "problem directory")->required();
  auto* j_opt = rec->add_option("--j", j, "sample index");
  rec->add_flag("--all", all, "the first J samples");
  auto* ss = app.add_subcommand("ssdl", "subspace intersection");
  ss->add_option("--problem", problem_dir, "load this problem instead of generating one");
  auto* ref = app.add_subcommand("refine", "oracle refinement from an ssdl directory");
  ref->add_option("--in", in_dir, "ssdl output directory (default: --out)");
  auto* avg = app.add_subcommand("average", "oracle averaging from a refine directory");
  avg->add_option("--in", in_dir, "refine output directory (default: --out)");
  auto* ev = app.add_subcommand("eval", "match an estimate against a problem's dictionary");
  ev->add_option("--truth", truth, "problem directory")->required();
  ev->add_option("--est", est, "estimate CSV (M x K')")->required();
  ev->add_flag("--greedy", greedy, "greedy instead of optimal matching");
  auto* e1 = app.add_subcommand("exp1", "maximum tolerated sparsity");
  auto* e2 = app.add_subcommand("exp2", "per-stage error against N");
  auto* pl = app.add_subcommand("pipeline", "generate, ssdl, refine, average and eval in one run");
  for (auto* sub : {gen, rec, ss, ref, avg, ev, e1, e2, pl}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  if (seed_opt->count()) g.seed = seed;

  try {
    if (*gen) return cmd_gen(g);
    if (*rec) return cmd_recover(g, problem_dir, j_opt->count() ? std::optional<Index>(j) : std::nullopt, all);
    if (*ss) return cmd_ssdl(g, problem_dir);
    if (*ref) return cmd_refine(g, in_dir);
    if (*avg) return cmd_average(g, in_dir);
    if (*ev) return cmd_eval(g, truth, est, greedy);
    if (*e1) return cmd_exp1(g);
    if (*e2) return cmd_exp2(g);
    if (*pl) return cmd_pipeline(g);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

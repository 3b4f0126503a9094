#include "mfg/cli_runner.hpp"

#include <chrono>
#include <filesystem>
#include <iostream>

#include "mfg/json_io.hpp"
#include "mfg/lq.hpp"
#include "mfg/parallel.hpp"

namespace mfg {

namespace {

namespace fs = std::filesystem;

// --- schema ------------------------------------------------------------------

// key -> allowed subkeys; leaves validated by type tag.
struct SchemaError : std::runtime_error {
  explicit SchemaError(const std::string& what) : std::runtime_error(what) {}
};

void require_keys(const Json& obj, const std::string& where,
                  const std::vector<std::string>& allowed) {
  if (!obj.is_object()) throw SchemaError(where + ": expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw SchemaError("unknown key at " + where + "/" + it.key());
  }
}

void validate_config(const Json& cfg, bool allow_sweep = true) {
  require_keys(cfg, "",
               {"command", "seed", "threads", "out", "model", "terminal",
                "measure", "grid", "solver", "certify", "search", "master",
                "probe", "lipschitz", "propagate", "lq", "sweep"});
  if (!cfg.contains("command") || !cfg.at("command").is_string())
    throw SchemaError("missing or non-string key /command");
  static const std::vector<std::string> commands{
      "certify", "search-violation", "solve-mfg", "master-eval",
      "dmu",     "lipschitz",        "propagate", "lq-oracle"};
  std::string cmd = cfg.at("command").get<std::string>();
  if (std::find(commands.begin(), commands.end(), cmd) == commands.end())
    throw SchemaError("unknown command at /command: " + cmd);
  if (cfg.contains("model")) {
    require_keys(cfg.at("model"), "/model",
                 {"name", "q", "c", "dim", "R0", "C0", "alpha", "kappa",
                  "coupling"});
    if (cfg.at("model").contains("coupling"))
      require_keys(cfg.at("model").at("coupling"), "/model/coupling",
                   {"name", "q", "c", "g", "dim"});
  }
  if (cfg.contains("terminal"))
    require_keys(cfg.at("terminal"), "/terminal", {"name", "g", "dim", "q", "c"});
  if (cfg.contains("measure"))
    require_keys(cfg.at("measure"), "/measure",
                 {"kind", "n", "mean", "sd", "dim", "atoms", "weights"});
  if (cfg.contains("grid"))
    require_keys(cfg.at("grid"), "/grid",
                 {"nx", "nt", "t0", "T", "drift_bound"});
  if (cfg.contains("solver"))
    require_keys(cfg.at("solver"), "/solver",
                 {"damping", "tol", "max_iter", "partition_len", "scheme"});
  if (cfg.contains("certify"))
    require_keys(cfg.at("certify"), "/certify",
                 {"trials", "tol", "min_atoms", "max_atoms", "target"});
  if (cfg.contains("search"))
    require_keys(cfg.at("search"), "/search",
                 {"steps", "atoms", "restarts", "tol"});
  if (cfg.contains("master"))
    require_keys(cfg.at("master"), "/master", {"eps", "richardson"});
  if (cfg.contains("probe"))
    require_keys(cfg.at("probe"), "/probe", {"t0", "x", "atom"});
  if (cfg.contains("lipschitz"))
    require_keys(cfg.at("lipschitz"), "/lipschitz", {"metric", "trials"});
  if (cfg.contains("propagate"))
    require_keys(cfg.at("propagate"), "/propagate",
                 {"particles", "checkpoints", "atoms", "substeps", "mono_tol",
                  "terminal_tol", "rate_tol"});
  if (cfg.contains("lq"))
    require_keys(cfg.at("lq"), "/lq", {"q", "c", "g", "T", "m0", "ode_steps"});
  if (cfg.contains("sweep")) {
    if (!allow_sweep) throw SchemaError("nested sweep at /sweep");
    if (!cfg.at("sweep").is_array())
      throw SchemaError("/sweep must be an array of override objects");
  }
}

// --- config readers -------------------------------------------------------------

double num(const Json& obj, const std::string& key, double fallback) {
  return obj.contains(key) ? obj.at(key).get<double>() : fallback;
}

std::map<std::string, double> number_params(const Json& obj) {
  std::map<std::string, double> out;
  if (!obj.is_object()) return out;
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (it.value().is_number()) out[it.key()] = it.value().get<double>();
  return out;
}

HamiltonianModel model_from(const Json& cfg) {
  Json model = cfg.value("model", Json{{"name", "lq"}});
  if (model.value("name", "lq") == "separable" && model.contains("coupling")) {
    Json coupling = model.at("coupling");
    return separable_hamiltonian(make_terminal(
        coupling.value("name", "lq-coupling"), number_params(coupling)));
  }
  return make_hamiltonian(model.value("name", "lq"), number_params(model));
}

TerminalCostModel terminal_from(const Json& cfg) {
  Json term = cfg.value("terminal", Json{{"name", "quadratic"}});
  return make_terminal(term.value("name", "quadratic"), number_params(term));
}

DiscreteMeasure measure_from(const Json& cfg, std::uint64_t seed) {
  Json m = cfg.value("measure",
                     Json{{"kind", "gaussian"}, {"n", 64}, {"mean", 1.0},
                          {"sd", 0.5}});
  std::string kind = m.value("kind", "gaussian");
  if (kind == "gaussian")
    return sample_gaussian1d(static_cast<int>(num(m, "n", 64)),
                             num(m, "mean", 1.0), num(m, "sd", 0.5), seed);
  if (kind == "explicit") return measure_from_json(m);
  throw SchemaError("unknown measure kind at /measure/kind: " + kind);
}

GradientScheme scheme_from(const Json& solver) {
  std::string s = solver.value("scheme", "uw2");
  if (s == "uw2") return GradientScheme::UpwindSecondOrder;
  if (s == "uw1") return GradientScheme::MonotoneFirstOrder;
  if (s == "central") return GradientScheme::Central;
  throw SchemaError("unknown scheme at /solver/scheme: " + s);
}

MasterEvalConfig master_config_from(const Json& cfg, int threads) {
  Json grid = cfg.value("grid", Json::object());
  Json solver = cfg.value("solver", Json::object());
  Json master = cfg.value("master", Json::object());
  MasterEvalConfig out;
  out.horizon = num(grid, "T", 1.0);
  out.nx = static_cast<int>(num(grid, "nx", 120));
  out.nt = static_cast<int>(num(grid, "nt", 120));
  out.drift_bound = num(grid, "drift_bound", 3.0);
  out.damping = num(solver, "damping", 0.5);
  out.tol = num(solver, "tol", 1e-10);
  out.max_iter = static_cast<int>(num(solver, "max_iter", 300));
  out.scheme = scheme_from(solver);
  out.eps = num(master, "eps", 0.0);
  out.richardson = !master.contains("richardson") ||
                   master.at("richardson").get<bool>();
  out.threads = threads;
  return out;
}

// --- run context -------------------------------------------------------------------

struct RunContext {
  Json config;
  fs::path out_dir;
  std::uint64_t seed = 0;
  int threads = 1;
};

int dispatch(const RunContext& ctx);

int run_single(Json config, fs::path out_dir, std::uint64_t seed, int threads) {
  RunContext ctx;
  ctx.config = std::move(config);
  ctx.out_dir = std::move(out_dir);
  ctx.seed = seed;
  ctx.threads = threads;
  fs::create_directories(ctx.out_dir);

  auto started = std::chrono::steady_clock::now();
  int code = dispatch(ctx);
  double wall = std::chrono::duration<double>(
                    std::chrono::steady_clock::now() - started)
                    .count();
  Json manifest{{"config_hash", json_hash(ctx.config)},
                {"command", ctx.config.at("command").get<std::string>()},
                {"seed", seed},
                {"versions", Json{{"toolkit", "1.0"}, {"report_schema", 1}}},
                {"exit_code", code},
                {"wall_time_sec", wall}};
  write_json(manifest, (ctx.out_dir / "manifest.json").string());
  return code;
}

// --- subcommands ---------------------------------------------------------------------

int cmd_certify(const RunContext& ctx) {
  Json c = ctx.config.value("certify", Json::object());
  CertifyOptions opt;
  opt.trials = static_cast<int>(num(c, "trials", 500));
  opt.tol = num(c, "tol", 1e-8);
  opt.min_atoms = static_cast<int>(num(c, "min_atoms", 2));
  opt.max_atoms = static_cast<int>(num(c, "max_atoms", 32));
  opt.seed = ctx.seed;
  opt.threads = ctx.threads;
  std::string target = c.value("target", "hamiltonian");
  MonotonicityReport report =
      target == "terminal" ? certify(terminal_from(ctx.config), opt)
                           : certify(model_from(ctx.config), opt);
  write_json(report_to_json(report), (ctx.out_dir / "report.json").string());
  return report.pass ? 0 : 2;
}

int cmd_search(const RunContext& ctx) {
  Json s = ctx.config.value("search", Json::object());
  SearchOptions opt;
  opt.steps = static_cast<int>(num(s, "steps", 200));
  opt.atoms = static_cast<int>(num(s, "atoms", 6));
  opt.restarts = static_cast<int>(num(s, "restarts", 4));
  opt.tol = num(s, "tol", 1e-8);
  opt.seed = ctx.seed;
  MonotonicityReport report = search_violation(model_from(ctx.config), opt);
  write_json(report_to_json(report), (ctx.out_dir / "report.json").string());
  return report.pass ? 0 : 2;
}

int cmd_solve_mfg(const RunContext& ctx) {
  HamiltonianModel h = model_from(ctx.config);
  TerminalCostModel g = terminal_from(ctx.config);
  DiscreteMeasure mu0 = measure_from(ctx.config, ctx.seed);
  Json grid_cfg = ctx.config.value("grid", Json::object());
  Json solver_cfg = ctx.config.value("solver", Json::object());
  Grid1D grid = Grid1D::for_support(
      mu0, num(grid_cfg, "drift_bound", 3.0), num(grid_cfg, "t0", 0.0),
      num(grid_cfg, "T", 1.0), static_cast<int>(num(grid_cfg, "nx", 200)),
      static_cast<int>(num(grid_cfg, "nt", 200)));
  MfgOptions opt;
  opt.damping = num(solver_cfg, "damping", 0.5);
  opt.tol = num(solver_cfg, "tol", 1e-9);
  opt.max_iter = static_cast<int>(num(solver_cfg, "max_iter", 200));
  opt.partition_len = num(solver_cfg, "partition_len", 0.0);
  opt.scheme = scheme_from(solver_cfg);
  MfgSolution sol = solve_mfg(h, g, mu0, grid, opt);
  dump_solution_csv(sol, (ctx.out_dir / "solution.csv").string());

  Json report{{"iterations", sol.iterations},
              {"residual", sol.residual_history.back()},
              {"partition", sol.partition},
              {"mu0_projected", sol.mu0_projected},
              {"grid", Json{{"x_min", grid.x_min},
                            {"x_max", grid.x_max},
                            {"nx", grid.nx},
                            {"nt", grid.nt},
                            {"cfl_record", grid.cfl_record()}}}};
  double worst_mass = 0.0;
  for (int n = 0; n <= grid.nt; ++n)
    worst_mass = std::max(worst_mass, std::abs(sol.mass(n) - 1.0));
  report["max_mass_drift"] = worst_mass;

  // error-vs-oracle summary when the model is the LQ benchmark
  Json model = ctx.config.value("model", Json{{"name", "lq"}});
  if (model.value("name", "lq") == "lq" &&
      ctx.config.value("terminal", Json{{"name", "quadratic"}})
              .value("name", "quadratic") == "quadratic") {
    LqSpec spec;
    spec.q = num(model, "q", 1.0);
    spec.c = num(model, "c", 0.5);
    spec.g = num(ctx.config.value("terminal", Json::object()), "g", 1.0);
    spec.T = num(grid_cfg, "T", 1.0);
    spec.m0 = mu0.mean()(0);
    auto oracle = solve_lq(spec);
    double sup_err = 0.0, mean_err = 0.0;
    for (int n = 0; n <= grid.nt; ++n) {
      double t = grid.time(n);
      double m = 0.0;
      for (int j = 0; j < grid.nx; ++j) m += grid.node(j) * sol.rho[n](j) * grid.dx();
      mean_err = std::max(mean_err, std::abs(m - spec.m0 * oracle.dm_at(t)));
      for (int j = 0; j < grid.nx; ++j) {
        double x = grid.node(j);
        if (x < grid.core_lo || x > grid.core_hi) continue;
        sup_err = std::max(sup_err,
                           std::abs(sol.u[n](j) - oracle_V(oracle, t, x)));
      }
    }
    report["oracle_comparison"] =
        Json{{"sup_error_core_window", sup_err},
             {"mean_path_error", mean_err},
             {"core_window", Json{{"lo", grid.core_lo}, {"hi", grid.core_hi}}}};
  }
  write_json(report, (ctx.out_dir / "report.json").string());
  return 0;
}

int cmd_master_eval(const RunContext& ctx) {
  MasterSurface master(model_from(ctx.config), terminal_from(ctx.config),
                       master_config_from(ctx.config, ctx.threads));
  DiscreteMeasure mu = measure_from(ctx.config, ctx.seed);
  Json probe = ctx.config.value("probe", Json::object());
  double t0 = num(probe, "t0", 0.0);
  double x = num(probe, "x", 0.0);
  double value = master.eval_V(t0, x, mu);
  write_json(Json{{"t0", t0}, {"x", x}, {"value", value},
                  {"measure", measure_to_json(mu)}},
             (ctx.out_dir / "report.json").string());
  return 0;
}

int cmd_dmu(const RunContext& ctx) {
  MasterSurface master(model_from(ctx.config), terminal_from(ctx.config),
                       master_config_from(ctx.config, ctx.threads));
  DiscreteMeasure mu = measure_from(ctx.config, ctx.seed);
  Json probe = ctx.config.value("probe", Json::object());
  double t0 = num(probe, "t0", 0.0);
  double x = num(probe, "x", 0.0);
  Grid1D grid = master.make_grid(t0, mu);
  MfgSolution base = master.solve_on(grid, mu);
  std::vector<std::optional<MasterSurface::DmuSurface>> surf(mu.size());
  parallel_for(mu.size(), ctx.threads, [&](std::size_t k) {
    surf[k].emplace(
        master.dmu_surface_on(grid, t0, mu, static_cast<int>(k), base));
  });
  Json values = Json::array(), xderivs = Json::array();
  for (int k = 0; k < mu.size(); ++k) {
    values.push_back(surf[k]->value_at(x));
    xderivs.push_back(surf[k]->xderiv_at(x));
  }
  write_json(Json{{"t0", t0},
                  {"x", x},
                  {"atoms", measure_to_json(mu)["atoms"]},
                  {"d_mu_values", std::move(values)},
                  {"d_x_mu_values", std::move(xderivs)}},
             (ctx.out_dir / "report.json").string());
  return 0;
}

int cmd_lipschitz(const RunContext& ctx) {
  MasterSurface master(model_from(ctx.config), terminal_from(ctx.config),
                       master_config_from(ctx.config, ctx.threads));
  DiscreteMeasure mu = measure_from(ctx.config, ctx.seed);
  Json probe = ctx.config.value("probe", Json::object());
  Json lip = ctx.config.value("lipschitz", Json::object());
  TransportMetric metric = lip.value("metric", "w2") == "w1"
                               ? TransportMetric::W1
                               : TransportMetric::W2;
  auto report = master.lipschitz_estimate(
      num(probe, "t0", 0.0), num(probe, "x", 0.0), mu, metric,
      static_cast<int>(num(lip, "trials", 50)), ctx.seed);
  Json j{{"t0", num(probe, "t0", 0.0)},
         {"x", num(probe, "x", 0.0)},
         {"lipschitz", report_to_json(report)}};
  write_json(j, (ctx.out_dir / "report.json").string());
  return 0;
}

int cmd_propagate(const RunContext& ctx) {
  HamiltonianModel h = model_from(ctx.config);
  MasterSurface master(h, terminal_from(ctx.config),
                       master_config_from(ctx.config, ctx.threads));
  Json p = ctx.config.value("propagate", Json::object());
  PropagationConfig pcfg;
  pcfg.n_particles = static_cast<int>(num(p, "particles", 2000));
  pcfg.n_checkpoints = static_cast<int>(num(p, "checkpoints", 5));
  pcfg.derivative_atoms = static_cast<int>(num(p, "atoms", 20));
  pcfg.substeps_per_interval = static_cast<int>(num(p, "substeps", 20));
  pcfg.seed = ctx.seed;
  pcfg.threads = ctx.threads;

  Json m = ctx.config.value("measure", Json{{"kind", "gaussian"}, {"n", 64},
                                            {"mean", 0.0}, {"sd", 0.5}});
  Rng rng(ctx.seed);
  Vec particles(pcfg.n_particles), tangents(pcfg.n_particles);
  double mean = num(m, "mean", 0.0), sd = num(m, "sd", 0.5);
  for (int i = 0; i < pcfg.n_particles; ++i) {
    particles(i) = mean + sd * normal(rng);
    tangents(i) = normal(rng);
  }
  Mat atoms(pcfg.n_particles, 1);
  atoms.col(0) = particles;
  DiscreteMeasure mu0 = DiscreteMeasure::uniform(std::move(atoms));
  Grid1D grid = master.make_grid(0.0, mu0);
  MfgSolution base = master.solve_on(grid, mu0);
  auto traj = simulate_flow(master, base, particles, tangents, pcfg);
  auto profile = dissipation_profile(traj, num(p, "mono_tol", 1e-3),
                                     num(p, "terminal_tol", 1e-6));
  auto rate = rate_check(traj, h, profile, num(p, "rate_tol", 1e-3));
  write_profile_csv(profile, &rate, (ctx.out_dir / "profile.csv").string());
  write_json(profile_to_json(profile, &rate),
             (ctx.out_dir / "report.json").string());
  return profile.pass() && rate.pass ? 0 : 2;
}

int cmd_lq_oracle(const RunContext& ctx) {
  Json l = ctx.config.value("lq", Json::object());
  LqSpec spec;
  spec.q = num(l, "q", 1.0);
  spec.c = num(l, "c", 0.5);
  spec.g = num(l, "g", 1.0);
  spec.T = num(l, "T", 1.0);
  spec.m0 = num(l, "m0", 1.0);
  auto coeffs = solve_lq(spec, static_cast<int>(num(l, "ode_steps", 10000)));
  dump_csv(coeffs, (ctx.out_dir / "coefficients.csv").string());
  write_json(Json{{"spec",
                   Json{{"q", spec.q}, {"c", spec.c}, {"g", spec.g},
                        {"T", spec.T}, {"m0", spec.m0}}},
                  {"displacement_monotone", spec.displacement_monotone()},
                  {"a0", coeffs.a.front()},
                  {"b0", coeffs.b.front()},
                  {"c0", coeffs.c_off.front()}},
             (ctx.out_dir / "report.json").string());
  return 0;
}

int dispatch(const RunContext& ctx) {
  std::string cmd = ctx.config.at("command").get<std::string>();
  if (cmd == "certify") return cmd_certify(ctx);
  if (cmd == "search-violation") return cmd_search(ctx);
  if (cmd == "solve-mfg") return cmd_solve_mfg(ctx);
  if (cmd == "master-eval") return cmd_master_eval(ctx);
  if (cmd == "dmu") return cmd_dmu(ctx);
  if (cmd == "lipschitz") return cmd_lipschitz(ctx);
  if (cmd == "propagate") return cmd_propagate(ctx);
  if (cmd == "lq-oracle") return cmd_lq_oracle(ctx);
  throw SchemaError("unknown command: " + cmd);
}

Json merge_overrides(Json base, const Json& overrides) {
  for (auto it = overrides.begin(); it != overrides.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) &&
        base.at(it.key()).is_object()) {
      base[it.key()] = merge_overrides(base.at(it.key()), it.value());
    } else {
      base[it.key()] = it.value();
    }
  }
  return base;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed_override;
  std::optional<int> threads_override;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    auto next = [&](const char* flag) -> std::string {
      if (i + 1 >= args.size())
        throw std::runtime_error(std::string(flag) + " expects a value");
      return args[++i];
    };
    if (a == "--config")
      config_path = next("--config");
    else if (a == "--out")
      out_dir = next("--out");
    else if (a == "--seed")
      seed_override = std::stoull(next("--seed"));
    else if (a == "--threads")
      threads_override = std::stoi(next("--threads"));
    else if (a == "--help" || a == "-h") {
      std::cout << "usage: mfg-cli --config <path> [--out <dir>] "
                   "[--seed <u64>] [--threads <n>]\n"
                   "commands (from the config): certify | search-violation | "
                   "solve-mfg | master-eval | dmu | lipschitz | propagate | "
                   "lq-oracle\n";
      return 0;
    } else {
      std::cerr << "error: unknown flag " << a << "\n";
      return 1;
    }
  }
  if (config_path.empty()) {
    std::cerr << "error: --config is required (see --help)\n";
    return 1;
  }

  try {
    Json config = read_json(config_path);
    validate_config(config);
    std::uint64_t seed = seed_override.value_or(
        config.value("seed", static_cast<std::uint64_t>(0)));
    int threads = threads_override.value_or(
        static_cast<int>(config.value("threads", 1.0)));
    config["seed"] = seed;
    config["threads"] = threads;
    fs::path out = out_dir.empty() ? fs::path(config.value("out", "runs/out"))
                                   : fs::path(out_dir);

    if (config.contains("sweep")) {
      Json sweep = config.at("sweep");
      Json base = config;
      base.erase("sweep");
      std::vector<Json> children;
      for (const Json& overrides : sweep) {
        validate_config(overrides.is_object() ? merge_overrides(base, overrides)
                                              : base,
                        /*allow_sweep=*/false);
        children.push_back(merge_overrides(base, overrides));
      }
      std::vector<int> codes(children.size(), 0);
      int workers = std::min<int>(threads, static_cast<int>(children.size()));
      parallel_for(children.size(), std::max(1, workers), [&](std::size_t i) {
        Json child = children[i];
        std::string hash = json_hash(child);
        // children run single-threaded inside the worker pool
        codes[i] = run_single(child, out / hash, child.value("seed", seed), 1);
      });
      Json manifest = Json::array();
      for (std::size_t i = 0; i < children.size(); ++i)
        manifest.push_back(Json{{"config_hash", json_hash(children[i])},
                                {"exit_code", codes[i]}});
      fs::create_directories(out);
      write_json(Json{{"children", manifest}},
                 (out / "sweep_manifest.json").string());
      int worst = 0;
      for (int c : codes) worst = std::max(worst, c);
      return worst;
    }
    return run_single(config, out, seed, threads);
  } catch (const SchemaError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
}

}  // namespace mfg

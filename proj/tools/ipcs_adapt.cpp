// ipcs_adapt: runs a case once, the adaptive loop, or parameter sweeps.
//
//   ipcs_adapt run lid-cavity --k 0.01 --T 1.0
//   ipcs_adapt --case channel-flap --mode adapt --tol 0.001 --refine regular
//   ipcs_adapt study-k channel-flap --h 0.1 --ks 0.01,0.005,0.0025

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>

#include "ipcs/ipcs.hpp"

namespace fs = std::filesystem;
using namespace ipcs;

namespace {

enum Exit { kOk = 0, kSolverFailure = 1, kUsage = 2, kNotConverged = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Config {
  std::string mode;
  std::string case_name;
  double tol = 0.0;
  double k = 0.0;
  bool adaptive_k = false;
  double tolk = 1e-3;
  std::string refine = "regular";
  double fraction = 0.3;
  int max_iter = 10;
  int max_dofs = 0;
  std::string out = ".";
  bool dump_fields = false;
  std::vector<double> hs, ks;
  double T = 0.0;
  double h = 0.0;
  std::string scheme = "ipcs";
  bool no_estimate = false;
  bool quiet = false;
};

std::vector<double> parse_list(const std::string& s, const char* what) {
  std::vector<double> v;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      const double x = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      if (!(x > 0.0)) throw UsageError(std::string(what) + ": entries must be positive");
      v.push_back(x);
    } catch (const std::logic_error&) {
      throw UsageError(std::string(what) + ": cannot parse '" + item + "'");
    }
  }
  return v;
}

RefinementAlgorithm algorithm(const std::string& s) {
  if (s == "bisection") return RefinementAlgorithm::Bisection;
  if (s == "regular") return RefinementAlgorithm::RegularCut;
  if (s == "uniform") return RefinementAlgorithm::Uniform;
  throw UsageError("--refine must be bisection, regular or uniform");
}

Scheme scheme(const std::string& s) {
  if (s == "ipcs") return Scheme::IPCS;
  if (s == "cn") return Scheme::CoupledCN;
  throw UsageError("--scheme must be ipcs or cn");
}

Case load_case(const Config& c) {
  if (c.case_name.empty()) throw UsageError("no case given (--case)");
  Case cs;
  try {
    cs = case_by_name(c.case_name);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (c.T > 0.0) cs.problem.T = c.T;
  if (c.h > 0.0) cs.problem.default_h = c.h;
  return cs;
}

void log(const Config& c, const std::string& msg) {
  if (!c.quiet) std::cerr << msg << '\n';
}

std::string out_path(const Config& c, const std::string& name) { return (fs::path(c.out) / name).string(); }

void dump_iteration(const Config& c, int it, const IterationResult& r) {
  char name[64];
  std::snprintf(name, sizeof name, "mesh_%02d.vtk", it);
  const auto& mesh = r.primal.th->mesh();
  const std::vector<double>* U = c.dump_fields ? &r.primal.U.back() : nullptr;
  const std::vector<double>* P = c.dump_fields ? &r.primal.P.back() : nullptr;
  write_file(out_path(c, name), [&](std::ostream& os) { write_vtk(os, mesh, {{"eta", r.estimate.indicators}}, U, P); });
}

TimeController run_controller(const Config& c, const Problem& p) {
  const double cap = p.step_cap();
  return TimeController::for_horizon(p.T, c.tolk, c.k > 0.0 ? c.k : cap, cap);
}

int cmd_run(const Config& c) {
  if (!(c.k > 0.0) && !c.adaptive_k) throw UsageError("run needs --k or --adaptive-k");
  const Case cs = load_case(c);
  const auto& p = cs.problem;
  auto mesh = p.make_mesh(p.default_h);
  p.validate(*mesh);
  auto th = std::make_shared<const TaylorHood>(mesh);
  IterationResult r;
  if (c.adaptive_k) {
    auto ctrl = run_controller(c, p);
    if (scheme(c.scheme) == Scheme::IPCS) {
      r.primal = run_adaptive_primal(IpcsSolver(th, p), p, cs.goal, ctrl);
    } else {
      r.primal = run_adaptive_primal(CoupledCNSolver(th, p), p, cs.goal, ctrl);
    }
  } else {
    r.primal = run_primal(th, p, cs.goal, uniform_times(p.T, c.k), scheme(c.scheme));
  }
  AdaptRecord rec;
  rec.iteration = 1;
  rec.cells = mesh->num_cells();
  rec.dofs = th->nu() + th->np();
  rec.steps = r.primal.steps();
  rec.k_min = r.primal.min_step();
  rec.goal = r.primal.goal;
  rec.times = r.primal.times;
  if (!c.no_estimate) {
    r.dual = run_dual(r.primal, p, cs.goal);
    r.estimate = estimate(r.primal, r.dual, p);
    rec.breakdown = r.estimate;
    if (cs.reference) {
      rec.error = std::abs(*cs.reference - rec.goal);
      rec.efficiency = efficiency_index(r.estimate.total(), rec.goal, *cs.reference);
    }
  } else {
    rec.breakdown.E_h = rec.breakdown.E_k = rec.breakdown.E_c_mom = rec.breakdown.E_c_con =
        std::numeric_limits<double>::quiet_NaN();
    if (cs.reference) rec.error = std::abs(*cs.reference - rec.goal);
  }
  AdaptReport rep;
  rep.records.push_back(rec);
  rep.converged = true;
  write_file(out_path(c, "run.csv"), [&](std::ostream& os) { write_report_csv(os, rep); });
  write_file(out_path(c, "timesteps.csv"), [&](std::ostream& os) { write_timesteps_csv(os, rep); });
  write_file(out_path(c, "summary.txt"), [&](std::ostream& os) { write_summary(os, report_summary(p.name, rep)); });
  if (c.dump_fields) {
    const std::vector<double> eta = c.no_estimate ? std::vector<double>(mesh->num_cells(), 0.0) : r.estimate.indicators;
    write_file(out_path(c, "fields.vtk"),
               [&](std::ostream& os) { write_vtk(os, *mesh, {{"eta", eta}}, &r.primal.U.back(), &r.primal.P.back()); });
  }
  std::printf("goal = %s\n", fmt(rec.goal).c_str());
  if (!c.no_estimate) std::printf("E = %s\n", fmt(rec.breakdown.total()).c_str());
  return kOk;
}

AdaptOptions adapt_options(const Config& c, RefinementAlgorithm algo) {
  if (!(c.tol > 0.0)) throw UsageError("adapt needs --tol > 0");
  if (!(c.fraction > 0.0 && c.fraction <= 1.0)) throw UsageError("--fraction must lie in (0, 1]");
  if (c.max_iter < 1) throw UsageError("--max-iter must be at least 1");
  if (c.max_dofs < 0) throw UsageError("--max-dofs must be nonnegative");
  AdaptOptions o;
  o.TOL = c.tol;
  o.algorithm = algo;
  o.fraction = c.fraction;
  o.max_iterations = c.max_iter;
  o.max_dofs = c.max_dofs;
  o.adaptive_k = c.adaptive_k || !(c.k > 0.0);
  o.k_fixed = c.k;
  o.scheme = scheme(c.scheme);
  return o;
}

AdaptReport run_loop(const Config& c, const Case& cs, AdaptOptions o, const std::string& prefix) {
  o.on_iteration = [&](int it, const IterationResult& r) {
    char line[200];
    std::snprintf(line, sizeof line, "%s iteration %d: dofs %d, steps %d, E %.4g, goal %.8g", prefix.c_str(), it,
                  r.primal.th->nu() + r.primal.th->np(), r.primal.steps(), r.estimate.total(), r.primal.goal);
    log(c, line);
    dump_iteration(c, it, r);
  };
  return adaptive_loop(cs, o);
}

void write_report(const Config& c, const std::string& stem, const std::string& name, const AdaptReport& rep) {
  write_file(out_path(c, stem + ".csv"), [&](std::ostream& os) { write_report_csv(os, rep); });
  write_file(out_path(c, stem + "_timesteps.csv"), [&](std::ostream& os) { write_timesteps_csv(os, rep); });
  write_file(out_path(c, stem + "_summary.txt"), [&](std::ostream& os) { write_summary(os, report_summary(name, rep)); });
}

int cmd_adapt(const Config& c) {
  const auto o = adapt_options(c, algorithm(c.refine));
  const Case cs = load_case(c);
  const auto rep = run_loop(c, cs, o, "adapt");
  write_report(c, "adapt", cs.problem.name, rep);
  std::printf("iterations = %zu\nconverged = %s\nE = %s\ngoal = %s\n", rep.records.size(), rep.converged ? "true" : "false",
              fmt(rep.last().breakdown.total()).c_str(), fmt(rep.last().goal).c_str());
  return rep.converged ? kOk : kNotConverged;
}

int cmd_study_marking(const Config& c) {
  const Case cs = load_case(c);
  bool all = true;
  for (const std::string name : {"bisection", "regular", "uniform"}) {
    const auto o = adapt_options(c, algorithm(name));
    Config sub = c;
    sub.out = out_path(c, name);
    fs::create_directories(sub.out);
    const auto rep = run_loop(sub, cs, o, name);
    write_report(c, "marking_" + name, cs.problem.name, rep);
    all = all && rep.converged;
  }
  return all ? kOk : kNotConverged;
}

int cmd_study(const Config& c, const std::string& param) {
  const Case base = load_case(c);
  std::vector<double> hs = c.hs, ks = c.ks;
  if (param == "h" && hs.empty()) throw UsageError("study-h needs a nonempty --hs list");
  if (param == "k" && ks.empty()) throw UsageError("study-k needs a nonempty --ks list");
  if (hs.empty()) hs = {base.problem.default_h};
  if (ks.empty()) {
    if (!(c.k > 0.0)) throw UsageError("study-h needs --k or --ks");
    ks = {c.k};
  }
  std::vector<StudyRow> rows;
  for (double h : hs)
    for (double k : ks) {
      StudyRow r;
      r.h = h;
      r.k = k;
      rows.push_back(r);
    }
  std::mutex log_mutex;
  parallel_for(static_cast<int>(rows.size()), [&](int i) {
    auto& r = rows[i];
    r.row.iteration = i + 1;
    try {
      const Case cs = base;
      const auto& p = cs.problem;
      auto mesh = p.make_mesh(r.h);
      p.validate(*mesh);
      const auto res = solve_and_estimate(std::make_shared<const TaylorHood>(mesh), p, cs.goal, uniform_times(p.T, r.k),
                                          scheme(c.scheme));
      r.steps = res.primal.steps();
      r.row.cells = mesh->num_cells();
      r.row.dofs = res.primal.th->nu() + res.primal.th->np();
      r.row.breakdown = res.estimate;
      r.row.goal = res.primal.goal;
      if (cs.reference) {
        r.row.error = std::abs(*cs.reference - r.row.goal);
        r.row.efficiency = efficiency_index(res.estimate.total(), r.row.goal, *cs.reference);
      }
    } catch (const std::exception& e) {
      r.ok = false;
      r.message = e.what();
    }
    std::lock_guard<std::mutex> lock(log_mutex);
    char line[160];
    std::snprintf(line, sizeof line, "study h=%g k=%g: %s", r.h, r.k, r.ok ? "ok" : r.message.c_str());
    log(c, line);
  });
  write_file(out_path(c, "study_" + param + ".csv"), [&](std::ostream& os) { write_study_csv(os, rows, param); });
  bool any = false;
  for (const auto& r : rows) any = any || r.ok;
  return any ? kOk : kSolverFailure;
}

void apply_config_file(const std::string& path, Config& c, const std::set<std::string>& given) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot read config file " + path);
  std::map<std::string, std::string> kv;
  try {
    kv = parse_key_values(f);
  } catch (const std::invalid_argument& e) {
    throw UsageError(path + ": " + e.what());
  }
  auto num = [&](const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      const double x = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::logic_error&) {
      throw UsageError(path + ": bad number for " + key + ": " + v);
    }
  };
  auto flag = [&](const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw UsageError(path + ": bad boolean for " + key + ": " + v);
  };
  for (const auto& [key, v] : kv) {
    if (given.count(key)) continue;  // flags win
    if (key == "case") c.case_name = v;
    else if (key == "mode") c.mode = v;
    else if (key == "tol") c.tol = num(key, v);
    else if (key == "k") c.k = num(key, v);
    else if (key == "adaptive-k") c.adaptive_k = flag(key, v);
    else if (key == "tolk") c.tolk = num(key, v);
    else if (key == "refine") c.refine = v;
    else if (key == "fraction") c.fraction = num(key, v);
    else if (key == "max-iter") c.max_iter = static_cast<int>(num(key, v));
    else if (key == "max-dofs") c.max_dofs = static_cast<int>(num(key, v));
    else if (key == "out") c.out = v;
    else if (key == "dump-fields") c.dump_fields = flag(key, v);
    else if (key == "hs") c.hs = parse_list(v, "hs");
    else if (key == "ks") c.ks = parse_list(v, "ks");
    else if (key == "T") c.T = num(key, v);
    else if (key == "h") c.h = num(key, v);
    else if (key == "scheme") c.scheme = v;
    else throw UsageError(path + ": unknown key " + key);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"IPCS Navier-Stokes solver with goal-oriented space-time adaptivity"};
  app.set_help_flag("--help", "print this help");  // -h would clash with --h
  Config c;
  std::string config_file, hs, ks, mode_pos, case_pos;
  app.add_option("mode_pos", mode_pos, "run | adapt | study-h | study-k | study-marking");
  app.add_option("case_pos", case_pos, "channel-flap | lid-cavity | taylor-green");
  app.add_option("--mode", c.mode, "run | adapt | study-h | study-k | study-marking");
  app.add_option("--case", c.case_name, "channel-flap | lid-cavity | taylor-green");
  app.add_option("--tol", c.tol, "adaptive tolerance TOL");
  app.add_option("--k", c.k, "fixed time step");
  app.add_flag("--adaptive-k", c.adaptive_k, "residual-controlled time steps");
  app.add_option("--tolk", c.tolk, "per-step residual budget for run --adaptive-k");
  app.add_option("--refine", c.refine, "bisection | regular | uniform");
  app.add_option("--fraction", c.fraction, "fixed marking fraction");
  app.add_option("--max-iter", c.max_iter, "adaptive iterations");
  app.add_option("--max-dofs", c.max_dofs, "stop before solving on a larger space (0: no limit)");
  app.add_option("--out", c.out, "output directory");
  app.add_flag("--dump-fields", c.dump_fields, "write velocity and pressure VTK");
  app.add_option("--hs", hs, "comma-separated cell sizes");
  app.add_option("--ks", ks, "comma-separated time steps");
  app.add_option("--T", c.T, "end time override");
  app.add_option("--h", c.h, "initial cell size override");
  app.add_option("--scheme", c.scheme, "ipcs | cn");
  app.add_flag("--no-estimate", c.no_estimate, "run: skip dual and estimate");
  app.add_flag("--quiet", c.quiet, "no progress on stderr");
  app.add_option("--config", config_file, "key = value file; flags override it");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  try {
    if (!mode_pos.empty()) {
      if (!c.mode.empty() && c.mode != mode_pos) throw UsageError("mode given twice");
      c.mode = mode_pos;
    }
    if (!case_pos.empty()) {
      if (!c.case_name.empty() && c.case_name != case_pos) throw UsageError("case given twice");
      c.case_name = case_pos;
    }
    if (!hs.empty()) c.hs = parse_list(hs, "--hs");
    if (!ks.empty()) c.ks = parse_list(ks, "--ks");
    if (app.count("--hs") && c.hs.empty()) throw UsageError("--hs list is empty");
    if (app.count("--ks") && c.ks.empty()) throw UsageError("--ks list is empty");
    if (!config_file.empty()) {
      std::set<std::string> given;
      for (const auto* opt : app.get_options())
        if (opt->count() > 0 && !opt->get_lnames().empty()) given.insert(opt->get_lnames().front());
      if (!mode_pos.empty()) given.insert("mode");
      if (!case_pos.empty()) given.insert("case");
      apply_config_file(config_file, c, given);
    }
    algorithm(c.refine);
    scheme(c.scheme);
    fs::create_directories(c.out);
    if (c.mode == "run") return cmd_run(c);
    if (c.mode == "adapt") return cmd_adapt(c);
    if (c.mode == "study-h") return cmd_study(c, "h");
    if (c.mode == "study-k") return cmd_study(c, "k");
    if (c.mode == "study-marking") return cmd_study_marking(c);
    throw UsageError(c.mode.empty() ? "no mode given" : "unknown mode " + c.mode);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n" << app.help();
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kSolverFailure;
  }
}

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ipcs/adapt.hpp"

namespace ipcs {

inline std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline constexpr const char* kBreakdownHeader = "iteration,cells,dofs,E_h,E_k,E_c_mom,E_c_con,E,goal,error,efficiency";

struct CsvRow {
  int iteration = 0;
  int cells = 0;
  int dofs = 0;
  EstimateBreakdown breakdown;
  double goal = 0.0;
  double error = std::numeric_limits<double>::quiet_NaN();
  double efficiency = std::numeric_limits<double>::quiet_NaN();
};

inline CsvRow csv_row(const AdaptRecord& r) {
  return {r.iteration, r.cells, r.dofs, r.breakdown, r.goal, r.error, r.efficiency};
}

inline std::string breakdown_fields(const CsvRow& r) {
  const auto& b = r.breakdown;
  std::ostringstream s;
  s << r.iteration << ',' << r.cells << ',' << r.dofs << ',' << fmt(b.E_h) << ',' << fmt(b.E_k) << ',' << fmt(b.E_c_mom)
    << ',' << fmt(b.E_c_con) << ',' << fmt(b.total()) << ',' << fmt(r.goal) << ',' << fmt(r.error) << ','
    << fmt(r.efficiency);
  return s.str();
}

inline void write_breakdown_csv(std::ostream& os, const std::vector<CsvRow>& rows) {
  os << kBreakdownHeader << '\n';
  for (const auto& r : rows) os << breakdown_fields(r) << '\n';
}

inline void write_report_csv(std::ostream& os, const AdaptReport& rep) {
  std::vector<CsvRow> rows;
  for (const auto& r : rep.records) rows.push_back(csv_row(r));
  write_breakdown_csv(os, rows);
}

/// Per-iteration controller data for the step-history plots: one row per node.
inline void write_timesteps_csv(std::ostream& os, const AdaptReport& rep) {
  os << "iteration,n,t,k\n";
  for (const auto& r : rep.records)
    for (std::size_t n = 1; n < r.times.size(); ++n)
      os << r.iteration << ',' << n << ',' << fmt(r.times[n]) << ',' << fmt(r.times[n] - r.times[n - 1]) << '\n';
}

/// Flat `key = value` text.
inline void write_summary(std::ostream& os, const std::vector<std::pair<std::string, std::string>>& kv) {
  for (const auto& [k, v] : kv) os << k << " = " << v << '\n';
}

inline std::vector<std::pair<std::string, std::string>> report_summary(const std::string& case_name, const AdaptReport& rep) {
  const auto& l = rep.last();
  return {{"case", case_name},
          {"TOL", fmt(rep.TOL)},
          {"iterations", std::to_string(rep.records.size())},
          {"converged", rep.converged ? "true" : "false"},
          {"dof_limited", rep.dof_limited ? "true" : "false"},
          {"E", fmt(l.breakdown.total())},
          {"E_h", fmt(l.breakdown.E_h)},
          {"E_k", fmt(l.breakdown.E_k)},
          {"E_c", fmt(l.breakdown.E_c())},
          {"goal", fmt(l.goal)},
          {"error", fmt(l.error)},
          {"efficiency", fmt(l.efficiency)},
          {"dofs", std::to_string(l.dofs)},
          {"cells", std::to_string(l.cells)}};
}

/// Parses `key = value` lines; '#' starts a comment, blank lines are skipped.
inline std::map<std::string, std::string> parse_key_values(std::istream& is) {
  std::map<std::string, std::string> out;
  std::string line;
  int ln = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string{};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  };
  while (std::getline(is, line)) {
    ++ln;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(ln) + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw std::invalid_argument("config line " + std::to_string(ln) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

/// Least-squares slope of log y against log x. Needs two or more points with
/// positive coordinates and distinct x.
inline double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("fit_loglog_slope: size mismatch");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] > 0.0 && y[i] > 0.0 && std::isfinite(x[i]) && std::isfinite(y[i])) {
      lx.push_back(std::log(x[i]));
      ly.push_back(std::log(y[i]));
    }
  const double n = static_cast<double>(lx.size());
  if (lx.size() < 2) throw std::invalid_argument("fit_loglog_slope: fewer than two usable points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i] / n;
    my += ly[i] / n;
  }
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  if (sxx == 0.0) throw std::invalid_argument("fit_loglog_slope: x values coincide");
  return sxy / sxx;
}

/// One sweep entry; `ok = false` rows keep their parameters and the message.
struct StudyRow {
  double h = 0.0;
  double k = 0.0;
  CsvRow row;
  int steps = 0;
  bool ok = true;
  std::string message;
};

/// Breakdown columns, then h,k,steps,status. Slopes go in '#' footer lines:
/// `# slope,<series>,<param>,<value>,<other param>=<value>`.
inline void write_study_csv(std::ostream& os, const std::vector<StudyRow>& rows, const std::string& param) {
  os << kBreakdownHeader << ",h,k,steps,status\n";
  for (const auto& r : rows) {
    if (r.ok) {
      os << breakdown_fields(r.row);
    } else {
      os << r.row.iteration << ",,,,,,,,,,";
    }
    os << ',' << fmt(r.h) << ',' << fmt(r.k) << ',' << r.steps << ',';
    if (r.ok) {
      os << "ok";
    } else {
      std::string m = r.message;
      for (char& c : m)
        if (c == ',' || c == '\n' || c == '\r') c = ' ';
      os << "failed: " << m;
    }
    os << '\n';
  }
  if (param.empty()) return;
  if (param != "h" && param != "k") throw std::invalid_argument("write_study_csv: sweep parameter must be h or k");
  // one fit per value of the other parameter, in order of appearance
  const std::string other = param == "h" ? "k" : "h";
  std::vector<double> groups;
  for (const auto& r : rows) {
    const double g = param == "h" ? r.k : r.h;
    if (std::find(groups.begin(), groups.end(), g) == groups.end()) groups.push_back(g);
  }
  const char* names[5] = {"E_h", "E_k", "E_c_mom", "E_c_con", "error"};
  for (double g : groups) {
    std::vector<double> x;
    std::vector<std::vector<double>> ys(5);
    for (const auto& r : rows) {
      if (!r.ok || (param == "h" ? r.k : r.h) != g) continue;
      x.push_back(param == "h" ? r.h : r.k);
      const auto& b = r.row.breakdown;
      const double v[5] = {b.E_h, b.E_k, b.E_c_mom, b.E_c_con, r.row.error};
      for (int i = 0; i < 5; ++i) ys[i].push_back(v[i]);
    }
    for (int i = 0; i < 5; ++i) {
      os << "# slope," << names[i] << ',' << param << ',';
      try {
        os << fmt(fit_loglog_slope(x, ys[i]));
      } catch (const std::invalid_argument&) {
        os << "nan";
      }
      os << ',' << other << '=' << fmt(g) << '\n';
    }
  }
}

/// Legacy ASCII VTK: triangles, optional cell scalars, and velocity/pressure at
/// the vertices.
inline void write_vtk(std::ostream& os, const Mesh& mesh, const std::vector<std::pair<std::string, std::vector<double>>>& cell_data,
                      const std::vector<double>* U = nullptr, const std::vector<double>* P = nullptr) {
  const int nv = mesh.num_vertices(), nc = mesh.num_cells();
  os << "# vtk DataFile Version 3.0\nipcs\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  os << "POINTS " << nv << " double\n";
  for (const auto& v : mesh.vertices()) os << fmt(v.x) << ' ' << fmt(v.y) << " 0\n";
  os << "CELLS " << nc << ' ' << 4 * nc << '\n';
  for (const auto& c : mesh.cells()) os << "3 " << c[0] << ' ' << c[1] << ' ' << c[2] << '\n';
  os << "CELL_TYPES " << nc << '\n';
  for (int c = 0; c < nc; ++c) os << "5\n";
  if (!cell_data.empty()) {
    os << "CELL_DATA " << nc << '\n';
    for (const auto& [name, v] : cell_data) {
      if (static_cast<int>(v.size()) != nc) throw std::invalid_argument("write_vtk: cell field " + name + " has wrong size");
      os << "SCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
      for (double x : v) os << fmt(x) << '\n';
    }
  }
  if (U || P) {
    os << "POINT_DATA " << nv << '\n';
    if (U) {
      if (static_cast<int>(U->size()) < 2 * nv) throw std::invalid_argument("write_vtk: velocity vector too short");
      os << "VECTORS velocity double\n";
      for (int v = 0; v < nv; ++v) os << fmt((*U)[2 * v]) << ' ' << fmt((*U)[2 * v + 1]) << " 0\n";
    }
    if (P) {
      if (static_cast<int>(P->size()) != nv) throw std::invalid_argument("write_vtk: pressure vector has wrong size");
      os << "SCALARS pressure double 1\nLOOKUP_TABLE default\n";
      for (double x : *P) os << fmt(x) << '\n';
    }
  }
}

inline void write_file(const std::string& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  body(f);
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace ipcs

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ipcs/io.hpp"

using namespace ipcs;

namespace {

CsvRow sample_row() {
  CsvRow r;
  r.iteration = 2;
  r.cells = 10;
  r.dofs = 99;
  r.breakdown.E_h = 0.1;
  r.breakdown.E_k = 1e-7;
  r.breakdown.E_c_mom = 2.5e-5;
  r.breakdown.E_c_con = 0.0;
  r.goal = 1.0 / 3.0;
  r.error = 0.01;
  r.efficiency = 10.0025;
  return r;
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Csv, HeaderAndRoundTripFormatting) {
  std::ostringstream os;
  write_breakdown_csv(os, {sample_row()});
  const auto l = lines(os.str());
  ASSERT_EQ(l.size(), 2u);
  EXPECT_EQ(l[0], "iteration,cells,dofs,E_h,E_k,E_c_mom,E_c_con,E,goal,error,efficiency");
  EXPECT_EQ(l[1], "2,10,99,0.10000000000000001,9.9999999999999995e-08,2.5000000000000001e-05,0,0.10002510000000001,"
                  "0.33333333333333331,0.01,10.0025");
  // %.17g round-trips
  EXPECT_EQ(std::stod(fmt(1.0 / 3.0)), 1.0 / 3.0);
  EXPECT_EQ(os.str().find('\r'), std::string::npos);
}

TEST(Csv, MissingReferenceIsNan) {
  CsvRow r = sample_row();
  r.error = r.efficiency = std::numeric_limits<double>::quiet_NaN();
  EXPECT_EQ(breakdown_fields(r).substr(breakdown_fields(r).size() - 8), ",nan,nan");
}

TEST(Csv, Deterministic) {
  std::ostringstream a, b;
  write_breakdown_csv(a, {sample_row(), sample_row()});
  write_breakdown_csv(b, {sample_row(), sample_row()});
  EXPECT_EQ(a.str(), b.str());
}

TEST(Slope, ExactPowers) {
  const std::vector<double> k = {0.01, 0.005, 0.0025, 0.00125};
  std::vector<double> y2, y1;
  for (double x : k) {
    y2.push_back(3.0 * x * x);
    y1.push_back(0.5 * x);
  }
  EXPECT_NEAR(fit_loglog_slope(k, y2), 2.0, 1e-12);
  EXPECT_NEAR(fit_loglog_slope(k, y1), 1.0, 1e-12);
  EXPECT_THROW(fit_loglog_slope({1.0}, {1.0}), std::invalid_argument);
  EXPECT_THROW(fit_loglog_slope({1.0, 1.0}, {1.0, 2.0}), std::invalid_argument);
  EXPECT_THROW(fit_loglog_slope({1.0, 2.0}, {1.0}), std::invalid_argument);
  // nonpositive entries are skipped
  EXPECT_NEAR(fit_loglog_slope({1.0, 2.0, 4.0}, {0.0, 4.0, 16.0}), 2.0, 1e-12);
}

TEST(StudyCsv, RowsFailuresAndFooter) {
  std::vector<StudyRow> rows;
  for (double k : {0.01, 0.005}) {
    StudyRow r;
    r.h = 0.1;
    r.k = k;
    r.row = sample_row();
    r.row.breakdown.E_k = k * k;
    r.steps = static_cast<int>(1.0 / k);
    rows.push_back(r);
  }
  StudyRow bad;
  bad.h = 0.1;
  bad.k = 0.2;
  bad.ok = false;
  bad.message = "diverged, badly\nat t=1";
  rows.push_back(bad);
  std::ostringstream os;
  write_study_csv(os, rows, "k");
  const auto l = lines(os.str());
  EXPECT_EQ(l[0], std::string(kBreakdownHeader) + ",h,k,steps,status");
  EXPECT_NE(l[1].find(",0.10000000000000001,0.01,100,ok"), std::string::npos);
  EXPECT_NE(l[3].find("failed: diverged  badly at t=1"), std::string::npos);
  // same column count on every data row
  auto commas = [](const std::string& s) { return std::count(s.begin(), s.end(), ','); };
  EXPECT_EQ(commas(l[1]), commas(l[0]));
  EXPECT_EQ(commas(l[3]), commas(l[0]));
  bool found = false;
  for (const auto& x : l)
    if (x.rfind("# slope,E_k,k,", 0) == 0) {
      found = true;
      EXPECT_NEAR(std::stod(x.substr(14)), 2.0, 1e-12);
      EXPECT_EQ(x.substr(x.rfind(',')), ",h=0.10000000000000001");
    }
  EXPECT_TRUE(found);
}

TEST(KeyValues, ParseAndErrors) {
  std::istringstream is("# comment\ncase = lid-cavity\n\n tol=0.001  # trailing\nk = 0.01\n");
  const auto kv = parse_key_values(is);
  EXPECT_EQ(kv.at("case"), "lid-cavity");
  EXPECT_EQ(kv.at("tol"), "0.001");
  EXPECT_EQ(kv.size(), 3u);
  std::istringstream bad("just words\n");
  EXPECT_THROW(parse_key_values(bad), std::invalid_argument);
  std::istringstream nokey(" = 3\n");
  EXPECT_THROW(parse_key_values(nokey), std::invalid_argument);
}

TEST(Vtk, LegacyLayout) {
  const auto mesh = std::make_shared<const Mesh>(unit_square_mesh(1));
  const TaylorHood th(mesh);
  std::vector<double> U(th.nu(), 0.5), P(th.np(), 2.0);
  std::ostringstream os;
  write_vtk(os, *mesh, {{"eta", {1.0, 2.0}}}, &U, &P);
  const auto l = lines(os.str());
  EXPECT_EQ(l[0], "# vtk DataFile Version 3.0");
  EXPECT_EQ(l[4], "POINTS 4 double");
  EXPECT_NE(os.str().find("CELLS 2 8\n"), std::string::npos);
  EXPECT_NE(os.str().find("CELL_TYPES 2\n5\n5\n"), std::string::npos);
  EXPECT_NE(os.str().find("SCALARS eta double 1\nLOOKUP_TABLE default\n1\n2\n"), std::string::npos);
  EXPECT_NE(os.str().find("VECTORS velocity double\n0.5 0.5 0\n"), std::string::npos);
  EXPECT_THROW(write_vtk(os, *mesh, {{"eta", {1.0}}}), std::invalid_argument);
}

TEST(Summary, KeyValueOutput) {
  AdaptReport rep;
  rep.TOL = 1e-3;
  rep.converged = true;
  AdaptRecord r;
  r.goal = 0.02;
  rep.records.push_back(r);
  std::ostringstream os;
  write_summary(os, report_summary("channel-flap", rep));
  std::istringstream is(os.str());
  const auto kv = parse_key_values(is);
  EXPECT_EQ(kv.at("converged"), "true");
  EXPECT_EQ(kv.at("iterations"), "1");
  EXPECT_EQ(std::stod(kv.at("goal")), 0.02);
  EXPECT_EQ(kv.at("case"), "channel-flap");
}

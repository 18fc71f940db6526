#include "golden.hpp"

#include "golden_data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace nsp::cli {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, sep))
    out.push_back(field);
  return out;
}

std::vector<GoldenCell> parse(const std::string& text) {
  std::vector<GoldenCell> cells;
  std::istringstream is(text);
  std::string line;
  std::getline(is, line); // header
  while (std::getline(is, line)) {
    if (line.empty())
      continue;
    const auto f = split(line, ',');
    if (f.size() != 7)
      throw std::runtime_error("golden data: malformed row '" + line + "'");
    GoldenCell c;
    c.table = std::stoi(f[0]);
    c.kappa = std::stod(f[1]);
    c.level = parse_level(f[2]);
    c.quantity = f[3];
    c.ref_value = std::stod(f[4]);
    c.rel_tol = std::stod(f[5]);
    c.provenance = f[6];
    cells.push_back(c);
  }
  return cells;
}

double ref_value(const std::vector<GoldenCell>& cells, const GoldenCell& at,
                   const std::string& quantity) {
  for (const auto& c : cells)
    if (c.table == at.table && c.kappa == at.kappa && c.level == at.level &&
        c.quantity == quantity)
      return c.ref_value;
  throw std::runtime_error("golden data: missing " + quantity);
}

double closed_form_value(const std::vector<GoldenCell>& cells, const GoldenCell& c) {
  const int r = c.level == Level::r3f ? 3 : 2;
  std::vector<double> p{ref_value(cells, c, "p2")}, q{ref_value(cells, c, "q2")};
  if (r == 3) {
    p.push_back(ref_value(cells, c, "p3"));
    q.push_back(ref_value(cells, c, "q3"));
  }
  const ClosedForm cf = closed_form_params(p, q, r);
  if (c.quantity == "closed_form_gamma_sq_p")
    return cf.gamma_sq_p;
  if (c.quantity == "closed_form_c2")
    return cf.c[0];
  if (c.quantity == "closed_form_c3")
    return cf.c[1];
  throw std::runtime_error("golden data: unknown quantity " + c.quantity);
}

double solved_value(const CapacityResult& res, const std::string& quantity) {
  if (!res.ok)
    return std::numeric_limits<double>::quiet_NaN();
  if (quantity == "alpha_c")
    return res.alpha_c;
  return get_param(res.params, quantity);
}

} // namespace

const std::vector<GoldenCell>& golden_cells() {
  static const std::vector<GoldenCell> cells = parse(kGoldenCsv);
  return cells;
}

TableReport reproduce_table(int table, const SolverConfig& cfg) {
  const auto& all = golden_cells();
  std::vector<GoldenCell> cells;
  std::copy_if(all.begin(), all.end(), std::back_inserter(cells),
               [&](const GoldenCell& c) { return c.table == table; });
  if (cells.empty())
    throw std::invalid_argument("no golden data for table " + std::to_string(table));

  // One capacity solve per (level, kappa), ascending kappa so warm starts carry.
  std::map<std::pair<int, double>, CapacityResult> solved;
  for (const auto& c : cells)
    if (c.quantity.rfind("closed_form_", 0) != 0)
      solved.emplace(std::pair{static_cast<int>(c.level), c.kappa}, CapacityResult{});
  WarmStarts warm;
  for (auto& [key, res] : solved) {
    try {
      res = alpha_c(key.second, static_cast<Level>(key.first), cfg, &warm);
    } catch (const std::exception& e) {
      res.kappa = key.second;
      res.level = static_cast<Level>(key.first);
      res.ok = false;
      res.error = e.what();
    }
  }

  TableReport rep;
  rep.table = table;
  rep.pass = true;
  for (const auto& c : cells) {
    CellResult cr;
    cr.cell = c;
    if (c.quantity.rfind("closed_form_", 0) == 0)
      cr.computed = closed_form_value(all, c);
    else
      cr.computed = solved_value(solved.at({static_cast<int>(c.level), c.kappa}), c.quantity);
    cr.rel_error = std::abs(cr.computed - c.ref_value) / std::abs(c.ref_value);
    cr.pass = std::isfinite(cr.rel_error) && cr.rel_error <= c.rel_tol;
    rep.pass = rep.pass && cr.pass;
    rep.cells.push_back(cr);
  }
  for (auto& [key, res] : solved)
    rep.solves.push_back(res);
  return rep;
}

} // namespace nsp::cli

#pragma once

#include "nsp/capacity.hpp"

#include <string>
#include <vector>

namespace nsp::cli {

struct GoldenCell {
  int table = 0;
  double kappa = 0.0;
  Level level = Level::r1;
  std::string quantity;
  double ref_value = 0.0;
  double rel_tol = 0.0;
  std::string provenance;
};

/// Rows of the embedded golden_values.csv.
const std::vector<GoldenCell>& golden_cells();

struct CellResult {
  GoldenCell cell;
  double computed = 0.0;
  double rel_error = 0.0;
  bool pass = false;
};

struct TableReport {
  int table = 0;
  std::vector<CellResult> cells;
  std::vector<CapacityResult> solves;
  bool pass = false;
};

TableReport reproduce_table(int table, const SolverConfig& cfg);

} // namespace nsp::cli

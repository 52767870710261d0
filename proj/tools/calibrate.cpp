#include <cmath>
#include <fstream>
#include <iostream>

#include "suite.hpp"
#include "gtp/selection_report.hpp"

using namespace gtp::acceptance;

// Measures the calibrated fixture families and writes the frozen thresholds.
int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: calibrate OUTPUT_JSON\n";
    return 2;
  }
  const auto recovery = measure_recovery();
  const auto oracle = measure_oracle();
  const auto dedup = measure_dedup();
  const auto refinement = measure_refinement();

  nlohmann::json cal;
  cal["recovery"] = {{"min_successes", 95}, {"weight_tol", 1e-6}, {"max_seconds", 30.0}, {"measured", recovery}};
  const double eps = std::ceil((oracle.at("max_ratio").get<double>() - 1.0) * 100.0) / 100.0;
  cal["oracle"] = {{"epsilon", std::max(eps, 0.0)}, {"max_seconds", 60.0}, {"measured", oracle}};
  cal["dedup"] = {{"measured", dedup}};
  cal["refinement"] = {{"tol", 1e-9},
                       {"stabilization_tol", 1e-3},
                       {"measured_max_relative_drift_5_to_10", refinement.at("max_relative_drift_5_to_10")}};
  cal["distributed"] = {{"weight_tol", 1e-9}, {"correlation_tol", 1e-6}};
  cal["scaling"] = {{"max_seconds", 900.0}};
  cal["nnls"] = {{"closed_form_tol", 1e-9}};
  // PCA and random bases tie exactly when d_s equals the column count; allow rounding.
  cal["subspace"] = {{"orthonormality_tol", 1e-6}, {"variance_rel_tol", 1e-8}, {"comparison_rel_slack", 1e-12}};
  gtp::write_text_atomic(argv[1], cal.dump(2) + "\n");
  std::cout << "wrote " << argv[1] << "\n";
  return 0;
}

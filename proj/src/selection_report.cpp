#include "gtp/selection_report.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "gtp/binary_io.hpp"

namespace gtp {

nlohmann::json selection_to_json(const Selection& sel, std::span<const std::string> column_ids) {
  nlohmann::json j;
  j["algorithm"] = sel.algorithm;
  const auto& c = sel.config;
  j["config"] = {
      {"budget", c.budget},
      {"iterations", c.iterations},
      {"correlation_mode", to_string(c.correlation_mode)},
      {"nnls_tol", c.nnls_tol},
      {"nnls_max_iter", c.nnls_max_iter},
      {"seed", c.seed},
      {"early_exit", c.early_exit},
  };
  j["indices"] = sel.indices;
  if (!column_ids.empty()) {
    std::vector<std::string> ids;
    for (Index i : sel.indices) {
      if (i < 0 || static_cast<std::size_t>(i) >= column_ids.size()) {
        throw ValidationError("selection index " + std::to_string(i) + " has no sample id");
      }
      ids.push_back(column_ids[static_cast<std::size_t>(i)]);
    }
    j["sample_ids"] = ids;
  }
  j["weights"] = std::vector<double>(sel.weights.data(), sel.weights.data() + sel.weights.size());
  if (sel.aggregated_weights.size() > 0) {
    j["aggregated_weights"] = std::vector<double>(sel.aggregated_weights.data(),
                                                  sel.aggregated_weights.data() + sel.aggregated_weights.size());
  }
  j["residual_history"] = sel.residual_history;
  j["final_residual"] = sel.final_residual;
  j["per_iteration_supports"] = sel.per_iteration_supports;
  j["flags"] = {
      {"pool_clamped", sel.pool_clamped},
      {"padded_iterations", sel.padded_iterations},
      {"nnls_nonconverged", sel.nnls_nonconverged},
  };
  nlohmann::json timings = nlohmann::json::object();
  for (const auto& [phase, seconds] : sel.timings) timings[phase] = seconds;
  j["timings_seconds"] = timings;
  return j;
}

std::string residual_csv(const Selection& sel) {
  std::ostringstream out;
  out.precision(17);
  out << "iteration,residual_norm\n";
  for (std::size_t k = 0; k < sel.residual_history.size(); ++k) out << k << ',' << sel.residual_history[k] << '\n';
  return out.str();
}

std::string residual_svg(const Selection& sel) {
  constexpr double width = 480, height = 320, margin = 48;
  const auto& h = sel.residual_history;
  const double top = h.empty() ? 1.0 : std::max(*std::max_element(h.begin(), h.end()), 1e-300);
  const double span_x = h.size() > 1 ? static_cast<double>(h.size() - 1) : 1.0;
  auto px = [&](std::size_t k) { return margin + (width - 2 * margin) * static_cast<double>(k) / span_x; };
  auto py = [&](double v) { return height - margin - (height - 2 * margin) * v / top; };

  std::ostringstream out;
  char buf[64];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin << "\" y2=\""
      << height - margin << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\"" << height - margin
      << "\" stroke=\"black\"/>\n";
  out << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (std::size_t k = 0; k < h.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(k), py(h[k]));
    out << buf;
  }
  out << "\"/>\n";
  std::snprintf(buf, sizeof buf, "%.4g", top);
  out << "<text x=\"4\" y=\"" << margin << "\" font-size=\"11\">" << buf << "</text>\n";
  out << "<text x=\"4\" y=\"" << height - margin << "\" font-size=\"11\">0</text>\n";
  out << "<text x=\"" << width / 2 - 40 << "\" y=\"" << height - 12
      << "\" font-size=\"12\">iteration</text>\n";
  out << "<text x=\"" << margin << "\" y=\"24\" font-size=\"13\">" << sel.algorithm
      << ": residual norm</text>\n";
  out << "</svg>\n";
  return out.str();
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span<const char>(text.data(), text.size()));
}

}  // namespace gtp

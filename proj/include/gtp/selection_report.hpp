#pragma once

#include <filesystem>
#include <span>
#include <string>

#include "json.hpp"

#include "gtp/design.hpp"
#include "gtp/pursuit.hpp"

namespace gtp {

// JSON report; the schema is documented in docs/selection_schema.md.
// sample_ids is omitted when column_ids is empty.
nlohmann::json selection_to_json(const Selection& selection, std::span<const std::string> column_ids);

// "iteration,residual_norm" rows, one per residual_history entry.
std::string residual_csv(const Selection& selection);

// Static line plot of residual norm per iteration.
std::string residual_svg(const Selection& selection);

void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace gtp

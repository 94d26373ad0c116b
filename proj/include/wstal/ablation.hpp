#pragma once

#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "wstal/config.hpp"
#include "wstal/dataset.hpp"
#include "wstal/pipeline.hpp"

namespace wstal {

// Named value lists swept as a cartesian product, first axis slowest.
struct AblationGrid {
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;

  std::size_t size() const;  // 0 for an empty grid
  // Overrides of cell `index`, in axis order.
  std::vector<std::pair<std::string, std::string>> cell(std::size_t index) const;
};

// "key = v1, v2, ..." per line.
AblationGrid parse_grid(std::string_view text);
AblationGrid load_grid(const std::filesystem::path& path);

// Row structures of the four ablation tables: 3 (salient-snippet
// strategies), 4 (module stacking), 5 (refinement fusion variants),
// 6 (memory update strategies).
AblationGrid table_grid(int table);

// Display name used in summaries, e.g. ("diff", "l1") -> "L1 distance".
std::string row_label(const std::string& key, const std::string& value);

struct AblationRow {
  std::string label;
  std::vector<std::pair<std::string, std::string>> overrides;
  EvalReport report;
};

struct AblationOptions {
  int threads = 1;
  std::filesystem::path out_dir;  // per-cell reports written when non-empty
  std::function<void(const AblationRow&)> on_row;
};

std::vector<AblationRow> run_ablation(const AblationGrid& grid, const RunConfig& base,
                                      const Dataset& train_set, const Dataset& test_set,
                                      const AblationOptions& options = {});

// Header "method,0.1,0.3,0.5,0.7,AVG" (AVG over 0.1:0.7), one line per row,
// values in percent.
void write_ablation_summary(std::ostream& out, const std::vector<AblationRow>& rows);

}  // namespace wstal

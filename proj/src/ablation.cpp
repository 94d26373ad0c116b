#include "wstal/ablation.hpp"

#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "wstal/errors.hpp"

namespace wstal {

std::size_t AblationGrid::size() const {
  if (axes.empty()) return 0;
  std::size_t n = 1;
  for (const auto& [key, values] : axes) n *= values.size();
  return n;
}

std::vector<std::pair<std::string, std::string>> AblationGrid::cell(std::size_t index) const {
  std::vector<std::pair<std::string, std::string>> out(axes.size());
  for (std::size_t a = axes.size(); a-- > 0;) {
    const auto& values = axes[a].second;
    out[a] = {axes[a].first, values[index % values.size()]};
    index /= values.size();
  }
  return out;
}

AblationGrid parse_grid(std::string_view text) {
  AblationGrid grid;
  for (auto& [key, value] : parse_key_values(text)) {
    std::vector<std::string> values;
    std::istringstream is(value);
    for (std::string tok; std::getline(is, tok, ',');) {
      const auto b = tok.find_first_not_of(" \t");
      const auto e = tok.find_last_not_of(" \t");
      if (b != std::string::npos) values.push_back(tok.substr(b, e - b + 1));
    }
    if (values.empty()) throw ConfigError("grid axis '" + key + "' has no values");
    // Reject unknown keys or bad values before anything runs.
    for (const std::string& v : values) {
      RunConfig probe;
      set_option(probe, key, v);
      validate(probe);
    }
    grid.axes.emplace_back(key, std::move(values));
  }
  return grid;
}

AblationGrid load_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open grid file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_grid(ss.str());
}

AblationGrid table_grid(int table) {
  AblationGrid g;
  switch (table) {
    case 3:
      g.axes.push_back({"diff", {"random", "classification", "cosine", "l2", "l1"}});
      break;
    case 4:
      g.axes.push_back({"modules", {"base", "base+brm", "base+brm+dem"}});
      break;
    case 5:
      g.axes.push_back({"fusion_mode",
                        {"self", "b_only", "a_only", "add", "weighted_sum", "temporal_only"}});
      break;
    case 6:
      g.axes.push_back({"memory_mode", {"direct", "momentum_all", "ours"}});
      break;
    default:
      throw ConfigError("ablation tables are 3, 4, 5 and 6");
  }
  return g;
}

std::string row_label(const std::string& key, const std::string& value) {
  static const std::map<std::pair<std::string, std::string>, std::string> names = {
      {{"diff", "random"}, "random"},
      {{"diff", "classification"}, "classification"},
      {{"diff", "cosine"}, "cosine distance"},
      {{"diff", "l2"}, "L2 distance"},
      {{"diff", "l1"}, "L1 distance"},
      {{"modules", "base"}, "Base"},
      {{"modules", "base+brm"}, "Base + BRM"},
      {{"modules", "base+brm+dem"}, "Base + BRM + DEM"},
      {{"fusion_mode", "self"}, "self"},
      {{"fusion_mode", "b_only"}, "w/o salient"},
      {{"fusion_mode", "a_only"}, "w/o non-salient"},
      {{"fusion_mode", "add"}, "salient + non-salient"},
      {{"fusion_mode", "weighted_sum"}, "weighted sum"},
      {{"fusion_mode", "temporal_only"}, "temporal-level"},
      {{"memory_mode", "direct"}, "direct update"},
      {{"memory_mode", "momentum_all"}, "momentum update"},
      {{"memory_mode", "ours"}, "Ours"},
  };
  auto it = names.find({key, value});
  return it != names.end() ? it->second : key + "=" + value;
}

std::vector<AblationRow> run_ablation(const AblationGrid& grid, const RunConfig& base,
                                      const Dataset& train_set, const Dataset& test_set,
                                      const AblationOptions& options) {
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    AblationRow row;
    row.overrides = grid.cell(i);
    RunConfig cfg = base;
    for (const auto& [k, v] : row.overrides) {
      set_option(cfg, k, v);
      if (!row.label.empty()) row.label += " / ";
      row.label += row_label(k, v);
    }
    validate(cfg);
    TrainOptions topts;
    topts.threads = options.threads;
    const Checkpoint ck = train(train_set, cfg, topts);
    Evaluation ev = evaluate(ck, test_set);
    row.report = std::move(ev.report);

    if (!options.out_dir.empty()) {
      const auto dir = options.out_dir / ("cell_" + std::to_string(i));
      std::filesystem::create_directories(dir);
      std::ofstream cfg_out(dir / "config.txt");
      cfg_out << "# config_hash " << hex_hash(config_hash(cfg)) << '\n' << serialize(cfg);
      std::ofstream table(dir / "report.txt");
      table << "# " << row.label << "  config_hash " << hex_hash(config_hash(cfg)) << '\n';
      write_report_table(table, row.report);
      std::ofstream csv(dir / "report.csv");
      write_report_csv(csv, row.report);
    }
    if (options.on_row) options.on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation_summary(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "method,0.1,0.3,0.5,0.7,AVG\n";
  out << std::fixed << std::setprecision(1);
  for (const AblationRow& r : rows) {
    out << r.label;
    for (double t : {0.1, 0.3, 0.5, 0.7}) out << ',' << 100.0 * r.report.map_at(t);
    out << ',' << 100.0 * r.report.average("AVG(0.1:0.7)") << '\n';
  }
  out.unsetf(std::ios::fixed);
}

}  // namespace wstal

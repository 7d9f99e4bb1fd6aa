#include "serbench/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "serbench/error.hpp"

namespace serbench {
namespace {

std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::string format_confusion(const ConfusionMatrix& cm) {
  std::string out;
  for (Eigen::Index i = 0; i < cm.rows(); ++i) {
    if (i > 0) out += ';';
    for (Eigen::Index j = 0; j < cm.cols(); ++j) {
      if (j > 0) out += ' ';
      out += std::to_string(cm(i, j));
    }
  }
  return out;
}

ConfusionMatrix parse_confusion(const std::string& text) {
  if (text.empty()) return {};
  std::vector<std::vector<std::int64_t>> rows;
  std::stringstream ss(text);
  std::string row;
  while (std::getline(ss, row, ';')) {
    std::stringstream rs(row);
    std::vector<std::int64_t> values;
    std::int64_t v = 0;
    while (rs >> v) values.push_back(v);
    rows.push_back(std::move(values));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  ConfusionMatrix cm(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)].size()) != n) {
      throw DataError("confusion matrix '" + text + "' is not square");
    }
    for (Eigen::Index j = 0; j < n; ++j) cm(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  return cm;
}

double parse_metric(const std::string& s) {
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::stod(s);
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

nlohmann::json confusion_json(const ConfusionMatrix& cm) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < cm.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < cm.cols(); ++j) row.push_back(cm(i, j));
    rows.push_back(row);
  }
  return rows;
}

nlohmann::json metric_json(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

std::vector<std::string> labels_for(const EvalReport& report, Eigen::Index n) {
  if (static_cast<Eigen::Index>(report.class_labels.size()) == n) return report.class_labels;
  std::vector<std::string> labels;
  for (Eigen::Index i = 0; i < n; ++i) labels.push_back("class " + std::to_string(i));
  return labels;
}

void write_derived(const EvalReport& report, const std::filesystem::path& out_dir) {
  write_text(out_dir / "summary.json", summary_json(report).dump(2) + "\n");
  write_text(out_dir / "summary.md", summary_table(report));
  std::filesystem::create_directories(out_dir / "heatmaps");
  for (const auto& cell : report.cells()) {
    if (cell.confusion.size() == 0) continue;
    write_text(out_dir / "heatmaps" / heatmap_file_name(cell.model, cell.augmentation),
               heatmap_svg(cell, labels_for(report, cell.confusion.rows())));
  }
}

}  // namespace

void write_results_csv(const std::filesystem::path& path, const std::vector<RunResult>& runs) {
  std::string text = "model,augmentation,fold,repeat,ua,weighted_f1,confusion,error\n";
  for (const auto& r : runs) {
    text += csv_field(r.model) + "," + csv_field(r.augmentation) + "," + std::to_string(r.fold) + "," +
            std::to_string(r.repeat) + "," + format_double(r.ok() ? r.ua : std::nan("")) + "," +
            format_double(r.ok() ? r.weighted_f1 : std::nan("")) + "," + format_confusion(r.confusion) +
            "," + csv_field(r.error) + "\n";
  }
  write_text(path, text);
}

std::vector<RunResult> read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("model,augmentation,fold,repeat,ua,weighted_f1", 0) != 0) {
    throw DataError(path.string() + ": missing results header");
  }
  std::vector<RunResult> runs;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() < 6) throw DataError(path.string() + ":" + std::to_string(line_no) + ": too few columns");
    try {
      RunResult r;
      r.model = f[0];
      r.augmentation = f[1];
      r.fold = std::stoi(f[2]);
      r.repeat = std::stoi(f[3]);
      r.ua = parse_metric(f[4]);
      r.weighted_f1 = parse_metric(f[5]);
      if (f.size() > 6) r.confusion = parse_confusion(f[6]);
      if (f.size() > 7) r.error = f[7];
      if (r.error.empty() && std::isnan(r.ua)) r.error = "missing metrics";
      runs.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed row");
    }
  }
  return runs;
}

nlohmann::json summary_json(const EvalReport& report) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : report.cells()) {
    cells.push_back({{"model", c.model},
                     {"augmentation", c.augmentation},
                     {"runs", c.runs},
                     {"failed", c.failed},
                     {"ua_mean", metric_json(c.ua_mean)},
                     {"ua_std", metric_json(c.ua_std)},
                     {"weighted_f1_mean", metric_json(c.f1_mean)},
                     {"weighted_f1_std", metric_json(c.f1_std)},
                     {"confusion", confusion_json(c.confusion)}});
  }
  return {{"metric_ua", "unweighted average recall (mean of per-class recalls)"},
          {"std", "sample standard deviation over fold x repeat runs"},
          {"classes", report.class_labels},
          {"models", report.models},
          {"augmentations", report.augmentations},
          {"cells", cells}};
}

std::string summary_table(const EvalReport& report) {
  const auto cells = report.cells();
  auto fmt = [](double mean, double sd) {
    if (std::isnan(mean)) return std::string("failed");
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.2f±%.3f", mean, sd);
    return std::string(buf);
  };
  std::string out;
  for (int metric = 0; metric < 2; ++metric) {
    out += metric == 0 ? "UA\n\n" : "\nWeighted F1\n\n";
    out += "| Model |";
    for (const auto& a : report.augmentations) out += " " + a + " |";
    out += "\n|---|";
    for (std::size_t i = 0; i < report.augmentations.size(); ++i) out += "---|";
    out += "\n";
    std::size_t idx = 0;
    for (const auto& m : report.models) {
      out += "| " + m + " |";
      for (std::size_t a = 0; a < report.augmentations.size(); ++a, ++idx) {
        const auto& c = cells[idx];
        out += " " + (metric == 0 ? fmt(c.ua_mean, c.ua_std) : fmt(c.f1_mean, c.f1_std)) + " |";
      }
      out += "\n";
    }
  }
  return out;
}

std::string heatmap_file_name(const std::string& model, const std::string& augmentation) {
  std::string name = model + "__" + augmentation;
  for (char& c : name) {
    const bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' || c == '_';
    if (!keep) c = '_';
  }
  return name + ".svg";
}

std::string heatmap_svg(const CellSummary& cell, const std::vector<std::string>& class_labels) {
  const ConfusionMatrix& cm = cell.confusion;
  const Eigen::Index n = cm.rows();
  const int size = 64;
  const int left = 90;
  const int top = 60;
  const int width = left + static_cast<int>(n) * size + 20;
  const int height = top + static_cast<int>(n) * size + 50;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
      << xml_escape(cell.model + " / " + cell.augmentation) << "</text>\n";
  svg << "<text x=\"" << left + n * size / 2 << "\" y=\"" << height - 10
      << "\" text-anchor=\"middle\">predicted</text>\n";
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row_sum = cm.row(i).sum();
    svg << "<text x=\"" << left - 6 << "\" y=\"" << top + i * size + size / 2 + 4
        << "\" text-anchor=\"end\">" << xml_escape(class_labels[static_cast<std::size_t>(i)]) << "</text>\n";
    svg << "<text x=\"" << left + i * size + size / 2 << "\" y=\"" << top - 8
        << "\" text-anchor=\"middle\">" << xml_escape(class_labels[static_cast<std::size_t>(i)]) << "</text>\n";
    for (Eigen::Index j = 0; j < n; ++j) {
      const double frac = row_sum > 0 ? static_cast<double>(cm(i, j)) / static_cast<double>(row_sum) : 0.0;
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - frac)));
      svg << "<rect x=\"" << left + j * size << "\" y=\"" << top + i * size << "\" width=\"" << size
          << "\" height=\"" << size << "\" fill=\"rgb(" << shade << "," << shade << ",255)\" stroke=\"#888\"/>\n";
      svg << "<text class=\"count\" data-row=\"" << i << "\" data-col=\"" << j << "\" x=\""
          << left + j * size + size / 2 << "\" y=\"" << top + i * size + size / 2 + 4
          << "\" text-anchor=\"middle\" fill=\"" << (frac > 0.5 ? "white" : "black") << "\">" << cm(i, j)
          << "</text>\n";
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

void emit_report(const EvalReport& report, const std::filesystem::path& out_dir) {
  if (report.runs.empty()) throw DataError("emit_report: report has no runs");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create output directory " + out_dir.string() + ": " + ec.message());
  write_results_csv(out_dir / "results.csv", report.runs);
  write_derived(report, out_dir);
}

EvalReport report_from_csv(const std::filesystem::path& results_csv, std::vector<std::string> class_labels) {
  auto runs = read_results_csv(results_csv);
  if (runs.empty()) throw DataError(results_csv.string() + ": no runs");
  EvalReport report = EvalReport::from_runs(std::move(runs), std::move(class_labels));
  write_derived(report, results_csv.parent_path().empty() ? std::filesystem::path(".") : results_csv.parent_path());
  return report;
}

}  // namespace serbench
